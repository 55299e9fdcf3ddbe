//! Conjugate distribution primitives shared by every sampler.
//!
//! Everything here is pure given an RNG handle: identical seed, identical
//! draw. Likelihoods are computed and returned in log space.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};
use rand_distr::{Beta, ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Jitter added once to a matrix that fails Cholesky factorization before
/// rejecting it outright.
const PD_JITTER: f64 = 1e-8;

/// A point on the probability simplex: entries nonnegative, summing to one
/// within 1e-12.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Wraps an already-normalized weight vector, validating the simplex
    /// invariant.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("empty probability vector".into()));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::InvalidParameter(
                "probability entries must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(ProbVector(weights))
    }

    /// Normalizes arbitrary nonnegative weights onto the simplex.
    pub fn from_unnormalized(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::InvalidParameter(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidParameter("weights sum to zero".into()));
        }
        let mut w = weights;
        for v in &mut w {
            *v /= sum;
        }
        // Push residual rounding error into the largest entry.
        let resid = 1.0 - w.iter().sum::<f64>();
        let imax = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
        w[imax] += resid;
        Ok(ProbVector(w))
    }

    pub fn uniform(k: usize) -> Self {
        ProbVector::from_unnormalized(vec![1.0; k]).unwrap()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.0.iter().map(|&w| w.ln()).collect()
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Normal-Inverse-Wishart hyperparameters for a multivariate Gaussian.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NIWParams {
    /// Prior mean of the Gaussian mean.
    pub mean: DVector<f64>,
    /// Pseudo-count tying the mean to the covariance (> 0).
    pub scale: f64,
    /// Degrees of freedom (> dim - 1).
    pub dof: f64,
    /// Scatter matrix (symmetric positive-definite).
    pub scatter: DMatrix<f64>,
}

impl NIWParams {
    pub fn new(mean: DVector<f64>, scale: f64, dof: f64, scatter: DMatrix<f64>) -> Result<Self> {
        let p = NIWParams { mean, scale, dof, scatter };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "NIW scale must be positive, got {}",
                self.scale
            )));
        }
        if !(self.dof > d as f64 - 1.0) || !self.dof.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "NIW dof must exceed dim-1 = {}, got {}",
                d as f64 - 1.0,
                self.dof
            )));
        }
        if self.scatter.nrows() != d || self.scatter.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: self.scatter.nrows() });
        }
        cholesky_pd(&self.scatter)?;
        Ok(())
    }
}

/// A concrete multivariate Gaussian: mean and covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianParams {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), got: covariance.nrows() });
        }
        cholesky_pd(&covariance)?;
        Ok(GaussianParams { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Precomputes the Cholesky factor for repeated density evaluation.
    pub fn evaluator(&self) -> Result<GaussianLoglike> {
        GaussianLoglike::new(self)
    }
}

/// Cached log-density evaluator for one Gaussian.
#[derive(Debug, Clone)]
pub struct GaussianLoglike {
    mean: DVector<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    log_norm: f64,
}

impl GaussianLoglike {
    pub fn new(params: &GaussianParams) -> Result<Self> {
        let chol = cholesky_pd(&params.covariance)?;
        let d = params.dim() as f64;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        let log_norm = -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(GaussianLoglike { mean: params.mean.clone(), chol, log_norm })
    }

    pub fn log_density(&self, y: &DVector<f64>) -> f64 {
        let diff = y - &self.mean;
        let solved = self.chol.solve(&diff);
        self.log_norm - 0.5 * diff.dot(&solved)
    }
}

/// Cholesky factorization with the crate's PD repair policy: a matrix that
/// fails to factor is jittered by `1e-8 * I` exactly once, then rejected.
pub fn cholesky_pd(m: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let d = m.nrows();
    if m.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: m.ncols() });
    }
    let scale = m.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1.0);
    for i in 0..d {
        for j in (i + 1)..d {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-8 * scale {
                return Err(Error::InvalidParameter("matrix is not symmetric".into()));
            }
        }
    }
    if let Some(c) = nalgebra::Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let jittered = m + DMatrix::identity(d, d) * PD_JITTER;
    nalgebra::Cholesky::new(jittered)
        .ok_or_else(|| Error::InvalidParameter("matrix is not positive-definite".into()))
}

/// Draws from Dirichlet(alpha) by normalizing independent Gamma draws.
pub fn dirichlet_sample<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<ProbVector> {
    if alpha.is_empty() {
        return Err(Error::InvalidParameter("empty Dirichlet parameter".into()));
    }
    if alpha.iter().any(|&a| !a.is_finite() || a <= 0.0) {
        return Err(Error::InvalidParameter(
            "Dirichlet parameters must be positive and finite".into(),
        ));
    }
    // Tiny concentrations can underflow every Gamma draw to zero; retry a
    // bounded number of times before giving up.
    for _ in 0..100 {
        let draws: Vec<f64> = alpha
            .iter()
            .map(|&a| Gamma::new(a, 1.0).expect("validated shape").sample(rng))
            .collect();
        if draws.iter().sum::<f64>() > 0.0 {
            return ProbVector::from_unnormalized(draws);
        }
    }
    Err(Error::InvalidParameter(
        "Dirichlet sampling underflowed; concentration too small".into(),
    ))
}

/// Draws an index with probability proportional to `exp(logits)`,
/// max-subtracted for stability.
pub fn categorical_sample<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> Result<usize> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::EmptySupport);
    }
    let weights: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::EmptySupport);
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return Ok(i);
        }
    }
    // Rounding pushed u past the last bucket; return the last finite one.
    Ok(weights.iter().rposition(|&w| w > 0.0).unwrap())
}

/// Beta(a, b) draw.
pub fn beta_sample<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    if !(a > 0.0) || !(b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidParameter(format!("Beta parameters must be positive, got ({a}, {b})")));
    }
    Ok(Beta::new(a, b).expect("validated parameters").sample(rng))
}

/// Gamma draw in the shape/rate parameterization.
pub fn gamma_sample<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0) || !(rate > 0.0) || !shape.is_finite() || !rate.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "Gamma parameters must be positive, got ({shape}, {rate})"
        )));
    }
    Ok(Gamma::new(shape, 1.0 / rate).expect("validated parameters").sample(rng))
}

/// Splits stick-breaking remainder mass: returns the new atom's weight and
/// the remaining mass, with the break fraction drawn from Beta(1, gamma).
pub fn stick_breaking_split<R: Rng + ?Sized>(
    remainder: f64,
    gamma: f64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let b = beta_sample(1.0, gamma, rng)?;
    Ok((remainder * b, remainder * (1.0 - b)))
}

/// Draws Gaussian parameters from a Normal-Inverse-Wishart prior:
/// covariance from the Inverse-Wishart, mean conditionally Gaussian.
pub fn niw_sample<R: Rng + ?Sized>(prior: &NIWParams, rng: &mut R) -> Result<GaussianParams> {
    prior.validate()?;
    let d = prior.dim();
    let scatter_chol = cholesky_pd(&prior.scatter)?;
    // Bartlett: W ~ Wishart(dof, scatter^-1) via W = (U A)(U A)^T with
    // U U^T = scatter^-1; the covariance draw is W^-1.
    let l = scatter_chol.l();
    let u = l
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("scatter factor not invertible".into()))?;
    let mut bartlett = DMatrix::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(prior.dof - i as f64).map_err(|e| {
            Error::InvalidParameter(format!("chi-squared dof invalid: {e}"))
        })?;
        bartlett[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            bartlett[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let factor = u * bartlett;
    let wishart = &factor * factor.transpose();
    let covariance = cholesky_pd(&wishart)?.inverse();
    // Enforce exact symmetry lost to rounding.
    let covariance = (&covariance + covariance.transpose()) * 0.5;

    let cov_chol = cholesky_pd(&covariance)?;
    let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mean = &prior.mean + cov_chol.l() * z / prior.scale.sqrt();
    Ok(GaussianParams { mean, covariance })
}

/// Weakly informative data-driven NIW default: empirical mean, scale 0.1,
/// dof = dim + 2, scatter = empirical covariance scaled by dof.
pub fn niw_data_driven(data: &[DVector<f64>]) -> Result<NIWParams> {
    if data.is_empty() {
        return Err(Error::InvalidParameter("cannot derive a prior from no data".into()));
    }
    let dim = data[0].len();
    let (n, mean, scatter) = suff_stats(data, dim)?;
    let dof = (dim + 2) as f64;
    let mut cov = scatter / n;
    // Guard against degenerate empirical covariance.
    cov += DMatrix::identity(dim, dim) * 1e-6;
    NIWParams::new(mean, 0.1, dof, cov * dof)
}

/// Draws from a multivariate Gaussian via its Cholesky factor.
pub fn gaussian_sample<R: Rng + ?Sized>(
    params: &GaussianParams,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let chol = cholesky_pd(&params.covariance)?;
    let z = DVector::from_fn(params.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(&params.mean + chol.l() * z)
}

/// Pluggable emission contract: a plain Gaussian or a finite Gaussian
/// mixture per state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ObsModel {
    Gaussian(GaussianParams),
    Mixture { weights: ProbVector, components: Vec<GaussianParams> },
}

impl ObsModel {
    pub fn dim(&self) -> usize {
        match self {
            ObsModel::Gaussian(g) => g.dim(),
            ObsModel::Mixture { components, .. } => components[0].dim(),
        }
    }

    pub fn n_components(&self) -> usize {
        match self {
            ObsModel::Gaussian(_) => 1,
            ObsModel::Mixture { components, .. } => components.len(),
        }
    }

    pub fn evaluator(&self) -> Result<ObsLoglike> {
        match self {
            ObsModel::Gaussian(g) => Ok(ObsLoglike {
                log_weights: vec![0.0],
                components: vec![g.evaluator()?],
            }),
            ObsModel::Mixture { weights, components } => {
                if weights.len() != components.len() || components.is_empty() {
                    return Err(Error::InvalidParameter(
                        "mixture weights and components disagree".into(),
                    ));
                }
                Ok(ObsLoglike {
                    log_weights: weights.log_weights(),
                    components: components
                        .iter()
                        .map(|c| c.evaluator())
                        .collect::<Result<_>>()?,
                })
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        match self {
            ObsModel::Gaussian(g) => gaussian_sample(g, rng),
            ObsModel::Mixture { weights, components } => {
                let c = categorical_sample(&weights.log_weights(), rng)?;
                gaussian_sample(&components[c], rng)
            }
        }
    }
}

/// Cached per-frame log-likelihood evaluator for one emission model.
#[derive(Debug, Clone)]
pub struct ObsLoglike {
    log_weights: Vec<f64>,
    components: Vec<GaussianLoglike>,
}

impl ObsLoglike {
    pub fn log_density(&self, y: &DVector<f64>) -> f64 {
        if self.components.len() == 1 {
            return self.log_weights[0] + self.components[0].log_density(y);
        }
        let terms: Vec<f64> = self
            .components
            .iter()
            .zip(&self.log_weights)
            .map(|(c, &lw)| lw + c.log_density(y))
            .collect();
        crate::logsumexp(&terms)
    }

    /// Per-component log responsibilities (unnormalized) for indicator
    /// resampling.
    pub fn component_logits(&self, y: &DVector<f64>) -> Vec<f64> {
        self.components
            .iter()
            .zip(&self.log_weights)
            .map(|(c, &lw)| lw + c.log_density(y))
            .collect()
    }
}

/// Sufficient statistics of a batch of vectors.
fn suff_stats(data: &[DVector<f64>], dim: usize) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    let n = data.len() as f64;
    let mut sum = DVector::zeros(dim);
    for y in data {
        if y.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: y.len() });
        }
        sum += y;
    }
    let mean = &sum / n;
    let mut scatter = DMatrix::zeros(dim, dim);
    for y in data {
        let d = y - &mean;
        scatter += &d * d.transpose();
    }
    Ok((n, mean, scatter))
}

/// Exact conjugate NIW update for Gaussian observations.
pub fn niw_posterior(prior: &NIWParams, data: &[DVector<f64>]) -> Result<NIWParams> {
    if data.is_empty() {
        return Ok(prior.clone());
    }
    let d = prior.dim();
    let (n, data_mean, data_scatter) = suff_stats(data, d)?;
    let scale = prior.scale + n;
    let dof = prior.dof + n;
    let mean = (&prior.mean * prior.scale + &data_mean * n) / scale;
    let dev = &data_mean - &prior.mean;
    let scatter =
        &prior.scatter + data_scatter + (&dev * dev.transpose()) * (prior.scale * n / scale);
    Ok(NIWParams { mean, scale, dof, scatter })
}

fn ln_multigamma(dim: usize, a: f64) -> f64 {
    let d = dim as f64;
    d * (d - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (0..dim).map(|j| ln_gamma(a - 0.5 * j as f64)).sum::<f64>()
}

fn ln_det_pd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky_pd(m)?;
    Ok(chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0)
}

/// Log marginal likelihood of `data` with the Gaussian parameters
/// integrated out under the NIW prior (a multivariate Student-t chain).
pub fn niw_marginal_loglike(prior: &NIWParams, data: &[DVector<f64>]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    prior.validate()?;
    let d = prior.dim() as f64;
    let n = data.len() as f64;
    let post = niw_posterior(prior, data)?;
    Ok(-0.5 * n * d * std::f64::consts::PI.ln()
        + ln_multigamma(prior.dim(), post.dof / 2.0)
        - ln_multigamma(prior.dim(), prior.dof / 2.0)
        + 0.5 * prior.dof * ln_det_pd(&prior.scatter)?
        - 0.5 * post.dof * ln_det_pd(&post.scatter)?
        + 0.5 * d * (prior.scale.ln() - post.scale.ln()))
}
