//! Segment-duration distributions.
//!
//! Every family lives on the positive integers `d >= 1` (a segment contains
//! at least one observation): the Poisson and negative binomial families are
//! shifted accordingly, with `d - 1` following the textbook distribution.
//! Each family exposes a log pmf, a log survival function
//! `log_sf(d) = log P(D > d)`, forward sampling, and a posterior resampling
//! step that accepts right-censored durations as lower bounds (`D >= bound`),
//! imputing them by inverse-CDF sampling of the conditional tail before the
//! conjugate or enumerative update.

use rand::{Rng, RngExt};
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::distributions::{beta_sample, categorical_sample, gamma_sample};
use crate::error::{Error, Result};

/// Beta prior over a success probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

impl BetaPrior {
    pub fn uniform() -> Self {
        BetaPrior { a: 1.0, b: 1.0 }
    }

    fn ln_beta(a: f64, b: f64) -> f64 {
        ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
    }

    /// log B(a + da, b + db) - log B(a, b): the marginal likelihood ratio of
    /// a Bernoulli count update.
    fn ln_marginal(&self, successes: f64, failures: f64) -> f64 {
        Self::ln_beta(self.a + successes, self.b + failures) - Self::ln_beta(self.a, self.b)
    }
}

/// Gamma prior (shape/rate) over a Poisson rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

/// Geometric durations: pmf(d) = p (1-p)^(d-1), with p the probability that
/// a segment terminates at each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricDur {
    pub p: f64,
    pub prior: BetaPrior,
}

/// Shifted Poisson durations: d - 1 ~ Poisson(rate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonDur {
    pub rate: f64,
    pub prior: GammaPrior,
}

/// Shifted negative binomial durations: d - 1 counts failures before the
/// r-th success. `r = 1` coincides with the geometric family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegBinDur {
    pub r: usize,
    pub p: f64,
    pub r_support: Vec<usize>,
    pub p_prior: BetaPrior,
}

/// Delayed geometric durations: d = wait + g with g geometric on {1, 2, ...},
/// so the minimum duration is wait + 1. `wait = 0` recovers the geometric
/// family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayedGeomDur {
    pub wait: usize,
    pub p: f64,
    pub wait_support: Vec<usize>,
    pub p_prior: BetaPrior,
}

/// The duration-distribution contract: one of the four concrete families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DurationFamily {
    Geometric(GeometricDur),
    Poisson(PoissonDur),
    NegBin(NegBinDur),
    DelayedGeom(DelayedGeomDur),
}

impl DurationFamily {
    pub fn geometric(p: f64, prior: BetaPrior) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidParameter(format!("geometric p must be in (0,1], got {p}")));
        }
        check_beta(prior)?;
        Ok(DurationFamily::Geometric(GeometricDur { p, prior }))
    }

    pub fn poisson(rate: f64, prior: GammaPrior) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::InvalidParameter(format!("poisson rate must be positive, got {rate}")));
        }
        if !(prior.shape > 0.0) || !(prior.rate > 0.0) {
            return Err(Error::InvalidParameter("gamma prior parameters must be positive".into()));
        }
        Ok(DurationFamily::Poisson(PoissonDur { rate, prior }))
    }

    pub fn negbin(r: usize, p: f64, r_support: Vec<usize>, p_prior: BetaPrior) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!("negbin p must be in (0,1), got {p}")));
        }
        if r_support.is_empty() || r_support.iter().any(|&r| r == 0) {
            return Err(Error::InvalidParameter("negbin r support must be nonempty positive".into()));
        }
        if !r_support.contains(&r) {
            return Err(Error::InvalidParameter(format!("negbin r={r} outside its support")));
        }
        check_beta(p_prior)?;
        Ok(DurationFamily::NegBin(NegBinDur { r, p, r_support, p_prior }))
    }

    pub fn delayed_geom(
        wait: usize,
        p: f64,
        wait_support: Vec<usize>,
        p_prior: BetaPrior,
    ) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidParameter(format!("delayed-geom p must be in (0,1], got {p}")));
        }
        if wait_support.is_empty() {
            return Err(Error::InvalidParameter("wait support must be nonempty".into()));
        }
        if !wait_support.contains(&wait) {
            return Err(Error::InvalidParameter(format!("wait={wait} outside its support")));
        }
        check_beta(p_prior)?;
        Ok(DurationFamily::DelayedGeom(DelayedGeomDur { wait, p, wait_support, p_prior }))
    }

    /// Smallest duration with nonzero mass.
    pub fn min_support(&self) -> usize {
        match self {
            DurationFamily::DelayedGeom(f) => f.wait + 1,
            _ => 1,
        }
    }

    /// log P(D = d) for d >= 1.
    pub fn log_pmf(&self, d: usize) -> Result<f64> {
        if d < 1 {
            return Err(Error::Domain(format!("duration pmf requires d >= 1, got {d}")));
        }
        Ok(match self {
            DurationFamily::Geometric(f) => geom_log_pmf(f.p, d),
            DurationFamily::Poisson(f) => {
                let k = (d - 1) as f64;
                k * f.rate.ln() - f.rate - ln_gamma(k + 1.0)
            }
            DurationFamily::NegBin(f) => negbin_log_pmf(f.r, f.p, d),
            DurationFamily::DelayedGeom(f) => {
                if d <= f.wait {
                    f64::NEG_INFINITY
                } else {
                    geom_log_pmf(f.p, d - f.wait)
                }
            }
        })
    }

    /// log P(D > d) for d >= 0; log_sf(0) = 0.
    pub fn log_sf(&self, d: usize) -> Result<f64> {
        Ok(match self {
            DurationFamily::Geometric(f) => geom_log_sf(f.p, d),
            DurationFamily::Poisson(f) => {
                // Upper tail P(K >= d) for K ~ Poisson(rate), summed upward
                // from its leading term to avoid cancellation.
                if d == 0 {
                    0.0
                } else {
                    let lead = self.log_pmf(d + 1)?;
                    lead + ln_series(|j| f.rate / (d as f64 + j))
                }
            }
            DurationFamily::NegBin(f) => {
                if d == 0 {
                    0.0
                } else {
                    let lead = self.log_pmf(d + 1)?;
                    let (r, q) = (f.r as f64, 1.0 - f.p);
                    lead + ln_series(|j| (d as f64 + j - 1.0 + r) / (d as f64 + j) * q)
                }
            }
            DurationFamily::DelayedGeom(f) => {
                if d <= f.wait {
                    0.0
                } else {
                    geom_log_sf(f.p, d - f.wait)
                }
            }
        })
    }

    /// Forward draw of a duration.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            DurationFamily::Geometric(f) => geom_draw(f.p, rng),
            DurationFamily::Poisson(f) => {
                let k = Poisson::new(f.rate).expect("validated rate").sample(rng);
                k as usize + 1
            }
            DurationFamily::NegBin(f) => {
                // Gamma-Poisson mixture: K ~ Poisson(Gamma(r, p/(1-p))).
                let mix = gamma_sample(f.r as f64, f.p / (1.0 - f.p), rng).expect("valid shape");
                let k = if mix > 0.0 {
                    Poisson::new(mix).expect("positive rate").sample(rng) as usize
                } else {
                    0
                };
                k + 1
            }
            DurationFamily::DelayedGeom(f) => f.wait + geom_draw(f.p, rng),
        }
    }

    /// Smallest d with P(D > d) <= eps, capped at `cap`. Used to size the
    /// message-passing truncation.
    pub fn tail_quantile(&self, eps: f64, cap: usize) -> usize {
        let mut lo = self.min_support();
        if self.log_sf(lo).unwrap_or(0.0) <= eps.ln() {
            return lo;
        }
        let mut hi = lo;
        loop {
            hi = (hi * 2).max(lo + 1);
            if hi >= cap {
                hi = cap;
                break;
            }
            if self.log_sf(hi).unwrap() <= eps.ln() {
                break;
            }
        }
        while lo + 1 < hi {
            let mid = lo + (hi - lo) / 2;
            if self.log_sf(mid).unwrap() <= eps.ln() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Draws a duration conditioned on `D >= bound` by inverse-CDF
    /// enumeration of the tail. Falls back to `bound + fresh draw` in the
    /// far tail (beyond cumulative coverage 1 - 1e-12).
    pub fn sample_tail<R: Rng + ?Sized>(&self, bound: usize, rng: &mut R) -> Result<usize> {
        let bound = bound.max(1);
        let log_tail = if bound == 1 { 0.0 } else { self.log_sf(bound - 1)? };
        if log_tail == f64::NEG_INFINITY {
            return Err(Error::DegeneratePosterior(format!(
                "no duration mass at or above bound {bound}"
            )));
        }
        let tail = log_tail.exp();
        let u: f64 = rng.random::<f64>() * tail;
        let target = (1.0 - 1e-12) * tail;
        let mut acc = 0.0;
        let mut d = bound;
        loop {
            acc += self.log_pmf(d)?.exp();
            if u <= acc {
                return Ok(d);
            }
            if acc >= target {
                return Ok(bound + self.sample(rng));
            }
            d += 1;
        }
    }

    /// Draws fresh parameters from the conditional posterior given complete
    /// durations and censored lower bounds (`D >= bound`). Inputs are
    /// canonicalized (sorted) before any randomness is consumed, so the
    /// result is invariant to permutations of the data lists.
    pub fn posterior_resample<R: Rng + ?Sized>(
        &self,
        complete: &[usize],
        censored: &[usize],
        rng: &mut R,
    ) -> Result<DurationFamily> {
        if complete.iter().any(|&d| d < 1) || censored.iter().any(|&b| b < 1) {
            return Err(Error::Domain("durations and censor bounds must be >= 1".into()));
        }
        let mut complete: Vec<usize> = complete.to_vec();
        complete.sort_unstable();
        let mut censored: Vec<usize> = censored.to_vec();
        censored.sort_unstable();

        // Data augmentation: impute each censored duration from the tail
        // under the current parameters, then update as if complete.
        let mut durations = complete;
        for &b in &censored {
            durations.push(self.sample_tail(b, rng)?);
        }

        let n = durations.len() as f64;
        match self {
            DurationFamily::Geometric(f) => {
                let failures: f64 = durations.iter().map(|&d| (d - 1) as f64).sum();
                let p = beta_sample(f.prior.a + n, f.prior.b + failures, rng)?;
                Ok(DurationFamily::Geometric(GeometricDur { p, prior: f.prior }))
            }
            DurationFamily::Poisson(f) => {
                let events: f64 = durations.iter().map(|&d| (d - 1) as f64).sum();
                let rate = gamma_sample(f.prior.shape + events, f.prior.rate + n, rng)?;
                Ok(DurationFamily::Poisson(PoissonDur { rate, prior: f.prior }))
            }
            DurationFamily::NegBin(f) => {
                let fails: f64 = durations.iter().map(|&d| (d - 1) as f64).sum();
                // Enumerate r with p integrated out under its Beta prior.
                let logits: Vec<f64> = f
                    .r_support
                    .iter()
                    .map(|&r| {
                        let rr = r as f64;
                        let comb: f64 = durations
                            .iter()
                            .map(|&d| {
                                let k = (d - 1) as f64;
                                ln_gamma(k + rr) - ln_gamma(rr) - ln_gamma(k + 1.0)
                            })
                            .sum();
                        comb + f.p_prior.ln_marginal(n * rr, fails)
                    })
                    .collect();
                if durations.is_empty() {
                    let r = f.r_support[rng.random_range(0..f.r_support.len())];
                    let p = beta_sample(f.p_prior.a, f.p_prior.b, rng)?;
                    return DurationFamily::negbin(r, p, f.r_support.clone(), f.p_prior);
                }
                let idx = categorical_sample(&logits, rng)
                    .map_err(|_| Error::DegeneratePosterior("negbin r enumeration empty".into()))?;
                let r = f.r_support[idx];
                let p = beta_sample(f.p_prior.a + n * r as f64, f.p_prior.b + fails, rng)?;
                DurationFamily::negbin(r, p, f.r_support.clone(), f.p_prior)
            }
            DurationFamily::DelayedGeom(f) => {
                if durations.is_empty() {
                    let wait = f.wait_support[rng.random_range(0..f.wait_support.len())];
                    let p = beta_sample(f.p_prior.a, f.p_prior.b, rng)?;
                    return DurationFamily::delayed_geom(wait, p, f.wait_support.clone(), f.p_prior);
                }
                let dmin = *durations.iter().min().unwrap();
                let logits: Vec<f64> = f
                    .wait_support
                    .iter()
                    .map(|&w| {
                        if w + 1 > dmin {
                            return f64::NEG_INFINITY;
                        }
                        let fails: f64 =
                            durations.iter().map(|&d| (d - w - 1) as f64).sum();
                        f.p_prior.ln_marginal(n, fails)
                    })
                    .collect();
                let idx = categorical_sample(&logits, rng).map_err(|_| {
                    Error::DegeneratePosterior(
                        "no wait value is consistent with the observed durations".into(),
                    )
                })?;
                let wait = f.wait_support[idx];
                let fails: f64 = durations.iter().map(|&d| (d - wait - 1) as f64).sum();
                let p = beta_sample(f.p_prior.a + n, f.p_prior.b + fails, rng)?;
                DurationFamily::delayed_geom(wait, p, f.wait_support.clone(), f.p_prior)
            }
        }
    }
}

fn check_beta(prior: BetaPrior) -> Result<()> {
    if !(prior.a > 0.0) || !(prior.b > 0.0) {
        return Err(Error::InvalidParameter("beta prior parameters must be positive".into()));
    }
    Ok(())
}

fn geom_log_pmf(p: f64, d: usize) -> f64 {
    if d == 1 {
        p.ln()
    } else {
        p.ln() + (d as f64 - 1.0) * safe_ln(1.0 - p)
    }
}

fn geom_log_sf(p: f64, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        d as f64 * safe_ln(1.0 - p)
    }
}

/// ln(x) with -inf for x <= 0, so p = 1 edges never multiply 0 by -inf.
fn safe_ln(x: f64) -> f64 {
    if x <= 0.0 {
        f64::NEG_INFINITY
    } else {
        x.ln()
    }
}

fn geom_draw<R: Rng + ?Sized>(p: f64, rng: &mut R) -> usize {
    if p >= 1.0 {
        return 1;
    }
    let u: f64 = rng.random();
    // Inverse CDF on {1, 2, ...}; the cap guards pathological u ~ 1.
    let g = ((1.0 - u).ln() / (1.0 - p).ln()).floor();
    1 + (g.max(0.0).min(4.0e9) as usize)
}

fn negbin_log_pmf(r: usize, p: f64, d: usize) -> f64 {
    let k = (d - 1) as f64;
    let r = r as f64;
    ln_gamma(k + r) - ln_gamma(r) - ln_gamma(k + 1.0) + r * p.ln() + k * safe_ln(1.0 - p)
}

/// Log of `1 + sum_{j>=1} prod_{i<=j} ratio(i)`, the tail series relative to
/// its leading term. Rescales on the fly so ascending runs cannot overflow.
fn ln_series<F: Fn(f64) -> f64>(ratio: F) -> f64 {
    let mut log_scale = 0.0f64;
    let mut sum = 1.0f64;
    let mut term = 1.0f64;
    let mut j = 1.0f64;
    loop {
        term *= ratio(j);
        sum += term;
        if term < sum * 1e-18 || j > 1e7 {
            return log_scale + sum.ln();
        }
        if sum > 1e280 {
            log_scale += sum.ln();
            term /= sum;
            sum = 1.0;
        }
        j += 1.0;
    }
}
