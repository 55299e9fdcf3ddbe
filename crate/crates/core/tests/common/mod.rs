//! Shared test oracles, independent of the library's message-passing path:
//! brute-force enumeration over censored segmentations and a standalone HMM
//! forward pass.

use hsmm_npb::durations::{BetaPrior, DurationFamily, GammaPrior};
use hsmm_npb::logsumexp;
use rand::{Rng, RngExt};
use std::collections::HashMap;

/// A fully explicit model for brute-force work: probabilities in linear
/// space, frame log-likelihoods tabulated.
pub struct OracleModel {
    pub init: Vec<f64>,
    /// Outlawed transition rows (zero diagonal, rows sum to one).
    pub trans: Vec<Vec<f64>>,
    pub durations: Vec<DurationFamily>,
    /// `frame_ll[t][i]`, 0-based frames.
    pub frame_ll: Vec<Vec<f64>>,
}

impl OracleModel {
    pub fn t_len(&self) -> usize {
        self.frame_ll.len()
    }

    pub fn n_states(&self) -> usize {
        self.init.len()
    }

    fn seg_ll(&self, start: usize, end: usize, i: usize) -> f64 {
        (start..=end).map(|t| self.frame_ll[t - 1][i]).sum()
    }
}

/// Outcome key: the segment list plus the censoring flag.
pub type Outcome = (Vec<(usize, usize)>, bool);

/// Enumerates every censored segmentation and labeling with its log weight.
/// The final segment contributes its pmf when it ends exactly at T and a
/// survival term when it runs past the window.
pub fn enumerate_outcomes(model: &OracleModel) -> HashMap<Outcome, f64> {
    let mut out = HashMap::new();
    let t_len = model.t_len();
    let mut prefix: Vec<(usize, usize)> = Vec::new();

    fn recurse(
        model: &OracleModel,
        covered: usize,
        prev: Option<usize>,
        log_w: f64,
        prefix: &mut Vec<(usize, usize)>,
        out: &mut HashMap<Outcome, f64>,
    ) {
        let t_len = model.t_len();
        for i in 0..model.n_states() {
            let log_enter = match prev {
                None => model.init[i].ln(),
                Some(p) => {
                    if p == i {
                        continue;
                    }
                    model.trans[p][i].ln()
                }
            };
            if log_enter == f64::NEG_INFINITY {
                continue;
            }
            let horizon = t_len - covered;
            // Censored outcome: the segment survives past the window.
            let log_sf = model.durations[i].log_sf(horizon).unwrap();
            let w_cens = log_w + log_enter + log_sf + model.seg_ll(covered + 1, t_len, i);
            if w_cens > f64::NEG_INFINITY {
                prefix.push((i, horizon));
                let key = (prefix.clone(), true);
                let slot = out.entry(key).or_insert(f64::NEG_INFINITY);
                *slot = logsumexp(&[*slot, w_cens]);
                prefix.pop();
            }
            // Complete segments.
            for d in 1..=horizon {
                let log_pmf = model.durations[i].log_pmf(d).unwrap();
                let w = log_w + log_enter + log_pmf + model.seg_ll(covered + 1, covered + d, i);
                if w == f64::NEG_INFINITY {
                    continue;
                }
                prefix.push((i, d));
                if covered + d == t_len {
                    let key = (prefix.clone(), false);
                    let slot = out.entry(key).or_insert(f64::NEG_INFINITY);
                    *slot = logsumexp(&[*slot, w]);
                } else {
                    recurse(model, covered + d, Some(i), w, prefix, out);
                }
                prefix.pop();
            }
        }
    }

    recurse(model, 0, None, 0.0, &mut prefix, &mut out);
    let _ = t_len;
    out
}

/// Log evidence by brute force.
pub fn enumerate_loglike(model: &OracleModel) -> f64 {
    let weights: Vec<f64> = enumerate_outcomes(model).values().copied().collect();
    logsumexp(&weights)
}

/// Normalizes enumerated outcomes to a posterior.
pub fn enumerate_posterior(model: &OracleModel) -> HashMap<Outcome, f64> {
    let out = enumerate_outcomes(model);
    let total = logsumexp(&out.values().copied().collect::<Vec<_>>());
    out.into_iter().map(|(k, v)| (k, (v - total).exp())).collect()
}

/// Independent log-domain HMM forward pass.
pub fn hmm_forward_loglike(init: &[f64], trans: &[Vec<f64>], frame_ll: &[Vec<f64>]) -> f64 {
    let n = init.len();
    let mut alpha: Vec<f64> = (0..n).map(|i| init[i].ln() + frame_ll[0][i]).collect();
    for t in 1..frame_ll.len() {
        let mut next = vec![f64::NEG_INFINITY; n];
        for (j, slot) in next.iter_mut().enumerate() {
            let terms: Vec<f64> =
                (0..n).map(|i| alpha[i] + trans[i][j].ln()).collect();
            *slot = logsumexp(&terms) + frame_ll[t][j];
        }
        alpha = next;
    }
    logsumexp(&alpha)
}

/// Total variation between an empirical histogram and exact probabilities.
pub fn total_variation<K: std::hash::Hash + Eq + Clone>(
    empirical: &HashMap<K, usize>,
    n_draws: usize,
    exact: &HashMap<K, f64>,
) -> f64 {
    let mut tv = 0.0;
    let mut seen: std::collections::HashSet<K> = std::collections::HashSet::new();
    for (k, &p) in exact {
        let emp = *empirical.get(k).unwrap_or(&0) as f64 / n_draws as f64;
        tv += 0.5 * (emp - p).abs();
        seen.insert(k.clone());
    }
    for (k, &c) in empirical {
        if !seen.contains(k) {
            tv += 0.5 * c as f64 / n_draws as f64;
        }
    }
    tv
}

/// Random outlawed transition rows in linear space.
pub fn random_outlawed_rows<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n)
                .map(|j| if j == i { 0.0 } else { 0.05 + rng.random::<f64>() })
                .collect();
            let sum: f64 = row.iter().sum();
            for v in &mut row {
                *v /= sum;
            }
            row
        })
        .collect()
}

pub fn random_init<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| 0.1 + rng.random::<f64>()).collect();
    let sum: f64 = v.iter().sum();
    for x in &mut v {
        *x /= sum;
    }
    v
}

/// A random duration family of the given kind with parameters kept in
/// regimes where every tested window has positive probability.
pub fn random_duration<R: Rng + ?Sized>(kind: usize, rng: &mut R) -> DurationFamily {
    match kind % 4 {
        0 => DurationFamily::geometric(0.15 + 0.7 * rng.random::<f64>(), BetaPrior::uniform())
            .unwrap(),
        1 => DurationFamily::poisson(
            0.5 + 4.0 * rng.random::<f64>(),
            GammaPrior { shape: 2.0, rate: 0.5 },
        )
        .unwrap(),
        2 => DurationFamily::negbin(
            1 + rng.random_range(0..6),
            0.2 + 0.6 * rng.random::<f64>(),
            (1..=6).collect(),
            BetaPrior::uniform(),
        )
        .unwrap(),
        _ => DurationFamily::delayed_geom(
            rng.random_range(0..3),
            0.2 + 0.7 * rng.random::<f64>(),
            (0..=20).collect(),
            BetaPrior::uniform(),
        )
        .unwrap(),
    }
}

/// Random frame log-likelihood table with moderate dynamic range.
pub fn random_frame_ll<R: Rng + ?Sized>(t_len: usize, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..t_len)
        .map(|_| (0..n).map(|_| -3.0 * rng.random::<f64>()).collect())
        .collect()
}
