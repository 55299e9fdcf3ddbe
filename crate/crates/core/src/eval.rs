//! Segmentation metrics: normalized Hamming error under greedy label
//! matching, and effective state counting.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// The injective inferred-to-true label map produced by greedy matching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatch {
    /// Pairs in selection order (largest overlap first).
    pub pairs: Vec<(usize, usize)>,
    /// Inferred labels left unmatched once true labels ran out.
    pub unmatched_inferred: Vec<usize>,
    /// Total frames covered by matched pairs.
    pub matched_overlap: usize,
}

/// Greedily pairs inferred labels with true labels by descending overlap.
/// Ties break toward the smallest inferred label, then the smallest true
/// label, so the matching is deterministic.
pub fn greedy_match(inferred: &[usize], truth: &[usize]) -> Result<LabelMatch> {
    if inferred.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: inferred.len() });
    }
    let mut overlap: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&i, &t) in inferred.iter().zip(truth) {
        *overlap.entry((i, t)).or_insert(0) += 1;
    }
    let mut inferred_left: Vec<usize> = {
        let mut v: Vec<usize> = inferred.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let mut truth_left: Vec<usize> = {
        let mut v: Vec<usize> = truth.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let mut pairs = Vec::new();
    let mut matched_overlap = 0usize;
    while !inferred_left.is_empty() && !truth_left.is_empty() {
        let mut best: Option<(usize, usize, usize)> = None;
        for &i in &inferred_left {
            for &t in &truth_left {
                let o = *overlap.get(&(i, t)).unwrap_or(&0);
                let better = match best {
                    None => true,
                    Some((bo, bi, bt)) => o > bo || (o == bo && (i < bi || (i == bi && t < bt))),
                };
                if better {
                    best = Some((o, i, t));
                }
            }
        }
        let (o, i, t) = best.unwrap();
        pairs.push((i, t));
        matched_overlap += o;
        inferred_left.retain(|&x| x != i);
        truth_left.retain(|&x| x != t);
    }
    Ok(LabelMatch { pairs, unmatched_inferred: inferred_left, matched_overlap })
}

/// Normalized Hamming error: one minus the fraction of frames whose label
/// survives the greedy matching. Superfluous or missing states count
/// entirely as error.
pub fn hamming_error(inferred: &[usize], truth: &[usize]) -> Result<f64> {
    if inferred.is_empty() {
        return Err(Error::InvalidParameter("empty label sequences".into()));
    }
    let m = greedy_match(inferred, truth)?;
    // Matched overlap counts frames where the pair's labels co-occur; the
    // remaining frames of the pair disagree somewhere and count as error.
    let mut correct = 0usize;
    let map: BTreeMap<usize, usize> = m.pairs.iter().copied().collect();
    for (&i, &t) in inferred.iter().zip(truth) {
        if map.get(&i) == Some(&t) {
            correct += 1;
        }
    }
    Ok(1.0 - correct as f64 / truth.len() as f64)
}

/// Number of labels whose frame share meets the threshold fraction.
pub fn used_states(labels: &[usize], threshold_fraction: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&threshold_fraction) {
        return Err(Error::Domain(format!(
            "threshold must be in [0, 1), got {threshold_fraction}"
        )));
    }
    if labels.is_empty() {
        return Ok(0);
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    let total = labels.len() as f64;
    Ok(counts.values().filter(|&&c| c as f64 / total >= threshold_fraction).count())
}

/// Nearest-rank percentile: the ceil(p/100 * n)-th order statistic.
pub fn percentile_nearest_rank(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::InvalidParameter("empty sample".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Domain(format!("percentile must be in [0, 100], got {p}")));
    }
    let n = sorted.len();
    let rank = ((p / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    Ok(sorted[rank - 1])
}
