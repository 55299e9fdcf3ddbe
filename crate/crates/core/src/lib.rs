//! Bayesian nonparametric inference for explicit-duration hidden semi-Markov
//! models (HDP-HSMMs).
//!
//! The crate is organized around a log-domain HSMM backward message-passing
//! engine ([`messages`]), an exact messages-backwards/sample-forwards block
//! sampler for hidden segmentations ([`blocksampler`]), and two Gibbs samplers
//! that put a hierarchical Dirichlet process prior on an unbounded state
//! space: a finite weak-limit sampler ([`weaklimit`]) and a collapsed
//! direct-assignment sampler ([`directassign`]). Supporting modules provide
//! conjugate distribution primitives ([`distributions`]), a pluggable family
//! of segment-duration distributions ([`durations`]), forward simulation of
//! synthetic datasets ([`genmodel`]), and segmentation metrics ([`eval`]).
//!
//! All likelihood computation is carried out in log space. Every sampling
//! routine is a deterministic function of its inputs and the RNG state, so
//! fixing a seed fixes the entire trajectory.

pub mod blocksampler;
pub mod directassign;
pub mod distributions;
pub mod durations;
pub mod error;
pub mod eval;
pub mod genmodel;
pub mod messages;
pub mod weaklimit;

pub use error::{Error, Result};

/// Numerically stable log(sum(exp(terms))).
///
/// Returns negative infinity for an empty slice or when every term is
/// negative infinity.
pub fn logsumexp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // All -inf (or empty): the sum is zero. +inf propagates as +inf.
        return max;
    }
    let sum: f64 = terms.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}
