//! HSMM backward message passing in the log domain.
//!
//! The engine computes the two backward message families of an
//! explicit-duration HSMM: `log_b[t][i]`, the log probability of the future
//! given a segment boundary after frame t with state i ending, and
//! `log_b_star[t][i]`, the same given a new segment in state i starting at
//! frame t+1. Segment likelihoods are O(1) lookups against a prefix-sum
//! table, and the duration summation is truncated at `d_max`, giving an
//! O(T * d_max * N^2) pass.
//!
//! Right-censoring adds a survival-function term for the segment that is
//! still running when the observation window closes. The extended options
//! allow a per-state censoring mask and a terminal weight vector; the
//! direct-assignment sampler uses both to pin the last segment of its
//! constructed left-to-right chain.

use crate::distributions::ProbVector;
use crate::durations::DurationFamily;
use crate::error::{Error, Result};
use crate::logsumexp;

/// Per-frame per-state log likelihoods, `T x N`.
#[derive(Debug, Clone)]
pub struct FrameLoglikes {
    data: Vec<f64>,
    t_len: usize,
    n_states: usize,
}

impl FrameLoglikes {
    pub fn from_fn<F: FnMut(usize, usize) -> f64>(
        t_len: usize,
        n_states: usize,
        mut f: F,
    ) -> Self {
        let mut data = Vec::with_capacity(t_len * n_states);
        for t in 0..t_len {
            for i in 0..n_states {
                data.push(f(t, i));
            }
        }
        FrameLoglikes { data, t_len, n_states }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let t_len = rows.len();
        let n_states = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n_states) {
            return Err(Error::InvalidParameter("ragged frame log-likelihood table".into()));
        }
        Ok(Self::from_fn(t_len, n_states, |t, i| rows[t][i]))
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// Log likelihood of frame `t` (0-based) under state `i`.
    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.data[t * self.n_states + i]
    }
}

/// Prefix sums of frame log likelihoods: row `t` holds the sum of frames
/// `1..=t` (1-based), row 0 is zero. Segment scores become two lookups.
#[derive(Debug, Clone)]
pub struct CumSegLoglikes {
    data: Vec<f64>,
    t_len: usize,
    n_states: usize,
}

/// Builds the prefix-sum table backing O(1) segment log-likelihood lookup.
pub fn cum_seg_loglikes(frames: &FrameLoglikes) -> CumSegLoglikes {
    let (t_len, n) = (frames.t_len, frames.n_states);
    let mut data = vec![0.0; (t_len + 1) * n];
    for t in 1..=t_len {
        for i in 0..n {
            data[t * n + i] = data[(t - 1) * n + i] + frames.get(t - 1, i);
        }
    }
    CumSegLoglikes { data, t_len, n_states: n }
}

impl CumSegLoglikes {
    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// Log likelihood of frames `start..=end` (1-based, inclusive) under
    /// state `i`.
    pub fn segment(&self, start: usize, end: usize, i: usize) -> f64 {
        debug_assert!(start >= 1 && start <= end && end <= self.t_len);
        self.data[end * self.n_states + i] - self.data[(start - 1) * self.n_states + i]
    }
}

/// Log-domain transition matrix. Rows either normalize to one or are
/// entirely zero-probability (absorbing ends of constructed chains).
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    log_rows: Vec<f64>,
    n_states: usize,
}

impl TransitionKernel {
    /// Builds a kernel from probability rows, normalizing each row.
    pub fn from_probs(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut log_rows = vec![f64::NEG_INFINITY; n * n];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: row.len() });
            }
            if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                return Err(Error::InvalidParameter(
                    "transition probabilities must be finite and nonnegative".into(),
                ));
            }
            let sum: f64 = row.iter().sum();
            if sum == 0.0 {
                continue; // absorbing row
            }
            for (j, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    log_rows[i * n + j] = (p / sum).ln();
                }
            }
        }
        Ok(TransitionKernel { log_rows, n_states: n })
    }

    /// The self-transition-removed kernel: zeroes each row's diagonal and
    /// renormalizes the remaining mass.
    pub fn outlawed_from_rows(rows: &[ProbVector]) -> Result<Self> {
        let n = rows.len();
        let mut probs = Vec::with_capacity(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: row.len() });
            }
            let mut r: Vec<f64> = row.as_slice().to_vec();
            r[i] = 0.0;
            let sum: f64 = r.iter().sum();
            if sum <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "row {i} has no off-diagonal mass to renormalize"
                )));
            }
            probs.push(r);
        }
        Self::from_probs(&probs)
    }

    /// The left-to-right chain used to resample segment boundaries: state s
    /// moves to s+1 with probability one and the last state is absorbing.
    pub fn superdiagonal(n: usize) -> Self {
        let mut log_rows = vec![f64::NEG_INFINITY; n * n];
        for i in 0..n.saturating_sub(1) {
            log_rows[i * n + i + 1] = 0.0;
        }
        TransitionKernel { log_rows, n_states: n }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn log(&self, from: usize, to: usize) -> f64 {
        self.log_rows[from * self.n_states + to]
    }

    pub fn log_row(&self, from: usize) -> &[f64] {
        &self.log_rows[from * self.n_states..(from + 1) * self.n_states]
    }
}

/// The backward message tables: `log_b` has rows 0..=T (row T is the
/// terminal condition), `log_b_star` rows 0..T-1.
#[derive(Debug, Clone)]
pub struct MessageTable {
    log_b: Vec<f64>,
    log_b_star: Vec<f64>,
    t_len: usize,
    n_states: usize,
}

impl MessageTable {
    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn log_b(&self, t: usize, i: usize) -> f64 {
        self.log_b[t * self.n_states + i]
    }

    pub fn log_b_star(&self, t: usize, i: usize) -> f64 {
        self.log_b_star[t * self.n_states + i]
    }
}

/// Extended message-pass options. `backward_messages` covers the common
/// case; construct this directly to pin terminal states or restrict which
/// states may run past the end of the window.
#[derive(Debug, Clone, Default)]
pub struct MessageOpts {
    /// Truncation depth of the duration summation. The pmf is not
    /// renormalized: truncation is a computational approximation only.
    pub d_max: usize,
    /// Global right-censoring switch.
    pub censoring: bool,
    /// Per-state override of which states receive the censoring term.
    pub censor_states: Option<Vec<bool>>,
    /// Terminal log weights replacing the all-ones boundary condition.
    pub log_terminal: Option<Vec<f64>>,
}

impl MessageOpts {
    pub fn new(d_max: usize, censoring: bool) -> Self {
        MessageOpts { d_max, censoring, censor_states: None, log_terminal: None }
    }

    pub(crate) fn censor_allowed(&self, i: usize) -> bool {
        if !self.censoring {
            return false;
        }
        self.censor_states.as_ref().map_or(true, |m| m[i])
    }
}

/// Runs the backward recursion over the whole window.
pub fn backward_messages(
    cum: &CumSegLoglikes,
    durations: &[DurationFamily],
    kernel: &TransitionKernel,
    d_max: usize,
    censoring: bool,
) -> Result<MessageTable> {
    backward_messages_opts(cum, durations, kernel, &MessageOpts::new(d_max, censoring))
}

/// Backward recursion with full options.
pub fn backward_messages_opts(
    cum: &CumSegLoglikes,
    durations: &[DurationFamily],
    kernel: &TransitionKernel,
    opts: &MessageOpts,
) -> Result<MessageTable> {
    let t_len = cum.t_len();
    let n = cum.n_states();
    if opts.d_max < 1 {
        return Err(Error::Domain(format!("d_max must be >= 1, got {}", opts.d_max)));
    }
    if durations.len() != n || kernel.n_states() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: durations.len().min(kernel.n_states()),
        });
    }
    if let Some(m) = &opts.censor_states {
        if m.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: m.len() });
        }
    }
    if let Some(v) = &opts.log_terminal {
        if v.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: v.len() });
        }
    }
    let d_cap = opts.d_max.min(t_len);

    // Duration tables, indexed [i][d-1], covering 1..=d_cap.
    let mut log_pmf = vec![vec![0.0; d_cap]; n];
    let mut log_sf = vec![vec![0.0; d_cap]; n];
    for i in 0..n {
        for d in 1..=d_cap {
            log_pmf[i][d - 1] = durations[i].log_pmf(d)?;
            log_sf[i][d - 1] = durations[i].log_sf(d)?;
        }
    }

    let mut log_b = vec![f64::NEG_INFINITY; (t_len + 1) * n];
    let mut log_b_star = vec![f64::NEG_INFINITY; t_len * n];
    for i in 0..n {
        log_b[t_len * n + i] = opts.log_terminal.as_ref().map_or(0.0, |v| v[i]);
    }

    let mut scratch: Vec<f64> = Vec::with_capacity(d_cap + 1);
    for t in (0..t_len).rev() {
        let horizon = t_len - t;
        let d_here = d_cap.min(horizon);
        for i in 0..n {
            scratch.clear();
            for d in 1..=d_here {
                scratch.push(
                    log_b[(t + d) * n + i] + log_pmf[i][d - 1] + cum.segment(t + 1, t + d, i),
                );
            }
            if horizon <= opts.d_max && opts.censor_allowed(i) {
                scratch.push(log_sf[i][horizon - 1] + cum.segment(t + 1, t_len, i));
            }
            log_b_star[t * n + i] = logsumexp(&scratch);
        }
        for i in 0..n {
            scratch.clear();
            let row = kernel.log_row(i);
            for j in 0..n {
                scratch.push(row[j] + log_b_star[t * n + j]);
            }
            log_b[t * n + i] = logsumexp(&scratch);
        }
    }

    Ok(MessageTable { log_b, log_b_star, t_len, n_states: n })
}

/// Log evidence of the window: log sum_i init[i] * exp(log_b_star[0][i]).
pub fn total_loglike(msgs: &MessageTable, init: &ProbVector) -> Result<f64> {
    if init.len() != msgs.n_states() {
        return Err(Error::DimensionMismatch { expected: msgs.n_states(), got: init.len() });
    }
    let terms: Vec<f64> = (0..msgs.n_states())
        .map(|i| init[i].ln() + msgs.log_b_star(0, i))
        .collect();
    Ok(logsumexp(&terms))
}
