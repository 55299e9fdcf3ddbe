//! Exact block sampling of the hidden segmentation given parameters.
//!
//! With the backward messages in hand the full posterior over (labels,
//! durations) factorizes forward in time: draw the first state from its
//! posterior, draw that segment's duration, step to the boundary and repeat
//! with the transition row as the new initial distribution. The final
//! segment may come out right-censored, in which case it records the
//! observed truncated length and downstream duration updates treat it as a
//! lower bound.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{categorical_sample, ProbVector};
use crate::durations::DurationFamily;
use crate::error::{Error, Result};
use crate::messages::{CumSegLoglikes, MessageOpts, MessageTable, TransitionKernel};

/// One run of a single hidden state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub label: usize,
    /// True duration for complete segments; observed truncated length for a
    /// censored final segment.
    pub duration: usize,
}

/// A super-state trajectory: ordered segments with distinct adjacent labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSequence {
    pub segments: Vec<Segment>,
    /// Set when the final segment was cut off by the end of the window; its
    /// true duration then strictly exceeds the recorded one.
    pub censored_last: bool,
}

impl SegmentSequence {
    pub fn new(segments: Vec<Segment>, censored_last: bool) -> Result<Self> {
        let seq = SegmentSequence { segments, censored_last };
        seq.validate(usize::MAX)?;
        Ok(seq)
    }

    pub fn validate(&self, n_states: usize) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::InvalidParameter("empty segment sequence".into()));
        }
        for w in self.segments.windows(2) {
            if w[0].label == w[1].label {
                return Err(Error::InvalidParameter("adjacent segments share a label".into()));
            }
        }
        if self.segments.iter().any(|s| s.duration < 1) {
            return Err(Error::InvalidParameter("zero-length segment".into()));
        }
        if self.segments.iter().any(|s| s.label >= n_states) {
            return Err(Error::InvalidParameter("segment label out of range".into()));
        }
        Ok(())
    }

    /// Number of observed frames covered.
    pub fn total_len(&self) -> usize {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    /// Expands to per-frame state indices.
    pub fn frame_labels(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total_len());
        for s in &self.segments {
            out.extend(std::iter::repeat(s.label).take(s.duration));
        }
        out
    }

    /// Rebuilds the segment view from per-frame labels.
    pub fn from_frame_labels(labels: &[usize], censored_last: bool) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidParameter("empty label sequence".into()));
        }
        let mut segments = Vec::new();
        let mut run_label = labels[0];
        let mut run_len = 0usize;
        for &l in labels {
            if l == run_label {
                run_len += 1;
            } else {
                segments.push(Segment { label: run_label, duration: run_len });
                run_label = l;
                run_len = 1;
            }
        }
        segments.push(Segment { label: run_label, duration: run_len });
        Ok(SegmentSequence { segments, censored_last })
    }

    /// Complete durations and censored lower bounds for one state's
    /// duration-posterior update. A censored final segment of observed
    /// length L means its true duration is at least L + 1.
    pub fn duration_data(&self, label: usize) -> (Vec<usize>, Vec<usize>) {
        let mut complete = Vec::new();
        let mut censored = Vec::new();
        for (idx, s) in self.segments.iter().enumerate() {
            if s.label != label {
                continue;
            }
            if self.censored_last && idx + 1 == self.segments.len() {
                censored.push(s.duration + 1);
            } else {
                complete.push(s.duration);
            }
        }
        (complete, censored)
    }
}

/// Outcome of one segment-duration draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DurationDraw {
    Complete(usize),
    /// The segment runs past the window; holds the observed length.
    Censored(usize),
}

/// Draws the first segment's state from p(x_1 = i | y) ∝ init_i * b_star_0(i).
pub fn sample_first_state<R: Rng + ?Sized>(
    msgs: &MessageTable,
    init: &ProbVector,
    rng: &mut R,
) -> Result<usize> {
    if init.len() != msgs.n_states() {
        return Err(Error::DimensionMismatch { expected: msgs.n_states(), got: init.len() });
    }
    let logits: Vec<f64> = (0..msgs.n_states())
        .map(|i| init[i].ln() + msgs.log_b_star(0, i))
        .collect();
    categorical_sample(&logits, rng)
        .map_err(|_| Error::ImpossibleEvidence("first-state posterior has no mass".into()))
}

/// Draws the state entered at 1-based frame `start`, conditioned on the
/// previous segment's label.
pub fn sample_next_state<R: Rng + ?Sized>(
    msgs: &MessageTable,
    kernel: &TransitionKernel,
    prev: usize,
    start: usize,
    rng: &mut R,
) -> Result<usize> {
    let t = start - 1;
    let logits: Vec<f64> = (0..msgs.n_states())
        .map(|j| kernel.log(prev, j) + msgs.log_b_star(t, j))
        .collect();
    categorical_sample(&logits, rng)
        .map_err(|_| Error::ImpossibleEvidence(format!("no feasible state at frame {start}")))
}

/// Draws the duration of the segment in `state` starting at 1-based frame
/// `start`: d with probability ∝ pmf(d) * seglik * b, plus the censored
/// outcome ∝ sf(T-start+1) * seglik when censoring applies.
pub fn sample_segment_duration<R: Rng + ?Sized>(
    msgs: &MessageTable,
    cum: &CumSegLoglikes,
    family: &DurationFamily,
    state: usize,
    start: usize,
    opts: &MessageOpts,
    rng: &mut R,
) -> Result<DurationDraw> {
    let t_len = cum.t_len();
    if start < 1 || start > t_len {
        return Err(Error::Domain(format!("segment start {start} outside 1..={t_len}")));
    }
    let horizon = t_len - start + 1;
    let d_here = opts.d_max.min(horizon);
    let mut logits = Vec::with_capacity(d_here + 1);
    for d in 1..=d_here {
        logits.push(
            family.log_pmf(d)?
                + cum.segment(start, start + d - 1, state)
                + msgs.log_b(start - 1 + d, state),
        );
    }
    let censorable = horizon <= opts.d_max && opts.censor_allowed(state);
    if censorable {
        logits.push(family.log_sf(horizon)? + cum.segment(start, t_len, state));
    }
    let idx = categorical_sample(&logits, rng).map_err(|_| {
        Error::ImpossibleEvidence(format!("duration posterior at frame {start} has no mass"))
    })?;
    if censorable && idx == d_here {
        Ok(DurationDraw::Censored(horizon))
    } else {
        Ok(DurationDraw::Complete(idx + 1))
    }
}

/// Draws a complete segmentation of the window from the exact joint
/// posterior over labels and durations given parameters.
pub fn sample_segmentation<R: Rng + ?Sized>(
    msgs: &MessageTable,
    cum: &CumSegLoglikes,
    durations: &[DurationFamily],
    kernel: &TransitionKernel,
    init: &ProbVector,
    opts: &MessageOpts,
    rng: &mut R,
) -> Result<SegmentSequence> {
    let t_len = cum.t_len();
    let mut segments = Vec::new();
    let mut covered = 0usize;
    let mut state = sample_first_state(msgs, init, rng)?;
    loop {
        let start = covered + 1;
        let draw =
            sample_segment_duration(msgs, cum, &durations[state], state, start, opts, rng)?;
        match draw {
            DurationDraw::Censored(len) => {
                segments.push(Segment { label: state, duration: len });
                return Ok(SegmentSequence { segments, censored_last: true });
            }
            DurationDraw::Complete(d) => {
                segments.push(Segment { label: state, duration: d });
                covered += d;
                if covered == t_len {
                    return Ok(SegmentSequence { segments, censored_last: false });
                }
                state = sample_next_state(msgs, kernel, state, covered + 1, rng)?;
            }
        }
    }
}
