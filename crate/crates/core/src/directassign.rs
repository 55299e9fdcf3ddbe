//! Direct-assignment Gibbs sampler for the HDP-HSMM.
//!
//! The sampler works on the super-state chain with transition rows and
//! observation parameters integrated out. Pass 1 resamples each segment's
//! label from Chinese-restaurant-franchise predictive probabilities times
//! the segment's marginal observation likelihood and its duration score;
//! self-transitions are outlawed by latent history sampling: invalid draws
//! are rejected and recorded as dummy self-transition counts, which restore
//! conjugacy for the bookkeeping updates. Pass 2 redraws per-state
//! parameters and resamples the segment boundaries through a constructed
//! left-to-right HSMM that follows the super-state sequence exactly.

use nalgebra::DVector;
use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::blocksampler::{sample_segmentation, SegmentSequence};
use crate::distributions::{
    categorical_sample, niw_marginal_loglike, niw_posterior, niw_sample, stick_breaking_split,
    NIWParams, ProbVector,
};
use crate::durations::DurationFamily;
use crate::error::{Error, Result};
use crate::messages::{
    backward_messages_opts, cum_seg_loglikes, FrameLoglikes, MessageOpts, TransitionKernel,
};



/// Hyperparameters of the collapsed sampler.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrfConfig {
    /// Top-level concentration (controls new-state mass).
    pub gamma: f64,
    /// Transition-row concentration.
    pub alpha: f64,
    pub obs_prior: NIWParams,
    /// Duration family template for freshly created states.
    pub dur_prior: DurationFamily,
    /// Block length used to seed the initial segmentation.
    pub init_segment_len: usize,
}

/// Collapsed sampler state over the instantiated states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrfState {
    pub hypers: CrfConfig,
    pub seg: SegmentSequence,
    /// Global weights of the instantiated states.
    pub beta_active: Vec<f64>,
    /// Stick-breaking remainder mass for not-yet-seen states.
    pub beta_rem: f64,
    /// Per-state duration parameters (persisted from the last pass 2).
    pub dur_params: Vec<DurationFamily>,
    /// Duration parameters the next created state will take; redrawn from
    /// the prior whenever consumed (lazy instantiation).
    pub next_dur: DurationFamily,
    /// Super-state transition counts between segments.
    pub n_real: Vec<Vec<usize>>,
    /// Dummy self-transition counts recorded by the current sweep's
    /// rejections; reset every sweep, never accumulated.
    pub n_dummy: Vec<usize>,
    /// Per-boundary attribution of the dummy counts: entry b holds the
    /// dummies of the transition out of segment b (restaurant z_b).
    pub boundary_dummies: Vec<usize>,
}

impl CrfState {
    /// Seeds a two-state alternating segmentation and prior parameters.
    pub fn init<R: Rng + ?Sized>(
        config: &CrfConfig,
        data: &[DVector<f64>],
        rng: &mut R,
    ) -> Result<CrfState> {
        if data.is_empty() {
            return Err(Error::InvalidConfig("empty dataset".into()));
        }
        if !(config.gamma > 0.0) || !(config.alpha > 0.0) {
            return Err(Error::InvalidConfig("concentrations must be positive".into()));
        }
        let t_len = data.len();
        let block = config.init_segment_len.max(1);
        let mut labels = Vec::with_capacity(t_len);
        let mut covered = 0;
        let mut which = 0usize;
        while covered < t_len {
            let len = block.min(t_len - covered);
            labels.extend(std::iter::repeat(which).take(len));
            which = 1 - which;
            covered += len;
        }
        let n_states = labels.iter().copied().max().unwrap() + 1;
        let seg = SegmentSequence::from_frame_labels(&labels, false)?;
        let mut beta_rem = 1.0;
        let mut beta_active = Vec::with_capacity(n_states);
        for _ in 0..n_states {
            let (piece, rem) = stick_breaking_split(beta_rem, config.gamma, rng)?;
            beta_active.push(piece);
            beta_rem = rem;
        }
        let dur_params = (0..n_states)
            .map(|_| config.dur_prior.posterior_resample(&[], &[], rng))
            .collect::<Result<Vec<_>>>()?;
        let next_dur = config.dur_prior.posterior_resample(&[], &[], rng)?;
        let n_real = transition_counts(&seg, n_states);
        let n_boundaries = seg.n_segments() - 1;
        Ok(CrfState {
            hypers: config.clone(),
            seg,
            beta_active,
            beta_rem,
            dur_params,
            next_dur,
            n_real,
            n_dummy: vec![0; n_states],
            boundary_dummies: vec![0; n_boundaries],
        })
    }

    pub fn n_instantiated(&self) -> usize {
        self.beta_active.len()
    }

    fn check_bookkeeping(&self) -> Result<()> {
        let total: f64 = self.beta_active.iter().sum::<f64>() + self.beta_rem;
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "global weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

fn transition_counts(seg: &SegmentSequence, n_states: usize) -> Vec<Vec<usize>> {
    let mut n = vec![vec![0usize; n_states]; n_states];
    for w in seg.segments.windows(2) {
        n[w[0].label][w[1].label] += 1;
    }
    n
}

/// 1-based (start, end) frame ranges of each segment.
fn segment_bounds(seg: &SegmentSequence) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(seg.n_segments());
    let mut pos = 1usize;
    for s in &seg.segments {
        out.push((pos, pos + s.duration - 1));
        pos += s.duration;
    }
    out
}

/// Duration score of segment `idx`: pmf of its length, or the survival
/// function for a censored final segment.
fn duration_score(family: &DurationFamily, seg: &SegmentSequence, idx: usize) -> Result<f64> {
    let d = seg.segments[idx].duration;
    if seg.censored_last && idx + 1 == seg.n_segments() {
        family.log_sf(d)
    } else {
        family.log_pmf(d)
    }
}

/// Out-transition marginal over the boundary's dummy self-transitions: the
/// urn seats g self-customers (dish weight `self_w`, urn total `den`) and
/// then the observed transition (dish weight `out_w`); summing the prefix
/// products over g collapses to `out_w / (den - self_w)`.
fn out_marginal(self_w: f64, den: f64, out_w: f64) -> Result<f64> {
    let gap = den - self_w;
    if !(gap > 0.0) {
        return Err(Error::DegenerateAugmentation(
            "candidate's self-dish weight saturates its urn".into(),
        ));
    }
    Ok(out_w / gap)
}

/// Draws the boundary's dummy count from its conditional
/// p(g) ∝ prod_{i<g} (self_w + i)/(den + i) / (den + g). The urn marginal
/// is beta-geometric: draw the stay probability from Beta(self_w,
/// den - self_w), then a geometric count of failures. Capped far out in the
/// tail, matching the crate-wide dummy-count guard.
pub(crate) fn draw_boundary_dummies<R: Rng + ?Sized>(
    self_w: f64,
    den: f64,
    rng: &mut R,
) -> Result<usize> {
    if self_w <= 0.0 {
        return Ok(0);
    }
    let stay = crate::distributions::beta_sample(self_w, den - self_w, rng)?;
    if stay >= 1.0 {
        return Ok(10_000_000);
    }
    let u: f64 = rng.random();
    let g = ((1.0 - u).ln() / stay.ln()).floor();
    Ok(g.max(0.0).min(1.0e7) as usize)
}

/// Resamples the label of segment `s` by latent history sampling: the
/// conditional marginalizes the dummy self-transitions of the outgoing
/// boundary exactly (summing the rejected-proposal series per candidate),
/// draws a valid label, then redraws the boundary's dummy count from its
/// conditional and records it.
pub fn resample_superstate_label<R: Rng + ?Sized>(
    state: &mut CrfState,
    s: usize,
    data: &[DVector<f64>],
    rng: &mut R,
) -> Result<()> {
    let n_seg = state.seg.n_segments();
    if s >= n_seg {
        return Err(Error::Domain(format!("segment index {s} out of range")));
    }
    if state.boundary_dummies.len() != n_seg.saturating_sub(1) {
        return Err(Error::InvalidParameter("boundary dummy table out of sync".into()));
    }
    let bounds = segment_bounds(&state.seg);
    let old = state.seg.segments[s].label;
    let prev = if s > 0 { Some(state.seg.segments[s - 1].label) } else { None };
    let next = if s + 1 < n_seg { Some(state.seg.segments[s + 1].label) } else { None };

    // Remove segment s's transitions and its outgoing boundary's dummies.
    if let Some(p) = prev {
        state.n_real[p][old] -= 1;
    }
    if next.is_some() {
        state.n_real[old][next.unwrap()] -= 1;
        state.n_dummy[old] -= state.boundary_dummies[s];
        state.boundary_dummies[s] = 0;
    }

    let k_active = state.n_instantiated();
    let alpha = state.hypers.alpha;

    // Folded counts (real + diagonal dummies) drive the CRF predictives.
    let fold = |state: &CrfState, j: usize, k: usize| -> f64 {
        state.n_real[j][k] as f64 + if j == k { state.n_dummy[j] as f64 } else { 0.0 }
    };
    let row_total =
        |state: &CrfState, j: usize| -> f64 { (0..k_active).map(|k| fold(state, j, k)).sum() };

    // Marginal observation likelihood of this segment under each candidate,
    // conditioning on the candidate's other segments.
    let (seg_start, seg_end) = bounds[s];
    let seg_frames: Vec<DVector<f64>> =
        data[seg_start - 1..seg_end].iter().cloned().collect();
    let mut obs_scores = Vec::with_capacity(k_active + 1);
    for k in 0..k_active {
        let mut others: Vec<DVector<f64>> = Vec::new();
        for (idx, segment) in state.seg.segments.iter().enumerate() {
            if idx != s && segment.label == k {
                let (a, b) = bounds[idx];
                others.extend(data[a - 1..b].iter().cloned());
            }
        }
        let post = niw_posterior(&state.hypers.obs_prior, &others)?;
        obs_scores.push(niw_marginal_loglike(&post, &seg_frames)?);
    }
    obs_scores.push(niw_marginal_loglike(&state.hypers.obs_prior, &seg_frames)?);

    // Candidate scores; slot k_active is the new-state option. Neighbor
    // labels are outlawed outright (their mass is what the dummy marginal
    // accounts for).
    let mut logits = vec![f64::NEG_INFINITY; k_active + 1];
    let mut urn: Vec<Option<(f64, f64)>> = vec![None; k_active + 1];
    for k in 0..=k_active {
        let is_new = k == k_active;
        if !is_new && (Some(k) == prev || Some(k) == next) {
            continue;
        }
        let beta_k = if is_new { state.beta_rem } else { state.beta_active[k] };
        let mut logit = obs_scores[k];

        logit += match prev {
            None => beta_k.ln(),
            Some(p) => {
                let num =
                    if is_new { alpha * beta_k } else { fold(state, p, k) + alpha * beta_k };
                (num / (row_total(state, p) + alpha)).ln()
            }
        };
        if let Some(nx) = next {
            let beta_next = state.beta_active[nx];
            let (self_w, den, out_w) = if is_new {
                // Unborn restaurant: its own dish weight is the expected
                // first stick share of the remainder.
                (
                    alpha * state.beta_rem / (1.0 + state.hypers.gamma),
                    alpha,
                    alpha * beta_next,
                )
            } else {
                (
                    fold(state, k, k) + alpha * beta_k,
                    row_total(state, k) + alpha,
                    fold(state, k, nx) + alpha * beta_next,
                )
            };
            logit += out_marginal(self_w, den, out_w)?.ln();
            urn[k] = Some((self_w, den));
        }
        let dur_family = if is_new { &state.next_dur } else { &state.dur_params[k] };
        logit += duration_score(dur_family, &state.seg, s)?;
        logits[k] = logit;
    }

    let chosen = categorical_sample(&logits, rng)
        .map_err(|_| Error::ImpossibleEvidence("label posterior has no mass".into()))?;

    let new_label = if chosen == k_active {
        // Instantiate a state off the remainder stick.
        let (piece, rem) = stick_breaking_split(state.beta_rem, state.hypers.gamma, rng)?;
        state.beta_active.push(piece);
        state.beta_rem = rem;
        state.dur_params.push(state.next_dur.clone());
        state.next_dur = state.hypers.dur_prior.posterior_resample(&[], &[], rng)?;
        for row in &mut state.n_real {
            row.push(0);
        }
        state.n_real.push(vec![0; state.beta_active.len()]);
        state.n_dummy.push(0);
        state.beta_active.len() - 1
    } else {
        chosen
    };

    // Realize the boundary's dummy count from its conditional; a freshly
    // created state uses its actual stick piece.
    let boundary_g = match next {
        None => None,
        Some(_) => {
            let (self_w, den) = if chosen == k_active {
                (alpha * state.beta_active[new_label], alpha)
            } else {
                urn[chosen].expect("urn recorded for valid candidate")
            };
            Some(draw_boundary_dummies(self_w, den, rng)?)
        }
    };

    state.seg.segments[s].label = new_label;
    if let Some(p) = prev {
        state.n_real[p][new_label] += 1;
    }
    if let Some(nx) = next {
        state.n_real[new_label][nx] += 1;
        let g = boundary_g.unwrap();
        state.boundary_dummies[s] = g;
        state.n_dummy[new_label] += g;
    }
    Ok(())
}

/// Drops states with no segments, folding their global weight back into
/// the remainder and relabeling the survivors in order.
pub fn prune_empty_states(state: &mut CrfState) {
    let k = state.n_instantiated();
    let mut used = vec![false; k];
    for s in &state.seg.segments {
        used[s.label] = true;
    }
    if used.iter().all(|&u| u) {
        return;
    }
    let mut remap = vec![usize::MAX; k];
    let mut beta_active = Vec::new();
    let mut dur_params = Vec::new();
    let mut n_dummy = Vec::new();
    for old in 0..k {
        if used[old] {
            remap[old] = beta_active.len();
            beta_active.push(state.beta_active[old]);
            dur_params.push(state.dur_params[old].clone());
            n_dummy.push(state.n_dummy[old]);
        } else {
            state.beta_rem += state.beta_active[old];
        }
    }
    for s in &mut state.seg.segments {
        s.label = remap[s.label];
    }
    state.beta_active = beta_active;
    state.dur_params = dur_params;
    state.n_dummy = n_dummy;
    state.n_real = transition_counts(&state.seg, state.beta_active.len());
}

/// Redraws every boundary's dummy self-transition count jointly from the
/// exact conditional given the labels and global weights. Summing the urn
/// probabilities over per-boundary compositions collapses per restaurant:
/// the real outgoing customers cancel, leaving a stay probability
/// pi_j ~ Beta(alpha beta_j, alpha (1 - beta_j)) and an independent
/// geometric dummy count per boundary sourced by j.
pub fn refresh_boundary_dummies<R: Rng + ?Sized>(
    state: &mut CrfState,
    rng: &mut R,
) -> Result<()> {
    let n_seg = state.seg.n_segments();
    let k = state.n_instantiated();
    let alpha = state.hypers.alpha;
    state.boundary_dummies = vec![0; n_seg.saturating_sub(1)];
    state.n_dummy = vec![0; k];
    let mut stay = vec![None::<f64>; k];
    for b in 0..n_seg.saturating_sub(1) {
        let j = state.seg.segments[b].label;
        let pi = match stay[j] {
            Some(p) => p,
            None => {
                let p = crate::distributions::beta_sample(
                    alpha * state.beta_active[j],
                    alpha * (1.0 - state.beta_active[j]),
                    rng,
                )?;
                stay[j] = Some(p);
                p
            }
        };
        let g = if pi >= 1.0 {
            10_000_000
        } else if pi <= 0.0 {
            0
        } else {
            let u: f64 = rng.random();
            ((1.0 - u).ln() / pi.ln()).floor().max(0.0).min(1.0e7) as usize
        };
        state.boundary_dummies[b] = g;
        state.n_dummy[j] += g;
    }
    Ok(())
}

/// Refreshes the global weights: completes the transition data with fresh
/// dummy self-transition counts, samples table counts, and draws
/// (beta_active, beta_rem) from their Dirichlet conditional. The first
/// segment's label is a direct draw from the global measure and
/// contributes one extra table.
pub fn resample_global_weights<R: Rng + ?Sized>(
    state: &mut CrfState,
    rng: &mut R,
) -> Result<()> {
    refresh_boundary_dummies(state, rng)?;
    let k = state.n_instantiated();
    let alpha = state.hypers.alpha;
    let mut table_cols = vec![0usize; k];
    for j in 0..k {
        for col in 0..k {
            let n_jk = state.n_real[j][col] + if j == col { state.n_dummy[j] } else { 0 };
            let conc = alpha * state.beta_active[col];
            for i in 1..=n_jk {
                if rng.random::<f64>() < conc / (conc + (i as f64 - 1.0)) {
                    table_cols[col] += 1;
                }
            }
        }
    }
    table_cols[state.seg.segments[0].label] += 1;

    let mut conc: Vec<f64> = table_cols.iter().map(|&m| m as f64).collect();
    conc.push(state.hypers.gamma);
    if conc.iter().any(|&c| c <= 0.0) {
        return Err(Error::DegeneratePosterior(
            "a used state lost all its table mass".into(),
        ));
    }
    let draw = crate::distributions::dirichlet_sample(&conc, rng)?;
    state.beta_active = (0..k).map(|i| draw[i]).collect();
    state.beta_rem = draw[k];
    state.check_bookkeeping()
}

/// Redraws segment boundaries conditioned on the super-state label order:
/// per-state parameters are sampled from their posteriors, an S-state
/// left-to-right HSMM is built over them, and its exact posterior
/// segmentation is block-sampled. The last pseudo-state is the only one
/// allowed to be running at the window's end, so every sample reproduces
/// all S super-states in order.
pub fn resample_segmentation_given_superstates<R: Rng + ?Sized>(
    state: &mut CrfState,
    data: &[DVector<f64>],
    rng: &mut R,
) -> Result<()> {
    let t_len = data.len();
    let n_seg = state.seg.n_segments();
    if n_seg > t_len {
        return Err(Error::ImpossibleEvidence(format!(
            "{n_seg} segments cannot cover {t_len} frames"
        )));
    }
    let k = state.n_instantiated();
    let bounds = segment_bounds(&state.seg);

    // Per unique state: observation parameters from the conjugate
    // posterior, duration parameters through the family's own resampler.
    let mut obs_draw = Vec::with_capacity(k);
    for j in 0..k {
        let mut frames: Vec<DVector<f64>> = Vec::new();
        for (idx, segment) in state.seg.segments.iter().enumerate() {
            if segment.label == j {
                let (a, b) = bounds[idx];
                frames.extend(data[a - 1..b].iter().cloned());
            }
        }
        let post = niw_posterior(&state.hypers.obs_prior, &frames)?;
        obs_draw.push(niw_sample(&post, rng)?);
    }
    for j in 0..k {
        let (complete, censored) = state.seg.duration_data(j);
        state.dur_params[j] = state.dur_params[j].posterior_resample(&complete, &censored, rng)?;
    }

    // Constructed chain: pseudo-state s carries the parameters of label
    // z_s; only the last may censor; the terminal weight pins it.
    let labels: Vec<usize> = state.seg.segments.iter().map(|s| s.label).collect();
    let evals: Vec<_> = labels
        .iter()
        .map(|&z| obs_draw[z].evaluator())
        .collect::<Result<Vec<_>>>()?;
    let frames = FrameLoglikes::from_fn(t_len, n_seg, |t, s| evals[s].log_density(&data[t]));
    let cum = cum_seg_loglikes(&frames);
    let durations: Vec<DurationFamily> =
        labels.iter().map(|&z| state.dur_params[z].clone()).collect();
    let kernel = TransitionKernel::superdiagonal(n_seg);
    let mut censor_states = vec![false; n_seg];
    censor_states[n_seg - 1] = true;
    let mut log_terminal = vec![f64::NEG_INFINITY; n_seg];
    log_terminal[n_seg - 1] = 0.0;
    let opts = MessageOpts {
        d_max: t_len,
        censoring: true,
        censor_states: Some(censor_states),
        log_terminal: Some(log_terminal),
    };
    let msgs = backward_messages_opts(&cum, &durations, &kernel, &opts)?;
    let mut init = vec![0.0; n_seg];
    init[0] = 1.0;
    let init = ProbVector::new(init)?;
    let drawn = sample_segmentation(&msgs, &cum, &durations, &kernel, &init, &opts, rng)?;
    if drawn.n_segments() != n_seg {
        return Err(Error::ImpossibleEvidence(
            "constructed chain failed to reproduce the super-state sequence".into(),
        ));
    }
    let mut segments = drawn.segments;
    for (i, s) in segments.iter_mut().enumerate() {
        debug_assert_eq!(s.label, i);
        s.label = labels[i];
    }
    state.seg = SegmentSequence { segments, censored_last: drawn.censored_last };
    state.seg.validate(k)?;
    state.n_real = transition_counts(&state.seg, k);
    Ok(())
}

/// Pass 2 over the extended super-state chain. The two-pass scheme on its
/// own can never change the segment count: pass 1 relabels with neighbors
/// outlawed and the pinned construction returns exactly S segments. The
/// chain does not end at the window, though; appending future super-states
/// drawn from the CRF predictive (an auxiliary realization, discarded after
/// use) lets the boundary resample decide how many segments the window
/// actually covers, so the segment count and even the instantiated-state
/// count can move.
pub fn resample_segmentation_extended<R: Rng + ?Sized>(
    state: &mut CrfState,
    data: &[DVector<f64>],
    rng: &mut R,
) -> Result<()> {
    let t_len = data.len();
    let k = state.n_instantiated();
    let alpha = state.hypers.alpha;
    let bounds = segment_bounds(&state.seg);

    // Posterior draws for instantiated states.
    let mut obs_draw = Vec::with_capacity(k);
    for j in 0..k {
        let mut frames: Vec<DVector<f64>> = Vec::new();
        for (idx, segment) in state.seg.segments.iter().enumerate() {
            if segment.label == j {
                let (a, b) = bounds[idx];
                frames.extend(data[a - 1..b].iter().cloned());
            }
        }
        let post = niw_posterior(&state.hypers.obs_prior, &frames)?;
        obs_draw.push(niw_sample(&post, rng)?);
    }
    for j in 0..k {
        let (complete, censored) = state.seg.duration_data(j);
        state.dur_params[j] = state.dur_params[j].posterior_resample(&complete, &censored, rng)?;
    }

    // Extend the label chain to cover any feasible segmentation of the
    // window (at most T segments). Everything here is a local auxiliary
    // realization: counts, weights, and phantom-state parameters revert
    // unless the sampled path actually uses them.
    let mut labels_ext: Vec<usize> = state.seg.segments.iter().map(|s| s.label).collect();
    let mut counts: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            (0..k)
                .map(|c| {
                    state.n_real[j][c] as f64
                        + if j == c { state.n_dummy[j] as f64 } else { 0.0 }
                })
                .collect()
        })
        .collect();
    let mut beta_ext: Vec<f64> = state.beta_active.clone();
    let mut rem = state.beta_rem;
    let mut phantom: Vec<(DurationFamily, crate::distributions::GaussianParams)> = Vec::new();
    while labels_ext.len() < t_len {
        let prev = *labels_ext.last().unwrap();
        // Marginalize the rejected self-draws: the next dish is categorical
        // over the non-self urn weights, and the implied dummy customers
        // are seated from their beta-geometric conditional.
        let mut weights: Vec<f64> = (0..beta_ext.len())
            .map(|c| if c == prev { 0.0 } else { counts[prev][c] + alpha * beta_ext[c] })
            .collect();
        weights.push(alpha * rem);
        let total: f64 = weights.iter().sum();
        let mut u: f64 = rng.random::<f64>() * total;
        let mut pick = weights.len() - 1;
        for (c, &w) in weights.iter().enumerate() {
            if u < w {
                pick = c;
                break;
            }
            u -= w;
        }
        if pick == beta_ext.len() {
            // New phantom state off the remainder stick.
            let (piece, rest) = stick_breaking_split(rem, state.hypers.gamma, rng)?;
            beta_ext.push(piece);
            rem = rest;
            let dur = state.hypers.dur_prior.posterior_resample(&[], &[], rng)?;
            let obs = niw_sample(&state.hypers.obs_prior, rng)?;
            phantom.push((dur, obs));
            for row in &mut counts {
                row.push(0.0);
            }
            counts.push(vec![0.0; beta_ext.len()]);
            pick = beta_ext.len() - 1;
        }
        let row_total: f64 = counts[prev].iter().sum::<f64>();
        let self_w = counts[prev][prev] + alpha * beta_ext[prev];
        let g = draw_boundary_dummies(self_w, row_total + alpha, rng)?;
        counts[prev][prev] += g as f64;
        counts[prev][pick] += 1.0;
        labels_ext.push(pick);
    }

    // Parameters per chain position.
    let chain_len = labels_ext.len();
    let dur_of = |label: usize| -> &DurationFamily {
        if label < k { &state.dur_params[label] } else { &phantom[label - k].0 }
    };
    let obs_of = |label: usize| -> &crate::distributions::GaussianParams {
        if label < k { &obs_draw[label] } else { &phantom[label - k].1 }
    };
    let evals: Vec<_> = labels_ext
        .iter()
        .map(|&z| obs_of(z).evaluator())
        .collect::<Result<Vec<_>>>()?;
    let frames = FrameLoglikes::from_fn(t_len, chain_len, |t, s| evals[s].log_density(&data[t]));
    let cum = cum_seg_loglikes(&frames);
    let durations: Vec<DurationFamily> =
        labels_ext.iter().map(|&z| dur_of(z).clone()).collect();
    let kernel = TransitionKernel::superdiagonal(chain_len);
    let opts = MessageOpts::new(t_len, true);
    let msgs = backward_messages_opts(&cum, &durations, &kernel, &opts)?;
    let mut init = vec![0.0; chain_len];
    init[0] = 1.0;
    let init = ProbVector::new(init)?;
    let drawn = sample_segmentation(&msgs, &cum, &durations, &kernel, &init, &opts, rng)?;

    // Map chain positions back to labels; instantiate any phantom state the
    // path actually used, in first-use order.
    let mut segments = drawn.segments;
    let mut phantom_map: Vec<Option<usize>> = vec![None; phantom.len()];
    for (i, s) in segments.iter_mut().enumerate() {
        debug_assert_eq!(s.label, i);
        let z = labels_ext[i];
        s.label = if z < k {
            z
        } else {
            let slot = z - k;
            if phantom_map[slot].is_none() {
                let (dur, _) = phantom[slot].clone();
                let (piece, rest) =
                    stick_breaking_split(state.beta_rem, state.hypers.gamma, rng)?;
                state.beta_active.push(piece);
                state.beta_rem = rest;
                state.dur_params.push(dur);
                state.n_dummy.push(0);
                phantom_map[slot] = Some(state.beta_active.len() - 1);
            }
            phantom_map[slot].unwrap()
        };
    }
    state.seg = SegmentSequence { segments, censored_last: drawn.censored_last };
    state.seg.validate(state.n_instantiated())?;
    state.n_real = transition_counts(&state.seg, state.n_instantiated());
    Ok(())
}

/// One full sweep: label pass with latent-history rejection, pruning and
/// global-weight refresh, then parameter and boundary resampling over the
/// predictive-extended chain.
pub fn direct_sweep<R: Rng + ?Sized>(
    state: &mut CrfState,
    data: &[DVector<f64>],
    rng: &mut R,
) -> Result<()> {
    // Dummy counts are auxiliary completions of the current configuration.
    state.n_dummy = vec![0; state.n_instantiated()];
    state.boundary_dummies = vec![0; state.seg.n_segments().saturating_sub(1)];
    for s in 0..state.seg.n_segments() {
        resample_superstate_label(state, s, data, rng)?;
    }
    prune_empty_states(state);
    resample_global_weights(state, rng)?;
    resample_segmentation_extended(state, data, rng)?;
    prune_empty_states(state);
    // The boundary layout changed; the stale dummy attribution decays.
    state.n_dummy = vec![0; state.n_instantiated()];
    state.boundary_dummies = vec![0; state.seg.n_segments().saturating_sub(1)];
    state.check_bookkeeping()
}
