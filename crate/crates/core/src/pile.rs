//! Pairwise iterative logits ensemble and the averaged-ensemble baseline.
//!
//! Every document starts at the plain mean of its teachers' logits. The
//! iteration then samples label-distinct document pairs from the same query.
//! When the higher-graded document of a pair is scored strictly below the
//! lower-graded one, the teachers that caused the inversion lose their weight:
//! on the higher-graded side every teacher scoring below the current ensemble
//! logit, on the lower-graded side every teacher scoring above it. Both logits
//! are then moved towards the mean of the surviving teachers with update rate
//! `lambda`.
//!
//! Every ensemble value stays inside the hull `[min_k f_k, max_k f_k]` of its
//! document's teacher logits. Means are taken over sorted values so the result
//! does not depend on teacher order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{
    EnsembleOutput, EnsembleState, PairPolicy, PileConfig, QueryGroup, RelevanceLabel, StopPolicy,
};

/// Order-independent mean, clamped to the range of its inputs.
fn hull_mean(values: &mut [f64]) -> f64 {
    debug_assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let sum: f64 = values.iter().sum();
    let mean = sum / values.len() as f64;
    mean.clamp(values[0], values[values.len() - 1])
}

/// Equal-weight mean of the teachers' logits for every document.
pub fn average_ensemble(group: &QueryGroup) -> Result<Vec<f64>> {
    group
        .docs
        .iter()
        .map(|doc| {
            if doc.teacher_logits.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "doc '{}' in group '{}' has no teacher logits",
                    doc.doc_id, group.query_id
                )));
            }
            Ok(hull_mean(&mut doc.teacher_logits.clone()))
        })
        .collect()
}

/// True when the higher-graded document has the strictly lower logit.
/// Equal logits and equal labels are never reversed.
pub fn is_reversed_pair(e_i: f64, e_j: f64, y_i: RelevanceLabel, y_j: RelevanceLabel) -> bool {
    (y_i > y_j && e_i < e_j) || (y_j > y_i && e_j < e_i)
}

/// Zero-one teacher weights for a reversed pair. `f_hi`/`e_hi` belong to the
/// higher-graded document.
pub fn reassign_weights(f_hi: &[f64], f_lo: &[f64], e_hi: f64, e_lo: f64) -> (Vec<u8>, Vec<u8>) {
    let hi = f_hi.iter().map(|&f| u8::from(f >= e_hi)).collect();
    let lo = f_lo.iter().map(|&f| u8::from(f <= e_lo)).collect();
    (hi, lo)
}

/// Moves `e_old` towards the mean of the teachers with non-zero weight.
///
/// The result always lies between `e_old` and that mean, so a move towards a
/// larger mean never decreases the logit. `lambda == 1` returns the mean.
pub fn blend_update(e_old: f64, weights: &[u8], f: &[f64], lambda: f64) -> Result<f64> {
    if weights.len() != f.len() {
        return Err(Error::InvalidInput(format!(
            "{} weights for {} teacher logits",
            weights.len(),
            f.len()
        )));
    }
    let mut kept: Vec<f64> = f
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w != 0)
        .map(|(&v, _)| v)
        .collect();
    if kept.is_empty() {
        return Err(Error::InvalidState("all teacher weights are zero".into()));
    }
    let target = hull_mean(&mut kept);
    if lambda == 1.0 {
        return Ok(target);
    }
    let blended = e_old + lambda * (target - e_old);
    Ok(blended.clamp(e_old.min(target), e_old.max(target)))
}

/// Number of label-distinct pairs whose higher-graded document has the
/// strictly lower logit.
pub fn count_reversed_pairs(logits: &[f64], labels: &[RelevanceLabel]) -> usize {
    assert_eq!(
        logits.len(),
        labels.len(),
        "logits and labels differ in length"
    );
    let mut count = 0;
    for i in 0..logits.len() {
        for j in i + 1..logits.len() {
            if is_reversed_pair(logits[i], logits[j], labels[i], labels[j]) {
                count += 1;
            }
        }
    }
    count
}

/// All unordered label-distinct pairs, each as `(higher-graded, lower-graded)`,
/// enumerated in `(i, j)` index order with `i < j`.
pub fn distinct_label_pairs(labels: &[RelevanceLabel]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if labels[i] > labels[j] {
                pairs.push((i, j));
            } else if labels[j] > labels[i] {
                pairs.push((j, i));
            }
        }
    }
    pairs
}

/// Draws document pairs for one group.
///
/// The random policy uses ChaCha8 seeded from the configured seed mixed with a
/// hash of the query id, drawing indices as `u64` so sequences are identical on
/// every platform.
pub struct PairSampler {
    pairs: Vec<(usize, usize)>,
    policy: PairPolicy,
    rng: ChaCha8Rng,
    cursor: usize,
}

impl PairSampler {
    pub fn new(group: &QueryGroup, policy: PairPolicy, seed: u64) -> Self {
        Self {
            pairs: distinct_label_pairs(&group.labels()),
            policy,
            rng: ChaCha8Rng::seed_from_u64(group_seed(seed, &group.query_id)),
            cursor: 0,
        }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Next `(hi, lo)` pair, or `None` when the group has no label-distinct pair.
    pub fn sample(&mut self) -> Option<(usize, usize)> {
        if self.pairs.is_empty() {
            return None;
        }
        let index = match self.policy {
            PairPolicy::UniformRandom => self.rng.gen_range(0..self.pairs.len() as u64) as usize,
            PairPolicy::Sweep => {
                let i = self.cursor;
                self.cursor = (self.cursor + 1) % self.pairs.len();
                i
            }
        };
        Some(self.pairs[index])
    }
}

fn group_seed(seed: u64, query_id: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in query_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

struct PairUpdate {
    hi: (f64, Vec<u8>),
    lo: (f64, Vec<u8>),
}

fn pair_update(
    group: &QueryGroup,
    logits: &[f64],
    hi: usize,
    lo: usize,
    lambda: f64,
) -> Result<PairUpdate> {
    let f_hi = &group.docs[hi].teacher_logits;
    let f_lo = &group.docs[lo].teacher_logits;
    let (w_hi, w_lo) = reassign_weights(f_hi, f_lo, logits[hi], logits[lo]);
    Ok(PairUpdate {
        hi: (blend_update(logits[hi], &w_hi, f_hi, lambda)?, w_hi),
        lo: (blend_update(logits[lo], &w_lo, f_lo, lambda)?, w_lo),
    })
}

/// Runs the iterative ensemble on one query group.
///
/// One iteration samples one label-distinct pair. Under
/// [`StopPolicy::OrderConsistent`] only reversed pairs are updated and the
/// loop ends once no pair is reversed. Under [`StopPolicy::FixedPoint`] every
/// sampled pair is refined and the loop ends once no pair is reversed and no
/// pair update would move a logit by more than `epsilon`. Either way the loop
/// ends after [`PileConfig::max_iters`] iterations.
pub fn pile_ensemble(group: &QueryGroup, config: &PileConfig) -> Result<EnsembleOutput> {
    config.validate()?;
    let k = group.num_teachers();
    if k == 0 {
        return Err(Error::InvalidInput(format!(
            "group '{}' has no teacher logits",
            group.query_id
        )));
    }
    let labels = group.labels();
    let mut state = EnsembleState {
        iteration: 0,
        logits: average_ensemble(group)?,
        weights: vec![vec![1; k]; group.len()],
    };
    let mut trace = config.trace.then(|| vec![state.clone()]);
    let mut sampler = PairSampler::new(group, config.pair_policy, config.seed);
    let cap = config.max_iters(group.len());
    let refine_consistent = matches!(config.stop_policy, StopPolicy::FixedPoint { .. });

    let mut converged = false;
    loop {
        if is_settled(group, &labels, &state.logits, sampler.pairs(), config)? {
            converged = true;
            break;
        }
        if state.iteration >= cap {
            break;
        }
        let Some((hi, lo)) = sampler.sample() else {
            converged = true;
            break;
        };
        state.iteration += 1;
        if refine_consistent || state.logits[hi] < state.logits[lo] {
            let update = pair_update(group, &state.logits, hi, lo, config.lambda)?;
            (state.logits[hi], state.weights[hi]) = update.hi;
            (state.logits[lo], state.weights[lo]) = update.lo;
        }
        if let Some(trace) = trace.as_mut() {
            trace.push(state.clone());
        }
    }

    Ok(EnsembleOutput {
        logits: state.logits,
        final_weights: state.weights,
        iterations_used: state.iteration,
        converged,
        trace,
    })
}

fn is_settled(
    group: &QueryGroup,
    labels: &[RelevanceLabel],
    logits: &[f64],
    pairs: &[(usize, usize)],
    config: &PileConfig,
) -> Result<bool> {
    if count_reversed_pairs(logits, labels) > 0 {
        return Ok(false);
    }
    let StopPolicy::FixedPoint { epsilon } = config.stop_policy else {
        return Ok(true);
    };
    for &(hi, lo) in pairs {
        let update = pair_update(group, logits, hi, lo, config.lambda)?;
        if (update.hi.0 - logits[hi]).abs() > epsilon || (update.lo.0 - logits[lo]).abs() > epsilon
        {
            return Ok(false);
        }
    }
    Ok(true)
}
