// Shared fixtures and oracles for the integration tests. Not every test
// binary uses every helper.
#![allow(dead_code)]

use pile_kd::pile::{average_ensemble, pile_ensemble, PairSampler};
use pile_kd::{DocEntry, PairPolicy, PileConfig, QueryGroup, RelevanceLabel, StopPolicy};
use proptest::prelude::*;

pub fn label(v: u8) -> RelevanceLabel {
    RelevanceLabel::new(v).unwrap()
}

pub fn labels(vs: &[u8]) -> Vec<RelevanceLabel> {
    vs.iter().map(|&v| label(v)).collect()
}

/// Group with empty features; `logits[i]` holds doc `i`'s teacher logits.
pub fn group(ys: &[u8], logits: &[Vec<f64>]) -> QueryGroup {
    QueryGroup {
        query_id: "q".into(),
        docs: ys
            .iter()
            .zip(logits)
            .enumerate()
            .map(|(i, (&y, f))| DocEntry {
                doc_id: format!("d{i}"),
                features: vec![],
                label: label(y),
                teacher_logits: f.clone(),
            })
            .collect(),
    }
}

pub const CASE_LOW: [f64; 3] = [0.0589, 0.1923, 0.1057];
pub const CASE_HIGH: [f64; 3] = [0.0271, 0.0331, 0.0983];

/// Two documents labelled 0 and 3 whose averaged logits are inverted.
pub fn case_study() -> QueryGroup {
    group(&[0, 3], &[CASE_LOW.to_vec(), CASE_HIGH.to_vec()])
}

/// O(N^2) count of (concordant, discordant) pairs with strict comparisons.
pub fn brute_force_pairs(scores: &[f64], ys: &[RelevanceLabel]) -> (u64, u64) {
    let (mut c, mut d) = (0, 0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if ys[i] > ys[j] {
                if scores[i] > scores[j] {
                    c += 1;
                } else if scores[i] < scores[j] {
                    d += 1;
                }
            }
        }
    }
    (c, d)
}

#[derive(Clone, Debug)]
pub struct PileCase {
    pub labels: Vec<u8>,
    pub logits: Vec<Vec<f64>>,
    pub config: PileConfig,
}

impl PileCase {
    pub fn group(&self) -> QueryGroup {
        group(&self.labels, &self.logits)
    }
}

/// Logits are either continuous or on a coarse grid, so ties between teachers
/// and between documents show up regularly.
fn logit() -> impl Strategy<Value = f64> {
    prop_oneof![-2.0..2.0f64, (-4i32..=4).prop_map(|v| f64::from(v) * 0.25)]
}

/// Random groups with up to `max_n` documents and `max_k` teachers under a
/// random configuration.
pub fn pile_case(max_n: usize, max_k: usize) -> impl Strategy<Value = PileCase> {
    (1..=max_n, 1..=max_k)
        .prop_flat_map(|(n, k)| {
            (
                prop::collection::vec(0u8..=4, n),
                prop::collection::vec(prop::collection::vec(logit(), k), n),
                prop_oneof![Just(1.0), 0.05..1.0f64],
                prop_oneof![
                    Just(StopPolicy::OrderConsistent),
                    (1e-6..1e-2f64).prop_map(|epsilon| StopPolicy::FixedPoint { epsilon }),
                ],
                prop_oneof![Just(PairPolicy::UniformRandom), Just(PairPolicy::Sweep)],
                any::<u64>(),
            )
        })
        .prop_map(
            |(labels, logits, lambda, stop_policy, pair_policy, seed)| PileCase {
                labels,
                logits,
                config: PileConfig {
                    lambda,
                    stop_policy,
                    pair_policy,
                    seed,
                    trace: true,
                    ..PileConfig::default()
                },
            },
        )
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Checks every invariant of the iterative ensemble on one case and returns
/// the first violation.
pub fn check_pile_invariants(case: &PileCase) -> Result<(), String> {
    let g = case.group();
    let out = pile_ensemble(&g, &case.config).map_err(|e| format!("pile failed: {e}"))?;
    let trace = out.trace.as_ref().ok_or("trace missing")?;

    // Determinism under a fixed seed.
    let again = pile_ensemble(&g, &case.config).map_err(|e| e.to_string())?;
    if again != out || bits(&again.logits) != bits(&out.logits) {
        return Err("second run differs".into());
    }

    // Weight sums and hull confinement at every step.
    for state in trace {
        for (i, doc) in g.docs.iter().enumerate() {
            let kept: u32 = state.weights[i].iter().map(|&w| u32::from(w)).sum();
            if kept < 1 {
                return Err(format!(
                    "iteration {}: doc {i} lost every teacher",
                    state.iteration
                ));
            }
            let lo = doc
                .teacher_logits
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            let hi = doc
                .teacher_logits
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            let e = state.logits[i];
            if !(lo <= e && e <= hi) {
                return Err(format!(
                    "iteration {}: doc {i} logit {e} outside [{lo}, {hi}]",
                    state.iteration
                ));
            }
        }
    }

    // Replay the pair sequence: a reversed pair's update never moves either
    // logit the wrong way, and order-consistent mode leaves other pairs alone.
    let mut sampler = PairSampler::new(&g, case.config.pair_policy, case.config.seed);
    for step in trace.windows(2) {
        let (before, after) = (&step[0], &step[1]);
        let (hi, lo) = sampler.sample().ok_or("sampler ran dry")?;
        let reversed = before.logits[hi] < before.logits[lo];
        if reversed {
            if after.logits[hi] < before.logits[hi] || after.logits[lo] > before.logits[lo] {
                return Err(format!(
                    "iteration {}: pair ({hi}, {lo}) moved from ({}, {}) to ({}, {})",
                    after.iteration,
                    before.logits[hi],
                    before.logits[lo],
                    after.logits[hi],
                    after.logits[lo]
                ));
            }
        } else if matches!(case.config.stop_policy, StopPolicy::OrderConsistent)
            && after.logits != before.logits
        {
            return Err(format!(
                "iteration {}: consistent pair ({hi}, {lo}) was updated",
                after.iteration
            ));
        }
        for (i, (a, b)) in before.logits.iter().zip(&after.logits).enumerate() {
            if i != hi && i != lo && a.to_bits() != b.to_bits() {
                return Err(format!(
                    "iteration {}: untouched doc {i} changed",
                    after.iteration
                ));
            }
        }
    }

    // One teacher: identical to the plain average.
    let single = PileCase {
        logits: case.logits.iter().map(|f| vec![f[0]]).collect(),
        ..case.clone()
    };
    let sg = single.group();
    let sp = pile_ensemble(&sg, &single.config).map_err(|e| e.to_string())?;
    if bits(&sp.logits) != bits(&average_ensemble(&sg).map_err(|e| e.to_string())?) {
        return Err("single-teacher output differs from the average".into());
    }

    // Identical teachers: nothing moves.
    let k = case.logits[0].len();
    let cloned = PileCase {
        logits: case.logits.iter().map(|f| vec![f[0]; k]).collect(),
        ..case.clone()
    };
    let cp = pile_ensemble(&cloned.group(), &cloned.config).map_err(|e| e.to_string())?;
    let firsts: Vec<f64> = case.logits.iter().map(|f| f[0]).collect();
    if bits(&cp.logits) != bits(&firsts) {
        return Err("identical teachers changed the logits".into());
    }

    // Teacher order does not matter: rotate the columns and reverse them.
    let shift = (case.config.seed % k as u64) as usize;
    let perm: Vec<usize> = (0..k).rev().map(|t| (t + shift) % k).collect();
    let permuted = PileCase {
        logits: case
            .logits
            .iter()
            .map(|f| perm.iter().map(|&t| f[t]).collect())
            .collect(),
        ..case.clone()
    };
    let pp = pile_ensemble(&permuted.group(), &permuted.config).map_err(|e| e.to_string())?;
    if bits(&pp.logits) != bits(&out.logits) || pp.iterations_used != out.iterations_used {
        return Err(format!("teacher permutation {perm:?} changed the result"));
    }
    for (w_perm, w) in pp.final_weights.iter().zip(&out.final_weights) {
        let expected: Vec<u8> = perm.iter().map(|&t| w[t]).collect();
        if *w_perm != expected {
            return Err(format!(
                "teacher permutation {perm:?} did not permute the weights"
            ));
        }
    }
    Ok(())
}

/// Compares `pnr_query` with the brute-force enumerator on `cases` random
/// queries of up to 50 documents. Scores come from a small grid half the
/// time so ties are common.
pub fn check_pnr_against_brute_force(cases: usize, seed: u64) -> Result<(), String> {
    use pile_kd::metrics::{pnr_query, PnrSkip};
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let n = rng.gen_range(1..=50);
        let coarse = rng.gen_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if coarse {
                    f64::from(rng.gen_range(-3i32..=3))
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect();
        let ys: Vec<RelevanceLabel> = (0..n).map(|_| label(rng.gen_range(0..=4))).collect();
        let (c, d) = brute_force_pairs(&scores, &ys);
        let distinct = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| ys[i] > ys[j])
            .count();
        let expected = if distinct == 0 {
            Err(PnrSkip::NoPairs)
        } else if d == 0 {
            Err(PnrSkip::NoDiscordant)
        } else {
            Ok(c as f64 / d as f64)
        };
        let got = pnr_query(&scores, &ys).map_err(|e| e.to_string())?;
        if got != expected {
            return Err(format!(
                "case {case}: got {got:?}, brute force {expected:?} for {scores:?} / {ys:?}"
            ));
        }
    }
    Ok(())
}

/// The hand-computed metric values, compared exactly.
pub fn check_metric_examples() -> Result<(), String> {
    use pile_kd::metrics::{dcg, delta_ab, delta_gsb, pnr_query, PnrSkip};

    let mut failures = Vec::new();
    let mut expect = |what: &str, ok: bool| {
        if !ok {
            failures.push(what.to_string());
        }
    };
    let pnr = |s: &[f64], y: &[u8]| pnr_query(s, &labels(y)).unwrap();
    expect(
        "pnr perfect",
        pnr(&[3.0, 2.0, 1.0], &[2, 1, 0]) == Err(PnrSkip::NoDiscordant),
    );
    expect(
        "pnr 5/1",
        pnr(&[1.0, 2.0, 3.0, 4.0], &[1, 0, 2, 3]) == Ok(5.0),
    );
    expect("pnr case study", pnr(&[0.0528, 0.1190], &[3, 0]) == Ok(0.0));
    expect("dcg single", dcg(&[3.0], None) == 3.0);
    expect(
        "dcg pair",
        dcg(&[3.0, 3.0], None) == 3.0 + 3.0 / 3f64.log2(),
    );
    expect(
        "dcg pair value",
        (dcg(&[3.0, 3.0], None) - 4.8928).abs() <= 1e-4,
    );
    expect(
        "dcg empty",
        dcg(&[], Some(3)) == 0.0 && dcg(&[], None) == 0.0,
    );
    expect("delta_ab symmetric", delta_ab(10, 10, 5).ok() == Some(0.0));
    expect("delta_ab 3/1", delta_ab(3, 1, 0).ok() == Some(0.25));
    expect("delta_ab max", delta_ab(1, 0, 0).ok() == Some(0.5));
    expect("delta_ab zero", delta_ab(0, 0, 0).is_err());
    expect("delta_gsb symmetric", delta_gsb(5, 0, 5).ok() == Some(0.0));
    expect("delta_gsb 2/4", delta_gsb(2, 2, 0).ok() == Some(0.5));
    expect("delta_gsb ties", delta_gsb(0, 3, 0).ok() == Some(0.0));
    expect("delta_gsb zero", delta_gsb(0, 0, 0).is_err());
    if failures.is_empty() {
        Ok(())
    } else {
        Err(failures.join(", "))
    }
}

/// Central-difference gradient check over `draws` random (params, group,
/// targets) draws for the given architecture. Returns the largest relative
/// error over components whose magnitude exceeds 1e-8.
pub fn gradient_check(
    architecture: &pile_kd::student::Architecture,
    draws: usize,
    seed: u64,
) -> Result<f64, String> {
    use pile_kd::student::{gradient, total_loss, StudentParams};
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    const H: f64 = 1e-5;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.7).unwrap();
    let mut worst: f64 = 0.0;
    for draw in 0..draws {
        let d = rng.gen_range(1..=6);
        let n = rng.gen_range(1..=8);
        let mut params = StudentParams::zeros(architecture.clone(), d);
        for w in &mut params.weights {
            *w = normal.sample(&mut rng);
        }
        let mut g = group(&vec![0; n], &vec![vec![]; n]);
        for doc in &mut g.docs {
            doc.features = (0..d).map(|_| normal.sample(&mut rng)).collect();
            doc.label = label(rng.gen_range(0..=4));
        }
        let targets: Option<Vec<f64>> = rng
            .gen_bool(0.7)
            .then(|| (0..n).map(|_| normal.sample(&mut rng)).collect());
        let alpha = rng.gen_range(0.0..2.0);
        let t = targets.as_deref();

        let analytic = gradient(&params, &g, t, alpha).map_err(|e| e.to_string())?;
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = params.clone();
            plus.weights[i] += H;
            let mut minus = params.clone();
            minus.weights[i] -= H;
            let numeric = (total_loss(&plus, &g, t, alpha).map_err(|e| e.to_string())?
                - total_loss(&minus, &g, t, alpha).map_err(|e| e.to_string())?)
                / (2.0 * H);
            let scale = a.abs().max(numeric.abs());
            if scale > 1e-8 {
                let rel = (a - numeric).abs() / scale;
                if rel >= 1e-4 {
                    return Err(format!(
                        "draw {draw}, weight {i}: analytic {a} vs numeric {numeric} (relative error {rel:.2e})"
                    ));
                }
                worst = worst.max(rel);
            }
        }
    }
    Ok(worst)
}
