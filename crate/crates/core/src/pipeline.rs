//! End-to-end stages shared by the command-line tool and the benchmark:
//! ensemble a dataset, turn an ensemble into distillation targets, train a
//! student, score it on held-out queries, and sweep one parameter.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{EnsembleDoc, EnsembleRecord};
use crate::metrics::{self, GainMode, MetricReport, ScoredQuery};
use crate::pile::{average_ensemble, pile_ensemble};
use crate::student::{self, Architecture, StudentParams, TrainConfig, TrainingLog};
use crate::synth::{self, SynthConfig, SynthOutput};
use crate::types::{Dataset, PileConfig, QueryGroup, StopPolicy};

#[derive(Clone, Debug, PartialEq)]
pub enum EnsembleMethod {
    Average,
    Pile(PileConfig),
    /// Logits of a single teacher, unchanged.
    Single(usize),
}

impl EnsembleMethod {
    pub fn name(&self) -> &'static str {
        match self {
            EnsembleMethod::Average => "ae",
            EnsembleMethod::Pile(_) => "pile",
            EnsembleMethod::Single(_) => "single",
        }
    }
}

fn ensemble_group(group: &QueryGroup, method: &EnsembleMethod) -> Result<EnsembleRecord> {
    let k = group.num_teachers();
    let (logits, weights, iterations_used, converged, trace) = match method {
        EnsembleMethod::Average => (
            average_ensemble(group)?,
            vec![vec![1; k]; group.len()],
            0,
            true,
            None,
        ),
        EnsembleMethod::Pile(cfg) => {
            let out = pile_ensemble(group, cfg)?;
            (
                out.logits,
                out.final_weights,
                out.iterations_used,
                out.converged,
                out.trace,
            )
        }
        EnsembleMethod::Single(t) => {
            if *t >= k {
                return Err(Error::InvalidInput(format!(
                    "teacher {t} requested but group '{}' has {k} teachers",
                    group.query_id
                )));
            }
            let mut onehot = vec![0; k];
            onehot[*t] = 1;
            (
                group.teacher_column(*t),
                vec![onehot; group.len()],
                0,
                true,
                None,
            )
        }
    };
    Ok(EnsembleRecord {
        query_id: group.query_id.clone(),
        method: method.name().to_string(),
        iterations_used,
        converged,
        docs: group
            .docs
            .iter()
            .zip(logits)
            .zip(weights)
            .map(|((doc, logit), weights)| EnsembleDoc {
                doc_id: doc.doc_id.clone(),
                logit,
                weights,
            })
            .collect(),
        trace,
    })
}

/// Ensembles every group in parallel; output keeps dataset order.
pub fn ensemble_dataset(dataset: &Dataset, method: &EnsembleMethod) -> Result<Vec<EnsembleRecord>> {
    if let EnsembleMethod::Pile(cfg) = method {
        cfg.validate()?;
    }
    dataset
        .groups
        .par_iter()
        .map(|g| ensemble_group(g, method))
        .collect()
}

/// Per-group distillation targets, checking that the ensemble lines up with
/// the dataset group by group and document by document.
pub fn targets_from_records(
    dataset: &Dataset,
    records: &[EnsembleRecord],
) -> Result<Vec<Vec<f64>>> {
    let misaligned = |query_id: &str, message: String| Error::Alignment {
        query_id: query_id.to_string(),
        message,
    };
    if records.len() != dataset.groups.len() {
        let at = dataset
            .groups
            .get(records.len())
            .map(|g| g.query_id.as_str())
            .or_else(|| {
                records
                    .get(dataset.groups.len())
                    .map(|r| r.query_id.as_str())
            })
            .unwrap_or("");
        return Err(misaligned(
            at,
            format!(
                "{} ensemble groups for {} dataset groups",
                records.len(),
                dataset.groups.len()
            ),
        ));
    }
    dataset
        .groups
        .iter()
        .zip(records)
        .map(|(group, record)| {
            if group.query_id != record.query_id {
                return Err(misaligned(
                    &group.query_id,
                    format!("ensemble has query '{}' at this position", record.query_id),
                ));
            }
            if group.len() != record.docs.len() {
                return Err(misaligned(
                    &group.query_id,
                    format!(
                        "{} targets for {} documents",
                        record.docs.len(),
                        group.len()
                    ),
                ));
            }
            if let Some((d, r)) = group
                .docs
                .iter()
                .zip(&record.docs)
                .find(|(d, r)| d.doc_id != r.doc_id)
            {
                return Err(misaligned(
                    &group.query_id,
                    format!(
                        "document '{}' paired with target for '{}'",
                        d.doc_id, r.doc_id
                    ),
                ));
            }
            Ok(record.logits())
        })
        .collect()
}

/// Mean PNR of the given per-group scores against the dataset's labels.
pub fn score_report(dataset: &Dataset, scores: &[Vec<f64>]) -> Result<MetricReport> {
    let labels: Vec<_> = dataset.groups.iter().map(QueryGroup::labels).collect();
    metrics::pnr_summary(
        dataset
            .groups
            .iter()
            .zip(scores)
            .zip(&labels)
            .map(|((g, s), l)| ScoredQuery {
                query_id: &g.query_id,
                scores: s,
                labels: l,
            }),
    )
}

/// Scores every held-out query with the model and summarizes PNR, plus mean
/// DCG@k of the model's ranking when `dcg_k` is given.
pub fn evaluate(
    params: &StudentParams,
    test: &Dataset,
    dcg_k: Option<usize>,
    gain: GainMode,
) -> Result<MetricReport> {
    let scores: Vec<Vec<f64>> = test
        .groups
        .par_iter()
        .map(|g| student::score_group(params, g))
        .collect::<Result<_>>()?;
    let mut report = score_report(test, &scores)?;
    report.parameters.dcg_k = dcg_k;
    report.parameters.gain = gain;
    if let Some(k) = dcg_k {
        if !test.groups.is_empty() {
            let total: f64 = test
                .groups
                .iter()
                .zip(&scores)
                .map(|(g, s)| metrics::dcg(&metrics::ranked_gains(s, &g.labels(), gain), Some(k)))
                .sum();
            report.dcg_at_k = Some(total / test.groups.len() as f64);
        }
    }
    Ok(report)
}

/// Mean PNR of each teacher's logits on the dataset (`None` when undefined).
pub fn teacher_pnrs(dataset: &Dataset) -> Result<Vec<Option<f64>>> {
    (0..dataset.num_teachers)
        .map(|t| {
            let scores: Vec<Vec<f64>> =
                dataset.groups.iter().map(|g| g.teacher_column(t)).collect();
            Ok(score_report(dataset, &scores)?.mean_pnr)
        })
        .collect()
}

/// Index of the teacher with the highest PNR on the dataset's labels.
pub fn best_teacher(dataset: &Dataset) -> Result<usize> {
    let pnrs = teacher_pnrs(dataset)?;
    pnrs.iter()
        .enumerate()
        .max_by(|a, b| {
            let (a, b) = (
                a.1.unwrap_or(f64::NEG_INFINITY),
                b.1.unwrap_or(f64::NEG_INFINITY),
            );
            a.total_cmp(&b)
        })
        .map(|(i, _)| i)
        .ok_or_else(|| Error::InvalidInput("dataset has no teachers".into()))
}

/// Keeps the first `k` teachers of every document.
pub fn restrict_teachers(dataset: &Dataset, k: usize) -> Result<Dataset> {
    if k == 0 || k > dataset.num_teachers {
        return Err(Error::InvalidInput(format!(
            "cannot keep {k} of {} teachers",
            dataset.num_teachers
        )));
    }
    let mut out = dataset.clone();
    for doc in out.groups.iter_mut().flat_map(|g| g.docs.iter_mut()) {
        doc.teacher_logits.truncate(k);
    }
    out.num_teachers = k;
    Ok(out)
}

/// Everything one benchmark run needs besides the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    pub pile: PileConfig,
    pub student: TrainConfig,
}

impl Default for PipelineConfig {
    /// The benchmark: 200 training and 50 held-out queries of 20 documents,
    /// a sharpened hidden scorer with 10% label noise, three trained
    /// MLP(16, 16) teachers (two on 80% subsets), order-consistent PILE and
    /// an MLP(8) student with KD weight 2.
    fn default() -> Self {
        let mut student = TrainConfig::for_architecture(Architecture::Mlp {
            hidden_sizes: vec![8],
        });
        student.epochs = 10;
        student.alpha = 2.0;
        Self {
            synth: SynthConfig {
                label_noise: 0.1,
                oracle_sharpness: 2.0,
                ..SynthConfig::default()
            },
            pile: PileConfig {
                stop_policy: StopPolicy::OrderConsistent,
                ..PileConfig::default()
            },
            student,
        }
    }
}

impl PipelineConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.synth.seed = seed;
        cfg.pile.seed = seed;
        cfg.student.seed = seed;
        cfg
    }
}

/// Trains a student with targets from `method` (or none) and returns its
/// held-out report.
pub fn distill_and_evaluate(
    data: &SynthOutput,
    method: Option<&EnsembleMethod>,
    config: &TrainConfig,
) -> Result<(MetricReport, TrainingLog)> {
    let targets = match method {
        Some(m) => Some(targets_from_records(
            &data.train,
            &ensemble_dataset(&data.train, m)?,
        )?),
        None => None,
    };
    let (params, log) = student::train(&data.train, targets.as_deref(), config)?;
    Ok((evaluate(&params, &data.test, None, GainMode::Linear)?, log))
}

fn require_mean(report: &MetricReport, what: &str) -> Result<f64> {
    report
        .mean_pnr
        .ok_or_else(|| Error::EmptyReport(format!("{what}: every query was skipped")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub seed: u64,
    pub best_teacher: usize,
    /// Held-out PNR of each teacher.
    pub teacher_pnr: Vec<Option<f64>>,
    /// Held-out PNR of the hidden scorer, the ceiling for every student.
    pub oracle: f64,
    /// Held-out PNR of the students.
    pub base: f64,
    pub single_kd: f64,
    pub ae_kd: f64,
    pub pile_kd: f64,
    /// Training-set PNR of the ensemble logits themselves.
    pub ae_logits: f64,
    pub pile_logits: f64,
}

/// Base, single-teacher, averaged and iterative distillation on one seed.
pub fn run_benchmark(config: &PipelineConfig, seed: u64) -> Result<BenchmarkResult> {
    let cfg = config.with_seed(seed);
    let data = synth::generate(&cfg.synth)?;
    benchmark_on(&data, &cfg, seed)
}

pub fn benchmark_on(
    data: &SynthOutput,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<BenchmarkResult> {
    let best = best_teacher(&data.train)?;
    let methods = [
        None,
        Some(EnsembleMethod::Single(best)),
        Some(EnsembleMethod::Average),
        Some(EnsembleMethod::Pile(cfg.pile.clone())),
    ];
    let pnrs: Vec<f64> = methods
        .par_iter()
        .map(|m| {
            let (report, _) = distill_and_evaluate(data, m.as_ref(), &cfg.student)?;
            require_mean(&report, m.as_ref().map_or("base", EnsembleMethod::name))
        })
        .collect::<Result<_>>()?;

    let logits_pnr = |m: &EnsembleMethod| -> Result<f64> {
        let records = ensemble_dataset(&data.train, m)?;
        let scores: Vec<Vec<f64>> = records.iter().map(EnsembleRecord::logits).collect();
        require_mean(&score_report(&data.train, &scores)?, m.name())
    };
    Ok(BenchmarkResult {
        seed,
        best_teacher: best,
        teacher_pnr: teacher_pnrs(&data.test)?,
        oracle: require_mean(
            &evaluate(&data.oracle, &data.test, None, GainMode::Linear)?,
            "oracle",
        )?,
        base: pnrs[0],
        single_kd: pnrs[1],
        ae_kd: pnrs[2],
        pile_kd: pnrs[3],
        ae_logits: logits_pnr(&EnsembleMethod::Average)?,
        pile_logits: logits_pnr(&EnsembleMethod::Pile(cfg.pile.clone()))?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Lambda,
    Teachers,
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Teachers => "teachers",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub replicate: usize,
    pub seed: u64,
    /// Held-out PNR of the distilled student; `None` when the run failed.
    pub mean_pnr: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    pub const TSV_HEADER: &'static str = "param\tvalue\treplicate\tseed\tmean_pnr\tstatus";

    pub fn to_tsv(&self) -> String {
        let pnr = self
            .mean_pnr
            .map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        let status = self.error.as_deref().unwrap_or("ok");
        format!(
            "{}\t{}\t{}\t{}\t{pnr}\t{status}",
            self.param, self.value, self.replicate, self.seed
        )
    }
}

/// Runs the distillation pipeline for every value of one parameter.
///
/// Replicate `r` uses seed `base_seed + r` for data, teachers, sampling and
/// training, shared by every value, so values are compared on identical data.
/// The teacher sweep trains the largest panel once per replicate and keeps
/// its first `k` teachers. A failed run becomes a row carrying the error.
pub fn sweep(
    config: &PipelineConfig,
    param: SweepParam,
    values: &[f64],
    replicates: usize,
    base_seed: u64,
) -> Result<Vec<SweepRow>> {
    let teacher_counts: Vec<usize> = match param {
        SweepParam::Lambda => Vec::new(),
        SweepParam::Teachers => values
            .iter()
            .map(|&v| {
                if v >= 1.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::InvalidInput(format!(
                        "teacher count {v} is not a positive integer"
                    )))
                }
            })
            .collect::<Result<_>>()?,
    };
    if param == SweepParam::Lambda {
        for &v in values {
            PileConfig {
                lambda: v,
                ..config.pile.clone()
            }
            .validate()?;
        }
    }

    let mut rows = Vec::with_capacity(values.len() * replicates);
    for replicate in 0..replicates {
        let seed = base_seed.wrapping_add(replicate as u64);
        let mut cfg = config.with_seed(seed);
        if let Some(&max_k) = teacher_counts.iter().max() {
            cfg.synth.num_teachers = max_k;
        }
        let data = synth::generate(&cfg.synth);
        let results: Vec<Result<f64>> = values
            .par_iter()
            .enumerate()
            .map(|(i, &value)| {
                let data = data
                    .as_ref()
                    .map_err(|e| Error::InvalidState(e.to_string()))?;
                let (train, pile) = match param {
                    SweepParam::Lambda => (
                        None,
                        PileConfig {
                            lambda: value,
                            ..cfg.pile.clone()
                        },
                    ),
                    SweepParam::Teachers => (
                        Some(restrict_teachers(&data.train, teacher_counts[i])?),
                        cfg.pile.clone(),
                    ),
                };
                let view;
                let data = match train {
                    Some(train) => {
                        view = SynthOutput {
                            train,
                            test: data.test.clone(),
                            oracle: data.oracle.clone(),
                            teachers: None,
                        };
                        &view
                    }
                    None => data,
                };
                let (report, _) =
                    distill_and_evaluate(data, Some(&EnsembleMethod::Pile(pile)), &cfg.student)?;
                require_mean(&report, "sweep")
            })
            .collect();
        for (&value, result) in values.iter().zip(results) {
            let (mean_pnr, error) = match result {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(format!("error:{}", e.category()))),
            };
            rows.push(SweepRow {
                param,
                value,
                replicate,
                seed,
                mean_pnr,
                error,
            });
        }
    }
    Ok(rows)
}
