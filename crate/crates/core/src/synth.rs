//! Synthetic ranking data with a hidden scorer and a panel of teachers.
//!
//! Features are standard normal. True relevance comes from a frozen random
//! MLP. Inside each query, documents are bucketed into grades 0-4 by the rank
//! of their true relevance (10/20/40/20/10%), so every query of 20 documents
//! holds 2/4/8/4/2 documents per grade. Grades may then move to an adjacent
//! grade with probability `label_noise`.
//!
//! Teachers are either trained scorers or noisy copies of the hidden scorer.
//! Trained teacher 0 sees every query; every other teacher sees an
//! independent `subset_fraction` sample. Teacher `k` draws from its own seed,
//! so the first `k` teachers never depend on how many teachers follow.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pile::splitmix64;
use crate::student::{self, Architecture, StudentParams, TrainConfig};
use crate::types::{Dataset, DocEntry, QueryGroup, RelevanceLabel};

/// Cumulative share of each grade within a query, grades 0..=3 (grade 4 takes
/// the rest).
const GRADE_CUTOFFS: [f64; 4] = [0.1, 0.3, 0.7, 0.9];
const ORACLE_HIDDEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocsPerQuery {
    pub min: usize,
    pub max: usize,
}

impl DocsPerQuery {
    pub fn fixed(n: usize) -> Self {
        Self { min: n, max: n }
    }
}

impl std::str::FromStr for DocsPerQuery {
    type Err = Error;

    /// `20` or an inclusive range `10-30`.
    fn from_str(s: &str) -> Result<Self> {
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidInput(format!("bad document count '{s}'")))
        };
        match s.split_once('-') {
            Some((lo, hi)) => Ok(Self {
                min: parse(lo)?,
                max: parse(hi)?,
            }),
            None => Ok(Self::fixed(parse(s)?)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeacherMode {
    Trained {
        subset_fraction: f64,
        training: TrainConfig,
    },
    Perturbed {
        noise_sigma: f64,
        bias_magnitude: f64,
        biased_query_fraction: f64,
    },
}

impl TeacherMode {
    /// MLP(16, 16) teachers trained on 80% query subsets.
    pub fn trained_default() -> Self {
        let mut training = TrainConfig::for_architecture(Architecture::Mlp {
            hidden_sizes: vec![16, 16],
        });
        training.epochs = 15;
        TeacherMode::Trained {
            subset_fraction: 0.8,
            training,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_queries: usize,
    /// Held-out queries drawn from the same hidden scorer.
    pub test_queries: usize,
    pub docs_per_query: DocsPerQuery,
    pub feature_dim: usize,
    pub num_teachers: usize,
    pub teacher_mode: TeacherMode,
    pub label_noise: f64,
    /// Scale on the hidden scorer's input weights; larger values make true
    /// relevance more nonlinear in the features.
    #[serde(default = "default_sharpness")]
    pub oracle_sharpness: f64,
    pub seed: u64,
}

fn default_sharpness() -> f64 {
    1.0
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_queries: 200,
            test_queries: 50,
            docs_per_query: DocsPerQuery::fixed(20),
            feature_dim: 8,
            num_teachers: 3,
            teacher_mode: TeacherMode::trained_default(),
            label_noise: 0.2,
            oracle_sharpness: default_sharpness(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_queries == 0 {
            return fail("need at least one query".into());
        }
        if self.docs_per_query.min == 0 || self.docs_per_query.min > self.docs_per_query.max {
            return fail(format!(
                "bad documents-per-query range {}..={}",
                self.docs_per_query.min, self.docs_per_query.max
            ));
        }
        if self.feature_dim == 0 {
            return fail("feature dimension must be positive".into());
        }
        if self.num_teachers == 0 {
            return fail("need at least one teacher".into());
        }
        if !(self.oracle_sharpness > 0.0 && self.oracle_sharpness.is_finite()) {
            return fail(format!(
                "oracle sharpness {} must be positive",
                self.oracle_sharpness
            ));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return fail(format!("label noise {} outside [0, 1)", self.label_noise));
        }
        match &self.teacher_mode {
            TeacherMode::Trained {
                subset_fraction,
                training,
            } => {
                if !(*subset_fraction > 0.0 && *subset_fraction <= 1.0) {
                    return fail(format!("subset fraction {subset_fraction} outside (0, 1]"));
                }
                training.validate()?;
            }
            TeacherMode::Perturbed {
                noise_sigma,
                bias_magnitude,
                biased_query_fraction,
            } => {
                if !noise_sigma.is_finite() || *noise_sigma < 0.0 || !bias_magnitude.is_finite() {
                    return fail("perturbation sizes must be finite and non-negative".into());
                }
                if !(0.0..=1.0).contains(biased_query_fraction) {
                    return fail(format!(
                        "biased query fraction {biased_query_fraction} outside [0, 1]"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Independent stream for one named purpose of one seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

mod stream {
    pub const ORACLE: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const TEST: u64 = 3;
    pub const PERTURB_TRAIN: u64 = 4;
    pub const PERTURB_TEST: u64 = 5;
    pub const TEACHER: u64 = 1000;
}

/// Grade of the document at ascending rank `rank` among `n`.
fn quantile_grade(rank: usize, n: usize) -> u8 {
    let position = (rank as f64 + 0.5) / n as f64;
    GRADE_CUTOFFS.iter().filter(|&&c| position > c).count() as u8
}

fn sample_groups(
    oracle: &StudentParams,
    config: &SynthConfig,
    count: usize,
    prefix: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<QueryGroup>> {
    let d = config.feature_dim;
    let range = config.docs_per_query;
    (0..count)
        .map(|q| {
            let n = rng.gen_range(range.min as u64..=range.max as u64) as usize;
            let features: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
                .collect();
            let truth = features
                .iter()
                .map(|x| student::score(oracle, x))
                .collect::<Result<Vec<_>>>()?;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| truth[a].total_cmp(&truth[b]));
            let mut grades = vec![0u8; n];
            for (rank, &doc) in order.iter().enumerate() {
                grades[doc] = quantile_grade(rank, n);
            }
            for g in &mut grades {
                if rng.gen::<f64>() < config.label_noise {
                    *g = match *g {
                        0 => 1,
                        RelevanceLabel::MAX => RelevanceLabel::MAX - 1,
                        v if rng.gen::<bool>() => v + 1,
                        v => v - 1,
                    };
                }
            }
            let query_id = format!("{prefix}{q}");
            let docs = features
                .into_iter()
                .zip(grades)
                .enumerate()
                .map(|(i, (features, g))| {
                    Ok(DocEntry {
                        doc_id: format!("{query_id}-d{i}"),
                        features,
                        label: RelevanceLabel::new(g)?,
                        teacher_logits: Vec::new(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(QueryGroup { query_id, docs })
        })
        .collect()
}

fn dataset(groups: Vec<QueryGroup>, feature_dim: usize) -> Dataset {
    Dataset {
        groups,
        feature_dim,
        num_teachers: 0,
    }
}

/// Draws the hidden scorer and the training queries (no teacher logits yet).
pub fn gen_ground_truth(config: &SynthConfig) -> Result<(Dataset, StudentParams)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream::ORACLE));
    let mut oracle = StudentParams::random(
        Architecture::Mlp {
            hidden_sizes: vec![ORACLE_HIDDEN],
        },
        config.feature_dim,
        &mut rng,
    );
    for w in &mut oracle.weights[..ORACLE_HIDDEN * config.feature_dim] {
        *w *= config.oracle_sharpness;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream::TRAIN));
    let groups = sample_groups(&oracle, config, config.num_queries, "q", &mut rng)?;
    Ok((dataset(groups, config.feature_dim), oracle))
}

/// Held-out queries from the same hidden scorer.
pub fn gen_test_queries(config: &SynthConfig, oracle: &StudentParams) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream::TEST));
    let groups = sample_groups(oracle, config, config.test_queries, "t", &mut rng)?;
    Ok(dataset(groups, config.feature_dim))
}

/// The query subset teacher `k` trains on: all queries for teacher 0,
/// otherwise `round(fraction * n)` queries (at least one) drawn without
/// replacement, kept in dataset order.
pub fn teacher_subset(
    num_queries: usize,
    fraction: f64,
    teacher: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut all: Vec<usize> = (0..num_queries).collect();
    if teacher == 0 {
        return all;
    }
    let take = ((fraction * num_queries as f64).round() as usize).clamp(1, num_queries);
    student::shuffle(&mut all, rng);
    all.truncate(take);
    all.sort_unstable();
    all
}

/// Trains `config.num_teachers` scorers on the training queries. Teachers are
/// trained in parallel; the result is in teacher order.
pub fn train_teachers(train: &Dataset, config: &SynthConfig) -> Result<Vec<StudentParams>> {
    let TeacherMode::Trained {
        subset_fraction,
        training,
    } = &config.teacher_mode
    else {
        return Err(Error::Config(
            "teachers are not trained in perturbed mode".into(),
        ));
    };
    (0..config.num_teachers)
        .into_par_iter()
        .map(|k| {
            let seed = derive_seed(config.seed, stream::TEACHER + k as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let subset = teacher_subset(train.groups.len(), *subset_fraction, k, &mut rng);
            let view = Dataset {
                groups: subset.iter().map(|&q| train.groups[q].clone()).collect(),
                feature_dim: train.feature_dim,
                num_teachers: train.num_teachers,
            };
            let cfg = TrainConfig {
                seed: rng.gen(),
                ..training.clone()
            };
            student::train(&view, None, &cfg).map(|(params, _)| params)
        })
        .collect()
}

/// Fills every document's teacher logits with the given scorers' outputs.
pub fn apply_teachers(dataset: &mut Dataset, teachers: &[StudentParams]) -> Result<()> {
    for group in &mut dataset.groups {
        for doc in &mut group.docs {
            doc.teacher_logits = teachers
                .iter()
                .map(|t| student::score(t, &doc.features))
                .collect::<Result<_>>()?;
        }
    }
    dataset.num_teachers = teachers.len();
    Ok(())
}

/// Noisy copies of the hidden scorer. Teacher `k` adds Gaussian noise to every
/// logit; on its own random slice of queries it also adds `bias_magnitude` to
/// a random half of the documents, so the bias changes the within-query order.
pub fn apply_perturbed_teachers(
    dataset: &mut Dataset,
    oracle: &StudentParams,
    config: &SynthConfig,
    salt: u64,
) -> Result<()> {
    let TeacherMode::Perturbed {
        noise_sigma,
        bias_magnitude,
        biased_query_fraction,
    } = config.teacher_mode
    else {
        return Err(Error::Config(
            "teachers are not perturbed in trained mode".into(),
        ));
    };
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rngs: Vec<ChaCha8Rng> = (0..config.num_teachers)
        .map(|k| ChaCha8Rng::seed_from_u64(derive_seed(config.seed, salt ^ ((k as u64 + 1) << 32))))
        .collect();
    for group in &mut dataset.groups {
        let biased: Vec<bool> = rngs
            .iter_mut()
            .map(|r| r.gen::<f64>() < biased_query_fraction)
            .collect();
        for doc in &mut group.docs {
            let truth = student::score(oracle, &doc.features)?;
            doc.teacher_logits = rngs
                .iter_mut()
                .zip(&biased)
                .map(|(rng, &is_biased)| {
                    let mut logit = truth + noise.sample(rng);
                    if rng.gen::<bool>() && is_biased {
                        logit += bias_magnitude;
                    }
                    logit
                })
                .collect();
        }
    }
    dataset.num_teachers = config.num_teachers;
    Ok(())
}

pub struct SynthOutput {
    pub train: Dataset,
    pub test: Dataset,
    pub oracle: StudentParams,
    /// Present in trained mode.
    pub teachers: Option<Vec<StudentParams>>,
}

/// Generates the training and held-out datasets with teacher logits filled.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    let (mut train, oracle) = gen_ground_truth(config)?;
    let mut test = gen_test_queries(config, &oracle)?;
    let teachers = match config.teacher_mode {
        TeacherMode::Trained { .. } => {
            let teachers = train_teachers(&train, config)?;
            apply_teachers(&mut train, &teachers)?;
            apply_teachers(&mut test, &teachers)?;
            Some(teachers)
        }
        TeacherMode::Perturbed { .. } => {
            apply_perturbed_teachers(&mut train, &oracle, config, stream::PERTURB_TRAIN)?;
            apply_perturbed_teachers(&mut test, &oracle, config, stream::PERTURB_TEST)?;
            None
        }
    };
    Ok(SynthOutput {
        train,
        test,
        oracle,
        teachers,
    })
}

/// Count of documents per grade.
pub fn grade_histogram(dataset: &Dataset) -> [usize; 5] {
    let mut h = [0; 5];
    for doc in dataset.groups.iter().flat_map(|g| &g.docs) {
        h[doc.label.value() as usize] += 1;
    }
    h
}
