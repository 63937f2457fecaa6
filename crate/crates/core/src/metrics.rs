//! Ranking evaluation: positive-negative ratio, DCG, and the two online
//! comparison gains (interleaving and good/same/bad).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::RelevanceLabel;

/// Concordant and discordant label-distinct pair counts for one query.
/// Pairs tied in score count toward neither.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairCounts {
    pub concordant: u64,
    pub discordant: u64,
    pub label_distinct: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnrSkip {
    /// Every label-distinct pair is concordant or tied; the ratio is undefined.
    NoDiscordant,
    /// All labels equal (or a single document); nothing to compare.
    NoPairs,
}

impl PairCounts {
    pub fn pnr(&self) -> std::result::Result<f64, PnrSkip> {
        if self.label_distinct == 0 {
            Err(PnrSkip::NoPairs)
        } else if self.discordant == 0 {
            Err(PnrSkip::NoDiscordant)
        } else {
            Ok(self.concordant as f64 / self.discordant as f64)
        }
    }
}

fn check_lengths(scores: &[f64], labels: &[RelevanceLabel]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::InvalidInput("empty query".into()));
    }
    Ok(())
}

/// Counts concordant/discordant pairs in `O(N log N)`.
///
/// Documents are visited in ascending score order, one tie block at a time,
/// while a per-grade histogram of strictly lower-scored documents is kept.
pub fn pair_counts(scores: &[f64], labels: &[RelevanceLabel]) -> Result<PairCounts> {
    check_lengths(scores, labels)?;
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidInput(format!(
            "score {bad} is not comparable"
        )));
    }
    const GRADES: usize = RelevanceLabel::MAX as usize + 1;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut below = [0u64; GRADES];
    let mut total_by_grade = [0u64; GRADES];
    for l in labels {
        total_by_grade[l.value() as usize] += 1;
    }
    let mut concordant = 0;
    let mut discordant = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        for &doc in &order[start..end] {
            let y = labels[doc].value() as usize;
            concordant += below[..y].iter().sum::<u64>();
            discordant += below[y + 1..].iter().sum::<u64>();
        }
        for &doc in &order[start..end] {
            below[labels[doc].value() as usize] += 1;
        }
        start = end;
    }

    let n = scores.len() as u64;
    let same_grade: u64 = total_by_grade
        .iter()
        .map(|&c| c * c.saturating_sub(1) / 2)
        .sum();
    Ok(PairCounts {
        concordant,
        discordant,
        label_distinct: n * (n - 1) / 2 - same_grade,
    })
}

/// Per-query positive-negative ratio. `Ok(Err(skip))` flags a query whose
/// ratio is undefined.
pub fn pnr_query(
    scores: &[f64],
    labels: &[RelevanceLabel],
) -> Result<std::result::Result<f64, PnrSkip>> {
    Ok(pair_counts(scores, labels)?.pnr())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    /// `G = y`
    #[default]
    Linear,
    /// `G = 2^y - 1`
    Exponential,
}

impl GainMode {
    pub fn gain(self, label: RelevanceLabel) -> f64 {
        let y = f64::from(label.value());
        match self {
            GainMode::Linear => y,
            GainMode::Exponential => y.exp2() - 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportParameters {
    pub dcg_k: Option<usize>,
    pub gain: GainMode,
    pub source: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryPnr {
    pub query_id: String,
    pub pnr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub num_queries: usize,
    /// `None` when every query was skipped.
    pub mean_pnr: Option<f64>,
    pub per_query_pnr: Vec<QueryPnr>,
    pub skipped_no_discordant: usize,
    pub skipped_no_pairs: usize,
    pub dcg_at_k: Option<f64>,
    pub parameters: ReportParameters,
}

/// One query's scores and labels.
pub struct ScoredQuery<'a> {
    pub query_id: &'a str,
    pub scores: &'a [f64],
    pub labels: &'a [RelevanceLabel],
}

/// Averages per-query PNR over the queries where it is defined, summing in
/// input order. Fails when no query has a defined PNR.
pub fn pnr_mean<'a>(queries: impl IntoIterator<Item = ScoredQuery<'a>>) -> Result<MetricReport> {
    let report = pnr_summary(queries)?;
    if report.mean_pnr.is_none() {
        return Err(Error::EmptyReport(format!(
            "{} queries: {} without discordant pairs, {} without label-distinct pairs",
            report.num_queries, report.skipped_no_discordant, report.skipped_no_pairs
        )));
    }
    Ok(report)
}

/// Like [`pnr_mean`], but an all-skipped input yields a report with no mean.
pub fn pnr_summary<'a>(queries: impl IntoIterator<Item = ScoredQuery<'a>>) -> Result<MetricReport> {
    let mut per_query = Vec::new();
    let (mut no_discordant, mut no_pairs) = (0, 0);
    let (mut sum, mut evaluated) = (0.0, 0usize);
    for q in queries {
        let pnr = match pnr_query(q.scores, q.labels)? {
            Ok(v) => {
                sum += v;
                evaluated += 1;
                Some(v)
            }
            Err(PnrSkip::NoDiscordant) => {
                no_discordant += 1;
                None
            }
            Err(PnrSkip::NoPairs) => {
                no_pairs += 1;
                None
            }
        };
        per_query.push(QueryPnr {
            query_id: q.query_id.to_string(),
            pnr,
        });
    }
    Ok(MetricReport {
        num_queries: per_query.len(),
        mean_pnr: (evaluated > 0).then(|| sum / evaluated as f64),
        per_query_pnr: per_query,
        skipped_no_discordant: no_discordant,
        skipped_no_pairs: no_pairs,
        dcg_at_k: None,
        parameters: ReportParameters::default(),
    })
}

/// Discounted cumulative gain of gains listed in rank order, truncated at `k`.
pub fn dcg(gains_in_rank_order: &[f64], k: Option<usize>) -> f64 {
    let cutoff = k.map_or(gains_in_rank_order.len(), |k| {
        k.min(gains_in_rank_order.len())
    });
    gains_in_rank_order[..cutoff]
        .iter()
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

/// Gains of the documents sorted by descending score; ties keep input order.
pub fn ranked_gains(scores: &[f64], labels: &[RelevanceLabel], mode: GainMode) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.into_iter().map(|i| mode.gain(labels[i])).collect()
}

/// Interleaving gain of system A over system B.
pub fn delta_ab(wins_a: u64, wins_b: u64, ties: u64) -> Result<f64> {
    let total = wins_a + wins_b + ties;
    if total == 0 {
        return Err(Error::InvalidInput("no interleaving outcomes".into()));
    }
    Ok(0.5 * (wins_a as f64 - wins_b as f64) / total as f64)
}

/// Good/same/bad side-by-side gain of a new system.
pub fn delta_gsb(good: u64, same: u64, bad: u64) -> Result<f64> {
    let total = good + same + bad;
    if total == 0 {
        return Err(Error::InvalidInput("no side-by-side judgments".into()));
    }
    Ok((good as f64 - bad as f64) / total as f64)
}
