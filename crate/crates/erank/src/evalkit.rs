//! Evaluation toolkit: graded relevance judgments, ranked run files in the
//! six-column exchange format, rank-cutoff metrics (AP, P@k), paired
//! sign-flip significance testing, win/tie/loss tallies and the weight
//! distribution summary for linear models.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ltr::LinearModel;

/// Graded relevance judgments: query id -> entity id -> grade (0 = not
/// relevant).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Qrels {
        Qrels::default()
    }

    pub fn insert(&mut self, qid: &str, entity: &str, grade: u32) {
        self.judgments
            .entry(qid.to_string())
            .or_default()
            .insert(entity.to_string(), grade);
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn judged(&self, qid: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(qid)
    }

    pub fn grade(&self, qid: &str, entity: &str) -> u32 {
        self.judgments
            .get(qid)
            .and_then(|m| m.get(entity))
            .copied()
            .unwrap_or(0)
    }

    /// Number of entities with grade > 0 for the query.
    pub fn relevant_count(&self, qid: &str) -> usize {
        self.judgments
            .get(qid)
            .map(|m| m.values().filter(|&&g| g > 0).count())
            .unwrap_or(0)
    }

    /// Parse the four-column format `qid 0 entity grade`.
    pub fn from_file(path: &Path) -> Result<Qrels> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut qrels = Qrels::new();
        for (lineno, line) in reader.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 4 {
                return Err(Error::parse(path, lineno, "expected 4 columns: qid 0 entity grade"));
            }
            let grade: u32 = cols[3]
                .parse()
                .map_err(|_| Error::parse(path, lineno, "bad grade"))?;
            let per_query = qrels.judgments.entry(cols[0].to_string()).or_default();
            if per_query.insert(cols[2].to_string(), grade).is_some() {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("duplicate judgment for ({}, {})", cols[0], cols[2]),
                ));
            }
        }
        Ok(qrels)
    }

    pub fn to_file(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (qid, judged) in &self.judgments {
            for (entity, grade) in judged {
                out.push_str(&format!("{qid} 0 {entity} {grade}\n"));
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Per-query ranked entity lists with scores.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunResult {
    rankings: BTreeMap<String, Vec<(String, f64)>>,
}

impl RunResult {
    pub fn new() -> RunResult {
        RunResult::default()
    }

    /// Store a ranking in the given order; entity ids must be unique.
    pub fn insert_ranking(&mut self, qid: &str, ranking: Vec<(String, f64)>) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (entity, _) in &ranking {
            if !seen.insert(entity.as_str()) {
                return Err(Error::Contract(format!(
                    "query {qid}: entity {entity} ranked twice"
                )));
            }
        }
        if self.rankings.insert(qid.to_string(), ranking).is_some() {
            return Err(Error::Contract(format!("query {qid} inserted twice")));
        }
        Ok(())
    }

    pub fn ranking(&self, qid: &str) -> Option<&[(String, f64)]> {
        self.rankings.get(qid).map(Vec::as_slice)
    }

    pub fn qids(&self) -> impl Iterator<Item = &str> {
        self.rankings.keys().map(String::as_str)
    }

    pub fn query_count(&self) -> usize {
        self.rankings.len()
    }

    /// Parse the six-column exchange format `qid Q0 entity rank score tag`.
    /// Rows may arrive in any order; each query's list is sorted by rank.
    pub fn from_trec_file(path: &Path) -> Result<RunResult> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut raw: BTreeMap<String, Vec<(u64, String, f64)>> = BTreeMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 6 {
                return Err(Error::parse(
                    path,
                    lineno,
                    "expected 6 columns: qid Q0 entity rank score tag",
                ));
            }
            let rank: u64 = cols[3]
                .parse()
                .map_err(|_| Error::parse(path, lineno, "bad rank"))?;
            let score: f64 = cols[4]
                .parse()
                .map_err(|_| Error::parse(path, lineno, "bad score"))?;
            raw.entry(cols[0].to_string())
                .or_default()
                .push((rank, cols[2].to_string(), score));
        }
        let mut run = RunResult::new();
        for (qid, mut rows) in raw {
            rows.sort_by_key(|r| r.0);
            let ranking: Vec<(String, f64)> =
                rows.into_iter().map(|(_, e, s)| (e, s)).collect();
            run.insert_ranking(&qid, ranking)
                .map_err(|e| Error::parse(path, 0, e.to_string()))?;
        }
        Ok(run)
    }

    /// Write the six-column exchange format with 1-based ranks and scores
    /// printed to six decimal places.
    pub fn to_trec_file(&self, path: &Path, tag: &str) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        (|| -> std::io::Result<()> {
            for (qid, ranking) in &self.rankings {
                for (rank, (entity, score)) in ranking.iter().enumerate() {
                    writeln!(out, "{qid} Q0 {entity} {} {score:.6} {tag}", rank + 1)?;
                }
            }
            out.flush()
        })()
        .map_err(|e| Error::io(path, e))
    }
}

/// Average precision at a rank cutoff. The denominator is the total number
/// of relevant entities in the judgments, including unretrieved ones.
/// Returns `None` when the query has no relevant entity.
pub fn average_precision<'a, I>(ranked: I, judged: &BTreeMap<String, u32>, cutoff: usize) -> Option<f64>
where
    I: IntoIterator<Item = &'a str>,
{
    let total_relevant = judged.values().filter(|&&g| g > 0).count();
    if total_relevant == 0 {
        return None;
    }
    let mut hits = 0u64;
    let mut sum = 0.0;
    for (i, entity) in ranked.into_iter().take(cutoff).enumerate() {
        if judged.get(entity).is_some_and(|&g| g > 0) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / total_relevant as f64)
}

/// Fraction of the first k positions holding a relevant entity; rankings
/// shorter than k are padded with non-relevant placeholders. `None` when
/// the query has no relevant entity.
pub fn precision_at_k<'a, I>(ranked: I, judged: &BTreeMap<String, u32>, k: usize) -> Option<f64>
where
    I: IntoIterator<Item = &'a str>,
{
    if judged.values().all(|&g| g == 0) {
        return None;
    }
    let hits = ranked
        .into_iter()
        .take(k)
        .filter(|e| judged.get(*e).is_some_and(|&g| g > 0))
        .count();
    Some(hits as f64 / k as f64)
}

/// A rank-cutoff effectiveness metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Average precision at a cutoff (reported as MAP when averaged).
    Ap { cutoff: usize },
    /// Precision at rank k.
    Precision { k: usize },
}

impl Metric {
    pub fn name(&self) -> String {
        match self {
            Metric::Ap { cutoff } => format!("MAP@{cutoff}"),
            Metric::Precision { k } => format!("P@{k}"),
        }
    }

    /// Evaluate one ranking; `None` when the query has no relevant entity.
    pub fn eval(&self, ranking: &[(String, f64)], judged: &BTreeMap<String, u32>) -> Option<f64> {
        let ids = ranking.iter().map(|(e, _)| e.as_str());
        match self {
            Metric::Ap { cutoff } => average_precision(ids, judged, *cutoff),
            Metric::Precision { k } => precision_at_k(ids, judged, *k),
        }
    }
}

/// Mean of a metric over a run, with bookkeeping for skipped queries.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    /// Queries contributing to the mean.
    pub evaluated: usize,
    /// Queries with relevant judgments that the run does not cover.
    pub skipped: usize,
}

/// Per-query metric scores for every judged query with at least one
/// relevant entity that the run covers.
pub fn per_query_scores(run: &RunResult, qrels: &Qrels, metric: Metric) -> BTreeMap<String, f64> {
    let mut scores = BTreeMap::new();
    for qid in qrels.queries() {
        let Some(judged) = qrels.judged(qid) else {
            continue;
        };
        let Some(ranking) = run.ranking(qid) else {
            continue;
        };
        if let Some(score) = metric.eval(ranking, judged) {
            scores.insert(qid.to_string(), score);
        }
    }
    scores
}

/// Average a metric over the run. Queries without relevant judgments are
/// ignored; judged queries missing from the run are counted as skipped.
pub fn mean_metric(run: &RunResult, qrels: &Qrels, metric: Metric) -> MetricSummary {
    let scores = per_query_scores(run, qrels, metric);
    let skipped = qrels
        .queries()
        .filter(|q| qrels.relevant_count(q) > 0 && run.ranking(q).is_none())
        .count();
    let mean = if scores.is_empty() {
        0.0
    } else {
        scores.values().sum::<f64>() / scores.len() as f64
    };
    MetricSummary {
        mean,
        evaluated: scores.len(),
        skipped,
    }
}

/// How the sign-flip test enumerates permutations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PermutationMode {
    /// Exhaustive for up to 20 paired queries, sampled otherwise.
    Auto,
    Exhaustive,
    Sampled,
}

/// Outcome of the paired sign-flip test.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationOutcome {
    pub p_value: f64,
    /// Number of paired queries behind the test.
    pub queries: usize,
    pub exhaustive: bool,
}

/// Comparison slack absorbing float noise when counting permutations at
/// least as extreme as the observation.
const PERMUTATION_SLACK: f64 = 1e-12;

/// Multiplier deriving independent per-iteration seeds from the base seed.
const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Two-sided paired sign-flip test on per-query score differences.
/// Exhaustive enumeration flips every subset of signs; sampling flips each
/// sign with probability 1/2 per iteration and applies the add-one
/// estimate `(1 + hits) / (1 + iterations)`. Each sampled iteration uses
/// its own seed derived from the base seed, so the result is independent
/// of evaluation order.
pub fn permutation_test_diffs(
    diffs: &[f64],
    iterations: usize,
    seed: u64,
    mode: PermutationMode,
) -> Result<PermutationOutcome> {
    let n = diffs.len();
    if n == 0 {
        return Err(Error::Contract(
            "significance test needs at least one paired query".into(),
        ));
    }
    let observed = diffs.iter().sum::<f64>().abs() / n as f64;
    let exhaustive = match mode {
        PermutationMode::Exhaustive => true,
        PermutationMode::Sampled => false,
        PermutationMode::Auto => n <= 20,
    };
    if exhaustive {
        if n > 30 {
            return Err(Error::Config(format!(
                "exhaustive enumeration over {n} queries is intractable; use sampling"
            )));
        }
        let masks = 1u64 << n;
        let hits = (0..masks)
            .into_par_iter()
            .filter(|mask| {
                let mut sum = 0.0;
                for (i, d) in diffs.iter().enumerate() {
                    if mask >> i & 1 == 1 {
                        sum -= d;
                    } else {
                        sum += d;

                    }
                }
                (sum / n as f64).abs() >= observed - PERMUTATION_SLACK
            })
            .count();
        Ok(PermutationOutcome {
            p_value: hits as f64 / masks as f64,
            queries: n,
            exhaustive: true,
        })
    } else {
        if iterations == 0 {
            return Err(Error::Config("sampled test needs iterations >= 1".into()));
        }
        let hits: usize = (0..iterations as u64)
            .into_par_iter()
            .filter(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i.wrapping_mul(SEED_STRIDE)));
                let mut sum = 0.0;
                for d in diffs {
                    if rng.gen_bool(0.5) {
                        sum -= d;
                    } else {
                        sum += d;
                    }
                }
                (sum / n as f64).abs() >= observed - PERMUTATION_SLACK
            })
            .count();
        Ok(PermutationOutcome {
            p_value: (1 + hits) as f64 / (1 + iterations) as f64,
            queries: n,
            exhaustive: false,
        })
    }
}

/// Paired per-query differences (a - b) over queries both runs cover.
pub fn paired_diffs(
    run_a: &RunResult,
    run_b: &RunResult,
    qrels: &Qrels,
    metric: Metric,
) -> Result<Vec<f64>> {
    let a = per_query_scores(run_a, qrels, metric);
    let b = per_query_scores(run_b, qrels, metric);
    let diffs: Vec<f64> = a
        .iter()
        .filter_map(|(qid, &sa)| b.get(qid).map(|&sb| sa - sb))
        .collect();
    if diffs.is_empty() {
        return Err(Error::Contract(
            "runs share no evaluable queries; cannot compare".into(),
        ));
    }
    Ok(diffs)
}

/// Sign-flip test over two runs under one metric.
pub fn permutation_test(
    run_a: &RunResult,
    run_b: &RunResult,
    qrels: &Qrels,
    metric: Metric,
    iterations: usize,
    seed: u64,
    mode: PermutationMode,
) -> Result<PermutationOutcome> {
    let diffs = paired_diffs(run_a, run_b, qrels, metric)?;
    permutation_test_diffs(&diffs, iterations, seed, mode)
}

/// Score differences within `epsilon` count as ties.
pub const WTL_EPSILON: f64 = 1e-6;

/// Per-query wins/ties/losses of run A against run B.
pub fn wtl_counts(
    run_a: &RunResult,
    run_b: &RunResult,
    qrels: &Qrels,
    metric: Metric,
    epsilon: f64,
) -> Result<(usize, usize, usize)> {
    let diffs = paired_diffs(run_a, run_b, qrels, metric)?;
    let mut w = 0;
    let mut t = 0;
    let mut l = 0;
    for d in diffs {
        if d.abs() <= epsilon {
            t += 1;
        } else if d > 0.0 {
            w += 1;
        } else {
            l += 1;
        }
    }
    Ok((w, t, l))
}

/// Render win/tie/loss counts as `W/T/L`, e.g. `212/122/151`.
pub fn format_wtl(w: usize, t: usize, l: usize) -> String {
    format!("{w}/{t}/{l}")
}

/// Relative improvement of `system` over `baseline`, in percent.
pub fn relative_improvement(baseline: f64, system: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::Contract(
            "relative improvement is undefined for a zero baseline".into(),
        ));
    }
    Ok(100.0 * (system - baseline) / baseline)
}

/// Format a percentage with an explicit sign and two decimals; exact zero
/// renders as `0.00%`.
pub fn format_percent(value: f64) -> String {
    if value == 0.0 {
        "0.00%".to_string()
    } else {
        format!("{value:+.2}%")
    }
}

/// Share of total absolute weight mass per feature group, in percent.
/// Every feature name must appear in the grouping; an all-zero weight
/// vector has no defined distribution.
pub fn weight_distribution(
    model: &LinearModel,
    groups: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, f64>> {
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    let mut total = 0.0;
    for (name, &weight) in model.feature_names.iter().zip(&model.weights) {
        let group = groups.get(name).ok_or_else(|| {
            Error::Config(format!("feature {name} is missing from the group mapping"))
        })?;
        *sums.entry(group.clone()).or_insert(0.0) += weight.abs();
        total += weight.abs();
    }
    if total == 0.0 {
        return Err(Error::Contract(
            "weight distribution is undefined for an all-zero model".into(),
        ));
    }
    Ok(sums
        .into_iter()
        .map(|(g, s)| (g, 100.0 * s / total))
        .collect())
}

/// Default grouping for the fixed feature layout: the full-text mixture
/// model, the two entity features, and everything else.
pub fn default_feature_groups(names: &[String]) -> BTreeMap<String, String> {
    names
        .iter()
        .map(|name| {
            let group = match name.as_str() {
                "fsdm" => "FSDM",
                "elr" | "transe" => "ENT",
                _ => "Others",
            };
            (name.clone(), group.to_string())
        })
        .collect()
}
