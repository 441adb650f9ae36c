//! Learning to rank over feature rows: a linear model, two trainers
//! (list-wise coordinate ascent on MAP and a pairwise hinge-loss SVM), and
//! k-fold cross-validation that merges held-out rankings into one run.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::RunResult;
use crate::textrank::{sort_ranking, FeatureVector};

/// A linear scoring model over the fixed feature layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
}

impl LinearModel {
    pub fn uniform(feature_names: Vec<String>) -> LinearModel {
        let n = feature_names.len();
        LinearModel {
            feature_names,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_names.is_empty() {
            return Err(Error::Config("model has no features".into()));
        }
        if self.feature_names.len() != self.weights.len() {
            return Err(Error::LayoutMismatch {
                model: self.weights.len(),
                vector: self.feature_names.len(),
            });
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Contract("model weights must be finite".into()));
        }
        Ok(())
    }

    /// Dot product with a feature vector of the same layout.
    pub fn score(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.weights.len() {
            return Err(Error::LayoutMismatch {
                model: self.weights.len(),
                vector: values.len(),
            });
        }
        Ok(self.weights.iter().zip(values).map(|(w, v)| w * v).sum())
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        #[derive(Serialize)]
        struct ModelFile<'a> {
            format: &'static str,
            version: u32,
            config_hash: &'a str,
            #[serde(flatten)]
            model: &'a LinearModel,
        }
        let file = ModelFile {
            format: "erank-model",
            version: 1,
            config_hash,
            model: self,
        };
        let json = serde_json::to_string_pretty(&file).expect("model serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<LinearModel> {
        #[derive(Deserialize)]
        struct ModelFile {
            format: String,
            version: u32,
            #[allow(dead_code)]
            config_hash: String,
            #[serde(flatten)]
            model: LinearModel,
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        if file.format != "erank-model" || file.version != 1 {
            return Err(Error::parse(
                path,
                0,
                format!("not an erank-model v1 file (format {:?})", file.format),
            ));
        }
        file.model.validate()?;
        Ok(file.model)
    }
}

/// Assignment of query ids to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: usize,
    pub assignment: BTreeMap<String, usize>,
}

/// Split queries into `folds` groups: ids are sorted, shuffled with the
/// seeded generator, then dealt round-robin, so fold sizes differ by at
/// most one and the plan depends only on the id set and the seed.
pub fn make_folds(qids: &[String], folds: usize, seed: u64) -> Result<FoldPlan> {
    if folds < 2 {
        return Err(Error::Config("cross-validation needs at least 2 folds".into()));
    }
    if qids.len() < folds {
        return Err(Error::Config(format!(
            "cannot split {} queries into {folds} folds",
            qids.len()
        )));
    }
    let mut sorted: Vec<&String> = qids.iter().collect();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Contract("duplicate query ids in fold input".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let assignment = sorted
        .into_iter()
        .enumerate()
        .map(|(i, qid)| (qid.clone(), i % folds))
        .collect();
    Ok(FoldPlan { folds, assignment })
}

impl FoldPlan {
    pub fn fold_of(&self, qid: &str) -> Option<usize> {
        self.assignment.get(qid).copied()
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        #[derive(Serialize)]
        struct FoldFile<'a> {
            format: &'static str,
            version: u32,
            config_hash: &'a str,
            #[serde(flatten)]
            plan: &'a FoldPlan,
        }
        let file = FoldFile {
            format: "erank-folds",
            version: 1,
            config_hash,
            plan: self,
        };
        let json = serde_json::to_string_pretty(&file).expect("plan serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<FoldPlan> {
        #[derive(Deserialize)]
        struct FoldFile {
            format: String,
            version: u32,
            #[allow(dead_code)]
            config_hash: String,
            #[serde(flatten)]
            plan: FoldPlan,
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: FoldFile =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        if file.format != "erank-folds" || file.version != 1 {
            return Err(Error::parse(
                path,
                0,
                format!("not an erank-folds v1 file (format {:?})", file.format),
            ));
        }
        if file.plan.folds < 2 || file.plan.assignment.values().any(|&f| f >= file.plan.folds) {
            return Err(Error::parse(path, 0, "fold assignment out of range"));
        }
        Ok(file.plan)
    }
}

/// Rows of one query, indexed into the row slice, sorted by entity id.
struct QueryGroup {
    rows: Vec<usize>,
    relevant: usize,
}

/// Group rows by query, validating the layout width and (qid, entity)
/// uniqueness. Groups and rows within them come out in id order.
fn group_rows(rows: &[FeatureVector], n_features: usize) -> Result<Vec<QueryGroup>> {
    let mut by_qid: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        if row.values.len() != n_features {
            return Err(Error::LayoutMismatch {
                model: n_features,
                vector: row.values.len(),
            });
        }
        if by_qid
            .entry(&row.qid)
            .or_default()
            .insert(&row.entity, i)
            .is_some()
        {
            return Err(Error::Contract(format!(
                "duplicate feature row for ({}, {})",
                row.qid, row.entity
            )));
        }
    }
    Ok(by_qid
        .into_values()
        .map(|entities| {
            let row_idx: Vec<usize> = entities.into_values().collect();
            let relevant = row_idx.iter().filter(|&&i| rows[i].label > 0).count();
            QueryGroup {
                rows: row_idx,
                relevant,
            }
        })
        .collect())
}

/// MAP over grouped rows for a full score vector. Queries without relevant
/// rows are skipped; returns `None` when every query is skipped.
fn map_for_scores(
    rows: &[FeatureVector],
    groups: &[QueryGroup],
    scores: &[f64],
    cutoff: usize,
) -> Option<f64> {
    let mut sum = 0.0;
    let mut counted = 0;
    let mut order: Vec<usize> = Vec::new();
    for group in groups {
        if group.relevant == 0 {
            continue;
        }
        order.clear();
        order.extend(0..group.rows.len());
        // rows within the group are entity-sorted, so the index is the tie-break
        order.sort_unstable_by(|&a, &b| {
            scores[group.rows[b]]
                .total_cmp(&scores[group.rows[a]])
                .then(a.cmp(&b))
        });
        let mut hits = 0u64;
        let mut ap = 0.0;
        for (rank0, &pos) in order.iter().take(cutoff).enumerate() {
            if rows[group.rows[pos]].label > 0 {
                hits += 1;
                ap += hits as f64 / (rank0 + 1) as f64;
            }
        }
        sum += ap / group.relevant as f64;
        counted += 1;
    }
    (counted > 0).then(|| sum / counted as f64)
}

/// Coordinate-ascent settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaConfig {
    /// Random restarts; restart 0 always starts from uniform weights.
    pub restarts: usize,
    /// Maximum sweeps over all coordinates per restart.
    pub max_passes: usize,
    /// Minimum MAP gain for a move to be accepted.
    pub tolerance: f64,
    /// Rank cutoff of the training MAP.
    pub map_cutoff: usize,
    pub seed: u64,
}

impl Default for CaConfig {
    fn default() -> Self {
        CaConfig {
            restarts: 5,
            max_passes: 25,
            tolerance: 1e-4,
            map_cutoff: 100,
            seed: 42,
        }
    }
}

/// A trained model plus the accepted-move MAP trace of its restart.
#[derive(Debug, Clone, PartialEq)]
pub struct CaOutcome {
    pub model: LinearModel,
    /// Training MAP after initialization and after each accepted move;
    /// non-decreasing by construction.
    pub map_trace: Vec<f64>,
    /// True when no training query had a relevant row and the uniform
    /// model was returned untrained.
    pub degenerate: bool,
}

/// Additive probe offsets: five geometric steps from 0.01 to 1, tried in
/// both directions, alongside the multiplicative probes 0.5x and 1.5x.
const CA_STEPS: [f64; 5] = [0.01, 0.03162277660168379, 0.1, 0.31622776601683794, 1.0];

fn l1_normalize(weights: &mut [f64]) {
    let total: f64 = weights.iter().map(|w| w.abs()).sum();
    if total > 0.0 {
        for w in weights {
            *w /= total;
        }
    }
}

/// List-wise coordinate ascent maximizing training MAP directly.
///
/// Each restart sweeps the coordinates in shuffled order, probing a fixed
/// candidate grid per coordinate and accepting only moves that beat the
/// current MAP by more than the tolerance; weights are L1-normalized after
/// every accepted move (which leaves rankings unchanged). The best restart
/// by final training MAP wins.
pub fn coordinate_ascent_train(
    rows: &[FeatureVector],
    feature_names: &[String],
    config: &CaConfig,
) -> Result<CaOutcome> {
    if rows.is_empty() {
        return Err(Error::Contract("cannot train on zero feature rows".into()));
    }
    if config.restarts == 0 || config.max_passes == 0 {
        return Err(Error::Config("restarts and max_passes must be >= 1".into()));
    }
    if config.tolerance < 0.0 || config.map_cutoff == 0 {
        return Err(Error::Config("tolerance must be >= 0 and map_cutoff >= 1".into()));
    }
    let n = feature_names.len();
    let groups = group_rows(rows, n)?;
    if groups.iter().all(|g| g.relevant == 0) {
        eprintln!("warning: no training query has a relevant row; returning uniform weights");
        return Ok(CaOutcome {
            model: LinearModel::uniform(feature_names.to_vec()),
            map_trace: Vec::new(),
            degenerate: true,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut scores = vec![0.0; rows.len()];
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None; // (map, weights, trace)
    for restart in 0..config.restarts {
        let mut weights: Vec<f64> = if restart == 0 {
            vec![1.0 / n as f64; n]
        } else {
            let mut w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            l1_normalize(&mut w);
            w
        };
        for (i, row) in rows.iter().enumerate() {
            scores[i] = weights.iter().zip(&row.values).map(|(w, v)| w * v).sum();
        }
        let mut current =
            map_for_scores(rows, &groups, &scores, config.map_cutoff).expect("relevant rows exist");
        let mut trace = vec![current];
        let mut coords: Vec<usize> = (0..n).collect();
        for _pass in 0..config.max_passes {
            let mut improved = false;
            coords.shuffle(&mut rng);
            for &j in &coords {
                let pivot = weights[j];
                // scores with coordinate j zeroed out, so each candidate
                // value is a single multiply-add away
                for (i, row) in rows.iter().enumerate() {
                    scores[i] -= pivot * row.values[j];
                }
                let mut candidates = vec![pivot * 0.5, pivot * 1.5];
                for step in CA_STEPS {
                    candidates.push(pivot + step);
                    candidates.push(pivot - step);
                }
                let mut accepted: Option<(f64, f64)> = None; // (map, value)
                for value in candidates {
                    let threshold = accepted.map_or(current + config.tolerance, |(m, _)| m);
                    let mut probe = scores.clone();
                    for (i, row) in rows.iter().enumerate() {
                        probe[i] += value * row.values[j];
                    }
                    let map = map_for_scores(rows, &groups, &probe, config.map_cutoff)
                        .expect("relevant rows exist");
                    if map > threshold {
                        accepted = Some((map, value));
                    }
                }
                let value = if let Some((map, value)) = accepted {
                    current = map;
                    trace.push(map);
                    improved = true;
                    value
                } else {
                    pivot
                };
                weights[j] = value;
                for (i, row) in rows.iter().enumerate() {
                    scores[i] += value * row.values[j];
                }
                if accepted.is_some() {
                    // renormalizing rescales every score by the same
                    // positive factor, so rankings and MAP are unchanged
                    l1_normalize(&mut weights);
                    for (i, row) in rows.iter().enumerate() {
                        scores[i] = weights.iter().zip(&row.values).map(|(w, v)| w * v).sum();
                    }
                }
            }
            if !improved {
                break;
            }
        }
        if best.as_ref().is_none_or(|(m, _, _)| current > *m) {
            best = Some((current, weights, trace));
        }
    }
    let (_, weights, map_trace) = best.expect("at least one restart ran");
    Ok(CaOutcome {
        model: LinearModel {
            feature_names: feature_names.to_vec(),
            weights,
        },
        map_trace,
        degenerate: false,
    })
}

/// Pairwise SVM settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    /// Hinge-loss weight; 0 leaves the zero-initialized model untouched.
    pub c: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            epochs: 200,
            learning_rate: 0.01,
            seed: 42,
        }
    }
}

/// Pairwise ranking SVM by SGD on `||w||^2 / 2 + C * sum hinge(1 - w . d)`
/// over within-query preference pairs `d = x_better - x_worse`. Weights
/// start at zero; each visit applies the regularizer's share `w / P`
/// (P = pair count) plus the hinge subgradient when the pair is violated.
pub fn ranksvm_train(
    rows: &[FeatureVector],
    feature_names: &[String],
    config: &SvmConfig,
) -> Result<LinearModel> {
    if config.c < 0.0 || config.learning_rate <= 0.0 {
        return Err(Error::Config("SVM needs c >= 0 and learning_rate > 0".into()));
    }
    let n = feature_names.len();
    let groups = group_rows(rows, n)?;
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for group in &groups {
        for &a in &group.rows {
            for &b in &group.rows {
                if rows[a].label > rows[b].label {
                    pairs.push((a, b));
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Contract(
            "no within-query preference pairs; labels are constant".into(),
        ));
    }
    let p = pairs.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights = vec![0.0; n];
    let mut delta = vec![0.0; n];
    for _ in 0..config.epochs {
        pairs.shuffle(&mut rng);
        for &(a, b) in &pairs {
            for (d, (va, vb)) in delta
                .iter_mut()
                .zip(rows[a].values.iter().zip(&rows[b].values))
            {
                *d = va - vb;
            }
            let margin: f64 = weights.iter().zip(&delta).map(|(w, d)| w * d).sum();
            let violated = margin < 1.0;
            for k in 0..n {
                let mut grad = weights[k] / p;
                if violated {
                    grad -= config.c * delta[k];
                }
                weights[k] -= config.learning_rate * grad;
            }
        }
    }
    let model = LinearModel {
        feature_names: feature_names.to_vec(),
        weights,
    };
    model.validate()?;
    Ok(model)
}

/// Score one query's rows and sort them into a ranking.
pub fn rank_rows(model: &LinearModel, rows: &[&FeatureVector]) -> Result<Vec<(String, f64)>> {
    let mut ranking = Vec::with_capacity(rows.len());
    for row in rows {
        ranking.push((row.entity.clone(), model.score(&row.values)?));
    }
    sort_ranking(&mut ranking);
    Ok(ranking)
}

/// Cross-validation outcome: one model per fold plus the merged run built
/// entirely from held-out rankings.
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub fold_models: Vec<LinearModel>,
    pub run: RunResult,
}

/// Train on k-1 folds and rank the held-out fold, for every fold. Each
/// query is ranked exactly once, by the one model whose training set
/// excluded it.
pub fn cross_validate<F>(rows: &[FeatureVector], plan: &FoldPlan, train: F) -> Result<CvOutcome>
where
    F: Fn(&[FeatureVector]) -> Result<LinearModel>,
{
    let mut by_qid: BTreeMap<&str, Vec<&FeatureVector>> = BTreeMap::new();
    for row in rows {
        by_qid.entry(&row.qid).or_default().push(row);
    }
    for qid in by_qid.keys() {
        if plan.fold_of(qid).is_none() {
            return Err(Error::Contract(format!(
                "query {qid} has feature rows but no fold assignment"
            )));
        }
    }
    let mut fold_models = Vec::with_capacity(plan.folds);
    let mut run = RunResult::new();
    for fold in 0..plan.folds {
        let training: Vec<FeatureVector> = rows
            .iter()
            .filter(|r| plan.fold_of(&r.qid) != Some(fold))
            .cloned()
            .collect();
        if training.is_empty() {
            return Err(Error::Contract(format!(
                "fold {fold} leaves an empty training set"
            )));
        }
        debug_assert!(training
            .iter()
            .all(|r| plan.fold_of(&r.qid) != Some(fold)));
        let model = train(&training)?;
        model.validate()?;
        for (qid, query_rows) in &by_qid {
            if plan.fold_of(qid) == Some(fold) {
                run.insert_ranking(qid, rank_rows(&model, query_rows)?)?;
            }
        }
        fold_models.push(model);
    }
    Ok(CvOutcome { fold_models, run })
}
