//! Experiment pipeline: the TOML configuration, the artifact lifecycle in
//! the working directory, and one function per CLI stage.
//!
//! Stages communicate only through files, so any stage can be re-run in
//! isolation once its prerequisites exist:
//!
//! | stage      | reads                               | writes |
//! |------------|-------------------------------------|--------|
//! | ingest     | triples, mapping                    | corpus.json |
//! | index      | corpus.json                         | index.json |
//! | embed      | triples                             | embeddings.{ent,rel}.vec |
//! | candidates | index.json, queries                 | candidates.trec |
//! | features   | index.json, candidates.trec, qrels, queries[, embeddings] | features.txt |
//! | train      | features.txt                        | folds.json, model.foldN.json |
//! | rerank     | features.txt, folds.json, models    | run.trec |
//! | eval       | run.trec, qrels                     | eval.{txt,json} |
//! | compare    | two run files, qrels                | compare.{txt,json} |
//! | weights    | model.foldN.json                    | weights.{txt,json} |
//!
//! Every artifact records the SHA-256 of the resolved configuration —
//! embedded in JSON artifacts, and in `provenance.json` for the plain-text
//! formats — and stages warn when they consume an artifact produced under
//! a different configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{ingest_triples, read_triples, Corpus, FieldMapping, IngestReport};
use crate::entmatch::{merge_annotations, read_queries, EmbeddingStore, QueryRecord};
use crate::error::{Error, Result};
use crate::evalkit::{
    default_feature_groups, format_percent, format_wtl, mean_metric, permutation_test, relative_improvement,
    weight_distribution, wtl_counts, Metric, PermutationMode, Qrels, RunResult, WTL_EPSILON,
};
use crate::index::FieldedIndex;
use crate::ltr::{
    coordinate_ascent_train, make_folds, rank_rows, ranksvm_train, CaConfig, FoldPlan, LinearModel,
    SvmConfig,
};
use crate::textrank::{
    extract_features, generate_candidates, read_feature_file, write_feature_file, FeatureConfig,
    FeatureVector, FsdmParams, SdmParams,
};
use crate::transe::{self, Norm, TranseConfig, TripleSet};

/// Which feature set the experiment uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// The 26 text-match features only.
    Baseline,
    /// Baseline plus the mention-match feature.
    Elr,
    /// Baseline plus the embedding-similarity feature.
    Transe,
    /// Baseline plus both entity features.
    Both,
}

impl Variant {
    pub fn uses_elr(self) -> bool {
        matches!(self, Variant::Elr | Variant::Both)
    }

    pub fn uses_transe(self) -> bool {
        matches!(self, Variant::Transe | Variant::Both)
    }
}

/// Input and output locations. Relative paths are resolved against the
/// directory containing the config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Tab-separated triple file.
    pub triples: PathBuf,
    /// Relation-to-field mapping; defaults to built-in routing when absent.
    #[serde(default)]
    pub mapping: Option<PathBuf>,
    /// JSON-lines query file.
    pub queries: PathBuf,
    /// Optional JSON-lines annotation file merged into the queries.
    #[serde(default)]
    pub annotations: Option<PathBuf>,
    /// Four-column relevance judgments.
    pub qrels: PathBuf,
    /// Directory all artifacts are written to (created on demand).
    pub workdir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub variant: Variant,
    /// Master seed for folds, trainers, embeddings and significance tests.
    pub seed: u64,
    /// Rayon worker threads; 0 keeps the library default.
    pub threads: usize,
    /// Candidates retrieved per query.
    pub candidates_k: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            variant: Variant::Baseline,
            seed: 42,
            threads: 0,
            candidates_k: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexSection {
    /// Unordered-window width; authoritative for SDM and FSDM as well.
    pub window: usize,
}

impl Default for IndexSection {
    fn default() -> Self {
        IndexSection { window: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Section {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Section {
    fn default() -> Self {
        Bm25Section { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElrSection {
    /// Dirichlet prior of the mention-match feature.
    pub mu: f64,
}

impl Default for ElrSection {
    fn default() -> Self {
        ElrSection { mu: 100.0 }
    }
}

/// Embedding training settings; the seed comes from `[run]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranseSection {
    pub dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives: usize,
    pub norm: Norm,
    /// Suppress per-epoch loss lines.
    pub quiet: bool,
}

impl Default for TranseSection {
    fn default() -> Self {
        TranseSection {
            dim: 100,
            margin: 1.0,
            learning_rate: 0.001,
            epochs: 100,
            negatives: 1,
            norm: Norm::L2,
            quiet: false,
        }
    }
}

impl TranseSection {
    fn to_config(&self, seed: u64) -> TranseConfig {
        TranseConfig {
            dim: self.dim,
            margin: self.margin,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            negatives: self.negatives,
            norm: self.norm,
            seed,
            quiet: self.quiet,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LtrAlgorithm {
    CoordinateAscent,
    Ranksvm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LtrSection {
    pub algorithm: LtrAlgorithm,
    pub folds: usize,
    // coordinate ascent
    pub restarts: usize,
    pub max_passes: usize,
    pub tolerance: f64,
    pub map_cutoff: usize,
    // rank-SVM
    pub svm_c: f64,
    pub svm_epochs: usize,
    pub svm_learning_rate: f64,
}

impl Default for LtrSection {
    fn default() -> Self {
        LtrSection {
            algorithm: LtrAlgorithm::CoordinateAscent,
            folds: 5,
            restarts: 5,
            max_passes: 25,
            tolerance: 1e-4,
            map_cutoff: 100,
            svm_c: 1.0,
            svm_epochs: 200,
            svm_learning_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Run file to evaluate; defaults to `<workdir>/run.trec`.
    pub run: Option<PathBuf>,
    pub map_cutoff: usize,
    pub precision_at: Vec<usize>,
    pub permutation_iterations: usize,
    pub permutation_mode: PermutationMode,
    /// Significance level marking comparisons.
    pub significance_level: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            run: None,
            map_cutoff: 100,
            precision_at: vec![10, 20],
            permutation_iterations: 100_000,
            permutation_mode: PermutationMode::Auto,
            significance_level: 0.05,
        }
    }
}

/// Two run files for the `compare` stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub baseline: PathBuf,
    pub system: PathBuf,
}

/// The full experiment configuration, one TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub index: IndexSection,
    #[serde(default)]
    pub sdm: SdmParams,
    #[serde(default)]
    pub fsdm: FsdmParams,
    #[serde(default)]
    pub bm25: Bm25Section,
    #[serde(default)]
    pub elr: ElrSection,
    #[serde(default)]
    pub transe: TranseSection,
    #[serde(default)]
    pub ltr: LtrSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub compare: Option<CompareSection>,
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&path);
    }
}

impl ExperimentConfig {
    /// Parse a TOML file, resolve relative paths against its directory,
    /// and propagate the index window into the SDM/FSDM parameters.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        resolve(base, &mut config.paths.triples);
        resolve(base, &mut config.paths.queries);
        resolve(base, &mut config.paths.qrels);
        resolve(base, &mut config.paths.workdir);
        if let Some(mapping) = &mut config.paths.mapping {
            resolve(base, mapping);
        }
        if let Some(annotations) = &mut config.paths.annotations {
            resolve(base, annotations);
        }
        if let Some(run) = &mut config.eval.run {
            resolve(base, run);
        }
        if let Some(compare) = &mut config.compare {
            resolve(base, &mut compare.baseline);
            resolve(base, &mut compare.system);
        }
        // [index].window is the single authority on window width
        config.sdm.window = config.index.window;
        config.fsdm.window = config.index.window;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.index.window < 2 {
            return Err(Error::Config("[index] window must be >= 2".into()));
        }
        if self.run.candidates_k == 0 {
            return Err(Error::Config("[run] candidates_k must be >= 1".into()));
        }
        self.sdm.validate()?;
        self.fsdm.validate()?;
        self.feature_config().validate()?;
        self.transe.to_config(self.run.seed).validate()?;
        if self.ltr.folds < 2 {
            return Err(Error::Config("[ltr] folds must be >= 2".into()));
        }
        self.ca_config().validate_fields()?;
        if self.ltr.svm_c < 0.0 || self.ltr.svm_learning_rate <= 0.0 {
            return Err(Error::Config(
                "[ltr] svm_c must be >= 0 and svm_learning_rate > 0".into(),
            ));
        }
        if self.eval.map_cutoff == 0 || self.eval.precision_at.contains(&0) {
            return Err(Error::Config("[eval] rank cutoffs must be >= 1".into()));
        }
        if self.eval.permutation_iterations == 0 {
            return Err(Error::Config("[eval] permutation_iterations must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.eval.significance_level) || self.eval.significance_level <= 0.0 {
            return Err(Error::Config("[eval] significance_level must be in (0, 1)".into()));
        }
        Ok(())
    }

    /// SHA-256 over the resolved configuration; stamped into artifacts.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Tag written into run files: `erank-` plus the short config hash.
    pub fn run_tag(&self) -> String {
        format!("erank-{}", &self.hash()[..8])
    }

    /// Feature extraction settings implied by the variant.
    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            sdm: self.sdm,
            fsdm: self.fsdm.clone(),
            bm25_k1: self.bm25.k1,
            bm25_b: self.bm25.b,
            elr_mu: self.run.variant.uses_elr().then_some(self.elr.mu),
            transe: self.run.variant.uses_transe(),
        }
    }

    fn ca_config(&self) -> CaConfig {
        CaConfig {
            restarts: self.ltr.restarts,
            max_passes: self.ltr.max_passes,
            tolerance: self.ltr.tolerance,
            map_cutoff: self.ltr.map_cutoff,
            seed: self.run.seed,
        }
    }

    fn svm_config(&self) -> SvmConfig {
        SvmConfig {
            c: self.ltr.svm_c,
            epochs: self.ltr.svm_epochs,
            learning_rate: self.ltr.svm_learning_rate,
            seed: self.run.seed,
        }
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.paths.workdir.join(name)
    }
}

impl CaConfig {
    fn validate_fields(&self) -> Result<()> {
        if self.restarts == 0 || self.max_passes == 0 || self.map_cutoff == 0 {
            return Err(Error::Config(
                "[ltr] restarts, max_passes and map_cutoff must be >= 1".into(),
            ));
        }
        if self.tolerance < 0.0 {
            return Err(Error::Config("[ltr] tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

/// Run a closure on a dedicated rayon pool of the given size (0 = default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

// ---------------------------------------------------------------------------
// provenance bookkeeping

#[derive(Debug, Default, Serialize, Deserialize)]
struct Provenance {
    artifacts: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct ProvenanceFile {
    format: String,
    version: u32,
    artifacts: BTreeMap<String, String>,
}

fn load_provenance(workdir: &Path) -> Provenance {
    let path = workdir.join("provenance.json");
    let Ok(text) = std::fs::read_to_string(&path) else {
        return Provenance::default();
    };
    match serde_json::from_str::<ProvenanceFile>(&text) {
        Ok(file) if file.format == "erank-provenance" && file.version == 1 => Provenance {
            artifacts: file.artifacts,
        },
        _ => {
            eprintln!(
                "warning: {} is unreadable; provenance restarts from scratch",
                path.display()
            );
            Provenance::default()
        }
    }
}

/// Record which config hash produced the named artifacts.
fn record_provenance(workdir: &Path, hash: &str, names: &[&str]) -> Result<()> {
    let mut provenance = load_provenance(workdir);
    for name in names {
        provenance.artifacts.insert(name.to_string(), hash.to_string());
    }
    let path = workdir.join("provenance.json");
    let file = ProvenanceFile {
        format: "erank-provenance".to_string(),
        version: 1,
        artifacts: provenance.artifacts,
    };
    let json = serde_json::to_string_pretty(&file).expect("provenance serializes");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Warn when an artifact about to be consumed was produced under a
/// different configuration.
fn warn_if_stale(workdir: &Path, hash: &str, name: &str) {
    let provenance = load_provenance(workdir);
    if let Some(recorded) = provenance.artifacts.get(name) {
        if recorded != hash {
            eprintln!(
                "warning: {name} was produced under config {} but the current config is {}; \
                 re-run earlier stages if this is unintended",
                &recorded[..8.min(recorded.len())],
                &hash[..8.min(hash.len())]
            );
        }
    }
}

// ---------------------------------------------------------------------------
// artifact files

const CORPUS_FILE: &str = "corpus.json";
const INDEX_FILE: &str = "index.json";
const ENT_VEC_FILE: &str = "embeddings.ent.vec";
const REL_VEC_FILE: &str = "embeddings.rel.vec";
const CANDIDATES_FILE: &str = "candidates.trec";
const FEATURES_FILE: &str = "features.txt";
const FOLDS_FILE: &str = "folds.json";
const RUN_FILE: &str = "run.trec";

fn model_file(fold: usize) -> String {
    format!("model.fold{fold}.json")
}

#[derive(Serialize, Deserialize)]
struct CorpusFile {
    format: String,
    version: u32,
    config_hash: String,
    report: IngestReport,
    corpus: Corpus,
}

fn require_artifact(config: &ExperimentConfig, name: &str, prerequisite: &str) -> Result<PathBuf> {
    let path = config.artifact(name);
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path,
            prerequisite: prerequisite.to_string(),
        });
    }
    warn_if_stale(&config.paths.workdir, &config.hash(), name);
    Ok(path)
}

fn load_corpus(config: &ExperimentConfig) -> Result<Corpus> {
    let path = require_artifact(config, CORPUS_FILE, "ingest")?;
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: CorpusFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, 0, e.to_string()))?;
    if file.format != "erank-corpus" || file.version != 1 {
        return Err(Error::parse(&path, 0, "not an erank-corpus v1 file"));
    }
    Ok(file.corpus)
}

fn load_index(config: &ExperimentConfig) -> Result<FieldedIndex> {
    let path = require_artifact(config, INDEX_FILE, "index")?;
    let index = FieldedIndex::load(&path)?;
    if index.window() != config.index.window {
        return Err(Error::Config(format!(
            "index was built with window {} but the config says {}; re-run `erank index`",
            index.window(),
            config.index.window
        )));
    }
    Ok(index)
}

fn load_queries(config: &ExperimentConfig) -> Result<Vec<QueryRecord>> {
    let mut queries = read_queries(&config.paths.queries)?;
    if let Some(annotations) = &config.paths.annotations {
        merge_annotations(&mut queries, annotations)?;
    }
    Ok(queries)
}

fn load_embeddings(config: &ExperimentConfig) -> Result<EmbeddingStore> {
    let ent = require_artifact(config, ENT_VEC_FILE, "embed")?;
    let rel = require_artifact(config, REL_VEC_FILE, "embed")?;
    EmbeddingStore::load(&ent, &rel)
}

fn load_features(config: &ExperimentConfig) -> Result<Vec<FeatureVector>> {
    let path = require_artifact(config, FEATURES_FILE, "features")?;
    let rows = read_feature_file(&path)?;
    let expected = config.feature_config().feature_count();
    if let Some(row) = rows.iter().find(|r| r.values.len() != expected) {
        return Err(Error::LayoutMismatch {
            model: expected,
            vector: row.values.len(),
        });
    }
    Ok(rows)
}

fn load_fold_models(config: &ExperimentConfig) -> Result<(FoldPlan, Vec<LinearModel>)> {
    let path = require_artifact(config, FOLDS_FILE, "train")?;
    let plan = FoldPlan::load(&path)?;
    let mut models = Vec::with_capacity(plan.folds);
    for fold in 0..plan.folds {
        let path = require_artifact(config, &model_file(fold), "train")?;
        models.push(LinearModel::load(&path)?);
    }
    Ok((plan, models))
}

fn ensure_workdir(config: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&config.paths.workdir)
        .map_err(|e| Error::io(&config.paths.workdir, e))
}

// ---------------------------------------------------------------------------
// stages

/// Parse the triple file, group it into entity documents, write
/// `corpus.json`.
pub fn stage_ingest(config: &ExperimentConfig) -> Result<()> {
    ensure_workdir(config)?;
    let (triples, report) = read_triples(&config.paths.triples)?;
    let mapping = match &config.paths.mapping {
        Some(path) => FieldMapping::from_file(path)?,
        None => FieldMapping::default(),
    };
    let corpus = ingest_triples(triples, &mapping);
    for skipped in report.skipped.iter().take(5) {
        eprintln!(
            "warning: {}:{}: skipped: {}",
            config.paths.triples.display(),
            skipped.line,
            skipped.reason
        );
    }
    if report.skipped.len() > 5 {
        eprintln!("warning: ... and {} more skipped lines", report.skipped.len() - 5);
    }
    let hash = config.hash();
    let file = CorpusFile {
        format: "erank-corpus".to_string(),
        version: 1,
        config_hash: hash.clone(),
        report: IngestReport {
            triples_ingested: report.triples_ingested,
            skipped: report.skipped.clone(),
        },
        corpus,
    };
    let path = config.artifact(CORPUS_FILE);
    let json = serde_json::to_string(&file).expect("corpus serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    record_provenance(&config.paths.workdir, &hash, &[CORPUS_FILE])?;
    println!(
        "ingest: {} triples -> {} entities ({} lines skipped) -> {}",
        file.report.triples_ingested,
        file.corpus.len(),
        file.report.skipped.len(),
        path.display()
    );
    Ok(())
}

/// Build the positional index from `corpus.json`.
pub fn stage_index(config: &ExperimentConfig) -> Result<()> {
    ensure_workdir(config)?;
    let corpus = load_corpus(config)?;
    let index = FieldedIndex::build(&corpus, config.index.window)?;
    let hash = config.hash();
    let path = config.artifact(INDEX_FILE);
    index.save(&path, Some(&hash))?;
    record_provenance(&config.paths.workdir, &hash, &[INDEX_FILE])?;
    println!(
        "index: {} entities, window {} -> {}",
        index.entity_count(),
        index.window(),
        path.display()
    );
    Ok(())
}

/// Train knowledge-graph embeddings from the entity-to-entity triples.
pub fn stage_embed(config: &ExperimentConfig) -> Result<()> {
    ensure_workdir(config)?;
    let (triples, _) = read_triples(&config.paths.triples)?;
    let set = TripleSet::from_triples(&triples);
    if set.triples.is_empty() {
        return Err(Error::Contract(
            "triple file has no entity-to-entity triples; nothing to embed".into(),
        ));
    }
    let store = transe::train(&set, &config.transe.to_config(config.run.seed))?;
    let ent_path = config.artifact(ENT_VEC_FILE);
    let rel_path = config.artifact(REL_VEC_FILE);
    store.save(&ent_path, &rel_path)?;
    record_provenance(&config.paths.workdir, &config.hash(), &[ENT_VEC_FILE, REL_VEC_FILE])?;
    println!(
        "embed: {} entities, {} relations, dim {} -> {}",
        store.entity_count(),
        store.relation_count(),
        store.dim(),
        ent_path.display()
    );
    Ok(())
}

/// Retrieve the top-k candidates per query with the full-field mixture
/// ranker and write them as a run file.
pub fn stage_candidates(config: &ExperimentConfig) -> Result<()> {
    ensure_workdir(config)?;
    let index = load_index(config)?;
    let queries = load_queries(config)?;
    let k = config.run.candidates_k;
    let ranked: Vec<(String, Vec<(String, f64)>)> = queries
        .par_iter()
        .map(|query| -> Result<(String, Vec<(String, f64)>)> {
            if query.tokens.is_empty() {
                return Ok((query.id.clone(), Vec::new()));
            }
            Ok((
                query.id.clone(),
                generate_candidates(&index, &query.tokens, &config.fsdm, k)?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut run = RunResult::new();
    let mut omitted = 0;
    for (qid, ranking) in ranked {
        if ranking.is_empty() {
            eprintln!("warning: query {qid} has no candidates; omitted from the run");
            omitted += 1;
            continue;
        }
        run.insert_ranking(&qid, ranking)?;
    }
    let path = config.artifact(CANDIDATES_FILE);
    run.to_trec_file(&path, &config.run_tag())?;
    record_provenance(&config.paths.workdir, &config.hash(), &[CANDIDATES_FILE])?;
    println!(
        "candidates: {} queries, k={k} ({omitted} omitted) -> {}",
        run.query_count(),
        path.display()
    );
    Ok(())
}

/// Extract the feature matrix for every (query, candidate) pair, labelled
/// with qrels grades, sorted by (query id, entity id).
pub fn stage_features(config: &ExperimentConfig) -> Result<()> {
    ensure_workdir(config)?;
    let index = load_index(config)?;
    let queries = load_queries(config)?;
    let candidates_path = require_artifact(config, CANDIDATES_FILE, "candidates")?;
    let candidates = RunResult::from_trec_file(&candidates_path)?;
    let qrels = Qrels::from_file(&config.paths.qrels)?;
    let embeddings = if config.run.variant.uses_transe() {
        Some(load_embeddings(config)?)
    } else {
        None
    };
    let feature_config = config.feature_config();
    let by_id: BTreeMap<&str, &QueryRecord> =
        queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let qids: Vec<&str> = candidates.qids().collect();
    let mut rows: Vec<FeatureVector> = qids
        .par_iter()
        .map(|qid| -> Result<Vec<FeatureVector>> {
            let query = by_id.get(qid).ok_or_else(|| {
                Error::Contract(format!("candidate run references unknown query {qid}"))
            })?;
            let ranking = candidates.ranking(qid).expect("qid from this run");
            let mut rows = Vec::with_capacity(ranking.len());
            for (entity, _) in ranking {
                let mut row =
                    extract_features(&index, query, entity, &feature_config, embeddings.as_ref())?;
                row.label = qrels.grade(qid, entity);
                rows.push(row);
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    rows.sort_by(|a, b| a.qid.cmp(&b.qid).then_with(|| a.entity.cmp(&b.entity)));
    let path = config.artifact(FEATURES_FILE);
    write_feature_file(&path, &rows)?;
    record_provenance(&config.paths.workdir, &config.hash(), &[FEATURES_FILE])?;
    println!(
        "features: {} rows x {} features -> {}",
        rows.len(),
        feature_config.feature_count(),
        path.display()
    );
    Ok(())
}

/// Split queries into folds and train one model per fold on the other
/// folds' rows.
pub fn stage_train(config: &ExperimentConfig) -> Result<()> {
    ensure_workdir(config)?;
    let rows = load_features(config)?;
    let names = config.feature_config().feature_names();
    let qids: Vec<String> = rows
        .iter()
        .map(|r| r.qid.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let plan = make_folds(&qids, config.ltr.folds, config.run.seed)?;
    let hash = config.hash();
    plan.save(&config.artifact(FOLDS_FILE), &hash)?;
    let mut written = vec![FOLDS_FILE.to_string()];
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
        let model = match config.ltr.algorithm {
            LtrAlgorithm::CoordinateAscent => {
                let outcome = coordinate_ascent_train(&training, &names, &config.ca_config())?;
                if outcome.degenerate {
                    println!("fold {fold}: degenerate training data, uniform weights");
                } else {
                    println!(
                        "fold {fold}: training MAP {:.4} after {} accepted moves",
                        outcome.map_trace.last().unwrap(),
                        outcome.map_trace.len() - 1
                    );
                }
                outcome.model
            }
            LtrAlgorithm::Ranksvm => {
                let model = ranksvm_train(&training, &names, &config.svm_config())?;
                let l1: f64 = model.weights.iter().map(|w| w.abs()).sum();
                println!("fold {fold}: rank-SVM trained, |w|_1 = {l1:.4}");
                model
            }
        };
        let name = model_file(fold);
        model.save(&config.artifact(&name), &hash)?;
        written.push(name);
    }
    let written_refs: Vec<&str> = written.iter().map(String::as_str).collect();
    record_provenance(&config.paths.workdir, &hash, &written_refs)?;
    println!(
        "train: {} folds over {} queries -> {}",
        plan.folds,
        qids.len(),
        config.artifact(FOLDS_FILE).display()
    );
    Ok(())
}

/// Re-rank every query's candidates with the model of the fold that held
/// it out, producing the final run.
pub fn stage_rerank(config: &ExperimentConfig) -> Result<()> {
    ensure_workdir(config)?;
    let rows = load_features(config)?;
    let (plan, models) = load_fold_models(config)?;
    let mut by_qid: BTreeMap<&str, Vec<&FeatureVector>> = BTreeMap::new();
    for row in &rows {
        by_qid.entry(&row.qid).or_default().push(row);
    }
    let mut run = RunResult::new();
    for (qid, query_rows) in &by_qid {
        let fold = plan.fold_of(qid).ok_or_else(|| {
            Error::Contract(format!("query {qid} has no fold assignment; re-run `erank train`"))
        })?;
        run.insert_ranking(qid, rank_rows(&models[fold], query_rows)?)?;
    }
    let path = config.artifact(RUN_FILE);
    run.to_trec_file(&path, &config.run_tag())?;
    record_provenance(&config.paths.workdir, &config.hash(), &[RUN_FILE])?;
    println!("rerank: {} queries -> {}", run.query_count(), path.display());
    Ok(())
}

fn eval_metrics(config: &ExperimentConfig) -> Vec<Metric> {
    let mut metrics = vec![Metric::Ap {
        cutoff: config.eval.map_cutoff,
    }];
    for &k in &config.eval.precision_at {
        metrics.push(Metric::Precision { k });
    }
    metrics
}

/// Score a run against the qrels and write `eval.{txt,json}`.
pub fn stage_eval(config: &ExperimentConfig) -> Result<()> {
    ensure_workdir(config)?;
    let run_path = match &config.eval.run {
        Some(path) => path.clone(),
        None => {
            require_artifact(config, RUN_FILE, "rerank")?
        }
    };
    let run = RunResult::from_trec_file(&run_path)?;
    let qrels = Qrels::from_file(&config.paths.qrels)?;
    let metrics = eval_metrics(config);
    let mut text = String::new();
    let mut metric_values = BTreeMap::new();
    let first = mean_metric(&run, &qrels, metrics[0]);
    text.push_str(&format!("run: {}\n", run_path.display()));
    text.push_str(&format!(
        "queries evaluated: {} ({} skipped)\n",
        first.evaluated, first.skipped
    ));
    for metric in &metrics {
        let summary = mean_metric(&run, &qrels, *metric);
        text.push_str(&format!("{:<8} {:.4}\n", metric.name(), summary.mean));
        metric_values.insert(metric.name(), summary.mean);
    }
    let txt_path = config.artifact("eval.txt");
    std::fs::write(&txt_path, &text).map_err(|e| Error::io(&txt_path, e))?;
    #[derive(Serialize)]
    struct EvalFile<'a> {
        format: &'static str,
        version: u32,
        config_hash: &'a str,
        run: String,
        evaluated: usize,
        skipped: usize,
        metrics: &'a BTreeMap<String, f64>,
    }
    let json_path = config.artifact("eval.json");
    let json = serde_json::to_string_pretty(&EvalFile {
        format: "erank-eval",
        version: 1,
        config_hash: &config.hash(),
        run: run_path.display().to_string(),
        evaluated: first.evaluated,
        skipped: first.skipped,
        metrics: &metric_values,
    })
    .expect("eval serializes");
    std::fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
    record_provenance(&config.paths.workdir, &config.hash(), &["eval.txt", "eval.json"])?;
    print!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct ComparedMetric {
    metric: String,
    baseline: f64,
    system: f64,
    relative: Option<f64>,
    p_value: f64,
    significant: bool,
    wins: usize,
    ties: usize,
    losses: usize,
}

/// Compare two run files metric by metric with the paired sign-flip test
/// and write `compare.{txt,json}`.
pub fn stage_compare(config: &ExperimentConfig) -> Result<()> {
    ensure_workdir(config)?;
    let Some(section) = &config.compare else {
        return Err(Error::Config(
            "compare needs a [compare] section with `baseline` and `system` run paths".into(),
        ));
    };
    let baseline = RunResult::from_trec_file(&section.baseline)?;
    let system = RunResult::from_trec_file(&section.system)?;
    let qrels = Qrels::from_file(&config.paths.qrels)?;
    let alpha = config.eval.significance_level;
    let mut compared = Vec::new();
    for metric in eval_metrics(config) {
        let base = mean_metric(&baseline, &qrels, metric);
        let sys = mean_metric(&system, &qrels, metric);
        let outcome = permutation_test(
            &system,
            &baseline,
            &qrels,
            metric,
            config.eval.permutation_iterations,
            config.run.seed,
            config.eval.permutation_mode,
        )?;
        let (wins, ties, losses) =
            wtl_counts(&system, &baseline, &qrels, metric, WTL_EPSILON)?;
        compared.push(ComparedMetric {
            metric: metric.name(),
            baseline: base.mean,
            system: sys.mean,
            relative: relative_improvement(base.mean, sys.mean).ok(),
            p_value: outcome.p_value,
            significant: outcome.p_value < alpha,
            wins,
            ties,
            losses,
        });
    }
    let paired = crate::evalkit::paired_diffs(&system, &baseline, &qrels, eval_metrics(config)[0])?
        .len();
    let mut text = String::new();
    text.push_str(&format!("baseline: {}\n", section.baseline.display()));
    text.push_str(&format!("system:   {}\n", section.system.display()));
    text.push_str(&format!("paired queries: {paired}\n\n"));
    text.push_str(&format!(
        "{:<8} {:>9} {:>9} {:>10} {:>9}  {}\n",
        "metric", "baseline", "system", "delta", "p-value", "W/T/L"
    ));
    for row in &compared {
        let delta = match row.relative {
            Some(pct) => format!(
                "{}{}",
                format_percent(pct),
                if row.significant { "\u{2020}" } else { "" }
            ),
            None => "n/a".to_string(),
        };
        text.push_str(&format!(
            "{:<8} {:>9.4} {:>9.4} {:>10} {:>9.4}  {}\n",
            row.metric,
            row.baseline,
            row.system,
            delta,
            row.p_value,
            format_wtl(row.wins, row.ties, row.losses)
        ));
    }
    text.push_str(&format!(
        "\n\u{2020} = significant at p < {alpha} (paired sign-flip test)\n"
    ));
    let txt_path = config.artifact("compare.txt");
    std::fs::write(&txt_path, &text).map_err(|e| Error::io(&txt_path, e))?;
    #[derive(Serialize)]
    struct CompareFile<'a> {
        format: &'static str,
        version: u32,
        config_hash: &'a str,
        baseline: String,
        system: String,
        paired_queries: usize,
        significance_level: f64,
        metrics: &'a [ComparedMetric],
    }
    let json_path = config.artifact("compare.json");
    let json = serde_json::to_string_pretty(&CompareFile {
        format: "erank-compare",
        version: 1,
        config_hash: &config.hash(),
        baseline: section.baseline.display().to_string(),
        system: section.system.display().to_string(),
        paired_queries: paired,
        significance_level: alpha,
        metrics: &compared,
    })
    .expect("compare serializes");
    std::fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
    record_provenance(
        &config.paths.workdir,
        &config.hash(),
        &["compare.txt", "compare.json"],
    )?;
    print!("{text}");
    Ok(())
}

/// Summarize per-group weight mass of the trained fold models and write
/// `weights.{txt,json}`.
pub fn stage_weights(config: &ExperimentConfig) -> Result<()> {
    ensure_workdir(config)?;
    let (plan, models) = load_fold_models(config)?;
    let mut text = String::new();
    let mut per_fold: Vec<BTreeMap<String, f64>> = Vec::new();
    for (fold, model) in models.iter().enumerate() {
        let groups = default_feature_groups(&model.feature_names);
        let dist = weight_distribution(model, &groups)?;
        let line = dist
            .iter()
            .map(|(g, pct)| format!("{g} {pct:.2}%"))
            .collect::<Vec<_>>()
            .join("  ");
        text.push_str(&format!("fold {fold}: {line}\n"));
        per_fold.push(dist);
    }
    let mut mean: BTreeMap<String, f64> = BTreeMap::new();
    for dist in &per_fold {
        for (group, pct) in dist {
            *mean.entry(group.clone()).or_insert(0.0) += pct / plan.folds as f64;
        }
    }
    let line = mean
        .iter()
        .map(|(g, pct)| format!("{g} {pct:.2}%"))
        .collect::<Vec<_>>()
        .join("  ");
    text.push_str(&format!("mean:   {line}\n"));
    let txt_path = config.artifact("weights.txt");
    std::fs::write(&txt_path, &text).map_err(|e| Error::io(&txt_path, e))?;
    #[derive(Serialize)]
    struct WeightsFile<'a> {
        format: &'static str,
        version: u32,
        config_hash: &'a str,
        folds: &'a [BTreeMap<String, f64>],
        mean: &'a BTreeMap<String, f64>,
    }
    let json_path = config.artifact("weights.json");
    let json = serde_json::to_string_pretty(&WeightsFile {
        format: "erank-weights",
        version: 1,
        config_hash: &config.hash(),
        folds: &per_fold,
        mean: &mean,
    })
    .expect("weights serializes");
    std::fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
    record_provenance(
        &config.paths.workdir,
        &config.hash(),
        &["weights.txt", "weights.json"],
    )?;
    print!("{text}");
    Ok(())
}

/// One pipeline stage, named after its CLI subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Index,
    Embed,
    Candidates,
    Features,
    Train,
    Rerank,
    Eval,
    Compare,
    Weights,
    Pipeline,
}

/// Run one stage (or the whole pipeline in order).
pub fn run_stage(config: &ExperimentConfig, stage: Stage) -> Result<()> {
    match stage {
        Stage::Ingest => stage_ingest(config),
        Stage::Index => stage_index(config),
        Stage::Embed => stage_embed(config),
        Stage::Candidates => stage_candidates(config),
        Stage::Features => stage_features(config),
        Stage::Train => stage_train(config),
        Stage::Rerank => stage_rerank(config),
        Stage::Eval => stage_eval(config),
        Stage::Compare => stage_compare(config),
        Stage::Weights => stage_weights(config),
        Stage::Pipeline => {
            let mut stages = vec![Stage::Ingest, Stage::Index];
            if config.run.variant.uses_transe() {
                stages.push(Stage::Embed);
            }
            stages.extend([
                Stage::Candidates,
                Stage::Features,
                Stage::Train,
                Stage::Rerank,
                Stage::Eval,
            ]);
            for stage in stages {
                run_stage(config, stage)?;
            }
            Ok(())
        }
    }
}
