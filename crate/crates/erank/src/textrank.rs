//! Text-match ranking: Dirichlet language models, SDM, FSDM, BM25,
//! coordinate match and cosine similarity, plus FSDM candidate generation
//! and the 26-feature extraction used by the learning-to-rank stage.
//!
//! Feature layout (fixed, indices into [`FeatureVector::values`]):
//!
//! | index | feature |
//! |-------|---------|
//! | 0     | FSDM over all fields |
//! | 1-5   | SDM per field (names, attributes, categories, SimEn, RelEn) |
//! | 6-10  | BM25 per field |
//! | 11-15 | unigram LM per field |
//! | 16-20 | coordinate match per field |
//! | 21-25 | cosine similarity per field |
//! | 26    | ELR mention match (when enabled) |
//! | 26/27 | TransE embedding match (when enabled; 27 if ELR is also on) |

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Field;
use crate::entmatch::{elr_feature, transe_feature, EmbeddingStore, QueryRecord};
use crate::error::{Error, Result};
use crate::index::FieldedIndex;

/// Floor substituted for an unseen n-gram's collection probability mass so
/// log scores stay finite.
pub const EPS_FLOOR: f64 = 1e-9;

/// Dirichlet-smoothed probability `(tf + mu*cf/|C|) / (|E| + mu)`, with the
/// numerator floored at [`EPS_FLOOR`] when the collection frequency is zero
/// (which also covers empty collections without dividing by zero).
pub fn dirichlet_smoothed_prob(tf: u64, cf: u64, collection_len: u64, entity_len: u64, mu: f64) -> f64 {
    let numerator = if cf == 0 {
        EPS_FLOOR
    } else {
        tf as f64 + mu * (cf as f64 / collection_len as f64)
    };
    numerator / (entity_len as f64 + mu)
}

/// Log of [`dirichlet_smoothed_prob`].
pub fn dirichlet_smoothed_log(tf: u64, cf: u64, collection_len: u64, entity_len: u64, mu: f64) -> f64 {
    dirichlet_smoothed_prob(tf, cf, collection_len, entity_len, mu).ln()
}

/// SDM mixing weights and smoothing, applied to a single field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdmParams {
    pub lambda_t: f64,
    pub lambda_o: f64,
    pub lambda_u: f64,
    /// Dirichlet prior.
    pub mu: f64,
    /// Unordered-window size; must match the index.
    pub window: usize,
}

impl Default for SdmParams {
    fn default() -> Self {
        SdmParams {
            lambda_t: 0.8,
            lambda_o: 0.1,
            lambda_u: 0.1,
            mu: 2500.0,
            window: 8,
        }
    }
}

fn validate_lambdas(lambda_t: f64, lambda_o: f64, lambda_u: f64) -> Result<()> {
    if lambda_t < 0.0 || lambda_o < 0.0 || lambda_u < 0.0 {
        return Err(Error::Config("SDM lambdas must be non-negative".into()));
    }
    let sum = lambda_t + lambda_o + lambda_u;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "SDM lambdas must sum to 1, got {sum}"
        )));
    }
    Ok(())
}

impl SdmParams {
    pub fn validate(&self) -> Result<()> {
        validate_lambdas(self.lambda_t, self.lambda_o, self.lambda_u)?;
        if self.mu <= 0.0 {
            return Err(Error::Config("Dirichlet prior mu must be > 0".into()));
        }
        if self.window < 2 {
            return Err(Error::Config("window size must be >= 2".into()));
        }
        Ok(())
    }
}

/// FSDM parameters: per-clique field weights and per-field priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FsdmParams {
    pub lambda_t: f64,
    pub lambda_o: f64,
    pub lambda_u: f64,
    /// w_f^T in field order (names, attributes, categories, SimEn, RelEn).
    pub term_weights: [f64; 5],
    /// w_f^O.
    pub ordered_weights: [f64; 5],
    /// w_f^U.
    pub unordered_weights: [f64; 5],
    /// Per-field Dirichlet priors.
    pub mu: [f64; 5],
    pub window: usize,
}

impl Default for FsdmParams {
    fn default() -> Self {
        FsdmParams {
            lambda_t: 0.8,
            lambda_o: 0.1,
            lambda_u: 0.1,
            term_weights: [0.2; 5],
            ordered_weights: [0.2; 5],
            unordered_weights: [0.2; 5],
            mu: [2500.0; 5],
            window: 8,
        }
    }
}

impl FsdmParams {
    pub fn validate(&self) -> Result<()> {
        validate_lambdas(self.lambda_t, self.lambda_o, self.lambda_u)?;
        for (name, weights) in [
            ("term", &self.term_weights),
            ("ordered", &self.ordered_weights),
            ("unordered", &self.unordered_weights),
        ] {
            if weights.iter().any(|&w| w < 0.0) {
                return Err(Error::Config(format!(
                    "FSDM {name} field weights must be non-negative"
                )));
            }
            let sum: f64 = weights.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "FSDM {name} field weights must sum to 1, got {sum}"
                )));
            }
        }
        if self.mu.iter().any(|&m| m <= 0.0) {
            return Err(Error::Config("FSDM field priors must be > 0".into()));
        }
        if self.window < 2 {
            return Err(Error::Config("window size must be >= 2".into()));
        }
        Ok(())
    }

    /// SDM restricted to one field, with that field's prior.
    pub fn one_hot(field: Field, mu: f64) -> FsdmParams {
        let mut weights = [0.0; 5];
        weights[field.index()] = 1.0;
        FsdmParams {
            term_weights: weights,
            ordered_weights: weights,
            unordered_weights: weights,
            mu: [mu; 5],
            ..Default::default()
        }
    }
}

fn check_window(params_window: usize, index: &FieldedIndex) -> Result<()> {
    if params_window != index.window() {
        return Err(Error::Config(format!(
            "params window {} does not match index window {}",
            params_window,
            index.window()
        )));
    }
    Ok(())
}

/// Floored unigram log-probability; total even for collection-empty fields.
fn unigram_log(index: &FieldedIndex, entity: &str, field: Field, term: &str, mu: f64) -> Result<f64> {
    let s = index.unigram_stats(entity, field, term)?;
    Ok(dirichlet_smoothed_log(s.tf, s.cf, s.collection_len, s.entity_len, mu))
}

/// Dirichlet query log-likelihood for one term in one field.
pub fn lm_unigram(
    index: &FieldedIndex,
    entity: &str,
    field: Field,
    term: &str,
    mu: f64,
) -> Result<f64> {
    if mu <= 0.0 {
        return Err(Error::Config("Dirichlet prior mu must be > 0".into()));
    }
    if index.field_total_len(field) == 0 {
        return Err(Error::FieldEmpty {
            field: field.name().to_string(),
        });
    }
    unigram_log(index, entity, field, term, mu)
}

/// Sequential dependence score of a query against one entity field.
pub fn sdm_score(
    index: &FieldedIndex,
    query: &[String],
    entity: &str,
    field: Field,
    params: &SdmParams,
) -> Result<f64> {
    params.validate()?;
    check_window(params.window, index)?;
    if query.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let mut sum_t = 0.0;
    for term in query {
        sum_t += unigram_log(index, entity, field, term, params.mu)?;
    }
    let mut sum_o = 0.0;
    let mut sum_u = 0.0;
    if params.lambda_o != 0.0 {
        for pair in query.windows(2) {
            let s = index.ordered_bigram_stats(entity, field, &pair[0], &pair[1])?;
            let len = index.field_len(entity, field)?;
            sum_o += dirichlet_smoothed_log(s.tf, s.cf, index.field_total_len(field), len, params.mu);
        }
    }
    if params.lambda_u != 0.0 {
        for pair in query.windows(2) {
            let s = index.unordered_window_stats(entity, field, &pair[0], &pair[1])?;
            let len = index.field_len(entity, field)?;
            sum_u += dirichlet_smoothed_log(s.tf, s.cf, index.field_total_len(field), len, params.mu);
        }
    }
    Ok(params.lambda_t * sum_t + params.lambda_o * sum_o + params.lambda_u * sum_u)
}

/// Per-clique field mixture used by FSDM: probabilities are mixed across
/// fields first, the log is taken once.
fn fsdm_clique<F>(index: &FieldedIndex, entity: &str, weights: &[f64; 5], mu: &[f64; 5], stat: F) -> Result<f64>
where
    F: Fn(Field) -> Result<(u64, u64)>,
{
    let mut mix = 0.0;
    for field in Field::ALL {
        let w = weights[field.index()];
        if w == 0.0 {
            continue;
        }
        let (tf, cf) = stat(field)?;
        let prob = dirichlet_smoothed_prob(
            tf,
            cf,
            index.field_total_len(field),
            index.field_len(entity, field)?,
            mu[field.index()],
        );
        mix += w * prob;
    }
    Ok(mix.ln())
}

/// Fielded sequential dependence score of a query against an entity.
pub fn fsdm_score(
    index: &FieldedIndex,
    query: &[String],
    entity: &str,
    params: &FsdmParams,
) -> Result<f64> {
    params.validate()?;
    check_window(params.window, index)?;
    if query.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let mut sum_t = 0.0;
    for term in query {
        sum_t += fsdm_clique(index, entity, &params.term_weights, &params.mu, |field| {
            let s = index.unigram_stats(entity, field, term)?;
            Ok((s.tf, s.cf))
        })?;
    }
    let mut sum_o = 0.0;
    let mut sum_u = 0.0;
    if params.lambda_o != 0.0 {
        for pair in query.windows(2) {
            sum_o += fsdm_clique(index, entity, &params.ordered_weights, &params.mu, |field| {
                let s = index.ordered_bigram_stats(entity, field, &pair[0], &pair[1])?;
                Ok((s.tf, s.cf))
            })?;
        }
    }
    if params.lambda_u != 0.0 {
        for pair in query.windows(2) {
            sum_u += fsdm_clique(index, entity, &params.unordered_weights, &params.mu, |field| {
                let s = index.unordered_window_stats(entity, field, &pair[0], &pair[1])?;
                Ok((s.tf, s.cf))
            })?;
        }
    }
    Ok(params.lambda_t * sum_t + params.lambda_o * sum_o + params.lambda_u * sum_u)
}

/// Robertson idf shared by BM25 and the cosine feature.
fn idf(index: &FieldedIndex, field: Field, term: &str) -> f64 {
    let docs = index.entity_count() as f64;
    let df = index.doc_freq(field, term) as f64;
    ((docs - df + 0.5) / (df + 0.5) + 1.0).ln()
}

/// Okapi BM25 over one field; an empty field collection scores 0.
pub fn bm25(
    index: &FieldedIndex,
    query: &[String],
    entity: &str,
    field: Field,
    k1: f64,
    b: f64,
) -> Result<f64> {
    if k1 < 0.0 || !(0.0..=1.0).contains(&b) {
        return Err(Error::Config(format!("invalid BM25 parameters k1={k1} b={b}")));
    }
    let collection_len = index.field_total_len(field);
    let entity_len = index.field_len(entity, field)?;
    if collection_len == 0 {
        return Ok(0.0);
    }
    let avg_len = collection_len as f64 / index.entity_count() as f64;
    let mut score = 0.0;
    for term in query {
        let tf = index.unigram_stats(entity, field, term)?.tf as f64;
        if tf == 0.0 {
            continue;
        }
        let norm = tf + k1 * (1.0 - b + b * entity_len as f64 / avg_len);
        score += idf(index, field, term) * tf * (k1 + 1.0) / norm;
    }
    Ok(score)
}

/// Number of distinct query terms present in the field.
pub fn coordinate_match(
    index: &FieldedIndex,
    query: &[String],
    entity: &str,
    field: Field,
) -> Result<f64> {
    let mut seen = std::collections::BTreeSet::new();
    let mut count = 0u64;
    for term in query {
        if seen.insert(term.as_str()) && index.unigram_stats(entity, field, term)?.tf > 0 {
            count += 1;
        }
    }
    Ok(count as f64)
}

/// Cosine similarity between tf-idf vectors of the query and the field.
pub fn cosine_sim(
    index: &FieldedIndex,
    query: &[String],
    entity: &str,
    field: Field,
) -> Result<f64> {
    let doc = index.doc(entity)?;
    let mut doc_tf: BTreeMap<&str, u64> = BTreeMap::new();
    for token in doc.tokens(field) {
        *doc_tf.entry(token.as_str()).or_insert(0) += 1;
    }
    let mut query_tf: BTreeMap<&str, u64> = BTreeMap::new();
    for term in query {
        *query_tf.entry(term.as_str()).or_insert(0) += 1;
    }
    let mut dot = 0.0;
    let mut q_norm = 0.0;
    for (term, &qtf) in &query_tf {
        let w = qtf as f64 * idf(index, field, term);
        q_norm += w * w;
        if let Some(&dtf) = doc_tf.get(term) {
            dot += w * dtf as f64 * idf(index, field, term);
        }
    }
    let mut d_norm = 0.0;
    for (term, &dtf) in &doc_tf {
        let w = dtf as f64 * idf(index, field, term);
        d_norm += w * w;
    }
    if q_norm == 0.0 || d_norm == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (q_norm.sqrt() * d_norm.sqrt()))
}

/// Top-k entities by FSDM, descending, ties broken by ascending entity id.
/// Entities without any query term in any field are excluded.
pub fn generate_candidates(
    index: &FieldedIndex,
    query: &[String],
    params: &FsdmParams,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::Config("candidate count k must be >= 1".into()));
    }
    if query.is_empty() {
        return Err(Error::EmptyQuery);
    }
    params.validate()?;
    check_window(params.window, index)?;
    let mut matching: Vec<&str> = Vec::new();
    for field in Field::ALL {
        for term in query {
            matching.extend(index.matching_entities(field, term));
        }
    }
    matching.sort_unstable();
    matching.dedup();
    let mut scored = Vec::with_capacity(matching.len());
    for entity in matching {
        let score = fsdm_score(index, query, entity, params)?;
        scored.push((entity.to_string(), score));
    }
    sort_ranking(&mut scored);
    scored.truncate(k);
    Ok(scored)
}

/// Descending score, ascending entity id on ties.
pub fn sort_ranking(ranking: &mut [(String, f64)]) {
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// One (query, entity) feature row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub qid: String,
    pub entity: String,
    pub values: Vec<f64>,
    /// Graded relevance label.
    pub label: u32,
}

/// Parameters for the full feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub sdm: SdmParams,
    pub fsdm: FsdmParams,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    /// Dirichlet prior of the mention-match feature; `None` disables ELR.
    pub elr_mu: Option<f64>,
    /// Enables the embedding-match feature (requires an embedding store).
    pub transe: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sdm: SdmParams::default(),
            fsdm: FsdmParams::default(),
            bm25_k1: 1.2,
            bm25_b: 0.75,
            elr_mu: None,
            transe: false,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        self.sdm.validate()?;
        self.fsdm.validate()?;
        if self.bm25_k1 < 0.0 || !(0.0..=1.0).contains(&self.bm25_b) {
            return Err(Error::Config("invalid BM25 parameters".into()));
        }
        if let Some(mu) = self.elr_mu {
            if mu <= 0.0 {
                return Err(Error::Config("ELR prior mu must be > 0".into()));
            }
        }
        Ok(())
    }

    pub fn feature_count(&self) -> usize {
        26 + usize::from(self.elr_mu.is_some()) + usize::from(self.transe)
    }

    /// Names in layout order; doubles as the model's feature layout.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = vec!["fsdm".to_string()];
        for prefix in ["sdm", "bm25", "lm", "coord", "cosine"] {
            for field in Field::ALL {
                names.push(format!("{prefix}_{}", field.name().to_ascii_lowercase()));
            }
        }
        if self.elr_mu.is_some() {
            names.push("elr".to_string());
        }
        if self.transe {
            names.push("transe".to_string());
        }
        names
    }
}

/// Extract the fixed-layout feature vector for one (query, entity) pair.
/// The label is left at 0; callers attach qrels grades separately.
pub fn extract_features(
    index: &FieldedIndex,
    query: &QueryRecord,
    entity: &str,
    config: &FeatureConfig,
    embeddings: Option<&EmbeddingStore>,
) -> Result<FeatureVector> {
    config.validate()?;
    if query.tokens.is_empty() {
        return Err(Error::EmptyQuery);
    }
    if config.transe && embeddings.is_none() {
        return Err(Error::Config(
            "TransE feature enabled but no embedding store supplied".into(),
        ));
    }
    let tokens = &query.tokens;
    let mut values = Vec::with_capacity(config.feature_count());
    values.push(fsdm_score(index, tokens, entity, &config.fsdm)?);
    for field in Field::ALL {
        values.push(sdm_score(index, tokens, entity, field, &config.sdm)?);
    }
    for field in Field::ALL {
        values.push(bm25(index, tokens, entity, field, config.bm25_k1, config.bm25_b)?);
    }
    for field in Field::ALL {
        let mut lm = 0.0;
        for term in tokens {
            lm += unigram_log(index, entity, field, term, config.sdm.mu)?;
        }
        values.push(lm);
    }
    for field in Field::ALL {
        values.push(coordinate_match(index, tokens, entity, field)?);
    }
    for field in Field::ALL {
        values.push(cosine_sim(index, tokens, entity, field)?);
    }
    if let Some(mu) = config.elr_mu {
        values.push(elr_feature(query, index.doc(entity)?, index, mu)?);
    }
    if config.transe {
        values.push(transe_feature(query, embeddings.unwrap(), entity)?);
    }
    debug_assert!(values.iter().all(|v| v.is_finite()));
    Ok(FeatureVector {
        qid: query.id.clone(),
        entity: entity.to_string(),
        values,
        label: 0,
    })
}

/// Write rows in the LTR text format:
/// `label qid:<id> 1:<v> 2:<v> ... #<entity-id>`.
pub fn write_feature_file(path: &Path, rows: &[FeatureVector]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&format!("{} qid:{}", row.label, row.qid));
        for (i, v) in row.values.iter().enumerate() {
            out.push_str(&format!(" {}:{}", i + 1, v));
        }
        out.push_str(&format!(" #{}\n", row.entity));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parse rows written by [`write_feature_file`].
pub fn read_feature_file(path: &Path) -> Result<Vec<FeatureVector>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (body, entity) = line
            .split_once('#')
            .ok_or_else(|| Error::parse(path, lineno, "missing #entity comment"))?;
        let entity = entity.trim();
        if entity.is_empty() {
            return Err(Error::parse(path, lineno, "empty entity id"));
        }
        let mut parts = body.split_whitespace();
        let label: u32 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(path, lineno, "bad label"))?;
        let qid = parts
            .next()
            .and_then(|s| s.strip_prefix("qid:"))
            .ok_or_else(|| Error::parse(path, lineno, "bad qid column"))?
            .to_string();
        let mut values = Vec::new();
        for part in parts {
            let (idx, value) = part
                .split_once(':')
                .ok_or_else(|| Error::parse(path, lineno, "bad feature column"))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::parse(path, lineno, "bad feature index"))?;
            if idx != values.len() + 1 {
                return Err(Error::parse(path, lineno, "feature indices must be 1..n in order"));
            }
            let value: f64 = value
                .parse()
                .map_err(|_| Error::parse(path, lineno, "bad feature value"))?;
            values.push(value);
        }
        if values.is_empty() {
            return Err(Error::parse(path, lineno, "row has no features"));
        }
        rows.push(FeatureVector {
            qid,
            entity: entity.to_string(),
            values,
            label,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, EntityDoc};
    use crate::entmatch::Annotation;

    fn doc(id: &str, fields: &[(Field, &[&str])]) -> EntityDoc {
        let mut d = EntityDoc::new(id);
        for (field, tokens) in fields {
            d.fields[field.index()] = tokens.iter().map(|t| t.to_string()).collect();
        }
        d
    }

    fn index_of(docs: Vec<EntityDoc>, window: usize) -> FieldedIndex {
        let mut docs = docs;
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        FieldedIndex::build(&Corpus { docs }, window).unwrap()
    }

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn dirichlet_hand_values() {
        // tf=2, mu=100, cf/|C_f| = 5/1000, |E_f|=10: log(2.5/110)
        let v = dirichlet_smoothed_log(2, 5, 1000, 10, 100.0);
        assert!((v - (-3.784189633918262)).abs() < 1e-12, "{v}");
        // tf=0 same params: log(0.5/110)
        let v = dirichlet_smoothed_log(0, 5, 1000, 10, 100.0);
        assert!((v - (-5.393627546352362)).abs() < 1e-12, "{v}");
        // cf=0: floor log(1e-9/110)
        let v = dirichlet_smoothed_log(0, 0, 1000, 10, 100.0);
        assert!((v - (1e-9f64 / 110.0).ln()).abs() < 1e-12, "{v}");
    }

    #[test]
    fn lm_unigram_matches_formula() {
        let index = index_of(vec![doc("e1", &[(Field::Names, &["a", "b", "a"])])], 8);
        let got = lm_unigram(&index, "e1", Field::Names, "a", 100.0).unwrap();
        let want = ((2.0 + 100.0 * (2.0f64 / 3.0)) / (3.0 + 100.0)).ln();
        assert_eq!(got, want);
    }

    #[test]
    fn lm_unigram_rejects_empty_field_collection() {
        let index = index_of(vec![doc("e1", &[(Field::Names, &["a"])])], 8);
        assert!(matches!(
            lm_unigram(&index, "e1", Field::Categories, "a", 100.0),
            Err(Error::FieldEmpty { .. })
        ));
    }

    #[test]
    fn sdm_reduces_to_unigram_lm() {
        let index = index_of(
            vec![
                doc("e1", &[(Field::Names, &["harry", "potter", "film"])]),
                doc("e2", &[(Field::Names, &["harry", "green"])]),
            ],
            8,
        );
        let query = toks(&["harry", "potter"]);
        let params = SdmParams {
            lambda_t: 1.0,
            lambda_o: 0.0,
            lambda_u: 0.0,
            mu: 100.0,
            window: 8,
        };
        for entity in ["e1", "e2"] {
            let sdm = sdm_score(&index, &query, entity, Field::Names, &params).unwrap();
            let lm: f64 = query
                .iter()
                .map(|t| lm_unigram(&index, entity, Field::Names, t, 100.0).unwrap())
                .sum();
            assert_eq!(sdm, lm);
        }
    }

    #[test]
    fn sdm_single_term_has_no_bigram_part() {
        let index = index_of(vec![doc("e1", &[(Field::Names, &["harry", "potter"])])], 8);
        let params = SdmParams {
            mu: 100.0,
            ..Default::default()
        };
        let got = sdm_score(&index, &toks(&["harry"]), "e1", Field::Names, &params).unwrap();
        let want =
            params.lambda_t * lm_unigram(&index, "e1", Field::Names, "harry", 100.0).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn sdm_two_term_hand_value() {
        // Single doc [harry potter film]: every clique probability is
        // (1 + 100*(1/3)) / 103, so the score is 1.8 * ln of that.
        let index = index_of(vec![doc("e1", &[(Field::Names, &["harry", "potter", "film"])])], 8);
        let params = SdmParams {
            lambda_t: 0.8,
            lambda_o: 0.1,
            lambda_u: 0.1,
            mu: 100.0,
            window: 8,
        };
        let got = sdm_score(&index, &toks(&["harry", "potter"]), "e1", Field::Names, &params)
            .unwrap();
        let clique = ((1.0 + 100.0 * (1.0f64 / 3.0)) / 103.0).ln();
        let want = 0.8 * (clique + clique) + 0.1 * clique + 0.1 * clique;
        assert!((got - want).abs() < 1e-12);
        assert!((got - (-1.9775021196025975)).abs() < 1e-10, "{got}");
    }

    #[test]
    fn sdm_rejects_empty_query() {
        let index = index_of(vec![doc("e1", &[(Field::Names, &["a"])])], 8);
        assert!(matches!(
            sdm_score(&index, &[], "e1", Field::Names, &SdmParams::default()),
            Err(Error::EmptyQuery)
        ));
    }

    #[test]
    fn sdm_rejects_window_mismatch() {
        let index = index_of(vec![doc("e1", &[(Field::Names, &["a"])])], 4);
        let err = sdm_score(&index, &toks(&["a"]), "e1", Field::Names, &SdmParams::default());
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn fsdm_one_hot_equals_sdm() {
        let index = index_of(
            vec![
                doc(
                    "e1",
                    &[
                        (Field::Names, &["harry", "potter"]),
                        (Field::Attributes, &["a", "boy", "wizard", "harry"]),
                    ],
                ),
                doc("e2", &[(Field::Names, &["harry"]), (Field::Attributes, &["x"])]),
            ],
            8,
        );
        let query = toks(&["harry", "potter"]);
        for field in [Field::Names, Field::Attributes] {
            let fsdm = FsdmParams::one_hot(field, 50.0);
            let sdm = SdmParams {
                mu: 50.0,
                ..Default::default()
            };
            let a = fsdm_score(&index, &query, "e1", &fsdm).unwrap();
            let b = sdm_score(&index, &query, "e1", field, &sdm).unwrap();
            assert_eq!(a, b, "field {field}");
        }
    }

    #[test]
    fn fsdm_mixes_probabilities_before_log() {
        // One term, two populated fields with weights 0.5/0.5: the clique
        // is ln((p_names + p_attributes)/2).
        let index = index_of(
            vec![doc(
                "e1",
                &[
                    (Field::Names, &["harry", "potter"]),
                    (Field::Attributes, &["harry", "x", "y"]),
                ],
            )],
            8,
        );
        let mut params = FsdmParams {
            term_weights: [0.5, 0.5, 0.0, 0.0, 0.0],
            mu: [100.0; 5],
            lambda_t: 1.0,
            lambda_o: 0.0,
            lambda_u: 0.0,
            ..Default::default()
        };
        params.ordered_weights = params.term_weights;
        params.unordered_weights = params.term_weights;
        let got = fsdm_score(&index, &toks(&["harry"]), "e1", &params).unwrap();
        let p_names: f64 = (1.0 + 100.0 * (1.0 / 2.0)) / (2.0 + 100.0);
        let p_attr: f64 = (1.0 + 100.0 * (1.0 / 3.0)) / (3.0 + 100.0);
        let want = (0.5 * p_names + 0.5 * p_attr).ln();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn fsdm_equal_probabilities_ignore_weights() {
        // Identical stats in names and attributes: any weighting yields ln p.
        let index = index_of(
            vec![doc(
                "e1",
                &[(Field::Names, &["a", "b"]), (Field::Attributes, &["a", "b"])],
            )],
            8,
        );
        let mut w1 = FsdmParams::one_hot(Field::Names, 100.0);
        w1.lambda_t = 1.0;
        w1.lambda_o = 0.0;
        w1.lambda_u = 0.0;
        let mut w2 = w1.clone();
        w2.term_weights = [0.3, 0.7, 0.0, 0.0, 0.0];
        let a = fsdm_score(&index, &toks(&["a"]), "e1", &w1).unwrap();
        let b = fsdm_score(&index, &toks(&["a"]), "e1", &w2).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn bm25_zero_when_no_term_matches() {
        let index = index_of(vec![doc("e1", &[(Field::Names, &["a", "b"])])], 8);
        let score = bm25(&index, &toks(&["zz", "yy"]), "e1", Field::Names, 1.2, 0.75).unwrap();
        assert_eq!(score, 0.0);
        // unchanged with a different k1 while tf = 0
        let score = bm25(&index, &toks(&["zz"]), "e1", Field::Names, 2.4, 0.75).unwrap();
        assert_eq!(score, 0.0);
    }

    #[test]
    fn bm25_tf1_at_average_length_is_idf() {
        // Both docs have |E_f| = 2 = avglen; tf("a") = 1 in e1.
        let index = index_of(
            vec![
                doc("e1", &[(Field::Names, &["a", "b"])]),
                doc("e2", &[(Field::Names, &["c", "d"])]),
            ],
            8,
        );
        let got = bm25(&index, &toks(&["a"]), "e1", Field::Names, 1.2, 0.75).unwrap();
        let want = ((2.0 - 1.0 + 0.5) / (1.0 + 0.5) + 1.0f64).ln();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn bm25_empty_field_collection_scores_zero() {
        let index = index_of(vec![doc("e1", &[(Field::Names, &["a"])])], 8);
        let got = bm25(&index, &toks(&["a"]), "e1", Field::SimEn, 1.2, 0.75).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn coordinate_match_counts_distinct_present_terms() {
        let index = index_of(vec![doc("e1", &[(Field::Names, &["a", "c", "c"])])], 8);
        assert_eq!(
            coordinate_match(&index, &toks(&["x", "y"]), "e1", Field::Names).unwrap(),
            0.0
        );
        assert_eq!(
            coordinate_match(&index, &toks(&["a", "c"]), "e1", Field::Names).unwrap(),
            2.0
        );
        assert_eq!(
            coordinate_match(&index, &toks(&["a", "b", "c"]), "e1", Field::Names).unwrap(),
            2.0
        );
        // duplicates in the query count once
        assert_eq!(
            coordinate_match(&index, &toks(&["a", "a", "a"]), "e1", Field::Names).unwrap(),
            1.0
        );
    }

    #[test]
    fn cosine_identical_multiset_is_one() {
        let index = index_of(
            vec![
                doc("e1", &[(Field::Names, &["a", "b", "a"])]),
                doc("e2", &[(Field::Names, &["z"])]),
            ],
            8,
        );
        let got = cosine_sim(&index, &toks(&["a", "b", "a"]), "e1", Field::Names).unwrap();
        assert!((got - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_disjoint_is_zero() {
        let index = index_of(vec![doc("e1", &[(Field::Names, &["a", "b"])])], 8);
        let got = cosine_sim(&index, &toks(&["x", "y"]), "e1", Field::Names).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn cosine_partial_overlap_hand_value() {
        let index = index_of(
            vec![
                doc("e1", &[(Field::Names, &["a", "b"])]),
                doc("e2", &[(Field::Names, &["a", "c"])]),
            ],
            8,
        );
        let got = cosine_sim(&index, &toks(&["a", "x"]), "e1", Field::Names).unwrap();
        let idf_of = |df: f64| ((2.0 - df + 0.5) / (df + 0.5) + 1.0f64).ln();
        let (ia, ib, ix) = (idf_of(2.0), idf_of(1.0), idf_of(0.0));
        let want = (ia * ia) / ((ia * ia + ix * ix).sqrt() * (ia * ia + ib * ib).sqrt());
        assert!((got - want).abs() < 1e-12);
        assert!(got > 0.0 && got < 1.0);
    }

    #[test]
    fn lm_monotone_in_tf_at_fixed_lengths() {
        // Same field length, higher tf of the query term.
        let low = index_of(vec![doc("e1", &[(Field::Names, &["a", "b"])])], 8);
        let high = index_of(vec![doc("e1", &[(Field::Names, &["a", "a"])])], 8);
        let l = lm_unigram(&low, "e1", Field::Names, "a", 100.0).unwrap();
        let h = lm_unigram(&high, "e1", Field::Names, "a", 100.0).unwrap();
        assert!(h > l);
    }

    fn candidate_corpus() -> FieldedIndex {
        index_of(
            vec![
                doc("e1", &[(Field::Names, &["harry", "potter"])]),
                doc("e2", &[(Field::Names, &["harry", "potter"])]),
                doc("e3", &[(Field::Names, &["harry", "green"])]),
                doc("e4", &[(Field::Names, &["iron", "man"])]),
                doc("e5", &[(Field::Attributes, &["the", "potter", "wheel"])]),
            ],
            8,
        )
    }

    #[test]
    fn candidates_exclude_nonmatching_and_break_ties_by_id() {
        let index = candidate_corpus();
        let params = FsdmParams::default();
        let got = generate_candidates(&index, &toks(&["harry", "potter"]), &params, 100).unwrap();
        let ids: Vec<&str> = got.iter().map(|(id, _)| id.as_str()).collect();
        assert!(!ids.contains(&"e4"));
        assert_eq!(ids.len(), 4);
        // e1 and e2 have identical stats, so identical scores: id order.
        let p1 = ids.iter().position(|&i| i == "e1").unwrap();
        let p2 = ids.iter().position(|&i| i == "e2").unwrap();
        assert_eq!(got[p1].1, got[p2].1);
        assert!(p1 < p2);
    }

    #[test]
    fn candidates_match_exhaustive_scoring() {
        let index = candidate_corpus();
        let params = FsdmParams::default();
        let query = toks(&["harry", "potter"]);
        let got = generate_candidates(&index, &query, &params, 2).unwrap();
        // brute force: score everything that matches at least one term
        let mut brute: Vec<(String, f64)> = index
            .entity_ids()
            .filter(|id| {
                Field::ALL.iter().any(|&f| {
                    query
                        .iter()
                        .any(|t| index.unigram_stats(id, f, t).unwrap().tf > 0)
                })
            })
            .map(|id| {
                (
                    id.to_string(),
                    fsdm_score(&index, &query, id, &params).unwrap(),
                )
            })
            .collect();
        sort_ranking(&mut brute);
        brute.truncate(2);
        assert_eq!(got, brute);
    }

    #[test]
    fn candidates_small_corpus_returns_all_matches() {
        let index = candidate_corpus();
        let got =
            generate_candidates(&index, &toks(&["iron"]), &FsdmParams::default(), 100).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].0, "e4");
    }

    fn query_rec(id: &str, tokens: &[&str]) -> QueryRecord {
        QueryRecord {
            id: id.to_string(),
            tokens: toks(tokens),
            annotations: vec![Annotation {
                entity: "e1".to_string(),
                score: 1.0,
            }],
        }
    }

    #[test]
    fn feature_vector_lengths_follow_variant() {
        let index = candidate_corpus();
        let query = query_rec("q1", &["harry", "potter"]);
        let base = FeatureConfig::default();
        assert_eq!(
            extract_features(&index, &query, "e1", &base, None).unwrap().values.len(),
            26
        );
        let with_elr = FeatureConfig {
            elr_mu: Some(100.0),
            ..Default::default()
        };
        assert_eq!(
            extract_features(&index, &query, "e1", &with_elr, None).unwrap().values.len(),
            27
        );
        let mut store = EmbeddingStore::new(4);
        store.insert_entity("e1", vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let with_both = FeatureConfig {
            elr_mu: Some(100.0),
            transe: true,
            ..Default::default()
        };
        let fv = extract_features(&index, &query, "e1", &with_both, Some(&store)).unwrap();
        assert_eq!(fv.values.len(), 28);
        assert_eq!(with_both.feature_names().len(), 28);
    }

    #[test]
    fn features_finite_for_fully_absent_query() {
        let index = candidate_corpus();
        let query = query_rec("q1", &["zebra", "quark"]);
        let config = FeatureConfig {
            elr_mu: Some(100.0),
            ..Default::default()
        };
        let fv = extract_features(&index, &query, "e4", &config, None).unwrap();
        assert_eq!(fv.values.len(), 27);
        assert!(fv.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn transe_without_store_is_rejected() {
        let index = candidate_corpus();
        let query = query_rec("q1", &["harry"]);
        let config = FeatureConfig {
            transe: true,
            ..Default::default()
        };
        assert!(matches!(
            extract_features(&index, &query, "e1", &config, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn feature_file_round_trip() {
        let rows = vec![
            FeatureVector {
                qid: "q1".into(),
                entity: "e1".into(),
                values: vec![-3.5, 0.25, 1.0],
                label: 2,
            },
            FeatureVector {
                qid: "q2".into(),
                entity: "e9".into(),
                values: vec![0.0, -1.0000000001, 7.5e-3],
                label: 0,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.txt");
        write_feature_file(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("2 qid:q1 1:-3.5 2:0.25 3:1 #e1\n"));
        let back = read_feature_file(&path).unwrap();
        assert_eq!(back, rows);
    }
}
