//! Entity-aware query matching: query records with entity annotations,
//! the embedding vector store, and the two entity features — the
//! mention-match (ELR) language model over entity links and the
//! embedding-similarity (TransE) feature.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, EntityDoc, Field};
use crate::error::{Error, Result};
use crate::index::FieldedIndex;
use crate::textrank::dirichlet_smoothed_log;

/// An entity linked in the query text, with annotator confidence in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub entity: String,
    pub score: f64,
}

/// A search query: id, tokenized text, and entity annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
}

impl QueryRecord {
    pub fn new(id: &str, text: &str) -> QueryRecord {
        QueryRecord {
            id: id.to_string(),
            tokens: tokenize(text),
            annotations: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.chars().any(char::is_whitespace) {
            return Err(Error::Contract(format!(
                "query id {:?} must be non-empty and whitespace-free",
                self.id
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.annotations {
            if !(0.0..=1.0).contains(&a.score) {
                return Err(Error::Contract(format!(
                    "query {}: annotation score {} outside [0, 1]",
                    self.id, a.score
                )));
            }
            if !seen.insert(a.entity.as_str()) {
                return Err(Error::Contract(format!(
                    "query {}: duplicate annotation for entity {}",
                    self.id, a.entity
                )));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct QueryLine {
    id: String,
    text: String,
    #[serde(default)]
    annotations: Vec<Annotation>,
}

#[derive(Deserialize)]
struct AnnotationLine {
    id: String,
    annotations: Vec<Annotation>,
}

/// Read queries from JSON-lines: `{"id", "text", "annotations": [...]}`,
/// where `annotations` is optional. Blank lines are skipped.
pub fn read_queries(path: &Path) -> Result<Vec<QueryRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut queries = Vec::new();
    let mut ids = std::collections::BTreeSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: QueryLine = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, lineno, format!("bad query record: {e}")))?;
        let record = QueryRecord {
            id: parsed.id,
            tokens: tokenize(&parsed.text),
            annotations: parsed.annotations,
        };
        record
            .validate()
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        if !ids.insert(record.id.clone()) {
            return Err(Error::parse(path, lineno, format!("duplicate query id {}", record.id)));
        }
        queries.push(record);
    }
    Ok(queries)
}

/// Merge annotations from a separate JSON-lines file
/// (`{"id", "annotations": [...]}`) into already-loaded queries.
/// Annotations are appended to the matching query; an id with no matching
/// query is a data error.
pub fn merge_annotations(queries: &mut [QueryRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut by_id: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, q) in queries.iter().enumerate() {
        by_id.insert(q.id.as_str(), i);
    }
    let mut staged: Vec<(usize, Vec<Annotation>)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: AnnotationLine = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, lineno, format!("bad annotation record: {e}")))?;
        let Some(&idx) = by_id.get(parsed.id.as_str()) else {
            return Err(Error::parse(
                path,
                lineno,
                format!("annotation for unknown query id {}", parsed.id),
            ));
        };
        staged.push((idx, parsed.annotations));
    }
    for (idx, annotations) in staged {
        queries[idx].annotations.extend(annotations);
        queries[idx].validate()?;
    }
    Ok(())
}

/// Dense vectors for entities and relations, keyed by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStore {
    dim: usize,
    entities: BTreeMap<String, Vec<f64>>,
    relations: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> EmbeddingStore {
        EmbeddingStore {
            dim,
            entities: BTreeMap::new(),
            relations: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn entity(&self, id: &str) -> Option<&[f64]> {
        self.entities.get(id).map(Vec::as_slice)
    }

    pub fn relation(&self, id: &str) -> Option<&[f64]> {
        self.relations.get(id).map(Vec::as_slice)
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = &str> {
        self.entities.keys().map(String::as_str)
    }

    fn check_dim(&self, id: &str, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Contract(format!(
                "vector for {id} has dimension {}, store expects {}",
                vector.len(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn insert_entity(&mut self, id: &str, vector: Vec<f64>) -> Result<()> {
        self.check_dim(id, &vector)?;
        self.entities.insert(id.to_string(), vector);
        Ok(())
    }

    pub fn insert_relation(&mut self, id: &str, vector: Vec<f64>) -> Result<()> {
        self.check_dim(id, &vector)?;
        self.relations.insert(id.to_string(), vector);
        Ok(())
    }

    /// Write one table (`<count> <dim>` header, then `<id> v1 .. vdim`).
    fn save_table(path: &Path, dim: usize, table: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        (|| -> std::io::Result<()> {
            writeln!(out, "{} {}", table.len(), dim)?;
            for (id, vector) in table {
                write!(out, "{id}")?;
                for v in vector {
                    write!(out, " {v}")?;
                }
                writeln!(out)?;
            }
            out.flush()
        })()
        .map_err(|e| Error::io(path, e))
    }

    /// Persist entity and relation tables as two text files.
    pub fn save(&self, entity_path: &Path, relation_path: &Path) -> Result<()> {
        Self::save_table(entity_path, self.dim, &self.entities)?;
        Self::save_table(relation_path, self.dim, &self.relations)
    }

    fn load_table(path: &Path, expect_dim: Option<usize>) -> Result<(usize, BTreeMap<String, Vec<f64>>)> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut lines = reader.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "missing header"))?;
        let header = header.map_err(|e| Error::io(path, e))?;
        let mut parts = header.split_whitespace();
        let count: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(path, 1, "bad vector count in header"))?;
        let dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(path, 1, "bad dimension in header"))?;
        if let Some(expect) = expect_dim {
            if dim != expect {
                return Err(Error::CorruptStore(format!(
                    "{}: dimension {dim} does not match paired table dimension {expect}",
                    path.display()
                )));
            }
        }
        let mut table = BTreeMap::new();
        for (lineno, line) in lines {
            let lineno = lineno + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let id = parts
                .next()
                .ok_or_else(|| Error::parse(path, lineno, "missing id"))?
                .to_string();
            let vector: Vec<f64> = parts
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, lineno, "bad vector component"))?;
            if vector.len() != dim {
                return Err(Error::CorruptStore(format!(
                    "{}:{lineno}: vector for {id} has {} components, header says {dim}",
                    path.display(),
                    vector.len()
                )));
            }
            if table.insert(id.clone(), vector).is_some() {
                return Err(Error::CorruptStore(format!(
                    "{}:{lineno}: duplicate id {id}",
                    path.display()
                )));
            }
        }
        if table.len() != count {
            return Err(Error::CorruptStore(format!(
                "{}: header promises {count} vectors, found {}",
                path.display(),
                table.len()
            )));
        }
        Ok((dim, table))
    }

    pub fn load(entity_path: &Path, relation_path: &Path) -> Result<EmbeddingStore> {
        let (dim, entities) = Self::load_table(entity_path, None)?;
        let (_, relations) = Self::load_table(relation_path, Some(dim))?;
        Ok(EmbeddingStore {
            dim,
            entities,
            relations,
        })
    }
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Number of times `target` occurs among the entity's outgoing links,
/// counting the entity itself once (an entity always "links" to itself).
fn link_tf(doc: &EntityDoc, target: &str) -> u64 {
    let mut tf = u64::from(doc.id == target);
    for field in [Field::SimEn, Field::RelEn] {
        tf += doc.links(field).iter().filter(|l| l.as_str() == target).count() as u64;
    }
    tf
}

/// Mention-match feature: confidence-weighted Dirichlet log-likelihood of
/// each annotated entity under the candidate's link profile. Queries with
/// no annotations score 0.
pub fn elr_feature(
    query: &QueryRecord,
    doc: &EntityDoc,
    index: &FieldedIndex,
    mu: f64,
) -> Result<f64> {
    if mu <= 0.0 {
        return Err(Error::Config("ELR prior mu must be > 0".into()));
    }
    let entity_len = doc.links(Field::SimEn).len() as u64 + doc.links(Field::RelEn).len() as u64 + 1;
    let mut score = 0.0;
    for a in &query.annotations {
        let tf = link_tf(doc, &a.entity);
        let cf = index.link_cf(&a.entity);
        score += a.score * dirichlet_smoothed_log(tf, cf, index.link_total(), entity_len, mu);
    }
    Ok(score)
}

/// Embedding-similarity feature: confidence-weighted cosine between each
/// annotated entity's vector and the candidate's vector. Entities without
/// vectors contribute 0; a candidate without a vector scores 0.
pub fn transe_feature(query: &QueryRecord, store: &EmbeddingStore, entity: &str) -> Result<f64> {
    let Some(candidate) = store.entity(entity) else {
        return Ok(0.0);
    };
    let mut score = 0.0;
    for a in &query.annotations {
        if let Some(linked) = store.entity(&a.entity) {
            score += a.score * cosine(linked, candidate);
        }
    }
    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;
    use proptest::prelude::*;

    fn write_lines(dir: &tempfile::TempDir, name: &str, lines: &[&str]) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    #[test]
    fn reads_queries_with_and_without_annotations() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            &dir,
            "queries.jsonl",
            &[
                r#"{"id":"q1","text":"Harry Potter films","annotations":[{"entity":"Harry_Potter","score":0.9}]}"#,
                "",
                r#"{"id":"q2","text":"NAACP Image Awards"}"#,
            ],
        );
        let queries = read_queries(&path).unwrap();
        assert_eq!(queries.len(), 2);
        assert_eq!(queries[0].tokens, vec!["harry", "potter", "films"]);
        assert_eq!(queries[0].annotations.len(), 1);
        assert_eq!(queries[0].annotations[0].entity, "Harry_Potter");
        assert!(queries[1].annotations.is_empty());
        assert_eq!(queries[1].tokens, vec!["naacp", "image", "awards"]);
    }

    #[test]
    fn rejects_duplicate_query_ids_and_bad_scores() {
        let dir = tempfile::tempdir().unwrap();
        let dup = write_lines(
            &dir,
            "dup.jsonl",
            &[r#"{"id":"q1","text":"a"}"#, r#"{"id":"q1","text":"b"}"#],
        );
        assert!(matches!(read_queries(&dup), Err(Error::Parse { line: 2, .. })));
        let bad = write_lines(
            &dir,
            "bad.jsonl",
            &[r#"{"id":"q1","text":"a","annotations":[{"entity":"e","score":1.5}]}"#],
        );
        assert!(matches!(read_queries(&bad), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn merges_annotations_by_query_id() {
        let dir = tempfile::tempdir().unwrap();
        let queries_path = write_lines(
            &dir,
            "queries.jsonl",
            &[r#"{"id":"q1","text":"a"}"#, r#"{"id":"q2","text":"b"}"#],
        );
        let ann_path = write_lines(
            &dir,
            "ann.jsonl",
            &[r#"{"id":"q2","annotations":[{"entity":"e7","score":0.5}]}"#],
        );
        let mut queries = read_queries(&queries_path).unwrap();
        merge_annotations(&mut queries, &ann_path).unwrap();
        assert!(queries[0].annotations.is_empty());
        assert_eq!(queries[1].annotations[0].entity, "e7");

        let unknown = write_lines(
            &dir,
            "unknown.jsonl",
            &[r#"{"id":"zz","annotations":[{"entity":"e","score":0.5}]}"#],
        );
        assert!(matches!(
            merge_annotations(&mut queries, &unknown),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn embedding_store_round_trip_is_byte_identical() {
        let mut store = EmbeddingStore::new(3);
        store.insert_entity("e2", vec![0.5, -1.25, 0.0]).unwrap();
        store.insert_entity("e1", vec![1.0, 2.0, 3.0]).unwrap();
        store.insert_relation("r1", vec![0.1, 0.2, 0.3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ent = dir.path().join("embeddings.ent.vec");
        let rel = dir.path().join("embeddings.rel.vec");
        store.save(&ent, &rel).unwrap();
        let text = std::fs::read_to_string(&ent).unwrap();
        assert_eq!(text, "2 3\ne1 1 2 3\ne2 0.5 -1.25 0\n");
        let loaded = EmbeddingStore::load(&ent, &rel).unwrap();
        assert_eq!(loaded, store);
        let ent2 = dir.path().join("again.ent.vec");
        let rel2 = dir.path().join("again.rel.vec");
        loaded.save(&ent2, &rel2).unwrap();
        assert_eq!(std::fs::read(&ent).unwrap(), std::fs::read(&ent2).unwrap());
    }

    #[test]
    fn embedding_store_rejects_corrupt_files() {
        let mut store = EmbeddingStore::new(2);
        store.insert_entity("e1", vec![1.0, 2.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ent = dir.path().join("e.vec");
        let rel = dir.path().join("r.vec");
        store.save(&ent, &rel).unwrap();
        // wrong component count
        std::fs::write(&ent, "1 2\ne1 1 2 3\n").unwrap();
        assert!(matches!(
            EmbeddingStore::load(&ent, &rel),
            Err(Error::CorruptStore(_))
        ));
        // count mismatch with header
        std::fs::write(&ent, "2 2\ne1 1 2\n").unwrap();
        assert!(matches!(
            EmbeddingStore::load(&ent, &rel),
            Err(Error::CorruptStore(_))
        ));
        // entity/relation dimension mismatch
        std::fs::write(&ent, "1 2\ne1 1 2\n").unwrap();
        std::fs::write(&rel, "1 3\nr1 1 2 3\n").unwrap();
        assert!(matches!(
            EmbeddingStore::load(&ent, &rel),
            Err(Error::CorruptStore(_))
        ));
    }

    #[test]
    fn dim_mismatch_on_insert_is_rejected() {
        let mut store = EmbeddingStore::new(3);
        assert!(matches!(
            store.insert_entity("e1", vec![1.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-12);
        assert!((cosine(&[1.0, 0.0], &[-1.0, 0.0]) + 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
    }

    /// Corpus of two entities: e1 links to e2 twice (RelEn) and once via
    /// SimEn; e2 has no outgoing links.
    fn linked_index() -> (FieldedIndex, Corpus) {
        let mut d1 = EntityDoc::new("e1");
        d1.entity_links[Field::RelEn.index()] = vec!["e2".into(), "e2".into()];
        d1.entity_links[Field::SimEn.index()] = vec!["e2".into()];
        let d2 = EntityDoc::new("e2");
        let corpus = Corpus {
            docs: vec![d1, d2],
        };
        (FieldedIndex::build(&corpus, 8).unwrap(), corpus)
    }

    #[test]
    fn elr_hand_value() {
        let (index, corpus) = linked_index();
        // Link collection: e1 contributes [e2, e2, e2(SimEn), e1(self)],
        // e2 contributes [e2(self)] — cf(e2) = 4, total = 5.
        assert_eq!(index.link_cf("e2"), 4);
        assert_eq!(index.link_total(), 5);
        let query = QueryRecord {
            id: "q".into(),
            tokens: vec!["x".into()],
            annotations: vec![Annotation {
                entity: "e2".into(),
                score: 0.6,
            }],
        };
        let mu = 10.0;
        // e1: tf(e2)=3, |E_e|=4
        let got = elr_feature(&query, corpus.get("e1").unwrap(), &index, mu).unwrap();
        let want = 0.6 * ((3.0 + mu * (4.0 / 5.0)) / (4.0 + mu)).ln();
        assert!((got - want).abs() < 1e-12);
        // e2: tf(e2)=1 (self), |E_e|=1
        let got = elr_feature(&query, corpus.get("e2").unwrap(), &index, mu).unwrap();
        let want = 0.6 * ((1.0 + mu * (4.0 / 5.0)) / (1.0 + mu)).ln();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn elr_is_linear_in_confidence() {
        let (index, corpus) = linked_index();
        let doc = corpus.get("e1").unwrap();
        let make = |score| QueryRecord {
            id: "q".into(),
            tokens: vec![],
            annotations: vec![Annotation {
                entity: "e2".into(),
                score,
            }],
        };
        let half = elr_feature(&make(0.5), doc, &index, 10.0).unwrap();
        let full = elr_feature(&make(1.0), doc, &index, 10.0).unwrap();
        assert!((full - 2.0 * half).abs() < 1e-12);
    }

    #[test]
    fn elr_unknown_annotation_uses_floor() {
        let (index, corpus) = linked_index();
        let query = QueryRecord {
            id: "q".into(),
            tokens: vec![],
            annotations: vec![Annotation {
                entity: "nowhere".into(),
                score: 1.0,
            }],
        };
        let got = elr_feature(&query, corpus.get("e1").unwrap(), &index, 10.0).unwrap();
        let want = (1e-9f64 / (4.0 + 10.0)).ln();
        assert!((got - want).abs() < 1e-12);
        assert!(got.is_finite());
    }

    #[test]
    fn elr_no_annotations_scores_zero() {
        let (index, corpus) = linked_index();
        let query = QueryRecord::new("q", "anything");
        assert_eq!(
            elr_feature(&query, corpus.get("e1").unwrap(), &index, 10.0).unwrap(),
            0.0
        );
    }

    fn store_with(entries: &[(&str, Vec<f64>)]) -> EmbeddingStore {
        let dim = entries[0].1.len();
        let mut store = EmbeddingStore::new(dim);
        for (id, v) in entries {
            store.insert_entity(id, v.clone()).unwrap();
        }
        store
    }

    #[test]
    fn transe_feature_hand_value() {
        let store = store_with(&[
            ("cand", vec![1.0, 0.0]),
            ("a1", vec![1.0, 0.0]),
            ("a2", vec![0.0, 1.0]),
        ]);
        let query = QueryRecord {
            id: "q".into(),
            tokens: vec![],
            annotations: vec![
                Annotation {
                    entity: "a1".into(),
                    score: 0.8,
                },
                Annotation {
                    entity: "a2".into(),
                    score: 0.5,
                },
            ],
        };
        let got = transe_feature(&query, &store, "cand").unwrap();
        assert!((got - 0.8).abs() < 1e-12); // 0.8*1 + 0.5*0
    }

    #[test]
    fn transe_feature_missing_vectors_contribute_zero() {
        let store = store_with(&[("cand", vec![1.0, 0.0])]);
        let query = QueryRecord {
            id: "q".into(),
            tokens: vec![],
            annotations: vec![Annotation {
                entity: "ghost".into(),
                score: 1.0,
            }],
        };
        assert_eq!(transe_feature(&query, &store, "cand").unwrap(), 0.0);
        // candidate itself missing
        assert_eq!(transe_feature(&query, &store, "ghost").unwrap(), 0.0);
    }

    #[test]
    fn transe_feature_opposite_vectors_cancel() {
        let store = store_with(&[
            ("cand", vec![1.0, 0.0]),
            ("a1", vec![1.0, 0.0]),
            ("a2", vec![-2.0, 0.0]),
        ]);
        let query = QueryRecord {
            id: "q".into(),
            tokens: vec![],
            annotations: vec![
                Annotation {
                    entity: "a1".into(),
                    score: 0.5,
                },
                Annotation {
                    entity: "a2".into(),
                    score: 0.5,
                },
            ],
        };
        let got = transe_feature(&query, &store, "cand").unwrap();
        assert!(got.abs() < 1e-12);
    }

    proptest! {
        /// |feature| is bounded by the sum of annotation confidences, and
        /// scaling a vector never changes the cosine contributions.
        #[test]
        fn transe_feature_bounded_and_scale_invariant(
            cand in proptest::collection::vec(-5.0f64..5.0, 3),
            other in proptest::collection::vec(-5.0f64..5.0, 3),
            s1 in 0.0f64..1.0,
            s2 in 0.0f64..1.0,
            scale in 0.1f64..10.0,
        ) {
            let store = store_with(&[("cand", cand.clone()), ("a1", other.clone()), ("a2", cand.clone())]);
            let query = QueryRecord {
                id: "q".into(),
                tokens: vec![],
                annotations: vec![
                    Annotation { entity: "a1".into(), score: s1 },
                    Annotation { entity: "a2".into(), score: s2 },
                ],
            };
            let got = transe_feature(&query, &store, "cand").unwrap();
            prop_assert!(got.abs() <= s1 + s2 + 1e-9);
            let scaled = store_with(&[
                ("cand", cand.clone()),
                ("a1", other.iter().map(|v| v * scale).collect()),
                ("a2", cand.iter().map(|v| v * scale).collect()),
            ]);
            let got2 = transe_feature(&query, &scaled, "cand").unwrap();
            prop_assert!((got - got2).abs() < 1e-9);
        }
    }
}
