//! Immutable fielded inverted index with positional postings.
//!
//! Supplies unigram, ordered-bigram (`#1`) and unordered-window (`#uwN`)
//! term frequencies per entity field, plus the collection-level statistics
//! the ranking functions need. Bigram collection frequencies are served
//! from a lazily populated cache that is semantically invisible: answers
//! equal a full precomputation.

use std::collections::HashMap;
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::corpus::{window_key, Corpus, EntityDoc, Field, FIELD_COUNT};
use crate::error::{Error, Result};

const INDEX_FORMAT: &str = "erank-index";
const INDEX_VERSION: u32 = 1;

/// Per-(term, entity) positional posting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Posting {
    pub entity: u32,
    /// Strictly increasing token positions within the field.
    pub positions: Vec<u32>,
}

/// Postings list for one term in one field.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TermPostings {
    /// Sorted by entity handle.
    pub entries: Vec<Posting>,
    /// cf_{t,f}: total occurrences across the collection.
    pub cf: u64,
}

impl TermPostings {
    fn positions_for(&self, entity: u32) -> Option<&[u32]> {
        self.entries
            .binary_search_by_key(&entity, |p| p.entity)
            .ok()
            .map(|i| self.entries[i].positions.as_slice())
    }
}

/// One field's postings and lengths.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct FieldData {
    postings: std::collections::BTreeMap<String, TermPostings>,
    /// |E_f| per entity handle.
    lengths: Vec<u64>,
    /// |C_f|.
    total_len: u64,
}

/// Unigram statistic tuple: (tf, cf, |E_f|, |C_f|).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnigramStats {
    pub tf: u64,
    pub cf: u64,
    pub entity_len: u64,
    pub collection_len: u64,
}

/// Bigram statistic tuple: (tf, cf) for `#1` or `#uwN`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BigramStats {
    pub tf: u64,
    pub cf: u64,
}

type BigramCache = RwLock<HashMap<(usize, String), u64>>;

/// Immutable fielded index over an entity corpus.
///
/// Also carries the entity-link pseudo-collection used by the mention-match
/// feature: each entity contributes its `SimEn`/`RelEn` link targets plus
/// one occurrence of its own id.
#[derive(Debug, Serialize, Deserialize)]
pub struct FieldedIndex {
    window: usize,
    docs: Vec<EntityDoc>,
    fields: [FieldData; FIELD_COUNT],
    /// Collection frequency of each entity id in the link pseudo-collection.
    link_cf: std::collections::BTreeMap<String, u64>,
    /// |Ce|: total size of the link pseudo-collection.
    link_total: u64,
    #[serde(skip)]
    handles: HashMap<String, u32>,
    #[serde(skip)]
    ordered_cf_cache: BigramCache,
    #[serde(skip)]
    window_cf_cache: BigramCache,
}

impl FieldedIndex {
    /// Build the index at unordered-window size `window` (>= 2).
    pub fn build(corpus: &Corpus, window: usize) -> Result<FieldedIndex> {
        if window < 2 {
            return Err(Error::Config(format!(
                "window size must be >= 2, got {window}"
            )));
        }
        let mut index = FieldedIndex {
            window,
            docs: corpus.docs.clone(),
            fields: Default::default(),
            link_cf: Default::default(),
            link_total: 0,
            handles: HashMap::new(),
            ordered_cf_cache: RwLock::new(HashMap::new()),
            window_cf_cache: RwLock::new(HashMap::new()),
        };
        for (handle, doc) in index.docs.iter().enumerate() {
            let handle = handle as u32;
            for field in Field::ALL {
                let tokens = doc.tokens(field);
                let data = &mut index.fields[field.index()];
                data.lengths.push(tokens.len() as u64);
                data.total_len += tokens.len() as u64;
                for (pos, token) in tokens.iter().enumerate() {
                    let postings = data.postings.entry(token.clone()).or_default();
                    match postings.entries.last_mut() {
                        Some(p) if p.entity == handle => p.positions.push(pos as u32),
                        _ => postings.entries.push(Posting {
                            entity: handle,
                            positions: vec![pos as u32],
                        }),
                    }
                    postings.cf += 1;
                }
            }
            for id in link_occurrences(doc) {
                *index.link_cf.entry(id.to_string()).or_insert(0) += 1;
                index.link_total += 1;
            }
        }
        index.rebuild_handles();
        Ok(index)
    }

    fn rebuild_handles(&mut self) {
        self.handles = self
            .docs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.clone(), i as u32))
            .collect();
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn entity_count(&self) -> usize {
        self.docs.len()
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.id.as_str())
    }

    pub fn contains(&self, entity: &str) -> bool {
        self.handles.contains_key(entity)
    }

    pub fn doc(&self, entity: &str) -> Result<&EntityDoc> {
        let handle = self.handle(entity)?;
        Ok(&self.docs[handle as usize])
    }

    fn handle(&self, entity: &str) -> Result<u32> {
        self.handles
            .get(entity)
            .copied()
            .ok_or_else(|| Error::UnknownEntity(entity.to_string()))
    }

    /// |C_f|.
    pub fn field_total_len(&self, field: Field) -> u64 {
        self.fields[field.index()].total_len
    }

    /// |C|.
    pub fn total_len(&self) -> u64 {
        self.fields.iter().map(|f| f.total_len).sum()
    }

    /// |E_f| for one entity.
    pub fn field_len(&self, entity: &str, field: Field) -> Result<u64> {
        let handle = self.handle(entity)?;
        Ok(self.fields[field.index()].lengths[handle as usize])
    }

    /// Number of entities whose field contains the term (df for idf).
    pub fn doc_freq(&self, field: Field, term: &str) -> u64 {
        self.fields[field.index()]
            .postings
            .get(term)
            .map(|p| p.entries.len() as u64)
            .unwrap_or(0)
    }

    /// Collection frequency of a term in one field.
    pub fn collection_freq(&self, field: Field, term: &str) -> u64 {
        self.fields[field.index()]
            .postings
            .get(term)
            .map(|p| p.cf)
            .unwrap_or(0)
    }

    /// (tf, cf, |E_f|, |C_f|) for a term; absent terms yield tf = 0.
    pub fn unigram_stats(&self, entity: &str, field: Field, term: &str) -> Result<UnigramStats> {
        let handle = self.handle(entity)?;
        let data = &self.fields[field.index()];
        let (tf, cf) = match data.postings.get(term) {
            Some(postings) => (
                postings
                    .positions_for(handle)
                    .map(|p| p.len() as u64)
                    .unwrap_or(0),
                postings.cf,
            ),
            None => (0, 0),
        };
        Ok(UnigramStats {
            tf,
            cf,
            entity_len: data.lengths[handle as usize],
            collection_len: data.total_len,
        })
    }

    /// `#1(t1,t2)`: adjacent ordered-pair count plus its collection frequency.
    pub fn ordered_bigram_stats(
        &self,
        entity: &str,
        field: Field,
        t1: &str,
        t2: &str,
    ) -> Result<BigramStats> {
        let handle = self.handle(entity)?;
        let tf = self.ordered_tf(handle, field, t1, t2);
        let key = (field.index(), format!("{t1} {t2}"));
        if let Some(&cf) = self.ordered_cf_cache.read().unwrap().get(&key) {
            return Ok(BigramStats { tf, cf });
        }
        let cf = self.compute_ordered_cf(field, t1, t2);
        self.ordered_cf_cache.write().unwrap().insert(key, cf);
        Ok(BigramStats { tf, cf })
    }

    /// `#uwN(t1,t2)`: co-occurrence pairs within the configured window.
    pub fn unordered_window_stats(
        &self,
        entity: &str,
        field: Field,
        t1: &str,
        t2: &str,
    ) -> Result<BigramStats> {
        let handle = self.handle(entity)?;
        let tf = self.window_tf(handle, field, t1, t2);
        let key = (field.index(), window_key(t1, t2));
        if let Some(&cf) = self.window_cf_cache.read().unwrap().get(&key) {
            return Ok(BigramStats { tf, cf });
        }
        let cf = self.compute_window_cf(field, t1, t2);
        self.window_cf_cache.write().unwrap().insert(key, cf);
        Ok(BigramStats { tf, cf })
    }

    fn ordered_tf(&self, handle: u32, field: Field, t1: &str, t2: &str) -> u64 {
        let data = &self.fields[field.index()];
        let (Some(p1), Some(p2)) = (data.postings.get(t1), data.postings.get(t2)) else {
            return 0;
        };
        match (p1.positions_for(handle), p2.positions_for(handle)) {
            (Some(pos1), Some(pos2)) => ordered_pair_count(pos1, pos2),
            _ => 0,
        }
    }

    fn window_tf(&self, handle: u32, field: Field, t1: &str, t2: &str) -> u64 {
        let data = &self.fields[field.index()];
        let (Some(p1), Some(p2)) = (data.postings.get(t1), data.postings.get(t2)) else {
            return 0;
        };
        match (p1.positions_for(handle), p2.positions_for(handle)) {
            (Some(pos1), Some(pos2)) => window_pair_count(pos1, pos2, self.window, t1 == t2),
            _ => 0,
        }
    }

    fn compute_ordered_cf(&self, field: Field, t1: &str, t2: &str) -> u64 {
        self.co_occurring(field, t1, t2)
            .map(|(pos1, pos2)| ordered_pair_count(pos1, pos2))
            .sum()
    }

    fn compute_window_cf(&self, field: Field, t1: &str, t2: &str) -> u64 {
        let window = self.window;
        let same = t1 == t2;
        self.co_occurring(field, t1, t2)
            .map(|(pos1, pos2)| window_pair_count(pos1, pos2, window, same))
            .sum()
    }

    /// Position lists of entities containing both terms in the field.
    fn co_occurring<'a>(
        &'a self,
        field: Field,
        t1: &str,
        t2: &str,
    ) -> impl Iterator<Item = (&'a [u32], &'a [u32])> + 'a {
        let data = &self.fields[field.index()];
        let p1 = data.postings.get(t1);
        let p2 = data.postings.get(t2);
        p1.into_iter()
            .flat_map(|p| p.entries.iter())
            .filter_map(move |entry| {
                let pos2 = p2.and_then(|p| p.positions_for(entry.entity))?;
                Some((entry.positions.as_slice(), pos2))
            })
    }

    /// Entities with tf > 0 for the term in the field.
    pub fn matching_entities<'a>(
        &'a self,
        field: Field,
        term: &str,
    ) -> impl Iterator<Item = &'a str> + 'a {
        self.fields[field.index()]
            .postings
            .get(term)
            .into_iter()
            .flat_map(|p| p.entries.iter())
            .map(|e| self.docs[e.entity as usize].id.as_str())
    }

    /// Collection frequency of an entity id in the link pseudo-collection.
    pub fn link_cf(&self, entity: &str) -> u64 {
        self.link_cf.get(entity).copied().unwrap_or(0)
    }

    /// |Ce|: total size of the link pseudo-collection.
    pub fn link_total(&self) -> u64 {
        self.link_total
    }

    /// Persist to a single self-describing JSON file.
    pub fn save(&self, path: &Path, config_hash: Option<&str>) -> Result<()> {
        let file = IndexFile {
            format: INDEX_FORMAT.to_string(),
            version: INDEX_VERSION,
            config_hash: config_hash.map(str::to_string),
            index: self,
        };
        let json = serde_json::to_string(&file)
            .map_err(|e| Error::Contract(format!("index serialization failed: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<FieldedIndex> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: IndexFileOwned = serde_json::from_slice(&bytes)
            .map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        if file.format != INDEX_FORMAT {
            return Err(Error::parse(
                path,
                1,
                format!("not an index file (format `{}`)", file.format),
            ));
        }
        if file.version != INDEX_VERSION {
            return Err(Error::parse(
                path,
                1,
                format!("unsupported index version {}", file.version),
            ));
        }
        let mut index = file.index;
        index.rebuild_handles();
        Ok(index)
    }
}

#[derive(Serialize)]
struct IndexFile<'a> {
    format: String,
    version: u32,
    config_hash: Option<String>,
    index: &'a FieldedIndex,
}

#[derive(Deserialize)]
struct IndexFileOwned {
    format: String,
    version: u32,
    #[allow(dead_code)]
    config_hash: Option<String>,
    index: FieldedIndex,
}

fn link_occurrences(doc: &EntityDoc) -> impl Iterator<Item = &str> {
    doc.links(Field::SimEn)
        .iter()
        .chain(doc.links(Field::RelEn).iter())
        .map(String::as_str)
        .chain(std::iter::once(doc.id.as_str()))
}

/// Count positions p in `pos1` with p+1 in `pos2`.
fn ordered_pair_count(pos1: &[u32], pos2: &[u32]) -> u64 {
    let mut count = 0;
    let mut j = 0;
    for &p in pos1 {
        let target = p + 1;
        while j < pos2.len() && pos2[j] < target {
            j += 1;
        }
        if j < pos2.len() && pos2[j] == target {
            count += 1;
        }
    }
    count
}

/// Count pairs (p1, p2) with |p1 - p2| < window; `same` excludes p1 == p2.
fn window_pair_count(pos1: &[u32], pos2: &[u32], window: usize, same: bool) -> u64 {
    let window = window as i64;
    let mut count = 0u64;
    for &p1 in pos1 {
        let p1 = p1 as i64;
        let lo = pos2.partition_point(|&p| (p as i64) <= p1 - window);
        let hi = pos2.partition_point(|&p| (p as i64) < p1 + window);
        count += (hi - lo) as u64;
        if same {
            count -= 1; // p1 itself always falls inside its own window
        }
    }
    count
}
