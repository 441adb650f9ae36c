//! Triple ingestion into fielded entity documents.
//!
//! Knowledge-graph triples are grouped per head entity into a five-field
//! document (`names`, `attributes`, `categories`, `SimEn`, `RelEn`).
//! Literal tails contribute tokens to the mapped field; entity tails
//! contribute both their tokenized id and an entity-link entry used by the
//! mention-match feature.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five document fields of the entity schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Field {
    Names,
    Attributes,
    Categories,
    SimEn,
    RelEn,
}

pub const FIELD_COUNT: usize = 5;

impl Field {
    pub const ALL: [Field; FIELD_COUNT] = [
        Field::Names,
        Field::Attributes,
        Field::Categories,
        Field::SimEn,
        Field::RelEn,
    ];

    pub fn index(self) -> usize {
        match self {
            Field::Names => 0,
            Field::Attributes => 1,
            Field::Categories => 2,
            Field::SimEn => 3,
            Field::RelEn => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::Names => "names",
            Field::Attributes => "attributes",
            Field::Categories => "categories",
            Field::SimEn => "SimEn",
            Field::RelEn => "RelEn",
        }
    }

    /// Case-insensitive field name parse.
    pub fn parse(s: &str) -> Option<Field> {
        match s.to_ascii_lowercase().as_str() {
            "names" => Some(Field::Names),
            "attributes" => Some(Field::Attributes),
            "categories" => Some(Field::Categories),
            "simen" => Some(Field::SimEn),
            "relen" => Some(Field::RelEn),
            _ => None,
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Tail of a triple: either a reference to another entity or literal text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tail {
    Entity(String),
    Literal(String),
}

/// One knowledge-graph edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: Tail,
}

impl Triple {
    pub fn entity(head: &str, relation: &str, tail: &str) -> Triple {
        Triple {
            head: head.to_string(),
            relation: relation.to_string(),
            tail: Tail::Entity(tail.to_string()),
        }
    }

    pub fn literal(head: &str, relation: &str, text: &str) -> Triple {
        Triple {
            head: head.to_string(),
            relation: relation.to_string(),
            tail: Tail::Literal(text.to_string()),
        }
    }
}

/// One `relation-pattern -> field` rule. A trailing `*` matches any suffix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MappingRule {
    pub pattern: String,
    pub field: Field,
}

impl MappingRule {
    fn matches(&self, relation: &str) -> bool {
        match self.pattern.strip_suffix('*') {
            Some(prefix) => relation.starts_with(prefix),
            None => relation == self.pattern,
        }
    }
}

/// Ordered relation-to-field assignment; first matching rule wins.
///
/// Unmatched literal-tailed relations fall back to `default_field`
/// (attributes unless overridden). Unmatched entity-tailed relations go to
/// `SimEn` when the relation looks like a sameness/redirect link and to
/// `RelEn` otherwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldMapping {
    pub rules: Vec<MappingRule>,
    pub default_field: Field,
}

impl Default for FieldMapping {
    fn default() -> Self {
        FieldMapping {
            rules: Vec::new(),
            default_field: Field::Attributes,
        }
    }
}

impl FieldMapping {
    /// Field receiving a triple with the given relation and tail kind.
    pub fn field_for(&self, relation: &str, tail: &Tail) -> Field {
        for rule in &self.rules {
            if rule.matches(relation) {
                return rule.field;
            }
        }
        match tail {
            Tail::Literal(_) => self.default_field,
            Tail::Entity(_) => {
                if is_sameness_relation(relation) {
                    Field::SimEn
                } else {
                    Field::RelEn
                }
            }
        }
    }

    /// Parse a mapping file: one `relation-pattern<TAB>field` per line,
    /// `#default<TAB>field` overrides the literal-tail default. Blank lines
    /// and other `#` lines are ignored.
    pub fn from_reader(path: &Path, reader: impl BufRead) -> Result<FieldMapping> {
        let mut mapping = FieldMapping::default();
        for (lineno, line) in reader.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = match line.split_once('\t') {
                Some(kv) => kv,
                None => {
                    if line.starts_with('#') {
                        continue;
                    }
                    return Err(Error::parse(path, lineno, "expected `pattern<TAB>field`"));
                }
            };
            let field = Field::parse(value.trim()).ok_or_else(|| {
                Error::parse(path, lineno, format!("unknown field name `{}`", value.trim()))
            })?;
            if key == "#default" {
                mapping.default_field = field;
            } else if key.starts_with('#') {
                continue;
            } else {
                mapping.rules.push(MappingRule {
                    pattern: key.to_string(),
                    field,
                });
            }
        }
        Ok(mapping)
    }

    pub fn from_file(path: &Path) -> Result<FieldMapping> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(path, std::io::BufReader::new(file))
    }
}

/// Entity-tailed relations treated as sameness links (routed to `SimEn` when
/// no explicit rule matches). Matches on the alphanumeric-normalized relation
/// name, so `owl:sameAs`, `dbo:wikiPageRedirects` and the like all qualify.
fn is_sameness_relation(relation: &str) -> bool {
    let normalized: String = relation
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase();
    normalized.contains("sameas") || normalized.contains("redirect")
}

/// Lowercased alphanumeric tokens; every other character is a separator.
/// No stemming, no stopword removal.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            current.push(c.to_ascii_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// An entity's five-field token representation plus its entity-valued links.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityDoc {
    pub id: String,
    /// Per-field token sequences, indexed by [`Field::index`].
    pub fields: [Vec<String>; FIELD_COUNT],
    /// Per-field entity-id sequences for entity-valued tails.
    pub entity_links: [Vec<String>; FIELD_COUNT],
}

impl EntityDoc {
    pub fn new(id: &str) -> EntityDoc {
        EntityDoc {
            id: id.to_string(),
            fields: Default::default(),
            entity_links: Default::default(),
        }
    }

    pub fn tokens(&self, field: Field) -> &[String] {
        &self.fields[field.index()]
    }

    pub fn links(&self, field: Field) -> &[String] {
        &self.entity_links[field.index()]
    }

    /// |E_f|: token count of one field.
    pub fn field_len(&self, field: Field) -> u64 {
        self.fields[field.index()].len() as u64
    }

    /// |E|: token count over all fields.
    pub fn total_len(&self) -> u64 {
        self.fields.iter().map(|f| f.len() as u64).sum()
    }
}

/// Immutable corpus of entity documents, sorted by entity id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub docs: Vec<EntityDoc>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EntityDoc> {
        self.docs
            .binary_search_by(|d| d.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.docs[i])
    }
}

/// Per-line ingestion failure, surfaced (not fatal).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

/// Outcome of [`ingest_triples`]: counts plus the skipped-line log.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub triples_ingested: usize,
    pub skipped: Vec<SkippedLine>,
}

/// Group a triple stream into one [`EntityDoc`] per distinct head entity.
///
/// Tail tokens are appended to the mapped field in stream order; duplicate
/// triples are retained. Entity tails additionally record an entity-link
/// entry in the same field.
pub fn ingest_triples<I>(triples: I, mapping: &FieldMapping) -> Corpus
where
    I: IntoIterator<Item = Triple>,
{
    let mut docs: BTreeMap<String, EntityDoc> = BTreeMap::new();
    for triple in triples {
        let field = mapping.field_for(&triple.relation, &triple.tail);
        let doc = docs
            .entry(triple.head.clone())
            .or_insert_with(|| EntityDoc::new(&triple.head));
        match triple.tail {
            Tail::Literal(text) => {
                doc.fields[field.index()].extend(tokenize(&text));
            }
            Tail::Entity(id) => {
                doc.fields[field.index()].extend(tokenize(&id));
                doc.entity_links[field.index()].push(id);
            }
        }
    }
    Corpus {
        docs: docs.into_values().collect(),
    }
}

/// Parse one triple line: `head<TAB>relation<TAB>tail`, tail in double
/// quotes for literals. Ids must be non-empty and whitespace-free.
pub fn parse_triple_line(line: &str) -> std::result::Result<Triple, String> {
    let mut parts = line.split('\t');
    let head = parts.next().unwrap_or("");
    let relation = parts.next().ok_or("expected 3 tab-separated columns")?;
    let tail = parts.next().ok_or("expected 3 tab-separated columns")?;
    if parts.next().is_some() {
        return Err("expected 3 tab-separated columns".to_string());
    }
    if head.is_empty() || relation.is_empty() {
        return Err("head and relation must be non-empty".to_string());
    }
    if head.chars().any(char::is_whitespace) || relation.chars().any(char::is_whitespace) {
        return Err("head and relation must not contain whitespace".to_string());
    }
    let tail = if let Some(stripped) = tail.strip_prefix('"') {
        let text = stripped
            .strip_suffix('"')
            .ok_or("unterminated literal quote")?;
        Tail::Literal(text.to_string())
    } else {
        if tail.is_empty() {
            return Err("tail must be non-empty".to_string());
        }
        if tail.chars().any(char::is_whitespace) {
            return Err("entity tail must not contain whitespace".to_string());
        }
        Tail::Entity(tail.to_string())
    };
    Ok(Triple {
        head: head.to_string(),
        relation: relation.to_string(),
        tail,
    })
}

/// Read a triple file, skipping malformed lines into the report.
pub fn read_triples(path: &Path) -> Result<(Vec<Triple>, IngestReport)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut triples = Vec::new();
    let mut report = IngestReport::default();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        match parse_triple_line(line) {
            Ok(triple) => {
                triples.push(triple);
                report.triples_ingested += 1;
            }
            Err(reason) => report.skipped.push(SkippedLine {
                line: lineno,
                reason,
            }),
        }
    }
    Ok((triples, report))
}

/// Exact collection statistics for one field.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldStats {
    /// |C_f|: total token count of the field across the corpus.
    pub total_len: u64,
    /// cf_{t,f}: unigram collection frequencies.
    pub unigram_cf: BTreeMap<String, u64>,
    /// cf_{#1(t1,t2),f}: ordered-bigram collection frequencies, keyed
    /// `"t1 t2"`.
    pub ordered_cf: BTreeMap<String, u64>,
    /// cf_{#uwN(t1,t2),f}: unordered-window collection frequencies for the
    /// configured window size, keyed `"t1 t2"` with t1 <= t2.
    pub window_cf: BTreeMap<String, u64>,
}

/// Exact whole-collection statistics at a fixed window size.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionStats {
    pub window: usize,
    pub entity_count: usize,
    pub fields: [FieldStats; FIELD_COUNT],
}

impl CollectionStats {
    /// |C|: token count over every field.
    pub fn total_len(&self) -> u64 {
        self.fields.iter().map(|f| f.total_len).sum()
    }

    /// Whole-collection unigram cf (sum over fields).
    pub fn unigram_cf(&self, term: &str) -> u64 {
        self.fields
            .iter()
            .map(|f| f.unigram_cf.get(term).copied().unwrap_or(0))
            .sum()
    }
}

pub(crate) fn bigram_key(t1: &str, t2: &str) -> String {
    format!("{t1} {t2}")
}

pub(crate) fn window_key(t1: &str, t2: &str) -> String {
    if t1 <= t2 {
        format!("{t1} {t2}")
    } else {
        format!("{t2} {t1}")
    }
}

/// Count ordered adjacent pairs `t(p)=t1, t(p+1)=t2` in one token sequence.
/// Brute-force reference used by the index tests.
#[cfg(test)]
pub(crate) fn count_ordered(tokens: &[String], t1: &str, t2: &str) -> u64 {
    tokens
        .windows(2)
        .filter(|w| w[0] == t1 && w[1] == t2)
        .count() as u64
}

/// Count co-occurrence pairs of `t1`/`t2` with position distance < window.
/// For t1 == t2, ordered pairs of distinct positions are counted, which
/// keeps `#uw2(t,t) = 2 * #1(t,t)`. Brute-force reference for tests.
#[cfg(test)]
pub(crate) fn count_window(tokens: &[String], t1: &str, t2: &str, window: usize) -> u64 {
    let pos1: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| *t == t1)
        .map(|(p, _)| p)
        .collect();
    let pos2: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| *t == t2)
        .map(|(p, _)| p)
        .collect();
    let mut count = 0;
    for &p1 in &pos1 {
        for &p2 in &pos2 {
            if t1 == t2 && p1 == p2 {
                continue;
            }
            if p1.abs_diff(p2) < window {
                count += 1;
            }
        }
    }
    count
}

/// Compute exact collection statistics, including ordered-bigram and
/// windowed-bigram frequencies for `window` only.
pub fn collection_stats(corpus: &Corpus, window: usize) -> CollectionStats {
    let mut stats = CollectionStats {
        window,
        entity_count: corpus.len(),
        ..Default::default()
    };
    for doc in &corpus.docs {
        for field in Field::ALL {
            let tokens = doc.tokens(field);
            let fs = &mut stats.fields[field.index()];
            fs.total_len += tokens.len() as u64;
            for token in tokens {
                *fs.unigram_cf.entry(token.clone()).or_insert(0) += 1;
            }
            for pair in tokens.windows(2) {
                *fs.ordered_cf
                    .entry(bigram_key(&pair[0], &pair[1]))
                    .or_insert(0) += 1;
            }
            // Every distinct unordered term pair co-occurring within the
            // window, counted once per position pair.
            for (i, t1) in tokens.iter().enumerate() {
                for (j, t2) in tokens.iter().enumerate().skip(i + 1) {
                    if j - i < window {
                        *fs.window_cf.entry(window_key(t1, t2)).or_insert(0) +=
                            if t1 == t2 { 2 } else { 1 };
                    } else {
                        break;
                    }
                }
            }
        }
    }
    stats
}
