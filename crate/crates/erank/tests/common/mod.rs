//! Shared helpers for the integration tests: deterministic fixture
//! generators, brute-force counting references and an independently coded
//! metric evaluator used to cross-check the library.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use erank::corpus::{Corpus, EntityDoc, Field};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn fixture_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

// ---------------------------------------------------------------------------
// fixture generators
//
// Both bundled knowledge bases are produced by code so they stay auditable
// and regenerable; tests assert the committed files match the generators.

/// The four data files of a bundled knowledge-base fixture.
pub struct KbFiles {
    pub triples: String,
    pub mapping: String,
    pub queries: String,
    pub qrels: String,
}

impl KbFiles {
    pub fn write_to(&self, dir: &Path) {
        std::fs::create_dir_all(dir).unwrap();
        std::fs::write(dir.join("triples.tsv"), &self.triples).unwrap();
        std::fs::write(dir.join("mapping.tsv"), &self.mapping).unwrap();
        std::fs::write(dir.join("queries.jsonl"), &self.queries).unwrap();
        std::fs::write(dir.join("qrels.txt"), &self.qrels).unwrap();
    }

    pub fn assert_matches(&self, dir: &Path) {
        for (name, expected) in [
            ("triples.tsv", &self.triples),
            ("mapping.tsv", &self.mapping),
            ("queries.jsonl", &self.queries),
            ("qrels.txt", &self.qrels),
        ] {
            let path = dir.join(name);
            let on_disk = std::fs::read_to_string(&path)
                .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
            assert_eq!(
                &on_disk,
                expected,
                "{} is out of sync with its generator",
                path.display()
            );
        }
    }
}

pub const SYNTH_ENTITIES: usize = 200;
pub const SYNTH_CLUSTERS: usize = 10;
pub const SYNTH_CLUSTER_SIZE: usize = 20;
pub const SYNTH_QUERIES: usize = 40;
/// Topic tokens shared by two clusters each, so text alone cannot tell the
/// relevant cluster from its twin.
pub const SYNTH_TOPICS: usize = 5;

pub fn synth_entity(i: usize) -> String {
    format!("e{i:03}")
}

/// Deterministic 200-entity knowledge base: ten 20-entity link clusters,
/// where clusters `c` and `c + 5` share a topic token and are therefore
/// textually indistinguishable. Queries name a topic and annotate the hub
/// of the intended cluster, so only graph-aware features can separate the
/// relevant cluster from its text twin.
pub fn generate_synth_kb() -> KbFiles {
    let mut triples = String::new();
    for i in 0..SYNTH_ENTITIES {
        let cluster = i / SYNTH_CLUSTER_SIZE;
        let topic = cluster % SYNTH_TOPICS;
        let member = i % SYNTH_CLUSTER_SIZE;
        let id = synth_entity(i);
        writeln!(triples, "{id}\tlabel\t\"n{i:03}\"").unwrap();
        writeln!(triples, "{id}\tcomment\t\"t{topic} common\"").unwrap();
        writeln!(triples, "{id}\tsubject\tCat_c{cluster}").unwrap();
        // Six intra-cluster links: the hub plus the next members clockwise.
        let mut targets: Vec<usize> = Vec::new();
        if member != 0 {
            targets.push(0);
        }
        let mut step = 1;
        while targets.len() < 6 {
            let t = (member + step) % SYNTH_CLUSTER_SIZE;
            step += 1;
            if t == member || targets.contains(&t) {
                continue;
            }
            targets.push(t);
        }
        for t in targets {
            let target = synth_entity(cluster * SYNTH_CLUSTER_SIZE + t);
            writeln!(triples, "{id}\tlinksTo\t{target}").unwrap();
        }
        let twin = cluster * SYNTH_CLUSTER_SIZE + (member + SYNTH_CLUSTER_SIZE / 2) % SYNTH_CLUSTER_SIZE;
        writeln!(triples, "{id}\tsameAs\t{}", synth_entity(twin)).unwrap();
    }

    let mapping = "\
# relation-to-field routing for the synthetic knowledge base
label\tnames
comment\tattributes
subject\tcategories
";

    let mut queries = String::new();
    let mut qrels = String::new();
    for q in 0..SYNTH_QUERIES {
        let cluster = q % SYNTH_CLUSTERS;
        let topic = cluster % SYNTH_TOPICS;
        let hub = synth_entity(cluster * SYNTH_CLUSTER_SIZE);
        writeln!(
            queries,
            "{{\"id\":\"q{q:02}\",\"text\":\"t{topic} zz{q:02}\",\
             \"annotations\":[{{\"entity\":\"{hub}\",\"score\":0.9}}]}}"
        )
        .unwrap();
        for member in 0..SYNTH_CLUSTER_SIZE {
            let entity = synth_entity(cluster * SYNTH_CLUSTER_SIZE + member);
            let grade = if member == 0 { 2 } else { 1 };
            writeln!(qrels, "q{q:02} 0 {entity} {grade}").unwrap();
        }
        // The text twin's hub is explicitly judged non-relevant.
        let twin_cluster = (cluster + SYNTH_TOPICS) % SYNTH_CLUSTERS;
        let twin_hub = synth_entity(twin_cluster * SYNTH_CLUSTER_SIZE);
        writeln!(qrels, "q{q:02} 0 {twin_hub} 0").unwrap();
    }

    KbFiles {
        triples,
        mapping: mapping.to_string(),
        queries,
        qrels,
    }
}

const NUMBER_WORDS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];

/// One toy query: id, text, annotated entity ("" = none), annotation
/// confidence, and the judged `(entity, grade)` list.
type ToyQuery = (
    &'static str,
    &'static str,
    &'static str,
    f64,
    Vec<(String, u32)>,
);

/// Tiny 20-entity knowledge base for CLI smoke tests: two link clusters
/// ("alpha" and "beta") whose text actually discriminates, eight queries.
pub fn generate_toy_kb() -> KbFiles {
    let topics = ["alpha", "beta"];
    let mut triples = String::new();
    for i in 0..20 {
        let cluster = i / 10;
        let member = i % 10;
        let topic = topics[cluster];
        let id = format!("e{i:02}");
        writeln!(triples, "{id}\tlabel\t\"{topic} {}\"", NUMBER_WORDS[member]).unwrap();
        writeln!(triples, "{id}\tcomment\t\"a member of the {topic} group\"").unwrap();
        writeln!(triples, "{id}\tsubject\tCat_{topic}").unwrap();
        let hub = if member == 0 { cluster * 10 + 2 } else { cluster * 10 };
        writeln!(triples, "{id}\tlinksTo\te{hub:02}").unwrap();
        writeln!(triples, "{id}\tlinksTo\te{:02}", cluster * 10 + (member + 1) % 10).unwrap();
        writeln!(triples, "{id}\tsameAs\te{:02}", cluster * 10 + (member + 5) % 10).unwrap();
    }

    let mapping = "\
# relation-to-field routing for the toy knowledge base
label\tnames
comment\tattributes
subject\tcategories
";

    // (qid, text, annotated entity or "", confidence, graded entities)
    let hub_and_cluster = |cluster: usize| -> Vec<(String, u32)> {
        let mut graded: Vec<(String, u32)> = (0..10)
            .map(|m| {
                let grade = if m == 0 { 2 } else { 1 };
                (format!("e{:02}", cluster * 10 + m), grade)
            })
            .collect();
        // one explicit non-relevant judgment from the other cluster
        graded.push((format!("e{:02}", (1 - cluster) * 10), 0));
        graded
    };
    let named_in_cluster = |cluster: usize, named: usize| -> Vec<(String, u32)> {
        (0..10)
            .map(|m| {
                let grade = if cluster * 10 + m == named { 2 } else { 1 };
                (format!("e{:02}", cluster * 10 + m), grade)
            })
            .collect()
    };
    let flat_cluster = |cluster: usize| -> Vec<(String, u32)> {
        (0..10).map(|m| (format!("e{:02}", cluster * 10 + m), 1)).collect()
    };

    let specs: Vec<ToyQuery> = vec![
        ("q1", "alpha", "e00", 0.9, hub_and_cluster(0)),
        ("q2", "alpha group", "e00", 0.7, hub_and_cluster(0)),
        ("q3", "beta", "e10", 0.9, hub_and_cluster(1)),
        ("q4", "beta group", "e10", 0.8, hub_and_cluster(1)),
        ("q5", "alpha seven", "", 0.0, named_in_cluster(0, 7)),
        ("q6", "beta three", "e13", 0.5, named_in_cluster(1, 13)),
        ("q7", "member alpha", "e00", 0.6, flat_cluster(0)),
        ("q8", "group beta", "e10", 0.9, hub_and_cluster(1)),
    ];

    let mut queries = String::new();
    let mut qrels = String::new();
    for (qid, text, annotated, score, graded) in &specs {
        if annotated.is_empty() {
            writeln!(queries, "{{\"id\":\"{qid}\",\"text\":\"{text}\"}}").unwrap();
        } else {
            writeln!(
                queries,
                "{{\"id\":\"{qid}\",\"text\":\"{text}\",\
                 \"annotations\":[{{\"entity\":\"{annotated}\",\"score\":{score}}}]}}"
            )
            .unwrap();
        }
        for (entity, grade) in graded {
            writeln!(qrels, "{qid} 0 {entity} {grade}").unwrap();
        }
    }

    KbFiles {
        triples,
        mapping: mapping.to_string(),
        queries,
        qrels,
    }
}

/// Committed demo config for the toy fixture, runnable from its directory.
pub fn toy_config() -> &'static str {
    "\
# End-to-end demo over the bundled toy knowledge base. All paths are
# relative to this file; artifacts land in work/.
[paths]
triples = \"triples.tsv\"
mapping = \"mapping.tsv\"
queries = \"queries.jsonl\"
qrels = \"qrels.txt\"
workdir = \"work\"

[run]
variant = \"both\"
seed = 42
candidates_k = 20

[transe]
dim = 8
epochs = 60
learning_rate = 0.05
quiet = true

[ltr]
folds = 4

[eval]
precision_at = [5, 10]
"
}

/// Experiment config for the synthetic fixture with everything else left
/// at its defaults (seed 42 included).
pub fn synth_config(fixture: &Path, workdir: &Path, variant: &str) -> String {
    format!(
        "\
[paths]
triples = \"{}\"
mapping = \"{}\"
queries = \"{}\"
qrels = \"{}\"
workdir = \"{}\"

[run]
variant = \"{variant}\"

[transe]
dim = 32
epochs = 150
learning_rate = 0.05
quiet = true
",
        fixture.join("triples.tsv").display(),
        fixture.join("mapping.tsv").display(),
        fixture.join("queries.jsonl").display(),
        fixture.join("qrels.txt").display(),
        workdir.display(),
    )
}

// ---------------------------------------------------------------------------
// brute-force counting references
//
// Independent re-implementations of the positional statistics, written as
// plain scans so index bugs cannot hide in shared code.

pub fn brute_unigram(tokens: &[String], term: &str) -> u64 {
    let mut count = 0;
    for t in tokens {
        if t == term {
            count += 1;
        }
    }
    count
}

/// Exact adjacency: `t2` directly follows `t1`.
pub fn brute_ordered(tokens: &[String], t1: &str, t2: &str) -> u64 {
    let mut count = 0;
    for p in 1..tokens.len() {
        if tokens[p - 1] == t1 && tokens[p] == t2 {
            count += 1;
        }
    }
    count
}

/// Co-occurrence pairs with position distance < window, both orders; for
/// t1 == t2 each ordered pair of distinct positions counts once.
pub fn brute_window(tokens: &[String], t1: &str, t2: &str, window: usize) -> u64 {
    let mut count = 0;
    for (p1, a) in tokens.iter().enumerate() {
        if a != t1 {
            continue;
        }
        for (p2, b) in tokens.iter().enumerate() {
            if b != t2 || p1 == p2 {
                continue;
            }
            if p1.abs_diff(p2) < window {
                count += 1;
            }
        }
    }
    count
}

/// Random small corpus over a tiny vocabulary (entity ids are zero-padded
/// so the documents stay id-sorted as the corpus type requires).
pub fn random_corpus(rng: &mut ChaCha8Rng, max_docs: usize, max_tokens: usize, vocab: &[&str]) -> Corpus {
    let n_docs = rng.gen_range(1..=max_docs);
    let docs = (0..n_docs)
        .map(|i| {
            let mut doc = EntityDoc::new(&format!("e{i:03}"));
            for field in Field::ALL {
                let len = rng.gen_range(0..=max_tokens);
                doc.fields[field.index()] = (0..len)
                    .map(|_| vocab[rng.gen_range(0..vocab.len())].to_string())
                    .collect();
            }
            doc
        })
        .collect();
    Corpus { docs }
}

// ---------------------------------------------------------------------------
// independently coded metric evaluator
//
// Precision is recomputed from scratch at every relevant rank by rescanning
// the prefix, deliberately not sharing the incremental-hit structure of the
// library implementation.

pub fn reference_average_precision(
    ranked: &[String],
    judged: &BTreeMap<String, u32>,
    cutoff: usize,
) -> Option<f64> {
    let is_relevant = |entity: &str| judged.get(entity).map(|&g| g > 0).unwrap_or(false);
    let total_relevant = judged.iter().filter(|(_, &g)| g > 0).count();
    if total_relevant == 0 {
        return None;
    }
    let mut sum = 0.0;
    for (i, entity) in ranked.iter().enumerate() {
        if i >= cutoff {
            break;
        }
        if is_relevant(entity) {
            let hits_in_prefix = ranked[..=i].iter().filter(|e| is_relevant(e)).count();
            sum += hits_in_prefix as f64 / (i + 1) as f64;
        }
    }
    Some(sum / total_relevant as f64)
}

pub fn reference_precision_at_k(
    ranked: &[String],
    judged: &BTreeMap<String, u32>,
    k: usize,
) -> Option<f64> {
    if !judged.values().any(|&g| g > 0) {
        return None;
    }
    let mut hits = 0usize;
    for position in 0..k {
        match ranked.get(position) {
            Some(entity) if judged.get(entity).map(|&g| g > 0).unwrap_or(false) => hits += 1,
            _ => {} // missing positions pad as non-relevant
        }
    }
    Some(hits as f64 / k as f64)
}
