//! Translation-based knowledge-graph embeddings: margin-based ranking loss
//! over (head, relation, tail) triples with negative sampling, trained by
//! SGD. Produces an [`EmbeddingStore`] consumed by the embedding-similarity
//! query feature.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Tail, Triple};
use crate::entmatch::EmbeddingStore;
use crate::error::{Error, Result};

/// Distance norm for the translation energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranseConfig {
    pub dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Negative samples drawn per positive triple per epoch.
    pub negatives: usize,
    pub norm: Norm,
    pub seed: u64,
    /// Suppress the per-epoch loss line.
    pub quiet: bool,
}

impl Default for TranseConfig {
    fn default() -> Self {
        TranseConfig {
            dim: 100,
            margin: 1.0,
            learning_rate: 0.001,
            epochs: 100,
            negatives: 1,
            norm: Norm::L2,
            seed: 42,
            quiet: false,
        }
    }
}

impl TranseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("embedding dimension must be >= 1".into()));
        }
        if self.margin <= 0.0 || !self.margin.is_finite() {
            return Err(Error::Config("margin must be > 0".into()));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if self.negatives == 0 {
            return Err(Error::Config("negatives per positive must be >= 1".into()));
        }
        Ok(())
    }
}

/// Interned triples: ids are indices into sorted entity/relation vocabularies.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleSet {
    pub triples: Vec<[usize; 3]>,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
}

impl TripleSet {
    /// Build from parsed triples, keeping only entity-valued tails.
    /// Vocabularies are sorted so interning is order-independent.
    pub fn from_triples(triples: &[Triple]) -> TripleSet {
        let mut entities = std::collections::BTreeSet::new();
        let mut relations = std::collections::BTreeSet::new();
        for t in triples {
            if let Tail::Entity(tail) = &t.tail {
                entities.insert(t.head.clone());
                entities.insert(tail.clone());
                relations.insert(t.relation.clone());
            }
        }
        let entities: Vec<String> = entities.into_iter().collect();
        let relations: Vec<String> = relations.into_iter().collect();
        let entity_id: std::collections::HashMap<&str, usize> = entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.as_str(), i))
            .collect();
        let relation_id: std::collections::HashMap<&str, usize> = relations
            .iter()
            .enumerate()
            .map(|(i, r)| (r.as_str(), i))
            .collect();
        let interned = triples
            .iter()
            .filter_map(|t| match &t.tail {
                Tail::Entity(tail) => Some([
                    entity_id[t.head.as_str()],
                    relation_id[t.relation.as_str()],
                    entity_id[tail.as_str()],
                ]),
                Tail::Literal(_) => None,
            })
            .collect();
        TripleSet {
            triples: interned,
            entities,
            relations,
        }
    }
}

fn norm_distance(diff: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::L1 => diff.iter().map(|d| d.abs()).sum(),
        Norm::L2 => diff.iter().map(|d| d * d).sum::<f64>().sqrt(),
    }
}

/// Translation energy `||h + r - t||` under the chosen norm, looked up from
/// a store by id.
pub fn energy(store: &EmbeddingStore, head: &str, relation: &str, tail: &str, norm: Norm) -> Result<f64> {
    let h = store
        .entity(head)
        .ok_or_else(|| Error::UnknownEntity(head.to_string()))?;
    let t = store
        .entity(tail)
        .ok_or_else(|| Error::UnknownEntity(tail.to_string()))?;
    let r = store
        .relation(relation)
        .ok_or_else(|| Error::UnknownRelation(relation.to_string()))?;
    let diff: Vec<f64> = h
        .iter()
        .zip(r)
        .zip(t)
        .map(|((h, r), t)| h + r - t)
        .collect();
    Ok(norm_distance(&diff, norm))
}

/// Corrupt a triple by replacing the head or the tail (fair coin) with a
/// uniformly drawn entity different from the original one.
pub fn corrupt(triple: [usize; 3], entity_count: usize, rng: &mut impl Rng) -> Result<[usize; 3]> {
    if entity_count < 2 {
        return Err(Error::Contract(
            "negative sampling needs at least two entities".into(),
        ));
    }
    let corrupt_head = rng.gen_bool(0.5);
    let original = if corrupt_head { triple[0] } else { triple[2] };
    // Uniform over the other entity_count - 1 entities.
    let mut replacement = rng.gen_range(0..entity_count - 1);
    if replacement >= original {
        replacement += 1;
    }
    let mut corrupted = triple;
    if corrupt_head {
        corrupted[0] = replacement;
    } else {
        corrupted[2] = replacement;
    }
    Ok(corrupted)
}

/// Incremental SGD trainer over interned triples. Exposes single steps and
/// epochs so tests can drive updates directly.
pub struct Trainer {
    dim: usize,
    norm: Norm,
    margin: f64,
    learning_rate: f64,
    entities: Vec<Vec<f64>>,
    relations: Vec<Vec<f64>>,
    entity_names: Vec<String>,
    relation_names: Vec<String>,
}

impl Trainer {
    /// Initialize all vectors uniformly in `[-6/sqrt(dim), 6/sqrt(dim)]`
    /// and project entity vectors onto the unit sphere.
    pub fn new(set: &TripleSet, config: &TranseConfig, rng: &mut impl Rng) -> Result<Trainer> {
        config.validate()?;
        if set.triples.is_empty() {
            return Err(Error::Config("cannot train on an empty triple set".into()));
        }
        let bound = 6.0 / (config.dim as f64).sqrt();
        let mut draw = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..config.dim).map(|_| rng.gen_range(-bound..bound)).collect())
                .collect()
        };
        let entities = draw(set.entities.len());
        let relations = draw(set.relations.len());
        let mut trainer = Trainer {
            dim: config.dim,
            norm: config.norm,
            margin: config.margin,
            learning_rate: config.learning_rate,
            entities,
            relations,
            entity_names: set.entities.clone(),
            relation_names: set.relations.clone(),
        };
        trainer.normalize_entities();
        Ok(trainer)
    }

    /// Project every entity vector onto the unit sphere (zero vectors are
    /// left untouched).
    pub fn normalize_entities(&mut self) {
        for v in &mut self.entities {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                for x in v {
                    *x /= norm;
                }
            }
        }
    }

    fn diff(&self, [h, r, t]: [usize; 3]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| self.entities[h][i] + self.relations[r][i] - self.entities[t][i])
            .collect()
    }

    /// Energy of an interned triple under the trainer's current vectors.
    pub fn triple_energy(&self, triple: [usize; 3]) -> f64 {
        norm_distance(&self.diff(triple), self.norm)
    }

    /// One hinge step on a (positive, negative) pair. Returns the hinge
    /// loss; when the margin is already satisfied no vector changes.
    pub fn step(&mut self, positive: [usize; 3], negative: [usize; 3]) -> f64 {
        let diff_pos = self.diff(positive);
        let diff_neg = self.diff(negative);
        let d_pos = norm_distance(&diff_pos, self.norm);
        let d_neg = norm_distance(&diff_neg, self.norm);
        let loss = self.margin + d_pos - d_neg;
        if loss <= 0.0 {
            return 0.0;
        }
        let grad = |diff: &[f64], dist: f64| -> Vec<f64> {
            match self.norm {
                Norm::L1 => diff.iter().map(|d| d.signum()).collect(),
                Norm::L2 => {
                    if dist == 0.0 {
                        vec![0.0; diff.len()]
                    } else {
                        diff.iter().map(|d| d / dist).collect()
                    }
                }
            }
        };
        let g_pos = grad(&diff_pos, d_pos);
        let g_neg = grad(&diff_neg, d_neg);
        let lr = self.learning_rate;
        let apply = |row: &mut [f64], grad: &[f64], sign: f64| {
            for (x, g) in row.iter_mut().zip(grad) {
                *x += sign * lr * g;
            }
        };
        let [h, r, t] = positive;
        apply(&mut self.entities[h], &g_pos, -1.0);
        apply(&mut self.relations[r], &g_pos, -1.0);
        apply(&mut self.entities[t], &g_pos, 1.0);
        let [h, r, t] = negative;
        apply(&mut self.entities[h], &g_neg, 1.0);
        apply(&mut self.relations[r], &g_neg, 1.0);
        apply(&mut self.entities[t], &g_neg, -1.0);
        loss
    }

    /// One epoch: visit positives in shuffled order, draw `negatives`
    /// corruptions for each, step, then re-project entities. Returns the
    /// mean hinge loss over all (positive, negative) pairs.
    pub fn epoch(
        &mut self,
        triples: &[[usize; 3]],
        negatives: usize,
        rng: &mut impl Rng,
    ) -> Result<f64> {
        let mut order: Vec<usize> = (0..triples.len()).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        for idx in order {
            for _ in 0..negatives {
                let negative = corrupt(triples[idx], self.entities.len(), rng)?;
                total += self.step(triples[idx], negative);
            }
        }
        self.normalize_entities();
        Ok(total / (triples.len() * negatives) as f64)
    }

    /// Extract the learned vectors into a store keyed by original ids.
    pub fn into_store(self) -> EmbeddingStore {
        let mut store = EmbeddingStore::new(self.dim);
        for (name, vector) in self.entity_names.iter().zip(self.entities) {
            store.insert_entity(name, vector).expect("dimensions agree");
        }
        for (name, vector) in self.relation_names.iter().zip(self.relations) {
            store.insert_relation(name, vector).expect("dimensions agree");
        }
        store
    }
}

/// Train embeddings end to end; fully determined by the triple set and
/// config (all randomness comes from the seeded generator). Prints one
/// `epoch <n> mean_loss <value>` line per epoch unless `quiet` is set.
pub fn train(set: &TripleSet, config: &TranseConfig) -> Result<EmbeddingStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trainer = Trainer::new(set, config, &mut rng)?;
    for epoch in 0..config.epochs {
        let mean_loss = trainer.epoch(&set.triples, config.negatives, &mut rng)?;
        if !config.quiet {
            println!("epoch {} mean_loss {:.6}", epoch + 1, mean_loss);
        }
    }
    Ok(trainer.into_store())
}
