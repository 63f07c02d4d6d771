//! Embedding vectors, token stores and retrieval datasets.
//!
//! Stores hold one L2-normalized vector per token, so the dot product of two
//! stored vectors is their cosine similarity. Datasets pair query tokens with
//! their exact nearest neighbor as the gold document and keep every unused
//! token as the irrelevant-document pool.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derived_rng;

pub type DocId = u32;

/// Dense real-valued embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    components: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(components: Vec<f64>) -> Self {
        debug_assert!(components.iter().all(|c| c.is_finite()));
        Self { components }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            components: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn l2_norm(&self) -> f64 {
        self.components.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Scaled copy with unit L2 norm; zero vectors cannot be normalized.
    pub fn normalized(&self) -> Result<Self> {
        let norm = self.l2_norm();
        if norm == 0.0 {
            return Err(Error::Numeric("cannot normalize a zero vector".into()));
        }
        Ok(Self::new(self.components.iter().map(|c| c / norm).collect()))
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
                context: "vector addition".into(),
            });
        }
        for (a, b) in self.components.iter_mut().zip(&other.components) {
            *a += b;
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Bi-encoder relevance: the dot product of the two embeddings. On stored
/// (unit-norm) vectors this equals cosine similarity.
pub fn score(query: &EmbeddingVector, doc: &EmbeddingVector) -> Result<f64> {
    if query.dim() != doc.dim() {
        return Err(Error::DimensionMismatch {
            expected: query.dim(),
            found: doc.dim(),
            context: "relevance score".into(),
        });
    }
    Ok(dot(query.components(), doc.components()))
}

/// Exact top-k documents for a query, ranked by score descending with ties
/// broken by ascending doc id. Returns fewer than `k` entries when the
/// collection is smaller.
pub fn top_k(
    query: &EmbeddingVector,
    docs: &[(DocId, EmbeddingVector)],
    k: usize,
) -> Result<Vec<(DocId, f64)>> {
    let mut ranked = docs
        .iter()
        .map(|(id, emb)| score(query, emb).map(|s| (*id, s)))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

/// Vocabulary of tokens with one normalized embedding per token.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    data: Vec<f64>,
    dim: usize,
}

impl EmbeddingStore {
    /// Build a store from raw (token, vector) entries, normalizing each
    /// vector. Tokens must be unique and vectors must share one dimension.
    pub fn from_entries(entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let Some(dim) = entries.first().map(|(_, v)| v.len()) else {
            return Err(Error::InvalidParameter(
                "embedding store needs at least one token".into(),
            ));
        };
        let mut tokens = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        let mut data = Vec::with_capacity(entries.len() * dim);
        for (token, vector) in entries {
            if vector.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: vector.len(),
                    context: format!("vector for token {token:?}"),
                });
            }
            if vector.iter().any(|c| !c.is_finite()) {
                return Err(Error::Numeric(format!(
                    "vector for token {token:?} has non-finite components"
                )));
            }
            let norm = vector.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Numeric(format!(
                    "vector for token {token:?} has zero norm"
                )));
            }
            if index.insert(token.clone(), tokens.len() as u32).is_some() {
                return Err(Error::InvalidParameter(format!(
                    "duplicate token {token:?}"
                )));
            }
            data.extend(vector.iter().map(|c| c / norm));
            tokens.push(token);
        }
        Ok(Self {
            tokens,
            index,
            data,
            dim,
        })
    }

    /// Load a GenSim-style text vector file: an optional `count dim` header
    /// line, then one `token c1 c2 ...` line per token. `limit` keeps only
    /// the first tokens, mirroring truncated vocabulary runs.
    pub fn load_vectors(path: impl AsRef<Path>, limit: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let reader = BufReader::new(file);
        let mut entries = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            if limit.is_some_and(|l| entries.len() >= l) {
                break;
            }
            let line = line.map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().expect("non-empty line has a first field");
            let rest: Vec<&str> = fields.collect();
            if idx == 0
                && rest.len() == 1
                && token.parse::<u64>().is_ok()
                && rest[0].parse::<u64>().is_ok()
            {
                // "count dim" header
                continue;
            }
            let mut vector = Vec::with_capacity(rest.len());
            for field in rest {
                let value: f64 = field.parse().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: format!("bad component {field:?} for token {token:?}: {e}"),
                })?;
                vector.push(value);
            }
            if vector.is_empty() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: format!("token {token:?} has no vector components"),
                });
            }
            entries.push((token.to_string(), vector));
        }
        let dim = entries.first().map(|(_, v)| v.len()).unwrap_or(0);
        if let Some((token, vector)) = entries.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: vector.len(),
                context: format!("vector for token {token:?} in {}", path.display()),
            });
        }
        Self::from_entries(entries)
    }

    /// Deterministic synthetic vocabulary: `vocab` tokens `w0..`, each with a
    /// vector drawn uniformly on the unit sphere of the given dimension.
    pub fn synthesize(vocab: usize, dim: usize, seed: u64) -> Result<Self> {
        if vocab == 0 || dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "synthetic store needs vocab >= 1 and dim >= 1, got vocab={vocab} dim={dim}"
            )));
        }
        let mut rng = derived_rng(seed, &[0x5704_u64]);
        let mut entries = Vec::with_capacity(vocab);
        for i in 0..vocab {
            // Normalized Gaussian components are uniform on the sphere; the
            // zero vector has probability zero but regenerate defensively.
            let vector = loop {
                let v: Vec<f64> = (0..dim)
                    .map(|_| rand::Rng::sample(&mut rng, StandardNormal))
                    .collect();
                if v.iter().map(|c| c * c).sum::<f64>() > 0.0 {
                    break v;
                }
            };
            entries.push((format!("w{i}"), vector));
        }
        Self::from_entries(entries)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn token(&self, idx: u32) -> &str {
        &self.tokens[idx as usize]
    }

    pub fn position(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn vector(&self, idx: u32) -> &[f64] {
        let i = idx as usize * self.dim;
        &self.data[i..i + self.dim]
    }

    pub fn embedding(&self, idx: u32) -> EmbeddingVector {
        EmbeddingVector::new(self.vector(idx).to_vec())
    }
}

/// Query/gold pairs plus the pool of irrelevant documents, all as store
/// indices. Query tokens and document tokens never overlap.
#[derive(Debug, Clone)]
pub struct RetrievalDataset {
    store: Arc<EmbeddingStore>,
    queries: Vec<u32>,
    golds: Vec<u32>,
    irrelevant_pool: Vec<u32>,
}

impl RetrievalDataset {
    /// Sample query candidates uniformly (seeded) and pair each with its
    /// exact nearest neighbor over the remaining vocabulary; a pair is
    /// accepted only when its cosine exceeds `threshold`. Accepted query
    /// tokens leave the document candidate pool and accepted gold tokens
    /// leave the query candidate pool; every token used in no pair ends up
    /// in the irrelevant pool.
    pub fn generate(
        store: Arc<EmbeddingStore>,
        num_queries: usize,
        threshold: f64,
        seed: u64,
    ) -> Result<Self> {
        if num_queries == 0 {
            return Err(Error::InvalidParameter(
                "dataset needs at least one query".into(),
            ));
        }
        let vocab = store.len();
        let mut order: Vec<u32> = (0..vocab as u32).collect();
        order.shuffle(&mut derived_rng(seed, &[0x0da7_u64]));

        let mut in_query_pool = vec![true; vocab];
        let mut in_doc_pool = vec![true; vocab];
        let mut used_as_gold = vec![false; vocab];
        let mut queries = Vec::with_capacity(num_queries);
        let mut golds = Vec::with_capacity(num_queries);

        for &candidate in &order {
            if queries.len() == num_queries {
                break;
            }
            if !in_query_pool[candidate as usize] {
                continue;
            }
            let Some((gold, cosine)) = nearest_neighbor(&store, candidate, &in_doc_pool) else {
                continue;
            };
            if cosine <= threshold {
                continue;
            }
            queries.push(candidate);
            golds.push(gold);
            in_query_pool[candidate as usize] = false;
            in_doc_pool[candidate as usize] = false;
            in_query_pool[gold as usize] = false;
            used_as_gold[gold as usize] = true;
        }

        if queries.len() < num_queries {
            return Err(Error::DatasetExhausted {
                requested: num_queries,
                accepted: queries.len(),
            });
        }

        let query_set: std::collections::HashSet<u32> = queries.iter().copied().collect();
        let irrelevant_pool = (0..vocab as u32)
            .filter(|t| !query_set.contains(t) && !used_as_gold[*t as usize])
            .collect();
        Ok(Self {
            store,
            queries,
            golds,
            irrelevant_pool,
        })
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn query_token(&self, i: usize) -> u32 {
        self.queries[i]
    }

    pub fn gold_token(&self, i: usize) -> u32 {
        self.golds[i]
    }

    pub fn query_embedding(&self, i: usize) -> EmbeddingVector {
        self.store.embedding(self.queries[i])
    }

    pub fn gold_embedding(&self, i: usize) -> EmbeddingVector {
        self.store.embedding(self.golds[i])
    }

    pub fn irrelevant_pool(&self) -> &[u32] {
        &self.irrelevant_pool
    }
}

/// Exact nearest neighbor of `query` among pool members, by cosine with ties
/// broken toward the smaller index. Deterministic under parallel reduction
/// because the comparison is a total order.
fn nearest_neighbor(store: &EmbeddingStore, query: u32, in_pool: &[bool]) -> Option<(u32, f64)> {
    let q = store.vector(query);
    (0..store.len() as u32)
        .into_par_iter()
        .filter(|&j| j != query && in_pool[j as usize])
        .map(|j| (j, dot(q, store.vector(j))))
        .reduce_with(|a, b| match b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)) {
            std::cmp::Ordering::Greater => b,
            _ => a,
        })
}
