//! Table embeddings and private nearest-neighbor voting over an
//! over-generated candidate pool.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Collection, ColumnKind, Schema, UserTable};
use crate::error::{Error, Result};
use crate::privacy::{gaussian_sigma, rho_from_epsilon, BudgetLedger};
use crate::rng::rng_for;

/// Maps a whole table to a fixed-length vector.
pub trait Embedder: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, schema: &Schema, table: &UserTable) -> Vec<f64>;
}

/// Statistics embedder: a schema fingerprint block, per-column summaries
/// (mean, std, first, last for numeric and timestamp columns; category
/// frequencies for categorical ones) and the table length, z-scored against
/// the fitting collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEmbedder {
    pub fingerprint_dim: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const DEFAULT_FINGERPRINT_DIM: usize = 8;

fn column_seed(name: &str, kind: ColumnKind) -> u64 {
    let digest = Sha256::digest(format!("{name}:{kind:?}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn fingerprint(schema: &Schema, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for c in &schema.columns {
        let mut rng = rng_for(column_seed(&c.name, c.kind), "fingerprint", 0);
        for x in &mut v {
            let g: f64 = StandardNormal.sample(&mut rng);
            *x += g;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn raw_features(schema: &Schema, table: &UserTable, fingerprint_dim: usize) -> Vec<f64> {
    let mut v = fingerprint(schema, fingerprint_dim);
    for (c, col) in schema.columns.iter().enumerate() {
        match col.kind {
            ColumnKind::Numeric | ColumnKind::Timestamp => {
                let xs: Vec<f64> = table.column(c).filter_map(|v| v.as_f64()).collect();
                if xs.is_empty() {
                    v.extend([0.0; 4]);
                    continue;
                }
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                v.extend([mean, std, xs[0], xs[xs.len() - 1]]);
            }
            ColumnKind::Categorical => {
                let cats = col.categories();
                let mut freq = vec![0.0; cats.len()];
                let mut seen = 0.0;
                for s in table.column(c).filter_map(|v| v.as_str()) {
                    if let Some(i) = cats.iter().position(|k| k == s) {
                        freq[i] += 1.0;
                        seen += 1.0;
                    }
                }
                if seen > 0.0 {
                    freq.iter_mut().for_each(|f| *f /= seen);
                }
                v.extend(freq);
            }
        }
    }
    v.push(table.len() as f64);
    v
}

impl ReferenceEmbedder {
    /// Fit the z-scoring on `fitting`; constant features get unit spread.
    pub fn fit(fitting: &Collection) -> Self {
        Self::fit_with_dim(fitting, DEFAULT_FINGERPRINT_DIM)
    }

    pub fn fit_with_dim(fitting: &Collection, fingerprint_dim: usize) -> Self {
        let schema = fitting.schema();
        let rows: Vec<Vec<f64>> = fitting.tables().map(|t| raw_features(schema, t, fingerprint_dim)).collect();
        let dim = raw_features(schema, &UserTable::new("", Vec::new()), fingerprint_dim).len();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x / n;
            }
        }
        let mut std = vec![0.0; dim];
        for r in &rows {
            for ((s, x), m) in std.iter_mut().zip(r).zip(&mean) {
                *s += (x - m).powi(2) / n;
            }
        }
        let std = std.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        ReferenceEmbedder {
            fingerprint_dim,
            mean,
            std,
        }
    }
}

impl Embedder for ReferenceEmbedder {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn embed(&self, schema: &Schema, table: &UserTable) -> Vec<f64> {
        raw_features(schema, table, self.fingerprint_dim)
            .into_iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

/// One embedding per table, in user-id order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Embeddings {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn embed_collection(embedder: &impl Embedder, collection: &Collection) -> Embeddings {
    let tables: Vec<&UserTable> = collection.tables().collect();
    let rows = tables.par_iter().map(|t| embedder.embed(collection.schema(), t)).collect();
    Embeddings {
        ids: tables.iter().map(|t| t.user_id.clone()).collect(),
        rows,
    }
}

/// A ledger capped at the selection share of the budget.
pub fn selection_ledger(epsilon_select: f64, delta: f64) -> Result<BudgetLedger> {
    if !(epsilon_select > 0.0) {
        return Err(Error::Budget(format!("selection epsilon must be positive, got {epsilon_select}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Budget(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(BudgetLedger::new(rho_from_epsilon(epsilon_select, delta), delta))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionOutcome {
    /// Chosen candidate ids, highest noisy vote first.
    pub selected: Vec<String>,
    pub votes: Vec<f64>,
    pub noisy_votes: Vec<f64>,
    pub sigma: f64,
    pub k: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Exact votes: each real row adds 1 to its `k` nearest candidates
/// (Euclidean, ties to the lower candidate index).
pub fn knn_votes(real: &[Vec<f64>], candidates: &[Vec<f64>], k: usize) -> Vec<f64> {
    let k = k.min(candidates.len());
    let picks: Vec<Vec<usize>> = real
        .par_iter()
        .map(|r| {
            let mut d: Vec<(f64, usize)> = candidates.iter().enumerate().map(|(i, c)| (sq_dist(r, c), i)).collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.into_iter().take(k).map(|(_, i)| i).collect()
        })
        .collect();
    let mut votes = vec![0.0; candidates.len()];
    for p in picks {
        for i in p {
            votes[i] += 1.0;
        }
    }
    votes
}

/// Top-`m_out` candidates by noisy vote. With a ledger, the remaining cap is
/// spent on one Gaussian measurement of the vote vector (sensitivity `√k`);
/// without one the exact votes are used.
pub fn private_knn_select(
    real: &Embeddings,
    candidates: &Embeddings,
    k: usize,
    m_out: usize,
    ledger: Option<&mut BudgetLedger>,
    seed: u64,
) -> Result<SelectionOutcome> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if m_out > candidates.ids.len() {
        return Err(Error::invalid(format!(
            "cannot select {m_out} of {} candidates",
            candidates.ids.len()
        )));
    }
    let votes = knn_votes(&real.rows, &candidates.rows, k);
    let sensitivity = (k as f64).sqrt();
    let sigma = match ledger {
        Some(ledger) => {
            let rho = ledger.rho_cap - ledger.spent();
            if !(rho > 0.0) {
                return Err(Error::Budget("selection budget already spent".into()));
            }
            let sigma = gaussian_sigma(sensitivity, rho);
            ledger.charge("selection votes", sensitivity, sigma)?;
            sigma
        }
        None => 0.0,
    };
    let mut rng = rng_for(seed, "selection-noise", 0);
    let noisy_votes: Vec<f64> = votes
        .iter()
        .map(|&v| {
            let g: f64 = StandardNormal.sample(&mut rng);
            v + sigma * g
        })
        .collect();
    let mut order: Vec<usize> = (0..votes.len()).collect();
    order.sort_by(|&a, &b| noisy_votes[b].total_cmp(&noisy_votes[a]).then(a.cmp(&b)));
    Ok(SelectionOutcome {
        selected: order.into_iter().take(m_out).map(|i| candidates.ids[i].clone()).collect(),
        votes,
        noisy_votes,
        sigma,
        k,
    })
}
