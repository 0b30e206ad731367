//! Flattening variable-length tables into fixed-width rows, and the local
//! MaxEnt construction that shows what adjacent-step marginals cannot capture.

use std::collections::BTreeMap;
use std::io::Write;


use crate::data::{Collection, Column, Schema, UserTable, Value};
use crate::error::{Error, Result};

/// One fixed-width row per user with `d·L` cells, time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatTable {
    base: Schema,
    schema: Schema,
    window: usize,
    pub user_ids: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

/// `"<col>__t<k>"`, with `k` one-based.
pub fn flat_column_name(col: &str, step: usize) -> String {
    format!("{col}__t{}", step + 1)
}

pub fn flat_schema(base: &Schema, window: usize) -> Result<Schema> {
    let mut cols = Vec::with_capacity(base.len() * window);
    for t in 0..window {
        for c in &base.columns {
            cols.push(Column {
                name: flat_column_name(&c.name, t),
                ..c.clone()
            });
        }
    }
    Schema::new(cols)
}

impl FlatTable {
    /// Assemble a flat table from raw rows (e.g. a sampler's output).
    pub fn from_rows(base: Schema, window: usize, user_ids: Vec<String>, rows: Vec<Vec<Value>>) -> Result<Self> {
        let schema = flat_schema(&base, window)?;
        if user_ids.len() != rows.len() {
            return Err(Error::invalid("user id count does not match row count"));
        }
        if let Some(r) = rows.iter().position(|r| r.len() != schema.len()) {
            return Err(Error::invalid(format!("flat row {r} has the wrong width")));
        }
        Ok(FlatTable {
            base,
            schema,
            window,
            user_ids,
            rows,
        })
    }

    pub fn base_schema(&self) -> &Schema {
        &self.base
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn num_features(&self) -> usize {
        self.base.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Flat index of feature `feature` at zero-based step `step`.
    pub fn index(&self, feature: usize, step: usize) -> usize {
        step * self.base.len() + feature
    }

    /// CSV with a `user_id` column followed by the flat columns.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["user_id".to_string()];
        header.extend(self.schema.names().map(String::from));
        w.write_record(&header)?;
        for (id, row) in self.user_ids.iter().zip(&self.rows) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(Value::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pad each table to `window` rows with all-Null rows and concatenate.
pub fn flatten(collection: &Collection, window: usize) -> Result<FlatTable> {
    let base = collection.schema().clone();
    let d = base.len();
    let mut user_ids = Vec::with_capacity(collection.len());
    let mut rows = Vec::with_capacity(collection.len());
    for t in collection.tables() {
        if t.len() > window {
            return Err(Error::invalid(format!(
                "user {:?} has {} rows, longer than window {window}; truncate first",
                t.user_id,
                t.len()
            )));
        }
        let mut flat = Vec::with_capacity(d * window);
        for r in &t.rows {
            flat.extend(r.iter().cloned());
        }
        flat.resize(d * window, Value::Null);
        user_ids.push(t.user_id.clone());
        rows.push(flat);
    }
    FlatTable::from_rows(base, window, user_ids, rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unflattened {
    pub collection: Collection,
    /// Users whose flat row was entirely Null and were dropped.
    pub dropped: Vec<String>,
}

/// Inverse of [`flatten`]: strip trailing all-Null steps. Interior all-Null
/// steps are kept as Null rows.
pub fn unflatten(flat: &FlatTable) -> Result<Unflattened> {
    let d = flat.num_features();
    let mut tables = Vec::with_capacity(flat.len());
    let mut dropped = Vec::new();
    for (id, row) in flat.user_ids.iter().zip(&flat.rows) {
        let mut steps: Vec<Vec<Value>> = row.chunks(d).map(<[Value]>::to_vec).collect();
        while steps.last().is_some_and(|s| s.iter().all(Value::is_null)) {
            steps.pop();
        }
        if steps.is_empty() {
            dropped.push(id.clone());
        } else {
            tables.push(UserTable::new(id.clone(), steps));
        }
    }
    Ok(Unflattened {
        collection: Collection::new(flat.base.clone(), tables)?,
        dropped,
    })
}

/// Keep users with at least `window` rows, truncated to exactly `window`.
pub fn filter_truncate(collection: &Collection, window: usize) -> Result<Collection> {
    if window == 0 {
        return Err(Error::invalid("window must be at least 1"));
    }
    let kept = collection
        .tables()
        .filter(|t| t.len() >= window)
        .map(|t| UserTable::new(t.user_id.clone(), t.rows[..window].to_vec()));
    Collection::new(collection.schema().clone(), kept)
}

/// Trajectories of length 3 over a finite row alphabet.
pub type Trajectory<S> = [S; 3];

const NORMALIZATION_TOL: f64 = 1e-9;

/// The maximum-entropy distribution consistent with the adjacent-pair
/// marginals of `dist`: the chain `P(x₁,x₂)·P(x₂,x₃)/P(x₂)`, under which
/// `x₁ ⊥ x₃ | x₂`. Only trajectories with positive mass are returned.
pub fn maxent_two_local<S: Ord + Clone>(
    dist: &BTreeMap<Trajectory<S>, f64>,
) -> Result<BTreeMap<Trajectory<S>, f64>> {
    let total: f64 = dist.values().sum();
    if dist.values().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::invalid(format!("input distribution sums to {total}")));
    }
    let mut first_pair: BTreeMap<(S, S), f64> = BTreeMap::new();
    let mut second_pair: BTreeMap<S, BTreeMap<S, f64>> = BTreeMap::new();
    let mut middle: BTreeMap<S, f64> = BTreeMap::new();
    for ([a, b, c], &p) in dist {
        if p == 0.0 {
            continue;
        }
        *first_pair.entry((a.clone(), b.clone())).or_default() += p;
        *second_pair.entry(b.clone()).or_default().entry(c.clone()).or_default() += p;
        *middle.entry(b.clone()).or_default() += p;
    }
    let mut out = BTreeMap::new();
    for ((a, b), &p_ab) in &first_pair {
        let p_b = middle[b];
        for (c, &p_bc) in &second_pair[b] {
            out.insert([a.clone(), b.clone(), c.clone()], p_ab * p_bc / p_b);
        }
    }
    Ok(out)
}

/// Half the mass on `(α, γ, α)`, half on `(β, γ, β)`: every adjacent pair
/// is valid, yet the mixed trajectories are not.
pub fn alternation_example() -> BTreeMap<Trajectory<&'static str>, f64> {
    BTreeMap::from([(["α", "γ", "α"], 0.5), (["β", "γ", "β"], 0.5)])
}

/// Probability mass `model` assigns outside the support of `truth`.
pub fn spurious_mass<S: Ord>(truth: &BTreeMap<Trajectory<S>, f64>, model: &BTreeMap<Trajectory<S>, f64>) -> f64 {
    model
        .iter()
        .filter(|(t, _)| truth.get(*t).is_none_or(|&p| p == 0.0))
        .map(|(_, p)| p)
        .sum()
}
