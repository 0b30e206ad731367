//! Dynamic time warping and the table-wise distance built on it.

use serde::{Deserialize, Serialize};

use crate::data::{Collection, ColumnKind, Schema, UserTable, Value};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DtwResult {
    pub total: f64,
    /// Number of cells on the optimal warping path.
    pub path_len: usize,
    pub normalized: f64,
}

/// DTW over index pairs with steps (1,0), (0,1), (1,1) and no step weights.
/// Among equal-cost predecessors the diagonal is preferred, then the shorter
/// path, which keeps `path_len` well defined.
pub fn dtw_by(len_a: usize, len_b: usize, cost: impl FnMut(usize, usize) -> f64) -> Result<DtwResult> {
    if len_a == 0 || len_b == 0 {
        return Err(Error::invalid("dtw needs two non-empty sequences"));
    }
    // Two rolling rows of (cost, path length), on the stack for short rows.
    const STACK: usize = 64;
    let (total, path_len) = if len_b <= STACK {
        let mut prev = [(f64::INFINITY, 0); STACK];
        let mut cur = [(f64::INFINITY, 0); STACK];
        fill(len_a, &mut prev[..len_b], &mut cur[..len_b], cost)
    } else {
        fill(len_a, &mut vec![(f64::INFINITY, 0); len_b], &mut vec![(f64::INFINITY, 0); len_b], cost)
    };
    Ok(DtwResult {
        total,
        path_len,
        normalized: total / path_len as f64,
    })
}

fn fill<'a>(
    len_a: usize,
    mut prev: &'a mut [(f64, usize)],
    mut cur: &'a mut [(f64, usize)],
    mut cost: impl FnMut(usize, usize) -> f64,
) -> (f64, usize) {
    let len_b = prev.len();
    for i in 0..len_a {
        for j in 0..len_b {
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let diag = if i > 0 && j > 0 { prev[j - 1] } else { (f64::INFINITY, 0) };
                let up = if i > 0 { prev[j] } else { (f64::INFINITY, 0) };
                let left = if j > 0 { cur[j - 1] } else { (f64::INFINITY, 0) };
                let mut best = diag;
                for cand in [up, left] {
                    if cand.0 < best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                        best = cand;
                    }
                }
                best
            };
            cur[j] = (best.0 + cost(i, j), best.1 + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[len_b - 1]
}

/// Absolute-difference DTW between two numeric sequences.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<DtwResult> {
    dtw_by(a.len(), b.len(), |i, j| (a[i] - b[j]).abs())
}

/// Per-attribute (mean, std) used to z-score numeric and timestamp columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeScaling {
    /// `None` for categorical columns.
    pub columns: Vec<Option<(f64, f64)>>,
}

impl AttributeScaling {
    /// Fit on pooled non-Null values; a zero spread is replaced by 1.
    pub fn fit(collection: &Collection) -> Self {
        let schema = collection.schema();
        let columns = (0..schema.len())
            .map(|c| {
                if schema.columns[c].kind == ColumnKind::Categorical {
                    return None;
                }
                let xs = collection.pooled_numeric(c);
                if xs.is_empty() {
                    return Some((0.0, 1.0));
                }
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                let std = var.sqrt();
                Some((mean, if std > 0.0 { std } else { 1.0 }))
            })
            .collect();
        AttributeScaling { columns }
    }
}

/// One attribute's sequence with Nulls dropped.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum AttrSeq {
    Numeric(Vec<f64>),
    /// Category indices.
    Categorical(Vec<u32>),
}

impl AttrSeq {
    fn is_empty(&self) -> bool {
        match self {
            AttrSeq::Numeric(v) => v.is_empty(),
            AttrSeq::Categorical(v) => v.is_empty(),
        }
    }
}

/// A table reduced to per-attribute sequences, ready for repeated distance
/// evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedTable {
    pub(crate) attrs: Vec<AttrSeq>,
    /// Null cells dropped while preparing.
    pub nulls_dropped: usize,
}

pub fn prepare_table(schema: &Schema, scaling: &AttributeScaling, table: &UserTable) -> PreparedTable {
    let mut nulls_dropped = 0;
    let attrs = (0..schema.len())
        .map(|c| {
            let values = table.column(c).filter(|v| {
                let null = v.is_null();
                nulls_dropped += usize::from(null);
                !null
            });
            match scaling.columns[c] {
                Some((mean, std)) => AttrSeq::Numeric(values.filter_map(Value::as_f64).map(|x| (x - mean) / std).collect()),
                None => {
                    let cats = schema.columns[c].categories();
                    AttrSeq::Categorical(
                        values
                            .filter_map(|v| v.as_str().and_then(|s| cats.iter().position(|k| k == s)).map(|i| i as u32))
                            .collect(),
                    )
                }
            }
        })
        .collect();
    PreparedTable { attrs, nulls_dropped }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableDistance {
    pub value: f64,
    /// Attribute indices empty on at least one side.
    pub skipped: Vec<usize>,
}

/// `Σⱼ wⱼ · normalized DTW` over attributes; categorical attributes use a
/// 0/1 substitution cost.
pub fn prepared_distance(a: &PreparedTable, b: &PreparedTable, weights: &[f64]) -> TableDistance {
    let skipped = skipped_attributes(a, b);
    let value = bounded_distance(a, b, weights, f64::INFINITY).expect("unbounded");
    TableDistance { value, skipped }
}

/// Attribute indices empty on at least one side.
pub fn skipped_attributes(a: &PreparedTable, b: &PreparedTable) -> Vec<usize> {
    a.attrs
        .iter()
        .zip(&b.attrs)
        .enumerate()
        .filter(|(_, (x, y))| x.is_empty() || y.is_empty())
        .map(|(j, _)| j)
        .collect()
}

/// The distance of [`prepared_distance`], or `None` as soon as the partial
/// sum reaches `bound`.
pub fn bounded_distance(a: &PreparedTable, b: &PreparedTable, weights: &[f64], bound: f64) -> Option<f64> {
    let mut value = 0.0;
    for (j, (x, y)) in a.attrs.iter().zip(&b.attrs).enumerate() {
        if x.is_empty() || y.is_empty() {
            continue;
        }
        let r = match (x, y) {
            (AttrSeq::Numeric(x), AttrSeq::Numeric(y)) => dtw(x, y),
            (AttrSeq::Categorical(x), AttrSeq::Categorical(y)) => {
                dtw_by(x.len(), y.len(), |i, k| if x[i] == y[k] { 0.0 } else { 1.0 })
            }
            _ => unreachable!("prepared with one schema"),
        }
        .expect("non-empty sequences");
        value += weights[j] * r.normalized;
        if value >= bound {
            return None;
        }
    }
    Some(value)
}

/// Δ(a, b) with uniform weights unless `weights` is given.
pub fn table_distance(
    schema: &Schema,
    a: &UserTable,
    b: &UserTable,
    weights: Option<&[f64]>,
    scaling: &AttributeScaling,
) -> Result<TableDistance> {
    let uniform = vec![1.0; schema.len()];
    let weights = weights.unwrap_or(&uniform);
    if weights.len() != schema.len() || scaling.columns.len() != schema.len() {
        return Err(Error::invalid("weights and scaling must cover every attribute"));
    }
    Ok(prepared_distance(
        &prepare_table(schema, scaling, a),
        &prepare_table(schema, scaling, b),
        weights,
    ))
}
