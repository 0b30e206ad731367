//! Per-column discretization into integer codes.
//!
//! Numeric and timestamp columns are binned (`B` bins, codes `0..B`);
//! categorical columns map each category to its index. Null always maps to
//! the extra code `B`, so a column's code space has `B + 1` entries.

use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, Schema, Value};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BinRule {
    #[default]
    EqualWidth,
    Quantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnCoder {
    Numeric { edges: Vec<f64> },
    Timestamp { edges: Vec<f64> },
    Categorical { categories: Vec<String> },
}

impl ColumnCoder {
    /// Number of non-Null codes.
    pub fn num_bins(&self) -> usize {
        match self {
            ColumnCoder::Numeric { edges } | ColumnCoder::Timestamp { edges } => edges.len() - 1,
            ColumnCoder::Categorical { categories } => categories.len(),
        }
    }

    pub fn code_size(&self) -> usize {
        self.num_bins() + 1
    }

    pub fn null_code(&self) -> usize {
        self.num_bins()
    }

    pub fn encode(&self, value: &Value) -> usize {
        match (self, value) {
            (_, Value::Null) => self.null_code(),
            (ColumnCoder::Numeric { edges } | ColumnCoder::Timestamp { edges }, v) => {
                let x = v.as_f64().expect("numeric coder applied to a numeric cell");
                bin_of(edges, x)
            }
            (ColumnCoder::Categorical { categories }, Value::Categorical(s)) => categories
                .iter()
                .position(|c| c == s)
                .expect("category present in coder"),
            (ColumnCoder::Categorical { .. }, _) => unreachable!("categorical coder on non-categorical cell"),
        }
    }

    /// Bin midpoint, category name, or Null.
    pub fn decode(&self, code: usize) -> Value {
        if code == self.null_code() {
            return Value::Null;
        }
        match self {
            ColumnCoder::Numeric { edges } => Value::Numeric(0.5 * (edges[code] + edges[code + 1])),
            ColumnCoder::Timestamp { edges } => {
                Value::Timestamp((0.5 * (edges[code] + edges[code + 1])).round() as i64)
            }
            ColumnCoder::Categorical { categories } => Value::Categorical(categories[code].clone()),
        }
    }
}

fn bin_of(edges: &[f64], x: f64) -> usize {
    let bins = edges.len() - 1;
    // number of interior edges <= x
    edges[1..bins].partition_point(|&e| e <= x)
}

fn equal_width_edges(min: f64, max: f64, bins: usize) -> Vec<f64> {
    let (lo, hi) = if min < max { (min, max) } else { (min - 0.5, max + 0.5) };
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| lo + width * i as f64).collect();
    edges.push(hi);
    edges
}

fn quantile_edges(sorted: &[f64], bins: usize) -> Vec<f64> {
    let n = sorted.len();
    let mut edges = Vec::with_capacity(bins + 1);
    for i in 0..=bins {
        let pos = (n - 1) as f64 * i as f64 / bins as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let q = sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64);
        if edges.last().is_none_or(|&last| q > last) {
            edges.push(q);
        }
    }
    if edges.len() < 2 {
        return equal_width_edges(sorted[0], sorted[n - 1], 1);
    }
    edges
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discretizer {
    pub columns: Vec<ColumnCoder>,
    pub rule: BinRule,
}

impl Discretizer {
    /// Fit bin edges for every column of `schema` from `rows`.
    pub fn fit<'a>(
        schema: &Schema,
        rows: impl IntoIterator<Item = &'a [Value]> + Clone,
        bins: usize,
        rule: BinRule,
    ) -> Result<Self> {
        if bins == 0 {
            return Err(Error::invalid("bin count must be at least 1"));
        }
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); schema.len()];
        for row in rows {
            for (c, v) in row.iter().enumerate() {
                if let (ColumnKind::Numeric | ColumnKind::Timestamp, Some(x)) = (schema.columns[c].kind, v.as_f64()) {
                    values[c].push(x);
                }
            }
        }
        let columns = schema
            .columns
            .iter()
            .zip(values)
            .map(|(col, mut xs)| {
                let mut edges = || {
                    if xs.is_empty() {
                        return equal_width_edges(0.0, 1.0, bins);
                    }
                    xs.sort_by(f64::total_cmp);
                    match rule {
                        BinRule::EqualWidth => equal_width_edges(xs[0], xs[xs.len() - 1], bins),
                        BinRule::Quantile => quantile_edges(&xs, bins),
                    }
                };
                match col.kind {
                    ColumnKind::Numeric => ColumnCoder::Numeric { edges: edges() },
                    ColumnKind::Timestamp => ColumnCoder::Timestamp { edges: edges() },
                    ColumnKind::Categorical => ColumnCoder::Categorical {
                        categories: col.categories().to_vec(),
                    },
                }
            })
            .collect();
        Ok(Discretizer { columns, rule })
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn code_size(&self, col: usize) -> usize {
        self.columns[col].code_size()
    }

    pub fn encode_row(&self, row: &[Value]) -> Vec<usize> {
        self.columns.iter().zip(row).map(|(c, v)| c.encode(v)).collect()
    }

    pub fn decode_row(&self, codes: &[usize]) -> Vec<Value> {
        self.columns.iter().zip(codes).map(|(c, &k)| c.decode(k)).collect()
    }
}
