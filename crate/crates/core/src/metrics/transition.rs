//! State-transition matrices over quantile (numeric) or category states.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::data::{Collection, ColumnKind, Value};
use crate::error::{Error, Result};
use crate::metrics::PerFeature;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionMatrix {
    pub probs: Vec<Vec<f64>>,
    /// Rows without observed transitions, set to uniform.
    pub empty_rows: Vec<usize>,
}

impl TransitionMatrix {
    /// Row-normalize a count matrix.
    pub fn from_counts(counts: &[Vec<f64>]) -> Self {
        let mut empty_rows = Vec::new();
        let probs = counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let total: f64 = row.iter().sum();
                if total > 0.0 {
                    row.iter().map(|c| c / total).collect()
                } else {
                    empty_rows.push(i);
                    vec![1.0 / row.len() as f64; row.len()]
                }
            })
            .collect();
        TransitionMatrix { probs, empty_rows }
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }
}

pub fn frobenius(a: &TransitionMatrix, b: &TransitionMatrix) -> f64 {
    a.probs
        .iter()
        .flatten()
        .zip(b.probs.iter().flatten())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Interior cut points `sorted[⌊n·i/S⌋]`, `i = 1..S`, deduplicated.
pub fn quantile_cuts(values: &[f64], states: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut cuts: Vec<f64> = (1..states).map(|i| sorted[(n * i / states).min(n - 1)]).collect();
    cuts.dedup();
    // A cut at the minimum would leave state 0 empty.
    cuts.retain(|&c| c > sorted[0]);
    cuts
}

pub fn state_of(cuts: &[f64], x: f64) -> usize {
    cuts.partition_point(|&c| c <= x)
}

/// Pooled adjacent-row transition counts; transitions touching an unmapped
/// (Null) cell are skipped and counted.
fn transition_counts(collection: &Collection, col: usize, states: usize, map: impl Fn(&Value) -> Option<usize>) -> (Vec<Vec<f64>>, usize) {
    let mut counts = vec![vec![0.0; states]; states];
    let mut skipped = 0;
    for t in collection.tables() {
        let codes: Vec<Option<usize>> = t.column(col).map(&map).collect();
        for w in codes.windows(2) {
            match (w[0], w[1]) {
                (Some(a), Some(b)) => counts[a][b] += 1.0,
                _ => skipped += 1,
            }
        }
    }
    (counts, skipped)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionDivergence {
    #[serde(flatten)]
    pub summary: PerFeature,
    /// Transitions involving a Null, per feature, over both collections.
    pub null_transitions: BTreeMap<String, usize>,
    pub states: usize,
}

/// Per-feature `‖M_real − M_synth‖_F` over `states` quantile states fit on
/// the real collection. Constant features are skipped.
pub fn transition_divergence(real: &Collection, synth: &Collection, states: usize) -> Result<TransitionDivergence> {
    if states < 2 {
        return Err(Error::invalid("need at least 2 quantile states"));
    }
    if real.schema() != synth.schema() {
        return Err(Error::invalid("collections have different schemas"));
    }
    let mut per_feature = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut null_transitions = BTreeMap::new();
    for c in real.schema().indices_of(ColumnKind::Numeric) {
        let name = real.schema().columns[c].name.clone();
        let pooled = real.pooled_numeric(c);
        if pooled.is_empty() {
            skipped.push(name);
            continue;
        }
        let cuts = quantile_cuts(&pooled, states);
        if cuts.is_empty() {
            skipped.push(name);
            continue;
        }
        let k = cuts.len() + 1;
        let map = |v: &Value| v.as_f64().map(|x| state_of(&cuts, x));
        let (rc, rs) = transition_counts(real, c, k, map);
        let (sc, ss) = transition_counts(synth, c, k, map);
        null_transitions.insert(name.clone(), rs + ss);
        per_feature.insert(name, frobenius(&TransitionMatrix::from_counts(&rc), &TransitionMatrix::from_counts(&sc)));
    }
    Ok(TransitionDivergence {
        summary: PerFeature::from_parts(per_feature, skipped),
        null_transitions,
        states,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoricalTransition {
    pub value: f64,
    /// The kept categories, most frequent first; the final state is OTHER.
    pub categories: Vec<String>,
    /// OTHER has no outgoing transitions in the real data.
    pub other_row_empty: bool,
    pub null_transitions: usize,
}

/// Frobenius distance of transition matrices over the `top_k` most frequent
/// real categories plus an OTHER state.
pub fn categorical_transition_divergence(
    real: &Collection,
    synth: &Collection,
    cat_col: &str,
    top_k: usize,
) -> Result<CategoricalTransition> {
    if top_k < 2 {
        return Err(Error::invalid("top_k must be at least 2"));
    }
    let col = real
        .schema()
        .index_of(cat_col)
        .filter(|&c| real.schema().columns[c].kind == ColumnKind::Categorical)
        .ok_or_else(|| Error::invalid(format!("{cat_col:?} is not a categorical column")))?;
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for v in real.tables().flat_map(|t| t.column(col)) {
        if let Some(s) = v.as_str() {
            *freq.entry(s).or_default() += 1;
        }
    }
    if freq.len() < 2 {
        return Err(Error::invalid(format!("fewer than 2 observed categories in {cat_col:?}")));
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    // BTreeMap order is by name, and the sort is stable
    ranked.sort_by_key(|r| std::cmp::Reverse(r.1));
    let categories: Vec<String> = ranked.iter().take(top_k).map(|(s, _)| s.to_string()).collect();
    let other = categories.len();
    let map = |v: &Value| v.as_str().map(|s| categories.iter().position(|c| c == s).unwrap_or(other));
    let (rc, rs) = transition_counts(real, col, other + 1, map);
    let (sc, ss) = transition_counts(synth, col, other + 1, map);
    let mr = TransitionMatrix::from_counts(&rc);
    let ms = TransitionMatrix::from_counts(&sc);
    Ok(CategoricalTransition {
        value: frobenius(&mr, &ms),
        other_row_empty: mr.empty_rows.contains(&other),
        categories,
        null_transitions: rs + ss,
    })
}
