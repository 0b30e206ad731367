//! One-dimensional distribution comparisons: W₁, Jensen-Shannon distance,
//! pooled marginals and the hour-of-day profile.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::data::{Collection, ColumnKind, Value};
use crate::error::{Error, Result};

/// W₁ between two empirical distributions: `∫ |F_a(x) − F_b(x)| dx`, exact
/// for samples of any sizes.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("wasserstein1 needs two non-empty samples"));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::invalid("wasserstein1 samples must be finite"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    let mut x = a[0].min(b[0]);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - x);
        x = next;
        while a.get(i) == Some(&x) {
            i += 1;
        }
        while b.get(j) == Some(&x) {
            j += 1;
        }
    }
    Ok(total)
}

/// Counts of `samples` in `bins` equal-width bins over `[0, max]`; the top
/// edge is inclusive.
pub fn histogram(samples: &[f64], bins: usize, max: f64) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    for &x in samples {
        let k = if max > 0.0 { ((x / max) * bins as f64).floor() as usize } else { 0 };
        h[k.min(bins - 1)] += 1.0;
    }
    h
}

/// Jensen-Shannon distance (square root of the base-2 divergence) between
/// two histograms, each normalized first.
pub fn js_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid("histograms differ in length"));
    }
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    if !(sp > 0.0 && sq > 0.0) {
        return Err(Error::invalid("histogram without mass"));
    }
    let kl = |x: f64, m: f64| if x > 0.0 { x * (x / m).log2() } else { 0.0 };
    let mut js = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let (a, b) = (a / sp, b / sq);
        let m = 0.5 * (a + b);
        js += 0.5 * kl(a, m) + 0.5 * kl(b, m);
    }
    Ok(js.max(0.0).sqrt().min(1.0))
}

/// Per-feature values with an average and the features that were skipped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerFeature {
    pub per_feature: BTreeMap<String, f64>,
    pub average: Option<f64>,
    pub skipped: Vec<String>,
}

impl PerFeature {
    pub(crate) fn from_parts(per_feature: BTreeMap<String, f64>, skipped: Vec<String>) -> Self {
        let average = (!per_feature.is_empty()).then(|| per_feature.values().sum::<f64>() / per_feature.len() as f64);
        PerFeature {
            per_feature,
            average,
            skipped,
        }
    }
}

/// W₁ on pooled non-Null values of every numeric feature.
pub fn univariate_marginal_divergence(real: &Collection, synth: &Collection) -> Result<PerFeature> {
    if real.schema() != synth.schema() {
        return Err(Error::invalid("collections have different schemas"));
    }
    let mut per_feature = BTreeMap::new();
    let mut skipped = Vec::new();
    for c in real.schema().indices_of(ColumnKind::Numeric) {
        let name = real.schema().columns[c].name.clone();
        let (r, s) = (real.pooled_numeric(c), synth.pooled_numeric(c));
        if r.is_empty() || s.is_empty() {
            skipped.push(name);
        } else {
            per_feature.insert(name, wasserstein1(&r, &s)?);
        }
    }
    Ok(PerFeature::from_parts(per_feature, skipped))
}

pub fn hour_of(secs: i64) -> u32 {
    (secs.rem_euclid(86_400) / 3_600) as u32
}

fn hours(collection: &Collection, col: usize) -> Vec<f64> {
    collection
        .tables()
        .flat_map(|t| t.column(col))
        .filter_map(|v| match v {
            Value::Timestamp(s) => Some(f64::from(hour_of(*s))),
            _ => None,
        })
        .collect()
}

/// W₁ between the hour-of-day samples of a timestamp column.
pub fn hour_of_day_w1(real: &Collection, synth: &Collection, ts_col: &str) -> Result<f64> {
    let col = real
        .schema()
        .index_of(ts_col)
        .filter(|&c| real.schema().columns[c].kind == ColumnKind::Timestamp)
        .ok_or_else(|| Error::invalid(format!("{ts_col:?} is not a timestamp column")))?;
    let (r, s) = (hours(real, col), hours(synth, col));
    if r.is_empty() || s.is_empty() {
        return Err(Error::invalid(format!("no timestamps in column {ts_col:?} on one side")));
    }
    wasserstein1(&r, &s)
}
