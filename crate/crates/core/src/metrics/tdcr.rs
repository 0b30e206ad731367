//! Table-wise distance to closest record.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Collection;
use crate::error::{Error, Result};
use crate::metrics::distribution::{histogram, js_distance};
use crate::metrics::dtw::{bounded_distance, prepare_table, skipped_attributes, AttributeScaling, PreparedTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TdcrConfig {
    pub bins: usize,
    /// Per-attribute weights; uniform when absent.
    pub weights: Option<Vec<f64>>,
}

impl Default for TdcrConfig {
    fn default() -> Self {
        TdcrConfig { bins: 50, weights: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TdcrResult {
    pub jsd: f64,
    pub synth_distances: Vec<f64>,
    pub test_distances: Vec<f64>,
    pub bins: usize,
    /// Upper end of the shared histogram range.
    pub max_distance: f64,
    /// Query tables with no comparable train table.
    pub synth_excluded: usize,
    pub test_excluded: usize,
    /// Attribute comparisons skipped because one side was empty.
    pub skipped_attributes: usize,
}

impl TdcrResult {
    pub fn histograms(&self) -> (Vec<f64>, Vec<f64>) {
        (
            histogram(&self.synth_distances, self.bins, self.max_distance),
            histogram(&self.test_distances, self.bins, self.max_distance),
        )
    }
}

/// Nearest-neighbor distance of every query to the reference set, with the
/// count of skipped attribute comparisons. Queries without any comparable
/// reference come back as `None`.
pub fn nearest_distances(
    queries: &[PreparedTable],
    reference: &[PreparedTable],
    weights: &[f64],
) -> Vec<(Option<f64>, usize)> {
    let d = weights.len();
    queries
        .par_iter()
        .map(|q| {
            let mut best: Option<f64> = None;
            let mut skipped = 0;
            for r in reference {
                let s = skipped_attributes(q, r).len();
                skipped += s;
                if s == d {
                    continue;
                }
                if let Some(v) = bounded_distance(q, r, weights, best.unwrap_or(f64::INFINITY)) {
                    best = Some(v);
                }
            }
            (best, skipped)
        })
        .collect()
}

/// Scaling is fit on `train`.
pub fn tdcr(synth: &Collection, train: &Collection, test: &Collection, config: &TdcrConfig) -> Result<TdcrResult> {
    if synth.is_empty() || train.is_empty() || test.is_empty() {
        return Err(Error::invalid("tdcr needs non-empty synthetic, train and test collections"));
    }
    if synth.schema() != train.schema() || test.schema() != train.schema() {
        return Err(Error::invalid("collections have different schemas"));
    }
    if config.bins == 0 {
        return Err(Error::invalid("tdcr needs at least one bin"));
    }
    let schema = train.schema();
    let weights = config.weights.clone().unwrap_or_else(|| vec![1.0; schema.len()]);
    if weights.len() != schema.len() {
        return Err(Error::invalid("one weight per attribute is required"));
    }
    let scaling = AttributeScaling::fit(train);
    let prep = |c: &Collection| -> Vec<PreparedTable> { c.tables().map(|t| prepare_table(schema, &scaling, t)).collect() };
    let train_p = prep(train);
    let gather = |c: &Collection| {
        let res = nearest_distances(&prep(c), &train_p, &weights);
        let skipped: usize = res.iter().map(|r| r.1).sum();
        let excluded = res.iter().filter(|r| r.0.is_none()).count();
        (res.into_iter().filter_map(|r| r.0).collect::<Vec<f64>>(), excluded, skipped)
    };
    let (synth_distances, synth_excluded, s_skip) = gather(synth);
    let (test_distances, test_excluded, t_skip) = gather(test);
    if synth_distances.is_empty() || test_distances.is_empty() {
        return Err(Error::invalid("no comparable tables for tdcr"));
    }
    let max_distance = synth_distances.iter().chain(&test_distances).fold(0.0f64, |m, &x| m.max(x));
    let mut out = TdcrResult {
        jsd: 0.0,
        synth_distances,
        test_distances,
        bins: config.bins,
        max_distance,
        synth_excluded,
        test_excluded,
        skipped_attributes: s_skip + t_skip,
    };
    let (hs, ht) = out.histograms();
    out.jsd = js_distance(&hs, &ht)?;
    Ok(out)
}
