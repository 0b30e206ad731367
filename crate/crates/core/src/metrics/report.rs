//! Running the whole suite and collecting a serializable report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Collection, ColumnKind};
use crate::error::{Error, Result};
use crate::hmm::{score_collection, Hmm};
use crate::metrics::{
    categorical_transition_divergence, classifier_auc, hour_of_day_w1, mauve, tdcr, transition_divergence,
    univariate_marginal_divergence, wasserstein1, ClassifierConfig, MauveConfig, TdcrConfig, TdcrResult,
};
use crate::selection::{embed_collection, ReferenceEmbedder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub tdcr: TdcrConfig,
    pub transition_states: usize,
    pub mauve: MauveConfig,
    pub classifier: ClassifierConfig,
    /// Defaults to the first timestamp column.
    pub timestamp_column: Option<String>,
    /// Defaults to the first non-static categorical column.
    pub categorical_column: Option<String>,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tdcr: TdcrConfig::default(),
            transition_states: 5,
            mauve: MauveConfig::default(),
            classifier: ClassifierConfig::default(),
            timestamp_column: None,
            categorical_column: None,
            top_k: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MetricEntry {
    Ok {
        value: f64,
        #[serde(skip_serializing_if = "BTreeMap::is_empty")]
        breakdown: BTreeMap<String, f64>,
        #[serde(skip_serializing_if = "serde_json::Value::is_null")]
        details: serde_json::Value,
    },
    Skipped {
        reason: String,
    },
    Error {
        message: String,
    },
}

impl MetricEntry {
    pub fn value(&self) -> Option<f64> {
        match self {
            MetricEntry::Ok { value, .. } => Some(*value),
            _ => None,
        }
    }

    fn scalar(value: f64) -> Self {
        MetricEntry::Ok {
            value,
            breakdown: BTreeMap::new(),
            details: serde_json::Value::Null,
        }
    }

    fn with_details(value: f64, breakdown: BTreeMap<String, f64>, details: impl Serialize) -> Self {
        MetricEntry::Ok {
            value,
            breakdown,
            details: serde_json::to_value(details).expect("metric details serialize"),
        }
    }

    fn from_result(r: Result<MetricEntry>) -> Self {
        r.unwrap_or_else(|e| MetricEntry::Error { message: e.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub parameters: EvalConfig,
    pub tables: BTreeMap<String, usize>,
    pub metrics: BTreeMap<String, MetricEntry>,
}

impl MetricReport {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).and_then(MetricEntry::value)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Raw samples behind the report, for plotting.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalArtifacts {
    pub tdcr: Option<TdcrResult>,
    /// Per-table log-likelihoods of the real reference and the synthetic data.
    pub likelihoods: Option<(Vec<f64>, Vec<f64>)>,
}

pub const TDCR_JSD: &str = "tdcr_jsd";
pub const MARGINAL_W1: &str = "marginal_w1";
pub const TRANSITION_FROBENIUS: &str = "transition_frobenius";
pub const MAUVE: &str = "mauve";
pub const CLASSIFIER_AUC: &str = "classifier_auc";
pub const HMM_LIKELIHOOD_W1: &str = "hmm_likelihood_w1";
pub const HOUR_OF_DAY_W1: &str = "hour_of_day_w1";
pub const CATEGORICAL_TRANSITION: &str = "categorical_transition";

pub fn evaluate(real_train: &Collection, real_test: &Collection, synth: &Collection, config: &EvalConfig, hmm: Option<&Hmm>) -> Result<MetricReport> {
    evaluate_with_artifacts(real_train, real_test, synth, config, hmm).map(|(r, _)| r)
}

/// Distributional metrics compare `synth` with `real_test`; TDCR measures
/// distances to `real_train`, which also fits the scaling and embedder.
/// A failing metric is recorded and the rest still run.
pub fn evaluate_with_artifacts(
    real_train: &Collection,
    real_test: &Collection,
    synth: &Collection,
    config: &EvalConfig,
    hmm: Option<&Hmm>,
) -> Result<(MetricReport, EvalArtifacts)> {
    let schema = real_train.schema();
    if real_test.schema() != schema || synth.schema() != schema {
        return Err(Error::invalid("real_train, real_test and synth must share one schema"));
    }
    let mut metrics = BTreeMap::new();
    let mut artifacts = EvalArtifacts::default();

    let tdcr_entry = match tdcr(synth, real_train, real_test, &config.tdcr) {
        Ok(r) => {
            let entry = MetricEntry::with_details(
                r.jsd,
                BTreeMap::new(),
                serde_json::json!({
                    "bins": r.bins,
                    "max_distance": r.max_distance,
                    "synth_excluded": r.synth_excluded,
                    "test_excluded": r.test_excluded,
                    "skipped_attributes": r.skipped_attributes,
                }),
            );
            artifacts.tdcr = Some(r);
            entry
        }
        Err(e) => MetricEntry::Error { message: e.to_string() },
    };
    metrics.insert(TDCR_JSD.to_string(), tdcr_entry);

    metrics.insert(
        MARGINAL_W1.to_string(),
        MetricEntry::from_result(univariate_marginal_divergence(real_test, synth).and_then(|m| {
            let avg = m.average.ok_or_else(|| Error::invalid("no numeric feature observed on both sides"))?;
            Ok(MetricEntry::with_details(avg, m.per_feature.clone(), serde_json::json!({ "skipped": m.skipped })))
        })),
    );

    metrics.insert(
        TRANSITION_FROBENIUS.to_string(),
        MetricEntry::from_result(transition_divergence(real_test, synth, config.transition_states).and_then(|m| {
            let avg = m.summary.average.ok_or_else(|| Error::invalid("no non-degenerate numeric feature"))?;
            Ok(MetricEntry::with_details(
                avg,
                m.summary.per_feature.clone(),
                serde_json::json!({
                    "states": m.states,
                    "skipped": m.summary.skipped,
                    "null_transitions": m.null_transitions,
                }),
            ))
        })),
    );

    let embedder = ReferenceEmbedder::fit(real_train);
    let emb_real = embed_collection(&embedder, real_test);
    let emb_synth = embed_collection(&embedder, synth);
    metrics.insert(
        MAUVE.to_string(),
        MetricEntry::from_result(
            mauve(&emb_real.rows, &emb_synth.rows, &config.mauve, config.seed)
                .map(|m| MetricEntry::with_details(m.score, BTreeMap::new(), m)),
        ),
    );
    metrics.insert(
        CLASSIFIER_AUC.to_string(),
        MetricEntry::from_result(classifier_auc(&emb_real.rows, &emb_synth.rows, &config.classifier, config.seed).map(MetricEntry::scalar)),
    );

    let hmm_entry = match hmm {
        None => MetricEntry::Skipped {
            reason: "no HMM spec given".into(),
        },
        Some(h) => MetricEntry::from_result((|| {
            let r = score_collection(h, real_test)?;
            let s = score_collection(h, synth)?;
            if r.scores.is_empty() || s.scores.is_empty() {
                return Err(Error::invalid("no scorable tables on one side"));
            }
            let d = wasserstein1(&r.scores, &s.scores)?;
            let details = serde_json::json!({
                "real_scored": r.scores.len(),
                "real_excluded": r.excluded,
                "synth_scored": s.scores.len(),
                "synth_excluded": s.excluded,
            });
            artifacts.likelihoods = Some((r.scores, s.scores));
            Ok(MetricEntry::with_details(d, BTreeMap::new(), details))
        })()),
    };
    metrics.insert(HMM_LIKELIHOOD_W1.to_string(), hmm_entry);

    let ts_col = config
        .timestamp_column
        .clone()
        .or_else(|| schema.indices_of(ColumnKind::Timestamp).first().map(|&c| schema.columns[c].name.clone()));
    metrics.insert(
        HOUR_OF_DAY_W1.to_string(),
        match ts_col {
            None => MetricEntry::Skipped {
                reason: "no timestamp column".into(),
            },
            Some(col) => MetricEntry::from_result(hour_of_day_w1(real_test, synth, &col).map(|v| {
                MetricEntry::with_details(v, BTreeMap::new(), serde_json::json!({ "column": col }))
            })),
        },
    );

    let cat_col = config.categorical_column.clone().or_else(|| {
        schema
            .indices_of(ColumnKind::Categorical)
            .into_iter()
            .find(|&c| !schema.columns[c].static_id)
            .map(|c| schema.columns[c].name.clone())
    });
    metrics.insert(
        CATEGORICAL_TRANSITION.to_string(),
        match cat_col {
            None => MetricEntry::Skipped {
                reason: "no categorical column".into(),
            },
            Some(col) => MetricEntry::from_result(
                categorical_transition_divergence(real_test, synth, &col, config.top_k).map(|r| {
                    let v = r.value;
                    MetricEntry::with_details(v, BTreeMap::new(), serde_json::json!({ "column": col, "result": r }))
                }),
            ),
        },
    );

    let tables = BTreeMap::from([
        ("real_train".to_string(), real_train.len()),
        ("real_test".to_string(), real_test.len()),
        ("synth".to_string(), synth.len()),
    ]);
    Ok((
        MetricReport {
            parameters: config.clone(),
            tables,
            metrics,
        },
        artifacts,
    ))
}
