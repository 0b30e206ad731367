//! Fidelity metrics: distribution distances, temporal structure, nearest
//! record distances and embedding-based scores.

pub mod classifier;
pub mod distribution;
pub mod dtw;
pub mod mauve;
pub mod plot;
pub mod report;
pub mod tdcr;
pub mod transition;

pub use classifier::{auc, classifier_auc, ClassifierConfig};
pub use distribution::{histogram, hour_of_day_w1, js_distance, univariate_marginal_divergence, wasserstein1, PerFeature};
pub use dtw::{dtw, table_distance, AttributeScaling, DtwResult};
pub use mauve::{mauve, MauveConfig, MauveResult};
pub use report::{evaluate, evaluate_with_artifacts, EvalArtifacts, EvalConfig, MetricEntry, MetricReport};
pub use tdcr::{tdcr, TdcrConfig, TdcrResult};
pub use transition::{
    categorical_transition_divergence, transition_divergence, CategoricalTransition, TransitionDivergence, TransitionMatrix,
};
