//! The Direct marginal mechanism on flattened tables.
//!
//! Select a fixed set of 1-way and adjacent-step 2-way marginals, measure
//! them with the Gaussian mechanism, estimate per-feature Markov chains from
//! the noisy counts, and sample new flat rows from the chains.

use std::collections::HashMap;

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Collection, ColumnKind, Value};
use crate::discretize::{BinRule, Discretizer};
use crate::error::{Error, Result};
use crate::flatten::{filter_truncate, flatten, unflatten, FlatTable};
use crate::privacy::{calibrate_sigma, BudgetLedger, PrivacyBudget, ReleaseLedger};
use crate::rng::{rng_for, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Markov,
    Across,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markov" => Ok(Variant::Markov),
            "across" => Ok(Variant::Across),
            _ => Err(Error::invalid(format!("unknown variant {s:?} (markov|across)"))),
        }
    }
}

/// A contingency query over one or two flat columns. For two columns the
/// count vector is laid out row-major in the given column order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MarginalQuery {
    pub columns: Vec<usize>,
}

impl MarginalQuery {
    pub fn one(col: usize) -> Self {
        MarginalQuery { columns: vec![col] }
    }

    pub fn two(a: usize, b: usize) -> Self {
        assert_ne!(a, b, "marginal columns must be distinct");
        MarginalQuery { columns: vec![a, b] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyMeasurement {
    pub query: MarginalQuery,
    pub counts: Vec<f64>,
    pub sigma: f64,
    /// zCDP cost of this measurement (0 when released exactly).
    pub rho: f64,
}

/// The fixed query set: every 1-way marginal, each feature's adjacent-step
/// pair, and for `Across` up to `max_across` random same-step feature pairs.
pub fn select_marginals(d: usize, window: usize, variant: Variant, max_across: usize, seed: u64) -> Vec<MarginalQuery> {
    let idx = |feature: usize, step: usize| step * d + feature;
    let mut queries: Vec<MarginalQuery> = (0..d * window).map(MarginalQuery::one).collect();
    for f in 0..d {
        for t in 0..window.saturating_sub(1) {
            queries.push(MarginalQuery::two(idx(f, t), idx(f, t + 1)));
        }
    }
    if variant == Variant::Across {
        let mut candidates = Vec::new();
        for t in 0..window {
            for a in 0..d {
                for b in a + 1..d {
                    candidates.push(MarginalQuery::two(idx(a, t), idx(b, t)));
                }
            }
        }
        let take = max_across.min(candidates.len());
        let mut rng = rng_for(seed, "across-select", 0);
        let mut picked = sample_indices(&mut rng, candidates.len(), take).into_vec();
        picked.sort_unstable();
        queries.extend(picked.into_iter().map(|i| candidates[i].clone()));
    }
    queries
}

fn encode_flat(flat: &FlatTable, disc: &Discretizer) -> Vec<Vec<usize>> {
    flat.rows.par_iter().map(|r| disc.encode_row(r)).collect()
}

/// Exact contingency counts for `query` over pre-encoded rows.
fn contingency(codes: &[Vec<usize>], disc: &Discretizer, query: &MarginalQuery) -> Vec<f64> {
    match query.columns.as_slice() {
        [a] => {
            let mut counts = vec![0.0; disc.code_size(*a)];
            for row in codes {
                counts[row[*a]] += 1.0;
            }
            counts
        }
        [a, b] => {
            let nb = disc.code_size(*b);
            let mut counts = vec![0.0; disc.code_size(*a) * nb];
            for row in codes {
                counts[row[*a] * nb + row[*b]] += 1.0;
            }
            counts
        }
        _ => unreachable!("marginal queries have one or two columns"),
    }
}

/// Measure each query with i.i.d. `N(0, σ²)` noise per cell. Query `i`
/// draws its noise from its own generator so results are order-independent.
pub fn measure(
    flat: &FlatTable,
    disc: &Discretizer,
    queries: &[MarginalQuery],
    sigma: &[f64],
    seed: u64,
) -> Result<Vec<NoisyMeasurement>> {
    if sigma.len() != queries.len() {
        return Err(Error::invalid("one sigma per query required"));
    }
    if disc.len() != flat.schema().len() {
        return Err(Error::invalid("discretizer does not match flat schema"));
    }
    for q in queries {
        if q.columns.iter().any(|&c| c >= disc.len()) {
            return Err(Error::invalid(format!("query {:?} out of range", q.columns)));
        }
    }
    let codes = encode_flat(flat, disc);
    Ok(queries
        .par_iter()
        .zip(sigma)
        .enumerate()
        .map(|(i, (q, &s))| {
            let mut counts = contingency(&codes, disc, q);
            if s > 0.0 {
                let mut rng = rng_for(seed, "measure", i as u64);
                for c in &mut counts {
                    *c += s * rng.sample::<f64, _>(StandardNormal);
                }
            }
            NoisyMeasurement {
                query: q.clone(),
                counts,
                sigma: s,
                rho: if s > 0.0 { 1.0 / (2.0 * s * s) } else { 0.0 },
            }
        })
        .collect())
}

/// Clamp negatives to zero and renormalize; all-zero becomes uniform.
/// Returns whether the fallback was used.
pub(crate) fn normalize_counts(counts: &[f64]) -> (Vec<f64>, bool) {
    let clamped: Vec<f64> = counts.iter().map(|&c| c.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if total > 0.0 {
        (clamped.iter().map(|c| c / total).collect(), false)
    } else {
        let n = counts.len() as f64;
        (vec![1.0 / n; counts.len()], true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureChain {
    /// Distribution of the step-1 code.
    pub initial: Vec<f64>,
    /// `transitions[t][a][b] = P(code at t+1 = b | code at t = a)`.
    pub transitions: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovModel {
    pub num_features: usize,
    pub window: usize,
    pub features: Vec<FeatureChain>,
    /// Number of initial/transition rows that fell back to uniform.
    pub uniform_fallbacks: usize,
}

/// Per-feature first-order chains from the 1-way step-1 marginals and the
/// adjacent-step 2-way marginals.
pub fn estimate_markov(measurements: &[NoisyMeasurement], d: usize, window: usize) -> Result<MarkovModel> {
    let by_query: HashMap<&[usize], &NoisyMeasurement> =
        measurements.iter().map(|m| (m.query.columns.as_slice(), m)).collect();
    let find = |cols: &[usize]| {
        by_query
            .get(cols)
            .copied()
            .ok_or_else(|| Error::invalid(format!("missing measurement for columns {cols:?}")))
    };
    let size_of = |col: usize| find(&[col]).map(|m| m.counts.len());
    let mut fallbacks = 0;
    let mut features = Vec::with_capacity(d);
    for f in 0..d {
        let (initial, fb) = normalize_counts(&find(&[f])?.counts);
        fallbacks += usize::from(fb);
        let mut transitions = Vec::with_capacity(window.saturating_sub(1));
        for t in 0..window.saturating_sub(1) {
            let (a, b) = (t * d + f, (t + 1) * d + f);
            let m = find(&[a, b])?;
            let (na, nb) = (size_of(a)?, size_of(b)?);
            if m.counts.len() != na * nb {
                return Err(Error::invalid(format!("measurement ({a},{b}) has the wrong size")));
            }
            let rows = m
                .counts
                .chunks(nb)
                .map(|row| {
                    let (p, fb) = normalize_counts(row);
                    fallbacks += usize::from(fb);
                    p
                })
                .collect();
            transitions.push(rows);
        }
        features.push(FeatureChain { initial, transitions });
    }
    Ok(MarkovModel {
        num_features: d,
        window,
        features,
        uniform_fallbacks: fallbacks,
    })
}

pub(crate) fn sample_categorical(p: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

/// Sample `n` flat code rows, each feature independently along its chain.
pub fn sample_flat(model: &MarkovModel, n: usize, seed: u64) -> Vec<Vec<usize>> {
    let d = model.num_features;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, "direct-sample", i as u64);
            let mut codes = vec![0usize; d * model.window];
            for (f, chain) in model.features.iter().enumerate() {
                let mut prev = sample_categorical(&chain.initial, &mut rng);
                codes[f] = prev;
                for (t, trans) in chain.transitions.iter().enumerate() {
                    prev = sample_categorical(&trans[prev], &mut rng);
                    codes[(t + 1) * d + f] = prev;
                }
            }
            codes
        })
        .collect()
}

/// Decode sampled codes back to a flat table.
pub fn decode_flat(
    codes: &[Vec<usize>],
    disc: &Discretizer,
    base: &crate::data::Schema,
    window: usize,
    id_prefix: &str,
) -> Result<FlatTable> {
    let width = codes.len().saturating_sub(1).to_string().len().max(6);
    let ids = (0..codes.len()).map(|i| format!("{id_prefix}{i:0width$}")).collect();
    let rows = codes.iter().map(|c| disc.decode_row(c)).collect();
    FlatTable::from_rows(base.clone(), window, ids, rows)
}

/// Nearest-rank percentile of a sorted, non-empty sample.
pub(crate) fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Clamp numeric cells into `[min, P99]` of the matching reference column.
/// Columns without reference values are left untouched.
pub fn clip_postprocess(collection: &Collection, reference: &Collection) -> Collection {
    let schema = collection.schema();
    let bounds: Vec<Option<(f64, f64)>> = schema
        .columns
        .iter()
        .map(|col| {
            if col.kind != ColumnKind::Numeric {
                return None;
            }
            let ri = reference.schema().index_of(&col.name)?;
            let mut xs = reference.pooled_numeric(ri);
            if xs.is_empty() {
                return None;
            }
            xs.sort_by(f64::total_cmp);
            Some((xs[0], nearest_rank(&xs, 99.0)))
        })
        .collect();
    collection.map_tables(|t| {
        let rows = t
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&bounds)
                    .map(|(v, b)| match (v, b) {
                        (Value::Numeric(x), Some((lo, hi))) => Value::Numeric(x.clamp(*lo, *hi)),
                        _ => v.clone(),
                    })
                    .collect()
            })
            .collect();
        crate::data::UserTable::new(t.user_id.clone(), rows)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectConfig {
    pub window: usize,
    pub variant: Variant,
    pub max_across: usize,
    pub bins: usize,
    #[serde(default)]
    pub bin_rule: BinRule,
    pub clip: bool,
    /// Output size; by default the rounded noisy total of the first 1-way marginal.
    #[serde(default)]
    pub num_output: Option<usize>,
    pub seed: u64,
}

impl Default for DirectConfig {
    fn default() -> Self {
        DirectConfig {
            window: 10,
            variant: Variant::Markov,
            max_across: 80,
            bins: 32,
            bin_rule: BinRule::EqualWidth,
            clip: false,
            num_output: None,
            seed: 0,
        }
    }
}

/// How measurements are noised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseMode {
    Private(PrivacyBudget),
    /// Exact counts; no privacy. For tests and calibration studies only.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectOutput {
    pub collection: Collection,
    pub ledger: Option<ReleaseLedger>,
    pub model: MarkovModel,
    pub num_queries: usize,
    /// Cross-feature measurements taken but not used by the estimator.
    pub unused_measurements: usize,
    pub retained_users: usize,
    pub dropped_all_null: usize,
    pub notes: Vec<String>,
}

pub const NOTE_DISCRETIZATION: &str =
    "budget-exempt preprocessing: bin edges fit on the private data without charging budget";
pub const NOTE_CLIPPING: &str =
    "clipping to [min, P99] of the private data is not differentially private";
pub const NOTE_ACROSS: &str =
    "across variant: intra-step marginals are measured and charged but not used by the Markov estimator";

/// Truncate, flatten, measure, estimate, sample, decode.
pub fn run_direct(collection: &Collection, config: &DirectConfig, noise: NoiseMode) -> Result<DirectOutput> {
    let cohort = filter_truncate(collection, config.window)?;
    if cohort.is_empty() {
        return Err(Error::invalid(format!("no users with at least {} rows", config.window)));
    }
    let flat = flatten(&cohort, config.window)?;
    let d = flat.num_features();
    let disc = Discretizer::fit(flat.schema(), flat.rows.iter().map(Vec::as_slice), config.bins, config.bin_rule)?;
    let queries = select_marginals(d, config.window, config.variant, config.max_across, config.seed);
    let mut notes = vec![NOTE_DISCRETIZATION.to_string()];
    let (sigma, ledger) = match noise {
        NoiseMode::Private(budget) => {
            let cal = calibrate_sigma(&budget, queries.len())?;
            let mut training = BudgetLedger::new(budget.rho_train(), budget.delta);
            for q in &queries {
                training.charge(format!("marginal {:?}", q.columns), 1.0, cal.sigma)?;
            }
            let ledger = ReleaseLedger {
                budget,
                training,
                selection: None,
                notes: Vec::new(),
            };
            ledger.verify()?;
            (cal.sigma, Some(ledger))
        }
        NoiseMode::Exact => {
            notes.push("exact measurement: NOT differentially private".into());
            (0.0, None)
        }
    };
    let measurements = measure(&flat, &disc, &queries, &vec![sigma; queries.len()], config.seed)?;
    let model = estimate_markov(&measurements, d, config.window)?;
    let n_out = config
        .num_output
        .unwrap_or_else(|| (measurements[0].counts.iter().sum::<f64>().round().max(1.0)) as usize);
    let codes = sample_flat(&model, n_out, config.seed);
    let sampled = decode_flat(&codes, &disc, cohort.schema(), config.window, "direct_")?;
    let un = unflatten(&sampled)?;
    let mut out = un.collection;
    if config.clip {
        out = clip_postprocess(&out, &cohort);
        notes.push(NOTE_CLIPPING.into());
    }
    let unused = if config.variant == Variant::Across {
        notes.push(NOTE_ACROSS.into());
        queries.iter().filter(|q| q.columns.len() == 2 && q.columns[1] - q.columns[0] < d).count()
    } else {
        0
    };
    let ledger = ledger.map(|mut l| {
        l.notes = notes.clone();
        l
    });
    Ok(DirectOutput {
        collection: out,
        ledger,
        model,
        num_queries: queries.len(),
        unused_measurements: unused,
        retained_users: cohort.len(),
        dropped_all_null: un.dropped.len(),
        notes,
    })
}
