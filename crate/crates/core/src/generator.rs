//! Autoregressive table generation behind a backend interface, the DP
//! Markov backend, and over-generation with validation.
//!
//! A backend emits one serialized row at a time; every row goes through
//! [`crate::serialize::parse_row`] and the first rejected row ends the table.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Collection, ColumnKind, Schema, UserTable, Value};
use crate::direct::{normalize_counts, sample_categorical, NoiseMode, NOTE_DISCRETIZATION};
use crate::discretize::{BinRule, ColumnCoder, Discretizer};
use crate::error::{Error, Result};
use crate::hmm::LengthDistribution;
use crate::privacy::{calibrate_sigma, BudgetLedger, ReleaseLedger};
use crate::rng::{rng_for, Rng};
use crate::serialize::{parse_row, row_line, ParseReport, RowOutcome, Termination};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Row(String),
    Stop,
}

pub trait GeneratorBackend: Sync {
    type State;

    fn start(&self, schema: &Schema, rng: &mut Rng) -> Self::State;

    /// Next row text (one-based row index `history.len() + 1`), or stop.
    fn next_step(&self, schema: &Schema, history: &[Vec<Value>], state: &mut Self::State, rng: &mut Rng) -> Step;
}

/// How each feature's code depends on earlier codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    /// Features independent given the previous row: feature `f` at step `t`
    /// depends only on feature `f` at `t − 1`.
    #[default]
    Independent,
    /// Feature `f > 0` at step `t` also depends on feature `f − 1` at `t`,
    /// chaining the features of a row together.
    RowChain,
}

/// Time-homogeneous chains over discretized codes; the table length is
/// drawn up front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpMarkovBackend {
    pub schema: Schema,
    pub discretizer: Discretizer,
    pub structure: Structure,
    /// Written as the zero-based row index instead of being modeled.
    pub step_column: Option<usize>,
    /// Modeled columns, in chain order.
    pub features: Vec<usize>,
    /// `initial[i][ctx]`: distribution of the first-row code of
    /// `features[i]` given its context.
    pub initial: Vec<Vec<Vec<f64>>>,
    /// `transitions[i][ctx]`: distribution of the next code.
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub lengths: LengthDistribution,
    /// Sum of the noisy length histogram: a private estimate of the number
    /// of training tables.
    pub noisy_total: f64,
    pub ledger: Option<ReleaseLedger>,
    pub uniform_fallbacks: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpMarkovConfig {
    pub bins: usize,
    pub bin_rule: BinRule,
    pub structure: Structure,
    /// Numeric column holding the row index; regenerated rather than modeled.
    pub step_column: Option<String>,
    /// Public length bound; longer tables are truncated before measuring.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for DpMarkovConfig {
    fn default() -> Self {
        DpMarkovConfig {
            bins: 12,
            bin_rule: BinRule::EqualWidth,
            structure: Structure::Independent,
            step_column: None,
            max_len: 12,
            seed: 0,
        }
    }
}

/// Context indexing shared by measurement and sampling.
struct Layout<'a> {
    structure: Structure,
    sizes: Vec<usize>,
    disc: &'a Discretizer,
}

impl Layout<'_> {
    fn initial_contexts(&self, i: usize) -> usize {
        match (self.structure, i) {
            (Structure::RowChain, i) if i > 0 => self.sizes[i - 1],
            _ => 1,
        }
    }

    fn transition_contexts(&self, i: usize) -> usize {
        match (self.structure, i) {
            (Structure::RowChain, i) if i > 0 => self.sizes[i - 1] * self.sizes[i],
            _ => self.sizes[i],
        }
    }

    fn initial_context(&self, i: usize, cur: &[usize]) -> usize {
        match (self.structure, i) {
            (Structure::RowChain, i) if i > 0 => cur[i - 1],
            _ => 0,
        }
    }

    fn transition_context(&self, i: usize, prev: &[usize], cur: &[usize]) -> usize {
        match (self.structure, i) {
            (Structure::RowChain, i) if i > 0 => cur[i - 1] * self.sizes[i] + prev[i],
            _ => prev[i],
        }
    }
}

/// Exact statistics, each with per-user L2 sensitivity at most 1.
struct Statistics {
    /// `[i][ctx * size + code]`: first-row counts.
    initial: Vec<Vec<f64>>,
    /// `[i][ctx * size + code]`: transition counts, each user's vector
    /// scaled to unit L2 norm.
    transitions: Vec<Vec<f64>>,
    /// `[len - 1]` for `len` in `1..=max_len`.
    lengths: Vec<f64>,
}

fn statistics(collection: &Collection, layout: &Layout, features: &[usize], max_len: usize) -> Statistics {
    let d = features.len();
    let sizes = &layout.sizes;
    let mut initial: Vec<Vec<f64>> = (0..d).map(|i| vec![0.0; layout.initial_contexts(i) * sizes[i]]).collect();
    let mut transitions: Vec<Vec<f64>> = (0..d).map(|i| vec![0.0; layout.transition_contexts(i) * sizes[i]]).collect();
    let mut lengths = vec![0.0; max_len];
    for t in collection.tables() {
        let rows = &t.rows[..t.len().min(max_len)];
        if rows.is_empty() {
            continue;
        }
        lengths[rows.len() - 1] += 1.0;
        let codes: Vec<Vec<usize>> = rows
            .iter()
            .map(|r| features.iter().map(|&c| layout.disc.columns[c].encode(&r[c])).collect())
            .collect();
        for i in 0..d {
            initial[i][layout.initial_context(i, &codes[0]) * sizes[i] + codes[0][i]] += 1.0;
        }
        for i in 0..d {
            let mut own: BTreeMap<usize, f64> = BTreeMap::new();
            for pair in codes.windows(2) {
                *own.entry(layout.transition_context(i, &pair[0], &pair[1]) * sizes[i] + pair[1][i]).or_default() += 1.0;
            }
            let norm = own.values().map(|v| v * v).sum::<f64>().sqrt();
            for (cell, v) in own {
                transitions[i][cell] += v / norm;
            }
        }
    }
    Statistics {
        initial,
        transitions,
        lengths,
    }
}

fn add_noise(counts: &mut [f64], sigma: f64, rng: &mut Rng) {
    if sigma > 0.0 {
        for c in counts {
            let g: f64 = StandardNormal.sample(rng);
            *c += sigma * g;
        }
    }
}

/// Measure `2d + 1` statistics (per-feature initial and transition counts,
/// and the length histogram), each with sensitivity 1, and build the
/// backend from the noisy values.
pub fn train_dp_markov_backend(collection: &Collection, config: &DpMarkovConfig, noise: NoiseMode) -> Result<DpMarkovBackend> {
    if collection.is_empty() {
        return Err(Error::invalid("cannot train on an empty collection"));
    }
    if config.max_len == 0 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    let schema = collection.schema().clone();
    let step_column = match &config.step_column {
        None => None,
        Some(name) => match schema.index_of(name) {
            Some(c) if schema.columns[c].kind == ColumnKind::Numeric => Some(c),
            _ => return Err(Error::invalid(format!("step column {name:?} is not a numeric column"))),
        },
    };
    let features: Vec<usize> = (0..schema.len()).filter(|&c| Some(c) != step_column).collect();
    if features.is_empty() {
        return Err(Error::invalid("no columns left to model"));
    }
    let d = features.len();
    let disc = Discretizer::fit(&schema, collection.tables().flat_map(|t| t.rows.iter().map(Vec::as_slice)), config.bins, config.bin_rule)?;
    let layout = Layout {
        structure: config.structure,
        sizes: features.iter().map(|&c| disc.code_size(c)).collect(),
        disc: &disc,
    };
    let num_queries = 2 * d + 1;
    let mut notes = vec![NOTE_DISCRETIZATION.to_string()];
    let (sigma, ledger) = match noise {
        NoiseMode::Private(budget) => {
            let cal = calibrate_sigma(&budget, num_queries)?;
            let mut training = BudgetLedger::new(budget.rho_train(), budget.delta);
            for &c in &features {
                training.charge(format!("initial {}", schema.columns[c].name), 1.0, cal.sigma)?;
            }
            for &c in &features {
                training.charge(format!("transitions {}", schema.columns[c].name), 1.0, cal.sigma)?;
            }
            training.charge("length histogram", 1.0, cal.sigma)?;
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
    let mut stats = statistics(collection, &layout, &features, config.max_len);
    // one generator per measured statistic, in ledger order
    for (i, counts) in stats.initial.iter_mut().chain(stats.transitions.iter_mut()).enumerate() {
        add_noise(counts, sigma, &mut rng_for(config.seed, "dp-markov-measure", i as u64));
    }
    add_noise(&mut stats.lengths, sigma, &mut rng_for(config.seed, "dp-markov-measure", (2 * d) as u64));

    let mut fallbacks = 0;
    let mut conditionals = |tables: &[Vec<f64>]| -> Vec<Vec<Vec<f64>>> {
        tables
            .iter()
            .zip(&layout.sizes)
            .map(|(c, &size)| {
                c.chunks(size)
                    .map(|row| {
                        let (p, fb) = normalize_counts(row);
                        fallbacks += usize::from(fb);
                        p
                    })
                    .collect()
            })
            .collect()
    };
    let initial = conditionals(&stats.initial);
    let transitions = conditionals(&stats.transitions);
    let noisy_total = stats.lengths.iter().sum::<f64>();
    let (length_p, fb) = normalize_counts(&stats.lengths);
    fallbacks += usize::from(fb);
    let lengths = LengthDistribution::new(length_p.into_iter().enumerate().filter(|(_, p)| *p > 0.0).map(|(i, p)| (i + 1, p)).collect::<BTreeMap<_, _>>())?;
    let ledger = ledger.map(|mut l| {
        l.notes = notes.clone();
        l
    });
    Ok(DpMarkovBackend {
        schema,
        discretizer: disc,
        structure: config.structure,
        step_column,
        features,
        initial,
        transitions,
        lengths,
        noisy_total,
        ledger,
        uniform_fallbacks: fallbacks,
        notes,
    })
}

impl DpMarkovBackend {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    fn layout(&self) -> Layout<'_> {
        Layout {
            structure: self.structure,
            sizes: self.features.iter().map(|&c| self.discretizer.code_size(c)).collect(),
            disc: &self.discretizer,
        }
    }

    /// Uniform draw inside the code's bin; categories and Null as is.
    fn decode(&self, col: usize, code: usize, rng: &mut Rng) -> Value {
        let coder = &self.discretizer.columns[col];
        if code == coder.null_code() {
            return Value::Null;
        }
        match coder {
            ColumnCoder::Numeric { edges } => Value::Numeric(edges[code] + (edges[code + 1] - edges[code]) * rng.random::<f64>()),
            ColumnCoder::Timestamp { edges } => {
                Value::Timestamp((edges[code] + (edges[code + 1] - edges[code]) * rng.random::<f64>()).floor() as i64)
            }
            ColumnCoder::Categorical { .. } => coder.decode(code),
        }
    }
}

pub struct MarkovState {
    target_len: usize,
    prev: Option<Vec<usize>>,
}

impl GeneratorBackend for DpMarkovBackend {
    type State = MarkovState;

    fn start(&self, _schema: &Schema, rng: &mut Rng) -> MarkovState {
        MarkovState {
            target_len: self.lengths.sample(rng),
            prev: None,
        }
    }

    fn next_step(&self, schema: &Schema, history: &[Vec<Value>], state: &mut MarkovState, rng: &mut Rng) -> Step {
        if history.len() >= state.target_len {
            return Step::Stop;
        }
        let layout = self.layout();
        let mut codes = Vec::with_capacity(self.features.len());
        for i in 0..self.features.len() {
            let p = match &state.prev {
                None => &self.initial[i][layout.initial_context(i, &codes)],
                Some(prev) => &self.transitions[i][layout.transition_context(i, prev, &codes)],
            };
            codes.push(sample_categorical(p, rng));
        }
        let mut row = vec![Value::Null; schema.len()];
        for (&col, &code) in self.features.iter().zip(&codes) {
            row[col] = self.decode(col, code, rng);
        }
        if let Some(c) = self.step_column {
            row[c] = Value::Numeric(history.len() as f64);
        }
        state.prev = Some(codes);
        Step::Row(row_line(schema, history.len() + 1, &row))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    /// `None` when no row was accepted.
    pub table: Option<UserTable>,
    pub report: ParseReport,
}

/// Generate one table: rows are parsed as they arrive, a rejected row ends
/// the table, and generation stops at `max_len` rows or a stop signal.
pub fn generate_table<B: GeneratorBackend>(backend: &B, schema: &Schema, max_len: usize, user_id: &str, seed: u64) -> Result<Generated> {
    if max_len == 0 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    let mut rng = rng_for(seed, "generate-table", 0);
    let mut state = backend.start(schema, &mut rng);
    let mut rows: Vec<Vec<Value>> = Vec::new();
    let mut outcomes = Vec::new();
    let mut termination = Termination::Complete;
    let mut failure = None;
    while rows.len() < max_len {
        let text = match backend.next_step(schema, &rows, &mut state, &mut rng) {
            Step::Stop => break,
            Step::Row(text) => text,
        };
        let (row, outcome, why) = parse_row(schema, &text, &rows);
        outcomes.push(outcome);
        match row {
            Some(r) => rows.push(r),
            None => {
                termination = Termination::EarlyTerminated(outcomes.len() - 1);
                failure = why;
                break;
            }
        }
    }
    let report = ParseReport {
        rows: outcomes,
        termination,
        failure,
    };
    Ok(Generated {
        table: (!rows.is_empty()).then(|| UserTable::new(user_id, rows)),
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct YieldReport {
    pub requested: usize,
    pub attempts: usize,
    pub accepted: usize,
    /// Attempts with no accepted row.
    pub discarded: usize,
    /// Accepted tables cut short by an invalid row.
    pub early_terminated: usize,
    /// Attempts beyond the first `requested`.
    pub retries_used: usize,
    pub retry_cap: usize,
    pub rows_by_outcome: BTreeMap<String, usize>,
    pub shortfall: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverGeneration {
    pub collection: Collection,
    pub report: YieldReport,
}

/// Generate `m` tables, replacing discarded attempts with fresh ones until
/// `m` are accepted or `retry_cap` extra attempts are used (default `3m`).
/// Attempt `i` is seeded from `(seed, i)`, so the output does not depend on
/// the thread count.
pub fn over_generate<B: GeneratorBackend>(
    backend: &B,
    schema: &Schema,
    m: usize,
    max_len: usize,
    seed: u64,
    retry_cap: Option<usize>,
) -> Result<OverGeneration> {
    if m == 0 {
        return Err(Error::invalid("need at least one candidate"));
    }
    let retry_cap = retry_cap.unwrap_or(3 * m);
    let width = (m + retry_cap).to_string().len().max(6);
    let mut accepted: Vec<UserTable> = Vec::new();
    let mut attempts = 0;
    let mut discarded = 0;
    let mut early = 0;
    let mut by_outcome: BTreeMap<String, usize> = BTreeMap::new();
    while accepted.len() < m && attempts < m + retry_cap {
        let batch = (m - accepted.len()).min(m + retry_cap - attempts);
        let results: Vec<Result<Generated>> = (attempts..attempts + batch)
            .into_par_iter()
            .map(|i| {
                let id = format!("synth_{i:0width$}");
                generate_table(backend, schema, max_len, &id, crate::rng::derive_seed(seed, "candidate", i as u64))
            })
            .collect();
        attempts += batch;
        for g in results {
            let g = g?;
            for o in &g.report.rows {
                let key = match o {
                    RowOutcome::KeyValue => "key_value",
                    RowOutcome::CsvFallback => "csv_fallback",
                    RowOutcome::Infilled => "infilled",
                    RowOutcome::Failed => "failed",
                };
                *by_outcome.entry(key.into()).or_default() += 1;
            }
            match g.table {
                Some(t) => {
                    early += usize::from(!g.report.is_complete());
                    accepted.push(t);
                }
                None => discarded += 1,
            }
        }
    }
    let report = YieldReport {
        requested: m,
        attempts,
        accepted: accepted.len(),
        discarded,
        early_terminated: early,
        retries_used: attempts.saturating_sub(m),
        retry_cap,
        rows_by_outcome: by_outcome,
        shortfall: m - accepted.len(),
    };
    Ok(OverGeneration {
        collection: Collection::new(schema.clone(), accepted)?,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{validate_table, Column};
    use crate::privacy::{epsilon_from_rho, PrivacyBudget};
    use crate::serialize::Termination;

    fn schema() -> Schema {
        Schema::new(vec![Column::numeric("x"), Column::categorical("c", ["a", "b"])]).unwrap()
    }

    struct Fixed {
        len: usize,
        garbage_at: Option<usize>,
    }

    impl GeneratorBackend for Fixed {
        type State = ();
        fn start(&self, _: &Schema, _: &mut Rng) {}
        fn next_step(&self, schema: &Schema, history: &[Vec<Value>], _: &mut (), _: &mut Rng) -> Step {
            let i = history.len() + 1;
            if Some(i) == self.garbage_at {
                return Step::Row("[Row 2]: x is lots, c is a".into());
            }
            if history.len() == self.len {
                return Step::Stop;
            }
            Step::Row(row_line(schema, i, &[Value::Numeric(1.5), Value::Categorical("b".into())]))
        }
    }

    #[test]
    fn fixed_backend_gives_complete_table() {
        let g = generate_table(&Fixed { len: 3, garbage_at: None }, &schema(), 10, "u", 0).unwrap();
        let t = g.table.unwrap();
        assert_eq!(t.len(), 3);
        assert!(g.report.is_complete());
        // max_len caps a backend that never stops
        let g = generate_table(&Fixed { len: 100, garbage_at: None }, &schema(), 4, "u", 0).unwrap();
        assert_eq!(g.table.unwrap().len(), 4);
    }

    #[test]
    fn garbage_terminates_early() {
        let g = generate_table(&Fixed { len: 5, garbage_at: Some(2) }, &schema(), 10, "u", 0).unwrap();
        assert_eq!(g.table.unwrap().len(), 1);
        assert_eq!(g.report.termination, Termination::EarlyTerminated(1));
        let g = generate_table(&Fixed { len: 5, garbage_at: Some(1) }, &schema(), 10, "u", 0).unwrap();
        assert!(g.table.is_none());
    }

    /// Fails on its first row with probability one half.
    struct Flaky;

    impl GeneratorBackend for Flaky {
        type State = bool;
        fn start(&self, _: &Schema, rng: &mut Rng) -> bool {
            rng.random::<bool>()
        }
        fn next_step(&self, schema: &Schema, history: &[Vec<Value>], fail: &mut bool, _: &mut Rng) -> Step {
            if *fail {
                return Step::Row("???".into());
            }
            if history.len() == 2 {
                return Step::Stop;
            }
            Step::Row(row_line(schema, history.len() + 1, &[Value::Numeric(0.0), Value::Null]))
        }
    }

    #[test]
    fn over_generation_yield() {
        let perfect = over_generate(&Fixed { len: 2, garbage_at: None }, &schema(), 7, 5, 1, None).unwrap();
        assert_eq!(perfect.collection.len(), 7);
        assert_eq!(perfect.report.retries_used, 0);

        let flaky = over_generate(&Flaky, &schema(), 40, 5, 9, None).unwrap();
        let r = &flaky.report;
        assert_eq!(r.accepted, 40);
        assert_eq!(r.shortfall, 0);
        assert!(r.retries_used > 0 && r.discarded == r.retries_used);
        assert_eq!(r.attempts, r.accepted + r.discarded);
        assert_eq!(r.rows_by_outcome["failed"], r.discarded);
        assert_eq!(flaky.collection, over_generate(&Flaky, &schema(), 40, 5, 9, None).unwrap().collection);

        // a cap too small to recover the losses
        let short = over_generate(&Flaky, &schema(), 40, 5, 9, Some(0)).unwrap();
        assert_eq!(short.report.attempts, 40);
        assert!(short.report.shortfall > 0);
    }

    fn chain_collection(n: usize, seed: u64) -> Collection {
        // x in {0, 1, 2} follows a fixed chain; c stays constant per table
        let k = [[0.8, 0.2, 0.0], [0.1, 0.6, 0.3], [0.5, 0.0, 0.5]];
        let mut rng = rng_for(seed, "fixture", 0);
        let tables = (0..n).map(|i| {
            let len = 2 + i % 5;
            let mut x = i % 3;
            let c = if i % 2 == 0 { "a" } else { "b" };
            let rows = (0..len)
                .map(|_| {
                    let row = vec![Value::Numeric(x as f64), Value::Categorical(c.into())];
                    x = sample_categorical(&k[x], &mut rng);
                    row
                })
                .collect();
            UserTable::new(format!("u{i:05}"), rows)
        });
        Collection::new(schema(), tables).unwrap()
    }

    fn config() -> DpMarkovConfig {
        DpMarkovConfig {
            bins: 3,
            max_len: 8,
            ..Default::default()
        }
    }

    #[test]
    fn exact_training_recovers_statistics() {
        let c = chain_collection(300, 1);
        let b = train_dp_markov_backend(&c, &config(), NoiseMode::Exact).unwrap();
        assert!(b.ledger.is_none());
        // lengths
        let hist = crate::data::length_histogram(&c).unwrap();
        for (len, count) in hist {
            assert!((b.lengths.probabilities()[&len] - count as f64 / 300.0).abs() < 1e-12);
        }
        // transitions for x with each user's count vector scaled to unit
        // L2 norm, recomputed directly
        let mut w = [[0.0; 3]; 3];
        for t in c.tables() {
            let xs: Vec<usize> = t.column(0).map(|v| v.as_f64().unwrap() as usize).collect();
            let mut own = [[0.0f64; 3]; 3];
            for p in xs.windows(2) {
                own[p[0]][p[1]] += 1.0;
            }
            let norm = own.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
            for a in 0..3 {
                for bb in 0..3 {
                    w[a][bb] += own[a][bb] / norm;
                }
            }
        }
        for a in 0..3 {
            let total: f64 = w[a].iter().sum();
            for bb in 0..3 {
                assert!((b.transitions[0][a][bb] - w[a][bb] / total).abs() < 1e-12);
            }
        }
        // c never changes inside a table
        assert_eq!(b.transitions[1][0][0], 1.0);
        assert_eq!(b.transitions[1][1][1], 1.0);
    }

    #[test]
    fn private_training_accounts_every_statistic() {
        let c = chain_collection(200, 2);
        let budget = PrivacyBudget::training_only(2.0, 1e-5).unwrap();
        let b = train_dp_markov_backend(&c, &config(), NoiseMode::Private(budget)).unwrap();
        let ledger = b.ledger.as_ref().unwrap();
        assert_eq!(ledger.training.entries.len(), 2 * 2 + 1);
        ledger.verify().unwrap();
        let eps = epsilon_from_rho(ledger.training.spent(), 1e-5);
        assert!((eps - 2.0).abs() < 1e-9, "{eps}");
        for row in b.transitions.iter().flatten() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // generation is post-processing
        let before = ledger.clone();
        let _ = over_generate(&b, &c.schema().clone(), 20, 8, 4, None).unwrap();
        assert_eq!(b.ledger.as_ref().unwrap(), &before);
        assert!(train_dp_markov_backend(&Collection::empty(schema()), &config(), NoiseMode::Exact).is_err());
    }

    #[test]
    fn markov_generation_is_valid_and_reproducible() {
        let c = chain_collection(200, 3);
        let b = train_dp_markov_backend(&c, &config(), NoiseMode::Exact).unwrap();
        let g1 = generate_table(&b, &schema(), 8, "s", 77).unwrap();
        let g2 = generate_table(&b, &schema(), 8, "s", 77).unwrap();
        assert_eq!(g1, g2);
        let out = over_generate(&b, &schema(), 50, 8, 5, None).unwrap();
        assert_eq!(out.collection.len(), 50);
        for t in out.collection.tables() {
            assert!(validate_table(&schema(), t).is_ok());
            assert!(t.len() >= 2 && t.len() <= 6);
        }
        let json = serde_json::to_string(&b).unwrap();
        let back: DpMarkovBackend = serde_json::from_str(&json).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn row_chain_keeps_within_row_dependence() {
        // c is a function of x in every row; x follows its chain
        let c = chain_collection(300, 4);
        let c = Collection::new(
            schema(),
            c.tables().map(|t| {
                let rows = t
                    .rows
                    .iter()
                    .map(|r| {
                        let label = if r[0] == Value::Numeric(0.0) { "a" } else { "b" };
                        vec![r[0].clone(), Value::Categorical(label.into())]
                    })
                    .collect();
                UserTable::new(t.user_id.clone(), rows)
            }),
        )
        .unwrap();
        let cfg = DpMarkovConfig {
            structure: Structure::RowChain,
            ..config()
        };
        let b = train_dp_markov_backend(&c, &cfg, NoiseMode::Exact).unwrap();
        let out = over_generate(&b, &schema(), 100, 8, 6, None).unwrap();
        let x_bin = &b.discretizer.columns[0];
        for t in out.collection.tables() {
            for r in &t.rows {
                let zero = x_bin.encode(&r[0]) == 0;
                assert_eq!(r[1], Value::Categorical(if zero { "a" } else { "b" }.into()));
            }
        }
    }

    #[test]
    fn step_column_is_regenerated() {
        let s = Schema::new(vec![Column::numeric("t"), Column::numeric("x")]).unwrap();
        let c = Collection::new(
            s.clone(),
            (0..20).map(|i| UserTable::new(format!("u{i}"), (0..3).map(|t| vec![Value::Numeric(t as f64), Value::Numeric(i as f64)]).collect())),
        )
        .unwrap();
        let cfg = DpMarkovConfig {
            step_column: Some("t".into()),
            ..config()
        };
        let b = train_dp_markov_backend(&c, &cfg, NoiseMode::Exact).unwrap();
        assert_eq!(b.features, vec![1]);
        let out = over_generate(&b, &s, 10, 8, 1, None).unwrap();
        for t in out.collection.tables() {
            assert!(t.rows.iter().enumerate().all(|(i, r)| r[0] == Value::Numeric(i as f64)));
        }
        let bad = DpMarkovConfig {
            step_column: Some("nope".into()),
            ..config()
        };
        assert!(train_dp_markov_backend(&c, &bad, NoiseMode::Exact).is_err());
    }
}
