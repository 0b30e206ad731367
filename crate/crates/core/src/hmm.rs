//! Gaussian-emission hidden Markov models: ground-truth sampling of user
//! tables and exact forward-algorithm scoring.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Collection, Column, Schema, UserTable, Value};
use crate::error::{Error, Result};
use crate::metrics::wasserstein1;
use crate::rng::{rng_for, Rng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianEmission {
    pub mean: Vec<f64>,
    /// Row-major `N_f × N_f` covariance.
    pub covariance: Vec<Vec<f64>>,
}

/// Bucket one numeric feature into a derived categorical column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalRule {
    /// Feature whose value is bucketed.
    pub source: String,
    /// Name of the derived column.
    pub name: String,
    /// Increasing cut points; a value `x` falls in bucket `#{t : t < x}`.
    pub thresholds: Vec<f64>,
    /// One label per bucket (`thresholds.len() + 1`).
    pub labels: Vec<String>,
}

impl CategoricalRule {
    pub fn label_for(&self, x: f64) -> &str {
        let bucket = self.thresholds.partition_point(|&t| t < x);
        &self.labels[bucket]
    }
}

/// On-disk description of an HMM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmSpec {
    pub feature_names: Vec<String>,
    pub initial: Vec<f64>,
    /// Row-major `N_s × N_s`; `transition[i][j] = P(next = j | current = i)`.
    pub transition: Vec<Vec<f64>>,
    pub emissions: Vec<GaussianEmission>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categorical_rule: Option<CategoricalRule>,
}

impl HmmSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

struct CompiledEmission {
    mean: DVector<f64>,
    /// Lower Cholesky factor of the covariance.
    lower: DMatrix<f64>,
    /// `-(N_f ln 2π + ln|Σ|)/2`
    log_norm: f64,
}

/// A validated HMM with factorized covariances.
pub struct Hmm {
    spec: HmmSpec,
    emissions: Vec<CompiledEmission>,
    log_initial: Vec<f64>,
    log_transition: Vec<Vec<f64>>,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::invalid(format!("{what}: negative or non-finite entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::invalid(format!("{what}: sums to {sum}, not 1")));
    }
    Ok(())
}

impl Hmm {
    pub fn new(spec: HmmSpec) -> Result<Self> {
        let ns = spec.initial.len();
        let nf = spec.feature_names.len();
        if ns == 0 || nf == 0 {
            return Err(Error::invalid("HMM needs at least one state and one feature"));
        }
        check_distribution(&spec.initial, "initial distribution")?;
        if spec.transition.len() != ns || spec.emissions.len() != ns {
            return Err(Error::invalid("transition/emission count does not match states"));
        }
        for (i, row) in spec.transition.iter().enumerate() {
            if row.len() != ns {
                return Err(Error::invalid(format!("transition row {i} has wrong length")));
            }
            check_distribution(row, &format!("transition row {i}"))?;
        }
        let mut emissions = Vec::with_capacity(ns);
        for (i, e) in spec.emissions.iter().enumerate() {
            if e.mean.len() != nf || e.covariance.len() != nf {
                return Err(Error::invalid(format!("emission {i}: wrong dimension")));
            }
            let mut cov = DMatrix::zeros(nf, nf);
            for (r, row) in e.covariance.iter().enumerate() {
                if row.len() != nf {
                    return Err(Error::invalid(format!("emission {i}: ragged covariance")));
                }
                for (c, &v) in row.iter().enumerate() {
                    cov[(r, c)] = v;
                }
            }
            if (0..nf).any(|r| (0..r).any(|c| cov[(r, c)] != cov[(c, r)])) {
                return Err(Error::invalid(format!("emission {i}: covariance not symmetric")));
            }
            let chol = Cholesky::new(cov).ok_or_else(|| {
                Error::invalid(format!("emission {i}: covariance not positive definite"))
            })?;
            let lower = chol.unpack();
            let log_det: f64 = 2.0 * lower.diagonal().iter().map(|d| d.ln()).sum::<f64>();
            emissions.push(CompiledEmission {
                mean: DVector::from_vec(e.mean.clone()),
                lower,
                log_norm: -0.5 * (nf as f64 * LN_2PI + log_det),
            });
        }
        if let Some(rule) = &spec.categorical_rule {
            if !spec.feature_names.contains(&rule.source) {
                return Err(Error::invalid(format!("categorical rule source {:?} unknown", rule.source)));
            }
            if rule.labels.len() != rule.thresholds.len() + 1 {
                return Err(Error::invalid("categorical rule needs one more label than thresholds"));
            }
            if rule.thresholds.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::invalid("categorical rule thresholds must increase"));
            }
        }
        let ln = |p: &f64| if *p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
        Ok(Hmm {
            log_initial: spec.initial.iter().map(ln).collect(),
            log_transition: spec.transition.iter().map(|r| r.iter().map(ln).collect()).collect(),
            emissions,
            spec,
        })
    }

    pub fn spec(&self) -> &HmmSpec {
        &self.spec
    }

    pub fn num_states(&self) -> usize {
        self.spec.initial.len()
    }

    pub fn num_features(&self) -> usize {
        self.spec.feature_names.len()
    }

    /// Log density of `x` under state `state`'s emission.
    pub fn log_emission(&self, state: usize, x: &[f64]) -> f64 {
        let e = &self.emissions[state];
        let diff = DVector::from_column_slice(x) - &e.mean;
        let z = e
            .lower
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor is non-singular");
        e.log_norm - 0.5 * z.norm_squared()
    }

    /// Forward recursion in log space over a sequence of observation vectors.
    pub fn log_likelihood(&self, observations: &[Vec<f64>]) -> f64 {
        let ns = self.num_states();
        let mut alpha: Vec<f64> = (0..ns)
            .map(|i| self.log_initial[i] + self.log_emission(i, &observations[0]))
            .collect();
        let mut next = vec![0.0; ns];
        for obs in &observations[1..] {
            for (j, slot) in next.iter_mut().enumerate() {
                let terms = (0..ns).map(|i| alpha[i] + self.log_transition[i][j]);
                *slot = log_sum_exp(terms) + self.log_emission(j, obs);
            }
            std::mem::swap(&mut alpha, &mut next);
        }
        log_sum_exp(alpha.into_iter())
    }

    fn sample_state(probs: &[f64], rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    /// Draw a latent state path and its emissions.
    pub fn sample_path(&self, len: usize, rng: &mut Rng) -> (Vec<usize>, Vec<Vec<f64>>) {
        let nf = self.num_features();
        let mut states: Vec<usize> = Vec::with_capacity(len);
        let mut obs = Vec::with_capacity(len);
        for t in 0..len {
            let s = if t == 0 {
                Self::sample_state(&self.spec.initial, rng)
            } else {
                Self::sample_state(self.spec.transition[states[t - 1]].as_slice(), rng)
            };
            let e = &self.emissions[s];
            let z = DVector::from_iterator(nf, (0..nf).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let x = &e.mean + &e.lower * z;
            states.push(s);
            obs.push(x.iter().copied().collect());
        }
        (states, obs)
    }
}

pub(crate) fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Finite distribution over table lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthDistribution {
    probs: BTreeMap<usize, f64>,
}

impl LengthDistribution {
    pub fn new(probs: BTreeMap<usize, f64>) -> Result<Self> {
        if probs.is_empty() || probs.contains_key(&0) {
            return Err(Error::invalid("length distribution needs lengths >= 1"));
        }
        let p: Vec<f64> = probs.values().copied().collect();
        check_distribution(&p, "length distribution")?;
        Ok(LengthDistribution { probs })
    }

    pub fn fixed(len: usize) -> Result<Self> {
        Self::new(BTreeMap::from([(len, 1.0)]))
    }

    /// Uniform over `lo..=hi`.
    pub fn uniform(lo: usize, hi: usize) -> Result<Self> {
        if lo == 0 || hi < lo {
            return Err(Error::invalid(format!("bad length range {lo}..={hi}")));
        }
        let n = (hi - lo + 1) as f64;
        let mut probs: BTreeMap<usize, f64> = (lo..=hi).map(|l| (l, 1.0 / n)).collect();
        // Put rounding residue on the last length so the sum is exactly 1.
        let residue = 1.0 - probs.values().sum::<f64>();
        *probs.get_mut(&hi).unwrap() += residue;
        Self::new(probs)
    }

    pub fn probabilities(&self) -> &BTreeMap<usize, f64> {
        &self.probs
    }

    pub fn max_len(&self) -> usize {
        *self.probs.keys().next_back().unwrap()
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (&len, &p) in &self.probs {
            acc += p;
            if u < acc {
                return len;
            }
        }
        self.max_len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleOptions {
    /// Add a zero-based step-index column with this name as the first column.
    pub timestep_column: Option<String>,
    pub id_prefix: String,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            timestep_column: Some("timestep".into()),
            id_prefix: "user_".into(),
        }
    }
}

/// Schema of collections produced by [`sample_collection`].
pub fn sample_schema(spec: &HmmSpec, options: &SampleOptions) -> Result<Schema> {
    let mut cols = Vec::new();
    if let Some(name) = &options.timestep_column {
        cols.push(Column::numeric(name.clone()));
    }
    cols.extend(spec.feature_names.iter().map(|n| Column::numeric(n.clone())));
    if let Some(rule) = &spec.categorical_rule {
        cols.push(Column::categorical(rule.name.clone(), rule.labels.iter().cloned()));
    }
    Schema::new(cols)
}

/// Draw `n` user tables. Table `i` uses its own generator derived from
/// `(seed, i)`, so output does not depend on thread count.
pub fn sample_collection(
    hmm: &Hmm,
    n: usize,
    lengths: &LengthDistribution,
    options: &SampleOptions,
    seed: u64,
) -> Result<Collection> {
    if n == 0 {
        return Err(Error::invalid("sample_collection needs n >= 1"));
    }
    let schema = sample_schema(&hmm.spec, options)?;
    let rule = hmm.spec.categorical_rule.as_ref().map(|r| {
        let src = hmm.spec.feature_names.iter().position(|f| *f == r.source).unwrap();
        (r, src)
    });
    let width = (n - 1).to_string().len().max(6);
    let tables: Vec<UserTable> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, "hmm-table", i as u64);
            let len = lengths.sample(&mut rng);
            let (_, obs) = hmm.sample_path(len, &mut rng);
            let rows = obs
                .into_iter()
                .enumerate()
                .map(|(t, x)| {
                    let mut row = Vec::with_capacity(schema.len());
                    if options.timestep_column.is_some() {
                        row.push(Value::Numeric(t as f64));
                    }
                    row.extend(x.iter().map(|&v| Value::Numeric(v)));
                    if let Some((r, src)) = rule {
                        row.push(Value::Categorical(r.label_for(x[src]).to_string()));
                    }
                    row
                })
                .collect();
            UserTable::new(format!("{}{:0width$}", options.id_prefix, i), rows)
        })
        .collect();
    Collection::new(schema, tables)
}

fn feature_columns(hmm: &Hmm, schema: &Schema) -> Result<Vec<usize>> {
    hmm.spec
        .feature_names
        .iter()
        .map(|f| {
            schema
                .index_of(f)
                .filter(|&i| schema.columns[i].kind == crate::data::ColumnKind::Numeric)
                .ok_or_else(|| Error::invalid(format!("feature {f:?} is not a numeric column of the schema")))
        })
        .collect()
}

fn observations(schema: &Schema, cols: &[usize], table: &UserTable) -> Result<Vec<Vec<f64>>> {
    if table.is_empty() {
        return Err(Error::invalid(format!("user {:?}: empty table", table.user_id)));
    }
    table
        .rows
        .iter()
        .enumerate()
        .map(|(r, row)| {
            cols.iter()
                .map(|&c| match &row[c] {
                    Value::Numeric(x) => Ok(*x),
                    _ => Err(Error::invalid(format!(
                        "user {:?} row {r} column {:?}: not a numeric value",
                        table.user_id, schema.columns[c].name
                    ))),
                })
                .collect()
        })
        .collect()
}

/// Natural-log likelihood of the table's feature columns; other columns
/// (step index, derived categorical) are ignored.
pub fn forward_log_likelihood(hmm: &Hmm, schema: &Schema, table: &UserTable) -> Result<f64> {
    let cols = feature_columns(hmm, schema)?;
    let obs = observations(schema, &cols, table)?;
    Ok(hmm.log_likelihood(&obs))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LikelihoodScores {
    /// Per-table total log-likelihood, in user-id order.
    pub scores: Vec<f64>,
    pub excluded: usize,
}

/// Score all tables; tables with an unscorable cell are excluded and counted.
pub fn score_collection(hmm: &Hmm, collection: &Collection) -> Result<LikelihoodScores> {
    let schema = collection.schema();
    let cols = feature_columns(hmm, schema)?;
    let tables: Vec<&UserTable> = collection.tables().collect();
    let results: Vec<Option<f64>> = tables
        .par_iter()
        .map(|t| observations(schema, &cols, t).ok().map(|o| hmm.log_likelihood(&o)))
        .collect();
    let excluded = results.iter().filter(|r| r.is_none()).count();
    Ok(LikelihoodScores {
        scores: results.into_iter().flatten().collect(),
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LikelihoodDivergence {
    pub distance: f64,
    pub real_scored: usize,
    pub real_excluded: usize,
    pub synth_scored: usize,
    pub synth_excluded: usize,
}

/// W₁ between the per-table log-likelihood distributions of two collections.
pub fn likelihood_divergence(hmm: &Hmm, real: &Collection, synth: &Collection) -> Result<LikelihoodDivergence> {
    let r = score_collection(hmm, real)?;
    let s = score_collection(hmm, synth)?;
    if r.scores.is_empty() || s.scores.is_empty() {
        return Err(Error::invalid("no scorable tables on one side"));
    }
    Ok(LikelihoodDivergence {
        distance: wasserstein1(&r.scores, &s.scores)?,
        real_scored: r.scores.len(),
        real_excluded: r.excluded,
        synth_scored: s.scores.len(),
        synth_excluded: s.excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn scalar_spec(init: Vec<f64>, trans: Vec<Vec<f64>>, means: &[f64], vars: &[f64]) -> HmmSpec {
        HmmSpec {
            feature_names: vec!["x".into()],
            initial: init,
            transition: trans,
            emissions: means
                .iter()
                .zip(vars)
                .map(|(&m, &v)| GaussianEmission {
                    mean: vec![m],
                    covariance: vec![vec![v]],
                })
                .collect(),
            categorical_rule: None,
        }
    }

    fn table(xs: &[f64]) -> (Schema, UserTable) {
        let schema = Schema::new(vec![Column::numeric("x")]).unwrap();
        let rows = xs.iter().map(|&x| vec![Value::Numeric(x)]).collect();
        (schema, UserTable::new("u", rows))
    }

    #[test]
    fn standard_normal_single_row() {
        let hmm = Hmm::new(scalar_spec(vec![1.0], vec![vec![1.0]], &[0.0], &[1.0])).unwrap();
        let (s, t) = table(&[0.0]);
        let ll = forward_log_likelihood(&hmm, &s, &t).unwrap();
        assert!((ll - (-0.5 * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
        assert!((ll + 0.91894).abs() < 1e-5);
    }

    #[test]
    fn absorbing_start_is_sum_of_state_zero_densities() {
        let hmm = Hmm::new(scalar_spec(
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            &[1.0, -4.0],
            &[2.0, 0.5],
        ))
        .unwrap();
        let xs = [0.3, 1.7, -0.2, 2.2];
        let (s, t) = table(&xs);
        let ll = forward_log_likelihood(&hmm, &s, &t).unwrap();
        let expected: f64 = xs
            .iter()
            .map(|x| -0.5 * (2.0 * std::f64::consts::PI * 2.0).ln() - (x - 1.0) * (x - 1.0) / 4.0)
            .sum();
        assert!((ll - expected).abs() < 1e-12);
    }

    #[test]
    fn null_cell_is_an_error() {
        let hmm = Hmm::new(scalar_spec(vec![1.0], vec![vec![1.0]], &[0.0], &[1.0])).unwrap();
        let (s, mut t) = table(&[0.0, 1.0]);
        t.rows[1][0] = Value::Null;
        let err = forward_log_likelihood(&hmm, &s, &t).unwrap_err().to_string();
        assert!(err.contains("row 1") && err.contains("\"x\""), "{err}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(Hmm::new(scalar_spec(vec![0.5, 0.6], vec![vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 0.0], &[1.0, 1.0])).is_err());
        assert!(Hmm::new(scalar_spec(vec![1.0], vec![vec![1.0]], &[0.0], &[-1.0])).is_err());
        let mut spec = scalar_spec(vec![1.0], vec![vec![1.0]], &[0.0], &[1.0]);
        spec.feature_names.push("y".into());
        spec.emissions[0].mean.push(0.0);
        spec.emissions[0].covariance = vec![vec![1.0, 0.2], vec![0.3, 1.0]];
        assert!(Hmm::new(spec).is_err());
    }

    #[test]
    fn iid_standard_normal_tables() {
        let hmm = Hmm::new(scalar_spec(vec![1.0], vec![vec![1.0]], &[0.0], &[1.0])).unwrap();
        let opts = SampleOptions {
            timestep_column: None,
            id_prefix: "u".into(),
        };
        let c = sample_collection(&hmm, 3, &LengthDistribution::fixed(4).unwrap(), &opts, 9).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c.tables().all(|t| t.len() == 4));
        let again = sample_collection(&hmm, 3, &LengthDistribution::fixed(4).unwrap(), &opts, 9).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn absorbing_start_samples_state_zero_only() {
        let hmm = Hmm::new(scalar_spec(
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            &[100.0, -100.0],
            &[1.0, 1.0],
        ))
        .unwrap();
        let mut rng = Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (states, obs) = hmm.sample_path(6, &mut rng);
            assert!(states.iter().all(|&s| s == 0));
            assert!(obs.iter().all(|x| x[0] > 90.0));
        }
    }

    #[test]
    fn derived_categorical_column_shape() {
        let names = ["Glomozole", "Crirodex", "Criphecor", "Zolsidex", "Zolphephine"];
        let eye: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        let spec = HmmSpec {
            feature_names: names.iter().map(|s| s.to_string()).collect(),
            initial: vec![1.0],
            transition: vec![vec![1.0]],
            emissions: vec![GaussianEmission {
                mean: vec![0.0; 5],
                covariance: eye,
            }],
            categorical_rule: Some(CategoricalRule {
                source: "Zolphephine".into(),
                name: "Zolronide".into(),
                thresholds: vec![-0.67, 0.0, 0.67],
                labels: ["Low", "Medium", "High", "Very High"].map(String::from).to_vec(),
            }),
        };
        let hmm = Hmm::new(spec).unwrap();
        let c = sample_collection(&hmm, 20, &LengthDistribution::uniform(2, 5).unwrap(), &SampleOptions::default(), 1).unwrap();
        let cols: Vec<&str> = c.schema().names().collect();
        assert_eq!(
            cols,
            ["timestep", "Glomozole", "Crirodex", "Criphecor", "Zolsidex", "Zolphephine", "Zolronide"]
        );
        for t in c.tables() {
            for (i, row) in t.rows.iter().enumerate() {
                assert_eq!(row[0], Value::Numeric(i as f64));
                let x = row[5].as_f64().unwrap();
                assert_eq!(row[6].as_str().unwrap(), hmm.spec().categorical_rule.as_ref().unwrap().label_for(x));
            }
        }
    }

    #[test]
    fn length_distribution_uniform_sums_to_one() {
        let d = LengthDistribution::uniform(4, 12).unwrap();
        assert_eq!(d.probabilities().len(), 9);
        assert!((d.probabilities().values().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(LengthDistribution::uniform(0, 3).is_err());
    }

    #[test]
    fn likelihood_divergence_translation() {
        // W₁ of identical score samples is zero.
        let hmm = Hmm::new(scalar_spec(vec![1.0], vec![vec![1.0]], &[0.0], &[1.0])).unwrap();
        let opts = SampleOptions {
            timestep_column: None,
            id_prefix: "u".into(),
        };
        let c = sample_collection(&hmm, 40, &LengthDistribution::uniform(1, 4).unwrap(), &opts, 2).unwrap();
        let d = likelihood_divergence(&hmm, &c, &c).unwrap();
        assert_eq!(d.distance, 0.0);
        assert_eq!(d.real_scored, 40);
    }
}
