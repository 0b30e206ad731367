//! End-to-end experiment runs.
//!
//! A run loads the data named in an [`ExperimentConfig`], synthesizes with
//! one of the mechanisms, checks the release ledger, evaluates, and writes
//! an artifact directory. The ledger is verified before anything is written.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Collection, Schema, UserTable};
use crate::direct::{run_direct, DirectConfig, NoiseMode, Variant};
use crate::error::{Error, Result};
use crate::generator::{over_generate, train_dp_markov_backend, DpMarkovConfig, YieldReport};
use crate::hmm::{Hmm, HmmSpec};
use crate::metrics::plot::{write_tdcr_histogram, write_value_histogram};
use crate::metrics::{evaluate_with_artifacts, EvalArtifacts, EvalConfig, MetricReport};
use crate::privacy::{default_delta, default_epsilon_select, PrivacyBudget, ReleaseLedger, ReleaseSummary};
use crate::rng::{derive_seed, rng_for};
use crate::selection::{embed_collection, private_knn_select, selection_ledger, ReferenceEmbedder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DirectMarkov,
    DirectAcross,
    DpMarkov,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct-markov" => Ok(Method::DirectMarkov),
            "direct-across" => Ok(Method::DirectAcross),
            "dp-markov" => Ok(Method::DpMarkov),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub enabled: bool,
    /// Candidates generated per released table.
    pub candidate_multiplier: f64,
    pub k: usize,
    /// Released tables; defaults to the backend's noisy table count.
    pub num_output: Option<usize>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            enabled: false,
            candidate_multiplier: 4.0,
            k: 10,
            num_output: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub hmm_spec: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub method: Method,
    pub epsilon_total: f64,
    /// Defaults to `1/n²` for `n` training users.
    pub delta: Option<f64>,
    /// Only used with selection; defaults by the size of `epsilon_total`.
    pub epsilon_select: Option<f64>,
    /// Root seed; every stage derives its own seed from it.
    pub seed: u64,
    /// Measure without noise. The output is not private and carries no ledger.
    pub exact: bool,
    pub direct: DirectConfig,
    pub dp_markov: DpMarkovConfig,
    pub selection: SelectionConfig,
    pub evaluation: EvalConfig,
    pub plot_data: bool,
    pub plot_bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: None,
            test: None,
            schema: None,
            hmm_spec: None,
            output_dir: None,
            method: Method::DpMarkov,
            epsilon_total: 10.0,
            delta: None,
            epsilon_select: None,
            seed: 0,
            exact: false,
            direct: DirectConfig::default(),
            dp_markov: DpMarkovConfig::default(),
            selection: SelectionConfig::default(),
            evaluation: EvalConfig::default(),
            plot_data: true,
            plot_bins: 30,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Copy with defaults filled in from the training data and stage seeds
    /// derived from the root seed.
    pub fn resolve(&self, train: &Collection) -> Result<ExperimentConfig> {
        let mut c = self.clone();
        c.delta = Some(self.delta.unwrap_or_else(|| default_delta(train.len())));
        let selecting = c.method == Method::DpMarkov && c.selection.enabled;
        c.epsilon_select = if selecting {
            Some(self.epsilon_select.unwrap_or_else(|| default_epsilon_select(self.epsilon_total)))
        } else {
            match self.epsilon_select {
                Some(e) if e > 0.0 => {
                    return Err(Error::invalid("epsilon_select is set but this run has no selection step"));
                }
                _ => Some(0.0),
            }
        };
        c.direct.variant = match c.method {
            Method::DirectAcross => Variant::Across,
            _ => Variant::Markov,
        };
        c.direct.seed = derive_seed(self.seed, "direct", 0);
        c.dp_markov.seed = derive_seed(self.seed, "dp-markov", 0);
        c.evaluation.seed = derive_seed(self.seed, "evaluation", 0);
        if !(c.selection.candidate_multiplier >= 1.0) {
            return Err(Error::invalid("candidate_multiplier must be at least 1"));
        }
        Ok(c)
    }

    fn budget(&self) -> Result<NoiseMode> {
        if self.exact {
            return Ok(NoiseMode::Exact);
        }
        let delta = self.delta.ok_or_else(|| Error::invalid("delta not resolved"))?;
        PrivacyBudget::new(self.epsilon_total, delta, self.epsilon_select.unwrap_or(0.0)).map(NoiseMode::Private)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionSummary {
    pub candidates: usize,
    pub selected: usize,
    pub k: usize,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    /// The configuration actually used, after [`ExperimentConfig::resolve`].
    pub config: ExperimentConfig,
    pub collection: Collection,
    pub ledger: Option<ReleaseLedger>,
    pub yield_report: Option<YieldReport>,
    pub selection: Option<SelectionSummary>,
    pub notes: Vec<String>,
}

/// Run the configured mechanism on `train`. A private run fails with a
/// budget error, and releases nothing, if its ledger does not verify.
pub fn synthesize(train: &Collection, config: &ExperimentConfig) -> Result<Synthesis> {
    let config = config.resolve(train)?;
    let noise = config.budget()?;
    let mut out = match config.method {
        Method::DirectMarkov | Method::DirectAcross => {
            let d = run_direct(train, &config.direct, noise)?;
            Synthesis {
                config: config.clone(),
                collection: d.collection,
                ledger: d.ledger,
                yield_report: None,
                selection: None,
                notes: d.notes,
            }
        }
        Method::DpMarkov => synthesize_dp_markov(train, &config, noise)?,
    };
    if let Some(l) = &mut out.ledger {
        l.notes.clone_from(&out.notes);
        l.verify()?;
    } else if !config.exact {
        return Err(Error::Budget("private run produced no ledger".into()));
    }
    Ok(out)
}

fn synthesize_dp_markov(train: &Collection, config: &ExperimentConfig, noise: NoiseMode) -> Result<Synthesis> {
    let backend = train_dp_markov_backend(train, &config.dp_markov, noise)?;
    let schema = train.schema();
    let max_len = config.dp_markov.max_len;
    let m_out = config.selection.num_output.unwrap_or_else(|| match noise {
        NoiseMode::Exact => train.len(),
        NoiseMode::Private(_) => backend.noisy_total.round().max(1.0) as usize,
    });
    let gen_seed = derive_seed(config.seed, "generate", 0);
    let mut notes = backend.notes.clone();
    let mut ledger = backend.ledger.clone();
    if !config.selection.enabled {
        let g = over_generate(&backend, schema, m_out, max_len, gen_seed, None)?;
        return Ok(Synthesis {
            config: config.clone(),
            collection: g.collection,
            ledger,
            yield_report: Some(g.report),
            selection: None,
            notes,
        });
    }
    let m_cand = (m_out as f64 * config.selection.candidate_multiplier).ceil() as usize;
    let g = over_generate(&backend, schema, m_cand, max_len, gen_seed, None)?;
    // The embedder is fit on the candidates so that no statistic of the
    // private data enters the embedding.
    let embedder = ReferenceEmbedder::fit(&g.collection);
    let real = embed_collection(&embedder, train);
    let cand = embed_collection(&embedder, &g.collection);
    let m = m_out.min(cand.ids.len());
    if m < m_out {
        notes.push(format!("only {m} of {m_out} requested tables available after generation"));
    }
    let sel_seed = derive_seed(config.seed, "select", 0);
    let outcome = match (&mut ledger, noise) {
        (Some(l), NoiseMode::Private(b)) => {
            let mut sl = selection_ledger(b.epsilon_select, b.delta)?;
            let o = private_knn_select(&real, &cand, config.selection.k, m, Some(&mut sl), sel_seed)?;
            l.selection = Some(sl);
            o
        }
        _ => private_knn_select(&real, &cand, config.selection.k, m, None, sel_seed)?,
    };
    let collection = g.collection.subset(outcome.selected.iter().map(String::as_str));
    Ok(Synthesis {
        config: config.clone(),
        collection,
        ledger,
        yield_report: Some(g.report),
        selection: Some(SelectionSummary {
            candidates: cand.ids.len(),
            selected: outcome.selected.len(),
            k: outcome.k,
            sigma: outcome.sigma,
        }),
        notes,
    })
}

/// Every table with its rows permuted over the pooled rows of the whole
/// collection: pooled marginals and table lengths are kept, temporal and
/// within-user structure is destroyed. Columns in `keep` stay in place.
pub fn shuffle_rows(collection: &Collection, keep: &[usize], seed: u64) -> Result<Collection> {
    let mut pool: Vec<Vec<crate::data::Value>> = collection.tables().flat_map(|t| t.rows.iter().cloned()).collect();
    pool.shuffle(&mut rng_for(seed, "shuffle-rows", 0));
    let mut pool = pool.into_iter();
    let tables: Vec<UserTable> = collection
        .tables()
        .map(|t| {
            let rows = t
                .rows
                .iter()
                .map(|orig| {
                    let mut row = pool.next().expect("pool holds every row");
                    for &c in keep {
                        row[c] = orig[c].clone();
                    }
                    row
                })
                .collect();
            UserTable::new(t.user_id.clone(), rows)
        })
        .collect();
    Collection::new(collection.schema().clone(), tables)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerFile<'a> {
    pub summary: ReleaseSummary,
    pub ledger: &'a ReleaseLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportFile<'a> {
    pub config: &'a ExperimentConfig,
    pub privacy: Option<ReleaseSummary>,
    pub report: &'a MetricReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub synthesis: Synthesis,
    pub report: Option<MetricReport>,
    pub artifacts: EvalArtifacts,
}

impl ExperimentOutput {
    /// `report.json` contents: the resolved config, the privacy summary and
    /// the metrics.
    pub fn report_json(&self) -> Result<Option<String>> {
        self.report
            .as_ref()
            .map(|r| {
                Ok(serde_json::to_string_pretty(&ReportFile {
                    config: &self.synthesis.config,
                    privacy: self.synthesis.ledger.as_ref().map(ReleaseLedger::summary),
                    report: r,
                })?)
            })
            .transpose()
    }
}

/// Synthesize from `train` and, given a test split, evaluate.
pub fn run_in_memory(train: &Collection, test: Option<&Collection>, hmm: Option<&Hmm>, config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let synthesis = synthesize(train, config)?;
    let (report, artifacts) = match test {
        Some(test) => {
            let (r, a) = evaluate_with_artifacts(train, test, &synthesis.collection, &synthesis.config.evaluation, hmm)?;
            (Some(r), a)
        }
        None => (None, EvalArtifacts::default()),
    };
    Ok(ExperimentOutput {
        synthesis,
        report,
        artifacts,
    })
}

/// Load inputs, run, and write the artifact directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let need = |p: &Option<PathBuf>, what: &str| p.clone().ok_or_else(|| Error::invalid(format!("config has no {what} path")));
    let schema = Schema::load(need(&config.schema, "schema")?)?;
    let train = Collection::load(need(&config.train, "train")?, schema.clone())?;
    let test = config.test.as_ref().map(|p| Collection::load(p, schema.clone())).transpose()?;
    let hmm = config.hmm_spec.as_ref().map(|p| HmmSpec::load(p).and_then(Hmm::new)).transpose()?;
    let out_dir = need(&config.output_dir, "output_dir")?;
    let out = run_in_memory(&train, test.as_ref(), hmm.as_ref(), config)?;
    write_artifacts(&out, &out_dir)?;
    Ok(out)
}

/// `synthetic.csv`, `schema.json`, `config.json`, `ledger.json` (private
/// runs), `yield.json` and `selection.json` (when present), `report.json`
/// and `plot-data/` (when evaluated).
pub fn write_artifacts(out: &ExperimentOutput, dir: &Path) -> Result<()> {
    let s = &out.synthesis;
    match &s.ledger {
        Some(l) => l.verify()?,
        None if !s.config.exact => return Err(Error::Budget("refusing to release without a ledger".into())),
        None => {}
    }
    fs::create_dir_all(dir)?;
    s.collection.save(dir.join("synthetic.csv"))?;
    s.collection.schema().save(dir.join("schema.json"))?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&s.config)?)?;
    if let Some(l) = &s.ledger {
        let file = LedgerFile {
            summary: l.summary(),
            ledger: l,
        };
        fs::write(dir.join("ledger.json"), serde_json::to_string_pretty(&file)?)?;
    }
    if let Some(y) = &s.yield_report {
        fs::write(dir.join("yield.json"), serde_json::to_string_pretty(y)?)?;
    }
    if let Some(sel) = &s.selection {
        fs::write(dir.join("selection.json"), serde_json::to_string_pretty(sel)?)?;
    }
    if let Some(json) = out.report_json()? {
        fs::write(dir.join("report.json"), json)?;
    }
    if s.config.plot_data && out.report.is_some() {
        write_plot_data(&out.artifacts, s.config.plot_bins, &dir.join("plot-data"))?;
    }
    Ok(())
}

/// `tdcr_histogram.csv` and `likelihood_histogram.csv`, for whichever
/// artifacts are present.
pub fn write_plot_data(artifacts: &EvalArtifacts, bins: usize, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    if let Some(t) = &artifacts.tdcr {
        write_tdcr_histogram(t, fs::File::create(dir.join("tdcr_histogram.csv"))?)?;
    }
    if let Some((real, synth)) = &artifacts.likelihoods {
        write_value_histogram(real, synth, bins, fs::File::create(dir.join("likelihood_histogram.csv"))?)?;
    }
    Ok(())
}
