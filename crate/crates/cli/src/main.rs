use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trajsynth::direct::{run_direct, DirectConfig, NoiseMode, Variant};
use trajsynth::discretize::BinRule;
use trajsynth::experiment::{run_experiment, write_plot_data, ExperimentConfig, Method};
use trajsynth::flatten::{alternation_example, filter_truncate, flatten, maxent_two_local, spurious_mass};
use trajsynth::generator::{over_generate, train_dp_markov_backend, DpMarkovBackend, DpMarkovConfig, Structure};
use trajsynth::hmm::{sample_collection, Hmm, HmmSpec, LengthDistribution, SampleOptions};
use trajsynth::metrics::plot::write_density_grid;
use trajsynth::metrics::{evaluate_with_artifacts, EvalConfig};
use trajsynth::privacy::{default_delta, ReleaseLedger};
use trajsynth::selection::{embed_collection, private_knn_select, selection_ledger, ReferenceEmbedder};
use trajsynth::{Collection, Error, PrivacyBudget, Result, Schema};

#[derive(Parser)]
#[command(name = "trajsynth", version, about = "Private synthesis and evaluation of per-user longitudinal tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a collection from an HMM spec.
    HmmGen(HmmGen),
    /// Truncate to users with at least L rows and write the flat table.
    Flatten(FlattenCmd),
    /// Direct marginal mechanism on the flattened data.
    DirectSynth(DirectSynth),
    /// Train the DP Markov generator backend.
    TrainBackend(TrainBackend),
    /// Generate candidate tables from a trained backend.
    Generate(Generate),
    /// Private nearest-neighbor selection of candidates.
    Select(Select),
    /// Compute the metric report.
    Evaluate(Evaluate),
    /// Print the spurious-trajectory example for the local MaxEnt model.
    DemoSpurious,
    /// Write plotting series (TDCR and likelihood histograms, density grid).
    PlotData(PlotData),
    /// Run a full experiment from a JSON config.
    Run(Run),
}

#[derive(Args)]
struct Budget {
    #[arg(long)]
    epsilon: Option<f64>,
    /// Defaults to 1/n² for n training users.
    #[arg(long)]
    delta: Option<f64>,
    /// Measure without noise; the output is not private.
    #[arg(long)]
    exact: bool,
}

impl Budget {
    fn noise(&self, n: usize, epsilon_select: f64) -> Result<NoiseMode> {
        if self.exact {
            return Ok(NoiseMode::Exact);
        }
        let eps = self.epsilon.ok_or_else(|| Error::Invalid("--epsilon is required unless --exact is given".into()))?;
        let delta = self.delta.unwrap_or_else(|| default_delta(n));
        PrivacyBudget::new(eps, delta, epsilon_select).map(NoiseMode::Private)
    }
}

#[derive(Args)]
struct HmmGen {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    min_len: usize,
    #[arg(long, default_value_t = 12)]
    max_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "user_")]
    id_prefix: String,
    #[arg(long)]
    no_timestep: bool,
    #[arg(long)]
    output: PathBuf,
    /// Defaults to `<output stem>.schema.json`.
    #[arg(long)]
    schema_output: Option<PathBuf>,
}

#[derive(Args)]
struct FlattenCmd {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long = "L", short = 'L')]
    window: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct DirectSynth {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long = "L", short = 'L', default_value_t = 10)]
    window: usize,
    #[arg(long, default_value = "markov")]
    variant: Variant,
    #[command(flatten)]
    budget: Budget,
    #[arg(long, default_value_t = 32)]
    bins: usize,
    #[arg(long, default_value_t = 80)]
    max_across: usize,
    #[arg(long)]
    clip: bool,
    #[arg(long)]
    num_output: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Defaults to `<output stem>.ledger.json`.
    #[arg(long)]
    ledger: Option<PathBuf>,
}

#[derive(Args)]
struct TrainBackend {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[command(flatten)]
    budget: Budget,
    /// Share of the budget reserved for a later `select` step.
    #[arg(long, default_value_t = 0.0)]
    eps_select: f64,
    #[arg(long, default_value_t = 12)]
    bins: usize,
    #[arg(long, default_value = "equal-width", value_parser = parse_bin_rule)]
    bin_rule: BinRule,
    #[arg(long, default_value = "independent", value_parser = parse_structure)]
    structure: Structure,
    #[arg(long)]
    step_column: Option<String>,
    #[arg(long, default_value_t = 12)]
    max_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct Generate {
    #[arg(long, default_value = "markov")]
    backend: String,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 12)]
    max_len: usize,
    #[arg(long)]
    retry_cap: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Defaults to `<output stem>.yield.json`.
    #[arg(long)]
    yield_report: Option<PathBuf>,
}

#[derive(Args)]
struct Select {
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    eps_select: f64,
    #[arg(long)]
    delta: Option<f64>,
    /// Backend whose training ledger the selection is added to; the combined
    /// ledger must verify before anything is written.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Defaults to `<output stem>.ledger.json`.
    #[arg(long)]
    ledger: Option<PathBuf>,
}

#[derive(Args)]
struct EvalInputs {
    #[arg(long)]
    real_train: PathBuf,
    #[arg(long)]
    real_test: PathBuf,
    #[arg(long)]
    synth: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    hmm_spec: Option<PathBuf>,
    /// Metric parameters as JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Evaluate {
    #[command(flatten)]
    inputs: EvalInputs,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct PlotData {
    #[command(flatten)]
    inputs: EvalInputs,
    #[arg(long, default_value_t = 30)]
    bins: usize,
    /// Two numeric columns for the density grid, as `x,y`.
    #[arg(long)]
    density: Option<String>,
    #[arg(long, default_value_t = 0.01)]
    bin_width: f64,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args)]
struct Run {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    eps_select: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_bin_rule(s: &str) -> std::result::Result<BinRule, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|e| e.to_string())
}

fn parse_structure(s: &str) -> std::result::Result<Structure, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|e| e.to_string())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("output");
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn write_json(path: &Path, value: serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(&value)?)?;
    Ok(())
}

fn load(csv: &Path, schema: &Path) -> Result<Collection> {
    Collection::load(csv, Schema::load(schema)?)
}

fn ledger_json(ledger: &ReleaseLedger) -> serde_json::Value {
    serde_json::json!({ "summary": ledger.summary(), "ledger": ledger })
}

fn hmm_gen(a: HmmGen) -> Result<()> {
    let hmm = Hmm::new(HmmSpec::load(&a.spec)?)?;
    let options = SampleOptions {
        timestep_column: (!a.no_timestep).then(|| "timestep".to_string()),
        id_prefix: a.id_prefix,
    };
    let c = sample_collection(&hmm, a.n, &LengthDistribution::uniform(a.min_len, a.max_len)?, &options, a.seed)?;
    c.save(&a.output)?;
    c.schema().save(a.schema_output.unwrap_or_else(|| sibling(&a.output, "schema.json")))?;
    eprintln!("wrote {} tables, {} rows", c.len(), c.num_rows());
    Ok(())
}

fn flatten_cmd(a: FlattenCmd) -> Result<()> {
    let c = load(&a.input, &a.schema)?;
    let cohort = filter_truncate(&c, a.window)?;
    let flat = flatten(&cohort, a.window)?;
    flat.write_csv(fs::File::create(&a.output)?)?;
    eprintln!("kept {} of {} users, {} flat columns", cohort.len(), c.len(), flat.schema().len());
    Ok(())
}

fn direct_synth(a: DirectSynth) -> Result<()> {
    let c = load(&a.input, &a.schema)?;
    let cfg = DirectConfig {
        window: a.window,
        variant: a.variant,
        max_across: a.max_across,
        bins: a.bins,
        bin_rule: BinRule::EqualWidth,
        clip: a.clip,
        num_output: a.num_output,
        seed: a.seed,
    };
    let out = run_direct(&c, &cfg, a.budget.noise(c.len(), 0.0)?)?;
    let ledger_path = a.ledger.unwrap_or_else(|| sibling(&a.output, "ledger.json"));
    match &out.ledger {
        Some(l) => {
            l.verify()?;
            write_json(&ledger_path, ledger_json(l))?;
        }
        None => write_json(&ledger_path, serde_json::json!({ "private": false, "notes": out.notes }))?,
    }
    out.collection.save(&a.output)?;
    for n in &out.notes {
        eprintln!("note: {n}");
    }
    eprintln!("wrote {} tables from {} users, {} measurements", out.collection.len(), out.retained_users, out.num_queries);
    Ok(())
}

fn train_backend(a: TrainBackend) -> Result<()> {
    let c = load(&a.input, &a.schema)?;
    let cfg = DpMarkovConfig {
        bins: a.bins,
        bin_rule: a.bin_rule,
        structure: a.structure,
        step_column: a.step_column,
        max_len: a.max_len,
        seed: a.seed,
    };
    let b = train_dp_markov_backend(&c, &cfg, a.budget.noise(c.len(), a.eps_select)?)?;
    b.save(&a.output)?;
    for n in &b.notes {
        eprintln!("note: {n}");
    }
    if let Some(l) = &b.ledger {
        eprintln!("training epsilon {}", l.summary().epsilon_train);
    }
    Ok(())
}

fn generate(a: Generate) -> Result<()> {
    if a.backend != "markov" {
        return Err(Error::Invalid(format!("unknown backend {:?}; only \"markov\" is available", a.backend)));
    }
    let b = DpMarkovBackend::load(&a.model)?;
    let g = over_generate(&b, &b.schema, a.n, a.max_len, a.seed, a.retry_cap)?;
    g.collection.save(&a.output)?;
    write_json(&a.yield_report.unwrap_or_else(|| sibling(&a.output, "yield.json")), serde_json::to_value(&g.report)?)?;
    if g.report.shortfall > 0 {
        eprintln!("warning: {} of {} tables missing after retries", g.report.shortfall, a.n);
    }
    eprintln!("accepted {} of {} attempts", g.report.accepted, g.report.attempts);
    Ok(())
}

fn select(a: Select) -> Result<()> {
    let schema = Schema::load(&a.schema)?;
    let real = Collection::load(&a.real, schema.clone())?;
    let cand = Collection::load(&a.candidates, schema)?;
    let delta = a.delta.unwrap_or_else(|| default_delta(real.len()));
    let mut release = match &a.model {
        Some(p) => {
            let b = DpMarkovBackend::load(p)?;
            let l = b.ledger.ok_or_else(|| Error::Budget("backend was trained without a ledger".into()))?;
            if (l.budget.epsilon_select - a.eps_select).abs() > 1e-12 || l.budget.delta != delta {
                return Err(Error::Budget(format!(
                    "backend reserved epsilon_select {} at delta {}, selection asks for {} at {}",
                    l.budget.epsilon_select, l.budget.delta, a.eps_select, delta
                )));
            }
            Some(l)
        }
        None => None,
    };
    let embedder = ReferenceEmbedder::fit(&cand);
    let mut ledger = selection_ledger(a.eps_select, delta)?;
    let out = private_knn_select(
        &embed_collection(&embedder, &real),
        &embed_collection(&embedder, &cand),
        a.k,
        a.m,
        Some(&mut ledger),
        a.seed,
    )?;
    let ledger_path = a.ledger.unwrap_or_else(|| sibling(&a.output, "ledger.json"));
    match &mut release {
        Some(r) => {
            r.selection = Some(ledger);
            r.verify()?;
            write_json(&ledger_path, ledger_json(r))?;
        }
        None => {
            ledger.verify()?;
            write_json(&ledger_path, serde_json::json!({ "epsilon_select": ledger.epsilon_spent(), "ledger": ledger }))?;
        }
    }
    cand.subset(out.selected.iter().map(String::as_str)).save(&a.output)?;
    eprintln!("selected {} of {} candidates, sigma {}", out.selected.len(), cand.len(), out.sigma);
    Ok(())
}

struct Loaded {
    train: Collection,
    test: Collection,
    synth: Collection,
    hmm: Option<Hmm>,
    config: EvalConfig,
}

fn load_eval(i: &EvalInputs) -> Result<Loaded> {
    let schema = Schema::load(&i.schema)?;
    let mut config: EvalConfig = match &i.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => EvalConfig::default(),
    };
    if let Some(s) = i.seed {
        config.seed = s;
    }
    Ok(Loaded {
        train: Collection::load(&i.real_train, schema.clone())?,
        test: Collection::load(&i.real_test, schema.clone())?,
        synth: Collection::load(&i.synth, schema)?,
        hmm: i.hmm_spec.as_ref().map(|p| HmmSpec::load(p).and_then(Hmm::new)).transpose()?,
        config,
    })
}

fn evaluate(a: Evaluate) -> Result<()> {
    let l = load_eval(&a.inputs)?;
    let (report, _) = evaluate_with_artifacts(&l.train, &l.test, &l.synth, &l.config, l.hmm.as_ref())?;
    fs::write(&a.output, report.to_json()?)?;
    for (name, entry) in &report.metrics {
        match entry.value() {
            Some(v) => eprintln!("{name}: {v}"),
            None => eprintln!("{name}: {}", serde_json::to_string(entry)?),
        }
    }
    Ok(())
}

fn plot_data(a: PlotData) -> Result<()> {
    let l = load_eval(&a.inputs)?;
    let (_, artifacts) = evaluate_with_artifacts(&l.train, &l.test, &l.synth, &l.config, l.hmm.as_ref())?;
    write_plot_data(&artifacts, a.bins, &a.output_dir)?;
    if let Some(spec) = &a.density {
        let (x, y) = spec
            .split_once(',')
            .ok_or_else(|| Error::Invalid(format!("--density expects `x,y`, got {spec:?}")))?;
        for (name, c) in [("real_test", &l.test), ("synth", &l.synth)] {
            let path = a.output_dir.join(format!("density_{name}.csv"));
            write_density_grid(c, x.trim(), y.trim(), a.bin_width, fs::File::create(path)?)?;
        }
    }
    Ok(())
}

fn demo_spurious() -> Result<()> {
    let truth = alternation_example();
    let model = maxent_two_local(&truth)?;
    println!("trajectory\ttrue\tmaxent\tspurious");
    for (t, p) in &model {
        let q = truth.get(t).copied().unwrap_or(0.0);
        println!("({})\t{q}\t{p}\t{}", t.join(","), if q == 0.0 { "yes" } else { "no" });
    }
    println!("spurious mass\t{}", spurious_mass(&truth, &model));
    Ok(())
}

fn run(a: Run) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(d) = a.output_dir {
        cfg.output_dir = Some(d);
    }
    if let Some(m) = a.method {
        cfg.method = m;
    }
    if let Some(e) = a.epsilon {
        cfg.epsilon_total = e;
    }
    if a.delta.is_some() {
        cfg.delta = a.delta;
    }
    if a.eps_select.is_some() {
        cfg.epsilon_select = a.eps_select;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let out = run_experiment(&cfg)?;
    let s = &out.synthesis;
    eprintln!("released {} tables", s.collection.len());
    if let Some(l) = &s.ledger {
        let sum = l.summary();
        eprintln!(
            "epsilon {:.4} = train {:.4} + select {:.4} (budget {})",
            sum.epsilon_claimed, sum.epsilon_train, sum.epsilon_select, l.budget.epsilon_total
        );
    }
    if let Some(y) = &s.yield_report {
        eprintln!("yield: {} accepted of {} attempts", y.accepted, y.attempts);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::HmmGen(a) => hmm_gen(a),
        Command::Flatten(a) => flatten_cmd(a),
        Command::DirectSynth(a) => direct_synth(a),
        Command::TrainBackend(a) => train_backend(a),
        Command::Generate(a) => generate(a),
        Command::Select(a) => select(a),
        Command::Evaluate(a) => evaluate(a),
        Command::DemoSpurious => demo_spurious(),
        Command::PlotData(a) => plot_data(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Budget(_) => 3,
                ref e if e.is_validation() => 2,
                _ => 1,
            })
        }
    }
}
