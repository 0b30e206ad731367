use std::collections::BTreeMap;
use std::path::Path;

use trajsynth::direct::NoiseMode;
use trajsynth::generator::{over_generate, train_dp_markov_backend, DpMarkovConfig, Structure};
use trajsynth::hmm::{sample_collection, Hmm, HmmSpec, LengthDistribution, SampleOptions};
use trajsynth::serialize::{parse, serialize};
use trajsynth::Collection;

const TVD_MAX: f64 = 0.03;
const TARGET_ROWS: usize = 100_000;

fn hmm() -> Hmm {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/acceptance_hmm.json");
    Hmm::new(HmmSpec::load(path).unwrap()).unwrap()
}

/// Pooled `(code_t, code_{t+1})` frequencies of each column.
fn pair_frequencies(c: &Collection, encode: impl Fn(&[trajsynth::Value]) -> Vec<usize>, col: usize) -> BTreeMap<(usize, usize), f64> {
    let mut counts = BTreeMap::new();
    let mut total = 0.0;
    for t in c.tables() {
        let codes: Vec<usize> = t.rows.iter().map(|r| encode(r)[col]).collect();
        for w in codes.windows(2) {
            *counts.entry((w[0], w[1])).or_insert(0.0) += 1.0;
            total += 1.0;
        }
    }
    counts.values_mut().for_each(|v| *v /= total);
    counts
}

fn tvd(a: &BTreeMap<(usize, usize), f64>, b: &BTreeMap<(usize, usize), f64>) -> f64 {
    let keys: std::collections::BTreeSet<_> = a.keys().chain(b.keys()).collect();
    0.5 * keys.into_iter().map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).abs()).sum::<f64>()
}

#[test]
fn exact_backend_reproduces_adjacent_transitions() {
    let hmm = hmm();
    let lengths = LengthDistribution::uniform(4, 12).unwrap();
    let real = sample_collection(&hmm, 12_000, &lengths, &SampleOptions::default(), 3).unwrap();
    let config = DpMarkovConfig {
        structure: Structure::Independent,
        step_column: Some("timestep".into()),
        ..Default::default()
    };
    let backend = train_dp_markov_backend(&real, &config, NoiseMode::Exact).unwrap();
    let schema = real.schema();
    let m = TARGET_ROWS.div_ceil(8);
    let g = over_generate(&backend, schema, m, config.max_len, 17, None).unwrap();
    assert!(g.collection.num_rows() >= TARGET_ROWS * 9 / 10, "{} rows", g.collection.num_rows());
    let encode = |r: &[trajsynth::Value]| backend.discretizer.encode_row(r);
    for &col in &backend.features {
        let d = tvd(&pair_frequencies(&real, encode, col), &pair_frequencies(&g.collection, encode, col));
        assert!(d <= TVD_MAX, "column {}: tvd {d}", schema.columns[col].name);
    }
}

#[test]
fn generated_tables_survive_serialization() {
    let hmm = hmm();
    let real = sample_collection(&hmm, 300, &LengthDistribution::uniform(2, 6).unwrap(), &SampleOptions::default(), 1).unwrap();
    let backend = train_dp_markov_backend(&real, &DpMarkovConfig::default(), NoiseMode::Exact).unwrap();
    let g = over_generate(&backend, real.schema(), 50, 6, 2, None).unwrap();
    assert_eq!(g.report.accepted, 50);
    for t in g.collection.tables() {
        assert!((1..=6).contains(&t.len()));
        let (back, report) = parse(&serialize(real.schema(), t), real.schema(), None, &t.user_id);
        assert!(report.is_complete());
        assert_eq!(&back, t);
    }
}
