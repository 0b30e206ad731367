//! Shared fixtures for the benchmarks in `benches/`.

use trajsynth::hmm::{sample_collection, Hmm, HmmSpec, LengthDistribution, SampleOptions};
use trajsynth::Collection;

const SPEC: &str = include_str!("../../core/data/acceptance_hmm.json");

pub fn hmm() -> Hmm {
    Hmm::new(serde_json::from_str::<HmmSpec>(SPEC).expect("bundled spec parses")).expect("bundled spec is valid")
}

/// `n` tables of 4 to 12 rows drawn from the bundled model.
pub fn collection(hmm: &Hmm, n: usize, seed: u64) -> Collection {
    let lengths = LengthDistribution::uniform(4, 12).expect("valid range");
    sample_collection(hmm, n, &lengths, &SampleOptions::default(), seed).expect("sampling succeeds")
}
