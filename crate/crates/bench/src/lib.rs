//! Shared fixtures for the pipeline benchmarks.

use fstc_core::corpus::{synth_generate, CorpusRegistry, SynthSpec};
use fstc_core::trainer::TrainConfig;

pub fn fixture_registry() -> CorpusRegistry {
    synth_generate(
        &SynthSpec {
            sources: 3,
            classes_per_source: 25,
            docs_per_class: 20,
            doc_len: 16,
            vocab_size: 150,
            divergence: 0.7,
            split: (0.6, 0.2, 0.2),
        },
        42,
    )
    .expect("fixture spec is valid")
}

pub fn fixture_config() -> TrainConfig {
    TrainConfig {
        seed: 7,
        n: 5,
        k: 1,
        q: 5,
        branching: Some(vec![5, 3, 1]),
        d_emb: 32,
        d_h: 32,
        ..TrainConfig::default()
    }
}
