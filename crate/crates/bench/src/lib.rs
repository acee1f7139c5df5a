//! Shared fixtures for the criterion benchmarks.

use textra_core::config::Config;
use textra_core::model::FdpModel;
use textra_core::retrieval::{IndexEntry, RetrievalIndex};
use textra_core::rng;
use textra_core::synth;
use textra_core::{Array, Real};

/// Model at the default architecture with fitted clusters, ready to embed.
pub fn default_model() -> FdpModel {
    let cfg = Config::default();
    let mut model = FdpModel::new(&cfg).expect("default config is valid");
    let vocab = synth::vocab_of_size(20).unwrap();
    model.fit_clusters(&vocab).expect("cluster fit");
    model
}

/// Index of `n` random unit vectors, `per_entry` vectors each.
pub fn random_index(n: usize, per_entry: usize, dim: usize) -> RetrievalIndex {
    let mut r = rng::seeded(42);
    let entries = (0..n)
        .map(|i| IndexEntry {
            id: format!("img{i:06}"),
            vectors: (0..per_entry)
                .map(|_| {
                    let v = Array::randn(&[dim], 0.0, 1.0, &mut r);
                    let norm = v.norm();
                    v.data().iter().map(|x| x / norm).collect::<Vec<Real>>()
                })
                .collect(),
        })
        .collect();
    RetrievalIndex {
        embed: dim,
        subdivision: per_entry > 1,
        fingerprint: 0,
        entries,
    }
}

/// Deterministic random unit query of dimension `dim`.
pub fn random_query(dim: usize) -> Vec<Real> {
    let mut r = rng::seeded(7);
    let v = Array::randn(&[dim], 0.0, 1.0, &mut r);
    let norm = v.norm();
    v.data().iter().map(|x| x / norm).collect()
}
