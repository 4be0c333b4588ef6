//! Shared fixtures for the criterion benches.

use dhen_core::ensemble::{EnsembleMethod, HeadSpec, LayerSpec, NetworkSpec};
use dhen_core::features::{FeatureBatch, FeatureConfig, SparseFieldSpec};
use dhen_core::interaction::ModuleSpec;
use dhen_core::tensor::Tensor;

/// A small two-layer network of the shape the training tests use.
pub fn bench_network() -> NetworkSpec {
    let layer = LayerSpec {
        modules: vec![ModuleSpec::CrossNet { l: 4 }, ModuleSpec::Linear { l: 4 }],
        ensemble: EnsembleMethod::Concat,
        dense_token: false,
    };
    NetworkSpec {
        features: FeatureConfig {
            embedding_dim: 8,
            sparse: (0..5)
                .map(|i| SparseFieldSpec { name: format!("f{i}"), cardinality: 64 })
                .collect(),
            dense_width: 4,
            dense_hidden: vec![],
        },
        layers: vec![layer.clone(), layer],
        head: HeadSpec { hidden: vec![64], bias_only: false },
    }
}

/// A deterministic batch for the bench network.
pub fn bench_batch(b: usize) -> FeatureBatch {
    FeatureBatch {
        sparse_ids: (0..5)
            .map(|f| (0..b).map(|s| vec![(s * 7 + f * 13) % 64]).collect())
            .collect(),
        dense: Tensor::new(
            vec![b, 4],
            (0..b * 4).map(|i| ((i * 37 % 100) as f64) / 50.0 - 1.0).collect(),
        )
        .unwrap(),
    }
}
