#![allow(dead_code)]

use fscil_core::encoder::{EncoderSpec, Modality, ToyBackboneConfig};
use fscil_core::{build_toy_bundle, DualEncoderBundle};

pub fn config(layers: usize, language_dim: usize, vision_dim: usize) -> ToyBackboneConfig {
    ToyBackboneConfig {
        language: EncoderSpec {
            num_layers: layers,
            embed_dim: language_dim,
            num_heads: 2,
            max_seq_len: 24,
            modality: Modality::Language,
        },
        vision: EncoderSpec {
            num_layers: layers,
            embed_dim: vision_dim,
            num_heads: 2,
            max_seq_len: 40,
            modality: Modality::Vision,
        },
        joint_dim: 8,
        image_size: 8,
        patch_size: 4,
        channels: 1,
        vocabulary: ["a", "photo", "of", "vertical", "horizontal", "wide", "narrow"]
            .iter()
            .map(|w| w.to_string())
            .collect(),
        oov_buckets: 4,
    }
}

/// Frozen three-layer bundle, 12-wide text and 16-wide vision.
pub fn bundle(seed: u64) -> DualEncoderBundle {
    let mut b = build_toy_bundle(&config(3, 12, 16), seed).unwrap();
    b.freeze();
    b
}
