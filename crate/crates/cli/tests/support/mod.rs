#![allow(dead_code)]

pub mod reference;

use fscil_core::encoder::{EncoderSpec, Modality, ToyBackboneConfig};
use fscil_core::protocol::{pattern_catalog, render_dataset, Dataset, SyntheticSpec};
use fscil_core::{build_toy_bundle, DualEncoderBundle, GPromptBank};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const WORDS: [&str; 8] = ["a", "photo", "of", "red", "blue", "green", "cat", "dog"];

/// Geometry of a small random backbone.
#[derive(Clone, Copy, Debug)]
pub struct SmallShape {
    pub layers: usize,
    pub heads: usize,
    pub language_dim: usize,
    pub vision_dim: usize,
    pub joint_dim: usize,
}

impl SmallShape {
    /// Any shape with `layers <= 4` and both widths at most 32.
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let layers = rng.random_range(1..=4);
        let heads = [1, 2, 4][rng.random_range(0..3)];
        let language_dim = heads * rng.random_range(2..=28 / heads);
        let vision_dim = language_dim + heads * rng.random_range(1..=(32 - language_dim) / heads);
        let joint_dim = rng.random_range(2..=language_dim);
        Self {
            layers,
            heads,
            language_dim,
            vision_dim,
            joint_dim,
        }
    }

    pub fn config(&self, image_size: usize) -> ToyBackboneConfig {
        ToyBackboneConfig {
            language: EncoderSpec {
                num_layers: self.layers,
                embed_dim: self.language_dim,
                num_heads: self.heads,
                max_seq_len: 24,
                modality: Modality::Language,
            },
            vision: EncoderSpec {
                num_layers: self.layers,
                embed_dim: self.vision_dim,
                num_heads: self.heads,
                max_seq_len: 40,
                modality: Modality::Vision,
            },
            joint_dim: self.joint_dim,
            image_size,
            patch_size: 4,
            channels: 1,
            vocabulary: WORDS.iter().map(|w| w.to_string()).collect(),
            oov_buckets: 2,
        }
    }
}

/// A frozen random bundle whose every tensor, norms and biases included, is
/// perturbed away from its initial value.
pub fn small_bundle(shape: SmallShape, image_size: usize, seed: u64) -> DualEncoderBundle {
    let mut bundle = build_toy_bundle(&shape.config(image_size), seed).expect("valid shape");
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed ^ 0xabcd);
    let mut jitter = |m: &mut Array2<f64>| m.mapv_inplace(|v| v + rng.random_range(-0.1..0.1));
    for t in bundle.language.weights.tensors_mut() {
        jitter(t);
    }
    for t in bundle.vision.weights.tensors_mut() {
        jitter(t);
    }
    jitter(&mut bundle.text_out_proj);
    jitter(&mut bundle.vision_out_proj);
    bundle.freeze();
    bundle
}

/// A bank with prompts large enough to move the towers' outputs.
pub fn loud_bank(bundle: &DualEncoderBundle, length: usize, depth: usize, seed: u64) -> GPromptBank {
    let mut bank = GPromptBank::init(
        length,
        depth,
        bundle.language_dim(),
        bundle.vision_dim(),
        bundle.num_layers(),
        seed,
    )
    .expect("valid bank");
    bank.params_mut().0.mapv_inplace(|v| v * 25.0);
    bank
}

/// Tiny grating dataset over `classes` catalog classes with two-word names.
pub fn tiny_dataset(classes: usize, per_class: usize, image_size: usize, seed: u64) -> Dataset {
    let catalog = pattern_catalog(classes, 1);
    render_dataset(
        &catalog,
        &SyntheticSpec {
            num_classes: classes,
            per_class,
            test_per_class: 1,
            image_size,
            seed,
            ..SyntheticSpec::default()
        },
    )
    .expect("valid dataset")
}

pub fn random_tokens(bundle: &DualEncoderBundle, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let words = rng.random_range(1..=4);
    let text: Vec<&str> = (0..words).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
    bundle.tokenizer.encode(&text.join(" ")).expect("encodable")
}

pub fn random_patches(bundle: &DualEncoderBundle, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = bundle.patchifier.num_patches();
    let d = bundle.patchifier.patch_dim();
    Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
}
