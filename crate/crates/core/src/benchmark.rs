//! The desk-scale benchmark: a pre-aligned frozen toy backbone and synthetic
//! benchmark classes that were never seen during alignment.

use serde::{Deserialize, Serialize};

use crate::classifier::fill_template;
use crate::encoder::{
    build_toy_bundle, pretrain_toy_alignment, AlignmentConfig, AlignmentPair, DualEncoderBundle,
    EncoderSpec, Modality, ToyBackboneConfig,
};
use crate::error::{Error, Result};
use crate::prompt::GPromptBank;
use crate::protocol::{
    build_session_stream, catalog_words, default_catalog, render_dataset, synthesize_dataset,
    ClassSpec, Dataset, FscilConfig, SessionStream, SyntheticSpec, DEFAULT_TEMPLATE,
};
use crate::trainer::OptimizerConfig;

/// Backbone geometry for the toy towers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyBackboneShape {
    pub num_layers: usize,
    pub language_dim: usize,
    pub vision_dim: usize,
    pub num_heads: usize,
    pub joint_dim: usize,
    pub patch_size: usize,
    pub language_max_seq_len: usize,
    pub vision_max_seq_len: usize,
}

impl Default for ToyBackboneShape {
    fn default() -> Self {
        Self {
            num_layers: 3,
            language_dim: 32,
            vision_dim: 48,
            num_heads: 4,
            joint_dim: 32,
            patch_size: 4,
            language_max_seq_len: 32,
            vision_max_seq_len: 48,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyBenchmarkConfig {
    pub backbone: ToyBackboneShape,
    pub backbone_seed: u64,
    pub data: SyntheticSpec,
    /// Examples per class in the alignment corpus.
    pub corpus_per_class: usize,
    pub alignment: AlignmentConfig,
}

impl Default for ToyBenchmarkConfig {
    fn default() -> Self {
        Self {
            backbone: ToyBackboneShape::default(),
            backbone_seed: 7,
            // Benchmark images are brighter than the alignment corpus, so the
            // frozen backbone meets them under a domain shift.
            data: SyntheticSpec {
                brightness: 0.6,
                ..SyntheticSpec::default()
            },
            corpus_per_class: 16,
            alignment: AlignmentConfig::default(),
        }
    }
}

/// Seeded base + N-way K-shot split of a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticStream {
    pub base_classes: usize,
    pub way: usize,
    pub shot: usize,
    pub sessions: usize,
    pub seed: u64,
}

impl Default for SyntheticStream {
    fn default() -> Self {
        Self {
            base_classes: 6,
            way: 2,
            shot: 3,
            sessions: 2,
            seed: 0,
        }
    }
}

impl SyntheticStream {
    pub fn build(&self, dataset: &Dataset) -> Result<SessionStream> {
        build_session_stream(
            dataset,
            self.base_classes,
            self.way,
            self.shot,
            self.sessions,
            self.seed,
        )
    }
}

/// The aligned, frozen backbone and the benchmark classes it never saw.
#[derive(Clone, Debug)]
pub struct ToyBenchmark {
    pub bundle: DualEncoderBundle,
    pub dataset: Dataset,
    /// Classes used only for backbone alignment.
    pub corpus_classes: Vec<ClassSpec>,
}

impl ToyBenchmark {
    pub fn class_names(&self) -> Vec<String> {
        self.dataset.class_names()
    }
}

/// The benchmark classes drawn from the default catalog.
pub fn toy_dataset(cfg: &ToyBenchmarkConfig) -> Result<Dataset> {
    synthesize_dataset(&default_catalog(), &cfg.data)
}

pub fn toy_backbone_config(shape: &ToyBackboneShape, image_size: usize) -> ToyBackboneConfig {
    let mut vocabulary: Vec<String> = catalog_words(&default_catalog());
    let template = fill_template(DEFAULT_TEMPLATE, "").expect("default template is valid");
    vocabulary.extend(template.split_whitespace().map(String::from));
    ToyBackboneConfig {
        language: EncoderSpec {
            num_layers: shape.num_layers,
            embed_dim: shape.language_dim,
            num_heads: shape.num_heads,
            max_seq_len: shape.language_max_seq_len,
            modality: Modality::Language,
        },
        vision: EncoderSpec {
            num_layers: shape.num_layers,
            embed_dim: shape.vision_dim,
            num_heads: shape.num_heads,
            max_seq_len: shape.vision_max_seq_len,
            modality: Modality::Vision,
        },
        joint_dim: shape.joint_dim,
        image_size,
        patch_size: shape.patch_size,
        channels: 1,
        vocabulary,
        oov_buckets: 4,
    }
}

/// Renders the benchmark classes and an alignment corpus over the remaining
/// catalog classes, then aligns and freezes the backbone.
pub fn prepare_toy_benchmark(cfg: &ToyBenchmarkConfig) -> Result<ToyBenchmark> {
    let dataset = toy_dataset(cfg)?;
    let held_out = dataset.class_names();
    let corpus_classes: Vec<ClassSpec> = default_catalog()
        .into_iter()
        .filter(|c| !held_out.contains(&c.name))
        .collect();
    if cfg.alignment.steps > 0 && corpus_classes.len() < 2 {
        return Err(Error::config("catalog leaves too few classes for alignment"));
    }
    let corpus_spec = SyntheticSpec {
        num_classes: corpus_classes.len(),
        per_class: cfg.corpus_per_class.max(1) + 1,
        test_per_class: 1,
        seed: cfg.data.seed.wrapping_add(1000),
        brightness: 0.0,
        contrast: 1.0,
        ..cfg.data.clone()
    };
    let corpus_data = render_dataset(&corpus_classes, &corpus_spec)?;
    let corpus: Vec<AlignmentPair> = corpus_data
        .train
        .iter()
        .map(|e| AlignmentPair {
            image: e.image.clone(),
            class_name: corpus_classes[e.class_id].name.clone(),
        })
        .collect();

    let bundle = build_toy_bundle(
        &toy_backbone_config(&cfg.backbone, cfg.data.image_size),
        cfg.backbone_seed,
    )?;
    let bundle = pretrain_toy_alignment(bundle, &corpus, &held_out, &cfg.alignment)?;
    Ok(ToyBenchmark {
        bundle,
        dataset,
        corpus_classes,
    })
}

/// Method settings tuned for the toy backbone: a sharper logit scale and a
/// smaller learning rate than the full-size defaults, and more base epochs.
pub fn toy_fscil_config() -> FscilConfig {
    FscilConfig {
        base_optimizer: OptimizerConfig {
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 16,
            ..OptimizerConfig::default()
        },
        incremental_optimizer: OptimizerConfig {
            learning_rate: 0.01,
            ..OptimizerConfig::incremental()
        },
        logit_scale: 60.0,
        ..FscilConfig::default()
    }
}

/// Prompt bank warm-started from the template's prefix words.
pub fn toy_prompt_bank(
    bundle: &DualEncoderBundle,
    length: usize,
    depth: usize,
    seed: u64,
) -> Result<GPromptBank> {
    let prefix = fill_template(DEFAULT_TEMPLATE, "")?;
    GPromptBank::init_from_text(bundle, prefix.trim(), length, depth, seed)
}
