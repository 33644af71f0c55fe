//! Frozen dual encoder: a language tower and a vision tower, each followed by
//! a linear projection into a shared joint space.
//!
//! Both towers expose per-layer [`LayerForwardHook`]s. A hook can inject a
//! block of prompt tokens at the input of its layer and decide whether the
//! outputs at prompt positions are carried into the next layer. Replacement
//! (fresh tokens, outputs discarded) and accumulation (fresh tokens stacked in
//! front of carried outputs) are both expressed with the same hook type.

mod adapter;
mod count;
mod pretrain;
pub mod tokenizer;
pub mod tower;

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{Image, Patchifier};
use crate::tape::{Mat, Tape, Var};

pub use adapter::{BundleFileAdapter, CheckpointAdapter, ClipLayout, LayoutOnlyAdapter};
pub use count::{count_parameters, learnable_parameters, FrozenParameters, ParameterCount};
pub use pretrain::{pretrain_toy_alignment, AlignmentConfig, AlignmentPair};
pub use tokenizer::Tokenizer;
use tower::{block_forward, init_tower, Stem, Tower};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Language,
    Vision,
}

/// Shape of one transformer tower.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub num_layers: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub max_seq_len: usize,
    pub modality: Modality,
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.embed_dim == 0 || self.num_heads == 0 || self.max_seq_len == 0
        {
            return Err(Error::config(format!(
                "{:?} encoder dimensions must be positive",
                self.modality
            )));
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::config(format!(
                "{:?} embed_dim {} is not divisible by num_heads {}",
                self.modality, self.embed_dim, self.num_heads
            )));
        }
        Ok(())
    }
}

/// Where a hook's prompt block sits relative to the real tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionMode {
    /// Right after the leading sentinel: `[BOS, prompts, w.., EOS]`.
    Prepend,
    /// After every real token: `[CLS, patches.., prompts]`.
    Append,
}

/// Per-layer injection policy.
///
/// The prompt block entering layer `layer_index` is `[injected, carried]`,
/// where `carried` are the prompt-position outputs of the previous layer (if
/// that layer did not discard them). With `discard_prompt_outputs` the
/// outputs of this layer at prompt positions are dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerForwardHook<T = Mat> {
    /// 1-based.
    pub layer_index: usize,
    /// One token per row.
    pub injected_tokens: Option<T>,
    pub injection_mode: InjectionMode,
    pub discard_prompt_outputs: bool,
}

/// Prompt-token bookkeeping recorded during a hooked forward.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ForwardTrace {
    /// Prompt tokens in the input of each layer, index 0 is layer 1.
    pub prompt_tokens_per_layer: Vec<usize>,
    /// Prompt tokens carried out of the final layer.
    pub pooled_prompt_tokens: usize,
}

/// One tower together with its spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub spec: EncoderSpec,
    pub weights: Tower<Mat>,
}

/// Geometry and vocabulary of a desk-scale backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyBackboneConfig {
    pub language: EncoderSpec,
    pub vision: EncoderSpec,
    pub joint_dim: usize,
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub vocabulary: Vec<String>,
    pub oov_buckets: usize,
}

impl ToyBackboneConfig {
    pub fn validate(&self) -> Result<()> {
        self.language.validate()?;
        self.vision.validate()?;
        if self.language.modality != Modality::Language || self.vision.modality != Modality::Vision
        {
            return Err(Error::config("encoder specs have the wrong modality"));
        }
        if self.vision.embed_dim <= self.language.embed_dim {
            return Err(Error::config(format!(
                "vision width {} must exceed language width {}",
                self.vision.embed_dim, self.language.embed_dim
            )));
        }
        if self.language.num_layers != self.vision.num_layers {
            return Err(Error::config("both towers must have the same depth"));
        }
        if self.joint_dim == 0 || self.joint_dim > self.language.embed_dim {
            return Err(Error::config(format!(
                "joint dimension {} must be in 1..={}",
                self.joint_dim, self.language.embed_dim
            )));
        }
        let patchifier = Patchifier::new(self.image_size, self.patch_size, self.channels)?;
        if patchifier.num_patches() + 1 > self.vision.max_seq_len {
            return Err(Error::config(format!(
                "{} patches plus [CLS] exceed vision max_seq_len {}",
                patchifier.num_patches(),
                self.vision.max_seq_len
            )));
        }
        Ok(())
    }
}

/// Language and vision towers with their output projections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualEncoderBundle {
    pub language: Encoder,
    pub vision: Encoder,
    /// `d_NLP × d_joint`.
    pub text_out_proj: Mat,
    /// `d_CV × d_joint`.
    pub vision_out_proj: Mat,
    pub tokenizer: Tokenizer,
    pub patchifier: Patchifier,
    /// Multiplier on cosine similarities; never trained.
    pub logit_scale: f64,
    frozen: bool,
}

/// A bundle's weights bound as leaves on a tape.
#[derive(Clone, Debug)]
pub struct BundleVars {
    pub language: Tower<Var>,
    pub vision: Tower<Var>,
    pub text_out_proj: Var,
    pub vision_out_proj: Var,
}

impl BundleVars {
    /// Every leaf paired with the canonical order of [`DualEncoderBundle::tensors`].
    pub fn leaves(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.language.tensors().into_iter().copied().collect();
        v.extend(self.vision.tensors().into_iter().copied());
        v.push(self.text_out_proj);
        v.push(self.vision_out_proj);
        v
    }
}

/// Randomly initialized, not yet frozen toy backbone.
pub fn build_toy_bundle(config: &ToyBackboneConfig, seed: u64) -> Result<DualEncoderBundle> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokenizer = Tokenizer::new(&config.vocabulary, config.oov_buckets);
    let patchifier = Patchifier::new(config.image_size, config.patch_size, config.channels)?;
    let lang = &config.language;
    let vis = &config.vision;
    let language = Encoder {
        spec: lang.clone(),
        weights: init_tower(
            &mut rng,
            false,
            tokenizer.vocab_size(),
            lang.embed_dim,
            lang.num_layers,
            lang.max_seq_len,
        ),
    };
    let vision = Encoder {
        spec: vis.clone(),
        weights: init_tower(
            &mut rng,
            true,
            patchifier.patch_dim(),
            vis.embed_dim,
            vis.num_layers,
            vis.max_seq_len,
        ),
    };
    let proj = |rng: &mut ChaCha8Rng, rows: usize| {
        use rand_distr::{Distribution, Normal};
        let dist = Normal::new(0.0, 1.0 / (rows as f64).sqrt()).expect("finite std");
        Mat::from_shape_fn((rows, config.joint_dim), |_| dist.sample(rng))
    };
    let text_out_proj = proj(&mut rng, lang.embed_dim);
    let vision_out_proj = proj(&mut rng, vis.embed_dim);
    Ok(DualEncoderBundle {
        language,
        vision,
        text_out_proj,
        vision_out_proj,
        tokenizer,
        patchifier,
        logit_scale: 1.0,
        frozen: false,
    })
}

impl DualEncoderBundle {
    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn num_layers(&self) -> usize {
        self.language.spec.num_layers
    }

    pub fn language_dim(&self) -> usize {
        self.language.spec.embed_dim
    }

    pub fn vision_dim(&self) -> usize {
        self.vision.spec.embed_dim
    }

    pub fn joint_dim(&self) -> usize {
        self.text_out_proj.ncols()
    }

    /// All weight tensors in canonical order.
    pub fn tensors(&self) -> Vec<&Mat> {
        let mut v = self.language.weights.tensors();
        v.extend(self.vision.weights.tensors());
        v.push(&self.text_out_proj);
        v.push(&self.vision_out_proj);
        v
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut v = self.language.weights.tensors_mut();
        v.extend(self.vision.weights.tensors_mut());
        v.push(&mut self.text_out_proj);
        v.push(&mut self.vision_out_proj);
        v
    }

    /// SHA-256 over the exact bits of every weight and the logit scale.
    pub fn weights_checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for t in self.tensors() {
            hasher.update((t.nrows() as u64).to_le_bytes());
            hasher.update((t.ncols() as u64).to_le_bytes());
            for v in t.iter() {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hasher.update(self.logit_scale.to_bits().to_le_bytes());
        let mut out = String::with_capacity(64);
        for b in hasher.finalize() {
            let _ = write!(out, "{b:02x}");
        }
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> BundleVars {
        BundleVars {
            language: self.language.weights.map(|m| tape.leaf(m.clone())),
            vision: self.vision.weights.map(|m| tape.leaf(m.clone())),
            text_out_proj: tape.leaf(self.text_out_proj.clone()),
            vision_out_proj: tape.leaf(self.vision_out_proj.clone()),
        }
    }

    pub fn patchify(&self, image: &Image) -> Result<Array2<f64>> {
        self.patchifier.patchify(image)
    }

    /// Joint-space text embedding (1 × d_joint) read at the final real token.
    pub fn text_forward(
        &self,
        tape: &mut Tape,
        vars: &BundleVars,
        tokens: &[usize],
        hooks: &[LayerForwardHook<Var>],
    ) -> Result<(Var, ForwardTrace)> {
        if tokens.is_empty() {
            return Err(Error::data("empty token sequence"));
        }
        let vocab = self.tokenizer.vocab_size();
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::data(format!("token id {bad} outside vocabulary of {vocab}")));
        }
        let Stem::Tokens { table } = vars.language.stem else {
            return Err(Error::Invariant("language tower has a patch stem".into()));
        };
        let spec = &self.language.spec;
        if tokens.len() > spec.max_seq_len {
            return Err(Error::Capacity {
                needed: tokens.len(),
                max: spec.max_seq_len,
            });
        }
        let embedded = tape.gather_rows(table, tokens);
        let pos = tape.slice_rows(vars.language.positional, 0, tokens.len());
        let x = tape.add(embedded, pos);
        let (hidden, trace) = run_tower(tape, &vars.language, spec, x, hooks)?;
        let eos = tape.slice_rows(hidden, tokens.len() - 1, 1);
        let out = readout(tape, &vars.language, eos, vars.text_out_proj);
        Ok((out, trace))
    }

    /// Hidden states entering each language block for an unhooked forward
    /// of `tokens`; entry `i` is the input of layer `i + 1`.
    pub fn text_layer_inputs(&self, tokens: &[usize]) -> Result<Vec<Array2<f64>>> {
        let spec = &self.language.spec;
        if tokens.is_empty() || tokens.len() > spec.max_seq_len {
            return Err(Error::Capacity {
                needed: tokens.len(),
                max: spec.max_seq_len,
            });
        }
        let Stem::Tokens { table } = &self.language.weights.stem else {
            return Err(Error::Invariant("language tower has a patch stem".into()));
        };
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let embedded = Array2::from_shape_fn((tokens.len(), spec.embed_dim), |(r, c)| {
            table[[tokens[r], c]]
        });
        let pos = self
            .language
            .weights
            .positional
            .slice(ndarray::s![..tokens.len(), ..])
            .to_owned();
        let mut x = tape.leaf(embedded + pos);
        let mut out = Vec::with_capacity(spec.num_layers);
        for block in &vars.language.blocks {
            out.push(tape.value(x).clone());
            x = block_forward(&mut tape, block, x, spec.num_heads);
        }
        Ok(out)
    }

    /// Joint-space image embedding (1 × d_joint) read at the [CLS] position.
    pub fn image_forward(
        &self,
        tape: &mut Tape,
        vars: &BundleVars,
        patches: &Array2<f64>,
        hooks: &[LayerForwardHook<Var>],
    ) -> Result<(Var, ForwardTrace)> {
        let Stem::Patches {
            proj,
            bias,
            class_token,
        } = vars.vision.stem
        else {
            return Err(Error::Invariant("vision tower has a token stem".into()));
        };
        if patches.ncols() != self.patchifier.patch_dim() || patches.nrows() == 0 {
            return Err(Error::data(format!(
                "patch matrix {:?} does not match patch_dim {}",
                patches.dim(),
                self.patchifier.patch_dim()
            )));
        }
        let spec = &self.vision.spec;
        let n = patches.nrows() + 1;
        if n > spec.max_seq_len {
            return Err(Error::Capacity {
                needed: n,
                max: spec.max_seq_len,
            });
        }
        let p = tape.leaf_view(patches.view());
        let emb = tape.matmul(p, proj);
        let emb = tape.add_row(emb, bias);
        let seq = tape.concat_rows(&[class_token, emb]);
        let pos = tape.slice_rows(vars.vision.positional, 0, n);
        let x = tape.add(seq, pos);
        let (hidden, trace) = run_tower(tape, &vars.vision, spec, x, hooks)?;
        let cls = tape.slice_rows(hidden, 0, 1);
        let out = readout(tape, &vars.vision, cls, vars.vision_out_proj);
        Ok((out, trace))
    }

    pub fn encode_text(&self, tokens: &[usize], hooks: &[LayerForwardHook]) -> Result<Array1<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let hooks = lift_hooks(&mut tape, hooks);
        let (out, _) = self.text_forward(&mut tape, &vars, tokens, &hooks)?;
        Ok(tape.value(out).row(0).to_owned())
    }

    pub fn encode_image(
        &self,
        patches: &Array2<f64>,
        hooks: &[LayerForwardHook],
    ) -> Result<Array1<f64>> {
        self.encode_image_traced(patches, hooks).map(|(v, _)| v)
    }

    pub fn encode_image_traced(
        &self,
        patches: &Array2<f64>,
        hooks: &[LayerForwardHook],
    ) -> Result<(Array1<f64>, ForwardTrace)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let hooks = lift_hooks(&mut tape, hooks);
        let (out, trace) = self.image_forward(&mut tape, &vars, patches, &hooks)?;
        Ok((tape.value(out).row(0).to_owned(), trace))
    }

    /// Total number of frozen scalars.
    pub fn frozen_parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Loads a bundle written by [`save`](Self::save); the result is frozen.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut bundle: Self = serde_json::from_str(&text)?;
        bundle.language.spec.validate()?;
        bundle.vision.spec.validate()?;
        bundle.freeze();
        Ok(bundle)
    }
}

/// Pushes plain hooks onto a tape as constant leaves.
pub fn lift_hooks(tape: &mut Tape, hooks: &[LayerForwardHook]) -> Vec<LayerForwardHook<Var>> {
    hooks
        .iter()
        .map(|h| LayerForwardHook {
            layer_index: h.layer_index,
            injected_tokens: h.injected_tokens.as_ref().map(|m| tape.leaf(m.clone())),
            injection_mode: h.injection_mode,
            discard_prompt_outputs: h.discard_prompt_outputs,
        })
        .collect()
}

fn readout(tape: &mut Tape, tower: &Tower<Var>, row: Var, proj: Var) -> Var {
    let normed = tape.layer_norm(row, tower.final_ln.gamma, tower.final_ln.beta);
    tape.matmul(normed, proj)
}

fn validate_hooks(tape: &Tape, spec: &EncoderSpec, hooks: &[LayerForwardHook<Var>]) -> Result<()> {
    let mut seen = vec![false; spec.num_layers + 1];
    for h in hooks {
        if h.layer_index == 0 || h.layer_index > spec.num_layers {
            return Err(Error::config(format!(
                "hook layer {} outside 1..={}",
                h.layer_index, spec.num_layers
            )));
        }
        if std::mem::replace(&mut seen[h.layer_index], true) {
            return Err(Error::config(format!("two hooks for layer {}", h.layer_index)));
        }
        if let Some(t) = h.injected_tokens {
            let width = tape.value(t).ncols();
            if width != spec.embed_dim {
                return Err(Error::config(format!(
                    "injected tokens of width {width} into a {:?} tower of width {}",
                    spec.modality, spec.embed_dim
                )));
            }
        }
    }
    Ok(())
}

/// Runs every block, splicing prompt blocks in and out per the hooks.
/// Returns the hidden states of the real tokens only.
fn run_tower(
    tape: &mut Tape,
    tower: &Tower<Var>,
    spec: &EncoderSpec,
    mut real: Var,
    hooks: &[LayerForwardHook<Var>],
) -> Result<(Var, ForwardTrace)> {
    validate_hooks(tape, spec, hooks)?;
    let n_real = tape.value(real).nrows();
    let mut carried: Option<Var> = None;
    let mut mode = InjectionMode::Append;
    let mut trace = ForwardTrace::default();

    for (i, block) in tower.blocks.iter().enumerate() {
        let hook = hooks.iter().find(|h| h.layer_index == i + 1);
        if let Some(h) = hook {
            mode = h.injection_mode;
        }
        let mut parts = Vec::with_capacity(2);
        if let Some(t) = hook.and_then(|h| h.injected_tokens) {
            parts.push(t);
        }
        if let Some(c) = carried {
            parts.push(c);
        }
        let prompt = (!parts.is_empty()).then(|| tape.concat_rows(&parts));
        let n_prompt = prompt.map_or(0, |p| tape.value(p).nrows());
        trace.prompt_tokens_per_layer.push(n_prompt);
        if n_real + n_prompt > spec.max_seq_len {
            return Err(Error::Capacity {
                needed: n_real + n_prompt,
                max: spec.max_seq_len,
            });
        }

        let Some(prompt) = prompt else {
            real = block_forward(tape, block, real, spec.num_heads);
            carried = None;
            continue;
        };
        let (seq, prompt_start) = match mode {
            InjectionMode::Prepend => {
                let head = tape.slice_rows(real, 0, 1);
                let tail = tape.slice_rows(real, 1, n_real - 1);
                (tape.concat_rows(&[head, prompt, tail]), 1)
            }
            InjectionMode::Append => (tape.concat_rows(&[real, prompt]), n_real),
        };
        let out = block_forward(tape, block, seq, spec.num_heads);
        let prompt_out = tape.slice_rows(out, prompt_start, n_prompt);
        real = match mode {
            InjectionMode::Prepend => {
                let head = tape.slice_rows(out, 0, 1);
                let tail = tape.slice_rows(out, 1 + n_prompt, n_real - 1);
                tape.concat_rows(&[head, tail])
            }
            InjectionMode::Append => tape.slice_rows(out, 0, n_real),
        };
        let discard = hook.is_some_and(|h| h.discard_prompt_outputs);
        carried = (!discard).then_some(prompt_out);
    }
    trace.pooled_prompt_tokens = carried.map_or(0, |c| tape.value(c).nrows());
    Ok((real, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config() -> ToyBackboneConfig {
        ToyBackboneConfig {
            language: EncoderSpec {
                num_layers: 2,
                embed_dim: 16,
                num_heads: 2,
                max_seq_len: 16,
                modality: Modality::Language,
            },
            vision: EncoderSpec {
                num_layers: 2,
                embed_dim: 24,
                num_heads: 2,
                max_seq_len: 24,
                modality: Modality::Vision,
            },
            joint_dim: 8,
            image_size: 8,
            patch_size: 4,
            channels: 1,
            vocabulary: ["a", "photo", "of", "red", "blue"].map(String::from).to_vec(),
            oov_buckets: 2,
        }
    }

    #[test]
    fn toy_bundle_shapes() {
        let b = build_toy_bundle(&small_config(), 7).unwrap();
        assert_eq!(b.language.weights.blocks.len(), 2);
        assert_eq!(b.language_dim(), 16);
        assert_eq!(b.vision_dim(), 24);
        assert_eq!(b.joint_dim(), 8);
        assert!(!b.is_frozen());
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = build_toy_bundle(&small_config(), 7).unwrap();
        let b = build_toy_bundle(&small_config(), 7).unwrap();
        let c = build_toy_bundle(&small_config(), 8).unwrap();
        assert_eq!(a.weights_checksum(), b.weights_checksum());
        assert_ne!(a.weights_checksum(), c.weights_checksum());
    }

    #[test]
    fn vision_must_be_wider_than_language() {
        let mut cfg = small_config();
        cfg.language.embed_dim = 24;
        cfg.vision.embed_dim = 16;
        assert!(build_toy_bundle(&cfg, 0).unwrap_err().is_config());
    }

    #[test]
    fn joint_dim_must_fit() {
        let mut cfg = small_config();
        cfg.joint_dim = 32;
        assert!(build_toy_bundle(&cfg, 0).is_err());
        cfg.joint_dim = 8;
        cfg.vision.num_heads = 5;
        assert!(build_toy_bundle(&cfg, 0).is_err());
    }

    #[test]
    fn text_overflow_is_capacity_error() {
        let b = build_toy_bundle(&small_config(), 1).unwrap();
        let tokens = vec![3; 10];
        let hooks = vec![LayerForwardHook {
            layer_index: 1,
            injected_tokens: Some(Mat::zeros((7, 16))),
            injection_mode: InjectionMode::Prepend,
            discard_prompt_outputs: true,
        }];
        let err = b.encode_text(&tokens, &hooks).unwrap_err();
        assert!(matches!(err, Error::Capacity { needed: 17, max: 16 }));
    }

    #[test]
    fn wrong_width_hook_rejected() {
        let b = build_toy_bundle(&small_config(), 1).unwrap();
        let hooks = vec![LayerForwardHook {
            layer_index: 1,
            injected_tokens: Some(Mat::zeros((1, 24))),
            injection_mode: InjectionMode::Prepend,
            discard_prompt_outputs: true,
        }];
        assert!(b.encode_text(&[1, 3, 2], &hooks).is_err());
    }

    #[test]
    fn accumulation_trace() {
        let b = build_toy_bundle(&small_config(), 1).unwrap();
        let patches = Array2::zeros((4, 16));
        let hooks: Vec<_> = (1..=2)
            .map(|i| LayerForwardHook {
                layer_index: i,
                injected_tokens: Some(Mat::zeros((3, 24))),
                injection_mode: InjectionMode::Append,
                discard_prompt_outputs: false,
            })
            .collect();
        let (_, trace) = b.encode_image_traced(&patches, &hooks).unwrap();
        assert_eq!(trace.prompt_tokens_per_layer, vec![3, 6]);
        assert_eq!(trace.pooled_prompt_tokens, 6);
    }

    #[test]
    fn save_and_load_freezes() {
        let b = build_toy_bundle(&small_config(), 3).unwrap();
        let dir = std::env::temp_dir().join(format!("fscil-bundle-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bundle.json");
        b.save(&path).unwrap();
        let loaded = DualEncoderBundle::load(&path).unwrap();
        assert!(loaded.is_frozen());
        assert_eq!(loaded.weights_checksum(), b.weights_checksum());
        std::fs::remove_dir_all(dir).ok();
    }
}
