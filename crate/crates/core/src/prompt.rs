//! Learnable prompt state and its compilation into per-layer hooks.
//!
//! Language prompts follow a replacement policy: every layer up to the depth
//! receives its own fresh tokens and the previous prompt outputs are dropped.
//! Vision prompts are linear projections of the language prompts and are
//! accumulated: fresh projected tokens are stacked in front of the prompt
//! outputs carried from earlier layers, so the block grows by one prompt
//! length per layer.

use std::io::{BufRead, Write};

use ndarray::{s, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::{DualEncoderBundle, InjectionMode, LayerForwardHook};
use crate::error::{Error, Result};
use crate::tape::{Gradients, Mat, Tape, Var};

const PROMPT_INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Deep,
    Shallow,
}

/// Which vision-side prompt propagation a plan uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanAblation {
    Full,
    NoAccumulation,
    NoVisionPrompts,
}

/// Shared language prompts (`depth × length × d_NLP`) and the single
/// language-to-vision projection (`d_NLP × d_CV`).
#[derive(Clone, Debug, PartialEq)]
pub struct GPromptBank {
    prompts: Array3<f64>,
    projection: Mat,
    mode: PromptMode,
    seed: u64,
    version: u64,
}

#[derive(Serialize, Deserialize)]
struct BankHeader {
    #[serde(rename = "L")]
    length: usize,
    #[serde(rename = "D")]
    depth: usize,
    d_nlp: usize,
    d_cv: usize,
    mode: PromptMode,
    seed: u64,
}

impl GPromptBank {
    /// Gaussian init: prompts with std 0.02, projection with std `1/sqrt(d_NLP)`.
    pub fn init(
        length: usize,
        depth: usize,
        language_dim: usize,
        vision_dim: usize,
        num_layers: usize,
        seed: u64,
    ) -> Result<Self> {
        if length == 0 {
            return Err(Error::config("prompt length must be at least 1"));
        }
        if depth == 0 || depth > num_layers {
            return Err(Error::config(format!(
                "prompt depth {depth} outside 1..={num_layers}"
            )));
        }
        if language_dim == 0 || vision_dim == 0 {
            return Err(Error::config("prompt dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Normal::new(0.0, PROMPT_INIT_STD).expect("finite std");
        let prompts = Array3::from_shape_fn((depth, length, language_dim), |_| p.sample(&mut rng));
        let q = Normal::new(0.0, 1.0 / (language_dim as f64).sqrt()).expect("finite std");
        let projection = Mat::from_shape_fn((language_dim, vision_dim), |_| q.sample(&mut rng));
        Ok(Self {
            prompts,
            projection,
            mode: if depth == 1 {
                PromptMode::Shallow
            } else {
                PromptMode::Deep
            },
            seed,
            version: 0,
        })
    }

    /// Like [`init`](Self::init), but language prompt `l` of layer `i` starts
    /// as the hidden state the frozen text tower computes at token `l` of
    /// `prefix` entering layer `i`. Positions past the prefix keep the
    /// Gaussian draw.
    pub fn init_from_text(
        bundle: &DualEncoderBundle,
        prefix: &str,
        length: usize,
        depth: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut bank = Self::init(
            length,
            depth,
            bundle.language_dim(),
            bundle.vision_dim(),
            bundle.num_layers(),
            seed,
        )?;
        let tokens = bundle.tokenizer.encode(prefix)?;
        let words = tokens.len() - 2;
        let states = bundle.text_layer_inputs(&tokens)?;
        for (i, state) in states.iter().take(depth).enumerate() {
            for l in 0..length.min(words) {
                bank.prompts
                    .slice_mut(s![i, l, ..])
                    .assign(&state.row(1 + l));
            }
        }
        Ok(bank)
    }

    pub fn from_parts(prompts: Array3<f64>, projection: Mat) -> Result<Self> {
        let (depth, length, d) = prompts.dim();
        if depth == 0 || length == 0 || d == 0 || projection.nrows() != d {
            return Err(Error::config(format!(
                "prompt tensor {:?} incompatible with projection {:?}",
                prompts.dim(),
                projection.dim()
            )));
        }
        Ok(Self {
            prompts,
            projection,
            mode: if depth == 1 {
                PromptMode::Shallow
            } else {
                PromptMode::Deep
            },
            seed: 0,
            version: 0,
        })
    }

    pub fn length(&self) -> usize {
        self.prompts.dim().1
    }

    pub fn depth(&self) -> usize {
        self.prompts.dim().0
    }

    pub fn language_dim(&self) -> usize {
        self.prompts.dim().2
    }

    pub fn vision_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn mode(&self) -> PromptMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Bumped on every parameter update; prototype caches key on it.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn prompts(&self) -> &Array3<f64> {
        &self.prompts
    }

    pub fn projection(&self) -> &Mat {
        &self.projection
    }

    pub fn learnable_count(&self) -> usize {
        self.prompts.len() + self.projection.len()
    }

    /// Mutable access to both tensors; bumps the version.
    pub fn params_mut(&mut self) -> (&mut Array3<f64>, &mut Mat) {
        self.version += 1;
        (&mut self.prompts, &mut self.projection)
    }

    /// Language prompts of a 1-based layer, `L × d_NLP`.
    pub fn layer_prompts(&self, layer: usize) -> Result<Mat> {
        self.check_layer(layer)?;
        Ok(self.prompts.slice(s![layer - 1, .., ..]).to_owned())
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer == 0 || layer > self.depth() {
            return Err(Error::config(format!(
                "layer {layer} outside prompt depth 1..={}",
                self.depth()
            )));
        }
        Ok(())
    }

    /// Vision prompts of a 1-based layer: its language prompts times the
    /// shared projection, `L × d_CV`.
    pub fn project_prompts(&self, layer: usize) -> Result<Mat> {
        Ok(self.layer_prompts(layer)?.dot(&self.projection))
    }

    /// Binds the learnable tensors as tape leaves.
    pub fn bind(&self, tape: &mut Tape) -> BankVars {
        let prompts = (0..self.depth())
            .map(|d| tape.leaf(self.prompts.slice(s![d, .., ..]).to_owned()))
            .collect();
        BankVars {
            prompts,
            projection: tape.leaf(self.projection.clone()),
        }
    }

    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for v in self.prompts.iter().chain(self.projection.iter()) {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    /// One compact JSON header line followed by little-endian `f32`
    /// payloads, prompts then projection, both row-major.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = BankHeader {
            length: self.length(),
            depth: self.depth(),
            d_nlp: self.language_dim(),
            d_cv: self.vision_dim(),
            mode: self.mode,
            seed: self.seed,
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for v in self.prompts.iter().chain(self.projection.iter()) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl BufRead) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: BankHeader = serde_json::from_str(line.trim_end())?;
        let mut read_f32s = |n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect())
        };
        let prompts = read_f32s(header.depth * header.length * header.d_nlp)?;
        let projection = read_f32s(header.d_nlp * header.d_cv)?;
        let prompts = Array3::from_shape_vec((header.depth, header.length, header.d_nlp), prompts)
            .map_err(|e| Error::data(e.to_string()))?;
        let projection = Mat::from_shape_vec((header.d_nlp, header.d_cv), projection)
            .map_err(|e| Error::data(e.to_string()))?;
        let mut bank = Self::from_parts(prompts, projection)?;
        bank.mode = header.mode;
        bank.seed = header.seed;
        Ok(bank)
    }
}

/// A bank's tensors bound on a tape.
#[derive(Clone, Debug)]
pub struct BankVars {
    pub prompts: Vec<Var>,
    pub projection: Var,
}

impl BankVars {
    pub fn gradients(&self, tape: &Tape, grads: &Gradients) -> PromptGradients {
        let first = tape.value(self.prompts[0]);
        let mut prompts = Array3::zeros((self.prompts.len(), first.nrows(), first.ncols()));
        for (d, &v) in self.prompts.iter().enumerate() {
            if let Some(g) = grads.get(v) {
                prompts.slice_mut(s![d, .., ..]).assign(g);
            }
        }
        PromptGradients {
            prompts,
            projection: grads.get_or_zeros(tape, self.projection),
        }
    }
}

/// Loss gradients with respect to the prompts and the projection.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptGradients {
    pub prompts: Array3<f64>,
    pub projection: Mat,
}

impl PromptGradients {
    pub fn zeros_like(bank: &GPromptBank) -> Self {
        Self {
            prompts: Array3::zeros(bank.prompts.raw_dim()),
            projection: Mat::zeros(bank.projection.raw_dim()),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.prompts.iter().chain(self.projection.iter())
    }
}

/// Per-layer hooks for both towers, compiled from a bank snapshot.
///
/// The vision hooks inject `L` fresh projected tokens per layer; under
/// [`PlanAblation::Full`] they keep prompt outputs, so layer `i` sees
/// `i * L` prompt tokens in total.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptPlan<T = Mat> {
    pub language_hooks: Vec<LayerForwardHook<T>>,
    pub vision_hooks: Vec<LayerForwardHook<T>>,
    pub ablation: PlanAblation,
}

/// Builds hooks for `depth` layers from per-layer token sources.
pub fn compile_hooks<T>(
    depth: usize,
    ablation: PlanAblation,
    mut language_tokens: impl FnMut(usize) -> T,
    mut vision_tokens: impl FnMut(usize) -> T,
) -> PromptPlan<T> {
    let language_hooks = (1..=depth)
        .map(|i| LayerForwardHook {
            layer_index: i,
            injected_tokens: Some(language_tokens(i)),
            injection_mode: InjectionMode::Prepend,
            discard_prompt_outputs: i < depth,
        })
        .collect();
    let vision_hooks = match ablation {
        PlanAblation::NoVisionPrompts => Vec::new(),
        PlanAblation::Full | PlanAblation::NoAccumulation => (1..=depth)
            .map(|i| LayerForwardHook {
                layer_index: i,
                injected_tokens: Some(vision_tokens(i)),
                injection_mode: InjectionMode::Append,
                discard_prompt_outputs: ablation == PlanAblation::NoAccumulation && i < depth,
            })
            .collect(),
    };
    PromptPlan {
        language_hooks,
        vision_hooks,
        ablation,
    }
}

/// Plain-matrix plan for evaluation.
pub fn compile_plan(bank: &GPromptBank, ablation: PlanAblation) -> PromptPlan {
    compile_hooks(
        bank.depth(),
        ablation,
        |i| bank.layer_prompts(i).expect("layer within depth"),
        |i| bank.project_prompts(i).expect("layer within depth"),
    )
}

/// Differentiable plan: projections are recorded on the tape.
pub fn compile_plan_on_tape(
    tape: &mut Tape,
    vars: &BankVars,
    ablation: PlanAblation,
) -> PromptPlan<Var> {
    let depth = vars.prompts.len();
    let mut vision = Vec::with_capacity(depth);
    if ablation != PlanAblation::NoVisionPrompts {
        for &p in &vars.prompts {
            vision.push(tape.matmul(p, vars.projection));
        }
    }
    compile_hooks(
        depth,
        ablation,
        |i| vars.prompts[i - 1],
        |i| vision[i - 1],
    )
}
