//! Per-session optimization of the prompt bank.
//!
//! Each step encodes the batch images through the hooked vision tower and the
//! prototypes of every registered class through the hooked language tower,
//! takes cross-entropy over cosine logits, scales the prompt and projection
//! gradients by the session's class-count factor and hands them to SGD with
//! momentum under a warmup + cosine learning-rate schedule.

use std::f64::consts::PI;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{cosine_logits, ClassRegistry};
use crate::encoder::DualEncoderBundle;
use crate::error::{Error, Result};
use crate::prompt::{compile_plan_on_tape, GPromptBank, PlanAblation, PromptGradients};
use crate::protocol::Example;
use crate::tape::{Mat, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub warmup_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.00325,
            weight_decay: 1e-5,
            momentum: 0.9,
            warmup_fraction: 0.1,
            epochs: 3,
            batch_size: 32,
        }
    }
}

impl OptimizerConfig {
    /// Few-shot session defaults: batch 4, 5 epochs.
    pub fn incremental() -> Self {
        Self {
            epochs: 5,
            batch_size: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::config("warmup_fraction must be in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::config(
                "momentum must be in [0, 1) and weight_decay nonnegative",
            ));
        }
        Ok(())
    }

    /// Learning rate at 0-based `step` of `total`: linear warmup over the
    /// first `ceil(warmup_fraction * total)` steps reaching the peak, then
    /// cosine decay towards zero.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let warmup = (self.warmup_fraction * total as f64).ceil() as usize;
        if step < warmup {
            return self.learning_rate * (step + 1) as f64 / warmup as f64;
        }
        let decay = total.saturating_sub(warmup).max(1);
        let progress = (step - warmup) as f64 / decay as f64;
        self.learning_rate * 0.5 * (1.0 + (PI * progress).cos())
    }
}

/// Class counts per session for the gradient scaling factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerState {
    /// `|C_t|`, index 0 is the base session.
    pub class_counts: Vec<usize>,
    pub enabled: bool,
    /// Lower bound applied to the factor; 0 disables it.
    #[serde(default)]
    pub alpha_floor: f64,
}

impl RegularizerState {
    pub fn new(enabled: bool) -> Self {
        Self {
            class_counts: Vec::new(),
            enabled,
            alpha_floor: 0.0,
        }
    }

    /// Factor actually applied in session `t`: 1 for the base session or
    /// when disabled.
    pub fn effective_alpha(&self, t: usize) -> Result<f64> {
        if !self.enabled || t == 0 {
            return Ok(1.0);
        }
        Ok(alpha(t, self)?.max(self.alpha_floor).min(1.0))
    }
}

/// `|C_t| / sum_{tau <= t} |C_tau|`, defined for incremental sessions `t >= 1`.
pub fn alpha(t: usize, state: &RegularizerState) -> Result<f64> {
    if t == 0 {
        return Err(Error::protocol(
            "the scaling factor is defined for incremental sessions only",
        ));
    }
    let counts = state.class_counts.get(..=t).ok_or_else(|| {
        Error::protocol(format!(
            "class counts known for {} sessions, needed {}",
            state.class_counts.len(),
            t + 1
        ))
    })?;
    if counts.contains(&0) {
        return Err(Error::protocol("session class counts must be positive"));
    }
    let seen: usize = counts.iter().sum();
    Ok(counts[t] as f64 / seen as f64)
}

/// Multiplies every prompt and projection gradient entry by `alpha`.
pub fn scale_prompt_gradients(grads: &mut PromptGradients, alpha: f64) {
    if alpha == 1.0 {
        return;
    }
    grads.prompts *= alpha;
    grads.projection *= alpha;
}

/// Experiment variants: the full method and its ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    NoAccumulation,
    NoVisionPrompts,
    NoRegularization,
    ZeroShot,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::NoAccumulation,
        Ablation::NoVisionPrompts,
        Ablation::NoRegularization,
        Ablation::ZeroShot,
    ];

    pub fn plan(self) -> PlanAblation {
        match self {
            Ablation::NoAccumulation => PlanAblation::NoAccumulation,
            Ablation::NoVisionPrompts => PlanAblation::NoVisionPrompts,
            _ => PlanAblation::Full,
        }
    }

    pub fn regularized(self) -> bool {
        self != Ablation::NoRegularization
    }

    pub fn trains(self) -> bool {
        self != Ablation::ZeroShot
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoAccumulation => "no_accumulation",
            Ablation::NoVisionPrompts => "no_vision_prompts",
            Ablation::NoRegularization => "no_regularization",
            Ablation::ZeroShot => "zero_shot",
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub session: usize,
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SessionLog {
    /// Mean batch loss of every epoch.
    pub epoch_losses: Vec<f64>,
    pub records: Vec<TrainRecord>,
}

/// Loss of a batch and its gradients with respect to the bank.
pub fn loss_and_gradients(
    bundle: &DualEncoderBundle,
    bank: &GPromptBank,
    registry: &ClassRegistry,
    batch: &[&Example],
    plan: PlanAblation,
    logit_scale: f64,
) -> Result<(f64, PromptGradients)> {
    if registry.is_empty() || batch.is_empty() {
        return Err(Error::protocol("loss needs registered classes and a nonempty batch"));
    }
    let targets = batch
        .iter()
        .map(|ex| {
            registry.index_of(ex.class_id).ok_or_else(|| {
                Error::protocol(format!("class {} is not registered", ex.class_id))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut tape = Tape::new();
    let vars = bundle.bind(&mut tape);
    let bank_vars = bank.bind(&mut tape);
    let hooks = compile_plan_on_tape(&mut tape, &bank_vars, plan);

    let mut protos = Vec::with_capacity(registry.len());
    for entry in registry.entries() {
        let tokens = bundle.tokenizer.encode(&entry.class_name)?;
        let (p, _) = bundle.text_forward(&mut tape, &vars, &tokens, &hooks.language_hooks)?;
        protos.push(p);
    }
    let mut images = Vec::with_capacity(batch.len());
    for ex in batch {
        let patches = bundle.patchify(&ex.image)?;
        let (e, _) = bundle.image_forward(&mut tape, &vars, &patches, &hooks.vision_hooks)?;
        images.push(e);
    }
    let protos = tape.concat_rows(&protos);
    let images = tape.concat_rows(&images);
    let logits = cosine_logits(&mut tape, images, protos, logit_scale);
    let loss = tape.cross_entropy(logits, &targets);
    let grads = tape.backward(loss);
    Ok((tape.scalar(loss), bank_vars.gradients(&tape, &grads)))
}

/// SGD with momentum and decoupled-from-scaling L2 weight decay.
#[derive(Clone, Debug)]
pub struct SgdMomentum {
    prompts: Array3<f64>,
    projection: Mat,
}

impl SgdMomentum {
    pub fn new(bank: &GPromptBank) -> Self {
        let z = PromptGradients::zeros_like(bank);
        Self {
            prompts: z.prompts,
            projection: z.projection,
        }
    }

    /// `buf = momentum * buf + (g + wd * theta); theta -= lr * buf`.
    pub fn step(
        &mut self,
        bank: &mut GPromptBank,
        grads: &PromptGradients,
        lr: f64,
        cfg: &OptimizerConfig,
    ) {
        let (prompts, projection) = bank.params_mut();
        let update = |theta: &mut f64, g: f64, buf: &mut f64| {
            let d = g + cfg.weight_decay * *theta;
            *buf = cfg.momentum * *buf + d;
            *theta -= lr * *buf;
        };
        ndarray::Zip::from(prompts)
            .and(&grads.prompts)
            .and(&mut self.prompts)
            .for_each(|t, &g, b| update(t, g, b));
        ndarray::Zip::from(projection)
            .and(&grads.projection)
            .and(&mut self.projection)
            .for_each(|t, &g, b| update(t, g, b));
    }
}

/// Everything `train_session` needs besides the mutable bank.
pub struct SessionContext<'a> {
    pub bundle: &'a DualEncoderBundle,
    pub registry: &'a ClassRegistry,
    pub session: usize,
    pub optimizer: &'a OptimizerConfig,
    pub regularizer: &'a RegularizerState,
    pub ablation: Ablation,
    pub logit_scale: f64,
    pub seed: u64,
}

/// Receives `(raw, optimizer_visible)` gradients of every step.
pub type GradientObserver<'a> = dyn FnMut(&PromptGradients, &PromptGradients) + 'a;

/// Trains the bank on one session's examples. Optimizer state starts fresh.
pub fn train_session(
    ctx: &SessionContext<'_>,
    bank: &mut GPromptBank,
    examples: &[Example],
    mut observer: Option<&mut GradientObserver<'_>>,
) -> Result<SessionLog> {
    if !ctx.bundle.is_frozen() {
        return Err(Error::protocol("backbone must be frozen before prompt training"));
    }
    if examples.is_empty() {
        return Err(Error::protocol(format!("session {} has no training data", ctx.session)));
    }
    ctx.optimizer.validate()?;
    let alpha = if ctx.ablation.regularized() {
        ctx.regularizer.effective_alpha(ctx.session)?
    } else {
        1.0
    };
    let before = ctx.bundle.weights_checksum();

    let cfg = ctx.optimizer;
    let batches_per_epoch = examples.len().div_ceil(cfg.batch_size);
    let total = cfg.epochs * batches_per_epoch;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ (ctx.session as u64).wrapping_mul(0x9e37_79b9));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut optimizer = SgdMomentum::new(bank);
    let mut log = SessionLog::default();
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, raw) = loss_and_gradients(
                ctx.bundle,
                bank,
                ctx.registry,
                &batch,
                ctx.ablation.plan(),
                ctx.logit_scale,
            )?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at step {step}")));
            }
            let mut visible = raw.clone();
            scale_prompt_gradients(&mut visible, alpha);
            if let Some(obs) = observer.as_deref_mut() {
                obs(&raw, &visible);
            }
            let lr = cfg.lr_at(step, total);
            optimizer.step(bank, &visible, lr, cfg);
            log.records.push(TrainRecord {
                session: ctx.session,
                epoch,
                step,
                loss,
                lr,
                alpha,
            });
            epoch_loss += loss;
            step += 1;
        }
        log.epoch_losses.push(epoch_loss / batches_per_epoch as f64);
    }

    if ctx.bundle.weights_checksum() != before {
        return Err(Error::Invariant("frozen backbone weights changed during training".into()));
    }
    Ok(log)
}

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub coordinates: usize,
}

/// Denominator floor for relative errors of vanishing gradients.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

/// Compares analytic bank gradients to central differences on `sample_size`
/// random coordinates spread over the prompts and the projection.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_check(
    bundle: &DualEncoderBundle,
    bank: &GPromptBank,
    registry: &ClassRegistry,
    batch: &[&Example],
    plan: PlanAblation,
    logit_scale: f64,
    epsilon: f64,
    sample_size: usize,
    seed: u64,
) -> Result<GradientCheck> {
    let (_, analytic) = loss_and_gradients(bundle, bank, registry, batch, plan, logit_scale)?;
    let n_prompts = bank.prompts().len();
    let n_total = n_prompts + bank.projection().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..sample_size {
        // Alternate between the two tensors so both are always covered.
        let idx = if k % 2 == 0 {
            rng.random_range(0..n_prompts)
        } else {
            n_prompts + rng.random_range(0..n_total - n_prompts)
        };
        let eval = |delta: f64| -> Result<f64> {
            let mut b = bank.clone();
            let (p, q) = b.params_mut();
            if idx < n_prompts {
                p.as_slice_mut().expect("contiguous")[idx] += delta;
            } else {
                q.as_slice_mut().expect("contiguous")[idx - n_prompts] += delta;
            }
            Ok(loss_and_gradients(bundle, &b, registry, batch, plan, logit_scale)?.0)
        };
        let numeric = (eval(epsilon)? - eval(-epsilon)?) / (2.0 * epsilon);
        let a = if idx < n_prompts {
            analytic.prompts.as_slice().expect("contiguous")[idx]
        } else {
            analytic.projection.as_slice().expect("contiguous")[idx - n_prompts]
        };
        let err = relative_error(a, numeric);
        worst = worst.max(err);
    }
    Ok(GradientCheck {
        max_relative_error: worst,
        coordinates: sample_size,
    })
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(c: &[usize]) -> RegularizerState {
        RegularizerState {
            class_counts: c.to_vec(),
            enabled: true,
            alpha_floor: 0.0,
        }
    }

    #[test]
    fn alpha_hand_arithmetic() {
        let cub = counts(&[100, 10, 10]);
        assert!((alpha(1, &cub).unwrap() - 10.0 / 110.0).abs() < 1e-15);
        let mut cifar = vec![60];
        cifar.extend([5; 8]);
        assert!((alpha(8, &counts(&cifar)).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(alpha(1, &counts(&[7, 7])).unwrap(), 0.5);
    }

    #[test]
    fn alpha_errors() {
        assert!(alpha(0, &counts(&[5])).is_err());
        assert!(alpha(2, &counts(&[5, 1])).is_err());
        assert_eq!(counts(&[5]).effective_alpha(0).unwrap(), 1.0);
    }

    #[test]
    fn alpha_strictly_decreases() {
        let mut c = vec![60];
        c.extend([5; 8]);
        let s = counts(&c);
        let a: Vec<f64> = (1..=8).map(|t| alpha(t, &s).unwrap()).collect();
        assert!(a.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn alpha_floor_and_disable() {
        let mut s = counts(&[100, 1]);
        s.alpha_floor = 0.1;
        assert_eq!(s.effective_alpha(1).unwrap(), 0.1);
        s.enabled = false;
        assert_eq!(s.effective_alpha(1).unwrap(), 1.0);
    }

    #[test]
    fn gradient_scaling() {
        let mut g = PromptGradients {
            prompts: Array3::from_elem((1, 1, 2), 2.0),
            projection: Mat::from_elem((2, 3), -4.0),
        };
        let orig = g.clone();
        scale_prompt_gradients(&mut g, 1.0);
        assert_eq!(g, orig);
        scale_prompt_gradients(&mut g, 0.05);
        assert!((g.prompts[[0, 0, 0]] - 0.1).abs() < 1e-15);
        assert!((g.projection[[1, 2]] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn schedule_shape() {
        let cfg = OptimizerConfig {
            learning_rate: 0.5,
            warmup_fraction: 0.1,
            ..OptimizerConfig::default()
        };
        let total = 100;
        let lrs: Vec<f64> = (0..total).map(|s| cfg.lr_at(s, total)).collect();
        let max = lrs.iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, 0.5);
        assert!(lrs[..10].windows(2).all(|w| w[1] > w[0]));
        assert!(lrs[10..].windows(2).all(|w| w[1] < w[0]));
        assert_eq!(lrs[9], 0.5);
        assert!(lrs[99] < 1e-3);
        // Warmup slope is linear.
        assert!((lrs[4] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn schedule_without_warmup_starts_at_peak() {
        let cfg = OptimizerConfig {
            warmup_fraction: 0.0,
            ..OptimizerConfig::default()
        };
        assert_eq!(cfg.lr_at(0, 10), cfg.learning_rate);
        assert_eq!(cfg.lr_at(0, 1), cfg.learning_rate);
    }

    #[test]
    fn optimizer_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        let bad = OptimizerConfig {
            learning_rate: 0.0,
            ..OptimizerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig {
            epochs: 0,
            ..OptimizerConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sgd_momentum_matches_hand_computation() {
        let mut bank = GPromptBank::from_parts(
            Array3::from_elem((1, 1, 1), 1.0),
            Mat::from_elem((1, 1), 2.0),
        )
        .unwrap();
        let cfg = OptimizerConfig {
            weight_decay: 0.1,
            momentum: 0.5,
            ..OptimizerConfig::default()
        };
        let g = PromptGradients {
            prompts: Array3::from_elem((1, 1, 1), 1.0),
            projection: Mat::zeros((1, 1)),
        };
        let mut opt = SgdMomentum::new(&bank);
        opt.step(&mut bank, &g, 0.1, &cfg);
        // d = 1 + 0.1 * 1 = 1.1, buf = 1.1, theta = 1 - 0.11
        assert!((bank.prompts()[[0, 0, 0]] - 0.89).abs() < 1e-12);
        opt.step(&mut bank, &g, 0.1, &cfg);
        // d = 1 + 0.089, buf = 0.55 + 1.089 = 1.639
        assert!((bank.prompts()[[0, 0, 0]] - (0.89 - 0.1639)).abs() < 1e-12);
        // projection only decays: 2 - 0.02 = 1.98, then buf = 0.1 + 0.198
        assert!((bank.projection()[[0, 0]] - (1.98 - 0.1 * 0.298)).abs() < 1e-12);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1e-12, 2e-12) < 1e-3);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
