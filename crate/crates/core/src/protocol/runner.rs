use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{cumulative_accuracy, summarize, SessionEval, SessionMetrics};
use super::stream::{validate_stream, SessionStream};
use crate::classifier::{classify, ClassRegistry, PrototypeMode};
use crate::encoder::DualEncoderBundle;
use crate::error::{Error, Result};
use crate::prompt::{compile_plan, GPromptBank};
use crate::trainer::{
    train_session, Ablation, OptimizerConfig, RegularizerState, SessionContext, SessionLog,
};

pub const DEFAULT_TEMPLATE: &str = "a photo of a <category>";

/// Method settings for one end-to-end run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FscilConfig {
    pub base_optimizer: OptimizerConfig,
    pub incremental_optimizer: OptimizerConfig,
    pub ablation: Ablation,
    pub logit_scale: f64,
    pub template: String,
    pub alpha_floor: f64,
}

impl Default for FscilConfig {
    fn default() -> Self {
        Self {
            base_optimizer: OptimizerConfig::default(),
            incremental_optimizer: OptimizerConfig::incremental(),
            ablation: Ablation::Full,
            logit_scale: 1.0,
            template: DEFAULT_TEMPLATE.into(),
            alpha_floor: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FscilOutcome {
    pub metrics: SessionMetrics,
    /// `evals[t][tau]`: results on `E_tau` after training session `t`.
    pub evals: Vec<Vec<SessionEval>>,
    pub logs: Vec<SessionLog>,
    pub bank: GPromptBank,
}

/// Evaluates the current model on `E_0 .. E_t`, one result per session.
pub fn evaluate_through(
    bundle: &DualEncoderBundle,
    bank: &GPromptBank,
    registry: &mut ClassRegistry,
    stream: &SessionStream,
    t: usize,
    cfg: &FscilConfig,
) -> Result<Vec<SessionEval>> {
    let zero_shot = !cfg.ablation.trains();
    let mode = if zero_shot {
        PrototypeMode::ZeroShot(&cfg.template)
    } else {
        PrototypeMode::Learned(bank)
    };
    registry.ensure_prototypes(bundle, mode)?;
    let vision_hooks = if zero_shot {
        Vec::new()
    } else {
        compile_plan(bank, cfg.ablation.plan()).vision_hooks
    };
    let registry = &*registry;
    stream.sessions[..=t]
        .iter()
        .map(|session| {
            let correct = session
                .eval
                .par_iter()
                .map(|ex| {
                    let patches = bundle.patchify(&ex.image)?;
                    let emb = bundle.encode_image(&patches, &vision_hooks)?;
                    let pred = classify(&emb, registry, cfg.logit_scale)?;
                    Ok(usize::from(pred.predicted_class == ex.class_id))
                })
                .collect::<Result<Vec<usize>>>()?
                .into_iter()
                .sum();
            Ok(SessionEval {
                correct,
                total: session.eval.len(),
            })
        })
        .collect()
}

/// Runs the whole session stream: register, train, evaluate on the union of
/// evaluation sets seen so far, then summarize.
pub fn run_fscil(
    bundle: &DualEncoderBundle,
    mut bank: GPromptBank,
    stream: &SessionStream,
    class_names: &[String],
    cfg: &FscilConfig,
    seed: u64,
) -> Result<FscilOutcome> {
    if !bundle.is_frozen() {
        return Err(Error::protocol("backbone must be frozen"));
    }
    if let Err(violations) = validate_stream(stream) {
        let msg: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(Error::protocol(format!("invalid stream: {}", msg.join("; "))));
    }
    let mut registry = ClassRegistry::new();
    let mut reg = RegularizerState::new(cfg.ablation.regularized());
    reg.alpha_floor = cfg.alpha_floor;
    let mut accuracies = Vec::with_capacity(stream.sessions.len());
    let mut evals = Vec::with_capacity(stream.sessions.len());
    let mut logs = Vec::with_capacity(stream.sessions.len());

    for (t, session) in stream.sessions.iter().enumerate() {
        for &c in &session.classes {
            let name = class_names
                .get(c)
                .ok_or_else(|| Error::protocol(format!("no name for class {c}")))?;
            registry.register(c, name, t)?;
        }
        reg.class_counts.push(session.classes.len());
        if registry.len() != stream.seen_classes(t) {
            return Err(Error::Invariant("registry size disagrees with the stream".into()));
        }

        if cfg.ablation.trains() {
            let optimizer = if t == 0 {
                &cfg.base_optimizer
            } else {
                &cfg.incremental_optimizer
            };
            let ctx = SessionContext {
                bundle,
                registry: &registry,
                session: t,
                optimizer,
                regularizer: &reg,
                ablation: cfg.ablation,
                logit_scale: cfg.logit_scale,
                seed,
            };
            logs.push(train_session(&ctx, &mut bank, &session.train, None)?);
        } else {
            logs.push(SessionLog::default());
        }

        let per_session = evaluate_through(bundle, &bank, &mut registry, stream, t, cfg)?;
        accuracies.push(cumulative_accuracy(&per_session)?);
        evals.push(per_session);
    }

    Ok(FscilOutcome {
        metrics: summarize(&accuracies)?,
        evals,
        logs,
        bank,
    })
}
