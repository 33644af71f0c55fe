//! Few-shot class-incremental learning with prompt-tuned frozen dual encoders.
//!
//! A frozen language/vision transformer pair is adapted by a small bank of
//! learnable prompt tokens. Language prompts are replaced layer by layer;
//! their linear projections are accumulated through the vision tower. Images
//! are classified by cosine similarity against text prototypes of every class
//! seen so far, and prompt gradients are scaled down as more classes arrive.
//!
//! Module map:
//! - [`encoder`]: frozen towers, forward hooks, toy backbone and alignment
//! - [`prompt`]: the prompt bank and hook compilation
//! - [`classifier`]: class registry and cosine-softmax prediction
//! - [`trainer`]: per-session optimization and gradient checks
//! - [`protocol`]: session streams, the session loop and metrics
//! - [`benchmark`]: the synthetic desk-scale benchmark

pub mod benchmark;
pub mod classifier;
pub mod encoder;
pub mod error;
pub mod image;
pub mod prompt;
pub mod protocol;
pub mod tape;
pub mod trainer;

pub use classifier::{classify, zero_shot_classify, ClassRegistry, Prediction, PrototypeMode};
pub use encoder::{
    build_toy_bundle, count_parameters, pretrain_toy_alignment, DualEncoderBundle, EncoderSpec,
    InjectionMode, LayerForwardHook, Modality, ParameterCount,
};
pub use error::{Error, Result};
pub use prompt::{compile_plan, GPromptBank, PlanAblation, PromptPlan};
pub use protocol::{run_fscil, summarize, FscilConfig, SessionMetrics, SessionStream};
pub use trainer::{alpha, scale_prompt_gradients, train_session, Ablation, OptimizerConfig};
