use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DualEncoderBundle;
use crate::error::Result;

/// Loads a frozen backbone from a checkpoint on disk.
///
/// Implementations own the checkpoint's file format. The returned bundle must
/// be frozen and expose the same per-layer forward access as the toy backbone.
pub trait CheckpointAdapter {
    fn load(&self, path: &Path) -> Result<DualEncoderBundle>;

    /// The checkpoint's own cosine-similarity multiplier.
    fn native_logit_scale(&self) -> f64;

    /// Frozen parameter total reported by the checkpoint's architecture,
    /// available without materializing the weights.
    fn frozen_parameter_count(&self) -> usize;
}

/// Reads bundles written by [`DualEncoderBundle::save`].
#[derive(Clone, Debug, Default)]
pub struct BundleFileAdapter {
    frozen_count: usize,
    logit_scale: Option<f64>,
}

impl BundleFileAdapter {
    pub fn new() -> Self {
        Self::default()
    }
}

impl CheckpointAdapter for BundleFileAdapter {
    fn load(&self, path: &Path) -> Result<DualEncoderBundle> {
        DualEncoderBundle::load(path)
    }

    fn native_logit_scale(&self) -> f64 {
        self.logit_scale.unwrap_or(1.0)
    }

    fn frozen_parameter_count(&self) -> usize {
        self.frozen_count
    }
}

impl BundleFileAdapter {
    /// Loads the bundle and remembers its totals for the trait getters.
    pub fn open(path: &Path) -> Result<(Self, DualEncoderBundle)> {
        let bundle = DualEncoderBundle::load(path)?;
        let adapter = Self {
            frozen_count: bundle.frozen_parameter_count(),
            logit_scale: Some(bundle.logit_scale),
        };
        Ok((adapter, bundle))
    }
}

/// Architecture description of a CLIP-style dual encoder, used to count
/// parameters of checkpoints too large to instantiate at desk scale.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipLayout {
    pub vocab_size: usize,
    pub text_context: usize,
    pub text_width: usize,
    pub text_layers: usize,
    pub image_size: usize,
    pub patch_size: usize,
    pub vision_width: usize,
    pub vision_layers: usize,
    pub joint_dim: usize,
}

impl ClipLayout {
    /// OpenAI CLIP ViT-B/16.
    pub fn vit_b16() -> Self {
        Self {
            vocab_size: 49_408,
            text_context: 77,
            text_width: 512,
            text_layers: 12,
            image_size: 224,
            patch_size: 16,
            vision_width: 768,
            vision_layers: 12,
            joint_dim: 512,
        }
    }

    fn block(width: usize) -> usize {
        let attn = width * 3 * width + 3 * width + width * width + width;
        let mlp = width * 4 * width + 4 * width + 4 * width * width + width;
        attn + mlp + 4 * width
    }

    pub fn text_parameters(&self) -> usize {
        let w = self.text_width;
        self.vocab_size * w
            + self.text_context * w
            + self.text_layers * Self::block(w)
            + 2 * w
            + w * self.joint_dim
    }

    pub fn vision_parameters(&self) -> usize {
        let w = self.vision_width;
        let grid = self.image_size / self.patch_size;
        let tokens = grid * grid + 1;
        3 * self.patch_size * self.patch_size * w // conv stem, no bias
            + w // class embedding
            + tokens * w
            + 2 * w // ln_pre
            + self.vision_layers * Self::block(w)
            + 2 * w // ln_post
            + w * self.joint_dim
    }

    /// Both towers plus the scalar logit scale.
    pub fn total_parameters(&self) -> usize {
        self.text_parameters() + self.vision_parameters() + 1
    }
}

/// Parameter totals for a checkpoint described only by its layout.
#[derive(Clone, Debug)]
pub struct LayoutOnlyAdapter {
    pub layout: ClipLayout,
    pub logit_scale: f64,
}

impl CheckpointAdapter for LayoutOnlyAdapter {
    fn load(&self, path: &Path) -> Result<DualEncoderBundle> {
        Err(crate::error::Error::config(format!(
            "no weight reader for CLIP checkpoint {}",
            path.display()
        )))
    }

    fn native_logit_scale(&self) -> f64 {
        self.logit_scale
    }

    fn frozen_parameter_count(&self) -> usize {
        self.layout.total_parameters()
    }
}
