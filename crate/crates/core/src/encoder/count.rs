use serde::{Deserialize, Serialize};

use super::{ClipLayout, DualEncoderBundle};
use crate::prompt::GPromptBank;

/// Anything that can report how many frozen scalars it holds.
pub trait FrozenParameters {
    fn frozen_parameters(&self) -> usize;
}

impl FrozenParameters for DualEncoderBundle {
    fn frozen_parameters(&self) -> usize {
        self.frozen_parameter_count()
    }
}

impl FrozenParameters for ClipLayout {
    fn frozen_parameters(&self) -> usize {
        self.total_parameters()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub frozen: usize,
    pub learnable: usize,
    /// `learnable / (learnable + frozen)`.
    pub learnable_fraction: f64,
}

/// `D*L*d_NLP` prompt entries plus the `d_NLP*d_CV` shared projection.
pub fn learnable_parameters(length: usize, depth: usize, d_nlp: usize, d_cv: usize) -> usize {
    depth * length * d_nlp + d_nlp * d_cv
}

pub fn count_parameters(backbone: &impl FrozenParameters, bank: &GPromptBank) -> ParameterCount {
    let frozen = backbone.frozen_parameters();
    let learnable = learnable_parameters(
        bank.length(),
        bank.depth(),
        bank.language_dim(),
        bank.vision_dim(),
    );
    debug_assert_eq!(learnable, bank.learnable_count());
    ParameterCount {
        frozen,
        learnable,
        learnable_fraction: learnable as f64 / (learnable + frozen) as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_arithmetic() {
        assert_eq!(learnable_parameters(1, 1, 2, 3), 8);
        assert_eq!(learnable_parameters(2, 12, 512, 768), 12_288 + 393_216);
    }

    #[test]
    fn clip_b16_fraction() {
        let bank = GPromptBank::init(2, 12, 512, 768, 12, 0).unwrap();
        let c = count_parameters(&ClipLayout::vit_b16(), &bank);
        assert_eq!(c.learnable, 405_504);
        assert!(c.learnable_fraction < 0.003);
    }
}
