//! Shared fixtures for the benchmarks: an unaligned toy-sized backbone, a
//! prompt bank and a rendered batch.

use fscil_core::benchmark::{toy_backbone_config, ToyBackboneShape};
use fscil_core::protocol::{default_catalog, synthesize_dataset, Dataset, SyntheticSpec};
use fscil_core::{build_toy_bundle, ClassRegistry, DualEncoderBundle, GPromptBank};

pub struct Fixture {
    pub bundle: DualEncoderBundle,
    pub bank: GPromptBank,
    pub dataset: Dataset,
    pub registry: ClassRegistry,
}

/// Default toy geometry with prompts of length `length` at depth `depth`.
pub fn fixture(length: usize, depth: usize) -> Fixture {
    let spec = SyntheticSpec {
        per_class: 6,
        test_per_class: 2,
        ..SyntheticSpec::default()
    };
    let dataset = synthesize_dataset(&default_catalog(), &spec).expect("valid spec");
    let config = toy_backbone_config(&ToyBackboneShape::default(), spec.image_size);
    let mut bundle = build_toy_bundle(&config, 7).expect("valid backbone");
    bundle.freeze();
    let bank = GPromptBank::init(
        length,
        depth,
        bundle.language_dim(),
        bundle.vision_dim(),
        bundle.num_layers(),
        0,
    )
    .expect("valid bank");
    let mut registry = ClassRegistry::new();
    for (c, name) in dataset.class_names().iter().enumerate() {
        registry.register(c, name, 0).expect("fresh registry");
    }
    Fixture {
        bundle,
        bank,
        dataset,
        registry,
    }
}
