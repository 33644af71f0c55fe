mod common;

use fscil_core::protocol::{pattern_catalog, render_dataset, SyntheticSpec};
use fscil_core::trainer::{RegularizerState, SessionContext};
use fscil_core::{
    run_fscil, train_session, Ablation, ClassRegistry, FscilConfig, GPromptBank, OptimizerConfig,
    SessionStream,
};

fn data() -> fscil_core::protocol::Dataset {
    let mut catalog = pattern_catalog(2, 2);
    let names = ["vertical wide", "vertical narrow", "horizontal wide", "horizontal narrow"];
    for (c, n) in catalog.iter_mut().zip(names) {
        c.name = n.into();
    }
    render_dataset(
        &catalog,
        &SyntheticSpec {
            num_classes: 4,
            per_class: 8,
            test_per_class: 2,
            image_size: 8,
            noise_std: 0.1,
            ..SyntheticSpec::default()
        },
    )
    .unwrap()
}

#[test]
fn base_training_lowers_the_loss() {
    let bundle = common::bundle(8);
    let data = data();
    let mut registry = ClassRegistry::new();
    for (c, n) in data.class_names().iter().enumerate() {
        registry.register(c, n, 0).unwrap();
    }
    let optimizer = OptimizerConfig {
        learning_rate: 0.05,
        epochs: 8,
        batch_size: 8,
        ..OptimizerConfig::default()
    };
    let mut reg = RegularizerState::new(true);
    reg.class_counts.push(4);
    let ctx = SessionContext {
        bundle: &bundle,
        registry: &registry,
        session: 0,
        optimizer: &optimizer,
        regularizer: &reg,
        ablation: Ablation::Full,
        logit_scale: 10.0,
        seed: 0,
    };
    let mut bank = GPromptBank::init(2, 2, 12, 16, 3, 0).unwrap();
    let log = train_session(&ctx, &mut bank, &data.train, None).unwrap();
    assert_eq!(log.epoch_losses.len(), 8);
    assert_eq!(log.records.len(), 8 * 3);
    assert!(log.records.iter().all(|r| r.alpha == 1.0));
    let (first, last) = (log.epoch_losses[0], *log.epoch_losses.last().unwrap());
    assert!(last < first, "loss went from {first} to {last}");
}

#[test]
fn unfrozen_backbone_is_rejected() {
    let bundle = fscil_core::build_toy_bundle(&common::config(3, 12, 16), 0).unwrap();
    let data = data();
    let stream: SessionStream = fscil_core::protocol::build_session_stream(&data, 2, 1, 2, 2, 0).unwrap();
    let bank = GPromptBank::init(1, 1, 12, 16, 3, 0).unwrap();
    let r = run_fscil(&bundle, bank, &stream, &data.class_names(), &FscilConfig::default(), 0);
    assert!(r.is_err());
}

#[test]
fn zero_shot_runs_leave_the_bank_untouched() {
    let bundle = common::bundle(9);
    let data = data();
    let stream = fscil_core::protocol::build_session_stream(&data, 2, 1, 2, 2, 0).unwrap();
    let bank = GPromptBank::init(1, 1, 12, 16, 3, 0).unwrap();
    let cfg = FscilConfig {
        ablation: Ablation::ZeroShot,
        ..FscilConfig::default()
    };
    let out = run_fscil(&bundle, bank.clone(), &stream, &data.class_names(), &cfg, 0).unwrap();
    assert_eq!(out.bank, bank);
    assert!(out.logs.iter().all(|l| l.records.is_empty()));
    assert_eq!(out.metrics.session_accuracies.len(), 3);
    assert_eq!(out.evals[2].len(), 3);
}
