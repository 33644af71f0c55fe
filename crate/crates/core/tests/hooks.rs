mod common;

use fscil_core::encoder::{InjectionMode, LayerForwardHook};
use fscil_core::{compile_plan, GPromptBank, PlanAblation};
use ndarray::{s, Array2};

fn bank(length: usize, depth: usize, seed: u64) -> GPromptBank {
    let mut b = GPromptBank::init(length, depth, 12, 16, 3, seed).unwrap();
    b.params_mut().0.mapv_inplace(|v| v * 50.0);
    b
}

fn patches(bundle: &fscil_core::DualEncoderBundle) -> Array2<f64> {
    let (n, d) = (bundle.patchifier.num_patches(), bundle.patchifier.patch_dim());
    Array2::from_shape_fn((n, d), |(i, j)| ((i * 7 + j) as f64 * 0.37).sin())
}

#[test]
fn vision_trace_per_plan() {
    let bundle = common::bundle(1);
    let x = patches(&bundle);
    let bank = bank(2, 3, 0);
    let cases = [
        (PlanAblation::Full, vec![2, 4, 6], 6),
        (PlanAblation::NoAccumulation, vec![2, 2, 2], 2),
        (PlanAblation::NoVisionPrompts, vec![0, 0, 0], 0),
    ];
    for (ablation, per_layer, pooled) in cases {
        let plan = compile_plan(&bank, ablation);
        let (_, trace) = bundle.encode_image_traced(&x, &plan.vision_hooks).unwrap();
        assert_eq!(trace.prompt_tokens_per_layer, per_layer, "{ablation:?}");
        assert_eq!(trace.pooled_prompt_tokens, pooled, "{ablation:?}");
    }
}

#[test]
fn shallow_prompts_are_carried_to_later_layers() {
    let bundle = common::bundle(2);
    let plan = compile_plan(&bank(3, 1, 0), PlanAblation::Full);
    let (_, trace) = bundle.encode_image_traced(&patches(&bundle), &plan.vision_hooks).unwrap();
    assert_eq!(trace.prompt_tokens_per_layer, vec![3, 3, 3]);
    assert_eq!(trace.pooled_prompt_tokens, 3);
}

#[test]
fn no_vision_prompts_matches_the_plain_image_path() {
    let bundle = common::bundle(3);
    let x = patches(&bundle);
    let plan = compile_plan(&bank(2, 2, 0), PlanAblation::NoVisionPrompts);
    assert!(plan.vision_hooks.is_empty());
    assert_eq!(
        bundle.encode_image(&x, &plan.vision_hooks).unwrap(),
        bundle.encode_image(&x, &[]).unwrap()
    );
    let full = compile_plan(&bank(2, 2, 0), PlanAblation::Full);
    assert_ne!(
        bundle.encode_image(&x, &full.vision_hooks).unwrap(),
        bundle.encode_image(&x, &[]).unwrap()
    );
}

#[test]
fn language_prompts_change_text_features() {
    let bundle = common::bundle(4);
    let tokens = bundle.tokenizer.encode("vertical wide").unwrap();
    let plain = bundle.encode_text(&tokens, &[]).unwrap();
    for depth in 1..=3 {
        let plan = compile_plan(&bank(2, depth, 9), PlanAblation::Full);
        let hooked = bundle.encode_text(&tokens, &plan.language_hooks).unwrap();
        assert!((&hooked - &plain).iter().any(|d| d.abs() > 1e-6), "depth {depth}");
    }
}

#[test]
fn a_hook_without_tokens_and_discard_is_a_no_op() {
    let bundle = common::bundle(5);
    let tokens = bundle.tokenizer.encode("narrow").unwrap();
    let hooks: Vec<LayerForwardHook> = (1..=3)
        .map(|i| LayerForwardHook {
            layer_index: i,
            injected_tokens: None,
            injection_mode: InjectionMode::Prepend,
            discard_prompt_outputs: true,
        })
        .collect();
    assert_eq!(
        bundle.encode_text(&tokens, &hooks).unwrap(),
        bundle.encode_text(&tokens, &[]).unwrap()
    );
}

#[test]
fn text_warm_start_copies_layer_inputs() {
    let bundle = common::bundle(6);
    let tokens = bundle.tokenizer.encode("a photo of a").unwrap();
    let states = bundle.text_layer_inputs(&tokens).unwrap();
    assert_eq!(states.len(), 3);
    assert_eq!(states[0].dim(), (tokens.len(), 12));

    let warm = GPromptBank::init_from_text(&bundle, "a photo of a", 6, 2, 11).unwrap();
    let cold = GPromptBank::init(6, 2, 12, 16, 3, 11).unwrap();
    for i in 0..2 {
        for l in 0..4 {
            assert_eq!(warm.prompts().slice(s![i, l, ..]), states[i].row(1 + l));
        }
        // positions past the four prefix words keep the random draw
        assert_eq!(warm.prompts().slice(s![i, 4.., ..]), cold.prompts().slice(s![i, 4.., ..]));
    }
    assert_eq!(warm.projection(), cold.projection());
}
