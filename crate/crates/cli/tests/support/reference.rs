//! Naive dual-encoder forward used as an oracle. Every layer's input
//! sequence is materialized explicitly from the prompt-propagation rules:
//!
//! language, layer i <= D: [h_bos, P_i, h_words]; prompt outputs dropped
//! for i < D and carried through every later layer from i = D.
//! vision, layer i <= D: [h_cls, h_patches, P_i W, carried]; with
//! accumulation `carried` holds every earlier layer's prompt outputs,
//! without it only the outputs of layer D survive to later layers.

use fscil_core::encoder::tower::{Block, Stem, Tower};
use fscil_core::prompt::PlanAblation;
use fscil_core::{DualEncoderBundle, GPromptBank};
use ndarray::{concatenate, s, Array1, Array2, Axis};

type M = Array2<f64>;

fn layer_norm(x: &M, gamma: &M, beta: &M) -> M {
    let mut out = x.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let src = x.row(i);
        let n = src.len() as f64;
        let mean = src.sum() / n;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let denom = (var + 1e-5).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (src[j] - mean) / denom * gamma[[0, j]] + beta[[0, j]];
        }
    }
    out
}

fn affine(x: &M, w: &M, b: &M) -> M {
    x.dot(w) + &b.row(0)
}

fn softmax_row(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    for x in v.iter_mut() {
        *x /= z;
    }
}

fn block(b: &Block<M>, x: &M, heads: usize) -> M {
    let (n, d) = x.dim();
    let hd = d / heads;
    let h = layer_norm(x, &b.ln1.gamma, &b.ln1.beta);
    let q = affine(&h, &b.wq, &b.bq);
    let k = affine(&h, &b.wk, &b.bk);
    let v = affine(&h, &b.wv, &b.bv);
    let mut merged = M::zeros((n, d));
    for head in 0..heads {
        let c = head * hd;
        for i in 0..n {
            let mut scores: Vec<f64> = (0..n)
                .map(|j| (0..hd).map(|e| q[[i, c + e]] * k[[j, c + e]]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            softmax_row(&mut scores);
            for e in 0..hd {
                merged[[i, c + e]] = (0..n).map(|j| scores[j] * v[[j, c + e]]).sum();
            }
        }
    }
    let x = x + &affine(&merged, &b.wo, &b.bo);
    let h = layer_norm(&x, &b.ln2.gamma, &b.ln2.beta);
    let f = affine(&h, &b.fc1, &b.fc1_bias).mapv(|u| u / (1.0 + (-1.702 * u).exp()));
    &x + &affine(&f, &b.fc2, &b.fc2_bias)
}

fn stack(parts: &[&M]) -> M {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(0), &views).expect("same widths")
}

fn readout(tower: &Tower<M>, row: &M, proj: &M) -> Array1<f64> {
    layer_norm(row, &tower.final_ln.gamma, &tower.final_ln.beta)
        .dot(proj)
        .row(0)
        .to_owned()
}

/// Text embedding with the replacement rule for `bank` (or none).
pub fn text(bundle: &DualEncoderBundle, tokens: &[usize], bank: Option<&GPromptBank>) -> Array1<f64> {
    let tower = &bundle.language.weights;
    let heads = bundle.language.spec.num_heads;
    let Stem::Tokens { table } = &tower.stem else {
        panic!("token stem expected")
    };
    let n = tokens.len();
    let mut real = M::zeros((n, table.ncols()));
    for (r, &t) in tokens.iter().enumerate() {
        real.row_mut(r).assign(&(&table.row(t) + &tower.positional.row(r)));
    }
    let depth = bank.map_or(0, |b| b.depth());
    let mut carried: Option<M> = None;
    for (idx, b) in tower.blocks.iter().enumerate() {
        let i = idx + 1;
        let prompts = if i <= depth {
            Some(bank.unwrap().layer_prompts(i).unwrap())
        } else {
            carried.take()
        };
        match prompts {
            None => real = block(b, &real, heads),
            Some(p) => {
                let l = p.nrows();
                let head = real.slice(s![0..1, ..]).to_owned();
                let tail = real.slice(s![1.., ..]).to_owned();
                let out = block(b, &stack(&[&head, &p, &tail]), heads);
                let p_out = out.slice(s![1..1 + l, ..]).to_owned();
                real = stack(&[&out.slice(s![0..1, ..]).to_owned(), &out.slice(s![1 + l.., ..]).to_owned()]);
                if i >= depth {
                    carried = Some(p_out);
                }
            }
        }
    }
    let eos = real.slice(s![n - 1..n, ..]).to_owned();
    readout(tower, &eos, &bundle.text_out_proj)
}

/// Image embedding with the accumulation rule (or its ablations).
pub fn image(
    bundle: &DualEncoderBundle,
    patches: &M,
    bank: Option<&GPromptBank>,
    ablation: PlanAblation,
) -> Array1<f64> {
    let tower = &bundle.vision.weights;
    let heads = bundle.vision.spec.num_heads;
    let Stem::Patches {
        proj,
        bias,
        class_token,
    } = &tower.stem
    else {
        panic!("patch stem expected")
    };
    let emb = affine(patches, proj, bias);
    let seq = stack(&[class_token, &emb]);
    let n = seq.nrows();
    let mut real = &seq + &tower.positional.slice(s![0..n, ..]);
    let depth = match (bank, ablation) {
        (Some(b), PlanAblation::Full | PlanAblation::NoAccumulation) => b.depth(),
        _ => 0,
    };
    let mut carried: Option<M> = None;
    for (idx, b) in tower.blocks.iter().enumerate() {
        let i = idx + 1;
        let prompts = if i <= depth {
            let fresh = bank.unwrap().layer_prompts(i).unwrap().dot(bank.unwrap().projection());
            match carried.take() {
                Some(c) => Some(stack(&[&fresh, &c])),
                None => Some(fresh),
            }
        } else {
            carried.take()
        };
        match prompts {
            None => real = block(b, &real, heads),
            Some(p) => {
                let out = block(b, &stack(&[&real, &p]), heads);
                let p_out = out.slice(s![n.., ..]).to_owned();
                real = out.slice(s![0..n, ..]).to_owned();
                let keep = ablation == PlanAblation::Full || i >= depth;
                if keep {
                    carried = Some(p_out);
                }
            }
        }
    }
    let cls = real.slice(s![0..1, ..]).to_owned();
    readout(tower, &cls, &bundle.vision_out_proj)
}

/// Number of prompt tokens in each vision layer's input under accumulation.
pub fn accumulated_counts(length: usize, depth: usize, layers: usize) -> Vec<usize> {
    (1..=layers).map(|i| length * i.min(depth)).collect()
}
