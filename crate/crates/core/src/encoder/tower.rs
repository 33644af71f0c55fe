//! Transformer tower parameters and the pre-layer-norm block forward.
//!
//! The parameter structs are generic over their storage: `Tower<Mat>` holds
//! the weights, `Tower<Var>` the same weights bound onto a [`Tape`].

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tape::{Mat, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Norm<T> {
    pub gamma: T,
    pub beta: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block<T> {
    pub ln1: Norm<T>,
    pub wq: T,
    pub bq: T,
    pub wk: T,
    pub bk: T,
    pub wv: T,
    pub bv: T,
    pub wo: T,
    pub bo: T,
    pub ln2: Norm<T>,
    pub fc1: T,
    pub fc1_bias: T,
    pub fc2: T,
    pub fc2_bias: T,
}

/// How raw inputs become the first hidden states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Stem<T> {
    Tokens { table: T },
    Patches { proj: T, bias: T, class_token: T },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tower<T> {
    pub stem: Stem<T>,
    /// Learned positions for real tokens; injected prompts get none.
    pub positional: T,
    pub blocks: Vec<Block<T>>,
    pub final_ln: Norm<T>,
}

impl<T> Norm<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Norm<U> {
        Norm {
            gamma: f(&self.gamma),
            beta: f(&self.beta),
        }
    }

    fn refs(&self) -> [&T; 2] {
        [&self.gamma, &self.beta]
    }

    fn muts(&mut self) -> [&mut T; 2] {
        [&mut self.gamma, &mut self.beta]
    }
}

impl<T> Block<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Block<U> {
        Block {
            ln1: self.ln1.map(f),
            wq: f(&self.wq),
            bq: f(&self.bq),
            wk: f(&self.wk),
            bk: f(&self.bk),
            wv: f(&self.wv),
            bv: f(&self.bv),
            wo: f(&self.wo),
            bo: f(&self.bo),
            ln2: self.ln2.map(f),
            fc1: f(&self.fc1),
            fc1_bias: f(&self.fc1_bias),
            fc2: f(&self.fc2),
            fc2_bias: f(&self.fc2_bias),
        }
    }

    fn refs(&self) -> Vec<&T> {
        let mut v: Vec<&T> = self.ln1.refs().to_vec();
        v.extend([
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo,
        ]);
        v.extend(self.ln2.refs());
        v.extend([&self.fc1, &self.fc1_bias, &self.fc2, &self.fc2_bias]);
        v
    }

    fn muts(&mut self) -> Vec<&mut T> {
        let mut v: Vec<&mut T> = self.ln1.muts().into_iter().collect();
        v.extend([
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
        ]);
        v.extend(self.ln2.muts());
        v.extend([
            &mut self.fc1,
            &mut self.fc1_bias,
            &mut self.fc2,
            &mut self.fc2_bias,
        ]);
        v
    }
}

impl<T> Tower<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Tower<U> {
        let stem = match &self.stem {
            Stem::Tokens { table } => Stem::Tokens { table: f(table) },
            Stem::Patches {
                proj,
                bias,
                class_token,
            } => Stem::Patches {
                proj: f(proj),
                bias: f(bias),
                class_token: f(class_token),
            },
        };
        Tower {
            stem,
            positional: f(&self.positional),
            blocks: self.blocks.iter().map(|b| b.map(&mut f)).collect(),
            final_ln: self.final_ln.map(&mut f),
        }
    }

    /// Every tensor in a fixed canonical order.
    pub fn tensors(&self) -> Vec<&T> {
        let mut v: Vec<&T> = match &self.stem {
            Stem::Tokens { table } => vec![table],
            Stem::Patches {
                proj,
                bias,
                class_token,
            } => vec![proj, bias, class_token],
        };
        v.push(&self.positional);
        for b in &self.blocks {
            v.extend(b.refs());
        }
        v.extend(self.final_ln.refs());
        v
    }

    /// Same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        let mut v: Vec<&mut T> = match &mut self.stem {
            Stem::Tokens { table } => vec![table],
            Stem::Patches {
                proj,
                bias,
                class_token,
            } => vec![proj, bias, class_token],
        };
        v.push(&mut self.positional);
        for b in &mut self.blocks {
            v.extend(b.muts());
        }
        v.extend(self.final_ln.muts());
        v
    }
}

const INIT_STD: f64 = 0.02;

fn normal(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Mat {
    let dist = Normal::new(0.0, std).expect("finite std");
    Mat::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

fn norm(dim: usize) -> Norm<Mat> {
    Norm {
        gamma: Mat::ones((1, dim)),
        beta: Mat::zeros((1, dim)),
    }
}

/// Randomly initialized tower. `stem_input` is the vocabulary size for a
/// token stem or the patch dimension for a patch stem.
pub(crate) fn init_tower(
    rng: &mut impl Rng,
    patches: bool,
    stem_input: usize,
    dim: usize,
    layers: usize,
    max_seq_len: usize,
) -> Tower<Mat> {
    let hidden = 4 * dim;
    // Residual branches scaled down with depth, as in GPT-2 style inits.
    let out_std = INIT_STD / (2.0 * layers as f64).sqrt();
    let stem = if patches {
        Stem::Patches {
            proj: normal(rng, stem_input, dim, (1.0 / stem_input as f64).sqrt()),
            bias: Mat::zeros((1, dim)),
            class_token: normal(rng, 1, dim, INIT_STD),
        }
    } else {
        Stem::Tokens {
            table: normal(rng, stem_input, dim, INIT_STD),
        }
    };
    let blocks = (0..layers)
        .map(|_| Block {
            ln1: norm(dim),
            wq: normal(rng, dim, dim, INIT_STD),
            bq: Mat::zeros((1, dim)),
            wk: normal(rng, dim, dim, INIT_STD),
            bk: Mat::zeros((1, dim)),
            wv: normal(rng, dim, dim, INIT_STD),
            bv: Mat::zeros((1, dim)),
            wo: normal(rng, dim, dim, out_std),
            bo: Mat::zeros((1, dim)),
            ln2: norm(dim),
            fc1: normal(rng, dim, hidden, INIT_STD),
            fc1_bias: Mat::zeros((1, hidden)),
            fc2: normal(rng, hidden, dim, out_std),
            fc2_bias: Mat::zeros((1, dim)),
        })
        .collect();
    Tower {
        stem,
        positional: normal(rng, max_seq_len, dim, 0.01),
        blocks,
        final_ln: norm(dim),
    }
}

/// One pre-layer-norm transformer block with bidirectional multi-head
/// self-attention over every row of `x`.
pub(crate) fn block_forward(tape: &mut Tape, b: &Block<Var>, x: Var, heads: usize) -> Var {
    let dim = tape.value(x).ncols();
    let head_dim = dim / heads;
    let inv_sqrt = 1.0 / (head_dim as f64).sqrt();

    let h = tape.layer_norm(x, b.ln1.gamma, b.ln1.beta);
    let q = affine(tape, h, b.wq, b.bq);
    let k = affine(tape, h, b.wk, b.bk);
    let v = affine(tape, h, b.wv, b.bv);
    let mut outs = Vec::with_capacity(heads);
    for head in 0..heads {
        let start = head * head_dim;
        let qh = tape.slice_cols(q, start, head_dim);
        let kh = tape.slice_cols(k, start, head_dim);
        let vh = tape.slice_cols(v, start, head_dim);
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt);
        let scores = tape.scale(scores, inv_sqrt);
        let attn = tape.softmax_rows(scores);
        outs.push(tape.matmul(attn, vh));
    }
    let merged = tape.concat_cols(&outs);
    let attn_out = affine(tape, merged, b.wo, b.bo);
    let x = tape.add(x, attn_out);

    let h = tape.layer_norm(x, b.ln2.gamma, b.ln2.beta);
    let f = affine(tape, h, b.fc1, b.fc1_bias);
    let f = tape.quick_gelu(f);
    let f = affine(tape, f, b.fc2, b.fc2_bias);
    tape.add(x, f)
}

fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}
