//! Contrastive image–text alignment for the toy backbone, so that the frozen
//! towers carry some zero-shot ability before any prompt tuning.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DualEncoderBundle;
use crate::classifier::fill_template;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::tape::{Mat, Tape};

#[derive(Clone, Debug)]
pub struct AlignmentPair {
    pub image: Image,
    pub class_name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    pub steps: usize,
    /// Distinct classes per contrastive batch (one image each).
    pub batch_classes: usize,
    pub learning_rate: f64,
    /// Cosine multiplier inside the contrastive softmax.
    pub temperature_scale: f64,
    /// Caption templates; each pair draws one uniformly per step.
    pub templates: Vec<String>,
    pub seed: u64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            batch_classes: 16,
            learning_rate: 3e-4,
            temperature_scale: 10.0,
            templates: vec!["a photo of a <category>".into(), "<category>".into()],
            seed: 0,
        }
    }
}

struct Adam {
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(shapes: &[&Mat]) -> Self {
        Self {
            m: shapes.iter().map(|s| Mat::zeros(s.raw_dim())).collect(),
            v: shapes.iter().map(|s| Mat::zeros(s.raw_dim())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: Vec<&mut Mat>, grads: &[Mat], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                    *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                });
        }
    }
}

/// Trains every backbone weight with a symmetric contrastive objective over
/// (image, templated class name) pairs, then freezes the bundle.
///
/// Corpus classes must not appear among `benchmark_classes`.
pub fn pretrain_toy_alignment(
    mut bundle: DualEncoderBundle,
    corpus: &[AlignmentPair],
    benchmark_classes: &[String],
    config: &AlignmentConfig,
) -> Result<DualEncoderBundle> {
    if bundle.is_frozen() {
        return Err(Error::config("bundle is already frozen"));
    }
    let held_out: BTreeSet<&str> = benchmark_classes.iter().map(String::as_str).collect();
    if let Some(p) = corpus.iter().find(|p| held_out.contains(p.class_name.as_str())) {
        return Err(Error::protocol(format!(
            "alignment corpus class '{}' overlaps the benchmark",
            p.class_name
        )));
    }
    if config.steps == 0 {
        bundle.freeze();
        return Ok(bundle);
    }
    if corpus.is_empty() || config.batch_classes < 2 || config.templates.is_empty() {
        return Err(Error::config(
            "alignment needs a nonempty corpus, a template and at least two classes per batch",
        ));
    }

    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in corpus.iter().enumerate() {
        by_class.entry(p.class_name.as_str()).or_default().push(i);
    }
    let classes: Vec<&str> = by_class.keys().copied().collect();
    let mut texts = BTreeMap::new();
    for &c in &classes {
        let captions = config
            .templates
            .iter()
            .map(|t| bundle.tokenizer.encode(&fill_template(t, c)?))
            .collect::<Result<Vec<_>>>()?;
        texts.insert(c, captions);
    }
    let patches: Vec<_> = corpus
        .iter()
        .map(|p| bundle.patchify(&p.image))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(&bundle.tensors());
    let batch = config.batch_classes.min(classes.len());

    for _ in 0..config.steps {
        let chosen: Vec<&str> = classes.choose_multiple(&mut rng, batch).copied().collect();
        let picks: Vec<usize> = chosen
            .iter()
            .map(|c| *by_class[c].choose(&mut rng).expect("class has examples"))
            .collect();

        let mut tape = Tape::new();
        let vars = bundle.bind(&mut tape);
        let mut img_rows = Vec::with_capacity(batch);
        let mut txt_rows = Vec::with_capacity(batch);
        for (c, &i) in chosen.iter().zip(&picks) {
            let (img, _) = bundle.image_forward(&mut tape, &vars, &patches[i], &[])?;
            let caption = texts[c].choose(&mut rng).expect("templates are nonempty");
            let (txt, _) = bundle.text_forward(&mut tape, &vars, caption, &[])?;
            img_rows.push(img);
            txt_rows.push(txt);
        }
        let imgs = tape.concat_rows(&img_rows);
        let txts = tape.concat_rows(&txt_rows);
        let imgs = tape.normalize_rows(imgs);
        let txts = tape.normalize_rows(txts);
        let txts_t = tape.transpose(txts);
        let sims = tape.matmul(imgs, txts_t);
        let logits = tape.scale(sims, config.temperature_scale);
        let targets: Vec<usize> = (0..batch).collect();
        let image_loss = tape.cross_entropy(logits, &targets);
        let logits_t = tape.transpose(logits);
        let text_loss = tape.cross_entropy(logits_t, &targets);
        let total = tape.add(image_loss, text_loss);
        let loss = tape.scale(total, 0.5);

        let grads = tape.backward(loss);
        let g: Vec<Mat> = vars
            .leaves()
            .into_iter()
            .map(|v| grads.get_or_zeros(&tape, v))
            .collect();
        adam.step(bundle.tensors_mut(), &g, config.learning_rate);
    }
    bundle.freeze();
    Ok(bundle)
}
