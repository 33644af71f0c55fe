//! Cosine-similarity classification against text prototypes of every class
//! seen so far.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::encoder::DualEncoderBundle;
use crate::error::{Error, Result};
use crate::prompt::{compile_plan, GPromptBank, PlanAblation};
use crate::tape::{softmax_rows, Mat, Tape, Var};

pub const CATEGORY_PLACEHOLDER: &str = "<category>";

/// Substitutes a class name into a caption template.
pub fn fill_template(template: &str, class_name: &str) -> Result<String> {
    if !template.contains(CATEGORY_PLACEHOLDER) {
        return Err(Error::config(format!(
            "template '{template}' has no {CATEGORY_PLACEHOLDER} placeholder"
        )));
    }
    Ok(template.replace(CATEGORY_PLACEHOLDER, class_name))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub class_id: usize,
    pub class_name: String,
    pub session_id: usize,
}

/// What the cached prototypes were computed from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PrototypeSource {
    Learned { bank_version: u64, bank_checksum: u64 },
    ZeroShot { template: String },
}

/// How to build class prototypes.
#[derive(Clone, Copy, Debug)]
pub enum PrototypeMode<'a> {
    /// `[BOS, prompts, name.., EOS]` through the hooked language tower.
    Learned(&'a GPromptBank),
    /// The filled template through the plain language tower.
    ZeroShot(&'a str),
}

impl PrototypeMode<'_> {
    fn source(&self) -> PrototypeSource {
        match self {
            PrototypeMode::Learned(bank) => PrototypeSource::Learned {
                bank_version: bank.version(),
                bank_checksum: bank.checksum(),
            },
            PrototypeMode::ZeroShot(t) => PrototypeSource::ZeroShot {
                template: t.to_string(),
            },
        }
    }
}

#[derive(Clone, Debug)]
struct PrototypeCache {
    source: PrototypeSource,
    /// Unit rows, one per registered class in registry order.
    prototypes: Mat,
}

/// Classes registered so far, in session order.
#[derive(Clone, Debug, Default)]
pub struct ClassRegistry {
    entries: Vec<ClassEntry>,
    cache: Option<PrototypeCache>,
}

impl ClassRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, class_id: usize, class_name: &str, session_id: usize) -> Result<()> {
        if class_name.trim().is_empty() {
            return Err(Error::data(format!("class {class_id} has an empty name")));
        }
        if self.entries.iter().any(|e| e.class_id == class_id) {
            return Err(Error::protocol(format!("class {class_id} registered twice")));
        }
        if self.entries.last().is_some_and(|e| e.session_id > session_id) {
            return Err(Error::protocol(format!(
                "class {class_id} registered for session {session_id} after a later session"
            )));
        }
        self.entries.push(ClassEntry {
            class_id,
            class_name: class_name.to_string(),
            session_id,
        });
        self.cache = None;
        Ok(())
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, class_id: usize) -> Option<usize> {
        self.entries.iter().position(|e| e.class_id == class_id)
    }

    pub fn prototypes(&self) -> Option<&Mat> {
        self.cache.as_ref().map(|c| &c.prototypes)
    }

    pub fn cache_source(&self) -> Option<&PrototypeSource> {
        self.cache.as_ref().map(|c| &c.source)
    }

    pub fn invalidate(&mut self) {
        self.cache = None;
    }

    /// Recomputes unit-norm prototypes for every registered class.
    pub fn encode_class_prototypes(
        &mut self,
        bundle: &DualEncoderBundle,
        mode: PrototypeMode<'_>,
    ) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::protocol("no classes registered"));
        }
        let rows = match mode {
            PrototypeMode::Learned(bank) => {
                let plan = compile_plan(bank, PlanAblation::NoVisionPrompts);
                self.entries
                    .iter()
                    .map(|e| {
                        let tokens = bundle.tokenizer.encode(&e.class_name)?;
                        bundle.encode_text(&tokens, &plan.language_hooks)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            PrototypeMode::ZeroShot(template) => self
                .entries
                .iter()
                .map(|e| {
                    let caption = fill_template(template, &e.class_name)?;
                    let tokens = bundle.tokenizer.encode(&caption)?;
                    bundle.encode_text(&tokens, &[])
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let mut prototypes = Array2::zeros((rows.len(), bundle.joint_dim()));
        for (mut dst, src) in prototypes.rows_mut().into_iter().zip(&rows) {
            let n = src.dot(src).sqrt();
            if n == 0.0 {
                return Err(Error::Numeric("zero-norm class prototype".into()));
            }
            dst.assign(&(src / n));
        }
        self.cache = Some(PrototypeCache {
            source: mode.source(),
            prototypes,
        });
        Ok(())
    }

    /// Recomputes prototypes only if the cache is missing or stale.
    pub fn ensure_prototypes(
        &mut self,
        bundle: &DualEncoderBundle,
        mode: PrototypeMode<'_>,
    ) -> Result<()> {
        let fresh = self
            .cache
            .as_ref()
            .is_some_and(|c| c.source == mode.source());
        if !fresh {
            self.encode_class_prototypes(bundle, mode)?;
        }
        Ok(())
    }
}

/// Probability over registered classes for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub predicted_class: usize,
}

/// Softmax over `logit_scale * cos(image, prototype)`.
pub fn classify(
    image_embedding: &Array1<f64>,
    registry: &ClassRegistry,
    logit_scale: f64,
) -> Result<Prediction> {
    let protos = registry
        .prototypes()
        .ok_or_else(|| Error::protocol("class prototypes have not been encoded"))?;
    let norm = image_embedding.dot(image_embedding).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Numeric(format!(
            "image embedding has norm {norm}"
        )));
    }
    let unit = image_embedding / norm;
    let logits = protos.dot(&unit) * logit_scale;
    let probs = softmax_rows(&logits.insert_axis(ndarray::Axis(0)))
        .row(0)
        .to_vec();
    let best = probs
        .iter()
        .enumerate()
        .fold(0, |best, (i, &p)| if p > probs[best] { i } else { best });
    Ok(Prediction {
        predicted_class: registry.entries[best].class_id,
        probabilities: probs,
    })
}

/// Classifies a raw image with template prototypes and no learned prompts.
pub fn zero_shot_classify(
    bundle: &DualEncoderBundle,
    image: &crate::image::Image,
    registry: &mut ClassRegistry,
    template: &str,
    logit_scale: f64,
) -> Result<Prediction> {
    fill_template(template, "x")?;
    registry.ensure_prototypes(bundle, PrototypeMode::ZeroShot(template))?;
    let patches = bundle.patchify(image)?;
    let emb = bundle.encode_image(&patches, &[])?;
    classify(&emb, registry, logit_scale)
}

/// `logit_scale * cos` between every image row and every prototype row, on a tape.
pub fn cosine_logits(tape: &mut Tape, images: Var, prototypes: Var, logit_scale: f64) -> Var {
    let i = tape.normalize_rows(images);
    let p = tape.normalize_rows(prototypes);
    let pt = tape.transpose(p);
    let sims = tape.matmul(i, pt);
    tape.scale(sims, logit_scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn registry_with(protos: Mat) -> ClassRegistry {
        let mut r = ClassRegistry::new();
        for i in 0..protos.nrows() {
            r.register(10 + i, &format!("class {i}"), 0).unwrap();
        }
        r.cache = Some(PrototypeCache {
            source: PrototypeSource::ZeroShot {
                template: String::new(),
            },
            prototypes: protos,
        });
        r
    }

    #[test]
    fn single_class_is_certain() {
        let r = registry_with(array![[0.6, 0.8]]);
        let p = classify(&array![1.0, -3.0], &r, 1.0).unwrap();
        assert_eq!(p.probabilities, vec![1.0]);
        assert_eq!(p.predicted_class, 10);
    }

    #[test]
    fn identical_prototypes_split_evenly() {
        let r = registry_with(array![[1.0, 0.0], [1.0, 0.0]]);
        let p = classify(&array![0.3, 0.2], &r, 5.0).unwrap();
        assert!((p.probabilities[0] - 0.5).abs() < 1e-12);
        assert!((p.probabilities[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_image_is_numeric_error() {
        let r = registry_with(array![[1.0, 0.0]]);
        assert!(matches!(
            classify(&array![0.0, 0.0], &r, 1.0),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn missing_cache_is_protocol_error() {
        let mut r = ClassRegistry::new();
        r.register(0, "a", 0).unwrap();
        assert!(matches!(
            classify(&array![1.0], &r, 1.0),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn registry_rules() {
        let mut r = ClassRegistry::new();
        r.register(1, "red", 0).unwrap();
        r.register(2, "blue", 1).unwrap();
        assert!(r.register(1, "green", 1).is_err());
        assert!(r.register(3, "green", 0).is_err());
        assert!(matches!(r.register(4, " ", 2), Err(Error::Data(_))));
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn template_needs_placeholder() {
        assert_eq!(
            fill_template("a photo of a <category>", "fine tilted").unwrap(),
            "a photo of a fine tilted"
        );
        assert!(fill_template("a photo", "x").unwrap_err().is_config());
    }
}
