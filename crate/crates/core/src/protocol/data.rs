//! Procedurally generated grating images whose class is a (orientation,
//! spatial frequency) pair, named by two words so that class names are
//! compositional and unseen combinations can be recognized zero-shot.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

const ORIENTATION_WORDS: [&str; 8] = [
    "level", "raked", "tilted", "slanted", "upright", "leaning", "sloped", "canted",
];
const FREQUENCY_WORDS: [&str; 6] = ["wide", "broad", "medium", "narrow", "fine", "dense"];

/// A synthetic class: a sinusoidal grating.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    /// Radians in `[0, pi)`.
    pub orientation: f64,
    /// Cycles across the image width.
    pub frequency: f64,
}

/// All orientation × frequency combinations, orientation-major.
pub fn pattern_catalog(orientations: usize, frequencies: usize) -> Vec<ClassSpec> {
    let word = |list: &[&str], i: usize, stem: &str| {
        list.get(i)
            .map(|w| w.to_string())
            .unwrap_or_else(|| format!("{stem}{i}"))
    };
    let mut out = Vec::with_capacity(orientations * frequencies);
    for o in 0..orientations {
        for f in 0..frequencies {
            out.push(ClassSpec {
                name: format!(
                    "{} {}",
                    word(&ORIENTATION_WORDS, o, "tilt"),
                    word(&FREQUENCY_WORDS, f, "band")
                ),
                orientation: PI * o as f64 / orientations as f64,
                frequency: 1.0 + f as f64 * 0.75,
            });
        }
    }
    out
}

/// The 8 × 5 catalog used by the desk-scale benchmark.
pub fn default_catalog() -> Vec<ClassSpec> {
    pattern_catalog(8, 5)
}

/// Every word appearing in the class names of `catalog`.
pub fn catalog_words(catalog: &[ClassSpec]) -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    for c in catalog {
        for w in c.name.split_whitespace() {
            if !words.iter().any(|x| x == w) {
                words.push(w.to_string());
            }
        }
    }
    words
}

/// A labelled image.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub image: Image,
    pub class_id: usize,
}

/// Rendering parameters for synthetic examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: usize,
    /// Examples per class held out as the evaluation split.
    pub test_per_class: usize,
    pub image_size: usize,
    pub noise_std: f64,
    /// Constant added to every pixel.
    pub brightness: f64,
    /// Multiplier on the grating amplitude.
    pub contrast: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            per_class: 40,
            test_per_class: 10,
            image_size: 16,
            noise_std: 0.3,
            brightness: 0.0,
            contrast: 1.0,
            seed: 3,
        }
    }
}

/// Classes with their train and test splits; `class_id` indexes `classes`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub classes: Vec<ClassSpec>,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub image_size: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn all_examples(&self) -> impl Iterator<Item = &Example> {
        self.train.iter().chain(&self.test)
    }
}

/// Draws one grating image of `class`.
pub fn render(class: &ClassSpec, spec: &SyntheticSpec, rng: &mut impl Rng) -> Image {
    let (size, noise_std) = (spec.image_size, spec.noise_std);
    let noise = Normal::new(0.0, noise_std.max(0.0)).expect("finite std");
    let theta = class.orientation + rng.random_range(-0.05..0.05);
    let phase = rng.random_range(-PI / 4.0..PI / 4.0);
    let amp = spec.contrast * rng.random_range(0.8..1.2);
    let (c, s) = (theta.cos(), theta.sin());
    let k = 2.0 * PI * class.frequency / size as f64;
    Image::from_shape_fn((1, size, size), |(_, y, x)| {
        let u = x as f64 * c + y as f64 * s;
        let v = spec.brightness + amp * (k * u + phase).cos();
        if noise_std > 0.0 {
            v + noise.sample(rng)
        } else {
            v
        }
    })
}

/// Renders `spec.per_class` examples of each given class.
pub fn render_dataset(classes: &[ClassSpec], spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.test_per_class >= spec.per_class {
        return Err(Error::config(format!(
            "test_per_class {} must be below per_class {}",
            spec.test_per_class, spec.per_class
        )));
    }
    if spec.image_size == 0 {
        return Err(Error::config("image_size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (id, class) in classes.iter().enumerate() {
        for i in 0..spec.per_class {
            let ex = Example {
                image: render(class, spec, &mut rng),
                class_id: id,
            };
            if i < spec.per_class - spec.test_per_class {
                train.push(ex);
            } else {
                test.push(ex);
            }
        }
    }
    Ok(Dataset {
        classes: classes.to_vec(),
        train,
        test,
        image_size: spec.image_size,
    })
}

/// Picks `spec.num_classes` classes from `vocab` with a seeded shuffle and
/// renders them.
pub fn synthesize_dataset(vocab: &[ClassSpec], spec: &SyntheticSpec) -> Result<Dataset> {
    if vocab.len() < spec.num_classes {
        return Err(Error::config(format!(
            "vocabulary of {} classes cannot supply {}",
            vocab.len(),
            spec.num_classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x5eed));
    let mut chosen: Vec<ClassSpec> = vocab.to_vec();
    chosen.shuffle(&mut rng);
    chosen.truncate(spec.num_classes);
    render_dataset(&chosen, spec)
}
