use std::collections::BTreeMap;
use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Example};
use crate::error::{Error, Result};

/// One session: its new classes, training set and evaluation set.
#[derive(Clone, Debug)]
pub struct Session {
    pub classes: Vec<usize>,
    pub train: Vec<Example>,
    pub eval: Vec<Example>,
}

#[derive(Clone, Debug)]
pub struct SessionStream {
    /// Index 0 is the base session.
    pub sessions: Vec<Session>,
    pub way: usize,
    pub shot: usize,
}

impl SessionStream {
    pub fn num_incremental(&self) -> usize {
        self.sessions.len().saturating_sub(1)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.sessions.iter().map(|s| s.classes.len()).collect()
    }

    /// Classes seen up to and including session `t`.
    pub fn seen_classes(&self, t: usize) -> usize {
        self.sessions[..=t].iter().map(|s| s.classes.len()).sum()
    }
}

/// Standard split shapes of the FSCIL benchmarks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSplit {
    pub total_classes: usize,
    pub base_classes: usize,
    pub way: usize,
    pub shot: usize,
    pub sessions: usize,
}

impl BenchmarkSplit {
    pub const CIFAR100: Self = Self {
        total_classes: 100,
        base_classes: 60,
        way: 5,
        shot: 5,
        sessions: 8,
    };
    pub const MINI_IMAGENET: Self = Self {
        total_classes: 100,
        base_classes: 60,
        way: 5,
        shot: 5,
        sessions: 8,
    };
    pub const CUB200: Self = Self {
        total_classes: 200,
        base_classes: 100,
        way: 10,
        shot: 5,
        sessions: 10,
    };
}

/// Class-name assignment of a published split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub base: Vec<String>,
    pub sessions: Vec<Vec<String>>,
}

fn examples_by_class(examples: &[Example]) -> BTreeMap<usize, Vec<&Example>> {
    let mut map: BTreeMap<usize, Vec<&Example>> = BTreeMap::new();
    for e in examples {
        map.entry(e.class_id).or_default().push(e);
    }
    map
}

/// Builds a stream from an explicit class-to-session assignment.
///
/// The base session trains on every training example of its classes;
/// incremental sessions draw `shot` training examples per class. Each
/// session's evaluation set is the full test split of its classes.
pub fn build_stream_from_assignment(
    dataset: &Dataset,
    assignment: &[Vec<usize>],
    shot: usize,
    seed: u64,
) -> Result<SessionStream> {
    if assignment.is_empty() || shot == 0 {
        return Err(Error::config("a stream needs a base session and shot >= 1"));
    }
    let train = examples_by_class(&dataset.train);
    let test = examples_by_class(&dataset.test);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sessions = Vec::with_capacity(assignment.len());
    for (t, classes) in assignment.iter().enumerate() {
        let mut s_train = Vec::new();
        let mut s_eval = Vec::new();
        for &c in classes {
            let pool = train.get(&c).map(Vec::as_slice).unwrap_or_default();
            if t == 0 {
                if pool.is_empty() {
                    return Err(Error::config(format!("base class {c} has no training data")));
                }
                s_train.extend(pool.iter().map(|&e| e.clone()));
            } else {
                if pool.len() < shot {
                    return Err(Error::config(format!(
                        "class {c} has {} training examples, {shot} shots requested",
                        pool.len()
                    )));
                }
                s_train.extend(pool.choose_multiple(&mut rng, shot).map(|&e| e.clone()));
            }
            let held_out = test.get(&c).map(Vec::as_slice).unwrap_or_default();
            if held_out.is_empty() {
                return Err(Error::config(format!("class {c} has no evaluation data")));
            }
            s_eval.extend(held_out.iter().map(|&e| e.clone()));
        }
        sessions.push(Session {
            classes: classes.clone(),
            train: s_train,
            eval: s_eval,
        });
    }
    let way = assignment.get(1).map_or(0, Vec::len);
    Ok(SessionStream {
        sessions,
        way,
        shot,
    })
}

/// Seeded shuffle of the dataset's classes into a base session and
/// `sessions` incremental sessions of `way` classes each.
pub fn build_session_stream(
    dataset: &Dataset,
    base_classes: usize,
    way: usize,
    shot: usize,
    sessions: usize,
    seed: u64,
) -> Result<SessionStream> {
    let needed = base_classes + way * sessions;
    if dataset.classes.len() < needed {
        return Err(Error::config(format!(
            "dataset has {} classes, the split needs {needed}",
            dataset.classes.len()
        )));
    }
    if base_classes == 0 || (sessions > 0 && way == 0) {
        return Err(Error::config("base_classes and way must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..dataset.classes.len()).collect();
    ids.shuffle(&mut rng);
    let mut assignment = vec![ids[..base_classes].to_vec()];
    for s in 0..sessions {
        let start = base_classes + s * way;
        assignment.push(ids[start..start + way].to_vec());
    }
    let mut stream = build_stream_from_assignment(dataset, &assignment, shot, seed ^ 0xa5a5)?;
    stream.way = way;
    Ok(stream)
}

/// Applies a manifest of class names to a dataset.
pub fn build_stream_from_manifest(
    dataset: &Dataset,
    manifest: &SplitManifest,
    shot: usize,
    seed: u64,
) -> Result<SessionStream> {
    let resolve = |names: &[String]| -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                dataset
                    .class_id(n)
                    .ok_or_else(|| Error::config(format!("manifest class '{n}' not in dataset")))
            })
            .collect()
    };
    let mut assignment = vec![resolve(&manifest.base)?];
    for s in &manifest.sessions {
        assignment.push(resolve(s)?);
    }
    build_stream_from_assignment(dataset, &assignment, shot, seed)
}

/// A broken FSCIL stream requirement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// A class appears in two sessions.
    ClassOverlap { class_id: usize, sessions: (usize, usize) },
    /// `|C_0| <= |C_t|`.
    BaseClassesNotLarger { session: usize },
    /// `|D_0| <= |D_t|`.
    BaseDataNotLarger { session: usize },
    /// `|C_t| != |C_1|`.
    UnequalClassCount { session: usize },
    /// `|D_t| != |D_1|`.
    UnequalDataSize { session: usize },
    EmptyStream,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ClassOverlap { class_id, sessions } => write!(
                f,
                "class {class_id} appears in sessions {} and {}",
                sessions.0, sessions.1
            ),
            Violation::BaseClassesNotLarger { session } => {
                write!(f, "session {session} has at least as many classes as the base")
            }
            Violation::BaseDataNotLarger { session } => write!(
                f,
                "session {session} has at least as many training examples as the base"
            ),
            Violation::UnequalClassCount { session } => write!(
                f,
                "session {session} class count differs from session 1"
            ),
            Violation::UnequalDataSize { session } => write!(
                f,
                "session {session} training size differs from session 1"
            ),
            Violation::EmptyStream => write!(f, "stream has no sessions"),
        }
    }
}

/// Checks disjointness, base dominance and uniform incremental sizes.
pub fn validate_stream(stream: &SessionStream) -> std::result::Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    if stream.sessions.is_empty() {
        return Err(vec![Violation::EmptyStream]);
    }
    let mut first_seen: BTreeMap<usize, usize> = BTreeMap::new();
    for (t, s) in stream.sessions.iter().enumerate() {
        for &c in &s.classes {
            if let Some(&prev) = first_seen.get(&c) {
                v.push(Violation::ClassOverlap {
                    class_id: c,
                    sessions: (prev, t),
                });
            } else {
                first_seen.insert(c, t);
            }
        }
    }
    let base = &stream.sessions[0];
    for (t, s) in stream.sessions.iter().enumerate().skip(1) {
        if base.classes.len() <= s.classes.len() {
            v.push(Violation::BaseClassesNotLarger { session: t });
        }
        if base.train.len() <= s.train.len() {
            v.push(Violation::BaseDataNotLarger { session: t });
        }
    }
    if let Some(first) = stream.sessions.get(1) {
        for (t, s) in stream.sessions.iter().enumerate().skip(2) {
            if s.classes.len() != first.classes.len() {
                v.push(Violation::UnequalClassCount { session: t });
            }
            if s.train.len() != first.train.len() {
                v.push(Violation::UnequalDataSize { session: t });
            }
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}
