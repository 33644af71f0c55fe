//! Persisted results of one configuration over one or more seeds.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fscil_core::SessionMetrics;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const RECORD_FILE: &str = "record.json";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    /// Sample standard deviation over seeds divided by sqrt(seeds); 0 for a
    /// single seed.
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        if values.len() < 2 {
            return Self { mean, se: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self {
            mean,
            se: var.sqrt() / n.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub metrics: SessionMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub session_accuracies: Vec<MeanSe>,
    pub avg: MeanSe,
    pub pd: MeanSe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub config: RunConfig,
    pub per_seed: Vec<SeedResult>,
    pub aggregate: Aggregate,
    pub wall_clock_seconds: f64,
}

impl RunRecord {
    pub fn new(
        label: String,
        config: RunConfig,
        per_seed: Vec<SeedResult>,
        wall_clock_seconds: f64,
    ) -> CliResult<Self> {
        let aggregate = aggregate(&per_seed)?;
        Ok(Self {
            label,
            config,
            per_seed,
            aggregate,
            wall_clock_seconds,
        })
    }

    /// Mean accuracy of each session over seeds.
    pub fn mean_accuracies(&self) -> Vec<f64> {
        self.aggregate
            .session_accuracies
            .iter()
            .map(|m| m.mean)
            .collect()
    }

    pub fn save(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(RECORD_FILE);
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Runtime(format!("serializing record: {e}")))?;
        write_atomic(&path, json.as_bytes())?;
        write_atomic(&dir.join(METRICS_FILE), metrics_csv(&self.mean_accuracies()).as_bytes())?;
        Ok(path)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }
}

fn aggregate(per_seed: &[SeedResult]) -> CliResult<Aggregate> {
    let first = per_seed
        .first()
        .ok_or_else(|| CliError::Runtime("a record needs at least one seed".into()))?;
    let sessions = first.metrics.session_accuracies.len();
    if per_seed
        .iter()
        .any(|r| r.metrics.session_accuracies.len() != sessions)
    {
        return Err(CliError::Runtime("seeds disagree on the number of sessions".into()));
    }
    let column = |f: &dyn Fn(&SessionMetrics) -> f64| {
        MeanSe::of(&per_seed.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>())
    };
    Ok(Aggregate {
        session_accuracies: (0..sessions)
            .map(|t| column(&|m| m.session_accuracies[t]))
            .collect(),
        avg: column(&|m| m.avg),
        pd: column(&|m| m.pd),
    })
}

/// `base` for session 0, `session_<t>` afterwards.
pub fn session_label(t: usize) -> String {
    if t == 0 {
        "base".into()
    } else {
        format!("session_{t}")
    }
}

/// `session,t,A_t,pd_so_far` rows, full precision.
pub fn metrics_csv(accuracies: &[f64]) -> String {
    let mut out = String::from("session,t,A_t,pd_so_far\n");
    let a0 = accuracies.first().copied().unwrap_or(0.0);
    for (t, a) in accuracies.iter().enumerate() {
        let _ = writeln!(out, "{},{t},{a},{}", session_label(t), a0 - a);
    }
    out
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Runtime(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_standard_error() {
        let m = MeanSe::of(&[70.0]);
        assert_eq!((m.mean, m.se), (70.0, 0.0));
        // sd of (1, 2, 3) is 1
        let m = MeanSe::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.se - 1.0 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn csv_rows() {
        let csv = metrics_csv(&[80.0, 75.5, 70.25]);
        assert_eq!(
            csv,
            "session,t,A_t,pd_so_far\nbase,0,80,0\nsession_1,1,75.5,4.5\nsession_2,2,70.25,9.75\n"
        );
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/file.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        let leftovers: Vec<_> = std::fs::read_dir(p.parent().unwrap())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().ends_with(".tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }
}
