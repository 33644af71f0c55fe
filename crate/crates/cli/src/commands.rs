//! The `run`, `grid`, `ablation` and `report` subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fscil_core::benchmark::{prepare_toy_benchmark, toy_dataset, toy_prompt_bank};
use fscil_core::encoder::BundleFileAdapter;
use fscil_core::protocol::{build_stream_from_manifest, round2, Dataset, SplitManifest};
use fscil_core::trainer::Ablation;
use fscil_core::{run_fscil, DualEncoderBundle, GPromptBank, SessionStream};

use crate::config::{Backbone, PromptInit, RunConfig, StreamSpec};
use crate::error::{CliError, CliResult};
use crate::plot::{accuracy_chart, Series};
use crate::record::{metrics_csv, session_label, write_atomic, RunRecord, SeedResult, RECORD_FILE};

/// Command-line overrides applied on top of a loaded config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub output: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> CliResult<()> {
        if let Some(o) = &self.output {
            cfg.output_dir = o.clone();
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        cfg.validate()
    }
}

/// Backbone, data and session stream shared by every run of a command.
pub struct Prepared {
    pub bundle: DualEncoderBundle,
    pub dataset: Dataset,
    pub stream: SessionStream,
}

impl Prepared {
    pub fn class_names(&self) -> Vec<String> {
        self.dataset.class_names()
    }
}

pub fn prepare(cfg: &RunConfig) -> CliResult<Prepared> {
    let (bundle, dataset) = match &cfg.backbone {
        Backbone::Toy => {
            let b = prepare_toy_benchmark(&cfg.toy)?;
            (b.bundle, b.dataset)
        }
        Backbone::Adapter(path) => {
            let (_, bundle) = BundleFileAdapter::open(path).map_err(|e| match e {
                fscil_core::Error::Io(io) => CliError::Config(format!("{}: {io}", path.display())),
                other => other.into(),
            })?;
            (bundle, toy_dataset(&cfg.toy)?)
        }
    };
    let stream = match &cfg.stream {
        StreamSpec::Synthetic(s) => s.build(&dataset)?,
        StreamSpec::Manifest(m) => {
            let text = std::fs::read_to_string(&m.path)
                .map_err(|e| CliError::Config(format!("{}: {e}", m.path.display())))?;
            let manifest: SplitManifest = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", m.path.display())))?;
            build_stream_from_manifest(&dataset, &manifest, m.shot, m.seed)?
        }
    };
    Ok(Prepared {
        bundle,
        dataset,
        stream,
    })
}

fn initial_bank(cfg: &RunConfig, bundle: &DualEncoderBundle, seed: u64) -> CliResult<GPromptBank> {
    let bank = match cfg.prompt_init {
        PromptInit::Template => toy_prompt_bank(bundle, cfg.length, cfg.depth, seed)?,
        PromptInit::Random => GPromptBank::init(
            cfg.length,
            cfg.depth,
            bundle.language_dim(),
            bundle.vision_dim(),
            bundle.num_layers(),
            seed,
        )?,
    };
    Ok(bank)
}

/// Runs every seed of `cfg` on a prepared setup and writes the record,
/// metrics, per-seed curves, training logs and final prompts to
/// `cfg.output_dir`.
pub fn execute(cfg: &RunConfig, prepared: &Prepared) -> CliResult<RunRecord> {
    let start = Instant::now();
    let fscil = cfg.fscil_config();
    let names = prepared.class_names();
    let dir = &cfg.output_dir;
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let bank = initial_bank(cfg, &prepared.bundle, seed)?;
        let out = run_fscil(&prepared.bundle, bank, &prepared.stream, &names, &fscil, seed)?;

        write_atomic(
            &dir.join(format!("metrics_seed_{seed}.csv")),
            metrics_csv(&out.metrics.session_accuracies).as_bytes(),
        )?;
        let mut log = String::new();
        for rec in out.logs.iter().flat_map(|l| &l.records) {
            log.push_str(&serde_json::to_string(rec).expect("log record serializes"));
            log.push('\n');
        }
        write_atomic(&dir.join(format!("train_log_seed_{seed}.jsonl")), log.as_bytes())?;
        let mut bank_bytes = Vec::new();
        out.bank.write_to(&mut bank_bytes)?;
        write_atomic(&dir.join(format!("prompts_seed_{seed}.bin")), &bank_bytes)?;

        per_seed.push(SeedResult {
            seed,
            metrics: out.metrics,
        });
    }
    let record = RunRecord::new(
        cfg.label(),
        cfg.clone(),
        per_seed,
        start.elapsed().as_secs_f64(),
    )?;
    record.save(dir)?;
    Ok(record)
}

pub fn cmd_run(config: &Path, overrides: &Overrides) -> CliResult<RunRecord> {
    let mut cfg = RunConfig::load(config)?;
    overrides.apply(&mut cfg)?;
    let prepared = prepare(&cfg)?;
    execute(&cfg, &prepared)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub length: usize,
    pub depth: usize,
    pub avg_mean: f64,
    pub avg_se: f64,
    pub argmax: bool,
}

/// Index of the best cell; ties go to the smaller D, then the smaller L.
pub fn grid_argmax(cells: &[GridCell]) -> Option<usize> {
    (0..cells.len()).min_by(|&a, &b| {
        let (x, y) = (&cells[a], &cells[b]);
        y.avg_mean
            .total_cmp(&x.avg_mean)
            .then(x.depth.cmp(&y.depth))
            .then(x.length.cmp(&y.length))
    })
}

pub fn grid_table(cells: &[GridCell]) -> String {
    let mut out = format!("{:>4} {:>4} {:>16}\n", "L", "D", "Avg (SE)");
    for c in cells {
        let _ = writeln!(
            out,
            "{:>4} {:>4} {:>16}{}",
            c.length,
            c.depth,
            format!("{:.2} ({:.2})", c.avg_mean, c.avg_se),
            if c.argmax { "  *" } else { "" }
        );
    }
    out
}

pub fn cmd_grid(config: &Path, overrides: &Overrides) -> CliResult<Vec<GridCell>> {
    let mut cfg = RunConfig::load(config)?;
    overrides.apply(&mut cfg)?;
    let grid = cfg
        .grid
        .clone()
        .ok_or_else(|| CliError::Config("grid needs a \"grid\" section with L_list and D_list".into()))?;
    let prepared = prepare(&cfg)?;
    let mut cells = Vec::new();
    for &length in &grid.lengths {
        for &depth in &grid.depths {
            let mut cell_cfg = cfg.clone();
            cell_cfg.length = length;
            cell_cfg.depth = depth;
            cell_cfg.grid = None;
            cell_cfg.label = Some(format!("L{length}_D{depth}"));
            cell_cfg.output_dir = cfg.output_dir.join("grid").join(format!("L{length}_D{depth}"));
            cell_cfg.validate()?;
            let record = execute(&cell_cfg, &prepared)?;
            cells.push(GridCell {
                length,
                depth,
                avg_mean: record.aggregate.avg.mean,
                avg_se: record.aggregate.avg.se,
                argmax: false,
            });
        }
    }
    if let Some(best) = grid_argmax(&cells) {
        cells[best].argmax = true;
    }
    let mut csv = String::from("L,D,avg_mean,avg_se,argmax\n");
    for c in &cells {
        let _ = writeln!(csv, "{},{},{},{},{}", c.length, c.depth, c.avg_mean, c.avg_se, c.argmax);
    }
    write_atomic(&cfg.output_dir.join("grid.csv"), csv.as_bytes())?;
    write_atomic(&cfg.output_dir.join("grid.txt"), grid_table(&cells).as_bytes())?;
    Ok(cells)
}

pub const ABLATION_VARIANTS: [Ablation; 4] = [
    Ablation::Full,
    Ablation::NoAccumulation,
    Ablation::NoVisionPrompts,
    Ablation::NoRegularization,
];

pub fn cmd_ablation(config: &Path, overrides: &Overrides) -> CliResult<Vec<RunRecord>> {
    let mut cfg = RunConfig::load(config)?;
    overrides.apply(&mut cfg)?;
    if cfg.optimizer.is_none() {
        return Err(CliError::Config("ablation runs train prompts and need an optimizer section".into()));
    }
    let prepared = prepare(&cfg)?;
    let mut records = Vec::with_capacity(ABLATION_VARIANTS.len());
    for ablation in ABLATION_VARIANTS {
        let mut v = cfg.clone();
        v.ablation = ablation;
        v.label = Some(ablation.name().into());
        v.grid = None;
        v.output_dir = cfg.output_dir.join("ablation").join(ablation.name());
        records.push(execute(&v, &prepared)?);
    }

    let mut csv = String::from("variant,session,t,A_t\n");
    for r in &records {
        for (t, a) in r.mean_accuracies().iter().enumerate() {
            let _ = writeln!(csv, "{},{},{t},{a}", r.label, session_label(t));
        }
    }
    write_atomic(&cfg.output_dir.join("ablation.csv"), csv.as_bytes())?;
    let curves: Vec<Vec<f64>> = records.iter().map(RunRecord::mean_accuracies).collect();
    let series: Vec<Series<'_>> = records
        .iter()
        .zip(&curves)
        .map(|(r, c)| Series {
            name: &r.label,
            values: c,
        })
        .collect();
    let svg = accuracy_chart("Per-session accuracy by variant", &series);
    write_atomic(&cfg.output_dir.join("ablation.svg"), svg.as_bytes())?;
    Ok(records)
}

/// Every `record.json` below `dir`, in path order.
pub fn find_records(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut pending = vec![dir.to_path_buf()];
    while let Some(d) = pending.pop() {
        let entries = std::fs::read_dir(&d).map_err(|e| CliError::io(&d, e))?;
        for entry in entries {
            let path = entry.map_err(|e| CliError::io(&d, e))?.path();
            if path.is_dir() {
                pending.push(path);
            } else if path.file_name().is_some_and(|n| n == RECORD_FILE) {
                found.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Text table and CSV of session accuracies with Avg and PD, two decimals.
/// Records with fewer sessions leave trailing cells blank.
pub fn render_report(records: &[RunRecord]) -> (String, String) {
    let sessions = records
        .iter()
        .map(|r| r.aggregate.session_accuracies.len())
        .max()
        .unwrap_or(0);
    let name_w = records
        .iter()
        .map(|r| r.label.len())
        .max()
        .unwrap_or(0)
        .max(3);
    let cols: Vec<String> = (0..sessions).map(session_label).collect();

    let mut text = format!("{:<name_w$}", "run");
    let mut csv = String::from("run");
    for c in &cols {
        let _ = write!(text, " {c:>10}");
        let _ = write!(csv, ",{c}");
    }
    let _ = writeln!(text, " {:>8} {:>8}", "Avg", "PD");
    csv.push_str(",avg,pd\n");

    for r in records {
        let accs = r.mean_accuracies();
        let _ = write!(text, "{:<name_w$}", r.label);
        csv.push_str(&r.label);
        for t in 0..sessions {
            match accs.get(t) {
                Some(a) => {
                    let _ = write!(text, " {:>10.2}", round2(*a));
                    let _ = write!(csv, ",{:.2}", round2(*a));
                }
                None => {
                    let _ = write!(text, " {:>10}", "");
                    csv.push(',');
                }
            }
        }
        let (avg, pd) = (round2(r.aggregate.avg.mean), round2(r.aggregate.pd.mean));
        let _ = writeln!(text, " {avg:>8.2} {pd:>8.2}");
        let _ = writeln!(csv, ",{avg:.2},{pd:.2}");
    }
    (text, csv)
}

/// Loads every record under `dir` and writes `report.csv` and `report.txt`
/// to `output` (default: `dir`). Returns the text table.
pub fn cmd_report(dir: &Path, output: Option<&Path>) -> CliResult<String> {
    let paths = find_records(dir)?;
    if paths.is_empty() {
        return Err(CliError::Config(format!("no {RECORD_FILE} found under {}", dir.display())));
    }
    let records = paths
        .iter()
        .map(|p| RunRecord::load(p))
        .collect::<CliResult<Vec<_>>>()?;
    let (text, csv) = render_report(&records);
    let out = output.unwrap_or(dir);
    write_atomic(&out.join("report.csv"), csv.as_bytes())?;
    write_atomic(&out.join("report.txt"), text.as_bytes())?;
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(length: usize, depth: usize, avg_mean: f64) -> GridCell {
        GridCell {
            length,
            depth,
            avg_mean,
            avg_se: 0.0,
            argmax: false,
        }
    }

    #[test]
    fn argmax_prefers_best_then_smaller_depth_then_length() {
        let cells = vec![cell(1, 1, 50.0), cell(2, 1, 60.0), cell(1, 2, 60.0)];
        assert_eq!(grid_argmax(&cells), Some(1));
        let cells = vec![cell(2, 2, 60.0), cell(1, 2, 60.0), cell(2, 3, 60.0)];
        assert_eq!(grid_argmax(&cells), Some(1));
        let cells = vec![cell(2, 2, 60.0), cell(1, 2, 61.0)];
        assert_eq!(grid_argmax(&cells), Some(1));
        assert_eq!(grid_argmax(&[]), None);
    }

    #[test]
    fn grid_table_marks_one_cell() {
        let mut cells = vec![cell(1, 1, 50.0), cell(2, 1, 60.0)];
        cells[1].argmax = true;
        let t = grid_table(&cells);
        assert_eq!(t.matches('*').count(), 1);
        assert!(t.contains("60.00 (0.00)  *"));
    }
}
