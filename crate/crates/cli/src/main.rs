use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fscil_cli::commands::grid_table;
use fscil_cli::{cmd_ablation, cmd_grid, cmd_report, cmd_run, CliError, Overrides, RunRecord};

#[derive(Parser)]
#[command(name = "fscil", version, about = "Prompt-tuned few-shot class-incremental learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides `seeds`, e.g. `--seed 0,1,2`.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            output: self.output.clone(),
            seeds: self.seed.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration over its seeds.
    Run(RunArgs),
    /// Run every (L, D) cell of the config's grid section.
    Grid(RunArgs),
    /// Run the full method and its three ablations.
    Ablation(RunArgs),
    /// Tabulate every record found under a directory.
    Report {
        records: PathBuf,
        /// Where to write report.csv and report.txt (default: the records directory).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn print_record(r: &RunRecord) {
    let accs: Vec<String> = r.mean_accuracies().iter().map(|a| format!("{a:.2}")).collect();
    println!(
        "{}: sessions [{}] avg {:.2} ({:.2}) pd {:.2} ({:.2}) in {:.1}s -> {}",
        r.label,
        accs.join(", "),
        r.aggregate.avg.mean,
        r.aggregate.avg.se,
        r.aggregate.pd.mean,
        r.aggregate.pd.se,
        r.wall_clock_seconds,
        r.config.output_dir.display()
    );
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => print_record(&cmd_run(&args.config, &args.overrides())?),
        Command::Grid(args) => print!("{}", grid_table(&cmd_grid(&args.config, &args.overrides())?)),
        Command::Ablation(args) => {
            for r in cmd_ablation(&args.config, &args.overrides())? {
                print_record(&r);
            }
        }
        Command::Report { records, output } => print!("{}", cmd_report(&records, output.as_deref())?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
