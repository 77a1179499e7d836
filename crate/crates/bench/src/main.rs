use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dric_bench::config::ExperimentConfig;
use dric_bench::toy::toy_comparison;
use dric_bench::tune::{tune_trace, TuneTarget};
use dric_bench::{run_replicates, BenchError, Result};
use dric_core::data::{load_classification_csv, LabelColumn};
use dric_core::ClassificationTable;

#[derive(Parser)]
#[command(name = "dric", version, about = "Off-policy evaluation benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Standardize a classification CSV and re-index its labels.
    Convert {
        #[arg(long)]
        input: PathBuf,
        /// Label column: name, 0-based index or `last`.
        #[arg(long, default_value = "last")]
        label_col: String,
        #[arg(long)]
        no_header: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the replicated benchmark.
    Run(RunArgs),
    /// Compare the weight and KL switching rules on the two-action toy problem.
    Toy {
        #[arg(long, default_value_t = 50)]
        n_train: usize,
        #[arg(long, default_value_t = 50)]
        n_test: usize,
        #[arg(long, default_value_t = 12.65)]
        tau_w: f64,
        #[arg(long, default_value_t = 2.20)]
        tau_kl: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the estimated-MSE curve for the bandwidth or the KL threshold.
    Tune {
        #[arg(long)]
        dataset: PathBuf,
        /// `bandwidth` or `tau`.
        #[arg(long)]
        what: String,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value = "last")]
        label_col: String,
        #[arg(long)]
        no_header: bool,
        #[arg(long)]
        reward: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` file; flags given alongside override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long)]
    reward: Option<String>,
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long)]
    replicates: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    label_col: Option<String>,
    #[arg(long)]
    no_header: bool,
    #[arg(long)]
    base_seed: Option<String>,
    /// Record per-estimator wall time in `wall_ms`.
    #[arg(long)]
    timing: bool,
    /// Any other config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out: Option<String>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load(path: &Path, label_col: &str, no_header: bool) -> Result<ClassificationTable<f64>> {
    let label: LabelColumn = label_col.parse().expect("infallible");
    Ok(load_classification_csv(path, &label, !no_header)?)
}

fn run_config(args: RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    let flags = [
        ("dataset", &args.dataset),
        ("estimators", &args.estimators),
        ("reward", &args.reward),
        ("sizes", &args.sizes),
        ("replicates", &args.replicates),
        ("seeds", &args.seeds),
        ("label-col", &args.label_col),
        ("base-seed", &args.base_seed),
        ("out", &args.out),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    if args.no_header {
        cfg.has_header = false;
    }
    if args.timing {
        cfg.timing = true;
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| BenchError::Config(format!("`--set {kv}` is not key=value")))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Convert {
            input,
            label_col,
            no_header,
            out,
        } => {
            let table = load(&input, &label_col, no_header)?;
            table.write_csv(output(Some(&out))?)?;
            eprintln!(
                "converted {} rows, {} features, {} classes",
                table.len(),
                table.dim(),
                table.action_count()
            );
        }
        Command::Run(args) => {
            let cfg = run_config(args)?;
            eprintln!(
                "running {} estimators on {}: sizes {:?}, {} replicates, {} seeds; bandit samples drawn from the test split",
                cfg.estimators.len(),
                cfg.dataset.display(),
                cfg.sizes,
                cfg.replicates,
                cfg.seeds
            );
            let result = run_replicates(&cfg)?;
            result.write_csv(output(cfg.out.as_deref())?)?;
            let failed = result.rows.iter().filter(|r| !r.error.is_empty()).count();
            if failed > 0 {
                eprintln!("{failed} rows carry estimator errors; see the `error` column");
            }
        }
        Command::Toy {
            n_train,
            n_test,
            tau_w,
            tau_kl,
            seed,
            out,
        } => {
            let report = toy_comparison(n_train, n_test, tau_w, tau_kl, seed)?;
            report.write_csv(output(out.as_deref())?)?;
            eprintln!(
                "{} of {} samples disagree (tau_w = {tau_w}, tau_kl = {tau_kl})",
                report.disagreements(),
                report.rows.len()
            );
        }
        Command::Tune {
            dataset,
            what,
            n,
            label_col,
            no_header,
            reward,
            out,
        } => {
            let what: TuneTarget = what.parse()?;
            let mut cfg = ExperimentConfig::default();
            cfg.set("dataset", &dataset.to_string_lossy())?;
            if let Some(r) = reward {
                cfg.set("reward", &r)?;
            }
            let table = load(&dataset, &label_col, no_header)?;
            let sel = tune_trace(&cfg, &table, what, n)?;
            sel.write_trace(output(out.as_deref())?)?;
            eprintln!("selected {}", sel.value);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
