mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use apstream::data::{audit_variable_schedule, subset_top_categories};
use apstream::harness::{
    aggregate_median, export, read_records, read_schedules, run_experiment, run_experiment_with, write_medians,
    Algorithm, MedianRow, Setting, MEDIANS_FILE,
};
use apstream::{load_csv, Dataset, DatasetSchema, Normalization};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use config::{FileConfig, Scalar, Seeds};

#[derive(Parser)]
#[command(name = "apstream", version, about = "Incremental affinity propagation benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run AP, IAPNA and/or APP over seeded arrival schedules and write results.
    Run(Box<RunArgs>),
    /// Recompute per-step medians from an existing results directory.
    Aggregate(AggregateArgs),
    /// Check a stored schedules file against a dataset.
    ValidateSchedule(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML file supplying any of the options below; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV file: feature columns followed by a category column.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// JSON sidecar declaring header and categorical columns.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// The dataset file has no header row.
    #[arg(long)]
    no_header: bool,
    /// Algorithms to run, comma separated.
    #[arg(long = "algorithm", value_delimiter = ',')]
    algorithms: Vec<Algorithm>,
    /// uniform, variable or ablation.
    #[arg(long)]
    setting: Option<Setting>,
    /// A count (`100` = seeds 0..100), a range `3..10` or a list `1,4,9`.
    #[arg(long)]
    seeds: Option<Seeds>,
    #[arg(long)]
    steps: Option<usize>,
    /// Uniform setting: objects at step 0 (default: all but the later batches).
    #[arg(long)]
    first_n: Option<usize>,
    /// Uniform setting: objects per later step.
    #[arg(long)]
    step_n: Option<usize>,
    /// Variable setting: minimum objects per active category and step.
    #[arg(long)]
    q: Option<usize>,
    /// Pruning threshold for APP; `inf` disables pruning.
    #[arg(long)]
    th_gamma: Option<String>,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    convergence_window: Option<usize>,
    /// `median`, `minimum` or a fixed number.
    #[arg(long, allow_hyphen_values = true)]
    preference: Option<String>,
    /// min-max, z-score or none.
    #[arg(long)]
    normalization: Option<Normalization>,
    /// Replay schedules from a schedules.jsonl file instead of generating them.
    #[arg(long)]
    schedule_file: Option<PathBuf>,
    #[arg(long, env = "APSTREAM_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    /// Run seeds one after another instead of in parallel.
    #[arg(long)]
    sequential: bool,
}

impl RunArgs {
    fn to_file_config(&self) -> FileConfig {
        FileConfig {
            dataset: self.dataset.clone(),
            schema: self.schema.clone(),
            no_header: self.no_header.then_some(true),
            algorithms: (!self.algorithms.is_empty()).then(|| self.algorithms.clone()),
            setting: self.setting,
            seeds: self.seeds.clone(),
            steps: self.steps,
            first_n: self.first_n,
            step_n: self.step_n,
            q: self.q,
            th_gamma: self.th_gamma.clone().map(Scalar::Text),
            damping: self.damping,
            max_iterations: self.max_iterations,
            convergence_window: self.convergence_window,
            preference: self.preference.clone().map(Scalar::Text),
            normalization: self.normalization,
            schedule_file: self.schedule_file.clone(),
            output_dir: self.output_dir.clone(),
            sequential: self.sequential.then_some(true),
            subset: None,
        }
    }
}

#[derive(Args)]
struct AggregateArgs {
    /// Directory holding records.csv (and optionally timings.csv).
    #[arg(long)]
    input: PathBuf,
    /// Where to write the medians (default: <input>/medians.csv).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    no_header: bool,
    /// schedules.jsonl as written by `run`.
    #[arg(long)]
    schedules: PathBuf,
    /// Override the q stored with each schedule.
    #[arg(long)]
    q: Option<usize>,
}

fn load_dataset(path: &Path, schema: &DatasetSchema) -> Result<Dataset> {
    load_csv(path, schema).with_context(|| format!("loading {}", path.display()))
}

/// Summary table on stdout; a closed pipe is not an error.
fn print_medians(rows: &[MedianRow]) {
    let mut out = std::io::stdout().lock();
    let _ = (|| -> std::io::Result<()> {
        writeln!(
            out,
            "{:<6} {:>4} {:>7} {:>7} {:>6} {:>6} {:>10} {:>10}",
            "alg", "step", "PUR", "NMI", "NC", "NI", "CT[s]", "MU[MB]"
        )?;
        for r in rows.iter().filter(|r| r.step > 0) {
            writeln!(
                out,
                "{:<6} {:>4} {:>7.3} {:>7.3} {:>6} {:>6} {:>10.4} {:>10.3}",
                r.algorithm.name(),
                r.step,
                r.purity,
                r.nmi,
                r.clusters,
                r.iterations,
                r.ct_seconds,
                r.memory_mb
            )?;
        }
        Ok(())
    })();
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let file = match &args.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let plan = file.overlay(args.to_file_config()).resolve()?;

    let mut ds = load_dataset(&plan.dataset, &plan.schema)?;
    if let Some(subset) = &plan.subset {
        let mut rng = ChaCha8Rng::seed_from_u64(subset.seed);
        ds = subset_top_categories(&ds, subset.top_k, subset.size()?, &mut rng)?;
    }
    eprintln!(
        "{}: {} objects, {} features, {} categories; {} seeds",
        ds.name,
        ds.len(),
        ds.dim(),
        ds.category_count(),
        plan.experiment.seeds.len()
    );

    let out = match &plan.schedule_file {
        Some(path) => {
            let stored = read_schedules(path)?;
            run_experiment_with(&plan.experiment, &ds, &stored)?
        }
        None => run_experiment(&plan.experiment, &ds)?,
    };
    for f in &out.failures {
        eprintln!("seed {} failed: {}", f.seed, f.message);
    }
    let paths = export(&out, &plan.output_dir)?;
    print_medians(&aggregate_median(&out.records));
    eprintln!("results written to {}", plan.output_dir.display());
    if let Some(p) = paths.failures {
        eprintln!("seed failures listed in {}", p.display());
    }
    Ok(if out.records.is_empty() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn aggregate(args: AggregateArgs) -> Result<ExitCode> {
    let records = read_records(&args.input)?;
    let medians = aggregate_median(&records);
    let output = args.output.unwrap_or_else(|| args.input.join(MEDIANS_FILE));
    write_medians(&output, &medians)?;
    print_medians(&medians);
    eprintln!("medians written to {}", output.display());
    Ok(ExitCode::SUCCESS)
}

fn validate(args: ValidateArgs) -> Result<ExitCode> {
    let mut schema = match &args.schema {
        Some(p) => DatasetSchema::from_path(p)?,
        None => DatasetSchema::default(),
    };
    if args.no_header {
        schema.header = false;
    }
    let ds = load_dataset(&args.dataset, &schema)?;
    let records = read_schedules(&args.schedules)?;
    let mut bad = 0;
    for rec in &records {
        let mut problems: Vec<String> = Vec::new();
        if let Err(e) = rec.schedule().check(ds.len()) {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            if let Some(schemas) = &rec.schemas {
                let q = args.q.or(rec.q).unwrap_or(0);
                problems.extend(
                    audit_variable_schedule(&rec.schedule(), schemas, &ds.gold, q)
                        .iter()
                        .map(|v| v.to_string()),
                );
            }
        }
        if problems.is_empty() {
            println!("seed {}: ok ({} steps)", rec.seed, rec.batches.len());
        } else {
            bad += 1;
            for p in problems {
                println!("seed {}: {p}", rec.seed);
            }
        }
    }
    println!("{} schedules, {bad} with violations", records.len());
    Ok(if bad == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(*a),
        Command::Aggregate(a) => aggregate(a),
        Command::ValidateSchedule(a) => validate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
