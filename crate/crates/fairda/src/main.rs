//! Command-line front end: generate synthetic tasks, train, evaluate,
//! run the ablation grid, and pretty-print saved reports.
//!
//! Exit codes: 0 success, 1 usage or bad config, 2 numeric failure,
//! 3 I/O or data ingestion failure.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fairda::alignment::AlignmentKind;
use fairda::data::{generate, load_csv, save_csv, Dataset, Domain, ShiftSpec};
use fairda::error::{Error, Result};
use fairda::harness::{ablate, train, AblationTable, TrainConfig};
use fairda::metrics::{evaluate, MetricsReport};
use fairda::nn::Model;

#[derive(Parser)]
#[command(
    name = "fairda",
    version,
    about = "Fairness-aware unsupervised domain adaptation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic source/target pair from a shift spec
    Generate(GenerateArgs),
    /// Train a model and write run artifacts to an output directory
    Train(TrainArgs),
    /// Evaluate a saved model on a labeled dataset
    Evaluate(EvaluateArgs),
    /// Run the 2x2 reweighting x rebalancing ablation grid
    Ablate(AblateArgs),
    /// Pretty-print the reports found in a run directory
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// JSON file with the shift spec (see README for the schema)
    #[arg(long)]
    spec: PathBuf,
    /// Directory receiving source.csv, target.csv and shift_spec.json
    #[arg(long)]
    out: PathBuf,
}

/// Where the source/target data comes from.
#[derive(Args)]
struct DataArgs {
    /// Directory holding source.csv, target.csv and optionally
    /// shift_spec.json (as written by `generate`)
    #[arg(long, conflicts_with_all = ["source", "target"])]
    data: Option<PathBuf>,
    /// Source CSV: feature columns followed by an integer label column
    #[arg(long, requires = "target")]
    source: Option<PathBuf>,
    /// Target CSV: feature columns, labeled unless --unlabeled-target
    #[arg(long, requires = "source")]
    target: Option<PathBuf>,
    /// Treat the target CSV as unlabeled (no final evaluation)
    #[arg(long)]
    unlabeled_target: bool,
    /// Class count override; otherwise inferred from labels
    #[arg(long)]
    classes: Option<usize>,
    /// Skip one header line in the CSV files
    #[arg(long)]
    header: bool,
}

impl DataArgs {
    fn load(&self) -> Result<(Dataset, Dataset)> {
        let (source_path, target_path, spec_classes) =
            match (&self.data, &self.source, &self.target) {
                (Some(dir), None, None) => {
                    let spec_path = dir.join("shift_spec.json");
                    let classes = if spec_path.exists() {
                        let spec: ShiftSpec = read_json(&spec_path)?;
                        Some(spec.num_classes)
                    } else {
                        None
                    };
                    (dir.join("source.csv"), dir.join("target.csv"), classes)
                }
                (None, Some(s), Some(t)) => (s.clone(), t.clone(), None),
                _ => {
                    return Err(Error::Argument(
                        "provide either --data DIR or both --source and --target".into(),
                    ))
                }
            };
        let classes = self.classes.or(spec_classes);
        let source = load_csv(&source_path, true, Domain::Source, self.header, classes)?;
        let mut target = load_csv(
            &target_path,
            !self.unlabeled_target,
            Domain::Target,
            self.header,
            classes,
        )?;
        if target.labels.is_none() {
            target.num_classes = source.num_classes;
        }
        Ok((source, target))
    }
}

/// Config-file overrides; flag names mirror the config keys.
#[derive(Args, Clone)]
struct Overrides {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Enable or disable source re-weighting: --reweighting true|false
    #[arg(long)]
    reweighting: Option<bool>,
    /// Enable or disable target re-balancing: --rebalancing true|false
    #[arg(long)]
    rebalancing: Option<bool>,
    /// Domain alignment term: none | moment
    #[arg(long)]
    alignment: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    iterations_per_epoch: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extractor hidden widths, comma separated (e.g. 32,16)
    #[arg(long, value_delimiter = ',')]
    hidden_dims: Option<Vec<usize>>,
    /// Worst-N values to report, comma separated (e.g. 5,10)
    #[arg(long, value_delimiter = ',')]
    worst_n: Option<Vec<usize>>,
}

impl Overrides {
    fn apply(&self, config: &mut TrainConfig) -> Result<()> {
        if let Some(v) = self.alpha {
            config.alpha = v;
        }
        if let Some(v) = self.beta {
            config.beta = v;
        }
        if let Some(v) = self.gamma {
            config.gamma = v;
        }
        if let Some(v) = self.reweighting {
            config.enable_reweighting = v;
        }
        if let Some(v) = self.rebalancing {
            config.enable_rebalancing = v;
        }
        if let Some(ref v) = self.alignment {
            config.alignment = AlignmentKind::from_str(v)?;
        }
        if let Some(v) = self.epochs {
            config.epochs = v;
        }
        if let Some(v) = self.iterations_per_epoch {
            config.iterations_per_epoch = v;
        }
        if let Some(v) = self.batch_size {
            config.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            config.learning_rate = v;
        }
        if let Some(v) = self.momentum {
            config.momentum = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(ref v) = self.hidden_dims {
            config.hidden_dims = v.clone();
        }
        if let Some(ref v) = self.worst_n {
            config.worst_n_values = v.clone();
        }
        Ok(())
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training config JSON; missing keys fall back to defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Output directory for run artifacts
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Saved model JSON (model.json from a training run)
    #[arg(long)]
    model: PathBuf,
    /// Labeled dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Class count override; otherwise taken from the model head
    #[arg(long)]
    classes: Option<usize>,
    /// Skip one header line
    #[arg(long)]
    header: bool,
    /// Worst-N values to report
    #[arg(long, value_delimiter = ',', default_values_t = [5usize, 10])]
    worst_n: Vec<usize>,
    /// Also write the metrics report as JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Training config JSON; missing keys fall back to defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Output directory for the ablation artifacts
    #[arg(long)]
    out: PathBuf,
    /// Training seeds, one run per seed per cell (at least 5)
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3, 4, 5])]
    seeds: Vec<u64>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory written by `train` or `ablate`
    #[arg(long)]
    run: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Argument(_) | Error::Shape(_) | Error::Json(_) => 1,
        Error::Numeric(_) | Error::NonFiniteLoss { .. } => 2,
        Error::Io(_) | Error::Ingestion { .. } => 3,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn load_config(path: &Option<PathBuf>, overrides: &Overrides) -> Result<TrainConfig> {
    let mut config = match path {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    overrides.apply(&mut config)?;
    config.validate()?;
    Ok(config)
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let spec: ShiftSpec = read_json(&args.spec)?;
    let (source, target) = generate(&spec)?;
    std::fs::create_dir_all(&args.out)?;
    save_csv(&source, &args.out.join("source.csv"))?;
    save_csv(&target, &args.out.join("target.csv"))?;
    write_json(&args.out.join("shift_spec.json"), &spec)?;
    println!(
        "wrote {} source and {} target samples ({} classes, dim {}) to {}",
        source.len(),
        target.len(),
        spec.num_classes,
        spec.dim,
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = load_config(&args.config, &args.overrides)?;
    let (source, target) = args.data.load()?;
    std::fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("config.json"), &config)?;

    let output = match train(&config, &source, &target) {
        Ok(output) => output,
        Err(err) => {
            // Leave the partial record behind for diagnosis.
            if let Error::NonFiniteLoss { ref record, .. } = err {
                let _ = write_json(&args.out.join("run_record.json"), record.as_ref());
            }
            return Err(err);
        }
    };

    write_json(&args.out.join("model.json"), &output.model)?;
    write_json(&args.out.join("run_record.json"), &output.record)?;
    std::fs::write(args.out.join("epochs.csv"), output.record.epochs_csv())?;
    for epoch in &output.record.epochs {
        println!(
            "epoch {:>3}  loss {:.4} (rw {:.4}, align {:.4}, rebal {:.4})",
            epoch.epoch,
            epoch.mean_loss_total,
            epoch.mean_loss_reweighted,
            epoch.mean_loss_alignment,
            epoch.mean_loss_rebalancing
        );
    }
    if let Some(ref metrics) = output.record.final_metrics {
        write_json(&args.out.join("metrics.json"), metrics)?;
        println!("\n{}", metrics.table());
    } else {
        println!("\ntarget is unlabeled; no evaluation report");
    }
    println!("artifacts written to {}", args.out.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let model: Model = read_json(&args.model)?;
    let dataset = load_csv(
        &args.data,
        true,
        Domain::Target,
        args.header,
        args.classes.or(Some(model.num_classes())),
    )?;
    let report = evaluate(&model, &dataset, &args.worst_n)?;
    println!("{}", report.table());
    if let Some(ref out) = args.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let config = load_config(&args.config, &args.overrides)?;
    let (source, target) = args.data.load()?;
    let table = ablate(&config, &source, &target, &args.seeds)?;
    std::fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("config.json"), &config)?;
    write_json(&args.out.join("ablation.json"), &table)?;
    println!("{}", table.table());
    println!("artifacts written to {}", args.out.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let mut printed = false;
    let metrics_path = args.run.join("metrics.json");
    if metrics_path.exists() {
        let report: MetricsReport = read_json(&metrics_path)?;
        println!("{}", report.table());
        printed = true;
    }
    let ablation_path = args.run.join("ablation.json");
    if ablation_path.exists() {
        let table: AblationTable = read_json(&ablation_path)?;
        println!("{}", table.table());
        printed = true;
    }
    if !printed {
        return Err(Error::Argument(format!(
            "no metrics.json or ablation.json under {}",
            args.run.display()
        )));
    }
    Ok(())
}
