use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairtab::analysis::ImportanceOptions;
use fairtab::commands::{
    cmd_cdf, cmd_compare, cmd_eval, cmd_importance, cmd_synth, cmd_train, load_data, load_run,
    threads_from_env, CommandOptions, RunConfig,
};
use fairtab::data::SynthConfig;
use fairtab::training::Method;
use fairtab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fairtab",
    version,
    about = "Multi-task tabular transformer with task balancing and fairness penalties"
)]
struct Cli {
    /// Seed for splits, initialization, shuffling and permutations.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (data.csv + schema.json).
    Synth {
        /// Row count for the built-in profile when no config is given.
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
    /// Train every fold and write a run directory.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Re-score a run's checkpoints on their test splits.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        run: PathBuf,
    },
    /// Compare methods over shared seeds.
    Compare {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainFlags,
        /// Comma-separated method names; the first is the reference.
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<Method>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },
    /// Permutation feature importance on one fold's test split.
    Importance {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        /// Self-test: use the identity permutation, every drop must be 0.
        #[arg(long)]
        identity: bool,
    },
    /// Subgroup CDFs of pooled holdout probabilities.
    Cdf {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Defaults to schema.json next to the data file.
    #[arg(long)]
    schema: Option<PathBuf>,
}

impl DataArgs {
    fn schema_path(&self) -> PathBuf {
        self.schema.clone().unwrap_or_else(|| {
            self.data
                .parent()
                .unwrap_or(Path::new("."))
                .join("schema.json")
        })
    }
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long = "fairness-attribute")]
    fairness_attribute: Option<String>,
    #[arg(long = "lambda")]
    fairness_lambda: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
}

impl TrainFlags {
    fn apply(&self, c: &mut RunConfig) {
        let t = &mut c.train;
        if let Some(v) = self.method {
            t.method = v;
        }
        if let Some(v) = self.alpha {
            t.alpha = v;
        }
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            t.learning_rate = v;
        }
        if let Some(v) = self.patience {
            t.patience = v;
        }
        if let Some(v) = &self.fairness_attribute {
            t.fairness_attribute = Some(v.clone());
        }
        if let Some(v) = self.fairness_lambda {
            t.fairness_lambda = v;
        }
        if let Some(v) = self.folds {
            c.folds = v;
        }
    }
}

fn run_config(cli: &Cli, flags: &TrainFlags) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    flags.apply(&mut c);
    Ok(c)
}

fn out_dir(cli: &Cli, default: PathBuf) -> PathBuf {
    cli.out.clone().unwrap_or(default)
}

fn run(cli: &Cli) -> Result<()> {
    let threads = threads_from_env()?;
    let print = |msg: &str| println!("{msg}");
    let opts = CommandOptions {
        threads,
        log: if cli.quiet { None } else { Some(&print) },
    };
    let say = |msg: String| {
        if !cli.quiet {
            println!("{msg}");
        }
    };
    match &cli.command {
        Command::Synth { n } => {
            let mut cfg = match &cli.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str::<SynthConfig>(&text)?
                }
                None => SynthConfig::default_profile(*n, 0),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let out = out_dir(cli, "synth".into());
            cmd_synth(&cfg, &out)?;
            say(format!("wrote {} rows to {}", cfg.n, out.display()));
        }
        Command::Train { data, train } => {
            let cfg = run_config(cli, train)?;
            let ds = load_data(&data.data, &data.schema_path())?;
            let out = out_dir(cli, "run".into());
            cmd_train(&ds, &cfg, &out, &opts)?;
            say(format!("run written to {}", out.display()));
        }
        Command::Eval { data, run } => {
            let ds = load_data(&data.data, &data.schema_path())?;
            let loaded = load_run(run)?;
            let out = out_dir(cli, run.join("eval"));
            let report = cmd_eval(&loaded, &ds, &out)?;
            for t in &report.tasks {
                say(format!(
                    "{} auroc {} auprc {}",
                    t.task,
                    fmt(t.auroc.mean, t.auroc.sd),
                    fmt(t.auprc.mean, t.auprc.sd)
                ));
            }
        }
        Command::Compare {
            data,
            train,
            methods,
            seeds,
        } => {
            let cfg = run_config(cli, train)?;
            let ds = load_data(&data.data, &data.schema_path())?;
            let out = out_dir(cli, "compare".into());
            let table = cmd_compare(&ds, &cfg, methods, seeds, &out, &opts)?;
            for row in &table.rows {
                say(format!(
                    "{:<22} diff auroc {} mean auroc {}",
                    row.method.name(),
                    fmt(row.diff.auroc, None),
                    fmt(row.mean_auroc, None)
                ));
            }
        }
        Command::Importance {
            data,
            run,
            fold,
            repetitions,
            identity,
        } => {
            let ds = load_data(&data.data, &data.schema_path())?;
            let loaded = load_run(run)?;
            let imp = ImportanceOptions {
                repetitions: *repetitions,
                seed: cli.seed.unwrap_or(0),
                identity: *identity,
                threads,
            };
            let out = out_dir(cli, run.join("importance"));
            let table = cmd_importance(&loaded, &ds, *fold, &imp, &out)?;
            for (t, top) in fairtab::analysis::top_k(&table, table.features.len().min(5))?
                .iter()
                .enumerate()
            {
                let names: Vec<&str> = top.iter().map(|r| r.feature.as_str()).collect();
                say(format!("{}: {}", table.tasks[t], names.join(", ")));
            }
        }
        Command::Cdf { data, run, step } => {
            let ds = load_data(&data.data, &data.schema_path())?;
            let loaded = load_run(run)?;
            let out = out_dir(cli, run.join("cdf"));
            let tables = cmd_cdf(&loaded, &ds, *step, &out)?;
            for t in &tables {
                say(format!(
                    "{} / {}: max gap {:.4}",
                    t.task,
                    t.attribute,
                    t.max_gap().unwrap_or(0.0)
                ));
            }
        }
    }
    Ok(())
}

fn fmt(mean: Option<f64>, sd: Option<f64>) -> String {
    match (mean, sd) {
        (Some(m), Some(s)) => format!("{m:.4}±{s:.4}"),
        (Some(m), None) => format!("{m:.4}"),
        _ => "NA".into(),
    }
}

fn error_record(e: &Error) -> serde_json::Value {
    let mut rec = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
    if let Error::Config { field, .. } = e {
        rec["field"] = serde_json::Value::String(field.clone());
    }
    rec
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::from(2)
        }
    }
}
