//! Reproducible run directories: the operations behind the `fairtab`
//! subcommands. Every command validates its inputs before touching the
//! filesystem, and every JSON/CSV it writes is a pure function of the inputs
//! and seed. Only the manifest carries wall-clock time.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::analysis::{permutation_importance, ImportanceOptions, ImportanceTable};
use crate::data::{
    load_csv, make_splits, save_csv, synthesize, SplitPlan, SynthConfig, TabularDataset,
};
use crate::error::{Error, Result};
use crate::metrics::{
    reduction_fraction, write_cdf_csv, CdfTable, DiffRow, MetricsReport, TaskSummary,
};
use crate::model::{Checkpoint, ModelConfig};
use crate::training::{
    evaluate, pooled_cdf, run_experiment, EpochLog, EpochRecord, Method, RunOptions, TrainConfig,
};

pub const THREADS_ENV: &str = "FAIRTAB_THREADS";

/// Everything `train` needs besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds the splits and every network; overrides `train.seed`.
    pub seed: u64,
    pub folds: usize,
    /// Train, validation and test fractions.
    pub fractions: [f64; 3],
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            folds: 5,
            fractions: [0.6, 0.2, 0.2],
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Copy with the seed propagated into the training config.
    pub fn resolved(&self) -> RunConfig {
        let mut c = self.clone();
        c.train.seed = c.seed;
        c
    }

    fn fractions(&self) -> (f64, f64, f64) {
        (self.fractions[0], self.fractions[1], self.fractions[2])
    }

    pub fn validate(&self, ds: &TabularDataset) -> Result<()> {
        if self.folds == 0 {
            return Err(Error::config("folds", "need at least one fold"));
        }
        self.model.validate()?;
        self.train.validate(ds.schema())?;
        make_splits(ds.len(), 1, self.fractions(), 0)?;
        Ok(())
    }
}

/// Internal parallelism: the machine's cores, capped by `FAIRTAB_THREADS`.
pub fn threads_from_env() -> Result<usize> {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n.min(cores)),
            _ => Err(Error::config(
                THREADS_ENV,
                format!("expected a positive integer, got {v:?}"),
            )),
        },
        Err(_) => Ok(cores),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Output files, relative to the output directory.
    pub artifacts: Vec<String>,
    pub started_unix: u64,
    pub elapsed_secs: f64,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub const MANIFEST: &str = "manifest.json";

/// Per-command knobs that never change the numbers.
pub struct CommandOptions<'a> {
    pub threads: usize,
    /// Receives one-line progress messages.
    pub log: Option<&'a (dyn Fn(&str) + Sync)>,
}

impl Default for CommandOptions<'_> {
    fn default() -> Self {
        CommandOptions {
            threads: 1,
            log: None,
        }
    }
}

impl CommandOptions<'_> {
    fn say(&self, msg: &str) {
        if let Some(f) = self.log {
            f(msg);
        }
    }
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
    started: Instant,
    started_unix: u64,
}

impl Output {
    /// Fails early if `dir` exists as a file; creates nothing yet.
    fn check(dir: &Path) -> Result<Output> {
        if dir.exists() && !dir.is_dir() {
            return Err(Error::config(
                "out",
                format!("{} exists and is not a directory", dir.display()),
            ));
        }
        Ok(Output {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        })
    }

    fn create(&self) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))
    }

    fn path(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.dir.join(name)
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.text(name, &s)
    }

    fn writer(&mut self, name: &str) -> Result<BufWriter<fs::File>> {
        let path = self.path(name);
        let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(BufWriter::new(f))
    }

    fn finish<T: Serialize>(mut self, command: &str, seed: u64, config: &T) -> Result<RunManifest> {
        let mut artifacts = self.files.clone();
        artifacts.push(MANIFEST.into());
        let manifest = RunManifest {
            tool: "fairtab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config: serde_json::to_value(config)?,
            artifacts,
            started_unix: self.started_unix,
            elapsed_secs: self.started.elapsed().as_secs_f64(),
        };
        self.json(MANIFEST, &manifest)?;
        Ok(manifest)
    }
}

/// Writes `data.csv` and `schema.json` for a generator config.
pub fn cmd_synth(config: &SynthConfig, out: &Path) -> Result<RunManifest> {
    config.validate()?;
    let mut o = Output::check(out)?;
    let ds = synthesize(config)?;
    o.create()?;
    let path = o.path("data.csv");
    save_csv(&ds, &path)?;
    o.text("schema.json", &(ds.schema().to_json()? + "\n"))?;
    o.finish("synth", config.seed, config)
}

pub fn load_data(data: &Path, schema: &Path) -> Result<TabularDataset> {
    load_csv(data, schema)
}

fn progress_line(label: &str, r: &EpochRecord) -> String {
    let f4 = |v: &[Option<f64>]| {
        v.iter()
            .map(|x| x.map_or("NA".to_string(), |x| format!("{x:.4}")))
            .collect::<Vec<_>>()
            .join(",")
    };
    let loss = r
        .train_loss
        .iter()
        .map(|x| format!("{x:.4}"))
        .collect::<Vec<_>>()
        .join(",");
    let mut line = format!(
        "{label} epoch {} loss [{loss}] val_auroc [{}]",
        r.epoch,
        f4(&r.val_auroc)
    );
    if let Some(d) = r.fairness {
        line.push_str(&format!(" disparity {d:.4}"));
    }
    line
}

fn write_epoch_log<W: std::io::Write>(runs: &[(usize, &[EpochLog])], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "fold",
        "member",
        "epoch",
        "task",
        "train_loss",
        "weight",
        "train_metric",
        "val_auroc",
        "val_auprc",
        "disparity",
        "best_epoch",
    ])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for (fold, logs) in runs {
        for (k, log) in logs.iter().enumerate() {
            for r in &log.records {
                for (h, task) in log.tasks.iter().enumerate() {
                    w.write_record([
                        fold.to_string(),
                        k.to_string(),
                        r.epoch.to_string(),
                        task.clone(),
                        r.train_loss[h].to_string(),
                        r.weights[h].to_string(),
                        opt(r.train_metric[h]),
                        opt(r.val_auroc[h]),
                        opt(r.val_auprc[h]),
                        opt(r.fairness),
                        log.best_epoch.to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io("<epoch log>", e))?;
    Ok(())
}

pub struct TrainOutcome {
    pub manifest: RunManifest,
    pub report: MetricsReport,
}

/// Trains every fold and writes a run directory: `config.json`, `splits.json`,
/// `checkpoints/`, `epoch_log.csv`, `report.json`, `cdf.csv`, `manifest.json`.
pub fn cmd_train(
    ds: &TabularDataset,
    config: &RunConfig,
    out: &Path,
    opts: &CommandOptions<'_>,
) -> Result<TrainOutcome> {
    let cfg = config.resolved();
    cfg.validate(ds)?;
    let mut o = Output::check(out)?;
    let plan = make_splits(ds.len(), cfg.folds, cfg.fractions(), cfg.seed)?;
    o.create()?;
    o.json("config.json", &cfg)?;
    o.json("splits.json", &plan)?;
    let ck_dir = out.join("checkpoints");
    fs::create_dir_all(&ck_dir).map_err(|e| Error::io(&ck_dir, e))?;

    let line = |label: &str, r: &EpochRecord| opts.say(&progress_line(label, r));
    let run_opts = RunOptions {
        checkpoint_dir: Some(&ck_dir),
        threads: opts.threads,
        progress: Some(&line),
        ..RunOptions::default()
    };
    let exp = run_experiment(ds, &plan, &cfg.model, &cfg.train, &run_opts)?;
    for (k, run) in exp.runs.iter().enumerate() {
        let path = o.path(&format!("checkpoints/fold{k}.json"));
        run.checkpoint.save(&path)?;
        for m in 0..run.logs.len() {
            o.path(&format!("checkpoints/fold{k}_member{m}_last_good.json"));
        }
    }
    let logs: Vec<(usize, &[EpochLog])> = exp
        .runs
        .iter()
        .map(|r| (r.fold, r.logs.as_slice()))
        .collect();
    write_epoch_log(&logs, o.writer("epoch_log.csv")?)?;
    o.json("report.json", &exp.report)?;
    write_cdf_csv(&exp.report.cdf, o.writer("cdf.csv")?)?;
    if let Some(a) = exp.report.mean_auroc() {
        opts.say(&format!(
            "mean holdout AUROC {a:.4} over {} folds",
            exp.runs.len()
        ));
    }
    let manifest = o.finish("train", cfg.seed, &cfg)?;
    Ok(TrainOutcome {
        manifest,
        report: exp.report,
    })
}

/// A finished training run read back from disk.
pub struct LoadedRun {
    pub config: RunConfig,
    pub plan: SplitPlan,
    pub checkpoints: Vec<Checkpoint>,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let read = |name: &str| -> Result<String> {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    };
    let config: RunConfig = serde_json::from_str(&read("config.json")?)?;
    let plan: SplitPlan = serde_json::from_str(&read("splits.json")?)?;
    let checkpoints = (0..plan.folds.len())
        .map(|k| Checkpoint::load(&dir.join(format!("checkpoints/fold{k}.json"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedRun {
        config,
        plan,
        checkpoints,
    })
}

fn check_rows(ds: &TabularDataset, plan: &SplitPlan) -> Result<()> {
    let n = ds.len();
    for (k, f) in plan.folds.iter().enumerate() {
        if let Some(&r) = f
            .train
            .iter()
            .chain(&f.validation)
            .chain(&f.test)
            .find(|&&r| r >= n)
        {
            return Err(Error::Contract(format!(
                "fold {k} refers to row {r} but the dataset has {n} rows"
            )));
        }
    }
    Ok(())
}

/// Re-scores every fold's checkpoint on its test rows; writes `eval.json`
/// and `eval.csv` (fold, task, auroc, auprc).
pub fn cmd_eval(run: &LoadedRun, ds: &TabularDataset, out: &Path) -> Result<MetricsReport> {
    check_rows(ds, &run.plan)?;
    let mut o = Output::check(out)?;
    let mut folds = Vec::new();
    let mut probs = Vec::new();
    for (k, (ck, fold)) in run.checkpoints.iter().zip(&run.plan.folds).enumerate() {
        let (m, p) = evaluate(ck, ds, &fold.test, run.config.train.threshold, k)?;
        folds.push(m);
        probs.push(p);
    }
    let parts: Vec<(&[usize], &[Vec<f64>])> = run
        .plan
        .folds
        .iter()
        .zip(&probs)
        .map(|(f, p)| (f.test.as_slice(), p.as_slice()))
        .collect();
    let cdf = pooled_cdf(ds, &parts, &crate::metrics::default_grid())?;
    let report = MetricsReport::aggregate(&ds.schema().tasks, folds, cdf);
    o.create()?;
    o.json("eval.json", &report)?;
    {
        let mut w = csv::Writer::from_writer(o.writer("eval.csv")?);
        w.write_record(["fold", "task", "auroc", "auprc"])?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for f in &report.folds {
            for (t, task) in ds.schema().tasks.iter().enumerate() {
                w.write_record([
                    f.fold.to_string(),
                    task.clone(),
                    opt(f.auroc[t]),
                    opt(f.auprc[t]),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(out, e))?;
    }
    o.finish("eval", run.config.seed, &run.config)?;
    Ok(report)
}

/// Permutation importance of one fold's checkpoint on its test rows; writes
/// `importance.csv` and `importance.json`.
pub fn cmd_importance(
    run: &LoadedRun,
    ds: &TabularDataset,
    fold: usize,
    opts: &ImportanceOptions,
    out: &Path,
) -> Result<ImportanceTable> {
    check_rows(ds, &run.plan)?;
    let f = run
        .plan
        .folds
        .get(fold)
        .ok_or_else(|| Error::config("fold", format!("fold {fold} does not exist")))?;
    if opts.repetitions == 0 {
        return Err(Error::config("repetitions", "must be at least 1"));
    }
    let mut o = Output::check(out)?;
    let table = permutation_importance(&run.checkpoints[fold], ds, &f.test, opts)?;
    o.create()?;
    table.write_csv(o.writer("importance.csv")?)?;
    o.json("importance.json", &table)?;
    #[derive(Serialize)]
    struct Snapshot<'a> {
        fold: usize,
        repetitions: usize,
        seed: u64,
        identity: bool,
        run: &'a RunConfig,
    }
    let snap = Snapshot {
        fold,
        repetitions: opts.repetitions,
        seed: opts.seed,
        identity: opts.identity,
        run: &run.config,
    };
    o.finish("importance", opts.seed, &snap)?;
    Ok(table)
}

/// Evenly spaced grid over [0, 1]; `step` must divide 1.
pub fn cdf_grid(step: f64) -> Result<Vec<f64>> {
    let n = (1.0 / step).round();
    if !(step > 0.0 && step <= 1.0) || ((n * step) - 1.0).abs() > 1e-9 {
        return Err(Error::config(
            "step",
            format!("must divide 1 evenly, got {step}"),
        ));
    }
    let n = n as usize;
    Ok((0..=n).map(|i| i as f64 / n as f64).collect())
}

/// Subgroup CDFs of pooled holdout probabilities; writes `cdf.csv` and `cdf.json`.
pub fn cmd_cdf(
    run: &LoadedRun,
    ds: &TabularDataset,
    step: f64,
    out: &Path,
) -> Result<Vec<CdfTable>> {
    check_rows(ds, &run.plan)?;
    let grid = cdf_grid(step)?;
    let mut o = Output::check(out)?;
    let probs = run
        .checkpoints
        .iter()
        .zip(&run.plan.folds)
        .map(|(ck, f)| ck.predict_proba(ds, &f.test))
        .collect::<Result<Vec<_>>>()?;
    let parts: Vec<(&[usize], &[Vec<f64>])> = run
        .plan
        .folds
        .iter()
        .zip(&probs)
        .map(|(f, p)| (f.test.as_slice(), p.as_slice()))
        .collect();
    let tables = pooled_cdf(ds, &parts, &grid)?;
    o.create()?;
    write_cdf_csv(&tables, o.writer("cdf.csv")?)?;
    o.json("cdf.json", &tables)?;
    o.finish(
        "cdf",
        run.config.seed,
        &serde_json::json!({ "step": step, "run": run.config }),
    )?;
    Ok(tables)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    pub tasks: Vec<TaskSummary>,
    pub diff: DiffRow,
    pub mean_auroc: Option<f64>,
    /// Relative shrinkage of the Diff row against the first method.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reduction: Option<Reduction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub tasks: Vec<String>,
    pub seeds: Vec<u64>,
    /// Every method saw the same seeds, hence the same splits and initial draws.
    pub paired: bool,
    pub rows: Vec<MethodRow>,
}

impl Comparison {
    /// `method,task,auroc_mean,auroc_sd,auprc_mean,auprc_sd` plus a `Diff`
    /// row per method and, with two or more methods, `reduction` rows.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "method",
            "task",
            "auroc_mean",
            "auroc_sd",
            "auprc_mean",
            "auprc_sd",
        ])?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for row in &self.rows {
            let name = row.method.name();
            for t in &row.tasks {
                w.write_record([
                    name,
                    &t.task,
                    &opt(t.auroc.mean),
                    &opt(t.auroc.sd),
                    &opt(t.auprc.mean),
                    &opt(t.auprc.sd),
                ])?;
            }
            w.write_record([
                name,
                "Diff",
                &opt(row.diff.auroc),
                "",
                &opt(row.diff.auprc),
                "",
            ])?;
            if let Some(r) = &row.reduction {
                w.write_record([name, "reduction", &opt(r.auroc), "", &opt(r.auprc), ""])?;
            }
        }
        w.flush().map_err(|e| Error::io("<comparison csv>", e))?;
        Ok(())
    }
}

/// Runs each method under each seed and tabulates holdout AUROC/AUPRC;
/// writes `comparison.csv` and `comparison.json`.
pub fn cmd_compare(
    ds: &TabularDataset,
    base: &RunConfig,
    methods: &[Method],
    seeds: &[u64],
    out: &Path,
    opts: &CommandOptions<'_>,
) -> Result<Comparison> {
    if methods.is_empty() {
        return Err(Error::config("methods", "need at least one method"));
    }
    if seeds.is_empty() {
        return Err(Error::config("seeds", "need at least one seed"));
    }
    let configs: Vec<RunConfig> = methods
        .iter()
        .map(|&m| {
            let mut c = base.clone();
            c.train.method = m;
            c
        })
        .collect();
    for c in &configs {
        c.validate(ds)?;
    }
    let mut o = Output::check(out)?;
    let mut rows: Vec<MethodRow> = Vec::new();
    for c in &configs {
        let mut folds = Vec::new();
        for &seed in seeds {
            let mut run = c.clone();
            run.seed = seed;
            let run = run.resolved();
            let plan = make_splits(ds.len(), run.folds, run.fractions(), seed)?;
            let run_opts = RunOptions {
                threads: opts.threads,
                ..RunOptions::default()
            };
            let exp = run_experiment(ds, &plan, &run.model, &run.train, &run_opts)?;
            folds.extend(exp.report.folds);
            opts.say(&format!("{} seed {seed} done", c.train.method));
        }
        for (i, f) in folds.iter_mut().enumerate() {
            f.fold = i;
        }
        let report = MetricsReport::aggregate(&ds.schema().tasks, folds, vec![]);
        let reduction = rows.first().map(|first| {
            let rf = |a: Option<f64>, b: Option<f64>| match (a, b) {
                (Some(a), Some(b)) => reduction_fraction(a, b).ok(),
                _ => None,
            };
            Reduction {
                auroc: rf(first.diff.auroc, report.diff.auroc),
                auprc: rf(first.diff.auprc, report.diff.auprc),
            }
        });
        rows.push(MethodRow {
            method: c.train.method,
            mean_auroc: report.mean_auroc(),
            tasks: report.tasks,
            diff: report.diff,
            reduction,
        });
    }
    let table = Comparison {
        tasks: ds.schema().tasks.clone(),
        seeds: seeds.to_vec(),
        paired: true,
        rows,
    };
    o.create()?;
    table.write_csv(o.writer("comparison.csv")?)?;
    o.json("comparison.json", &table)?;
    #[derive(Serialize)]
    struct Snapshot<'a> {
        methods: &'a [Method],
        seeds: &'a [u64],
        base: &'a RunConfig,
    }
    o.finish(
        "compare",
        seeds[0],
        &Snapshot {
            methods,
            seeds,
            base,
        },
    )?;
    Ok(table)
}
