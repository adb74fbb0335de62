//! Command implementations behind the `pcl` binary.
//!
//! Each command returns `Result<_, CliError>`; the error carries the exit
//! code. Configuration and data are fully loaded and checked before any file
//! is written.

pub mod config;
pub mod error;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pcl_core::checkpoint::write_checkpoint;
use pcl_core::data::{
    gen_synthetic, read_cifar10, read_cifar100, standardize, write_records, Dataset, RecordLayout,
    SyntheticSpec,
};
use pcl_core::stream::{incremental_curve, run_stream, RunLedger, RunOutput};

pub use config::{DataSource, RunConfig};
pub use error::{exit, CliError};

/// Reads the config file (if any), applies overrides and validates.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    for o in overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_data_file(path: &str) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::data(format!("{path}: {e}")))
}

/// Train and test splits for the configured source.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset), CliError> {
    let (mut train, mut test) = match cfg.source {
        DataSource::Synthetic => gen_synthetic(&cfg.synthetic_spec())?,
        DataSource::Cifar10 | DataSource::Cifar100 => {
            let paths = [cfg.train_path.as_deref(), cfg.test_path.as_deref()];
            let mut sets = Vec::with_capacity(2);
            for p in paths.into_iter().flatten() {
                let bytes = read_data_file(p)?;
                let ds = match cfg.source {
                    DataSource::Cifar10 => read_cifar10(&bytes),
                    _ => read_cifar100(&bytes, cfg.granularity),
                }
                .map_err(|e| CliError::data(format!("{p}: {e}")))?;
                sets.push(ds);
            }
            let test = sets.pop().expect("validated paths");
            let train = sets.pop().expect("validated paths");
            (train, test)
        }
    };
    if cfg.standardize {
        standardize(&mut train, &mut [&mut test]);
    }
    Ok((train, test))
}

/// Runs the configured stream once.
pub fn train_run(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let (train, test) = load_data(cfg)?;
    Ok(run_stream(&cfg.setup(), &train, &test, Some(cfg.echo()))?)
}

/// Writes the run artifacts into `out`.
pub fn write_run(out: &Path, run: &RunOutput) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    fs::write(out.join("metrics.json"), run.ledger.to_json())?;
    fs::write(out.join("accuracy_matrix.csv"), run.ledger.accuracy_csv())?;
    fs::write(out.join("steps.csv"), run.steps_csv())?;
    fs::write(
        out.join("checkpoint.bin"),
        write_checkpoint(&run.learner.model, &run.learner.bank),
    )?;
    if !run.feedback.is_empty() {
        fs::write(out.join("feedback.csv"), run.feedback_csv())?;
    }
    Ok(())
}

pub fn cmd_train(
    config: Option<&Path>,
    overrides: &[String],
    out: &Path,
) -> Result<RunLedger, CliError> {
    let cfg = load_config(config, overrides)?;
    let run = train_run(&cfg)?;
    write_run(out, &run)?;
    log::info!(
        "avg_accuracy {:.4} avg_forgetting {:.4} -> {}",
        run.ledger.avg_accuracy,
        run.ledger.avg_forgetting,
        out.display()
    );
    Ok(run.ledger)
}

/// The four ablation arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    WithoutApa,
    WithoutMf,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::WithoutApa,
        Variant::WithoutMf,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::WithoutApa => "wo_apa",
            Variant::WithoutMf => "wo_mf",
            Variant::Full => "full",
        }
    }

    /// `(use_apa, use_mf)`.
    pub fn flags(self) -> (bool, bool) {
        match self {
            Variant::Baseline => (false, false),
            Variant::WithoutApa => (false, true),
            Variant::WithoutMf => (true, false),
            Variant::Full => (true, true),
        }
    }

    pub fn apply(self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        (c.train.use_apa, c.train.use_mf) = self.flags();
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub avg_accuracy: f64,
    pub avg_forgetting: f64,
}

/// Every variant on `seeds` consecutive seeds starting at the run seed.
/// Variants of one seed share the same data.
pub fn ablation(cfg: &RunConfig, seeds: usize) -> Result<Vec<AblationRow>, CliError> {
    let mut rows = Vec::with_capacity(4 * seeds);
    for i in 0..seeds as u64 {
        let mut base = cfg.clone();
        base.seed = cfg.seed.wrapping_add(i);
        let (train, test) = load_data(&base)?;
        for v in Variant::ALL {
            let c = v.apply(&base);
            let run = run_stream(&c.setup(), &train, &test, Some(c.echo()))?;
            log::info!(
                "{} seed {}: acc {:.4} forg {:.4}",
                v.name(),
                base.seed,
                run.ledger.avg_accuracy,
                run.ledger.avg_forgetting
            );
            rows.push(AblationRow {
                variant: v,
                seed: base.seed,
                avg_accuracy: run.ledger.avg_accuracy,
                avg_forgetting: run.ledger.avg_forgetting,
            });
        }
    }
    Ok(rows)
}

/// Per-variant `(mean accuracy, mean forgetting)` in `Variant::ALL` order.
pub fn ablation_means(rows: &[AblationRow]) -> [(f64, f64); 4] {
    Variant::ALL.map(|v| {
        let sel: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == v).collect();
        let n = sel.len().max(1) as f64;
        (
            sel.iter().map(|r| r.avg_accuracy).sum::<f64>() / n,
            sel.iter().map(|r| r.avg_forgetting).sum::<f64>() / n,
        )
    })
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,seed,avg_accuracy,avg_forgetting\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6}",
            r.variant.name(),
            r.seed,
            r.avg_accuracy,
            r.avg_forgetting
        );
    }
    for (v, (acc, forg)) in Variant::ALL.iter().zip(ablation_means(rows)) {
        let _ = writeln!(out, "{},mean,{acc:.6},{forg:.6}", v.name());
    }
    out
}

pub fn cmd_ablate(
    config: Option<&Path>,
    overrides: &[String],
    seeds: Option<usize>,
    out: &Path,
) -> Result<Vec<AblationRow>, CliError> {
    let mut cfg = load_config(config, overrides)?;
    if let Some(n) = seeds {
        if n == 0 {
            return Err(CliError::config("--seeds: must be >= 1"));
        }
        cfg.seeds = n;
    }
    let rows = ablation(&cfg, cfg.seeds)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("ablation.csv"), ablation_csv(&rows))?;
    Ok(rows)
}

/// Incremental-accuracy curves of several runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub runs: Vec<(String, RunLedger)>,
}

impl Report {
    pub fn load(dirs: &[PathBuf]) -> Result<Self, CliError> {
        let mut runs = Vec::with_capacity(dirs.len());
        for d in dirs {
            let path = d.join("metrics.json");
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            let ledger = RunLedger::from_json(&text)
                .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            if ledger
                .rows
                .iter()
                .enumerate()
                .any(|(i, r)| r.len() != i + 1)
            {
                return Err(CliError::data(format!(
                    "{}: accuracy matrix is not lower triangular",
                    path.display()
                )));
            }
            runs.push((d.display().to_string(), ledger));
        }
        Ok(Self { runs })
    }

    pub fn curves(&self) -> Vec<Vec<f64>> {
        self.runs
            .iter()
            .map(|(_, l)| incremental_curve(&l.rows))
            .collect()
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("run,task,incremental_accuracy\n");
        for ((name, _), curve) in self.runs.iter().zip(self.curves()) {
            for (t, v) in curve.iter().enumerate() {
                let _ = writeln!(out, "{name},{},{v:.6}", t + 1);
            }
        }
        out
    }

    pub fn table(&self) -> String {
        let width = self
            .runs
            .iter()
            .map(|(n, _)| n.len())
            .max()
            .unwrap_or(0)
            .max(3);
        let mut out = format!(
            "{:<width$}  {:>5}  {:>8}  {:>10}  {:>8}\n",
            "run", "tasks", "avg_acc", "avg_forget", "final"
        );
        for ((name, l), curve) in self.runs.iter().zip(self.curves()) {
            let _ = writeln!(
                out,
                "{name:<width$}  {:>5}  {:>8.4}  {:>10.4}  {:>8.4}",
                l.num_tasks(),
                l.avg_accuracy,
                l.avg_forgetting,
                curve.last().copied().unwrap_or(0.0)
            );
        }
        out
    }
}

/// Writes `report.csv` into `out` and returns the summary table.
pub fn cmd_report(dirs: &[PathBuf], out: &Path) -> Result<String, CliError> {
    if dirs.is_empty() {
        return Err(CliError::config("report: no run directories given"));
    }
    let report = Report::load(dirs)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("report.csv"), report.csv())?;
    Ok(report.table())
}

/// Synthetic blobs shifted by 0.5 into pixel range, serialised in the
/// CIFAR-10 layout for at most 10 classes and CIFAR-100 otherwise. Training
/// samples come first, then held-out ones.
pub fn gen_data_bytes(spec: &SyntheticSpec) -> Result<Vec<u8>, CliError> {
    if spec.dim != pcl_core::data::PIXELS {
        return Err(CliError::config(format!(
            "dim: record layout needs {}, got {}",
            pcl_core::data::PIXELS,
            spec.dim
        )));
    }
    let layout = match spec.num_classes {
        0 => return Err(CliError::config("classes: must be >= 1")),
        1..=10 => RecordLayout::Cifar10,
        11..=100 => RecordLayout::Cifar100,
        k => return Err(CliError::config(format!("classes: at most 100, got {k}"))),
    };
    spec.validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    let (train, test) = gen_synthetic(spec)?;
    let inputs: Vec<Vec<f64>> = train
        .inputs()
        .iter()
        .chain(test.inputs())
        .map(|x| x.iter().map(|v| v + 0.5).collect())
        .collect();
    let labels: Vec<usize> = train
        .labels()
        .iter()
        .chain(test.labels())
        .copied()
        .collect();
    let all = Dataset::new(inputs, labels, spec.dim, spec.num_classes)?;
    Ok(write_records(&all, layout)?)
}

pub fn cmd_gen_data(spec: &SyntheticSpec, out: &Path) -> Result<(), CliError> {
    let bytes = gen_data_bytes(spec)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(out, bytes)?;
    Ok(())
}
