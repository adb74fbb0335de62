use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{average_accuracy, average_forgetting};
use super::train::{Exemplar, Learner, StepLosses, TrainConfig};
use crate::data::{task_view, Dataset};
use crate::error::{Error, Result};
use crate::feedback::FeedbackState;
use crate::model::SdsmConfig;

/// Ordered class-incremental tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSchedule {
    pub tasks: Vec<Vec<usize>>,
    /// Training samples used per class (`None` keeps all).
    pub samples_per_class: Option<usize>,
    pub batch_size: usize,
}

impl TaskSchedule {
    /// `num_tasks` tasks of `classes_per_task` consecutive classes from 0.
    pub fn contiguous(num_tasks: usize, classes_per_task: usize, batch_size: usize) -> Self {
        Self {
            tasks: (0..num_tasks)
                .map(|t| (t * classes_per_task..(t + 1) * classes_per_task).collect())
                .collect(),
            samples_per_class: None,
            batch_size,
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config("schedule.tasks: no tasks".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("schedule.batch_size: must be >= 1".into()));
        }
        if self.samples_per_class == Some(0) {
            return Err(Error::Config(
                "schedule.samples_per_class: must be >= 1".into(),
            ));
        }
        let mut used = vec![false; num_classes];
        for (t, task) in self.tasks.iter().enumerate() {
            if task.is_empty() {
                return Err(Error::Config(format!("schedule.tasks: task {t} is empty")));
            }
            for &c in task {
                if c >= num_classes {
                    return Err(Error::Config(format!(
                        "schedule.tasks: class {c} out of range for {num_classes} classes"
                    )));
                }
                if std::mem::replace(&mut used[c], true) {
                    return Err(Error::Config(format!(
                        "schedule.tasks: class {c} appears in more than one task"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Loss record of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub task: usize,
    pub losses: StepLosses,
}

/// Accuracy matrix and its summaries for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub avg_accuracy: f64,
    pub avg_forgetting: f64,
    pub rows: Vec<Vec<f64>>,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
}

impl RunLedger {
    pub fn from_rows(rows: Vec<Vec<f64>>, seed: u64, config: serde_json::Value) -> Result<Self> {
        let config_hash = hex_digest(config.to_string().as_bytes());
        Ok(Self {
            avg_accuracy: average_accuracy(&rows)?,
            avg_forgetting: average_forgetting(&rows)?,
            rows,
            seed,
            config_hash,
            config,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.rows.len()
    }

    /// Pretty-printed JSON; keys are sorted so equal ledgers give equal bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("ledger serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("metrics.json: {e}")))
    }

    /// One line per row: the accuracies on tasks seen so far, six decimals.
    pub fn accuracy_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Which task was active when a training sample was read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub active_task: usize,
    pub sample: usize,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub ledger: RunLedger,
    pub steps: Vec<StepRecord>,
    pub feedback: Vec<(usize, FeedbackState)>,
    /// Direct reads of the training split (replay draws are not listed).
    pub access_log: Vec<Access>,
    pub learner: Learner,
}

impl RunOutput {
    pub fn steps_csv(&self) -> String {
        let mut out = String::from("step,task,l_apa,l_task,l_total\n");
        for r in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{:.9},{:.9},{:.9}",
                r.step, r.task, r.losses.l_apa, r.losses.l_task, r.losses.l_total
            );
        }
        out
    }

    pub fn feedback_csv(&self) -> String {
        let k = self.learner.model.config().num_classes;
        let mut out = FeedbackState::csv_header(k);
        out.push('\n');
        for (step, st) in &self.feedback {
            out.push_str(&st.csv_row(*step));
            out.push('\n');
        }
        out
    }
}

/// Inputs of one run besides the data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamSetup {
    pub schedule: TaskSchedule,
    pub model: SdsmConfig,
    pub train: TrainConfig,
}

/// Fraction of `indices` in `ds` that the learner labels correctly.
pub fn evaluate(learner: &Learner, ds: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let fb = learner.feedback_signal();
    let mut correct = 0usize;
    for &i in indices {
        if learner.classify(ds.input(i), fb.as_deref())? == ds.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Trains through every task in order and fills the accuracy matrix.
///
/// `config_echo` is stored in the ledger and hashed; pass `None` to echo
/// the setup itself.
pub fn run_stream(
    setup: &StreamSetup,
    train: &Dataset,
    test: &Dataset,
    config_echo: Option<serde_json::Value>,
) -> Result<RunOutput> {
    let StreamSetup {
        schedule,
        model,
        train: cfg,
    } = setup;
    schedule.validate(model.num_classes)?;
    if train.dim() != model.input_dim || test.dim() != model.input_dim {
        return Err(Error::Data(format!(
            "data dimension {} / {} does not match model input_dim {}",
            train.dim(),
            test.dim(),
            model.input_dim
        )));
    }
    for task in &schedule.tasks {
        for &c in task {
            if train.class_indices(c).is_empty() {
                return Err(Error::Data(format!("class {c} has no training samples")));
            }
            if test.class_indices(c).is_empty() {
                return Err(Error::Data(format!("class {c} has no test samples")));
            }
        }
    }
    let train = match schedule.samples_per_class {
        Some(n) => train.take_per_class(n),
        None => train.clone(),
    };

    let mut learner = Learner::new(*model, cfg.clone())?;
    let mut steps = Vec::new();
    let mut feedback = Vec::new();
    let mut access_log = Vec::new();
    let mut rows = Vec::with_capacity(schedule.tasks.len());
    let test_views: Vec<Vec<usize>> = schedule
        .tasks
        .iter()
        .map(|task| {
            let mut idx: Vec<usize> = task
                .iter()
                .flat_map(|&c| test.class_indices(c).iter().copied())
                .collect();
            idx.sort_unstable();
            idx
        })
        .collect();

    for (t, classes) in schedule.tasks.iter().enumerate() {
        let order = task_view(&train, classes, cfg.seed.wrapping_add(t as u64))?;
        for chunk in order.chunks(schedule.batch_size) {
            let batch: Vec<Exemplar> = chunk
                .iter()
                .map(|&i| {
                    access_log.push(Access {
                        active_task: t,
                        sample: i,
                    });
                    (train.input(i).to_vec(), train.label(i))
                })
                .collect();
            for epoch in 0..cfg.epochs_per_batch {
                let remember = epoch + 1 == cfg.epochs_per_batch;
                let losses = learner.step(&batch, remember)?;
                if let Some(fb) = learner.last_feedback() {
                    feedback.push((steps.len(), fb.clone()));
                }
                steps.push(StepRecord {
                    step: steps.len(),
                    task: t,
                    losses,
                });
            }
        }
        let row = test_views[..=t]
            .iter()
            .map(|idx| evaluate(&learner, test, idx))
            .collect::<Result<Vec<f64>>>()?;
        log::info!("after task {t}: {row:?}");
        rows.push(row);
    }

    let echo = match config_echo {
        Some(v) => v,
        None => serde_json::to_value(setup).expect("setup serialises"),
    };
    let ledger = RunLedger::from_rows(rows, cfg.seed, echo)?;
    Ok(RunOutput {
        ledger,
        steps,
        feedback,
        access_log,
        learner,
    })
}
