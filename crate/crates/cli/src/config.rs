//! Run configuration: one JSON object with flat dotted keys.
//!
//! Every key has a default, so `{}` is a valid configuration; the tuned
//! reference run lives in `configs/synthetic.json`. Unknown keys and ill-typed values are errors.
//! `--set key=value` overrides go through the same parser; the value is
//! read as JSON when it parses, otherwise as a bare string.

use std::collections::BTreeMap;

use pcl_core::data::{Granularity, SyntheticSpec};
use pcl_core::feedback::PairRows;
use pcl_core::model::{Pooling, SdsmConfig};
use pcl_core::stream::{InferenceRule, StreamSetup, TaskSchedule, TrainConfig};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    Cifar10,
    Cifar100,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: DataSource,
    pub num_classes: usize,
    pub dim: usize,
    pub data_samples_per_class: usize,
    pub separation: f64,
    pub stddev: f64,
    /// Synthetic data seed; the run seed when unset.
    pub data_seed: Option<u64>,
    pub train_path: Option<String>,
    pub test_path: Option<String>,
    pub granularity: Granularity,
    pub standardize: bool,

    pub tasks: Option<Vec<Vec<usize>>>,
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub samples_per_class: Option<usize>,
    pub batch_size: usize,

    pub patch_len: usize,
    pub hidden_dim: usize,
    pub pooling: Pooling,

    pub train: TrainConfig,
    pub seed: u64,
    pub seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            num_classes: 10,
            dim: 16,
            data_samples_per_class: 200,
            separation: 5.0,
            stddev: 1.0,
            data_seed: None,
            train_path: None,
            test_path: None,
            granularity: Granularity::Fine,
            standardize: false,
            tasks: None,
            num_tasks: 5,
            classes_per_task: 2,
            samples_per_class: None,
            batch_size: 10,
            patch_len: 4,
            hidden_dim: 16,
            pooling: Pooling::Mean,
            train: TrainConfig::default(),
            seed: 0,
            seeds: 10,
        }
    }
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "data.source",
    "data.num_classes",
    "data.dim",
    "data.samples_per_class",
    "data.separation",
    "data.stddev",
    "data.seed",
    "data.train_path",
    "data.test_path",
    "data.granularity",
    "data.standardize",
    "schedule.tasks",
    "schedule.num_tasks",
    "schedule.classes_per_task",
    "schedule.samples_per_class",
    "schedule.batch_size",
    "model.patch_len",
    "model.hidden_dim",
    "model.pooling",
    "train.tau",
    "train.alpha",
    "train.lambda",
    "train.m",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.buffer_capacity",
    "train.replay_batch_size",
    "train.epochs_per_batch",
    "train.use_apa",
    "train.use_mf",
    "train.freeze_feedback",
    "train.pair_rows",
    "train.normalize_prototypes",
    "train.inference",
    "run.seed",
    "run.seeds",
];

fn err(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::config(format!("{key}: {msg}"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64, CliError> {
    v.as_f64()
        .ok_or_else(|| err(key, format!("expected a number, got {v}")))
}

fn as_usize(key: &str, v: &Value) -> Result<usize, CliError> {
    v.as_u64()
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| err(key, format!("expected a non-negative integer, got {v}")))
}

fn as_u64(key: &str, v: &Value) -> Result<u64, CliError> {
    v.as_u64()
        .ok_or_else(|| err(key, format!("expected a non-negative integer, got {v}")))
}

fn as_bool(key: &str, v: &Value) -> Result<bool, CliError> {
    v.as_bool()
        .ok_or_else(|| err(key, format!("expected true or false, got {v}")))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str, CliError> {
    v.as_str()
        .ok_or_else(|| err(key, format!("expected a string, got {v}")))
}

fn opt<T>(
    key: &str,
    v: &Value,
    f: impl Fn(&str, &Value) -> Result<T, CliError>,
) -> Result<Option<T>, CliError> {
    if v.is_null() {
        Ok(None)
    } else {
        f(key, v).map(Some)
    }
}

fn parse_tasks(key: &str, v: &Value) -> Result<Vec<Vec<usize>>, CliError> {
    let outer = v
        .as_array()
        .ok_or_else(|| err(key, "expected an array of class arrays"))?;
    outer
        .iter()
        .map(|task| {
            task.as_array()
                .ok_or_else(|| err(key, "expected an array of class arrays"))?
                .iter()
                .map(|c| as_usize(key, c))
                .collect()
        })
        .collect()
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| CliError::config(format!("config is not valid JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| CliError::config("config must be a JSON object"))?;
        let mut cfg = Self::default();
        for (k, v) in obj {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), CliError> {
        let (key, raw) = spec
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("override `{spec}` is not KEY=VALUE")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        self.set(key.trim(), &value)
    }

    pub fn set(&mut self, key: &str, v: &Value) -> Result<(), CliError> {
        match key {
            "data.source" => {
                self.source = match as_str(key, v)? {
                    "synthetic" => DataSource::Synthetic,
                    "cifar10" => DataSource::Cifar10,
                    "cifar100" => DataSource::Cifar100,
                    other => return Err(err(key, format!("unknown source `{other}`"))),
                }
            }
            "data.num_classes" => self.num_classes = as_usize(key, v)?,
            "data.dim" => self.dim = as_usize(key, v)?,
            "data.samples_per_class" => self.data_samples_per_class = as_usize(key, v)?,
            "data.separation" => self.separation = as_f64(key, v)?,
            "data.stddev" => self.stddev = as_f64(key, v)?,
            "data.seed" => self.data_seed = opt(key, v, as_u64)?,
            "data.train_path" => {
                self.train_path = opt(key, v, |k, v| as_str(k, v).map(String::from))?
            }
            "data.test_path" => {
                self.test_path = opt(key, v, |k, v| as_str(k, v).map(String::from))?
            }
            "data.granularity" => {
                self.granularity = match as_str(key, v)? {
                    "fine" => Granularity::Fine,
                    "coarse" => Granularity::Coarse,
                    other => return Err(err(key, format!("unknown granularity `{other}`"))),
                }
            }
            "data.standardize" => self.standardize = as_bool(key, v)?,
            "schedule.tasks" => self.tasks = opt(key, v, parse_tasks)?,
            "schedule.num_tasks" => self.num_tasks = as_usize(key, v)?,
            "schedule.classes_per_task" => self.classes_per_task = as_usize(key, v)?,
            "schedule.samples_per_class" => self.samples_per_class = opt(key, v, as_usize)?,
            "schedule.batch_size" => self.batch_size = as_usize(key, v)?,
            "model.patch_len" => self.patch_len = as_usize(key, v)?,
            "model.hidden_dim" => self.hidden_dim = as_usize(key, v)?,
            "model.pooling" => {
                self.pooling = match as_str(key, v)? {
                    "mean" => Pooling::Mean,
                    "last" => Pooling::Last,
                    other => return Err(err(key, format!("unknown pooling `{other}`"))),
                }
            }
            "train.tau" => self.train.tau = as_f64(key, v)?,
            "train.alpha" => self.train.alpha = as_f64(key, v)?,
            "train.lambda" => self.train.lambda = as_f64(key, v)?,
            "train.m" => self.train.m = as_usize(key, v)?,
            "train.lr" => self.train.adam.lr = as_f64(key, v)?,
            "train.beta1" => self.train.adam.beta1 = as_f64(key, v)?,
            "train.beta2" => self.train.adam.beta2 = as_f64(key, v)?,
            "train.eps" => self.train.adam.eps = as_f64(key, v)?,
            "train.buffer_capacity" => self.train.buffer_capacity = as_usize(key, v)?,
            "train.replay_batch_size" => self.train.replay_batch_size = as_usize(key, v)?,
            "train.epochs_per_batch" => self.train.epochs_per_batch = as_usize(key, v)?,
            "train.use_apa" => self.train.use_apa = as_bool(key, v)?,
            "train.use_mf" => self.train.use_mf = as_bool(key, v)?,
            "train.freeze_feedback" => self.train.freeze_feedback = as_bool(key, v)?,
            "train.pair_rows" => {
                self.train.pair_rows = match as_str(key, v)? {
                    "first" => PairRows::First,
                    "both" => PairRows::Both,
                    other => return Err(err(key, format!("unknown pair rows `{other}`"))),
                }
            }
            "train.normalize_prototypes" => self.train.normalize_prototypes = as_bool(key, v)?,
            "train.inference" => {
                self.train.inference = match as_str(key, v)? {
                    "prototype" => InferenceRule::Prototype,
                    "logits" => InferenceRule::Logits,
                    other => return Err(err(key, format!("unknown inference rule `{other}`"))),
                }
            }
            "run.seed" => self.seed = as_u64(key, v)?,
            "run.seeds" => self.seeds = as_usize(key, v)?,
            other => return Err(CliError::config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Number of classes implied by the data source.
    pub fn class_count(&self) -> usize {
        match (self.source, self.granularity) {
            (DataSource::Synthetic, _) => self.num_classes,
            (DataSource::Cifar10, _) => 10,
            (DataSource::Cifar100, Granularity::Fine) => 100,
            (DataSource::Cifar100, Granularity::Coarse) => 20,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self.source {
            DataSource::Synthetic => self.dim,
            DataSource::Cifar10 | DataSource::Cifar100 => 3072,
        }
    }

    pub fn schedule(&self) -> TaskSchedule {
        let mut s = match &self.tasks {
            Some(tasks) => TaskSchedule {
                tasks: tasks.clone(),
                samples_per_class: None,
                batch_size: self.batch_size,
            },
            None => {
                TaskSchedule::contiguous(self.num_tasks, self.classes_per_task, self.batch_size)
            }
        };
        s.samples_per_class = self.samples_per_class;
        s
    }

    pub fn model(&self) -> SdsmConfig {
        SdsmConfig {
            input_dim: self.input_dim(),
            patch_len: self.patch_len,
            hidden_dim: self.hidden_dim,
            num_classes: self.class_count(),
            pooling: self.pooling,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_classes: self.num_classes,
            dim: self.dim,
            samples_per_class: self.data_samples_per_class,
            separation: self.separation,
            stddev: self.stddev,
            seed: self.data_seed.unwrap_or(self.seed),
        }
    }

    /// Training setup for the configured run seed.
    pub fn setup(&self) -> StreamSetup {
        StreamSetup {
            schedule: self.schedule(),
            model: self.model(),
            train: TrainConfig {
                seed: self.seed,
                ..self.train.clone()
            },
        }
    }

    /// Checks every field; nothing is written before this passes.
    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |key: &'static str| move |e: pcl_core::Error| err(key, strip(&e));
        match self.source {
            DataSource::Synthetic => {
                self.synthetic_spec().validate().map_err(wrap("data"))?;
                if self.data_samples_per_class * 4 / 5 == 0
                    || self.data_samples_per_class * 4 / 5 == self.data_samples_per_class
                {
                    return Err(err(
                        "data.samples_per_class",
                        "too few samples for a train/test split",
                    ));
                }
            }
            DataSource::Cifar10 | DataSource::Cifar100 => {
                if self.train_path.is_none() {
                    return Err(err("data.train_path", "required for CIFAR sources"));
                }
                if self.test_path.is_none() {
                    return Err(err("data.test_path", "required for CIFAR sources"));
                }
            }
        }
        self.model().validate().map_err(wrap("model"))?;
        self.train
            .validate()
            .map_err(|e| CliError::config(format!("train.{}", strip(&e))))?;
        self.schedule()
            .validate(self.class_count())
            .map_err(|e| CliError::config(strip(&e)))?;
        if self.seeds == 0 {
            return Err(err("run.seeds", "must be >= 1"));
        }
        Ok(())
    }

    /// Effective value of every key, for the run ledger.
    pub fn echo(&self) -> Value {
        let mut m = BTreeMap::new();
        let t = &self.train;
        let s = |x: &str| Value::String(x.to_string());
        m.insert(
            "data.source",
            s(match self.source {
                DataSource::Synthetic => "synthetic",
                DataSource::Cifar10 => "cifar10",
                DataSource::Cifar100 => "cifar100",
            }),
        );
        m.insert("data.num_classes", self.num_classes.into());
        m.insert("data.dim", self.dim.into());
        m.insert("data.samples_per_class", self.data_samples_per_class.into());
        m.insert("data.separation", self.separation.into());
        m.insert("data.stddev", self.stddev.into());
        m.insert("data.seed", self.data_seed.into());
        m.insert("data.train_path", self.train_path.clone().into());
        m.insert("data.test_path", self.test_path.clone().into());
        m.insert(
            "data.granularity",
            s(match self.granularity {
                Granularity::Fine => "fine",
                Granularity::Coarse => "coarse",
            }),
        );
        m.insert("data.standardize", self.standardize.into());
        m.insert(
            "schedule.tasks",
            serde_json::to_value(self.schedule().tasks).expect("tasks"),
        );
        m.insert("schedule.num_tasks", self.num_tasks.into());
        m.insert("schedule.classes_per_task", self.classes_per_task.into());
        m.insert("schedule.samples_per_class", self.samples_per_class.into());
        m.insert("schedule.batch_size", self.batch_size.into());
        m.insert("model.patch_len", self.patch_len.into());
        m.insert("model.hidden_dim", self.hidden_dim.into());
        m.insert(
            "model.pooling",
            s(match self.pooling {
                Pooling::Mean => "mean",
                Pooling::Last => "last",
            }),
        );
        m.insert("train.tau", t.tau.into());
        m.insert("train.alpha", t.alpha.into());
        m.insert("train.lambda", t.lambda.into());
        m.insert("train.m", t.m.into());
        m.insert("train.lr", t.adam.lr.into());
        m.insert("train.beta1", t.adam.beta1.into());
        m.insert("train.beta2", t.adam.beta2.into());
        m.insert("train.eps", t.adam.eps.into());
        m.insert("train.buffer_capacity", t.buffer_capacity.into());
        m.insert("train.replay_batch_size", t.replay_batch_size.into());
        m.insert("train.epochs_per_batch", t.epochs_per_batch.into());
        m.insert("train.use_apa", t.use_apa.into());
        m.insert("train.use_mf", t.use_mf.into());
        m.insert("train.freeze_feedback", t.freeze_feedback.into());
        m.insert(
            "train.pair_rows",
            s(match t.pair_rows {
                PairRows::First => "first",
                PairRows::Both => "both",
            }),
        );
        m.insert("train.normalize_prototypes", t.normalize_prototypes.into());
        m.insert(
            "train.inference",
            s(match t.inference {
                InferenceRule::Prototype => "prototype",
                InferenceRule::Logits => "logits",
            }),
        );
        m.insert("run.seed", self.seed.into());
        m.insert("run.seeds", self.seeds.into());
        debug_assert_eq!(m.len(), KEYS.len());
        serde_json::to_value(m).expect("echo serialises")
    }
}

/// Core error text without its category prefix.
fn strip(e: &pcl_core::Error) -> String {
    let text = e.to_string();
    match text.split_once(": ") {
        Some((_, rest)) => rest.to_string(),
        None => text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
        assert_eq!(cfg.schedule().tasks.len(), 5);
    }

    #[test]
    fn echo_round_trips_through_the_parser() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("train.tau=0.3").unwrap();
        cfg.apply_override("model.pooling=last").unwrap();
        let echoed = cfg.echo().to_string();
        assert_eq!(
            RunConfig::from_json(&echoed).unwrap(),
            RunConfig {
                tasks: Some(cfg.schedule().tasks),
                ..cfg.clone()
            }
        );
        let keys: Vec<String> = cfg.echo().as_object().unwrap().keys().cloned().collect();
        let mut want: Vec<String> = KEYS.iter().map(|k| k.to_string()).collect();
        want.sort();
        assert_eq!(keys, want);
    }

    #[test]
    fn unknown_keys_and_bad_types_fail() {
        assert!(RunConfig::from_json(r#"{"train.taux": 1}"#)
            .unwrap_err()
            .to_string()
            .contains("train.taux"));
        assert!(RunConfig::from_json(r#"{"train.m": -1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train.use_mf": "yes"}"#).is_err());
        assert!(RunConfig::from_json("[1]").is_err());
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_override("novalue").is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("train.tau=-1").unwrap();
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("tau"), "{msg}");

        let mut cfg = RunConfig::default();
        cfg.apply_override("model.patch_len=5").unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("model"));

        let mut cfg = RunConfig::default();
        cfg.apply_override("data.source=cifar10").unwrap();
        assert!(cfg
            .validate()
            .unwrap_err()
            .to_string()
            .contains("data.train_path"));

        let mut cfg = RunConfig::default();
        cfg.apply_override("schedule.tasks=[[0,1],[1,2]]").unwrap();
        assert!(cfg
            .validate()
            .unwrap_err()
            .to_string()
            .contains("schedule.tasks"));
    }
}
