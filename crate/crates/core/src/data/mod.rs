//! Datasets: CIFAR binary readers, Gaussian-blob generators and
//! class-filtered stream views.

mod cifar;
mod synthetic;

pub use cifar::{read_cifar10, read_cifar100, write_records, Granularity, RecordLayout, PIXELS};
pub use synthetic::{gen_synthetic, SyntheticSpec};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Labelled samples of a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
    by_class: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        inputs: Vec<Vec<f64>>,
        labels: Vec<usize>,
        dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let mut by_class = vec![Vec::new(); num_classes];
        for (i, (x, &y)) in inputs.iter().zip(&labels).enumerate() {
            if x.len() != dim {
                return Err(Error::Data(format!(
                    "sample {i} has length {}, expected {dim}",
                    x.len()
                )));
            }
            if y >= num_classes {
                return Err(Error::Data(format!(
                    "sample {i} has label {y} but only {num_classes} classes"
                )));
            }
            by_class[y].push(i);
        }
        Ok(Self {
            inputs,
            labels,
            dim,
            num_classes,
            by_class,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Sample indices of class `k`, in dataset order.
    pub fn class_indices(&self, k: usize) -> &[usize] {
        self.by_class.get(k).map_or(&[], Vec::as_slice)
    }

    /// Keeps at most `n` samples of every class, in dataset order.
    pub fn take_per_class(&self, n: usize) -> Self {
        let mut keep: Vec<usize> = self
            .by_class
            .iter()
            .flat_map(|idx| idx.iter().take(n).copied())
            .collect();
        keep.sort_unstable();
        self.subset(&keep)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self::new(
            indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.dim,
            self.num_classes,
        )
        .expect("subset of a valid dataset")
    }
}

/// Indices of every sample whose label is in `classes`, shuffled with a
/// generator derived from `seed`.
pub fn task_view(ds: &Dataset, classes: &[usize], seed: u64) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for &k in classes {
        let idx = ds.class_indices(k);
        if idx.is_empty() {
            return Err(Error::Data(format!("class {k} has no samples")));
        }
        out.extend_from_slice(idx);
    }
    out.sort_unstable();
    out.shuffle(&mut rng::substream(seed, rng::streams::SHUFFLE));
    Ok(out)
}

/// Per-feature standardisation with statistics taken from `train`.
pub fn standardize(train: &mut Dataset, others: &mut [&mut Dataset]) {
    if train.is_empty() {
        return;
    }
    let d = train.dim;
    let n = train.len() as f64;
    let mut mean = vec![0.0; d];
    for x in &train.inputs {
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n);
    }
    let mut var = vec![0.0; d];
    for x in &train.inputs {
        for j in 0..d {
            var[j] += (x[j] - mean[j]).powi(2) / n;
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|v| if *v > 0.0 { 1.0 / v.sqrt() } else { 1.0 })
        .collect();
    let apply = |ds: &mut Dataset| {
        for x in &mut ds.inputs {
            for j in 0..d {
                x[j] = (x[j] - mean[j]) * scale[j];
            }
        }
    };
    apply(train);
    for ds in others.iter_mut() {
        apply(ds);
    }
}
