//! Gaussian-blob class streams.
//!
//! Class means are signed, scaled basis vectors on seed-chosen coordinates
//! (so every pair sits exactly `separation` apart) passed through one
//! seed-chosen Householder reflection. When `K > d` the means are drawn by
//! rejection sampling instead. Samples are `mean + stddev · N(0, I)`; the
//! first 80% of each class's draws form the training split.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub separation: f64,
    pub stddev: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.dim == 0 || self.samples_per_class == 0 {
            return Err(Error::Parameter(
                "classes, dim and samples_per_class must be positive".into(),
            ));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::Parameter(format!(
                "separation must be > 0, got {}",
                self.separation
            )));
        }
        if !(self.stddev > 0.0 && self.stddev.is_finite()) {
            return Err(Error::Parameter(format!(
                "stddev must be > 0, got {}",
                self.stddev
            )));
        }
        Ok(())
    }

    /// Training samples per class; the remainder is held out.
    pub fn train_per_class(&self) -> usize {
        self.samples_per_class * 4 / 5
    }
}

fn gaussian(d: usize, rng: &mut Rng) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Class means with pairwise distance at least `separation`.
pub fn class_means(spec: &SyntheticSpec, rng: &mut Rng) -> Vec<Vec<f64>> {
    let (k, d, sep) = (spec.num_classes, spec.dim, spec.separation);
    if k <= d {
        let mut coords: Vec<usize> = (0..d).collect();
        coords.shuffle(rng);
        let scale = sep / std::f64::consts::SQRT_2;
        let mut v = gaussian(d, rng);
        let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= vn);
        (0..k)
            .map(|c| {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mut m = vec![0.0; d];
                m[coords[c]] = sign * scale;
                // Householder reflection I - 2vvᵀ keeps pairwise distances
                let proj: f64 = m.iter().zip(&v).map(|(a, b)| a * b).sum();
                m.iter_mut().zip(&v).for_each(|(a, b)| *a -= 2.0 * proj * b);
                m
            })
            .collect()
    } else {
        let radius = sep * (k as f64).powf(1.0 / d as f64) * 2.0;
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
        while means.len() < k {
            let cand: Vec<f64> = gaussian(d, rng).iter().map(|x| x * radius).collect();
            let ok = means.iter().all(|m| {
                m.iter()
                    .zip(&cand)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
                    >= sep
            });
            if ok {
                means.push(cand);
            }
        }
        means
    }
}

/// Deterministic `(train, test)` blobs.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = rng::substream(spec.seed, rng::streams::DATA);
    let means = class_means(spec, &mut rng);
    let n_train = spec.train_per_class();
    let (mut tr_x, mut tr_y, mut te_x, mut te_y) = (vec![], vec![], vec![], vec![]);
    for (k, mean) in means.iter().enumerate() {
        for i in 0..spec.samples_per_class {
            let x: Vec<f64> = mean
                .iter()
                .zip(gaussian(spec.dim, &mut rng))
                .map(|(m, z)| m + spec.stddev * z)
                .collect();
            if i < n_train {
                tr_x.push(x);
                tr_y.push(k);
            } else {
                te_x.push(x);
                te_y.push(k);
            }
        }
    }
    Ok((
        Dataset::new(tr_x, tr_y, spec.dim, spec.num_classes)?,
        Dataset::new(te_x, te_y, spec.dim, spec.num_classes)?,
    ))
}
