//! Online class prototypes: cosine similarities, the temperature-scaled
//! contrastive loss that pulls hidden states toward their class prototype,
//! and the momentum update that tracks class means.
//!
//! Prototypes never receive gradients. A class starts as an all-zero,
//! unseen vector; its first batch sets the prototype to the batch mean and
//! later batches blend in with momentum `alpha`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine_sim, norm, softmax_nll, Tape, Tensor, Var, COSINE_EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    protos: Vec<Vec<f64>>,
    seen: Vec<bool>,
    alpha: f64,
    tau: f64,
    normalize: bool,
}

impl PrototypeBank {
    pub fn new(num_classes: usize, dim: usize, alpha: f64, tau: f64) -> Result<Self> {
        if num_classes == 0 || dim == 0 {
            return Err(Error::Parameter(format!(
                "prototype bank needs K > 0 and n > 0, got K={num_classes} n={dim}"
            )));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Parameter(format!(
                "alpha must be in [0,1], got {alpha}"
            )));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Parameter(format!("tau must be > 0, got {tau}")));
        }
        Ok(Self {
            protos: vec![vec![0.0; dim]; num_classes],
            seen: vec![false; num_classes],
            alpha,
            tau,
            normalize: false,
        })
    }

    /// Rescale prototypes to unit norm after every update.
    pub fn with_normalization(mut self, on: bool) -> Self {
        self.normalize = on;
        self
    }

    /// Rebuilds a bank from stored prototypes; unseen rows must be zero.
    pub fn from_parts(
        protos: Vec<Vec<f64>>,
        seen: Vec<bool>,
        alpha: f64,
        tau: f64,
    ) -> Result<Self> {
        let dim = protos.first().map_or(0, Vec::len);
        let mut bank = Self::new(protos.len(), dim, alpha, tau)?;
        if seen.len() != protos.len() || protos.iter().any(|p| p.len() != dim) {
            return Err(Error::dim("ragged prototype bank"));
        }
        for (k, p) in protos.iter().enumerate() {
            if !seen[k] && p.iter().any(|&v| v != 0.0) {
                return Err(Error::State(format!(
                    "unseen class {k} has a nonzero prototype"
                )));
            }
        }
        bank.protos = protos;
        bank.seen = seen;
        Ok(bank)
    }

    pub fn num_classes(&self) -> usize {
        self.protos.len()
    }

    pub fn dim(&self) -> usize {
        self.protos[0].len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn prototype(&self, k: usize) -> &[f64] {
        &self.protos[k]
    }

    pub fn prototypes(&self) -> &[Vec<f64>] {
        &self.protos
    }

    pub fn is_seen(&self, k: usize) -> bool {
        self.seen[k]
    }

    pub fn seen_flags(&self) -> &[bool] {
        &self.seen
    }

    pub fn seen_classes(&self) -> Vec<usize> {
        (0..self.seen.len()).filter(|&k| self.seen[k]).collect()
    }

    /// Multiplies every prototype by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.protos.iter_mut().flatten().for_each(|v| *v *= c);
        out
    }

    fn check_h(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.dim() {
            return Err(Error::dim(format!(
                "hidden vector of length {} for prototypes of length {}",
                h.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.num_classes() {
            return Err(Error::Index(format!(
                "label {y} out of range for {} classes",
                self.num_classes()
            )));
        }
        Ok(())
    }

    /// Cosine similarity of `h` to every prototype; unseen classes get `-inf`.
    pub fn similarities(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.check_h(h)?;
        if !self.seen.iter().any(|&s| s) {
            return Err(Error::State("no seen classes in the prototype bank".into()));
        }
        self.protos
            .iter()
            .zip(&self.seen)
            .map(|(p, &s)| {
                if s {
                    cosine_sim(h, p, COSINE_EPS)
                } else {
                    Ok(f64::NEG_INFINITY)
                }
            })
            .collect()
    }

    /// Seen class with the highest cosine similarity to `h`; ties go to the
    /// smaller index.
    pub fn nearest(&self, h: &[f64]) -> Result<usize> {
        let sims = self.similarities(h)?;
        let mut best = None;
        for (k, &s) in sims.iter().enumerate() {
            if !self.seen[k] {
                continue;
            }
            match best {
                Some((_, bs)) if s <= bs => {}
                _ => best = Some((k, s)),
            }
        }
        Ok(best.expect("at least one seen class").0)
    }

    /// Contrastive loss over a batch of hidden vectors (value only).
    pub fn apa_loss(&self, batch_h: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        self.check_batch(batch_h.len(), labels)?;
        let seen = self.seen_classes();
        let mut total = 0.0;
        for (h, &y) in batch_h.iter().zip(labels) {
            let sims = self.similarities(h)?;
            let scores: Vec<f64> = seen.iter().map(|&k| sims[k]).collect();
            let target = seen.binary_search(&y).expect("label checked as seen");
            total += softmax_nll(&scores, target, self.tau)?;
        }
        Ok(total / batch_h.len() as f64)
    }

    /// Contrastive loss recorded on a tape so gradients reach the hidden vectors.
    pub fn apa_loss_tape(&self, tape: &mut Tape, batch_h: &[Var], labels: &[usize]) -> Result<Var> {
        self.check_batch(batch_h.len(), labels)?;
        let seen = self.seen_classes();
        let protos: Vec<Var> = seen
            .iter()
            .map(|&k| tape.constant(Tensor::vector(self.protos[k].clone())))
            .collect();
        let mut terms = Vec::with_capacity(batch_h.len());
        for (&h, &y) in batch_h.iter().zip(labels) {
            self.check_h(tape.value(h).values())?;
            let sims = protos
                .iter()
                .map(|&p| tape.cosine(h, p, COSINE_EPS))
                .collect::<Result<Vec<_>>>()?;
            let scores = tape.stack(&sims)?;
            let target = seen.binary_search(&y).expect("label checked as seen");
            terms.push(tape.softmax_nll(scores, target, self.tau)?);
        }
        tape.mean(&terms)
    }

    fn check_batch(&self, n: usize, labels: &[usize]) -> Result<()> {
        if n == 0 || n != labels.len() {
            return Err(Error::dim(format!(
                "batch of {n} hidden vectors with {} labels",
                labels.len()
            )));
        }
        for &y in labels {
            self.check_label(y)?;
            if !self.seen[y] {
                return Err(Error::State(format!("label {y} has no prototype yet")));
            }
        }
        Ok(())
    }

    fn class_means(&self, batch_h: &[Vec<f64>], labels: &[usize]) -> Result<Vec<Option<Vec<f64>>>> {
        if batch_h.len() != labels.len() {
            return Err(Error::dim(format!(
                "batch of {} hidden vectors with {} labels",
                batch_h.len(),
                labels.len()
            )));
        }
        let mut sums: Vec<Option<(Vec<f64>, usize)>> = vec![None; self.num_classes()];
        for (h, &y) in batch_h.iter().zip(labels) {
            self.check_label(y)?;
            self.check_h(h)?;
            let (sum, count) = sums[y].get_or_insert_with(|| (vec![0.0; h.len()], 0));
            sum.iter_mut().zip(h).for_each(|(s, v)| *s += v);
            *count += 1;
        }
        Ok(sums
            .into_iter()
            .map(|e| {
                e.map(|(mut sum, count)| {
                    let inv = 1.0 / count as f64;
                    sum.iter_mut().for_each(|s| *s *= inv);
                    sum
                })
            })
            .collect())
    }

    /// Sets each not-yet-seen class present in the batch to its batch mean.
    /// Returns the newly registered classes.
    pub fn register_new(&mut self, batch_h: &[Vec<f64>], labels: &[usize]) -> Result<Vec<usize>> {
        let means = self.class_means(batch_h, labels)?;
        let mut fresh = Vec::new();
        for (k, mean) in means.into_iter().enumerate() {
            if let (Some(m), false) = (mean, self.seen[k]) {
                self.protos[k] = m;
                self.seen[k] = true;
                self.finish(k);
                fresh.push(k);
            }
        }
        Ok(fresh)
    }

    /// Momentum update toward the batch mean of each class present; classes
    /// seen for the first time take the mean directly.
    pub fn update_prototypes(&mut self, batch_h: &[Vec<f64>], labels: &[usize]) -> Result<()> {
        let means = self.class_means(batch_h, labels)?;
        self.apply_means(means, &[]);
        Ok(())
    }

    /// Like [`update_prototypes`](Self::update_prototypes) but leaves the
    /// classes in `skip` untouched.
    pub fn update_prototypes_except(
        &mut self,
        batch_h: &[Vec<f64>],
        labels: &[usize],
        skip: &[usize],
    ) -> Result<()> {
        let means = self.class_means(batch_h, labels)?;
        self.apply_means(means, skip);
        Ok(())
    }

    fn apply_means(&mut self, means: Vec<Option<Vec<f64>>>, skip: &[usize]) {
        let alpha = self.alpha;
        for (k, mean) in means.into_iter().enumerate() {
            let Some(m) = mean else { continue };
            if skip.contains(&k) {
                continue;
            }
            if self.seen[k] {
                for (p, &mv) in self.protos[k].iter_mut().zip(&m) {
                    let blended = alpha * *p + (1.0 - alpha) * mv;
                    // rounding can step one ulp outside the segment
                    *p = blended.clamp(p.min(mv), p.max(mv));
                }
            } else {
                self.protos[k] = m;
                self.seen[k] = true;
            }
            self.finish(k);
        }
    }

    fn finish(&mut self, k: usize) {
        if self.normalize {
            let n = norm(&self.protos[k]);
            if n >= COSINE_EPS {
                self.protos[k].iter_mut().for_each(|v| *v /= n);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bank_with(protos: &[&[f64]]) -> PrototypeBank {
        let k = protos.len();
        PrototypeBank::from_parts(
            protos.iter().map(|p| p.to_vec()).collect(),
            vec![true; k],
            0.9,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn similarity_cases() {
        let bank = bank_with(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 2.0]]);
        assert_eq!(bank.similarities(&[0.0, 0.0, 2.0]).unwrap()[2], 1.0);
        assert_eq!(
            bank.similarities(&[1.0, 0.0, 0.0]).unwrap(),
            vec![1.0, 0.0, 0.0]
        );
        let bank = bank_with(&[&[2.0, 1.0]]);
        assert_abs_diff_eq!(
            bank.similarities(&[1.0, 2.0]).unwrap()[0],
            0.8,
            epsilon = 1e-15
        );
    }

    #[test]
    fn unseen_classes_are_excluded() {
        let mut bank = PrototypeBank::new(3, 2, 0.9, 1.0).unwrap();
        assert!(matches!(
            bank.similarities(&[1.0, 0.0]),
            Err(Error::State(_))
        ));
        bank.update_prototypes(&[vec![1.0, 1.0]], &[1]).unwrap();
        let s = bank.similarities(&[1.0, 0.0]).unwrap();
        assert_eq!(s[0], f64::NEG_INFINITY);
        assert_eq!(s[2], f64::NEG_INFINITY);
        assert!(s[1].is_finite());
        assert_eq!(bank.nearest(&[-1.0, 0.0]).unwrap(), 1);
    }

    #[test]
    fn loss_fixtures() {
        let bank = bank_with(&[&[1.0, 0.0], &[0.0, 1.0]]);
        // s = [1, 0], y = 0, tau = 1
        let l = bank.apa_loss(&[vec![3.0, 0.0]], &[0]).unwrap();
        assert_abs_diff_eq!(l, 0.313_261_687_518_222_8, epsilon = 1e-12);
        // equal similarities across both seen classes
        let l = bank.apa_loss(&[vec![1.0, 1.0]], &[1]).unwrap();
        assert_abs_diff_eq!(l, 2f64.ln(), epsilon = 1e-12);
        let one = bank.apa_loss(&[vec![0.3, 0.9]], &[0]).unwrap();
        let two = bank
            .apa_loss(&[vec![0.3, 0.9], vec![0.3, 0.9]], &[0, 0])
            .unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn loss_requires_seen_label() {
        let mut bank = PrototypeBank::new(3, 2, 0.9, 1.0).unwrap();
        bank.update_prototypes(&[vec![1.0, 0.0]], &[0]).unwrap();
        assert!(matches!(
            bank.apa_loss(&[vec![1.0, 0.0]], &[2]),
            Err(Error::State(_))
        ));
        assert!(matches!(
            bank.apa_loss(&[vec![1.0, 0.0]], &[7]),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn tape_loss_matches_value_loss() {
        let bank = bank_with(&[&[1.0, 0.2, -0.3], &[0.1, 1.0, 0.4], &[-0.5, 0.3, 1.0]]);
        let hs = vec![vec![0.2, -0.1, 0.9], vec![1.1, 0.3, 0.0]];
        let labels = [2, 0];
        let mut tape = Tape::new();
        let vars: Vec<Var> = hs
            .iter()
            .map(|h| tape.leaf(Tensor::vector(h.clone())))
            .collect();
        let l = bank.apa_loss_tape(&mut tape, &vars, &labels).unwrap();
        assert_abs_diff_eq!(
            tape.scalar(l),
            bank.apa_loss(&hs, &labels).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn momentum_update_fixtures() {
        let mut bank = PrototypeBank::new(2, 2, 0.9, 0.1).unwrap();
        bank.update_prototypes(&[vec![1.0, 0.0]], &[0]).unwrap();
        assert_eq!(bank.prototype(0), &[1.0, 0.0]);
        bank.update_prototypes(&[vec![0.0, 1.0]], &[0]).unwrap();
        assert_abs_diff_eq!(bank.prototype(0)[0], 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(bank.prototype(0)[1], 0.1, epsilon = 1e-12);
        assert!(!bank.is_seen(1));
        assert_eq!(bank.prototype(1), &[0.0, 0.0]);
    }

    #[test]
    fn momentum_extremes() {
        for (alpha, want) in [(1.0, [2.0, -1.0]), (0.0, [0.5, 0.5])] {
            let mut bank = PrototypeBank::new(1, 2, alpha, 0.1).unwrap();
            bank.update_prototypes(&[vec![2.0, -1.0]], &[0]).unwrap();
            bank.update_prototypes(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[0, 0])
                .unwrap();
            assert_eq!(bank.prototype(0), &want);
        }
    }

    #[test]
    fn first_update_ignores_momentum() {
        let mut bank = PrototypeBank::new(2, 2, 0.99, 0.1).unwrap();
        bank.update_prototypes(&[vec![4.0, 2.0], vec![2.0, 0.0]], &[1, 1])
            .unwrap();
        assert_eq!(bank.prototype(1), &[3.0, 1.0]);
        assert!(bank.is_seen(1));
    }

    #[test]
    fn register_new_skips_seen_classes() {
        let mut bank = PrototypeBank::new(3, 1, 0.5, 0.1).unwrap();
        bank.update_prototypes(&[vec![1.0]], &[0]).unwrap();
        let fresh = bank.register_new(&[vec![5.0], vec![3.0]], &[0, 2]).unwrap();
        assert_eq!(fresh, vec![2]);
        assert_eq!(bank.prototype(0), &[1.0]);
        assert_eq!(bank.prototype(2), &[3.0]);
    }

    #[test]
    fn normalization_option() {
        let mut bank = PrototypeBank::new(1, 2, 0.5, 0.1)
            .unwrap()
            .with_normalization(true);
        bank.update_prototypes(&[vec![3.0, 4.0]], &[0]).unwrap();
        assert_abs_diff_eq!(norm(bank.prototype(0)), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn invalid_construction() {
        assert!(PrototypeBank::new(2, 2, 1.5, 0.1).is_err());
        assert!(PrototypeBank::new(2, 2, 0.5, 0.0).is_err());
        assert!(PrototypeBank::from_parts(vec![vec![1.0]], vec![false], 0.5, 0.1).is_err());
    }
}
