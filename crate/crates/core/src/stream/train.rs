use serde::{Deserialize, Serialize};

use super::replay::ReplayBuffer;
use crate::error::{Error, Result};
use crate::feedback::{self, FeedbackState, PairRows};
use crate::model::{argmax_over, ModelVars, SdsmConfig, SdsmModel, FEEDBACK_PARAMS_START};
use crate::numerics::{AdamConfig, Tape, Var};
use crate::prototypes::PrototypeBank;
use crate::rng::{self, Rng};

/// How a trained learner labels a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceRule {
    /// Nearest seen prototype by cosine similarity.
    #[default]
    Prototype,
    /// Largest logit among seen classes.
    Logits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub tau: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub m: usize,
    pub adam: AdamConfig,
    pub buffer_capacity: usize,
    pub replay_batch_size: usize,
    pub epochs_per_batch: usize,
    pub seed: u64,
    pub use_apa: bool,
    pub use_mf: bool,
    /// Keep the feedback projections at their current values.
    pub freeze_feedback: bool,
    pub pair_rows: PairRows,
    pub normalize_prototypes: bool,
    pub inference: InferenceRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            alpha: 0.9,
            lambda: 1.0,
            m: 2,
            adam: AdamConfig::default(),
            buffer_capacity: 100,
            replay_batch_size: 10,
            epochs_per_batch: 1,
            seed: 0,
            use_apa: true,
            use_mf: true,
            freeze_feedback: false,
            pair_rows: PairRows::First,
            normalize_prototypes: false,
            inference: InferenceRule::Prototype,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau", format!("must be > 0, got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha", format!("must be in [0, 1], got {}", self.alpha));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", format!("must be >= 0, got {}", self.lambda));
        }
        if self.m == 0 {
            return bad("m", "must be >= 1".into());
        }
        if self.epochs_per_batch == 0 {
            return bad("epochs_per_batch", "must be >= 1".into());
        }
        self.adam
            .validate()
            .map_err(|e| Error::Config(format!("adam: {e}")))
    }
}

/// Loss values of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepLosses {
    pub l_apa: f64,
    pub l_task: f64,
    pub l_total: f64,
}

/// Tape handles of the training objective for one batch.
#[derive(Debug, Clone)]
pub struct Objective {
    pub hidden: Vec<Var>,
    /// Hidden states as plain values.
    pub detached: Vec<Vec<f64>>,
    /// Classes registered by this batch.
    pub fresh: Vec<usize>,
    pub l_task: Var,
    pub l_apa: Option<Var>,
    pub total: Var,
}

/// Records `l_apa + lambda * l_task` for `batch` on `tape` (or
/// `lambda * l_task` without APA). Classes seen for the first time are
/// registered in `bank` before the alignment term is formed; prototypes
/// enter the tape as constants.
pub fn objective(
    model: &SdsmModel,
    bank: &mut PrototypeBank,
    tape: &mut Tape,
    vars: &ModelVars,
    batch: &[&Exemplar],
    fb: Option<&[f64]>,
    cfg: &TrainConfig,
) -> Result<Objective> {
    let labels: Vec<usize> = batch.iter().map(|(_, y)| *y).collect();
    let modulation = fb.map(|f| model.modulation(tape, vars, f)).transpose()?;
    let mut hidden = Vec::with_capacity(batch.len());
    let mut task_terms = Vec::with_capacity(batch.len());
    for (x, y) in batch {
        let tr = model.forward_tape(tape, vars, x, modulation.as_ref())?;
        task_terms.push(tape.softmax_nll(tr.logits, *y, 1.0)?);
        hidden.push(tr.hidden);
    }
    let detached: Vec<Vec<f64>> = hidden
        .iter()
        .map(|&h| tape.value(h).values().to_vec())
        .collect();
    let fresh = bank.register_new(&detached, &labels)?;

    let l_task = tape.mean(&task_terms)?;
    let weighted = tape.scale(l_task, cfg.lambda);
    let (l_apa, total) = if cfg.use_apa {
        let l = bank.apa_loss_tape(tape, &hidden, &labels)?;
        (Some(l), tape.add(l, weighted)?)
    } else {
        (None, weighted)
    };
    Ok(Objective {
        hidden,
        detached,
        fresh,
        l_task,
        l_apa,
        total,
    })
}

/// A labelled input.
pub type Exemplar = (Vec<f64>, usize);

/// Model, prototype bank and replay memory trained together on a stream.
#[derive(Debug, Clone)]
pub struct Learner {
    pub model: SdsmModel,
    pub bank: PrototypeBank,
    pub buffer: ReplayBuffer<Exemplar>,
    cfg: TrainConfig,
    replay_rng: Rng,
    last_feedback: Option<FeedbackState>,
}

impl Learner {
    pub fn new(model_cfg: SdsmConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = SdsmModel::new(model_cfg, &mut rng::substream(cfg.seed, rng::streams::INIT))?;
        Self::with_model(model, cfg)
    }

    pub fn with_model(model: SdsmModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mc = model.config();
        let bank = PrototypeBank::new(mc.num_classes, mc.hidden_dim, cfg.alpha, cfg.tau)?
            .with_normalization(cfg.normalize_prototypes);
        Ok(Self {
            model,
            bank,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            replay_rng: rng::substream(cfg.seed, rng::streams::REPLAY),
            last_feedback: None,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Feedback state used by the most recent step, when feedback is on.
    pub fn last_feedback(&self) -> Option<&FeedbackState> {
        self.last_feedback.as_ref()
    }

    /// Current feedback signal, or `None` when feedback is off.
    pub fn feedback_signal(&self) -> Option<Vec<f64>> {
        self.cfg
            .use_mf
            .then(|| feedback::refresh(&self.bank, self.cfg.m, self.cfg.pair_rows).signal)
    }

    /// One online step on `new_batch` plus a replay draw, then stores the
    /// new samples in the replay buffer.
    pub fn train_step(&mut self, new_batch: &[Exemplar]) -> Result<StepLosses> {
        self.step(new_batch, true)
    }

    /// Like [`train_step`](Self::train_step); `remember` controls whether the
    /// new samples are offered to the replay buffer.
    pub fn step(&mut self, new_batch: &[Exemplar], remember: bool) -> Result<StepLosses> {
        if new_batch.is_empty() {
            return Err(Error::Parameter("empty training batch".into()));
        }
        let replay = self
            .buffer
            .sample(self.cfg.replay_batch_size, &mut self.replay_rng);
        let batch: Vec<&Exemplar> = new_batch.iter().chain(replay.iter()).collect();
        let labels: Vec<usize> = batch.iter().map(|(_, y)| *y).collect();
        let k = self.model.config().num_classes;
        if let Some(&y) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Index(format!(
                "label {y} out of range for {k} classes"
            )));
        }

        let fb_state = self
            .cfg
            .use_mf
            .then(|| feedback::refresh(&self.bank, self.cfg.m, self.cfg.pair_rows));

        let mut tape = Tape::new();
        let vars = self.model.bind(&mut tape);
        let obj = objective(
            &self.model,
            &mut self.bank,
            &mut tape,
            &vars,
            &batch,
            fb_state.as_ref().map(|s| s.signal.as_slice()),
            &self.cfg,
        )?;
        let losses = StepLosses {
            l_apa: obj.l_apa.map_or(0.0, |v| tape.scalar(v)),
            l_task: tape.scalar(obj.l_task),
            l_total: tape.scalar(obj.total),
        };
        if !(losses.l_apa.is_finite() && losses.l_task.is_finite() && losses.l_total.is_finite()) {
            return Err(Error::Evaluation(format!("non-finite loss {losses:?}")));
        }
        let (total, detached, fresh) = (obj.total, obj.detached, obj.fresh);

        let grads = tape.backward(total)?;
        let freeze = self.cfg.freeze_feedback;
        for (i, (param, var)) in self
            .model
            .params_mut()
            .into_iter()
            .zip(vars.to_vec())
            .enumerate()
        {
            if freeze && i >= FEEDBACK_PARAMS_START {
                continue;
            }
            param.tensor.accumulate_grad(&grads.wrt(var))?;
            param.adam_step(&self.cfg.adam)?;
        }
        if !self.model.params().iter().all(|p| p.tensor.is_finite()) {
            return Err(Error::Evaluation(
                "non-finite parameter after update".into(),
            ));
        }

        self.bank
            .update_prototypes_except(&detached, &labels, &fresh)?;
        if remember {
            for item in new_batch {
                self.buffer
                    .reservoir_insert(item.clone(), &mut self.replay_rng);
            }
        }
        self.last_feedback = fb_state;
        Ok(losses)
    }

    /// Labels `x` with the configured inference rule, restricted to seen
    /// classes. `fb` is the feedback signal to apply, if any.
    pub fn classify(&self, x: &[f64], fb: Option<&[f64]>) -> Result<usize> {
        let trace = self.model.forward(x, fb)?;
        match self.cfg.inference {
            InferenceRule::Prototype => self.bank.nearest(trace.hidden.values()),
            InferenceRule::Logits => {
                let seen = self.bank.seen_classes();
                if seen.is_empty() {
                    return Err(Error::State("no seen classes".into()));
                }
                Ok(argmax_over(trace.logits.values(), Some(&seen)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Pooling;
    use crate::numerics::Tensor;
    use rand::Rng as _;

    fn model_cfg() -> SdsmConfig {
        SdsmConfig {
            input_dim: 8,
            patch_len: 2,
            hidden_dim: 6,
            num_classes: 4,
            pooling: Pooling::Mean,
        }
    }

    fn batch(seed: u64, n: usize) -> Vec<Exemplar> {
        let mut r = rng::seeded(seed);
        (0..n)
            .map(|i| {
                let y = i % 3;
                let x = (0..8)
                    .map(|j| if j % 3 == y { 1.0 } else { 0.0 } + 0.3 * r.random::<f64>())
                    .collect();
                (x, y)
            })
            .collect()
    }

    #[test]
    fn validation_names_field() {
        let cfg = TrainConfig {
            tau: -1.0,
            ..Default::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("tau"), "{msg}");
    }

    #[test]
    fn rejects_empty_batch() {
        let mut l = Learner::new(model_cfg(), TrainConfig::default()).unwrap();
        assert!(l.train_step(&[]).is_err());
    }

    #[test]
    fn step_registers_classes_and_fills_buffer() {
        let mut l = Learner::new(model_cfg(), TrainConfig::default()).unwrap();
        let b = batch(1, 6);
        let losses = l.train_step(&b).unwrap();
        assert!(losses.l_apa >= 0.0 && losses.l_task >= 0.0);
        assert!((losses.l_total - (losses.l_apa + losses.l_task)).abs() < 1e-12);
        assert_eq!(l.bank.seen_classes(), vec![0, 1, 2]);
        assert_eq!(l.buffer.len(), 6);
    }

    #[test]
    fn baseline_has_no_contrastive_term() {
        let cfg = TrainConfig {
            use_apa: false,
            use_mf: false,
            lambda: 2.0,
            ..Default::default()
        };
        let mut l = Learner::new(model_cfg(), cfg).unwrap();
        let losses = l.train_step(&batch(2, 6)).unwrap();
        assert_eq!(losses.l_apa, 0.0);
        assert!((losses.l_total - 2.0 * losses.l_task).abs() < 1e-15);
        assert!(l.last_feedback().is_none());
    }

    #[test]
    fn zero_lambda_matches_contrastive_only_gradient() {
        let cfg = TrainConfig {
            lambda: 0.0,
            use_mf: false,
            replay_batch_size: 0,
            ..Default::default()
        };
        let mut learner = Learner::new(model_cfg(), cfg).unwrap();
        let b = batch(3, 6);
        learner.train_step(&b).unwrap();

        // Gradient of the contrastive term alone, on the same state.
        let model = learner.model.clone();
        let bank = learner.bank.clone();
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let hs: Vec<Var> = b
            .iter()
            .map(|(x, _)| {
                model
                    .forward_tape(&mut tape, &vars, x, None)
                    .unwrap()
                    .hidden
            })
            .collect();
        let labels: Vec<usize> = b.iter().map(|(_, y)| *y).collect();
        let l = bank.apa_loss_tape(&mut tape, &hs, &labels).unwrap();
        let expected = tape.backward(l).unwrap();

        let mut step_learner = learner.clone();
        let before = step_learner.model.clone();
        step_learner.train_step(&b).unwrap();
        // first moments after one more step are an affine image of the gradient
        for (i, (p_before, p_after)) in before
            .params()
            .iter()
            .zip(step_learner.model.params())
            .enumerate()
        {
            let g = expected.wrt(vars.to_vec()[i]);
            let cfg = step_learner.config().adam;
            for (c, &gc) in g.iter().enumerate() {
                let m_expected = cfg.beta1 * p_before.first_moment()[c] + (1.0 - cfg.beta1) * gc;
                assert!(
                    (p_after.first_moment()[c] - m_expected).abs() <= 1e-12,
                    "param {i} component {c}"
                );
            }
        }
    }

    #[test]
    fn frozen_feedback_projections_do_not_move() {
        let cfg = TrainConfig {
            freeze_feedback: true,
            ..Default::default()
        };
        let mut l = Learner::new(model_cfg(), cfg).unwrap();
        l.model.fb_a.tensor = Tensor::new(vec![6, 4], vec![0.1; 24]).unwrap();
        let before = l.model.fb_a.tensor.clone();
        for s in 0..4 {
            l.train_step(&batch(10 + s, 6)).unwrap();
        }
        assert_eq!(l.model.fb_a.tensor, before);
    }

    #[test]
    fn classify_with_both_rules() {
        for inference in [InferenceRule::Prototype, InferenceRule::Logits] {
            let cfg = TrainConfig {
                inference,
                ..Default::default()
            };
            let mut l = Learner::new(model_cfg(), cfg).unwrap();
            assert!(l.classify(&[0.0; 8], None).is_err());
            l.train_step(&batch(4, 6)).unwrap();
            let y = l
                .classify(&[0.5; 8], l.feedback_signal().as_deref())
                .unwrap();
            assert!(y < 3);
        }
    }
}
