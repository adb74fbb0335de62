//! Selective state-space classifier.
//!
//! An input of length `d` is cut into `L = d / patch_len` patches, each
//! embedded to a token `u_l` of width `n`. A diagonal recurrence with
//! input-dependent gates produces the hidden state:
//!
//! ```text
//! a_l = sigmoid(Ga·u_l + base_a + Wa·f)
//! b_l = softplus(Gb·u_l + base_b + Wb·f)
//! h_l = a_l ⊙ h_{l-1} + b_l ⊙ u_l,   h_0 = 0
//! ```
//!
//! The pooled hidden state is the representation matched against class
//! prototypes, and `logits = C·h + c + Wc·f`. `f` is the optional feedback
//! signal; the three feedback projections start at zero.

use rand::distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Parameter, Tape, Tensor, Var};
use crate::prototypes::PrototypeBank;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Last,
    #[default]
    Mean,
}

impl Pooling {
    pub fn code(self) -> u64 {
        match self {
            Pooling::Last => 0,
            Pooling::Mean => 1,
        }
    }

    pub fn from_code(code: u64) -> Result<Self> {
        match code {
            0 => Ok(Pooling::Last),
            1 => Ok(Pooling::Mean),
            other => Err(Error::Format(format!("unknown pooling code {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SdsmConfig {
    pub input_dim: usize,
    pub patch_len: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub pooling: Pooling,
}

impl SdsmConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("patch_len", self.patch_len),
            ("hidden_dim", self.hidden_dim),
            ("num_classes", self.num_classes),
        ] {
            if v == 0 {
                return Err(Error::Parameter(format!("{name} must be positive")));
            }
        }
        if !self.input_dim.is_multiple_of(self.patch_len) {
            return Err(Error::Parameter(format!(
                "patch_len {} does not divide input_dim {}",
                self.patch_len, self.input_dim
            )));
        }
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        self.input_dim / self.patch_len
    }
}

/// Number of parameter tensors, in checkpoint order.
pub const NUM_PARAMS: usize = 11;

/// Index of the first feedback projection in declaration order.
pub const FEEDBACK_PARAMS_START: usize = 8;

/// Names of the parameter tensors in declaration order.
pub const PARAM_NAMES: [&str; NUM_PARAMS] = [
    "embed_w", "embed_b", "gate_a", "base_a", "gate_b", "base_b", "head_c", "head_b", "fb_a",
    "fb_b", "fb_c",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SdsmModel {
    config: SdsmConfig,
    pub embed_w: Parameter,
    pub embed_b: Parameter,
    pub gate_a: Parameter,
    pub base_a: Parameter,
    pub gate_b: Parameter,
    pub base_b: Parameter,
    pub head_c: Parameter,
    pub head_b: Parameter,
    pub fb_a: Parameter,
    pub fb_b: Parameter,
    pub fb_c: Parameter,
}

/// Tape handles for every model parameter.
#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub embed_w: Var,
    pub embed_b: Var,
    pub gate_a: Var,
    pub base_a: Var,
    pub gate_b: Var,
    pub base_b: Var,
    pub head_c: Var,
    pub head_b: Var,
    pub fb_a: Var,
    pub fb_b: Var,
    pub fb_c: Var,
}

impl ModelVars {
    /// Builds handles from a slice in declaration order.
    pub fn from_slice(v: &[Var]) -> Result<Self> {
        if v.len() != NUM_PARAMS {
            return Err(Error::dim(format!(
                "expected {NUM_PARAMS} parameter handles, got {}",
                v.len()
            )));
        }
        Ok(Self {
            embed_w: v[0],
            embed_b: v[1],
            gate_a: v[2],
            base_a: v[3],
            gate_b: v[4],
            base_b: v[5],
            head_c: v[6],
            head_b: v[7],
            fb_a: v[8],
            fb_b: v[9],
            fb_c: v[10],
        })
    }

    pub fn to_vec(&self) -> Vec<Var> {
        vec![
            self.embed_w,
            self.embed_b,
            self.gate_a,
            self.base_a,
            self.gate_b,
            self.base_b,
            self.head_c,
            self.head_b,
            self.fb_a,
            self.fb_b,
            self.fb_c,
        ]
    }
}

/// Feedback projections evaluated once per step.
#[derive(Debug, Clone, Copy)]
pub struct Modulation {
    pub delta_a: Var,
    pub delta_b: Var,
    pub delta_c: Var,
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct TapeTrace {
    pub hidden: Var,
    pub logits: Var,
    pub gates_a: Vec<Var>,
    pub gates_b: Vec<Var>,
}

/// Values produced by one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub hidden: Tensor,
    pub logits: Tensor,
    pub gates_a: Vec<Tensor>,
    pub gates_b: Vec<Tensor>,
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / (cols as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let vals = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::matrix(rows, cols, vals).expect("consistent shape")
}

impl SdsmModel {
    /// Fresh model: weights uniform in `±1/sqrt(fan_in)`, biases and feedback
    /// projections zero.
    pub fn new(config: SdsmConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (p, n, k) = (config.patch_len, config.hidden_dim, config.num_classes);
        let zeros = |shape: &[usize]| Parameter::new(Tensor::zeros(shape));
        Ok(Self {
            config,
            embed_w: Parameter::new(uniform_matrix(n, p, rng)),
            embed_b: zeros(&[n]),
            gate_a: Parameter::new(uniform_matrix(n, n, rng)),
            base_a: zeros(&[n]),
            gate_b: Parameter::new(uniform_matrix(n, n, rng)),
            base_b: zeros(&[n]),
            head_c: Parameter::new(uniform_matrix(k, n, rng)),
            head_b: zeros(&[k]),
            fb_a: zeros(&[n, k]),
            fb_b: zeros(&[n, k]),
            fb_c: zeros(&[k, k]),
        })
    }

    /// Expected shape of each parameter in declaration order.
    pub fn param_shapes(config: &SdsmConfig) -> [Vec<usize>; NUM_PARAMS] {
        let (p, n, k) = (config.patch_len, config.hidden_dim, config.num_classes);
        [
            vec![n, p],
            vec![n],
            vec![n, n],
            vec![n],
            vec![n, n],
            vec![n],
            vec![k, n],
            vec![k],
            vec![n, k],
            vec![n, k],
            vec![k, k],
        ]
    }

    /// Assembles a model from parameter tensors in declaration order.
    pub fn from_tensors(config: SdsmConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = Self::param_shapes(&config);
        if tensors.len() != NUM_PARAMS {
            return Err(Error::dim(format!(
                "expected {NUM_PARAMS} tensors, got {}",
                tensors.len()
            )));
        }
        for (i, t) in tensors.iter().enumerate() {
            if t.shape() != shapes[i].as_slice() {
                return Err(Error::dim(format!(
                    "{} has shape {:?}, expected {:?}",
                    PARAM_NAMES[i],
                    t.shape(),
                    shapes[i]
                )));
            }
        }
        let mut it = tensors.into_iter().map(Parameter::new);
        let mut next = || it.next().expect("length checked");
        Ok(Self {
            config,
            embed_w: next(),
            embed_b: next(),
            gate_a: next(),
            base_a: next(),
            gate_b: next(),
            base_b: next(),
            head_c: next(),
            head_b: next(),
            fb_a: next(),
            fb_b: next(),
            fb_c: next(),
        })
    }

    pub fn config(&self) -> &SdsmConfig {
        &self.config
    }

    pub fn params(&self) -> [&Parameter; NUM_PARAMS] {
        [
            &self.embed_w,
            &self.embed_b,
            &self.gate_a,
            &self.base_a,
            &self.gate_b,
            &self.base_b,
            &self.head_c,
            &self.head_b,
            &self.fb_a,
            &self.fb_b,
            &self.fb_c,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter; NUM_PARAMS] {
        [
            &mut self.embed_w,
            &mut self.embed_b,
            &mut self.gate_a,
            &mut self.base_a,
            &mut self.gate_b,
            &mut self.base_b,
            &mut self.head_c,
            &mut self.head_b,
            &mut self.fb_a,
            &mut self.fb_b,
            &mut self.fb_c,
        ]
    }

    /// Parameter values in declaration order.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.params().iter().map(|p| p.tensor.clone()).collect()
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        let vars: Vec<Var> = self
            .params()
            .iter()
            .map(|p| tape.leaf(p.tensor.clone()))
            .collect();
        ModelVars::from_slice(&vars).expect("fixed parameter count")
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(Error::dim(format!(
                "input of length {}, model expects {}",
                x.len(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// Splits `x` into patches and embeds each one.
    pub fn embed_tape(&self, tape: &mut Tape, vars: &ModelVars, x: &[f64]) -> Result<Vec<Var>> {
        self.check_input(x)?;
        x.chunks(self.config.patch_len)
            .map(|patch| {
                let p = tape.constant(Tensor::vector(patch.to_vec()));
                let wx = tape.matvec(vars.embed_w, p)?;
                tape.add(wx, vars.embed_b)
            })
            .collect()
    }

    /// Token sequence `[L × n]` for `x`.
    pub fn embed(&self, x: &[f64]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let tokens = self.embed_tape(&mut tape, &vars, x)?;
        let vals = tokens
            .iter()
            .flat_map(|&t| tape.value(t).values().to_vec())
            .collect();
        Tensor::matrix(tokens.len(), self.config.hidden_dim, vals)
    }

    /// Projects a feedback signal onto the gates and logits.
    pub fn modulation(&self, tape: &mut Tape, vars: &ModelVars, fb: &[f64]) -> Result<Modulation> {
        if fb.len() != self.config.num_classes {
            return Err(Error::dim(format!(
                "feedback of length {}, model has {} classes",
                fb.len(),
                self.config.num_classes
            )));
        }
        let f = tape.constant(Tensor::vector(fb.to_vec()));
        Ok(Modulation {
            delta_a: tape.matvec(vars.fb_a, f)?,
            delta_b: tape.matvec(vars.fb_b, f)?,
            delta_c: tape.matvec(vars.fb_c, f)?,
        })
    }

    /// Records one forward pass on `tape`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        x: &[f64],
        modulation: Option<&Modulation>,
    ) -> Result<TapeTrace> {
        let tokens = self.embed_tape(tape, vars, x)?;
        let mut gates_a = Vec::with_capacity(tokens.len());
        let mut gates_b = Vec::with_capacity(tokens.len());
        let mut states = Vec::with_capacity(tokens.len());
        let mut h: Option<Var> = None;
        for &u in &tokens {
            let mut pre_a = tape.matvec(vars.gate_a, u)?;
            pre_a = tape.add(pre_a, vars.base_a)?;
            let mut pre_b = tape.matvec(vars.gate_b, u)?;
            pre_b = tape.add(pre_b, vars.base_b)?;
            if let Some(m) = modulation {
                pre_a = tape.add(pre_a, m.delta_a)?;
                pre_b = tape.add(pre_b, m.delta_b)?;
            }
            let a = tape.sigmoid(pre_a);
            let b = tape.softplus(pre_b);
            let drive = tape.mul(b, u)?;
            let next = match h {
                // h_0 = 0, so the carried term vanishes on the first step
                None => drive,
                Some(prev) => {
                    let carried = tape.mul(a, prev)?;
                    tape.add(carried, drive)?
                }
            };
            gates_a.push(a);
            gates_b.push(b);
            states.push(next);
            h = Some(next);
        }
        let hidden = match self.config.pooling {
            Pooling::Last => *states.last().expect("seq_len >= 1"),
            Pooling::Mean => tape.mean(&states)?,
        };
        let mut logits = tape.matvec(vars.head_c, hidden)?;
        logits = tape.add(logits, vars.head_b)?;
        if let Some(m) = modulation {
            logits = tape.add(logits, m.delta_c)?;
        }
        Ok(TapeTrace {
            hidden,
            logits,
            gates_a,
            gates_b,
        })
    }

    /// Forward pass returning plain values.
    pub fn forward(&self, x: &[f64], fb: Option<&[f64]>) -> Result<ForwardTrace> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let modulation = fb
            .map(|f| self.modulation(&mut tape, &vars, f))
            .transpose()?;
        let tr = self.forward_tape(&mut tape, &vars, x, modulation.as_ref())?;
        let grab = |v: &Var| tape.value(*v).clone();
        Ok(ForwardTrace {
            hidden: grab(&tr.hidden),
            logits: grab(&tr.logits),
            gates_a: tr.gates_a.iter().map(grab).collect(),
            gates_b: tr.gates_b.iter().map(grab).collect(),
        })
    }

    /// Nearest seen prototype to the hidden state of `x`.
    pub fn predict(&self, x: &[f64], bank: &PrototypeBank) -> Result<usize> {
        self.predict_with(x, bank, None)
    }

    pub fn predict_with(
        &self,
        x: &[f64],
        bank: &PrototypeBank,
        fb: Option<&[f64]>,
    ) -> Result<usize> {
        let trace = self.forward(x, fb)?;
        bank.nearest(trace.hidden.values())
    }

    /// Largest logit among `allowed` classes (all classes when `None`);
    /// ties go to the smaller index.
    pub fn predict_logits(
        &self,
        x: &[f64],
        fb: Option<&[f64]>,
        allowed: Option<&[usize]>,
    ) -> Result<usize> {
        let trace = self.forward(x, fb)?;
        Ok(argmax_over(trace.logits.values(), allowed))
    }
}

pub(crate) fn argmax_over(values: &[f64], allowed: Option<&[usize]>) -> usize {
    let all: Vec<usize>;
    let candidates = match allowed {
        Some(a) if !a.is_empty() => a,
        _ => {
            all = (0..values.len()).collect();
            &all
        }
    };
    let mut best = candidates[0];
    for &k in candidates {
        if values[k] > values[best] || (values[k] == values[best] && k < best) {
            best = k;
        }
    }
    best
}
