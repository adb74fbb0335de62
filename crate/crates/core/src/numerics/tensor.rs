use crate::error::{Error, Result};

/// Dense row-major array of `f64` with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::dim(format!("invalid shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; len]).expect("zero tensor with empty shape")
    }

    pub fn vector(values: Vec<f64>) -> Self {
        let n = values.len();
        Self::new(vec![n], values).expect("empty vector")
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    pub fn scalar(value: f64) -> Self {
        Self::vector(vec![value])
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::dim(format!(
                "expected a matrix, got shape {other:?}"
            ))),
        }
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.values.len() {
            return Err(Error::dim(format!(
                "gradient of length {} for tensor of shape {:?}",
                g.len(),
                self.shape
            )));
        }
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, x)| *b += x),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Plain matrix product on raw row-major buffers.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &a[i * k..(i + 1) * k];
        let dst = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in row.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (d, &bv) in dst.iter_mut().zip(brow) {
                *d += aip * bv;
            }
        }
    }
    out
}

/// Matrix product `a · b`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Tensor::matrix(m, n, matmul_raw(a.values(), b.values(), m, k, n))
}

/// Cosine similarity with a hard zero when either norm falls below `eps`.
pub fn cosine_sim(u: &[f64], v: &[f64], eps: f64) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::dim(format!(
            "cosine similarity of lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    if eps <= 0.0 {
        return Err(Error::Parameter(format!(
            "cosine eps must be > 0, got {eps}"
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu < eps || nv < eps {
        return Ok(0.0);
    }
    Ok(dot(u, v) / (nu * nv))
}

/// `-log softmax(scores / tau)[target]`, evaluated with max subtraction.
pub fn softmax_nll(scores: &[f64], target: usize, tau: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::dim("softmax over zero classes"));
    }
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::Parameter(format!(
            "temperature must be > 0, got {tau}"
        )));
    }
    if target >= scores.len() {
        return Err(Error::Index(format!(
            "target {target} out of range for {} classes",
            scores.len()
        )));
    }
    let (lse, _) = log_softmax_parts(scores, tau);
    Ok((lse - scores[target] / tau).max(0.0))
}

/// Returns `(logsumexp(scores/tau), softmax(scores/tau))`.
pub(crate) fn log_softmax_parts(scores: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let max = scores
        .iter()
        .map(|s| s / tau)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s / tau - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs = exps.iter().map(|e| e / sum).collect();
    (max + sum.ln(), probs)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn matmul_identity_and_zero() {
        let m = Tensor::matrix(2, 2, vec![1.5, -2.0, 0.25, 7.0]).unwrap();
        assert_eq!(
            matmul(&Tensor::identity(2), &m).unwrap().values(),
            m.values()
        );
        let z = Tensor::zeros(&[2, 2]);
        assert!(matmul(&z, &m).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_small_product() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.values(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[1.0, 0.0], 1e-12).unwrap(), 1.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0], 1e-12).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cosine_sim(&[1.0, 2.0], &[2.0, 1.0], 1e-12).unwrap(),
            0.8,
            epsilon = 1e-15
        );
        assert_eq!(cosine_sim(&[0.0, 0.0], &[2.0, 1.0], 1e-12).unwrap(), 0.0);
        assert!(cosine_sim(&[1.0], &[1.0, 2.0], 1e-12).is_err());
    }

    #[test]
    fn softmax_nll_cases() {
        assert_abs_diff_eq!(
            softmax_nll(&[0.3, 0.3, 0.3], 1, 1.0).unwrap(),
            3f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            softmax_nll(&[1.0, 0.0], 0, 1.0).unwrap(),
            0.313_261_687_518_222_8,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            softmax_nll(&[1.0, 0.0], 0, 0.5).unwrap(),
            0.126_928_011_042_972_1,
            epsilon = 1e-12
        );
        assert!(matches!(
            softmax_nll(&[1.0], 0, 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(softmax_nll(&[1.0], 1, 1.0), Err(Error::Index(_))));
    }

    #[test]
    fn softmax_nll_survives_huge_scores() {
        let v = softmax_nll(&[1e300, -1e300], 1, 1.0).unwrap();
        assert!(v.is_finite());
        let v = softmax_nll(&[1000.0, 999.0], 0, 1.0).unwrap();
        assert_abs_diff_eq!(v, (1.0 + (-1f64).exp()).ln(), epsilon = 1e-12);
    }

    #[test]
    fn stable_activations() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert_abs_diff_eq!(softplus(0.0), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(softplus(50.0), 50.0, epsilon = 1e-12);
        assert!(softplus(-800.0) >= 0.0);
    }
}
