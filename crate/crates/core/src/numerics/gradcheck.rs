use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences and returns the largest componentwise relative error.
///
/// `f` receives a fresh tape and one leaf per entry of `params`, and must
/// return a scalar node. The relative error of a component is
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(params: &[Tensor], h: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("step must be > 0, got {h}")));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.scalar(out);
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("non-finite function value {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.scalar(out).is_finite() {
        return Err(Error::Evaluation(format!(
            "non-finite function value {}",
            tape.scalar(out)
        )));
    }
    let grads = tape.backward(out)?;

    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for (pi, &var) in vars.iter().enumerate() {
        let analytic = grads.wrt(var);
        for ci in 0..params[pi].len() {
            let orig = params[pi].values()[ci];
            work[pi].values_mut()[ci] = orig + h;
            let plus = eval(&work)?;
            work[pi].values_mut()[ci] = orig - h;
            let minus = eval(&work)?;
            work[pi].values_mut()[ci] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[ci];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let theta = Tensor::vector(vec![0.5, -1.25, 3.0, 1e-3]);
        let err = grad_check(&[theta], 1e-5, |tape, v| {
            let d = tape.dot(v[0], v[0])?;
            Ok(tape.scale(d, 0.5))
        })
        .unwrap();
        assert!(err <= 1e-8, "err = {err}");
    }

    #[test]
    fn non_finite_value_is_evaluation_error() {
        let theta = Tensor::vector(vec![f64::INFINITY]);
        let res = grad_check(&[theta], 1e-5, |tape, v| tape.dot(v[0], v[0]));
        assert!(matches!(res, Err(Error::Evaluation(_))));
    }

    #[test]
    fn rejects_non_positive_step() {
        let theta = Tensor::vector(vec![1.0]);
        assert!(grad_check(&[theta], 0.0, |tape, v| tape.dot(v[0], v[0])).is_err());
    }
}
