use super::{Tape, Tensor, Var};
use crate::error::{bail, Result};

/// Compares tape gradients of a scalar function against central finite
/// differences and returns the largest
/// `|g_tape - g_fd| / max(1, |g_tape|, |g_fd|)` over every input coordinate.
///
/// Every input is treated as trainable regardless of its own flag.
pub fn grad_check<F>(mut f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: for<'t> FnMut(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let trainable: Vec<Tensor> = inputs
        .iter()
        .map(|t| t.clone().with_requires_grad(true))
        .collect();

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = trainable.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&tape, &vars)?;
    if out.value().len() != 1 {
        bail!(Dimension, "grad_check needs a scalar function, got {:?}", out.shape());
    }
    let grads = tape.backward(&out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(&trainable)
        .map(|(v, t)| grads.get(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut eval = |point: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = point.iter().map(|t| tape.leaf(t)).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut worst: f64 = 0.0;
    let mut point = trainable.clone();
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..point[i].len() {
            let orig = point[i].data()[j];
            point[i].data_mut()[j] = orig + eps;
            let plus = eval(&point)?;
            point[i].data_mut()[j] = orig - eps;
            let minus = eval(&point)?;
            point[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let ga = grad[j];
            let err = (ga - numeric).abs() / 1f64.max(ga.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial() {
        let x = Tensor::param(vec![2], vec![1.0, 2.0]);
        let tape = Tape::new();
        let v = tape.leaf(&x);
        let y = v.mul(&v).unwrap().sum();
        assert_eq!(tape.backward(&y).unwrap().get(&v).unwrap(), &[2.0, 4.0]);
        let err = grad_check(|_, v| Ok(v[0].mul(&v[0])?.sum()), &[x], 1e-5).unwrap();
        assert!(err <= 1e-7, "{err}");
    }

    #[test]
    fn rejects_non_scalar() {
        let x = Tensor::param(vec![2], vec![1.0, 2.0]);
        assert!(grad_check(|_, v| Ok(v[0].relu()), &[x], 1e-5).is_err());
    }
}
