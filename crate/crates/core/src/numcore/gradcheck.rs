use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::Parameterized;
use crate::error::Result;

/// Denominator floor for the relative error, so coordinates whose gradient
/// is exactly zero are compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-7;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Coordinates sampled per parameter; all of them when the parameter is
    /// smaller.
    pub samples_per_parameter: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            samples_per_parameter: 24,
            seed: 0,
        }
    }
}

/// Compares analytic gradients against central differences.
///
/// `loss` must compute the scalar loss and accumulate its gradient into the
/// model's parameters. Returns the largest relative error
/// `|a − n| / max(|a|, |n|, floor)` over the sampled coordinates.
pub fn grad_check<M, F>(model: &mut M, mut loss: F, opts: GradCheckOptions) -> Result<f64>
where
    M: Parameterized,
    F: FnMut(&mut M) -> Result<f64>,
{
    model.zero_grad();
    loss(model)?;
    let analytic: Vec<Vec<f64>> = model
        .parameters()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let coords: Vec<Vec<usize>> = model
        .parameters()
        .iter()
        .map(|p| {
            let n = p.value.len();
            let k = opts.samples_per_parameter.min(n);
            let mut idx = sample(&mut rng, n, k).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect();

    let h = opts.epsilon;
    let mut worst: f64 = 0.0;
    for (pi, idxs) in coords.iter().enumerate() {
        for &k in idxs {
            let original = model.parameters()[pi].value.data()[k];
            model.parameters_mut()[pi].value.data_mut()[k] = original + h;
            let plus = loss(model)?;
            model.parameters_mut()[pi].value.data_mut()[k] = original - h;
            let minus = loss(model)?;
            model.parameters_mut()[pi].value.data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi][k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
            worst = worst.max(rel);
        }
    }
    model.zero_grad();
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::ops::{affine, affine_backward};
    use crate::numcore::optim::Parameter;
    use crate::numcore::tensor::Tensor;

    struct Linear {
        w: Parameter,
        b: Parameter,
    }

    impl Parameterized for Linear {
        fn parameters(&self) -> Vec<&Parameter> {
            vec![&self.w, &self.b]
        }
        fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
            vec![&mut self.w, &mut self.b]
        }
    }

    fn linear() -> Linear {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        Linear {
            w: Parameter::new("w", Tensor::uniform(&[3, 4], 1.0, &mut rng)),
            b: Parameter::new("b", Tensor::uniform(&[3], 1.0, &mut rng)),
        }
    }

    // L = <c, W x + b>, exact under central differences up to rounding
    fn linear_loss(m: &mut Linear) -> Result<f64> {
        let x = [0.5, -1.0, 2.0, 0.25];
        let c = [1.0, -2.0, 0.5];
        let y = affine(&m.w.value, &x, m.b.value.data())?;
        let Linear { w, b } = m;
        affine_backward(&w.value, &x, &c, &mut w.grad, b.grad.data_mut())?;
        Ok(y.iter().zip(&c).map(|(a, b)| a * b).sum())
    }

    #[test]
    fn linear_model_is_exact() {
        let mut m = linear();
        let err = grad_check(&mut m, linear_loss, GradCheckOptions::default()).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut m = linear();
        let err = grad_check(
            &mut m,
            |m: &mut Linear| {
                let l = linear_loss(m)?;
                m.b.grad.data_mut()[0] += 0.5;
                Ok(l)
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn restores_parameters() {
        let mut m = linear();
        let before = m.w.value.clone();
        grad_check(&mut m, linear_loss, GradCheckOptions::default()).unwrap();
        assert_eq!(m.w.value, before);
    }
}
