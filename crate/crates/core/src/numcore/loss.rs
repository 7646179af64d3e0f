//! Classification losses over softmax outputs.
//!
//! Each loss takes the probability vector; its `_backward` returns the
//! gradient with respect to the logits that produced those probabilities,
//! i.e. the loss fused with the softmax Jacobian.

use crate::error::{Error, Result};

/// Floor applied to the target probability before taking the log.
pub const PROB_EPSILON: f64 = 1e-12;

fn target_prob(probs: &[f64], target: usize) -> Result<f64> {
    probs.get(target).copied().ok_or(Error::Index {
        what: "loss target",
        index: target,
        size: probs.len(),
    })
}

pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64> {
    let p = target_prob(probs, target)?;
    Ok(-p.max(PROB_EPSILON).ln())
}

/// `probs − one_hot(target)`.
pub fn cross_entropy_backward(probs: &[f64], target: usize) -> Result<Vec<f64>> {
    target_prob(probs, target)?;
    let mut g = probs.to_vec();
    g[target] -= 1.0;
    Ok(g)
}

/// `−(1 − p_t)^γ · log(p_t)`.
pub fn focal_loss(probs: &[f64], target: usize, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let p = target_prob(probs, target)?.max(PROB_EPSILON);
    Ok(-(1.0 - p).powf(gamma) * p.ln())
}

/// Gradient w.r.t. the logits, including the modulating factor:
/// `∂FL/∂z_k = c · (δ_tk − p_k)` with
/// `c = γ p_t (1 − p_t)^(γ−1) log p_t − (1 − p_t)^γ`.
pub fn focal_loss_backward(probs: &[f64], target: usize, gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    let p = target_prob(probs, target)?.max(PROB_EPSILON);
    let q = 1.0 - p;
    let modulating_term = if q > 0.0 && gamma != 0.0 {
        gamma * p * q.powf(gamma - 1.0) * p.ln()
    } else {
        0.0
    };
    let c = modulating_term - q.powf(gamma);
    let mut g: Vec<f64> = probs.iter().map(|&pk| -c * pk).collect();
    g[target] += c;
    Ok(g)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Argument(format!("focal gamma must be >= 0, got {gamma}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::ops::softmax;

    #[test]
    fn cross_entropy_values() {
        assert_eq!(cross_entropy(&[1.0, 0.0, 0.0], 0).unwrap(), 0.0);
        let uniform = [0.25; 4];
        for t in 0..4 {
            assert!((cross_entropy(&uniform, t).unwrap() - 4f64.ln()).abs() < 1e-15);
        }
        assert!((cross_entropy(&uniform, 0).unwrap() - 1.386_294_361_119_890_6).abs() < 1e-12);
        assert!(matches!(cross_entropy(&uniform, 4), Err(Error::Index { .. })));
    }

    #[test]
    fn focal_values() {
        for gamma in [0.0, 0.5, 2.0, 5.0] {
            assert_eq!(focal_loss(&[0.0, 1.0], 1, gamma).unwrap(), 0.0);
        }
        let fl = focal_loss(&[0.5, 0.5], 0, 2.0).unwrap();
        assert!((fl - 0.25 * 2f64.ln()).abs() < 1e-15);
        assert!((fl - 0.17329).abs() < 1e-5);
        assert!(focal_loss(&[0.5, 0.5], 0, -1.0).is_err());
        assert!(focal_loss(&[0.5, 0.5], 2, 2.0).is_err());
        // p_t = 0 is clamped
        assert!(focal_loss(&[1.0, 0.0], 1, 2.0).unwrap().is_finite());
    }

    #[test]
    fn focal_gamma_zero_is_cross_entropy() {
        let p = softmax(&[0.3, -1.0, 2.2, 0.0]);
        for t in 0..4 {
            assert_eq!(focal_loss(&p, t, 0.0).unwrap(), cross_entropy(&p, t).unwrap());
            assert_eq!(
                focal_loss_backward(&p, t, 0.0).unwrap(),
                cross_entropy_backward(&p, t).unwrap()
            );
        }
    }

    #[test]
    fn backward_matches_finite_differences_through_softmax() {
        let z = [0.4, -0.9, 1.3, 0.05, -2.0];
        let eps = 1e-6;
        for gamma in [0.0, 0.5, 1.0, 2.0, 3.5] {
            for t in 0..z.len() {
                let ana = focal_loss_backward(&softmax(&z), t, gamma).unwrap();
                let ce = cross_entropy_backward(&softmax(&z), t).unwrap();
                for k in 0..z.len() {
                    let mut zp = z;
                    let mut zm = z;
                    zp[k] += eps;
                    zm[k] -= eps;
                    let num = (focal_loss(&softmax(&zp), t, gamma).unwrap()
                        - focal_loss(&softmax(&zm), t, gamma).unwrap())
                        / (2.0 * eps);
                    let rel = (ana[k] - num).abs() / ana[k].abs().max(num.abs()).max(1e-8);
                    assert!(rel < 1e-6, "gamma {gamma} t {t} k {k}: {} vs {num}", ana[k]);
                    let num_ce = (cross_entropy(&softmax(&zp), t).unwrap()
                        - cross_entropy(&softmax(&zm), t).unwrap())
                        / (2.0 * eps);
                    assert!((ce[k] - num_ce).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn focal_backward_finite_at_certainty() {
        let g = focal_loss_backward(&[0.0, 1.0, 0.0], 1, 0.5).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }
}
