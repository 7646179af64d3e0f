//! Forward and backward rules for the handful of differentiable ops the
//! model needs. Backward functions accumulate into gradient buffers.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `y = W x + b`.
pub fn affine(w: &Tensor, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if w.shape().len() != 2 {
        return Err(Error::dim("affine weight rank", 2, w.shape().len()));
    }
    if w.cols() != x.len() {
        return Err(Error::dim("affine input", w.cols(), x.len()));
    }
    if w.rows() != b.len() {
        return Err(Error::dim("affine bias", w.rows(), b.len()));
    }
    Ok((0..w.rows())
        .map(|r| b[r] + w.row(r).iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect())
}

/// Accumulates `dW += g xᵀ` and `db += g`; returns `dx = Wᵀ g`.
pub fn affine_backward(w: &Tensor, x: &[f64], g: &[f64], dw: &mut Tensor, db: &mut [f64]) -> Result<Vec<f64>> {
    if g.len() != w.rows() || x.len() != w.cols() {
        return Err(Error::dim(
            "affine backward",
            format!("g[{}], x[{}]", w.rows(), w.cols()),
            format!("g[{}], x[{}]", g.len(), x.len()),
        ));
    }
    if dw.shape() != w.shape() || db.len() != w.rows() {
        return Err(Error::dim("affine grad buffers", format!("{:?}", w.shape()), format!("{:?}", dw.shape())));
    }
    let mut dx = vec![0.0; x.len()];
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        db[r] += gr;
        for ((dwv, xv), (dxv, wv)) in dw.row_mut(r).iter_mut().zip(x).zip(dx.iter_mut().zip(w.row(r))) {
            *dwv += gr * xv;
            *dxv += gr * wv;
        }
    }
    Ok(dx)
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient through ReLU given the pre-activation; the subgradient at 0 is 0.
pub fn relu_backward(pre: &[f64], g: &[f64]) -> Vec<f64> {
    pre.iter().zip(g).map(|(&p, &gv)| if p > 0.0 { gv } else { 0.0 }).collect()
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Vector-Jacobian product of softmax: `dz = p ⊙ (g − ⟨g, p⟩)`.
pub fn softmax_backward(probs: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(g).map(|(p, gv)| p * gv).sum();
    probs.iter().zip(g).map(|(p, gv)| p * (gv - dot)).collect()
}
