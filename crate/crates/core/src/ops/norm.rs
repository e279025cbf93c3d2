//! Batch normalization.

use crate::autograd::Var;
use crate::error::{shape_err, Result};
use crate::tensor::{Shape, Tensor};

use super::channel::{add_channels, mul_channels};

pub const BN_EPS: f64 = 1e-5;

/// Per-channel statistics of one training-mode batch.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Tensor,
    /// Unbiased variance, the quantity folded into running estimates.
    pub var: Tensor,
}

fn check(x: Shape, gamma: Shape, beta: Shape) -> Result<()> {
    let want = Shape::new(1, x.c, 1, 1);
    if gamma != want || beta != want {
        return shape_err("batch_norm", format!("gamma {gamma:?}, beta {beta:?} for {x:?}"));
    }
    if x.n * x.plane() < 2 {
        return shape_err("batch_norm", format!("batch statistics need two values per channel, got {x:?}"));
    }
    Ok(())
}

/// Normalizes with the batch's own mean and biased variance.
pub fn batch_norm_train<'t>(x: Var<'t>, gamma: Var<'t>, beta: Var<'t>) -> Result<(Var<'t>, BatchStats)> {
    let xs = x.shape();
    check(xs, gamma.shape(), beta.shape())?;
    let xv = x.value();
    let gv = gamma.value();
    let plane = xs.plane();
    let count = (xs.n * plane) as f64;
    let chan = move |c: usize| (0..xs.n).flat_map(move |n| {
        let base = (n * xs.c + c) * plane;
        base..base + plane
    });

    let mut mean = vec![0.0; xs.c];
    let mut inv_std = vec![0.0; xs.c];
    let mut unbiased = vec![0.0; xs.c];
    for c in 0..xs.c {
        let m = chan(c).map(|i| xv.data()[i]).sum::<f64>() / count;
        let ss = chan(c).map(|i| (xv.data()[i] - m).powi(2)).sum::<f64>();
        mean[c] = m;
        inv_std[c] = 1.0 / (ss / count + BN_EPS).sqrt();
        unbiased[c] = ss / (count - 1.0);
    }
    let mut xhat = vec![0.0; xs.numel()];
    for c in 0..xs.c {
        for i in chan(c) {
            xhat[i] = (xv.data()[i] - mean[c]) * inv_std[c];
        }
    }
    let y: Vec<f64> = (0..xs.numel())
        .map(|i| xhat[i] * gv.data()[(i / plane) % xs.c])
        .collect();
    let xhat = Tensor::from_vec(xs, xhat);
    let saved = xhat.clone();
    let scaled = x.tape().record(Tensor::from_vec(xs, y), &[x, gamma], move |g, needs| {
        let gd = g.data();
        let xh = saved.data();
        let mut dgamma = vec![0.0; xs.c];
        let mut dx = needs[0].then(|| vec![0.0; xs.numel()]);
        for c in 0..xs.c {
            let (mut sum_g, mut sum_gx) = (0.0, 0.0);
            for i in chan(c) {
                sum_g += gd[i];
                sum_gx += gd[i] * xh[i];
            }
            dgamma[c] = sum_gx;
            if let Some(dx) = dx.as_deref_mut() {
                let k = gv.data()[c] * inv_std[c] / count;
                for i in chan(c) {
                    dx[i] = k * (count * gd[i] - sum_g - xh[i] * sum_gx);
                }
            }
        }
        vec![
            dx.map(|d| Tensor::from_vec(xs, d)),
            needs[1].then(|| Tensor::from_vec(Shape::new(1, xs.c, 1, 1), dgamma)),
        ]
    });
    let out = add_channels(scaled, beta)?;
    let cs = Shape::new(1, xs.c, 1, 1);
    Ok((
        out,
        BatchStats {
            mean: Tensor::from_vec(cs, mean),
            var: Tensor::from_vec(cs, unbiased),
        },
    ))
}

/// Normalizes with fixed running statistics; only `gamma` and `beta` learn.
pub fn batch_norm_eval<'t>(
    x: Var<'t>,
    gamma: Var<'t>,
    beta: Var<'t>,
    running_mean: &Tensor,
    running_var: &Tensor,
) -> Result<Var<'t>> {
    let xs = x.shape();
    let want = Shape::new(1, xs.c, 1, 1);
    if gamma.shape() != want || beta.shape() != want || running_mean.shape() != want || running_var.shape() != want {
        return shape_err("batch_norm", format!("per-channel operands do not match {xs:?}"));
    }
    let tape = x.tape();
    let shift = tape.constant(running_mean.map(|m| -m));
    let inv = tape.constant(running_var.map(|v| 1.0 / (v + BN_EPS).sqrt()));
    let xhat = mul_channels(add_channels(x, shift)?, inv)?;
    add_channels(mul_channels(xhat, gamma)?, beta)
}
