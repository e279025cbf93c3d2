//! Spatial pooling.

use crate::autograd::Var;
use crate::error::{shape_err, Result};
use crate::tensor::{Shape, Tensor};

use super::conv::{pad_index, PadMode};

fn pooled_extent(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (n + 2 * pad).checked_sub(k).map(|d| d / stride + 1)
}

/// Max pooling with zero-free padding: padded taps never win. The gradient
/// goes to the first maximal element in scan order.
pub fn max_pool2d(x: Var<'_>, k: usize, stride: usize, pad: usize) -> Result<Var<'_>> {
    let xs = x.shape();
    let (Some(ho), Some(wo)) = (
        pooled_extent(xs.h, k, stride, pad),
        pooled_extent(xs.w, k, stride, pad),
    ) else {
        return shape_err("max_pool2d", format!("{xs:?} smaller than window {k}"));
    };
    if stride == 0 || pad >= k {
        return shape_err("max_pool2d", format!("stride {stride}, pad {pad}, window {k}"));
    }
    let ys = Shape::new(xs.n, xs.c, ho, wo);
    let xv = x.value();
    let mut out = Vec::with_capacity(ys.numel());
    let mut argmax = Vec::with_capacity(ys.numel());
    for nc in 0..xs.n * xs.c {
        let plane = &xv.data()[nc * xs.plane()..(nc + 1) * xs.plane()];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = (f64::NEG_INFINITY, usize::MAX);
                for ky in 0..k {
                    let Some(iy) = pad_index((oy * stride + ky) as isize - pad as isize, xs.h, PadMode::Zero) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = pad_index((ox * stride + kx) as isize - pad as isize, xs.w, PadMode::Zero) else {
                            continue;
                        };
                        let v = plane[iy * xs.w + ix];
                        if v > best.0 || best.1 == usize::MAX {
                            best = (v, nc * xs.plane() + iy * xs.w + ix);
                        }
                    }
                }
                out.push(best.0);
                argmax.push(best.1);
            }
        }
    }
    let y = Tensor::from_vec(ys, out);
    Ok(x.tape().record(y, &[x], move |g, _| {
        let mut dx = vec![0.0; xs.numel()];
        for (&src, gv) in argmax.iter().zip(g.data()) {
            dx[src] += gv;
        }
        vec![Some(Tensor::from_vec(xs, dx))]
    }))
}

/// Stride-1 `k`×`k` box filter with reflect padding; output keeps the input size.
pub fn avg_pool_reflect(x: Var<'_>, k: usize) -> Result<Var<'_>> {
    let xs = x.shape();
    let r = k / 2;
    if k % 2 == 0 || r >= xs.h.min(xs.w) {
        return shape_err("avg_pool_reflect", format!("window {k} on {xs:?}"));
    }
    let table = |n: usize| -> Vec<usize> {
        (0..n)
            .flat_map(|o| {
                (0..k).map(move |t| {
                    pad_index(o as isize + t as isize - r as isize, n, PadMode::Reflect).unwrap_or(0)
                })
            })
            .collect()
    };
    let (ty, tx) = (table(xs.h), table(xs.w));
    let norm = 1.0 / (k * k) as f64;
    let xv = x.value();
    let mut out = vec![0.0; xs.numel()];
    for nc in 0..xs.n * xs.c {
        let base = nc * xs.plane();
        let plane = &xv.data()[base..base + xs.plane()];
        for oy in 0..xs.h {
            for ox in 0..xs.w {
                let mut acc = 0.0;
                for &iy in &ty[oy * k..(oy + 1) * k] {
                    for &ix in &tx[ox * k..(ox + 1) * k] {
                        acc += plane[iy * xs.w + ix];
                    }
                }
                out[base + oy * xs.w + ox] = acc * norm;
            }
        }
    }
    let y = Tensor::from_vec(xs, out);
    Ok(x.tape().record(y, &[x], move |g, _| {
        let mut dx = vec![0.0; xs.numel()];
        for nc in 0..xs.n * xs.c {
            let base = nc * xs.plane();
            for oy in 0..xs.h {
                for ox in 0..xs.w {
                    let gv = g.data()[base + oy * xs.w + ox] * norm;
                    for &iy in &ty[oy * k..(oy + 1) * k] {
                        for &ix in &tx[ox * k..(ox + 1) * k] {
                            dx[base + iy * xs.w + ix] += gv;
                        }
                    }
                }
            }
        }
        vec![Some(Tensor::from_vec(xs, dx))]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    #[test]
    fn max_pool_halves_and_routes_gradient() {
        let tape = Tape::new();
        let x = tape.var(Tensor::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, x| (y * 4 + x) as f64));
        let y = max_pool2d(x, 3, 2, 1).unwrap();
        assert_eq!(y.value().data(), &[5.0, 7.0, 13.0, 15.0]);
        let g = tape.backward(y.sum(), None).unwrap().wrt(&x);
        assert_eq!(g.sum(), 4.0);
        assert_eq!(g.at(0, 0, 3, 3), 1.0);
    }

    #[test]
    fn avg_pool_of_constant_is_constant() {
        let tape = Tape::new();
        let x = tape.var(Tensor::full(Shape::new(1, 2, 3, 5), 0.25));
        let y = avg_pool_reflect(x, 3).unwrap().value();
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn avg_pool_reflects_at_border() {
        let tape = Tape::new();
        let x = tape.var(Tensor::new(Shape::new(1, 1, 1, 3), vec![1.0, 2.0, 3.0]).unwrap());
        assert!(avg_pool_reflect(x, 3).is_err());
        let x = tape.var(Tensor::from_fn(Shape::new(1, 1, 2, 3), |_, _, _, x| (x + 1) as f64));
        // Row 0 of column 0 sees columns {1, 0, 1} on both reflected rows.
        let y = avg_pool_reflect(x, 3).unwrap().value();
        assert!((y.at(0, 0, 0, 0) - 5.0 / 3.0).abs() < 1e-15);
    }
}
