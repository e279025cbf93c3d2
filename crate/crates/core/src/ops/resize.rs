//! Bilinear resizing with half-pixel centers (`align_corners = false`).

use crate::autograd::Var;
use crate::error::{shape_err, Result};
use crate::tensor::{Shape, Tensor};

/// Interpolation taps along one axis: `(i0, i1, w1)` with weight `1 - w1` on `i0`.
fn taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

fn resize_planes(data: &[f64], planes: usize, from: (usize, usize), to: (usize, usize)) -> Vec<f64> {
    let (ty, tx) = (taps(from.0, to.0), taps(from.1, to.1));
    let mut out = Vec::with_capacity(planes * to.0 * to.1);
    for p in 0..planes {
        let plane = &data[p * from.0 * from.1..(p + 1) * from.0 * from.1];
        for &(y0, y1, wy) in &ty {
            let (r0, r1) = (&plane[y0 * from.1..], &plane[y1 * from.1..]);
            for &(x0, x1, wx) in &tx {
                let top = r0[x0] + wx * (r0[x1] - r0[x0]);
                let bot = r1[x0] + wx * (r1[x1] - r1[x0]);
                out.push(top + wy * (bot - top));
            }
        }
    }
    out
}

/// Plain-tensor bilinear resize, for analysis code that needs no gradients.
pub fn resize_tensor(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let xs = x.shape();
    if out_h == 0 || out_w == 0 || xs.h == 0 || xs.w == 0 {
        return shape_err("bilinear_resize", format!("{xs:?} to {out_h}x{out_w}"));
    }
    if (xs.h, xs.w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let data = resize_planes(x.data(), xs.n * xs.c, (xs.h, xs.w), (out_h, out_w));
    Ok(Tensor::from_vec(Shape::new(xs.n, xs.c, out_h, out_w), data))
}

/// Nearest-neighbour resize under the same half-pixel convention.
pub fn resize_nearest(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let xs = x.shape();
    if out_h == 0 || out_w == 0 || xs.h == 0 || xs.w == 0 {
        return shape_err("resize_nearest", format!("{xs:?} to {out_h}x{out_w}"));
    }
    let src = |o: usize, n_in: usize, n_out: usize| (((2 * o + 1) * n_in) / (2 * n_out)).min(n_in - 1);
    Ok(Tensor::from_fn(Shape::new(xs.n, xs.c, out_h, out_w), |n, c, y, x_| {
        x.at(n, c, src(y, xs.h, out_h), src(x_, xs.w, out_w))
    }))
}

pub fn bilinear_resize(x: Var<'_>, out_h: usize, out_w: usize) -> Result<Var<'_>> {
    let xs = x.shape();
    if (xs.h, xs.w) == (out_h, out_w) {
        return Ok(x);
    }
    let y = resize_tensor(&x.value(), out_h, out_w)?;
    Ok(x.tape().record(y, &[x], move |g, _| {
        let (ty, tx) = (taps(xs.h, out_h), taps(xs.w, out_w));
        let mut dx = vec![0.0; xs.numel()];
        for p in 0..xs.n * xs.c {
            let base = p * xs.plane();
            let gp = &g.data()[p * out_h * out_w..(p + 1) * out_h * out_w];
            for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let gv = gp[oy * out_w + ox];
                    let (gt, gb) = (gv * (1.0 - wy), gv * wy);
                    dx[base + y0 * xs.w + x0] += gt * (1.0 - wx);
                    dx[base + y0 * xs.w + x1] += gt * wx;
                    dx[base + y1 * xs.w + x0] += gb * (1.0 - wx);
                    dx[base + y1 * xs.w + x1] += gb * wx;
                }
            }
        }
        vec![Some(Tensor::from_vec(xs, dx))]
    }))
}

/// Doubles the spatial size.
pub fn upsample2(x: Var<'_>) -> Result<Var<'_>> {
    let s = x.shape();
    bilinear_resize(x, 2 * s.h, 2 * s.w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(h: usize, w: usize, v: &[f64]) -> Tensor {
        Tensor::new(Shape::new(1, 1, h, w), v.to_vec()).unwrap()
    }

    #[test]
    fn single_pixel_broadcasts() {
        let y = resize_tensor(&t(1, 1, &[5.0]), 3, 7).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn identical_size_is_identity() {
        let x = t(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(resize_tensor(&x, 2, 3).unwrap().bit_eq(&x));
    }

    #[test]
    fn two_by_two_upsampled_matches_hand_evaluation() {
        let y = resize_tensor(&t(2, 2, &[1.0, 2.0, 3.0, 4.0]), 4, 4).unwrap();
        // Output centers map to source coordinates -0.25 (clamped to 0), 0.25, 0.75, 1.25 (i1 clamped).
        let axis = [0.0, 0.25, 0.75, 1.0];
        for (oy, fy) in axis.iter().enumerate() {
            for (ox, fx) in axis.iter().enumerate() {
                let want = 1.0 + fx + 2.0 * fy;
                assert_eq!(y.at(0, 0, oy, ox), want, "({oy},{ox})");
            }
        }
    }

    #[test]
    fn downsample_by_two_averages_blocks() {
        let x = Tensor::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, x| (y * 4 + x) as f64);
        let y = resize_tensor(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn nearest_replicates() {
        let y = resize_nearest(&t(1, 2, &[1.0, 2.0]), 1, 4).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0]);
    }
}
