//! Bilinear sampling at normalized coordinates.
//!
//! Grid channel 0 holds the horizontal coordinate `u`, channel 1 the vertical
//! `v`, both in [-1, 1] with half-pixel centers: `x = ((u + 1)·W − 1) / 2`.

use crate::autograd::Var;
use crate::error::{contract_err, shape_err, Result};
use crate::tensor::{Shape, Tensor};

/// Coordinates this close to a lattice point are snapped onto it, so that a
/// grid built arithmetically from pixel centers samples them exactly.
const SNAP: f64 = 1e-9;

pub fn normalize_coord(x: f64, n: usize) -> f64 {
    (2.0 * x + 1.0) / n as f64 - 1.0
}

pub fn denormalize_coord(u: f64, n: usize) -> f64 {
    ((u + 1.0) * n as f64 - 1.0) / 2.0
}

/// Grid that samples every pixel of an `h`×`w` image at its own center.
pub fn identity_grid(n: usize, h: usize, w: usize) -> Tensor {
    Tensor::from_fn(Shape::new(n, 2, h, w), |_, c, y, x| {
        if c == 0 {
            normalize_coord(x as f64, w)
        } else {
            normalize_coord(y as f64, h)
        }
    })
}

/// One axis of a sample: the two taps, the fraction toward the second, the
/// factor d(pixel coordinate)/d(normalized coordinate) (zero when clamped),
/// and whether each tap lies inside the image.
#[derive(Clone, Copy)]
struct Axis {
    i0: usize,
    i1: usize,
    f: f64,
    dcoord: f64,
    in0: bool,
    in1: bool,
}

fn axis(u: f64, n: usize, border_clamp: bool) -> Axis {
    let mut x = denormalize_coord(u, n);
    let r = x.round();
    if (x - r).abs() <= SNAP {
        x = r;
    }
    let last = (n - 1) as f64;
    let scale = n as f64 / 2.0;
    if border_clamp {
        let (xc, dcoord) = if x < 0.0 {
            (0.0, 0.0)
        } else if x > last {
            (last, 0.0)
        } else {
            (x, scale)
        };
        let i0 = (xc.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        Axis { i0, i1, f: xc - i0 as f64, dcoord, in0: true, in1: true }
    } else {
        let fl = x.floor();
        let (i0, i1) = (fl as isize, fl as isize + 1);
        let inside = |i: isize| i >= 0 && i < n as isize;
        Axis {
            i0: i0.clamp(0, n as isize - 1) as usize,
            i1: i1.clamp(0, n as isize - 1) as usize,
            f: x - fl,
            dcoord: scale,
            in0: inside(i0),
            in1: inside(i1),
        }
    }
}

/// Samples `input` (N, C, H, W) at `grid` (N, 2, h, w), giving (N, C, h, w).
/// Out-of-range coordinates clamp to the border when `border_clamp`, and
/// read zeros otherwise.
pub fn grid_sample_bilinear<'t>(input: Var<'t>, grid: Var<'t>, border_clamp: bool) -> Result<Var<'t>> {
    let (is, gs) = (input.shape(), grid.shape());
    if gs.n != is.n || gs.c != 2 {
        return shape_err("grid_sample", format!("grid {gs:?} for input {is:?}"));
    }
    if is.h == 0 || is.w == 0 {
        return shape_err("grid_sample", format!("empty input {is:?}"));
    }
    let gv = grid.value();
    if !gv.is_finite() {
        return contract_err("grid_sample", "grid contains non-finite coordinates");
    }
    let out_shape = Shape::new(is.n, is.c, gs.h, gs.w);
    let plane = gs.plane();
    let mut samples = Vec::with_capacity(is.n * plane);
    for n in 0..is.n {
        for p in 0..plane {
            let u = gv.data()[(n * 2) * plane + p];
            let v = gv.data()[(n * 2 + 1) * plane + p];
            samples.push((axis(u, is.w, border_clamp), axis(v, is.h, border_clamp)));
        }
    }
    let iv = input.value();
    let iw = is.w;
    let tap = move |data: &[f64], ax: &Axis, ay: &Axis| -> [f64; 4] {
        let at = |yi: usize, xi: usize, ok: bool| if ok { data[yi * iw + xi] } else { 0.0 };
        [
            at(ay.i0, ax.i0, ay.in0 && ax.in0),
            at(ay.i0, ax.i1, ay.in0 && ax.in1),
            at(ay.i1, ax.i0, ay.in1 && ax.in0),
            at(ay.i1, ax.i1, ay.in1 && ax.in1),
        ]
    };
    let mut out = Vec::with_capacity(out_shape.numel());
    for n in 0..is.n {
        for c in 0..is.c {
            let data = &iv.data()[(n * is.c + c) * is.plane()..(n * is.c + c + 1) * is.plane()];
            for (ax, ay) in &samples[n * plane..(n + 1) * plane] {
                let [v00, v01, v10, v11] = tap(data, ax, ay);
                let top = v00 + ax.f * (v01 - v00);
                let bot = v10 + ax.f * (v11 - v10);
                out.push(top + ay.f * (bot - top));
            }
        }
    }
    let y = Tensor::from_vec(out_shape, out);
    Ok(input.tape().record(y, &[input, grid], move |g, needs| {
        let mut din = needs[0].then(|| vec![0.0; is.numel()]);
        let mut dgrid = needs[1].then(|| vec![0.0; gs.numel()]);
        for n in 0..is.n {
            for c in 0..is.c {
                let base = (n * is.c + c) * is.plane();
                let data = &iv.data()[base..base + is.plane()];
                let gp = &g.data()[(n * is.c + c) * plane..(n * is.c + c + 1) * plane];
                for (p, (ax, ay)) in samples[n * plane..(n + 1) * plane].iter().enumerate() {
                    let gv = gp[p];
                    if let Some(d) = din.as_deref_mut() {
                        let w = [
                            (1.0 - ay.f) * (1.0 - ax.f),
                            (1.0 - ay.f) * ax.f,
                            ay.f * (1.0 - ax.f),
                            ay.f * ax.f,
                        ];
                        let idx = [
                            (ay.i0, ax.i0, ay.in0 && ax.in0),
                            (ay.i0, ax.i1, ay.in0 && ax.in1),
                            (ay.i1, ax.i0, ay.in1 && ax.in0),
                            (ay.i1, ax.i1, ay.in1 && ax.in1),
                        ];
                        for (&(yi, xi, ok), wk) in idx.iter().zip(w) {
                            if ok {
                                d[base + yi * is.w + xi] += gv * wk;
                            }
                        }
                    }
                    if let Some(d) = dgrid.as_deref_mut() {
                        let [v00, v01, v10, v11] = tap(data, ax, ay);
                        let d_dx = (1.0 - ay.f) * (v01 - v00) + ay.f * (v11 - v10);
                        let d_dy = (1.0 - ax.f) * (v10 - v00) + ax.f * (v11 - v01);
                        d[(n * 2) * plane + p] += gv * d_dx * ax.dcoord;
                        d[(n * 2 + 1) * plane + p] += gv * d_dy * ay.dcoord;
                    }
                }
            }
        }
        vec![
            din.map(|d| Tensor::from_vec(is, d)),
            dgrid.map(|d| Tensor::from_vec(gs, d)),
        ]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_grid_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::rand_uniform(Shape::new(2, 3, 7, 9), 0.0, 1.0, &mut rng);
        for clamp in [true, false] {
            let tape = Tape::new();
            let y = grid_sample_bilinear(tape.var(x.clone()), tape.var(identity_grid(2, 7, 9)), clamp).unwrap();
            assert!(y.value().bit_eq(&x));
        }
    }

    #[test]
    fn permutation_at_pixel_centers() {
        let x = Tensor::new(Shape::new(1, 1, 1, 4), vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        let perm = [2usize, 0, 3, 1];
        let grid = Tensor::from_fn(Shape::new(1, 2, 1, 4), |_, c, _, i| {
            if c == 0 { normalize_coord(perm[i] as f64, 4) } else { 0.0 }
        });
        let tape = Tape::new();
        let y = grid_sample_bilinear(tape.var(x), tape.var(grid), true).unwrap();
        assert_eq!(y.value().data(), &[30.0, 10.0, 40.0, 20.0]);
    }

    #[test]
    fn halfway_between_neighbours() {
        let x = Tensor::new(Shape::new(1, 1, 1, 2), vec![1.0, 3.0]).unwrap();
        let grid = Tensor::new(Shape::new(1, 2, 1, 1), vec![normalize_coord(0.5, 2), 0.0]).unwrap();
        let tape = Tape::new();
        let y = grid_sample_bilinear(tape.var(x), tape.var(grid), true).unwrap();
        assert_eq!(y.value().item(), 2.0);
    }

    #[test]
    fn border_clamp_versus_zeros() {
        let x = Tensor::new(Shape::new(1, 1, 1, 2), vec![1.0, 3.0]).unwrap();
        let grid = Tensor::new(Shape::new(1, 2, 1, 1), vec![5.0, 0.0]).unwrap();
        let tape = Tape::new();
        let clamped = grid_sample_bilinear(tape.var(x.clone()), tape.var(grid.clone()), true).unwrap();
        assert_eq!(clamped.value().item(), 3.0);
        let zeroed = grid_sample_bilinear(tape.var(x), tape.var(grid), false).unwrap();
        assert_eq!(zeroed.value().item(), 0.0);
    }

    #[test]
    fn non_finite_grid_is_rejected() {
        let tape = Tape::new();
        let x = tape.var(Tensor::zeros(Shape::new(1, 1, 2, 2)));
        let g = tape.var(Tensor::full(Shape::new(1, 2, 2, 2), f64::NAN));
        assert!(grid_sample_bilinear(x, g, true).is_err());
    }
}
