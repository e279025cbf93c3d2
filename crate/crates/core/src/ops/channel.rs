//! Channel-structured primitives: per-channel broadcast, concatenation,
//! channel and spatial reductions, finite differences and the dense layer.

use crate::autograd::Var;
use crate::error::{contract_err, shape_err, Result};
use crate::tensor::{Shape, Tensor};

/// Checks that `g` is a per-channel (1 or N, C, 1, 1) operand for `x`.
fn channel_operand(op: &'static str, x: Shape, g: Shape) -> Result<bool> {
    let per_batch = g.n == x.n && x.n != 1;
    if g.c != x.c || g.h != 1 || g.w != 1 || !(g.n == 1 || per_batch) {
        return shape_err(op, format!("operand {g:?} cannot broadcast over {x:?}"));
    }
    Ok(per_batch)
}

/// `x * g` where `g` has shape (1, C, 1, 1) or (N, C, 1, 1).
pub fn mul_channels<'t>(x: Var<'t>, g: Var<'t>) -> Result<Var<'t>> {
    let (xs, gs) = (x.shape(), g.shape());
    let per_batch = channel_operand("mul_channels", xs, gs)?;
    let (xv, gv) = (x.value(), g.value());
    let plane = xs.plane();
    let gidx = move |n: usize, c: usize| if per_batch { n * xs.c + c } else { c };
    let mut out = Vec::with_capacity(xs.numel());
    for n in 0..xs.n {
        for c in 0..xs.c {
            let k = gv.data()[gidx(n, c)];
            let base = (n * xs.c + c) * plane;
            out.extend(xv.data()[base..base + plane].iter().map(|v| v * k));
        }
    }
    let y = Tensor::from_vec(xs, out);
    Ok(x.tape().record(y, &[x, g], move |grad, needs| {
        let gd = grad.data();
        let dx = needs[0].then(|| {
            let mut dx = Vec::with_capacity(xs.numel());
            for n in 0..xs.n {
                for c in 0..xs.c {
                    let k = gv.data()[gidx(n, c)];
                    let base = (n * xs.c + c) * plane;
                    dx.extend(gd[base..base + plane].iter().map(|v| v * k));
                }
            }
            Tensor::from_vec(xs, dx)
        });
        let dg = needs[1].then(|| {
            let mut dg = vec![0.0; gs.numel()];
            for n in 0..xs.n {
                for c in 0..xs.c {
                    let base = (n * xs.c + c) * plane;
                    let s: f64 = gd[base..base + plane]
                        .iter()
                        .zip(&xv.data()[base..base + plane])
                        .map(|(a, b)| a * b)
                        .sum();
                    dg[gidx(n, c)] += s;
                }
            }
            Tensor::from_vec(gs, dg)
        });
        vec![dx, dg]
    }))
}

/// `x + b` where `b` has shape (1, C, 1, 1) or (N, C, 1, 1).
pub fn add_channels<'t>(x: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let (xs, bs) = (x.shape(), b.shape());
    let per_batch = channel_operand("add_channels", xs, bs)?;
    let bv = b.value();
    let plane = xs.plane();
    let bidx = move |n: usize, c: usize| if per_batch { n * xs.c + c } else { c };
    let mut out = x.value().into_vec();
    for n in 0..xs.n {
        for c in 0..xs.c {
            let k = bv.data()[bidx(n, c)];
            let base = (n * xs.c + c) * plane;
            out[base..base + plane].iter_mut().for_each(|v| *v += k);
        }
    }
    let y = Tensor::from_vec(xs, out);
    Ok(x.tape().record(y, &[x, b], move |grad, needs| {
        let db = needs[1].then(|| {
            let mut db = vec![0.0; bs.numel()];
            for n in 0..xs.n {
                for c in 0..xs.c {
                    let base = (n * xs.c + c) * plane;
                    db[bidx(n, c)] += grad.data()[base..base + plane].iter().sum::<f64>();
                }
            }
            Tensor::from_vec(bs, db)
        });
        vec![Some(grad.clone()), db]
    }))
}

/// Mean over channels, keeping a singleton channel axis.
pub fn channel_mean(x: Var<'_>) -> Var<'_> {
    let xs = x.shape();
    let xv = x.value();
    let plane = xs.plane();
    let inv = 1.0 / xs.c as f64;
    let out_shape = Shape::new(xs.n, 1, xs.h, xs.w);
    let mut out = vec![0.0; out_shape.numel()];
    for n in 0..xs.n {
        let dst = &mut out[n * plane..(n + 1) * plane];
        for c in 0..xs.c {
            let base = (n * xs.c + c) * plane;
            for (d, v) in dst.iter_mut().zip(&xv.data()[base..base + plane]) {
                *d += v;
            }
        }
        dst.iter_mut().for_each(|d| *d *= inv);
    }
    x.tape()
        .record(Tensor::from_vec(out_shape, out), &[x], move |grad, _| {
            let mut dx = Vec::with_capacity(xs.numel());
            for n in 0..xs.n {
                let src = &grad.data()[n * plane..(n + 1) * plane];
                for _ in 0..xs.c {
                    dx.extend(src.iter().map(|g| g * inv));
                }
            }
            vec![Some(Tensor::from_vec(xs, dx))]
        })
}

/// Spatial mean per (batch, channel): (N, C, H, W) -> (N, C, 1, 1).
pub fn global_avg_pool(x: Var<'_>) -> Var<'_> {
    let xs = x.shape();
    let plane = xs.plane();
    let inv = 1.0 / plane as f64;
    let out: Vec<f64> = x
        .value()
        .data()
        .chunks_exact(plane)
        .map(|p| p.iter().sum::<f64>() * inv)
        .collect();
    let y = Tensor::from_vec(Shape::new(xs.n, xs.c, 1, 1), out);
    x.tape().record(y, &[x], move |grad, _| {
        let dx = grad
            .data()
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g * inv, plane))
            .collect();
        vec![Some(Tensor::from_vec(xs, dx))]
    })
}

/// Concatenation along the channel axis.
pub fn concat_channels<'t>(items: &[Var<'t>]) -> Result<Var<'t>> {
    let Some(first) = items.first() else {
        return contract_err("concat_channels", "empty list");
    };
    let s0 = first.shape();
    let mut widths = Vec::with_capacity(items.len());
    for v in items {
        let s = v.shape();
        if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
            return shape_err("concat_channels", format!("{s:?} vs {s0:?}"));
        }
        widths.push(s.c);
    }
    if items.len() == 1 {
        return Ok(*first);
    }
    let total_c: usize = widths.iter().sum();
    let plane = s0.plane();
    let values: Vec<Tensor> = items.iter().map(|v| v.value()).collect();
    let out_shape = Shape::new(s0.n, total_c, s0.h, s0.w);
    let mut out = Vec::with_capacity(out_shape.numel());
    for n in 0..s0.n {
        for (v, &c) in values.iter().zip(&widths) {
            out.extend_from_slice(&v.data()[n * c * plane..(n + 1) * c * plane]);
        }
    }
    let y = Tensor::from_vec(out_shape, out);
    Ok(first.tape().record(y, items, move |grad, needs| {
        let mut offset = 0;
        widths
            .iter()
            .zip(needs)
            .map(|(&c, &need)| {
                let start = offset;
                offset += c;
                need.then(|| {
                    let mut d = Vec::with_capacity(s0.n * c * plane);
                    for n in 0..s0.n {
                        let base = (n * total_c + start) * plane;
                        d.extend_from_slice(&grad.data()[base..base + c * plane]);
                    }
                    Tensor::from_vec(Shape::new(s0.n, c, s0.h, s0.w), d)
                })
            })
            .collect()
    }))
}

/// Channels `start..start + len`.
pub fn narrow_channels(x: Var<'_>, start: usize, len: usize) -> Result<Var<'_>> {
    let xs = x.shape();
    if start + len > xs.c || len == 0 {
        return shape_err(
            "narrow_channels",
            format!("channels {start}..{} out of {xs:?}", start + len),
        );
    }
    let plane = xs.plane();
    let xv = x.value();
    let out_shape = Shape::new(xs.n, len, xs.h, xs.w);
    let mut out = Vec::with_capacity(out_shape.numel());
    for n in 0..xs.n {
        let base = (n * xs.c + start) * plane;
        out.extend_from_slice(&xv.data()[base..base + len * plane]);
    }
    Ok(x.tape()
        .record(Tensor::from_vec(out_shape, out), &[x], move |grad, _| {
            let mut dx = vec![0.0; xs.numel()];
            for n in 0..xs.n {
                let base = (n * xs.c + start) * plane;
                dx[base..base + len * plane]
                    .copy_from_slice(&grad.data()[n * len * plane..(n + 1) * len * plane]);
            }
            vec![Some(Tensor::from_vec(xs, dx))]
        }))
}

/// Horizontal forward difference `x[.., j+1] - x[.., j]`: width shrinks by one.
pub fn diff_x(x: Var<'_>) -> Result<Var<'_>> {
    let xs = x.shape();
    if xs.w < 2 {
        return shape_err("diff_x", format!("width of {xs:?} below 2"));
    }
    let out_shape = Shape::new(xs.n, xs.c, xs.h, xs.w - 1);
    let xv = x.value();
    let mut out = Vec::with_capacity(out_shape.numel());
    for row in xv.data().chunks_exact(xs.w) {
        out.extend(row.windows(2).map(|p| p[1] - p[0]));
    }
    Ok(x.tape()
        .record(Tensor::from_vec(out_shape, out), &[x], move |grad, _| {
            let mut dx = vec![0.0; xs.numel()];
            for (row, g) in dx
                .chunks_exact_mut(xs.w)
                .zip(grad.data().chunks_exact(xs.w - 1))
            {
                for (j, &gv) in g.iter().enumerate() {
                    row[j + 1] += gv;
                    row[j] -= gv;
                }
            }
            vec![Some(Tensor::from_vec(xs, dx))]
        }))
}

/// Vertical forward difference `x[.., i+1, :] - x[.., i, :]`: height shrinks by one.
pub fn diff_y(x: Var<'_>) -> Result<Var<'_>> {
    let xs = x.shape();
    if xs.h < 2 {
        return shape_err("diff_y", format!("height of {xs:?} below 2"));
    }
    let out_shape = Shape::new(xs.n, xs.c, xs.h - 1, xs.w);
    let xv = x.value();
    let w = xs.w;
    let mut out = Vec::with_capacity(out_shape.numel());
    for plane in xv.data().chunks_exact(xs.plane()) {
        for i in 0..xs.h - 1 {
            out.extend((0..w).map(|j| plane[(i + 1) * w + j] - plane[i * w + j]));
        }
    }
    Ok(x.tape()
        .record(Tensor::from_vec(out_shape, out), &[x], move |grad, _| {
            let mut dx = vec![0.0; xs.numel()];
            let gplane = (xs.h - 1) * w;
            for (p, g) in dx
                .chunks_exact_mut(xs.plane())
                .zip(grad.data().chunks_exact(gplane))
            {
                for i in 0..xs.h - 1 {
                    for j in 0..w {
                        let gv = g[i * w + j];
                        p[(i + 1) * w + j] += gv;
                        p[i * w + j] -= gv;
                    }
                }
            }
            vec![Some(Tensor::from_vec(xs, dx))]
        }))
}

/// Dense layer on (N, C_in, 1, 1) features with weight (C_out, C_in, 1, 1)
/// and optional bias (1, C_out, 1, 1).
pub fn fully_connected<'t>(x: Var<'t>, weight: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.h != 1 || xs.w != 1 || ws.h != 1 || ws.w != 1 || ws.c != xs.c {
        return shape_err(
            "fully_connected",
            format!("input {xs:?} incompatible with weight {ws:?}"),
        );
    }
    let (n, cin, cout) = (xs.n, xs.c, ws.n);
    let (xv, wv) = (x.value(), weight.value());
    let mut out = vec![0.0; n * cout];
    for b in 0..n {
        let xi = &xv.data()[b * cin..(b + 1) * cin];
        for o in 0..cout {
            let wr = &wv.data()[o * cin..(o + 1) * cin];
            out[b * cout + o] = wr.iter().zip(xi).map(|(a, b)| a * b).sum();
        }
    }
    let y = Tensor::from_vec(Shape::new(n, cout, 1, 1), out);
    let y = x.tape().record(y, &[x, weight], move |grad, needs| {
        let gd = grad.data();
        let dx = needs[0].then(|| {
            let mut dx = vec![0.0; n * cin];
            for b in 0..n {
                for o in 0..cout {
                    let g = gd[b * cout + o];
                    let wr = &wv.data()[o * cin..(o + 1) * cin];
                    for (d, w) in dx[b * cin..(b + 1) * cin].iter_mut().zip(wr) {
                        *d += g * w;
                    }
                }
            }
            Tensor::from_vec(xs, dx)
        });
        let dw = needs[1].then(|| {
            let mut dw = vec![0.0; cout * cin];
            for b in 0..n {
                let xi = &xv.data()[b * cin..(b + 1) * cin];
                for o in 0..cout {
                    let g = gd[b * cout + o];
                    for (d, xv) in dw[o * cin..(o + 1) * cin].iter_mut().zip(xi) {
                        *d += g * xv;
                    }
                }
            }
            Tensor::from_vec(ws, dw)
        });
        vec![dx, dw]
    });
    match bias {
        Some(b) => add_channels(y, b),
        None => Ok(y),
    }
}
