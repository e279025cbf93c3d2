//! 2-D convolution via im2col + GEMM, with a direct kernel for depthwise
//! filters. Both padding modes map out-of-range taps through the same index
//! table, so the backward pass scatters into exactly the pixels the forward
//! pass read.

use std::borrow::Cow;

use crate::autograd::Var;
use crate::error::{shape_err, Result};
use crate::tensor::{Shape, Tensor};

use super::channel::add_channels;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum PadMode {
    #[default]
    Zero,
    Reflect,
}

/// Source index for padded coordinate `i` in `0..n`, or `None` for a zero tap.
/// Reflection on a length-1 axis degenerates to replication.
#[inline]
pub(crate) fn pad_index(i: isize, n: usize, mode: PadMode) -> Option<usize> {
    let n = n as isize;
    if (0..n).contains(&i) {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Reflect => {
            let r = if i < 0 { -i } else { 2 * (n - 1) - i };
            Some(r.clamp(0, n - 1) as usize)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dOpts {
    pub stride: usize,
    pub padding: usize,
    pub pad_mode: PadMode,
    pub groups: usize,
}

impl Default for Conv2dOpts {
    fn default() -> Self {
        Conv2dOpts {
            stride: 1,
            padding: 0,
            pad_mode: PadMode::Zero,
            groups: 1,
        }
    }
}

impl Conv2dOpts {
    /// Stride-1 convolution preserving spatial size for an odd kernel.
    pub fn same(k: usize, pad_mode: PadMode) -> Self {
        Conv2dOpts {
            padding: k / 2,
            pad_mode,
            ..Default::default()
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    input: Shape,
    cout: usize,
    k: usize,
    groups: usize,
    cin_g: usize,
    cout_g: usize,
    ho: usize,
    wo: usize,
    opts: Conv2dOpts,
}

impl Geometry {
    fn new(input: Shape, weight: Shape, opts: Conv2dOpts) -> Result<Self> {
        let k = weight.h;
        let groups = opts.groups.max(1);
        if weight.h != weight.w || k % 2 == 0 {
            return shape_err("conv2d", format!("kernel {weight:?} must be square and odd"));
        }
        if input.c % groups != 0 || weight.n % groups != 0 || weight.c * groups != input.c {
            return shape_err(
                "conv2d",
                format!("input {input:?} has {} channels but weight {weight:?} with {groups} groups expects {}", input.c, weight.c * groups),
            );
        }
        if opts.stride == 0 {
            return shape_err("conv2d", "stride must be positive");
        }
        let (hp, wp) = (input.h + 2 * opts.padding, input.w + 2 * opts.padding);
        if hp < k || wp < k {
            return shape_err("conv2d", format!("input {input:?} smaller than kernel {k}"));
        }
        let too_short = |n: usize| n > 1 && opts.padding >= n;
        if opts.pad_mode == PadMode::Reflect && (too_short(input.h) || too_short(input.w)) {
            return shape_err("conv2d", format!("reflect padding {} too wide for {input:?}", opts.padding));
        }
        Ok(Geometry {
            input,
            cout: weight.n,
            k,
            groups,
            cin_g: weight.c,
            cout_g: weight.n / groups,
            ho: (hp - k) / opts.stride + 1,
            wo: (wp - k) / opts.stride + 1,
            opts,
        })
    }

    fn out_shape(&self) -> Shape {
        Shape::new(self.input.n, self.cout, self.ho, self.wo)
    }

    fn taps(&self) -> usize {
        self.cin_g * self.k * self.k
    }

    fn hw_out(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.opts.stride == 1 && self.opts.padding == 0
    }

    fn is_depthwise(&self) -> bool {
        self.cin_g == 1 && self.cout_g == 1
    }

    /// For each kernel offset and output coordinate, the source coordinate.
    fn index_table(&self, n_in: usize, n_out: usize) -> Vec<Option<usize>> {
        let mut table = Vec::with_capacity(self.k * n_out);
        for kk in 0..self.k {
            for o in 0..n_out {
                let i = (o * self.opts.stride + kk) as isize - self.opts.padding as isize;
                table.push(pad_index(i, n_in, self.opts.pad_mode));
            }
        }
        table
    }
}

struct Tables {
    ys: Vec<Option<usize>>,
    xs: Vec<Option<usize>>,
}

impl Tables {
    fn new(g: &Geometry) -> Self {
        Tables {
            ys: g.index_table(g.input.h, g.ho),
            xs: g.index_table(g.input.w, g.wo),
        }
    }
}

/// Unfolds the `cin_g` planes starting at `src` into a (taps × hw_out) matrix.
fn im2col<'a>(g: &Geometry, t: &Tables, src: &'a [f64]) -> Cow<'a, [f64]> {
    if g.is_pointwise() {
        return Cow::Borrowed(src);
    }
    let (h, w) = (g.input.h, g.input.w);
    let hw = g.hw_out();
    let mut col = vec![0.0; g.taps() * hw];
    let mut row = 0;
    for ci in 0..g.cin_g {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let dst = &mut col[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let Some(iy) = t.ys[ky * g.ho + oy] else { continue };
                    let src_row = &plane[iy * w..(iy + 1) * w];
                    let d = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    for (ox, dv) in d.iter_mut().enumerate() {
                        if let Some(ix) = t.xs[kx * g.wo + ox] {
                            *dv = src_row[ix];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    Cow::Owned(col)
}

/// Scatter-adds a (taps × hw_out) column gradient back onto `cin_g` planes.
fn col2im(g: &Geometry, t: &Tables, col: &[f64], dst: &mut [f64]) {
    if g.is_pointwise() {
        for (d, c) in dst.iter_mut().zip(col) {
            *d += c;
        }
        return;
    }
    let (h, w) = (g.input.h, g.input.w);
    let hw = g.hw_out();
    let mut row = 0;
    for ci in 0..g.cin_g {
        let plane = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let src = &col[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let Some(iy) = t.ys[ky * g.ho + oy] else { continue };
                    for ox in 0..g.wo {
                        if let Some(ix) = t.xs[kx * g.wo + ox] {
                            plane[iy * w + ix] += src[oy * g.wo + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// `c (m×n) = alpha·a(m×k)·b(k×n) + beta·c`, with arbitrary element strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    debug_assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the asserts above bound every index dgemm touches; the slices
    // do not alias because `c` is borrowed mutably.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn forward(g: &Geometry, t: &Tables, x: &[f64], w: &[f64]) -> Vec<f64> {
    let (cin, hw_in) = (g.input.c, g.input.plane());
    let hw = g.hw_out();
    let taps = g.taps();
    let mut out = vec![0.0; g.out_shape().numel()];
    for n in 0..g.input.n {
        for grp in 0..g.groups {
            let src = &x[(n * cin + grp * g.cin_g) * hw_in..];
            let dst = &mut out[(n * g.cout + grp * g.cout_g) * hw..][..g.cout_g * hw];
            let wg = &w[grp * g.cout_g * taps..(grp + 1) * g.cout_g * taps];
            if g.is_depthwise() {
                depthwise_plane(g, t, &src[..hw_in], wg, dst);
            } else {
                let col = im2col(g, t, &src[..g.cin_g * hw_in]);
                gemm(g.cout_g, taps, hw, wg, (taps, 1), &col, (hw, 1), 0.0, dst);
            }
        }
    }
    out
}

fn depthwise_plane(g: &Geometry, t: &Tables, src: &[f64], w: &[f64], dst: &mut [f64]) {
    let iw = g.input.w;
    for ky in 0..g.k {
        for kx in 0..g.k {
            let wv = w[ky * g.k + kx];
            for oy in 0..g.ho {
                let Some(iy) = t.ys[ky * g.ho + oy] else { continue };
                let row = &src[iy * iw..(iy + 1) * iw];
                let d = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                for (ox, dv) in d.iter_mut().enumerate() {
                    if let Some(ix) = t.xs[kx * g.wo + ox] {
                        *dv += wv * row[ix];
                    }
                }
            }
        }
    }
}

fn depthwise_backward(
    g: &Geometry,
    t: &Tables,
    src: &[f64],
    w: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
) {
    let iw = g.input.w;
    let mut dx = dx;
    let mut dw = dw;
    for ky in 0..g.k {
        for kx in 0..g.k {
            let tap = ky * g.k + kx;
            let wv = w[tap];
            let mut acc = 0.0;
            for oy in 0..g.ho {
                let Some(iy) = t.ys[ky * g.ho + oy] else { continue };
                for ox in 0..g.wo {
                    let Some(ix) = t.xs[kx * g.wo + ox] else { continue };
                    let gy = dy[oy * g.wo + ox];
                    acc += gy * src[iy * iw + ix];
                    if let Some(dx) = dx.as_deref_mut() {
                        dx[iy * iw + ix] += gy * wv;
                    }
                }
            }
            if let Some(dw) = dw.as_deref_mut() {
                dw[tap] += acc;
            }
        }
    }
}

/// Cross-correlation of `x` (N, C_in, H, W) with `weight` (C_out, C_in/groups, k, k),
/// plus an optional per-channel `bias` (1, C_out, 1, 1).
pub fn conv2d<'t>(
    x: Var<'t>,
    weight: Var<'t>,
    bias: Option<Var<'t>>,
    opts: Conv2dOpts,
) -> Result<Var<'t>> {
    let g = Geometry::new(x.shape(), weight.shape(), opts)?;
    let t = Tables::new(&g);
    let (xv, wv) = (x.value(), weight.value());
    let y = Tensor::from_vec(g.out_shape(), forward(&g, &t, xv.data(), wv.data()));
    let ws = weight.shape();
    let y = x.tape().record(y, &[x, weight], move |grad, needs| {
        let (cin, hw_in) = (g.input.c, g.input.plane());
        let hw = g.hw_out();
        let taps = g.taps();
        let mut dx = needs[0].then(|| vec![0.0; g.input.numel()]);
        let mut dw = needs[1].then(|| vec![0.0; ws.numel()]);
        let mut dcol = vec![0.0; taps * hw];
        for n in 0..g.input.n {
            for grp in 0..g.groups {
                let in_off = (n * cin + grp * g.cin_g) * hw_in;
                let src = &xv.data()[in_off..in_off + g.cin_g * hw_in];
                let dy = &grad.data()[(n * g.cout + grp * g.cout_g) * hw..][..g.cout_g * hw];
                let w_off = grp * g.cout_g * taps;
                let wg = &wv.data()[w_off..w_off + g.cout_g * taps];
                if g.is_depthwise() {
                    depthwise_backward(
                        &g,
                        &t,
                        src,
                        wg,
                        dy,
                        dx.as_deref_mut().map(|d| &mut d[in_off..in_off + hw_in]),
                        dw.as_deref_mut().map(|d| &mut d[w_off..w_off + taps]),
                    );
                    continue;
                }
                if let Some(dw) = dw.as_deref_mut() {
                    let col = im2col(&g, &t, src);
                    // dW (cout_g × taps) += dY (cout_g × hw) · colᵀ (hw × taps)
                    gemm(
                        g.cout_g,
                        hw,
                        taps,
                        dy,
                        (hw, 1),
                        &col,
                        (1, hw),
                        1.0,
                        &mut dw[w_off..w_off + g.cout_g * taps],
                    );
                }
                if let Some(dx) = dx.as_deref_mut() {
                    // dcol (taps × hw) = Wᵀ (taps × cout_g) · dY (cout_g × hw)
                    gemm(taps, g.cout_g, hw, wg, (1, taps), dy, (hw, 1), 0.0, &mut dcol);
                    col2im(&g, &t, &dcol, &mut dx[in_off..in_off + g.cin_g * hw_in]);
                }
            }
        }
        vec![
            dx.map(|d| Tensor::from_vec(g.input, d)),
            dw.map(|d| Tensor::from_vec(ws, d)),
        ]
    });
    match bias {
        Some(b) => {
            if b.shape() != Shape::new(1, g.cout, 1, 1) {
                return shape_err("conv2d", format!("bias {:?} for {} outputs", b.shape(), g.cout));
            }
            add_channels(y, b)
        }
        None => Ok(y),
    }
}
