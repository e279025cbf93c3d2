//! Dense NCHW tensors of `f64` and their on-disk encoding.
//!
//! A [`Tensor`] is an immutable value: the payload sits behind an `Arc`, so
//! cloning is cheap and the tape can keep forward values alive for the
//! backward pass without copying.

use std::fmt;
use std::io::{BufRead, Read, Write};
use std::sync::Arc;

use crate::error::{shape_err, Error, Result};

/// Four-dimensional extent in (batch, channel, height, width) order.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.n, self.c, self.h, self.w)
    }
}

impl std::str::FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let dims: Vec<usize> = s
            .split(',')
            .map(|d| d.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("bad shape {s:?}: {e}")))?;
        match dims[..] {
            [n, c, h, w] => Ok(Shape::new(n, c, h, w)),
            _ => Err(Error::Parse(format!("shape {s:?} must have four dimensions"))),
        }
    }
}

/// Immutable dense tensor, row-major over (n, c, h, w).
#[derive(Clone)]
pub struct Tensor {
    shape: Shape,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return shape_err(
                "Tensor::new",
                format!("shape {shape:?} needs {} values, got {}", shape.numel(), data.len()),
            );
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    /// Constructor for internal kernels whose output length is correct by construction.
    pub(crate) fn from_vec(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape.numel());
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor::from_vec(shape, vec![value; shape.numel()])
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: Shape) -> Self {
        Tensor::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::full(Shape::scalar(), value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor::from_vec(shape, data)
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn rand_uniform(shape: Shape, lo: f64, hi: f64, rng: &mut impl rand::Rng) -> Self {
        let data = (0..shape.numel()).map(|_| rng.random_range(lo..hi)).collect();
        Tensor::from_vec(shape, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|arc| arc.as_ref().clone())
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.shape.index(n, c, y, x)]
    }

    /// The scalar held by a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn reshape(&self, shape: Shape) -> Result<Tensor> {
        if shape.numel() != self.numel() {
            return shape_err(
                "reshape",
                format!("{:?} -> {shape:?} changes element count", self.shape),
            );
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_vec(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return shape_err(
                "zip_map",
                format!("{:?} vs {:?}", self.shape, other.shape),
            );
        }
        Ok(Tensor::from_vec(
            self.shape,
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality of shape and payload (distinguishes `-0.0` and NaN payloads).
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Copy of batch item `n` as a tensor with batch size one.
    pub fn batch_item(&self, n: usize) -> Tensor {
        let per = self.shape.c * self.shape.plane();
        let shape = Shape::new(1, self.shape.c, self.shape.h, self.shape.w);
        Tensor::from_vec(shape, self.data[n * per..(n + 1) * per].to_vec())
    }

    /// Stacks same-shaped tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let Some(first) = items.first() else {
            return shape_err("stack", "no tensors to stack");
        };
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut n = 0;
        for t in items {
            if (t.shape.c, t.shape.h, t.shape.w) != (s.c, s.h, s.w) {
                return shape_err("stack", format!("{:?} vs {:?}", t.shape, s));
            }
            data.extend_from_slice(&t.data);
            n += t.shape.n;
        }
        Ok(Tensor::from_vec(Shape::new(n, s.c, s.h, s.w), data))
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.numel() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

/// Manifest line written ahead of a tensor payload: `name shape=b,c,h,w dtype=f64`.
pub fn manifest_line(name: &str, shape: Shape) -> String {
    format!("{name} shape={shape} dtype=f64")
}

/// Parses a manifest line back into its name and shape.
pub fn parse_manifest_line(line: &str) -> Result<(String, Shape)> {
    let mut parts = line.split_whitespace();
    let name = parts
        .next()
        .ok_or_else(|| Error::Parse("empty tensor manifest line".into()))?;
    let mut shape = None;
    let mut dtype = None;
    for part in parts {
        match part.split_once('=') {
            Some(("shape", v)) => shape = Some(v.parse::<Shape>()?),
            Some(("dtype", v)) => dtype = Some(v),
            _ => return Err(Error::Parse(format!("unexpected manifest field {part:?}"))),
        }
    }
    if dtype != Some("f64") {
        return Err(Error::Parse(format!(
            "tensor {name}: unsupported dtype {dtype:?}"
        )));
    }
    let shape = shape.ok_or_else(|| Error::Parse(format!("tensor {name}: missing shape")))?;
    Ok((name.to_string(), shape))
}

pub fn write_payload(w: &mut impl Write, t: &Tensor) -> Result<()> {
    let mut bytes = Vec::with_capacity(t.numel() * 8);
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_payload(r: &mut impl Read, shape: Shape) -> Result<Tensor> {
    let mut bytes = vec![0u8; shape.numel() * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Tensor::from_vec(shape, data))
}

/// Writes one named tensor: manifest line, newline, little-endian payload.
pub fn write_tensor(w: &mut impl Write, name: &str, t: &Tensor) -> Result<()> {
    validate_name(name)?;
    writeln!(w, "{}", manifest_line(name, t.shape()))?;
    write_payload(w, t)
}

pub fn read_tensor(r: &mut impl BufRead) -> Result<(String, Tensor)> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(Error::Parse("unexpected end of tensor stream".into()));
    }
    let (name, shape) = parse_manifest_line(line.trim_end())?;
    let t = read_payload(r, shape)?;
    Ok((name, t))
}

pub(crate) fn validate_name(name: &str) -> Result<()> {
    if name.is_empty() || name.chars().any(char::is_whitespace) {
        return Err(Error::Parse(format!("invalid tensor name {name:?}")));
    }
    Ok(())
}
