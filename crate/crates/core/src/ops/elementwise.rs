use crate::autograd::Var;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

fn same_shape(op: &'static str, a: &Var<'_>, b: &Var<'_>) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn zip3(g: &Tensor, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
    let data = g
        .data()
        .iter()
        .zip(a.data())
        .zip(b.data())
        .map(|((&g, &a), &b)| f(g, a, b))
        .collect();
    Tensor::from_vec(g.shape(), data)
}

impl<'t> Var<'t> {
    /// Elementwise map with derivative `df(x, y)` expressed in the input and output.
    fn unary(
        self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var<'t> {
        let x = self.value();
        let y = x.map(f);
        let saved_y = y.clone();
        self.tape().record(y, &[self], move |g, _| {
            vec![Some(zip3(g, &x, &saved_y, |g, x, y| g * df(x, y)))]
        })
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        same_shape("add", &self, &other)?;
        let y = self.value().zip_map(&other.value(), |a, b| a + b)?;
        Ok(self
            .tape()
            .record(y, &[self, other], |g, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        same_shape("sub", &self, &other)?;
        let y = self.value().zip_map(&other.value(), |a, b| a - b)?;
        Ok(self.tape().record(y, &[self, other], |g, needs| {
            vec![Some(g.clone()), needs[1].then(|| g.map(|v| -v))]
        }))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        same_shape("mul", &self, &other)?;
        let (a, b) = (self.value(), other.value());
        let y = a.zip_map(&b, |a, b| a * b)?;
        Ok(self.tape().record(y, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| zip3(g, &b, &b, |g, b, _| g * b)),
                needs[1].then(|| zip3(g, &a, &a, |g, a, _| g * a)),
            ]
        }))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        same_shape("div", &self, &other)?;
        let (a, b) = (self.value(), other.value());
        let y = a.zip_map(&b, |a, b| a / b)?;
        Ok(self.tape().record(y, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| zip3(g, &b, &b, |g, b, _| g / b)),
                needs[1].then(|| zip3(g, &a, &b, |g, a, b| -g * a / (b * b))),
            ]
        }))
    }

    /// Elementwise minimum; ties route the gradient to `self`.
    pub fn minimum(self, other: Var<'t>) -> Result<Var<'t>> {
        same_shape("minimum", &self, &other)?;
        let (a, b) = (self.value(), other.value());
        let y = a.zip_map(&b, f64::min)?;
        Ok(self.tape().record(y, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| zip3(g, &a, &b, |g, a, b| if a <= b { g } else { 0.0 })),
                needs[1].then(|| zip3(g, &a, &b, |g, a, b| if a <= b { 0.0 } else { g })),
            ]
        }))
    }

    /// Multiplies by a tensor that does not take part in differentiation.
    pub fn mul_const(self, k: &Tensor) -> Result<Var<'t>> {
        if self.shape() != k.shape() {
            return shape_err("mul_const", format!("{:?} vs {:?}", self.shape(), k.shape()));
        }
        let y = self.value().zip_map(k, |a, b| a * b)?;
        let k = k.clone();
        Ok(self
            .tape()
            .record(y, &[self], move |g, _| vec![Some(zip3(g, &k, &k, |g, k, _| g * k))]))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn scale(self, k: f64) -> Var<'t> {
        let y = self.value().map(|v| v * k);
        self.tape()
            .record(y, &[self], move |g, _| vec![Some(g.map(|v| v * k))])
    }

    pub fn add_scalar(self, k: f64) -> Var<'t> {
        let y = self.value().map(|v| v + k);
        self.tape().record(y, &[self], |g, _| vec![Some(g.clone())])
    }

    /// `|x|` with subgradient 0 at the origin.
    pub fn abs(self) -> Var<'t> {
        self.unary(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn recip(self) -> Var<'t> {
        self.unary(|x| 1.0 / x, |_, y| -y * y)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// Exponential linear unit with unit scale.
    pub fn elu(self) -> Var<'t> {
        self.unary(
            |x| if x > 0.0 { x } else { x.exp_m1() },
            |x, y| if x > 0.0 { 1.0 } else { y + 1.0 },
        )
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    /// Sum of all elements as a 1×1×1×1 tensor.
    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape();
        let y = Tensor::scalar(x.sum());
        self.tape()
            .record(y, &[self], move |g, _| vec![Some(Tensor::full(shape, g.item()))])
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.shape().numel() as f64;
        self.sum().scale(1.0 / n)
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise minimum over a non-empty list of same-shaped maps.
pub fn minimum_of<'t>(items: &[Var<'t>]) -> Result<Var<'t>> {
    let Some((&first, rest)) = items.split_first() else {
        return crate::error::contract_err("minimum_of", "empty list");
    };
    rest.iter().try_fold(first, |acc, &v| acc.minimum(v))
}
