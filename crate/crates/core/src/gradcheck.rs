//! Central finite-difference verification of tape gradients.
//!
//! A non-scalar output is reduced to a scalar by a fixed random projection
//! `L = Σ wᵢ yᵢ`, so one backward pass (seeded with `w`) yields the analytic
//! gradient that every finite difference of `L` is compared against.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{contract_err, Error, Result};
use crate::tensor::Tensor;

/// Absolute differences at or below this are treated as agreement.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Input index and flat element index of the worst disagreement.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "max_rel_err={:.3e} at input {} element {} (analytic {:.6e}, numeric {:.6e}) over {} elements",
            self.max_rel_err, self.worst.0, self.worst.1, self.analytic, self.numeric, self.checked
        )
    }
}

/// Relative error of one component, zero when the absolute gap is within the floor.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= ABS_FLOOR {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Checks the gradient of `f` with respect to every element of every input.
/// `seed` fixes the output projection.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64, seed: u64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return contract_err("grad_check", format!("eps {eps} outside (0, 1e-3]"));
    }
    let eval = |xs: &[Tensor]| -> Result<Tensor> {
        let tape = Tape::no_grad();
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let y = f(&vars)?.value();
        if !y.is_finite() {
            return Err(Error::NonFinite("grad_check forward pass produced a non-finite value".into()));
        }
        Ok(y)
    };

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.var(x.clone())).collect();
    let y = f(&vars)?;
    let yv = y.value();
    if !yv.is_finite() {
        return Err(Error::NonFinite("grad_check forward pass produced a non-finite value".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj = Tensor::from_fn(yv.shape(), |_, _, _, _| rng.random_range(-1.0..1.0));
    let grads = tape.backward(y, Some(&proj))?;
    let project = |t: &Tensor| -> f64 { t.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum() };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.wrt(&vars[k]);
        for i in 0..x.numel() {
            let mut bumped = x.to_vec();
            let x0 = bumped[i];
            bumped[i] = x0 + eps;
            probe[k] = Tensor::new(x.shape(), bumped.clone())?;
            let hi = project(&eval(&probe)?);
            bumped[i] = x0 - eps;
            probe[k] = Tensor::new(x.shape(), bumped)?;
            let lo = project(&eval(&probe)?);
            let numeric = (hi - lo) / (2.0 * eps);
            let a = analytic.data()[i];
            let err = rel_error(a, numeric);
            if err > report.max_rel_err || report.checked == 0 {
                report.max_rel_err = err;
                report.worst = (k, i);
                report.analytic = a;
                report.numeric = numeric;
            }
            report.checked += 1;
        }
        probe[k] = x.clone();
    }
    Ok(report)
}
