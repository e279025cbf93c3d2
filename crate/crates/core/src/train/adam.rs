use crate::arch::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Bias-corrected Adam over the concatenated parameter lists of several stores.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(shapes: impl IntoIterator<Item = Shape>, lr: f64) -> Self {
        let m: Vec<Tensor> = shapes.into_iter().map(Tensor::zeros).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn for_stores(stores: &[&ParamStore], lr: f64) -> Self {
        Self::new(stores.iter().flat_map(|s| s.entries().iter().map(|p| p.value.shape())), lr)
    }

    /// One update of `params` in place. A missing gradient counts as zero.
    /// Non-finite gradients reject the whole step and leave everything untouched.
    pub fn update(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract {
                op: "adam_step",
                detail: format!("{} params and {} grads for {} moment slots", params.len(), grads.len(), self.m.len()),
            });
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.shape() != params[i].shape() {
                    return Err(Error::Shape {
                        op: "adam_step",
                        detail: format!("gradient {:?} for parameter {:?}", g.shape(), params[i].shape()),
                    });
                }
                if !g.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of parameter {i}; step rejected")));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (i, p) in params.iter_mut().enumerate() {
            let mut m = self.m[i].to_vec();
            let mut v = self.v[i].to_vec();
            let mut theta = p.to_vec();
            match &grads[i] {
                Some(g) => {
                    for (((m, v), th), &g) in m.iter_mut().zip(&mut v).zip(&mut theta).zip(g.data()) {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *th -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    }
                }
                None => {
                    for ((m, v), th) in m.iter_mut().zip(&mut v).zip(&mut theta) {
                        *m *= b1;
                        *v *= b2;
                        *th -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    }
                }
            }
            let s = p.shape();
            self.m[i] = Tensor::from_vec(s, m);
            self.v[i] = Tensor::from_vec(s, v);
            *p = Tensor::from_vec(s, theta);
        }
        Ok(())
    }

    /// Updates every parameter of `stores`, with `grads[k]` belonging to `stores[k]`.
    pub fn step_stores(&mut self, stores: &mut [&mut ParamStore], grads: &[Vec<Option<Tensor>>]) -> Result<()> {
        let mut params: Vec<Tensor> = stores.iter().flat_map(|s| s.entries().iter().map(|p| p.value.clone())).collect();
        let flat: Vec<Option<Tensor>> = grads.iter().flatten().cloned().collect();
        self.update(&mut params, &flat)?;
        let mut it = params.into_iter();
        for s in stores.iter_mut() {
            for i in 0..s.len() {
                s.set_value(i, it.next().expect("one value per parameter"))?;
            }
        }
        Ok(())
    }

    /// Moments as named tensors for checkpointing.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let m = self.m.iter().enumerate().map(|(i, t)| (format!("m.{i}"), t.clone()));
        let v = self.v.iter().enumerate().map(|(i, t)| (format!("v.{i}"), t.clone()));
        m.chain(v).collect()
    }

    pub fn load_named(&mut self, tensors: &[(String, Tensor)], step: u64) -> Result<()> {
        let n = self.m.len();
        if tensors.len() != 2 * n {
            return Err(Error::Data(format!("optimizer state holds {} tensors, expected {}", tensors.len(), 2 * n)));
        }
        for (i, (name, t)) in tensors.iter().enumerate() {
            let (slot, k) = if i < n { (&mut self.m, i) } else { (&mut self.v, i - n) };
            let want = if i < n { format!("m.{k}") } else { format!("v.{k}") };
            if *name != want || t.shape() != slot[k].shape() {
                return Err(Error::Data(format!("optimizer tensor {name} {:?} does not match {want}", t.shape())));
            }
            slot[k] = t.clone();
        }
        self.step = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new([Shape::new(1, 1, 1, 1)], 1e-3);
        let mut p = vec![Tensor::scalar(0.5)];
        adam.update(&mut p, &[Some(Tensor::scalar(1.0))]).unwrap();
        let delta = p[0].item() - 0.5;
        assert!((delta + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_from_rest_changes_nothing() {
        let mut adam = Adam::new([Shape::new(1, 1, 1, 3)], 1e-3);
        let mut p = vec![Tensor::full(Shape::new(1, 1, 1, 3), 0.2)];
        adam.update(&mut p, &[Some(Tensor::zeros(Shape::new(1, 1, 1, 3)))]).unwrap();
        assert!(p[0].data().iter().all(|&v| v == 0.2));
        assert!(adam.m[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_histories_update_identically() {
        let mut adam = Adam::new([Shape::new(1, 1, 1, 1); 2], 1e-2);
        let mut p = vec![Tensor::scalar(1.0), Tensor::scalar(1.0)];
        for g in [0.3, -0.7, 0.1] {
            adam.update(&mut p, &[Some(Tensor::scalar(g)), Some(Tensor::scalar(g))]).unwrap();
        }
        assert!(p[0].bit_eq(&p[1]));
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut adam = Adam::new([Shape::new(1, 1, 1, 1)], 1e-3);
        let mut p = vec![Tensor::scalar(1.0)];
        assert!(adam.update(&mut p, &[Some(Tensor::scalar(f64::NAN))]).is_err());
        assert_eq!(adam.step, 0);
        assert_eq!(p[0].item(), 1.0);
    }

    #[test]
    fn moment_decay_without_gradient() {
        let mut adam = Adam::new([Shape::new(1, 1, 1, 1)], 1e-3);
        let mut p = vec![Tensor::scalar(0.0)];
        adam.update(&mut p, &[Some(Tensor::scalar(2.0))]).unwrap();
        let m1 = adam.m[0].item();
        adam.update(&mut p, &[None]).unwrap();
        assert!((adam.m[0].item() - 0.9 * m1).abs() < 1e-15);
    }
}
