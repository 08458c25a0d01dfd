use crate::array::RealArray;
use crate::autodiff::params::{Gradients, ParameterTree};
use crate::error::{Error, Result};

/// RMSProp state: one squared-gradient moving average per trainable entry.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
    step: u64,
    square_avg: ParameterTree,
}

impl RmsProp {
    pub fn new(params: &ParameterTree, lr: f64, alpha: f64, eps: f64) -> Self {
        let mut square_avg = ParameterTree::new();
        for (name, entry) in params.iter().filter(|(_, e)| e.trainable) {
            square_avg
                .insert(name, RealArray::zeros(entry.value.shape()), false)
                .expect("names unique in source tree");
        }
        Self {
            lr,
            alpha,
            eps,
            step: 0,
            square_avg,
        }
    }

    /// Rebuilds state from checkpointed parts.
    pub fn from_parts(lr: f64, alpha: f64, eps: f64, step: u64, square_avg: ParameterTree) -> Self {
        Self {
            lr,
            alpha,
            eps,
            step,
            square_avg,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn accumulators(&self) -> &ParameterTree {
        &self.square_avg
    }

    /// `v ← αv + (1−α)g²;  p ← p − lr·g / (√v + ε)` for every trainable entry.
    pub fn step(&mut self, params: &mut ParameterTree, grads: &Gradients) -> Result<()> {
        for (name, _) in params.iter().filter(|(_, e)| e.trainable) {
            if grads.get(name).is_none() {
                return Err(Error::MissingGradient(name.to_string()));
            }
        }
        for (name, entry) in params.iter_mut().filter(|(_, e)| e.trainable) {
            let g = grads.get(name).expect("checked above");
            if g.shape() != entry.value.shape() {
                return Err(Error::Shape {
                    op: "RmsProp::step",
                    lhs: entry.value.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let acc = self.square_avg.value_mut(name)?;
            let (alpha, lr, eps) = (self.alpha, self.lr, self.eps);
            for ((p, v), g) in entry
                .value
                .data_mut()
                .iter_mut()
                .zip(acc.data_mut())
                .zip(g.data())
            {
                *v = alpha * *v + (1.0 - alpha) * g * g;
                *p -= lr * g / (v.sqrt() + eps);
            }
        }
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_tree(w: f64) -> ParameterTree {
        let mut t = ParameterTree::new();
        t.insert("w", RealArray::scalar(w), true).unwrap();
        t
    }

    fn grad(g: f64) -> Gradients {
        let mut gr = Gradients::new();
        gr.insert("w", RealArray::scalar(g));
        gr
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_accumulator() {
        let mut p = scalar_tree(0.5);
        let mut opt = RmsProp::new(&p, 0.1, 0.99, 1e-5);
        opt.step(&mut p, &grad(2.0)).unwrap();
        let before = p.clone();
        let acc = opt.accumulators().value("w").unwrap().data()[0];
        opt.step(&mut p, &grad(0.0)).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.accumulators().value("w").unwrap().data()[0], 0.99 * acc);
        assert_eq!(opt.step_count(), 2);
    }

    #[test]
    fn positive_gradient_decreases_param() {
        let mut p = scalar_tree(0.0);
        let mut opt = RmsProp::new(&p, 0.1, 0.99, 1e-5);
        opt.step(&mut p, &grad(1.0)).unwrap();
        assert!(p.value("w").unwrap().data()[0] < 0.0);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = scalar_tree(1.0);
        let mut opt = RmsProp::new(&p, 0.01, 0.99, 1e-5);
        for _ in 0..500 {
            let w = p.value("w").unwrap().data()[0];
            opt.step(&mut p, &grad(2.0 * w)).unwrap();
        }
        assert!(p.value("w").unwrap().data()[0].abs() < 1e-2);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = scalar_tree(1.0);
        let mut opt = RmsProp::new(&p, 0.1, 0.99, 1e-5);
        assert!(matches!(
            opt.step(&mut p, &Gradients::new()),
            Err(Error::MissingGradient(_))
        ));
    }
}
