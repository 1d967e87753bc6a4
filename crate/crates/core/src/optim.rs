use ndarray::{ArrayD, Zip};

use crate::scalar::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam with optional L2 weight decay folded into the gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<ArrayD<T>>,
    second: Vec<ArrayD<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new<'a>(learning_rate: f64, weight_decay: f64, shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let (first, second) = shapes.into_iter().map(|s| (ArrayD::zeros(s), ArrayD::zeros(s))).unzip();
        Self {
            learning_rate,
            weight_decay,
            step: 0,
            first,
            second,
        }
    }

    pub fn from_state(
        learning_rate: f64,
        weight_decay: f64,
        step: u64,
        first: Vec<ArrayD<T>>,
        second: Vec<ArrayD<T>>,
    ) -> Self {
        Self {
            learning_rate,
            weight_decay,
            step,
            first,
            second,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[ArrayD<T>], &[ArrayD<T>]) {
        (&self.first, &self.second)
    }

    /// One update of every parameter; `params` and `grads` align with the
    /// shapes the optimizer was built with.
    pub fn update<'a>(&mut self, params: impl IntoIterator<Item = &'a mut ArrayD<T>>, grads: &[ArrayD<T>]) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::lit(ADAM_BETA1);
        let b2 = T::lit(ADAM_BETA2);
        let one = T::one();
        let c1 = T::lit(1.0 - ADAM_BETA1.powi(t));
        let c2 = T::lit(1.0 - ADAM_BETA2.powi(t));
        let lr = T::lit(self.learning_rate);
        let eps = T::lit(ADAM_EPSILON);
        let wd = T::lit(self.weight_decay);
        let mut count = 0;
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                let g = g + wd * *p;
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            });
            count += 1;
        }
        assert_eq!(count, self.first.len(), "parameter count changed under the optimizer");
    }
}
