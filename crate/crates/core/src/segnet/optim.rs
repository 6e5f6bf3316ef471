use super::params::{Grads, ParamStore};
use super::tensor::Real;

/// Heavy-ball SGD: `v ← μ·v + g`, `w ← w − η·v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd<T> {
    pub learning_rate: T,
    pub momentum: T,
    velocity: Grads<T>,
}

impl<T: Real> Sgd<T> {
    pub fn new(params: &ParamStore<T>, learning_rate: T, momentum: T) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>) {
        let (lr, mu) = (self.learning_rate, self.momentum);
        for ((entry, g), v) in params
            .entries_mut()
            .iter_mut()
            .zip(&grads.0)
            .zip(self.velocity.0.iter_mut())
        {
            assert_eq!(entry.value.len(), g.len(), "gradient does not conform to {}", entry.name);
            for ((w, &gi), vi) in entry.value.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = mu * *vi + gi;
                *w -= lr * *vi;
            }
        }
    }

    pub fn velocity(&self) -> &Grads<T> {
        &self.velocity
    }
}
