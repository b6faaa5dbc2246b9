use super::{Param, Real};

/// Stochastic gradient descent with optional momentum and L2 weight decay.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// One update. `params` must be passed in the same order every call.
    pub fn step(&mut self, params: &mut [&mut Param<T>], lr: f64) {
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        }
        let (lr, mu, wd) = (T::lit(lr), T::lit(self.momentum), T::lit(self.weight_decay));
        for (p, vel) in params.iter_mut().zip(&mut self.velocity) {
            for ((w, g), v) in p.value.iter_mut().zip(&p.grad).zip(vel.iter_mut()) {
                let grad = *g + wd * *w;
                *v = mu * *v + grad;
                *w -= lr * *v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_step() {
        let mut p = Param::<f64>::filled("w", vec![2], 1.0);
        p.grad = vec![0.5, -1.0];
        let mut opt = Sgd::new(0.0, 0.0);
        opt.step(&mut [&mut p], 0.1);
        assert_eq!(p.value, vec![0.95, 1.1]);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = Param::<f64>::filled("w", vec![1], 0.0);
        p.grad = vec![1.0];
        let mut opt = Sgd::new(0.9, 0.0);
        opt.step(&mut [&mut p], 1.0);
        opt.step(&mut [&mut p], 1.0);
        assert!((p.value[0] + 2.9).abs() < 1e-12);
    }
}
