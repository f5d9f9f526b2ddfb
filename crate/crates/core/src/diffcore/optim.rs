use std::collections::HashMap;

use super::tensor::Parameter;

/// RMSProp with a per-parameter running average of squared gradients.
/// Stepping consumes and zeroes the gradients it applied.
#[derive(Debug)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    state: HashMap<String, Vec<f64>>,
}

impl RmsProp {
    pub fn new(learning_rate: f64) -> Self {
        RmsProp {
            learning_rate,
            decay: 0.9,
            epsilon: 1e-8,
            state: HashMap::new(),
        }
    }

    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Parameter>) {
        for p in params {
            let avg = self
                .state
                .entry(p.name.clone())
                .or_insert_with(|| vec![0.0; p.value.len()]);
            debug_assert_eq!(avg.len(), p.value.len());
            let lr = self.learning_rate;
            let decay = self.decay;
            let eps = self.epsilon;
            for ((v, g), a) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(avg.iter_mut())
            {
                *a = decay * *a + (1.0 - decay) * g * g;
                *v -= lr * g / (a.sqrt() + eps);
            }
            p.zero_grad();
        }
    }
}

/// Clamps every entry of every parameter to `[-c, c]`. Idempotent and
/// independent of parameter order.
pub fn clip_weights<'a>(params: impl IntoIterator<Item = &'a mut Parameter>, c: f64) {
    debug_assert!(c > 0.0);
    for p in params {
        for v in p.value.data_mut() {
            *v = v.clamp(-c, c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut p = Parameter::new("w", Tensor::from_vec(1, 2, vec![0.3, -0.7]).unwrap());
        let mut opt = RmsProp::new(0.01);
        opt.step([&mut p]);
        assert_eq!(p.value.data(), &[0.3, -0.7]);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        let mut p = Parameter::new("w", Tensor::scalar(1.0));
        let mut opt = RmsProp::new(0.01);
        let mut prev = 1.0;
        for _ in 0..10 {
            p.grad = Tensor::scalar(2.5);
            opt.step([&mut p]);
            assert!(p.value.item() < prev);
            prev = p.value.item();
        }
        let mut q = Parameter::new("v", Tensor::scalar(-1.0));
        let mut opt = RmsProp::new(0.01);
        let mut prev = -1.0;
        for _ in 0..10 {
            q.grad = Tensor::scalar(-2.5);
            opt.step([&mut q]);
            assert!(q.value.item() > prev);
            prev = q.value.item();
        }
    }

    #[test]
    fn step_zeroes_consumed_gradients() {
        let mut p = Parameter::new("w", Tensor::scalar(0.5));
        p.grad = Tensor::scalar(1.0);
        let mut opt = RmsProp::new(0.01);
        opt.step([&mut p]);
        assert_eq!(p.grad.item(), 0.0);
    }

    #[test]
    fn clip_clamps_and_is_idempotent() {
        let mut p = Parameter::new(
            "w",
            Tensor::from_vec(1, 4, vec![0.5, -0.5, 0.005, -0.002]).unwrap(),
        );
        clip_weights([&mut p], 0.01);
        assert_eq!(p.value.data(), &[0.01, -0.01, 0.005, -0.002]);
        let snapshot = p.value.clone();
        clip_weights([&mut p], 0.01);
        assert_eq!(p.value, snapshot);
    }
}
