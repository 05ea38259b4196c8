use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// SGD with heavy-ball momentum: `v <- momentum * v + grad; p <- p - lr * v`.
///
/// Velocities are keyed by parameter index and start at zero.
#[derive(Clone, Debug)]
pub struct Sgd {
    momentum: f64,
    velocity: Vec<Option<Tensor>>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(Sgd {
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    /// Updates `params[i]` for every `i` in `selected`. Fails without touching
    /// anything if a selected parameter has no gradient.
    pub fn step(
        &mut self,
        params: &mut [Tensor],
        grads: &[Option<Tensor>],
        selected: &[usize],
        lr: f64,
    ) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        for &i in selected {
            let grad = grads
                .get(i)
                .and_then(Option::as_ref)
                .ok_or_else(|| Error::Contract(format!("parameter {i} has no gradient")))?;
            if grad.shape() != params[i].shape() {
                return Err(Error::dim(
                    "sgd_step",
                    format!("grad {:?} vs param {:?}", grad.shape(), params[i].shape()),
                ));
            }
        }
        if self.velocity.len() < params.len() {
            self.velocity.resize(params.len(), None);
        }
        for &i in selected {
            let grad = grads[i].as_ref().expect("checked above");
            let v = self.velocity[i].get_or_insert_with(|| Tensor::zeros(grad.shape()));
            for ((p, v), g) in params[i]
                .data_mut()
                .iter_mut()
                .zip(v.data_mut())
                .zip(grad.data())
            {
                *v = self.momentum * *v + g;
                *p -= lr * *v;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vanilla_step() {
        let mut sgd = Sgd::new(0.0).unwrap();
        let mut params = vec![Tensor::scalar(1.0)];
        sgd.step(&mut params, &[Some(Tensor::scalar(2.0))], &[0], 0.1).unwrap();
        assert!((params[0].item().unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_is_fixed_point() {
        let mut sgd = Sgd::new(0.9).unwrap();
        let mut params = vec![Tensor::vector(vec![1.5, -2.0])];
        for _ in 0..3 {
            sgd.step(&mut params, &[Some(Tensor::zeros(&[2]))], &[0], 0.1).unwrap();
        }
        assert_eq!(params[0].data(), &[1.5, -2.0]);
    }

    #[test]
    fn momentum_recurrence_two_steps() {
        // v1 = 1, p1 = -0.1; v2 = 0.9 + 1 = 1.9, p2 = -0.1 - 0.19
        let mut sgd = Sgd::new(0.9).unwrap();
        let mut params = vec![Tensor::scalar(0.0)];
        let grads = [Some(Tensor::scalar(1.0))];
        sgd.step(&mut params, &grads, &[0], 0.1).unwrap();
        sgd.step(&mut params, &grads, &[0], 0.1).unwrap();
        assert!((params[0].item().unwrap() + 0.29).abs() < 1e-15);
    }

    #[test]
    fn missing_grad_is_contract_error_and_leaves_params() {
        let mut sgd = Sgd::new(0.9).unwrap();
        let mut params = vec![Tensor::scalar(1.0), Tensor::scalar(2.0)];
        let grads = [Some(Tensor::scalar(1.0)), None];
        let err = sgd.step(&mut params, &grads, &[0, 1], 0.1).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert_eq!(params[0].item().unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Sgd::new(1.0).is_err());
        let mut sgd = Sgd::new(0.5).unwrap();
        let mut params = vec![Tensor::scalar(1.0)];
        assert!(sgd.step(&mut params, &[Some(Tensor::scalar(1.0))], &[0], 0.0).is_err());
    }
}
