use super::{Element, GradError, ParamSet, Result};

/// Plain SGD with a fixed learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0005,
            epochs: 200,
            batch_size: 1,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| {
            Err(GradError::Validation {
                op: "sgd_config",
                msg: msg.to_string(),
            })
        };
        // epochs = 0 is accepted as an explicit no-op run.
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}

/// `w <- w - lr * grad(w)` for every parameter, then zeroes the gradients.
///
/// Every parameter must carry a gradient; otherwise nothing is updated.
pub fn sgd_step<T: Element>(params: &mut ParamSet<T>, cfg: &SgdConfig) -> Result<()> {
    if let Some((name, _)) = params.iter().find(|(_, t)| t.grad().is_none()) {
        return Err(GradError::State(format!("parameter '{name}' has no gradient")));
    }
    let lr = T::lit(cfg.learning_rate);
    for (_, t) in params.iter_mut() {
        let g = t.grad().map(<[T]>::to_vec).unwrap_or_default();
        for (w, d) in t.values_mut().iter_mut().zip(&g) {
            *w = *w - lr * *d;
        }
        t.zero_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::Tensor;

    fn one_param(w: f32, g: f32) -> ParamSet<f32> {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::full(&[1], w)).unwrap();
        p.get_mut("w").unwrap().accumulate_grad(&[g]).unwrap();
        p
    }

    #[test]
    fn direct_arithmetic() {
        let mut p = one_param(1.0, 2.0);
        sgd_step(&mut p, &SgdConfig::default()).unwrap();
        assert!((p.get("w").unwrap().values()[0] - 0.999).abs() < 1e-7);
        assert_eq!(p.get("w").unwrap().grad().unwrap(), &[0.0]);
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut p = one_param(0.3, 5.0);
        let cfg = SgdConfig { learning_rate: 0.0, ..Default::default() };
        sgd_step(&mut p, &cfg).unwrap();
        assert_eq!(p.get("w").unwrap().values(), &[0.3]);
    }

    #[test]
    fn two_steps_equal_summed_step() {
        let cfg = SgdConfig { learning_rate: 0.25, ..Default::default() };
        let mut a = ParamSet::<f64>::new();
        a.insert("w", Tensor::full(&[1], 1.0)).unwrap();
        let mut b = a.clone();
        for _ in 0..2 {
            a.get_mut("w").unwrap().accumulate_grad(&[0.5]).unwrap();
            sgd_step(&mut a, &cfg).unwrap();
        }
        b.get_mut("w").unwrap().accumulate_grad(&[1.0]).unwrap();
        sgd_step(&mut b, &cfg).unwrap();
        assert_eq!(a.get("w").unwrap().values(), b.get("w").unwrap().values());
    }

    #[test]
    fn missing_grad_is_state_error() {
        let mut p = ParamSet::<f32>::new();
        p.insert("w", Tensor::full(&[1], 1.0)).unwrap();
        assert!(matches!(
            sgd_step(&mut p, &SgdConfig::default()),
            Err(GradError::State(_))
        ));
    }
}
