use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Named parameter tensors, iterated in name order.
pub type ParamMap<T> = BTreeMap<String, Tensor<T>>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with per-parameter first and second moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    /// Number of completed steps.
    pub t: u64,
    pub first: ParamMap<T>,
    pub second: ParamMap<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamMap<T>) -> Self {
        let zeros = |p: &ParamMap<T>| {
            p.iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect()
        };
        Self {
            config,
            t: 0,
            first: zeros(params),
            second: zeros(params),
        }
    }

    /// Applies one update in place. Every parameter must have a gradient of
    /// the same shape.
    pub fn step(&mut self, params: &mut ParamMap<T>, grads: &ParamMap<T>) -> Result<()> {
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::ShapeMismatch(format!("no gradient for {name}")))?;
            let m = self
                .first
                .get(name)
                .ok_or_else(|| Error::ShapeMismatch(format!("no moment for {name}")))?;
            if g.shape() != p.shape() || m.shape() != p.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: param {:?}, grad {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
        }
        if params.len() != self.first.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} tensors, got {}",
                self.first.len(),
                params.len()
            )));
        }

        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let bc1 = T::one() - b1.powi(self.t as i32);
        let bc2 = T::one() - b2.powi(self.t as i32);
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));

        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let m = self.first.get_mut(name).expect("checked above");
            let v = self.second.get_mut(name).expect("checked above");
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi = *pi - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, v: f64) -> ParamMap<f64> {
        [(name.to_string(), Tensor::scalar(v))].into_iter().collect()
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = one("w", 1.25);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        for _ in 0..3 {
            s.step(&mut p, &one("w", 0.0)).unwrap();
        }
        assert_eq!(p["w"].item(), 1.25);
        assert_eq!(s.t, 3);
    }

    #[test]
    fn unit_gradient_moves_by_learning_rate() {
        // m̂ = v̂ = 1 exactly after bias correction, so each step is
        // lr · 1 / (1 + eps).
        let cfg = AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        };
        let mut p = one("w", 0.0);
        let mut s = AdamState::new(cfg, &p);
        s.step(&mut p, &one("w", 1.0)).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p["w"].item() - expected).abs() < 1e-15);
        for _ in 0..9 {
            s.step(&mut p, &one("w", 1.0)).unwrap();
        }
        assert!((p["w"].item() - 10.0 * expected).abs() < 1e-14);
    }

    #[test]
    fn identical_params_stay_identical() {
        let mut p: ParamMap<f64> = [
            ("a".to_string(), Tensor::row(vec![0.5, -1.0])),
            ("b".to_string(), Tensor::row(vec![0.5, -1.0])),
        ]
        .into_iter()
        .collect();
        let mut s = AdamState::new(AdamConfig::default(), &p);
        for k in 0..5 {
            let g = Tensor::row(vec![0.1 * k as f64, -0.3]);
            let grads = [("a".to_string(), g.clone()), ("b".to_string(), g)]
                .into_iter()
                .collect();
            s.step(&mut p, &grads).unwrap();
        }
        assert_eq!(p["a"], p["b"]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = one("w", 0.0);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        let bad = [("w".to_string(), Tensor::row(vec![1.0, 2.0]))]
            .into_iter()
            .collect();
        assert!(matches!(s.step(&mut p, &bad), Err(Error::ShapeMismatch(_))));
        assert_eq!(s.t, 0);
    }
}
