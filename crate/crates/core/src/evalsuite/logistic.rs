use crate::error::{Error, Result};
use crate::numcore::sigmoid;

pub const GRAD_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 50_000;

/// Binary logistic regression on standardized features, fit by full-batch
/// gradient descent on mean cross-entropy.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticRegression {
    pub mean: Vec<f64>,
    /// Feature scale; constant features keep scale 1 so they standardize to 0.
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl LogisticRegression {
    pub fn fit(x: &[Vec<f64>], y: &[u8]) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::ShapeMismatch(format!("{} rows for {} labels", x.len(), y.len())));
        }
        let d = x[0].len();
        if x.iter().any(|r| r.len() != d) {
            return Err(Error::ShapeMismatch("ragged feature rows".into()));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature"));
        }
        let pos = y.iter().filter(|&&l| l == 1).count();
        if pos == 0 || pos == y.len() {
            return Err(Error::Undefined("training split has a single class".into()));
        }
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let var = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let xs: Vec<Vec<f64>> = x
            .iter()
            .map(|r| (0..d).map(|j| (r[j] - mean[j]) / scale[j]).collect())
            .collect();
        // The mean-loss Hessian is bounded by (1 + d)/4 for standardized
        // features, so this step is at most 1/L.
        let lr = 4.0 / (1.0 + d as f64);
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut gw = vec![0.0; d];
        let mut iterations = 0;
        let mut grad_norm = f64::INFINITY;
        while iterations < MAX_ITERATIONS {
            gw.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for (r, &l) in xs.iter().zip(y) {
                let z = b + r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
                let e = sigmoid(z) - l as f64;
                gb += e;
                for (g, v) in gw.iter_mut().zip(r) {
                    *g += e * v;
                }
            }
            gb /= n;
            gw.iter_mut().for_each(|g| *g /= n);
            grad_norm = (gb * gb + gw.iter().map(|g| g * g).sum::<f64>()).sqrt();
            if grad_norm < GRAD_TOLERANCE {
                break;
            }
            b -= lr * gb;
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= lr * g;
            }
            iterations += 1;
        }
        Ok(Self {
            mean,
            scale,
            weights: w,
            bias: b,
            iterations,
            grad_norm,
        })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let z = self.bias
            + x.iter()
                .enumerate()
                .map(|(j, v)| (v - self.mean[j]) / self.scale[j] * self.weights[j])
                .sum::<f64>();
        sigmoid(z)
    }
}
