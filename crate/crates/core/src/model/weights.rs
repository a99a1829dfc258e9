use crate::error::{Error, Result};
use crate::numcore::{ParamMap, Rng, Scalar, Tensor};

use super::ModelConfig;

/// Named parameter tensors for every branch. Each dense layer `L` owns
/// `L.w` (`in × out`) and `L.b` (`1 × out`).
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T> {
    pub params: ParamMap<T>,
}

/// Width of the fold MLP input ahead of ζ: grid (u, v) and coarse xyz.
pub(crate) const FOLD_GEOMETRY: usize = 5;

/// Ordered `(layer name, fan_in, fan_out)` for a config.
pub(crate) fn layers(cfg: &ModelConfig) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut chain = |prefix: &str, last: Option<&str>, input: usize, widths: &[usize], output: Option<usize>| {
        let mut fan_in = input;
        for (i, &w) in widths.iter().enumerate() {
            out.push((format!("{prefix}.{i}"), fan_in, w));
            fan_in = w;
        }
        if let (Some(name), Some(o)) = (last, output) {
            out.push((name.to_string(), fan_in, o));
        }
        fan_in
    };
    let c1 = chain("enc1", None, 4, &cfg.enc_block1, None);
    // Block 2 sees [point feature, ED global, ES global].
    let c2 = chain("enc2", None, 3 * c1, &cfg.enc_block2, None);
    chain("enc_mlp", Some("enc_out"), 2 * c2, &cfg.enc_mlp, Some(2 * cfg.z));
    chain("coarse", Some("coarse_out"), cfg.z, &cfg.coarse_hidden, Some(18 * cfg.m));
    chain("fold", Some("fold_out"), FOLD_GEOMETRY + cfg.z, &cfg.fold_hidden, Some(3));
    chain("head", Some("head_out"), cfg.z, &[cfg.head_hidden], Some(1));
    out
}

/// Every parameter name with its shape.
pub(crate) fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    layers(cfg)
        .into_iter()
        .flat_map(|(name, i, o)| [(format!("{name}.w"), vec![i, o]), (format!("{name}.b"), vec![1, o])])
        .collect()
}

impl<T: Scalar> Weights<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let mut params = ParamMap::new();
        for (name, i, o) in layers(cfg) {
            let limit = (6.0 / (i + o) as f64).sqrt();
            let w = (0..i * o).map(|_| T::lit(rng.uniform_range(-limit, limit))).collect();
            params.insert(format!("{name}.w"), Tensor::matrix(i, o, w));
            params.insert(format!("{name}.b"), Tensor::zeros(&[1, o]));
        }
        Self { params }
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        let params = layout(cfg)
            .into_iter()
            .map(|(name, shape)| (name, Tensor::zeros(&shape)))
            .collect();
        Self { params }
    }

    /// Checks names and shapes against `cfg`.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = layout(cfg);
        if expected.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                self.params.len()
            )));
        }
        for (name, shape) in expected {
            let t = self
                .params
                .get(&name)
                .ok_or_else(|| Error::ShapeMismatch(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: expected {shape:?}, found {:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        &self.params[name]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<T> {
        self.params.get_mut(name).expect("known parameter name")
    }

    pub fn count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            p: 32,
            z: 4,
            m: 8,
            g: 4,
            enc_block1: vec![8],
            enc_block2: vec![8, 16],
            enc_mlp: vec![],
            coarse_hidden: vec![8],
            fold_hidden: vec![],
            head_hidden: 5,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn shapes_follow_config() {
        let cfg = small();
        let w: Weights<f64> = Weights::init(&cfg, &mut Rng::new(0));
        w.check(&cfg).unwrap();
        assert_eq!(w.get("enc2.0.w").shape(), &[24, 8]);
        assert_eq!(w.get("enc_out.w").shape(), &[32, 8]);
        assert_eq!(w.get("coarse_out.w").shape(), &[8, 144]);
        assert_eq!(w.get("fold_out.w").shape(), &[9, 3]);
        assert_eq!(w.get("head_out.b").shape(), &[1, 1]);
        assert!(w.params.iter().filter(|(k, _)| k.ends_with(".b")).all(|(_, t)| t.max_abs() == 0.0));
    }

    #[test]
    fn init_respects_glorot_bound_and_seed() {
        let cfg = small();
        let a: Weights<f64> = Weights::init(&cfg, &mut Rng::new(3));
        let b: Weights<f64> = Weights::init(&cfg, &mut Rng::new(3));
        assert_eq!(a, b);
        let w = a.get("enc1.0.w");
        assert!(w.max_abs() <= (6.0f64 / 12.0).sqrt());
    }

    #[test]
    fn check_rejects_wrong_config() {
        let cfg = small();
        let w: Weights<f64> = Weights::zeros(&cfg);
        let other = ModelConfig { z: 6, ..cfg };
        assert!(matches!(w.check(&other), Err(Error::ShapeMismatch(_))));
    }
}
