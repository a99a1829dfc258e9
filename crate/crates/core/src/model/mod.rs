//! Three-branch network: PointNet-style variational encoder, coarse + folding
//! reconstruction decoder, and dropout/MLP/sigmoid prediction head.

mod checkpoint;
mod network;
mod weights;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use network::{
    folding_grid, outputs_to_recon, reparameterize, reparameterize_graph, Bound, Inference, Model,
    ModelOutputs,
};
pub use weights::Weights;

pub use crate::cloud::ReconstructionOutput;

use crate::config::{parse_list, parse_value, render_list, KeyValues};
use crate::error::{Error, Result};

/// Added to the softplus output so σ stays strictly positive.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Input points per phase.
    pub p: usize,
    /// Latent width.
    pub z: usize,
    /// Coarse points per channel.
    pub m: usize,
    /// Folding grid points per coarse point.
    pub g: usize,
    /// Shared per-point MLP widths of the first PointNet block.
    pub enc_block1: Vec<usize>,
    /// Shared per-point MLP widths of the second block, which sees each
    /// point's block-1 feature alongside the block-1 global feature.
    pub enc_block2: Vec<usize>,
    /// Hidden widths of the MLP from the pooled feature to (μ, raw σ).
    pub enc_mlp: Vec<usize>,
    pub coarse_hidden: Vec<usize>,
    pub fold_hidden: Vec<usize>,
    /// Prediction head hidden width.
    pub head_hidden: usize,
    pub dropout: f64,
    /// Millimetres per network unit: coordinates are divided by this on the
    /// way in and multiplied on the way out.
    pub coord_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            p: 1024,
            z: 64,
            m: 64,
            g: 16,
            enc_block1: vec![64, 128, 256],
            enc_block2: vec![256, 512],
            enc_mlp: vec![256],
            coarse_hidden: vec![256, 256],
            fold_hidden: vec![128, 64],
            head_hidden: 128,
            dropout: 0.3,
            coord_scale: 20.0,
        }
    }
}

impl ModelConfig {
    /// Dense points per channel.
    pub fn n(&self) -> usize {
        self.m * self.g
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if self.z < 2 {
            return bad(format!("z must be at least 2, got {}", self.z));
        }
        if self.p == 0 || self.m == 0 || self.g == 0 {
            return bad("p, m and g must be positive".into());
        }
        if self.n() != self.p {
            return bad(format!(
                "dense points per channel n = m·g = {} must equal p = {}",
                self.n(),
                self.p
            ));
        }
        if self.enc_block1.is_empty() || self.enc_block2.is_empty() {
            return bad("encoder blocks need at least one layer".into());
        }
        let widths = self
            .enc_block1
            .iter()
            .chain(&self.enc_block2)
            .chain(&self.enc_mlp)
            .chain(&self.coarse_hidden)
            .chain(&self.fold_hidden)
            .chain(std::iter::once(&self.head_hidden));
        if widths.into_iter().any(|&w| w == 0) {
            return bad("all layer widths must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.coord_scale > 0.0) {
            return bad("coord_scale must be positive".into());
        }
        Ok(())
    }

    /// Applies one `key=value` (without the `model.` prefix). Returns
    /// `false` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "p" => self.p = parse_value(key, value)?,
            "z" => self.z = parse_value(key, value)?,
            "m" => self.m = parse_value(key, value)?,
            "g" => self.g = parse_value(key, value)?,
            "enc_block1" => self.enc_block1 = parse_list(key, value)?,
            "enc_block2" => self.enc_block2 = parse_list(key, value)?,
            "enc_mlp" => self.enc_mlp = parse_list(key, value)?,
            "coarse_hidden" => self.coarse_hidden = parse_list(key, value)?,
            "fold_hidden" => self.fold_hidden = parse_list(key, value)?,
            "head_hidden" => self.head_hidden = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "coord_scale" => self.coord_scale = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.insert("p", self.p);
        kv.insert("z", self.z);
        kv.insert("m", self.m);
        kv.insert("g", self.g);
        kv.insert("enc_block1", render_list(&self.enc_block1));
        kv.insert("enc_block2", render_list(&self.enc_block2));
        kv.insert("enc_mlp", render_list(&self.enc_mlp));
        kv.insert("coarse_hidden", render_list(&self.coarse_hidden));
        kv.insert("fold_hidden", render_list(&self.fold_hidden));
        kv.insert("head_hidden", self.head_hidden);
        kv.insert("dropout", self.dropout);
        kv.insert("coord_scale", self.coord_scale);
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in &kv.0 {
            if !cfg.set(k, v)? {
                return Err(Error::invalid(format!("unknown model key {k:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
