use std::collections::BTreeMap;

use crate::cloud::{PointCloudPair, ReconstructionOutput, SubCloud};
use crate::error::{Error, Result};
use crate::numcore::{Graph, Rng, Scalar, Tensor, Var};

use super::weights::FOLD_GEOMETRY;
use super::{ModelConfig, Weights, SIGMA_FLOOR};

/// Weights placed on a graph, by parameter name.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        self.vars[name]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Decoder outputs on a graph, in millimetres, phase-major channel order.
#[derive(Clone, Debug)]
pub struct ModelOutputs {
    /// Six `m × 3` nodes.
    pub coarse: Vec<Var>,
    /// Six `n × 3` nodes.
    pub dense: Vec<Var>,
}

/// Deterministic evaluation of one subject: ζ = μ, no dropout.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference<T> {
    pub mu: Vec<T>,
    pub sigma: Vec<T>,
    pub prob: T,
    pub recon: Option<ReconstructionOutput<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub weights: Weights<T>,
}

/// The `g` points of the 2D folding grid: a near-square `a × b` lattice on
/// `[−0.5, 0.5]²` (a single row or column collapses to 0 on that axis).
pub fn folding_grid<T: Scalar>(g: usize) -> Vec<[T; 2]> {
    let a = (1..=g).take_while(|d| d * d <= g).filter(|d| g % d == 0).last().unwrap_or(1);
    let b = g / a;
    let lin = |k: usize, n: usize| {
        if n == 1 {
            0.0
        } else {
            -0.5 + k as f64 / (n - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(g);
    for i in 0..a {
        for j in 0..b {
            out.push([T::lit(lin(i, a)), T::lit(lin(j, b))]);
        }
    }
    out
}

/// `ζ = μ + σ ⊙ ε` with `ε ~ N(0, I)` drawn from `rng`. Returns `(ζ, ε)`.
pub fn reparameterize<T: Scalar>(mu: &[T], sigma: &[T], rng: &mut Rng) -> Result<(Vec<T>, Vec<T>)> {
    if mu.len() != sigma.len() {
        return Err(Error::ShapeMismatch(format!(
            "mu has {} entries, sigma {}",
            mu.len(),
            sigma.len()
        )));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s > T::zero())) {
        return Err(Error::invalid(format!("sigma must be positive, got {s}")));
    }
    let eps: Vec<T> = (0..mu.len()).map(|_| T::lit(rng.normal())).collect();
    let zeta = mu.iter().zip(sigma).zip(&eps).map(|((&m, &s), &e)| m + s * e).collect();
    Ok((zeta, eps))
}

/// Graph form of [`reparameterize`] for a recorded `ε`; gradients reach μ
/// and σ only.
pub fn reparameterize_graph<T: Scalar>(g: &mut Graph<T>, mu: Var, sigma: Var, eps: &[T]) -> Var {
    let e = g.constant(Tensor::row(eps.to_vec()));
    let noise = g.mul(sigma, e);
    g.add(mu, noise)
}

fn dense<T: Scalar>(g: &mut Graph<T>, b: &Bound, layer: &str, x: Var, relu: bool) -> Var {
    let y = g.matmul(x, b.var(&format!("{layer}.w")));
    let y = g.add_row(y, b.var(&format!("{layer}.b")));
    if relu {
        g.relu(y)
    } else {
        y
    }
}

/// Dense layer over `[x, row]` where `row` (`1 × k`) is shared by every row
/// of `x`. Same result as concatenating, without materializing the copies.
fn dense_split<T: Scalar>(g: &mut Graph<T>, b: &Bound, layer: &str, x: Var, row: Var, relu: bool) -> Var {
    let w = b.var(&format!("{layer}.w"));
    let a = g.value(x).cols();
    let k = g.value(row).cols();
    let w_x = g.slice_rows(w, 0, a);
    let w_row = g.slice_rows(w, a, k);
    let y = g.matmul(x, w_x);
    let shared = g.matmul(row, w_row);
    let shared = g.add(shared, b.var(&format!("{layer}.b")));
    let y = g.add_row(y, shared);
    if relu {
        g.relu(y)
    } else {
        y
    }
}

fn mlp<T: Scalar>(g: &mut Graph<T>, b: &Bound, prefix: &str, hidden: usize, mut x: Var) -> Var {
    for i in 0..hidden {
        x = dense(g, b, &format!("{prefix}.{i}"), x, true);
    }
    x
}

/// Max-pools the ED rows and the ES rows separately and concatenates.
fn pool_phases<T: Scalar>(g: &mut Graph<T>, x: Var, p: usize) -> Var {
    let ed = g.slice_rows(x, 0, p);
    let es = g.slice_rows(x, p, p);
    let ed = g.max_rows(ed);
    let es = g.max_rows(es);
    g.concat_cols(&[ed, es])
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, weights: Weights<T>) -> Result<Self> {
        config.validate()?;
        weights.check(&config)?;
        Ok(Self { config, weights })
    }

    /// Freshly initialized weights drawn from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let weights = Weights::init(&config, &mut Rng::new(seed));
        Ok(Self { config, weights })
    }

    /// Places every weight on `g`, as parameters or as constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .weights
            .params
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// `2p × 4` encoder input: scaled coordinates and the class code, ED
    /// rows first.
    pub fn input_tensor(&self, pair: &PointCloudPair<T>) -> Result<Tensor<T>> {
        if pair.p() != self.config.p {
            return Err(Error::PointCountMismatch(format!(
                "model expects p={} points per phase, cloud has p={}",
                self.config.p,
                pair.p()
            )));
        }
        let inv = T::lit(1.0 / self.config.coord_scale);
        let mut data = Vec::with_capacity(pair.points().len() * 4);
        for pt in pair.points() {
            if !pt.xyz.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid("non-finite input coordinate"));
            }
            data.extend(pt.xyz.iter().map(|&v| v * inv));
            data.push(T::lit(pt.class.code()));
        }
        Ok(Tensor::matrix(pair.points().len(), 4, data))
    }

    /// Returns the `1 × z` nodes `(μ, σ)`.
    pub fn encode_graph(&self, g: &mut Graph<T>, b: &Bound, pair: &PointCloudPair<T>) -> Result<(Var, Var)> {
        let cfg = &self.config;
        let x = g.constant(self.input_tensor(pair)?);
        let f1 = mlp(g, b, "enc1", cfg.enc_block1.len(), x);
        let g1 = pool_phases(g, f1, cfg.p);
        let mut f2 = dense_split(g, b, "enc2.0", f1, g1, true);
        for i in 1..cfg.enc_block2.len() {
            f2 = dense(g, b, &format!("enc2.{i}"), f2, true);
        }
        let g2 = pool_phases(g, f2, cfg.p);
        let h = mlp(g, b, "enc_mlp", cfg.enc_mlp.len(), g2);
        let out = dense(g, b, "enc_out", h, false);
        let mu = g.slice_cols(out, 0, cfg.z);
        let raw = g.slice_cols(out, cfg.z, cfg.z);
        let sigma = g.softplus(raw);
        let sigma = g.offset(sigma, T::lit(SIGMA_FLOOR));
        Ok((mu, sigma))
    }

    pub fn decode_graph(&self, g: &mut Graph<T>, b: &Bound, zeta: Var) -> ModelOutputs {
        let cfg = &self.config;
        let (m, n, gp) = (cfg.m, cfg.n(), cfg.g);
        let scale = T::lit(cfg.coord_scale);

        let h = mlp(g, b, "coarse", cfg.coarse_hidden.len(), zeta);
        let flat = dense(g, b, "coarse_out", h, false);
        let coarse_u = g.reshape(flat, &[6 * m, 3]);

        let index: Vec<usize> = (0..6 * m).flat_map(|i| std::iter::repeat(i).take(gp)).collect();
        let rep = g.gather_rows(coarse_u, index);
        let grid = folding_grid::<T>(gp);
        let grid_data: Vec<T> = (0..6 * m).flat_map(|_| grid.iter().flatten().copied()).collect();
        let grid = g.constant(Tensor::matrix(6 * n, 2, grid_data));
        let geo = g.concat_cols(&[grid, rep]);
        debug_assert_eq!(g.value(geo).cols(), FOLD_GEOMETRY);

        let offset = if cfg.fold_hidden.is_empty() {
            dense_split(g, b, "fold_out", geo, zeta, false)
        } else {
            let mut h = dense_split(g, b, "fold.0", geo, zeta, true);
            for i in 1..cfg.fold_hidden.len() {
                h = dense(g, b, &format!("fold.{i}"), h, true);
            }
            dense(g, b, "fold_out", h, false)
        };
        let dense_u = g.add(rep, offset);

        let coarse_mm = g.scale(coarse_u, scale);
        let dense_mm = g.scale(dense_u, scale);
        let coarse = (0..6).map(|c| g.slice_rows(coarse_mm, c * m, m)).collect();
        let dense = (0..6).map(|c| g.slice_rows(dense_mm, c * n, n)).collect();
        ModelOutputs { coarse, dense }
    }

    /// Inverted-dropout mask for ζ, or `None` when the rate is zero.
    pub fn dropout_mask(&self, rng: &mut Rng) -> Option<Vec<T>> {
        let r = self.config.dropout;
        if r == 0.0 {
            return None;
        }
        let keep = T::lit(1.0 / (1.0 - r));
        Some(
            (0..self.config.z)
                .map(|_| if rng.uniform() < r { T::zero() } else { keep })
                .collect(),
        )
    }

    /// One-element probability node.
    pub fn predict_graph(&self, g: &mut Graph<T>, b: &Bound, zeta: Var, mask: Option<&[T]>) -> Var {
        let x = match mask {
            Some(mask) => {
                let mv = g.constant(Tensor::row(mask.to_vec()));
                g.mul(zeta, mv)
            }
            None => zeta,
        };
        let h = dense(g, b, "head.0", x, true);
        let logit = dense(g, b, "head_out", h, false);
        g.sigmoid(logit)
    }

    pub fn encode(&self, pair: &PointCloudPair<T>) -> Result<(Vec<T>, Vec<T>)> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let (mu, sigma) = self.encode_graph(&mut g, &b, pair)?;
        check_finite(&g)?;
        Ok((g.value(mu).data().to_vec(), g.value(sigma).data().to_vec()))
    }

    pub fn decode(&self, zeta: &[T]) -> Result<ReconstructionOutput<T>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let z = self.zeta_node(&mut g, zeta)?;
        let out = self.decode_graph(&mut g, &b, z);
        check_finite(&g)?;
        outputs_to_recon(&g, &out)
    }

    /// Outcome probability; dropout is drawn from `rng` only when `training`.
    pub fn predict(&self, zeta: &[T], training: bool, rng: &mut Rng) -> Result<T> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let z = self.zeta_node(&mut g, zeta)?;
        let mask = if training { self.dropout_mask(rng) } else { None };
        let p = self.predict_graph(&mut g, &b, z, mask.as_deref());
        check_finite(&g)?;
        Ok(g.scalar(p))
    }

    /// Encodes, takes ζ = μ, and evaluates the head (and the decoder when
    /// `reconstruct`).
    pub fn infer(&self, pair: &PointCloudPair<T>, reconstruct: bool) -> Result<Inference<T>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let (mu, sigma) = self.encode_graph(&mut g, &b, pair)?;
        let prob = self.predict_graph(&mut g, &b, mu, None);
        let out = reconstruct.then(|| self.decode_graph(&mut g, &b, mu));
        check_finite(&g)?;
        Ok(Inference {
            mu: g.value(mu).data().to_vec(),
            sigma: g.value(sigma).data().to_vec(),
            prob: g.scalar(prob),
            recon: out.map(|o| outputs_to_recon(&g, &o)).transpose()?,
        })
    }

    fn zeta_node(&self, g: &mut Graph<T>, zeta: &[T]) -> Result<Var> {
        if zeta.len() != self.config.z {
            return Err(Error::ShapeMismatch(format!(
                "zeta has {} entries, model z={}",
                zeta.len(),
                self.config.z
            )));
        }
        Ok(g.constant(Tensor::row(zeta.to_vec())))
    }
}

fn check_finite<T: Scalar>(g: &Graph<T>) -> Result<()> {
    match g.non_finite() {
        Some((node, op)) => Err(Error::NonFinite { node, op }),
        None => Ok(()),
    }
}

/// Copies decoder node values into a [`ReconstructionOutput`].
pub fn outputs_to_recon<T: Scalar>(g: &Graph<T>, out: &ModelOutputs) -> Result<ReconstructionOutput<T>> {
    let grab = |vars: &[Var]| -> Result<Vec<SubCloud<T>>> {
        vars.iter()
            .map(|&v| SubCloud::from_flat(g.value(v).data().to_vec()))
            .collect()
    };
    ReconstructionOutput::new(grab(&out.coarse)?, grab(&out.dense)?)
}
