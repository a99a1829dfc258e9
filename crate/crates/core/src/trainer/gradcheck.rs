//! Finite-difference checks of the training loss and of individual graph
//! operations.

use crate::cloud::{channels, PointCloudPair};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numcore::{Graph, Rng, Tensor, Var};
use crate::objective::LossWeights;

use super::{loss_graph, Sample, Task};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Gradients smaller than this are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `parameter[index]` or an operation name.
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

pub fn max_rel_error(checks: &[GradCheck]) -> f64 {
    checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
}

fn sample_of(pair: &PointCloudPair<f64>, label: u8) -> Sample {
    let truth = channels()
        .map(|(ph, s)| {
            let c = pair.channel(ph, s);
            Tensor::matrix(c.len(), 3, c.flat().to_vec())
        })
        .collect();
    Sample {
        pair: pair.clone(),
        truth,
        label: label as f64,
    }
}

fn total(model: &Model<f64>, s: &Sample, task: Task, w: LossWeights, seed: u64) -> Result<f64> {
    let mut g = Graph::new();
    let b = model.bind(&mut g, false);
    let mut rng = Rng::new(seed);
    let (bd, _) = loss_graph(&mut g, model, &b, &[s], task, w, Some(&mut rng))?;
    Ok(bd.l_total)
}

/// Compares the analytic gradient of `l_total` for one subject with central
/// differences at `per_group` random entries of each of the encoder, decoder
/// and head parameter groups. ε and the dropout mask are drawn from `seed`
/// identically for every evaluation.
pub fn loss_gradcheck(
    model: &Model<f64>,
    pair: &PointCloudPair<f64>,
    label: u8,
    w: LossWeights,
    per_group: usize,
    seed: u64,
) -> Result<Vec<GradCheck>> {
    let task = Task {
        sample: true,
        decoder: true,
        head: true,
        kl: true,
        dropout: true,
    };
    let s = sample_of(pair, label);
    let mut g = Graph::new();
    let b = model.bind(&mut g, true);
    let mut rng = Rng::new(seed);
    let (_, root) = loss_graph(&mut g, model, &b, &[&s], task, w, Some(&mut rng))?;
    let root = root.ok_or_else(|| Error::invalid("no loss terms"))?;
    let grads = g.backward(root)?;

    let groups: [&[&str]; 3] = [&["enc"], &["coarse", "fold"], &["head"]];
    let mut pick = Rng::derived(seed, 1);
    let mut checks = Vec::new();
    for prefixes in groups {
        let names: Vec<&String> = model
            .weights
            .params
            .keys()
            .filter(|k| prefixes.iter().any(|p| k.starts_with(p)))
            .collect();
        for _ in 0..per_group {
            let name = names[pick.below(names.len())];
            let len = model.weights.params[name].len();
            let idx = pick.below(len);
            let analytic = grads.get(b.var(name)).data()[idx];
            let shifted = |delta: f64| -> Result<f64> {
                let mut m = model.clone();
                m.weights.params.get_mut(name).expect("listed").data_mut()[idx] += delta;
                total(&m, &s, task, w, seed)
            };
            let numeric = (shifted(FD_STEP)? - shifted(-FD_STEP)?) / (2.0 * FD_STEP);
            checks.push(GradCheck {
                name: format!("{name}[{idx}]"),
                analytic,
                numeric,
                rel_error: rel_error(analytic, numeric),
            });
        }
    }
    Ok(checks)
}

/// Gradient checks of the graph operations the model is built from, on
/// random inputs away from kinks.
pub fn op_gradcheck(seed: u64) -> Result<Vec<GradCheck>> {
    type Build = fn(&mut Graph<f64>, Var, Var) -> Var;
    let ops: [(&str, Build); 9] = [
        ("matmul", |g, a, b| {
            let bt = g.reshape(b, &[3, 4]);
            let m = g.matmul(a, bt);
            g.sum(m)
        }),
        ("tanh", |g, a, _| {
            let t = g.tanh(a);
            g.sum(t)
        }),
        ("softplus", |g, a, _| {
            let t = g.softplus(a);
            g.mean(t)
        }),
        ("sigmoid", |g, a, _| {
            let t = g.sigmoid(a);
            let sq = g.square(t);
            g.sum(sq)
        }),
        ("exp_log", |g, a, _| {
            let e = g.exp(a);
            let one = g.offset(e, 1.0);
            let l = g.log(one);
            g.sum(l)
        }),
        ("max_rows", |g, a, _| {
            let m = g.max_rows(a);
            let sq = g.square(m);
            g.sum(sq)
        }),
        ("concat_slice", |g, a, b| {
            let bt = g.reshape(b, &[4, 3]);
            let c = g.concat_rows(&[a, bt]);
            let s = g.slice_rows(c, 2, 5);
            let s = g.slice_cols(s, 1, 2);
            let sq = g.square(s);
            g.sum(sq)
        }),
        ("chamfer", |g, a, b| {
            let bt = g.reshape(b, &[4, 3]);
            g.chamfer(a, bt)
        }),
        ("bce", |g, a, _| {
            let r = g.slice_rows(a, 0, 1);
            let c = g.slice_cols(r, 0, 1);
            let p = g.sigmoid(c);
            g.bce(p, 1.0)
        }),
    ];
    let mut rng = Rng::new(seed);
    let mut checks = Vec::new();
    for (name, build) in ops {
        let a0 = Tensor::matrix(5, 3, (0..15).map(|_| rng.normal()).collect());
        let b0 = Tensor::matrix(1, 12, (0..12).map(|_| rng.normal()).collect());
        let eval = |a: &Tensor<f64>, b: &Tensor<f64>| {
            let mut g = Graph::new();
            let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
            let out = build(&mut g, va, vb);
            g.scalar(out)
        };
        let mut g = Graph::new();
        let (va, vb) = (g.param(a0.clone()), g.param(b0.clone()));
        let out = build(&mut g, va, vb);
        let grads = g.backward(out)?;
        for (which, var, base) in [("a", va, &a0), ("b", vb, &b0)] {
            let ga = grads.get(var);
            for idx in 0..base.len() {
                let shifted = |d: f64| {
                    let mut t = base.clone();
                    t.data_mut()[idx] += d;
                    if which == "a" {
                        eval(&t, &b0)
                    } else {
                        eval(&a0, &t)
                    }
                };
                let numeric = (shifted(FD_STEP) - shifted(-FD_STEP)) / (2.0 * FD_STEP);
                let analytic = ga.data()[idx];
                checks.push(GradCheck {
                    name: format!("{name}.{which}[{idx}]"),
                    analytic,
                    numeric,
                    rel_error: rel_error(analytic, numeric),
                });
            }
        }
    }
    Ok(checks)
}

/// A small model for quick checks: every layer present, few units.
pub fn gradcheck_config(p: usize) -> ModelConfig {
    ModelConfig {
        p,
        z: 4,
        m: 4,
        g: p / 4,
        enc_block1: vec![8, 8],
        enc_block2: vec![8, 16],
        enc_mlp: vec![8],
        coarse_hidden: vec![16],
        fold_hidden: vec![8],
        head_hidden: 8,
        dropout: 0.3,
        coord_scale: 20.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::generate_subject;

    #[test]
    fn operation_gradients_match() {
        let checks = op_gradcheck(3).unwrap();
        assert!(checks.len() > 100);
        let worst = max_rel_error(&checks);
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn loss_gradients_match_on_a_small_model() {
        let (pair, _) = generate_subject(&mut Rng::new(1), 1, 0.0, 0.5, 16).unwrap();
        let model = Model::init(gradcheck_config(16), 2).unwrap();
        let w = LossWeights {
            alpha: 1.0,
            beta: 0.01,
            gamma: 5.0,
        };
        let checks = loss_gradcheck(&model, &pair, 1, w, 8, 4).unwrap();
        assert_eq!(checks.len(), 24);
        let worst = max_rel_error(&checks);
        assert!(worst < 1e-3, "{checks:#?}");
    }
}
