//! Composite training loss and its annealing schedules.
//!
//! `L_total = L_reconstruction + β·L_KL + γ·L_CE` with
//! `L_reconstruction = Σ_{phase, substructure} (L_coarse + α·L_dense)`.

use std::fmt::Write as _;

use crate::cloud::{chamfer, channels, PointCloudPair, ReconstructionOutput};
use crate::config::parse_value;
use crate::error::{Error, Result};
use crate::numcore::{clamp_prob, Graph, Scalar, Var};

/// Piecewise-constant monotone schedule: `stages` equal stages over
/// `total_steps`, linearly spaced from `start` to `end`, clamped to `end`
/// afterwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub start: f64,
    pub end: f64,
    pub total_steps: usize,
    pub stages: usize,
}

impl Schedule {
    pub fn new(start: f64, end: f64, total_steps: usize, stages: usize) -> Self {
        Self {
            start,
            end,
            total_steps,
            stages,
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if self.stages == 0 || self.total_steps == 0 {
            return Err(Error::invalid(format!("{name}: stages and total steps must be positive")));
        }
        if !(self.start.is_finite() && self.end.is_finite()) || self.end < self.start {
            return Err(Error::invalid(format!(
                "{name}: need finite start <= end, got {} -> {}",
                self.start, self.end
            )));
        }
        Ok(())
    }

    pub fn value(&self, step: usize) -> f64 {
        if step >= self.total_steps {
            return self.end;
        }
        if self.stages < 2 {
            return self.start;
        }
        let k = (step as u128 * self.stages as u128 / self.total_steps as u128) as usize;
        let k = k.min(self.stages - 1);
        if k == self.stages - 1 {
            return self.end;
        }
        self.start + k as f64 * (self.end - self.start) / (self.stages - 1) as f64
    }
}

/// The α, β, γ schedules.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedules {
    pub alpha: Schedule,
    pub beta: Schedule,
    pub gamma: Schedule,
}

impl Schedules {
    /// α 0.01→2.0, β 0.001→0.01, γ 1.0→5.0.
    pub fn standard(total_steps: usize, stages: usize) -> Self {
        Self {
            alpha: Schedule::new(0.01, 2.0, total_steps, stages),
            beta: Schedule::new(0.001, 0.01, total_steps, stages),
            gamma: Schedule::new(1.0, 5.0, total_steps, stages),
        }
    }

    pub fn at(&self, step: usize) -> LossWeights {
        LossWeights {
            alpha: self.alpha.value(step),
            beta: self.beta.value(step),
            gamma: self.gamma.value(step),
        }
    }

    pub fn end(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha.end,
            beta: self.beta.end,
            gamma: self.gamma.end,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.alpha.validate("alpha")?;
        self.beta.validate("beta")?;
        self.gamma.validate("gamma")
    }

    /// Applies `alpha.start`-style keys; `false` for unknown keys.
    pub(crate) fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let Some((name, field)) = key.split_once('.') else {
            return Ok(false);
        };
        let sch = match name {
            "alpha" => &mut self.alpha,
            "beta" => &mut self.beta,
            "gamma" => &mut self.gamma,
            _ => return Ok(false),
        };
        match field {
            "start" => sch.start = parse_value(key, value)?,
            "end" => sch.end = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// One evaluated loss with its components and the weights used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown<T> {
    /// Rows ED, ES; columns LV endo, LV epi, RV endo.
    pub l_coarse: [[T; 3]; 2],
    pub l_dense: [[T; 3]; 2],
    pub l_reconstruction: T,
    pub l_kl: T,
    pub l_ce: T,
    pub l_total: T,
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
}

pub const LOG_HEADER: &str = "step,alpha,beta,gamma,l_reconstruction,l_kl,l_ce,l_total";

impl<T: Scalar> LossBreakdown<T> {
    /// Aggregates components with the same operation order as
    /// [`compose_graph`].
    pub fn compose(l_coarse: [[T; 3]; 2], l_dense: [[T; 3]; 2], l_kl: T, l_ce: T, w: LossWeights) -> Self {
        let (alpha, beta, gamma) = (T::lit(w.alpha), T::lit(w.beta), T::lit(w.gamma));
        let mut recon = T::zero();
        for i in 0..2 {
            for j in 0..3 {
                recon = recon + (l_coarse[i][j] + l_dense[i][j] * alpha);
            }
        }
        let l_total = recon + l_kl * beta + l_ce * gamma;
        Self {
            l_coarse,
            l_dense,
            l_reconstruction: recon,
            l_kl,
            l_ce,
            l_total,
            alpha,
            beta,
            gamma,
        }
    }

    /// Largest violation of the two recomposition identities.
    pub fn identity_error(&self) -> T {
        let mut recon = T::zero();
        for i in 0..2 {
            for j in 0..3 {
                recon = recon + self.l_coarse[i][j] + self.alpha * self.l_dense[i][j];
            }
        }
        let e1 = (recon - self.l_reconstruction).abs();
        let total = self.l_reconstruction + self.beta * self.l_kl + self.gamma * self.l_ce;
        let e2 = (total - self.l_total).abs();
        e1.max(e2)
    }

    /// `step,alpha,beta,gamma,l_reconstruction,l_kl,l_ce,l_total` with
    /// shortest round-trip formatting.
    pub fn csv_row(&self, step: usize) -> String {
        let mut s = String::new();
        write!(
            s,
            "{step},{},{},{},{},{},{},{}",
            self.alpha, self.beta, self.gamma, self.l_reconstruction, self.l_kl, self.l_ce, self.l_total
        )
        .expect("write to string");
        s
    }
}

/// `½ Σ (μ² + σ² − 1 − 2 ln σ)`.
pub fn kl_divergence<T: Scalar>(mu: &[T], sigma: &[T]) -> Result<T> {
    if mu.len() != sigma.len() {
        return Err(Error::ShapeMismatch(format!("mu {} vs sigma {}", mu.len(), sigma.len())));
    }
    let mut acc = T::zero();
    for (&m, &s) in mu.iter().zip(sigma) {
        if !(s > T::zero()) {
            return Err(Error::invalid(format!("sigma must be positive, got {s}")));
        }
        acc = acc + m * m + s * s - T::one() - T::lit(2.0) * s.ln();
    }
    Ok(T::lit(0.5) * acc)
}

/// Binary cross-entropy with the probability clamped to `[1e-7, 1 − 1e-7]`.
pub fn cross_entropy<T: Scalar>(prob: T, label: T) -> T {
    let p = clamp_prob(prob);
    -(label * p.ln() + (T::one() - label) * (T::one() - p).ln())
}

pub fn mean_cross_entropy<T: Scalar>(probs: &[T], labels: &[T]) -> Result<T> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let sum = probs
        .iter()
        .zip(labels)
        .fold(T::zero(), |acc, (&p, &y)| acc + cross_entropy(p, y));
    Ok(sum / T::lit(probs.len() as f64))
}

/// Single-subject loss. Both coarse and dense outputs are compared with the
/// full-resolution input channel.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<T: Scalar>(
    recon: &ReconstructionOutput<T>,
    truth: &PointCloudPair<T>,
    mu: &[T],
    sigma: &[T],
    prob: T,
    label: T,
    step: usize,
    schedules: &Schedules,
) -> Result<LossBreakdown<T>> {
    let mut l_coarse = [[T::zero(); 3]; 2];
    let mut l_dense = [[T::zero(); 3]; 2];
    for (ph, s) in channels() {
        let t = truth.channel(ph, s);
        l_coarse[ph.index()][s.index()] = chamfer(recon.coarse(ph, s), &t);
        l_dense[ph.index()][s.index()] = chamfer(recon.dense(ph, s), &t);
    }
    let kl = kl_divergence(mu, sigma)?;
    let ce = cross_entropy(prob, label);
    Ok(LossBreakdown::compose(l_coarse, l_dense, kl, ce, schedules.at(step)))
}

/// `½ Σ (μ² + σ² − 1 − 2 ln σ)` on a graph.
pub fn kl_graph<T: Scalar>(g: &mut Graph<T>, mu: Var, sigma: Var) -> Var {
    let z = g.value(mu).len();
    let m2 = g.square(mu);
    let s2 = g.square(sigma);
    let ls = g.log(sigma);
    let ls = g.scale(ls, T::lit(2.0));
    let a = g.add(m2, s2);
    let a = g.sub(a, ls);
    let a = g.sum(a);
    let a = g.offset(a, T::lit(-(z as f64)));
    g.scale(a, T::lit(0.5))
}

/// Graph nodes of the components of one loss. `None` marks a disabled term.
pub struct GraphTerms {
    pub coarse: Option<[[Var; 3]; 2]>,
    pub dense: Option<[[Var; 3]; 2]>,
    pub kl: Option<Var>,
    pub ce: Option<Var>,
}

/// `(L_reconstruction, L_total)` nodes, mirroring [`LossBreakdown::compose`];
/// disabled terms contribute nothing. Returns `None` if every term is off.
pub fn compose_graph<T: Scalar>(g: &mut Graph<T>, terms: &GraphTerms, w: LossWeights) -> (Option<Var>, Option<Var>) {
    let mut recon = None;
    if let (Some(c), Some(d)) = (terms.coarse, terms.dense) {
        for i in 0..2 {
            for j in 0..3 {
                let sd = g.scale(d[i][j], T::lit(w.alpha));
                let t = g.add(c[i][j], sd);
                recon = Some(match recon {
                    None => t,
                    Some(r) => g.add(r, t),
                });
            }
        }
    }
    let mut total = recon;
    for (term, weight) in [(terms.kl, w.beta), (terms.ce, w.gamma)] {
        if let Some(v) = term {
            let sv = g.scale(v, T::lit(weight));
            total = Some(match total {
                None => sv,
                Some(t) => g.add(t, sv),
            });
        }
    }
    (recon, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{Phase, SubCloud, Substructure};
    use crate::numcore::{Rng, Tensor};

    fn alpha() -> Schedule {
        Schedule::new(0.01, 2.0, 80_000, 5)
    }

    #[test]
    fn schedule_examples() {
        let a = alpha();
        assert_eq!(a.value(0), 0.01);
        assert_eq!(a.value(79_999), 2.0);
        assert!((a.value(16_000) - 0.5075).abs() < 1e-15);
        assert_eq!(a.value(15_999), 0.01);
        assert_eq!(a.value(64_000), 2.0);
        assert_eq!(a.value(1_000_000), 2.0);
    }

    #[test]
    fn schedules_are_monotone_within_their_ranges() {
        let s = Schedules::standard(1000, 5);
        let mut prev = s.at(0);
        assert_eq!((prev.alpha, prev.beta, prev.gamma), (0.01, 0.001, 1.0));
        for step in 0..1200 {
            let w = s.at(step);
            assert!(w.alpha >= prev.alpha && w.beta >= prev.beta && w.gamma >= prev.gamma);
            assert!((0.01..=2.0).contains(&w.alpha));
            assert!((0.001..=0.01).contains(&w.beta));
            assert!((1.0..=5.0).contains(&w.gamma));
            prev = w;
        }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.0; 5], &[1.0; 5]).unwrap(), 0.0);
        assert_eq!(kl_divergence(&[1.0], &[1.0]).unwrap(), 0.5);
        let v = kl_divergence(&[0.0], &[2.0]).unwrap();
        assert!((v - 0.5 * (3.0 - 2.0 * 2f64.ln())).abs() < 1e-15);
        assert!((v - 0.8069).abs() < 1e-4);
        assert!(kl_divergence(&[0.0], &[0.0]).is_err());
    }

    #[test]
    fn kl_is_nonnegative() {
        let mut rng = Rng::new(3);
        for _ in 0..500 {
            let mu: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            let sigma: Vec<f64> = (0..4).map(|_| rng.uniform_range(0.05, 3.0)).collect();
            assert!(kl_divergence(&mu, &sigma).unwrap() >= 0.0);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy(0.5, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert!((cross_entropy(1.0f64 - 1e-7, 1.0) - 1e-7).abs() < 1e-12);
        assert!(cross_entropy(1.0f64, 0.0).is_finite());
        let m = mean_cross_entropy(&[0.9f64, 0.2], &[1.0, 0.0]).unwrap();
        assert!((m - 0.16425).abs() < 1e-5);
    }

    fn pair_from(chans: &[Vec<[f64; 3]>]) -> PointCloudPair<f64> {
        let subs: Vec<SubCloud<f64>> = chans.iter().map(|c| SubCloud::new(c.clone()).unwrap()).collect();
        PointCloudPair::from_channels(&subs).unwrap()
    }

    fn random_instance(rng: &mut Rng) -> (ReconstructionOutput<f64>, PointCloudPair<f64>) {
        let mut cloud = |n: usize| -> Vec<[f64; 3]> { (0..n).map(|_| [rng.normal(), rng.normal(), rng.normal()]).collect() };
        let truth: Vec<Vec<[f64; 3]>> = vec![cloud(3), cloud(4), cloud(5), cloud(4), cloud(3), cloud(5)];
        let coarse = (0..6).map(|_| SubCloud::new(cloud(2)).unwrap()).collect();
        let dense = (0..6).map(|_| SubCloud::new(cloud(6)).unwrap()).collect();
        (ReconstructionOutput::new(coarse, dense).unwrap(), pair_from(&truth))
    }

    #[test]
    fn total_loss_matches_independent_recomputation() {
        let mut rng = Rng::new(9);
        let sch = Schedules::standard(100, 5);
        for step in [0, 37, 99, 500] {
            let (recon, truth) = random_instance(&mut rng);
            let mu = [0.3, -0.1];
            let sigma = [0.8, 1.4];
            let b = total_loss(&recon, &truth, &mu, &sigma, 0.7, 1.0, step, &sch).unwrap();
            let w = sch.at(step);
            let mut expect = 0.0;
            let mut i = 0;
            for ph in Phase::ALL {
                for s in Substructure::ALL {
                    let t = truth.channel(ph, s);
                    let c = crate::cloud::chamfer_brute(recon.coarse(ph, s), &t);
                    let d = crate::cloud::chamfer_brute(recon.dense(ph, s), &t);
                    assert!((b.l_coarse[ph.index()][s.index()] - c).abs() < 1e-12);
                    expect += c + w.alpha * d;
                    i += 1;
                }
            }
            assert_eq!(i, 6);
            let kl = 0.5 * (0.09 + 0.01 + 0.64 + 1.96 - 2.0 - 2.0 * (0.8f64.ln() + 1.4f64.ln()));
            let ce = -(0.7f64).ln();
            assert!((b.l_reconstruction - expect).abs() < 1e-12);
            assert!((b.l_kl - kl).abs() < 1e-12);
            assert!((b.l_ce - ce).abs() < 1e-12);
            assert!((b.l_total - (expect + w.beta * kl + w.gamma * ce)).abs() < 1e-12);
            assert!(b.identity_error() <= 1e-12);
        }
    }

    #[test]
    fn zero_weights_and_perfect_reconstruction() {
        let mut rng = Rng::new(1);
        let (_, truth) = random_instance(&mut rng);
        let chans = truth.channel_clouds();
        let recon = ReconstructionOutput::new(chans.clone(), chans).unwrap();
        let sch = Schedules::standard(10, 5);
        let b = total_loss(&recon, &truth, &[0.0, 0.0], &[1.0, 1.0], 1.0 - 1e-9, 1.0, 0, &sch).unwrap();
        assert_eq!(b.l_reconstruction, 0.0);
        assert_eq!(b.l_kl, 0.0);
        assert!(b.l_total < 1e-6);

        let c = LossBreakdown::compose([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], [[0.5; 3]; 2], 3.0, 2.0, LossWeights {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
        });
        assert_eq!(c.l_total, c.l_reconstruction);
    }

    #[test]
    fn graph_composition_matches_values_bitwise() {
        let mut g = Graph::<f64>::new();
        let mut rng = Rng::new(5);
        let mut leaf = |g: &mut Graph<f64>| g.param(Tensor::scalar(rng.uniform()));
        let mut grid = |g: &mut Graph<f64>| [[leaf(g), leaf(g), leaf(g)], [leaf(g), leaf(g), leaf(g)]];
        let coarse = grid(&mut g);
        let dense = grid(&mut g);
        let kl = g.param(Tensor::scalar(0.37));
        let ce = g.param(Tensor::scalar(0.81));
        let w = LossWeights {
            alpha: 0.5075,
            beta: 0.00325,
            gamma: 2.0,
        };
        let terms = GraphTerms {
            coarse: Some(coarse),
            dense: Some(dense),
            kl: Some(kl),
            ce: Some(ce),
        };
        let (recon, total) = compose_graph(&mut g, &terms, w);
        let val = |g: &Graph<f64>, a: [[Var; 3]; 2]| a.map(|r| r.map(|v| g.scalar(v)));
        let b = LossBreakdown::compose(val(&g, coarse), val(&g, dense), 0.37, 0.81, w);
        assert_eq!(g.scalar(recon.unwrap()).to_bits(), b.l_reconstruction.to_bits());
        assert_eq!(g.scalar(total.unwrap()).to_bits(), b.l_total.to_bits());
    }

    #[test]
    fn kl_graph_matches_closed_form_and_gradient() {
        let mut g = Graph::<f64>::new();
        let mu = g.param(Tensor::row(vec![0.5, -1.0]));
        let sigma = g.param(Tensor::row(vec![0.7, 1.3]));
        let kl = kl_graph(&mut g, mu, sigma);
        let expect = kl_divergence(&[0.5, -1.0], &[0.7, 1.3]).unwrap();
        assert!((g.scalar(kl) - expect).abs() < 1e-15);
        let grads = g.backward(kl).unwrap();
        assert_eq!(grads.get(mu).data(), &[0.5, -1.0]);
        let gs = grads.get(sigma);
        assert!((gs.data()[0] - (0.7 - 1.0 / 0.7)).abs() < 1e-15);
    }

    #[test]
    fn csv_row_round_trips() {
        let b = LossBreakdown::compose([[0.1; 3]; 2], [[0.2; 3]; 2], 1.0 / 3.0, 0.25, LossWeights {
            alpha: 0.01,
            beta: 0.001,
            gamma: 1.0,
        });
        let row = b.csv_row(12);
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f.len(), LOG_HEADER.split(',').count());
        assert_eq!(f[0], "12");
        assert_eq!(f[5].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(f[7].parse::<f64>().unwrap(), b.l_total);
    }
}
