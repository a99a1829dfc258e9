//! Mini-batch training with validation-based early stopping and
//! checkpointing.

mod config;
mod gradcheck;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub use config::{apply_variant, Task, TrainConfig, Variant};
pub use gradcheck::{gradcheck_config, loss_gradcheck, max_rel_error, op_gradcheck, rel_error, GradCheck, FD_STEP, GRAD_FLOOR};

use crate::cloud::{channels, PointCloudPair};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::evalsuite::auroc;
use crate::model::{load_checkpoint_for, reparameterize_graph, save_checkpoint, Checkpoint, Model, ModelConfig};
use crate::numcore::{AdamState, Graph, ParamMap, Rng, Tensor, Var};
use crate::objective::{compose_graph, kl_graph, GraphTerms, LossBreakdown, LossWeights, Schedules, LOG_HEADER};
use crate::synthdata::{Manifest, Split};

/// Streams `0..2^32` of the run seed drive per-step sampling; epoch
/// shuffles use the streams above.
const EPOCH_STREAM_BASE: u64 = 1 << 32;

/// A validation improvement must beat the reference by this fraction.
pub const MIN_RELATIVE_IMPROVEMENT: f64 = 1e-4;

/// One `train_log.csv` row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub l_reconstruction: f64,
    pub l_kl: f64,
    pub l_ce: f64,
    pub l_total: f64,
}

impl LogRow {
    fn from_breakdown(step: usize, b: &LossBreakdown<f64>) -> Self {
        Self {
            step,
            alpha: b.alpha,
            beta: b.beta,
            gamma: b.gamma,
            l_reconstruction: b.l_reconstruction,
            l_kl: b.l_kl,
            l_ce: b.l_ce,
            l_total: b.l_total,
        }
    }

    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step, self.alpha, self.beta, self.gamma, self.l_reconstruction, self.l_kl, self.l_ce, self.l_total
        )
    }

    fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return None;
        }
        let v = |i: usize| f[i].parse::<f64>().ok();
        Some(Self {
            step: f[0].parse().ok()?,
            alpha: v(1)?,
            beta: v(2)?,
            gamma: v(3)?,
            l_reconstruction: v(4)?,
            l_kl: v(5)?,
            l_ce: v(6)?,
            l_total: v(7)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationRecord {
    pub step: usize,
    pub l_total: f64,
    pub auroc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Rows written to train_log.csv.
    pub rows: Vec<LogRow>,
    /// Full breakdown of every step run by this process.
    pub breakdowns: Vec<(usize, LossBreakdown<f64>)>,
    pub validation: Vec<ValidationRecord>,
    pub best_step: usize,
    /// Number of optimizer steps completed.
    pub steps: usize,
}

pub struct TrainOutcome {
    pub best: Model<f64>,
    pub last: Model<f64>,
    pub task: Task,
    pub log: TrainLog,
}

/// A subject held in memory for training.
struct Sample {
    pair: PointCloudPair<f64>,
    truth: Vec<Tensor<f64>>,
    label: f64,
}

fn load_split(manifest: &Manifest, split: Split) -> Result<Vec<Sample>> {
    manifest
        .split(split)
        .into_iter()
        .map(|rec| {
            let pair = manifest.load_pair(rec)?;
            let truth = channels()
                .map(|(ph, s)| {
                    let c = pair.channel(ph, s);
                    Tensor::matrix(c.len(), 3, c.flat().to_vec())
                })
                .collect();
            Ok(Sample {
                pair,
                truth,
                label: rec.label as f64,
            })
        })
        .collect()
}

/// Variant-specific loss weights: disabled terms get weight 0.
fn effective(w: LossWeights, task: Task) -> LossWeights {
    LossWeights {
        alpha: w.alpha,
        beta: if task.kl { w.beta } else { 0.0 },
        gamma: if task.head { w.gamma } else { 0.0 },
    }
}

/// Per-sample component nodes.
struct SampleTerms {
    coarse: Option<[[Var; 3]; 2]>,
    dense: Option<[[Var; 3]; 2]>,
    kl: Var,
    ce: Option<Var>,
}

/// Forward pass of one subject. `rng` supplies ε and the dropout mask when
/// the task uses them.
fn forward(
    g: &mut Graph<f64>,
    model: &Model<f64>,
    b: &crate::model::Bound,
    s: &Sample,
    task: Task,
    rng: Option<&mut Rng>,
) -> Result<SampleTerms> {
    let (mu, sigma) = model.encode_graph(g, b, &s.pair)?;
    let (zeta, mask) = match rng {
        Some(rng) => {
            let zeta = if task.sample {
                let eps: Vec<f64> = (0..model.config.z).map(|_| rng.normal()).collect();
                reparameterize_graph(g, mu, sigma, &eps)
            } else {
                mu
            };
            let mask = if task.head && task.dropout {
                model.dropout_mask(rng)
            } else {
                None
            };
            (zeta, mask)
        }
        None => (mu, None),
    };
    let (coarse, dense) = if task.decoder {
        let out = model.decode_graph(g, b, zeta);
        let mut c = [[mu; 3]; 2];
        let mut d = [[mu; 3]; 2];
        for (k, (ph, sub)) in channels().enumerate() {
            let t = g.constant(s.truth[k].clone());
            c[ph.index()][sub.index()] = g.chamfer(out.coarse[k], t);
            d[ph.index()][sub.index()] = g.chamfer(out.dense[k], t);
        }
        (Some(c), Some(d))
    } else {
        (None, None)
    };
    let kl = kl_graph(g, mu, sigma);
    let ce = if task.head {
        let prob = model.predict_graph(g, b, zeta, mask.as_deref());
        Some(g.bce(prob, s.label))
    } else {
        None
    };
    Ok(SampleTerms { coarse, dense, kl, ce })
}

/// Batch means of the per-sample components.
fn batch_mean(g: &mut Graph<f64>, terms: &[SampleTerms]) -> GraphTerms {
    let inv = 1.0 / terms.len() as f64;
    let mean = |g: &mut Graph<f64>, vars: Vec<Var>| {
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = g.add(acc, v);
        }
        g.scale(acc, inv)
    };
    let grid = |g: &mut Graph<f64>, pick: fn(&SampleTerms) -> Option<[[Var; 3]; 2]>| {
        let all: Option<Vec<[[Var; 3]; 2]>> = terms.iter().map(pick).collect();
        all.map(|all| {
            let mut out = all[0];
            for (i, row) in out.iter_mut().enumerate() {
                for (j, cell) in row.iter_mut().enumerate() {
                    *cell = mean(g, all.iter().map(|t| t[i][j]).collect());
                }
            }
            out
        })
    };
    let coarse = grid(g, |t| t.coarse);
    let dense = grid(g, |t| t.dense);
    let kl = mean(g, terms.iter().map(|t| t.kl).collect());
    let ce: Option<Vec<Var>> = terms.iter().map(|t| t.ce).collect();
    let ce = ce.map(|v| mean(g, v));
    GraphTerms {
        coarse,
        dense,
        kl: Some(kl),
        ce,
    }
}

fn values(g: &Graph<f64>, v: Option<[[Var; 3]; 2]>) -> [[f64; 3]; 2] {
    v.map(|a| a.map(|r| r.map(|x| g.scalar(x)))).unwrap_or([[0.0; 3]; 2])
}

/// Builds the graph for `samples`, returning the logged breakdown and the
/// node of the optimized total.
fn loss_graph(
    g: &mut Graph<f64>,
    model: &Model<f64>,
    b: &crate::model::Bound,
    samples: &[&Sample],
    task: Task,
    w: LossWeights,
    mut rng: Option<&mut Rng>,
) -> Result<(LossBreakdown<f64>, Option<Var>)> {
    let mut terms = Vec::with_capacity(samples.len());
    for s in samples {
        terms.push(forward(g, model, b, s, task, rng.as_deref_mut())?);
    }
    let mut mean = batch_mean(g, &terms);
    let kl_value = g.scalar(mean.kl.expect("kl is always computed"));
    if !task.kl {
        mean.kl = None;
    }
    let (_, total) = compose_graph(g, &mean, w);
    let ce_value = mean.ce.map(|v| g.scalar(v)).unwrap_or(0.0);
    let breakdown = LossBreakdown::compose(values(g, mean.coarse), values(g, mean.dense), kl_value, ce_value, w);
    Ok((breakdown, total))
}

/// Deterministic validation: ζ = μ, no dropout, weights at the schedules'
/// end so values are comparable across steps.
fn validate(model: &Model<f64>, samples: &[Sample], task: Task, end: LossWeights) -> Result<(f64, Option<f64>)> {
    let w = effective(end, task);
    let mut total = 0.0;
    let mut scores = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        let mut g = Graph::new();
        let b = model.bind(&mut g, false);
        let (bd, _) = loss_graph(&mut g, model, &b, &[s], task, w, None)?;
        total += bd.l_total;
        if task.head {
            let inf = model.infer(&s.pair, false)?;
            scores.push(inf.prob);
            labels.push(s.label as u8);
        }
    }
    let l_total = total / samples.len() as f64;
    if !l_total.is_finite() {
        return Err(Error::invalid("non-finite validation loss"));
    }
    let auc = if task.head { auroc(&scores, &labels).ok() } else { None };
    Ok((l_total, auc))
}

/// Indices of the training samples used at `step`: consecutive runs of an
/// endless sequence of seeded epoch permutations.
fn batch_indices(seed: u64, n: usize, batch: usize, step: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch);
    let mut cached: Option<(usize, Vec<usize>)> = None;
    for k in 0..batch {
        let pos = step * batch + k;
        let (epoch, at) = (pos / n, pos % n);
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            let perm = Rng::derived(seed, EPOCH_STREAM_BASE + epoch as u64).permutation(n);
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().expect("just set").1[at]);
    }
    out
}

struct Progress {
    step: usize,
    best_val: f64,
    best_step: usize,
    anchor_val: f64,
    anchor_step: usize,
}

fn progress_meta(p: &Progress, adam_t: u64) -> KeyValues {
    let mut kv = KeyValues::default();
    kv.insert("step", p.step);
    kv.insert("best_val", p.best_val);
    kv.insert("best_step", p.best_step);
    kv.insert("anchor_val", p.anchor_val);
    kv.insert("anchor_step", p.anchor_step);
    kv.insert("adam_t", adam_t);
    kv
}

fn meta_value<V: std::str::FromStr>(kv: &KeyValues, key: &str) -> Result<V> {
    kv.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Corrupt(format!("checkpoint lacks meta.{key}")))
}

struct RunFiles<'a> {
    dir: &'a Path,
}

impl RunFiles<'_> {
    fn write_logs(&self, log: &TrainLog) -> Result<()> {
        let mut text = String::from(LOG_HEADER);
        text.push('\n');
        for r in &log.rows {
            text.push_str(&r.csv());
            text.push('\n');
        }
        let path = self.dir.join("train_log.csv");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        let mut val = String::from("step,l_total,auroc\n");
        for v in &log.validation {
            let auc = v.auroc.map(|a| a.to_string()).unwrap_or_default();
            writeln!(val, "{},{},{}", v.step, v.l_total, auc).expect("write to string");
        }
        let path = self.dir.join("validation.csv");
        fs::write(&path, val).map_err(|e| Error::io(&path, e))
    }

    fn read_logs(&self, upto: usize) -> Result<TrainLog> {
        let mut log = TrainLog::default();
        let read = |name: &str| {
            let path = self.dir.join(name);
            fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
        };
        for line in read("train_log.csv")?.lines().skip(1) {
            let row = LogRow::parse(line).ok_or_else(|| Error::Corrupt(format!("bad train_log row {line:?}")))?;
            if row.step < upto {
                log.rows.push(row);
            }
        }
        for line in read("validation.csv")?.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Corrupt(format!("bad validation row {line:?}"));
            if f.len() != 3 {
                return Err(bad());
            }
            let rec = ValidationRecord {
                step: f[0].parse().map_err(|_| bad())?,
                l_total: f[1].parse().map_err(|_| bad())?,
                auroc: if f[2].is_empty() {
                    None
                } else {
                    Some(f[2].parse().map_err(|_| bad())?)
                },
            };
            if rec.step < upto {
                log.validation.push(rec);
            }
        }
        Ok(log)
    }
}

/// Trains the configured variant. With `run_dir`, writes train_log.csv,
/// validation.csv, best.ckpt and last.ckpt there.
pub fn train(
    manifest: &Manifest,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let (cfg, task) = apply_variant(train_cfg.variant, model_cfg);
    train_task(manifest, &cfg, train_cfg, task, run_dir, false)
}

/// Continues the run in `run_dir` from its last.ckpt.
pub fn resume(manifest: &Manifest, model_cfg: &ModelConfig, train_cfg: &TrainConfig, run_dir: &Path) -> Result<TrainOutcome> {
    let (cfg, task) = apply_variant(train_cfg.variant, model_cfg);
    train_task(manifest, &cfg, train_cfg, task, Some(run_dir), true)
}

/// The training loop for an explicit task.
pub fn train_task(
    manifest: &Manifest,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    task: Task,
    run_dir: Option<&Path>,
    resume: bool,
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    let train_set = load_split(manifest, Split::Train)?;
    let val_set = load_split(manifest, Split::Val)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid(format!(
            "empty split: {} training and {} validation subjects",
            train_set.len(),
            val_set.len()
        )));
    }
    let files = run_dir.map(|dir| RunFiles { dir });
    if let Some(f) = &files {
        fs::create_dir_all(f.dir).map_err(|e| Error::io(f.dir, e))?;
    }
    let schedules: Schedules = train_cfg.resolved_schedules();
    let end = schedules.end();

    let mut model = Model::init(model_cfg.clone(), train_cfg.seed)?;
    let mut adam = AdamState::new(train_cfg.adam(), &model.weights.params);
    let mut best = model.clone();
    let mut log = TrainLog::default();
    let mut prog = Progress {
        step: 0,
        best_val: f64::INFINITY,
        best_step: 0,
        anchor_val: f64::INFINITY,
        anchor_step: 0,
    };

    if resume {
        let f = files.as_ref().ok_or_else(|| Error::invalid("resume needs a run directory"))?;
        let last: Checkpoint<f64> = load_checkpoint_for(f.dir.join("last.ckpt"), model_cfg)?;
        let best_ck: Checkpoint<f64> = load_checkpoint_for(f.dir.join("best.ckpt"), model_cfg)?;
        prog = Progress {
            step: meta_value(&last.meta, "step")?,
            best_val: meta_value(&last.meta, "best_val")?,
            best_step: meta_value(&last.meta, "best_step")?,
            anchor_val: meta_value(&last.meta, "anchor_val")?,
            anchor_step: meta_value(&last.meta, "anchor_step")?,
        };
        adam.t = meta_value(&last.meta, "adam_t")?;
        for (name, t) in &last.extra {
            if let Some(n) = name.strip_prefix("opt.m/") {
                adam.first.insert(n.to_string(), t.clone());
            } else if let Some(n) = name.strip_prefix("opt.v/") {
                adam.second.insert(n.to_string(), t.clone());
            }
        }
        model = Model::new(model_cfg.clone(), last.weights)?;
        best = Model::new(model_cfg.clone(), best_ck.weights)?;
        let prev = f.read_logs(prog.step)?;
        log.rows = prev.rows;
        log.validation = prev.validation;
        log.best_step = prog.best_step;
    }

    let save = |model: &Model<f64>, best: &Model<f64>, adam: &AdamState<f64>, prog: &Progress, log: &TrainLog| -> Result<()> {
        let Some(f) = &files else { return Ok(()) };
        let mut last = Checkpoint::new(model.config.clone(), model.weights.clone());
        last.meta = progress_meta(prog, adam.t);
        for (name, t) in &adam.first {
            last.extra.insert(format!("opt.m/{name}"), t.clone());
        }
        for (name, t) in &adam.second {
            last.extra.insert(format!("opt.v/{name}"), t.clone());
        }
        save_checkpoint(&last, f.dir.join("last.ckpt"))?;
        let mut b = Checkpoint::new(best.config.clone(), best.weights.clone());
        b.meta.insert("step", prog.best_step);
        b.meta.insert("val_l_total", prog.best_val);
        save_checkpoint(&b, f.dir.join("best.ckpt"))?;
        f.write_logs(log)
    };

    while prog.step < train_cfg.max_steps {
        let step = prog.step;
        let w = effective(schedules.at(step), task);
        let idx = batch_indices(train_cfg.seed, train_set.len(), train_cfg.batch, step);
        let batch: Vec<&Sample> = idx.iter().map(|&i| &train_set[i]).collect();
        let mut rng = Rng::derived(train_cfg.seed, step as u64);

        let mut g = Graph::new();
        let b = model.bind(&mut g, true);
        let (breakdown, total) = loss_graph(&mut g, &model, &b, &batch, task, w, Some(&mut rng))?;
        let total = total.ok_or_else(|| Error::invalid("task disables every loss term"))?;
        if g.non_finite().is_some() || !breakdown.l_total.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        debug_assert_eq!(g.scalar(total).to_bits(), breakdown.l_total.to_bits());
        let mut grads = g.backward(total).map_err(|_| Error::NonFiniteLoss { step })?;
        let grad_map: ParamMap<f64> = b.iter().map(|(name, v)| (name.to_string(), grads.take(v))).collect();
        drop(g);
        adam.step(&mut model.weights.params, &grad_map)?;

        if step % train_cfg.log_interval == 0 {
            log.rows.push(LogRow::from_breakdown(step, &breakdown));
        }
        log.breakdowns.push((step, breakdown));
        prog.step += 1;

        let last_step = prog.step == train_cfg.max_steps;
        if prog.step % train_cfg.val_interval == 0 || last_step {
            let (val, auc) = validate(&model, &val_set, task, end)?;
            log.validation.push(ValidationRecord {
                step,
                l_total: val,
                auroc: auc,
            });
            if val < prog.best_val {
                prog.best_val = val;
                prog.best_step = step;
                best = model.clone();
            }
            if improves(val, prog.anchor_val) {
                prog.anchor_val = val;
                prog.anchor_step = step;
            }
            log.best_step = prog.best_step;
            let stop = step - prog.anchor_step >= train_cfg.patience;
            save(&model, &best, &adam, &prog, &log)?;
            if stop {
                break;
            }
        }
    }
    log.steps = prog.step;
    log.best_step = prog.best_step;
    Ok(TrainOutcome {
        best,
        last: model,
        task,
        log,
    })
}

/// Whether `val` beats `anchor` by the minimum relative improvement. The
/// first finite validation loss always does.
fn improves(val: f64, anchor: f64) -> bool {
    if anchor.is_infinite() {
        return val.is_finite();
    }
    val < anchor - MIN_RELATIVE_IMPROVEMENT * anchor.abs()
}
