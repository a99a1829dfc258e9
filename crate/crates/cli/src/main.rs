use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mopa_core::config::{KeyValues, RunConfig};
use mopa_core::evalsuite::{
    self, ef_regression_baseline, embed_split, latent_regression_eval, pointnet_baseline, prediction_report,
    reconstruction_report, write_eigenmap, write_table2, write_table3, write_table4, EfFeatures, MetricsRow,
};
use mopa_core::model::load_checkpoint_for;
use mopa_core::numcore::Rng;
use mopa_core::synthdata::{generate_cohort, generate_subject, Manifest, Split};
use mopa_core::trainer::{
    self, apply_variant, gradcheck_config, loss_gradcheck, max_rel_error, op_gradcheck, Variant,
};
use mopa_core::{Error, Model, Result};

#[derive(Parser)]
#[command(name = "mopa", version, about = "Multi-objective point-cloud autoencoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for both cohort generation and training.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Manifest to read (data.manifest).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort and its manifest.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Number of subjects.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train one variant.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Option<Variant>,
        /// Continue from <out>/last.ckpt.
        #[arg(long)]
        resume: bool,
    },
    /// Reconstruction and prediction tables for a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Variant the checkpoint was trained as.
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Train the full model and all four ablations.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// EF regression and PointNet baselines.
    Baseline {
        #[command(flatten)]
        common: Common,
    },
    /// Laplacian eigenmap of a split's latent means.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Neighbours per point.
        #[arg(long, default_value_t = evalsuite::DEFAULT_NEIGHBORS)]
        k: usize,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

/// Defaults, then the config file, then `--seed` and command flags, then
/// `--set` overrides.
fn resolve(common: &Common, extra: &[(&str, String)]) -> Result<RunConfig> {
    let mut kv = match &common.config {
        Some(path) => KeyValues::load(path)?,
        None => KeyValues::default(),
    };
    if let Some(seed) = common.seed {
        kv.insert("train.seed", seed);
        kv.insert("cohort.seed", seed);
    }
    if let Some(m) = &common.manifest {
        kv.insert("data.manifest", m.display());
    }
    for (k, v) in extra {
        kv.insert(*k, v);
    }
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("--set expects key=value, got {s:?}")))?;
        kv.insert(k.trim(), v.trim());
    }
    // Point count is shared by model and cohort unless one is set alone.
    match (kv.get("model.p").map(str::to_string), kv.get("cohort.p").map(str::to_string)) {
        (Some(p), None) => kv.insert("cohort.p", p),
        (None, Some(p)) => kv.insert("model.p", p),
        _ => {}
    }
    RunConfig::from_kv(&kv)
}

fn prepare_out(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let path = out.join("resolved.cfg");
    fs::write(&path, cfg.to_kv().render()).map_err(|e| Error::Io { path, source: e })
}

fn manifest(cfg: &RunConfig) -> Result<Manifest> {
    let path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| Error::invalid("no manifest: pass --manifest or set data.manifest"))?;
    Manifest::read(path)
}

fn checkpoint_model(cfg: &RunConfig, flag: &Option<PathBuf>) -> Result<Model> {
    let path = flag
        .clone()
        .or_else(|| cfg.checkpoint.clone())
        .ok_or_else(|| Error::invalid("no checkpoint: pass --checkpoint or set data.checkpoint"))?;
    let (model_cfg, _) = apply_variant(cfg.train.variant, &cfg.model);
    let ck = load_checkpoint_for(&path, &model_cfg)?;
    Model::new(ck.config, ck.weights)
}

/// Test-split prediction for a trained variant: the head, or logistic
/// regression on μ when the head was not trained.
fn variant_report(model: &Model, variant: Variant, m: &Manifest) -> Result<evalsuite::ClassificationReport> {
    if variant == Variant::ReconOnly {
        latent_regression_eval(model, m)
    } else {
        prediction_report(model, m, Split::Test)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, n } => {
            let extra: Vec<(&str, String)> = n.map(|n| ("cohort.n", n.to_string())).into_iter().collect();
            let cfg = resolve(&common, &extra)?;
            prepare_out(&cfg, &common.out)?;
            let m = generate_cohort(&cfg.cohort, &common.out)?;
            println!("wrote {} subjects to {}", m.records.len(), common.out.join("manifest.csv").display());
        }
        Command::Train {
            common,
            variant,
            resume,
        } => {
            let extra: Vec<(&str, String)> = variant.map(|v| ("train.variant", v.to_string())).into_iter().collect();
            let cfg = resolve(&common, &extra)?;
            let m = manifest(&cfg)?;
            prepare_out(&cfg, &common.out)?;
            let out = if resume {
                trainer::resume(&m, &cfg.model, &cfg.train, &common.out)?
            } else {
                trainer::train(&m, &cfg.model, &cfg.train, Some(&common.out))?
            };
            println!(
                "trained {} for {} steps; best validation step {}; run directory {}",
                cfg.train.variant,
                out.log.steps,
                out.log.best_step,
                common.out.display()
            );
        }
        Command::Eval {
            common,
            checkpoint,
            variant,
        } => {
            let extra: Vec<(&str, String)> = variant.map(|v| ("train.variant", v.to_string())).into_iter().collect();
            let cfg = resolve(&common, &extra)?;
            let m = manifest(&cfg)?;
            let model = checkpoint_model(&cfg, &checkpoint)?;
            prepare_out(&cfg, &common.out)?;
            let (_, task) = apply_variant(cfg.train.variant, &cfg.model);
            if task.decoder {
                let rec = reconstruction_report(&model, &m, Split::Test)?;
                write_table2(common.out.join("table2.csv"), &rec)?;
            }
            let report = variant_report(&model, cfg.train.variant, &m)?;
            println!("test AUROC {:.4}", report.auroc);
            write_table3(
                common.out.join("table3.csv"),
                &[MetricsRow {
                    name: cfg.train.variant.to_string(),
                    report,
                }],
            )?;
        }
        Command::Ablate { common } => {
            let cfg = resolve(&common, &[])?;
            let m = manifest(&cfg)?;
            prepare_out(&cfg, &common.out)?;
            let mut rows = Vec::new();
            for v in Variant::ALL {
                let dir = common.out.join(v.token());
                let tc = trainer::TrainConfig {
                    variant: v,
                    ..cfg.train.clone()
                };
                let out = trainer::train(&m, &cfg.model, &tc, Some(&dir))?;
                let report = variant_report(&out.best, v, &m)?;
                println!("{v}: test AUROC {:.4}", report.auroc);
                rows.push(MetricsRow {
                    name: v.to_string(),
                    report,
                });
            }
            write_table4(common.out.join("table4.csv"), &rows)?;
        }
        Command::Baseline { common } => {
            let cfg = resolve(&common, &[])?;
            let m = manifest(&cfg)?;
            prepare_out(&cfg, &common.out)?;
            let mut rows = Vec::new();
            for f in [EfFeatures::Lv, EfFeatures::LvRv] {
                rows.push(MetricsRow {
                    name: f.label().into(),
                    report: ef_regression_baseline(&m, f)?,
                });
            }
            let (report, _) = pointnet_baseline(&m, &cfg.model, &cfg.train)?;
            rows.push(MetricsRow {
                name: "pointnet".into(),
                report,
            });
            for r in &rows {
                println!("{}: test AUROC {:.4}", r.name, r.report.auroc);
            }
            write_table3(common.out.join("table3.csv"), &rows)?;
        }
        Command::Embed {
            common,
            checkpoint,
            split,
            k,
        } => {
            let cfg = resolve(&common, &[])?;
            let split = Split::from_token(&split).ok_or_else(|| Error::invalid(format!("unknown split {split:?}")))?;
            let m = manifest(&cfg)?;
            let model = checkpoint_model(&cfg, &checkpoint)?;
            prepare_out(&cfg, &common.out)?;
            let (rows, emb, sil) = embed_split(&model, &m, split, k)?;
            write_eigenmap(common.out.join("eigenmap.csv"), &rows)?;
            println!("silhouette {sil:.4}; {} graph component(s)", emb.components);
        }
        Command::Gradcheck { common } => {
            let cfg = resolve(&common, &[])?;
            prepare_out(&cfg, &common.out)?;
            let seed = cfg.train.seed;
            let ops = op_gradcheck(seed)?;
            let (pair, _) = generate_subject(&mut Rng::new(seed), 1, 0.0, 0.5, 16)?;
            let model = Model::init(gradcheck_config(16), seed)?;
            let loss = loss_gradcheck(&model, &pair, 1, cfg.train.resolved_schedules().end(), 8, seed)?;
            let (op_err, loss_err) = (max_rel_error(&ops), max_rel_error(&loss));
            let pass = op_err < 1e-3 && loss_err < 1e-3;
            println!("operations: {} checks, max relative error {op_err:.3e}", ops.len());
            println!("loss: {} parameters, max relative error {loss_err:.3e}", loss.len());
            if !pass {
                return Err(Error::invalid("FAIL: gradient mismatch above 1e-3"));
            }
            println!("PASS");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
