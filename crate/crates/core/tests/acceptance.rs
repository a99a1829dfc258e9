//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.
//!
//! `MOPA_ACCEPT=1,4` restricts the run to the listed criteria.

use std::fs;
use std::path::Path;
use std::time::Instant;

use mopa_core::cloud::{chamfer, chamfer_brute, SubCloud};
use mopa_core::evalsuite::{
    auroc, auroc_brute, ef_regression_baseline, embed_split, latent_regression_eval, pointnet_baseline,
    prediction_report, reconstruction_report, write_eigenmap, write_table2, write_table3, write_table4, EfFeatures,
    MetricsRow, DEFAULT_NEIGHBORS,
};
use mopa_core::model::ModelConfig;
use mopa_core::numcore::nearest::{nearest_brute, nearest_grid};
use mopa_core::numcore::Rng;
use mopa_core::objective::LossBreakdown;
use mopa_core::synthdata::{generate_cohort, CohortSpec, Manifest, Split};
use mopa_core::trainer::{loss_gradcheck, train, TrainConfig, TrainOutcome, Variant};
use mopa_core::Model;

const SEEDS: [u64; 3] = [1, 2, 3];

struct Outcome {
    criterion: u32,
    pass: bool,
    detail: String,
}

fn selected(c: u32) -> bool {
    match std::env::var("MOPA_ACCEPT") {
        Ok(list) => list.split(',').any(|s| s.trim() == c.to_string()),
        Err(_) => true,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Small network used for the training criteria.
fn desk_model(p: usize, m: usize, g: usize) -> ModelConfig {
    ModelConfig {
        p,
        z: 16,
        m,
        g,
        enc_block1: vec![32, 64],
        enc_block2: vec![64, 128],
        enc_mlp: vec![128],
        coarse_hidden: vec![256, 256],
        fold_hidden: vec![64, 32],
        head_hidden: 128,
        dropout: 0.3,
        coord_scale: 20.0,
    }
}

fn cohort(dir: &Path, difficulty: f64, p: usize) -> Manifest {
    let spec = CohortSpec {
        n: 200,
        fraction_mi: 0.5,
        seed: 0,
        difficulty,
        noise: 0.5,
        p,
    };
    generate_cohort(&spec, dir).unwrap()
}

fn criterion_1() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let spec = CohortSpec {
        n: 4,
        p: 128,
        ..CohortSpec::default()
    };
    let m = generate_cohort(&spec, dir.path()).unwrap();
    let rec = &m.records[0];
    let pair = m.load_pair(rec).unwrap();
    let model = Model::init(desk_model(128, 16, 8), 7).unwrap();
    let w = TrainConfig::default().resolved_schedules().at(4000);
    let t = Instant::now();
    let checks = loss_gradcheck(&model, &pair, rec.label, w, 8, 11).unwrap();
    let worst = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    Outcome {
        criterion: 1,
        pass: checks.len() >= 20 && worst < 1e-3 && secs < 120.0,
        detail: format!("{} parameters, max relative error {worst:.2e}, {secs:.1} s", checks.len()),
    }
}

fn criterion_2() -> Outcome {
    let mut rng = Rng::new(2);
    let mut worst: f64 = 0.0;
    let mut argmin_equal = true;
    for _ in 0..1000 {
        let qa = 1 + rng.below(64);
        let qb = 1 + rng.below(64);
        let spread = 10.0f64.powf(rng.uniform_range(-1.0, 2.0));
        let mut cloud = |q: usize| -> Vec<f64> { (0..3 * q).map(|_| spread * rng.normal()).collect() };
        let (a, b) = (cloud(qa), cloud(qb));
        for (x, y) in [(&a, &b), (&b, &a)] {
            let (g, r) = (nearest_grid(x, y), nearest_brute(x, y));
            argmin_equal &= g.index == r.index && g.dist2 == r.dist2;
        }
        let (ca, cb) = (SubCloud::from_flat(a).unwrap(), SubCloud::from_flat(b).unwrap());
        worst = worst.max((chamfer(&ca, &cb) - chamfer_brute(&ca, &cb)).abs());
    }
    Outcome {
        criterion: 2,
        pass: argmin_equal && worst <= 1e-12,
        detail: format!("1000 pairs, argmin identical: {argmin_equal}, max value difference {worst:.1e}"),
    }
}

/// Recomposes both loss identities in an order different from the library.
fn identity_residual(b: &LossBreakdown<f64>) -> f64 {
    let coarse: f64 = b.l_coarse.iter().flatten().sum();
    let dense: f64 = b.l_dense.iter().flatten().sum();
    let recon = coarse + b.alpha * dense;
    let total = b.gamma * b.l_ce + b.beta * b.l_kl + b.l_reconstruction;
    (recon - b.l_reconstruction).abs().max((total - b.l_total).abs())
}

fn criterion_3(run: &TrainOutcome) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut in_range = true;
    for (_, b) in &run.log.breakdowns {
        worst = worst.max(identity_residual(b));
        in_range &= (0.01..=2.0).contains(&b.alpha) && (0.001..=0.01).contains(&b.beta) && (1.0..=5.0).contains(&b.gamma);
    }
    Outcome {
        criterion: 3,
        pass: worst <= 1e-12 && in_range && !run.log.breakdowns.is_empty(),
        detail: format!(
            "{} steps, max identity residual {worst:.1e}, weights within endpoint ranges: {in_range}",
            run.log.breakdowns.len()
        ),
    }
}

fn criterion_4(out: &Path) -> (Outcome, TrainOutcome) {
    let t = Instant::now();
    let data = out.join("c4_cohort");
    let m = cohort(&data, 0.0, 1024);
    let tc = TrainConfig {
        max_steps: 400,
        val_interval: 100,
        patience: 400,
        lr: 1e-3,
        seed: 1,
        ..TrainConfig::default()
    };
    let run = train(&m, &desk_model(1024, 64, 16), &tc, Some(&out.join("c4_run"))).unwrap();
    let rec = reconstruction_report(&run.best, &m, Split::Test).unwrap();
    write_table2(out.join("table2.csv"), &rec).unwrap();
    let worst = rec.mean.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    let mins = t.elapsed().as_secs_f64() / 60.0;
    let cells: Vec<String> = rec.mean.iter().flatten().map(|v| format!("{v:.2}")).collect();
    let outcome = Outcome {
        criterion: 4,
        pass: worst <= 3.0 && mins <= 30.0,
        detail: format!("test CD means [{}] mm, worst {worst:.2}, {mins:.1} min", cells.join(", ")),
    };
    (outcome, run)
}

struct SeedResult {
    auroc: Vec<(Variant, f64)>,
    pointnet: f64,
    silhouette_full: f64,
    silhouette_recon_only: f64,
}

fn predictive_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch: 8,
        max_steps: 4000,
        val_interval: 250,
        patience: 2000,
        log_interval: 10,
        lr: 1e-3,
        seed,
        ..TrainConfig::default()
    }
}

fn run_seed(m: &Manifest, out: &Path, seed: u64, baselines: &[MetricsRow]) -> SeedResult {
    let model = desk_model(128, 16, 8);
    let mut auroc = Vec::new();
    let mut rows = Vec::new();
    let (mut sil_full, mut sil_recon) = (0.0, 0.0);
    for v in Variant::ALL {
        let tc = TrainConfig {
            variant: v,
            ..predictive_config(seed)
        };
        let dir = out.join(format!("seed{seed}")).join(v.token());
        let run = train(m, &model, &tc, Some(&dir)).unwrap();
        let report = if v == Variant::ReconOnly {
            latent_regression_eval(&run.best, m).unwrap()
        } else {
            prediction_report(&run.best, m, Split::Test).unwrap()
        };
        if matches!(v, Variant::Full | Variant::ReconOnly) {
            let (emb_rows, _, sil) = embed_split(&run.best, m, Split::Test, DEFAULT_NEIGHBORS).unwrap();
            write_eigenmap(dir.join("eigenmap.csv"), &emb_rows).unwrap();
            if v == Variant::Full {
                sil_full = sil;
            } else {
                sil_recon = sil;
            }
        }
        eprintln!("  seed {seed} {v}: AUROC {:.4}", report.auroc);
        auroc.push((v, report.auroc));
        rows.push(MetricsRow {
            name: v.to_string(),
            report,
        });
    }
    write_table4(out.join(format!("seed{seed}")).join("table4.csv"), &rows).unwrap();
    let (pn, _) = pointnet_baseline(m, &model, &predictive_config(seed)).unwrap();
    eprintln!("  seed {seed} pointnet: AUROC {:.4}", pn.auroc);
    let pointnet = pn.auroc;
    let mut table3 = baselines.to_vec();
    table3.push(MetricsRow {
        name: "pointnet".into(),
        report: pn,
    });
    table3.push(rows[0].clone());
    write_table3(out.join(format!("seed{seed}")).join("table3.csv"), &table3).unwrap();
    SeedResult {
        auroc,
        pointnet,
        silhouette_full: sil_full,
        silhouette_recon_only: sil_recon,
    }
}

fn criteria_5_to_7(out: &Path, which: &[u32]) -> Vec<Outcome> {
    let m = cohort(&out.join("c5_cohort"), 0.6, 128);
    let ef = ef_regression_baseline(&m, EfFeatures::Lv).unwrap();
    let ef_both = ef_regression_baseline(&m, EfFeatures::LvRv).unwrap();
    let baselines = [
        MetricsRow {
            name: EfFeatures::Lv.label().into(),
            report: ef.clone(),
        },
        MetricsRow {
            name: EfFeatures::LvRv.label().into(),
            report: ef_both,
        },
    ];
    let results: Vec<SeedResult> = SEEDS.iter().map(|&s| run_seed(&m, out, s, &baselines)).collect();
    let med = |v: Variant| median(results.iter().map(|r| r.auroc.iter().find(|a| a.0 == v).unwrap().1).collect());
    let full = med(Variant::Full);
    let pointnet = median(results.iter().map(|r| r.pointnet).collect());

    let mut outcomes = Vec::new();
    if which.contains(&5) {
        outcomes.push(Outcome {
            criterion: 5,
            pass: full >= ef.auroc + 0.05 && full > 0.75 && full > pointnet && pointnet > ef.auroc,
            detail: format!(
                "median AUROC full {full:.4}, PointNet {pointnet:.4}, LV-EF regression {:.4}",
                ef.auroc
            ),
        });
    }
    if which.contains(&6) {
        let mut medians: Vec<(Variant, f64)> = Variant::ALL.iter().map(|&v| (v, med(v))).collect();
        let full_best = medians.iter().all(|&(_, a)| full >= a);
        medians.sort_by(|a, b| a.1.total_cmp(&b.1));
        let recon_rank = medians.iter().position(|a| a.0 == Variant::ReconOnly).unwrap();
        let list: Vec<String> = Variant::ALL.iter().map(|&v| format!("{v} {:.4}", med(v))).collect();
        outcomes.push(Outcome {
            criterion: 6,
            pass: full_best && recon_rank <= 1,
            detail: format!("median AUROC {}; recon_only rank from bottom {}", list.join(", "), recon_rank + 1),
        });
    }
    if which.contains(&7) {
        let sf = median(results.iter().map(|r| r.silhouette_full).collect());
        let sr = median(results.iter().map(|r| r.silhouette_recon_only).collect());
        outcomes.push(Outcome {
            criterion: 7,
            pass: sf > 0.0 && sf > sr,
            detail: format!("median test silhouette full {sf:.4}, recon_only {sr:.4}"),
        });
    }
    outcomes
}

/// Everything one short end-to-end run emits, as file bytes.
fn emitted_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let m = cohort(&root.join("cohort"), 0.6, 64);
    let tc = TrainConfig {
        max_steps: 40,
        val_interval: 20,
        patience: 40,
        log_interval: 5,
        lr: 2e-3,
        seed: 9,
        ..TrainConfig::default()
    };
    let run_dir = root.join("run");
    let run = train(&m, &desk_model(64, 8, 8), &tc, Some(&run_dir)).unwrap();
    let rec = reconstruction_report(&run.best, &m, Split::Test).unwrap();
    write_table2(root.join("table2.csv"), &rec).unwrap();
    let report = prediction_report(&run.best, &m, Split::Test).unwrap();
    let ef = ef_regression_baseline(&m, EfFeatures::LvRv).unwrap();
    write_table3(
        root.join("table3.csv"),
        &[
            MetricsRow {
                name: "full".into(),
                report,
            },
            MetricsRow {
                name: "ef".into(),
                report: ef,
            },
        ],
    )
    .unwrap();
    let (rows, _, _) = embed_split(&run.best, &m, Split::Test, DEFAULT_NEIGHBORS).unwrap();
    write_eigenmap(root.join("eigenmap.csv"), &rows).unwrap();
    let mut files = Vec::new();
    for name in [
        "cohort/manifest.csv",
        "run/train_log.csv",
        "run/validation.csv",
        "run/best.ckpt",
        "table2.csv",
        "table3.csv",
        "eigenmap.csv",
    ] {
        files.push((name.to_string(), fs::read(root.join(name)).unwrap()));
    }
    files
}

fn criterion_8() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (fa, fb) = (emitted_bytes(a.path()), emitted_bytes(b.path()));
    let differing: Vec<&str> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    Outcome {
        criterion: 8,
        pass: differing.is_empty(),
        detail: format!("{} artifacts compared, differing: {differing:?}", fa.len()),
    }
}

fn criterion_9() -> Outcome {
    let mut rng = Rng::new(9);
    let mut equal = 0;
    for trial in 0..500 {
        let n = 2 + rng.below(200);
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.uniform() < 0.5)).collect();
        labels[0] = 0;
        labels[n - 1] = 1;
        let levels = if trial % 3 == 0 { 1 + rng.below(10) } else { 0 };
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if levels > 0 {
                    rng.below(levels) as f64
                } else {
                    rng.uniform()
                }
            })
            .collect();
        if auroc(&scores, &labels).unwrap() == auroc_brute(&scores, &labels).unwrap() {
            equal += 1;
        }
    }
    Outcome {
        criterion: 9,
        pass: equal == 500,
        detail: format!("{equal}/500 score sets identical to brute-force enumeration"),
    }
}

#[test]
fn acceptance() {
    let out = std::env::var("MOPA_ACCEPT_OUT")
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|_| std::env::temp_dir().join("mopa_acceptance"));
    fs::create_dir_all(&out).unwrap();
    let mut outcomes = Vec::new();
    let mut report = |o: Outcome| {
        println!(
            "criterion {}: {} ({})",
            o.criterion,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        outcomes.push(o.pass);
    };
    if selected(1) {
        report(criterion_1());
    }
    if selected(2) {
        report(criterion_2());
    }
    if selected(3) || selected(4) {
        let (c4, run) = criterion_4(&out);
        if selected(3) {
            report(criterion_3(&run));
        }
        if selected(4) {
            report(c4);
        }
    }
    let predictive: Vec<u32> = [5, 6, 7].into_iter().filter(|&c| selected(c)).collect();
    if !predictive.is_empty() {
        for o in criteria_5_to_7(&out, &predictive) {
            report(o);
        }
    }
    if selected(8) {
        report(criterion_8());
    }
    if selected(9) {
        report(criterion_9());
    }
    assert!(outcomes.iter().all(|&p| p), "an acceptance criterion failed");
}
