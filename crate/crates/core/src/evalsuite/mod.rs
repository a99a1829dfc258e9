//! Reconstruction tables, classification metrics, baselines and latent
//! analysis.

mod embedding;
mod logistic;
mod metrics;
mod tables;

pub use embedding::{eigenmap, silhouette, Embedding2D, DEFAULT_NEIGHBORS};
pub use logistic::{LogisticRegression, GRAD_TOLERANCE, MAX_ITERATIONS};
pub use metrics::{auroc, auroc_brute, classification_report, ClassificationReport, DEFAULT_THRESHOLD};
pub use tables::{write_eigenmap, write_table2, write_table3, write_table4, EigenmapRow, MetricsRow};

use crate::cloud::{chamfer_table, ChamferTable, PointCloudPair};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ReconstructionOutput};
use crate::synthdata::{Manifest, Split, SubjectRecord};
use crate::trainer::{train_task, Task, TrainConfig, TrainOutcome};

/// Anything that maps an input cloud to six dense channels.
pub trait Reconstructor {
    fn reconstruct(&self, pair: &PointCloudPair<f64>) -> Result<ReconstructionOutput<f64>>;
}

impl Reconstructor for Model<f64> {
    fn reconstruct(&self, pair: &PointCloudPair<f64>) -> Result<ReconstructionOutput<f64>> {
        self.infer(pair, true)?
            .recon
            .ok_or_else(|| Error::invalid("model produced no reconstruction"))
    }
}

/// Per-cell mean and sample SD of dense-output Chamfer distances (mm).
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionReport {
    pub mean: ChamferTable<f64>,
    pub sd: ChamferTable<f64>,
    pub per_subject: Vec<(usize, ChamferTable<f64>)>,
}

pub fn reconstruction_report(
    model: &impl Reconstructor,
    manifest: &Manifest,
    split: Split,
) -> Result<ReconstructionReport> {
    let records = manifest.split(split);
    if records.is_empty() {
        return Err(Error::invalid(format!("empty split: no {split} subjects")));
    }
    let mut per_subject = Vec::with_capacity(records.len());
    for rec in records {
        let pair = manifest.load_pair(rec)?;
        let out = model.reconstruct(&pair)?;
        per_subject.push((rec.id, chamfer_table(&out, &pair)?));
    }
    let n = per_subject.len() as f64;
    let mut mean = [[0.0; 3]; 2];
    let mut sd = [[0.0; 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            let m = per_subject.iter().map(|(_, t)| t[i][j]).sum::<f64>() / n;
            mean[i][j] = m;
            if per_subject.len() > 1 {
                let ss = per_subject.iter().map(|(_, t)| (t[i][j] - m).powi(2)).sum::<f64>();
                sd[i][j] = (ss / (n - 1.0)).sqrt();
            }
        }
    }
    Ok(ReconstructionReport { mean, sd, per_subject })
}

/// Head probabilities (ζ = μ, no dropout) on one split.
pub fn prediction_report(model: &Model<f64>, manifest: &Manifest, split: Split) -> Result<ClassificationReport> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for rec in manifest.split(split) {
        scores.push(model.infer(&manifest.load_pair(rec)?, false)?.prob);
        labels.push(rec.label);
    }
    classification_report(&scores, &labels, DEFAULT_THRESHOLD)
}

/// Fits logistic regression on `train` rows and reports on `test` rows.
pub fn logistic_eval(
    train_x: &[Vec<f64>],
    train_y: &[u8],
    test_x: &[Vec<f64>],
    test_y: &[u8],
) -> Result<ClassificationReport> {
    let lr = LogisticRegression::fit(train_x, train_y)?;
    let scores: Vec<f64> = test_x.iter().map(|x| lr.predict(x)).collect();
    classification_report(&scores, test_y, DEFAULT_THRESHOLD)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EfFeatures {
    Lv,
    LvRv,
}

impl EfFeatures {
    pub fn label(self) -> &'static str {
        match self {
            EfFeatures::Lv => "lv_ef_regression",
            EfFeatures::LvRv => "lv_rv_ef_regression",
        }
    }

    fn row(self, r: &SubjectRecord) -> Vec<f64> {
        match self {
            EfFeatures::Lv => vec![r.lv_ef],
            EfFeatures::LvRv => vec![r.lv_ef, r.rv_ef],
        }
    }
}

fn split_xy(manifest: &Manifest, split: Split, feature: impl Fn(&SubjectRecord) -> Result<Vec<f64>>) -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
    let recs = manifest.split(split);
    if recs.is_empty() {
        return Err(Error::invalid(format!("empty split: no {split} subjects")));
    }
    let mut x = Vec::with_capacity(recs.len());
    let mut y = Vec::with_capacity(recs.len());
    for r in recs {
        x.push(feature(r)?);
        y.push(r.label);
    }
    Ok((x, y))
}

/// Logistic regression on the manifest's oracle ejection fractions.
pub fn ef_regression_baseline(manifest: &Manifest, features: EfFeatures) -> Result<ClassificationReport> {
    let (tx, ty) = split_xy(manifest, Split::Train, |r| Ok(features.row(r)))?;
    let (sx, sy) = split_xy(manifest, Split::Test, |r| Ok(features.row(r)))?;
    logistic_eval(&tx, &ty, &sx, &sy)
}

/// Encoder and head trained by cross-entropy alone, ζ = μ.
pub fn pointnet_baseline(
    manifest: &Manifest,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(ClassificationReport, TrainOutcome)> {
    let outcome = train_task(manifest, model_cfg, train_cfg, Task::POINTNET, None, false)?;
    let report = prediction_report(&outcome.best, manifest, Split::Test)?;
    Ok((report, outcome))
}

/// μ for every subject of `split`, with its record.
pub fn encode_split<'a>(model: &Model<f64>, manifest: &'a Manifest, split: Split) -> Result<Vec<(&'a SubjectRecord, Vec<f64>)>> {
    manifest
        .split(split)
        .into_iter()
        .map(|r| Ok((r, model.encode(&manifest.load_pair(r)?)?.0)))
        .collect()
}

/// Logistic regression on train-split μ, reported on the test split.
pub fn latent_regression_eval(model: &Model<f64>, manifest: &Manifest) -> Result<ClassificationReport> {
    let (tx, ty) = split_xy(manifest, Split::Train, |r| Ok(model.encode(&manifest.load_pair(r)?)?.0))?;
    let (sx, sy) = split_xy(manifest, Split::Test, |r| Ok(model.encode(&manifest.load_pair(r)?)?.0))?;
    logistic_eval(&tx, &ty, &sx, &sy)
}

/// Eigenmap of a split's μ encodings with its silhouette by label.
pub fn embed_split(model: &Model<f64>, manifest: &Manifest, split: Split, k: usize) -> Result<(Vec<EigenmapRow>, Embedding2D, f64)> {
    let enc = encode_split(model, manifest, split)?;
    let latents: Vec<Vec<f64>> = enc.iter().map(|(_, mu)| mu.clone()).collect();
    let emb = eigenmap(&latents, k)?;
    let labels: Vec<u8> = enc.iter().map(|(r, _)| r.label).collect();
    let sil = silhouette(&emb.coords, &labels)?;
    let rows = enc
        .iter()
        .zip(&emb.coords)
        .map(|((r, _), c)| EigenmapRow {
            id: r.id,
            x: c[0],
            y: c[1],
            label: r.label,
            lv_ef: r.lv_ef,
        })
        .collect();
    Ok((rows, emb, sil))
}
