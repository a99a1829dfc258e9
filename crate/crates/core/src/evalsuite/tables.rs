use std::path::Path;

use crate::cloud::{Phase, Substructure};
use crate::error::{Error, Result};

use super::{ClassificationReport, ReconstructionReport};

/// One method or variant with its test metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub name: String,
    pub report: ClassificationReport,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenmapRow {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub label: u8,
    pub lv_ef: f64,
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let csv_err = |e: csv::Error| Error::invalid(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_table2(path: impl AsRef<Path>, report: &ReconstructionReport) -> Result<()> {
    let mut rows = Vec::new();
    for ph in Phase::ALL {
        for s in Substructure::ALL {
            let (i, j) = (ph.index(), s.index());
            rows.push(vec![
                ph.to_string(),
                s.to_string(),
                report.mean[i][j].to_string(),
                report.sd[i][j].to_string(),
            ]);
        }
    }
    write_rows(path.as_ref(), &["phase", "substructure", "cd_mean_mm", "cd_sd_mm"], rows)
}

fn metrics(path: &Path, first: &str, rows: &[MetricsRow]) -> Result<()> {
    let rows = rows.iter().map(|r| {
        let m = &r.report;
        vec![
            r.name.clone(),
            m.auroc.to_string(),
            m.accuracy.to_string(),
            m.precision.to_string(),
            m.recall.to_string(),
            m.f1.to_string(),
        ]
    });
    write_rows(path, &[first, "auroc", "accuracy", "precision", "recall", "f1"], rows)
}

/// Method-versus-baseline metrics.
pub fn write_table3(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    metrics(path.as_ref(), "method", rows)
}

/// Ablation metrics, one row per variant.
pub fn write_table4(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    metrics(path.as_ref(), "variant", rows)
}

pub fn write_eigenmap(path: impl AsRef<Path>, rows: &[EigenmapRow]) -> Result<()> {
    let rows = rows.iter().map(|r| {
        vec![
            r.id.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.label.to_string(),
            r.lv_ef.to_string(),
        ]
    });
    write_rows(path.as_ref(), &["id", "x", "y", "label", "lv_ef"], rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalsuite::classification_report;

    #[test]
    fn tables_have_expected_shape() {
        let dir = tempfile::tempdir().unwrap();
        let rep = ReconstructionReport {
            mean: [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]],
            sd: [[0.5; 3]; 2],
            per_subject: Vec::new(),
        };
        let p = dir.path().join("t2.csv");
        write_table2(&p, &rep).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.lines().nth(6).unwrap().ends_with(",6,0.5"));

        let report = classification_report(&[0.9, 0.1], &[1, 0], 0.5).unwrap();
        let p = dir.path().join("t4.csv");
        write_table4(&p, &[MetricsRow { name: "full".into(), report }]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "variant,auroc,accuracy,precision,recall,f1\nfull,1,1,1,1,1\n");
    }
}
