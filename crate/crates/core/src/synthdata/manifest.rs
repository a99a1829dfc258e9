use std::fmt;
use std::path::{Path, PathBuf};

use crate::cloud::{read_cloud, PointCloudPair};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 10] = [
    "id", "path", "label", "split", "lv_edv", "lv_esv", "rv_edv", "rv_esv", "lv_ef", "rv_ef",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn token(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        Split::ALL.into_iter().find(|x| x.token() == s)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// One subject: where its cloud lives, its outcome label and the
/// generator's analytic chamber volumes.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectRecord {
    pub id: usize,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    /// 0 = control, 1 = MI.
    pub label: u8,
    pub split: Split,
    pub lv_edv: f64,
    pub lv_esv: f64,
    pub rv_edv: f64,
    pub rv_esv: f64,
    pub lv_ef: f64,
    pub rv_ef: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    /// Directory that relative cloud paths are resolved against.
    pub root: PathBuf,
    pub records: Vec<SubjectRecord>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> Vec<&SubjectRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn cloud_path(&self, rec: &SubjectRecord) -> PathBuf {
        self.root.join(&rec.path)
    }

    pub fn load_pair(&self, rec: &SubjectRecord) -> Result<PointCloudPair<f64>> {
        read_cloud(self.cloud_path(rec))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |e: csv::Error| Error::invalid(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
        for r in &self.records {
            w.write_record([
                r.id.to_string(),
                r.path.display().to_string(),
                r.label.to_string(),
                r.split.to_string(),
                r.lv_edv.to_string(),
                r.lv_esv.to_string(),
                r.rv_edv.to_string(),
                r.rv_esv.to_string(),
                r.lv_ef.to_string(),
                r.rv_ef.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(1, format!("{other:?}")),
        })?;
        let header = r.headers().map_err(|e| parse_err(1, e.to_string()))?;
        if header.iter().ne(MANIFEST_HEADER) {
            return Err(parse_err(1, format!("expected header {}", MANIFEST_HEADER.join(","))));
        }
        let mut records = Vec::new();
        for (i, row) in r.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| parse_err(line, e.to_string()))?;
            let field = |k: usize| row.get(k).unwrap_or("");
            let num = |k: usize| -> Result<f64> {
                field(k)
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad {} value {:?}", MANIFEST_HEADER[k], field(k))))
            };
            let label: u8 = field(2)
                .parse()
                .ok()
                .filter(|&l| l <= 1)
                .ok_or_else(|| parse_err(line, format!("label must be 0 or 1, got {:?}", field(2))))?;
            records.push(SubjectRecord {
                id: field(0)
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad id {:?}", field(0))))?,
                path: PathBuf::from(field(1)),
                label,
                split: Split::from_token(field(3))
                    .ok_or_else(|| parse_err(line, format!("unknown split {:?}", field(3))))?,
                lv_edv: num(4)?,
                lv_esv: num(5)?,
                rv_edv: num(6)?,
                rv_esv: num(7)?,
                lv_ef: num(8)?,
                rv_ef: num(9)?,
            });
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_floats_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            root: dir.path().to_path_buf(),
            records: vec![SubjectRecord {
                id: 3,
                path: "clouds/subject_0003.cloud".into(),
                label: 1,
                split: Split::Val,
                lv_edv: 14_726.215_563_702_155,
                lv_esv: 1.0 / 3.0,
                rv_edv: 2.0,
                rv_esv: 1.0,
                lv_ef: 0.1 + 0.2,
                rv_ef: 0.5,
            }],
        };
        let path = dir.path().join("manifest.csv");
        m.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,path,label,split,lv_edv,lv_esv,rv_edv,rv_esv,lv_ef,rv_ef\n"));
        assert_eq!(Manifest::read(&path).unwrap(), m);
    }

    #[test]
    fn bad_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let head = MANIFEST_HEADER.join(",");
        std::fs::write(&path, format!("{head}\n0,a,2,train,1,1,1,1,0,0\n")).unwrap();
        assert!(Manifest::read(&path).is_err());
        std::fs::write(&path, format!("{head}\n0,a,1,holdout,1,1,1,1,0,0\n")).unwrap();
        assert!(Manifest::read(&path).is_err());
        std::fs::write(&path, "id,path\n").unwrap();
        assert!(Manifest::read(&path).is_err());
    }
}
