use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Scalar;

use super::{LabeledPoint, Phase, PointCloudPair, Substructure};

pub const CLOUD_MAGIC: &str = "mopa-cloud v1";

/// Writes the text format: a `mopa-cloud v1 p=<p>` header, then one
/// `<phase> <class> <x> <y> <z>` row per point.
pub fn write_cloud<T: Scalar>(pair: &PointCloudPair<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(64 * pair.points().len() + 32);
    writeln!(out, "{CLOUD_MAGIC} p={}", pair.p()).expect("write to string");
    for pt in pair.points() {
        writeln!(
            out,
            "{} {} {:.6} {:.6} {:.6}",
            pt.phase.token(),
            pt.class.token(),
            pt.xyz[0].as_f64(),
            pt.xyz[1].as_f64(),
            pt.xyz[2].as_f64()
        )
        .expect("write to string");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_cloud<T: Scalar>(path: impl AsRef<Path>) -> Result<PointCloudPair<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "malformed header: empty file".into()))?;
    let p = header
        .strip_prefix(CLOUD_MAGIC)
        .and_then(|rest| rest.trim().strip_prefix("p="))
        .and_then(|v| v.parse::<usize>().ok())
        .ok_or_else(|| parse_err(1, format!("malformed header {header:?}")))?;

    let mut points = Vec::with_capacity(2 * p);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(parse_err(lineno, format!("expected 5 fields, got {}", f.len())));
        }
        let phase = Phase::from_token(f[0])
            .ok_or_else(|| parse_err(lineno, format!("unknown phase token {:?}", f[0])))?;
        let class = Substructure::from_token(f[1])
            .ok_or_else(|| parse_err(lineno, format!("unknown class token {:?}", f[1])))?;
        let mut xyz = [T::zero(); 3];
        for k in 0..3 {
            let v: f64 = f[2 + k]
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad coordinate {:?}", f[2 + k])))?;
            xyz[k] = T::lit(v);
        }
        points.push(LabeledPoint { xyz, class, phase });
    }
    if points.len() != 2 * p {
        return Err(Error::PointCountMismatch(format!(
            "{}: header says p={p} ({} rows) but file has {} rows",
            path.display(),
            2 * p,
            points.len()
        )));
    }
    PointCloudPair::new(p, points)
}
