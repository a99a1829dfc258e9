//! Labeled two-phase, three-substructure point clouds and the geometry used
//! on them: Chamfer distance, convex-hull chamber volume, ejection fraction
//! and the text file format.

mod chamfer;
mod hull;
mod io;

pub use chamfer::{chamfer, chamfer_brute, chamfer_table, ChamferTable};
pub use hull::{chamber_volume, ejection_fraction};
pub use io::{read_cloud, write_cloud, CLOUD_MAGIC};

use std::fmt;

use crate::error::{Error, Result};
use crate::numcore::Scalar;

/// Cardiac phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    /// End-diastole.
    Ed,
    /// End-systole.
    Es,
}

impl Phase {
    pub const ALL: [Phase; 2] = [Phase::Ed, Phase::Es];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn token(self) -> &'static str {
        match self {
            Phase::Ed => "ED",
            Phase::Es => "ES",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s {
            "ED" => Some(Phase::Ed),
            "ES" => Some(Phase::Es),
            _ => None,
        }
    }
}

/// Anatomical surface class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Substructure {
    LvEndo,
    LvEpi,
    RvEndo,
}

impl Substructure {
    pub const ALL: [Substructure; 3] = [
        Substructure::LvEndo,
        Substructure::LvEpi,
        Substructure::RvEndo,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn token(self) -> &'static str {
        match self {
            Substructure::LvEndo => "LVENDO",
            Substructure::LvEpi => "LVEPI",
            Substructure::RvEndo => "RVENDO",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s {
            "LVENDO" => Some(Substructure::LvEndo),
            "LVEPI" => Some(Substructure::LvEpi),
            "RVENDO" => Some(Substructure::RvEndo),
            _ => None,
        }
    }

    /// Scalar label fed to the encoder: 0, ½, 1.
    pub fn code(self) -> f64 {
        self.index() as f64 * 0.5
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl fmt::Display for Substructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Index of a `(phase, substructure)` channel in phase-major order.
pub fn channel_index(phase: Phase, sub: Substructure) -> usize {
    phase.index() * 3 + sub.index()
}

/// All six channels in phase-major order.
pub fn channels() -> impl Iterator<Item = (Phase, Substructure)> {
    Phase::ALL
        .into_iter()
        .flat_map(|ph| Substructure::ALL.into_iter().map(move |s| (ph, s)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledPoint<T> {
    pub xyz: [T; 3],
    pub class: Substructure,
    pub phase: Phase,
}

/// One subject's ED and ES clouds: `2·p` labeled points, ED rows first.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloudPair<T> {
    p: usize,
    points: Vec<LabeledPoint<T>>,
}

impl<T: Scalar> PointCloudPair<T> {
    /// Validates the pair and reorders it stably so all ED rows precede the
    /// ES rows.
    pub fn new(p: usize, points: Vec<LabeledPoint<T>>) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("p must be positive"));
        }
        if points.len() != 2 * p {
            return Err(Error::PointCountMismatch(format!(
                "expected {} points (p={p}), got {}",
                2 * p,
                points.len()
            )));
        }
        let mut counts = [[0usize; 3]; 2];
        for pt in &points {
            if pt.xyz.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite coordinate"));
            }
            counts[pt.phase.index()][pt.class.index()] += 1;
        }
        for ph in Phase::ALL {
            let n: usize = counts[ph.index()].iter().sum();
            if n != p {
                return Err(Error::PointCountMismatch(format!(
                    "phase {ph} has {n} points, expected {p}"
                )));
            }
        }
        for (ph, s) in channels() {
            if counts[ph.index()][s.index()] == 0 {
                return Err(Error::EmptyChannel(format!("{ph} {s}")));
            }
        }
        let (mut ordered, es): (Vec<_>, Vec<_>) =
            points.into_iter().partition(|pt| pt.phase == Phase::Ed);
        ordered.extend(es);
        Ok(Self { p, points: ordered })
    }

    /// Assembles a pair from six channel clouds in phase-major order.
    pub fn from_channels(chans: &[SubCloud<T>]) -> Result<Self> {
        if chans.len() != 6 {
            return Err(Error::EmptyChannel(format!("expected 6 channels, got {}", chans.len())));
        }
        let mut points = Vec::new();
        for ((phase, class), c) in channels().zip(chans) {
            points.extend(c.points().map(|xyz| LabeledPoint { xyz, class, phase }));
        }
        let ed: usize = chans[..3].iter().map(SubCloud::len).sum();
        let es: usize = chans[3..].iter().map(SubCloud::len).sum();
        if ed != es {
            return Err(Error::PointCountMismatch(format!("ED has {ed} points, ES has {es}")));
        }
        Self::new(ed, points)
    }

    /// Points per phase.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn points(&self) -> &[LabeledPoint<T>] {
        &self.points
    }

    pub fn channel(&self, phase: Phase, sub: Substructure) -> SubCloud<T> {
        let data = self
            .points
            .iter()
            .filter(|pt| pt.phase == phase && pt.class == sub)
            .flat_map(|pt| pt.xyz)
            .collect();
        SubCloud { data }
    }

    /// The six channels in phase-major order.
    pub fn channel_clouds(&self) -> Vec<SubCloud<T>> {
        channels().map(|(ph, s)| self.channel(ph, s)).collect()
    }

    pub fn translated(&self, by: [T; 3]) -> Self {
        let points = self
            .points
            .iter()
            .map(|pt| LabeledPoint {
                xyz: [pt.xyz[0] + by[0], pt.xyz[1] + by[1], pt.xyz[2] + by[2]],
                ..*pt
            })
            .collect();
        Self { p: self.p, points }
    }
}

/// Points of one `(phase, substructure)` channel, stored as a flat `q × 3`
/// buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct SubCloud<T> {
    data: Vec<T>,
}

impl<T: Scalar> SubCloud<T> {
    pub fn new(points: Vec<[T; 3]>) -> Result<Self> {
        Self::from_flat(points.into_iter().flatten().collect())
    }

    pub fn from_flat(data: Vec<T>) -> Result<Self> {
        if data.len() % 3 != 0 {
            return Err(Error::ShapeMismatch("flat cloud length not a multiple of 3".into()));
        }
        if data.is_empty() {
            return Err(Error::EmptyCloud);
        }
        Ok(Self { data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn flat(&self) -> &[T] {
        &self.data
    }

    pub fn point(&self, i: usize) -> [T; 3] {
        [self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2]]
    }

    pub fn points(&self) -> impl Iterator<Item = [T; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    pub fn translated(&self, by: [T; 3]) -> Self {
        let data = self
            .data
            .chunks_exact(3)
            .flat_map(|c| [c[0] + by[0], c[1] + by[1], c[2] + by[2]])
            .collect();
        Self { data }
    }
}

/// Coarse (`m` points) and dense (`n` points) predictions for the six
/// channels, phase-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionOutput<T> {
    coarse: Vec<SubCloud<T>>,
    dense: Vec<SubCloud<T>>,
}

impl<T: Scalar> ReconstructionOutput<T> {
    pub fn new(coarse: Vec<SubCloud<T>>, dense: Vec<SubCloud<T>>) -> Result<Self> {
        if coarse.len() != 6 || dense.len() != 6 {
            return Err(Error::EmptyChannel(format!(
                "missing channel: {} coarse and {} dense channels, expected 6 each",
                coarse.len(),
                dense.len()
            )));
        }
        let finite = |c: &SubCloud<T>| c.flat().iter().all(|v| v.is_finite());
        if !coarse.iter().chain(&dense).all(finite) {
            return Err(Error::invalid("non-finite reconstruction"));
        }
        Ok(Self { coarse, dense })
    }

    pub fn coarse(&self, phase: Phase, sub: Substructure) -> &SubCloud<T> {
        &self.coarse[channel_index(phase, sub)]
    }

    pub fn dense(&self, phase: Phase, sub: Substructure) -> &SubCloud<T> {
        &self.dense[channel_index(phase, sub)]
    }

    pub fn coarse_channels(&self) -> &[SubCloud<T>] {
        &self.coarse
    }

    pub fn dense_channels(&self) -> &[SubCloud<T>] {
        &self.dense
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(phase: Phase, class: Substructure, x: f64) -> LabeledPoint<f64> {
        LabeledPoint {
            xyz: [x, 0.0, 0.0],
            class,
            phase,
        }
    }

    fn minimal(p_extra: usize) -> Vec<LabeledPoint<f64>> {
        let mut v = Vec::new();
        for ph in [Phase::Es, Phase::Ed] {
            for s in Substructure::ALL {
                v.push(pt(ph, s, s.code()));
            }
            for k in 0..p_extra {
                v.push(pt(ph, Substructure::LvEpi, k as f64));
            }
        }
        v
    }

    #[test]
    fn pair_is_reordered_ed_first() {
        let pair = PointCloudPair::new(4, minimal(1)).unwrap();
        assert!(pair.points()[..4].iter().all(|p| p.phase == Phase::Ed));
        assert!(pair.points()[4..].iter().all(|p| p.phase == Phase::Es));
        assert_eq!(pair.channel(Phase::Es, Substructure::LvEpi).len(), 2);
    }

    #[test]
    fn pair_validation_errors() {
        assert!(matches!(
            PointCloudPair::new(5, minimal(1)),
            Err(Error::PointCountMismatch(_))
        ));
        let mut v = minimal(1);
        let idx = v
            .iter()
            .position(|p| p.phase == Phase::Es && p.class == Substructure::RvEndo)
            .unwrap();
        v[idx].class = Substructure::LvEndo;
        assert!(matches!(PointCloudPair::new(4, v), Err(Error::EmptyChannel(_))));
        let mut v = minimal(0);
        v[0].xyz[1] = f64::NAN;
        assert!(PointCloudPair::new(3, v).is_err());
    }

    #[test]
    fn channel_round_trip() {
        let pair = PointCloudPair::new(4, minimal(1)).unwrap();
        let again = PointCloudPair::from_channels(&pair.channel_clouds()).unwrap();
        assert_eq!(pair.channel_clouds(), again.channel_clouds());
    }

    #[test]
    fn reconstruction_requires_six_channels() {
        let c = SubCloud::new(vec![[0.0f64; 3]]).unwrap();
        assert!(ReconstructionOutput::new(vec![c.clone(); 5], vec![c.clone(); 6]).is_err());
        assert!(ReconstructionOutput::new(vec![c.clone(); 6], vec![c; 6]).is_ok());
        assert!(matches!(SubCloud::<f64>::new(vec![]), Err(Error::EmptyCloud)));
    }
}
