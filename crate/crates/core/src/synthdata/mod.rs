//! Seeded synthetic cohort of two-phase, three-substructure anatomies.
//!
//! Each subject has an LV endocardium, an LV epicardium offset outward by the
//! wall thickness, and a flattened RV endocardium beside the LV. ES shapes
//! come from ED by contraction; MI subjects get lower EF (controlled by the
//! difficulty knob), weaker wall thickening and a hypokinetic +x/+y region.
//! Volumes are stored analytically so EF baselines have an exact oracle.

mod manifest;
mod shape;

use std::fs;
use std::path::Path;

pub use manifest::{Manifest, Split, SubjectRecord, MANIFEST_HEADER};
pub use shape::SplitEllipsoid;

use crate::cloud::{ejection_fraction, write_cloud, PointCloudPair, SubCloud};
use crate::config::{parse_value, KeyValues};
use crate::error::{Error, Result};
use crate::numcore::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct CohortSpec {
    /// Number of subjects N.
    pub n: usize,
    pub fraction_mi: f64,
    pub seed: u64,
    /// δ ∈ [0, 1]: shifts the MI EF distribution towards the controls.
    pub difficulty: f64,
    /// Isotropic point noise σ_pts (mm).
    pub noise: f64,
    /// Points per phase.
    pub p: usize,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n: 200,
            fraction_mi: 0.5,
            seed: 0,
            difficulty: 0.0,
            noise: 0.5,
            p: 1024,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid(format!("cohort needs at least 2 subjects, got {}", self.n)));
        }
        if !(self.fraction_mi > 0.0 && self.fraction_mi < 1.0) {
            return Err(Error::invalid(format!("fraction_mi must lie in (0, 1), got {}", self.fraction_mi)));
        }
        if !(0.0..=1.0).contains(&self.difficulty) {
            return Err(Error::invalid(format!("difficulty must lie in [0, 1], got {}", self.difficulty)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid(format!("noise must be non-negative, got {}", self.noise)));
        }
        if self.p < 3 {
            return Err(Error::invalid("p must allow one point per substructure"));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "n" => self.n = parse_value(key, value)?,
            "fraction_mi" => self.fraction_mi = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "difficulty" => self.difficulty = parse_value(key, value)?,
            "noise" => self.noise = parse_value(key, value)?,
            "p" => self.p = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.insert("n", self.n);
        kv.insert("fraction_mi", self.fraction_mi);
        kv.insert("seed", self.seed);
        kv.insert("difficulty", self.difficulty);
        kv.insert("noise", self.noise);
        kv.insert("p", self.p);
        kv
    }
}

/// Population parameters of the generator (mm, fractions).
mod population {
    /// LV endocardial ED semi-axes before size scaling.
    pub const LV_SEMI: [f64; 3] = [12.5, 12.5, 22.5];
    pub const RV_SEMI: [f64; 3] = [11.0, 20.0, 38.0];
    /// Log-normal spread of overall size and of individual axes.
    pub const SIZE_SD: f64 = 0.08;
    pub const AXIS_SD: f64 = 0.04;
    pub const WALL: (f64, f64) = (3.5, 0.3);
    pub const WALL_MIN: f64 = 1.5;
    pub const CONTROL_EF: (f64, f64) = (0.60, 0.05);
    pub const MI_EF_BASE: f64 = 0.40;
    pub const MI_EF_SHIFT: f64 = 0.15;
    pub const MI_EF_SD: f64 = 0.07;
    pub const CONTROL_RV_EF: (f64, f64) = (0.55, 0.05);
    pub const MI_RV_EF: (f64, f64) = (0.50, 0.06);
    /// ES/ED wall-thickness ratio.
    pub const CONTROL_THICKENING: (f64, f64) = (1.45, 0.12);
    pub const MI_THICKENING: (f64, f64) = (1.20, 0.12);
    pub const THICKENING_MIN: f64 = 0.8;
    /// Regional hypokinesis h of the +x/+y half-axes: their ES factor is
    /// `f + h (1 − f)`, so h = 0 contracts normally and h = 1 not at all.
    pub const CONTROL_HYPOKINESIS: (f64, f64) = (0.0, 0.08);
    pub const MI_HYPOKINESIS: (f64, f64) = (0.35, 0.12);
    pub const HYPOKINESIS_RANGE: (f64, f64) = (-0.5, 0.95);
    /// Long-axis shortening is the square root of the short-axis factor.
    pub const LONG_AXIS_EXPONENT: f64 = 0.5;
    pub const EF_RANGE: (f64, f64) = (0.0, 0.9);
    pub const MAX_ATTEMPTS: usize = 100;
}

/// Analytic anatomy of one subject.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anatomy {
    /// `[ED, ES]` surfaces.
    pub lv_endo: [SplitEllipsoid; 2],
    pub lv_epi: [SplitEllipsoid; 2],
    pub rv_endo: [SplitEllipsoid; 2],
}

impl Anatomy {
    fn surfaces(&self, phase: usize) -> [SplitEllipsoid; 3] {
        [self.lv_endo[phase], self.lv_epi[phase], self.rv_endo[phase]]
    }
}

fn lognormal(rng: &mut Rng, sd: f64) -> f64 {
    (sd * rng.normal()).exp()
}

/// Global short-axis factor `f` giving `target_ef` when the +x/+y half-axes
/// contract by `f + h (1 − f)`; `None` if unattainable.
fn solve_contraction(target_ef: f64, h: f64) -> Option<f64> {
    let ratio = |f: f64| {
        let fh = f + h * (1.0 - f);
        ((f + fh) / 2.0).powi(2) * f.powf(population::LONG_AXIS_EXPONENT)
    };
    let target = 1.0 - target_ef;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    // The regional factor must stay positive.
    if h < 0.0 {
        lo = -h / (1.0 - h) + 1e-9;
    }
    if !(ratio(lo) < target && target < ratio(hi)) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

fn clamp_draw(rng: &mut Rng, (mean, sd): (f64, f64), lo: f64, hi: f64) -> f64 {
    rng.normal_with(mean, sd).clamp(lo, hi)
}

/// Draws one anatomy; redraws (up to 100 times) when EF falls outside
/// `(0, 0.9)` or the contraction cannot reach it.
pub fn draw_anatomy(rng: &mut Rng, label: u8, difficulty: f64) -> Result<Anatomy> {
    use population::*;
    let mi = label == 1;
    for _ in 0..MAX_ATTEMPTS {
        let size = lognormal(rng, SIZE_SD);
        let lv_semi = [0, 1, 2].map(|k| LV_SEMI[k] * size * lognormal(rng, AXIS_SD));
        let rv_semi = [0, 1, 2].map(|k| RV_SEMI[k] * size * lognormal(rng, AXIS_SD));
        let wall = rng.normal_with(WALL.0, WALL.1).max(WALL_MIN);
        let ef = if mi {
            rng.normal_with(MI_EF_BASE + MI_EF_SHIFT * difficulty, MI_EF_SD)
        } else {
            rng.normal_with(CONTROL_EF.0, CONTROL_EF.1)
        };
        let rv_ef = rng.normal_with(
            if mi { MI_RV_EF.0 } else { CONTROL_RV_EF.0 },
            if mi { MI_RV_EF.1 } else { CONTROL_RV_EF.1 },
        );
        let thickening = clamp_draw(rng, if mi { MI_THICKENING } else { CONTROL_THICKENING }, THICKENING_MIN, f64::MAX);
        let h = clamp_draw(
            rng,
            if mi { MI_HYPOKINESIS } else { CONTROL_HYPOKINESIS },
            HYPOKINESIS_RANGE.0,
            HYPOKINESIS_RANGE.1,
        );
        let in_range = |e: f64| e > EF_RANGE.0 && e < EF_RANGE.1;
        if !in_range(ef) || !in_range(rv_ef) {
            continue;
        }
        let Some(f) = solve_contraction(ef, h) else {
            continue;
        };
        let fh = f + h * (1.0 - f);
        let fl = f.powf(LONG_AXIS_EXPONENT);

        let endo_ed = SplitEllipsoid::symmetric([0.0; 3], lv_semi);
        let endo_es = SplitEllipsoid {
            center: [0.0; 3],
            pos: [lv_semi[0] * fh, lv_semi[1] * fh, lv_semi[2] * fl],
            neg: [lv_semi[0] * f, lv_semi[1] * f, lv_semi[2] * fl],
        };
        let rv_center = [-(lv_semi[0] + wall + 0.4 * rv_semi[0]), 0.0, 3.0 * size];
        let fr = (1.0 - rv_ef).powf(1.0 / (2.0 + LONG_AXIS_EXPONENT));
        let rv_ed = SplitEllipsoid::symmetric(rv_center, rv_semi);
        let rv_es = SplitEllipsoid::symmetric(
            rv_center,
            [rv_semi[0] * fr, rv_semi[1] * fr, rv_semi[2] * fr.powf(LONG_AXIS_EXPONENT)],
        );
        return Ok(Anatomy {
            lv_endo: [endo_ed, endo_es],
            lv_epi: [endo_ed.grown(wall), endo_es.grown(wall * thickening)],
            rv_endo: [rv_ed, rv_es],
        });
    }
    Err(Error::Degenerate(format!(
        "no valid anatomy after {} attempts",
        population::MAX_ATTEMPTS
    )))
}

/// Splits `total` proportionally to `weights` by largest remainder, giving
/// every entry at least one.
fn allocate(total: usize, weights: &[f64]) -> Vec<usize> {
    let k = weights.len();
    assert!(total >= k);
    let sum: f64 = weights.iter().sum();
    let spare = total - k;
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * spare as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = spare - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in &order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts.iter().map(|c| c + 1).collect()
}

/// Samples the anatomy's six surfaces with `p` points per phase split by
/// surface area, then adds N(0, noise²) to every coordinate.
pub fn sample_anatomy(anatomy: &Anatomy, rng: &mut Rng, noise: f64, p: usize) -> Result<PointCloudPair<f64>> {
    let mut chans = Vec::with_capacity(6);
    for phase in 0..2 {
        let surfaces = anatomy.surfaces(phase);
        let counts = allocate(p, &surfaces.map(|s| s.area()));
        for (s, &k) in surfaces.iter().zip(&counts) {
            let pts = s
                .sample(rng, k)
                .into_iter()
                .map(|x| x.map(|v| v + noise * rng.normal()))
                .collect();
            chans.push(SubCloud::new(pts)?);
        }
    }
    PointCloudPair::from_channels(&chans)
}

/// One subject with label `label`. The returned record carries the analytic
/// volumes; its id, path and split are placeholders for the caller.
pub fn generate_subject(
    rng: &mut Rng,
    label: u8,
    difficulty: f64,
    noise: f64,
    p: usize,
) -> Result<(PointCloudPair<f64>, SubjectRecord)> {
    let anatomy = draw_anatomy(rng, label, difficulty)?;
    let pair = sample_anatomy(&anatomy, rng, noise, p)?;
    let (lv_edv, lv_esv) = (anatomy.lv_endo[0].volume(), anatomy.lv_endo[1].volume());
    let (rv_edv, rv_esv) = (anatomy.rv_endo[0].volume(), anatomy.rv_endo[1].volume());
    let record = SubjectRecord {
        id: 0,
        path: Default::default(),
        label,
        split: Split::Train,
        lv_edv,
        lv_esv,
        rv_edv,
        rv_esv,
        lv_ef: ejection_fraction(lv_edv, lv_esv)?,
        rv_ef: ejection_fraction(rv_edv, rv_esv)?,
    };
    Ok((pair, record))
}

const LABEL_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;

/// Labels (exactly `round(fraction·N)` positives) and stratified 70/5/25
/// splits for `0..n`.
pub fn assign_labels_and_splits(spec: &CohortSpec) -> Vec<(u8, Split)> {
    let n = spec.n;
    let positives = ((spec.fraction_mi * n as f64).round() as usize).clamp(1, n - 1);
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < positives)).collect();
    Rng::derived(spec.seed, LABEL_STREAM).shuffle(&mut labels);

    // Interleave the two classes proportionally so any prefix is stratified.
    let mut rng = Rng::derived(spec.seed, SPLIT_STREAM);
    let mut keyed: Vec<(f64, u8, usize)> = Vec::with_capacity(n);
    for class in [0u8, 1] {
        let mut ids: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        rng.shuffle(&mut ids);
        let size = ids.len() as f64;
        for (rank, id) in ids.into_iter().enumerate() {
            keyed.push(((rank as f64 + 0.5) / size, class, id));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let n_train = (0.70 * n as f64).round() as usize;
    let n_val = (0.05 * n as f64).round() as usize;
    let mut out = vec![(0u8, Split::Train); n];
    for (pos, &(_, _, id)) in keyed.iter().enumerate() {
        let split = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        out[id] = (labels[id], split);
    }
    out
}

/// Writes `clouds/subject_XXXX.cloud` for every subject and `manifest.csv`
/// under `out_dir`.
pub fn generate_cohort(spec: &CohortSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let clouds = out_dir.join("clouds");
    fs::create_dir_all(&clouds).map_err(|e| Error::io(&clouds, e))?;
    let assignment = assign_labels_and_splits(spec);
    let mut records = Vec::with_capacity(spec.n);
    for (id, &(label, split)) in assignment.iter().enumerate() {
        let mut rng = Rng::new(spec.seed ^ id as u64);
        let (pair, mut rec) = generate_subject(&mut rng, label, spec.difficulty, spec.noise, spec.p)?;
        let rel = Path::new("clouds").join(format!("subject_{id:04}.cloud"));
        write_cloud(&pair, out_dir.join(&rel))?;
        rec.id = id;
        rec.path = rel;
        rec.split = split;
        records.push(rec);
    }
    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        records,
    };
    manifest.write(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{chamber_volume, read_cloud, Phase, Substructure};

    #[test]
    fn contraction_hits_target_ef() {
        for &(ef, h) in &[(0.6, 0.0), (0.4, 0.35), (0.5, -0.2), (0.3, 0.9)] {
            let f = solve_contraction(ef, h).unwrap();
            let fh = f + h * (1.0 - f);
            let ratio = ((f + fh) / 2.0).powi(2) * f.sqrt();
            assert!((1.0 - ratio - ef).abs() < 1e-12);
        }
        // EF 1 would need zero end-systolic volume.
        assert!(solve_contraction(1.0, 0.0).is_none());
    }

    #[test]
    fn allocation_is_proportional_and_complete() {
        assert_eq!(allocate(10, &[1.0, 1.0, 2.0]), vec![3, 3, 4]);
        assert_eq!(allocate(3, &[1.0, 100.0, 1.0]), vec![1, 1, 1]);
        let c = allocate(1024, &[2800.0, 4100.0, 6600.0]);
        assert_eq!(c.iter().sum::<usize>(), 1024);
    }

    #[test]
    fn subject_generation_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = Vec::new();
        for k in 0..2 {
            let (pair, _) = generate_subject(&mut Rng::new(42), 0, 0.0, 0.0, 256).unwrap();
            let path = dir.path().join(format!("{k}.cloud"));
            write_cloud(&pair, &path).unwrap();
            bytes.push(fs::read(&path).unwrap());
        }
        assert_eq!(bytes[0], bytes[1]);
    }

    #[test]
    fn endo_inside_epi_and_volumes_consistent() {
        let mut rng = Rng::new(5);
        for label in [0u8, 1] {
            for _ in 0..10 {
                let a = draw_anatomy(&mut rng, label, 0.3).unwrap();
                for ph in 0..2 {
                    let pts = a.lv_endo[ph].sample(&mut rng, 200);
                    assert!(pts.iter().all(|&x| a.lv_epi[ph].radius(x) < 1.0));
                }
                assert!(a.lv_endo[1].volume() < a.lv_endo[0].volume());
                assert!(a.rv_endo[1].volume() < a.rv_endo[0].volume());
            }
        }
    }

    #[test]
    fn hull_volumes_match_analytic_volumes() {
        // The LV endocardium gets about a fifth of each phase's points; at
        // p = 1024 that is ~200 points, where even an ideal spherical lattice
        // loses ~3% of volume to the hull, so the 3% band is checked from
        // p = 2048 and a 4.5% band at 1024.
        let mut rng = Rng::new(8);
        for (p, tol) in [(1024, 0.045), (2048, 0.03)] {
            for label in [0u8, 1] {
                let (pair, rec) = generate_subject(&mut rng, label, 0.0, 0.0, p).unwrap();
                let vol = |ph, s| chamber_volume(&pair.channel(ph, s)).unwrap();
                let checks = [
                    (vol(Phase::Ed, Substructure::LvEndo), rec.lv_edv),
                    (vol(Phase::Es, Substructure::LvEndo), rec.lv_esv),
                    (vol(Phase::Ed, Substructure::RvEndo), rec.rv_edv),
                    (vol(Phase::Es, Substructure::RvEndo), rec.rv_esv),
                ];
                for (hull, exact) in checks {
                    assert!(((hull - exact) / exact).abs() < tol, "p={p}: hull {hull} vs {exact}");
                }
                let ef = ejection_fraction(checks[0].0, checks[1].0).unwrap();
                assert!((ef - rec.lv_ef).abs() < 0.02);
                assert_eq!(rec.lv_ef, (rec.lv_edv - rec.lv_esv) / rec.lv_edv);
            }
        }
    }

    #[test]
    fn ef_distributions() {
        let mut rng = Rng::new(11);
        let mean_ef = |rng: &mut Rng, label: u8| {
            (0..200)
                .map(|_| {
                    let a = draw_anatomy(rng, label, 0.0).unwrap();
                    let (ed, es) = (a.lv_endo[0].volume(), a.lv_endo[1].volume());
                    (ed - es) / ed
                })
                .sum::<f64>()
                / 200.0
        };
        let control = mean_ef(&mut rng, 0);
        let mi = mean_ef(&mut rng, 1);
        assert!((0.57..=0.63).contains(&control), "{control}");
        assert!(control - mi >= 0.15, "{control} {mi}");
    }

    #[test]
    fn ef_threshold_recovers_labels_at_zero_difficulty() {
        let mut rng = Rng::new(12);
        let mut correct = 0;
        for i in 0..400 {
            let label = (i % 2) as u8;
            let a = draw_anatomy(&mut rng, label, 0.0).unwrap();
            let (ed, es) = (a.lv_endo[0].volume(), a.lv_endo[1].volume());
            let predicted = u8::from((ed - es) / ed < 0.5);
            correct += usize::from(predicted == label);
        }
        assert!(correct as f64 / 400.0 >= 0.9);
    }

    #[test]
    fn cohort_splits_labels_and_determinism() {
        let spec = CohortSpec {
            n: 40,
            p: 64,
            seed: 7,
            ..CohortSpec::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_cohort(&spec, a.path()).unwrap();
        generate_cohort(&spec, b.path()).unwrap();
        assert_eq!(
            fs::read(a.path().join("manifest.csv")).unwrap(),
            fs::read(b.path().join("manifest.csv")).unwrap()
        );
        let sizes: Vec<usize> = Split::ALL.iter().map(|&s| ma.split(s).len()).collect();
        assert_eq!(sizes, vec![28, 2, 10]);
        assert_eq!(ma.records.iter().filter(|r| r.label == 1).count(), 20);
        let val_labels: Vec<u8> = ma.split(Split::Val).iter().map(|r| r.label).collect();
        assert!(val_labels.contains(&0) && val_labels.contains(&1));
        let test_mi = ma.split(Split::Test).iter().filter(|r| r.label == 1).count();
        assert_eq!(test_mi, 5);

        let back = Manifest::read(a.path().join("manifest.csv")).unwrap();
        assert_eq!(back.records, ma.records);
        for rec in &back.records {
            let pair = read_cloud::<f64>(back.cloud_path(rec)).unwrap();
            assert_eq!(pair.p(), 64);
        }
    }

    #[test]
    fn spec_validation() {
        let bad = [
            CohortSpec { n: 1, ..Default::default() },
            CohortSpec { fraction_mi: 1.0, ..Default::default() },
            CohortSpec { difficulty: 1.5, ..Default::default() },
            CohortSpec { noise: -1.0, ..Default::default() },
        ];
        for s in bad {
            assert!(s.validate().is_err());
        }
    }
}
