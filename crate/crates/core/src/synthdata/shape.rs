//! Convex "split ellipsoids": each octant is an eighth of an axis-aligned
//! ellipsoid with its own half-axes, glued along the coordinate planes.
//! Adjacent octants share their cross-sections, so the surface is C¹ and
//! convex.

use std::f64::consts::PI;

use crate::numcore::Rng;

/// Candidates drawn per requested point.
const OVERSAMPLE: usize = 8;

/// Thomsen's exponent for the ellipsoid surface-area approximation.
const THOMSEN_P: f64 = 1.6075;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitEllipsoid {
    pub center: [f64; 3],
    /// Half-axes towards +x, +y, +z.
    pub pos: [f64; 3],
    /// Half-axes towards −x, −y, −z.
    pub neg: [f64; 3],
}

impl SplitEllipsoid {
    pub fn symmetric(center: [f64; 3], semi: [f64; 3]) -> Self {
        Self {
            center,
            pos: semi,
            neg: semi,
        }
    }

    /// Exact enclosed volume, `(π/6) Π (pos + neg)`.
    pub fn volume(&self) -> f64 {
        PI / 6.0 * (0..3).map(|k| self.pos[k] + self.neg[k]).product::<f64>()
    }

    fn octant(&self, signs: [bool; 3]) -> [f64; 3] {
        [0, 1, 2].map(|k| if signs[k] { self.pos[k] } else { self.neg[k] })
    }

    fn octants(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        (0..8).map(move |o| self.octant([o & 1 != 0, o & 2 != 0, o & 4 != 0]))
    }

    /// Approximate surface area (Thomsen, per octant).
    pub fn area(&self) -> f64 {
        self.octants()
            .map(|[a, b, c]| {
                let p = THOMSEN_P;
                let m = ((a * b).powf(p) + (a * c).powf(p) + (b * c).powf(p)) / 3.0;
                PI / 2.0 * m.powf(1.0 / p)
            })
            .sum()
    }

    /// Generalized radius: < 1 inside, 1 on the surface, > 1 outside.
    pub fn radius(&self, x: [f64; 3]) -> f64 {
        let d = [0, 1, 2].map(|k| x[k] - self.center[k]);
        let axes = self.octant([d[0] >= 0.0, d[1] >= 0.0, d[2] >= 0.0]);
        (0..3).map(|k| (d[k] / axes[k]).powi(2)).sum::<f64>().sqrt()
    }

    /// Every half-axis lengthened by `t`.
    pub fn grown(&self, t: f64) -> Self {
        Self {
            center: self.center,
            pos: self.pos.map(|v| v + t),
            neg: self.neg.map(|v| v + t),
        }
    }

    fn point_on(&self, u: [f64; 3]) -> [f64; 3] {
        let axes = self.octant([u[0] >= 0.0, u[1] >= 0.0, u[2] >= 0.0]);
        [0, 1, 2].map(|k| self.center[k] + axes[k] * u[k])
    }

    /// Area density of the map from the unit sphere at direction `u`.
    fn area_factor(&self, u: [f64; 3]) -> f64 {
        let [a, b, c] = self.octant([u[0] >= 0.0, u[1] >= 0.0, u[2] >= 0.0]);
        a * b * c * ((u[0] / a).powi(2) + (u[1] / b).powi(2) + (u[2] / c).powi(2)).sqrt()
    }

    /// `k` points spread evenly over the surface: area-uniform candidates by
    /// rejection, thinned by farthest-point sampling.
    pub fn sample(&self, rng: &mut Rng, k: usize) -> Vec<[f64; 3]> {
        if k == 0 {
            return Vec::new();
        }
        let bound = self
            .octants()
            .map(|[a, b, c]| a * b * c / a.min(b).min(c))
            .fold(0.0, f64::max);
        let want = OVERSAMPLE * k;
        let mut cand = Vec::with_capacity(want);
        while cand.len() < want {
            let v = [rng.normal(), rng.normal(), rng.normal()];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n == 0.0 {
                continue;
            }
            let u = v.map(|x| x / n);
            if rng.uniform() * bound < self.area_factor(u) {
                cand.push(self.point_on(u));
            }
        }
        farthest_point_sample(&cand, k)
    }
}

/// Greedy farthest-point subset of size `k`, starting from index 0; ties go
/// to the lowest index.
pub(crate) fn farthest_point_sample(pts: &[[f64; 3]], k: usize) -> Vec<[f64; 3]> {
    let d2 = |a: [f64; 3], b: [f64; 3]| (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>();
    let mut best = vec![f64::INFINITY; pts.len()];
    let mut out = Vec::with_capacity(k);
    let mut cur = 0;
    for _ in 0..k.min(pts.len()) {
        out.push(pts[cur]);
        let mut next = 0;
        let mut far = -1.0;
        for (i, &p) in pts.iter().enumerate() {
            best[i] = best[i].min(d2(p, pts[cur]));
            if best[i] > far {
                far = best[i];
                next = i;
            }
        }
        cur = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_volume_and_area() {
        let s = SplitEllipsoid::symmetric([0.0; 3], [2.0, 2.0, 2.0]);
        assert!((s.volume() - 4.0 / 3.0 * PI * 8.0).abs() < 1e-12);
        assert!((s.area() - 4.0 * PI * 4.0).abs() < 1e-9);
        let e = SplitEllipsoid::symmetric([0.0; 3], [30.0, 25.0, 50.0]);
        assert!((e.volume() - 157_079.63).abs() < 0.01);
    }

    #[test]
    fn split_volume_is_sum_of_octants() {
        let s = SplitEllipsoid {
            center: [1.0, 2.0, 3.0],
            pos: [3.0, 2.0, 5.0],
            neg: [1.0, 4.0, 2.0],
        };
        let direct: f64 = s.octants().map(|[a, b, c]| PI / 6.0 * a * b * c).sum();
        assert!((s.volume() - direct).abs() < 1e-12);
    }

    #[test]
    fn samples_lie_on_surface() {
        let s = SplitEllipsoid {
            center: [0.0, 0.0, 1.0],
            pos: [3.0, 2.0, 5.0],
            neg: [1.5, 4.0, 2.0],
        };
        let pts = s.sample(&mut Rng::new(1), 300);
        assert_eq!(pts.len(), 300);
        for p in pts {
            assert!((s.radius(p) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_roughly_area_uniform() {
        // A long prolate spheroid: the band |z| < c/2 holds a fraction of the
        // area computable in closed form; sampling by angle alone would put
        // only half the points there.
        let (a, c) = (1.0f64, 6.0f64);
        let s = SplitEllipsoid::symmetric([0.0; 3], [a, a, c]);
        let pts = s.sample(&mut Rng::new(2), 2000);
        let band = pts.iter().filter(|p| p[2].abs() < c / 2.0).count() as f64 / 2000.0;
        // Band area / total area, by numeric integration of 2πr ds.
        let n = 200_000;
        let (mut inner, mut total) = (0.0, 0.0);
        for i in 0..n {
            let t = PI * (i as f64 + 0.5) / n as f64;
            let r = a * t.sin();
            let ds = ((a * t.cos()).powi(2) + (c * t.sin()).powi(2)).sqrt() * PI / n as f64;
            let da = 2.0 * PI * r * ds;
            total += da;
            if (c * t.cos()).abs() < c / 2.0 {
                inner += da;
            }
        }
        assert!((band - inner / total).abs() < 0.03, "{band} vs {}", inner / total);
    }

    #[test]
    fn fps_is_deterministic_and_spreads() {
        let pts: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        let s = farthest_point_sample(&pts, 3);
        assert_eq!(s, vec![[0.0, 0.0, 0.0], [9.0, 0.0, 0.0], [4.0, 0.0, 0.0]]);
    }
}
