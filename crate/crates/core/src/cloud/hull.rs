use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::numcore::Scalar;

use super::SubCloud;

type P3 = [f64; 3];

fn sub(a: P3, b: P3) -> P3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: P3, b: P3) -> P3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: P3, b: P3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: P3) -> f64 {
    dot(a, a).sqrt()
}

struct Face {
    v: [usize; 3],
    normal: P3,
    offset: f64,
}

impl Face {
    fn new(v: [usize; 3], pts: &[P3], interior: P3) -> Self {
        let [a, b, c] = v.map(|i| pts[i]);
        let mut n = cross(sub(b, a), sub(c, a));
        let len = norm(n);
        for x in &mut n {
            *x /= len;
        }
        let mut face = Face {
            v,
            normal: n,
            offset: dot(n, a),
        };
        if face.distance(interior) > 0.0 {
            face.v.swap(1, 2);
            face.normal = face.normal.map(|x| -x);
            face.offset = -face.offset;
        }
        face
    }

    fn distance(&self, p: P3) -> f64 {
        dot(self.normal, p) - self.offset
    }
}

/// Volume enclosed by the convex hull of the points (mm³ for mm input).
///
/// Only meaningful for convex chambers; concave regions are filled in.
pub fn chamber_volume<T: Scalar>(cloud: &SubCloud<T>) -> Result<T> {
    let pts: Vec<P3> = cloud
        .points()
        .map(|p| [p[0].as_f64(), p[1].as_f64(), p[2].as_f64()])
        .collect();
    if pts.len() < 4 {
        return Err(Error::Degenerate(format!(
            "convex hull needs at least 4 points, got {}",
            pts.len()
        )));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &pts {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let scale = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    let eps = 1e-9 * scale.max(f64::MIN_POSITIVE);

    let argmax = |f: &dyn Fn(P3) -> f64| {
        let mut best = 0;
        for i in 1..pts.len() {
            if f(pts[i]) > f(pts[best]) {
                best = i;
            }
        }
        best
    };
    let i0 = argmax(&|p| -p[0]);
    let i1 = argmax(&|p| norm(sub(p, pts[i0])));
    if norm(sub(pts[i1], pts[i0])) <= eps {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let axis = sub(pts[i1], pts[i0]);
    let i2 = argmax(&|p| norm(cross(axis, sub(p, pts[i0]))) / norm(axis));
    if norm(cross(axis, sub(pts[i2], pts[i0]))) / norm(axis) <= eps {
        return Err(Error::Degenerate("points are collinear".into()));
    }
    let mut n = cross(axis, sub(pts[i2], pts[i0]));
    let len = norm(n);
    n = n.map(|x| x / len);
    let i3 = argmax(&|p| dot(n, sub(p, pts[i0])).abs());
    if dot(n, sub(pts[i3], pts[i0])).abs() <= eps {
        return Err(Error::Degenerate("points are coplanar".into()));
    }

    let seed = [i0, i1, i2, i3];
    let mut interior = [0.0; 3];
    for &i in &seed {
        for a in 0..3 {
            interior[a] += pts[i][a] / 4.0;
        }
    }
    let mut faces: Vec<Face> = [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]]
        .into_iter()
        .map(|v| Face::new(v, &pts, interior))
        .collect();

    for (idx, &p) in pts.iter().enumerate() {
        if seed.contains(&idx) {
            continue;
        }
        let visible: Vec<bool> = faces.iter().map(|f| f.distance(p) > eps).collect();
        if !visible.iter().any(|&v| v) {
            continue;
        }
        let mut edges = HashSet::new();
        for (f, _) in faces.iter().zip(&visible).filter(|(_, &v)| v) {
            for k in 0..3 {
                edges.insert((f.v[k], f.v[(k + 1) % 3]));
            }
        }
        let mut horizon = Vec::new();
        for (f, _) in faces.iter().zip(&visible).filter(|(_, &v)| v) {
            for k in 0..3 {
                let (a, b) = (f.v[k], f.v[(k + 1) % 3]);
                if !edges.contains(&(b, a)) {
                    horizon.push((a, b));
                }
            }
        }
        let mut keep = visible.iter().map(|v| !v);
        faces.retain(|_| keep.next().unwrap_or(true));
        for (a, b) in horizon {
            faces.push(Face::new([a, b, idx], &pts, interior));
        }
    }

    let volume: f64 = faces
        .iter()
        .map(|f| {
            let [a, b, c] = f.v.map(|i| sub(pts[i], interior));
            dot(a, cross(b, c)) / 6.0
        })
        .sum();
    Ok(T::lit(volume.abs()))
}

/// `(edv − esv) / edv`.
pub fn ejection_fraction<T: Scalar>(edv: T, esv: T) -> Result<T> {
    if !(edv > T::zero()) {
        return Err(Error::invalid(format!(
            "end-diastolic volume must be positive, got {edv}"
        )));
    }
    Ok((edv - esv) / edv)
}
