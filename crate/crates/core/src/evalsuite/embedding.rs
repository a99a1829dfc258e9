use crate::error::{Error, Result};
use crate::numcore::{sym_eig_generalized, Tensor};

pub const DEFAULT_NEIGHBORS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding2D {
    pub coords: Vec<[f64; 2]>,
    /// Generalized eigenvalues of the two coordinates.
    pub eigenvalues: [f64; 2],
    pub k: usize,
    /// Connected components of the kNN graph; more than one makes the
    /// leading coordinates component indicators.
    pub components: usize,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Binary kNN adjacency, symmetrized by union. Neighbour ties go to the
/// lower index.
fn knn_adjacency(x: &[Vec<f64>], k: usize) -> Vec<Vec<bool>> {
    let n = x.len();
    let mut w = vec![vec![false; n]; n];
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (dist(&x[i], &x[j]), j)).collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(k) {
            w[i][j] = true;
            w[j][i] = true;
        }
    }
    w
}

fn count_components(w: &[Vec<bool>]) -> usize {
    let n = w.len();
    let mut seen = vec![false; n];
    let mut count = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if w[i][j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    count
}

/// Laplacian eigenmap: solves `L v = λ D v` for the kNN graph and returns
/// the eigenvectors of the 2nd and 3rd smallest eigenvalues. Each vector's
/// sign is fixed so its largest-magnitude entry (lowest index on ties) is
/// positive.
pub fn eigenmap(latents: &[Vec<f64>], k: usize) -> Result<Embedding2D> {
    let n = latents.len();
    if k == 0 || n <= k {
        return Err(Error::invalid(format!("eigenmap needs N > k >= 1, got N={n}, k={k}")));
    }
    if n < 3 {
        return Err(Error::invalid("eigenmap needs at least 3 points"));
    }
    let dim = latents[0].len();
    if latents.iter().any(|r| r.len() != dim) {
        return Err(Error::ShapeMismatch("ragged latent rows".into()));
    }
    if latents.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite latent"));
    }
    let w = knn_adjacency(latents, k);
    let components = count_components(&w);
    let mut lap = Tensor::<f64>::zeros(&[n, n]);
    let mut deg = Tensor::<f64>::zeros(&[n, n]);
    for i in 0..n {
        let d = w[i].iter().filter(|&&e| e).count() as f64;
        deg.set(i, i, d);
        lap.set(i, i, d);
        for j in 0..n {
            if w[i][j] {
                lap.set(i, j, -1.0);
            }
        }
    }
    let eig = sym_eig_generalized(&lap, &deg)?;
    let mut vectors = [1, 2].map(|c| (0..n).map(|i| eig.vectors.at(i, c)).collect::<Vec<f64>>());
    for v in &mut vectors {
        let mut at = 0;
        for (i, x) in v.iter().enumerate() {
            if x.abs() > v[at].abs() {
                at = i;
            }
        }
        if v[at] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let coords: Vec<[f64; 2]> = (0..n).map(|i| [vectors[0][i], vectors[1][i]]).collect();
    if coords.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite embedding"));
    }
    Ok(Embedding2D {
        coords,
        eigenvalues: [eig.values[1], eig.values[2]],
        k,
        components,
    })
}

/// Mean silhouette of a two-group labelling under Euclidean distance.
/// Points alone in their group score 0.
pub fn silhouette(points: &[[f64; 2]], labels: &[u8]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} points for {} labels", points.len(), labels.len())));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Undefined("silhouette needs both groups".into()));
    }
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (mut same, mut ns, mut other, mut no) = (0.0, 0usize, 0.0, 0usize);
        for (j, q) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = dist(p, q);
            if labels[j] == labels[i] {
                same += d;
                ns += 1;
            } else {
                other += d;
                no += 1;
            }
        }
        if ns == 0 {
            continue;
        }
        let a = same / ns as f64;
        let b = other / no as f64;
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / points.len() as f64)
}
