//! Nearest-neighbour kernels over flat `q × 3` coordinate buffers.
//!
//! Ties are always resolved toward the lowest target index, so the brute
//! force scan and the grid search select identical neighbours.

use super::Scalar;

/// Result of a nearest-neighbour query batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Nearest<T> {
    /// For each query, the index of its nearest target.
    pub index: Vec<usize>,
    /// For each query, the squared distance to that target.
    pub dist2: Vec<T>,
}

/// Below this many query·target pairs the grid does not pay for itself.
const GRID_MIN_PAIRS: usize = 4096;

#[inline]
pub(crate) fn dist2<T: Scalar>(a: &[T], b: &[T]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// O(q·r) scan.
pub fn nearest_brute<T: Scalar>(queries: &[T], targets: &[T]) -> Nearest<T> {
    assert!(queries.len() % 3 == 0 && targets.len() % 3 == 0);
    assert!(!targets.is_empty(), "nearest neighbour against empty target set");
    let q = queries.len() / 3;
    let mut index = Vec::with_capacity(q);
    let mut d2 = Vec::with_capacity(q);
    for p in queries.chunks_exact(3) {
        let mut best = T::infinity();
        let mut best_j = 0;
        for (j, t) in targets.chunks_exact(3).enumerate() {
            let d = dist2(p, t);
            if d < best {
                best = d;
                best_j = j;
            }
        }
        index.push(best_j);
        d2.push(best);
    }
    Nearest { index, dist2: d2 }
}

/// Uniform-grid accelerated search; returns exactly what [`nearest_brute`]
/// returns.
pub fn nearest_grid<T: Scalar>(queries: &[T], targets: &[T]) -> Nearest<T> {
    assert!(queries.len() % 3 == 0 && targets.len() % 3 == 0);
    assert!(!targets.is_empty(), "nearest neighbour against empty target set");
    let grid = Grid::build(targets);
    let q = queries.len() / 3;
    let mut index = Vec::with_capacity(q);
    let mut d2 = Vec::with_capacity(q);
    for p in queries.chunks_exact(3) {
        let (j, d) = grid.query(p, targets);
        index.push(j);
        d2.push(d);
    }
    Nearest { index, dist2: d2 }
}

/// Picks the grid for large problems and the scan otherwise.
pub fn nearest<T: Scalar>(queries: &[T], targets: &[T]) -> Nearest<T> {
    if (queries.len() / 3) * (targets.len() / 3) >= GRID_MIN_PAIRS {
        nearest_grid(queries, targets)
    } else {
        nearest_brute(queries, targets)
    }
}

struct Grid<T> {
    lo: [T; 3],
    cell: [T; 3],
    dims: [usize; 3],
    /// CSR layout: points of cell `c` are `order[start[c]..start[c + 1]]`,
    /// ascending by target index.
    start: Vec<usize>,
    order: Vec<usize>,
    min_cell: T,
}

impl<T: Scalar> Grid<T> {
    fn build(targets: &[T]) -> Self {
        let r = targets.len() / 3;
        let mut lo = [T::infinity(); 3];
        let mut hi = [T::neg_infinity(); 3];
        for p in targets.chunks_exact(3) {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let per_axis = ((r as f64 / 2.0).cbrt().ceil() as usize).clamp(1, 64);
        let mut dims = [per_axis; 3];
        let mut cell = [T::one(); 3];
        for a in 0..3 {
            let extent = hi[a] - lo[a];
            if extent > T::zero() {
                cell[a] = extent / T::lit(per_axis as f64);
            } else {
                dims[a] = 1;
            }
        }
        let min_cell = cell
            .iter()
            .zip(&dims)
            .filter(|(_, &d)| d > 1)
            .map(|(&c, _)| c)
            .fold(T::infinity(), T::min);
        let mut grid = Self {
            lo,
            cell,
            dims,
            start: Vec::new(),
            order: Vec::new(),
            min_cell,
        };
        let n_cells = dims[0] * dims[1] * dims[2];
        let cell_of: Vec<usize> = targets
            .chunks_exact(3)
            .map(|p| grid.flat(grid.coords(p)))
            .collect();
        let mut count = vec![0usize; n_cells + 1];
        for &c in &cell_of {
            count[c + 1] += 1;
        }
        for c in 0..n_cells {
            count[c + 1] += count[c];
        }
        let mut fill = count.clone();
        let mut order = vec![0usize; r];
        for (j, &c) in cell_of.iter().enumerate() {
            order[fill[c]] = j;
            fill[c] += 1;
        }
        grid.start = count;
        grid.order = order;
        grid
    }

    fn coords(&self, p: &[T]) -> [usize; 3] {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.lo[a]) / self.cell[a]).floor();
            let f = f.max(T::zero()).as_f64() as usize;
            out[a] = f.min(self.dims[a] - 1);
        }
        out
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    fn query(&self, p: &[T], targets: &[T]) -> (usize, T) {
        let c = self.coords(p);
        let max_ring = self.dims.iter().copied().max().unwrap_or(1);
        let mut best = T::infinity();
        let mut best_j = usize::MAX;
        for ring in 0..max_ring {
            self.visit_ring(c, ring, |cell| {
                for &j in &self.order[self.start[cell]..self.start[cell + 1]] {
                    let d = dist2(p, &targets[3 * j..3 * j + 3]);
                    if d < best || (d == best && j < best_j) {
                        best = d;
                        best_j = j;
                    }
                }
            });
            // Unvisited cells are at Chebyshev ring >= ring + 1, hence at
            // least `ring` whole cells away; one ring of slack absorbs
            // rounding in the cell assignment.
            if best_j != usize::MAX && ring >= 1 {
                let gap = self.min_cell * T::lit((ring - 1) as f64);
                if gap * gap > best {
                    break;
                }
            }
        }
        (best_j, best)
    }

    fn visit_ring(&self, c: [usize; 3], ring: usize, mut f: impl FnMut(usize)) {
        let r = ring as isize;
        let range = |a: usize| {
            let lo = (c[a] as isize - r).max(0);
            let hi = (c[a] as isize + r).min(self.dims[a] as isize - 1);
            lo..=hi
        };
        for x in range(0) {
            for y in range(1) {
                for z in range(2) {
                    let dx = (x - c[0] as isize).abs();
                    let dy = (y - c[1] as isize).abs();
                    let dz = (z - c[2] as isize).abs();
                    if dx.max(dy).max(dz) != r {
                        continue;
                    }
                    f(self.flat([x as usize, y as usize, z as usize]));
                }
            }
        }
    }
}
