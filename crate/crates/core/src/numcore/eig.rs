//! Dense symmetric eigensolvers: cyclic Jacobi for `A v = λ v`, and a
//! Cholesky reduction for the generalized problem `A v = λ B v`.

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Eigenpairs sorted by ascending eigenvalue. Column `i` of `vectors` belongs
/// to `values[i]`.
#[derive(Clone, Debug)]
pub struct SymEig<T> {
    pub values: Vec<T>,
    pub vectors: Tensor<T>,
}

const MAX_SWEEPS: usize = 100;

fn check_square<T: Scalar>(m: &Tensor<T>, what: &str) -> Result<usize> {
    if m.rank() != 2 || m.rows() != m.cols() {
        return Err(Error::ShapeMismatch(format!(
            "{what} must be square, got {:?}",
            m.shape()
        )));
    }
    Ok(m.rows())
}

fn check_symmetric<T: Scalar>(m: &Tensor<T>) -> Result<()> {
    let n = m.rows();
    let scale = m.max_abs().max(T::one());
    let mut worst = T::zero();
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((m.at(i, j) - m.at(j, i)).abs());
        }
    }
    if worst > T::lit(1e-9) * scale {
        return Err(Error::NotSymmetric(worst.as_f64()));
    }
    Ok(())
}

/// Standard symmetric eigenproblem by cyclic Jacobi rotations.
pub fn sym_eig<T: Scalar>(a: &Tensor<T>) -> Result<SymEig<T>> {
    let n = check_square(a, "A")?;
    check_symmetric(a)?;
    let mut m = a.data().to_vec();
    // Symmetrize exactly so rotations see a truly symmetric matrix.
    for i in 0..n {
        for j in i + 1..n {
            let avg = T::lit(0.5) * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = avg;
            m[j * n + i] = avg;
        }
    }
    let mut v = Tensor::<T>::identity(n).into_data();
    let norm2 = m.iter().fold(T::zero(), |s, &x| s + x * x);
    let tol = T::lit(1e-30) * norm2;

    for _ in 0..MAX_SWEEPS {
        let mut off = T::zero();
        for i in 0..n {
            for j in i + 1..n {
                off = off + m[i * n + j] * m[i * n + j];
            }
        }
        if off <= tol || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let t = if theta == T::zero() { T::one() } else { t };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                m[p * n + q] = T::zero();
                m[q * n + p] = T::zero();
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values: Vec<T> = (0..n).map(|i| m[i * n + i]).collect();
    Ok(sorted(values, Tensor::matrix(n, n, v)))
}

/// Generalized problem `A v = λ B v` with `B` symmetric positive-definite.
/// Eigenvectors are `B`-orthonormal.
pub fn sym_eig_generalized<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<SymEig<T>> {
    let n = check_square(a, "A")?;
    if check_square(b, "B")? != n {
        return Err(Error::ShapeMismatch("A and B differ in size".into()));
    }
    check_symmetric(a)?;
    check_symmetric(b)?;
    let l = cholesky(b)?;

    // C = L⁻¹ A L⁻ᵀ
    let x = forward_solve(&l, a); // L⁻¹ A
    let y = forward_solve(&l, &x.transpose()); // L⁻¹ (L⁻¹ A)ᵀ = L⁻¹ A L⁻ᵀ (A symmetric)
    let mut c = y.transpose();
    for i in 0..n {
        for j in i + 1..n {
            let avg = T::lit(0.5) * (c.at(i, j) + c.at(j, i));
            c.set(i, j, avg);
            c.set(j, i, avg);
        }
    }
    let std = sym_eig(&c)?;
    let vectors = backward_solve_transposed(&l, &std.vectors);
    Ok(sorted(std.values, vectors))
}

/// Lower-triangular `L` with `B = L Lᵀ`.
pub fn cholesky<T: Scalar>(b: &Tensor<T>) -> Result<Tensor<T>> {
    let n = b.rows();
    let mut l = Tensor::<T>::zeros(&[n, n]);
    for j in 0..n {
        let mut d = b.at(j, j);
        for k in 0..j {
            d = d - l.at(j, k) * l.at(j, k);
        }
        if d <= T::zero() || !d.is_finite() {
            return Err(Error::NotPositiveDefinite(j));
        }
        let d = d.sqrt();
        l.set(j, j, d);
        for i in j + 1..n {
            let mut s = b.at(i, j);
            for k in 0..j {
                s = s - l.at(i, k) * l.at(j, k);
            }
            l.set(i, j, s / d);
        }
    }
    Ok(l)
}

/// `L⁻¹ M` for lower-triangular `L`.
fn forward_solve<T: Scalar>(l: &Tensor<T>, m: &Tensor<T>) -> Tensor<T> {
    let (n, cols) = (l.rows(), m.cols());
    let mut out = m.clone();
    for c in 0..cols {
        for i in 0..n {
            let mut s = out.at(i, c);
            for k in 0..i {
                s = s - l.at(i, k) * out.at(k, c);
            }
            out.set(i, c, s / l.at(i, i));
        }
    }
    out
}

/// `L⁻ᵀ M` for lower-triangular `L`.
fn backward_solve_transposed<T: Scalar>(l: &Tensor<T>, m: &Tensor<T>) -> Tensor<T> {
    let (n, cols) = (l.rows(), m.cols());
    let mut out = m.clone();
    for c in 0..cols {
        for i in (0..n).rev() {
            let mut s = out.at(i, c);
            for k in i + 1..n {
                s = s - l.at(k, i) * out.at(k, c);
            }
            out.set(i, c, s / l.at(i, i));
        }
    }
    out
}

/// Ascending order (stable, so equal eigenvalues keep solver order), with
/// each vector's largest-magnitude entry made positive.
fn sorted<T: Scalar>(values: Vec<T>, vectors: Tensor<T>) -> SymEig<T> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("finite eigenvalues"));
    let mut out_vals = Vec::with_capacity(n);
    let mut out_vecs = Tensor::<T>::zeros(&[n, n]);
    for (dst, &src) in order.iter().enumerate() {
        out_vals.push(values[src]);
        let mut pivot = 0;
        for r in 0..n {
            if vectors.at(r, src).abs() > vectors.at(pivot, src).abs() {
                pivot = r;
            }
        }
        let sign = if vectors.at(pivot, src) < T::zero() {
            -T::one()
        } else {
            T::one()
        };
        for r in 0..n {
            out_vecs.set(r, dst, sign * vectors.at(r, src));
        }
    }
    SymEig {
        values: out_vals,
        vectors: out_vecs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    fn random_symmetric(rng: &mut Rng, n: usize) -> Tensor<f64> {
        let mut m = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in i..n {
                let v = rng.uniform_range(-1.0, 1.0);
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        m
    }

    fn random_spd(rng: &mut Rng, n: usize) -> Tensor<f64> {
        let r = random_symmetric(rng, n);
        let mut b = r.matmul_t(false, &r, true);
        for i in 0..n {
            b.set(i, i, b.at(i, i) + 0.5);
        }
        b
    }

    #[test]
    fn identity_pencil() {
        let e = sym_eig_generalized(&Tensor::<f64>::identity(4), &Tensor::identity(4)).unwrap();
        assert!(e.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let vtv = e.vectors.matmul_t(true, &e.vectors, false);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((vtv.at(i, j) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn diagonal_values_come_back_sorted() {
        let mut a = Tensor::<f64>::zeros(&[3, 3]);
        a.set(0, 0, 3.0);
        a.set(1, 1, 1.0);
        a.set(2, 2, 2.0);
        let e = sym_eig_generalized(&a, &Tensor::identity(3)).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn spectral_reconstruction_of_random_matrix() {
        let mut rng = Rng::new(6);
        let a = random_symmetric(&mut rng, 6);
        let e = sym_eig_generalized(&a, &Tensor::identity(6)).unwrap();
        // V Λ Vᵀ
        let mut vl = e.vectors.clone();
        for r in 0..6 {
            for c in 0..6 {
                vl.set(r, c, vl.at(r, c) * e.values[c]);
            }
        }
        let rebuilt = vl.matmul_t(false, &e.vectors, true);
        let err = rebuilt.zip_map(&a, |x, y| x - y).max_abs();
        assert!(err <= 1e-8, "reconstruction error {err}");
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn generalized_residuals_and_b_orthonormality() {
        let mut rng = Rng::new(8);
        let a = random_symmetric(&mut rng, 7);
        let b = random_spd(&mut rng, 7);
        let e = sym_eig_generalized(&a, &b).unwrap();
        let norm_a = a.norm();
        let av = a.matmul(&e.vectors);
        let bv = b.matmul(&e.vectors);
        for i in 0..7 {
            let res: f64 = (0..7)
                .map(|r| (av.at(r, i) - e.values[i] * bv.at(r, i)).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(res <= 1e-8 * norm_a, "pair {i}: residual {res}");
        }
        let vbv = e.vectors.matmul_t(true, &bv, false);
        for i in 0..7 {
            for j in 0..7 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((vbv.at(i, j) - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn indefinite_b_is_rejected() {
        let mut b = Tensor::<f64>::identity(2);
        b.set(1, 1, -1.0);
        assert!(matches!(
            sym_eig_generalized(&Tensor::identity(2), &b),
            Err(Error::NotPositiveDefinite(1))
        ));
    }

    #[test]
    fn asymmetric_a_is_rejected() {
        let mut a = Tensor::<f64>::identity(2);
        a.set(0, 1, 1.0);
        assert!(matches!(
            sym_eig_generalized(&a, &Tensor::identity(2)),
            Err(Error::NotSymmetric(_))
        ));
    }

    #[test]
    fn works_in_single_precision() {
        let mut a = Tensor::<f32>::zeros(&[2, 2]);
        a.set(0, 0, 2.0);
        a.set(0, 1, 1.0);
        a.set(1, 0, 1.0);
        a.set(1, 1, 2.0);
        let e = sym_eig(&a).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-6);
        assert!((e.values[1] - 3.0).abs() < 1e-6);
    }
}
