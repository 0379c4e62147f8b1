//! Dense least squares by Householder QR with column pivoting.

use nalgebra::{DMatrix, DVector};

use crate::scalar::Real;

/// Default relative rank tolerance on `|R_kk| / |R_00|`.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Output of [`lstsq`].
#[derive(Debug, Clone)]
pub struct LeastSquares<T: Real> {
    /// Solution; only meaningful when `rank == cols`.
    pub x: DVector<T>,
    /// `‖A x − b‖₂`.
    pub residual_norm: T,
    /// Numerical rank at the requested tolerance.
    pub rank: usize,
    /// `|R_00| / |R_(r−1)(r−1)|`, a cheap lower bound on the condition number.
    pub condition: T,
    /// Diagonal of the triangular factor, in pivot order.
    pub r_diagonal: Vec<T>,
}

impl<T: Real> LeastSquares<T> {
    pub fn is_full_rank(&self) -> bool {
        self.rank == self.x.len()
    }
}

/// Rank tolerance actually used for a matrix of the given shape.
pub fn effective_tolerance<T: Real>(rel_tol: T, rows: usize, cols: usize) -> T {
    rel_tol.max(T::eps() * T::lit(10.0 * rows.max(cols) as f64))
}

/// Solves `min ‖A x − b‖` for `A` with at least as many rows as columns.
///
/// When the numerical rank is below `cols`, `x` holds the basic solution that
/// sets the trailing pivoted unknowns to zero.
pub fn lstsq<T: Real>(a: &DMatrix<T>, b: &DVector<T>, rel_tol: T) -> LeastSquares<T> {
    let (m, n) = a.shape();
    assert_eq!(b.len(), m, "right-hand side length must match rows");
    let mut r = a.clone();
    let mut qtb = b.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let steps = m.min(n);
    let mut diag = Vec::with_capacity(steps);

    for k in 0..steps {
        // pivot: largest remaining column norm (recomputed, n is small)
        let mut best = k;
        let mut best_norm = T::zero();
        {
            let data = r.as_slice();
            for j in k..n {
                let norm2 = data[j * m + k..(j + 1) * m]
                    .iter()
                    .fold(T::zero(), |acc, v| acc + *v * *v);
                if norm2 > best_norm {
                    best_norm = norm2;
                    best = j;
                }
            }
        }
        if best != k {
            r.swap_columns(k, best);
            perm.swap(k, best);
        }
        let norm = best_norm.sqrt();
        if norm == T::zero() {
            diag.push(T::zero());
            continue;
        }
        let x0 = r[(k, k)];
        let alpha = if x0 >= T::zero() { -norm } else { norm };
        // v = x − alpha e1
        let mut v: Vec<T> = r.as_slice()[k * m + k..(k + 1) * m].to_vec();
        v[0] -= alpha;
        let vnorm2 = v.iter().fold(T::zero(), |acc, x| acc + *x * *x);
        if vnorm2 > T::zero() {
            let beta = T::lit(2.0) / vnorm2;
            let reflect = |col: &mut [T]| {
                let s = v.iter().zip(col.iter()).fold(T::zero(), |acc, (a, b)| acc + *a * *b) * beta;
                for (c, a) in col.iter_mut().zip(&v) {
                    *c -= s * *a;
                }
            };
            let data = r.as_mut_slice();
            for j in k..n {
                reflect(&mut data[j * m + k..(j + 1) * m]);
            }
            reflect(&mut qtb.as_mut_slice()[k..m]);
        }
        r[(k, k)] = alpha;
        diag.push(alpha);
    }

    let lead = diag.first().map_or(T::zero(), |d| d.abs());
    let tol = effective_tolerance(rel_tol, m, n) * lead;
    let rank = diag.iter().take_while(|d| d.abs() > tol && lead > T::zero()).count();

    let mut z = DVector::zeros(n);
    for i in (0..rank).rev() {
        let mut s = qtb[i];
        for j in (i + 1)..rank {
            s -= r[(i, j)] * z[j];
        }
        z[i] = s / r[(i, i)];
    }
    let mut x = DVector::zeros(n);
    for (i, &p) in perm.iter().enumerate() {
        x[p] = z[i];
    }
    let residual_norm = (a * &x - b).norm();
    let condition = if rank > 0 {
        lead / diag[rank - 1].abs()
    } else {
        T::max_value().unwrap_or(T::zero())
    };
    LeastSquares {
        x,
        residual_norm,
        rank,
        condition,
        r_diagonal: diag,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_system() {
        let a = DMatrix::<f64>::identity(5, 5);
        let mut b = DVector::zeros(5);
        b[0] = 1.0;
        let s = lstsq(&a, &b, RANK_TOLERANCE);
        assert_eq!(s.rank, 5);
        assert!((s.x - b).amax() < 1e-15);
        assert!(s.residual_norm < 1e-15);
    }

    #[test]
    fn matches_svd_pseudo_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (m, n) = (rng.gen_range(10..60), rng.gen_range(2..10));
            let a = DMatrix::from_fn(m, n, |_, j| rng.gen_range(-1.0..1.0) * (j as f64 + 1.0).powi(2));
            let b = DVector::from_fn(m, |_, _| rng.gen_range(-5.0..5.0));
            let s = lstsq(&a, &b, RANK_TOLERANCE);
            let oracle = a.clone().svd(true, true).solve(&b, 1e-14).unwrap();
            assert_eq!(s.rank, n);
            assert!((s.x - &oracle).amax() < 1e-9 * oracle.amax().max(1.0));
            let res = (&a * &oracle - &b).norm();
            assert!((s.residual_norm - res).abs() < 1e-9);
        }
    }

    #[test]
    fn detects_rank_deficiency() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = DMatrix::from_fn(20, 6, |_, _| rng.gen_range(-1.0..1.0));
        let c = a.column(1) * 3.0 - a.column(4);
        a.set_column(5, &c);
        let b = DVector::from_fn(20, |_, _| rng.gen_range(-1.0..1.0));
        let s = lstsq(&a, &b, RANK_TOLERANCE);
        assert_eq!(s.rank, 5);
        assert!(!s.is_full_rank());
    }

    #[test]
    fn single_precision() {
        let a = DMatrix::<f32>::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let b = DVector::from_row_slice(&[1.0, 3.0, 5.0, 7.0]);
        let s = lstsq(&a, &b, RANK_TOLERANCE as f32);
        assert!((s.x[0] - 1.0).abs() < 1e-5 && (s.x[1] - 2.0).abs() < 1e-5);
    }
}
