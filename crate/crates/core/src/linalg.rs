//! Dense symmetric eigendecomposition for the small covariance matrices
//! (order 2..=8 in practice) that every PCA variant reduces to.
//!
//! The solver is a cyclic Jacobi rotation scheme: each sweep visits every
//! off-diagonal pair `(p, q)` once and annihilates it with a plane rotation.
//! Sweeps stop once the off-diagonal Frobenius mass drops below
//! [`JACOBI_RELATIVE_TOL`] times the diagonal mass, or after
//! [`JACOBI_MAX_SWEEPS`] sweeps.

use ndarray::Array2;

use crate::error::{ensure_finite, Error, Result};

pub const JACOBI_RELATIVE_TOL: f64 = 1e-14;
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Components with magnitude at or below this are skipped when choosing the
/// sign of an eigenvector.
pub const SIGN_EPS: f64 = 1e-12;

/// Relative gap below which the top two eigenvalues are considered tied.
pub const DEGENERACY_EPS: f64 = 1e-12;

/// Real symmetric matrix stored as its packed upper triangle, so that
/// `get(i, j) == get(j, i)` holds bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    order: usize,
    upper: Vec<f64>,
}

impl SymMatrix {
    /// Builds a matrix by evaluating `f(i, j)` for `i <= j` only.
    pub fn from_upper_fn(order: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::Empty("symmetric matrix of order 0"));
        }
        let mut upper = Vec::with_capacity(order * (order + 1) / 2);
        for i in 0..order {
            for j in i..order {
                upper.push(f(i, j));
            }
        }
        Ok(Self { order, upper })
    }

    /// Builds a matrix from dense rows, rejecting anything that is not square
    /// and exactly symmetric.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let order = rows.len();
        for row in rows {
            if row.as_ref().len() != order {
                return Err(Error::LengthMismatch {
                    expected: order,
                    found: row.as_ref().len(),
                });
            }
        }
        for i in 0..order {
            for j in (i + 1)..order {
                let (a, b) = (rows[i].as_ref()[j], rows[j].as_ref()[i]);
                if a.to_bits() != b.to_bits() && a != b {
                    return Err(Error::InvalidInput(format!(
                        "matrix is not symmetric at ({i}, {j}): {a} != {b}"
                    )));
                }
            }
        }
        Self::from_upper_fn(order, |i, j| rows[i].as_ref()[j])
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::from_upper_fn(diag.len(), |i, j| if i == j { diag[i] } else { 0.0 })
    }

    pub fn identity(order: usize) -> Result<Self> {
        Self::from_upper_fn(order, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    fn packed_index(&self, i: usize, j: usize) -> usize {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        // rows 0..r contribute (order - k) entries each
        r * self.order - r * (r.saturating_sub(1)) / 2 - r + c
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.order && j < self.order, "index out of range");
        self.upper[self.packed_index(i, j)]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.order).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.upper.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.order, self.order), |(i, j)| self.get(i, j))
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.order {
            return Err(Error::LengthMismatch {
                expected: self.order,
                found: v.len(),
            });
        }
        Ok((0..self.order)
            .map(|i| (0..self.order).map(|j| self.get(i, j) * v[j]).sum())
            .collect())
    }
}

/// Eigenpairs of a [`SymMatrix`], sorted by descending eigenvalue.
///
/// Every eigenvector has unit Euclidean norm and its first component with
/// magnitude above [`SIGN_EPS`] is non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    eigenvalues: Vec<f64>,
    eigenvectors: Vec<Vec<f64>>,
    source_order: usize,
    sweeps: usize,
}

impl EigenBasis {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &[Vec<f64>] {
        &self.eigenvectors
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.eigenvectors[k]
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn source_order(&self) -> usize {
        self.source_order
    }

    /// Number of Jacobi sweeps performed.
    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    /// True when the top two eigenvalues are numerically tied, so the leading
    /// eigenvector is only one of many spanning vectors of its eigenspace.
    pub fn dominant_is_degenerate(&self) -> bool {
        match self.eigenvalues.as_slice() {
            [l1, l2, ..] => (l1 - l2).abs() < DEGENERACY_EPS * l1.abs().max(1.0),
            _ => false,
        }
    }
}

/// Leading eigenpair of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DominantPair {
    pub eigenvalue: f64,
    pub vector: Vec<f64>,
    pub degenerate: bool,
}

/// Full eigendecomposition by cyclic Jacobi sweeps.
pub fn eigendecompose(m: &SymMatrix) -> Result<EigenBasis> {
    ensure_finite(&m.upper, "symmetric matrix")?;
    let n = m.order;
    let mut a = m.to_dense();
    let mut v = Array2::<f64>::eye(n);

    let mut sweeps = 0;
    while sweeps < JACOBI_MAX_SWEEPS {
        let (off, diag) = off_and_diag_mass(&a);
        if off == 0.0 || off <= JACOBI_RELATIVE_TOL * diag {
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }

    let mut pairs: Vec<(f64, Vec<f64>)> =
        (0..n).map(|k| (a[[k, k]], v.column(k).to_vec())).collect();
    // stable: ties keep Jacobi output order
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));

    let (eigenvalues, eigenvectors) = pairs
        .into_iter()
        .map(|(value, mut vector)| {
            normalize_sign(&mut vector);
            (value, vector)
        })
        .unzip();

    Ok(EigenBasis {
        eigenvalues,
        eigenvectors,
        source_order: n,
        sweeps,
    })
}

/// Leading eigenpair; identical to the first pair of [`eigendecompose`].
pub fn dominant_eigenvector(m: &SymMatrix) -> Result<DominantPair> {
    let basis = eigendecompose(m)?;
    let degenerate = basis.dominant_is_degenerate();
    let EigenBasis {
        mut eigenvalues,
        mut eigenvectors,
        ..
    } = basis;
    eigenvalues.truncate(1);
    eigenvectors.truncate(1);
    Ok(DominantPair {
        eigenvalue: eigenvalues[0],
        vector: eigenvectors.pop().expect("order >= 1"),
        degenerate,
    })
}

fn off_and_diag_mass(a: &Array2<f64>) -> (f64, f64) {
    let mut off = 0.0;
    let mut diag = 0.0;
    for ((i, j), x) in a.indexed_iter() {
        if i == j {
            diag += x * x;
        } else {
            off += x * x;
        }
    }
    (off.sqrt(), diag.sqrt())
}

/// Applies the rotation that zeroes `a[p][q]`, accumulating it into `v`.
fn rotate(a: &mut Array2<f64>, v: &mut Array2<f64>, p: usize, q: usize) {
    let apq = a[[p, q]];
    if apq == 0.0 {
        return;
    }
    let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
    let t = if theta.is_infinite() {
        0.0
    } else {
        let t = 1.0 / (theta.abs() + theta.hypot(1.0));
        if theta < 0.0 {
            -t
        } else {
            t
        }
    };
    let c = 1.0 / t.hypot(1.0);
    let s = t * c;

    let n = a.nrows();
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[[k, p]];
        let akq = a[[k, q]];
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        a[[k, p]] = new_kp;
        a[[p, k]] = new_kp;
        a[[k, q]] = new_kq;
        a[[q, k]] = new_kq;
    }
    a[[p, p]] -= t * apq;
    a[[q, q]] += t * apq;
    a[[p, q]] = 0.0;
    a[[q, p]] = 0.0;

    for k in 0..n {
        let vkp = v[[k, p]];
        let vkq = v[[k, q]];
        v[[k, p]] = c * vkp - s * vkq;
        v[[k, q]] = s * vkp + c * vkq;
    }
}

/// Flips `v` so its first component above [`SIGN_EPS`] in magnitude is
/// non-negative.
pub fn normalize_sign(v: &mut [f64]) {
    if let Some(first) = v.iter().find(|x| x.abs() > SIGN_EPS) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_sym(rng: &mut StdRng, n: usize) -> SymMatrix {
        SymMatrix::from_upper_fn(n, |_, _| rng.random_range(-5.0..5.0)).unwrap()
    }

    fn residual(m: &SymMatrix, lambda: f64, v: &[f64]) -> f64 {
        let mv = m.mul_vec(v).unwrap();
        mv.iter()
            .zip(v)
            .map(|(a, b)| (a - lambda * b).abs())
            .fold(0.0, f64::max)
    }

    /// Number of eigenvalues strictly below `x`, from the inertia of the
    /// LDL^T factorisation of `m - x I` (Sylvester's law).
    fn count_below(m: &SymMatrix, x: f64) -> usize {
        let n = m.order();
        let mut a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| m.get(i, j) - if i == j { x } else { 0.0 })
                    .collect()
            })
            .collect();
        let mut negatives = 0;
        for k in 0..n {
            let mut d = a[k][k];
            if d == 0.0 {
                d = -1e-300;
            }
            if d < 0.0 {
                negatives += 1;
            }
            for i in (k + 1)..n {
                let f = a[i][k] / d;
                for j in (k + 1)..n {
                    a[i][j] -= f * a[k][j];
                }
            }
        }
        negatives
    }

    /// Bisection oracle for the k-th largest eigenvalue.
    fn bisect_eigenvalue(m: &SymMatrix, k: usize) -> f64 {
        let n = m.order();
        let bound = (0..n)
            .map(|i| (0..n).map(|j| m.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
            + 1.0;
        // the k-th largest is the (n-1-k)-th smallest
        let target = n - 1 - k;
        let (mut lo, mut hi) = (-bound, bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if count_below(m, mid) > target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn packed_storage_is_symmetric() {
        let m = SymMatrix::from_upper_fn(4, |i, j| (10 * i + j) as f64).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m.get(i, j).to_bits(), m.get(j, i).to_bits());
            }
        }
        assert_eq!(m.get(1, 3), 13.0);
        assert_eq!(m.get(3, 3), 33.0);
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn from_rows_rejects_asymmetry() {
        assert!(SymMatrix::from_rows(&[[1.0, 2.0], [2.5, 1.0]]).is_err());
        assert!(SymMatrix::from_rows(&[vec![1.0, 2.0]]).is_err());
        assert!(SymMatrix::from_rows::<[f64; 0]>(&[]).is_err());
    }

    #[test]
    fn identity_of_order_three() {
        let basis = eigendecompose(&SymMatrix::identity(3).unwrap()).unwrap();
        assert_eq!(basis.eigenvalues(), &[1.0, 1.0, 1.0]);
        for (i, vi) in basis.eigenvectors().iter().enumerate() {
            for (j, vj) in basis.eigenvectors().iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot(vi, vj) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_matrix_gives_standard_basis() {
        let basis = eigendecompose(&SymMatrix::from_diagonal(&[5.0, 2.0, -1.0]).unwrap()).unwrap();
        assert_eq!(basis.eigenvalues(), &[5.0, 2.0, -1.0]);
        assert_eq!(basis.vector(0), &[1.0, 0.0, 0.0]);
        assert_eq!(basis.vector(1), &[0.0, 1.0, 0.0]);
        assert_eq!(basis.vector(2), &[0.0, 0.0, 1.0]);
        assert_eq!(basis.sweeps(), 0);
    }

    #[test]
    fn unsorted_diagonal_is_sorted() {
        let basis = eigendecompose(&SymMatrix::from_diagonal(&[-1.0, 5.0, 2.0]).unwrap()).unwrap();
        assert_eq!(basis.eigenvalues(), &[5.0, 2.0, -1.0]);
        assert_eq!(basis.vector(0), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn non_finite_entries_rejected() {
        let m = SymMatrix::from_upper_fn(2, |i, j| if i != j { f64::NAN } else { 1.0 }).unwrap();
        assert_eq!(
            eigendecompose(&m),
            Err(Error::NonFinite("symmetric matrix"))
        );
        let inf = SymMatrix::from_diagonal(&[f64::INFINITY, 1.0]).unwrap();
        assert!(dominant_eigenvector(&inf).is_err());
    }

    #[test]
    fn dominant_of_diagonal() {
        let pair = dominant_eigenvector(&SymMatrix::from_diagonal(&[3.0, 1.0]).unwrap()).unwrap();
        assert_eq!(pair.eigenvalue, 3.0);
        assert_eq!(pair.vector, vec![1.0, 0.0]);
        assert!(!pair.degenerate);
    }

    #[test]
    fn dominant_of_two_by_two_closed_form() {
        let m = SymMatrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let pair = dominant_eigenvector(&m).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((pair.eigenvalue - 3.0).abs() < 1e-14);
        assert!((pair.vector[0] - h).abs() < 1e-14);
        assert!((pair.vector[1] - h).abs() < 1e-14);
    }

    #[test]
    fn degenerate_dominant_is_flagged() {
        let pair = dominant_eigenvector(&SymMatrix::identity(2).unwrap()).unwrap();
        assert!(pair.degenerate);
        assert!((norm2(&pair.vector) - 1.0).abs() < 1e-12);
        let single = dominant_eigenvector(&SymMatrix::from_diagonal(&[4.0]).unwrap()).unwrap();
        assert!(!single.degenerate);
        assert_eq!(single.vector, vec![1.0]);
    }

    #[test]
    fn dominant_matches_full_decomposition_5x5() {
        let mut rng = StdRng::seed_from_u64(55);
        for _ in 0..20 {
            let m = random_sym(&mut rng, 5);
            let basis = eigendecompose(&m).unwrap();
            let pair = dominant_eigenvector(&m).unwrap();
            assert_eq!(pair.eigenvalue, basis.eigenvalues()[0]);
            assert_eq!(pair.vector.as_slice(), basis.vector(0));
        }
    }

    #[test]
    fn random_4x4_matches_bisection_oracle() {
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..25 {
            let m = random_sym(&mut rng, 4);
            let basis = eigendecompose(&m).unwrap();
            for k in 0..4 {
                let oracle = bisect_eigenvalue(&m, k);
                assert!(
                    (basis.eigenvalues()[k] - oracle).abs() < 1e-8,
                    "k={k}: {} vs {oracle}",
                    basis.eigenvalues()[k]
                );
                let scale = m.max_abs().max(1.0);
                assert!(residual(&m, basis.eigenvalues()[k], basis.vector(k)) <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn reconstruction_trace_and_orthonormality() {
        let mut rng = StdRng::seed_from_u64(7);
        for n in 1..=8 {
            let m = random_sym(&mut rng, n);
            let basis = eigendecompose(&m).unwrap();
            let scale = m.max_abs().max(1.0);
            for i in 0..n {
                for j in 0..n {
                    let rebuilt: f64 = (0..n)
                        .map(|k| basis.eigenvalues()[k] * basis.vector(k)[i] * basis.vector(k)[j])
                        .sum();
                    assert!((rebuilt - m.get(i, j)).abs() <= 1e-9 * scale);
                    let g = dot(basis.vector(i), basis.vector(j));
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((g - e).abs() <= 1e-10);
                }
            }
            let tr: f64 = basis.eigenvalues().iter().sum();
            assert!((tr - m.trace()).abs() <= 1e-10 * m.trace().abs().max(1.0));
            for w in basis.eigenvalues().windows(2) {
                assert!(w[0] >= w[1]);
            }
            for v in basis.eigenvectors() {
                assert!((norm2(v) - 1.0).abs() <= 1e-12);
                let first = v.iter().find(|x| x.abs() > SIGN_EPS).unwrap();
                assert!(*first >= 0.0);
            }
        }
    }

    #[test]
    fn deterministic_bits() {
        let mut rng = StdRng::seed_from_u64(99);
        let m = random_sym(&mut rng, 6);
        let a = eigendecompose(&m).unwrap();
        let b = eigendecompose(&m.clone()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_matrix() {
        let basis = eigendecompose(&SymMatrix::from_diagonal(&[0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(basis.eigenvalues(), &[0.0, 0.0]);
        assert!(basis.dominant_is_degenerate());
    }

    #[test]
    fn mul_vec_rejects_wrong_length() {
        let m = SymMatrix::identity(3).unwrap();
        assert_eq!(
            m.mul_vec(&[1.0]),
            Err(Error::LengthMismatch {
                expected: 3,
                found: 1
            })
        );
    }
}
