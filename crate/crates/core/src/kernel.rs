//! The multiplication-free (MF) vector product and the covariance builders.
//!
//! The MF product of `w` and `x` is
//!
//! ```text
//! w ⊙ x = Σ sign(w_i · x_i) · min(|w_i|, |x_i|)
//! ```
//!
//! where the sign of each term comes from comparing operand sign bits and the
//! magnitude from a comparison, so no `w_i · x_i` product is ever formed. On
//! the diagonal it reduces to the ℓ1 norm: `x ⊙ x = ‖x‖₁`.
//!
//! Both covariance builders return an [`OpCount`] so callers can check the
//! arithmetic cost of each route.

use std::ops::{Add, AddAssign};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::SymMatrix;

/// Which vector product builds the covariance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// Ordinary dot product, `C = XᵀX`.
    L2,
    /// Multiplication-free product, `A = Xᵀ ⊙ X`.
    L1Mf,
}

/// Logical operation tally for a covariance build. One count per executed
/// term operation, not per machine instruction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub multiplications: u64,
    pub additions: u64,
    pub sign_ops: u64,
    pub min_ops: u64,
}

impl OpCount {
    /// Cost of filling the whole `d × d` matrix entry by entry from columns
    /// of length `n`, without exploiting symmetry.
    pub fn naive_full_matrix(n: u64, d: u64, kind: KernelKind) -> Self {
        let terms = d * d * n;
        let additions = d * d * n.saturating_sub(1);
        match kind {
            KernelKind::L2 => Self {
                multiplications: terms,
                additions,
                ..Self::default()
            },
            KernelKind::L1Mf => Self {
                additions,
                sign_ops: terms,
                min_ops: terms,
                ..Self::default()
            },
        }
    }

    /// Cost of the upper-triangle build performed by [`kernel_covariance`].
    pub fn upper_triangle(n: u64, d: u64, kind: KernelKind) -> Self {
        let pairs = d * (d + 1) / 2;
        let terms = pairs * n;
        let additions = pairs * n.saturating_sub(1);
        match kind {
            KernelKind::L2 => Self {
                multiplications: terms,
                additions,
                ..Self::default()
            },
            KernelKind::L1Mf => Self {
                additions,
                sign_ops: terms,
                min_ops: terms,
                ..Self::default()
            },
        }
    }
}

impl Add for OpCount {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self {
            multiplications: self.multiplications + rhs.multiplications,
            additions: self.additions + rhs.additions,
            sign_ops: self.sign_ops + rhs.sign_ops,
            min_ops: self.min_ops + rhs.min_ops,
        }
    }
}

impl AddAssign for OpCount {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

/// One MF term. A zero operand contributes 0.
#[inline]
fn mf_term(w: f64, x: f64) -> f64 {
    if w == 0.0 || x == 0.0 {
        return 0.0;
    }
    let (mw, mx) = (w.abs(), x.abs());
    let magnitude = if mw <= mx { mw } else { mx };
    if w.is_sign_negative() == x.is_sign_negative() {
        magnitude
    } else {
        -magnitude
    }
}

fn mf_dot_counted(w: &[f64], x: &[f64], ops: &mut OpCount) -> f64 {
    let mut terms = w.iter().zip(x).map(|(&a, &b)| {
        ops.sign_ops += 1;
        ops.min_ops += 1;
        mf_term(a, b)
    });
    let first = terms.next().unwrap_or(0.0);
    let mut extra = 0;
    let acc = terms.fold(first, |acc, t| {
        extra += 1;
        acc + t
    });
    ops.additions += extra;
    acc
}

fn l2_dot_counted(w: &[f64], x: &[f64], ops: &mut OpCount) -> f64 {
    let mut terms = w.iter().zip(x).map(|(&a, &b)| {
        ops.multiplications += 1;
        a * b
    });
    let first = terms.next().unwrap_or(0.0);
    let mut extra = 0;
    let acc = terms.fold(first, |acc, t| {
        extra += 1;
        acc + t
    });
    ops.additions += extra;
    acc
}

/// Multiplication-free product `w ⊙ x`, accumulated left to right.
pub fn mf_dot(w: &[f64], x: &[f64]) -> Result<f64> {
    if w.len() != x.len() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            found: x.len(),
        });
    }
    if w.is_empty() {
        return Err(Error::Empty("mf_dot operands"));
    }
    ensure_finite(w.iter().chain(x), "mf_dot operands")?;
    Ok(mf_dot_counted(w, x, &mut OpCount::default()))
}

/// Gram matrix of the columns of `x` (shape `N × D`) under the chosen
/// product. Only the upper triangle is computed; the diagonal once.
pub fn kernel_covariance(x: ArrayView2<'_, f64>, kind: KernelKind) -> Result<(SymMatrix, OpCount)> {
    let (n, d) = x.dim();
    if n == 0 || d == 0 {
        return Err(Error::Empty("segment matrix"));
    }
    ensure_finite(x.iter(), "segment matrix")?;

    let columns: Vec<Vec<f64>> = x.columns().into_iter().map(|c| c.to_vec()).collect();
    let mut ops = OpCount::default();
    let matrix = SymMatrix::from_upper_fn(d, |i, j| match kind {
        KernelKind::L2 => l2_dot_counted(&columns[i], &columns[j], &mut ops),
        KernelKind::L1Mf => mf_dot_counted(&columns[i], &columns[j], &mut ops),
    })?;
    Ok((matrix, ops))
}

/// `C = XᵀX`.
pub fn regular_covariance(x: ArrayView2<'_, f64>) -> Result<(SymMatrix, OpCount)> {
    kernel_covariance(x, KernelKind::L2)
}

/// `A = Xᵀ ⊙ X`.
pub fn l1_kernel_covariance(x: ArrayView2<'_, f64>) -> Result<(SymMatrix, OpCount)> {
    kernel_covariance(x, KernelKind::L1Mf)
}
