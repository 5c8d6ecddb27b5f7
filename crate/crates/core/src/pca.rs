//! Principal-direction estimators: ordinary ℓ2-PCA, ℓ1-kernel PCA and the
//! recursive ℓ1-PCA baseline.
//!
//! `fit` never re-centres its input; callers pass segments that are already
//! normalised and mean-subtracted.

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::kernel::{kernel_covariance, KernelKind};
use crate::linalg::{dot, eigendecompose, norm2, normalize_sign};

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PcaMethod {
    Regular,
    L1Kernel,
    RecursiveL1 {
        tolerance: f64,
        max_iterations: usize,
    },
}

impl PcaMethod {
    /// Recursive ℓ1-PCA with the default tolerance of `1e-8`.
    pub fn recursive_l1() -> Self {
        Self::RecursiveL1 {
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }

    pub fn recursive_l1_with(tolerance: f64, max_iterations: usize) -> Result<Self> {
        let method = Self::RecursiveL1 {
            tolerance,
            max_iterations,
        };
        method.validate()?;
        Ok(method)
    }

    pub fn validate(&self) -> Result<()> {
        if let Self::RecursiveL1 {
            tolerance,
            max_iterations,
        } = *self
        {
            if !(tolerance > 0.0 && tolerance.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "tolerance must be positive, got {tolerance}"
                )));
            }
            if max_iterations == 0 {
                return Err(Error::InvalidInput(
                    "max_iterations must be at least 1".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Regular => "regular",
            Self::L1Kernel => "l1-kernel",
            Self::RecursiveL1 { .. } => "recursive-l1",
        }
    }
}

impl fmt::Display for PcaMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PcaMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regular" => Ok(Self::Regular),
            "l1-kernel" => Ok(Self::L1Kernel),
            "recursive-l1" => Ok(Self::recursive_l1()),
            other => Err(Error::InvalidInput(format!(
                "unknown method `{other}` (expected regular, l1-kernel or recursive-l1)"
            ))),
        }
    }
}

/// Output of [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalBasis {
    pub method: PcaMethod,
    /// Unit vectors, leading direction first.
    pub vectors: Vec<Vec<f64>>,
    /// Eigenvalues matching `vectors`; empty for the recursive method.
    pub eigenvalues: Vec<f64>,
    /// Top two eigenvalues tied, so `vectors[0]` is one of many valid choices.
    pub degenerate: bool,
    /// Always true for the eigendecomposition methods.
    pub converged: bool,
    pub iterations: usize,
    /// `Σ|vᵀxᵢ|` after each accepted recursive step, starting from the ℓ2
    /// initialisation. Empty for the other methods.
    pub objective_trace: Vec<f64>,
}

impl PrincipalBasis {
    pub fn dimension(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn leading(&self) -> &[f64] {
        &self.vectors[0]
    }
}

/// `Σᵢ |vᵀxᵢ|` over the rows `xᵢ` of `x`.
pub fn l1_objective(x: ArrayView2<'_, f64>, v: &[f64]) -> f64 {
    x.rows()
        .into_iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>().abs())
        .sum()
}

pub fn fit(x: ArrayView2<'_, f64>, method: PcaMethod) -> Result<PrincipalBasis> {
    method.validate()?;
    let (n, d) = x.dim();
    if n == 0 || d == 0 {
        return Err(Error::Empty("segment matrix"));
    }
    ensure_finite(x.iter(), "segment matrix")?;
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput(
            "all-zero segment has no principal direction".into(),
        ));
    }

    match method {
        PcaMethod::Regular => eigen_fit(x, KernelKind::L2, method),
        PcaMethod::L1Kernel => eigen_fit(x, KernelKind::L1Mf, method),
        PcaMethod::RecursiveL1 {
            tolerance,
            max_iterations,
        } => recursive_fit(x, method, tolerance, max_iterations),
    }
}

fn eigen_fit(
    x: ArrayView2<'_, f64>,
    kind: KernelKind,
    method: PcaMethod,
) -> Result<PrincipalBasis> {
    let (cov, _) = kernel_covariance(x, kind)?;
    let basis = eigendecompose(&cov)?;
    Ok(PrincipalBasis {
        method,
        degenerate: basis.dominant_is_degenerate(),
        vectors: basis.eigenvectors().to_vec(),
        eigenvalues: basis.eigenvalues().to_vec(),
        converged: true,
        iterations: basis.sweeps(),
        objective_trace: Vec::new(),
    })
}

/// Fixed-point iteration `s ← sign(X v)`, `v ← Xᵀs / ‖Xᵀs‖`.
///
/// At a fixed point the objective equals `‖Xᵀs‖`. If flipping a single sign
/// in `s` raises `‖Xᵀs‖` by more than `tolerance` (relative), the best such
/// flip is applied and the fixed-point loop resumes. The objective is
/// non-convex with many local maxima on near-isotropic data, so the ascent is
/// run from the ℓ2 eigenvectors (leading one first) and from every normalised
/// data row; the best final objective wins, ties going to the earliest start.
fn recursive_fit(
    x: ArrayView2<'_, f64>,
    method: PcaMethod,
    tolerance: f64,
    max_iterations: usize,
) -> Result<PrincipalBasis> {
    let start = eigen_fit(x, KernelKind::L2, PcaMethod::Regular)?;
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();

    let row_starts = rows.iter().filter_map(|r| {
        let len = norm2(r);
        (len > 0.0).then(|| r.iter().map(|v| v / len).collect::<Vec<f64>>())
    });
    let mut best: Option<Ascent> = None;
    for init in start.vectors.iter().cloned().chain(row_starts) {
        let run = ascend(x, &rows, init, tolerance, max_iterations);
        if best
            .as_ref()
            .is_none_or(|b| run.objective() > b.objective())
        {
            best = Some(run);
        }
    }
    let Ascent {
        mut v,
        trace,
        iterations,
        converged,
    } = best.expect("at least one start");

    normalize_sign(&mut v);
    Ok(PrincipalBasis {
        method,
        vectors: vec![v],
        eigenvalues: Vec::new(),
        degenerate: start.degenerate,
        converged,
        iterations,
        objective_trace: trace,
    })
}

/// One monotone ascent from a given start.
#[derive(Debug, Clone)]
struct Ascent {
    v: Vec<f64>,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

impl Ascent {
    fn objective(&self) -> f64 {
        *self.trace.last().expect("trace holds the start value")
    }
}

fn ascend(
    x: ArrayView2<'_, f64>,
    rows: &[Vec<f64>],
    mut v: Vec<f64>,
    tolerance: f64,
    max_iterations: usize,
) -> Ascent {
    let mut objective = l1_objective(x, &v);
    let mut trace = vec![objective];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iterations {
        // sign(0) counts as +1
        let mut signs: Vec<bool> = rows.iter().map(|r| dot(r, &v) >= 0.0).collect();
        let mut candidate = unit_signed_row_sum(rows, &signs);
        if distance(&candidate, &v) <= tolerance {
            if !flip_best_sign(rows, &mut signs, tolerance) {
                converged = true;
                break;
            }
            candidate = unit_signed_row_sum(rows, &signs);
        }
        iterations += 1;

        let next_objective = l1_objective(x, &candidate);
        if next_objective < objective {
            // only rounding can get here
            converged = true;
            break;
        }
        v = candidate;
        objective = next_objective;
        trace.push(objective);
    }

    Ascent {
        v,
        trace,
        iterations,
        converged,
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `Xᵀs / ‖Xᵀs‖`. `Xᵀs` cannot vanish here: the ℓ2 start has a positive
/// objective and the objective never decreases.
fn unit_signed_row_sum(rows: &[Vec<f64>], signs: &[bool]) -> Vec<f64> {
    let mut u = signed_row_sum(rows, signs);
    let len = norm2(&u);
    if len > 0.0 {
        u.iter_mut().for_each(|x| *x /= len);
    }
    u
}

fn signed_row_sum(rows: &[Vec<f64>], signs: &[bool]) -> Vec<f64> {
    let mut sum = vec![0.0; rows.first().map_or(0, Vec::len)];
    for (row, &positive) in rows.iter().zip(signs) {
        for (u, &r) in sum.iter_mut().zip(row) {
            if positive {
                *u += r;
            } else {
                *u -= r;
            }
        }
    }
    sum
}

/// Flips the sign whose reversal most increases `‖Xᵀs‖²`, if the gain
/// exceeds `tolerance` relative to the current value.
///
/// Flipping `sᵢ` changes `‖u‖²` (with `u = Xᵀs`) by `4(‖xᵢ‖² − sᵢ xᵢᵀu)`.
fn flip_best_sign(rows: &[Vec<f64>], signs: &mut [bool], tolerance: f64) -> bool {
    let u = signed_row_sum(rows, signs);
    let current = dot(&u, &u);
    let best = rows
        .iter()
        .zip(signs.iter())
        .enumerate()
        .map(|(i, (row, &positive))| {
            let proj = dot(row, &u);
            let signed = if positive { proj } else { -proj };
            (i, 4.0 * (dot(row, row) - signed))
        })
        .fold(None, |best: Option<(usize, f64)>, cur| match best {
            Some(b) if b.1 >= cur.1 => Some(b),
            _ => Some(cur),
        });
    match best {
        Some((i, gain)) if gain > tolerance * current.max(f64::MIN_POSITIVE) => {
            signs[i] = !signs[i];
            true
        }
        _ => false,
    }
}
