//! Dense symmetric/PSD matrix primitives.
//!
//! Everything downstream (covariance factories, joint models, deviation
//! statistics) is built on the handful of operations in this module:
//! symmetric eigendecomposition, PSD square root, Moore-Penrose
//! pseudoinverse, operator norms, and the effective rank
//! `r(A) = tr(A) / ||A||`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Relative eigenvalue cutoff below which a PSD matrix is treated as singular.
pub const PINV_REL_TOL: f64 = 1e-10;

/// Eigenvalues above `-PSD_REL_TOL * lambda_max` are clipped to zero; anything
/// more negative is rejected as not positive semidefinite.
pub const PSD_REL_TOL: f64 = 1e-10;

/// Default relative tolerance for the power-method operator norm.
pub const POWER_REL_TOL: f64 = 1e-9;

/// Maximum power-iteration sweeps before the single deterministic restart.
pub const POWER_MAX_SWEEPS: usize = 1000;

/// Largest dimension for which the exact operator norm runs a full SVD.
/// Above this the exact path falls back to iterating `x -> A^T (A x)` with a
/// tight tolerance.
pub const EXACT_SVD_MAX_DIM: usize = 512;

#[derive(Debug, Error)]
pub enum MatOpsError {
    #[error("matrix has non-finite entries")]
    InvalidMatrix,
    #[error("matrix is {0}x{1}, expected square")]
    NotSquare(usize, usize),
    #[error("matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {delta:e}")]
    NotSymmetric { i: usize, j: usize, delta: f64 },
    #[error("matrix is not PSD within tolerance: eigenvalue {0:e}")]
    NotPsd(f64),
    #[error("zero covariance matrix has no effective rank")]
    ZeroCovariance,
    #[error("eigendecomposition did not converge")]
    EigenFailure,
    #[error("power iteration did not converge after restart; best estimate {best:e}")]
    ConvergenceFailure { best: f64 },
}

/// Symmetric matrix with validated entries.
///
/// The wrapped storage is exactly symmetric: construction symmetrizes the
/// input after checking that the asymmetry is within roundoff
/// (`1e-12 * (1 + max|entries|)`).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    entries: DMatrix<f64>,
}

impl SymMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self, MatOpsError> {
        let (n, m) = entries.shape();
        if n != m {
            return Err(MatOpsError::NotSquare(n, m));
        }
        if n == 0 {
            return Err(MatOpsError::NotSquare(0, 0));
        }
        if !entries.iter().all(|x| x.is_finite()) {
            return Err(MatOpsError::InvalidMatrix);
        }
        let max_abs = entries.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
        let tol = 1e-12 * (1.0 + max_abs);
        for i in 0..n {
            for j in (i + 1)..n {
                let delta = (entries[(i, j)] - entries[(j, i)]).abs();
                if delta > tol {
                    return Err(MatOpsError::NotSymmetric { i, j, delta });
                }
            }
        }
        let mut sym = entries;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (sym[(i, j)] + sym[(j, i)]);
                sym[(i, j)] = v;
                sym[(j, i)] = v;
            }
        }
        Ok(Self { dim: n, entries: sym })
    }

    pub fn from_diagonal(diag: &DVector<f64>) -> Result<Self, MatOpsError> {
        Self::new(DMatrix::from_diagonal(diag))
    }

    pub fn identity(dim: usize) -> Self {
        Self { dim, entries: DMatrix::identity(dim, dim) }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: DMatrix::zeros(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&x| x == 0.0)
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.
///
/// Eigenvector columns carry a deterministic sign: the entry of largest
/// magnitude in each column is positive. This keeps downstream couplings
/// (which pair eigenvectors by index) reproducible across runs.
#[derive(Debug, Clone)]
pub struct EigenDecomp {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomp {
    /// Reassemble `V diag(f(lambda)) V^T` as an exactly symmetric matrix.
    ///
    /// The product is formed as `W W^T` with `W = V diag(sqrt(f(lambda)))`
    /// whenever `f` maps into the nonnegative reals, which keeps the result
    /// bit-symmetric. Entries of `f(lambda)` must be nonnegative.
    pub fn reassemble_psd(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = self.eigenvalues.map(|l| {
            let v = f(l);
            debug_assert!(v >= 0.0);
            v.sqrt()
        });
        let mut w = self.eigenvectors.clone();
        for (j, s) in scaled.iter().enumerate() {
            w.column_mut(j).scale_mut(*s);
        }
        &w * w.transpose()
    }
}

/// Operator-norm evaluation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum NormMethod {
    /// Full SVD for dimensions up to [`EXACT_SVD_MAX_DIM`]; tight power
    /// iteration above that.
    #[default]
    Exact,
    /// Block power iteration on the Gram operator of the smaller side.
    /// The start block is a fixed hash of the matrix shape and `seed`.
    Power { rel_tol: f64, seed: u64 },
}

impl NormMethod {
    pub fn power() -> Self {
        NormMethod::Power { rel_tol: POWER_REL_TOL, seed: 0 }
    }
}

/// Symmetric eigendecomposition with descending eigenvalues.
pub fn sym_eigen(a: &SymMatrix) -> Result<EigenDecomp, MatOpsError> {
    let eig = a
        .entries
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or(MatOpsError::EigenFailure)?;
    let n = a.dim;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("finite eigenvalues")
    });
    let eigenvalues = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        // Sign convention: largest-magnitude entry positive, first index wins ties.
        let mut pivot = 0;
        let mut best = 0.0_f64;
        for (k, &v) in col.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                pivot = k;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        eigenvectors.column_mut(dst).copy_from(&(col * sign));
    }
    Ok(EigenDecomp { eigenvalues, eigenvectors })
}

fn psd_eigen(a: &SymMatrix) -> Result<EigenDecomp, MatOpsError> {
    let mut eig = sym_eigen(a)?;
    let lambda_max = eig.eigenvalues[0].max(0.0);
    let floor = -PSD_REL_TOL * lambda_max;
    for l in eig.eigenvalues.iter_mut() {
        if *l < floor {
            return Err(MatOpsError::NotPsd(*l));
        }
        if *l < 0.0 {
            *l = 0.0;
        }
    }
    Ok(eig)
}

/// PSD square root `S` with `S S = A` up to roundoff.
///
/// Eigenvalues within `-1e-10 * lambda_max` of zero are clipped; anything
/// more negative is a [`MatOpsError::NotPsd`] error.
pub fn psd_sqrt(a: &SymMatrix) -> Result<SymMatrix, MatOpsError> {
    let eig = psd_eigen(a)?;
    SymMatrix::new(eig.reassemble_psd(f64::sqrt))
}

/// Moore-Penrose pseudoinverse of a PSD matrix.
///
/// Eigenvalues `<= rel_tol * lambda_max` are treated as exact zeros, so the
/// zero matrix maps to the zero matrix.
pub fn pseudo_inverse(a: &SymMatrix, rel_tol: f64) -> Result<SymMatrix, MatOpsError> {
    let eig = psd_eigen(a)?;
    let cutoff = rel_tol * eig.eigenvalues[0].max(0.0);
    SymMatrix::new(eig.reassemble_psd(|l| if l <= cutoff { 0.0 } else { 1.0 / l }))
}

/// Largest singular value of a rectangular matrix.
pub fn operator_norm(a: &DMatrix<f64>, method: NormMethod) -> Result<f64, MatOpsError> {
    if !a.iter().all(|x| x.is_finite()) {
        return Err(MatOpsError::InvalidMatrix);
    }
    if a.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    match method {
        NormMethod::Exact => {
            if a.nrows().max(a.ncols()) <= EXACT_SVD_MAX_DIM {
                let svd = a
                    .clone()
                    .try_svd(false, false, f64::EPSILON, 0)
                    .ok_or(MatOpsError::EigenFailure)?;
                Ok(svd.singular_values.max())
            } else {
                power_norm(a, 1e-13, 0)
            }
        }
        NormMethod::Power { rel_tol, seed } => power_norm(a, rel_tol, seed),
    }
}

/// Effective rank `tr(A) / ||A||` of a nonzero PSD matrix.
///
/// The trace is taken over the clipped (nonnegative) spectrum, so the result
/// is always in `[1, dim]`.
pub fn effective_rank(a: &SymMatrix) -> Result<f64, MatOpsError> {
    let eig = psd_eigen(a)?;
    let lambda_max = eig.eigenvalues[0];
    if lambda_max == 0.0 {
        return Err(MatOpsError::ZeroCovariance);
    }
    Ok(eig.eigenvalues.sum() / lambda_max)
}

/// SplitMix64 step; the workhorse for all deterministic seed derivation.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a salt (SplitMix64 composition).
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    splitmix64(seed ^ splitmix64(salt))
}

/// Deterministic start block for the power iteration, derived from the matrix
/// shape and the caller-supplied seed only (never the entries, so power-of-two
/// rescaling of the input cannot change the iteration path).
fn start_block(dim: usize, block: usize, shape: (usize, usize), seed: u64) -> DMatrix<f64> {
    let mut state = mix_seed(seed, (shape.0 as u64) << 32 | shape.1 as u64);
    DMatrix::from_fn(dim, block, |_, _| {
        state = splitmix64(state);
        // map to (-1, 1), avoiding exact zero columns
        (state >> 11) as f64 / (1u64 << 52) as f64 - 1.0 + f64::EPSILON
    })
}

fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().qr().q()
}

/// A rectangular linear map with block apply in both directions, so norms can
/// run matrix-free on factored forms (e.g. `X^T Y / N - Sigma` applied at
/// `O(N d)` per vector instead of materializing the `d x d` matrix).
pub trait LinearMap {
    /// (rows, cols) of the represented matrix.
    fn shape(&self) -> (usize, usize);
    /// `A * Q` for a `cols x b` block.
    fn apply(&self, q: &DMatrix<f64>) -> DMatrix<f64>;
    /// `A^T * Q` for a `rows x b` block.
    fn apply_transpose(&self, q: &DMatrix<f64>) -> DMatrix<f64>;
}

impl LinearMap for DMatrix<f64> {
    fn shape(&self) -> (usize, usize) {
        (self.nrows(), self.ncols())
    }

    fn apply(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        self * q
    }

    fn apply_transpose(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        self.transpose() * q
    }
}

/// Block power iteration (subspace iteration with Rayleigh-Ritz extraction)
/// on the Gram operator of the smaller side. A block of 4 protects against
/// the slow convergence a single vector suffers when the top singular values
/// nearly coincide.
///
/// Stopping combines the residual bound `|theta - lambda| <= ||M q - theta q||`
/// with the quadratic Kato-Temple refinement `residual^2 / gap` when the Ritz
/// gap is resolved. One deterministic restart fires on stagnation only.
pub fn power_norm_of(op: &impl LinearMap, rel_tol: f64, seed: u64) -> Result<f64, MatOpsError> {
    let (rows, cols) = op.shape();
    let gram_on_cols = cols <= rows;
    let dim = rows.min(cols);
    let block = dim.min(4);

    let apply = |q: &DMatrix<f64>| -> DMatrix<f64> {
        if gram_on_cols {
            op.apply_transpose(&op.apply(q))
        } else {
            op.apply(&op.apply_transpose(q))
        }
    };

    let mut best = 0.0_f64;
    for attempt in 0..2 {
        let mut q = orthonormalize(&start_block(dim, block, (rows, cols), seed + attempt));
        for _ in 0..POWER_MAX_SWEEPS {
            let z = apply(&q);
            if z.amax() == 0.0 {
                // the random block sits in the kernel: zero operator
                return Ok(0.0);
            }
            // Rayleigh-Ritz on the current block
            let small = q.transpose() * &z;
            let small = SymMatrix::new(0.5 * (&small + small.transpose()))
                .map_err(|_| MatOpsError::InvalidMatrix)?;
            let ritz = sym_eigen(&small)?;
            let theta = ritz.eigenvalues[0];
            let y = ritz.eigenvectors.column(0).into_owned();
            let v = &q * &y;
            let residual = (&z * &y - theta * &v).norm();
            best = best.max(theta);
            if theta > 0.0 {
                let gap = if block > 1 { theta - ritz.eigenvalues[1] } else { 0.0 };
                let err_bound = if residual < 0.5 * gap {
                    (residual * residual / (gap - residual)).min(residual)
                } else {
                    residual
                };
                if err_bound <= rel_tol * theta {
                    return Ok(theta.sqrt());
                }
            }
            q = orthonormalize(&z);
        }
    }
    Err(MatOpsError::ConvergenceFailure { best: best.max(0.0).sqrt() })
}

fn power_norm(a: &DMatrix<f64>, rel_tol: f64, seed: u64) -> Result<f64, MatOpsError> {
    power_norm_of(a, rel_tol, seed)
}
