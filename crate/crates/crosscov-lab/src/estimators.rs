//! Sample cross-covariance, deviation norms, the `A_N + B_N` split, and
//! Monte Carlo aggregation into deviation statistics.
//!
//! Floating-point aggregation is always reduced in replicate-index order, so
//! results are bit-identical no matter how the replicates were scheduled.

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::joint::JointGaussianModel;
use crate::matops::{self, MatOpsError, NormMethod};
use crate::samplers::{
    self, replicate_seed, FamilyKind, PairMode, SampleBatch,
};
use crate::spectra::CovarianceModel;

/// Minimum number of replicates for a Monte Carlo deviation summary.
pub const MIN_REPS: usize = 50;

/// A tail quantile is reported as reliable only when at least this many
/// replicates are expected beyond it (`exp(-u) * reps >= 20`).
pub const MIN_TAIL_SAMPLES: f64 = 20.0;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("deviation target has shape {got_rows}x{got_cols}, expected {rows}x{cols}")]
    ShapeError { rows: usize, cols: usize, got_rows: usize, got_cols: usize },
    #[error("batch does not retain regression residuals")]
    MissingResiduals,
    #[error("need at least {MIN_REPS} replicates, got {0}")]
    TooFewReps(usize),
    #[error("u levels must satisfy u >= 1, got {0}")]
    InvalidULevel(f64),
    #[error(transparent)]
    MatOps(#[from] MatOpsError),
}

/// What to sample at each replicate: a joint Gaussian model (arbitrary
/// coupling) or a marginally-specified isotropic pair.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum DataModel {
    JointGaussian(JointGaussianModel),
    IsotropicPair {
        sigma_x: CovarianceModel,
        sigma_y: CovarianceModel,
        family: FamilyKind,
        mode: PairMode,
    },
}

impl DataModel {
    pub fn sample(&self, n: usize, seed: u64) -> SampleBatch {
        match self {
            DataModel::JointGaussian(model) => samplers::sample_joint_gaussian(model, n, seed),
            DataModel::IsotropicPair { sigma_x, sigma_y, family, mode } => {
                samplers::sample_subgaussian_pair(sigma_x, sigma_y, *family, *mode, n, seed)
            }
        }
    }

    /// The exact `E X Y^T` of the scheme; deviations are always measured from
    /// this, never from a plug-in estimate.
    pub fn cross_covariance(&self) -> DMatrix<f64> {
        match self {
            DataModel::JointGaussian(model) => model.sigma_xy.clone(),
            DataModel::IsotropicPair { sigma_x, sigma_y, mode, .. } => {
                samplers::subgaussian_cross_cov(sigma_x, sigma_y, *mode)
            }
        }
    }

    pub fn sigma_x(&self) -> &CovarianceModel {
        match self {
            DataModel::JointGaussian(m) => &m.sigma_x,
            DataModel::IsotropicPair { sigma_x, .. } => sigma_x,
        }
    }

    pub fn sigma_y(&self) -> &CovarianceModel {
        match self {
            DataModel::JointGaussian(m) => &m.sigma_y,
            DataModel::IsotropicPair { sigma_y, .. } => sigma_y,
        }
    }

    pub fn family(&self) -> FamilyKind {
        match self {
            DataModel::JointGaussian(_) => FamilyKind::Gaussian,
            DataModel::IsotropicPair { family, .. } => *family,
        }
    }

    pub fn coupling_label(&self) -> String {
        match self {
            DataModel::JointGaussian(m) => m.coupling_label.clone(),
            DataModel::IsotropicPair { mode, .. } => mode.name().to_string(),
        }
    }
}

/// Empirical quantile of the deviation at confidence level `1 - exp(-u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UQuantile {
    pub u: f64,
    pub value: f64,
    /// False when fewer than [`MIN_TAIL_SAMPLES`] replicates are expected in
    /// the tail; such quantiles are flagged, never silently reported.
    pub reliable: bool,
}

/// Monte Carlo summary of the deviation norm over replicates.
#[derive(Debug, Clone)]
pub struct DeviationStats {
    pub reps: usize,
    pub mean: f64,
    pub std_error: f64,
    /// Sorted by `u`; order statistics without interpolation.
    pub quantiles: Vec<UQuantile>,
    pub per_rep: Option<Vec<f64>>,
}

impl DeviationStats {
    /// Aggregate per-replicate deviation values (indexed by replicate) into
    /// mean, standard error and tail quantiles.
    pub fn from_per_rep(
        per_rep: Vec<f64>,
        u_grid: &[f64],
        retain_per_rep: bool,
    ) -> Result<Self, EstimatorError> {
        let reps = per_rep.len();
        if reps < MIN_REPS {
            return Err(EstimatorError::TooFewReps(reps));
        }
        for &u in u_grid {
            if !(u.is_finite() && u >= 1.0) {
                return Err(EstimatorError::InvalidULevel(u));
            }
        }
        // fixed-order reduction by replicate index
        let mean = per_rep.iter().sum::<f64>() / reps as f64;
        let var = per_rep.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
        let std_error = (var / reps as f64).sqrt();

        let mut sorted = per_rep.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite deviations"));
        let mut quantiles: Vec<UQuantile> = u_grid
            .iter()
            .map(|&u| {
                let level = 1.0 - (-u).exp();
                let rank = (reps as f64 * level).ceil() as usize;
                let rank = rank.clamp(1, reps);
                UQuantile {
                    u,
                    value: sorted[rank - 1],
                    reliable: (-u).exp() * reps as f64 >= MIN_TAIL_SAMPLES,
                }
            })
            .collect();
        quantiles.sort_by(|a, b| a.u.partial_cmp(&b.u).expect("finite u"));

        Ok(Self {
            reps,
            mean,
            std_error,
            quantiles,
            per_rep: retain_per_rep.then_some(per_rep),
        })
    }
}

/// `(1/N) sum_i X_i Y_i^T`.
pub fn sample_cross_cov(batch: &SampleBatch) -> DMatrix<f64> {
    batch.x.transpose() * &batch.y / batch.n as f64
}

/// The deviation matrix `X^T Y / N - sigma_xy` as a matrix-free operator, so
/// the power-method norm costs `O(N d)` per matvec. The exact (SVD) path
/// still materializes the matrix.
struct DeviationOp<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DMatrix<f64>,
    n: f64,
    sigma_xy: &'a DMatrix<f64>,
    sigma_is_zero: bool,
}

impl<'a> DeviationOp<'a> {
    fn new(x: &'a DMatrix<f64>, y: &'a DMatrix<f64>, sigma_xy: &'a DMatrix<f64>) -> Self {
        Self {
            x,
            y,
            n: x.nrows() as f64,
            sigma_xy,
            sigma_is_zero: sigma_xy.iter().all(|&v| v == 0.0),
        }
    }
}

impl matops::LinearMap for DeviationOp<'_> {
    fn shape(&self) -> (usize, usize) {
        (self.x.ncols(), self.y.ncols())
    }

    fn apply(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let gram = self.x.transpose() * (self.y * q) / self.n;
        if self.sigma_is_zero {
            gram
        } else {
            gram - self.sigma_xy * q
        }
    }

    fn apply_transpose(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let gram = self.y.transpose() * (self.x * q) / self.n;
        if self.sigma_is_zero {
            gram
        } else {
            gram - self.sigma_xy.transpose() * q
        }
    }
}

/// `(1/N) sum_i X_i X_i^T` over a bare sample block: the dedicated
/// covariance-only estimator.
pub fn sample_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.transpose() * x / x.nrows() as f64
}

/// Operator norm of `(1/N) sum_i X_i Y_i^T - sigma_xy`.
pub fn deviation_norm(
    batch: &SampleBatch,
    sigma_xy: &DMatrix<f64>,
    method: NormMethod,
) -> Result<f64, EstimatorError> {
    let expected = (batch.x.ncols(), batch.y.ncols());
    if sigma_xy.shape() != expected {
        return Err(EstimatorError::ShapeError {
            rows: expected.0,
            cols: expected.1,
            got_rows: sigma_xy.nrows(),
            got_cols: sigma_xy.ncols(),
        });
    }
    match method {
        NormMethod::Power { rel_tol, seed } => {
            let op = DeviationOp::new(&batch.x, &batch.y, sigma_xy);
            Ok(matops::power_norm_of(&op, rel_tol, seed)?)
        }
        NormMethod::Exact => {
            let dev = sample_cross_cov(batch) - sigma_xy;
            Ok(matops::operator_norm(&dev, method)?)
        }
    }
}

/// Operator norm of `(1/N) sum_i X_i X_i^T - sigma` on the covariance-only
/// path; shares the numeric kernels with [`deviation_norm`] so the `X = Y`
/// pipeline reproduces it bit-exactly.
pub fn covariance_deviation_norm(
    x: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    method: NormMethod,
) -> Result<f64, EstimatorError> {
    if sigma.shape() != (x.ncols(), x.ncols()) {
        return Err(EstimatorError::ShapeError {
            rows: x.ncols(),
            cols: x.ncols(),
            got_rows: sigma.nrows(),
            got_cols: sigma.ncols(),
        });
    }
    match method {
        NormMethod::Power { rel_tol, seed } => {
            let op = DeviationOp::new(x, x, sigma);
            Ok(matops::power_norm_of(&op, rel_tol, seed)?)
        }
        NormMethod::Exact => {
            let dev = sample_covariance(x) - sigma;
            Ok(matops::operator_norm(&dev, method)?)
        }
    }
}

/// Monte Carlo deviation statistics over `reps` independent batches.
///
/// Replicate `r` draws its batch from seed `hash(master_seed, r)`; the
/// replicates run in parallel and are aggregated in index order.
pub fn mc_deviation(
    model: &DataModel,
    n: usize,
    reps: usize,
    master_seed: u64,
    u_grid: &[f64],
    method: NormMethod,
    retain_per_rep: bool,
) -> Result<DeviationStats, EstimatorError> {
    if reps < MIN_REPS {
        return Err(EstimatorError::TooFewReps(reps));
    }
    let sigma_xy = model.cross_covariance();
    let per_rep: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let batch = model.sample(n, replicate_seed(master_seed, r));
            deviation_norm(&batch, &sigma_xy, method)
        })
        .collect::<Result<_, _>>()?;
    DeviationStats::from_per_rep(per_rep, u_grid, retain_per_rep)
}

/// Norms of the two pieces of the regression split of the deviation:
/// `A_N = ((1/N) sum X_i X_i^T - Sigma_X) L^T` and
/// `B_N = (1/N) sum X_i Z_i^T`, which add up to the full deviation matrix.
#[derive(Debug, Clone, Copy)]
pub struct DeviationSplit {
    pub norm_a: f64,
    pub norm_b: f64,
    pub norm_total: f64,
}

/// Split the deviation of a joint-Gaussian batch into the correlated term and
/// the independent residual term. Requires the batch to retain residuals.
pub fn decompose_deviation(
    model: &JointGaussianModel,
    batch: &SampleBatch,
    method: NormMethod,
) -> Result<DeviationSplit, EstimatorError> {
    let z = batch.residuals.as_ref().ok_or(EstimatorError::MissingResiduals)?;
    let n = batch.n as f64;
    let a = (sample_covariance(&batch.x) - model.sigma_x.matrix.as_matrix()) * model.l.transpose();
    let b = batch.x.transpose() * z / n;
    let total = &a + &b;
    Ok(DeviationSplit {
        norm_a: matops::operator_norm(&a, method)?,
        norm_b: matops::operator_norm(&b, method)?,
        norm_total: matops::operator_norm(&total, method)?,
    })
}

/// Max-entry residual of the identity `A_N + B_N = deviation matrix`; the
/// reconstruction diagnostic used by tests and the verification suite.
pub fn decomposition_residual(model: &JointGaussianModel, batch: &SampleBatch) -> f64 {
    let z = batch.residuals.as_ref().expect("residuals retained");
    let n = batch.n as f64;
    let a = (sample_covariance(&batch.x) - model.sigma_x.matrix.as_matrix()) * model.l.transpose();
    let b = batch.x.transpose() * z / n;
    let direct = sample_cross_cov(batch) - &model.sigma_xy;
    (a + b - direct).amax()
}
