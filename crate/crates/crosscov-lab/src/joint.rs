//! Joint Gaussian models with prescribed marginals and tunable cross-coupling.
//!
//! The coupling is parametrized as `Sigma_XY = Sigma_X^{1/2} C Sigma_Y^{1/2}`
//! with a contraction `C` (`||C|| <= 1`), which is exactly the feasibility
//! region for the joint covariance block matrix to be PSD. Every admissible
//! cross-covariance is therefore reachable.
//!
//! Assembly also computes the Gaussian regression decomposition
//! `Y = L X + Z` with `L = Sigma_YX Sigma_X^+` and `Z` independent of `X`,
//! along with the split `Sigma_Y = P + Q`, `P = L Sigma_X L^T`, `Q = Sigma_Z`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::matops::{self, MatOpsError, NormMethod, SymMatrix, PINV_REL_TOL};
use crate::spectra::CovarianceModel;

/// Strict cap on coupling strength; keeps `Sigma_Z` numerically PSD.
pub const COUPLING_CAP: f64 = 1.0 - 1e-9;

#[derive(Debug, Error)]
pub enum JointModelError {
    #[error("coupling strength rho = {0} outside [0, 1)")]
    InvalidRho(f64),
    #[error("custom coupling matrix is {got_rows}x{got_cols}, expected {rows}x{cols}")]
    CouplingShape { rows: usize, cols: usize, got_rows: usize, got_cols: usize },
    #[error("coupling is infeasible: operator norm {0} exceeds {COUPLING_CAP}")]
    InfeasibleCoupling(f64),
    #[error("residual covariance is not PSD within tolerance: eigenvalue {0:e}")]
    NotPsd(f64),
    #[error(transparent)]
    MatOps(#[from] MatOpsError),
}

/// Cross-coupling between the two marginals.
#[derive(Debug, Clone)]
pub enum CouplingSpec {
    /// `Sigma_XY = 0`.
    Independent,
    /// `C = rho J` in the eigenbases of the marginals: the top eigenvector of
    /// `X` couples to the top eigenvector of `Y`, and so on down the spectra.
    Aligned { rho: f64 },
    /// Arbitrary contraction in ambient coordinates.
    Custom { c: DMatrix<f64> },
}

impl CouplingSpec {
    pub fn aligned(rho: f64) -> Result<Self, JointModelError> {
        if !(rho.is_finite() && (0.0..1.0).contains(&rho)) {
            return Err(JointModelError::InvalidRho(rho));
        }
        // values in (cap, 1) collapse to the cap; exact rho = 1 lives on the
        // self-coupled pathway instead
        Ok(CouplingSpec::Aligned { rho: rho.min(COUPLING_CAP) })
    }

    pub fn label(&self) -> String {
        match self {
            CouplingSpec::Independent => "independent".to_string(),
            CouplingSpec::Aligned { rho } => format!("aligned({rho})"),
            CouplingSpec::Custom { .. } => "custom".to_string(),
        }
    }
}

/// Jointly Gaussian `(X, Y)` with every derived object cached:
/// cross-covariance, regression factor `L`, residual covariance, and the
/// `P + Q = Sigma_Y` split with effective ranks where defined.
#[derive(Debug, Clone)]
pub struct JointGaussianModel {
    pub sigma_x: CovarianceModel,
    pub sigma_y: CovarianceModel,
    pub sigma_xy: DMatrix<f64>,
    /// Regression factor `L = Sigma_YX Sigma_X^+` (d_Y x d_X).
    pub l: DMatrix<f64>,
    /// Residual covariance `Sigma_Z = Sigma_Y - L Sigma_X L^T`.
    pub sigma_z: SymMatrix,
    /// Cached PSD square root of `Sigma_Z`, used by the sampler.
    pub sigma_z_sqrt: DMatrix<f64>,
    /// `P = L Sigma_X L^T`.
    pub p: SymMatrix,
    /// `Q = Sigma_Z`.
    pub q: SymMatrix,
    pub r_x: f64,
    pub r_y: f64,
    /// Effective rank of `P`, absent when `P = 0` (independent coupling).
    pub r_p: Option<f64>,
    /// Effective rank of `Q`, absent when `Q = 0` (perfect dependence).
    pub r_q: Option<f64>,
    pub coupling_label: String,
}

fn eff_rank_or_none(m: &SymMatrix, block_scale: f64) -> Result<Option<f64>, MatOpsError> {
    // treat blocks at roundoff scale (relative to Sigma_Y) as zero
    if m.as_matrix().amax() <= 1e-12 * block_scale.max(1e-300) {
        return Ok(None);
    }
    matops::effective_rank(m).map(Some)
}

/// PSD square root of the residual covariance, with the PSD tolerance taken
/// relative to `||Sigma_Y||` rather than to the residual's own top eigenvalue
/// (the residual may be zero up to roundoff).
fn residual_sqrt(m: &SymMatrix, sigma_y_norm: f64) -> Result<DMatrix<f64>, JointModelError> {
    let eig = matops::sym_eigen(m)?;
    let min = eig.eigenvalues[m.dim() - 1];
    if min < -1e-10 * sigma_y_norm {
        return Err(JointModelError::NotPsd(min));
    }
    Ok(eig.reassemble_psd(|l| l.max(0.0).sqrt()))
}

/// Assemble a joint Gaussian model from marginals and a coupling.
pub fn assemble(
    sigma_x: &CovarianceModel,
    sigma_y: &CovarianceModel,
    coupling: &CouplingSpec,
) -> Result<JointGaussianModel, JointModelError> {
    let (dx, dy) = (sigma_x.dim(), sigma_y.dim());
    let coupling_label = coupling.label();

    let c_ambient: DMatrix<f64> = match coupling {
        CouplingSpec::Independent => DMatrix::zeros(dx, dy),
        CouplingSpec::Aligned { rho } => {
            if !(rho.is_finite() && (0.0..1.0).contains(rho)) {
                return Err(JointModelError::InvalidRho(*rho));
            }
            let rho = rho.min(COUPLING_CAP);
            // rho J expressed in the eigenbases: V_X (rho J) V_Y^T
            let mut j = DMatrix::zeros(dx, dy);
            for i in 0..dx.min(dy) {
                j[(i, i)] = rho;
            }
            &sigma_x.eig.eigenvectors * j * sigma_y.eig.eigenvectors.transpose()
        }
        CouplingSpec::Custom { c } => {
            if c.shape() != (dx, dy) {
                return Err(JointModelError::CouplingShape {
                    rows: dx,
                    cols: dy,
                    got_rows: c.nrows(),
                    got_cols: c.ncols(),
                });
            }
            let norm = matops::operator_norm(c, NormMethod::Exact)?;
            if norm > COUPLING_CAP {
                return Err(JointModelError::InfeasibleCoupling(norm));
            }
            c.clone()
        }
    };

    let sigma_xy = &sigma_x.sqrt * &c_ambient * &sigma_y.sqrt;
    let pinv_x = matops::pseudo_inverse(&sigma_x.matrix, PINV_REL_TOL)?;
    let l = sigma_xy.transpose() * pinv_x.as_matrix();

    // P = (L Sigma_X^{1/2})(L Sigma_X^{1/2})^T is exactly symmetric
    let half = &l * &sigma_x.sqrt;
    let p = SymMatrix::new(&half * half.transpose())?;
    let sigma_z_raw = sigma_y.matrix.as_matrix() - p.as_matrix();
    let sigma_z = SymMatrix::new(sigma_z_raw)?;

    // The joint block matrix is PSD iff this Schur complement is PSD (the
    // range condition holds by construction of Sigma_XY); a failure here
    // means the coupling was infeasible after all.
    let sigma_z_sqrt = residual_sqrt(&sigma_z, sigma_y.op_norm)
        .map_err(|e| match e {
            JointModelError::NotPsd(l) => JointModelError::InfeasibleCoupling(l),
            other => other,
        })?;

    let r_p = eff_rank_or_none(&p, sigma_y.op_norm)?;
    let r_q = eff_rank_or_none(&sigma_z, sigma_y.op_norm)?;

    Ok(JointGaussianModel {
        r_x: sigma_x.eff_rank,
        r_y: sigma_y.eff_rank,
        sigma_x: sigma_x.clone(),
        sigma_y: sigma_y.clone(),
        sigma_xy,
        l,
        q: sigma_z.clone(),
        sigma_z,
        sigma_z_sqrt,
        p,
        r_p,
        r_q,
        coupling_label,
    })
}

/// The perfectly dependent model `X = Y` (`Sigma_X = Sigma_Y = Sigma_XY`),
/// which sits outside the strict contraction cap of [`assemble`]. Here
/// `L = Sigma Sigma^+` is the orthogonal projector onto the range of `Sigma`
/// and the residual covariance vanishes on that range.
pub fn self_coupled(sigma: &CovarianceModel) -> Result<JointGaussianModel, JointModelError> {
    let pinv = matops::pseudo_inverse(&sigma.matrix, PINV_REL_TOL)?;
    let l = sigma.matrix.as_matrix() * pinv.as_matrix();
    let half = &l * &sigma.sqrt;
    let p = SymMatrix::new(&half * half.transpose())?;
    let sigma_z = SymMatrix::new(sigma.matrix.as_matrix() - p.as_matrix())?;
    let sigma_z_sqrt = residual_sqrt(&sigma_z, sigma.op_norm)?;
    let r_p = eff_rank_or_none(&p, sigma.op_norm)?;
    let r_q = eff_rank_or_none(&sigma_z, sigma.op_norm)?;
    Ok(JointGaussianModel {
        r_x: sigma.eff_rank,
        r_y: sigma.eff_rank,
        sigma_x: sigma.clone(),
        sigma_y: sigma.clone(),
        sigma_xy: sigma.matrix.as_matrix().clone(),
        l,
        q: sigma_z.clone(),
        sigma_z,
        sigma_z_sqrt,
        p,
        r_p,
        r_q,
        coupling_label: "self".to_string(),
    })
}

impl JointGaussianModel {
    /// The regression decomposition `(L, Sigma_Z)` of `Y = L X + Z`.
    ///
    /// Re-validates that the residual covariance is PSD within tolerance.
    pub fn regression_decompose(&self) -> Result<(&DMatrix<f64>, &SymMatrix), JointModelError> {
        let eig = matops::sym_eigen(&self.sigma_z)?;
        let min = eig.eigenvalues[self.sigma_z.dim() - 1];
        if min < -1e-10 * self.sigma_y.op_norm {
            return Err(JointModelError::NotPsd(min));
        }
        Ok((&self.l, &self.sigma_z))
    }

    pub fn dim_x(&self) -> usize {
        self.sigma_x.dim()
    }

    pub fn dim_y(&self) -> usize {
        self.sigma_y.dim()
    }
}
