//! Parametrized eigenvalue profiles and covariance factories.
//!
//! Experiments need to vary the effective rank `r = tr/||.||` independently
//! of the ambient dimension. A [`SpectrumSpec`] pins an eigenvalue profile;
//! [`build_covariance`] turns it into a concrete matrix, optionally rotated
//! by a seeded Haar-distributed orthogonal matrix. The spectrum, not the
//! assembled matrix, is the source of truth for the analytic trace, operator
//! norm and effective rank, so experiment bookkeeping never accumulates
//! eigensolver error.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::matops::{EigenDecomp, MatOpsError, SymMatrix};

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("spectrum dimension must be >= 1")]
    EmptySpectrum,
    #[error("invalid spectrum parameter: {0}")]
    InvalidParameter(String),
    #[error("custom spectrum must be finite, nonnegative and not all zero")]
    InvalidCustomSpectrum,
    #[error(transparent)]
    MatOps(#[from] MatOpsError),
}

/// Eigenvalue profile family.
#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumFamily {
    /// `d` copies of 1 (times scale): effective rank `d`.
    Flat { d: usize },
    /// `j^{-alpha}` for `j = 1..d`.
    Poly { d: usize, alpha: f64 },
    /// `exp(-beta (j-1))` for `j = 1..d`.
    ExpDecay { d: usize, beta: f64 },
    /// `k` spikes of height `s` over a flat bulk of `d - k` ones.
    Spiked { d: usize, k: usize, s: f64 },
    /// Explicit eigenvalue list (validated and sorted descending).
    Custom { eigenvalues: Vec<f64> },
}

/// A validated eigenvalue profile with an overall scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSpec {
    pub family: SpectrumFamily,
    pub scale: f64,
}

impl SpectrumSpec {
    pub fn new(family: SpectrumFamily, scale: f64) -> Result<Self, SpectrumError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(SpectrumError::InvalidParameter(format!("scale = {scale}")));
        }
        match &family {
            SpectrumFamily::Flat { d } => {
                if *d == 0 {
                    return Err(SpectrumError::EmptySpectrum);
                }
            }
            SpectrumFamily::Poly { d, alpha } => {
                if *d == 0 {
                    return Err(SpectrumError::EmptySpectrum);
                }
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(SpectrumError::InvalidParameter(format!("alpha = {alpha}")));
                }
            }
            SpectrumFamily::ExpDecay { d, beta } => {
                if *d == 0 {
                    return Err(SpectrumError::EmptySpectrum);
                }
                if !(beta.is_finite() && *beta > 0.0) {
                    return Err(SpectrumError::InvalidParameter(format!("beta = {beta}")));
                }
            }
            SpectrumFamily::Spiked { d, k, s } => {
                if *d == 0 {
                    return Err(SpectrumError::EmptySpectrum);
                }
                if *k == 0 || k > d {
                    return Err(SpectrumError::InvalidParameter(format!("k = {k}, d = {d}")));
                }
                if !(s.is_finite() && *s >= 1.0) {
                    return Err(SpectrumError::InvalidParameter(format!("s = {s}")));
                }
            }
            SpectrumFamily::Custom { eigenvalues } => {
                if eigenvalues.is_empty() {
                    return Err(SpectrumError::EmptySpectrum);
                }
                let ok = eigenvalues.iter().all(|l| l.is_finite() && *l >= 0.0);
                if !ok || eigenvalues.iter().all(|&l| l == 0.0) {
                    return Err(SpectrumError::InvalidCustomSpectrum);
                }
            }
        }
        Ok(Self { family, scale })
    }

    pub fn dim(&self) -> usize {
        match &self.family {
            SpectrumFamily::Flat { d }
            | SpectrumFamily::Poly { d, .. }
            | SpectrumFamily::ExpDecay { d, .. }
            | SpectrumFamily::Spiked { d, .. } => *d,
            SpectrumFamily::Custom { eigenvalues } => eigenvalues.len(),
        }
    }

    /// Eigenvalues of the spectrum, sorted descending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut vals: Vec<f64> = match &self.family {
            SpectrumFamily::Flat { d } => vec![self.scale; *d],
            SpectrumFamily::Poly { d, alpha } => {
                (1..=*d).map(|j| self.scale * (j as f64).powf(-alpha)).collect()
            }
            SpectrumFamily::ExpDecay { d, beta } => {
                (1..=*d).map(|j| self.scale * (-beta * (j as f64 - 1.0)).exp()).collect()
            }
            SpectrumFamily::Spiked { d, k, s } => {
                let mut v = vec![self.scale * s; *k];
                v.extend(std::iter::repeat_n(self.scale, d - k));
                v
            }
            SpectrumFamily::Custom { eigenvalues } => {
                eigenvalues.iter().map(|l| self.scale * l).collect()
            }
        };
        vals.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
        vals
    }

    /// Analytic effective rank `sum(lambda) / lambda_1`.
    pub fn effective_rank(&self) -> f64 {
        let vals = self.eigenvalues();
        let total: f64 = vals.iter().sum();
        total / vals[0]
    }
}

/// How to orient the eigenbasis of a generated covariance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rotation {
    /// Diagonal matrix in the standard basis.
    None,
    /// Conjugate by a seeded Haar-distributed orthogonal matrix.
    Random { seed: u64 },
}

/// A covariance matrix together with its cached decomposition and analytic
/// summaries. `eff_rank` always equals `trace / op_norm` of the generating
/// spectrum exactly.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    pub matrix: SymMatrix,
    pub eig: EigenDecomp,
    /// Cached PSD square root, used by the samplers on every draw.
    pub sqrt: DMatrix<f64>,
    pub op_norm: f64,
    pub trace: f64,
    pub eff_rank: f64,
    pub label: String,
}

impl CovarianceModel {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

/// Haar-distributed orthogonal matrix from the QR of a seeded Gaussian
/// matrix, with the sign convention `diag(R) > 0`.
pub fn random_orthogonal(dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Assemble the covariance matrix `Q diag(lambda) Q^T` for a spectrum.
pub fn build_covariance(
    spec: &SpectrumSpec,
    rotation: Rotation,
    label: impl Into<String>,
) -> Result<CovarianceModel, SpectrumError> {
    let vals = spec.eigenvalues();
    let eigenvalues = DVector::from_vec(vals.clone());
    let dim = vals.len();
    let eigenvectors = match rotation {
        Rotation::None => DMatrix::identity(dim, dim),
        Rotation::Random { seed } => random_orthogonal(dim, seed),
    };
    let eig = EigenDecomp { eigenvalues, eigenvectors };
    let matrix = SymMatrix::new(eig.reassemble_psd(|l| l))?;
    let sqrt = {
        let mut w = eig.eigenvectors.clone();
        for (j, l) in eig.eigenvalues.iter().enumerate() {
            w.column_mut(j).scale_mut(l.sqrt());
        }
        &w * eig.eigenvectors.transpose()
    };
    let op_norm = vals[0];
    let trace: f64 = vals.iter().sum();
    Ok(CovarianceModel {
        matrix,
        eig,
        sqrt,
        op_norm,
        trace,
        eff_rank: trace / op_norm,
        label: label.into(),
    })
}
