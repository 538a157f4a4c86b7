//! Seeded random generation of isotropic vectors and `(X, Y)` pairs.
//!
//! Reproducibility contract: a batch is a pure function of `(model, N, seed)`.
//! Each batch owns ChaCha substreams keyed by a role tag, so replicated
//! experiments can derive one seed per replicate (a SplitMix64 hash of the
//! master seed and the replicate index) and generate in parallel, in any
//! order, on any number of threads, with bit-identical output.

use nalgebra::DMatrix;
use rand::distr::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::joint::JointGaussianModel;
use crate::matops;
use crate::spectra::CovarianceModel;

/// `sqrt(8/3)`: the sub-Gaussian constant (psi_2 / L_2 ratio) of a centered
/// Gaussian, and the safe envelope used for every family in rate evaluation.
pub const GAUSSIAN_K: f64 = 1.632_993_161_855_452;

/// Numerically observed psi_2/L_2 ratio for Rademacher coordinates, maximized
/// over a fixed direction grid in dimensions <= 8. Recorded as observed, not
/// claimed to be the supremum; linear images of the family approach Gaussian
/// behavior, so [`GAUSSIAN_K`] is used as the envelope in bound evaluation.
pub const RADEMACHER_OBSERVED_K: f64 = 1.53;

/// Numerically observed psi_2/L_2 ratio for uniform coordinates on
/// `[-sqrt(3), sqrt(3)]`, same protocol and caveats as
/// [`RADEMACHER_OBSERVED_K`].
pub const UNIFORM_OBSERVED_K: f64 = 1.55;

pub const SQRT_3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("psi2 estimation needs at least 10^4 samples, got {0}")]
    TooFewSamples(usize),
    #[error("psi2 bisection bracket has no sign change")]
    EstimateUnstable,
}

/// Coordinate distribution of the isotropic source vector. Each coordinate is
/// independent with mean 0 and variance 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FamilyKind {
    Gaussian,
    /// `+/-1` equiprobable.
    Rademacher,
    /// Uniform on `[-sqrt(3), sqrt(3)]`.
    Uniform,
}

impl FamilyKind {
    /// The family's recorded sub-Gaussian constant: exact for Gaussian,
    /// numerically observed for the bounded families.
    pub fn subgaussian_constant(self) -> f64 {
        match self {
            FamilyKind::Gaussian => GAUSSIAN_K,
            FamilyKind::Rademacher => RADEMACHER_OBSERVED_K,
            FamilyKind::Uniform => UNIFORM_OBSERVED_K,
        }
    }

    /// The constant plugged into rate evaluation: the Gaussian envelope for
    /// every family.
    pub fn bound_constant(self) -> f64 {
        GAUSSIAN_K
    }

    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Gaussian => "gaussian",
            FamilyKind::Rademacher => "rademacher",
            FamilyKind::Uniform => "uniform",
        }
    }
}

/// Dependence mode for marginally-specified pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    /// Source vectors for `X` and `Y` are independent.
    Independent,
    /// One isotropic source of dimension `max(d_X, d_Y)`; `X` reads its first
    /// `d_X` coordinates and `Y` its first `d_Y` (maximal dependence with
    /// correct marginals).
    SharedSource,
}

impl PairMode {
    pub fn name(self) -> &'static str {
        match self {
            PairMode::Independent => "independent",
            PairMode::SharedSource => "shared_source",
        }
    }
}

/// Substream tag separating the primary source from the residual source
/// within one batch seed.
#[derive(Debug, Clone, Copy)]
pub enum StreamRole {
    Primary = 0,
    Residual = 1,
}

/// The ChaCha stream for `(seed, role)`.
pub fn stream_rng(seed: u64, role: StreamRole) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(role as u64);
    rng
}

/// Per-replicate batch seed under a master seed.
pub fn replicate_seed(master_seed: u64, replicate: u64) -> u64 {
    matops::mix_seed(master_seed, replicate)
}

/// N paired draws with provenance metadata. Rows of `x` and `y` are the
/// paired observations; `residuals` carries the `Z_i` of the regression
/// decomposition when the batch came from the joint Gaussian sampler.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub n: usize,
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub residuals: Option<DMatrix<f64>>,
    pub seed: u64,
    pub model_label: String,
    pub family: FamilyKind,
    pub coupling_label: String,
}

/// Fill an `n x d` matrix of iid family coordinates.
///
/// Fill order is column-major, so the first `d'` columns of a draw coincide
/// bitwise with a `d'`-column draw from the same stream. The shared-source
/// embedding and the dedicated covariance path rely on this prefix property.
fn isotropic_matrix(family: FamilyKind, n: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, d);
    match family {
        FamilyKind::Gaussian => {
            for j in 0..d {
                for i in 0..n {
                    m[(i, j)] = rng.sample(StandardNormal);
                }
            }
        }
        FamilyKind::Rademacher => {
            for j in 0..d {
                for i in 0..n {
                    m[(i, j)] = if rng.random::<bool>() { 1.0 } else { -1.0 };
                }
            }
        }
        FamilyKind::Uniform => {
            let dist = Uniform::new(-SQRT_3, SQRT_3).expect("valid support");
            for j in 0..d {
                for i in 0..n {
                    m[(i, j)] = rng.sample(dist);
                }
            }
        }
    }
    m
}

/// Draw `X_i = Sigma_X^{1/2} G_i`, `Y_i = L X_i + Sigma_Z^{1/2} G'_i` with
/// independent standard Gaussian sources from the batch's two substreams.
/// Residuals are retained for the deviation decomposition.
pub fn sample_joint_gaussian(model: &JointGaussianModel, n: usize, seed: u64) -> SampleBatch {
    let mut rng_x = stream_rng(seed, StreamRole::Primary);
    let mut rng_z = stream_rng(seed, StreamRole::Residual);
    let g = isotropic_matrix(FamilyKind::Gaussian, n, model.dim_x(), &mut rng_x);
    let x = &g * &model.sigma_x.sqrt;
    let gz = isotropic_matrix(FamilyKind::Gaussian, n, model.dim_y(), &mut rng_z);
    let z = &gz * &model.sigma_z_sqrt;
    let y = &x * model.l.transpose() + &z;
    SampleBatch {
        n,
        x,
        y,
        residuals: Some(z),
        seed,
        model_label: format!("{}|{}", model.sigma_x.label, model.sigma_y.label),
        family: FamilyKind::Gaussian,
        coupling_label: model.coupling_label.clone(),
    }
}

/// Draw `X = Sigma_X^{1/2} Z`, `Y = Sigma_Y^{1/2} W` for an isotropic family,
/// with `W` either independent of `Z` or the shared-source embedding of it.
pub fn sample_subgaussian_pair(
    sigma_x: &CovarianceModel,
    sigma_y: &CovarianceModel,
    family: FamilyKind,
    mode: PairMode,
    n: usize,
    seed: u64,
) -> SampleBatch {
    let (dx, dy) = (sigma_x.dim(), sigma_y.dim());
    let (x, y) = match mode {
        PairMode::Independent => {
            let mut rng_x = stream_rng(seed, StreamRole::Primary);
            let mut rng_y = stream_rng(seed, StreamRole::Residual);
            let z = isotropic_matrix(family, n, dx, &mut rng_x);
            let w = isotropic_matrix(family, n, dy, &mut rng_y);
            (z * &sigma_x.sqrt, w * &sigma_y.sqrt)
        }
        PairMode::SharedSource => {
            let mut rng = stream_rng(seed, StreamRole::Primary);
            let source = isotropic_matrix(family, n, dx.max(dy), &mut rng);
            let z = source.columns(0, dx);
            let w = source.columns(0, dy);
            (z * &sigma_x.sqrt, w * &sigma_y.sqrt)
        }
    };
    SampleBatch {
        n,
        x,
        y,
        residuals: None,
        seed,
        model_label: format!("{}|{}", sigma_x.label, sigma_y.label),
        family,
        coupling_label: mode.name().to_string(),
    }
}

/// Draw only the `X` block. Bitwise identical to the `X` block of
/// [`sample_subgaussian_pair`] with the same seed (both read the primary
/// substream in the same order); this is the dedicated covariance-only path.
pub fn sample_marginal(
    sigma: &CovarianceModel,
    family: FamilyKind,
    n: usize,
    seed: u64,
) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, StreamRole::Primary);
    let z = isotropic_matrix(family, n, sigma.dim(), &mut rng);
    &z * &sigma.sqrt
}

/// Exact `E X Y^T` for a marginally-specified pair: zero for independent
/// sources, `Sigma_X^{1/2} J Sigma_Y^{1/2}` (partial identity `J`) for the
/// shared-source embedding.
pub fn subgaussian_cross_cov(
    sigma_x: &CovarianceModel,
    sigma_y: &CovarianceModel,
    mode: PairMode,
) -> DMatrix<f64> {
    let (dx, dy) = (sigma_x.dim(), sigma_y.dim());
    match mode {
        PairMode::Independent => DMatrix::zeros(dx, dy),
        PairMode::SharedSource => {
            let j = DMatrix::from_fn(dx, dy, |i, k| if i == k { 1.0 } else { 0.0 });
            &sigma_x.sqrt * j * &sigma_y.sqrt
        }
    }
}

/// Estimate the psi_2 norm `inf { t > 0 : E exp(Z^2/t^2) <= 2 }` from samples
/// by bisection. Diagnostic use only; downward-biased for heavy tails because
/// the empirical mean cannot see beyond the observed maximum.
///
/// The bracket is `[max|Z|/50, max|Z|/sqrt(ln 2)]`; the upper end always
/// satisfies the defining inequality because `exp(z^2/t^2) <= 2` pointwise
/// there, and for constant samples the root sits exactly at that end.
pub fn psi2_estimate(samples: &[f64]) -> Result<f64, SamplerError> {
    if samples.len() < 10_000 {
        return Err(SamplerError::TooFewSamples(samples.len()));
    }
    let max_abs = samples.iter().fold(0.0_f64, |a, &z| a.max(z.abs()));
    if max_abs == 0.0 {
        return Ok(0.0);
    }
    let excess = |t: f64| -> f64 {
        let mean = samples.iter().map(|&z| ((z / t).powi(2)).exp()).sum::<f64>()
            / samples.len() as f64;
        mean - 2.0
    };
    let mut lo = max_abs / 50.0;
    let mut hi = max_abs / (2.0_f64).ln().sqrt();
    if excess(lo) <= 0.0 {
        return Err(SamplerError::EstimateUnstable);
    }
    while (hi - lo) > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::{self, CouplingSpec};
    use crate::spectra::{build_covariance, Rotation, SpectrumFamily, SpectrumSpec};
    use approx::assert_relative_eq;
    use rayon::prelude::*;

    fn identity_model(d: usize) -> CovarianceModel {
        let spec = SpectrumSpec::new(SpectrumFamily::Flat { d }, 1.0).unwrap();
        build_covariance(&spec, Rotation::None, format!("I{d}")).unwrap()
    }

    #[test]
    fn gaussian_constant_matches_formula() {
        assert_eq!(GAUSSIAN_K, (8.0_f64 / 3.0).sqrt());
    }

    #[test]
    fn psi2_constant_samples_closed_form() {
        let c = 2.5;
        let samples = vec![c; 10_000];
        let t = psi2_estimate(&samples).unwrap();
        let expected = c / (2.0_f64).ln().sqrt();
        assert_relative_eq!(t, expected, max_relative = 1e-5);
    }

    #[test]
    fn psi2_gaussian_samples() {
        let mut rng = stream_rng(99, StreamRole::Primary);
        let samples: Vec<f64> =
            (0..1_000_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let t = psi2_estimate(&samples).unwrap();
        assert!(
            (t - GAUSSIAN_K).abs() / GAUSSIAN_K <= 0.05,
            "psi2 of standard gaussian {t} vs {GAUSSIAN_K}"
        );
    }

    #[test]
    fn psi2_rademacher_samples() {
        let mut rng = stream_rng(7, StreamRole::Primary);
        let samples: Vec<f64> =
            (0..100_000).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let t = psi2_estimate(&samples).unwrap();
        let expected = 1.0 / (2.0_f64).ln().sqrt(); // E exp(1/t^2) = 2
        assert!((t - expected).abs() / expected <= 0.05, "{t} vs {expected}");
    }

    #[test]
    fn psi2_rejects_small_input() {
        assert!(matches!(
            psi2_estimate(&[1.0; 100]),
            Err(SamplerError::TooFewSamples(100))
        ));
    }

    #[test]
    fn joint_scalar_independent_correlation() {
        let m = identity_model(1);
        let joint = joint::assemble(&m, &m, &CouplingSpec::Independent).unwrap();
        let n = 100_000;
        let batch = sample_joint_gaussian(&joint, n, 123);
        let corr: f64 = (0..n).map(|i| batch.x[(i, 0)] * batch.y[(i, 0)]).sum::<f64>() / n as f64;
        assert!(corr.abs() <= 3.0 / (n as f64).sqrt(), "corr = {corr}");
    }

    #[test]
    fn joint_aligned_cross_moment() {
        let d = 4;
        let m = identity_model(d);
        let joint = joint::assemble(&m, &m, &CouplingSpec::aligned(0.9).unwrap()).unwrap();
        let n = 100_000;
        let batch = sample_joint_gaussian(&joint, n, 5);
        let emp = batch.x.transpose() * &batch.y / n as f64;
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { 0.9 } else { 0.0 };
                // entrywise Monte Carlo SE
                let mut var = 0.0;
                for r in 0..n {
                    let p = batch.x[(r, i)] * batch.y[(r, j)];
                    var += (p - emp[(i, j)]).powi(2);
                }
                let se = (var / (n as f64 - 1.0)).sqrt() / (n as f64).sqrt();
                assert!(
                    (emp[(i, j)] - target).abs() <= 5.0 * se,
                    "entry ({i},{j}): {} vs {target} (se {se})",
                    emp[(i, j)]
                );
            }
        }
    }

    #[test]
    fn single_draw_shapes() {
        let x = identity_model(3);
        let y = identity_model(5);
        let joint = joint::assemble(&x, &y, &CouplingSpec::Independent).unwrap();
        let batch = sample_joint_gaussian(&joint, 1, 0);
        assert_eq!(batch.x.shape(), (1, 3));
        assert_eq!(batch.y.shape(), (1, 5));
    }

    #[test]
    fn rademacher_marginal_variance() {
        let d = 3;
        let m = identity_model(d);
        let n = 50_000;
        let batch =
            sample_subgaussian_pair(&m, &m, FamilyKind::Rademacher, PairMode::Independent, n, 11);
        for j in 0..d {
            let col = batch.x.column(j);
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            // variance of v^2 around 1 is 0 for rademacher; the 5-SE band is on the mean
            assert_relative_eq!(var, 1.0, max_relative = 1e-3);
            assert!(mean.abs() <= 5.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn shared_source_equal_marginals_is_degenerate() {
        let spec = SpectrumSpec::new(SpectrumFamily::Spiked { d: 6, k: 2, s: 4.0 }, 1.0).unwrap();
        let m = build_covariance(&spec, Rotation::Random { seed: 8 }, "m").unwrap();
        for family in [FamilyKind::Gaussian, FamilyKind::Rademacher, FamilyKind::Uniform] {
            let batch = sample_subgaussian_pair(&m, &m, family, PairMode::SharedSource, 64, 3);
            assert_eq!(batch.x, batch.y, "maximal coupling with equal marginals is X = Y");
        }
    }

    #[test]
    fn shared_source_prefix_matches_marginal_sampler() {
        let x = identity_model(3);
        let y = identity_model(5);
        let batch =
            sample_subgaussian_pair(&x, &y, FamilyKind::Gaussian, PairMode::SharedSource, 32, 17);
        let alone = sample_marginal(&x, FamilyKind::Gaussian, 32, 17);
        assert_eq!(batch.x, alone, "covariance-only path must reproduce the X block bitwise");
    }

    #[test]
    fn uniform_support_bound() {
        let spec = SpectrumSpec::new(SpectrumFamily::Spiked { d: 5, k: 1, s: 9.0 }, 1.0).unwrap();
        let m = build_covariance(&spec, Rotation::Random { seed: 2 }, "m").unwrap();
        let batch = sample_subgaussian_pair(&m, &m, FamilyKind::Uniform, PairMode::Independent, 2000, 4);
        let cap = SQRT_3 * (5.0_f64).sqrt() * m.op_norm.sqrt();
        let mut rng = stream_rng(31, StreamRole::Primary);
        for _ in 0..10 {
            let mut v = nalgebra::DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
            v /= v.norm();
            for i in 0..batch.n {
                let dot: f64 = (0..5).map(|j| batch.x[(i, j)] * v[j]).sum();
                assert!(dot.abs() <= cap + 1e-12);
            }
        }
    }

    #[test]
    fn same_seed_bit_identical_any_parallelism() {
        let m = identity_model(4);
        let joint = joint::assemble(&m, &m, &CouplingSpec::aligned(0.5).unwrap()).unwrap();
        let serial: Vec<SampleBatch> = (0..16)
            .map(|r| sample_joint_gaussian(&joint, 32, replicate_seed(42, r)))
            .collect();
        let parallel: Vec<SampleBatch> = (0..16u64)
            .into_par_iter()
            .map(|r| sample_joint_gaussian(&joint, 32, replicate_seed(42, r)))
            .collect();
        for (a, b) in serial.iter().zip(parallel.iter()) {
            assert_eq!(a.x, b.x);
            assert_eq!(a.y, b.y);
            assert_eq!(a.residuals, b.residuals);
        }
    }

    #[test]
    fn source_isotropy_all_families() {
        let n = 40_000;
        let tol = 5.0 / (n as f64).sqrt();
        for family in [FamilyKind::Gaussian, FamilyKind::Rademacher, FamilyKind::Uniform] {
            let mut rng = stream_rng(1234, StreamRole::Primary);
            let z = isotropic_matrix(family, n, 4, &mut rng);
            for j in 0..4 {
                let mean = z.column(j).sum() / n as f64;
                assert!(mean.abs() <= tol, "{family:?} mean {mean}");
            }
            for a in 0..4 {
                for b in (a + 1)..4 {
                    let corr: f64 =
                        (0..n).map(|i| z[(i, a)] * z[(i, b)]).sum::<f64>() / n as f64;
                    assert!(corr.abs() <= tol, "{family:?} corr {corr}");
                }
            }
        }
    }

    // Numerical oracle for the observed sub-Gaussian constants: maximize the
    // psi2/L2 ratio over a fixed direction grid in d <= 8. Exact enumeration
    // for Rademacher, Monte Carlo + psi2_estimate for uniform.
    #[test]
    fn observed_constants_oracle() {
        // Rademacher: <X, v> takes 2^d equiprobable values; psi2 via bisection
        let mut best = 0.0_f64;
        let mut rng = stream_rng(2024, StreamRole::Primary);
        for d in 1..=8usize {
            let mut dirs: Vec<Vec<f64>> = Vec::new();
            dirs.push({
                let mut e = vec![0.0; d];
                e[0] = 1.0;
                e
            });
            dirs.push(vec![1.0 / (d as f64).sqrt(); d]);
            for _ in 0..40 {
                let mut v: Vec<f64> =
                    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= norm);
                dirs.push(v);
            }
            for v in &dirs {
                let mut vals = Vec::with_capacity(1 << d);
                for mask in 0..(1u32 << d) {
                    let s: f64 = (0..d)
                        .map(|j| if mask >> j & 1 == 1 { v[j] } else { -v[j] })
                        .sum();
                    vals.push(s);
                }
                let l2 = (vals.iter().map(|x| x * x).sum::<f64>() / vals.len() as f64).sqrt();
                if l2 == 0.0 {
                    continue;
                }
                let max_abs = vals.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
                let excess = |t: f64| {
                    vals.iter().map(|&x| ((x / t).powi(2)).exp()).sum::<f64>()
                        / vals.len() as f64
                        - 2.0
                };
                let mut lo = max_abs / 50.0;
                let mut hi = max_abs / (2.0_f64).ln().sqrt();
                while (hi - lo) > 1e-9 * hi {
                    let mid = 0.5 * (lo + hi);
                    if excess(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                best = best.max(0.5 * (lo + hi) / l2);
            }
        }
        assert!(best <= GAUSSIAN_K + 1e-9, "observed {best} exceeds the envelope");
        assert!(
            (best - RADEMACHER_OBSERVED_K).abs() <= 0.05,
            "observed {best} drifted from recorded {RADEMACHER_OBSERVED_K}"
        );

        // Uniform family: Monte Carlo in a few representative directions
        let mut best_u = 0.0_f64;
        let dist = Uniform::new(-SQRT_3, SQRT_3).unwrap();
        for d in [1usize, 2, 4, 8] {
            for trial in 0..10 {
                let mut v: Vec<f64> =
                    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                if trial == 0 {
                    v = vec![1.0 / (d as f64).sqrt(); d];
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= norm);
                let samples: Vec<f64> = (0..100_000)
                    .map(|_| (0..d).map(|j| rng.sample::<f64, _>(dist) * v[j]).sum::<f64>())
                    .collect();
                let l2 =
                    (samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64).sqrt();
                let t = psi2_estimate(&samples).unwrap();
                best_u = best_u.max(t / l2);
            }
        }
        assert!(best_u <= GAUSSIAN_K + 0.02, "observed uniform {best_u}");
        assert!(
            (best_u - UNIFORM_OBSERVED_K).abs() <= 0.06,
            "observed uniform {best_u} drifted from recorded {UNIFORM_OBSERVED_K}"
        );
    }
}
