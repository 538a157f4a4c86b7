//! Config-driven experiment campaigns confronting empirical deviation
//! statistics with the closed-form rates: scaling fits, two-sidedness ratio
//! grids, dependence insensitivity, lower-bound decomposition checks, tail
//! profiles, and brute-force finite-set verification.
//!
//! Grid points and replicates are independent tasks under the same
//! deterministic substream contract as the samplers; output ordering follows
//! grid declaration order regardless of completion order.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::bounds::{self, BoundInputs, BoundsError, IndexSetSummary};
use crate::estimators::{
    self, DataModel, DeviationStats, EstimatorError, MIN_TAIL_SAMPLES,
};
use crate::joint::{self, JointGaussianModel, JointModelError};
use crate::matops::{mix_seed, NormMethod};
use crate::samplers::{replicate_seed, FamilyKind, PairMode};
use crate::spectra::CovarianceModel;

/// Replicates used for Monte Carlo Gaussian-complexity estimates of index sets.
pub const GAMMA_MC_REPS: usize = 20_000;

/// Brute-force cap on `|T| * |S|` for finite-set verification.
pub const MAX_SET_PRODUCT: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("scaling fit needs at least 3 records varying only N, got {0}")]
    NotEnoughPoints(usize),
    #[error("scaling fit records must come from a single cell; saw {0} and {1}")]
    MixedCells(String, String),
    #[error(
        "regime ambiguous: squared term ratio is {at_min:.3} at N={n_min} and {at_max:.3} at N={n_max}; \
         neither term dominates by >= {factor} across the range"
    )]
    RegimeAmbiguous { n_min: usize, n_max: usize, at_min: f64, at_max: f64, factor: f64 },
    #[error("u = {u} is unreliable at {reps} reps (needs exp(-u) * reps >= {MIN_TAIL_SAMPLES})")]
    UnreliableQuantile { u: f64, reps: usize },
    #[error("|T| * |S| = {0} exceeds the brute-force cap {MAX_SET_PRODUCT}")]
    SetTooLarge(usize),
    #[error("config error: {0}")]
    Invalid(String),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Joint(#[from] JointModelError),
}

/// Rate inputs for a data model at sample size `n`, confidence `u`, with the
/// family's envelope constant on both sides.
pub fn bound_inputs(model: &DataModel, n: usize, u: f64) -> BoundInputs {
    let k = model.family().bound_constant();
    let (sx, sy) = (model.sigma_x(), model.sigma_y());
    BoundInputs {
        k_x: k,
        k_y: k,
        opnorm_x: sx.op_norm,
        opnorm_y: sy.op_norm,
        r_x: sx.eff_rank,
        r_y: sy.eff_rank,
        n,
        u,
    }
}

/// One cell of a sweep: a data model evaluated over a list of sample sizes.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub label: String,
    pub model: DataModel,
    pub n_values: Vec<usize>,
}

/// A full sweep: cells in declaration order, shared Monte Carlo settings.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub cells: Vec<SweepCell>,
    pub reps: usize,
    pub master_seed: u64,
    pub u_grid: Vec<f64>,
    pub norm_method: NormMethod,
}

/// Result of one grid point. `stats` is absent exactly when `error` is set;
/// failed cells never abort the sweep.
#[derive(Debug, Clone)]
pub struct SweepRecord {
    pub grid_index: usize,
    pub cell_label: String,
    pub n: usize,
    pub reps: usize,
    pub family: String,
    pub coupling: String,
    pub d_x: usize,
    pub d_y: usize,
    pub r_x: f64,
    pub r_y: f64,
    pub opnorm_x: f64,
    pub opnorm_y: f64,
    pub stats: Option<DeviationStats>,
    pub expectation_rate: f64,
    pub gaussian_rate: f64,
    /// `(u, hp rate)` per u-grid entry.
    pub hp_rates: Vec<(f64, f64)>,
    pub mean_over_expectation: Option<f64>,
    pub mean_over_gaussian: Option<f64>,
    pub wall_clock_s: f64,
    pub error: Option<String>,
}

/// Run every grid point of a sweep. Grid point `g` derives its replicate
/// seeds from `hash(master_seed, g)`, so results do not depend on thread
/// count or completion order.
pub fn run_sweep(plan: &SweepPlan) -> Vec<SweepRecord> {
    let grid: Vec<(usize, &SweepCell, usize)> = plan
        .cells
        .iter()
        .flat_map(|cell| cell.n_values.iter().map(move |&n| (cell, n)))
        .enumerate()
        .map(|(g, (cell, n))| (g, cell, n))
        .collect();

    grid.into_par_iter()
        .map(|(grid_index, cell, n)| {
            let started = Instant::now();
            let model = &cell.model;
            let (sx, sy) = (model.sigma_x(), model.sigma_y());
            let k = model.family().bound_constant();
            let expectation = bounds::expectation_rate(
                k, k, sx.op_norm, sy.op_norm, sx.eff_rank, sy.eff_rank, n,
            )
            .unwrap_or(f64::NAN);
            let gaussian = bounds::gaussian_two_sided_rate(
                sx.op_norm, sy.op_norm, sx.eff_rank, sy.eff_rank, n,
            )
            .unwrap_or(f64::NAN);
            let hp_rates: Vec<(f64, f64)> = plan
                .u_grid
                .iter()
                .map(|&u| {
                    (u, bounds::hp_upper_rate(&bound_inputs(model, n, u)).unwrap_or(f64::NAN))
                })
                .collect();

            let cell_seed = mix_seed(plan.master_seed, grid_index as u64);
            let outcome = estimators::mc_deviation(
                model,
                n,
                plan.reps,
                cell_seed,
                &plan.u_grid,
                plan.norm_method,
                false,
            );
            let (stats, error) = match outcome {
                Ok(s) => (Some(s), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let mean = stats.as_ref().map(|s| s.mean);
            SweepRecord {
                grid_index,
                cell_label: cell.label.clone(),
                n,
                reps: plan.reps,
                family: model.family().name().to_string(),
                coupling: model.coupling_label(),
                d_x: sx.dim(),
                d_y: sy.dim(),
                r_x: sx.eff_rank,
                r_y: sy.eff_rank,
                opnorm_x: sx.op_norm,
                opnorm_y: sy.op_norm,
                stats,
                expectation_rate: expectation,
                gaussian_rate: gaussian,
                hp_rates,
                mean_over_expectation: mean.map(|m| m / expectation),
                mean_over_gaussian: mean.map(|m| m / gaussian),
                wall_clock_s: started.elapsed().as_secs_f64(),
                error,
            }
        })
        .collect()
}

/// Least-squares fit of `y` on `x` with coefficient of determination.
#[derive(Debug, Clone, Copy)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Plain least squares on `(x, y)` pairs.
pub fn linear_fit(points: &[(f64, f64)]) -> LinearFit {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    LinearFit { slope, intercept, r_squared }
}

/// Fit of `log(mean)` on `log(N)`.
pub fn log_log_fit(points: &[(f64, f64)]) -> LinearFit {
    let logged: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    linear_fit(&logged)
}

/// Which rate term dominates a declared scaling regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingRegime {
    /// `sqrt((r_x + r_y)/N)` dominates: expected slope -1/2.
    SqrtTerm,
    /// `sqrt(r_x r_y)/N` dominates: expected slope -1.
    ProductTerm,
}

#[derive(Debug, Clone, Copy)]
pub struct ScalingFit {
    pub regime: ScalingRegime,
    pub fit: LinearFit,
}

/// Dominance factor required between the squared rate terms at both ends of
/// the N range before a scaling fit is attempted.
pub const REGIME_DOMINANCE: f64 = 4.0;

fn regime_for(r_x: f64, r_y: f64, n_min: usize, n_max: usize) -> Result<ScalingRegime, ExperimentError> {
    // ratio of squared terms: (r_x r_y / N^2) / ((r_x + r_y)/N)
    let ratio = |n: usize| r_x * r_y / ((r_x + r_y) * n as f64);
    let (at_min, at_max) = (ratio(n_min), ratio(n_max));
    if at_min >= REGIME_DOMINANCE && at_max >= REGIME_DOMINANCE {
        Ok(ScalingRegime::ProductTerm)
    } else if at_min <= 1.0 / REGIME_DOMINANCE && at_max <= 1.0 / REGIME_DOMINANCE {
        Ok(ScalingRegime::SqrtTerm)
    } else {
        Err(ExperimentError::RegimeAmbiguous {
            n_min,
            n_max,
            at_min,
            at_max,
            factor: REGIME_DOMINANCE,
        })
    }
}

/// Fit `log(mean)` against `log(N)` over the records of a single cell.
///
/// Refuses with [`ExperimentError::RegimeAmbiguous`] when neither rate term
/// dominates (squared-term ratio >= 4) across the whole range: fitting across
/// the crossover corrupts slopes.
pub fn fit_scaling(records: &[SweepRecord]) -> Result<ScalingFit, ExperimentError> {
    let good: Vec<&SweepRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    if good.len() < 3 {
        return Err(ExperimentError::NotEnoughPoints(good.len()));
    }
    for r in &good[1..] {
        if r.cell_label != good[0].cell_label {
            return Err(ExperimentError::MixedCells(
                good[0].cell_label.clone(),
                r.cell_label.clone(),
            ));
        }
    }
    let n_min = good.iter().map(|r| r.n).min().expect("nonempty");
    let n_max = good.iter().map(|r| r.n).max().expect("nonempty");
    if n_min == n_max {
        return Err(ExperimentError::NotEnoughPoints(1));
    }
    let regime = regime_for(good[0].r_x, good[0].r_y, n_min, n_max)?;
    let points: Vec<(f64, f64)> = good
        .iter()
        .map(|r| (r.n as f64, r.stats.as_ref().expect("no error").mean))
        .collect();
    Ok(ScalingFit { regime, fit: log_log_fit(&points) })
}

/// Per-coupling deviation mean for the insensitivity experiment.
#[derive(Debug, Clone, Copy)]
pub struct RhoMean {
    pub rho: f64,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone)]
pub struct InsensitivityReport {
    pub per_rho: Vec<RhoMean>,
    /// max mean / min mean across the coupling strengths.
    pub spread: f64,
}

/// Spread of empirical mean deviations across coupling strengths, Gaussian
/// family, fixed marginals. All strengths share replicate seeds (common
/// random numbers), so the spread isolates the coupling effect.
pub fn dependence_insensitivity(
    sigma_x: &CovarianceModel,
    sigma_y: &CovarianceModel,
    rhos: &[f64],
    n: usize,
    reps: usize,
    seed: u64,
    method: NormMethod,
) -> Result<InsensitivityReport, ExperimentError> {
    if rhos.is_empty() {
        return Err(ExperimentError::Invalid("empty rho list".into()));
    }
    let per_rho: Vec<RhoMean> = rhos
        .iter()
        .map(|&rho| -> Result<RhoMean, ExperimentError> {
            let model = DataModel::JointGaussian(joint::assemble(
                sigma_x,
                sigma_y,
                &joint::CouplingSpec::aligned(rho)?,
            )?);
            let stats =
                estimators::mc_deviation(&model, n, reps, seed, &[1.0], method, false)?;
            Ok(RhoMean { rho, mean: stats.mean, std_error: stats.std_error })
        })
        .collect::<Result<_, _>>()?;
    let max = per_rho.iter().map(|r| r.mean).fold(0.0_f64, f64::max);
    let min = per_rho.iter().map(|r| r.mean).fold(f64::INFINITY, f64::min);
    Ok(InsensitivityReport { per_rho, spread: max / min })
}

/// Monte Carlo estimates of `E||A||`, `E||B||`, `E||A+B||` for the
/// regression split, with paired margins for the no-cancellation checks.
#[derive(Debug, Clone)]
pub struct DecompositionReport {
    pub reps: usize,
    pub mean_a: f64,
    pub se_a: f64,
    pub mean_b: f64,
    pub se_b: f64,
    pub mean_total: f64,
    pub se_total: f64,
    /// mean and SE of the paired difference `||A+B|| - ||A||`.
    pub margin_vs_a: (f64, f64),
    /// mean and SE of the paired difference `||A+B|| - ||B||`.
    pub margin_vs_b: (f64, f64),
    /// mean and SE of the paired difference `||A+B|| - (||A|| + ||B||)/2`.
    pub margin_vs_half_sum: (f64, f64),
    /// Rate for the correlated term, absent when `P = 0`.
    pub lemma_rate: Option<f64>,
    pub gaussian_rate: f64,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Replicated decomposition experiment on a joint Gaussian model.
pub fn lower_bound_decomposition(
    model: &JointGaussianModel,
    n: usize,
    reps: usize,
    seed: u64,
    method: NormMethod,
) -> Result<DecompositionReport, ExperimentError> {
    let splits: Vec<estimators::DeviationSplit> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let batch = crate::samplers::sample_joint_gaussian(model, n, replicate_seed(seed, r));
            estimators::decompose_deviation(model, &batch, method)
        })
        .collect::<Result<_, _>>()?;
    let a: Vec<f64> = splits.iter().map(|s| s.norm_a).collect();
    let b: Vec<f64> = splits.iter().map(|s| s.norm_b).collect();
    let t: Vec<f64> = splits.iter().map(|s| s.norm_total).collect();
    let diff_a: Vec<f64> = t.iter().zip(&a).map(|(x, y)| x - y).collect();
    let diff_b: Vec<f64> = t.iter().zip(&b).map(|(x, y)| x - y).collect();
    let diff_half: Vec<f64> =
        t.iter().zip(a.iter().zip(&b)).map(|(x, (p, q))| x - 0.5 * (p + q)).collect();
    let (mean_a, se_a) = mean_and_se(&a);
    let (mean_b, se_b) = mean_and_se(&b);
    let (mean_total, se_total) = mean_and_se(&t);
    let lemma_rate = match (model.r_p, crate::matops::operator_norm(model.p.as_matrix(), NormMethod::Exact)) {
        (Some(r_p), Ok(op_p)) if op_p > 0.0 => {
            Some(bounds::lower_bound_rate_lemma(model.sigma_x.op_norm, model.r_x, op_p, r_p, n)?)
        }
        _ => None,
    };
    let gaussian_rate = bounds::gaussian_two_sided_rate(
        model.sigma_x.op_norm,
        model.sigma_y.op_norm,
        model.r_x,
        model.r_y,
        n,
    )?;
    Ok(DecompositionReport {
        reps,
        mean_a,
        se_a,
        mean_b,
        se_b,
        mean_total,
        se_total,
        margin_vs_a: mean_and_se(&diff_a),
        margin_vs_b: mean_and_se(&diff_b),
        margin_vs_half_sum: mean_and_se(&diff_half),
        lemma_rate,
        gaussian_rate,
    })
}

/// Monte Carlo check of `E ||X|| ||L X|| >= E||X|| E||L X||` together with
/// the Gaussian norm bracket `E||X|| in [sqrt(tr - ||Sigma||), sqrt(tr)]`.
#[derive(Debug, Clone)]
pub struct CorrelationReport {
    pub reps: usize,
    pub lhs_mean: f64,
    pub lhs_se: f64,
    /// Product of means `E||X|| * E||LX||`.
    pub rhs: f64,
    pub rhs_se: f64,
    /// `lhs - rhs` with its delta-method SE.
    pub margin: f64,
    pub margin_se: f64,
    pub norm_x_mean: f64,
    pub norm_x_se: f64,
    pub norm_x_lower: f64,
    pub norm_x_upper: f64,
}

pub fn correlation_inequality_check(
    sigma_x: &CovarianceModel,
    l: &DMatrix<f64>,
    reps: usize,
    seed: u64,
) -> Result<CorrelationReport, ExperimentError> {
    if l.ncols() != sigma_x.dim() {
        return Err(ExperimentError::Invalid(format!(
            "L has {} columns, marginal dimension is {}",
            l.ncols(),
            sigma_x.dim()
        )));
    }
    let x = crate::samplers::sample_marginal(sigma_x, FamilyKind::Gaussian, reps, seed);
    let lx = &x * l.transpose();
    let nx: Vec<f64> = (0..reps).map(|i| x.row(i).norm()).collect();
    let ny: Vec<f64> = (0..reps).map(|i| lx.row(i).norm()).collect();
    let prod: Vec<f64> = nx.iter().zip(&ny).map(|(a, b)| a * b).collect();

    let (lhs_mean, lhs_se) = mean_and_se(&prod);
    let (mx, sx) = mean_and_se(&nx);
    let (my, sy) = mean_and_se(&ny);
    let rhs = mx * my;

    let n = reps as f64;
    let cov = |u: &[f64], mu: f64, v: &[f64], mv: f64| {
        u.iter().zip(v).map(|(a, b)| (a - mu) * (b - mv)).sum::<f64>() / (n - 1.0)
    };
    let c_xy = cov(&nx, mx, &ny, my);
    let c_px = cov(&prod, lhs_mean, &nx, mx);
    let c_py = cov(&prod, lhs_mean, &ny, my);
    let var_p = lhs_se * lhs_se * n;
    let var_x = sx * sx * n;
    let var_y = sy * sy * n;
    // delta method on (mean prod, mean x, mean y) with gradient (1, -my, -mx)
    let margin_var = (var_p + my * my * var_x + mx * mx * var_y - 2.0 * my * c_px
        - 2.0 * mx * c_py
        + 2.0 * mx * my * c_xy)
        / n;
    let rhs_var = (my * my * var_x + mx * mx * var_y + 2.0 * mx * my * c_xy) / n;

    Ok(CorrelationReport {
        reps,
        lhs_mean,
        lhs_se,
        rhs,
        rhs_se: rhs_var.max(0.0).sqrt(),
        margin: lhs_mean - rhs,
        margin_se: margin_var.max(0.0).sqrt(),
        norm_x_mean: mx,
        norm_x_se: sx,
        norm_x_lower: (sigma_x.trace - sigma_x.op_norm).max(0.0).sqrt(),
        norm_x_upper: sigma_x.trace.sqrt(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct TailPoint {
    pub u: f64,
    pub quantile: f64,
    pub predictor: f64,
}

/// Regression of empirical tail quantiles on the high-probability rate shape.
#[derive(Debug, Clone)]
pub struct TailProfile {
    pub points: Vec<TailPoint>,
    pub fit: LinearFit,
    pub stats: DeviationStats,
}

/// Empirical quantiles `q(1 - exp(-u))` regressed on the constant-free
/// high-probability predictor. Every `u` must satisfy the quantile
/// reliability rule up front.
pub fn tail_profile(
    model: &DataModel,
    n: usize,
    reps: usize,
    seed: u64,
    u_grid: &[f64],
    method: NormMethod,
) -> Result<TailProfile, ExperimentError> {
    for &u in u_grid {
        if (-u).exp() * (reps as f64) < MIN_TAIL_SAMPLES {
            return Err(ExperimentError::UnreliableQuantile { u, reps });
        }
    }
    let stats = estimators::mc_deviation(model, n, reps, seed, u_grid, method, false)?;
    let points: Vec<TailPoint> = stats
        .quantiles
        .iter()
        .map(|q| {
            let predictor = bounds::hp_upper_rate(&bound_inputs(model, n, q.u))
                .expect("validated inputs");
            TailPoint { u: q.u, quantile: q.value, predictor }
        })
        .collect();
    let fit = linear_fit(&points.iter().map(|p| (p.predictor, p.quantile)).collect::<Vec<_>>());
    Ok(TailProfile { points, fit, stats })
}

/// One `(u, quantile, rate, ratio)` row of a finite-set verification record.
#[derive(Debug, Clone, Copy)]
pub struct FiniteSetPoint {
    pub u: f64,
    pub quantile: f64,
    pub rate: f64,
    pub ratio: f64,
    pub reliable: bool,
}

/// Brute-force verification record over one `(family, N)` configuration.
#[derive(Debug, Clone)]
pub struct FiniteSetRecord {
    pub family: String,
    pub n: usize,
    pub reps: usize,
    pub mean_sup: f64,
    pub se_sup: f64,
    pub points: Vec<FiniteSetPoint>,
}

/// Brute-force sup over `v in T, h in S` of the bilinear deviation
/// `|(1/N) sum <Z_i, v><W_i, h> - E <Z,v><W,h>|` for isotropic sources,
/// compared with the finite-set rate.
#[allow(clippy::too_many_arguments)]
pub fn finite_set_verification(
    t_points: &[DVector<f64>],
    s_points: &[DVector<f64>],
    family: FamilyKind,
    mode: PairMode,
    n: usize,
    reps: usize,
    seed: u64,
    u_grid: &[f64],
) -> Result<FiniteSetRecord, ExperimentError> {
    if t_points.is_empty() || s_points.is_empty() {
        return Err(ExperimentError::Invalid("empty index set".into()));
    }
    if t_points.len() * s_points.len() > MAX_SET_PRODUCT {
        return Err(ExperimentError::SetTooLarge(t_points.len() * s_points.len()));
    }
    let d_z = t_points[0].len();
    let d_w = s_points[0].len();
    let vt = DMatrix::from_fn(d_z, t_points.len(), |i, j| t_points[j][i]);
    let vs = DMatrix::from_fn(d_w, s_points.len(), |i, j| s_points[j][i]);

    // exact cross moment of the isotropic sources, projected onto the sets
    let exact: DMatrix<f64> = match mode {
        PairMode::Independent => DMatrix::zeros(t_points.len(), s_points.len()),
        PairMode::SharedSource => {
            let j = DMatrix::from_fn(d_z, d_w, |i, k| if i == k { 1.0 } else { 0.0 });
            vt.transpose() * j * &vs
        }
    };

    let sups: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let batch = crate::samplers::sample_subgaussian_pair(
                &identity_cov(d_z),
                &identity_cov(d_w),
                family,
                mode,
                n,
                replicate_seed(seed, r),
            );
            let pz = &batch.x * &vt;
            let pw = &batch.y * &vs;
            let emp = pz.transpose() * pw / n as f64;
            (emp - &exact).amax()
        })
        .collect();

    let (mean_sup, se_sup) = mean_and_se(&sups);
    let stats = DeviationStats::from_per_rep(sups, u_grid, false)?;

    let t_summary =
        IndexSetSummary::finite(t_points.to_vec(), GAMMA_MC_REPS, mix_seed(seed, 0x7))?;
    let s_summary =
        IndexSetSummary::finite(s_points.to_vec(), GAMMA_MC_REPS, mix_seed(seed, 0x8))?;
    let k = family.bound_constant();

    let points = stats
        .quantiles
        .iter()
        .map(|q| -> Result<FiniteSetPoint, ExperimentError> {
            let rate = bounds::finite_set_rate(&t_summary, &s_summary, k, k, n, q.u)?;
            Ok(FiniteSetPoint {
                u: q.u,
                quantile: q.value,
                rate,
                ratio: q.value / rate,
                reliable: q.reliable,
            })
        })
        .collect::<Result<_, _>>()?;

    Ok(FiniteSetRecord {
        family: family.name().to_string(),
        n,
        reps,
        mean_sup,
        se_sup,
        points,
    })
}

fn identity_cov(d: usize) -> CovarianceModel {
    use crate::spectra::{build_covariance, Rotation, SpectrumFamily, SpectrumSpec};
    let spec = SpectrumSpec::new(SpectrumFamily::Flat { d }, 1.0).expect("valid");
    build_covariance(&spec, Rotation::None, format!("I{d}")).expect("valid")
}

/// A deterministic near-uniform set of `count` points on the unit sphere of
/// R^3 (Fibonacci lattice), the desk-scale stand-in for a sphere epsilon-net.
pub fn fibonacci_sphere(count: usize) -> Vec<DVector<f64>> {
    let golden = std::f64::consts::PI * (1.0 + 5.0_f64.sqrt());
    (0..count)
        .map(|i| {
            let t = (i as f64 + 0.5) / count as f64;
            let phi = (1.0 - 2.0 * t).acos();
            let theta = golden * (i as f64 + 0.5);
            DVector::from_vec(vec![
                theta.cos() * phi.sin(),
                theta.sin() * phi.sin(),
                phi.cos(),
            ])
        })
        .collect()
}

/// Bit-exactness check of the `X = Y` pathway: the shared-source pipeline with
/// equal marginals against the dedicated covariance-only code path.
#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub reps: usize,
    pub bit_identical: bool,
    pub max_abs_diff: f64,
    pub cross_mean: f64,
    pub covariance_mean: f64,
}

pub fn xy_recovery_check(
    sigma: &CovarianceModel,
    family: FamilyKind,
    n: usize,
    reps: usize,
    seed: u64,
    method: NormMethod,
) -> Result<RecoveryReport, ExperimentError> {
    let pairs: Vec<(f64, f64)> = (0..reps as u64)
        .into_par_iter()
        .map(|r| -> Result<(f64, f64), ExperimentError> {
            let rep_seed = replicate_seed(seed, r);
            let batch = crate::samplers::sample_subgaussian_pair(
                sigma,
                sigma,
                family,
                PairMode::SharedSource,
                n,
                rep_seed,
            );
            let cross =
                estimators::deviation_norm(&batch, sigma.matrix.as_matrix(), method)?;
            let x = crate::samplers::sample_marginal(sigma, family, n, rep_seed);
            let cov =
                estimators::covariance_deviation_norm(&x, sigma.matrix.as_matrix(), method)?;
            Ok((cross, cov))
        })
        .collect::<Result<_, _>>()?;
    let bit_identical = pairs.iter().all(|(a, b)| a.to_bits() == b.to_bits());
    let max_abs_diff =
        pairs.iter().map(|(a, b)| (a - b).abs()).fold(0.0_f64, f64::max);
    let cross_mean = pairs.iter().map(|p| p.0).sum::<f64>() / reps as f64;
    let covariance_mean = pairs.iter().map(|p| p.1).sum::<f64>() / reps as f64;
    Ok(RecoveryReport { reps, bit_identical, max_abs_diff, cross_mean, covariance_mean })
}
