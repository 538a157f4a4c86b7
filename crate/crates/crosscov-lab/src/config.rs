//! Experiment configuration: strict JSON documents, one per run.
//!
//! Every config carries a `version` field and is schema-validated before
//! execution; unknown keys abort with the offending key named (serde strict
//! mode). The resolved config is embedded verbatim in each summary JSON so
//! every reported number is traceable to its generator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::DataModel;
use crate::joint::{self, CouplingSpec, JointModelError};
use crate::matops::NormMethod;
use crate::samplers::{FamilyKind, PairMode};
use crate::spectra::{
    build_covariance, CovarianceModel, Rotation, SpectrumError, SpectrumFamily, SpectrumSpec,
};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported config version {0}, expected {CONFIG_VERSION}")]
    Version(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Joint(#[from] JointModelError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

fn default_scale() -> f64 {
    1.0
}

/// Eigenvalue profile, e.g.
/// `{"family":"poly","d":256,"alpha":1.5,"scale":1.0,"rotation":"random","rotation_seed":42}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_seed: Option<u64>,
}

impl SpectrumConfig {
    fn reject_unused(&self, used: &[&str]) -> Result<(), ConfigError> {
        let mut stray = Vec::new();
        if self.d.is_some() && !used.contains(&"d") {
            stray.push("d");
        }
        if self.alpha.is_some() && !used.contains(&"alpha") {
            stray.push("alpha");
        }
        if self.beta.is_some() && !used.contains(&"beta") {
            stray.push("beta");
        }
        if self.k.is_some() && !used.contains(&"k") {
            stray.push("k");
        }
        if self.s.is_some() && !used.contains(&"s") {
            stray.push("s");
        }
        if self.eigenvalues.is_some() && !used.contains(&"eigenvalues") {
            stray.push("eigenvalues");
        }
        if stray.is_empty() {
            Ok(())
        } else {
            Err(invalid(format!(
                "spectrum family '{}' does not use key(s): {}",
                self.family,
                stray.join(", ")
            )))
        }
    }

    pub fn to_spec(&self) -> Result<SpectrumSpec, ConfigError> {
        let need = |opt: Option<f64>, name: &str| {
            opt.ok_or_else(|| invalid(format!("family '{}' requires '{name}'", self.family)))
        };
        let need_d = || self.d.ok_or_else(|| invalid(format!("family '{}' requires 'd'", self.family)));
        let family = match self.family.as_str() {
            "flat" => {
                self.reject_unused(&["d"])?;
                SpectrumFamily::Flat { d: need_d()? }
            }
            "poly" => {
                self.reject_unused(&["d", "alpha"])?;
                SpectrumFamily::Poly { d: need_d()?, alpha: need(self.alpha, "alpha")? }
            }
            "exp_decay" => {
                self.reject_unused(&["d", "beta"])?;
                SpectrumFamily::ExpDecay { d: need_d()?, beta: need(self.beta, "beta")? }
            }
            "spiked" => {
                self.reject_unused(&["d", "k", "s"])?;
                SpectrumFamily::Spiked {
                    d: need_d()?,
                    k: self.k.ok_or_else(|| invalid("family 'spiked' requires 'k'"))?,
                    s: need(self.s, "s")?,
                }
            }
            "custom" => {
                self.reject_unused(&["eigenvalues"])?;
                SpectrumFamily::Custom {
                    eigenvalues: self
                        .eigenvalues
                        .clone()
                        .ok_or_else(|| invalid("family 'custom' requires 'eigenvalues'"))?,
                }
            }
            other => return Err(invalid(format!("unknown spectrum family '{other}'"))),
        };
        Ok(SpectrumSpec::new(family, self.scale)?)
    }

    pub fn rotation(&self) -> Result<Rotation, ConfigError> {
        match self.rotation.as_deref() {
            None | Some("none") => {
                if self.rotation_seed.is_some() {
                    return Err(invalid("'rotation_seed' requires rotation = \"random\""));
                }
                Ok(Rotation::None)
            }
            Some("random") => Ok(Rotation::Random { seed: self.rotation_seed.unwrap_or(0) }),
            Some(other) => Err(invalid(format!("unknown rotation '{other}'"))),
        }
    }

    pub fn label_or_default(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.family.clone())
    }

    pub fn build(&self) -> Result<CovarianceModel, ConfigError> {
        Ok(build_covariance(&self.to_spec()?, self.rotation()?, self.label_or_default())?)
    }
}

/// Cross-coupling, e.g. `{"coupling":"aligned","rho":0.9}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub coupling: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
}

impl CouplingConfig {
    pub fn to_spec(&self) -> Result<CouplingSpec, ConfigError> {
        match self.coupling.as_str() {
            "independent" => {
                if self.rho.is_some() || self.matrix.is_some() {
                    return Err(invalid("'independent' coupling takes no parameters"));
                }
                Ok(CouplingSpec::Independent)
            }
            "aligned" => {
                if self.matrix.is_some() {
                    return Err(invalid("'aligned' coupling does not take 'matrix'"));
                }
                let rho = self.rho.ok_or_else(|| invalid("'aligned' coupling requires 'rho'"))?;
                Ok(CouplingSpec::aligned(rho)?)
            }
            "custom" => {
                if self.rho.is_some() {
                    return Err(invalid("'custom' coupling does not take 'rho'"));
                }
                let rows =
                    self.matrix.as_ref().ok_or_else(|| invalid("'custom' coupling requires 'matrix'"))?;
                let nrows = rows.len();
                let ncols = rows.first().map_or(0, Vec::len);
                if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
                    return Err(invalid("'matrix' must be a nonempty rectangular array"));
                }
                let c = nalgebra::DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]);
                Ok(CouplingSpec::Custom { c })
            }
            other => Err(invalid(format!("unknown coupling '{other}'"))),
        }
    }
}

fn default_family() -> String {
    "gaussian".to_string()
}

/// A full data model: marginal spectra plus either a joint-Gaussian coupling
/// or a family/mode pair, e.g. `{"family":"rademacher","mode":"shared_source"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub spectrum_x: SpectrumConfig,
    pub spectrum_y: SpectrumConfig,
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
}

pub fn parse_family(name: &str) -> Result<FamilyKind, ConfigError> {
    match name {
        "gaussian" => Ok(FamilyKind::Gaussian),
        "rademacher" => Ok(FamilyKind::Rademacher),
        "uniform" => Ok(FamilyKind::Uniform),
        other => Err(invalid(format!("unknown family '{other}'"))),
    }
}

pub fn parse_mode(name: &str) -> Result<PairMode, ConfigError> {
    match name {
        "independent" => Ok(PairMode::Independent),
        "shared_source" => Ok(PairMode::SharedSource),
        other => Err(invalid(format!("unknown mode '{other}'"))),
    }
}

pub fn parse_norm_method(name: &str) -> Result<NormMethod, ConfigError> {
    match name {
        "exact" => Ok(NormMethod::Exact),
        "power" => Ok(NormMethod::power()),
        other => Err(invalid(format!("unknown norm method '{other}'"))),
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<DataModel, ConfigError> {
        let family = parse_family(&self.family)?;
        let sigma_x = self.spectrum_x.build()?;
        let sigma_y = self.spectrum_y.build()?;
        match (&self.coupling, &self.mode) {
            (Some(_), Some(_)) => {
                Err(invalid("specify exactly one of 'coupling' and 'mode', not both"))
            }
            (None, None) => Err(invalid("specify one of 'coupling' (joint gaussian) or 'mode'")),
            (Some(coupling), None) => {
                if family != FamilyKind::Gaussian {
                    return Err(invalid("'coupling' requires family = \"gaussian\""));
                }
                let model = joint::assemble(&sigma_x, &sigma_y, &coupling.to_spec()?)?;
                Ok(DataModel::JointGaussian(model))
            }
            (None, Some(mode)) => Ok(DataModel::IsotropicPair {
                sigma_x,
                sigma_y,
                family,
                mode: parse_mode(mode)?,
            }),
        }
    }

    /// The joint Gaussian model, for commands that need the regression
    /// decomposition.
    pub fn build_joint(&self) -> Result<crate::joint::JointGaussianModel, ConfigError> {
        match self.build()? {
            DataModel::JointGaussian(m) => Ok(m),
            DataModel::IsotropicPair { .. } => {
                Err(invalid("this command requires a joint gaussian model ('coupling')"))
            }
        }
    }
}

fn check_version(version: u32) -> Result<(), ConfigError> {
    if version == CONFIG_VERSION {
        Ok(())
    } else {
        Err(ConfigError::Version(version))
    }
}

fn default_norm() -> String {
    "power".to_string()
}

fn default_u_grid() -> Vec<f64> {
    vec![1.0, 2.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumCommandConfig {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub spectra: Vec<SpectrumConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyUpperConfig {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub model: ModelConfig,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub u_grid: Vec<f64>,
    #[serde(default = "default_norm")]
    pub norm_method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_r_squared: Option<f64>,
}

fn default_margin() -> f64 {
    3.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyLowerConfig {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub model: ModelConfig,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    #[serde(default = "default_norm")]
    pub norm_method: String,
    /// Width of the Monte Carlo margin band in standard errors.
    #[serde(default = "default_margin")]
    pub margin_sigmas: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCellConfig {
    pub label: String,
    pub model: ModelConfig,
    pub n: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepAnalysisConfig {
    /// Fit log(mean) on log(N) per cell (requires the regime rule to pass).
    #[serde(default)]
    pub fit_scaling: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_slope: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_r_squared: Option<f64>,
    /// Cap on max/min of empirical means across all records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_mean_spread: Option<f64>,
    /// Cap on max/min of mean / gaussian_two_sided_rate across all records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_gaussian_ratio_spread: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCommandConfig {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub cells: Vec<SweepCellConfig>,
    pub reps: usize,
    pub seed: u64,
    #[serde(default = "default_u_grid")]
    pub u_grid: Vec<f64>,
    #[serde(default = "default_norm")]
    pub norm_method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<SweepAnalysisConfig>,
}

fn default_isserlis_margin() -> f64 {
    4.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsserlisConfig {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Number of random (model, v, h) triples.
    pub triples: usize,
    /// Marginal dimensions are drawn from 1..=d_max.
    pub d_max: usize,
    /// Scalar products per triple.
    pub reps: usize,
    pub seed: u64,
    #[serde(default = "default_isserlis_margin")]
    pub margin_sigmas: f64,
}

fn default_mode() -> String {
    "independent".to_string()
}

fn default_dim() -> usize {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteSetsConfig {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Points per sphere net (T and S both use this size).
    pub set_size: usize,
    /// Ambient dimension of the nets; v1 ships the d = 3 Fibonacci lattice.
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub families: Vec<String>,
    #[serde(default = "default_mode")]
    pub mode: String,
    pub n: Vec<usize>,
    pub u_grid: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ratio_spread: Option<f64>,
}

/// Parse one strict JSON config of type `T`, checking the version field.
pub fn parse<T: serde::de::DeserializeOwned + VersionedConfig>(
    text: &str,
) -> Result<T, ConfigError> {
    let cfg: T = serde_json::from_str(text)?;
    check_version(cfg.version())?;
    Ok(cfg)
}

pub trait VersionedConfig {
    fn version(&self) -> u32;
}

macro_rules! versioned {
    ($($t:ty),*) => {
        $(impl VersionedConfig for $t {
            fn version(&self) -> u32 {
                self.version
            }
        })*
    };
}

versioned!(
    SpectrumCommandConfig,
    VerifyUpperConfig,
    VerifyLowerConfig,
    SweepCommandConfig,
    IsserlisConfig,
    FiniteSetsConfig
);
