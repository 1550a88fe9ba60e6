//! Experiment configuration.
//!
//! Experiments are driven by a line-oriented `key = value` document with
//! section headers (TOML). Unknown keys are rejected, parse errors carry
//! line numbers, and validation errors name the failing key path. Every
//! field has a documented default, and the effective configuration echoes
//! losslessly through `serialize` / `parse_config`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::GridSpec;
use crate::kernels::{KernelError, ModelParams, TruncationPolicy};
use crate::noise::{LevyMeasureSpec, MassAtom, RadialShape, SigmaSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation error at {key}: {message}")]
    Validation { key: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub alpha: f64,
    pub beta: f64,
    pub nu: f64,
    pub d: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { alpha: 2.0, beta: 0.9, nu: 1.0, d: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub half_width: f64,
    pub points: usize,
    pub horizon: f64,
    pub steps: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { half_width: 10.2, points: 256, horizon: 1.0, steps: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaKindKey {
    Zero,
    LinearAbs,
    LinearSigned,
    BoundedTanh,
    MarkOnly,
    Power,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SigmaSection {
    pub kind: SigmaKindKey,
    pub lip: f64,
    pub lower: f64,
    pub growth: f64,
}

impl Default for SigmaSection {
    fn default() -> Self {
        SigmaSection { kind: SigmaKindKey::LinearAbs, lip: 1.0, lower: 1.0, growth: 1.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevyFormKey {
    Discrete,
    ExpDensity,
    PowerDensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomEntry {
    pub h: Vec<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LevySection {
    pub form: LevyFormKey,
    pub atoms: Vec<AtomEntry>,
    pub eps: f64,
    pub cutoff: f64,
    /// tail index of the power-density form
    pub index: f64,
}

impl Default for LevySection {
    fn default() -> Self {
        LevySection {
            form: LevyFormKey::Discrete,
            atoms: vec![AtomEntry { h: vec![1.0], mass: 6.0 }],
            eps: 0.01,
            cutoff: 10.0,
            index: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKindKey {
    Compensated,
    Noncompensated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub noise_kind: NoiseKindKey,
    pub replicas: usize,
    pub seed: u64,
    pub override_conditions: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            noise_kind: NoiseKindKey::Compensated,
            replicas: 1000,
            seed: 424242,
            override_conditions: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruncationSection {
    pub max_nyquist_symbol: f64,
    pub max_tail_mass: f64,
}

impl Default for TruncationSection {
    fn default() -> Self {
        TruncationSection { max_nyquist_symbol: 1e-8, max_tail_mass: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityWhich {
    Stable,
    Inverse,
}

/// Initial data sampled on the grid: `level + amplitude cos(pi x / L)`
/// (product of per-axis cosines for d = 2); bounded, and bounded below by
/// `level - |amplitude|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    pub level: f64,
    pub amplitude: f64,
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection { level: 1.0, amplitude: 0.0 }
    }
}

/// Command-specific knobs; all defaulted, flat so that typos are caught.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptionsSection {
    // ml
    pub z_min: f64,
    pub z_max: f64,
    pub z_points: usize,
    // density
    pub density_which: DensityWhich,
    pub density_t: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub u_points: usize,
    // kernel
    pub t_values: Vec<f64>,
    pub x_min: f64,
    pub x_max: f64,
    pub x_points: usize,
    // moments / growth fit
    pub moment_p: u32,
    pub window_lo_frac: f64,
    pub window_hi_frac: f64,
    // bounds / picard
    pub gamma_target: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    // upsilon
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub gamma_points: usize,
    // blowup: renewal engine
    pub renewal_c1: f64,
    pub renewal_kappa: f64,
    pub renewal_rho: f64,
    pub renewal_t_max: f64,
    pub renewal_points: usize,
    // blowup: nonlinear Volterra
    pub blowup_c: f64,
    pub blowup_d: f64,
    pub blowup_growth: f64,
    pub blowup_theta: f64,
    pub blowup_t_max: f64,
    pub blowup_points: usize,
    // blowup: energy certificate
    pub cert_kappa: f64,
    pub cert_l: f64,
    pub cert_rho: f64,
    pub cert_eta: f64,
}

impl Default for OptionsSection {
    fn default() -> Self {
        OptionsSection {
            z_min: -10.0,
            z_max: 0.0,
            z_points: 101,
            density_which: DensityWhich::Stable,
            density_t: 1.0,
            u_min: 0.05,
            u_max: 4.0,
            u_points: 80,
            t_values: vec![0.5, 1.0, 2.0],
            x_min: 0.25,
            x_max: 2.0,
            x_points: 8,
            moment_p: 2,
            window_lo_frac: 0.5,
            window_hi_frac: 1.0,
            gamma_target: 0.25,
            picard_tol: 1e-10,
            picard_max_iter: 50,
            gamma_min: 0.5,
            gamma_max: 5.0,
            gamma_points: 10,
            renewal_c1: 1.0,
            renewal_kappa: 1.0,
            renewal_rho: 0.5,
            renewal_t_max: 2.0,
            renewal_points: 2000,
            blowup_c: 1.0,
            blowup_d: 1.0,
            blowup_growth: 1.0,
            blowup_theta: 0.0,
            blowup_t_max: 1.5,
            blowup_points: 2000,
            cert_kappa: 1.0,
            cert_l: 1.0,
            cert_rho: 1.5,
            cert_eta: 1.0,
        }
    }
}

/// Full experiment description; round-trips losslessly through
/// [`parse_config`] / [`ExperimentConfig::serialize`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    pub sigma: SigmaSection,
    pub levy: LevySection,
    pub initial: InitialSection,
    pub run: RunSection,
    pub truncation: TruncationSection,
    pub options: OptionsSection,
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation { key: key.to_string(), message: message.into() }
}

impl ExperimentConfig {
    /// Build the validated model parameters; errors name `model.*` keys.
    pub fn model_params(&self) -> Result<ModelParams, ConfigError> {
        ModelParams::new(self.model.alpha, self.model.beta, self.model.nu, self.model.d).map_err(
            |e| match e {
                KernelError::InvalidParam { name, constraint, .. } => {
                    invalid(&format!("model.{name}"), constraint)
                }
                other => invalid("model", other.to_string()),
            },
        )
    }

    pub fn grid_spec(&self) -> Result<GridSpec, ConfigError> {
        let g = GridSpec {
            d: self.model.d,
            half_width: self.grid.half_width,
            n: self.grid.points,
            horizon: self.grid.horizon,
            nt: self.grid.steps,
        };
        g.validate().map_err(|e| match e {
            crate::grid::GridError::Invalid { name, constraint, .. } => {
                invalid(&format!("grid.{name}"), constraint)
            }
        })?;
        Ok(g)
    }

    pub fn sigma_spec(&self) -> Result<SigmaSpec, ConfigError> {
        let s = &self.sigma;
        if s.lip < 0.0 || !s.lip.is_finite() {
            return Err(invalid("sigma.lip", "Lipschitz constant must be nonnegative"));
        }
        Ok(match s.kind {
            SigmaKindKey::Zero => SigmaSpec::zero(),
            SigmaKindKey::LinearAbs => SigmaSpec::linear_abs(s.lip),
            SigmaKindKey::LinearSigned => SigmaSpec::linear_signed(s.lip),
            SigmaKindKey::BoundedTanh => SigmaSpec::bounded_tanh(s.lip),
            SigmaKindKey::MarkOnly => SigmaSpec::mark_only(),
            SigmaKindKey::Power => {
                if !(s.growth > 1.0) {
                    return Err(invalid("sigma.growth", "power growth requires growth > 1"));
                }
                if !(s.lower > 0.0) {
                    return Err(invalid("sigma.lower", "power growth requires lower > 0"));
                }
                SigmaSpec::power_growth(s.lower, s.growth)
            }
        })
    }

    pub fn levy_spec(&self) -> Result<LevyMeasureSpec, ConfigError> {
        let l = &self.levy;
        let d = self.model.d;
        match l.form {
            LevyFormKey::Discrete => {
                let mut atoms = Vec::with_capacity(l.atoms.len());
                for (i, a) in l.atoms.iter().enumerate() {
                    if a.h.len() != d {
                        return Err(invalid(
                            &format!("levy.atoms[{i}].h"),
                            format!("mark needs {d} coordinates (model.d = {d})"),
                        ));
                    }
                    let mut h = [0.0, 0.0];
                    for (c, v) in h.iter_mut().zip(&a.h) {
                        *c = *v;
                    }
                    atoms.push(MassAtom { h, mass: a.mass });
                }
                LevyMeasureSpec::discrete(d, atoms)
            }
            LevyFormKey::ExpDensity => LevyMeasureSpec::density(d, RadialShape::Exp, l.eps, l.cutoff),
            LevyFormKey::PowerDensity => {
                LevyMeasureSpec::density(d, RadialShape::Power { index: l.index }, l.eps, l.cutoff)
            }
        }
        .map_err(|e| invalid("levy", e.to_string()))
    }

    pub fn truncation_policy(&self) -> TruncationPolicy {
        TruncationPolicy {
            max_nyquist_symbol: self.truncation.max_nyquist_symbol,
            max_tail_mass: self.truncation.max_tail_mass,
        }
    }

    /// Sample the initial data on the grid.
    pub fn initial_field(&self, grid: &GridSpec) -> Vec<f64> {
        let l = grid.half_width;
        (0..grid.sites())
            .map(|i| {
                let p = grid.site_position(i);
                let mut shape = (std::f64::consts::PI * p[0] / l).cos();
                if grid.d == 2 {
                    shape *= (std::f64::consts::PI * p[1] / l).cos();
                }
                self.initial.level + self.initial.amplitude * shape
            })
            .collect()
    }

    /// Validate every section (the per-command code may not touch all).
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model_params()?;
        self.grid_spec()?;
        self.sigma_spec()?;
        self.levy_spec()?;
        if self.options.window_lo_frac < 0.0
            || self.options.window_hi_frac > 1.0
            || self.options.window_lo_frac >= self.options.window_hi_frac
        {
            return Err(invalid(
                "options.window_lo_frac",
                "growth window fractions must satisfy 0 <= lo < hi <= 1",
            ));
        }
        if !(self.options.gamma_target > 0.0 && self.options.gamma_target < 1.0) {
            return Err(invalid("options.gamma_target", "contraction target must lie in (0, 1)"));
        }
        if self.options.z_max > 0.0 {
            return Err(invalid("options.z_max", "mittag-leffler arguments must be nonpositive"));
        }
        Ok(())
    }

    pub fn serialize(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Parse and validate a configuration document; defaults fill every
/// omitted key and are echoed by `serialize`.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start].lines().count()).unwrap_or(0);
        ConfigError::Parse { line, message: e.message().to_string() }
    })?;
    cfg.validate()?;
    Ok(cfg)
}
