//! Poisson-type Levy noise.
//!
//! The driving noise is a Poisson random measure `N` on
//! `[0, T] x box x R^d` with intensity `dt dx mu(dh)`, optionally
//! compensated. A [`LevyMeasureSpec`] describes the jump-size measure `mu`
//! (finite after truncation, so the atom count is Poisson with mean
//! `T |box| mu(R^d)`), a [`SigmaSpec`] the multiplicative nonlinearity
//! `sigma(u, h)` together with its declared envelopes, and
//! [`NoiseRealization`] one sampled atom configuration, deterministic in its
//! seed bit-for-bit.
//!
//! `validate_conditions` evaluates the integrability constants
//! `K2 = int J^2 dmu`, `K1 = int J dmu`, `kappa2 = int Jbar^2 dmu`,
//! `kappa1 = int Jbar dmu` and checks the declared envelope bounds on a
//! deterministic sample battery. `isometry_check` verifies the two
//! first-principle identities of the stochastic integral: the first-moment
//! identity for `dN` and the second-moment isometry for the compensated
//! `dN~` against direct quadrature.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{point_norm, GridSpec, Point};
use crate::kernels::GreenTable;
use crate::quad;
use crate::rng::{derive_seed, seeded_rng};

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("levy.{name} = {value}: {constraint}")]
    Invalid { name: &'static str, value: f64, constraint: &'static str },
    #[error("noise realization is bound to a different grid than the table")]
    GridBinding,
    #[error("history covers {have} grid times but the convolution at step {need} requires all earlier ones")]
    HistoryTooShort { have: usize, need: usize },
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error(transparent)]
    Quad(#[from] crate::quad::QuadError),
}

// ---------------------------------------------------------------------------
// Levy measures
// ---------------------------------------------------------------------------

/// One atom of a discrete jump measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassAtom {
    pub h: Point,
    pub mass: f64,
}

/// Radial density shapes for the continuous form, supported on
/// `eps <= |h| <= cutoff`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RadialShape {
    /// `w(r) = exp(-r)`
    Exp,
    /// `w(r) = r^{-1-index}`, the stable-like infinite-activity shape
    Power { index: f64 },
}

impl RadialShape {
    fn value(&self, r: f64) -> f64 {
        match self {
            RadialShape::Exp => (-r).exp(),
            RadialShape::Power { index } => r.powf(-1.0 - index),
        }
    }
}

/// The jump-size measure `mu(dh)`: either finitely many atoms or a radial
/// density truncated to `eps <= |h| <= cutoff`.
///
/// Both forms have finite total mass, the sampling requirement. For the
/// density form the discarded small-jump second moment
/// `int_{|h|<eps} |h|^2 mu(dh)` is reported so the omitted variance can be
/// bounded.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyMeasureSpec {
    pub form: LevyForm,
    /// mark-space dimension (matches the spatial d of the model)
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LevyForm {
    Discrete(Vec<MassAtom>),
    Density { shape: RadialShape, eps: f64, cutoff: f64 },
}

impl LevyMeasureSpec {
    pub fn discrete(d: usize, atoms: Vec<MassAtom>) -> Result<Self, NoiseError> {
        for a in &atoms {
            if !(a.mass > 0.0) || !a.mass.is_finite() {
                return Err(NoiseError::Invalid {
                    name: "atoms.mass",
                    value: a.mass,
                    constraint: "atom masses must be positive and finite",
                });
            }
        }
        Ok(LevyMeasureSpec { form: LevyForm::Discrete(atoms), d })
    }

    pub fn density(d: usize, shape: RadialShape, eps: f64, cutoff: f64) -> Result<Self, NoiseError> {
        if !(eps > 0.0) {
            return Err(NoiseError::Invalid {
                name: "eps",
                value: eps,
                constraint: "small-jump cutoff must be positive",
            });
        }
        if !(cutoff > eps) || !cutoff.is_finite() {
            return Err(NoiseError::Invalid {
                name: "cutoff",
                value: cutoff,
                constraint: "large-jump cutoff must exceed eps and be finite",
            });
        }
        Ok(LevyMeasureSpec { form: LevyForm::Density { shape, eps, cutoff }, d })
    }

    /// surface measure of the unit sphere in the mark space
    fn surface(&self) -> f64 {
        match self.d {
            1 => 2.0,
            _ => 2.0 * std::f64::consts::PI,
        }
    }

    /// `int f(|h|) mu(dh)` (radial reduction for the density form)
    pub fn integrate_radial<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        match &self.form {
            LevyForm::Discrete(atoms) => atoms
                .iter()
                .map(|a| f(point_norm(a.h, self.d)) * a.mass)
                .sum(),
            LevyForm::Density { shape, eps, cutoff } => {
                let dim = self.d as f64;
                let s = self.surface();
                quad::adaptive(
                    |r| f(r) * shape.value(r) * r.powf(dim - 1.0) * s,
                    *eps,
                    *cutoff,
                    1e-12,
                    1e-9,
                )
                .expect("radial integrand is smooth on the truncated support")
            }
        }
    }

    /// `mu(R^d)` after truncation
    pub fn total_mass(&self) -> f64 {
        self.integrate_radial(|_| 1.0)
    }

    /// `int (1 and |h|^2) dmu`, the defining Levy integrability check
    pub fn levy_integral(&self) -> f64 {
        self.integrate_radial(|r| (r * r).min(1.0))
    }

    /// second moment discarded below the small-jump cutoff (0 for discrete)
    pub fn discarded_second_moment(&self) -> f64 {
        match &self.form {
            LevyForm::Discrete(_) => 0.0,
            LevyForm::Density { shape, eps, .. } => {
                let dim = self.d as f64;
                let s = self.surface();
                quad::adaptive(
                    |r| {
                        if r <= 0.0 {
                            0.0
                        } else {
                            r * r * shape.value(r) * r.powf(dim - 1.0) * s
                        }
                    },
                    0.0,
                    *eps,
                    1e-14,
                    1e-9,
                )
                .unwrap_or(f64::INFINITY)
            }
        }
    }

    /// `int h_1 mu(dh)` (signed; zero for radially symmetric forms)
    pub fn signed_first_moment(&self) -> f64 {
        match &self.form {
            LevyForm::Discrete(atoms) => atoms.iter().map(|a| a.h[0] * a.mass).sum(),
            LevyForm::Density { .. } => 0.0,
        }
    }

    /// Draw one mark. Density marks are radial-inverse-CDF times a uniform
    /// direction (a sign for d = 1).
    fn sample_mark<R: Rng>(&self, rng: &mut R) -> Point {
        match &self.form {
            LevyForm::Discrete(atoms) => {
                let total: f64 = atoms.iter().map(|a| a.mass).sum();
                let mut u: f64 = rng.gen::<f64>() * total;
                for a in atoms {
                    u -= a.mass;
                    if u <= 0.0 {
                        return a.h;
                    }
                }
                atoms.last().expect("non-empty by positive mass").h
            }
            LevyForm::Density { shape, eps, cutoff } => {
                let r = self.sample_radius(shape, *eps, *cutoff, rng.gen::<f64>());
                match self.d {
                    1 => {
                        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                        [sign * r, 0.0]
                    }
                    _ => {
                        let phi = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
                        [r * phi.cos(), r * phi.sin()]
                    }
                }
            }
        }
    }

    /// inverse CDF of the normalized radial law `w(r) r^{d-1}` on [eps, cutoff]
    fn sample_radius(&self, shape: &RadialShape, eps: f64, cutoff: f64, u: f64) -> f64 {
        let dim = self.d as f64;
        match (shape, self.d) {
            (RadialShape::Exp, 1) => {
                // truncated exponential
                let za = (-eps).exp();
                let zb = (-cutoff).exp();
                -(za - u * (za - zb)).ln()
            }
            (RadialShape::Power { index }, _) => {
                // radial law r^{d-1-1-index}; invert its power CDF
                let p = dim - 2.0 - index;
                if (p + 1.0).abs() < 1e-12 {
                    (eps.ln() + u * (cutoff.ln() - eps.ln())).exp()
                } else {
                    let q = p + 1.0;
                    let a = eps.powf(q);
                    let b = cutoff.powf(q);
                    (a + u * (b - a)).powf(1.0 / q)
                }
            }
            _ => {
                // generic monotone bisection on the radial CDF
                let norm = self.integrate_radial(|_| 1.0);
                let target = u * norm;
                let cdf = |r: f64| {
                    quad::adaptive(
                        |q| shape.value(q) * q.powf(dim - 1.0) * self.surface(),
                        eps,
                        r,
                        1e-12,
                        1e-10,
                    )
                    .expect("smooth radial integrand")
                };
                let (mut lo, mut hi) = (eps, cutoff);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if cdf(mid) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// sigma specifications
// ---------------------------------------------------------------------------

/// Envelope functions of the jump mark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Envelope {
    One,
    Abs,
}

impl Envelope {
    pub fn eval(&self, h: Point, d: usize) -> f64 {
        match self {
            Envelope::One => 1.0,
            Envelope::Abs => point_norm(h, d),
        }
    }
}

/// Evaluation rules for `sigma(u, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SigmaRule {
    /// `sigma = 0`
    Zero,
    /// `sigma(u, h) = lip |h| u` (linear Lipschitz, radial envelope)
    LinearAbsMark,
    /// `sigma(u, h) = lip h_1 u` (signed mark; mean-zero under symmetric mu)
    LinearSignedMark,
    /// `sigma(u, h) = lip |h| tanh(u)` (bounded nonlinear Lipschitz)
    BoundedTanh,
    /// `sigma(u, h) = h_1`, a test integrand independent of the field
    MarkOnly,
    /// `sigma(u, h) = lower |h| sign(u) |u|^growth` with growth > 1
    PowerGrowth,
}

/// The multiplicative nonlinearity with its declared envelopes and
/// constants: upper envelope `J` with Lipschitz constant `lip`, lower
/// envelope `j_bar` with constant `lower` and growth exponent
/// (rho or lambda in the growth conditions; 1 for the linear kinds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaSpec {
    pub rule: SigmaRule,
    pub j: Envelope,
    pub j_bar: Option<Envelope>,
    pub lip: f64,
    pub lower: f64,
    pub growth: f64,
}

impl SigmaSpec {
    pub fn zero() -> Self {
        SigmaSpec { rule: SigmaRule::Zero, j: Envelope::One, j_bar: None, lip: 0.0, lower: 0.0, growth: 1.0 }
    }

    pub fn linear_abs(lip: f64) -> Self {
        SigmaSpec {
            rule: SigmaRule::LinearAbsMark,
            j: Envelope::Abs,
            j_bar: Some(Envelope::Abs),
            lip,
            lower: lip,
            growth: 1.0,
        }
    }

    pub fn linear_signed(lip: f64) -> Self {
        SigmaSpec {
            rule: SigmaRule::LinearSignedMark,
            j: Envelope::Abs,
            j_bar: Some(Envelope::Abs),
            lip,
            lower: lip,
            growth: 1.0,
        }
    }

    pub fn bounded_tanh(lip: f64) -> Self {
        SigmaSpec { rule: SigmaRule::BoundedTanh, j: Envelope::Abs, j_bar: None, lip, lower: 0.0, growth: 1.0 }
    }

    pub fn mark_only() -> Self {
        SigmaSpec { rule: SigmaRule::MarkOnly, j: Envelope::Abs, j_bar: None, lip: 1.0, lower: 0.0, growth: 1.0 }
    }

    pub fn power_growth(lower: f64, growth: f64) -> Self {
        SigmaSpec {
            rule: SigmaRule::PowerGrowth,
            j: Envelope::Abs,
            j_bar: Some(Envelope::Abs),
            lip: f64::NAN, // not Lipschitz
            lower,
            growth,
        }
    }

    /// `sigma(u, h)`
    pub fn eval(&self, u: f64, h: Point, d: usize) -> f64 {
        match self.rule {
            SigmaRule::Zero => 0.0,
            SigmaRule::LinearAbsMark => self.lip * point_norm(h, d) * u,
            SigmaRule::LinearSignedMark => self.lip * h[0] * u,
            SigmaRule::BoundedTanh => self.lip * point_norm(h, d) * u.tanh(),
            SigmaRule::MarkOnly => h[0],
            SigmaRule::PowerGrowth => {
                self.lower * point_norm(h, d) * u.signum() * u.abs().powf(self.growth)
            }
        }
    }

    /// `int sigma(u, h) mu(dh)`, the compensator integrand at field value u
    pub fn compensator_integral(&self, u: f64, mu: &LevyMeasureSpec) -> f64 {
        self.compensator_fn(mu)(u)
    }

    /// Precompute the mark moments once and return the map
    /// `u -> int sigma(u, h) mu(dh)` for batched compensator evaluation.
    pub fn compensator_fn(&self, mu: &LevyMeasureSpec) -> impl Fn(f64) -> f64 {
        let needs_abs = matches!(
            self.rule,
            SigmaRule::LinearAbsMark | SigmaRule::BoundedTanh | SigmaRule::PowerGrowth
        );
        let m_abs = if needs_abs { mu.integrate_radial(|r| r) } else { 0.0 };
        let m_signed = match self.rule {
            SigmaRule::LinearSignedMark | SigmaRule::MarkOnly => mu.signed_first_moment(),
            _ => 0.0,
        };
        let spec = *self;
        move |u: f64| match spec.rule {
            SigmaRule::Zero => 0.0,
            SigmaRule::LinearAbsMark => spec.lip * u * m_abs,
            SigmaRule::LinearSignedMark => spec.lip * u * m_signed,
            SigmaRule::BoundedTanh => spec.lip * u.tanh() * m_abs,
            SigmaRule::MarkOnly => m_signed,
            SigmaRule::PowerGrowth => {
                spec.lower * u.signum() * u.abs().powf(spec.growth) * m_abs
            }
        }
    }

    pub fn is_lipschitz(&self) -> bool {
        matches!(
            self.rule,
            SigmaRule::Zero
                | SigmaRule::LinearAbsMark
                | SigmaRule::LinearSignedMark
                | SigmaRule::BoundedTanh
        )
    }
}

// ---------------------------------------------------------------------------
// condition report
// ---------------------------------------------------------------------------

/// Numeric values and pass/fail flags of the standing conditions on
/// `(sigma, mu)`.
///
/// `kappa_lebesgue` is the alternative normalization `int Jbar(h) dh` with
/// Lebesgue measure over the truncated support; the non-compensated linear
/// growth condition is stated with `dh` where all sibling conditions use
/// `mu(dh)`. Both are computed, the `mu(dh)` value is consumed downstream.
#[derive(Debug, Clone, Copy)]
pub struct ConditionReport {
    pub k2: f64,
    pub k1: f64,
    pub kappa2: f64,
    pub kappa1: f64,
    pub kappa_lebesgue: f64,
    pub sigma_zero_ok: bool,
    pub lipschitz_ok: bool,
    pub lower_envelope_ok: bool,
    pub discarded_second_moment: f64,
    /// existence condition for the compensated equation (J^2 integrable + Lipschitz)
    pub cond_compensated: bool,
    /// existence condition for the non-compensated equation (J integrable + Lipschitz)
    pub cond_noncompensated: bool,
    /// lower second-moment condition (kappa2 > 0 with a linear lower envelope)
    pub cond_lower_second: bool,
    /// faster-than-linear growth condition (growth > 1 with lower envelope)
    pub cond_superlinear: bool,
    /// non-compensated linear lower condition (kappa under mu; Lebesgue value reported too)
    pub cond_lower_first: bool,
}

/// Evaluate the integrability constants of `(sigma, mu)` and check the
/// declared envelope bounds on a deterministic sample battery.
pub fn validate_conditions(sigma: &SigmaSpec, mu: &LevyMeasureSpec) -> ConditionReport {
    let d = mu.d;
    let j = |r: f64| match sigma.j {
        Envelope::One => 1.0,
        Envelope::Abs => r,
    };
    let jb = |r: f64| match sigma.j_bar {
        Some(Envelope::One) => 1.0,
        Some(Envelope::Abs) => r,
        None => 0.0,
    };
    let k2 = mu.integrate_radial(|r| j(r) * j(r));
    let k1 = mu.integrate_radial(j);
    let kappa2 = mu.integrate_radial(|r| jb(r) * jb(r));
    let kappa1 = mu.integrate_radial(jb);
    // Lebesgue-dh variant over the truncated support (0 for discrete forms)
    let kappa_lebesgue = match &mu.form {
        LevyForm::Discrete(_) => 0.0,
        LevyForm::Density { eps, cutoff, .. } => {
            let s = match d {
                1 => 2.0,
                _ => 2.0 * std::f64::consts::PI,
            };
            quad::adaptive(
                |r| jb(r) * r.powf(d as f64 - 1.0) * s,
                *eps,
                *cutoff,
                1e-12,
                1e-9,
            )
            .unwrap_or(f64::INFINITY)
        }
    };

    // deterministic battery of marks and field values
    let marks: Vec<Point> = match &mu.form {
        LevyForm::Discrete(atoms) => atoms.iter().map(|a| a.h).collect(),
        LevyForm::Density { eps, cutoff, .. } => (0..7)
            .map(|i| {
                let r = eps + (cutoff - eps) * i as f64 / 6.0;
                [r, 0.0]
            })
            .collect(),
    };
    let us: [f64; 7] = [-3.0, -1.0, -0.25, 0.0, 0.5, 1.0, 2.5];

    let mut sigma_zero_ok = true;
    let mut lipschitz_ok = sigma.is_lipschitz();
    let mut lower_envelope_ok = sigma.j_bar.is_some();
    for &h in &marks {
        if sigma.eval(0.0, h, d).abs() > 1e-14 {
            sigma_zero_ok = false;
        }
        for &x in &us {
            if let Some(jbar) = sigma.j_bar {
                let bound = sigma.lower * jbar.eval(h, d) * x.abs().powf(sigma.growth);
                if sigma.eval(x, h, d).abs() < bound * (1.0 - 1e-12) {
                    lower_envelope_ok = false;
                }
            }
            if sigma.is_lipschitz() {
                for &y in &us {
                    let lhs = (sigma.eval(x, h, d) - sigma.eval(y, h, d)).abs();
                    let rhs = sigma.j.eval(h, d) * sigma.lip * (x - y).abs();
                    if lhs > rhs * (1.0 + 1e-12) + 1e-14 {
                        lipschitz_ok = false;
                    }
                }
            }
        }
    }

    ConditionReport {
        k2,
        k1,
        kappa2,
        kappa1,
        kappa_lebesgue,
        sigma_zero_ok,
        lipschitz_ok,
        lower_envelope_ok,
        discarded_second_moment: mu.discarded_second_moment(),
        cond_compensated: k2.is_finite() && sigma_zero_ok && lipschitz_ok,
        cond_noncompensated: k1.is_finite() && sigma_zero_ok && lipschitz_ok,
        cond_lower_second: kappa2 > 0.0 && lower_envelope_ok && sigma.growth == 1.0,
        cond_superlinear: sigma.growth > 1.0 && lower_envelope_ok && kappa2 > 0.0,
        cond_lower_first: kappa1 > 0.0 && lower_envelope_ok && sigma.growth == 1.0,
    }
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

/// One atom of a sampled Poisson configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseAtom {
    pub s: f64,
    pub y: Point,
    pub h: Point,
}

/// A sampled Poisson random measure on `[0, T] x box`, sorted by time,
/// deterministic in `(grid, mu, seed)` bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub atoms: Vec<NoiseAtom>,
    pub seed: u64,
    pub grid: GridSpec,
}

/// Sample the Poisson random measure with intensity `dt dx mu(dh)`:
/// atom count Poisson with mean `T |box| mu(R^d)`, times and locations
/// uniform, marks from the normalized jump law. Zero total mass yields an
/// empty realization.
pub fn sample_noise(grid: &GridSpec, mu: &LevyMeasureSpec, seed: u64) -> NoiseRealization {
    let total_mass = mu.total_mass();
    let mean = grid.horizon * grid.box_volume() * total_mass;
    let mut rng = seeded_rng(seed);
    let count = if mean > 0.0 {
        Poisson::new(mean).expect("positive mean").sample(&mut rng) as usize
    } else {
        0
    };
    let mut atoms = Vec::with_capacity(count);
    for _ in 0..count {
        let s = rng.gen::<f64>() * grid.horizon;
        let mut y = [0.0, 0.0];
        for c in y.iter_mut().take(grid.d) {
            *c = -grid.half_width + rng.gen::<f64>() * 2.0 * grid.half_width;
        }
        let h = mu.sample_mark(&mut rng);
        atoms.push(NoiseAtom { s, y, h });
    }
    atoms.sort_by(|a, b| a.s.total_cmp(&b.s));
    NoiseRealization { atoms, seed, grid: *grid }
}

// ---------------------------------------------------------------------------
// stochastic convolution
// ---------------------------------------------------------------------------

/// The stochastic convolution
/// `int_0^t int int G(t-s, x-y) sigma(u(s-, y), h) N(ds dy dh)` at one grid
/// time and point, with the field frozen at the latest grid time strictly
/// before each atom (predictability) and time lags snapped to the table's
/// nearest-not-later slice. When `compensated`, subtracts the cell-midpoint
/// compensator `sum_cells G . [int sigma(u, h) mu(dh)] dt dy` built from the
/// same snapped kernel.
#[allow(clippy::too_many_arguments)]
pub fn stochastic_convolution(
    table: &GreenTable,
    noise: &NoiseRealization,
    history: &[Vec<f64>],
    sigma: &SigmaSpec,
    mu: &LevyMeasureSpec,
    compensated: bool,
    k: usize,
    x: Point,
) -> Result<f64, NoiseError> {
    if noise.grid != table.grid {
        return Err(NoiseError::GridBinding);
    }
    if history.len() < k {
        return Err(NoiseError::HistoryTooShort { have: history.len(), need: k });
    }
    let grid = &table.grid;
    let t = grid.time(k);
    let dt = grid.dt();
    let mut sum = 0.0;
    for atom in &noise.atoms {
        if atom.s >= t {
            break;
        }
        // latest grid time strictly before the atom
        let j = last_step_strictly_before(atom.s, dt, grid.nt);
        let u = grid.interp(&history[j], atom.y);
        let slice = table.slice_index_for_lag(t - atom.s);
        let lag = [x[0] - atom.y[0], x[1] - atom.y[1]];
        sum += table.value_at_lag(slice, lag) * sigma.eval(u, atom.h, grid.d);
    }
    if compensated {
        let cell = grid.cell_volume();
        let comp = sigma.compensator_fn(mu);
        for j in 0..k {
            let s_mid = (j as f64 + 0.5) * dt;
            let slice = table.slice_index_for_lag(t - s_mid);
            let field = &history[j];
            let mut layer = 0.0;
            for (i, &u) in field.iter().enumerate() {
                let y = grid.site_position(i);
                let lag = [x[0] - y[0], x[1] - y[1]];
                layer += table.value_at_lag(slice, lag) * comp(u);
            }
            sum -= layer * dt * cell;
        }
    }
    Ok(sum)
}

/// Index of the latest grid time strictly before `s` (0 for s in (0, dt]).
pub(crate) fn last_step_strictly_before(s: f64, dt: f64, nt: usize) -> usize {
    let ratio = s / dt;
    let near = ratio.round();
    let j = if (ratio - near).abs() < 1e-9 {
        near as i64 - 1 // s lies on a grid time; strictly before is the previous one
    } else {
        ratio.ceil() as i64 - 1
    };
    j.clamp(0, nt as i64 - 1) as usize
}

/// Field-level form of [`stochastic_convolution`]: the convolution at every
/// grid point of step `k`, sharing the per-atom work and running the
/// compensator through the lattice convolution.
#[allow(clippy::too_many_arguments)]
pub fn stochastic_convolution_field(
    table: &GreenTable,
    noise: &NoiseRealization,
    history: &[Vec<f64>],
    sigma: &SigmaSpec,
    mu: &LevyMeasureSpec,
    compensated: bool,
    k: usize,
) -> Result<Vec<f64>, NoiseError> {
    if noise.grid != table.grid {
        return Err(NoiseError::GridBinding);
    }
    if history.len() < k {
        return Err(NoiseError::HistoryTooShort { have: history.len(), need: k });
    }
    let grid = &table.grid;
    let t = grid.time(k);
    let dt = grid.dt();
    let sites = grid.sites();
    let mut out = vec![0.0; sites];
    for atom in &noise.atoms {
        if atom.s >= t {
            break;
        }
        let j = last_step_strictly_before(atom.s, dt, grid.nt);
        let u = grid.interp(&history[j], atom.y);
        let amp = sigma.eval(u, atom.h, grid.d);
        if amp == 0.0 {
            continue;
        }
        let slice = table.slice_index_for_lag(t - atom.s);
        for (i, o) in out.iter_mut().enumerate() {
            let p = grid.site_position(i);
            let lag = [p[0] - atom.y[0], p[1] - atom.y[1]];
            *o += table.value_at_lag(slice, lag) * amp;
        }
    }
    if compensated {
        let comp = sigma.compensator_fn(mu);
        for j in 0..k {
            let s_mid = (j as f64 + 0.5) * dt;
            let slice = table.slice_index_for_lag(t - s_mid);
            let comp_field: Vec<f64> = history[j].iter().map(|&u| comp(u)).collect();
            let conv = table.convolve(slice, &comp_field);
            for (o, c) in out.iter_mut().zip(conv) {
                *o -= c * dt;
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// isometry checks
// ---------------------------------------------------------------------------

/// Monte Carlo vs quadrature comparison for one functional.
#[derive(Debug, Clone, Copy)]
pub struct IsometryRow {
    pub mc_estimate: f64,
    pub mc_stderr: f64,
    pub quadrature: f64,
    pub pass: bool,
}

/// Result of [`isometry_check`]: the first-moment identity for `dN` and the
/// second-moment isometry for the compensated `dN~`.
#[derive(Debug, Clone, Copy)]
pub struct IsometryReport {
    pub first_moment: IsometryRow,
    pub second_moment: IsometryRow,
    pub replicas: usize,
}

/// Verify the Walsh-type identities
/// `E int X dN = int X ds dx mu(dh)` and
/// `E |int X dN~|^2 = int X^2 ds dx mu(dh)`
/// for a deterministic integrand `X(s, x, h)` bounded on `[0,T] x box`,
/// by Monte Carlo over `replicas` independent realizations against direct
/// quadrature; a row passes when the difference is within 3 standard errors.
pub fn isometry_check<F>(
    integrand: F,
    grid: &GridSpec,
    mu: &LevyMeasureSpec,
    replicas: usize,
    seed: u64,
) -> IsometryReport
where
    F: Fn(f64, Point, Point) -> f64 + Sync,
{
    use rayon::prelude::*;

    // quadrature of int X^pow over ds dx mu(dh)
    let space_time = |pow: i32, h: Point| -> f64 {
        quad::adaptive(
            |s| {
                quad::adaptive(
                    |x1| match grid.d {
                        1 => integrand(s, [x1, 0.0], h).powi(pow),
                        _ => quad::adaptive(
                            |x2| integrand(s, [x1, x2], h).powi(pow),
                            -grid.half_width,
                            grid.half_width,
                            1e-10,
                            1e-8,
                        )
                        .expect("bounded integrand"),
                    },
                    -grid.half_width,
                    grid.half_width,
                    1e-10,
                    1e-8,
                )
                .expect("bounded integrand")
            },
            0.0,
            grid.horizon,
            1e-10,
            1e-8,
        )
        .expect("bounded integrand")
    };
    let mu_integral = |pow: i32| -> f64 {
        match &mu.form {
            LevyForm::Discrete(atoms) => {
                atoms.iter().map(|a| a.mass * space_time(pow, a.h)).sum()
            }
            LevyForm::Density { .. } => mu.integrate_radial(|r| space_time(pow, [r, 0.0])),
        }
    };
    let quad_first = mu_integral(1);
    let quad_second = mu_integral(2);

    // Monte Carlo; per-replica streams, reduction in replica order
    let samples: Vec<(f64, f64)> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let noise = sample_noise(grid, mu, derive_seed(seed, i as u64));
            let raw: f64 = noise.atoms.iter().map(|a| integrand(a.s, a.y, a.h)).sum();
            let centered = raw - quad_first;
            (raw, centered * centered)
        })
        .collect();
    let n = replicas as f64;
    let mean1 = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let mean2 = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let se1 = (samples.iter().map(|s| (s.0 - mean1).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let se2 = (samples.iter().map(|s| (s.1 - mean2).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();

    IsometryReport {
        first_moment: IsometryRow {
            mc_estimate: mean1,
            mc_stderr: se1,
            quadrature: quad_first,
            pass: (mean1 - quad_first).abs() <= 3.0 * se1,
        },
        second_moment: IsometryRow {
            mc_estimate: mean2,
            mc_stderr: se2,
            quadrature: quad_second,
            pass: (mean2 - quad_second).abs() <= 3.0 * se2,
        },
        replicas,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{build_green_table_with, ModelParams, TruncationPolicy};

    fn grid1(half_width: f64, t: f64) -> GridSpec {
        GridSpec { d: 1, half_width, n: 64, horizon: t, nt: 16 }
    }

    fn unit_atom(d: usize) -> LevyMeasureSpec {
        LevyMeasureSpec::discrete(d, vec![MassAtom { h: [1.0, 0.0], mass: 1.0 }]).unwrap()
    }

    #[test]
    fn conditions_point_mass() {
        // mu = unit point mass, J = 1: K2 = K1 = 1
        let mu = unit_atom(1);
        let mut sigma = SigmaSpec::linear_abs(1.0);
        sigma.j = Envelope::One;
        let rep = validate_conditions(&sigma, &mu);
        assert_eq!(rep.k2, 1.0);
        assert_eq!(rep.k1, 1.0);
    }

    #[test]
    fn conditions_two_atoms() {
        // masses {1, 1} with J = |h| values {1, 2}: K2 = 5, K1 = 3
        let mu = LevyMeasureSpec::discrete(
            1,
            vec![
                MassAtom { h: [1.0, 0.0], mass: 1.0 },
                MassAtom { h: [2.0, 0.0], mass: 1.0 },
            ],
        )
        .unwrap();
        let sigma = SigmaSpec::linear_abs(1.0);
        let rep = validate_conditions(&sigma, &mu);
        assert!((rep.k2 - 5.0).abs() < 1e-12);
        assert!((rep.k1 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn conditions_density_vs_composite_quadrature() {
        // mu = density exp(-|h|) on [0.01, 10] in d = 1, J(h) = |h|
        let mu = LevyMeasureSpec::density(1, RadialShape::Exp, 0.01, 10.0).unwrap();
        let sigma = SigmaSpec::linear_abs(1.0);
        let rep = validate_conditions(&sigma, &mu);
        // oracle: 10^6-point composite Simpson of 2 int_eps^R r^2 e^{-r} dr
        let oracle = {
            let (a, b, n) = (0.01f64, 10.0f64, 1_000_000usize);
            let h = (b - a) / n as f64;
            let f = |r: f64| 2.0 * r * r * (-r).exp();
            let mut s = f(a) + f(b);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * f(a + i as f64 * h);
            }
            s * h / 3.0
        };
        assert!(
            (rep.k2 - oracle).abs() < 1e-6 * oracle,
            "K2 = {} vs oracle {}",
            rep.k2,
            oracle
        );
        assert!(rep.discarded_second_moment > 0.0);
        assert!(rep.kappa_lebesgue > 0.0);
        // Levy integrability holds on the truncated support
        assert!(mu.levy_integral().is_finite());
    }

    #[test]
    fn factories_pass_their_declared_conditions() {
        let mu = LevyMeasureSpec::discrete(
            1,
            vec![MassAtom { h: [0.5, 0.0], mass: 2.0 }, MassAtom { h: [-1.5, 0.0], mass: 0.5 }],
        )
        .unwrap();
        for sigma in [
            SigmaSpec::zero(),
            SigmaSpec::linear_abs(0.7),
            SigmaSpec::linear_signed(1.3),
            SigmaSpec::bounded_tanh(2.0),
        ] {
            let rep = validate_conditions(&sigma, &mu);
            assert!(rep.sigma_zero_ok, "{:?}", sigma.rule);
            assert!(rep.lipschitz_ok, "{:?}", sigma.rule);
            assert!(rep.cond_compensated, "{:?}", sigma.rule);
            assert!(rep.cond_noncompensated, "{:?}", sigma.rule);
        }
        let power = SigmaSpec::power_growth(1.0, 1.5);
        let rep = validate_conditions(&power, &mu);
        assert!(rep.sigma_zero_ok);
        assert!(rep.lower_envelope_ok);
        assert!(rep.cond_superlinear);
        assert!(!rep.cond_compensated); // not Lipschitz
        // mark-only integrand fails sigma(0, h) = 0 as expected
        let rep = validate_conditions(&SigmaSpec::mark_only(), &mu);
        assert!(!rep.sigma_zero_ok);
    }

    #[test]
    fn sampling_zero_mass_gives_empty() {
        let mu = LevyMeasureSpec::discrete(1, vec![]).unwrap();
        let r = sample_noise(&grid1(1.0, 1.0), &mu, 9);
        assert!(r.atoms.is_empty());
    }

    #[test]
    fn sampling_is_deterministic_and_sorted() {
        let mu = unit_atom(1);
        let g = grid1(2.0, 1.5);
        let a = sample_noise(&g, &mu, 123);
        let b = sample_noise(&g, &mu, 123);
        assert_eq!(a, b);
        assert!(a.atoms.windows(2).all(|w| w[0].s <= w[1].s));
        for atom in &a.atoms {
            assert!(atom.s >= 0.0 && atom.s <= g.horizon);
            assert!(atom.y[0] >= -g.half_width && atom.y[0] < g.half_width);
        }
        let c = sample_noise(&g, &mu, 124);
        assert_ne!(a, c);
    }

    #[test]
    fn sampling_count_matches_poisson_mean() {
        // T |box| mass = 1 * 2 * 3 = 6
        let mu = LevyMeasureSpec::discrete(1, vec![MassAtom { h: [1.0, 0.0], mass: 3.0 }]).unwrap();
        let g = grid1(1.0, 1.0);
        let reps = 100_000usize;
        let (mut sum, mut sumsq) = (0.0f64, 0.0f64);
        for i in 0..reps {
            let n = sample_noise(&g, &mu, derive_seed(77, i as u64)).atoms.len() as f64;
            sum += n;
            sumsq += n * n;
        }
        let mean = sum / reps as f64;
        let var = sumsq / reps as f64 - mean * mean;
        let tol = 3.0 * (6.0f64 / reps as f64).sqrt();
        assert!((mean - 6.0).abs() < tol, "mean {mean}");
        assert!((var - 6.0).abs() < 10.0 * tol, "var {var}");
    }

    #[test]
    fn density_marks_stay_in_truncated_support() {
        let mu = LevyMeasureSpec::density(1, RadialShape::Exp, 0.5, 2.0).unwrap();
        let g = grid1(1.0, 4.0);
        let r = sample_noise(&g, &mu, 5);
        assert!(!r.atoms.is_empty());
        for a in &r.atoms {
            let m = a.h[0].abs();
            assert!((0.5..=2.0).contains(&m), "mark {m} outside support");
        }
        // both signs occur
        assert!(r.atoms.iter().any(|a| a.h[0] > 0.0));
        assert!(r.atoms.iter().any(|a| a.h[0] < 0.0));
    }

    fn small_table() -> (GridSpec, GreenTable) {
        let params = ModelParams::new(2.0, 1.0, 1.0, 1).unwrap();
        let grid = GridSpec { d: 1, half_width: 8.0, n: 128, horizon: 0.5, nt: 16 };
        let table = build_green_table_with(&params, &grid, &TruncationPolicy::default()).unwrap();
        (grid, table)
    }

    #[test]
    fn convolution_zero_sigma_is_zero() {
        let (grid, table) = small_table();
        let mu = unit_atom(1);
        let noise = sample_noise(&grid, &mu, 3);
        let history = vec![vec![1.0; grid.sites()]; grid.nt];
        for k in [1usize, 7, 16] {
            let v = stochastic_convolution(
                &table,
                &noise,
                &history,
                &SigmaSpec::zero(),
                &mu,
                true,
                k,
                [0.25, 0.0],
            )
            .unwrap();
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn convolution_single_atom_mark_only() {
        let (grid, table) = small_table();
        let mu = unit_atom(1);
        // one atom at a grid point, mid-cell time: G(snapped lag)(x - y) h exactly
        let y = grid.site_position(40);
        let noise = NoiseRealization {
            atoms: vec![NoiseAtom { s: 0.3 * grid.dt(), y, h: [2.5, 0.0] }],
            seed: 0,
            grid,
        };
        let history = vec![vec![0.0; grid.sites()]; grid.nt];
        let k = 5usize;
        let x = grid.site_position(50);
        let v = stochastic_convolution(
            &table,
            &noise,
            &history,
            &SigmaSpec::mark_only(),
            &mu,
            false,
            k,
            x,
        )
        .unwrap();
        let slice = table.slice_index_for_lag(grid.time(k) - 0.3 * grid.dt());
        let expected = table.value_at_lag(slice, [x[0] - y[0], 0.0]) * 2.5;
        assert_eq!(v, expected);
    }

    #[test]
    fn convolution_field_matches_pointwise() {
        let (grid, table) = small_table();
        let mu = unit_atom(1);
        let noise = sample_noise(&grid, &mu, 11);
        let history: Vec<Vec<f64>> = (0..grid.nt)
            .map(|j| (0..grid.sites()).map(|i| ((i + j) as f64 * 0.1).sin()).collect())
            .collect();
        let sigma = SigmaSpec::linear_abs(0.8);
        let k = 9usize;
        let field =
            stochastic_convolution_field(&table, &noise, &history, &sigma, &mu, true, k).unwrap();
        for &i in &[0usize, 31, 64, 100] {
            let v = stochastic_convolution(
                &table,
                &noise,
                &history,
                &sigma,
                &mu,
                true,
                k,
                grid.site_position(i),
            )
            .unwrap();
            assert!(
                (v - field[i]).abs() < 1e-10 * (1.0 + v.abs()),
                "site {i}: {v} vs {}",
                field[i]
            );
        }
    }

    #[test]
    fn compensated_convolution_has_zero_mean() {
        // frozen deterministic history, sigma(u, h) = h u: ensemble mean -> 0
        let (grid, table) = small_table();
        let mu = LevyMeasureSpec::discrete(1, vec![MassAtom { h: [1.0, 0.0], mass: 1.5 }]).unwrap();
        let sigma = SigmaSpec::linear_signed(1.0);
        let history: Vec<Vec<f64>> = (0..grid.nt)
            .map(|j| {
                (0..grid.sites())
                    .map(|i| 1.0 + 0.3 * ((i as f64 * 0.2).cos() + j as f64 * 0.05))
                    .collect()
            })
            .collect();
        let reps = 10_000usize;
        let x = [0.5, 0.0];
        let k = 12usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..reps {
            let noise = sample_noise(&grid, &mu, derive_seed(2024, i as u64));
            let v =
                stochastic_convolution(&table, &noise, &history, &sigma, &mu, true, k, x).unwrap();
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / reps as f64;
        let se = ((sumsq / reps as f64 - mean * mean) / reps as f64).sqrt();
        assert!(mean.abs() <= 3.0 * se, "mean {mean} vs stderr {se}");
    }

    #[test]
    fn convolution_rejects_mismatched_grid() {
        let (grid, table) = small_table();
        let mu = unit_atom(1);
        let other = GridSpec { half_width: 4.0, ..grid };
        let noise = sample_noise(&other, &mu, 3);
        let history = vec![vec![0.0; grid.sites()]; grid.nt];
        let r = stochastic_convolution(
            &table,
            &noise,
            &history,
            &SigmaSpec::zero(),
            &mu,
            false,
            1,
            [0.0, 0.0],
        );
        assert!(matches!(r, Err(NoiseError::GridBinding)));
    }

    #[test]
    fn predictability_snapping() {
        let dt = 0.125;
        assert_eq!(last_step_strictly_before(0.01, dt, 16), 0);
        assert_eq!(last_step_strictly_before(0.125, dt, 16), 0);
        assert_eq!(last_step_strictly_before(0.1251, dt, 16), 1);
        assert_eq!(last_step_strictly_before(0.9, dt, 16), 7);
        assert_eq!(last_step_strictly_before(2.0, dt, 16), 15);
    }

    #[test]
    fn isometry_point_mass_unit_domain() {
        // X = 1, domain measure 1, mu = unit point mass: compensated second
        // moment is the variance of a centered Poisson(1), namely 1
        let grid = GridSpec { d: 1, half_width: 0.5, n: 4, horizon: 1.0, nt: 1 };
        let mu = unit_atom(1);
        let rep = isometry_check(|_, _, _| 1.0, &grid, &mu, 100_000, 42);
        assert!(rep.first_moment.pass, "{:?}", rep.first_moment);
        assert!(rep.second_moment.pass, "{:?}", rep.second_moment);
        assert!((rep.first_moment.quadrature - 1.0).abs() < 1e-9);
        assert!((rep.second_moment.quadrature - 1.0).abs() < 1e-9);
        assert!((rep.second_moment.mc_estimate - 1.0).abs() < 0.03);
    }

    #[test]
    fn isometry_scales_with_constants() {
        let grid = GridSpec { d: 1, half_width: 0.5, n: 4, horizon: 1.0, nt: 1 };
        let mu = unit_atom(1);
        let c = 2.5f64;
        let rep1 = isometry_check(|_, _, _| 1.0, &grid, &mu, 20_000, 7);
        let repc = isometry_check(|_, _, _| c, &grid, &mu, 20_000, 7);
        assert!((repc.first_moment.quadrature - c * rep1.first_moment.quadrature).abs() < 1e-9);
        assert!(
            (repc.second_moment.quadrature - c * c * rep1.second_moment.quadrature).abs() < 1e-9
        );
        assert!((repc.first_moment.mc_estimate - c * rep1.first_moment.mc_estimate).abs() < 1e-9);
        assert!(repc.second_moment.pass);
    }

    #[test]
    fn isometry_density_measure() {
        // X(s, x, h) = s |h| against the truncated exponential density
        let grid = GridSpec { d: 1, half_width: 1.0, n: 4, horizon: 1.0, nt: 1 };
        let mu = LevyMeasureSpec::density(1, RadialShape::Exp, 0.01, 10.0).unwrap();
        let rep = isometry_check(|s, _, h| s * h[0].abs(), &grid, &mu, 100_000, 11);
        assert!(rep.first_moment.pass, "{:?}", rep.first_moment);
        assert!(rep.second_moment.pass, "{:?}", rep.second_moment);
    }
}
