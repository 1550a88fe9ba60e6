//! Command execution and artifact writing.
//!
//! Every command consumes one [`ExperimentConfig`] and writes into an output
//! directory: CSV result files (decimal, 17 significant digits, '.' radix,
//! newline-terminated records, header row), a `manifest.toml` with the full
//! effective configuration, seeds, version, and wall time, a rerunnable
//! `config.echo.toml`, a gnuplot script referencing the CSVs, and a
//! human-readable `summary.txt`. Outputs are byte-identical across reruns of
//! the same configuration and seed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use thiserror::Error;

use crate::analysis::{
    self, energy_blowup_certificate, envelope_rate, graded_grid, growth_rate_fit,
    moment_estimator, nonlinear_blowup, renewal_solve, upsilon, upsilon_inverse, AnalysisError,
};
use crate::config::{DensityWhich, ExperimentConfig, NoiseKindKey};
use crate::kernels::{
    build_green_table_with, c_star, green_function, GreenMethod,
    KernelError,
};
use crate::noise::{
    isometry_check, validate_conditions, IsometryReport, LevyMeasureSpec, NoiseError,
    RadialShape,
};
use crate::solver::{
    simulate_ensemble, simulate_path, NoiseKind, SolverError,
};
use crate::specfun::{
    inv_subordinator_density, stable_density, FracOrder, MittagLeffler, SpecFunError,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 1 for validation failures, 2 for numerical failures
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<crate::config::ConfigError> for CliError {
    fn from(e: crate::config::ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::InvalidParam { .. }
            | KernelError::DimensionConstraint { .. }
            | KernelError::NonPositiveTime(_)
            | KernelError::Resolution { .. }
            | KernelError::Grid(_) => CliError::Validation(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::NonConvergence { .. } => CliError::Numerical(e.to_string()),
            SolverError::Kernel(k) => k.into(),
            SolverError::Noise(n) => n.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<NoiseError> for CliError {
    fn from(e: NoiseError) -> Self {
        match e {
            NoiseError::Quad(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::StepTooLarge(_) | AnalysisError::Kernel(_) => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SpecFunError> for CliError {
    fn from(e: SpecFunError) -> Self {
        match e {
            SpecFunError::Quad(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

/// The experiment commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Kernel,
    Ml,
    Density,
    Isometry,
    Simulate,
    Moments,
    Bounds,
    Upsilon,
    Blowup,
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::Kernel => "kernel",
            CommandKind::Ml => "ml",
            CommandKind::Density => "density",
            CommandKind::Isometry => "isometry",
            CommandKind::Simulate => "simulate",
            CommandKind::Moments => "moments",
            CommandKind::Bounds => "bounds",
            CommandKind::Upsilon => "upsilon",
            CommandKind::Blowup => "blowup",
        }
    }
}

/// CSV float format: 17 significant digits, reproducible byte-for-byte.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// FNV-1a, for recording configuration / report fingerprints in manifests.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct Artifacts<'a> {
    dir: &'a Path,
    outputs: Vec<String>,
    summary: String,
    plot: String,
    extra_manifest: Vec<(String, String)>,
    started: Instant,
}

impl<'a> Artifacts<'a> {
    fn new(dir: &'a Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts {
            dir,
            outputs: Vec::new(),
            summary: String::new(),
            plot: String::from("set datafile separator ','\nset key autotitle columnhead\n"),
            extra_manifest: Vec::new(),
            started: Instant::now(),
        })
    }

    fn write_csv(
        &mut self,
        name: &str,
        header: &str,
        rows: impl IntoIterator<Item = Vec<f64>>,
    ) -> Result<(), CliError> {
        let mut text = String::new();
        text.push_str(header);
        text.push('\n');
        for row in rows {
            let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        fs::write(self.dir.join(name), text)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_csv_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        fs::write(self.dir.join(name), text)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn note(&mut self, line: impl AsRef<str>) {
        self.summary.push_str(line.as_ref());
        self.summary.push('\n');
    }

    fn record(&mut self, key: &str, value: impl ToString) {
        self.extra_manifest.push((key.to_string(), value.to_string()));
    }

    fn plot_line(&mut self, line: &str) {
        self.plot.push_str(line);
        self.plot.push('\n');
    }

    fn finish(mut self, cmd: CommandKind, config: &ExperimentConfig) -> Result<(), CliError> {
        let echo = config.serialize();
        fs::write(self.dir.join("config.echo.toml"), &echo)?;
        self.outputs.push("config.echo.toml".into());
        fs::write(self.dir.join("summary.txt"), &self.summary)?;
        fs::write(self.dir.join("plot.gp"), &self.plot)?;

        let mut manifest = String::new();
        let _ = writeln!(manifest, "command = {:?}", cmd.name());
        let _ = writeln!(manifest, "version = {:?}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(manifest, "seed = {}", config.run.seed);
        let _ = writeln!(manifest, "replicas = {}", config.run.replicas);
        let _ = writeln!(manifest, "wall_time_ms = {}", self.started.elapsed().as_millis());
        let _ = writeln!(manifest, "config_hash = \"{:016x}\"", fnv1a64(echo.as_bytes()));
        for (k, v) in &self.extra_manifest {
            let _ = writeln!(manifest, "{k} = {v}");
        }
        let _ = writeln!(
            manifest,
            "outputs = [{}]",
            self.outputs.iter().map(|o| format!("{o:?}")).collect::<Vec<_>>().join(", ")
        );
        manifest.push_str("\n# rerun with: fracspde ");
        manifest.push_str(cmd.name());
        manifest.push_str(" --config config.echo.toml --out <dir>\n\n[config]\n");
        for line in echo.lines() {
            // nest the effective config one level down
            if let Some(section) = line.strip_prefix('[') {
                manifest.push_str("[config.");
                manifest.push_str(section);
            } else {
                manifest.push_str(line);
            }
            manifest.push('\n');
        }
        fs::write(self.dir.join("manifest.toml"), manifest)?;
        Ok(())
    }
}

/// Execute one command into `out_dir`.
pub fn run_command(
    cmd: CommandKind,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<(), CliError> {
    config.validate()?;
    let mut art = Artifacts::new(out_dir)?;
    match cmd {
        CommandKind::Ml => run_ml(config, &mut art)?,
        CommandKind::Density => run_density(config, &mut art)?,
        CommandKind::Kernel => run_kernel(config, &mut art)?,
        CommandKind::Isometry => run_isometry(config, &mut art)?,
        CommandKind::Simulate => run_simulate(config, &mut art)?,
        CommandKind::Moments => run_moments(config, &mut art)?,
        CommandKind::Bounds => run_bounds(config, &mut art)?,
        CommandKind::Upsilon => run_upsilon(config, &mut art)?,
        CommandKind::Blowup => run_blowup(config, &mut art)?,
    }
    art.finish(cmd, config)
}

fn run_ml(config: &ExperimentConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let beta = FracOrder::new(config.model.beta).map_err(CliError::from)?;
    let ml = MittagLeffler::new(beta);
    let o = &config.options;
    let zs = linspace(o.z_min, o.z_max, o.z_points);
    art.write_csv("ml.csv", "z,ml", zs.iter().map(|&z| vec![z, ml.eval_neg(-z)]))?;
    art.note(format!("E_beta on [{}, {}] at beta = {}", o.z_min, o.z_max, config.model.beta));
    art.plot_line("plot 'ml.csv' using 1:2 with lines");
    Ok(())
}

fn run_density(config: &ExperimentConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let beta = FracOrder::new(config.model.beta).map_err(CliError::from)?;
    let o = &config.options;
    let us = linspace(o.u_min, o.u_max, o.u_points);
    match o.density_which {
        DensityWhich::Stable => {
            let rows: Result<Vec<_>, SpecFunError> = us
                .iter()
                .map(|&u| stable_density(beta, u).map(|g| vec![u, g]))
                .collect();
            art.write_csv("density.csv", "u,g", rows.map_err(CliError::from)?)?;
            art.note(format!("one-sided stable density, beta = {}", config.model.beta));
        }
        DensityWhich::Inverse => {
            let t = o.density_t;
            let rows: Result<Vec<_>, SpecFunError> = us
                .iter()
                .map(|&x| inv_subordinator_density(beta, t, x).map(|f| vec![x, f]))
                .collect();
            art.write_csv("density.csv", "x,f", rows.map_err(CliError::from)?)?;
            art.note(format!(
                "inverse-subordinator density at t = {t}, beta = {}",
                config.model.beta
            ));
        }
    }
    art.plot_line("plot 'density.csv' using 1:2 with lines");
    Ok(())
}

fn run_kernel(config: &ExperimentConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let params = config.model_params()?;
    let o = &config.options;
    let xs = linspace(o.x_min, o.x_max, o.x_points);
    let mut rows = Vec::new();
    let mut max_diff = 0.0f64;
    for &t in &o.t_values {
        for &x in &xs {
            let a = green_function(&params, t, [x, 0.0], GreenMethod::Subordination)?;
            let b = green_function(&params, t, [x, 0.0], GreenMethod::Spectral)?;
            max_diff = max_diff.max((a - b).abs());
            rows.push(vec![t, x, a, b, (a - b).abs()]);
        }
    }
    art.write_csv("kernel.csv", "t,x,G_subordination,G_spectral,abs_diff", rows)?;
    art.note(format!("cross-method sup difference: {max_diff:.3e}"));
    art.record("kernel_max_abs_diff", fmt_f64(max_diff));
    art.plot_line("plot 'kernel.csv' using 2:3 with points, '' using 2:4 with lines");
    Ok(())
}

/// The three built-in isometry integrands: the unit integrand on a
/// measure-one domain with a unit point mass, a constant, and `s |h|`
/// against the truncated exponential density.
fn run_isometry(config: &ExperimentConfig, art: &mut Artifacts) -> Result<(), CliError> {
    use crate::grid::GridSpec;
    let replicas = config.run.replicas;
    let seed = config.run.seed;
    let unit_grid = GridSpec { d: 1, half_width: 0.5, n: 4, horizon: 1.0, nt: 1 };
    let unit_mass = LevyMeasureSpec::discrete(
        1,
        vec![crate::noise::MassAtom { h: [1.0, 0.0], mass: 1.0 }],
    )
    .map_err(CliError::from)?;
    let density = LevyMeasureSpec::density(1, RadialShape::Exp, 0.01, 10.0)?;
    let density_grid = GridSpec { d: 1, half_width: 1.0, n: 4, horizon: 1.0, nt: 1 };

    let checks: Vec<(&str, IsometryReport)> = vec![
        ("one", isometry_check(|_, _, _| 1.0, &unit_grid, &unit_mass, replicas, seed)),
        ("const_2.5", isometry_check(|_, _, _| 2.5, &unit_grid, &unit_mass, replicas, seed + 1)),
        (
            "s_abs_h",
            isometry_check(|s, _, h| s * h[0].abs(), &density_grid, &density, replicas, seed + 2),
        ),
    ];
    let mut text = String::from("quantity,mc_estimate,mc_stderr,quadrature,pass\n");
    let mut all_pass = true;
    for (name, rep) in &checks {
        for (kind, row) in
            [("first_moment", rep.first_moment), ("second_moment", rep.second_moment)]
        {
            all_pass &= row.pass;
            let _ = writeln!(
                text,
                "{name}.{kind},{},{},{},{}",
                fmt_f64(row.mc_estimate),
                fmt_f64(row.mc_stderr),
                fmt_f64(row.quadrature),
                u8::from(row.pass),
            );
        }
        art.note(format!(
            "{name}: first {:.6} +- {:.2e} vs {:.6}; second {:.6} +- {:.2e} vs {:.6}",
            rep.first_moment.mc_estimate,
            rep.first_moment.mc_stderr,
            rep.first_moment.quadrature,
            rep.second_moment.mc_estimate,
            rep.second_moment.mc_stderr,
            rep.second_moment.quadrature,
        ));
    }
    art.write_csv_text("isometry.csv", &text)?;
    art.record("isometry_all_pass", all_pass);
    if !all_pass {
        return Err(CliError::Numerical(
            "isometry check failed beyond 3 Monte Carlo standard errors".into(),
        ));
    }
    Ok(())
}

fn noise_kind(config: &ExperimentConfig) -> NoiseKind {
    match config.run.noise_kind {
        NoiseKindKey::Compensated => NoiseKind::Compensated,
        NoiseKindKey::Noncompensated => NoiseKind::NonCompensated,
    }
}

fn run_simulate(config: &ExperimentConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let params = config.model_params()?;
    let grid = config.grid_spec()?;
    let sigma = config.sigma_spec()?;
    let mu = config.levy_spec()?;
    let table = build_green_table_with(&params, &grid, &config.truncation_policy())?;
    let u0 = config.initial_field(&grid);
    let report = validate_conditions(&sigma, &mu);
    let path = simulate_path(
        &table,
        &u0,
        &sigma,
        &mu,
        noise_kind(config),
        config.run.seed,
        config.run.override_conditions,
    )?;
    let mut rows = Vec::new();
    for (k, field) in path.values.iter().enumerate() {
        let t = grid.time(k);
        for (i, &u) in field.iter().enumerate() {
            rows.push(vec![t, grid.site_position(i)[0], u]);
        }
    }
    art.write_csv("path.csv", "t,x,u", rows)?;
    art.record(
        "condition_report_hash",
        format!("\"{:016x}\"", fnv1a64(format!("{report:?}").as_bytes())),
    );
    art.record(
        "truncation_report_hash",
        format!("\"{:016x}\"", fnv1a64(format!("{:?}", table.truncation).as_bytes())),
    );
    art.record("nyquist_symbol", fmt_f64(table.truncation.nyquist_symbol));
    art.record("tail_mass", fmt_f64(table.truncation.tail_mass));
    match path.exploded {
        Some(e) => {
            art.note(format!("path EXPLODED at step {} (t = {})", e.step, e.time));
            art.record("exploded_at", e.time);
            return Err(CliError::Numerical(format!(
                "path exploded at t = {} (overflow guard 1e12)",
                e.time
            )));
        }
        None => art.note(format!(
            "path of {} steps on {} sites; seed {}",
            grid.nt,
            grid.sites(),
            config.run.seed
        )),
    }
    art.plot_line("plot 'path.csv' using 2:3 with lines");
    Ok(())
}

fn run_moments(config: &ExperimentConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let params = config.model_params()?;
    let grid = config.grid_spec()?;
    let sigma = config.sigma_spec()?;
    let mu = config.levy_spec()?;
    let table = build_green_table_with(&params, &grid, &config.truncation_policy())?;
    let u0 = config.initial_field(&grid);
    let paths = simulate_ensemble(
        &table,
        &u0,
        &sigma,
        &mu,
        noise_kind(config),
        config.run.seed,
        config.run.replicas,
        config.run.override_conditions,
    )?;
    let p = config.options.moment_p;
    let series = moment_estimator(&paths, p)?;
    let report = validate_conditions(&sigma, &mu);
    let cs = c_star(&params)?;
    let rho = 1.0 - params.bd_over_a();
    let upper_rate = envelope_rate(report.k2 * sigma.lip * sigma.lip * cs, rho);
    let lower_rate = envelope_rate(report.kappa2 * sigma.lower * sigma.lower * cs, rho);
    let sup_u0 = u0.iter().fold(f64::MIN, |a, &b| a.max(b));
    let inf_u0 = u0.iter().fold(f64::MAX, |a, &b| a.min(b));

    let rows: Vec<Vec<f64>> = (0..series.times.len())
        .map(|i| {
            let t = series.times[i];
            vec![
                t,
                series.sup_moment[i],
                series.stderr[i],
                inf_u0 * inf_u0 * (lower_rate * t).exp(),
                sup_u0 * sup_u0 * (upper_rate * t).exp(),
            ]
        })
        .collect();
    art.write_csv("moments.csv", "t,sup_moment,stderr,lower_envelope,upper_envelope", rows)?;

    let window = (
        config.options.window_lo_frac * grid.horizon,
        config.options.window_hi_frac * grid.horizon,
    );
    let (rate, hw) = growth_rate_fit(&series, window)?;
    let within = rate >= lower_rate / 2.0 && rate <= 2.0 * upper_rate;
    art.note(format!(
        "fitted growth rate {rate:.4} +- {hw:.4} on window [{:.3}, {:.3}]",
        window.0, window.1
    ));
    art.note(format!(
        "envelope rates: lower {lower_rate:.4}, upper {upper_rate:.4}; factor-2 band [{:.4}, {:.4}]",
        lower_rate / 2.0,
        2.0 * upper_rate
    ));
    art.note(format!("within band: {within}; positive at 95%: {}", rate - hw > 0.0));
    art.note(format!("excluded exploded paths: {}", series.excluded));
    art.record("fitted_rate", fmt_f64(rate));
    art.record("fitted_rate_half_width", fmt_f64(hw));
    art.record("lower_envelope_rate", fmt_f64(lower_rate));
    art.record("upper_envelope_rate", fmt_f64(upper_rate));
    art.record("within_band", within);
    if params.beta == 1.0 {
        // spectral lower bound on the second-moment exponent
        let kappa_l2 = report.kappa2 * sigma.lower * sigma.lower;
        if kappa_l2 > 0.0 {
            let bound = upsilon_inverse(params.alpha, params.nu, params.d, 1.0 / kappa_l2)?;
            art.note(format!(
                "spectral lower bound: fitted rate {rate:.4} vs 0.5 * Upsilon^-1(1/(kappa L^2)) = {:.4} (bound {bound:.4})",
                0.5 * bound
            ));
            art.record("upsilon_inverse_bound", fmt_f64(bound));
            art.record("rate_exceeds_half_bound", rate >= 0.5 * bound);
        }
    }
    art.plot_line("set logscale y");
    art.plot_line(
        "plot 'moments.csv' using 1:2 with lines, '' using 1:4 with lines, '' using 1:5 with lines",
    );
    Ok(())
}

fn run_bounds(config: &ExperimentConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let params = config.model_params()?;
    let sigma = config.sigma_spec()?;
    let mu = config.levy_spec()?;
    let report = validate_conditions(&sigma, &mu);
    let cs = c_star(&params)?;
    let target = config.options.gamma_target;
    let lip = if sigma.lip.is_finite() { sigma.lip } else { 0.0 };
    let gamma_star = analysis::choose_gamma(&params, report.k2, lip, target)?;
    let cdd = analysis::contraction_constant(&params, report.k2, lip, gamma_star)?;
    // gamma making the non-compensated constant hit the same target
    let gamma_nc = report.k1 * lip / target;
    let cnc = analysis::contraction_constant_noncomp(report.k1, lip, gamma_nc.max(1e-300));

    let mut text = String::from("quantity,value\n");
    let mut put = |name: &str, v: f64| {
        let _ = writeln!(text, "{name},{}", fmt_f64(v));
    };
    put("k1", report.k1);
    put("k2", report.k2);
    put("kappa1", report.kappa1);
    put("kappa2", report.kappa2);
    put("kappa_lebesgue", report.kappa_lebesgue);
    put("discarded_second_moment", report.discarded_second_moment);
    put("levy_integral", mu.levy_integral());
    put("c_star", cs);
    put("gamma_star", gamma_star);
    put("contraction_constant", cdd);
    put("gamma_noncompensated", gamma_nc);
    put("contraction_constant_noncompensated", cnc);
    put("cond_compensated", f64::from(u8::from(report.cond_compensated)));
    put("cond_noncompensated", f64::from(u8::from(report.cond_noncompensated)));
    put("cond_lower_second", f64::from(u8::from(report.cond_lower_second)));
    put("cond_superlinear", f64::from(u8::from(report.cond_superlinear)));
    put("cond_lower_first", f64::from(u8::from(report.cond_lower_first)));
    art.write_csv_text("bounds.csv", &text)?;
    art.note(format!("C* = {cs:.8}"));
    art.note(format!(
        "choose_gamma(target {target}) = {gamma_star:.6}; C**(gamma) = {cdd:.6}"
    ));
    art.note(format!(
        "non-compensated constant K lip / gamma = {cnc:.6} at gamma = {gamma_nc:.6}"
    ));
    art.note(format!(
        "conditions: compensated {}, non-compensated {}, lower-second {}, superlinear {}",
        report.cond_compensated,
        report.cond_noncompensated,
        report.cond_lower_second,
        report.cond_superlinear
    ));
    Ok(())
}

fn run_upsilon(config: &ExperimentConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let params = config.model_params()?;
    let o = &config.options;
    let gs = linspace(o.gamma_min, o.gamma_max, o.gamma_points);
    let rows: Result<Vec<_>, AnalysisError> = gs
        .iter()
        .map(|&g| upsilon(params.alpha, params.nu, params.d, g).map(|v| vec![g, v]))
        .collect();
    art.write_csv("upsilon.csv", "gamma,upsilon", rows.map_err(CliError::from)?)?;
    let sigma = config.sigma_spec()?;
    let mu = config.levy_spec()?;
    let report = validate_conditions(&sigma, &mu);
    let kappa_l2 = report.kappa2 * sigma.lower * sigma.lower;
    if kappa_l2 > 0.0 {
        let bound = upsilon_inverse(params.alpha, params.nu, params.d, 1.0 / kappa_l2)?;
        art.note(format!(
            "Upsilon^-1(1/(kappa L^2)) = {bound:.8} for kappa L^2 = {kappa_l2:.6}"
        ));
        art.record("upsilon_inverse_bound", fmt_f64(bound));
    }
    art.plot_line("plot 'upsilon.csv' using 1:2 with linespoints");
    Ok(())
}

fn run_blowup(config: &ExperimentConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let o = &config.options;
    // renewal envelope
    let grade = (2.0 / o.renewal_rho).max(1.0);
    let grid = graded_grid(o.renewal_t_max, o.renewal_points, grade);
    let sol = renewal_solve(o.renewal_c1, o.renewal_kappa, o.renewal_rho, &grid)?;
    let rate = envelope_rate(o.renewal_kappa, o.renewal_rho);
    let rows: Vec<Vec<f64>> = sol
        .times
        .iter()
        .zip(&sol.values)
        .map(|(&t, &f)| vec![t, f, sol.envelope_c2 * (sol.envelope_c3 * rate * t).exp()])
        .collect();
    art.write_csv("renewal.csv", "t,f,envelope", rows)?;
    art.note(format!(
        "renewal equality solved on [0, {}], rho = {}; fitted envelope c2 = {:.4}, c3 = {:.4} (rate scale {rate:.4})",
        o.renewal_t_max, o.renewal_rho, sol.envelope_c2, sol.envelope_c3
    ));

    // nonlinear blow-up march
    let t_grid: Vec<f64> = linspace(0.0, o.blowup_t_max, o.blowup_points + 1);
    let t_star = nonlinear_blowup(o.blowup_c, o.blowup_d, o.blowup_growth, o.blowup_theta, &t_grid)?;
    match t_star {
        Some(t) => {
            art.note(format!("nonlinear Volterra blow-up at t* = {t:.6}"));
            art.record("blowup_time", fmt_f64(t));
        }
        None => {
            art.note(format!("no blow-up by t = {}", o.blowup_t_max));
            art.record("blowup_time", "nan");
        }
    }

    // energy certificate
    let params = config.model_params()?;
    let cert = energy_blowup_certificate(&params, o.cert_kappa, o.cert_l, o.cert_rho, o.cert_eta)?;
    let mut text = String::from("quantity,value\n");
    let mut put = |name: &str, v: f64| {
        let _ = writeln!(text, "{name},{}", fmt_f64(v));
    };
    put("c1", cert.c1);
    put("theta0", cert.theta0);
    put("theta0_printed_variant", cert.theta0_printed_variant);
    put("a_at_theta0", cert.a_at_theta0);
    put("a_at_half", cert.a_at_half);
    put("diverged_at_half", f64::from(u8::from(cert.diverged_at_half)));
    put("divergence_iterations", cert.divergence_iterations as f64);
    put("a_at_double", cert.a_at_double);
    put("converged_at_double", f64::from(u8::from(cert.converged_at_double)));
    put("limit_at_double", cert.limit_at_double);
    art.write_csv_text("certificate.csv", &text)?;
    art.note(format!(
        "certificate: theta0 = {:.6} (printed-exponent variant {:.6}), A(theta0) = {:.8}",
        cert.theta0, cert.theta0_printed_variant, cert.a_at_theta0
    ));
    art.note(format!(
        "at theta0/2: A = {:.4}, diverged past 1e12 in {} iterations = {}",
        cert.a_at_half, cert.divergence_iterations, cert.diverged_at_half
    ));
    art.note(format!(
        "at 2 theta0: A = {:.4}, geometric convergence to {:.6} = {}",
        cert.a_at_double, cert.limit_at_double, cert.converged_at_double
    ));
    art.plot_line("set logscale y");
    art.plot_line("plot 'renewal.csv' using 1:2 with lines, '' using 1:3 with lines");
    Ok(())
}
