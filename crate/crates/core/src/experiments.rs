//! Scripted experiments: critical-manifold solves, radial attraction, phase
//! decay in slow time, amplitude-localisation scans and the quarter-turn
//! identity of rotating waves.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{gaussian_bump, Boundary, ComplexField, LatticeGrid, PolarField};
use crate::linear_ops::{
    default_window, fit_decay, DecayFit, DecayModel, BOUNDARY_GUARD_FRACTION, BOUNDARY_GUARD_WIDTH,
};
use crate::model::{complex_rates_into, f_centered, ModelParams, PolarWorkspace};
use crate::norms::{boundary_mass_fraction, lp_norm, qp_seminorm, NormOrder};
use crate::ode::Rk4;
use crate::steady::{
    make_doubly_periodic, make_traveling_wave, make_trivial, solve_rotating_wave, Family, RotatingWaveOptions,
    SteadyState,
};

/// Default upper limit on α for critical-manifold solves.
pub const ALPHA_MAX: f64 = 0.25;
/// Full width at half maximum of the default bumps, in cells.
pub const BUMP_FWHM: f64 = 3.0;

/// Bump centre: the point between the four middle cells.
const CENTRE: (f64, f64) = (0.5, 0.5);

/// Solution `s*` of `F(s, ψ, α) = 0`, the critical-manifold stand-in for `σ(ψ, α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldApprox {
    pub psi: Vec<f64>,
    pub s_star: Vec<f64>,
    pub residual_inf: f64,
    pub alpha: f64,
    /// `‖s*‖_∞ ≤ √α`, reported for every α and required only for `α ≤ α_max`.
    pub within_sup_bound: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldOptions {
    pub alpha_max: f64,
    pub tol: f64,
    pub max_newton: usize,
    pub max_inner: usize,
}

impl Default for ManifoldOptions {
    fn default() -> Self {
        ManifoldOptions { alpha_max: ALPHA_MAX, tol: 1e-10, max_newton: 50, max_inner: 500 }
    }
}

fn sup(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Newton on `F(s, ψ) = 0` in `s` with Jacobi inner iterations; `∂F/∂s` is
/// diagonally dominant for small α.
pub fn solve_critical_manifold(
    psi: &[f64],
    steady: &SteadyState,
    params: &ModelParams,
    opts: &ManifoldOptions,
) -> Result<ManifoldApprox> {
    if params.alpha > opts.alpha_max {
        return Err(Error::Parameter(format!(
            "alpha = {} exceeds the critical-manifold limit {}",
            params.alpha, opts.alpha_max
        )));
    }
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("phase perturbation must be finite".into()));
    }
    let grid = params.grid;
    grid.check_len(psi.len())?;
    let n = grid.len();
    let (rb, tb) = (steady.r_bar(), steady.theta_bar());
    let a = params.lambda.root();
    let alpha = params.alpha;

    let mut s = vec![0.0; n];
    let mut f = f_centered(&s, psi, steady, params)?;
    let mut res = sup(&f);
    let mut best = res;
    // Stop a little below the tolerance; rounding limits F to ~1e-16.
    let target = (0.01 * opts.tol).max(1e-15);
    let mut delta = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut off = vec![[0.0; 4]; n];
    for _ in 0..opts.max_newton {
        if res <= target {
            break;
        }
        for k in 0..n {
            let r = rb[k] + s[k];
            let t = tb[k] + psi[k];
            let nb = grid.neighbour_indices(k);
            let mut d = params.lambda.eval(r) + r * params.lambda.derivative(r);
            for (q, &m) in nb.iter().enumerate() {
                if m == k {
                    off[k][q] = 0.0;
                } else {
                    d -= alpha;
                    off[k][q] = alpha * (tb[m] + psi[m] - t).cos();
                }
            }
            diag[k] = d;
        }
        delta.iter_mut().for_each(|v| *v = 0.0);
        let fnorm = res;
        for _ in 0..opts.max_inner {
            let mut change = 0.0f64;
            for k in 0..n {
                let nb = grid.neighbour_indices(k);
                let coupling: f64 = (0..4).map(|q| off[k][q] * delta[nb[q]]).sum();
                next[k] = (-f[k] - coupling) / diag[k];
                change = change.max((next[k] - delta[k]).abs());
            }
            std::mem::swap(&mut delta, &mut next);
            if change <= 1e-3 * fnorm.min(1.0) * 1e-3 {
                break;
            }
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = s.iter().zip(&delta).map(|(sk, dk)| sk + step * dk).collect();
            if let Some(k) = trial.iter().zip(rb).position(|(sk, r)| !(r + sk > params.r_min() && r + sk < 1.5 * a)) {
                let r = rb[k] + trial[k];
                if step < 1e-6 {
                    return Err(Error::OutOfBand { site: grid.site(k), r, lo: params.r_min(), hi: 1.5 * a });
                }
                step *= 0.5;
                continue;
            }
            let trial_f = f_centered(&trial, psi, steady, params)?;
            let trial_res = sup(&trial_f);
            if trial_res < res || trial_res <= target {
                s = trial;
                f = trial_f;
                res = trial_res;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        best = best.min(res);
        if !accepted {
            break;
        }
    }
    if !(res <= opts.tol) {
        return Err(Error::NonConvergence { iterations: opts.max_newton, best_residual: best });
    }
    let within_sup_bound = sup(&s) <= alpha.sqrt();
    Ok(ManifoldApprox { psi: psi.to_vec(), s_star: s, residual_inf: res, alpha, within_sup_bound })
}

/// RK4 step for the polar system: `min(0.05/|aλ'(a)|, 0.1/(8α))`.
pub fn polar_time_step(params: &ModelParams) -> f64 {
    let fast = 0.05 / params.lambda.linear_rate().abs();
    if params.alpha > 0.0 {
        fast.min(0.1 / (8.0 * params.alpha))
    } else {
        fast
    }
}

/// Integrates the polar system (rotating frame) from `start`, calling
/// `visit` at each requested time with `(r, θ)`.
pub fn integrate_polar<F>(
    start: &PolarField,
    params: &ModelParams,
    times: &[f64],
    max_dt: f64,
    mut visit: F,
) -> Result<PolarField>
where
    F: FnMut(usize, f64, &[f64], &[f64]) -> Result<()>,
{
    params.grid.check_len(start.r.len())?;
    if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Parameter("sample times must be nonnegative and sorted".into()));
    }
    let n = start.r.len();
    let mut y: Vec<f64> = start.r.iter().chain(&start.theta).copied().collect();
    let mut ws = PolarWorkspace::new(n);
    let alpha = params.alpha;
    let mut rhs = |y: &[f64], dy: &mut [f64]| {
        let (r, th) = y.split_at(n);
        let (dr, dth) = dy.split_at_mut(n);
        ws.rates_into(params, r, th, dr, dth, alpha)
    };
    let mut rk = Rk4::new(2 * n);
    let mut now = 0.0;
    for (q, &t) in times.iter().enumerate() {
        rk.advance(&mut rhs, &mut y, t - now, max_dt)?;
        now = t;
        visit(q, t, &y[..n], &y[n..])?;
    }
    PolarField::new(params.grid, y[..n].to_vec(), y[n..].to_vec())
}

/// Integrates `ż` in the fixed frame and returns the samples.
pub fn simulate_complex(
    start: &ComplexField,
    params: &ModelParams,
    times: &[f64],
    max_dt: f64,
) -> Result<Vec<(f64, ComplexField)>> {
    params.grid.check_len(start.re.len())?;
    if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Parameter("sample times must be nonnegative and sorted".into()));
    }
    let n = start.re.len();
    let mut y: Vec<f64> = start.re.iter().chain(&start.im).copied().collect();
    let mut rhs = |y: &[f64], dy: &mut [f64]| {
        let (re, im) = y.split_at(n);
        let (dre, dim) = dy.split_at_mut(n);
        complex_rates_into(params, re, im, dre, dim);
        Ok(())
    };
    let mut rk = Rk4::new(2 * n);
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        rk.advance(&mut rhs, &mut y, t - now, max_dt)?;
        now = t;
        out.push((t, ComplexField::new(params.grid, y[..n].to_vec(), y[n..].to_vec())?));
    }
    Ok(out)
}

/// Integrates the polar system and converts each sample back to the fixed
/// frame by restoring the phase `ω₀(α) t`.
pub fn simulate_polar(
    start: &PolarField,
    params: &ModelParams,
    times: &[f64],
    max_dt: f64,
) -> Result<Vec<(f64, ComplexField)>> {
    let w0 = params.omega.omega0(params.alpha);
    let mut out = Vec::with_capacity(times.len());
    integrate_polar(start, params, times, max_dt, |_, t, r, th| {
        let (re, im) = r
            .iter()
            .zip(th)
            .map(|(&rk, &tk)| {
                let (s, c) = (tk + w0 * t).sin_cos();
                (rk * c, rk * s)
            })
            .unzip();
        out.push((t, ComplexField::new(params.grid, re, im)?));
        Ok(())
    })?;
    Ok(out)
}

fn require_theorem_scope(params: &ModelParams) -> Result<()> {
    if !params.omega.omega1_is_zero() {
        return Err(Error::Parameter("stability experiments require omega1 = 0".into()));
    }
    Ok(())
}

fn check_steady_grid(steady: &SteadyState, params: &ModelParams) -> Result<()> {
    if steady.field.grid != params.grid {
        return Err(Error::Parameter("steady state and parameters use different grids".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttractionOptions {
    /// `‖ρ⁰‖₁`.
    pub delta: f64,
    pub t_max: f64,
    /// `‖ψ⁰‖₁`; small so the manifold proxy error stays far below the signal.
    pub psi_mass: f64,
    pub samples: usize,
    /// Exponential fit window in `t`; defaults to `[t_max/20, t_max/2]`.
    pub window: Option<(f64, f64)>,
    pub manifold: ManifoldOptions,
}

impl Default for AttractionOptions {
    fn default() -> Self {
        AttractionOptions {
            delta: 0.01,
            t_max: 10.0,
            psi_mass: 1e-3,
            samples: 100,
            window: None,
            manifold: ManifoldOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttractionReport {
    pub family: Family,
    pub alpha: f64,
    pub delta: f64,
    /// `(t, ‖s(t) - s*(ψ(t))‖₁)`.
    pub series: Vec<(f64, f64)>,
    /// `None` when the deviation is identically zero or too small to fit.
    pub fit: Option<DecayFit>,
    pub fit_error: Option<String>,
    /// `|aλ'(a)|`.
    pub predicted_rate: f64,
    pub max_deviation: f64,
    pub notes: Vec<String>,
}

/// Starts at `s = s*(ψ⁰) + ρ⁰` with bumps `ψ⁰`, `ρ⁰` and tracks the distance
/// `‖ρ(t)‖₁` to the critical manifold.
pub fn run_manifold_attraction(
    steady: &SteadyState,
    params: &ModelParams,
    opts: &AttractionOptions,
) -> Result<AttractionReport> {
    require_theorem_scope(params)?;
    check_steady_grid(steady, params)?;
    let a = params.lambda.root();
    if !(opts.delta >= 0.0 && opts.delta <= 0.1 * a) {
        return Err(Error::Parameter(format!("delta must lie in [0, 0.1 a], got {}", opts.delta)));
    }
    if !(opts.t_max > 0.0) || opts.samples < 2 {
        return Err(Error::Parameter("attraction run needs t_max > 0 and at least two samples".into()));
    }
    let grid = params.grid;
    let psi0 = if opts.psi_mass > 0.0 {
        gaussian_bump(&grid, CENTRE, BUMP_FWHM, opts.psi_mass)?
    } else {
        vec![0.0; grid.len()]
    };
    let rho0 = if opts.delta > 0.0 {
        gaussian_bump(&grid, CENTRE, BUMP_FWHM, opts.delta)?
    } else {
        vec![0.0; grid.len()]
    };
    let m0 = solve_critical_manifold(&psi0, steady, params, &opts.manifold)?;
    let (rb, tb) = (steady.r_bar(), steady.theta_bar());
    let r0: Vec<f64> = (0..grid.len()).map(|k| rb[k] + m0.s_star[k] + rho0[k]).collect();
    let t0: Vec<f64> = (0..grid.len()).map(|k| tb[k] + psi0[k]).collect();
    let start = PolarField::new(grid, r0, t0)?;

    let times: Vec<f64> = (0..=opts.samples).map(|q| opts.t_max * q as f64 / opts.samples as f64).collect();
    let mut series = Vec::with_capacity(times.len());
    let mut psi = vec![0.0; grid.len()];
    integrate_polar(&start, params, &times, polar_time_step(params), |_, t, r, th| {
        for k in 0..psi.len() {
            psi[k] = th[k] - tb[k];
        }
        let m = solve_critical_manifold(&psi, steady, params, &opts.manifold)?;
        let rho: f64 = (0..psi.len()).map(|k| (r[k] - rb[k] - m.s_star[k]).abs()).sum();
        series.push((t, rho));
        Ok(())
    })?;

    let window = opts.window.unwrap_or_else(|| default_window(opts.t_max));
    let (fit, fit_error) = match fit_decay(&series, DecayModel::Exponential, window) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let max_deviation = series.iter().fold(0.0f64, |m, (_, v)| m.max(*v));
    Ok(AttractionReport {
        family: steady.family,
        alpha: params.alpha,
        delta: opts.delta,
        series,
        fit,
        fit_error,
        predicted_rate: params.lambda.linear_rate().abs(),
        max_deviation,
        notes: vec!["slow manifold approximated by the critical manifold F(s, psi) = 0".into()],
    })
}

/// Treatment of the spatially constant phase mode before norms are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanMode {
    Remove,
    Keep,
}

/// Shape of the initial phase perturbation.
#[derive(Debug, Clone, PartialEq)]
pub enum PhaseInit {
    /// Gaussian bump of ℓ¹ mass `eps` at the centre.
    Bump,
    /// `ψ⁰ = c·𝟙`.
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDecayOptions {
    pub eps: f64,
    pub tau_max: f64,
    pub p_list: Vec<NormOrder>,
    pub init: PhaseInit,
    /// Constant added to `ψ⁰` on top of `init`.
    pub phase_shift: f64,
    /// `‖ρ⁰‖₁`; defaults to `eps`.
    pub rho_mass: Option<f64>,
    pub mean_mode: MeanMode,
    /// Fit window in slow time; defaults to `[τ_max/20, τ_max/2]`.
    pub window: Option<(f64, f64)>,
    /// Log-spaced slow-time samples after the first.
    pub tau_samples: usize,
    /// Conjugate exponent `q*`; `None` means `q* = ∞`.
    pub q_star: Option<f64>,
    /// Linear-time horizon on which `‖ρ‖₁` is sampled for its exponential fit.
    pub rho_horizon: f64,
    pub manifold: ManifoldOptions,
}

impl Default for PhaseDecayOptions {
    fn default() -> Self {
        PhaseDecayOptions {
            eps: 0.1,
            tau_max: 50.0,
            p_list: vec![
                NormOrder::Finite(1.0),
                NormOrder::Finite(2.0),
                NormOrder::Finite(4.0),
                NormOrder::Infinity,
            ],
            init: PhaseInit::Bump,
            phase_shift: 0.0,
            rho_mass: None,
            mean_mode: MeanMode::Remove,
            window: None,
            tau_samples: 60,
            q_star: None,
            rho_horizon: 5.0,
            manifold: ManifoldOptions::default(),
        }
    }
}

/// Default `p*` assumed for the rotating wave when choosing `q*`.
pub const ROTATING_P_STAR: f64 = 5.0;

/// `q*` implied by the family: uniform amplitudes allow `p* = 1` (`q* = ∞`).
pub fn family_q_star(family: Family) -> Option<f64> {
    match family {
        Family::RotatingWave | Family::Loaded => Some(ROTATING_P_STAR / (ROTATING_P_STAR - 1.0)),
        _ => None,
    }
}

/// Predicted ℓ^p decay exponent `1 - 1/p`.
pub fn predicted_lp_exponent(p: NormOrder) -> f64 {
    1.0 - p.reciprocal()
}

/// Predicted `Q_p` decay exponent `min(2 - 1/p, 2 - 1/q*)`.
pub fn predicted_qp_exponent(p: NormOrder, q_star: Option<f64>) -> f64 {
    let q_term = q_star.map_or(0.0, |q| 1.0 / q);
    (2.0 - p.reciprocal()).min(2.0 - q_term)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExponentCheck {
    pub p: NormOrder,
    pub fit: Option<DecayFit>,
    pub error: Option<String>,
    pub predicted: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl ExponentCheck {
    fn new(p: NormOrder, fit: Result<DecayFit>, predicted: f64, tolerance: f64) -> Self {
        match fit {
            Ok(f) => ExponentCheck {
                p,
                passed: (f.rate - predicted).abs() <= tolerance,
                fit: Some(f),
                error: None,
                predicted,
                tolerance,
            },
            Err(e) => ExponentCheck { p, fit: None, error: Some(e.to_string()), predicted, tolerance, passed: false },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSample {
    pub t: f64,
    pub tau: f64,
    pub p: NormOrder,
    pub lp: f64,
    pub qp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDecayReport {
    pub family: Family,
    pub alpha: f64,
    pub eps: f64,
    pub window: (f64, f64),
    pub q_star: Option<f64>,
    pub rows: Vec<PhaseSample>,
    pub flagged_taus: Vec<f64>,
    pub lp_checks: Vec<ExponentCheck>,
    pub qp_checks: Vec<ExponentCheck>,
    pub rho_series: Vec<(f64, f64)>,
    pub rho_fit: Option<DecayFit>,
    pub notes: Vec<String>,
}

impl PhaseDecayReport {
    pub fn series(&self, p: NormOrder, qp: bool) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|row| row.p == p && !self.flagged_taus.contains(&row.tau))
            .map(|row| (row.tau, if qp { row.qp } else { row.lp }))
            .collect()
    }

    pub fn lp_check(&self, p: NormOrder) -> Option<&ExponentCheck> {
        self.lp_checks.iter().find(|c| c.p == p)
    }

    pub fn qp_check(&self, p: NormOrder) -> Option<&ExponentCheck> {
        self.qp_checks.iter().find(|c| c.p == p)
    }
}

/// Tolerance on fitted ℓ^p exponents: tighter at `p = 1` where no decay is
/// predicted.
fn lp_tolerance(p: NormOrder) -> f64 {
    if p == NormOrder::Finite(1.0) {
        0.1
    } else {
        0.15
    }
}

const QP_TOLERANCE: f64 = 0.2;

/// Integrates the full polar system from `(s*(ψ⁰) + ρ⁰, ψ⁰)` and fits the
/// slow-time decay of `‖ψ‖_p` and `Q_p(ψ)`.
pub fn run_phase_decay(
    steady: &SteadyState,
    params: &ModelParams,
    opts: &PhaseDecayOptions,
) -> Result<PhaseDecayReport> {
    require_theorem_scope(params)?;
    check_steady_grid(steady, params)?;
    if !(params.alpha > 0.0) {
        return Err(Error::Parameter("phase decay needs alpha > 0 (slow time is alpha t)".into()));
    }
    if !(opts.eps > 0.0) || !(opts.tau_max > 0.0) || opts.tau_samples < 2 {
        return Err(Error::Parameter("phase decay needs eps > 0, tau_max > 0 and >= 2 samples".into()));
    }
    for p in &opts.p_list {
        p.validate()?;
    }
    let grid = params.grid;
    let n = grid.len();
    let alpha = params.alpha;
    let (rb, tb) = (steady.r_bar(), steady.theta_bar());

    let (mut psi0, far_field) = match opts.init {
        PhaseInit::Bump => (gaussian_bump(&grid, CENTRE, BUMP_FWHM, opts.eps)?, opts.phase_shift),
        PhaseInit::Constant(c) => (vec![c; n], c + opts.phase_shift),
    };
    psi0.iter_mut().for_each(|v| *v += opts.phase_shift);
    let rho_mass = opts.rho_mass.unwrap_or(opts.eps);
    let rho0 = if rho_mass > 0.0 {
        gaussian_bump(&grid, CENTRE, BUMP_FWHM, rho_mass)?
    } else {
        vec![0.0; n]
    };
    let m0 = solve_critical_manifold(&psi0, steady, params, &opts.manifold)?;
    let r0: Vec<f64> = (0..n).map(|k| rb[k] + m0.s_star[k] + rho0[k]).collect();
    let t0: Vec<f64> = (0..n).map(|k| tb[k] + psi0[k]).collect();
    let start = PolarField::new(grid, r0, t0)?;

    // Slow-time samples for the phase fits, linear-time samples for ρ.
    let tau_lo = (opts.tau_max / 1000.0).min(0.01);
    let mut taus = vec![0.0];
    let (la, lb) = (tau_lo.ln(), opts.tau_max.ln());
    for q in 0..opts.tau_samples {
        taus.push((la + (lb - la) * q as f64 / (opts.tau_samples - 1) as f64).exp());
    }
    *taus.last_mut().expect("nonempty") = opts.tau_max;
    let rho_horizon = opts.rho_horizon.min(opts.tau_max / alpha);
    let rho_times: Vec<f64> = if rho_mass > 0.0 {
        (0..=50).map(|q| rho_horizon * q as f64 / 50.0).collect()
    } else {
        Vec::new()
    };
    let mut events: BTreeMap<u64, (bool, bool)> = BTreeMap::new();
    for tau in &taus {
        events.entry((tau / alpha).to_bits()).or_default().0 = true;
    }
    for t in &rho_times {
        events.entry(t.to_bits()).or_default().1 = true;
    }
    let times: Vec<f64> = events.keys().map(|b| f64::from_bits(*b)).collect();

    let mut rows = Vec::new();
    let mut flagged_taus = Vec::new();
    let mut rho_series = Vec::new();
    let mut psi = vec![0.0; n];
    let mut disturbance = vec![0.0; n];
    integrate_polar(&start, params, &times, polar_time_step(params), |_, t, r, th| {
        let (phase_sample, rho_sample) = events[&t.to_bits()];
        for k in 0..n {
            psi[k] = th[k] - tb[k];
        }
        if rho_sample {
            let m = solve_critical_manifold(&psi, steady, params, &opts.manifold)?;
            let rho: f64 = (0..n).map(|k| (r[k] - rb[k] - m.s_star[k]).abs()).sum();
            rho_series.push((t, rho));
        }
        if phase_sample {
            let tau = alpha * t;
            let mut centred = psi.clone();
            if opts.mean_mode == MeanMode::Remove {
                let mean = centred.iter().sum::<f64>() / n as f64;
                centred.iter_mut().for_each(|v| *v -= mean);
            }
            // Contamination is judged on the departure from the undisturbed
            // far-field phase, not on the centred field whose offset fills
            // the whole grid.
            for k in 0..n {
                disturbance[k] = psi[k] - far_field;
            }
            if boundary_mass_fraction(&disturbance, &grid, BOUNDARY_GUARD_WIDTH) > BOUNDARY_GUARD_FRACTION {
                flagged_taus.push(tau);
            }
            for &p in &opts.p_list {
                rows.push(PhaseSample {
                    t,
                    tau,
                    p,
                    lp: lp_norm(&centred, p)?,
                    qp: qp_seminorm(&centred, &grid, p)?,
                });
            }
        }
        Ok(())
    })?;

    let window = opts.window.unwrap_or_else(|| default_window(opts.tau_max));
    let q_star = opts.q_star.or_else(|| family_q_star(steady.family));
    let mut report = PhaseDecayReport {
        family: steady.family,
        alpha,
        eps: opts.eps,
        window,
        q_star,
        rows,
        flagged_taus,
        lp_checks: Vec::new(),
        qp_checks: Vec::new(),
        rho_series,
        rho_fit: None,
        notes: vec!["slow manifold approximated by the critical manifold F(s, psi) = 0".into()],
    };
    for &p in &opts.p_list {
        let lp = fit_decay(&report.series(p, false), DecayModel::PowerLaw, window);
        report.lp_checks.push(ExponentCheck::new(p, lp, predicted_lp_exponent(p), lp_tolerance(p)));
        let qp = fit_decay(&report.series(p, true), DecayModel::PowerLaw, window);
        report.qp_checks.push(ExponentCheck::new(p, qp, predicted_qp_exponent(p, q_star), QP_TOLERANCE));
    }
    if !report.rho_series.is_empty() {
        let rho_window = (0.1 * rho_horizon, rho_horizon);
        report.rho_fit = fit_decay(&report.rho_series, DecayModel::Exponential, rho_window).ok();
    }
    if !report.flagged_taus.is_empty() {
        report.notes.push(format!(
            "{} samples excluded: more than {}% of the phase mass within {} cells of the edge",
            report.flagged_taus.len(),
            BOUNDARY_GUARD_FRACTION * 100.0,
            BOUNDARY_GUARD_WIDTH
        ));
    }
    Ok(report)
}

/// `Σ |r - a|^p`.
pub fn m_p(field: &PolarField, a: f64, p: f64) -> f64 {
    field.r.iter().map(|r| (r - a).abs().powf(p)).sum()
}

/// `Σ_c Σ_n |r_n/r_c - 1|^p` over nearest neighbours.
pub fn hypothesis4_sum(field: &PolarField, p: f64) -> f64 {
    let grid = field.grid;
    (0..grid.len())
        .map(|k| {
            grid.neighbour_indices(k)
                .iter()
                .map(|&m| (field.r[m] / field.r[k] - 1.0).abs().powf(p))
                .sum::<f64>()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trend {
    Growing,
    Saturating,
    Indeterminate,
    Insufficient,
}

impl fmt::Display for Trend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trend::Growing => "growing",
            Trend::Saturating => "saturating",
            Trend::Indeterminate => "indeterminate",
            Trend::Insufficient => "insufficient",
        })
    }
}

pub const GROWING_THRESHOLD: f64 = 0.05;
pub const SATURATING_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpEntry {
    pub alpha: f64,
    pub n: usize,
    pub p: f64,
    pub m_p: f64,
    pub hyp4_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendReport {
    pub alpha: f64,
    pub p: f64,
    pub reference_n: usize,
    pub largest_n: usize,
    pub relative_change: f64,
    pub trend: Trend,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpScan {
    pub family: Family,
    pub alpha_list: Vec<f64>,
    pub p_list: Vec<f64>,
    pub n_list: Vec<usize>,
    pub entries: Vec<MpEntry>,
    /// `(α, N, message)` for cells of the scan that failed.
    pub failures: Vec<(f64, usize, String)>,
}

impl MpScan {
    pub fn value(&self, alpha: f64, p: f64, n: usize) -> Option<&MpEntry> {
        self.entries.iter().find(|e| e.alpha == alpha && e.p == p && e.n == n)
    }

    /// Compares the largest `N` with the `N` closest to three quarters of it
    /// (150 against 200 for the standard sweep).
    pub fn classify(&self, alpha: f64, p: f64) -> TrendReport {
        let mut pts: Vec<&MpEntry> = self.entries.iter().filter(|e| e.alpha == alpha && e.p == p).collect();
        pts.sort_by_key(|e| e.n);
        let insufficient = TrendReport {
            alpha,
            p,
            reference_n: 0,
            largest_n: 0,
            relative_change: f64::NAN,
            trend: Trend::Insufficient,
        };
        let Some(last) = pts.last() else { return insufficient };
        let goal = 0.75 * last.n as f64;
        let Some(reference) = pts[..pts.len() - 1]
            .iter()
            .min_by(|x, y| (x.n as f64 - goal).abs().total_cmp(&(y.n as f64 - goal).abs()))
        else {
            return insufficient;
        };
        let (v0, v1) = (reference.m_p, last.m_p);
        let relative_change = if v0 == 0.0 {
            if v1 == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (v1 - v0) / v0
        };
        let trend = if relative_change > GROWING_THRESHOLD {
            Trend::Growing
        } else if relative_change.abs() < SATURATING_THRESHOLD {
            Trend::Saturating
        } else {
            Trend::Indeterminate
        };
        TrendReport { alpha, p, reference_n: reference.n, largest_n: last.n, relative_change, trend }
    }

    pub fn trends(&self) -> Vec<TrendReport> {
        let mut out = Vec::new();
        for &alpha in &self.alpha_list {
            for &p in &self.p_list {
                out.push(self.classify(alpha, p));
            }
        }
        out
    }
}

fn build_family(family: Family, params: &ModelParams, seed: Option<&SteadyState>) -> Result<SteadyState> {
    match family {
        Family::Trivial => Ok(make_trivial(params)),
        Family::DoublyPeriodic { n, m } => make_doubly_periodic(params, n, m),
        Family::TravelingWave { n } => make_traveling_wave(params, n),
        Family::RotatingWave => solve_rotating_wave(params, seed, &RotatingWaveOptions::default()),
        Family::Loaded => Err(Error::Parameter("a loaded state cannot be rebuilt on other grids".into())),
    }
}

/// `M_p^r` and the nearest-neighbour ratio sum across grid sizes `N` (side
/// lengths) on Neumann grids. Within each `N` the α values are visited in
/// increasing order, each seeded by the previous solution.
pub fn scan_hypothesis4(
    family: Family,
    base: &ModelParams,
    alpha_list: &[f64],
    p_list: &[f64],
    n_list: &[usize],
) -> Result<MpScan> {
    if p_list.iter().any(|p| !(*p >= 1.0)) {
        return Err(Error::Parameter("scan exponents must be >= 1".into()));
    }
    if alpha_list.iter().any(|a| !(*a >= 0.0)) {
        return Err(Error::Parameter("scan couplings must be >= 0".into()));
    }
    if n_list.iter().any(|n| *n == 0 || n % 2 != 0) {
        return Err(Error::Parameter("scan grid sizes must be even and positive".into()));
    }
    let a = base.lambda.root();
    let mut alphas = alpha_list.to_vec();
    alphas.sort_by(f64::total_cmp);
    let mut scan = MpScan {
        family,
        alpha_list: alpha_list.to_vec(),
        p_list: p_list.to_vec(),
        n_list: n_list.to_vec(),
        entries: Vec::new(),
        failures: Vec::new(),
    };
    for &n in n_list {
        let grid = LatticeGrid::with_side(n, Boundary::Neumann)?;
        let mut seed: Option<SteadyState> = None;
        for &alpha in &alphas {
            let params = base.with_grid(grid).with_alpha(alpha)?;
            match build_family(family, &params, seed.as_ref()) {
                Ok(state) => {
                    for &p in p_list {
                        scan.entries.push(MpEntry {
                            alpha,
                            n,
                            p,
                            m_p: m_p(&state.field, a, p),
                            hyp4_sum: hypothesis4_sum(&state.field, p),
                        });
                    }
                    seed = Some(state);
                }
                Err(e) => scan.failures.push((alpha, n, e.to_string())),
            }
        }
    }
    Ok(scan)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationReport {
    /// `max |z(j,1-i) - i z(i,j)|` over cells and samples.
    pub spatial_mismatch: f64,
    /// `max |z(t + T/4) - i z(t)|` over sample pairs a quarter period apart.
    pub temporal_mismatch: Option<f64>,
    pub quarter_period: Option<f64>,
    pub pairs_checked: usize,
}

/// Checks the quarter-turn identity in space and, when `ω₀(α) ≠ 0`, the
/// quarter-period phase advance in time.
pub fn check_rotational_identity(traj: &[(f64, ComplexField)], params: &ModelParams) -> Result<RotationReport> {
    let grid = params.grid;
    let map = grid.rotation_map();
    let mut spatial = 0.0f64;
    for (_, z) in traj {
        grid.check_len(z.re.len())?;
        for (k, &m) in map.iter().enumerate() {
            // i·z = (-im, re)
            let d = (z.re[m] + z.im[k]).hypot(z.im[m] - z.re[k]);
            spatial = spatial.max(d);
        }
    }
    let w0 = params.omega.omega0(params.alpha);
    let quarter = (w0 != 0.0).then(|| TAU / w0.abs() / 4.0);
    let mut temporal = None;
    let mut pairs = 0;
    if let Some(q) = quarter {
        // For ω₀ < 0 the advance is by -π/2.
        let sign = w0.signum();
        for (t, z) in traj {
            let target = t + q;
            let Some((_, w)) = traj.iter().find(|(s, _)| (s - target).abs() <= 1e-9 * target.max(1.0)) else {
                continue;
            };
            pairs += 1;
            let mut worst = temporal.unwrap_or(0.0f64);
            for k in 0..z.re.len() {
                let d = (w.re[k] + sign * z.im[k]).hypot(w.im[k] - sign * z.re[k]);
                worst = worst.max(d);
            }
            temporal = Some(worst);
        }
    }
    Ok(RotationReport { spatial_mismatch: spatial, temporal_mismatch: temporal, quarter_period: quarter, pairs_checked: pairs })
}

/// Phase field of a steady state advanced by a quarter turn, for tests and
/// diagnostics: `θ(j,1-i) - π/2`.
pub fn quarter_turn_phases(field: &PolarField) -> Vec<f64> {
    let map = field.grid.rotation_map();
    map.iter().map(|&m| field.theta[m] - FRAC_PI_2).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{delta_field, Site};
    use crate::model::OmegaSpec;

    fn params(alpha: f64, k: usize, b: Boundary) -> ModelParams {
        ModelParams::cubic(alpha, 0.0, LatticeGrid::new(k, b).unwrap()).unwrap()
    }

    #[test]
    fn manifold_at_zero_phase_is_zero() {
        let p = params(0.1, 6, Boundary::Neumann);
        let st = make_trivial(&p);
        let m = solve_critical_manifold(&vec![0.0; p.grid.len()], &st, &p, &ManifoldOptions::default()).unwrap();
        assert!(m.s_star.iter().all(|v| *v == 0.0));
        assert_eq!(m.residual_inf, 0.0);
    }

    #[test]
    fn uncoupled_manifold_is_zero_for_any_phase() {
        let p = params(0.0, 5, Boundary::Neumann);
        let st = make_trivial(&p);
        let psi: Vec<f64> = (0..p.grid.len()).map(|k| (k as f64 * 0.37).sin()).collect();
        let m = solve_critical_manifold(&psi, &st, &p, &ManifoldOptions::default()).unwrap();
        assert!(m.s_star.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn manifold_respects_sqrt_alpha_envelope() {
        let p = params(0.1, 8, Boundary::Neumann);
        let st = make_trivial(&p);
        let psi = gaussian_bump(&p.grid, CENTRE, BUMP_FWHM, 0.5).unwrap();
        let m = solve_critical_manifold(&psi, &st, &p, &ManifoldOptions::default()).unwrap();
        assert!(m.residual_inf <= 1e-10);
        assert!(sup(&m.s_star) <= 0.1f64.sqrt());
        let q1 = qp_seminorm(&psi, &p.grid, NormOrder::Finite(1.0)).unwrap();
        let s1 = lp_norm(&m.s_star, NormOrder::Finite(1.0)).unwrap();
        assert!(s1 <= 1.1 * 0.1f64.sqrt() * q1);
        assert!(m.within_sup_bound);
    }

    #[test]
    fn manifold_rejects_large_alpha() {
        let p = params(0.5, 3, Boundary::Neumann);
        let st = make_trivial(&p);
        assert!(solve_critical_manifold(&vec![0.0; 36], &st, &p, &ManifoldOptions::default()).is_err());
    }

    #[test]
    fn manifold_solution_zeroes_f() {
        let p = params(0.2, 5, Boundary::Periodic);
        let st = make_trivial(&p);
        let psi: Vec<f64> = (0..p.grid.len()).map(|k| 0.3 * (k as f64 * 0.9).cos()).collect();
        let m = solve_critical_manifold(&psi, &st, &p, &ManifoldOptions::default()).unwrap();
        let f = f_centered(&m.s_star, &psi, &st, &p).unwrap();
        assert!(sup(&f) <= 1e-10);
    }

    #[test]
    fn uncoupled_attraction_rate_is_two() {
        let p = params(0.0, 8, Boundary::Neumann);
        let st = make_trivial(&p);
        let opts = AttractionOptions { window: Some((0.5, 5.0)), ..AttractionOptions::default() };
        let rep = run_manifold_attraction(&st, &p, &opts).unwrap();
        let fit = rep.fit.unwrap();
        assert!((fit.rate - 2.0).abs() <= 0.1, "rate {}", fit.rate);
    }

    #[test]
    fn attraction_from_the_manifold_stays_there() {
        let p = params(0.05, 8, Boundary::Neumann);
        let st = make_trivial(&p);
        let opts = AttractionOptions { delta: 0.0, t_max: 2.0, samples: 10, ..AttractionOptions::default() };
        let rep = run_manifold_attraction(&st, &p, &opts).unwrap();
        assert!(rep.max_deviation <= 1e-8, "{}", rep.max_deviation);
    }

    #[test]
    fn attraction_rejects_large_delta() {
        let p = params(0.05, 4, Boundary::Neumann);
        let st = make_trivial(&p);
        let opts = AttractionOptions { delta: 0.5, ..AttractionOptions::default() };
        assert!(run_manifold_attraction(&st, &p, &opts).is_err());
    }

    #[test]
    fn gauge_shift_does_not_decay() {
        let p = params(0.1, 8, Boundary::Periodic);
        let st = make_trivial(&p);
        let opts = PhaseDecayOptions {
            init: PhaseInit::Constant(0.05),
            rho_mass: Some(0.0),
            mean_mode: MeanMode::Keep,
            tau_max: 10.0,
            tau_samples: 30,
            p_list: vec![NormOrder::Finite(2.0), NormOrder::Infinity],
            ..PhaseDecayOptions::default()
        };
        let rep = run_phase_decay(&st, &p, &opts).unwrap();
        for c in &rep.lp_checks {
            assert!(c.fit.unwrap().rate.abs() <= 0.02);
        }
    }

    #[test]
    fn predicted_exponents() {
        let inf = NormOrder::Infinity;
        assert_eq!(predicted_lp_exponent(inf), 1.0);
        assert_eq!(predicted_lp_exponent(NormOrder::Finite(2.0)), 0.5);
        assert_eq!(predicted_qp_exponent(NormOrder::Finite(2.0), None), 1.5);
        assert_eq!(predicted_qp_exponent(inf, Some(1.25)), 2.0 - 0.8);
        assert_eq!(family_q_star(Family::Trivial), None);
    }

    #[test]
    fn trivial_scan_is_zero_and_saturating() {
        let base = params(0.0, 2, Boundary::Neumann);
        let scan = scan_hypothesis4(Family::Trivial, &base, &[0.1, 0.5], &[1.0, 5.0], &[8, 12, 16]).unwrap();
        assert!(scan.entries.iter().all(|e| e.m_p == 0.0 && e.hyp4_sum == 0.0));
        for t in scan.trends() {
            assert_eq!(t.trend, Trend::Saturating);
            assert_eq!(t.reference_n, 12);
        }
    }

    #[test]
    fn classification_thresholds() {
        let mk = |vals: &[(usize, f64)]| MpScan {
            family: Family::RotatingWave,
            alpha_list: vec![0.1],
            p_list: vec![1.0],
            n_list: vals.iter().map(|v| v.0).collect(),
            entries: vals.iter().map(|&(n, m)| MpEntry { alpha: 0.1, n, p: 1.0, m_p: m, hyp4_sum: 0.0 }).collect(),
            failures: vec![],
        };
        assert_eq!(mk(&[(150, 1.0), (200, 1.2)]).classify(0.1, 1.0).trend, Trend::Growing);
        assert_eq!(mk(&[(150, 1.0), (200, 1.005)]).classify(0.1, 1.0).trend, Trend::Saturating);
        assert_eq!(mk(&[(150, 1.0), (200, 1.03)]).classify(0.1, 1.0).trend, Trend::Indeterminate);
        assert_eq!(mk(&[(200, 1.0)]).classify(0.1, 1.0).trend, Trend::Insufficient);
    }

    #[test]
    fn ratio_sum_of_a_single_dip() {
        let g = LatticeGrid::new(3, Boundary::Neumann).unwrap();
        let mut r = vec![1.0; g.len()];
        r[g.index(Site::new(0, 0)).unwrap()] = 0.5;
        let f = PolarField::new(g, r, vec![0.0; g.len()]).unwrap();
        // Centre sees four ratios of 2, each neighbour one ratio of 1/2.
        assert_eq!(hypothesis4_sum(&f, 1.0), 4.0 * 1.0 + 4.0 * 0.5);
        assert_eq!(m_p(&f, 1.0, 2.0), 0.25);
    }

    #[test]
    fn trivial_solution_passes_rotation_check() {
        let g = LatticeGrid::new(3, Boundary::Neumann).unwrap();
        let lambda = crate::model::LambdaSpec::cubic();
        let omega = OmegaSpec::constant(1.0, &lambda);
        let p = ModelParams::new(0.1, lambda, omega, g).unwrap();
        let st = make_trivial(&p);
        let traj = simulate_polar(&st.field, &p, &[0.0, 1.0], 0.01).unwrap();
        let rep = check_rotational_identity(&traj, &p).unwrap();
        // Uniform states are not quarter-turn images of themselves.
        assert!(rep.spatial_mismatch > 1.0);
        assert_eq!(rep.pairs_checked, 0);
    }

    #[test]
    fn rotating_wave_identities_hold_along_the_flow() {
        let g = LatticeGrid::new(5, Boundary::Neumann).unwrap();
        let lambda = crate::model::LambdaSpec::cubic();
        let omega = OmegaSpec::constant(1.0, &lambda);
        let p = ModelParams::new(0.1, lambda, omega, g).unwrap();
        let st = solve_rotating_wave(&p, None, &RotatingWaveOptions::default()).unwrap();
        let q = TAU / 4.0;
        let times = [0.0, 0.5, q, 0.5 + q];
        let traj = simulate_complex(&st.field.to_complex(), &p, &times, 0.005).unwrap();
        let rep = check_rotational_identity(&traj, &p).unwrap();
        assert!(rep.spatial_mismatch <= 1e-7, "{rep:?}");
        assert_eq!(rep.pairs_checked, 2);
        assert!(rep.temporal_mismatch.unwrap() <= 1e-7, "{rep:?}");
    }

    #[test]
    fn polar_and_complex_flows_agree() {
        let p = params(0.3, 3, Boundary::Neumann);
        let psi = delta_field(&p.grid, Site::new(0, 1)).unwrap();
        let start = PolarField::new(p.grid, vec![1.05; 36], psi.iter().map(|v| 0.4 * v).collect()).unwrap();
        let a = simulate_polar(&start, &p, &[1e-3], 1e-3).unwrap();
        let b = simulate_complex(&start.to_complex(), &p, &[1e-3], 1e-3).unwrap();
        for k in 0..36 {
            assert!((a[0].1.re[k] - b[0].1.re[k]).abs() < 1e-8);
            assert!((a[0].1.im[k] - b[0].1.im[k]).abs() < 1e-8);
        }
    }
}
