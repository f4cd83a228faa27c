//! Steady-state families: synchronous, doubly periodic, traveling wave and
//! the rotating wave centred between the four middle cells.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::str::FromStr;

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};
use crate::lattice::{wrap_angle, Boundary, LatticeGrid, PolarField, Site};
use crate::model::{phase_drive, polar_jacobian, radial_rate, rhs_polar, ModelParams, PolarWorkspace};
use crate::ode::Rk4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Trivial,
    DoublyPeriodic { n: usize, m: usize },
    TravelingWave { n: usize },
    RotatingWave,
    Loaded,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Trivial => f.write_str("trivial"),
            Family::DoublyPeriodic { n, m } => write!(f, "doubly-periodic:{n}:{m}"),
            Family::TravelingWave { n } => write!(f, "traveling:{n}"),
            Family::RotatingWave => f.write_str("rotating"),
            Family::Loaded => f.write_str("loaded"),
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |t: &str| {
            t.parse::<usize>()
                .map_err(|_| Error::Parameter(format!("bad period `{t}` in family `{s}`")))
        };
        match parts.as_slice() {
            ["trivial"] => Ok(Family::Trivial),
            ["rotating"] => Ok(Family::RotatingWave),
            ["loaded"] => Ok(Family::Loaded),
            ["doubly-periodic", n, m] => Ok(Family::DoublyPeriodic { n: num(n)?, m: num(m)? }),
            ["traveling", n] => Ok(Family::TravelingWave { n: num(n)? }),
            _ => Err(Error::Parameter(format!(
                "unknown family `{s}` (expected trivial, doubly-periodic:N:M, traveling:N, rotating, loaded)"
            ))),
        }
    }
}

/// A steady state `(r̄, θ̄)` of the polar system at coupling `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub field: PolarField,
    pub alpha: f64,
    /// `‖(ṙ, θ̇)‖_∞` at the state.
    pub residual_inf: f64,
    pub family: Family,
}

impl SteadyState {
    pub fn grid(&self) -> &LatticeGrid {
        &self.field.grid
    }

    pub fn r_bar(&self) -> &[f64] {
        &self.field.r
    }

    pub fn theta_bar(&self) -> &[f64] {
        &self.field.theta
    }

    /// Wraps an arbitrary field, recomputing its residual.
    pub fn from_field(field: PolarField, params: &ModelParams, family: Family) -> Result<Self> {
        let residual_inf = rhs_polar(&field, params)?.residual_inf();
        Ok(SteadyState { field, alpha: params.alpha, residual_inf, family })
    }
}

pub fn make_trivial(params: &ModelParams) -> SteadyState {
    let a = params.lambda.root();
    let field = PolarField::uniform(params.grid, a, 0.0).expect("root is positive");
    // λ(a) vanishes up to rounding for a polynomial root.
    let residual_inf = a * params.lambda.eval(a).abs();
    SteadyState { field, alpha: params.alpha, residual_inf, family: Family::Trivial }
}

/// Solves `λ(r) = target` for `r` in `(a/2, 3a/2)` by bisection.
fn solve_uniform_amplitude(params: &ModelParams, target: f64) -> Result<f64> {
    let a = params.lambda.root();
    if target == 0.0 {
        return Ok(a);
    }
    let g = |r: f64| params.lambda.eval(r) - target;
    let (mut lo, mut hi) = (0.5 * a, 1.5 * a);
    if !(g(lo) > 0.0 && g(hi) < 0.0) {
        return Err(Error::Construction(format!(
            "no uniform amplitude in ({lo}, {hi}) for alpha = {}; coupling too strong",
            params.alpha
        )));
    }
    while hi - lo > 1e-15 * a {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn check_period(grid: &LatticeGrid, period: usize, name: &str) -> Result<()> {
    if period < 5 {
        return Err(Error::Parameter(format!("period {name} must be at least 5, got {period}")));
    }
    if grid.boundary() == Boundary::Periodic && grid.side() % period != 0 {
        return Err(Error::Parameter(format!(
            "period {name} = {period} must divide the periodic side length {}",
            grid.side()
        )));
    }
    Ok(())
}

/// `θ̄ = 2π[i]_N/N + 2π[j]_M/M` with uniform `r` solving
/// `λ(r) = α(4 - 2cos(2π/N) - 2cos(2π/M))`.
pub fn make_doubly_periodic(params: &ModelParams, n: usize, m: usize) -> Result<SteadyState> {
    let grid = params.grid;
    check_period(&grid, n, "N")?;
    check_period(&grid, m, "M")?;
    let (kn, km) = (TAU / n as f64, TAU / m as f64);
    let target = params.alpha * (4.0 - 2.0 * kn.cos() - 2.0 * km.cos());
    let r = solve_uniform_amplitude(params, target)?;
    let theta = grid
        .sites()
        .map(|s| wrap_angle(kn * s.i.rem_euclid(n as i64) as f64 + km * s.j.rem_euclid(m as i64) as f64))
        .collect();
    let field = PolarField::new(grid, vec![r; grid.len()], theta)?;
    SteadyState::from_field(field, params, Family::DoublyPeriodic { n, m })
}

/// `θ̄ = 2π[i]_N/N`, constant along `j`, with `λ(r) = α(2 - 2cos(2π/N))`.
pub fn make_traveling_wave(params: &ModelParams, n: usize) -> Result<SteadyState> {
    let grid = params.grid;
    check_period(&grid, n, "N")?;
    let kn = TAU / n as f64;
    let target = params.alpha * (2.0 - 2.0 * kn.cos());
    let r = solve_uniform_amplitude(params, target)?;
    let theta = grid.sites().map(|s| wrap_angle(kn * s.i.rem_euclid(n as i64) as f64)).collect();
    let field = PolarField::new(grid, vec![r; grid.len()], theta)?;
    SteadyState::from_field(field, params, Family::TravelingWave { n })
}

#[derive(Debug, Clone)]
pub struct RotatingWaveOptions {
    /// Required `‖(ṙ, θ̇)‖_∞`.
    pub tol: f64,
    /// Newton target on the scaled residual; tighter than `tol` so the
    /// symmetry checks have headroom.
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Relaxation stops once the scaled residual falls below this.
    pub relax_tol: f64,
    /// Maximum (rescaled) time spent relaxing before Newton takes over.
    pub relax_time: f64,
    pub continuation_step: f64,
}

impl Default for RotatingWaveOptions {
    fn default() -> Self {
        RotatingWaveOptions {
            tol: 1e-9,
            newton_tol: 1e-11,
            max_newton: 60,
            relax_tol: 1e-4,
            relax_time: 20.0,
            continuation_step: 0.05,
        }
    }
}

/// Gauge cell: the phase of `(1, 1)` is pinned to zero.
pub const GAUGE_SITE: Site = Site { i: 1, j: 1 };

/// `θ = atan2(i - 1/2, j - 1/2)`: a vortex about the centre point whose
/// quarter-turn `(i, j) → (j, 1 - i)` advances the phase by `π/2`.
pub fn rotating_wave_seed(params: &ModelParams) -> Result<PolarField> {
    let grid = params.grid;
    let theta = grid.sites().map(|s| (s.i as f64 - 0.5).atan2(s.j as f64 - 0.5)).collect();
    PolarField::new(grid, vec![params.lambda.root(); grid.len()], theta)
}

/// Rotating wave by relaxation and bordered Newton, with continuation in
/// `alpha` from the seed's coupling (or from the uncoupled limit).
pub fn solve_rotating_wave(
    params: &ModelParams,
    seed: Option<&SteadyState>,
    opts: &RotatingWaveOptions,
) -> Result<SteadyState> {
    if params.grid.boundary() != Boundary::Neumann {
        return Err(Error::Parameter("the rotating wave is computed on Neumann grids".into()));
    }
    if !params.omega.omega1_is_zero() {
        return Err(Error::Parameter("rotating-wave solver requires omega1 = 0".into()));
    }
    if !(opts.continuation_step > 0.0) {
        return Err(Error::Parameter("continuation step must be positive".into()));
    }
    let (mut field, start_alpha, fresh) = match seed {
        Some(s) => {
            if s.field.grid != params.grid {
                return Err(Error::Parameter("seed lives on a different grid".into()));
            }
            (s.field.clone(), s.alpha.min(params.alpha), false)
        }
        None => (rotating_wave_seed(params)?, 0.0, true),
    };

    let mut alphas = Vec::new();
    let mut a = start_alpha;
    while params.alpha - a > opts.continuation_step * (1.0 + 1e-9) {
        a += opts.continuation_step;
        alphas.push(a);
    }
    if fresh || alphas.last().copied() != Some(params.alpha) {
        alphas.push(params.alpha);
    }
    if fresh && start_alpha < params.alpha {
        alphas.insert(0, start_alpha);
    }

    for (step, &alpha) in alphas.iter().enumerate() {
        let p = params.with_alpha(alpha)?;
        if step == 0 && fresh {
            relax(&mut field, &p, opts)?;
        }
        newton_polish(&mut field, &p, opts)?;
    }

    fix_gauge(&mut field)?;
    let state = SteadyState::from_field(field, params, Family::RotatingWave)?;
    if !(state.residual_inf <= opts.tol) {
        return Err(Error::NonConvergence { iterations: opts.max_newton, best_residual: state.residual_inf });
    }
    Ok(state)
}

fn scaled_residual(field: &PolarField, p: &ModelParams) -> Result<Vec<f64>> {
    let f = radial_rate(field, p)?;
    let g = phase_drive(field, p)?;
    Ok(f.iter().zip(&g).flat_map(|(a, b)| [*a, *b]).collect())
}

fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Integrates `ṙ = F`, `θ̇ = G` (phase equation without the α factor) until
/// the scaled residual drops below `relax_tol` or the time budget runs out.
fn relax(field: &mut PolarField, p: &ModelParams, opts: &RotatingWaveOptions) -> Result<()> {
    let n = field.r.len();
    let mut y: Vec<f64> = field.r.iter().chain(&field.theta).copied().collect();
    let mut ws = PolarWorkspace::new(n);
    let mut rhs = |y: &[f64], dy: &mut [f64]| {
        let (r, th) = y.split_at(n);
        let (dr, dth) = dy.split_at_mut(n);
        ws.rates_into(p, r, th, dr, dth, 1.0)
    };
    let mut rk = Rk4::new(2 * n);
    let fast = p.lambda.linear_rate().abs() + 8.0 * p.alpha.max(1.0);
    let dt = 0.2 / fast;
    let chunk = 1.0;
    let mut t = 0.0;
    let mut dy = vec![0.0; 2 * n];
    loop {
        rhs(&y, &mut dy)?;
        if inf_norm(&dy) < opts.relax_tol || t >= opts.relax_time {
            break;
        }
        rk.advance(&mut rhs, &mut y, chunk, dt)?;
        t += chunk;
    }
    field.r.copy_from_slice(&y[..n]);
    field.theta.copy_from_slice(&y[n..]);
    Ok(())
}

/// Newton iterates must keep `r` in `(r_min, 3a/2)`. The tighter `a/2`
/// working bound is only reported by [`validate_steady`]: strongly coupled
/// rotating waves dip below it near the core.
fn band_violation(field: &PolarField, r_min: f64, a: f64) -> Option<Error> {
    let (lo, hi) = (r_min, 1.5 * a);
    field.r.iter().position(|r| !(*r > lo && *r < hi)).map(|k| Error::OutOfBand {
        site: field.grid.site(k),
        r: field.r[k],
        lo,
        hi,
    })
}

/// Damped Newton on `(F, G)` with the gauge column replaced by a unit
/// column at the gauge cell's phase row.
fn newton_polish(field: &mut PolarField, p: &ModelParams, opts: &RotatingWaveOptions) -> Result<()> {
    let grid = p.grid;
    let n = grid.len();
    let g = grid.index(GAUGE_SITE)?;
    let gauge_col = 2 * g + 1;
    let a = p.lambda.root();
    let mut res = scaled_residual(field, p)?;
    let merit = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let mut phi = merit(&res);
    let mut best = inf_norm(&res);

    for _ in 0..opts.max_newton {
        if inf_norm(&res) <= opts.newton_tol {
            return Ok(());
        }
        let mut triplets: Vec<Triplet<usize, usize, f64>> = polar_jacobian(field, p)?
            .into_iter()
            .filter(|&(_, c, _)| c != gauge_col)
            .map(|(r, c, v)| Triplet::new(r, c, v))
            .collect();
        triplets.push(Triplet::new(gauge_col, gauge_col, 1.0));
        let jac = SparseColMat::<usize, f64>::try_new_from_triplets(2 * n, 2 * n, &triplets)
            .map_err(|e| Error::LinearSolve(format!("{e:?}")))?;
        let lu = jac.sp_lu().map_err(|e| Error::LinearSolve(format!("{e:?}")))?;
        let rhs = Mat::<f64>::from_fn(2 * n, 1, |i, _| -res[i]);
        let sol = lu.solve(&rhs);
        let mut delta: Vec<f64> = (0..2 * n).map(|i| sol[(i, 0)]).collect();
        // The bordered unknown is a multiplier, not a phase increment.
        delta[gauge_col] = 0.0;
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::LinearSolve("Newton step is not finite".into()));
        }

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial = field.clone();
            for k in 0..n {
                trial.r[k] += step * delta[2 * k];
                trial.theta[k] += step * delta[2 * k + 1];
            }
            if band_violation(&trial, p.r_min(), a).is_none() {
                let trial_res = scaled_residual(&trial, p)?;
                let trial_phi = merit(&trial_res);
                if trial_phi < (1.0 - 1e-4 * step) * phi {
                    *field = trial;
                    res = trial_res;
                    phi = trial_phi;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        best = best.min(inf_norm(&res));
        if !accepted {
            if let Some(err) = band_violation(field, p.r_min(), a) {
                return Err(err);
            }
            // Stalled at rounding level: accept if the physical tolerance holds.
            let physical = physical_residual(&res, p.alpha);
            if physical <= opts.tol {
                return Ok(());
            }
            return Err(Error::NonConvergence { iterations: opts.max_newton, best_residual: best });
        }
    }
    if inf_norm(&res) <= opts.newton_tol || physical_residual(&res, p.alpha) <= opts.tol {
        Ok(())
    } else {
        Err(Error::NonConvergence { iterations: opts.max_newton, best_residual: best })
    }
}

fn physical_residual(res: &[f64], alpha: f64) -> f64 {
    res.chunks_exact(2).fold(0.0, |m, c| m.max(c[0].abs()).max((alpha * c[1]).abs()))
}

fn fix_gauge(field: &mut PolarField) -> Result<()> {
    let g = field.grid.index(GAUGE_SITE)?;
    let shift = field.theta[g];
    field.theta.iter_mut().for_each(|t| *t = wrap_angle(*t - shift));
    field.theta[g] = 0.0;
    Ok(())
}

/// Largest angular distance between the four centre phases (gauge
/// `θ̄(1,1) = 0`) and the set `{0, π/2, π, 3π/2}`.
pub fn centre_phase_error(state: &SteadyState) -> Result<f64> {
    let grid = state.grid();
    let t = state.theta_bar();
    let base = t[grid.index(GAUGE_SITE)?];
    let targets = [0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2];
    let mut used = [false; 4];
    let mut worst = 0.0f64;
    for site in [Site::new(1, 1), Site::new(1, 0), Site::new(0, 0), Site::new(0, 1)] {
        let phase = t[grid.index(site)?] - base;
        let (slot, dist) = targets
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, target)| (k, wrap_angle(phase - target).abs()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .expect("four targets for four cells");
        used[slot] = true;
        worst = worst.max(dist);
    }
    Ok(worst)
}

/// `(max |wrap(θ̄(j,1-i) - θ̄(i,j) - π/2)|, max |r̄(j,1-i) - r̄(i,j)|)`.
pub fn rotational_mismatch(field: &PolarField) -> (f64, f64) {
    let map = field.grid.rotation_map();
    map.iter().enumerate().fold((0.0f64, 0.0f64), |(pm, rm), (k, &m)| {
        (
            pm.max(wrap_angle(field.theta[m] - field.theta[k] - FRAC_PI_2).abs()),
            rm.max((field.r[m] - field.r[k]).abs()),
        )
    })
}

/// Counts square rings about the centre on which the phase increases
/// monotonically when walked in the direction of increasing polar angle.
pub fn monotone_rings(field: &PolarField) -> (usize, usize) {
    let grid = field.grid;
    let k = grid.half_width() as i64;
    let mut monotone = 0;
    for d in 1..=k {
        let mut ring: Vec<(f64, f64)> = grid
            .sites()
            .filter(|s| (s.i - 1).max(-s.i).max(s.j - 1).max(-s.j) == d - 1)
            .map(|s| {
                let angle = (s.i as f64 - 0.5).atan2(s.j as f64 - 0.5);
                (angle, field.theta[grid.index(s).expect("site from grid")])
            })
            .collect();
        ring.sort_by(|x, y| x.0.total_cmp(&y.0));
        let ok = (0..ring.len()).all(|q| wrap_angle(ring[(q + 1) % ring.len()].1 - ring[q].1) > 0.0);
        if ok {
            monotone += 1;
        }
    }
    (monotone, k as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyReport {
    pub residual_inf: f64,
    /// Residual over cells not adjacent to the grid edge.
    pub interior_residual_inf: f64,
    pub boundary_residual_inf: f64,
    pub max_amplitude_deviation: f64,
    /// `max |r̄ - a| / α`; `None` at `α = 0`.
    pub lipschitz_ratio: Option<f64>,
    pub checks: Vec<(String, bool)>,
    pub passed: bool,
}

/// Recomputes the residual and runs the structural checks for the family.
pub fn validate_steady(state: &SteadyState, params: &ModelParams, tol: f64) -> Result<SteadyReport> {
    if state.field.grid != params.grid {
        return Err(Error::Parameter("state and parameters use different grids".into()));
    }
    let grid = params.grid;
    let a = params.lambda.root();
    let rates = rhs_polar(&state.field, params)?;
    let (mut interior, mut boundary) = (0.0f64, 0.0f64);
    for k in 0..grid.len() {
        let v = rates.dr[k].abs().max(rates.dtheta[k].abs());
        if grid.boundary() == Boundary::Neumann && grid.touches_boundary(k) {
            boundary = boundary.max(v);
        } else {
            interior = interior.max(v);
        }
    }
    let residual_inf = interior.max(boundary);
    let deviation = state.field.r.iter().fold(0.0f64, |m, r| m.max((r - a).abs()));
    let lipschitz_ratio = (params.alpha > 0.0).then(|| deviation / params.alpha);

    let mut checks = Vec::new();
    let flagged_neumann = matches!(state.family, Family::DoublyPeriodic { .. } | Family::TravelingWave { .. })
        && grid.boundary() == Boundary::Neumann;
    let residual_ok = if flagged_neumann { interior <= tol } else { residual_inf <= tol };
    checks.push((
        if flagged_neumann { "interior residual".to_string() } else { "residual".to_string() },
        residual_ok,
    ));
    checks.push(("amplitude band |r - a| <= a/2".into(), deviation <= 0.5 * a));
    if state.family == Family::RotatingWave {
        checks.push(("centre phases".into(), centre_phase_error(state)? <= 1e-7));
        let (phase, radial) = rotational_mismatch(&state.field);
        checks.push(("rotational identity".into(), phase <= 1e-7 && radial <= 1e-9));
    }
    let passed = checks.iter().all(|(_, ok)| *ok);
    Ok(SteadyReport {
        residual_inf,
        interior_residual_inf: interior,
        boundary_residual_inf: boundary,
        max_amplitude_deviation: deviation,
        lipschitz_ratio,
        checks,
        passed,
    })
}
