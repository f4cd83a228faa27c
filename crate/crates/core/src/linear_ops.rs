//! Weighted nearest-neighbour phase operators, their semigroups, and
//! decay-rate fitting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeGrid, Site};
use crate::norms::{boundary_mass_fraction, lp_norm, qp_seminorm, NormOrder};
use crate::ode::Rk4;
use crate::steady::{SteadyState, GAUGE_SITE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatorKind {
    /// Weights `cos(θ̄' - θ̄)`.
    LAlpha,
    /// Weights `(r̄'/r̄) cos(θ̄' - θ̄)`.
    LTilde,
    /// `d₁` on edges along `i`, `d₂` on edges along `j`.
    PlainLaplacian { d1: f64, d2: f64 },
}

/// `[Lx]_c = Σ_n w_{cn} (x_n - x_c)`; weights are stored per cell in the
/// neighbour order of [`LatticeGrid::neighbour_indices`].
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingOperator {
    grid: LatticeGrid,
    kind: OperatorKind,
    weights: Vec<[f64; 4]>,
}

impl CouplingOperator {
    pub fn plain(grid: LatticeGrid, d1: f64, d2: f64) -> Self {
        let weights = (0..grid.len())
            .map(|k| {
                let nb = grid.neighbour_indices(k);
                let w = [d1, d1, d2, d2];
                std::array::from_fn(|q| if nb[q] == k { 0.0 } else { w[q] })
            })
            .collect();
        CouplingOperator { grid, kind: OperatorKind::PlainLaplacian { d1, d2 }, weights }
    }

    pub fn grid(&self) -> &LatticeGrid {
        &self.grid
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn weights(&self) -> &[[f64; 4]] {
        &self.weights
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().flatten().fold(0.0, |m, w| m.max(w.abs()))
    }

    /// Writes `Lx` into `out`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let side = self.grid.side();
        for row in 0..side {
            for col in 0..side {
                let k = row * side + col;
                let nb = self.grid.neighbour_indices_rc(row, col);
                let w = &self.weights[k];
                let xc = x[k];
                out[k] = w[0] * (x[nb[0]] - xc)
                    + w[1] * (x[nb[1]] - xc)
                    + w[2] * (x[nb[2]] - xc)
                    + w[3] * (x[nb[3]] - xc);
            }
        }
    }
}

pub fn build_operator(steady: &SteadyState, kind: OperatorKind) -> CouplingOperator {
    let grid = *steady.grid();
    if let OperatorKind::PlainLaplacian { d1, d2 } = kind {
        return CouplingOperator::plain(grid, d1, d2);
    }
    let (r, t) = (steady.r_bar(), steady.theta_bar());
    let weights = (0..grid.len())
        .map(|k| {
            let nb = grid.neighbour_indices(k);
            std::array::from_fn(|q| {
                let m = nb[q];
                if m == k {
                    return 0.0;
                }
                let c = (t[m] - t[k]).cos();
                match kind {
                    OperatorKind::LTilde => r[m] / r[k] * c,
                    _ => c,
                }
            })
        })
        .collect();
    CouplingOperator { grid, kind, weights }
}

pub fn apply(op: &CouplingOperator, x: &[f64]) -> Result<Vec<f64>> {
    op.grid.check_len(x.len())?;
    let mut out = vec![0.0; x.len()];
    op.apply_into(x, &mut out);
    Ok(out)
}

/// Largest RK4 step used for `ẋ = Lx`.
pub fn semigroup_step(op: &CouplingOperator) -> f64 {
    let w = op.max_weight();
    if w == 0.0 {
        f64::INFINITY
    } else {
        0.1 / (8.0 * w)
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::Parameter("sample times must be finite and nonnegative".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Parameter("sample times must be sorted".into()));
    }
    Ok(())
}

/// Walks `ẋ = Lx` through `times`, handing each sample to `visit`.
fn evolve_visit<F>(op: &CouplingOperator, x0: &[f64], times: &[f64], mut visit: F) -> Result<()>
where
    F: FnMut(usize, f64, &[f64]) -> Result<()>,
{
    op.grid.check_len(x0.len())?;
    check_times(times)?;
    let dt = semigroup_step(op);
    let mut x = x0.to_vec();
    let mut rk = Rk4::new(x.len());
    let mut rhs = |y: &[f64], dy: &mut [f64]| {
        op.apply_into(y, dy);
        Ok(())
    };
    let mut now = 0.0;
    for (q, &t) in times.iter().enumerate() {
        if dt.is_finite() {
            rk.advance(&mut rhs, &mut x, t - now, dt)?;
        }
        now = t;
        visit(q, t, &x)?;
    }
    Ok(())
}

/// Samples of `e^{Lt} x0` at the requested times.
pub fn evolve_semigroup(op: &CouplingOperator, x0: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(times.len());
    evolve_visit(op, x0, times, |_, _, x| {
        out.push(x.to_vec());
        Ok(())
    })?;
    Ok(out)
}

/// `count` points from `lo` to `hi`, equally spaced in `log t`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || count < 2 {
        return Err(Error::Parameter(format!("bad log grid [{lo}, {hi}] with {count} points")));
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut out: Vec<f64> = (0..count)
        .map(|q| (a + (b - a) * q as f64 / (count - 1) as f64).exp())
        .collect();
    out[0] = lo;
    out[count - 1] = hi;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayModel {
    /// `value ≈ C (1 + t)^{-γ}`.
    PowerLaw,
    /// `value ≈ C e^{-βt}`.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub model: DecayModel,
    pub rate: f64,
    pub prefactor: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    pub samples: usize,
}

pub const MIN_FIT_SAMPLES: usize = 8;

/// Least squares on `log value` against `log(1 + t)` or `t`.
pub fn fit_decay(series: &[(f64, f64)], model: DecayModel, window: (f64, f64)) -> Result<DecayFit> {
    if !(window.0 <= window.1) {
        return Err(Error::Fit(format!("empty window [{}, {}]", window.0, window.1)));
    }
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .copied()
        .collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(Error::Fit(format!(
            "{} samples in window [{}, {}], need {MIN_FIT_SAMPLES}",
            pts.len(),
            window.0,
            window.1
        )));
    }
    if let Some((t, v)) = pts.iter().find(|(_, v)| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Fit(format!("value {v} at t = {t} is not positive")));
    }
    let xs: Vec<f64> = pts
        .iter()
        .map(|(t, _)| match model {
            DecayModel::PowerLaw => t.ln_1p(),
            DecayModel::Exponential => *t,
        })
        .collect();
    let ys: Vec<f64> = pts.iter().map(|(_, v)| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all samples share the same abscissa".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    // A fit exact to rounding counts as perfect; otherwise a conserved
    // (flat) series would score noise over noise.
    let scale = ys.iter().fold(1.0f64, |m, y| m.max(y.abs()));
    let exact = ss_res <= n * (1e-12 * scale).powi(2);
    let r_squared = if exact || ss_tot == 0.0 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    Ok(DecayFit {
        model,
        rate: -slope,
        prefactor: intercept.exp(),
        window,
        r_squared,
        samples: pts.len(),
    })
}

/// Window used when none is given: `[t_max/20, t_max/2]`.
pub fn default_window(t_max: f64) -> (f64, f64) {
    (t_max / 20.0, t_max / 2.0)
}

pub const BOUNDARY_GUARD_WIDTH: usize = 5;
pub const BOUNDARY_GUARD_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteRow {
    pub t: f64,
    pub p: NormOrder,
    pub lp: f64,
    pub qp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Lp,
    Qp,
}

/// Norm table of an evolution, with per-sample boundary contamination flags.
#[derive(Debug, Clone, PartialEq)]
pub struct DecaySuite {
    pub times: Vec<f64>,
    pub rows: Vec<SuiteRow>,
    /// Fraction of ℓ¹ mass within the guard band, per sample time.
    pub boundary_mass: Vec<f64>,
    pub flagged: Vec<bool>,
}

impl DecaySuite {
    /// `(t, value)` for one norm, excluding flagged samples.
    pub fn series(&self, p: NormOrder, measure: Measure) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|row| row.p == p)
            .filter(|row| {
                let q = self.times.iter().position(|t| *t == row.t).expect("row time sampled");
                !self.flagged[q]
            })
            .map(|row| (row.t, if measure == Measure::Lp { row.lp } else { row.qp }))
            .collect()
    }

    pub fn fit(&self, p: NormOrder, measure: Measure, window: Option<(f64, f64)>) -> Result<DecayFit> {
        let t_max = self.times.last().copied().unwrap_or(0.0);
        let window = window.unwrap_or_else(|| default_window(t_max));
        fit_decay(&self.series(p, measure), DecayModel::PowerLaw, window)
    }
}

pub fn measure_decay_suite(
    op: &CouplingOperator,
    x0: &[f64],
    p_list: &[NormOrder],
    t_grid: &[f64],
) -> Result<DecaySuite> {
    for p in p_list {
        p.validate()?;
    }
    let grid = op.grid;
    let mut rows = Vec::with_capacity(p_list.len() * t_grid.len());
    let mut boundary_mass = Vec::with_capacity(t_grid.len());
    let mut flagged = Vec::with_capacity(t_grid.len());
    evolve_visit(op, x0, t_grid, |_, t, x| {
        let frac = boundary_mass_fraction(x, &grid, BOUNDARY_GUARD_WIDTH);
        boundary_mass.push(frac);
        flagged.push(frac > BOUNDARY_GUARD_FRACTION);
        for &p in p_list {
            rows.push(SuiteRow { t, p, lp: lp_norm(x, p)?, qp: qp_seminorm(x, &grid, p)? });
        }
        Ok(())
    })?;
    Ok(DecaySuite { times: t_grid.to_vec(), rows, boundary_mass, flagged })
}

/// Nearest-neighbour edges weighted by `cos(θ̄' - θ̄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingGraph {
    /// Each undirected edge once, as `(index, index, weight)`.
    pub edges: Vec<(usize, usize, f64)>,
    pub positive: usize,
    pub zero: usize,
    pub negative: usize,
    /// True when the only non-positive edges are the four joining the centre
    /// cells, each with zero weight.
    pub centre_ring_cut: bool,
}

/// Weights within this distance of zero count as absent edges.
pub const ZERO_EDGE_TOL: f64 = 1e-9;

pub fn coupling_graph(steady: &SteadyState) -> CouplingGraph {
    let grid = *steady.grid();
    let t = steady.theta_bar();
    let mut edges = Vec::new();
    for k in 0..grid.len() {
        for m in grid.neighbour_indices(k) {
            if m > k {
                edges.push((k, m, (t[m] - t[k]).cos()));
            }
        }
    }
    let positive = edges.iter().filter(|e| e.2 > ZERO_EDGE_TOL).count();
    let negative = edges.iter().filter(|e| e.2 < -ZERO_EDGE_TOL).count();
    let zero = edges.len() - positive - negative;
    let centre: Vec<usize> = [Site::new(0, 0), Site::new(0, 1), Site::new(1, 0), GAUGE_SITE]
        .iter()
        .filter_map(|s| grid.index(*s).ok())
        .collect();
    let centre_ring_cut = negative == 0
        && zero == 4
        && edges
            .iter()
            .filter(|e| e.2.abs() <= ZERO_EDGE_TOL)
            .all(|e| centre.contains(&e.0) && centre.contains(&e.1));
    CouplingGraph { edges, positive, zero, negative, centre_ring_cut }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{delta_field, Boundary};
    use crate::model::ModelParams;
    use crate::steady::{make_doubly_periodic, make_trivial, solve_rotating_wave, RotatingWaveOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(alpha: f64, k: usize, b: Boundary) -> ModelParams {
        ModelParams::cubic(alpha, 0.0, LatticeGrid::new(k, b).unwrap()).unwrap()
    }

    #[test]
    fn trivial_state_gives_unit_laplacian() {
        let p = params(0.2, 4, Boundary::Neumann);
        let s = make_trivial(&p);
        for kind in [OperatorKind::LAlpha, OperatorKind::LTilde] {
            let op = build_operator(&s, kind);
            assert_eq!(op.weights(), CouplingOperator::plain(p.grid, 1.0, 1.0).weights());
        }
    }

    #[test]
    fn doubly_periodic_weights_follow_the_wavenumbers() {
        let p = params(0.05, 15, Boundary::Periodic);
        let s = make_doubly_periodic(&p, 6, 5).unwrap();
        let op = build_operator(&s, OperatorKind::LAlpha);
        let (c6, c5) = ((std::f64::consts::TAU / 6.0).cos(), (std::f64::consts::TAU / 5.0).cos());
        for w in op.weights() {
            assert!((w[0] - c6).abs() < 1e-12 && (w[1] - c6).abs() < 1e-12);
            assert!((w[2] - c5).abs() < 1e-12 && (w[3] - c5).abs() < 1e-12);
        }
    }

    #[test]
    fn plain_laplacian_stencil() {
        let g = LatticeGrid::new(3, Boundary::Neumann).unwrap();
        let op = CouplingOperator::plain(g, 1.0, 1.0);
        let d = delta_field(&g, Site::new(0, 0)).unwrap();
        let out = apply(&op, &d).unwrap();
        assert_eq!(out[g.index(Site::new(0, 0)).unwrap()], -4.0);
        for n in g.neighbours(Site::new(0, 0)).unwrap() {
            assert_eq!(out[g.index(n).unwrap()], 1.0);
        }
        assert_eq!(out.iter().filter(|v| **v != 0.0).count(), 5);
        assert!(apply(&op, &vec![2.5; g.len()]).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn operator_is_linear() {
        let p = params(0.3, 5, Boundary::Neumann);
        let s = solve_rotating_wave(&p, None, &RotatingWaveOptions::default()).unwrap();
        let op = build_operator(&s, OperatorKind::LTilde);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..p.grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..p.grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (0.7, -1.3);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let (lx, ly, lc) = (apply(&op, &x).unwrap(), apply(&op, &y).unwrap(), apply(&op, &combo).unwrap());
        for k in 0..lc.len() {
            assert!((lc[k] - (a * lx[k] + b * ly[k])).abs() < 1e-13);
        }
    }

    #[test]
    fn semigroup_at_zero_is_identity_and_keeps_constants() {
        let g = LatticeGrid::new(4, Boundary::Neumann).unwrap();
        let op = CouplingOperator::plain(g, 1.0, 1.0);
        let d = delta_field(&g, Site::new(1, 1)).unwrap();
        assert_eq!(evolve_semigroup(&op, &d, &[0.0]).unwrap()[0], d);
        let c = vec![0.3; g.len()];
        for x in evolve_semigroup(&op, &c, &[0.5, 3.0]).unwrap() {
            assert!(x.iter().all(|v| (v - 0.3).abs() < 1e-15));
        }
        assert!(evolve_semigroup(&op, &c, &[2.0, 1.0]).is_err());
    }

    #[test]
    fn heat_flow_conserves_mass() {
        let g = LatticeGrid::new(16, Boundary::Periodic).unwrap();
        let op = CouplingOperator::plain(g, 1.0, 1.0);
        let d = delta_field(&g, Site::new(0, 0)).unwrap();
        for x in evolve_semigroup(&op, &d, &[1.0, 10.0, 40.0]).unwrap() {
            let mass: f64 = x.iter().sum();
            assert!((mass - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn synthetic_power_law_fit_is_exact() {
        let series: Vec<(f64, f64)> = (0..40).map(|q| {
            let t = q as f64;
            (t, 3.0 * (1.0 + t).powf(-1.5))
        }).collect();
        let fit = fit_decay(&series, DecayModel::PowerLaw, (0.0, 40.0)).unwrap();
        assert!((fit.rate - 1.5).abs() < 1e-10);
        assert!((fit.prefactor - 3.0).abs() < 1e-9);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_series_up_to_rounding_fits_perfectly() {
        let series: Vec<(f64, f64)> =
            (0..30).map(|q| (q as f64, 1.0 + if q % 3 == 0 { f64::EPSILON } else { 0.0 })).collect();
        let fit = fit_decay(&series, DecayModel::PowerLaw, (0.0, 30.0)).unwrap();
        assert!(fit.rate.abs() < 1e-12);
        assert_eq!(fit.r_squared, 1.0);
        let noisy: Vec<(f64, f64)> = (0..30).map(|q| (q as f64, 1.0 + 0.01 * (q % 3) as f64)).collect();
        assert!(fit_decay(&noisy, DecayModel::PowerLaw, (0.0, 30.0)).unwrap().r_squared < 0.5);
    }

    #[test]
    fn synthetic_exponential_fit_is_exact() {
        let series: Vec<(f64, f64)> = (0..30).map(|q| {
            let t = 0.2 * q as f64;
            (t, 2.0 * (-0.7 * t).exp())
        }).collect();
        let fit = fit_decay(&series, DecayModel::Exponential, (0.0, 10.0)).unwrap();
        assert!((fit.rate - 0.7).abs() < 1e-10);
    }

    #[test]
    fn fit_rejects_bad_series() {
        let few: Vec<(f64, f64)> = (0..5).map(|q| (q as f64, 1.0)).collect();
        assert!(matches!(fit_decay(&few, DecayModel::PowerLaw, (0.0, 10.0)), Err(Error::Fit(_))));
        let mut neg: Vec<(f64, f64)> = (0..10).map(|q| (q as f64, 1.0)).collect();
        neg[3].1 = -1.0;
        assert!(matches!(fit_decay(&neg, DecayModel::PowerLaw, (0.0, 10.0)), Err(Error::Fit(_))));
    }

    #[test]
    fn coupling_graph_of_trivial_state_is_all_positive() {
        let p = params(0.1, 4, Boundary::Neumann);
        let gph = coupling_graph(&make_trivial(&p));
        assert_eq!(gph.negative + gph.zero, 0);
        assert_eq!(gph.positive, 2 * 8 * 7);
    }

    #[test]
    fn rotating_wave_cuts_the_centre_ring() {
        let p = params(0.1, 6, Boundary::Neumann);
        let s = solve_rotating_wave(&p, None, &RotatingWaveOptions::default()).unwrap();
        let gph = coupling_graph(&s);
        assert_eq!(gph.zero, 4);
        assert_eq!(gph.negative, 0);
        assert!(gph.centre_ring_cut);
        let op = build_operator(&s, OperatorKind::LAlpha);
        let k = p.grid.index(GAUGE_SITE).unwrap();
        // (1,1) neighbours (0,1) and (1,0) across the centre.
        let w = op.weights()[k];
        assert!(w[1].abs() < 1e-12 && w[3].abs() < 1e-12);
    }

    #[test]
    fn phase_jump_produces_negative_edges() {
        let p = params(0.1, 3, Boundary::Neumann);
        let mut s = make_trivial(&p);
        for (k, site) in p.grid.sites().enumerate() {
            if site.i > 0 {
                s.field.theta[k] = 2.0;
            }
        }
        let gph = coupling_graph(&s);
        assert_eq!(gph.negative, 6);
        assert!(!gph.centre_ring_cut);
    }

    #[test]
    fn suite_flags_boundary_contamination() {
        let g = LatticeGrid::new(10, Boundary::Neumann).unwrap();
        let op = CouplingOperator::plain(g, 1.0, 1.0);
        let d = delta_field(&g, Site::new(0, 0)).unwrap();
        let suite = measure_decay_suite(&op, &d, &[NormOrder::Infinity], &[0.0, 0.1, 60.0]).unwrap();
        assert_eq!(suite.flagged, vec![false, false, true]);
        assert_eq!(suite.series(NormOrder::Infinity, Measure::Lp).len(), 2);
    }
}
