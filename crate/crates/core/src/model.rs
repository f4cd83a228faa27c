//! Lambda-Omega right-hand sides in complex and polar form, plus the
//! steady-state-centred radial/phase maps `F`, `G`, `F̃` and the split
//! `G = L̃ψ + G⁽¹⁾ + G⁽²⁾`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{ComplexField, LatticeGrid, PolarField};
use crate::steady::SteadyState;

/// Shape of the radial growth function `λ(R)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaKind {
    /// `λ(R) = 1 - R²`.
    Cubic,
    /// `λ(R) = Σ c_k R^k`, coefficients in increasing degree.
    Polynomial(Vec<f64>),
}

/// `λ` together with its positive root `a` and slope `λ'(a) < 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSpec {
    kind: LambdaKind,
    coeffs: Vec<f64>,
    root: f64,
    slope: f64,
}

const ROOT_SCAN_STEPS: usize = 20_000;

impl LambdaSpec {
    pub fn cubic() -> Self {
        LambdaSpec { kind: LambdaKind::Cubic, coeffs: vec![1.0, 0.0, -1.0], root: 1.0, slope: -2.0 }
    }

    /// Finds the first positive root where `λ` crosses from positive to
    /// negative; fails when there is none or the crossing is tangent.
    pub fn polynomial(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Parameter("lambda coefficients must be finite and non-empty".into()));
        }
        let degree = coeffs.iter().rposition(|c| *c != 0.0).ok_or_else(|| {
            Error::Parameter("lambda must not be identically zero".into())
        })?;
        if degree == 0 {
            return Err(Error::Parameter("constant lambda has no root".into()));
        }
        let lead = coeffs[degree];
        // Cauchy bound on the modulus of the roots.
        let bound = 1.0 + coeffs[..degree].iter().map(|c| (c / lead).abs()).fold(0.0, f64::max);
        let eval = |r: f64| horner(&coeffs, r);

        let h = bound / ROOT_SCAN_STEPS as f64;
        let mut lo = f64::EPSILON.sqrt() * bound;
        let mut bracket = None;
        for step in 1..=ROOT_SCAN_STEPS {
            let hi = step as f64 * h;
            if hi <= lo {
                continue;
            }
            if eval(lo) > 0.0 && eval(hi) <= 0.0 {
                bracket = Some((lo, hi));
                break;
            }
            lo = hi;
        }
        let (mut lo, mut hi) = bracket.ok_or_else(|| {
            Error::Parameter("lambda has no positive root where it changes sign from + to -".into())
        })?;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if eval(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let root = if eval(hi) == 0.0 { hi } else { 0.5 * (lo + hi) };
        let slope = horner_derivative(&coeffs, root);
        if !(slope < 0.0) {
            return Err(Error::Parameter(format!(
                "lambda'(a) must be negative at the root a = {root}, got {slope}"
            )));
        }
        Ok(LambdaSpec { kind: LambdaKind::Polynomial(coeffs.clone()), coeffs, root, slope })
    }

    pub fn from_kind(kind: &LambdaKind) -> Result<Self> {
        match kind {
            LambdaKind::Cubic => Ok(Self::cubic()),
            LambdaKind::Polynomial(c) => Self::polynomial(c.clone()),
        }
    }

    pub fn kind(&self) -> &LambdaKind {
        &self.kind
    }

    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        match self.kind {
            LambdaKind::Cubic => 1.0 - r * r,
            LambdaKind::Polynomial(_) => horner(&self.coeffs, r),
        }
    }

    #[inline]
    pub fn derivative(&self, r: f64) -> f64 {
        match self.kind {
            LambdaKind::Cubic => -2.0 * r,
            LambdaKind::Polynomial(_) => horner_derivative(&self.coeffs, r),
        }
    }

    /// The root `a`.
    pub fn root(&self) -> f64 {
        self.root
    }

    /// `λ'(a)`.
    pub fn slope(&self) -> f64 {
        self.slope
    }

    /// `a λ'(a)`, the linear radial relaxation rate (negative).
    pub fn linear_rate(&self) -> f64 {
        self.root * self.slope
    }
}

fn horner(c: &[f64], r: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * r + ck)
}

fn horner_derivative(c: &[f64], r: f64) -> f64 {
    c.iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (k, &ck)| acc * r + k as f64 * ck)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Omega0 {
    Constant(f64),
    /// `ω₀(α) = base + slope·α`.
    Affine { base: f64, slope: f64 },
}

impl Omega0 {
    pub fn eval(&self, alpha: f64) -> f64 {
        match *self {
            Omega0::Constant(w) => w,
            Omega0::Affine { base, slope } => base + slope * alpha,
        }
    }
}

pub type Omega1Fn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Amplitude-dependent frequency correction `ω₁(R, α)`.
#[derive(Clone)]
pub enum Omega1 {
    Zero,
    /// `ω₁(R, α) = coeff·(R - a)`.
    Linear { coeff: f64 },
    Custom(Omega1Fn),
}

impl fmt::Debug for Omega1 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Omega1::Zero => f.write_str("Zero"),
            Omega1::Linear { coeff } => f.debug_struct("Linear").field("coeff", coeff).finish(),
            Omega1::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// `ω(R, α) = ω₀(α) + α ω₁(R, α)` with `ω₁(a, α) = 0`.
#[derive(Debug, Clone)]
pub struct OmegaSpec {
    omega0: Omega0,
    omega1: Omega1,
    root: f64,
}

impl OmegaSpec {
    /// Checks `ω₁(a, α) = 0` on an α grid covering `[0, 2]`.
    pub fn new(omega0: Omega0, omega1: Omega1, lambda: &LambdaSpec) -> Result<Self> {
        let spec = OmegaSpec { omega0, omega1, root: lambda.root() };
        for step in 0..=40 {
            let alpha = step as f64 * 0.05;
            let w = spec.omega1(spec.root, alpha);
            if !(w.abs() <= 1e-12) {
                return Err(Error::Parameter(format!(
                    "omega1(a, alpha) must vanish; got {w:e} at alpha = {alpha}"
                )));
            }
        }
        Ok(spec)
    }

    pub fn constant(omega0: f64, lambda: &LambdaSpec) -> Self {
        OmegaSpec { omega0: Omega0::Constant(omega0), omega1: Omega1::Zero, root: lambda.root() }
    }

    pub fn omega0(&self, alpha: f64) -> f64 {
        self.omega0.eval(alpha)
    }

    pub fn omega0_spec(&self) -> Omega0 {
        self.omega0
    }

    #[inline]
    pub fn omega1(&self, r: f64, alpha: f64) -> f64 {
        match &self.omega1 {
            Omega1::Zero => 0.0,
            Omega1::Linear { coeff } => coeff * (r - self.root),
            Omega1::Custom(f) => f(r, alpha),
        }
    }

    /// `∂ω₁/∂R`.
    pub fn omega1_slope(&self, r: f64, alpha: f64) -> f64 {
        match &self.omega1 {
            Omega1::Zero => 0.0,
            Omega1::Linear { coeff } => *coeff,
            Omega1::Custom(f) => {
                let h = 1e-6 * r.abs().max(1.0);
                (f(r + h, alpha) - f(r - h, alpha)) / (2.0 * h)
            }
        }
    }

    pub fn omega1_is_zero(&self) -> bool {
        matches!(self.omega1, Omega1::Zero)
    }

    /// `ω(R, α)`.
    pub fn omega(&self, r: f64, alpha: f64) -> f64 {
        self.omega0(alpha) + alpha * self.omega1(r, alpha)
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub alpha: f64,
    pub lambda: LambdaSpec,
    pub omega: OmegaSpec,
    pub grid: LatticeGrid,
}

impl ModelParams {
    pub fn new(alpha: f64, lambda: LambdaSpec, omega: OmegaSpec, grid: LatticeGrid) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::Parameter(format!("coupling alpha must be finite and >= 0, got {alpha}")));
        }
        Ok(ModelParams { alpha, lambda, omega, grid })
    }

    /// Cubic `λ`, constant `ω₀`, `ω₁ ≡ 0`.
    pub fn cubic(alpha: f64, omega0: f64, grid: LatticeGrid) -> Result<Self> {
        let lambda = LambdaSpec::cubic();
        let omega = OmegaSpec::constant(omega0, &lambda);
        Self::new(alpha, lambda, omega, grid)
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(alpha, self.lambda.clone(), self.omega.clone(), self.grid)
    }

    pub fn with_grid(&self, grid: LatticeGrid) -> Self {
        ModelParams { grid, ..self.clone() }
    }

    /// Amplitude floor below which the phase equation is rejected.
    pub fn r_min(&self) -> f64 {
        self.lambda.root() / 8.0
    }

    pub(crate) fn guard(&self, r: &[f64]) -> Result<()> {
        let r_min = self.r_min();
        match r.iter().position(|v| !(*v > r_min)) {
            Some(k) => Err(Error::Singularity { site: self.grid.site(k), r: r[k], r_min }),
            None => Ok(()),
        }
    }
}

/// `ż = α Σ (z' - z) + z [λ(|z|) + i ω(|z|, α)]`.
pub fn rhs_complex(state: &ComplexField, params: &ModelParams) -> Result<ComplexField> {
    let grid = params.grid;
    grid.check_len(state.re.len())?;
    let mut out = ComplexField::zeros(grid);
    complex_rates_into(params, &state.re, &state.im, &mut out.re, &mut out.im);
    Ok(out)
}

pub(crate) fn complex_rates_into(
    params: &ModelParams,
    re: &[f64],
    im: &[f64],
    dre: &mut [f64],
    dim: &mut [f64],
) {
    let alpha = params.alpha;
    let grid = &params.grid;
    for k in 0..re.len() {
        let (x, y) = (re[k], im[k]);
        let (mut sx, mut sy) = (0.0, 0.0);
        for m in grid.neighbour_indices(k) {
            sx += re[m] - x;
            sy += im[m] - y;
        }
        let modulus = x.hypot(y);
        let lam = params.lambda.eval(modulus);
        let om = params.omega.omega(modulus, alpha);
        dre[k] = alpha * sx + x * lam - y * om;
        dim[k] = alpha * sy + y * lam + x * om;
    }
}

/// Time derivatives of amplitude and phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarRates {
    pub dr: Vec<f64>,
    pub dtheta: Vec<f64>,
}

impl PolarRates {
    pub fn residual_inf(&self) -> f64 {
        self.dr.iter().chain(&self.dtheta).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Polar form in the frame rotating with `ω₀(α)`:
/// `ṙ = α Σ (r' cos(θ'-θ) - r) + r λ(r)`,
/// `θ̇ = α Σ (r'/r) sin(θ'-θ) + α ω₁(r, α)`.
pub fn rhs_polar(state: &PolarField, params: &ModelParams) -> Result<PolarRates> {
    params.grid.check_len(state.r.len())?;
    params.guard(&state.r)?;
    let n = state.r.len();
    let mut rates = PolarRates { dr: vec![0.0; n], dtheta: vec![0.0; n] };
    let mut ws = PolarWorkspace::new(n);
    ws.rates_into(params, &state.r, &state.theta, &mut rates.dr, &mut rates.dtheta, params.alpha)?;
    Ok(rates)
}

/// Scratch buffers for repeated polar right-hand-side evaluations.
#[derive(Debug, Clone)]
pub struct PolarWorkspace {
    u: Vec<f64>,
    v: Vec<f64>,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl PolarWorkspace {
    pub fn new(n: usize) -> Self {
        PolarWorkspace { u: vec![0.0; n], v: vec![0.0; n], cos: vec![0.0; n], sin: vec![0.0; n] }
    }

    /// Evaluates the polar rates with the phase equation multiplied by
    /// `phase_scale` (α for the physical flow, 1 for the slow-time flow).
    ///
    /// Uses `r' cos(θ'-θ) = cos θ·u' + sin θ·v'` with `u = r cos θ`,
    /// `v = r sin θ`, so only one `sin_cos` per cell is needed.
    pub fn rates_into(
        &mut self,
        params: &ModelParams,
        r: &[f64],
        theta: &[f64],
        dr: &mut [f64],
        dtheta: &mut [f64],
        phase_scale: f64,
    ) -> Result<()> {
        params.guard(r)?;
        let alpha = params.alpha;
        for k in 0..r.len() {
            let (s, c) = theta[k].sin_cos();
            self.cos[k] = c;
            self.sin[k] = s;
            self.u[k] = r[k] * c;
            self.v[k] = r[k] * s;
        }
        let grid = &params.grid;
        let side = grid.side();
        let zero_omega1 = params.omega.omega1_is_zero();
        for k in 0..r.len() {
            let (row, col) = (k / side, k - (k / side) * side);
            // Replaced neighbours contribute r cos 0 - r = 0 exactly; skip them.
            let (mut su, mut sv, mut count) = (0.0, 0.0, 0.0);
            for m in grid.neighbour_indices_rc(row, col) {
                if m != k {
                    su += self.u[m];
                    sv += self.v[m];
                    count += 1.0;
                }
            }
            let rk = r[k];
            let (c, s) = (self.cos[k], self.sin[k]);
            let coupled = c * su + s * sv - count * rk;
            let across = c * sv - s * su;
            dr[k] = alpha * coupled + rk * params.lambda.eval(rk);
            let w1 = if zero_omega1 { 0.0 } else { params.omega.omega1(rk, alpha) };
            dtheta[k] = phase_scale * (across / rk + w1);
        }
        Ok(())
    }
}

/// `Σ (r'/r) sin(θ'-θ) + ω₁(r, α)` per cell, i.e. `θ̇ / α` for `α > 0`.
pub fn phase_drive(state: &PolarField, params: &ModelParams) -> Result<Vec<f64>> {
    params.guard(&state.r)?;
    let grid = &params.grid;
    Ok((0..state.r.len())
        .map(|k| {
            let (rk, tk) = (state.r[k], state.theta[k]);
            let sum: f64 = grid
                .neighbour_indices(k)
                .iter()
                .map(|&m| state.r[m] / rk * (state.theta[m] - tk).sin())
                .sum();
            sum + params.omega.omega1(rk, params.alpha)
        })
        .collect())
}

/// `ṙ` evaluated directly from the cosine of phase differences.
pub fn radial_rate(state: &PolarField, params: &ModelParams) -> Result<Vec<f64>> {
    params.guard(&state.r)?;
    let grid = &params.grid;
    let alpha = params.alpha;
    Ok((0..state.r.len())
        .map(|k| {
            let (rk, tk) = (state.r[k], state.theta[k]);
            let sum: f64 = grid
                .neighbour_indices(k)
                .iter()
                .map(|&m| state.r[m] * (state.theta[m] - tk).cos() - rk)
                .sum();
            alpha * sum + rk * params.lambda.eval(rk)
        })
        .collect())
}

/// Sparse Jacobian entries `(row, col, value)` of `(ṙ, θ̇/α)` with respect to
/// `(r, θ)`, unknowns interleaved as `[r₀, θ₀, r₁, θ₁, ...]`.
///
/// Replaced (Neumann) neighbours contribute identically zero terms and are
/// skipped.
pub fn polar_jacobian(state: &PolarField, params: &ModelParams) -> Result<Vec<(usize, usize, f64)>> {
    params.guard(&state.r)?;
    let grid = &params.grid;
    let alpha = params.alpha;
    let mut out = Vec::with_capacity(state.r.len() * 20);
    for k in 0..state.r.len() {
        let (rk, tk) = (state.r[k], state.theta[k]);
        let (rr, rt) = (2 * k, 2 * k + 1);
        let mut d_rr = params.lambda.eval(rk) + rk * params.lambda.derivative(rk);
        let mut d_rt = 0.0;
        let mut d_tr = params.omega.omega1_slope(rk, alpha);
        let mut d_tt = 0.0;
        for m in grid.neighbour_indices(k) {
            if m == k {
                continue;
            }
            let rm = state.r[m];
            let (s, c) = (state.theta[m] - tk).sin_cos();
            d_rr -= alpha;
            out.push((rr, 2 * m, alpha * c));
            out.push((rr, 2 * m + 1, -alpha * rm * s));
            d_rt += alpha * rm * s;
            out.push((rt, 2 * m, s / rk));
            d_tr -= rm * s / (rk * rk);
            out.push((rt, 2 * m + 1, rm / rk * c));
            d_tt -= rm / rk * c;
        }
        out.push((rr, rr, d_rr));
        out.push((rr, rt, d_rt));
        out.push((rt, rr, d_tr));
        out.push((rt, rt, d_tt));
    }
    Ok(out)
}

fn check_centred(s: &[f64], psi: &[f64], steady: &SteadyState, params: &ModelParams) -> Result<()> {
    let grid = &params.grid;
    grid.check_len(s.len())?;
    grid.check_len(psi.len())?;
    grid.check_len(steady.field.r.len())?;
    if steady.field.grid != params.grid {
        return Err(Error::Parameter("steady state and model parameters use different grids".into()));
    }
    let r_min = params.r_min();
    for k in 0..s.len() {
        let r = steady.field.r[k] + s[k];
        if !(r > r_min) {
            return Err(Error::Singularity { site: grid.site(k), r, r_min });
        }
    }
    Ok(())
}

/// Radial map `F(s, ψ, α)` centred at a steady state.
pub fn f_centered(s: &[f64], psi: &[f64], steady: &SteadyState, params: &ModelParams) -> Result<Vec<f64>> {
    check_centred(s, psi, steady, params)?;
    let (rb, tb) = (&steady.field.r, &steady.field.theta);
    let grid = &params.grid;
    let alpha = params.alpha;
    Ok((0..s.len())
        .map(|k| {
            let rk = rb[k] + s[k];
            let tk = tb[k] + psi[k];
            let sum: f64 = grid
                .neighbour_indices(k)
                .iter()
                .map(|&m| (rb[m] + s[m]) * (tb[m] + psi[m] - tk).cos() - rk)
                .sum();
            alpha * sum + rk * params.lambda.eval(rk)
        })
        .collect())
}

/// `F̃ = F - a λ'(a) s`.
pub fn f_tilde(s: &[f64], psi: &[f64], steady: &SteadyState, params: &ModelParams) -> Result<Vec<f64>> {
    let rate = params.lambda.linear_rate();
    let mut f = f_centered(s, psi, steady, params)?;
    f.iter_mut().zip(s).for_each(|(fk, sk)| *fk -= rate * sk);
    Ok(f)
}

/// Phase map `G(s, ψ, α)` centred at a steady state (so `ψ̇ = α G`).
pub fn g_centered(s: &[f64], psi: &[f64], steady: &SteadyState, params: &ModelParams) -> Result<Vec<f64>> {
    check_centred(s, psi, steady, params)?;
    let (rb, tb) = (&steady.field.r, &steady.field.theta);
    let grid = &params.grid;
    Ok((0..s.len())
        .map(|k| {
            let rk = rb[k] + s[k];
            let tk = tb[k] + psi[k];
            let sum: f64 = grid
                .neighbour_indices(k)
                .iter()
                .map(|&m| (rb[m] + s[m]) / rk * (tb[m] + psi[m] - tk).sin())
                .sum();
            sum + params.omega.omega1(rk, params.alpha)
        })
        .collect())
}

/// `G⁽¹⁾`: the part of `G` driven by the amplitude perturbation.
pub fn g1_part(s: &[f64], psi: &[f64], steady: &SteadyState, params: &ModelParams) -> Result<Vec<f64>> {
    check_centred(s, psi, steady, params)?;
    let (rb, tb) = (&steady.field.r, &steady.field.theta);
    let grid = &params.grid;
    Ok((0..s.len())
        .map(|k| {
            let rk = rb[k] + s[k];
            grid.neighbour_indices(k)
                .iter()
                .map(|&m| {
                    let ratio = (rb[m] + s[m]) / rk - rb[m] / rb[k];
                    ratio * (tb[m] + psi[m] - tb[k] - psi[k]).sin()
                })
                .sum()
        })
        .collect())
}

/// `G⁽²⁾`: the phase nonlinearity `sin(Δ̄ + Δψ) - sin Δ̄ - cos Δ̄·Δψ`,
/// weighted by the steady amplitude ratios.
pub fn g2_part(psi: &[f64], steady: &SteadyState, params: &ModelParams) -> Result<Vec<f64>> {
    let zeros = vec![0.0; psi.len()];
    check_centred(&zeros, psi, steady, params)?;
    let (rb, tb) = (&steady.field.r, &steady.field.theta);
    let grid = &params.grid;
    Ok((0..psi.len())
        .map(|k| {
            grid.neighbour_indices(k)
                .iter()
                .map(|&m| rb[m] / rb[k] * sine_remainder(tb[m] - tb[k], psi[m] - psi[k]))
                .sum()
        })
        .collect())
}

/// `sin(a + h) - sin a - h cos a`, written as
/// `-2 sin a sin²(h/2) + cos a (sin h - h)` to avoid cancellation for small h.
pub(crate) fn sine_remainder(a: f64, h: f64) -> f64 {
    let (sa, ca) = a.sin_cos();
    let half = (0.5 * h).sin();
    -2.0 * sa * half * half + ca * sin_minus_x(h)
}

/// `sin x - x` without cancellation near zero.
fn sin_minus_x(x: f64) -> f64 {
    if x.abs() < 0.1 {
        let x2 = x * x;
        // Taylor series through x^11; truncation error < 1e-22 for |x| < 0.1.
        -x * x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0 * (1.0 - x2 / 110.0))))
    } else {
        x.sin() - x
    }
}
