//! Command-line front end. Every run resolves its configuration (file, then
//! flags, then defaults), validates it, and writes a CSV table, a summary
//! document and a manifest holding the resolved configuration.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::experiments::{
    check_rotational_identity, polar_time_step, run_manifold_attraction, run_phase_decay, scan_hypothesis4,
    simulate_complex, simulate_polar, AttractionOptions, ExponentCheck, ManifoldOptions, MeanMode, PhaseDecayOptions,
    ALPHA_MAX,
};
use crate::io::{
    csv_text, fmt_f64, load_config, load_snapshot, norm_table_text, save_snapshot, sibling, write_text,
    ExperimentConfig, Manifest, NormRow, OneOrMany, Snapshot,
};
use crate::lattice::{delta_field, gaussian_bump, Boundary, LatticeGrid, Site};
use crate::linear_ops::{build_operator, log_spaced, measure_decay_suite, DecayFit, Measure, OperatorKind};
use crate::model::{rhs_polar, LambdaKind, LambdaSpec, ModelParams, OmegaSpec};
use crate::norms::NormOrder;
use crate::steady::{
    make_doubly_periodic, make_traveling_wave, make_trivial, solve_rotating_wave, validate_steady, Family,
    RotatingWaveOptions, SteadyState,
};

#[derive(Debug, Parser)]
#[command(name = "lambda-omega", version, about = "Lambda-Omega lattice experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Construct, validate and save a steady state.
    Steady(Flags),
    /// Integrate the complex or polar dynamics from a snapshot.
    Simulate(Flags),
    /// Decay suite of a linear coupling operator.
    Semigroup(Flags),
    /// Amplitude-localisation sums against grid size.
    #[command(name = "scan-hyp4")]
    ScanHyp4(Flags),
    /// Exponential attraction to the critical manifold.
    Attract(Flags),
    /// Algebraic decay of phase perturbations in slow time.
    #[command(name = "phase-decay")]
    PhaseDecay(Flags),
    /// Quarter-turn identity of a rotating wave along the flow.
    #[command(name = "check-rotation")]
    CheckRotation(Flags),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Steady(_) => "steady",
            Command::Simulate(_) => "simulate",
            Command::Semigroup(_) => "semigroup",
            Command::ScanHyp4(_) => "scan-hyp4",
            Command::Attract(_) => "attract",
            Command::PhaseDecay(_) => "phase-decay",
            Command::CheckRotation(_) => "check-rotation",
        }
    }

    fn flags(&self) -> &Flags {
        match self {
            Command::Steady(f)
            | Command::Simulate(f)
            | Command::Semigroup(f)
            | Command::ScanHyp4(f)
            | Command::Attract(f)
            | Command::PhaseDecay(f)
            | Command::CheckRotation(f) => f,
        }
    }
}

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',').map(|t| t.trim().parse::<T>().map_err(|e| format!("`{t}`: {e}"))).collect()
}

/// Grid sides from the command line.
#[derive(Debug, Clone)]
struct Sizes(Vec<usize>);

/// `lo:hi:step` or a comma list.
fn parse_sizes(s: &str) -> std::result::Result<Sizes, String> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [lo, hi, step] => {
            let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
            let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
            if step == 0 || lo > hi {
                return Err(format!("empty range `{s}`"));
            }
            Ok(Sizes((lo..=hi).step_by(step).collect()))
        }
        [_] => parse_list(s).map(Sizes),
        _ => Err(format!("expected lo:hi:step or a list, got `{s}`")),
    }
}

fn parse_window(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got `{s}`"))?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
    Ok((num(a)?, num(b)?))
}

/// `cubic` or `polynomial:c0,c1,...` (coefficients of `λ(R) = Σ c_k R^k`).
fn parse_lambda(s: &str) -> std::result::Result<LambdaKind, String> {
    match s.split_once(':') {
        None if s == "cubic" => Ok(LambdaKind::Cubic),
        Some(("polynomial", coeffs)) => Ok(LambdaKind::Polynomial(parse_list(coeffs)?)),
        _ => Err(format!("expected `cubic` or `polynomial:c0,c1,...`, got `{s}`")),
    }
}

fn parse_mean(s: &str) -> std::result::Result<MeanMode, String> {
    match s {
        "remove" => Ok(MeanMode::Remove),
        "keep" => Ok(MeanMode::Keep),
        _ => Err(format!("expected `remove` or `keep`, got `{s}`")),
    }
}

#[derive(Debug, Clone, Default, Args)]
struct Flags {
    /// JSON config or a manifest from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Steady family: trivial, doubly-periodic:N:M, traveling:N, rotating.
    #[arg(long)]
    family: Option<String>,
    /// Coupling strength, or a comma list for scans.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    /// Half width: indices run over -K+1..K.
    #[arg(long = "K", visible_alias = "k")]
    half_width: Option<usize>,
    #[arg(long)]
    boundary: Option<Boundary>,
    #[arg(long, value_parser = parse_lambda)]
    lambda: Option<LambdaKind>,
    #[arg(long)]
    omega0: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long = "t-max")]
    t_max: Option<f64>,
    #[arg(long = "tau-max")]
    tau_max: Option<f64>,
    /// Norm exponents, e.g. `1,2,inf`.
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<NormOrder>>,
    /// Grid sides, `lo:hi:step` or a list.
    #[arg(long = "N", value_parser = parse_sizes)]
    n_list: Option<Sizes>,
    /// laplacian, l-alpha or l-tilde.
    #[arg(long)]
    operator: Option<String>,
    #[arg(long)]
    d1: Option<f64>,
    #[arg(long)]
    d2: Option<f64>,
    /// Initial data for the semigroup: delta or bump.
    #[arg(long)]
    init: Option<String>,
    /// Fit window `lo:hi`.
    #[arg(long, value_parser = parse_window)]
    window: Option<(f64, f64)>,
    #[arg(long)]
    samples: Option<usize>,
    /// Constant phase mode: remove or keep.
    #[arg(long, value_parser = parse_mean)]
    mean: Option<MeanMode>,
    /// Integration variables: polar or complex.
    #[arg(long)]
    mode: Option<String>,
    /// Amplitude of uniform phase noise added before integrating.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    snapshot: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long = "alpha-max")]
    alpha_max: Option<f64>,
}

impl Flags {
    fn to_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            family: self.family.clone(),
            alpha: self.alpha.clone().map(OneOrMany::Many),
            half_width: self.half_width,
            boundary: self.boundary,
            lambda: self.lambda.clone(),
            omega0: self.omega0,
            delta: self.delta,
            eps: self.eps,
            t_max: self.t_max,
            tau_max: self.tau_max,
            p: self.p.clone().map(OneOrMany::Many),
            n_list: self.n_list.clone().map(|s| OneOrMany::Many(s.0)),
            operator: self.operator.clone(),
            d1: self.d1,
            d2: self.d2,
            init: self.init.clone(),
            window: self.window,
            samples: self.samples,
            mean: self.mean,
            mode: self.mode.clone(),
            noise: self.noise,
            snapshot: self.snapshot.clone(),
            out: self.out.clone(),
            seed: self.seed,
            tol: self.tol,
            alpha_max: self.alpha_max,
        }
    }
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 for invalid input, 2 for numerical failure.
pub fn cli_dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn run(command: &Command) -> Result<i32> {
    let name = command.name();
    let flags = command.flags();
    let base = match &flags.config {
        Some(path) => {
            let (cfg, from) = load_config(path)?;
            if let Some(from) = from.filter(|c| c != name) {
                return Err(Error::Config(format!("manifest was written by `{from}`, not `{name}`")));
            }
            cfg
        }
        None => ExperimentConfig::default(),
    };
    let cfg = base.overridden_by(flags.to_config());
    match command {
        Command::Steady(_) => cmd_steady(cfg),
        Command::Simulate(_) => cmd_simulate(cfg),
        Command::Semigroup(_) => cmd_semigroup(cfg),
        Command::ScanHyp4(_) => cmd_scan(cfg),
        Command::Attract(_) => cmd_attract(cfg),
        Command::PhaseDecay(_) => cmd_phase_decay(cfg),
        Command::CheckRotation(_) => cmd_check_rotation(cfg),
    }
}

/// Names of the keys set in `cfg`.
fn set_keys(cfg: &ExperimentConfig) -> Vec<String> {
    match serde_json::to_value(cfg) {
        Ok(Value::Object(map)) => map.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

/// Rejects keys the command does not read.
fn check_keys(cfg: &ExperimentConfig, command: &str, allowed: &[&str]) -> Result<()> {
    let stray: Vec<String> = set_keys(cfg).into_iter().filter(|k| !allowed.contains(&k.as_str())).collect();
    if stray.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!("`{command}` does not use: {}", stray.join(", "))))
    }
}

fn require(name: &str, ok: bool, value: impl std::fmt::Display) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("invalid {name}: {value}")))
    }
}

fn single_alpha(cfg: &mut ExperimentConfig, default: f64) -> Result<f64> {
    let list = cfg.alpha.get_or_insert(OneOrMany::One(default)).to_vec();
    match list.as_slice() {
        [a] => {
            require("alpha", a.is_finite() && *a >= 0.0, a)?;
            cfg.alpha = Some(OneOrMany::One(*a));
            Ok(*a)
        }
        _ => Err(Error::Config("this command takes a single alpha".into())),
    }
}

fn positive(name: &str, slot: &mut Option<f64>, default: f64) -> Result<f64> {
    let v = *slot.get_or_insert(default);
    require(name, v.is_finite() && v > 0.0, v)?;
    Ok(v)
}

fn out_path(cfg: &mut ExperimentConfig, default: &str) -> PathBuf {
    cfg.out.get_or_insert_with(|| PathBuf::from(default)).clone()
}

fn lambda_of(cfg: &mut ExperimentConfig) -> Result<LambdaSpec> {
    LambdaSpec::from_kind(cfg.lambda.get_or_insert(LambdaKind::Cubic))
}

fn params_of(cfg: &mut ExperimentConfig, alpha: f64, grid: LatticeGrid, omega0_default: f64) -> Result<ModelParams> {
    let lambda = lambda_of(cfg)?;
    // Left unset in the config when defaulted: not every command accepts the key.
    let omega0 = cfg.omega0.unwrap_or(omega0_default);
    require("omega0", omega0.is_finite(), omega0)?;
    let omega = OmegaSpec::constant(omega0, &lambda);
    ModelParams::new(alpha, lambda, omega, grid)
}

fn build_family(family: Family, params: &ModelParams) -> Result<SteadyState> {
    match family {
        Family::Trivial => Ok(make_trivial(params)),
        Family::DoublyPeriodic { n, m } => make_doubly_periodic(params, n, m),
        Family::TravelingWave { n } => make_traveling_wave(params, n),
        Family::RotatingWave => solve_rotating_wave(params, None, &RotatingWaveOptions::default()),
        Family::Loaded => Err(Error::Config("`loaded` states come from --snapshot".into())),
    }
}

/// Steady state from `--snapshot` or from `--family` and grid flags.
fn steady_input(
    cfg: &mut ExperimentConfig,
    alpha_default: f64,
    k_default: usize,
    boundary_default: Boundary,
    omega0_default: f64,
) -> Result<(ModelParams, SteadyState)> {
    if let Some(path) = cfg.snapshot.clone() {
        require("keys", cfg.family.is_none() && cfg.half_width.is_none() && cfg.boundary.is_none(), "--snapshot fixes family, K and boundary")?;
        let snap = load_snapshot(&path)?;
        let alpha = single_alpha(cfg, snap.alpha)?;
        let params = params_of(cfg, alpha, snap.field.grid, omega0_default)?;
        let state = snap.into_steady(&params)?;
        return Ok((params, state));
    }
    let family: Family = cfg.family.get_or_insert_with(|| "trivial".into()).parse()?;
    let alpha = single_alpha(cfg, alpha_default)?;
    let k = *cfg.half_width.get_or_insert(k_default);
    let boundary = cfg.boundary.unwrap_or(boundary_default);
    let grid = LatticeGrid::new(k, boundary)?;
    let params = params_of(cfg, alpha, grid, omega0_default)?;
    let state = build_family(family, &params)?;
    Ok((params, state))
}

/// Writes the table, the summary and the manifest.
fn emit(command: &str, cfg: ExperimentConfig, out: &Path, table: &str, summary: Value) -> Result<()> {
    write_text(out, table)?;
    finish(command, cfg, out, summary)
}

fn finish(command: &str, cfg: ExperimentConfig, out: &Path, summary: Value) -> Result<()> {
    write_text(&sibling(out, "summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    let manifest = Manifest::new(command, cfg);
    write_text(&sibling(out, "manifest.json"), &serde_json::to_string_pretty(&manifest)?)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn fit_json(fit: &DecayFit) -> Value {
    json!({
        "rate": fit.rate,
        "prefactor": fit.prefactor,
        "window": [fit.window.0, fit.window.1],
        "r_squared": fit.r_squared,
        "samples": fit.samples,
    })
}

fn check_json(c: &ExponentCheck) -> Value {
    json!({
        "p": c.p,
        "fit": c.fit.as_ref().map(fit_json),
        "error": c.error,
        "predicted": c.predicted,
        "tolerance": c.tolerance,
        "passed": c.passed,
    })
}

const STEADY_KEYS: &[&str] = &["family", "alpha", "K", "boundary", "lambda", "omega0", "tol", "out"];

fn cmd_steady(mut cfg: ExperimentConfig) -> Result<i32> {
    check_keys(&cfg, "steady", STEADY_KEYS)?;
    let tol = positive("tol", &mut cfg.tol, 1e-9)?;
    let out = out_path(&mut cfg, "steady.csv");
    let (params, state) = steady_input(&mut cfg, 0.0, 50, Boundary::Neumann, 0.0)?;
    let report = validate_steady(&state, &params, tol)?;
    save_snapshot(&out, &Snapshot::of(&state))?;
    println!("family {} alpha {} residual {:.3e}", state.family, state.alpha, report.residual_inf);
    for (name, ok) in &report.checks {
        println!("  {name}: {}", if *ok { "ok" } else { "FAILED" });
    }
    let summary = json!({
        "family": state.family.to_string(),
        "alpha": state.alpha,
        "residual_inf": report.residual_inf,
        "interior_residual_inf": report.interior_residual_inf,
        "boundary_residual_inf": report.boundary_residual_inf,
        "max_amplitude_deviation": report.max_amplitude_deviation,
        "lipschitz_ratio": report.lipschitz_ratio,
        "checks": report.checks.iter().map(|(n, ok)| json!({"check": n, "passed": ok})).collect::<Vec<_>>(),
    });
    finish("steady", cfg, &out, summary)?;
    // The residual is the numerical contract; other checks are diagnostics.
    Ok(if report.checks.first().is_some_and(|(_, ok)| *ok) { 0 } else { 2 })
}

const SIMULATE_KEYS: &[&str] =
    &["snapshot", "alpha", "lambda", "omega0", "mode", "t_max", "samples", "noise", "seed", "out"];

fn cmd_simulate(mut cfg: ExperimentConfig) -> Result<i32> {
    check_keys(&cfg, "simulate", SIMULATE_KEYS)?;
    let path = cfg.snapshot.clone().ok_or_else(|| Error::Config("simulate needs --snapshot".into()))?;
    let snap = load_snapshot(&path)?;
    let alpha = single_alpha(&mut cfg, snap.alpha)?;
    let params = params_of(&mut cfg, alpha, snap.field.grid, 0.0)?;
    let t_max = positive("t_max", &mut cfg.t_max, 10.0)?;
    let samples = *cfg.samples.get_or_insert(10);
    require("samples", samples >= 1, samples)?;
    let noise = *cfg.noise.get_or_insert(0.0);
    require("noise", noise.is_finite() && noise >= 0.0, noise)?;
    let seed = *cfg.seed.get_or_insert(0);
    let mode = cfg.mode.get_or_insert_with(|| "polar".into()).clone();
    let out = out_path(&mut cfg, "simulate.csv");

    let mut start = snap.field.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if noise > 0.0 {
        start.theta.iter_mut().for_each(|t| *t += noise * rng.gen_range(-1.0..1.0));
    }
    let times: Vec<f64> = (0..=samples).map(|q| t_max * q as f64 / samples as f64).collect();
    let dt = polar_time_step(&params).min(0.05 / params.omega.omega0(alpha).abs().max(1e-300));
    let traj = match mode.as_str() {
        "polar" => simulate_polar(&start, &params, &times, dt)?,
        "complex" => simulate_complex(&start.to_complex(), &params, &times, dt)?,
        other => return Err(Error::Config(format!("mode must be polar or complex, got `{other}`"))),
    };
    let mut rows = Vec::new();
    let mut last = None;
    for (t, z) in &traj {
        let (field, _) = crate::lattice::complex_to_polar(z);
        let rates = rhs_polar(&field, &params)?;
        let (lo, hi) = field.r.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(*r), hi.max(*r)));
        rows.push([fmt_f64(*t), fmt_f64(lo), fmt_f64(hi), fmt_f64(rates.dr.iter().fold(0.0f64, |m, v| m.max(v.abs())))]);
        last = Some(field);
    }
    let last = last.expect("at least one sample");
    let final_path = sibling(&out, "final.csv");
    save_snapshot(&final_path, &Snapshot { family: Family::Loaded, alpha, field: last })?;
    let summary = json!({"samples": rows.len(), "final_snapshot": final_path, "mode": mode, "seed": seed});
    emit("simulate", cfg, &out, &csv_text("t,r_min,r_max,radial_rate_inf", rows), summary)?;
    Ok(0)
}

const SEMIGROUP_KEYS: &[&str] = &[
    "operator", "d1", "d2", "snapshot", "family", "alpha", "K", "boundary", "lambda", "omega0", "init", "t_max",
    "samples", "p", "window", "out",
];

fn cmd_semigroup(mut cfg: ExperimentConfig) -> Result<i32> {
    check_keys(&cfg, "semigroup", SEMIGROUP_KEYS)?;
    let op_name = cfg.operator.get_or_insert_with(|| "laplacian".into()).clone();
    let op = match op_name.as_str() {
        "laplacian" => {
            require("keys", cfg.snapshot.is_none() && cfg.family.is_none(), "the plain Laplacian takes no steady state")?;
            let d1 = *cfg.d1.get_or_insert(1.0);
            let d2 = *cfg.d2.get_or_insert(1.0);
            require("d1/d2", d1 > 0.0 && d2 > 0.0 && d1.is_finite() && d2.is_finite(), format!("{d1}/{d2}"))?;
            let k = *cfg.half_width.get_or_insert(64);
            let boundary = *cfg.boundary.get_or_insert(Boundary::Neumann);
            crate::linear_ops::CouplingOperator::plain(LatticeGrid::new(k, boundary)?, d1, d2)
        }
        "l-alpha" | "l-tilde" => {
            require("keys", cfg.d1.is_none() && cfg.d2.is_none(), "d1/d2 only apply to the plain Laplacian")?;
            let (_, state) = steady_input(&mut cfg, 0.1, 32, Boundary::Neumann, 0.0)?;
            let kind = if op_name == "l-alpha" { OperatorKind::LAlpha } else { OperatorKind::LTilde };
            build_operator(&state, kind)
        }
        other => return Err(Error::Config(format!("unknown operator `{other}`"))),
    };
    let t_max = positive("t_max", &mut cfg.t_max, 200.0)?;
    let samples = *cfg.samples.get_or_insert(40);
    require("samples", samples >= 2, samples)?;
    let p_list = cfg
        .p
        .get_or_insert(OneOrMany::Many(vec![NormOrder::Finite(1.0), NormOrder::Finite(2.0), NormOrder::Infinity]))
        .to_vec();
    let window = *cfg.window.get_or_insert(crate::linear_ops::default_window(t_max));
    let init = cfg.init.get_or_insert_with(|| "delta".into()).clone();
    let out = out_path(&mut cfg, "semigroup.csv");
    let grid = *op.grid();
    let x0 = match init.as_str() {
        "delta" => delta_field(&grid, Site::new(0, 0))?,
        "bump" => gaussian_bump(&grid, (0.5, 0.5), crate::experiments::BUMP_FWHM, 1.0)?,
        other => return Err(Error::Config(format!("init must be delta or bump, got `{other}`"))),
    };
    let mut times = vec![0.0];
    times.extend(log_spaced(t_max / 1000.0, t_max, samples)?);
    let suite = measure_decay_suite(&op, &x0, &p_list, &times)?;
    let rows: Vec<NormRow> =
        suite.rows.iter().map(|r| NormRow { t: r.t, tau: r.t, p: r.p, lp: r.lp, qp: r.qp }).collect();
    let mut fits = Vec::new();
    for &p in &p_list {
        for (label, measure) in [("lp", Measure::Lp), ("qp", Measure::Qp)] {
            let fit = suite.fit(p, measure, Some(window));
            println!(
                "p={p} {label}: {}",
                match &fit {
                    Ok(f) => format!("exponent {:.4} (r2 {:.5})", f.rate, f.r_squared),
                    Err(e) => format!("no fit ({e})"),
                }
            );
            fits.push(json!({
                "p": p, "measure": label,
                "fit": fit.as_ref().ok().map(fit_json),
                "error": fit.as_ref().err().map(|e| e.to_string()),
            }));
        }
    }
    let summary = json!({"operator": op_name, "flagged_samples": suite.flagged.len(), "fits": fits});
    emit("semigroup", cfg, &out, &norm_table_text(&rows), summary)?;
    Ok(0)
}

const SCAN_KEYS: &[&str] = &["family", "alpha", "p", "N", "lambda", "omega0", "out"];

fn cmd_scan(mut cfg: ExperimentConfig) -> Result<i32> {
    check_keys(&cfg, "scan-hyp4", SCAN_KEYS)?;
    let family: Family = cfg.family.get_or_insert_with(|| "rotating".into()).parse()?;
    let alphas = cfg.alpha.get_or_insert(OneOrMany::Many(vec![0.1, 0.5, 1.0])).to_vec();
    for a in &alphas {
        require("alpha", a.is_finite() && *a >= 0.0, a)?;
    }
    let p_orders =
        cfg.p.get_or_insert(OneOrMany::Many(vec![NormOrder::Finite(1.0), NormOrder::Finite(5.0)])).to_vec();
    let p_list: Vec<f64> = p_orders
        .iter()
        .map(|p| match p {
            NormOrder::Finite(v) => Ok(*v),
            NormOrder::Infinity => Err(Error::Config("scan exponents must be finite".into())),
        })
        .collect::<Result<_>>()?;
    let n_list = cfg.n_list.get_or_insert(OneOrMany::Many((10..=200).step_by(10).collect())).to_vec();
    let out = out_path(&mut cfg, "scan.csv");
    let base = params_of(&mut cfg, 0.0, LatticeGrid::new(1, Boundary::Neumann)?, 0.0)?;
    let scan = scan_hypothesis4(family, &base, &alphas, &p_list, &n_list)?;
    let rows = scan
        .entries
        .iter()
        .map(|e| [fmt_f64(e.alpha), fmt_f64(e.p), e.n.to_string(), fmt_f64(e.m_p), fmt_f64(e.hyp4_sum)]);
    let table = csv_text("alpha,p,N,m_p,hyp4_sum", rows);
    let trends: Vec<Value> = scan
        .trends()
        .iter()
        .map(|t| {
            println!("alpha {} p {}: {} ({:+.4})", t.alpha, t.p, t.trend, t.relative_change);
            json!({
                "alpha": t.alpha, "p": t.p, "reference_N": t.reference_n, "largest_N": t.largest_n,
                "relative_change": t.relative_change, "trend": t.trend,
            })
        })
        .collect();
    let failures: Vec<Value> =
        scan.failures.iter().map(|(a, n, m)| json!({"alpha": a, "N": n, "error": m})).collect();
    let summary = json!({"family": family.to_string(), "trends": trends, "failures": failures});
    emit("scan-hyp4", cfg, &out, &table, summary)?;
    Ok(if scan.failures.is_empty() { 0 } else { 2 })
}

const ATTRACT_KEYS: &[&str] = &[
    "snapshot", "family", "alpha", "K", "boundary", "lambda", "delta", "t_max", "samples", "window", "alpha_max",
    "out",
];

fn cmd_attract(mut cfg: ExperimentConfig) -> Result<i32> {
    check_keys(&cfg, "attract", ATTRACT_KEYS)?;
    let delta = *cfg.delta.get_or_insert(0.01);
    require("delta", delta.is_finite() && delta >= 0.0, delta)?;
    let t_max = positive("t_max", &mut cfg.t_max, 10.0)?;
    let samples = *cfg.samples.get_or_insert(100);
    let window = *cfg.window.get_or_insert(crate::linear_ops::default_window(t_max));
    let alpha_max = positive("alpha_max", &mut cfg.alpha_max, ALPHA_MAX)?;
    let out = out_path(&mut cfg, "attract.csv");
    let (params, state) = steady_input(&mut cfg, 0.05, 32, Boundary::Neumann, 0.0)?;
    let opts = AttractionOptions {
        delta,
        t_max,
        samples,
        window: Some(window),
        manifold: ManifoldOptions { alpha_max, ..ManifoldOptions::default() },
        ..AttractionOptions::default()
    };
    let report = run_manifold_attraction(&state, &params, &opts)?;
    match &report.fit {
        Some(f) => println!("beta {:.4} (predicted {}), r2 {:.5}", f.rate, report.predicted_rate, f.r_squared),
        None => println!("no fit: {}", report.fit_error.as_deref().unwrap_or("")),
    }
    let table = csv_text("t,rho_l1", report.series.iter().map(|(t, v)| [fmt_f64(*t), fmt_f64(*v)]));
    let summary = json!({
        "family": report.family.to_string(), "alpha": report.alpha, "delta": report.delta,
        "fit": report.fit.as_ref().map(fit_json), "fit_error": report.fit_error,
        "predicted_rate": report.predicted_rate, "max_deviation": report.max_deviation, "notes": report.notes,
    });
    emit("attract", cfg, &out, &table, summary)?;
    Ok(0)
}

const PHASE_KEYS: &[&str] = &[
    "snapshot", "family", "alpha", "K", "boundary", "lambda", "eps", "tau_max", "p", "mean", "window", "samples",
    "alpha_max", "out",
];

fn cmd_phase_decay(mut cfg: ExperimentConfig) -> Result<i32> {
    check_keys(&cfg, "phase-decay", PHASE_KEYS)?;
    let defaults = PhaseDecayOptions::default();
    let eps = positive("eps", &mut cfg.eps, defaults.eps)?;
    let tau_max = positive("tau_max", &mut cfg.tau_max, defaults.tau_max)?;
    let p_list = cfg.p.get_or_insert(OneOrMany::Many(defaults.p_list.clone())).to_vec();
    let mean_mode = *cfg.mean.get_or_insert(MeanMode::Remove);
    let window = *cfg.window.get_or_insert(crate::linear_ops::default_window(tau_max));
    let samples = *cfg.samples.get_or_insert(defaults.tau_samples);
    let alpha_max = positive("alpha_max", &mut cfg.alpha_max, ALPHA_MAX)?;
    let out = out_path(&mut cfg, "phase-decay.csv");
    let (params, state) = steady_input(&mut cfg, 0.1, 64, Boundary::Neumann, 0.0)?;
    let opts = PhaseDecayOptions {
        eps,
        tau_max,
        p_list,
        mean_mode,
        window: Some(window),
        tau_samples: samples,
        manifold: ManifoldOptions { alpha_max, ..ManifoldOptions::default() },
        ..defaults
    };
    let report = run_phase_decay(&state, &params, &opts)?;
    for c in report.lp_checks.iter().chain(&report.qp_checks) {
        let which = if report.lp_checks.contains(c) { "lp" } else { "qp" };
        match &c.fit {
            Some(f) => println!(
                "p={} {which}: exponent {:.4} predicted {:.4} (+/- {}) {}",
                c.p,
                f.rate,
                c.predicted,
                c.tolerance,
                if c.passed { "ok" } else { "off" }
            ),
            None => println!("p={} {which}: no fit ({})", c.p, c.error.as_deref().unwrap_or("")),
        }
    }
    let rows: Vec<NormRow> = report
        .rows
        .iter()
        .map(|r| NormRow { t: r.t, tau: r.tau, p: r.p, lp: r.lp, qp: r.qp })
        .collect();
    let summary = json!({
        "family": report.family.to_string(), "alpha": report.alpha, "eps": report.eps,
        "window": [report.window.0, report.window.1], "q_star": report.q_star,
        "lp": report.lp_checks.iter().map(check_json).collect::<Vec<_>>(),
        "qp": report.qp_checks.iter().map(check_json).collect::<Vec<_>>(),
        "rho_fit": report.rho_fit.as_ref().map(fit_json),
        "flagged_samples": report.flagged_taus.len(), "notes": report.notes,
    });
    emit("phase-decay", cfg, &out, &norm_table_text(&rows), summary)?;
    Ok(0)
}

const ROTATION_KEYS: &[&str] =
    &["snapshot", "family", "alpha", "K", "lambda", "omega0", "t_max", "samples", "mode", "out"];

fn cmd_check_rotation(mut cfg: ExperimentConfig) -> Result<i32> {
    check_keys(&cfg, "check-rotation", ROTATION_KEYS)?;
    if cfg.snapshot.is_none() {
        cfg.family.get_or_insert_with(|| "rotating".into());
    }
    let samples = *cfg.samples.get_or_insert(8);
    require("samples", samples >= 1, samples)?;
    let mode = cfg.mode.get_or_insert_with(|| "complex".into()).clone();
    let out = out_path(&mut cfg, "rotation.csv");
    let (params, state) = steady_input(&mut cfg, 0.1, 16, Boundary::Neumann, 1.0)?;
    let w0 = params.omega.omega0(params.alpha);
    let period = if w0 != 0.0 { TAU / w0.abs() } else { 1.0 };
    let t_max = positive("t_max", &mut cfg.t_max, period)?;
    let mut times: Vec<f64> = (0..=samples).map(|q| t_max * q as f64 / samples as f64).collect();
    if w0 != 0.0 {
        let quarter = period / 4.0;
        let shifted: Vec<f64> = times.iter().map(|t| t + quarter).collect();
        times.extend(shifted);
        times.sort_by(f64::total_cmp);
        times.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    }
    let dt = polar_time_step(&params).min(if w0 != 0.0 { 0.01 / w0.abs() } else { f64::INFINITY });
    let traj = match mode.as_str() {
        "complex" => simulate_complex(&state.field.to_complex(), &params, &times, dt)?,
        "polar" => simulate_polar(&state.field, &params, &times, dt)?,
        other => return Err(Error::Config(format!("mode must be polar or complex, got `{other}`"))),
    };
    let report = check_rotational_identity(&traj, &params)?;
    let mut rows = Vec::new();
    for sample in &traj {
        let one = check_rotational_identity(std::slice::from_ref(sample), &params)?;
        rows.push([fmt_f64(sample.0), fmt_f64(one.spatial_mismatch)]);
    }
    println!(
        "spatial mismatch {:.3e}, temporal mismatch {}",
        report.spatial_mismatch,
        report.temporal_mismatch.map_or("n/a".to_string(), |v| format!("{v:.3e}"))
    );
    let summary = json!({
        "family": state.family.to_string(), "alpha": params.alpha, "omega0": w0,
        "spatial_mismatch": report.spatial_mismatch, "temporal_mismatch": report.temporal_mismatch,
        "quarter_period": report.quarter_period, "pairs_checked": report.pairs_checked,
    });
    emit("check-rotation", cfg, &out, &csv_text("t,spatial_mismatch", rows), summary)?;
    Ok(0)
}
