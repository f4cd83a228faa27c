use lambda_omega::experiments::{
    run_phase_decay, scan_hypothesis4, MeanMode, PhaseDecayOptions, PhaseDecayReport, PhaseInit,
};
use lambda_omega::io::{read_snapshot, write_snapshot, Snapshot};
use lambda_omega::lattice::{delta_field, laplacian};
use lambda_omega::model::{rhs_complex, rhs_polar};
use lambda_omega::norms::{lp_norm, qp_seminorm, summed_gradient_norm};
use lambda_omega::steady::make_trivial;
use lambda_omega::{Boundary, ComplexField, Family, LatticeGrid, ModelParams, NormOrder, PolarField, Site};
use proptest::prelude::*;

const SLACK: f64 = 1e-12;

fn orders() -> Vec<NormOrder> {
    [1.0, 1.5, 2.0, 3.0, 4.5, 8.0].into_iter().map(NormOrder::Finite).chain([NormOrder::Infinity]).collect()
}

fn grid(side: usize, periodic: bool) -> LatticeGrid {
    LatticeGrid::with_side(side, if periodic { Boundary::Periodic } else { Boundary::Neumann }).unwrap()
}

fn field(side: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, side * side)
}

fn leq(a: f64, b: f64) -> bool {
    a <= b + SLACK * b.abs().max(1.0)
}

fn check_norm_lemmas(x: &[f64], g: &LatticeGrid) -> Result<(), TestCaseError> {
    let ps = orders();
    for (q, &p) in ps.iter().enumerate() {
        let qp = qp_seminorm(x, g, p).unwrap();
        let lp = lp_norm(x, p).unwrap();
        prop_assert!(leq(qp, 8.0 * lp), "Q_{p} = {qp} > 8 |x|_{p} = {}", 8.0 * lp);
        if let NormOrder::Finite(_) = p {
            let summed = summed_gradient_norm(x, g, p).unwrap();
            prop_assert!(leq(summed, 4.0 * qp), "summed gradient {summed} > 4 Q_{p} = {}", 4.0 * qp);
        }
        for &p2 in &ps[q..] {
            let q2 = qp_seminorm(x, g, p2).unwrap();
            // The sup-order seminorm sums four differences per cell, so it is
            // only dominated up to that factor.
            let factor = if p2 == NormOrder::Infinity { 4.0 } else { 1.0 };
            prop_assert!(leq(q2, factor * qp), "Q_{p2} = {q2} > {factor} Q_{p} = {qp}");
            let l2 = lp_norm(x, p2).unwrap();
            prop_assert!(leq(l2, lp), "|x|_{p2} = {l2} > |x|_{p} = {lp}");
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn norm_lemmas_hold_on_16x16(x in field(16), periodic in any::<bool>()) {
        check_norm_lemmas(&x, &grid(16, periodic))?;
    }

    #[test]
    fn norm_lemmas_hold_on_64x64(x in field(64), periodic in any::<bool>()) {
        check_norm_lemmas(&x, &grid(64, periodic))?;
    }

    #[test]
    fn qp_ignores_constant_shifts(x in field(12), c in -5.0f64..5.0) {
        let g = grid(12, false);
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        for p in orders() {
            let a = qp_seminorm(&x, &g, p).unwrap();
            let b = qp_seminorm(&shifted, &g, p).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
    }

    #[test]
    fn laplacian_sums_to_zero(x in field(20), periodic in any::<bool>()) {
        let g = grid(20, periodic);
        let total: f64 = laplacian(&g, &x).iter().sum();
        let scale: f64 = x.iter().map(|v| v.abs()).sum();
        prop_assert!(total.abs() <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn polar_rates_are_gauge_invariant(
        r in prop::collection::vec(0.6f64..1.4, 64),
        theta in prop::collection::vec(-3.0f64..3.0, 64),
        c in -3.0f64..3.0,
        alpha in 0.0f64..1.5,
    ) {
        let g = grid(8, false);
        let params = ModelParams::cubic(alpha, 0.0, g).unwrap();
        let base = PolarField::new(g, r.clone(), theta.clone()).unwrap();
        let turned = PolarField::new(g, r, theta.iter().map(|t| t + c).collect()).unwrap();
        let a = rhs_polar(&base, &params).unwrap();
        let b = rhs_polar(&turned, &params).unwrap();
        for k in 0..64 {
            prop_assert!((a.dr[k] - b.dr[k]).abs() <= 1e-12);
            prop_assert!((a.dtheta[k] - b.dtheta[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn complex_rates_commute_with_phase_rotation(
        re in prop::collection::vec(-1.2f64..1.2, 36),
        im in prop::collection::vec(-1.2f64..1.2, 36),
        c in -3.0f64..3.0,
        alpha in 0.0f64..1.0,
        omega0 in -2.0f64..2.0,
    ) {
        let g = grid(6, true);
        let params = ModelParams::cubic(alpha, omega0, g).unwrap();
        let (s, co) = c.sin_cos();
        let z = ComplexField::new(g, re.clone(), im.clone()).unwrap();
        let w = ComplexField::new(
            g,
            re.iter().zip(&im).map(|(x, y)| co * x - s * y).collect(),
            re.iter().zip(&im).map(|(x, y)| s * x + co * y).collect(),
        ).unwrap();
        let fz = rhs_complex(&z, &params).unwrap();
        let fw = rhs_complex(&w, &params).unwrap();
        for k in 0..36 {
            prop_assert!((co * fz.re[k] - s * fz.im[k] - fw.re[k]).abs() <= 1e-12);
            prop_assert!((s * fz.re[k] + co * fz.im[k] - fw.im[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn snapshots_round_trip_bitwise(
        r in prop::collection::vec(1e-3f64..10.0, 16),
        theta in prop::collection::vec(-4.0f64..4.0, 16),
        alpha in 0.0f64..2.0,
    ) {
        let g = grid(4, false);
        let snap = Snapshot { family: Family::Loaded, alpha, field: PolarField::new(g, r, theta).unwrap() };
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &snap).unwrap();
        let back = read_snapshot(buf.as_slice()).unwrap();
        prop_assert_eq!(back.alpha.to_bits(), alpha.to_bits());
        for k in 0..16 {
            prop_assert_eq!(back.field.r[k].to_bits(), snap.field.r[k].to_bits());
            prop_assert_eq!(back.field.theta[k].to_bits(), snap.field.theta[k].to_bits());
        }
    }
}

#[test]
fn delta_witnesses_are_exact() {
    for side in [16, 64] {
        for b in [Boundary::Neumann, Boundary::Periodic] {
            let g = LatticeGrid::with_side(side, b).unwrap();
            let d = delta_field(&g, Site::new(0, 0)).unwrap();
            assert_eq!(qp_seminorm(&d, &g, NormOrder::Finite(1.0)).unwrap(), 8.0);
            assert_eq!(qp_seminorm(&d, &g, NormOrder::Infinity).unwrap(), 4.0);
            assert_eq!(lp_norm(&d, NormOrder::Finite(1.0)).unwrap(), 1.0);
        }
    }
}

#[test]
fn sup_seminorm_exceeds_finite_orders_on_a_delta() {
    let g = LatticeGrid::with_side(16, Boundary::Neumann).unwrap();
    let d = delta_field(&g, Site::new(0, 0)).unwrap();
    let q2 = qp_seminorm(&d, &g, NormOrder::Finite(2.0)).unwrap();
    assert_eq!(q2, 8f64.sqrt());
    assert!(qp_seminorm(&d, &g, NormOrder::Infinity).unwrap() > q2);
}

fn small_decay(alpha: f64, eps: f64, shift: f64) -> PhaseDecayReport {
    let g = LatticeGrid::with_side(40, Boundary::Periodic).unwrap();
    let params = ModelParams::cubic(alpha, 0.0, g).unwrap();
    let steady = make_trivial(&params);
    let opts = PhaseDecayOptions {
        eps,
        tau_max: 8.0,
        tau_samples: 40,
        window: Some((1.0, 8.0)),
        phase_shift: shift,
        init: PhaseInit::Bump,
        mean_mode: MeanMode::Remove,
        p_list: vec![NormOrder::Finite(2.0), NormOrder::Infinity],
        ..PhaseDecayOptions::default()
    };
    run_phase_decay(&steady, &params, &opts).unwrap()
}

#[test]
fn phase_decay_is_gauge_neutral() {
    let a = small_decay(0.1, 0.05, 0.0);
    let b = small_decay(0.1, 0.05, 0.7);
    for (x, y) in a.lp_checks.iter().chain(&a.qp_checks).zip(b.lp_checks.iter().chain(&b.qp_checks)) {
        let (fx, fy) = (x.fit.unwrap(), y.fit.unwrap());
        assert!((fx.rate - fy.rate).abs() <= 1e-10, "{} vs {}", fx.rate, fy.rate);
    }
}

#[test]
fn phase_exponents_depend_on_slow_time_only() {
    let a = small_decay(0.1, 0.05, 0.0);
    let b = small_decay(0.05, 0.05, 0.0);
    for (x, y) in a.lp_checks.iter().zip(&b.lp_checks) {
        let (fx, fy) = (x.fit.unwrap(), y.fit.unwrap());
        assert!((fx.rate - fy.rate).abs() <= 0.15, "{} vs {}", fx.rate, fy.rate);
    }
}

#[test]
fn phase_prefactor_is_linear_in_eps() {
    let a = small_decay(0.1, 0.05, 0.0);
    let b = small_decay(0.1, 0.025, 0.0);
    for (x, y) in a.lp_checks.iter().zip(&b.lp_checks) {
        let ratio = y.fit.unwrap().prefactor / x.fit.unwrap().prefactor;
        assert!((ratio - 0.5).abs() <= 0.05, "prefactor ratio {ratio}");
    }
}

#[test]
fn localisation_sums_grow_with_the_grid() {
    let base = ModelParams::cubic(0.0, 0.0, LatticeGrid::new(1, Boundary::Neumann).unwrap()).unwrap();
    let sizes = [10, 14, 18, 22];
    let scan = scan_hypothesis4(Family::RotatingWave, &base, &[0.3], &[1.0, 2.0], &sizes).unwrap();
    assert!(scan.failures.is_empty());
    for p in [1.0, 2.0] {
        let vals: Vec<(f64, f64)> = sizes
            .iter()
            .map(|&n| {
                let e = scan.value(0.3, p, n).unwrap();
                (e.m_p, e.hyp4_sum)
            })
            .collect();
        for w in vals.windows(2) {
            assert!(w[0].0 >= 0.0 && w[0].0 <= w[1].0 && w[0].1 <= w[1].1, "{vals:?}");
        }
    }
}
