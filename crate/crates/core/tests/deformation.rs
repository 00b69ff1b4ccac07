//! Deformation solves on the default torus: operator invariants, contraction, norm estimates,
//! the nonlinear obstruction section against its linearization, and grid convergence.

use obg_core::deformation::{DeformationOptions, ObstructionSolver, Side};
use obg_core::flowline::{Flowline, FlowlineOptions, FrontBack, LeftRight, TorusCatalog};
use obg_core::obg_zero::GluingProfile;
use obg_core::{MorseSystem, V2};

fn setup() -> (MorseSystem, TorusCatalog) {
    let s = MorseSystem::default_torus();
    let cat = TorusCatalog::build(&s, &FlowlineOptions::default()).unwrap();
    (s, cat)
}

fn triple(cat: &TorusCatalog, minus: FrontBack, plus: FrontBack) -> (&Flowline, &Flowline, &Flowline) {
    (cat.minus(minus), cat.zero(LeftRight::Right), cat.plus(plus))
}

fn solver<'a>(s: &'a MorseSystem, t: (&'a Flowline, &'a Flowline, &'a Flowline)) -> ObstructionSolver<'a, MorseSystem> {
    ObstructionSolver::new(s, t.0, t.1, t.2, DeformationOptions::default()).unwrap()
}

#[test]
fn operators_have_small_kernel_and_cokernel_residuals() {
    let (s, cat) = setup();
    let sol = solver(&s, triple(&cat, FrontBack::Front, FrontBack::Front));
    let sys = sol.system(&GluingProfile::new(12.0, 12.0), 1).unwrap();
    for (i, op) in sys.ops.iter().enumerate() {
        assert!(op.kernel_residual < 1e-5, "kernel residual {} on piece {i}", op.kernel_residual);
        assert_eq!(op.cokernel.is_some(), i == 1);
    }
    assert!(sys.ops[1].cokernel_residual < 1e-5);
    assert!(sys.sigma_perturbation < 1e-3);
}

#[test]
fn cokernel_projection_is_orthogonal() {
    let (s, cat) = setup();
    let sol = solver(&s, triple(&cat, FrontBack::Front, FrontBack::Front));
    let sys = sol.system(&GluingProfile::new(10.0, 14.0), 1).unwrap();
    let op = &sys.ops[1];
    let g = &sys.grid;
    let v: Vec<V2> = g.nodes().iter().map(|&x| V2::new((0.3 * x).sin(), (-(x - 5.0).powi(2) / 9.0).exp())).collect();
    let w: Vec<V2> = g.nodes().iter().map(|&x| V2::new((-(x - 20.0).powi(2)).exp(), (0.1 * x).cos())).collect();
    let pv = op.project_cokernel(&v);
    let ppv = op.project_cokernel(&pv);
    let diff: Vec<V2> = pv.iter().zip(&ppv).map(|(a, b)| a - b).collect();
    assert!(g.l2(&diff) < 1e-10);
    let pw = op.project_cokernel(&w);
    let cw: Vec<V2> = w.iter().zip(&pw).map(|(a, b)| a - b).collect();
    assert!(g.dot(&pv, &cw).abs() < 1e-10);
}

#[test]
fn right_inverse_inverts_on_kernel_complement() {
    let (s, cat) = setup();
    let sol = solver(&s, triple(&cat, FrontBack::Front, FrontBack::Front));
    let sys = sol.system(&GluingProfile::new(12.0, 12.0), 1).unwrap();
    let g = &sys.grid;
    for op in &sys.ops {
        let c = op.shift;
        let mut psi: Vec<V2> = g
            .nodes()
            .iter()
            .map(|&x| {
                let b = (-(x - c - 0.5).powi(2)).exp();
                V2::new(b, 0.5 * b * (x - c))
            })
            .collect();
        let back = op.solve_box(&op.box_residual(&psi, None));
        op.project_kernel(&mut psi);
        let diff: Vec<V2> = back.iter().zip(&psi).map(|(a, b)| a - b).collect();
        assert!(g.l2(&diff) < 1e-6 * g.l2(&psi), "pinv D - 1 = {}", g.l2(&diff));
    }
}

#[test]
fn sampled_velocity_is_a_discrete_kernel_to_second_order() {
    let (s, cat) = setup();
    let sol = solver(&s, triple(&cat, FrontBack::Front, FrontBack::Front));
    let p = GluingProfile::new(12.0, 12.0);
    let r1 = sol.system(&p, 1).unwrap().kernel_consistency();
    let r2 = sol.system(&p, 2).unwrap().kernel_consistency();
    let r16 = sol.system(&p, 16).unwrap().kernel_consistency();
    for i in 0..3 {
        let ratio = r1[i] / r2[i];
        assert!((3.5..4.5).contains(&ratio), "piece {i}: ratio {ratio}");
        assert!(r16[i] < 1e-5, "piece {i}: residual {} at ds/16", r16[i]);
    }
}

#[test]
fn side_deformations_are_small_for_zero_psi0() {
    let (s, cat) = setup();
    let sol = solver(&s, triple(&cat, FrontBack::Front, FrontBack::Front));
    let sys = sol.system(&GluingProfile::new(20.0, 20.0), 1).unwrap();
    let zero = obg_core::deformation::SectionGrid::zeros(sys.grid, sys.ops[1].shift);
    for side in [Side::Minus, Side::Plus] {
        let (psi, _) = sys.solve_theta_pm(side, &zero).unwrap();
        assert!(psi.norm < 1e-5, "{side:?}: {}", psi.norm);
    }
}

#[test]
fn deformation_converges_contracts_and_tapers() {
    let (s, cat) = setup();
    let sol = solver(&s, triple(&cat, FrontBack::Front, FrontBack::Front));
    let sys = sol.system(&GluingProfile::new(20.0, 20.0), 1).unwrap();
    let d = sys.solve_theta0_image().unwrap();
    assert!(d.residual < 1e-9, "residual {}", d.residual);
    assert!(d.outer.contraction <= 0.5 && d.contraction_inner <= 0.5);
    for psi in [&d.psi_minus, &d.psi_0, &d.psi_plus] {
        assert!(psi.norm < 1e-2);
        assert!(psi.boundary_taper() < 1e-4 * psi.norm);
    }
    let c = sys.norm_constants(&d);
    assert!(c.left_decay_rate >= 1.0 - 1e-2, "decay rate {}", c.left_decay_rate);
}

#[test]
fn fitted_norm_constants_stay_bounded() {
    let (s, cat) = setup();
    let sol = solver(&s, triple(&cat, FrontBack::Front, FrontBack::Front));
    let mut rows = Vec::new();
    for r0 in [16.0, 20.0, 24.0, 28.0] {
        let sys = sol.system(&GluingProfile::new(r0, r0), 1).unwrap();
        let d = sys.solve_theta0_image().unwrap();
        let c = sys.norm_constants(&d);
        eprintln!("R0 = {r0}: {c:?}");
        rows.push([c.c_minus, c.c_plus, c.c_zero]);
    }
    for j in 0..3 {
        let first = rows[0][j];
        assert!(rows.iter().all(|r| r[j].is_finite() && r[j] > 0.0 && r[j] <= 1.5 * first), "column {j}: {rows:?}");
    }
}

#[test]
fn section_is_close_to_its_linearization() {
    let (s, cat) = setup();
    let sol = solver(&s, triple(&cat, FrontBack::Front, FrontBack::Front));
    for (a, b) in [(10.0, 10.0), (9.0, 11.0), (13.0, 11.0), (11.0, 13.0), (12.0, 12.0)] {
        let o = sol.obstruction_section(&GluingProfile::new(a, b)).unwrap();
        let budget = 0.2 * (o.s00_terms.0.abs() + o.s00_terms.1.abs());
        eprintln!("({a}, {b}): s = {:.6e}, s0 = {:.6e}, s00 = {:.6e}", o.s, o.s0, o.s00);
        assert!((o.s - o.s0).abs() <= budget);
        assert!((o.diagnostics.remainder - (o.s - o.s0)).abs() < 1e-18);
    }
}

#[test]
fn slice_zero_of_section_tracks_linearization() {
    let (s, cat) = setup();
    let sol = solver(&s, triple(&cat, FrontBack::Front, FrontBack::Front));
    let p = GluingProfile::new(12.0, 12.0);
    let z = sol.slice_zero(&p, 24.0, 6.0).unwrap().expect("a zero on the slice");
    assert!((z.r0_minus - 12.0).abs() < 0.5, "zero at {}", z.r0_minus);
    let probe = sol.c1_probe(&p.with_r0(z.r0_minus, 24.0 - z.r0_minus), 1e-3).unwrap();
    assert!(probe.sign_agrees);
    assert!(probe.relative_deviation < 0.3);
}

#[test]
fn opposite_sign_triple_has_no_zero() {
    let (s, cat) = setup();
    let sol = solver(&s, triple(&cat, FrontBack::Front, FrontBack::Back));
    let v = sol.slice_values(&GluingProfile::new(12.0, 12.0), 24.0, 6.0, 9).unwrap();
    let sign = v[0].1.signum();
    assert!(v.iter().all(|(_, x)| x.signum() == sign && x.abs() > 0.0), "{v:?}");
}

#[test]
fn c1_probe_matches_closed_form_and_budget() {
    let (s, cat) = setup();
    let sol = solver(&s, triple(&cat, FrontBack::Front, FrontBack::Front));
    for r0m in [9.0, 12.0, 15.0] {
        let p = sol.c1_probe(&GluingProfile::new(r0m, 24.0 - r0m), 1e-3).unwrap();
        eprintln!("{r0m}: {p:?}");
        assert!((p.ds00 - p.ds00_closed).abs() < 1e-6 * p.ds00_closed.abs());
        assert!(p.sign_agrees);
        assert!(p.relative_deviation < 0.3);
    }
}

#[test]
fn grid_refinement_is_second_order() {
    let (s, cat) = setup();
    let sol = solver(&s, triple(&cat, FrontBack::Front, FrontBack::Front));
    for (a, b) in [(8.0, 12.0), (14.0, 10.0)] {
        let r = sol.richardson(&GluingProfile::new(a, b)).unwrap();
        assert!((3.5..=4.5).contains(&r.ratio), "({a}, {b}): {r:?}");
    }
}
