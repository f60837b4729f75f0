//! Property tests of the structural invariants: duality of the discrete
//! calculus, symmetry and positivity of the wall-aware operator, inverse
//! round trips, the mass split, symmetries of the energy, and conservation
//! plus dissipation of the implicit step, all over proptest-generated data.

use chdbc::elliptic::{mass_decompose, EllipticSolver, MassTriple, MeanZeroBulk};
use chdbc::energy::{fh_potential, total_energy, AdmissiblePhase, BcMode, ModelParams};
use chdbc::grid::{
    boundary_normal_derivative, divergence, edge_inner_x, edge_inner_y, face_diff_y_core,
    face_ops_x, face_ops_y, inner_gamma, inner_omega, integral_gamma, integral_omega,
    laplacian_5pt, laplacian_gamma, BoundaryField, BulkField, EdgeFieldX, EdgeFieldY, GridParams,
    Side,
};
use chdbc::harness::restrict_fine_to_coarse;
use chdbc::stepper::{scheme_residual, SolverConfig, Stepper};
use proptest::prelude::*;

fn grid() -> impl Strategy<Value = GridParams> {
    prop_oneof![Just(4usize), Just(8usize)].prop_map(|n| GridParams::new(n).unwrap())
}

fn bulk_on(g: GridParams, lim: f64) -> impl Strategy<Value = BulkField> {
    let n = g.n();
    prop::collection::vec(-lim..lim, (n + 1) * n)
        .prop_map(move |v| BulkField::from_fn(g, |i, j| v[j * n + i]))
}

fn boundary_on(g: GridParams, lim: f64) -> impl Strategy<Value = BoundaryField> {
    let n = g.n();
    prop::collection::vec(-lim..lim, n).prop_map(move |v| BoundaryField::from_fn(g, |i| v[i]))
}

fn edge_x_on(g: GridParams) -> impl Strategy<Value = EdgeFieldX> {
    let n = g.n();
    prop::collection::vec(-1.0..1.0f64, (n + 1) * n).prop_map(move |v| {
        let mut e = EdgeFieldX::zeros(g);
        for j in 0..=n {
            for i in 0..n {
                e.set(i, j, v[j * n + i]);
            }
        }
        e
    })
}

fn edge_y_extended_on(g: GridParams) -> impl Strategy<Value = EdgeFieldY> {
    let n = g.n();
    prop::collection::vec(-1.0..1.0f64, (n + 2) * n).prop_map(move |v| {
        let mut e = EdgeFieldY::zeros_extended(g);
        for j in -1..=n as isize {
            for i in 0..n {
                e.set(i, j, v[(j + 1) as usize * n + i]);
            }
        }
        e
    })
}

/// Mean of the two edge values straddling a wall row.
fn wall_edge_average(g: GridParams, fy: &EdgeFieldY, side: Side) -> BoundaryField {
    let n = g.n() as isize;
    let (lo, hi) = match side {
        Side::Bottom => (-1, 0),
        Side::Top => (n - 1, n),
    };
    BoundaryField::from_fn(g, |i| 0.5 * (fy.at(i, lo) + fy.at(i, hi)))
}

fn rel(diff: f64, scale: f64) -> f64 {
    diff.abs() / scale.abs().max(1.0)
}

proptest! {
    /// Moving the divergence onto the test function flips it into minus the
    /// gradient bracket plus the two signed wall trace terms.
    #[test]
    fn divergence_duality_holds_for_arbitrary_fluxes(
        (g, psi, fx, fy) in grid().prop_flat_map(|g| {
            (Just(g), bulk_on(g, 1.0), edge_x_on(g), edge_y_extended_on(g))
        })
    ) {
        let ones = BulkField::constant(g, 1.0).extend_even_reflection();
        let div = divergence(g, &ones, &fx, &fy).unwrap();
        let lhs = inner_omega(g, &psi, &div);
        let (_, dxpsi) = face_ops_x(g, &psi);
        let dypsi = face_diff_y_core(g, &psi);
        let bracket = edge_inner_x(g, &dxpsi, &fx) + edge_inner_y(g, &dypsi, &fy);
        let top = wall_edge_average(g, &fy, Side::Top);
        let bottom = wall_edge_average(g, &fy, Side::Bottom);
        let rhs = -bracket + inner_gamma(g, &top, &psi.trace_top())
            - inner_gamma(g, &bottom, &psi.trace_bottom());
        prop_assert!(rel(lhs - rhs, lhs.abs().max(bracket.abs())) <= 1e-12);
    }

    /// The five-point stencil with arbitrary ghost rows pairs with minus the
    /// gradient bracket plus wall-normal derivative traces.
    #[test]
    fn laplacian_duality_holds_for_arbitrary_ghosts(
        (g, psi, phi, gb, gt) in grid().prop_flat_map(|g| {
            (Just(g), bulk_on(g, 1.0), bulk_on(g, 1.0), boundary_on(g, 1.0), boundary_on(g, 1.0))
        })
    ) {
        let phi_ghost = phi.extend_with_ghosts(&gb, &gt);
        let lap = laplacian_5pt(g, &phi_ghost);
        let lhs = inner_omega(g, &psi, &lap);
        let (_, dxpsi) = face_ops_x(g, &psi);
        let (_, dxphi) = face_ops_x(g, &phi);
        let dypsi = face_diff_y_core(g, &psi);
        let (_, dyphi) = face_ops_y(g, &phi_ghost);
        let bracket = edge_inner_x(g, &dxpsi, &dxphi) + edge_inner_y(g, &dypsi, &dyphi);
        let rhs = -bracket
            + inner_gamma(g, &boundary_normal_derivative(g, &phi_ghost, Side::Top), &psi.trace_top())
            - inner_gamma(g, &boundary_normal_derivative(g, &phi_ghost, Side::Bottom), &psi.trace_bottom());
        prop_assert!(rel(lhs - rhs, lhs.abs().max(bracket.abs())) <= 1e-12);
    }

    /// The wall-aware operator is self-adjoint in the weighted product,
    /// nonnegative, and kills constants.
    #[test]
    fn wall_operator_is_symmetric_positive_with_constant_kernel(
        (g, a, b, c) in grid().prop_flat_map(|g| {
            (Just(g), bulk_on(g, 1.0), bulk_on(g, 1.0), -1.0..1.0f64)
        })
    ) {
        let solver = EllipticSolver::new(g);
        let la = solver.apply_lh(&a);
        let lb = solver.apply_lh(&b);
        let sym = inner_omega(g, &a, &lb) - inner_omega(g, &la, &b);
        prop_assert!(rel(sym, inner_omega(g, &a, &lb)) <= 1e-12);
        prop_assert!(inner_omega(g, &a, &la) >= -1e-12);
        prop_assert!(solver.apply_lh(&BulkField::constant(g, c)).max_abs() <= 1e-13);
    }

    /// Solving then applying the operator returns the datum, on both the
    /// bulk and the wall line.
    #[test]
    fn inverse_solves_round_trip(
        (g, f, r) in grid().prop_flat_map(|g| (Just(g), bulk_on(g, 1.0), boundary_on(g, 1.0)))
    ) {
        let solver = EllipticSolver::new(g);
        let f = MeanZeroBulk::project(g, f);
        let u = solver.solve_lh(&f, 1e-12).unwrap();
        let back = solver.apply_lh(u.field());
        let scale = f.field().max_abs().max(1.0);
        for (x, y) in back.values().iter().zip(f.field().values()) {
            prop_assert!((x - y).abs() <= 1e-10 * scale);
        }
        let mut r = r;
        let m = r.mean();
        for x in r.values_mut() {
            *x -= m;
        }
        let v = solver.solve_neg_lap_gamma(&r, 1e-12).unwrap();
        let back = laplacian_gamma(g, &v);
        let scale = r.max_abs().max(1.0);
        for (x, y) in back.values().iter().zip(r.values()) {
            prop_assert!((-x - y).abs() <= 1e-10 * scale);
        }
    }

    /// The mass split reproduces the field exactly, its remainder carries no
    /// bulk or trace mass, and the row-constant part carries all of it.
    #[test]
    fn mass_split_is_exact_and_mass_free(
        (g, f) in grid().prop_flat_map(|g| (Just(g), bulk_on(g, 1.0)))
    ) {
        let (a, q) = mass_decompose(g, &f);
        let qf = q.field();
        prop_assert!(integral_omega(g, qf).abs() <= 1e-12);
        prop_assert!(integral_gamma(g, &qf.trace_bottom()).abs() <= 1e-12);
        prop_assert!(integral_gamma(g, &qf.trace_top()).abs() <= 1e-12);
        let ab = a.to_bulk(g);
        for j in 0..=g.n() {
            for i in 0..g.n() {
                prop_assert!((ab.at(i, j) + qf.at(i, j) - f.at(i, j)).abs() <= 1e-13);
            }
        }
        let ma = MassTriple::of(g, &ab);
        let mf = MassTriple::of(g, &f);
        prop_assert!((ma.bulk - mf.bulk).abs() <= 1e-12);
        prop_assert!((ma.bottom - mf.bottom).abs() <= 1e-12);
        prop_assert!((ma.top - mf.top).abs() <= 1e-12);
    }

    /// The mixing entropy is even with an odd slope and even curvature, and
    /// rejects arguments at or beyond the endpoints.
    #[test]
    fn mixing_entropy_is_even_with_odd_slope(x in -0.999..0.999f64) {
        let (v, d, c) = fh_potential(x).unwrap();
        let (vm, dm, cm) = fh_potential(-x).unwrap();
        prop_assert!((v - vm).abs() <= 1e-12 * v.abs().max(1.0));
        prop_assert!((d + dm).abs() <= 1e-12 * d.abs().max(1.0));
        prop_assert!((c - cm).abs() <= 1e-12 * c.abs().max(1.0));
        prop_assert!(c >= 2.0);
        prop_assert!(fh_potential(x.signum()).is_err());
        prop_assert!(fh_potential(2.0 * x.signum()).is_err());
    }

    /// The free energy is even in the phase and invariant under the two
    /// lattice symmetries: cyclic shifts along the wall and swapping the
    /// walls by a vertical flip.
    #[test]
    fn energy_respects_the_lattice_symmetries(
        (g, f, shift) in grid().prop_flat_map(|g| (Just(g), bulk_on(g, 0.9), 0..8usize))
    ) {
        let solver = EllipticSolver::new(g);
        let p = ModelParams::new(0.05, 0.04, 3.0, 1e-3).unwrap();
        let n = g.n();
        let shift = shift % n;
        let phase = AdmissiblePhase::new(f.clone()).unwrap();
        for mode in [BcMode::Dynamic, BcMode::Neumann] {
            let e = total_energy(&solver, &p, &phase, mode).unwrap();
            let scale = e.abs().max(1.0);
            let neg = AdmissiblePhase::new(BulkField::from_fn(g, |i, j| -f.at(i, j))).unwrap();
            let shifted =
                AdmissiblePhase::new(BulkField::from_fn(g, |i, j| f.at((i + shift) % n, j)))
                    .unwrap();
            let flipped =
                AdmissiblePhase::new(BulkField::from_fn(g, |i, j| f.at(i, n - j))).unwrap();
            prop_assert!((total_energy(&solver, &p, &neg, mode).unwrap() - e).abs() <= 1e-11 * scale);
            prop_assert!((total_energy(&solver, &p, &shifted, mode).unwrap() - e).abs() <= 1e-11 * scale);
            prop_assert!((total_energy(&solver, &p, &flipped, mode).unwrap() - e).abs() <= 1e-11 * scale);
        }
    }

    /// Nodal restriction agrees exactly with direct sampling when the fine
    /// field is itself a nodal sample.
    #[test]
    fn restriction_is_nodal_sampling(
        (a, b, kx, ky) in (-1.0..1.0f64, -1.0..1.0f64, 1..3usize, 1..3usize)
    ) {
        let gc = GridParams::new(4).unwrap();
        let gf = GridParams::new(8).unwrap();
        let sample = |g: GridParams| {
            BulkField::from_fn(g, |i, j| {
                let (x, y) = (i as f64 * g.h(), j as f64 * g.h());
                a * (std::f64::consts::TAU * kx as f64 * x).cos()
                    + b * (ky as f64 * y).cos()
            })
        };
        let r = restrict_fine_to_coarse(gc, &sample(gf)).unwrap();
        let direct = sample(gc);
        for (x, y) in r.values().iter().zip(direct.values()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// One implicit step from an arbitrary admissible state conserves all
    /// three masses, never leaves (-1, 1), does not raise the energy, and
    /// satisfies every scheme equation to ten times the solver tolerance.
    #[test]
    fn implicit_step_conserves_and_dissipates(
        f in bulk_on(GridParams::new(4).unwrap(), 0.5)
    ) {
        let g = GridParams::new(4).unwrap();
        let solver = EllipticSolver::new(g);
        let p = ModelParams::new(0.05, 0.04, 3.0, 1e-3).unwrap();
        let cfg = SolverConfig::default();
        for mode in [BcMode::Dynamic, BcMode::Neumann] {
            let phi_n = AdmissiblePhase::new(f.clone()).unwrap();
            let e0 = total_energy(&solver, &p, &phi_n, mode).unwrap();
            let stepper = Stepper::new(&solver, p, cfg, mode).unwrap();
            let result = stepper.advance(&phi_n).unwrap();
            prop_assert!(result.phi.field().max_abs() < 1.0);
            let m0 = MassTriple::of(g, phi_n.field());
            let m1 = MassTriple::of(g, result.phi.field());
            prop_assert!((m1.bulk - m0.bulk).abs() <= 1e-12);
            if mode == BcMode::Dynamic {
                prop_assert!((m1.bottom - m0.bottom).abs() <= 1e-12);
                prop_assert!((m1.top - m0.top).abs() <= 1e-12);
            }
            prop_assert!(result.report.energy <= e0 + 1e-10 * e0.abs().max(1.0));
            let res = scheme_residual(&solver, &p, &result, &phi_n, mode).unwrap();
            prop_assert!(res.max_abs() <= 10.0 * cfg.newton_tol);
        }
    }

    /// Advancing a shifted state equals shifting the advanced state: the
    /// step inherits the periodic symmetry of the domain.
    #[test]
    fn implicit_step_commutes_with_wall_shifts(
        (f, shift) in (bulk_on(GridParams::new(4).unwrap(), 0.5), 1..4usize)
    ) {
        let g = GridParams::new(4).unwrap();
        let n = g.n();
        let solver = EllipticSolver::new(g);
        let p = ModelParams::new(0.05, 0.04, 3.0, 1e-3).unwrap();
        let stepper = Stepper::new(&solver, p, SolverConfig::default(), BcMode::Dynamic).unwrap();
        let base = stepper
            .advance(&AdmissiblePhase::new(f.clone()).unwrap())
            .unwrap();
        let shifted_start =
            AdmissiblePhase::new(BulkField::from_fn(g, |i, j| f.at((i + shift) % n, j))).unwrap();
        let shifted = stepper.advance(&shifted_start).unwrap();
        for j in 0..=n {
            for i in 0..n {
                let a = shifted.phi.field().at(i, j);
                let b = base.phi.field().at((i + shift) % n, j);
                prop_assert!((a - b).abs() <= 1e-7);
            }
        }
    }
}
