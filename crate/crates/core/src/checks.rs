//! Named self-checks of the discrete calculus and the step functional:
//! duality (summation-by-parts) identities, wall-operator symmetry and
//! positivity, inverse round-trips, mass-split orthogonality, and
//! finite-difference validation of the objective's gradient and Hessian
//! action. Every check is deterministic; the suite backs the `check-ops`
//! subcommand.

use crate::elliptic::{mass_decompose, EllipticSolver, MeanZeroBulk};
use crate::energy::{
    hessian_apply, step_value_and_gradient, step_value_raw, AdmissiblePhase, BcMode, ModelParams,
};
use crate::grid::{
    boundary_normal_derivative, divergence, edge_inner_x, edge_inner_y, face_diff_y_core,
    face_ops_x, face_ops_y, inner_gamma, inner_omega, integral_gamma, integral_omega,
    BoundaryField, BulkField, EdgeFieldX, EdgeFieldY, GridParams, Side,
};
use crate::Result;

/// Result of one named check on one grid.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub n: usize,
    pub max_err: f64,
    pub tol: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_err <= self.tol
    }
}

const IDENTITY_TOL: f64 = 1e-12;
const ROUND_TRIP_TOL: f64 = 1e-11;
const GRADIENT_TOL: f64 = 1e-5;
const HESSIAN_TOL: f64 = 1e-6;

fn lcg(seed: u64) -> impl FnMut() -> f64 {
    let mut state = seed
        .wrapping_mul(2862933555777941757)
        .wrapping_add(3037000493);
    move || {
        state = state
            .wrapping_mul(2862933555777941757)
            .wrapping_add(3037000493);
        (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }
}

fn random_bulk(g: GridParams, next: &mut impl FnMut() -> f64) -> BulkField {
    BulkField::from_fn(g, |_, _| next())
}

fn random_boundary(g: GridParams, next: &mut impl FnMut() -> f64) -> BoundaryField {
    BoundaryField::from_fn(g, |_| next())
}

fn relative(diff: f64, scale: f64) -> f64 {
    diff.abs() / scale.abs().max(1.0)
}

/// Trace average of an extended y-edge field at a wall row: the mean of the
/// two edge values straddling the row.
fn wall_edge_average(g: GridParams, fy: &EdgeFieldY, side: Side) -> BoundaryField {
    let n = g.n() as isize;
    let (lo, hi) = match side {
        Side::Bottom => (-1, 0),
        Side::Top => (n - 1, n),
    };
    BoundaryField::from_fn(g, |i| 0.5 * (fy.at(i, lo) + fy.at(i, hi)))
}

/// Nodal/edge duality of the discrete divergence: moving the divergence
/// onto the test function flips it to minus the gradient bracket plus the
/// two wall trace terms.
fn check_divergence_duality(g: GridParams, seed: u64) -> Result<f64> {
    let mut next = lcg(seed);
    let psi = random_bulk(g, &mut next);
    let mut fx = EdgeFieldX::zeros(g);
    for j in 0..=g.n() {
        for i in 0..g.n() {
            fx.set(i, j, next());
        }
    }
    let mut fy = EdgeFieldY::zeros_extended(g);
    for j in -1..=g.n() as isize {
        for i in 0..g.n() {
            fy.set(i, j, next());
        }
    }
    let ones = BulkField::constant(g, 1.0).extend_even_reflection();
    let div = divergence(g, &ones, &fx, &fy)?;
    let lhs = inner_omega(g, &psi, &div);

    let (_, dxpsi) = face_ops_x(g, &psi);
    let dypsi = face_diff_y_core(g, &psi);
    let bracket = edge_inner_x(g, &dxpsi, &fx) + edge_inner_y(g, &dypsi, &fy);
    let top = wall_edge_average(g, &fy, Side::Top);
    let bottom = wall_edge_average(g, &fy, Side::Bottom);
    let rhs = -bracket + inner_gamma(g, &top, &psi.trace_top())
        - inner_gamma(g, &bottom, &psi.trace_bottom());
    Ok(relative(lhs - rhs, lhs.abs().max(bracket.abs())))
}

/// Same duality for a variable-coefficient flux: the divergence of the
/// averaged-coefficient gradient flux pairs with the coefficient-weighted
/// gradient bracket.
fn check_weighted_flux_duality(g: GridParams, seed: u64) -> Result<f64> {
    let mut next = lcg(seed);
    let psi = random_bulk(g, &mut next);
    let phi = random_bulk(g, &mut next);
    let coeff = random_bulk(g, &mut next);
    let phi_ghost = {
        let bottom = random_boundary(g, &mut next);
        let top = random_boundary(g, &mut next);
        phi.extend_with_ghosts(&bottom, &top)
    };
    let coeff_ghost = {
        let bottom = random_boundary(g, &mut next);
        let top = random_boundary(g, &mut next);
        coeff.extend_with_ghosts(&bottom, &top)
    };

    let (_, dxphi) = face_ops_x(g, &phi);
    let (_, dyphi) = face_ops_y(g, &phi_ghost);
    let div = divergence(g, &coeff_ghost, &dxphi, &dyphi)?;
    let lhs = inner_omega(g, &psi, &div);

    let (axc, _) = face_ops_x(g, &coeff);
    let (ayc, _) = face_ops_y(g, &coeff_ghost);
    let mut flux_x = EdgeFieldX::zeros(g);
    for j in 0..=g.n() {
        for i in 0..g.n() {
            flux_x.set(i, j, axc.at(i, j) * dxphi.at(i, j));
        }
    }
    let mut flux_y = EdgeFieldY::zeros_extended(g);
    for j in -1..=g.n() as isize {
        for i in 0..g.n() {
            flux_y.set(i, j, ayc.at(i, j) * dyphi.at(i, j));
        }
    }
    let (_, dxpsi) = face_ops_x(g, &psi);
    let dypsi = face_diff_y_core(g, &psi);
    let bracket = edge_inner_x(g, &dxpsi, &flux_x) + edge_inner_y(g, &dypsi, &flux_y);
    let top = wall_edge_average(g, &flux_y, Side::Top);
    let bottom = wall_edge_average(g, &flux_y, Side::Bottom);
    let rhs = -bracket + inner_gamma(g, &top, &psi.trace_top())
        - inner_gamma(g, &bottom, &psi.trace_bottom());
    Ok(relative(lhs - rhs, lhs.abs().max(bracket.abs())))
}

/// Unit-coefficient corollary: the five-point Laplacian pairs with minus
/// the gradient bracket plus wall-normal derivative traces.
fn check_laplacian_duality(g: GridParams, seed: u64) -> Result<f64> {
    let mut next = lcg(seed);
    let psi = random_bulk(g, &mut next);
    let phi = random_bulk(g, &mut next);
    let bottom = random_boundary(g, &mut next);
    let top = random_boundary(g, &mut next);
    let phi_ghost = phi.extend_with_ghosts(&bottom, &top);

    let lap = crate::grid::laplacian_5pt(g, &phi_ghost);
    let lhs = inner_omega(g, &psi, &lap);

    let (_, dxpsi) = face_ops_x(g, &psi);
    let (_, dxphi) = face_ops_x(g, &phi);
    let dypsi = face_diff_y_core(g, &psi);
    let (_, dyphi_ext) = face_ops_y(g, &phi_ghost);
    let bracket = edge_inner_x(g, &dxpsi, &dxphi) + edge_inner_y(g, &dypsi, &dyphi_ext);
    let dn_top = boundary_normal_derivative(g, &phi_ghost, Side::Top);
    let dn_bottom = boundary_normal_derivative(g, &phi_ghost, Side::Bottom);
    let rhs = -bracket + inner_gamma(g, &dn_top, &psi.trace_top())
        - inner_gamma(g, &dn_bottom, &psi.trace_bottom());
    Ok(relative(lhs - rhs, lhs.abs().max(bracket.abs())))
}

fn check_wall_operator_symmetry(g: GridParams, seed: u64) -> Result<f64> {
    let solver = EllipticSolver::new(g);
    let mut next = lcg(seed);
    let a = random_bulk(g, &mut next);
    let b = random_bulk(g, &mut next);
    let la = solver.apply_lh(&a);
    let lb = solver.apply_lh(&b);
    let x = inner_omega(g, &a, &lb);
    let y = inner_omega(g, &la, &b);
    Ok(relative(x - y, x))
}

fn check_wall_operator_positivity(g: GridParams, seed: u64) -> Result<f64> {
    let solver = EllipticSolver::new(g);
    let mut next = lcg(seed);
    let mut worst = 0.0_f64;
    for _ in 0..4 {
        let a = random_bulk(g, &mut next);
        let la = solver.apply_lh(&a);
        let quad = inner_omega(g, &a, &la);
        // Quadratic form must be nonnegative; constants are its kernel.
        worst = worst.max(relative((-quad).max(0.0), 1.0));
        let c = BulkField::constant(g, next());
        worst = worst.max(solver.apply_lh(&c).max_abs());
    }
    Ok(worst)
}

fn check_elliptic_round_trip(g: GridParams, seed: u64) -> Result<f64> {
    let solver = EllipticSolver::new(g);
    let mut next = lcg(seed);
    let f = MeanZeroBulk::project(g, random_bulk(g, &mut next));
    let u = solver.solve_lh(&f, 1e-12)?;
    let back = solver.apply_lh(u.field());
    let mut worst = 0.0_f64;
    let scale = f.field().max_abs().max(1.0);
    for (x, y) in back.values().iter().zip(f.field().values()) {
        worst = worst.max((x - y).abs() / scale);
    }
    Ok(worst)
}

fn check_trace_elliptic_round_trip(g: GridParams, seed: u64) -> Result<f64> {
    let solver = EllipticSolver::new(g);
    let mut next = lcg(seed);
    let mut f = random_boundary(g, &mut next);
    let m = f.mean();
    for x in f.values_mut() {
        *x -= m;
    }
    let v = solver.solve_neg_lap_gamma(&f, 1e-12)?;
    let back = crate::grid::laplacian_gamma(g, &v);
    let scale = f.max_abs().max(1.0);
    let mut worst = 0.0_f64;
    for (x, y) in back.values().iter().zip(f.values()) {
        worst = worst.max((-x - y).abs() / scale);
    }
    Ok(worst)
}

fn check_mass_split_orthogonality(g: GridParams, seed: u64) -> Result<f64> {
    let mut next = lcg(seed);
    let f = random_bulk(g, &mut next);
    let (a, q) = mass_decompose(g, &f);
    let qf = q.field();
    let mut worst = integral_omega(g, qf).abs();
    worst = worst.max(integral_gamma(g, &qf.trace_bottom()).abs());
    worst = worst.max(integral_gamma(g, &qf.trace_top()).abs());
    let ab = a.to_bulk(g);
    for j in 0..=g.n() {
        for i in 0..g.n() {
            worst = worst.max((ab.at(i, j) + qf.at(i, j) - f.at(i, j)).abs());
        }
    }
    Ok(worst / f.max_abs().max(1.0))
}

/// Zero out the plain means of the two wall rows and of the interior block;
/// this annihilates all three conserved masses at once.
fn make_mass_neutral(g: GridParams, f: &mut BulkField) {
    let n = g.n();
    for j in [0usize, n] {
        let mut m = 0.0;
        for i in 0..n {
            m += f.at(i, j);
        }
        m /= n as f64;
        for i in 0..n {
            let v = f.at(i, j) - m;
            f.set(i, j, v);
        }
    }
    let mut m = 0.0;
    for j in 1..n {
        for i in 0..n {
            m += f.at(i, j);
        }
    }
    m /= ((n - 1) * n) as f64;
    for j in 1..n {
        for i in 0..n {
            let v = f.at(i, j) - m;
            f.set(i, j, v);
        }
    }
}

/// A state pair sharing all three masses, plus a mass-neutral direction;
/// everything stays safely inside (-1, 1) for the finite-difference probes.
fn fd_state(g: GridParams, seed: u64) -> (BulkField, BulkField, BulkField) {
    let mut next = lcg(seed);
    let phi_n = BulkField::from_fn(g, |_, _| 0.4 * next());
    let mut step = random_bulk(g, &mut next);
    make_mass_neutral(g, &mut step);
    let mut dir = random_bulk(g, &mut next);
    make_mass_neutral(g, &mut dir);
    let mut phi = phi_n.clone();
    for (p, s) in phi.values_mut().iter_mut().zip(step.values()) {
        *p += 0.2 * s;
    }
    (phi_n, phi, dir)
}

fn check_step_gradient_fd(g: GridParams, seed: u64) -> Result<f64> {
    let solver = EllipticSolver::new(g);
    let p = ModelParams::new(0.05, 0.04, 3.0, 1e-3)?;
    let mode = BcMode::Dynamic;
    let (phi_n, phi, dir) = fd_state(g, seed);
    let (_, grad) = step_value_and_gradient(&solver, &p, mode, &phi, &phi_n)?;
    let tau = 1e-5;
    let mut plus = phi.clone();
    let mut minus = phi.clone();
    for ((a, b), d) in plus
        .values_mut()
        .iter_mut()
        .zip(minus.values_mut())
        .zip(dir.values())
    {
        *a += tau * d;
        *b -= tau * d;
    }
    let fp = step_value_raw(&solver, &p, mode, &plus, &phi_n)?;
    let fm = step_value_raw(&solver, &p, mode, &minus, &phi_n)?;
    let fd = (fp - fm) / (2.0 * tau);
    let mut exact = 0.0;
    for (gv, dv) in grad.values().iter().zip(dir.values()) {
        exact += gv * dv;
    }
    Ok(relative(fd - exact, exact))
}

fn check_step_hessian_fd(g: GridParams, seed: u64) -> Result<f64> {
    let solver = EllipticSolver::new(g);
    let p = ModelParams::new(0.05, 0.04, 3.0, 1e-3)?;
    let mode = BcMode::Dynamic;
    let (phi_n, phi, dir) = fd_state(g, seed);
    let adm = AdmissiblePhase::new(phi.clone())?;
    let hd = hessian_apply(&solver, &p, &adm, &dir, mode)?;
    let tau = 1e-5;
    let mut plus = phi.clone();
    let mut minus = phi;
    for ((a, b), d) in plus
        .values_mut()
        .iter_mut()
        .zip(minus.values_mut())
        .zip(dir.values())
    {
        *a += tau * d;
        *b -= tau * d;
    }
    let (_, gp) = step_value_and_gradient(&solver, &p, mode, &plus, &phi_n)?;
    let (_, gm) = step_value_and_gradient(&solver, &p, mode, &minus, &phi_n)?;
    let scale = hd.max_abs().max(1.0);
    let mut worst = 0.0_f64;
    for ((a, b), e) in gp.values().iter().zip(gm.values()).zip(hd.values()) {
        let fd = (a - b) / (2.0 * tau);
        worst = worst.max((fd - e).abs() / scale);
    }
    Ok(worst)
}

/// Run the full named suite on the given grid sizes. A check that errors
/// internally reports an infinite error rather than aborting the suite.
pub fn run_all(sizes: &[usize]) -> Vec<CheckOutcome> {
    type CheckFn = fn(GridParams, u64) -> Result<f64>;
    let table: &[(&'static str, CheckFn, f64)] = &[
        ("divergence-duality", check_divergence_duality, IDENTITY_TOL),
        (
            "weighted-flux-duality",
            check_weighted_flux_duality,
            IDENTITY_TOL,
        ),
        ("laplacian-duality", check_laplacian_duality, IDENTITY_TOL),
        (
            "wall-operator-symmetry",
            check_wall_operator_symmetry,
            IDENTITY_TOL,
        ),
        (
            "wall-operator-positivity",
            check_wall_operator_positivity,
            IDENTITY_TOL,
        ),
        (
            "elliptic-round-trip",
            check_elliptic_round_trip,
            ROUND_TRIP_TOL,
        ),
        (
            "trace-elliptic-round-trip",
            check_trace_elliptic_round_trip,
            ROUND_TRIP_TOL,
        ),
        (
            "mass-split-orthogonality",
            check_mass_split_orthogonality,
            IDENTITY_TOL,
        ),
        ("step-gradient-fd", check_step_gradient_fd, GRADIENT_TOL),
        ("step-hessian-fd", check_step_hessian_fd, HESSIAN_TOL),
    ];
    let mut out = Vec::new();
    for (k, &n) in sizes.iter().enumerate() {
        let g = match GridParams::new(n) {
            Ok(g) => g,
            Err(_) => continue,
        };
        for (idx, (name, f, tol)) in table.iter().enumerate() {
            let seed = 1000 + 37 * (k as u64) + idx as u64;
            let max_err = f(g, seed).unwrap_or(f64::INFINITY);
            out.push(CheckOutcome {
                name,
                n,
                max_err,
                tol: *tol,
            });
        }
    }
    out
}
