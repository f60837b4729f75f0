//! One implicit time step: minimize the strictly convex step objective over
//! the mass-compatible admissible slice, recover the bulk and trace
//! potentials with their constraint constants, and verify the original
//! update/potential equations stencil by stencil.
//!
//! Solver layout: damped Newton in plain nodal coordinates. Directions live
//! in the mass-neutral subspace (all three block means zero; bulk mean only
//! in Neumann mode) and are found by projected preconditioned CG on the
//! second variation. The preconditioner freezes the logarithmic diagonal at
//! its value in the pure state, which diagonalizes per x-mode into small
//! banded systems. A fraction-to-boundary cap keeps every iterate strictly
//! inside (-1,1) before the singular potential is ever evaluated; Armijo
//! backtracking then enforces objective decrease.

use nalgebra::{DMatrix, DVector, Dyn};
use rustfft::num_complex::Complex64;

use crate::elliptic::{EllipticSolver, MassTriple};
use crate::energy::{
    fh_potential, step_value_and_gradient, step_value_raw, total_energy, AdmissiblePhase, BcMode,
    HessianOp, ModelParams,
};
use crate::grid::{
    boundary_normal_derivative, gamma_grad_norm_sq, grad_norm_sq, laplacian_5pt, laplacian_gamma,
    BoundaryField, BulkField, BulkFieldGhost, CompensatedSum, GridParams, Side,
};
use crate::{Error, Result};

/// Distance kept between iterates and the singular endpoints of the
/// potential.
const INTERIOR_MARGIN: f64 = 1e-13;
/// Inner-solve iteration cap; a truncated direction is still a descent
/// direction, so the line search absorbs rare non-convergence.
const MAX_LINEAR_ITERS: usize = 800;
const MAX_BACKTRACKS: usize = 60;
/// Logarithmic curvature frozen into the preconditioner: I''(0).
const PRECOND_CURVATURE: f64 = 2.0;

/// Newton/line-search tuning knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Stop when the constraint-projected stationarity residual (measured
    /// in potential units) falls below this, in max norm.
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Relative residual target of the inner CG solve.
    pub linear_tol: f64,
    /// Fraction of the largest interior-preserving step the line search may
    /// take.
    pub fraction_to_boundary: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_newton: 50,
            linear_tol: 1e-12,
            fraction_to_boundary: 0.95,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("newton_tol", self.newton_tol > 0.0),
            ("max_newton", self.max_newton > 0),
            ("linear_tol", self.linear_tol > 0.0),
            (
                "fraction_to_boundary",
                self.fraction_to_boundary > 0.0 && self.fraction_to_boundary < 1.0,
            ),
            ("armijo_c", self.armijo_c > 0.0 && self.armijo_c < 1.0),
            (
                "backtrack_factor",
                self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0,
            ),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(Error::Config(format!(
                    "solver parameter {name} out of range"
                )));
            }
        }
        Ok(())
    }
}

/// Diagnostics of one accepted step.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    pub newton_iters: usize,
    pub final_residual: f64,
    /// Total free energy of the new state.
    pub energy: f64,
    pub masses: MassTriple,
    /// s times the squared gradient norms of the recovered potentials; the
    /// amount the energy law guarantees was dissipated this step.
    pub dissipation: f64,
}

/// A converged implicit step: the new state, recovered potentials, and the
/// constraint constants (trace entries absent in Neumann mode).
#[derive(Debug, Clone)]
pub struct StepResult {
    pub phi: AdmissiblePhase,
    pub mu: BulkField,
    pub mu_b: Option<BoundaryField>,
    pub mu_t: Option<BoundaryField>,
    /// Additive constants from the three mass constraints; the bulk
    /// potential is mu = -(1/s) Lh^{-1}(phi - phi_n) - multipliers.0, and
    /// the traces follow the same pattern.
    pub multipliers: (f64, f64, f64),
    pub report: StepReport,
}

/// Potentials and ghost rows reconstructed from a converged state.
#[derive(Debug, Clone)]
pub struct RecoveredPotentials {
    pub mu: BulkField,
    pub mu_b: Option<BoundaryField>,
    pub mu_t: Option<BoundaryField>,
    /// phi extended by the ghost rows that make the trace potential
    /// equations exact (even reflection in Neumann mode).
    pub ghost: BulkFieldGhost,
    pub multipliers: (f64, f64, f64),
}

/// Max-norm residuals of the original scheme equations, evaluated with raw
/// stencils on the recovered fields. Trace entries are absent in Neumann
/// mode.
#[derive(Debug, Clone, Copy)]
pub struct SchemeResiduals {
    /// Bulk update: (phi - phi_n)/s - lap mu.
    pub bulk_update: f64,
    /// Bulk potential: mu - (I'(phi) - theta0 phi_n)/eps + eps lap phi.
    pub bulk_potential: f64,
    /// Wall-normal derivative of mu at both walls.
    pub mu_neumann: f64,
    pub bottom_update: Option<f64>,
    pub bottom_potential: Option<f64>,
    pub top_update: Option<f64>,
    pub top_potential: Option<f64>,
}

impl SchemeResiduals {
    pub fn max_abs(&self) -> f64 {
        let mut m = self
            .bulk_update
            .max(self.bulk_potential)
            .max(self.mu_neumann);
        for v in [
            self.bottom_update,
            self.bottom_potential,
            self.top_update,
            self.top_potential,
        ]
        .into_iter()
        .flatten()
        {
            m = m.max(v);
        }
        m
    }
}

fn dot(a: &BulkField, b: &BulkField) -> f64 {
    let mut s = CompensatedSum::default();
    for (x, y) in a.values().iter().zip(b.values()) {
        s.add(x * y);
    }
    s.value()
}

fn axpy(y: &mut BulkField, a: f64, x: &BulkField) {
    for (yv, xv) in y.values_mut().iter_mut().zip(x.values()) {
        *yv += a * xv;
    }
}

fn block_means(g: GridParams, f: &BulkField) -> (f64, f64, f64) {
    let n = g.n();
    let mut bottom = CompensatedSum::default();
    let mut top = CompensatedSum::default();
    let mut interior = CompensatedSum::default();
    for &x in f.row(0) {
        bottom.add(x);
    }
    for j in 1..n {
        for &x in f.row(j) {
            interior.add(x);
        }
    }
    for &x in f.row(n) {
        top.add(x);
    }
    (
        bottom.value() / n as f64,
        top.value() / n as f64,
        interior.value() / (n * (n - 1)) as f64,
    )
}

/// Project a plain-coordinate field onto the mass-neutral subspace of the
/// mode: subtract the three block means (dynamic) or the single weighted
/// component (Neumann).
fn project_mass_neutral(g: GridParams, f: &mut BulkField, mode: BcMode) {
    let n = g.n();
    match mode {
        BcMode::Dynamic => {
            let (mb, mt, mi) = block_means(g, f);
            for x in f.row_mut(0) {
                *x -= mb;
            }
            for j in 1..n {
                for x in f.row_mut(j) {
                    *x -= mi;
                }
            }
            for x in f.row_mut(n) {
                *x -= mt;
            }
        }
        BcMode::Neumann => {
            let h2 = g.h() * g.h();
            let mut num = CompensatedSum::default();
            let mut den = 0.0;
            for j in 0..=n {
                let w = g.weight(j) * h2;
                den += w * w * n as f64;
                for &x in f.row(j) {
                    num.add(w * x);
                }
            }
            let c = num.value() / den;
            for j in 0..=n {
                let w = g.weight(j) * h2;
                for x in f.row_mut(j) {
                    *x -= c * w;
                }
            }
        }
    }
}

/// Split a plain gradient into constraint multipliers and the projected
/// remainder, plus the stationarity residual in potential units (the
/// projected gradient with the quadrature scaling divided out).
fn split_gradient(
    g: GridParams,
    grad: &BulkField,
    mode: BcMode,
) -> ((f64, f64, f64), BulkField, f64) {
    let n = g.n();
    let h = g.h();
    let h2 = h * h;
    let mut proj = grad.clone();
    let multipliers = match mode {
        BcMode::Dynamic => {
            let (mb, mt, mi) = block_means(g, grad);
            let l1 = mi / h2;
            let l2 = (mb - 0.5 * l1 * h2) / h;
            let l3 = (mt - 0.5 * l1 * h2) / h;
            for x in proj.row_mut(0) {
                *x -= mb;
            }
            for j in 1..n {
                for x in proj.row_mut(j) {
                    *x -= mi;
                }
            }
            for x in proj.row_mut(n) {
                *x -= mt;
            }
            (l1, l2, l3)
        }
        BcMode::Neumann => {
            let mut num = CompensatedSum::default();
            let mut den = 0.0;
            for j in 0..=n {
                let w = g.weight(j) * h2;
                den += w * w * n as f64;
                for &x in proj.row(j) {
                    num.add(w * x);
                }
            }
            let c = num.value() / den;
            for j in 0..=n {
                let w = g.weight(j) * h2;
                for x in proj.row_mut(j) {
                    *x -= c * w;
                }
            }
            (c, 0.0, 0.0)
        }
    };
    let mut res = 0.0_f64;
    for j in 0..=n {
        let scale = 1.0 / (g.weight(j) * h2);
        for &x in proj.row(j) {
            res = res.max((x * scale).abs());
        }
    }
    (multipliers, proj, res)
}

/// Banded LU with partial pivoting for the per-mode preconditioner systems,
/// bandwidths (2,2); the factored upper bandwidth grows to 4.
mod band {
    use super::Complex64;

    const KL: usize = 2;
    const KU: usize = 2;
    const WIDTH: usize = 2 * KL + KU + 1;
    const OFFSET: usize = KL + KU;

    pub struct BandLu {
        n: usize,
        data: Vec<f64>,
        piv: Vec<usize>,
    }

    impl BandLu {
        #[inline]
        fn slot(r: usize, c: usize) -> usize {
            c * WIDTH + (r + OFFSET - c)
        }

        /// Factor a matrix given by (row, col, value) entries within the
        /// (2,2) band.
        pub fn factor(n: usize, entries: &[(usize, usize, f64)]) -> Self {
            let mut data = vec![0.0; n * WIDTH];
            for &(r, c, v) in entries {
                debug_assert!(r + KL >= c && c + KU >= r, "entry outside band");
                data[Self::slot(r, c)] += v;
            }
            let mut piv = vec![0usize; n];
            for k in 0..n {
                let rmax = (k + KL).min(n - 1);
                let mut p = k;
                let mut best = data[Self::slot(k, k)].abs();
                for r in k + 1..=rmax {
                    let v = data[Self::slot(r, k)].abs();
                    if v > best {
                        best = v;
                        p = r;
                    }
                }
                piv[k] = p;
                let cmax = (k + KL + KU).min(n - 1);
                if p != k {
                    for c in k..=cmax {
                        data.swap(Self::slot(k, c), Self::slot(p, c));
                    }
                }
                let pivot = data[Self::slot(k, k)];
                debug_assert!(pivot != 0.0, "singular preconditioner block");
                for r in k + 1..=rmax {
                    let m = data[Self::slot(r, k)] / pivot;
                    data[Self::slot(r, k)] = m;
                    for c in k + 1..=cmax {
                        data[Self::slot(r, c)] -= m * data[Self::slot(k, c)];
                    }
                }
            }
            Self { n, data, piv }
        }

        pub fn solve(&self, b: &mut [Complex64]) {
            let n = self.n;
            debug_assert_eq!(b.len(), n);
            for k in 0..n {
                if self.piv[k] != k {
                    b.swap(k, self.piv[k]);
                }
                let rmax = (k + KL).min(n - 1);
                let bk = b[k];
                for r in k + 1..=rmax {
                    b[r] -= bk * self.data[Self::slot(r, k)];
                }
            }
            for k in (0..n).rev() {
                let cmax = (k + KL + KU).min(n - 1);
                let mut acc = b[k];
                for c in k + 1..=cmax {
                    acc -= b[c] * self.data[Self::slot(k, c)];
                }
                b[k] = acc / self.data[Self::slot(k, k)];
            }
        }
    }
}

/// Tridiagonal y-operator of one x-mode: lambda*I plus the wall-closed
/// second difference.
struct ModeTri {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
}

impl ModeTri {
    fn new(n: usize, h: f64, lambda: f64) -> Self {
        let n1 = n + 1;
        let h2inv = 1.0 / (h * h);
        let mut sub = vec![-h2inv; n1];
        sub[n] = -2.0 * h2inv;
        let diag = vec![lambda + 2.0 * h2inv; n1];
        let mut sup = vec![-h2inv; n1 - 1];
        sup[0] = -2.0 * h2inv;
        Self { sub, diag, sup }
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        if c + 1 == r {
            self.sub[r]
        } else if c == r {
            self.diag[r]
        } else if c == r + 1 {
            self.sup[r]
        } else {
            0.0
        }
    }

    fn mul(&self, x: &[Complex64], out: &mut [Complex64]) {
        let n1 = x.len();
        for r in 0..n1 {
            let mut acc = x[r] * self.diag[r];
            if r > 0 {
                acc += x[r - 1] * self.sub[r];
            }
            if r + 1 < n1 {
                acc += x[r + 1] * self.sup[r];
            }
            out[r] = acc;
        }
    }
}

/// Double integration of the singular zero-mode system S v = b for real
/// compatible b, pinned to zero weighted mean; mirrors the transform
/// solver's zero-mode treatment.
fn integrate_mode0_real(g: GridParams, b: &[f64]) -> Vec<f64> {
    let n = g.n();
    let h = g.h();
    let mut acc = 0.0;
    let mut edges = vec![0.0; n];
    for j in 0..n {
        acc += g.weight(j) * b[j];
        edges[j] = -h * acc;
    }
    let mut v = vec![0.0; n + 1];
    for j in 0..n {
        v[j + 1] = v[j] + h * edges[j];
    }
    let mut mean = 0.0;
    for (j, x) in v.iter().enumerate() {
        mean += g.weight(j) * x;
    }
    mean /= n as f64;
    for x in &mut v {
        *x -= mean;
    }
    v
}

/// Frozen-curvature approximation of the step Hessian, factored once per
/// stepper: banded LU per nonzero x-mode and a small dense saddle system
/// for the constrained zero mode.
struct StepPreconditioner {
    mode: BcMode,
    bands: Vec<band::BandLu>,
    kkt: nalgebra::linalg::LU<f64, Dyn, Dyn>,
    ncons: usize,
}

impl StepPreconditioner {
    fn new(solver: &EllipticSolver, p: &ModelParams, mode: BcMode) -> Self {
        let g = solver.grid();
        let n = g.n();
        let n1 = n + 1;
        let h = g.h();
        let c0 = PRECOND_CURVATURE;
        let inv_eps = 1.0 / p.eps;

        let mut bands = Vec::with_capacity(n - 1);
        for k in 1..n {
            let lam = solver.lambda_k(k);
            let t = ModeTri::new(n, h, lam);
            let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(5 * n1 + 8);
            for r in 0..n1 {
                let lo = r.saturating_sub(2);
                let hi = (r + 2).min(n1 - 1);
                for c in lo..=hi {
                    // (1/s) I + (c0/eps) T + eps T^2 within the band.
                    let mut v = 0.0;
                    if r == c {
                        v += 1.0 / p.s;
                    }
                    v += c0 * inv_eps * t.at(r, c);
                    let mlo = r.saturating_sub(1).max(c.saturating_sub(1));
                    let mhi = (r + 1).min(c + 1).min(n1 - 1);
                    let mut sq = 0.0;
                    for m in mlo..=mhi {
                        sq += t.at(r, m) * t.at(m, c);
                    }
                    v += p.eps * sq;
                    if v != 0.0 {
                        entries.push((r, c, v));
                    }
                }
            }
            if mode == BcMode::Dynamic {
                // Wall augmentation: (2 beta_k / h) T E adds the scaled
                // first and last columns of T.
                let beta = 1.0 / (p.s * lam) + c0 * inv_eps + p.kappa * lam;
                let scale = 2.0 * beta / h;
                entries.push((0, 0, scale * t.at(0, 0)));
                entries.push((1, 0, scale * t.at(1, 0)));
                entries.push((n - 1, n, scale * t.at(n - 1, n)));
                entries.push((n, n, scale * t.at(n, n)));
            }
            bands.push(band::BandLu::factor(n1, &entries));
        }

        // Constrained zero mode: the y-operator with the inverse realized by
        // double integration, assembled densely with its constraint rows.
        let s_tri = ModeTri::new(n, h, 0.0);
        let mut ginv = DMatrix::<f64>::zeros(n1, n1);
        for c in 0..n1 {
            let mut b = vec![0.0; n1];
            let wc = g.weight(c);
            for (j, x) in b.iter_mut().enumerate() {
                *x = -wc / n as f64;
                if j == c {
                    *x += 1.0;
                }
            }
            let col = integrate_mode0_real(g, &b);
            for r in 0..n1 {
                ginv[(r, c)] = col[r];
            }
        }
        let ncons = match mode {
            BcMode::Dynamic => 3,
            BcMode::Neumann => 1,
        };
        let dim = n1 + ncons;
        let h2 = h * h;
        let mut kkt = DMatrix::<f64>::zeros(dim, dim);
        for r in 0..n1 {
            let w = g.weight(r) * h2;
            for c in 0..n1 {
                let mut v = ginv[(r, c)] / p.s;
                if r == c {
                    v += c0 * inv_eps;
                }
                v += p.eps * s_tri.at(r, c);
                kkt[(r, c)] = w * v;
            }
        }
        match mode {
            BcMode::Dynamic => {
                kkt[(0, n1)] = 1.0;
                kkt[(n1, 0)] = 1.0;
                kkt[(n, n1 + 1)] = 1.0;
                kkt[(n1 + 1, n)] = 1.0;
                for j in 1..n {
                    kkt[(j, n1 + 2)] = 1.0;
                    kkt[(n1 + 2, j)] = 1.0;
                }
            }
            BcMode::Neumann => {
                for j in 0..n1 {
                    kkt[(j, n1)] = g.weight(j);
                    kkt[(n1, j)] = g.weight(j);
                }
            }
        }
        Self {
            mode,
            bands,
            kkt: kkt.lu(),
            ncons,
        }
    }

    fn apply(&self, solver: &EllipticSolver, r: &BulkField) -> BulkField {
        let g = solver.grid();
        let n = g.n();
        let n1 = n + 1;
        let h = g.h();
        let h2 = h * h;
        let mut modes = solver.fft_forward_rows(r);

        // Zero mode through the saddle solve, real and imaginary parts.
        let dim = n1 + self.ncons;
        for part in 0..2 {
            let mut rhs = DVector::<f64>::zeros(dim);
            for j in 0..n1 {
                rhs[j] = if part == 0 { modes[j].re } else { modes[j].im };
            }
            let sol = self
                .kkt
                .solve(&rhs)
                .expect("saddle preconditioner system is nonsingular");
            for j in 0..n1 {
                if part == 0 {
                    modes[j].re = sol[j];
                } else {
                    modes[j].im = sol[j];
                }
            }
        }

        let mut y = vec![Complex64::new(0.0, 0.0); n1];
        let mut t = vec![Complex64::new(0.0, 0.0); n1];
        for k in 1..n {
            let tri = ModeTri::new(n, h, solver.lambda_k(k));
            let slice = &mut modes[k * n1..(k + 1) * n1];
            for j in 0..n1 {
                y[j] = slice[j] / (g.weight(j) * h2);
            }
            tri.mul(&y, &mut t);
            slice.copy_from_slice(&t);
            self.bands[k - 1].solve(slice);
        }
        let _ = self.mode;
        solver.fft_inverse_rows(&modes)
    }
}

/// Projected preconditioned CG on the second variation. The residual is
/// re-projected every iteration: projecting the operator output alone lets
/// constraint-violating rounding remnants of the large pre-projection block
/// means pile up in the recurred residual, where the preconditioner and
/// projector then annihilate them and the recurrence degenerates. Once the
/// residual reaches its rounding floor (negative preconditioned product or
/// stagnation), the current iterate is returned; it is converged to
/// attainable precision and still a descent direction when truncated early.
fn solve_newton_system(
    solver: &EllipticSolver,
    hess: &HessianOp,
    pre: &StepPreconditioner,
    rhs: &BulkField,
    mode: BcMode,
    rel_tol: f64,
) -> BulkField {
    const STALL_WINDOW: usize = 10;
    let g = solver.grid();
    let rhs_norm = dot(rhs, rhs).max(0.0).sqrt();
    let mut x = BulkField::zeros(g);
    if rhs_norm == 0.0 {
        return x;
    }
    let mut r = rhs.clone();
    let mut z = pre.apply(solver, &r);
    project_mass_neutral(g, &mut z, mode);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut best_norm = rhs_norm;
    let mut stall = 0usize;
    for _ in 0..MAX_LINEAR_ITERS {
        let mut q = hess.apply(&p);
        project_mass_neutral(g, &mut q, mode);
        let pq = dot(&p, &q);
        if pq <= 0.0 {
            break;
        }
        let alpha = rz / pq;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &q);
        project_mass_neutral(g, &mut r, mode);
        let rnorm = dot(&r, &r).max(0.0).sqrt();
        if rnorm <= rel_tol * rhs_norm {
            break;
        }
        if rnorm < 0.9 * best_norm {
            best_norm = rnorm;
            stall = 0;
        } else {
            stall += 1;
            if stall >= STALL_WINDOW {
                break;
            }
        }
        z = pre.apply(solver, &r);
        project_mass_neutral(g, &mut z, mode);
        let rz_new = dot(&r, &z);
        if rz_new <= 0.0 {
            break;
        }
        let beta = rz_new / rz;
        rz = rz_new;
        let mut pnew = z.clone();
        axpy(&mut pnew, beta, &p);
        p = pnew;
    }
    x
}

/// Reusable stepping context: owns the preconditioner factorizations for one
/// (grid, parameters, wall mode) combination.
pub struct Stepper<'a> {
    solver: &'a EllipticSolver,
    p: ModelParams,
    cfg: SolverConfig,
    mode: BcMode,
    pre: StepPreconditioner,
}

impl<'a> Stepper<'a> {
    pub fn new(
        solver: &'a EllipticSolver,
        p: ModelParams,
        cfg: SolverConfig,
        mode: BcMode,
    ) -> Result<Self> {
        cfg.validate()?;
        let pre = StepPreconditioner::new(solver, &p, mode);
        Ok(Self {
            solver,
            p,
            cfg,
            mode,
            pre,
        })
    }

    pub fn mode(&self) -> BcMode {
        self.mode
    }

    pub fn params(&self) -> &ModelParams {
        &self.p
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Advance one step starting Newton from the previous state.
    pub fn advance(&self, phi_n: &AdmissiblePhase) -> Result<StepResult> {
        self.advance_with_guess(phi_n, phi_n)
    }

    /// Advance one step from an arbitrary admissible starting guess with the
    /// same masses as phi_n; exists to probe uniqueness of the minimizer.
    pub fn advance_with_guess(
        &self,
        phi_n: &AdmissiblePhase,
        guess: &AdmissiblePhase,
    ) -> Result<StepResult> {
        let g = self.solver.grid();
        let mut phi = guess.field().clone();
        let phi_old = phi_n.field();
        let mut newton_iters = 0usize;
        let mut residual;
        let mut multipliers;
        loop {
            let (fval, grad) =
                step_value_and_gradient(self.solver, &self.p, self.mode, &phi, phi_old)?;
            let (mults, mut proj, res) = split_gradient(g, &grad, self.mode);
            residual = res;
            multipliers = mults;
            if res <= self.cfg.newton_tol {
                break;
            }
            if newton_iters >= self.cfg.max_newton {
                return Err(Error::Solver {
                    what: "newton iteration budget exhausted",
                    residual: res,
                    iters: newton_iters,
                });
            }
            newton_iters += 1;

            for x in proj.values_mut() {
                *x = -*x;
            }
            let hess = HessianOp::new(self.solver, &self.p, &phi, self.mode)?;
            let d = solve_newton_system(
                self.solver,
                &hess,
                &self.pre,
                &proj,
                self.mode,
                self.cfg.linear_tol,
            );
            let gd = dot(&grad, &d);
            if !(gd < 0.0) {
                return Err(Error::Solver {
                    what: "newton direction is not a descent direction",
                    residual: gd,
                    iters: newton_iters,
                });
            }

            // Fraction-to-boundary cap. The barrier keeps the minimizer
            // interior; the cap protects the iterates on the way there. If
            // the current iterate already sits closer to +-1 than the
            // standing margin, hold its level rather than forcing t = 0.
            let bound = (1.0 - INTERIOR_MARGIN).max(phi.max_abs());
            let mut t_max = f64::INFINITY;
            for (x, dx) in phi.values().iter().zip(d.values()) {
                if *dx > 0.0 {
                    t_max = t_max.min((bound - x) / dx);
                } else if *dx < 0.0 {
                    t_max = t_max.min((-bound - x) / dx);
                }
            }
            let mut t = (self.cfg.fraction_to_boundary * t_max).min(1.0);
            let slack = 4.0 * f64::EPSILON * fval.abs();
            let mut accepted = false;
            for attempt in 0..MAX_BACKTRACKS {
                let mut trial = phi.clone();
                axpy(&mut trial, t, &d);
                let ftrial = step_value_raw(self.solver, &self.p, self.mode, &trial, phi_old)?;
                if ftrial <= fval + self.cfg.armijo_c * t * gd + slack {
                    phi = trial;
                    accepted = true;
                    break;
                }
                // Near the minimizer the true decrease drops below the
                // rounding noise of the objective (whose addends stay O(1)
                // however small the value), and the sufficient-decrease test
                // turns into a coin flip that starves the step. The
                // stationarity residual keeps full resolution there, so fall
                // back to it for the undamped trial: halving the residual is
                // certain progress for a strictly convex objective.
                if attempt == 0 {
                    let (_, trial_grad) =
                        step_value_and_gradient(self.solver, &self.p, self.mode, &trial, phi_old)?;
                    let (_, _, trial_res) = split_gradient(g, &trial_grad, self.mode);
                    if trial_res <= 0.5 * res {
                        phi = trial;
                        accepted = true;
                        break;
                    }
                }
                t *= self.cfg.backtrack_factor;
            }
            if !accepted {
                return Err(Error::Solver {
                    what: "line search failed to decrease the objective",
                    residual: res,
                    iters: newton_iters,
                });
            }
        }

        let phi = AdmissiblePhase::new(phi)?;
        let rec = recover_with_multipliers(
            self.solver,
            &self.p,
            phi.field(),
            phi_old,
            self.mode,
            multipliers,
        );
        let energy = total_energy(self.solver, &self.p, &phi, self.mode)?;
        let mut dissipation = self.p.s * grad_norm_sq(g, &rec.mu);
        if let Some(mb) = &rec.mu_b {
            dissipation += self.p.s * gamma_grad_norm_sq(g, mb);
        }
        if let Some(mt) = &rec.mu_t {
            dissipation += self.p.s * gamma_grad_norm_sq(g, mt);
        }
        let report = StepReport {
            newton_iters,
            final_residual: residual,
            energy,
            masses: MassTriple::of(g, phi.field()),
            dissipation,
        };
        Ok(StepResult {
            phi,
            mu: rec.mu,
            mu_b: rec.mu_b,
            mu_t: rec.mu_t,
            multipliers: (-rec.multipliers.0, -rec.multipliers.1, -rec.multipliers.2),
            report,
        })
    }
}

/// One dynamic-wall step with a throwaway stepper; prefer Stepper for runs.
pub fn advance(
    solver: &EllipticSolver,
    p: &ModelParams,
    cfg: &SolverConfig,
    phi_n: &AdmissiblePhase,
) -> Result<StepResult> {
    Stepper::new(solver, *p, *cfg, BcMode::Dynamic)?.advance(phi_n)
}

/// One plain no-flux step: bulk scheme only, single mass constraint.
pub fn advance_neumann(
    solver: &EllipticSolver,
    p: &ModelParams,
    cfg: &SolverConfig,
    phi_n: &AdmissiblePhase,
) -> Result<StepResult> {
    Stepper::new(solver, *p, *cfg, BcMode::Neumann)?.advance(phi_n)
}

fn recover_with_multipliers(
    solver: &EllipticSolver,
    p: &ModelParams,
    phi: &BulkField,
    phi_n: &BulkField,
    mode: BcMode,
    lambdas: (f64, f64, f64),
) -> RecoveredPotentials {
    let g = solver.grid();
    let n = g.n();
    let inv_s = 1.0 / p.s;
    let inv_eps = 1.0 / p.eps;
    let mut delta = phi.clone();
    for (d, x) in delta.values_mut().iter_mut().zip(phi_n.values()) {
        *d -= x;
    }
    let u = solver.solve_lh_raw(&delta);
    let mut mu = BulkField::zeros(g);
    for (m, uv) in mu.values_mut().iter_mut().zip(u.values()) {
        *m = -inv_s * uv + lambdas.0;
    }

    match mode {
        BcMode::Neumann => RecoveredPotentials {
            mu,
            mu_b: None,
            mu_t: None,
            ghost: phi.extend_even_reflection(),
            multipliers: lambdas,
        },
        BcMode::Dynamic => {
            let mut traces: Vec<BoundaryField> = Vec::with_capacity(2);
            for (tr, tr_n, lam) in [
                (phi.trace_bottom(), phi_n.trace_bottom(), lambdas.1),
                (phi.trace_top(), phi_n.trace_top(), lambdas.2),
            ] {
                let mut dtr = tr.clone();
                for (d, x) in dtr.values_mut().iter_mut().zip(tr_n.values()) {
                    *d -= x;
                }
                let v = solver.solve_neg_lap_gamma_raw(&dtr);
                let mut m = BoundaryField::zeros(g);
                for i in 0..n {
                    m.set(i, -inv_s * v.at(i) + lam);
                }
                traces.push(m);
            }
            let mu_t = traces.pop().expect("two traces");
            let mu_b = traces.pop().expect("two traces");

            // Ghost rows chosen so the trace potential equations hold
            // exactly: the wall-normal derivative absorbs the residual
            // between the trace chemistry and its potential.
            let tr_b = phi.trace_bottom();
            let tr_t = phi.trace_top();
            let lap_b = laplacian_gamma(g, &tr_b);
            let lap_t = laplacian_gamma(g, &tr_t);
            let mut ghost_bottom = BoundaryField::zeros(g);
            let mut ghost_top = BoundaryField::zeros(g);
            for i in 0..n {
                let (_, ipb, _) =
                    fh_potential(tr_b.at(i)).expect("admissible state inside the domain");
                let dnb = (inv_eps * (ipb - p.theta0 * phi_n.at(i, 0))
                    - p.kappa * lap_b.at(i)
                    - mu_b.at(i))
                    * inv_eps;
                ghost_bottom.set(i, phi.at(i, 1) - 2.0 * g.h() * dnb);
                let (_, ipt, _) =
                    fh_potential(tr_t.at(i)).expect("admissible state inside the domain");
                let dnt = (mu_t.at(i) - inv_eps * (ipt - p.theta0 * phi_n.at(i, n))
                    + p.kappa * lap_t.at(i))
                    * inv_eps;
                ghost_top.set(i, phi.at(i, n - 1) + 2.0 * g.h() * dnt);
            }
            let ghost = phi.extend_with_ghosts(&ghost_bottom, &ghost_top);
            RecoveredPotentials {
                mu,
                mu_b: Some(mu_b),
                mu_t: Some(mu_t),
                ghost,
                multipliers: lambdas,
            }
        }
    }
}

/// Reconstruct the potentials, constants, and ghost rows from a converged
/// state by re-deriving the multipliers from the stationarity split.
pub fn recover_potentials(
    solver: &EllipticSolver,
    p: &ModelParams,
    phi: &AdmissiblePhase,
    phi_n: &AdmissiblePhase,
    mode: BcMode,
) -> Result<RecoveredPotentials> {
    let (_, grad) = step_value_and_gradient(solver, p, mode, phi.field(), phi_n.field())?;
    let (lambdas, _, _) = split_gradient(solver.grid(), &grad, mode);
    Ok(recover_with_multipliers(
        solver,
        p,
        phi.field(),
        phi_n.field(),
        mode,
        lambdas,
    ))
}

/// Evaluate every scheme equation with raw stencils on the recovered
/// fields; this is the independent check that a returned step actually
/// solves the coupled system, not just the optimizer's own metric.
pub fn scheme_residual(
    solver: &EllipticSolver,
    p: &ModelParams,
    result: &StepResult,
    phi_n: &AdmissiblePhase,
    mode: BcMode,
) -> Result<SchemeResiduals> {
    let g = solver.grid();
    let n = g.n();
    let inv_eps = 1.0 / p.eps;
    let phi = result.phi.field();
    let phi_old = phi_n.field();
    let rec = recover_potentials(solver, p, &result.phi, phi_n, mode)?;

    let mu_ghost = rec.mu.extend_even_reflection();
    let lap_mu = laplacian_5pt(g, &mu_ghost);
    let lap_phi = laplacian_5pt(g, &rec.ghost);
    let mut bulk_update = 0.0_f64;
    let mut bulk_potential = 0.0_f64;
    for j in 0..=n {
        for i in 0..n {
            let upd = (phi.at(i, j) - phi_old.at(i, j)) / p.s - lap_mu.at(i, j);
            bulk_update = bulk_update.max(upd.abs());
            let (_, ip, _) = fh_potential(phi.at(i, j))?;
            let pot = rec.mu.at(i, j) - inv_eps * (ip - p.theta0 * phi_old.at(i, j))
                + p.eps * lap_phi.at(i, j);
            bulk_potential = bulk_potential.max(pot.abs());
        }
    }
    let mu_neumann = boundary_normal_derivative(g, &mu_ghost, Side::Bottom)
        .max_abs()
        .max(boundary_normal_derivative(g, &mu_ghost, Side::Top).max_abs());

    if mode == BcMode::Neumann {
        return Ok(SchemeResiduals {
            bulk_update,
            bulk_potential,
            mu_neumann,
            bottom_update: None,
            bottom_potential: None,
            top_update: None,
            top_potential: None,
        });
    }

    let mu_b = rec
        .mu_b
        .as_ref()
        .expect("dynamic mode has trace potentials");
    let mu_t = rec
        .mu_t
        .as_ref()
        .expect("dynamic mode has trace potentials");
    let mut out = [0.0_f64; 4];
    for (idx, (tr, tr_n, m, side, sign)) in [
        (
            phi.trace_bottom(),
            phi_old.trace_bottom(),
            mu_b,
            Side::Bottom,
            1.0,
        ),
        (phi.trace_top(), phi_old.trace_top(), mu_t, Side::Top, -1.0),
    ]
    .into_iter()
    .enumerate()
    {
        let lap_m = laplacian_gamma(g, m);
        let lap_tr = laplacian_gamma(g, &tr);
        let dn = boundary_normal_derivative(g, &rec.ghost, side);
        let mut upd = 0.0_f64;
        let mut pot = 0.0_f64;
        for i in 0..n {
            upd = upd.max(((tr.at(i) - tr_n.at(i)) / p.s - lap_m.at(i)).abs());
            let (_, ip, _) = fh_potential(tr.at(i))?;
            let r = m.at(i) - inv_eps * (ip - p.theta0 * tr_n.at(i))
                + p.kappa * lap_tr.at(i)
                + sign * p.eps * dn.at(i);
            pot = pot.max(r.abs());
        }
        out[2 * idx] = upd;
        out[2 * idx + 1] = pot;
    }
    Ok(SchemeResiduals {
        bulk_update,
        bulk_potential,
        mu_neumann,
        bottom_update: Some(out[0]),
        bottom_potential: Some(out[1]),
        top_update: Some(out[2]),
        top_potential: Some(out[3]),
    })
}
