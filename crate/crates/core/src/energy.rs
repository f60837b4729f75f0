//! Logarithmic mixing potential, the discrete free energy with wall
//! contributions, and the strictly convex per-step objective whose minimizer
//! is the implicit update. First and second variations are exposed in plain
//! nodal coordinates so the Newton solver can keep the three mass-constraint
//! multipliers explicit.
//!
//! Splitting: the logarithmic part and all stiffness terms are implicit
//! (inside the objective), the expansive quadratic part enters explicitly
//! through the previous state, which makes the objective strictly convex on
//! the mass-compatible slice and yields unconditional energy stability.

use crate::elliptic::{EllipticSolver, MassTriple};
use crate::grid::{
    gamma_grad_norm_sq, inner_gamma, inner_omega, integral_gamma, integral_omega, laplacian_gamma,
    BoundaryField, BulkField, GridParams,
};
use crate::{Error, Result};

/// Physical and stepping parameters, all strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Bulk diffuse-interface width.
    pub eps: f64,
    /// Surface diffuse-interface parameter.
    pub kappa: f64,
    /// Expansive (demixing) coefficient.
    pub theta0: f64,
    /// Time-step size.
    pub s: f64,
}

impl ModelParams {
    pub fn new(eps: f64, kappa: f64, theta0: f64, s: f64) -> Result<Self> {
        for (name, v) in [
            ("eps", eps),
            ("kappa", kappa),
            ("theta0", theta0),
            ("dt", s),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be a positive finite number, got {v}"
                )));
            }
        }
        Ok(Self {
            eps,
            kappa,
            theta0,
            s,
        })
    }
}

/// Which wall physics the step solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcMode {
    /// Wall traces evolve by their own conserved lower-dimensional flow,
    /// coupled to the bulk through the wall-normal derivative.
    Dynamic,
    /// Plain no-flux walls: even reflection for both fields, no trace
    /// equations, only the bulk mass is conserved.
    Neumann,
}

/// Phase field strictly inside (-1, 1) at every node, so the logarithms in
/// the potential are defined.
#[derive(Debug, Clone)]
pub struct AdmissiblePhase {
    f: BulkField,
}

impl AdmissiblePhase {
    /// Validate strict interiority: max|phi| <= 1 - 1e-14 and finite.
    pub fn new(f: BulkField) -> Result<Self> {
        if !f.all_finite() {
            return Err(Error::Domain(f64::NAN));
        }
        let m = f.max_abs();
        if m > 1.0 - 1e-14 {
            return Err(Error::Domain(m));
        }
        Ok(Self { f })
    }

    pub fn field(&self) -> &BulkField {
        &self.f
    }

    pub fn into_field(self) -> BulkField {
        self.f
    }
}

/// Convex mixing entropy I(x) = (1+x)ln(1+x) + (1-x)ln(1-x) with its first
/// two derivatives; defined only for |x| < 1.
pub fn fh_potential(x: f64) -> Result<(f64, f64, f64)> {
    if !(x > -1.0 && x < 1.0) {
        return Err(Error::Domain(x));
    }
    let lp = x.ln_1p();
    let lm = (-x).ln_1p();
    Ok((
        (1.0 + x) * lp + (1.0 - x) * lm,
        lp - lm,
        1.0 / (1.0 + x) + 1.0 / (1.0 - x),
    ))
}

/// I and I' evaluated nodewise over a bulk field.
fn potential_fields(f: &BulkField, g: GridParams) -> Result<(BulkField, BulkField)> {
    let mut val = BulkField::zeros(g);
    let mut der = BulkField::zeros(g);
    for j in 0..=g.n() {
        for i in 0..g.n() {
            let (iv, id, _) = fh_potential(f.at(i, j))?;
            val.set(i, j, iv);
            der.set(i, j, id);
        }
    }
    Ok((val, der))
}

fn potential_trace(f: &BoundaryField, g: GridParams) -> Result<(BoundaryField, BoundaryField)> {
    let mut val = BoundaryField::zeros(g);
    let mut der = BoundaryField::zeros(g);
    for i in 0..g.n() {
        let (iv, id, _) = fh_potential(f.at(i))?;
        val.set(i, iv);
        der.set(i, id);
    }
    Ok((val, der))
}

/// Total discrete free energy: entropy minus the expansive quadratic over
/// the bulk and both traces, bulk Dirichlet energy through L_h, and trace
/// Dirichlet energies. In Neumann mode only the bulk terms exist.
pub fn total_energy(
    solver: &EllipticSolver,
    p: &ModelParams,
    phi: &AdmissiblePhase,
    mode: BcMode,
) -> Result<f64> {
    let g = solver.grid();
    let f = phi.field();
    let (ival, _) = potential_fields(f, g)?;
    let mut e = (integral_omega(g, &ival) - 0.5 * p.theta0 * inner_omega(g, f, f)) / p.eps
        + 0.5 * p.eps * inner_omega(g, f, &solver.apply_lh(f));
    if mode == BcMode::Dynamic {
        for trace in [f.trace_bottom(), f.trace_top()] {
            let (tval, _) = potential_trace(&trace, g)?;
            e += (integral_gamma(g, &tval) - 0.5 * p.theta0 * inner_gamma(g, &trace, &trace))
                / p.eps
                + 0.5 * p.kappa * gamma_grad_norm_sq(g, &trace);
        }
    }
    Ok(e)
}

fn check_mass_compatible(
    g: GridParams,
    phi: &BulkField,
    phi_n: &BulkField,
    mode: BcMode,
) -> Result<()> {
    let a = MassTriple::of(g, phi);
    let b = MassTriple::of(g, phi_n);
    let checks: &[(&str, f64)] = match mode {
        BcMode::Dynamic => &[
            ("bulk mass", a.bulk - b.bulk),
            ("bottom-trace mass", a.bottom - b.bottom),
            ("top-trace mass", a.top - b.top),
        ],
        BcMode::Neumann => &[("bulk mass", a.bulk - b.bulk)],
    };
    for &(what, diff) in checks {
        if diff.abs() > 1e-12 {
            return Err(Error::MassIncompatible { what, diff });
        }
    }
    Ok(())
}

/// Shared evaluation core: objective value, and optionally the plain nodal
/// gradient. The quadratic history terms reuse the same inverse solves for
/// both outputs.
fn step_eval(
    solver: &EllipticSolver,
    p: &ModelParams,
    mode: BcMode,
    phi: &BulkField,
    phi_n: &BulkField,
    want_grad: bool,
) -> Result<(f64, Option<BulkField>)> {
    let g = solver.grid();
    let h = g.h();
    let n = g.n();
    let mut delta = phi.clone();
    for (d, x) in delta.values_mut().iter_mut().zip(phi_n.values()) {
        *d -= x;
    }
    let u = solver.solve_lh_raw(&delta);
    let lphi = solver.apply_lh(phi);
    let (ival, ider) = potential_fields(phi, g)?;

    let inv_s = 1.0 / p.s;
    let inv_eps = 1.0 / p.eps;
    let mut value = 0.5 * inv_s * inner_omega(g, &delta, &u)
        + inv_eps * integral_omega(g, &ival)
        + 0.5 * p.eps * inner_omega(g, phi, &lphi)
        - inv_eps * p.theta0 * inner_omega(g, phi_n, phi);

    let mut grad = if want_grad {
        let mut out = BulkField::zeros(g);
        let h2 = h * h;
        for j in 0..=n {
            let w = g.weight(j) * h2;
            for i in 0..n {
                let b = inv_s * u.at(i, j)
                    + inv_eps * (ider.at(i, j) - p.theta0 * phi_n.at(i, j))
                    + p.eps * lphi.at(i, j);
                out.set(i, j, w * b);
            }
        }
        Some(out)
    } else {
        None
    };

    if mode == BcMode::Dynamic {
        for (row, is_bottom) in [(0usize, true), (n, false)] {
            let tr: BoundaryField = if is_bottom {
                phi.trace_bottom()
            } else {
                phi.trace_top()
            };
            let tr_n: BoundaryField = if is_bottom {
                phi_n.trace_bottom()
            } else {
                phi_n.trace_top()
            };
            let mut dtr = tr.clone();
            for (d, x) in dtr.values_mut().iter_mut().zip(tr_n.values()) {
                *d -= x;
            }
            let v = solver.solve_neg_lap_gamma_raw(&dtr);
            let lap_tr = laplacian_gamma(g, &tr);
            let (tval, tder) = potential_trace(&tr, g)?;
            value += 0.5 * inv_s * inner_gamma(g, &dtr, &v) + inv_eps * integral_gamma(g, &tval)
                - 0.5 * p.kappa * inner_gamma(g, &tr, &lap_tr)
                - inv_eps * p.theta0 * inner_gamma(g, &tr_n, &tr);
            if let Some(out) = grad.as_mut() {
                for i in 0..n {
                    let gam = inv_s * v.at(i) + inv_eps * (tder.at(i) - p.theta0 * tr_n.at(i))
                        - p.kappa * lap_tr.at(i);
                    let k = out.at(i, row) + h * gam;
                    out.set(i, row, k);
                }
            }
        }
    }

    Ok((value, grad))
}

pub(crate) fn step_value_raw(
    solver: &EllipticSolver,
    p: &ModelParams,
    mode: BcMode,
    phi: &BulkField,
    phi_n: &BulkField,
) -> Result<f64> {
    Ok(step_eval(solver, p, mode, phi, phi_n, false)?.0)
}

pub(crate) fn step_value_and_gradient(
    solver: &EllipticSolver,
    p: &ModelParams,
    mode: BcMode,
    phi: &BulkField,
    phi_n: &BulkField,
) -> Result<(f64, BulkField)> {
    let (v, grd) = step_eval(solver, p, mode, phi, phi_n, true)?;
    Ok((v, grd.expect("gradient requested")))
}

/// The per-step objective. Requires phi and phi_n to carry identical masses
/// (the history metric terms are defined only on that slice).
pub fn step_functional(
    solver: &EllipticSolver,
    p: &ModelParams,
    phi: &AdmissiblePhase,
    phi_n: &AdmissiblePhase,
    mode: BcMode,
) -> Result<f64> {
    check_mass_compatible(solver.grid(), phi.field(), phi_n.field(), mode)?;
    step_value_raw(solver, p, mode, phi.field(), phi_n.field())
}

/// Plain nodal partial derivatives of the step objective. Paired against a
/// direction with the plain (unweighted) dot product this reproduces the
/// directional derivative for every mass-neutral direction.
pub fn step_gradient(
    solver: &EllipticSolver,
    p: &ModelParams,
    phi: &AdmissiblePhase,
    phi_n: &AdmissiblePhase,
    mode: BcMode,
) -> Result<BulkField> {
    check_mass_compatible(solver.grid(), phi.field(), phi_n.field(), mode)?;
    Ok(step_value_and_gradient(solver, p, mode, phi.field(), phi_n.field())?.1)
}

/// Second variation at a fixed state: the logarithmic diagonal is frozen at
/// construction so repeated applications inside an inner linear solve reuse
/// it.
pub struct HessianOp<'a> {
    solver: &'a EllipticSolver,
    p: ModelParams,
    mode: BcMode,
    /// I'' at the current state, all nodes.
    second: BulkField,
}

impl<'a> HessianOp<'a> {
    pub fn new(
        solver: &'a EllipticSolver,
        p: &ModelParams,
        phi: &BulkField,
        mode: BcMode,
    ) -> Result<Self> {
        let g = solver.grid();
        let mut second = BulkField::zeros(g);
        for j in 0..=g.n() {
            for i in 0..g.n() {
                let (_, _, isec) = fh_potential(phi.at(i, j))?;
                second.set(i, j, isec);
            }
        }
        Ok(Self {
            solver,
            p: *p,
            mode,
            second,
        })
    }

    /// Apply the Hessian to a mass-neutral direction, in plain coordinates.
    pub fn apply(&self, d: &BulkField) -> BulkField {
        let g = self.solver.grid();
        let n = g.n();
        let h = g.h();
        let h2 = h * h;
        let inv_s = 1.0 / self.p.s;
        let inv_eps = 1.0 / self.p.eps;
        let u = self.solver.solve_lh_raw(d);
        let ld = self.solver.apply_lh(d);
        let mut out = BulkField::zeros(g);
        for j in 0..=n {
            let w = g.weight(j) * h2;
            for i in 0..n {
                let b = inv_s * u.at(i, j)
                    + inv_eps * self.second.at(i, j) * d.at(i, j)
                    + self.p.eps * ld.at(i, j);
                out.set(i, j, w * b);
            }
        }
        if self.mode == BcMode::Dynamic {
            for (row, is_bottom) in [(0usize, true), (n, false)] {
                let dtr = if is_bottom {
                    d.trace_bottom()
                } else {
                    d.trace_top()
                };
                let v = self.solver.solve_neg_lap_gamma_raw(&dtr);
                let lap = laplacian_gamma(g, &dtr);
                for i in 0..n {
                    let gam = inv_s * v.at(i) + inv_eps * self.second.at(i, row) * dtr.at(i)
                        - self.p.kappa * lap.at(i);
                    let k = out.at(i, row) + h * gam;
                    out.set(i, row, k);
                }
            }
        }
        out
    }
}

/// One-shot Hessian action, for verification against finite differences.
pub fn hessian_apply(
    solver: &EllipticSolver,
    p: &ModelParams,
    phi: &AdmissiblePhase,
    d: &BulkField,
    mode: BcMode,
) -> Result<BulkField> {
    Ok(HessianOp::new(solver, p, phi.field(), mode)?.apply(d))
}
