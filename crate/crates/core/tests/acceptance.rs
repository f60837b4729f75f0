//! Acceptance gate: one test per criterion, each printing a single
//! `criterion k (...): PASS|FAIL` line with the measured numbers beneath.
//! Expensive trajectories are computed once and shared between criteria.
//! Run with `--nocapture` (and `--test-threads=1` for ordered output) to
//! see the lines for passing criteria too.

use std::path::PathBuf;
use std::sync::OnceLock;

use chdbc::checks::run_all;
use chdbc::elliptic::ConstantMassFunction;
use chdbc::energy::{AdmissiblePhase, BcMode, ModelParams};
use chdbc::grid::{BulkField, GridParams};
use chdbc::harness::{
    convergence_study, default_convergence_grids, make_initial, run_simulation, ConvergenceReport,
    InitialCondition, RunConfig, RunOutput,
};
use chdbc::stepper::{scheme_residual, SolverConfig, Stepper};

fn out_dir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("chdbc_acceptance_{}_{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn verdict(k: usize, label: &str, pass: bool) {
    println!(
        "criterion {k} ({label}): {}",
        if pass { "PASS" } else { "FAIL" }
    );
}

// ---------------------------------------------------------------- shared runs

/// Stopping tolerance for the spinodal trajectory. Its first step removes
/// the white-noise component wholesale, and the stationarity residual of a
/// step that large has a rounding floor near 2e-10 at N = 128, s = 1e-5
/// (the floor scales like eps_mach |dphi| / s); the default 1e-10 can never
/// be certified there. Criterion 6 scales with the configured tolerance.
const SPINODAL_NEWTON_TOL: f64 = 1e-9;

/// Spinodal decomposition: N = 128, s = 1e-5, eps = 0.02, theta0 = 3,
/// kappa = 1, seed = 1, 1000 steps, dynamic walls. Feeds criteria 3, 4, 6.
fn spinodal_run() -> &'static RunOutput {
    static CELL: OnceLock<RunOutput> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = RunConfig {
            grid: GridParams::new(128).unwrap(),
            params: ModelParams::new(0.02, 1.0, 3.0, 1e-5).unwrap(),
            solver: SolverConfig {
                newton_tol: SPINODAL_NEWTON_TOL,
                ..SolverConfig::default()
            },
            ic: InitialCondition::spinodal(1),
            mode: BcMode::Dynamic,
            t_final: 1e-2,
            snapshot_times: vec![],
            out_dir: out_dir("spinodal"),
            verify_residuals: true,
        };
        run_simulation(&cfg).expect("spinodal run must complete")
    })
}

/// Two droplets sitting on the bottom wall, Neumann mode: the bulk mass is
/// conserved while the bottom trace exchanges freely. Feeds criteria 4, 6.
fn neumann_run() -> &'static RunOutput {
    static CELL: OnceLock<RunOutput> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = RunConfig {
            grid: GridParams::new(64).unwrap(),
            params: ModelParams::new(0.05, 1.0, 3.0, 1e-5).unwrap(),
            solver: SolverConfig::default(),
            ic: InitialCondition::two_droplets(),
            mode: BcMode::Neumann,
            t_final: 1e-3,
            snapshot_times: vec![],
            out_dir: out_dir("neumann"),
            verify_residuals: true,
        };
        run_simulation(&cfg).expect("neumann run must complete")
    })
}

struct StressOutcome {
    step_max_abs: Vec<f64>,
    worst_residual: f64,
}

/// Positivity stress: start at max|phi| = 0.99 and take 200 implicit steps.
/// Completion alone proves no evaluation ever saw |x| >= 1, because the
/// mixing potential rejects such arguments with a hard error. Feeds
/// criteria 5, 6.
fn stress_run() -> &'static StressOutcome {
    static CELL: OnceLock<StressOutcome> = OnceLock::new();
    CELL.get_or_init(|| {
        let g = GridParams::new(64).unwrap();
        let p = ModelParams::new(0.02, 1.0, 3.0, 1e-5).unwrap();
        let cfg = SolverConfig::default();
        let solver = chdbc::elliptic::EllipticSolver::new(g);
        let stepper = Stepper::new(&solver, p, cfg, BcMode::Dynamic).unwrap();
        let h = g.h();
        let f0 = BulkField::from_fn(g, |i, j| {
            let x = i as f64 * h;
            let y = j as f64 * h;
            0.99 * (4.0 * std::f64::consts::PI * x).cos() * (4.0 * std::f64::consts::PI * y).cos()
        });
        assert_eq!(f0.max_abs(), 0.99, "the stress start must peak at 0.99");
        let mut phi = AdmissiblePhase::new(f0).unwrap();
        let mut step_max_abs = Vec::with_capacity(200);
        let mut worst_residual = 0.0_f64;
        for _ in 0..200 {
            let out = stepper.advance(&phi).expect("stress step must complete");
            let sr = scheme_residual(&solver, &p, &out, &phi, BcMode::Dynamic).unwrap();
            worst_residual = worst_residual.max(sr.max_abs());
            step_max_abs.push(out.phi.field().max_abs());
            phi = out.phi;
        }
        StressOutcome {
            step_max_abs,
            worst_residual,
        }
    })
}

/// Cauchy refinement study on grids 16..128 with the pinned parameters.
/// Feeds criterion 2.
fn study() -> &'static ConvergenceReport {
    static CELL: OnceLock<ConvergenceReport> = OnceLock::new();
    CELL.get_or_init(|| {
        convergence_study(&default_convergence_grids(false), &SolverConfig::default())
            .expect("refinement study must complete")
    })
}

// ------------------------------------------------------------------ criteria

#[test]
fn criterion_1_operator_correctness() {
    let outcomes = run_all(&[4, 8]);
    assert_eq!(
        outcomes.len(),
        20,
        "expected ten checks on each of two grids"
    );
    let mut pass = true;
    for c in &outcomes {
        if !c.passed() {
            pass = false;
        }
        assert!(
            c.tol <= 1e-5,
            "check {} runs at tolerance {:.1e}, looser than advertised",
            c.name,
            c.tol
        );
    }
    verdict(1, "operator correctness", pass);
    for c in &outcomes {
        println!(
            "  {:<34} N={:<3} max_err={:.3e} tol={:.1e}{}",
            c.name,
            c.n,
            c.max_err,
            c.tol,
            if c.passed() { "" } else { "  <-- FAIL" }
        );
    }
    assert!(pass, "an operator check exceeded its tolerance");
}

#[test]
fn criterion_2_refinement_study() {
    // Reference Cauchy-difference magnitudes and doubling rates for the
    // pinned configuration (eps = 0.02, kappa = 0.02, theta0 = 3,
    // s = 0.001 h^2, T = 0.001, cosine start), pairs 16-32, 32-64, 64-128.
    const REF_WHOLE_L2: [f64; 3] = [1.7003e-2, 4.0737e-3, 9.9197e-4];
    const REF_WHOLE_LINF: [f64; 3] = [2.7768e-2, 7.7649e-3, 2.1448e-3];
    const REF_WHOLE_L2_RATE: [f64; 2] = [2.1024, 2.0569];
    const REF_BOUNDARY_L2: [f64; 3] = [3.0401e-2, 7.6736e-3, 1.9241e-3];
    const REF_BOUNDARY_LINF: [f64; 3] = [2.7768e-2, 6.9293e-3, 1.7708e-3];
    const REF_BOUNDARY_L2_RATE: [f64; 2] = [1.9861, 1.9957];

    let report = study();
    let whole = &report.whole_domain;
    let bottom = &report.boundary_bottom;
    assert_eq!(whole.len(), 3);
    assert_eq!(bottom.len(), 3);

    let mut pass = true;
    let mut detail = Vec::new();
    let mut rate = |name: &str, got: Option<f64>, want: f64, band: f64| {
        let got = got.expect("rate rows past the first always carry rates");
        let ok = (got - want).abs() <= band;
        pass &= ok;
        detail.push(format!(
            "  rate {name:<22} got {got:+.4}, want {want:.4} +- {band}{}",
            if ok { "" } else { "  <-- FAIL" }
        ));
    };
    rate(
        "whole l2 32-64",
        whole[1].l2_rate,
        REF_WHOLE_L2_RATE[0],
        0.1,
    );
    rate(
        "whole l2 64-128",
        whole[2].l2_rate,
        REF_WHOLE_L2_RATE[1],
        0.1,
    );
    rate(
        "boundary l2 32-64",
        bottom[1].l2_rate,
        REF_BOUNDARY_L2_RATE[0],
        0.05,
    );
    rate(
        "boundary l2 64-128",
        bottom[2].l2_rate,
        REF_BOUNDARY_L2_RATE[1],
        0.05,
    );

    let mut magnitude = |name: &str, got: f64, want: f64| {
        let ok = got >= 0.5 * want && got <= 2.0 * want;
        pass &= ok;
        detail.push(format!(
            "  size {name:<22} got {got:.4e}, want within 2x of {want:.4e}{}",
            if ok { "" } else { "  <-- FAIL" }
        ));
    };
    for (k, row) in whole.iter().enumerate() {
        let pair = format!("{}-{}", row.n_coarse, row.n_fine);
        magnitude(&format!("whole l2 {pair}"), row.l2, REF_WHOLE_L2[k]);
        magnitude(&format!("whole linf {pair}"), row.linf, REF_WHOLE_LINF[k]);
        magnitude(
            &format!("boundary l2 {pair}"),
            bottom[k].l2,
            REF_BOUNDARY_L2[k],
        );
        magnitude(
            &format!("boundary linf {pair}"),
            bottom[k].linf,
            REF_BOUNDARY_LINF[k],
        );
    }

    verdict(2, "refinement study", pass);
    for line in &detail {
        println!("{line}");
    }
    assert!(
        pass,
        "refinement study disagrees with the reference values:\n{}",
        detail.join("\n")
    );
}

#[test]
fn criterion_3_energy_dissipation() {
    let run = spinodal_run();
    assert_eq!(run.steps.len(), 1000);
    // E(next) + s (|grad mu|^2 + |Dx mu_B|^2 + |Dx mu_T|^2) <= E(prev) with
    // slack 1e-10 max(1, |E|); `dissipation` is exactly the middle term.
    let mut prev = run.initial_energy;
    let mut worst_margin = f64::NEG_INFINITY;
    for rec in &run.steps {
        let slack = 1e-10 * prev.abs().max(1.0);
        worst_margin = worst_margin.max(rec.energy + rec.dissipation - prev - slack);
        prev = rec.energy;
    }
    let pass = worst_margin <= 0.0;
    verdict(3, "energy dissipation", pass);
    println!(
        "  1000 steps, E: {:.6} -> {:.6}, worst inequality margin {:+.3e} (<= 0 required)",
        run.initial_energy,
        run.steps.last().unwrap().energy,
        worst_margin
    );
    assert!(pass, "energy inequality violated by {worst_margin:.3e}");
}

#[test]
fn criterion_4_mass_conservation() {
    let run = spinodal_run();
    let mut worst_dynamic = 0.0_f64;
    for rec in &run.steps {
        worst_dynamic = worst_dynamic
            .max(rec.mass_bulk_drift.abs())
            .max(rec.mass_bottom_drift.abs())
            .max(rec.mass_top_drift.abs());
    }
    let dynamic_ok = worst_dynamic <= 1e-8;

    let nrun = neumann_run();
    let mut worst_bulk = 0.0_f64;
    for rec in &nrun.steps {
        worst_bulk = worst_bulk.max(rec.mass_bulk_drift.abs());
    }
    let trace_change = nrun.steps.last().unwrap().mass_bottom_drift.abs();
    let neumann_ok = worst_bulk <= 1e-8 && trace_change >= 1e-6;

    let pass = dynamic_ok && neumann_ok;
    verdict(4, "mass conservation", pass);
    println!("  dynamic: worst of three drifts {worst_dynamic:.3e} (<= 1e-8)");
    println!(
        "  neumann: bulk drift {worst_bulk:.3e} (<= 1e-8), bottom-trace mean moved {trace_change:.3e} (>= 1e-6)"
    );
    assert!(
        pass,
        "dynamic drift {worst_dynamic:.3e}, neumann bulk drift {worst_bulk:.3e}, trace change {trace_change:.3e}"
    );
}

#[test]
fn criterion_5_positivity_stress() {
    let stress = stress_run();
    assert_eq!(stress.step_max_abs.len(), 200);
    let peak = stress.step_max_abs.iter().cloned().fold(0.0, f64::max);
    let pass = peak < 1.0;
    verdict(5, "positivity stress", pass);
    println!(
        "  200 steps from max|phi| = 0.99: largest max|phi| afterwards {peak:.12} (< 1 required)"
    );
    println!("  completion itself certifies the mixing potential never saw |x| >= 1");
    assert!(pass, "a step reached max|phi| = {peak}");
}

#[test]
fn criterion_6_scheme_equivalence() {
    let default_tol = 10.0 * SolverConfig::default().newton_tol;
    let spin_tol = 10.0 * SPINODAL_NEWTON_TOL;
    let spin = spinodal_run().max_scheme_residual.unwrap();
    let neum = neumann_run().max_scheme_residual.unwrap();
    let stress = stress_run().worst_residual;
    let residual_ok = spin <= spin_tol && neum <= default_tol && stress <= default_tol;

    // Perturbation probe: corrupt one interior node of a converged solution
    // by 1e-3, rebalance the interior block so all three masses still match,
    // and demand the raw stencil residuals notice.
    let g = GridParams::new(32).unwrap();
    let n = g.n();
    let solver = chdbc::elliptic::EllipticSolver::new(g);
    let p = ModelParams::new(0.05, 0.05, 3.0, 1e-4).unwrap();
    let stepper = Stepper::new(&solver, p, SolverConfig::default(), BcMode::Dynamic).unwrap();
    let phi_n = make_initial(&InitialCondition::spinodal(17), g).unwrap();
    let mut out = stepper.advance(&phi_n).unwrap();
    let clean = scheme_residual(&solver, &p, &out, &phi_n, BcMode::Dynamic)
        .unwrap()
        .max_abs();
    let bump = 1e-3;
    let mut f = out.phi.field().clone();
    f.set(2, 3, f.at(2, 3) + bump);
    let comp = bump / ((n * (n - 1)) as f64);
    for j in 1..n {
        for x in f.row_mut(j) {
            *x -= comp;
        }
    }
    out.phi = AdmissiblePhase::new(f).unwrap();
    let corrupted = scheme_residual(&solver, &p, &out, &phi_n, BcMode::Dynamic)
        .unwrap()
        .max_abs();
    let probe_ok = clean <= default_tol && corrupted >= 1e-4;

    let pass = residual_ok && probe_ok;
    verdict(6, "scheme equivalence", pass);
    println!(
        "  worst raw residual: spinodal {spin:.3e} (<= {spin_tol:.1e}), \
         neumann {neum:.3e}, stress {stress:.3e} (<= {default_tol:.1e})"
    );
    println!("  probe: clean step {clean:.3e}, corrupted step {corrupted:.3e} (>= 1e-4 required)");
    assert!(
        pass,
        "residuals ({spin:.3e}, {neum:.3e}, {stress:.3e}); probe {corrupted:.3e}"
    );
}

#[test]
fn criterion_7_uniqueness_determinism() {
    let g = GridParams::new(32).unwrap();
    let solver = chdbc::elliptic::EllipticSolver::new(g);
    let p = ModelParams::new(0.05, 0.05, 3.0, 1e-4).unwrap();
    let cfg = SolverConfig::default();
    let stepper = Stepper::new(&solver, p, cfg, BcMode::Dynamic).unwrap();
    let phi_n = make_initial(&InitialCondition::spinodal(9), g).unwrap();
    let a = stepper.advance(&phi_n).unwrap();
    let cm = ConstantMassFunction::matching(g, phi_n.field());
    let guess = AdmissiblePhase::new(cm.to_bulk(g)).unwrap();
    let b = stepper.advance_with_guess(&phi_n, &guess).unwrap();
    let mut disagreement = 0.0_f64;
    for (x, y) in a.phi.field().values().iter().zip(b.phi.field().values()) {
        disagreement = disagreement.max((x - y).abs());
    }
    let unique_ok = disagreement <= 10.0 * cfg.newton_tol;

    let mk = |tag: &str| RunConfig {
        grid: g,
        params: p,
        solver: cfg,
        ic: InitialCondition::spinodal(5),
        mode: BcMode::Dynamic,
        t_final: 2e-4,
        snapshot_times: vec![],
        out_dir: out_dir(tag),
        verify_residuals: false,
    };
    let r1 = run_simulation(&mk("repeat_a")).unwrap();
    let r2 = run_simulation(&mk("repeat_b")).unwrap();
    let mut bitwise = r1.steps.len() == r2.steps.len();
    for (s1, s2) in r1.steps.iter().zip(&r2.steps) {
        bitwise &= s1.energy.to_bits() == s2.energy.to_bits()
            && s1.residual.to_bits() == s2.residual.to_bits();
    }
    for (x, y) in r1
        .final_phi
        .field()
        .values()
        .iter()
        .zip(r2.final_phi.field().values())
    {
        bitwise &= x.to_bits() == y.to_bits();
    }

    let pass = unique_ok && bitwise;
    verdict(7, "uniqueness and determinism", pass);
    println!(
        "  two starting guesses land {disagreement:.3e} apart (<= {:.1e})",
        10.0 * cfg.newton_tol
    );
    println!(
        "  repeated 20-step runs bitwise identical: {}",
        if bitwise { "yes" } else { "no" }
    );
    assert!(
        pass,
        "disagreement {disagreement:.3e}, bitwise identical: {bitwise}"
    );
}
