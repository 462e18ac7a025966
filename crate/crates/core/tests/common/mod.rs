//! Shared generators and oracles for the integration suites.
#![allow(dead_code)] // each test target uses a different subset

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use lindahl_core::capped::CappedSolution;
use lindahl_core::conic::{emit_conic, import_solution, ConicProgram, RowCmp};
use lindahl_core::dynamics::eg_objective;
use lindahl_core::model::{check_cap_sufficient, Cap, Instance};
use lindahl_core::splc::{harmonize_segments, check_well_behaved, PlcFunction, SplcInstance};

/// Random uncapped instance with continuous valuations; every agent values
/// at least one project. Unsupported projects are dropped by construction.
pub fn random_uncapped(rng: &mut ChaCha8Rng, n_max: usize, m_max: usize) -> Instance {
    let n = rng.gen_range(2..=n_max.max(2));
    let m = rng.gen_range(2..=m_max.max(2));
    let budgets: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row: Vec<(usize, f64)> = Vec::new();
        for j in 0..m {
            if rng.gen_bool(0.7) {
                row.push((j, rng.gen_range(0.5..3.0)));
            }
        }
        if row.is_empty() {
            let j = rng.gen_range(0..m);
            row.push((j, rng.gen_range(0.5..3.0)));
        }
        rows.push(row);
    }
    Instance::uncapped(budgets, rows).unwrap()
}

/// Random capped, cap-sufficient instance (rejection sampling).
pub fn random_cap_sufficient(rng: &mut ChaCha8Rng, n_max: usize, m_max: usize) -> Instance {
    loop {
        let base = random_uncapped(rng, n_max, m_max);
        let b = base.total_budget();
        let caps: Vec<Cap> = (0..base.m())
            .map(|_| {
                if rng.gen_bool(0.5) {
                    Cap::Finite(rng.gen_range(0.25 * b..1.5 * b))
                } else {
                    Cap::Unbounded
                }
            })
            .collect();
        let rows: Vec<Vec<(usize, f64)>> = (0..base.n()).map(|i| base.row(i).to_vec()).collect();
        let Ok(inst) = Instance::new(base.budgets().to_vec(), rows, caps, None) else {
            continue;
        };
        if check_cap_sufficient(&inst).is_sufficient() {
            return inst;
        }
    }
}

/// Random well-behaved SPLC instance: up to `m_max` projects with at most
/// three segments each, slopes non-increasing with an optional zero tail.
pub fn random_well_behaved_splc(rng: &mut ChaCha8Rng, n_max: usize, m_max: usize) -> SplcInstance {
    loop {
        let n = rng.gen_range(2..=n_max.max(2));
        let m = rng.gen_range(1..=m_max.max(1));
        let budgets: Vec<f64> = (0..n).map(|_| rng.gen_range(0.3..1.0)).collect();
        let total: f64 = budgets.iter().sum();
        let mut raw: Vec<Vec<PlcFunction>> = Vec::with_capacity(n);
        for _ in 0..n {
            let mut row = Vec::with_capacity(m);
            for _ in 0..m {
                if rng.gen_bool(0.2) {
                    row.push(PlcFunction::zero(total));
                    continue;
                }
                let k = rng.gen_range(1..=3);
                let mut slopes: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..3.0)).collect();
                slopes.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let segments: Vec<(f64, f64)> = slopes
                    .into_iter()
                    .map(|s| (rng.gen_range(0.2..0.8) * total, s))
                    .collect();
                row.push(PlcFunction::new(segments).unwrap().extended_to(total));
            }
            raw.push(row);
        }
        let Ok(splc) = harmonize_segments(budgets, raw, Some(total)) else {
            continue;
        };
        // Every agent must value something, and the reduction must be
        // cap-sufficient.
        let values_something = (0..splc.n()).any(|i| {
            (0..splc.m()).any(|j| (0..splc.segment_lengths(j).len()).any(|t| splc.slope(i, j, t) > 0.0))
        });
        if !values_something {
            continue;
        }
        let all_agents_value = (0..splc.n()).all(|i| {
            (0..splc.m()).any(|j| (0..splc.segment_lengths(j).len()).any(|t| splc.slope(i, j, t) > 0.0))
        });
        if !all_agents_value {
            continue;
        }
        match check_well_behaved(&splc) {
            Ok(report) if report.is_well_behaved() => return splc,
            _ => continue,
        }
    }
}

/// Exhaustive maximizer of the log Nash welfare over the spending simplex
/// `sum x = B` on 2-3 project instances: a coarse grid pass followed by
/// local refinement rounds.
pub fn grid_max_eg(inst: &Instance, step: f64, refine_rounds: usize) -> (Vec<f64>, f64) {
    let b = inst.total_budget();
    let m = inst.m();
    assert!(m == 2 || m == 3, "grid oracle supports 2-3 projects");
    let eval = |x: &[f64]| eg_objective(inst, x);

    let mut best_x = vec![b / m as f64; m];
    let mut best = eval(&best_x);
    let scan = |center: &[f64], span: f64, step: f64, best_x: &mut Vec<f64>, best: &mut f64| {
        let lo = |c: f64| (c - span).max(0.0);
        if m == 2 {
            let mut t = lo(center[0]);
            while t <= (center[0] + span).min(b) + 1e-15 {
                let x = vec![t, b - t];
                if x[1] >= 0.0 {
                    let v = eval(&x);
                    if v > *best {
                        *best = v;
                        *best_x = x;
                    }
                }
                t += step;
            }
        } else {
            let mut t0 = lo(center[0]);
            while t0 <= (center[0] + span).min(b) + 1e-15 {
                let mut t1 = lo(center[1]);
                while t1 <= (center[1] + span).min(b - t0) + 1e-15 {
                    let t2 = b - t0 - t1;
                    if t2 >= 0.0 {
                        let x = vec![t0, t1, t2];
                        let v = eval(&x);
                        if v > *best {
                            *best = v;
                            *best_x = x;
                        }
                    }
                    t1 += step;
                }
                t0 += step;
            }
        }
    };

    scan(&vec![b / 2.0; m], b, step, &mut best_x, &mut best);
    let mut step = step;
    for _ in 0..refine_rounds {
        let span = step * 2.0;
        step /= 10.0;
        let center = best_x.clone();
        scan(&center, span, step, &mut best_x, &mut best);
    }
    (best_x, best)
}

/// Solve the capped program with Clarabel through the emitted conic form
/// and re-import the solution, exercising the external-solver path.
pub fn solve_with_clarabel(inst: &Instance, kkt_tol: f64) -> CappedSolution {
    use clarabel::algebra::CscMatrix;
    use clarabel::solver::{
        DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
    };

    // Round-trip the emitted program through the text format before
    // handing it to the solver, as an external consumer would.
    let prog = ConicProgram::from_text(&emit_conic(inst).to_text()).unwrap();
    let nvars = prog.vars.len();
    let mut q = vec![0.0; nvars];
    for &(v, c) in &prog.objective {
        q[v] = -c; // maximize -> minimize
    }

    // Rows ordered: equalities (zero cone), inequalities (nonnegative cone),
    // then one exponential cone per valued pair.
    let mut dense: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

    let eq_rows: Vec<_> = prog.rows.iter().filter(|r| r.cmp == RowCmp::Eq).collect();
    let le_rows: Vec<_> = prog.rows.iter().filter(|r| r.cmp == RowCmp::Le).collect();
    for row in &eq_rows {
        let mut a = vec![0.0; nvars];
        for &(v, c) in &row.terms {
            a[v] += c;
        }
        dense.push(a);
        rhs.push(row.rhs);
    }
    if !eq_rows.is_empty() {
        cones.push(SupportedConeT::ZeroConeT(eq_rows.len()));
    }
    for row in &le_rows {
        let mut a = vec![0.0; nvars];
        for &(v, c) in &row.terms {
            a[v] += c;
        }
        dense.push(a);
        rhs.push(row.rhs);
    }
    if !le_rows.is_empty() {
        cones.push(SupportedConeT::NonnegativeConeT(le_rows.len()));
    }
    for cone in &prog.cones {
        // Clarabel's exponential cone is {(u1,u2,u3): u3 >= u2 e^(u1/u2)};
        // our membership (x_j, b_ij, -t_ij) maps to (u1,u2,u3) = (-t, b, x).
        let mut r1 = vec![0.0; nvars];
        r1[cone.entropy] = 1.0;
        let mut r2 = vec![0.0; nvars];
        r2[cone.spend] = -1.0;
        let mut r3 = vec![0.0; nvars];
        r3[cone.total] = -1.0;
        dense.push(r1);
        dense.push(r2);
        dense.push(r3);
        rhs.extend([0.0, 0.0, 0.0]);
        cones.push(SupportedConeT::ExponentialConeT());
    }

    let a = CscMatrix::from(&dense);
    let p = CscMatrix::zeros((nvars, nvars));
    let settings = DefaultSettings {
        verbose: false,
        tol_gap_abs: 1e-12,
        tol_gap_rel: 1e-12,
        tol_feas: 1e-12,
        max_iter: 200,
        ..Default::default()
    };
    let mut solver = DefaultSolver::new(&p, &q, &a, &rhs, &cones, settings);
    solver.solve();
    assert!(
        matches!(
            solver.solution.status,
            SolverStatus::Solved | SolverStatus::AlmostSolved
        ),
        "clarabel status {:?}",
        solver.solution.status
    );

    let values: HashMap<String, f64> = (0..nvars)
        .map(|v| (prog.var_name(v), solver.solution.x[v]))
        .collect();
    import_solution(inst, &values, kkt_tol).unwrap()
}
