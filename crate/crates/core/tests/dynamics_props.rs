//! Oracle-backed properties of the dynamics: step equivalence, descent,
//! rate bounds, gradient consistency, and welfare optimality of limits.

#![allow(clippy::needless_range_loop)]

mod common;

use lindahl_core::dynamics::{
    convergence_bound, eg_objective, md_step, pr_step, recover_prices_uncapped, run_pr,
    shmyrev_gradient, shmyrev_objective, DynamicsState, PrInit, PrOptions,
};
use lindahl_core::fixtures;
use lindahl_core::model::{ContributionMatrix, Instance};
use lindahl_core::verify::verify_lindahl;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_state(rng: &mut ChaCha8Rng, inst: &Instance) -> DynamicsState {
    let mut b = ContributionMatrix::zeros(inst);
    for i in 0..inst.n() {
        for k in 0..inst.row(i).len() {
            b.row_mut(i)[k] = rng.gen_range(0.05..1.0);
        }
    }
    DynamicsState::new(inst, b, 0).unwrap()
}

#[test]
fn pr_and_md_agree_on_random_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(512);
    for _ in 0..40 {
        let inst = common::random_uncapped(&mut rng, 8, 8);
        let state = random_state(&mut rng, &inst);
        let a = pr_step(&inst, &state).unwrap();
        let b = md_step(&inst, &state).unwrap();
        for i in 0..inst.n() {
            for k in 0..inst.row(i).len() {
                let (x, y) = (a.contributions().entry(i, k), b.contributions().entry(i, k));
                assert!((x - y).abs() < 1e-12, "entry ({i},{k}): {x} vs {y}");
            }
        }
    }
}

#[test]
fn budget_is_conserved_along_the_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    for _ in 0..10 {
        let inst = common::random_uncapped(&mut rng, 6, 6);
        let mut state = DynamicsState::uniform(&inst).unwrap();
        for _ in 0..50 {
            state = pr_step(&inst, &state).unwrap();
            let total: f64 = state.allocation().iter().sum();
            let rel = (total - inst.total_budget()).abs() / inst.total_budget();
            assert!(rel <= 1e-12, "total {total} vs {}", inst.total_budget());
        }
    }
}

#[test]
fn objective_descends_monotonically() {
    let mut rng = ChaCha8Rng::seed_from_u64(601);
    let mut instances = vec![
        fixtures::personal_projects(3),
        fixtures::irrational_optimum(),
    ];
    for _ in 0..10 {
        instances.push(common::random_uncapped(&mut rng, 8, 8));
    }
    for inst in &instances {
        let run = run_pr(
            inst,
            PrInit::Uniform,
            &PrOptions {
                max_iters: 2_000,
                ..Default::default()
            },
        )
        .unwrap();
        for pair in run.trace.rows.windows(2) {
            assert!(
                pair[1].objective <= pair[0].objective + 1e-10,
                "objective rose at t={}: {} -> {}",
                pair[1].t,
                pair[0].objective,
                pair[1].objective
            );
        }
    }
}

#[test]
fn rate_bound_holds_along_the_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(602);
    for _ in 0..5 {
        let inst = common::random_uncapped(&mut rng, 6, 6);
        let run = run_pr(
            &inst,
            PrInit::Uniform,
            &PrOptions {
                max_iters: 20_000,
                ..Default::default()
            },
        )
        .unwrap();
        let f_star = run.trace.rows.last().unwrap().objective;
        for row in run.trace.rows.iter().skip(1).take(1000) {
            let bound = convergence_bound(&inst, row.t);
            assert!(
                row.objective - f_star <= bound + 1e-12,
                "t={}: gap {} exceeds bound {}",
                row.t,
                row.objective - f_star,
                bound
            );
        }
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(603);
    let h = 1e-6;
    let mut checked = 0;
    while checked < 30 {
        let inst = common::random_uncapped(&mut rng, 5, 5);
        let state = random_state(&mut rng, &inst);
        let b = state.contributions().clone();
        let x = b.project_totals(&inst);
        let grad = shmyrev_gradient(&inst, &b, &x);
        for i in 0..inst.n() {
            for k in 0..inst.row(i).len() {
                let mut plus = b.clone();
                plus.row_mut(i)[k] += h;
                let mut minus = b.clone();
                minus.row_mut(i)[k] -= h;
                let numeric =
                    (shmyrev_objective(&inst, &plus) - shmyrev_objective(&inst, &minus))
                        / (2.0 * h);
                let analytic = grad[i][k];
                assert!(
                    (numeric - analytic).abs() <= 1e-6 * analytic.abs().max(1.0),
                    "grad ({i},{k}): numeric {numeric} analytic {analytic}"
                );
            }
        }
        checked += 1;
    }
}

#[test]
fn limit_maximizes_nash_welfare_against_grid() {
    // Random 3-4 agent instances over 3 projects: the PR limit matches the
    // grid-refined maximizer and beats every raw grid point.
    let mut rng = ChaCha8Rng::seed_from_u64(604);
    for _ in 0..5 {
        let inst = common::random_uncapped(&mut rng, 4, 3);
        if inst.m() < 2 {
            continue;
        }
        let run = run_pr(
            &inst,
            PrInit::Uniform,
            &PrOptions {
                max_iters: 200_000,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(run.converged);
        let (grid_x, grid_val) = common::grid_max_eg(&inst, 1e-3 * inst.total_budget(), 3);
        let ours = eg_objective(&inst, &run.allocation);
        assert!(
            ours >= grid_val - 1e-9,
            "eg at limit {ours} below grid value {grid_val}"
        );
        for j in 0..inst.m() {
            assert!(
                (run.allocation[j] - grid_x[j]).abs() <= 1e-4 * inst.total_budget(),
                "x[{j}]: pr {} grid {}",
                run.allocation[j],
                grid_x[j]
            );
        }
    }
}

#[test]
fn irrational_limit_beats_random_perturbations() {
    let inst = fixtures::irrational_optimum();
    let run = run_pr(&inst, PrInit::Uniform, &PrOptions::default()).unwrap();
    let f_star = shmyrev_objective(&inst, &run.contributions);
    let mut rng = ChaCha8Rng::seed_from_u64(605);
    for _ in 0..1000 {
        let mut b = ContributionMatrix::zeros(&inst);
        for i in 0..inst.n() {
            // Random positive row, normalized to the budget by the state
            // constructor below.
            for k in 0..inst.row(i).len() {
                b.row_mut(i)[k] =
                    (run.contributions.entry(i, k) + rng.gen_range(-0.05..0.05)).max(1e-6);
            }
        }
        let state = DynamicsState::new(&inst, b, 0).unwrap();
        let f = shmyrev_objective(&inst, state.contributions());
        assert!(
            f_star <= f + 1e-9,
            "perturbation improved the objective: {f} < {f_star}"
        );
    }
}

#[test]
fn irrational_limit_beats_random_feasible_eg_points() {
    let inst = fixtures::irrational_optimum();
    let run = run_pr(&inst, PrInit::Uniform, &PrOptions::default()).unwrap();
    let ours = eg_objective(&inst, &run.allocation);
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let b = inst.total_budget();
    for _ in 0..10_000 {
        let mut x: Vec<f64> = (0..inst.m()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let total: f64 = x.iter().sum();
        for v in x.iter_mut() {
            *v *= b / total;
        }
        assert!(eg_objective(&inst, &x) <= ours + 1e-12);
    }
}

#[test]
fn recovered_prices_at_irrational_limit_certify() {
    let inst = fixtures::irrational_optimum();
    let run = run_pr(&inst, PrInit::Uniform, &PrOptions::default()).unwrap();
    let prices = recover_prices_uncapped(&inst, &run.allocation).unwrap();
    let cert = verify_lindahl(&inst, &run.allocation, &prices, 1e-6).unwrap();
    assert!(cert.is_zero_respecting_lindahl(), "{cert:?}");
}

#[test]
fn repeated_runs_are_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(608);
    let inst = common::random_uncapped(&mut rng, 6, 6);
    let opts = PrOptions {
        max_iters: 5_000,
        ..Default::default()
    };
    let a = run_pr(&inst, PrInit::Uniform, &opts).unwrap();
    let b = run_pr(&inst, PrInit::Uniform, &opts).unwrap();
    assert_eq!(a.allocation.values(), b.allocation.values());
    assert_eq!(a.iterations, b.iterations);
}

#[test]
fn bound_only_flag_on_iteration_cap() {
    let inst = fixtures::irrational_optimum();
    let run = run_pr(
        &inst,
        PrInit::Uniform,
        &PrOptions {
            max_iters: 3,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(!run.converged);
    let bound = run.gap_bound.expect("uniform start carries a bound");
    assert!((bound - convergence_bound(&inst, 3)).abs() < 1e-15);
}
