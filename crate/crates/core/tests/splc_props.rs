//! End-to-end checks of the piecewise-linear reduction: encoding
//! equivalences and core stability of lifted equilibria.

#![allow(clippy::needless_range_loop)]

mod common;

use lindahl_core::capped::{recover_prices_capped, solve_capped_native, CappedSolveOptions};
use lindahl_core::model::{rescale_valuations, Cap, Instance, DEFAULT_RESCALE_TARGET};
use lindahl_core::splc::{harmonize_segments, lift_allocation, reduce_splc, PlcFunction};
use lindahl_core::verify::{
    audit_core_with_targets, verify_lindahl, CoreAuditOptions, CoreMode,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

static SOLVE_OPTS: CappedSolveOptions = CappedSolveOptions {
    max_iters: 400_000,
    kkt_tol: 1e-9,
    check_every: 50,
    projection_tol: None,
    projection_max_sweeps: 10_000,
};

#[test]
fn min_cap_encoding_reduces_to_the_capped_instance() {
    // Utilities v * min(x, cap) written as two-segment curves reduce to the
    // original capped instance plus zero-valued tails; both solve to the
    // same allocation.
    let inst = Instance::new(
        vec![0.6, 0.9],
        vec![vec![(0, 2.0), (1, 1.0)], vec![(0, 1.0), (1, 3.0)]],
        vec![Cap::Finite(0.5), Cap::Finite(1.2)],
        None,
    )
    .unwrap();
    let b = inst.total_budget();
    let curve = |v: f64, cap: f64| {
        PlcFunction::new(vec![(cap, v)])
            .unwrap()
            .extended_to(b)
    };
    let raw = vec![
        vec![curve(2.0, 0.5), curve(1.0, 1.2)],
        vec![curve(1.0, 0.5), curve(3.0, 1.2)],
    ];
    let splc = harmonize_segments(vec![0.6, 0.9], raw, None).unwrap();
    let reduction = reduce_splc(&splc).unwrap();

    // First derived segment of each project carries the original cap.
    assert_eq!(reduction.raw_instance.cap(0), Cap::Finite(0.5));

    let direct = solve_capped_native(
        &rescale_valuations(&inst, DEFAULT_RESCALE_TARGET)
            .unwrap()
            .instance,
        &SOLVE_OPTS,
    )
    .unwrap();
    let derived = solve_capped_native(&reduction.instance, &SOLVE_OPTS).unwrap();
    let lifted = lift_allocation(&splc, &reduction, &derived.x).unwrap();
    for j in 0..inst.m() {
        assert!(
            (direct.x[j] - lifted.x[j]).abs() <= 1e-5,
            "x[{j}]: direct {} lifted {}",
            direct.x[j],
            lifted.x[j]
        );
    }
}

#[test]
fn lifted_equilibria_are_core_stable_under_splc_utilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..10 {
        let splc = common::random_well_behaved_splc(&mut rng, 4, 3);
        let reduction = reduce_splc(&splc).unwrap();
        let sol = solve_capped_native(&reduction.instance, &SOLVE_OPTS).unwrap();
        assert!(sol.converged, "trial {trial}: {:?}", sol.residuals);
        let prices = recover_prices_capped(&reduction.instance, &sol);
        let cert = verify_lindahl(&reduction.instance, &sol.x, &prices, 1e-6).unwrap();
        assert!(cert.is_zero_respecting_lindahl(), "trial {trial}");

        let lifted = lift_allocation(&splc, &reduction, &sol.x).unwrap();
        let targets = splc.utilities(&lifted.x);
        let audit = audit_core_with_targets(
            &reduction.raw_instance,
            &targets,
            &CoreAuditOptions {
                mode: CoreMode::Strong,
                max_size: splc.n(),
                tol: None,
                sampling: None,
            },
        )
        .unwrap();
        assert!(
            audit.blocking.is_none(),
            "trial {trial}: blocked by {:?}",
            audit.blocking
        );
    }
}

#[test]
fn utility_lift_identity_holds() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    for _ in 0..10 {
        let splc = common::random_well_behaved_splc(&mut rng, 4, 3);
        let reduction = reduce_splc(&splc).unwrap();
        let sol = solve_capped_native(&reduction.instance, &SOLVE_OPTS).unwrap();
        let lifted = lift_allocation(&splc, &reduction, &sol.x).unwrap();
        // SPLC utility at the lifted point equals the derived-instance
        // utility of the repaired segment spends (raw slopes).
        for i in 0..splc.n() {
            let via_curves = splc.utility(i, &lifted.x);
            let via_segments =
                reduction.raw_instance.utility(i, &lifted.x_prime_repaired);
            let rel = (via_curves - via_segments).abs() / via_curves.abs().max(1e-12);
            assert!(
                rel <= 1e-9,
                "agent {i}: curves {via_curves} segments {via_segments}"
            );
        }
    }
}
