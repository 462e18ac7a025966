//! Small named instances used throughout the test suites and docs.

use crate::model::{Cap, Instance};

/// `n` agents with equal budgets `1/n`, each valuing only their own project.
/// The unique equilibrium allocation is `x_i = B_i`.
pub fn personal_projects(n: usize) -> Instance {
    let budgets = vec![1.0 / n as f64; n];
    let valuations = (0..n).map(|i| vec![(i, 1.0)]).collect();
    Instance::uncapped(budgets, valuations).unwrap()
}

/// Two agents with disjoint interests; the project liked by agent 0 has a
/// cap of 0.25, below that agent's budget of 0.5. The unique zero-respecting
/// equilibrium allocation is `(0.25, 0.5)`, spending only 0.75 of the budget.
pub fn underspend_capped() -> Instance {
    Instance::new(
        vec![0.5, 0.5],
        vec![vec![(0, 1.0)], vec![(1, 1.0)]],
        vec![Cap::Finite(0.25), Cap::Unbounded],
        None,
    )
    .unwrap()
}

/// Four agents, three uncapped projects, approval valuations. The unique
/// equilibrium allocation has the irrational coordinates
/// `x_1 = x_2 = (7 - sqrt(17)) / 16`.
pub fn irrational_optimum() -> Instance {
    Instance::uncapped(
        vec![0.25; 4],
        vec![
            vec![(0, 1.0)],
            vec![(0, 1.0), (2, 1.0)],
            vec![(0, 1.0), (1, 1.0)],
            vec![(1, 1.0), (2, 1.0)],
        ],
    )
    .unwrap()
}

/// The irrational coordinate of [`irrational_optimum`]'s equilibrium.
pub fn irrational_coordinate() -> f64 {
    (7.0 - 17.0_f64.sqrt()) / 16.0
}

/// Two agents sharing a capped project (cap 1) plus a personal project each.
/// Many price systems support allocations `(1, 1-g, g)`; the capped program
/// uniquely selects the symmetric `x* = (1, 0.5, 0.5)` with equal
/// contributions to the shared project.
pub fn shared_capped_project() -> Instance {
    Instance::new(
        vec![1.0, 1.0],
        vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 1.0), (2, 1.0)]],
        vec![Cap::Finite(1.0), Cap::Unbounded, Cap::Unbounded],
        None,
    )
    .unwrap()
}

/// Three agents, four projects, project 0 capped at 3. The allocation
/// `(3, 0, 0, 3)` maximizes Nash welfare subject to the caps but is blocked
/// by the coalition of agents 0 and 1; the equilibrium `(3, 0.5, 0.5, 2)`
/// is core-stable.
pub fn nash_core_gap() -> Instance {
    Instance::new(
        vec![2.0, 2.0, 2.0],
        vec![
            vec![(0, 1.0), (1, 1.0)],
            vec![(0, 1.0), (2, 1.0)],
            vec![(3, 1.0)],
        ],
        vec![
            Cap::Finite(3.0),
            Cap::Unbounded,
            Cap::Unbounded,
            Cap::Unbounded,
        ],
        None,
    )
    .unwrap()
}
