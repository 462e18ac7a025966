//! Equilibrium certification: affordability, utility maximization, profit
//! maximization and zero-respecting checks, plus Pareto and core audits
//! backed by the small LP solver.

use serde::Serialize;
use thiserror::Error;

use crate::lp::{lp_solve, Cmp, LinearProgram, LpError};
use crate::model::{Cap, Instance, PriceSystem};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("audit LP failed: {0}")]
    Lp(#[from] LpError),
    #[error("{context}: expected length {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
}

/// An agent's best affordable cap-respecting bundle at given prices.
#[derive(Debug, Clone, PartialEq)]
pub enum Demand {
    Bounded {
        utility: f64,
        /// Sparse bundle (project, amount).
        bundle: Vec<(usize, f64)>,
    },
    /// A valued project has zero price and no cap.
    Unbounded { project: usize },
}

impl Demand {
    pub fn utility(&self) -> f64 {
        match self {
            Demand::Bounded { utility, .. } => *utility,
            Demand::Unbounded { .. } => f64::INFINITY,
        }
    }
}

/// Maximize agent `i`'s utility over bundles `0 <= y <= cap` with
/// `<p_i, y> <= B_i`, by fractional knapsack: zero-priced valued projects
/// fill to cap first, the rest fill in decreasing bang-per-buck order.
pub fn demand_max_utility(inst: &Instance, i: usize, prices: &[f64]) -> Demand {
    let mut utility = 0.0;
    let mut bundle = Vec::new();
    let mut priced: Vec<(usize, f64, f64)> = Vec::new(); // (project, v, p)
    for &(j, v) in inst.row(i) {
        let p = prices[j];
        if p == 0.0 {
            match inst.cap(j) {
                Cap::Unbounded => return Demand::Unbounded { project: j },
                Cap::Finite(c) => {
                    utility += v * c;
                    bundle.push((j, c));
                }
            }
        } else {
            priced.push((j, v, p));
        }
    }
    priced.sort_by(|a, b| {
        let r = (b.1 / b.2).partial_cmp(&(a.1 / a.2)).unwrap();
        r.then(a.0.cmp(&b.0))
    });
    let mut budget = inst.budget(i);
    for (j, v, p) in priced {
        if budget <= 0.0 {
            break;
        }
        let amount = match inst.cap(j) {
            Cap::Finite(c) => (budget / p).min(c),
            Cap::Unbounded => budget / p,
        };
        if amount > 0.0 {
            utility += v * amount;
            budget -= p * amount;
            bundle.push((j, amount));
        }
    }
    Demand::Bounded { utility, bundle }
}

#[derive(Debug, Clone, Serialize)]
pub struct AgentCheck {
    pub agent: usize,
    /// `B_i - <p_i, x>`; affordable iff >= -tol * B.
    pub affordability_slack: f64,
    pub utility: f64,
    /// Utility of the best affordable bundle; `None` when unbounded.
    pub demand_utility: Option<f64>,
    /// `demand - utility`; `None` when the demand is unbounded.
    pub utility_gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectCheck {
    pub project: usize,
    pub spend: f64,
    pub price_column_sum: f64,
    pub funded: bool,
    /// `|column sum - 1|` for funded projects, `max(0, column sum - 1)` otherwise.
    pub profit_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ZeroRespectViolation {
    pub agent: usize,
    pub project: usize,
    pub price: f64,
}

/// Pass/fail verdicts with the residual behind every verdict. A pure
/// function of (instance, allocation, prices).
#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumCertificate {
    pub tol: f64,
    pub affordable: bool,
    pub utility_maximizing: bool,
    pub profit_maximizing: bool,
    pub zero_respecting: bool,
    pub agents: Vec<AgentCheck>,
    pub projects: Vec<ProjectCheck>,
    pub zero_respect_violations: Vec<ZeroRespectViolation>,
}

impl EquilibriumCertificate {
    /// All three equilibrium conditions hold.
    pub fn is_lindahl(&self) -> bool {
        self.affordable && self.utility_maximizing && self.profit_maximizing
    }

    pub fn is_zero_respecting_lindahl(&self) -> bool {
        self.is_lindahl() && self.zero_respecting
    }
}

/// Check the three equilibrium conditions and the zero-respecting property
/// at tolerance `tol` (utility gaps are judged relative to the achieved
/// utility with `tol` as an absolute floor).
pub fn verify_lindahl(
    inst: &Instance,
    x: &[f64],
    prices: &PriceSystem,
    tol: f64,
) -> Result<EquilibriumCertificate, VerifyError> {
    if x.len() != inst.m() {
        return Err(VerifyError::DimensionMismatch {
            context: "allocation",
            expected: inst.m(),
            got: x.len(),
        });
    }
    if prices.n() != inst.n() {
        return Err(VerifyError::DimensionMismatch {
            context: "price rows",
            expected: inst.n(),
            got: prices.n(),
        });
    }
    let budget_tol = tol * inst.total_budget();

    let mut agents = Vec::with_capacity(inst.n());
    let mut affordable = true;
    let mut utility_maximizing = true;
    for i in 0..inst.n() {
        let cost = prices.cost(i, x);
        let slack = inst.budget(i) - cost;
        if slack < -budget_tol {
            affordable = false;
        }
        let utility = inst.utility(i, x);
        let dense = prices.dense_row(i, inst.m());
        let demand = demand_max_utility(inst, i, &dense);
        let (demand_utility, gap) = match demand {
            Demand::Bounded { utility: du, .. } => (Some(du), Some(du - utility)),
            Demand::Unbounded { .. } => (None, None),
        };
        match gap {
            Some(g) => {
                if g > tol * utility.abs() + tol {
                    utility_maximizing = false;
                }
            }
            None => utility_maximizing = false,
        }
        agents.push(AgentCheck {
            agent: i,
            affordability_slack: slack,
            utility,
            demand_utility,
            utility_gap: gap,
        });
    }

    let col_sums = prices.column_sums(inst.m());
    let mut projects = Vec::with_capacity(inst.m());
    let mut profit_maximizing = true;
    for j in 0..inst.m() {
        let funded = x[j] > budget_tol;
        let residual = if funded {
            (col_sums[j] - 1.0).abs()
        } else {
            (col_sums[j] - 1.0).max(0.0)
        };
        if residual > tol {
            profit_maximizing = false;
        }
        projects.push(ProjectCheck {
            project: j,
            spend: x[j],
            price_column_sum: col_sums[j],
            funded,
            profit_residual: residual,
        });
    }

    let mut violations = Vec::new();
    for i in 0..inst.n() {
        for &(j, p) in prices.agent_prices(i) {
            if p > tol && x[j] > budget_tol && inst.value(i, j) == 0.0 {
                violations.push(ZeroRespectViolation {
                    agent: i,
                    project: j,
                    price: p,
                });
            }
        }
    }

    Ok(EquilibriumCertificate {
        tol,
        affordable,
        utility_maximizing,
        profit_maximizing,
        zero_respecting: violations.is_empty(),
        agents,
        projects,
        zero_respect_violations: violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ParetoMode {
    /// No allocation weakly improves everyone with one strict improvement.
    Strong,
    /// No allocation strictly improves everyone.
    Weak,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParetoReport {
    pub mode: ParetoMode,
    pub optimal: bool,
    /// LP optimum: total (strong) or minimum (weak) utility improvement.
    pub improvement: f64,
    pub dominating: Option<Vec<f64>>,
}

/// Search for a feasible allocation dominating `x` via LP. `x` is
/// Pareto-optimal iff the attainable improvement is at most `tol`
/// (default `1e-7 * B`).
pub fn check_pareto(
    inst: &Instance,
    x: &[f64],
    mode: ParetoMode,
    tol: Option<f64>,
) -> Result<ParetoReport, VerifyError> {
    let tol = tol.unwrap_or(1e-7 * inst.total_budget());
    let m = inst.m();
    let n = inst.n();
    let extras = match mode {
        ParetoMode::Strong => n,
        ParetoMode::Weak => 1,
    };
    // Variables: z_0..z_{m-1}, then improvement variables.
    let mut objective = vec![0.0; m + extras];
    for s in objective.iter_mut().skip(m) {
        *s = 1.0;
    }
    let mut lp = LinearProgram::new(objective);
    for i in 0..n {
        let mut coeffs = vec![0.0; m + extras];
        for &(j, v) in inst.row(i) {
            coeffs[j] = v;
        }
        match mode {
            ParetoMode::Strong => coeffs[m + i] = -1.0,
            ParetoMode::Weak => coeffs[m] = -1.0,
        }
        lp.constrain(coeffs, Cmp::Ge, inst.utility(i, x));
    }
    let mut budget_row = vec![0.0; m + extras];
    for c in budget_row.iter_mut().take(m) {
        *c = 1.0;
    }
    lp.constrain(budget_row, Cmp::Le, inst.total_budget());
    for j in 0..m {
        if let Cap::Finite(c) = inst.cap(j) {
            lp.bound(j, c);
        }
    }
    let sol = lp_solve(&lp)?;
    let improvement = match mode {
        ParetoMode::Strong => sol.objective,
        ParetoMode::Weak => sol.objective,
    };
    let optimal = improvement <= tol;
    Ok(ParetoReport {
        mode,
        optimal,
        improvement,
        dominating: if optimal {
            None
        } else {
            Some(sol.x[..m].to_vec())
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CoreMode {
    /// Blocking requires every member strictly better off.
    Weak,
    /// Blocking requires all weakly and one strictly better off.
    Strong,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoreSampling {
    pub draws: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoreAuditOptions {
    pub mode: CoreMode,
    pub max_size: usize,
    /// Strictness threshold; defaults to `1e-7 * B`.
    pub tol: Option<f64>,
    /// When set, draw random coalitions instead of enumerating all of them.
    pub sampling: Option<CoreSampling>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockingCoalition {
    pub coalition: Vec<usize>,
    pub objection: Vec<f64>,
    /// Utility gain of each coalition member under the objection.
    pub gains: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoreAuditReport {
    pub mode: CoreMode,
    pub max_size: usize,
    pub coalitions_checked: usize,
    /// True when every coalition up to `max_size` was enumerated; sampled
    /// audits report "no blocking found", not core membership.
    pub exhaustive: bool,
    pub blocking: Option<BlockingCoalition>,
}

/// Audit core stability of `x`: search coalitions (by increasing size,
/// lexicographically) for an affordable objection improving on the members'
/// utilities. Returns the first blocking coalition found.
pub fn audit_core(
    inst: &Instance,
    x: &[f64],
    opts: &CoreAuditOptions,
) -> Result<CoreAuditReport, VerifyError> {
    let targets = inst.utilities(x);
    audit_core_with_targets(inst, &targets, opts)
}

/// Core audit against explicit per-agent utility targets (used by the
/// piecewise-linear reduction, whose targets come from curve evaluation).
pub fn audit_core_with_targets(
    inst: &Instance,
    targets: &[f64],
    opts: &CoreAuditOptions,
) -> Result<CoreAuditReport, VerifyError> {
    if targets.len() != inst.n() {
        return Err(VerifyError::DimensionMismatch {
            context: "utility targets",
            expected: inst.n(),
            got: targets.len(),
        });
    }
    let tol = opts.tol.unwrap_or(1e-7 * inst.total_budget());
    let max_size = opts.max_size.min(inst.n());
    let mut checked = 0usize;

    let mut probe = |coalition: &[usize]| -> Result<Option<BlockingCoalition>, VerifyError> {
        checked += 1;
        probe_coalition(inst, targets, coalition, opts.mode, tol)
    };

    let blocking = match &opts.sampling {
        None => {
            let mut found = None;
            'outer: for size in 1..=max_size {
                let mut coalition: Vec<usize> = (0..size).collect();
                loop {
                    if let Some(b) = probe(&coalition)? {
                        found = Some(b);
                        break 'outer;
                    }
                    if !next_subset(&mut coalition, inst.n()) {
                        break;
                    }
                }
            }
            found
        }
        Some(sampling) => {
            let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
            let all: Vec<usize> = (0..inst.n()).collect();
            let mut found = None;
            for _ in 0..sampling.draws {
                let size = rng.gen_range(1..=max_size);
                let mut coalition: Vec<usize> =
                    all.choose_multiple(&mut rng, size).copied().collect();
                coalition.sort_unstable();
                if let Some(b) = probe(&coalition)? {
                    found = Some(b);
                    break;
                }
            }
            found
        }
    };

    Ok(CoreAuditReport {
        mode: opts.mode,
        max_size,
        coalitions_checked: checked,
        exhaustive: opts.sampling.is_none(),
        blocking,
    })
}

/// Advance to the next lexicographic subset of {0, .., n-1} of fixed size.
fn next_subset(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if subset[i] < n - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn probe_coalition(
    inst: &Instance,
    targets: &[f64],
    coalition: &[usize],
    mode: CoreMode,
    tol: f64,
) -> Result<Option<BlockingCoalition>, VerifyError> {
    // Only projects someone in the coalition values can help an objection.
    let mut projects = Vec::new();
    let mut mark = vec![usize::MAX; inst.m()];
    for &i in coalition {
        for &(j, _) in inst.row(i) {
            if mark[j] == usize::MAX {
                mark[j] = projects.len();
                projects.push(j);
            }
        }
    }
    if projects.is_empty() {
        return Ok(None);
    }
    let pool: f64 = coalition.iter().map(|&i| inst.budget(i)).sum();
    let nz = projects.len();

    let build_z = |zvals: &[f64]| -> Vec<f64> {
        let mut z = vec![0.0; inst.m()];
        for (k, &j) in projects.iter().enumerate() {
            z[j] = zvals[k].max(0.0);
        }
        z
    };

    match mode {
        CoreMode::Weak => {
            // max t  s.t.  <v_i, z> - t >= u_i for i in S, sum z <= pool.
            let mut objective = vec![0.0; nz + 1];
            objective[nz] = 1.0;
            let mut lp = LinearProgram::new(objective);
            for &i in coalition {
                let mut coeffs = vec![0.0; nz + 1];
                for &(j, v) in inst.row(i) {
                    if mark[j] != usize::MAX {
                        coeffs[mark[j]] = v;
                    }
                }
                coeffs[nz] = -1.0;
                lp.constrain(coeffs, Cmp::Ge, targets[i]);
            }
            let mut budget_row = vec![1.0; nz + 1];
            budget_row[nz] = 0.0;
            lp.constrain(budget_row, Cmp::Le, pool);
            for (k, &j) in projects.iter().enumerate() {
                if let Cap::Finite(c) = inst.cap(j) {
                    lp.bound(k, c);
                }
            }
            match lp_solve(&lp) {
                Ok(sol) if sol.objective > tol => {
                    let z = build_z(&sol.x[..nz]);
                    let gains = coalition
                        .iter()
                        .map(|&i| inst.utility(i, &z) - targets[i])
                        .collect();
                    Ok(Some(BlockingCoalition {
                        coalition: coalition.to_vec(),
                        objection: z,
                        gains,
                    }))
                }
                Ok(_) => Ok(None),
                Err(LpError::Infeasible { .. }) => Ok(None),
                Err(e) => Err(e.into()),
            }
        }
        CoreMode::Strong => {
            // For each pivot: max <v_p, z>  s.t.  <v_i, z> >= u_i for i in S.
            for &pivot in coalition {
                let mut objective = vec![0.0; nz];
                for &(j, v) in inst.row(pivot) {
                    if mark[j] != usize::MAX {
                        objective[mark[j]] = v;
                    }
                }
                let mut lp = LinearProgram::new(objective);
                for &i in coalition {
                    let mut coeffs = vec![0.0; nz];
                    for &(j, v) in inst.row(i) {
                        if mark[j] != usize::MAX {
                            coeffs[mark[j]] = v;
                        }
                    }
                    lp.constrain(coeffs, Cmp::Ge, targets[i]);
                }
                lp.constrain(vec![1.0; nz], Cmp::Le, pool);
                for (k, &j) in projects.iter().enumerate() {
                    if let Cap::Finite(c) = inst.cap(j) {
                        lp.bound(k, c);
                    }
                }
                match lp_solve(&lp) {
                    Ok(sol) if sol.objective > targets[pivot] + tol => {
                        let z = build_z(&sol.x);
                        let gains = coalition
                            .iter()
                            .map(|&i| inst.utility(i, &z) - targets[i])
                            .collect();
                        return Ok(Some(BlockingCoalition {
                            coalition: coalition.to_vec(),
                            objection: z,
                            gains,
                        }));
                    }
                    Ok(_) => {}
                    Err(LpError::Infeasible { .. }) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            Ok(None)
        }
    }
}
