//! Proportional response dynamics for the uncapped setting, the equivalent
//! entropy mirror-descent step, the spending-form convex objective they
//! descend, and equilibrium price recovery from a limit allocation.

use std::io;

use thiserror::Error;

use crate::model::{Allocation, ContributionMatrix, Instance, PriceSystem};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("agent {agent} has zero utility: they value no project with positive spending")]
    ZeroUtility { agent: usize },
    #[error("agent {agent} values no project; the dynamics cannot allocate their budget")]
    EmptyAgent { agent: usize },
    #[error("project {project} has zero total spending in the initial state")]
    ZeroColumn { project: usize },
    #[error("contribution entry for agent {agent} is negative: {value}")]
    NegativeEntry { agent: usize, value: f64 },
}

/// One iterate of the dynamics: contributions with per-agent budgets spent
/// in full, the implied allocation, and the utilities it generates.
#[derive(Debug, Clone)]
pub struct DynamicsState {
    pub t: usize,
    b: ContributionMatrix,
    x: Vec<f64>,
    utilities: Vec<f64>,
}

impl DynamicsState {
    /// Wrap a contribution matrix as an iterate. Rows are normalized to the
    /// agent budgets; every project must have positive total spending.
    pub fn new(inst: &Instance, b: ContributionMatrix, t: usize) -> Result<Self, DynamicsError> {
        let mut b = b;
        for i in 0..inst.n() {
            if inst.row(i).is_empty() {
                return Err(DynamicsError::EmptyAgent { agent: i });
            }
            let mut sum = 0.0;
            for &v in b.row(i) {
                if v < 0.0 {
                    return Err(DynamicsError::NegativeEntry { agent: i, value: v });
                }
                sum += v;
            }
            if sum <= 0.0 {
                return Err(DynamicsError::ZeroUtility { agent: i });
            }
            let factor = inst.budget(i) / sum;
            for v in b.row_mut(i) {
                *v *= factor;
            }
        }
        let x = b.project_totals(inst);
        if let Some(j) = x.iter().position(|&xj| xj <= 0.0) {
            return Err(DynamicsError::ZeroColumn { project: j });
        }
        let utilities = inst.utilities(&x);
        Ok(DynamicsState { t, b, x, utilities })
    }

    /// Uniform start: each agent splits their budget evenly over the
    /// projects they value.
    pub fn uniform(inst: &Instance) -> Result<Self, DynamicsError> {
        DynamicsState::new(inst, ContributionMatrix::uniform(inst), 0)
    }

    pub fn contributions(&self) -> &ContributionMatrix {
        &self.b
    }

    pub fn allocation(&self) -> &[f64] {
        &self.x
    }

    pub fn utilities(&self) -> &[f64] {
        &self.utilities
    }
}

/// One proportional-response step: each agent re-spends their budget across
/// projects in proportion to the utility each project currently provides,
/// `b'_ij = B_i * v_ij * x_j / u_i`.
pub fn pr_step(inst: &Instance, state: &DynamicsState) -> Result<DynamicsState, DynamicsError> {
    let mut b = ContributionMatrix::zeros(inst);
    for i in 0..inst.n() {
        let u = state.utilities[i];
        if u <= 0.0 {
            return Err(DynamicsError::ZeroUtility { agent: i });
        }
        let scale = inst.budget(i) / u;
        let row = b.row_mut(i);
        for (k, &(j, v)) in inst.row(i).iter().enumerate() {
            row[k] = scale * v * state.x[j];
        }
    }
    let x = b.project_totals(inst);
    let utilities = inst.utilities(&x);
    Ok(DynamicsState {
        t: state.t + 1,
        b,
        x,
        utilities,
    })
}

/// The dynamics written on allocations alone:
/// `x_j' = sum_i B_i * v_ij * x_j / <v_i, x>`. One [`pr_step`] from any
/// state with column sums `x` produces exactly this allocation.
pub fn pr_allocation_update(inst: &Instance, x: &[f64]) -> Result<Vec<f64>, DynamicsError> {
    let mut next = vec![0.0; inst.m()];
    for i in 0..inst.n() {
        if inst.row(i).is_empty() {
            return Err(DynamicsError::EmptyAgent { agent: i });
        }
        let u = inst.utility(i, x);
        if u <= 0.0 {
            return Err(DynamicsError::ZeroUtility { agent: i });
        }
        let scale = inst.budget(i) / u;
        for &(j, v) in inst.row(i) {
            next[j] += scale * v * x[j];
        }
    }
    Ok(next)
}

/// One unit-stepsize mirror-descent step with the entropy reference function:
/// multiply each contribution by `exp(-gradient)` and renormalize the row to
/// the agent's budget. Coincides with [`pr_step`] on interior states.
pub fn md_step(inst: &Instance, state: &DynamicsState) -> Result<DynamicsState, DynamicsError> {
    let grad = shmyrev_gradient(inst, &state.b, &state.x);
    let mut b = ContributionMatrix::zeros(inst);
    for i in 0..inst.n() {
        if inst.row(i).is_empty() {
            return Err(DynamicsError::EmptyAgent { agent: i });
        }
        let mut weights = vec![0.0; inst.row(i).len()];
        let mut sum = 0.0;
        for (k, &bik) in state.b.row(i).iter().enumerate() {
            // The KL proximal step keeps boundary coordinates at zero.
            if bik > 0.0 {
                weights[k] = bik * (-grad[i][k]).exp();
                sum += weights[k];
            }
        }
        if sum <= 0.0 {
            return Err(DynamicsError::ZeroUtility { agent: i });
        }
        let scale = inst.budget(i) / sum;
        let row = b.row_mut(i);
        for (k, w) in weights.iter().enumerate() {
            row[k] = w * scale;
        }
    }
    let x = b.project_totals(inst);
    let utilities = inst.utilities(&x);
    Ok(DynamicsState {
        t: state.t + 1,
        b,
        x,
        utilities,
    })
}

/// The minimization objective descended by the dynamics:
/// `f(b) = -sum b_ij (log v_ij - log(b_ij / x_j(b)))`, with `0 log 0 = 0`.
pub fn shmyrev_objective(inst: &Instance, b: &ContributionMatrix) -> f64 {
    let x = b.project_totals(inst);
    let mut f = 0.0;
    for i in 0..inst.n() {
        for (k, &(j, v)) in inst.row(i).iter().enumerate() {
            let bik = b.entry(i, k);
            if bik > 0.0 {
                f -= bik * (v.ln() - (bik / x[j]).ln());
            }
        }
    }
    f
}

/// Gradient of [`shmyrev_objective`] on the valuation support:
/// `-log v_ij + log(b_ij / x_j(b))`. Entries with `b_ij = 0` get `-inf`.
pub fn shmyrev_gradient(inst: &Instance, b: &ContributionMatrix, x: &[f64]) -> Vec<Vec<f64>> {
    (0..inst.n())
        .map(|i| {
            inst.row(i)
                .iter()
                .enumerate()
                .map(|(k, &(j, v))| {
                    let bik = b.entry(i, k);
                    if bik > 0.0 {
                        -v.ln() + (bik / x[j]).ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect()
        })
        .collect()
}

/// Budget-weighted log Nash welfare `sum_i B_i log <v_i, x>`; negative
/// infinity when any agent has zero utility.
pub fn eg_objective(inst: &Instance, x: &[f64]) -> f64 {
    let mut obj = 0.0;
    for i in 0..inst.n() {
        let u = inst.utility(i, x);
        if u <= 0.0 {
            return f64::NEG_INFINITY;
        }
        obj += inst.budget(i) * u.ln();
    }
    obj
}

/// Objective-gap bound for the dynamics after `t` steps from the uniform
/// start: `(sum_i B_i log(m / B_i)) / t`.
pub fn convergence_bound(inst: &Instance, t: usize) -> f64 {
    if t == 0 {
        return f64::INFINITY;
    }
    let m = inst.m() as f64;
    let sum: f64 = inst
        .budgets()
        .iter()
        .map(|&bi| bi * (m / bi).ln())
        .sum();
    sum / t as f64
}

/// Equilibrium prices supporting an uncapped limit allocation:
/// `p_ij = B_i * v_ij / <v_i, x>`, zero where the valuation is zero.
pub fn recover_prices_uncapped(inst: &Instance, x: &[f64]) -> Result<PriceSystem, DynamicsError> {
    let mut entries = Vec::with_capacity(inst.n());
    for i in 0..inst.n() {
        let u = inst.utility(i, x);
        if u <= 0.0 && !inst.row(i).is_empty() {
            return Err(DynamicsError::ZeroUtility { agent: i });
        }
        entries.push(
            inst.row(i)
                .iter()
                .map(|&(j, v)| (j, inst.budget(i) * v / u))
                .collect(),
        );
    }
    Ok(PriceSystem::new(entries))
}

/// Per-iteration convergence record.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub t: usize,
    /// Minimization objective `f(b^t)`.
    pub objective: f64,
    pub eg_objective: f64,
    /// Max-coordinate change of the allocation since the previous iterate.
    pub x_change: f64,
    /// Theoretical objective-gap bound at this iteration (uniform start).
    pub bound: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ConvergenceTrace {
    pub rows: Vec<TraceRow>,
}

impl ConvergenceTrace {
    /// Write the trace as CSV with columns `t,f,eg_objective,x_change,bound`.
    pub fn write_csv<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,f,eg_objective,x_change,bound")?;
        for row in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                row.t, row.objective, row.eg_objective, row.x_change, row.bound
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum PrInit {
    Uniform,
    Given(ContributionMatrix),
}

#[derive(Debug, Clone)]
pub struct PrOptions {
    pub max_iters: usize,
    /// Stop when the max-coordinate change of `x` falls below this;
    /// defaults to `1e-10 * B`.
    pub x_change_tol: Option<f64>,
    /// Record a full trace row every iteration; disable to skip the
    /// objective evaluations in timing-sensitive runs.
    pub record_trace: bool,
}

impl Default for PrOptions {
    fn default() -> Self {
        PrOptions {
            max_iters: 100_000,
            x_change_tol: None,
            record_trace: true,
        }
    }
}

/// Result of running the dynamics to convergence or the iteration cap.
#[derive(Debug, Clone)]
pub struct PrRun {
    pub allocation: Allocation,
    pub contributions: ContributionMatrix,
    pub trace: ConvergenceTrace,
    pub iterations: usize,
    pub converged: bool,
    /// Objective-gap bound at the final iterate, attached when the run hit
    /// the iteration cap from a uniform start ("bound-only" result).
    pub gap_bound: Option<f64>,
}

/// Run the proportional response dynamics until the allocation stabilizes.
pub fn run_pr(inst: &Instance, init: PrInit, opts: &PrOptions) -> Result<PrRun, DynamicsError> {
    let uniform_start = matches!(init, PrInit::Uniform);
    let mut state = match init {
        PrInit::Uniform => DynamicsState::uniform(inst)?,
        PrInit::Given(b) => DynamicsState::new(inst, b, 0)?,
    };
    let tol = opts
        .x_change_tol
        .unwrap_or(1e-10 * inst.total_budget());

    let mut trace = ConvergenceTrace::default();
    if opts.record_trace {
        trace.rows.push(TraceRow {
            t: 0,
            objective: shmyrev_objective(inst, &state.b),
            eg_objective: eg_objective(inst, &state.x),
            x_change: 0.0,
            bound: f64::INFINITY,
        });
    }

    let mut converged = false;
    for _ in 0..opts.max_iters {
        let next = pr_step(inst, &state)?;
        let x_change = state
            .x
            .iter()
            .zip(next.x.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if opts.record_trace {
            trace.rows.push(TraceRow {
                t: next.t,
                objective: shmyrev_objective(inst, &next.b),
                eg_objective: eg_objective(inst, &next.x),
                x_change,
                bound: convergence_bound(inst, next.t),
            });
        }
        state = next;
        if x_change <= tol {
            converged = true;
            break;
        }
    }

    let gap_bound = if uniform_start {
        Some(convergence_bound(inst, state.t.max(1)))
    } else {
        None
    };
    Ok(PrRun {
        allocation: state.b.allocation(inst),
        contributions: state.b.clone(),
        iterations: state.t,
        converged,
        gap_bound,
        trace,
    })
}
