//! Native solver for the capped spending program: entropy mirror descent
//! with a Dykstra-corrected KL projection onto the capped polytope, plus
//! multiplier estimation and zero-respecting price recovery from the
//! optimality conditions.

use serde::Serialize;
use thiserror::Error;

use crate::dynamics::shmyrev_objective;
use crate::model::{Allocation, Cap, ContributionMatrix, Instance, PriceSystem};

/// Funded / at-cap classification margin, as a fraction of the total budget:
/// a project is interior when `1e-7 * B < x_j < cap_j - 1e-7 * B`.
const INTERIOR_EPS: f64 = 1e-7;

/// An agent counts as spending their full budget when within `1e-6 * B`.
const FULL_SPEND_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CappedError {
    #[error("instance must be rescaled so every positive valuation exceeds 1 (agent {agent}, project {project}: {value})")]
    NotRescaled {
        agent: usize,
        project: usize,
        value: f64,
    },
    #[error("KL projection did not converge after {sweeps} sweeps; max constraint violation {violation}")]
    ProjectionDivergence { sweeps: usize, violation: f64 },
    #[error("contribution matrix shape does not match the instance")]
    ShapeMismatch,
}

#[derive(Debug, Clone)]
pub struct CappedSolveOptions {
    pub max_iters: usize,
    /// Stop once every KKT residual falls below this.
    pub kkt_tol: f64,
    /// Residuals are evaluated every this many iterations.
    pub check_every: usize,
    /// Projection tolerance; defaults to `1e-10 * B`.
    pub projection_tol: Option<f64>,
    pub projection_max_sweeps: usize,
}

impl Default for CappedSolveOptions {
    fn default() -> Self {
        CappedSolveOptions {
            max_iters: 100_000,
            kkt_tol: 1e-8,
            check_every: 50,
            projection_tol: None,
            projection_max_sweeps: 10_000,
        }
    }
}

/// How each agent's multiplier was determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LambdaSource {
    /// Mean of `log(v_ij x_j / b_ij)` over interior funded projects.
    Interior,
    /// Lower bound: max over funded (all at-cap) projects.
    AtCapBound,
    /// Agent does not spend their full budget, so lambda is zero.
    Underspend,
    /// Full spend but no funded project with positive contribution; the
    /// estimate is unreliable and the solution should be treated as flagged.
    NoFundedProject,
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaReport {
    pub lambdas: Vec<f64>,
    pub sources: Vec<LambdaSource>,
    /// Largest disagreement among one agent's interior estimates.
    pub max_spread: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MuReport {
    pub mus: Vec<f64>,
    /// Largest disagreement among supporters of one at-cap project.
    pub max_spread: f64,
}

/// Residuals of the optimality system; all comparable to a dimensionless
/// tolerance (money-unit slack terms are scaled by 1/B).
#[derive(Debug, Clone, Serialize)]
pub struct KktResiduals {
    /// Max |−log v_ij + log(b_ij/x_j) + λ_i + μ_j| over funded support.
    pub stationarity: f64,
    /// Max violation of Σ_i v_ij e^{−λ_i} ≤ 1 over unfunded projects.
    pub unfunded: f64,
    /// Max |λ_i (spend_i − B_i)| / B.
    pub row_slack: f64,
    /// Max |μ_j (x_j − cap_j)| / B.
    pub col_slack: f64,
    /// Largest first-order utility gain (per unit of B) from moving one
    /// agent's spending out of a nearly-unfunded project: residual mass in
    /// decaying columns that the funded-support residuals cannot see.
    pub parked: f64,
    pub lambda_spread: f64,
    pub mu_spread: f64,
}

/// Complementary-slackness tolerance (fraction of B): the projection
/// enforces feasibility to about this accuracy, and downstream budget
/// identities are checked at the same scale.
pub const COMPLEMENTARY_SLACK_TOL: f64 = 1e-6;

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.unfunded)
            .max(self.row_slack)
            .max(self.col_slack)
            .max(self.parked)
            .max(self.lambda_spread)
            .max(self.mu_spread)
    }

    /// Convergence test: stationarity-like residuals against `tol`, the
    /// slack products against `max(tol, COMPLEMENTARY_SLACK_TOL)`.
    pub fn within(&self, tol: f64) -> bool {
        let slack_tol = tol.max(COMPLEMENTARY_SLACK_TOL);
        self.stationarity <= tol
            && self.unfunded <= tol
            && self.parked <= tol
            && self.lambda_spread <= tol
            && self.mu_spread <= tol
            && self.row_slack <= slack_tol
            && self.col_slack <= slack_tol
    }
}

/// Output of the native capped solver.
#[derive(Debug, Clone)]
pub struct CappedSolution {
    pub b: ContributionMatrix,
    pub x: Allocation,
    pub lambdas: Vec<f64>,
    pub mus: Vec<f64>,
    /// Price exponents for unfunded projects (`p_ij = e^{w_ij}`), aligned
    /// with the valuation rows; `None` on funded projects.
    pub w: Vec<Vec<Option<f64>>>,
    /// Maximization objective `Σ b_ij (log v_ij − log(b_ij / x_j))`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residuals: KktResiduals,
    pub lambda_sources: Vec<LambdaSource>,
    pub lambda_spread: f64,
}

fn funded(x: f64, budget: f64) -> bool {
    x > INTERIOR_EPS * budget
}

fn interior(x: f64, cap: Cap, budget: f64) -> bool {
    funded(x, budget)
        && match cap {
            Cap::Unbounded => true,
            Cap::Finite(c) => x < c - INTERIOR_EPS * budget,
        }
}

fn at_cap(x: f64, cap: Cap, budget: f64) -> bool {
    match cap {
        Cap::Unbounded => false,
        Cap::Finite(c) => x >= c - INTERIOR_EPS * budget,
    }
}

/// Joint multiplier estimate for a feasible point.
#[derive(Debug, Clone)]
pub struct MultiplierEstimate {
    pub lambda: LambdaReport,
    pub mu: MuReport,
}

/// Estimate the budget and cap multipliers together.
///
/// On the funded support, stationarity reads
/// `log(v_ij x_j / b_ij) = λ_i + μ_j`. Interior projects anchor `μ_j = 0`
/// and hence their full-spend supporters' λ (averaged over interior
/// projects), and underspenders anchor `λ_i = 0`. Agents funding only
/// at-cap projects are coupled to the shared `μ_j`, so the remaining
/// unknowns are resolved by Gauss-Seidel averaging over the support,
/// warm-started from the per-agent lower bound `max_j log(v_ij x_j / b_ij)`
/// and clamped non-negative.
pub fn estimate_multipliers(
    inst: &Instance,
    b: &ContributionMatrix,
    x: &[f64],
) -> MultiplierEstimate {
    let budget = inst.total_budget();
    let mut lambdas = vec![0.0; inst.n()];
    let mut sources = vec![LambdaSource::Underspend; inst.n()];
    let mut anchored = vec![true; inst.n()];
    let mut max_spread = 0.0_f64;
    // Funded edges per agent: (project, log(v x / b)).
    let mut edges: Vec<Vec<(usize, f64)>> = vec![Vec::new(); inst.n()];

    for i in 0..inst.n() {
        let spend = b.agent_spend(i);
        let full = spend >= inst.budget(i) - FULL_SPEND_EPS * budget;
        let mut interior_sum = 0.0;
        let mut interior_min = f64::INFINITY;
        let mut interior_max = f64::NEG_INFINITY;
        let mut interior_count = 0usize;
        let mut cap_bound = f64::NEG_INFINITY;
        for (k, &(j, v)) in inst.row(i).iter().enumerate() {
            let bik = b.entry(i, k);
            if bik <= 0.0 || !funded(x[j], budget) {
                continue;
            }
            let estimate = (v * x[j] / bik).ln();
            edges[i].push((j, estimate));
            if interior(x[j], inst.cap(j), budget) {
                interior_sum += estimate;
                interior_min = interior_min.min(estimate);
                interior_max = interior_max.max(estimate);
                interior_count += 1;
            } else {
                cap_bound = cap_bound.max(estimate);
            }
        }
        if !full {
            continue; // complementary slackness: lambda stays zero
        }
        if interior_count > 0 {
            lambdas[i] = interior_sum / interior_count as f64;
            sources[i] = LambdaSource::Interior;
            max_spread = max_spread.max(interior_max - interior_min);
        } else if cap_bound.is_finite() {
            lambdas[i] = cap_bound.max(0.0);
            sources[i] = LambdaSource::AtCapBound;
            anchored[i] = false;
        } else {
            sources[i] = LambdaSource::NoFundedProject;
        }
    }

    let at_cap_cols: Vec<usize> = (0..inst.m())
        .filter(|&j| at_cap(x[j], inst.cap(j), budget))
        .collect();
    let loose: Vec<usize> = (0..inst.n()).filter(|&i| !anchored[i]).collect();
    let mut mus = vec![0.0; inst.m()];

    // Gauss-Seidel on the coupled block; settles in one pass when every
    // agent is anchored.
    for _sweep in 0..1_000 {
        let mut change = 0.0_f64;
        for &j in &at_cap_cols {
            let mut sum = 0.0;
            let mut count = 0usize;
            for &(i, _) in inst.supporters(j) {
                if let Some(&(_, r)) = edges[i].iter().find(|&&(jj, _)| jj == j) {
                    sum += r - lambdas[i];
                    count += 1;
                }
            }
            if count > 0 {
                let new = (sum / count as f64).max(0.0);
                change = change.max((new - mus[j]).abs());
                mus[j] = new;
            }
        }
        for &i in &loose {
            if edges[i].is_empty() {
                continue;
            }
            let sum: f64 = edges[i].iter().map(|&(j, r)| r - mus[j]).sum();
            let new = (sum / edges[i].len() as f64).max(0.0);
            change = change.max((new - lambdas[i]).abs());
            lambdas[i] = new;
        }
        if change <= 1e-13 {
            break;
        }
    }

    let mut mu_spread = 0.0_f64;
    for &j in &at_cap_cols {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &(i, _) in inst.supporters(j) {
            if let Some(&(_, r)) = edges[i].iter().find(|&&(jj, _)| jj == j) {
                let est = r - lambdas[i];
                lo = lo.min(est);
                hi = hi.max(est);
            }
        }
        if hi > lo {
            mu_spread = mu_spread.max(hi - lo);
        }
    }

    MultiplierEstimate {
        lambda: LambdaReport {
            lambdas,
            sources,
            max_spread,
        },
        mu: MuReport {
            mus,
            max_spread: mu_spread,
        },
    }
}

/// Estimate the per-agent budget multipliers from a feasible point.
pub fn estimate_lambda(inst: &Instance, b: &ContributionMatrix, x: &[f64]) -> LambdaReport {
    estimate_multipliers(inst, b, x).lambda
}

/// Estimate per-project cap multipliers: for at-cap projects, the mean of
/// `log(v_ij x_j / b_ij) − λ_i` over contributing supporters, clamped at 0.
pub fn estimate_mu(
    inst: &Instance,
    b: &ContributionMatrix,
    x: &[f64],
    lambdas: &[f64],
) -> MuReport {
    let budget = inst.total_budget();
    let mut mus = vec![0.0; inst.m()];
    let mut max_spread = 0.0_f64;
    for j in 0..inst.m() {
        if !at_cap(x[j], inst.cap(j), budget) {
            continue;
        }
        let mut sum = 0.0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut count = 0usize;
        for &(i, v) in inst.supporters(j) {
            let bij = b.spend(inst, i, j);
            if bij <= 0.0 {
                continue;
            }
            let est = (v * x[j] / bij).ln() - lambdas[i];
            sum += est;
            lo = lo.min(est);
            hi = hi.max(est);
            count += 1;
        }
        if count > 0 {
            mus[j] = (sum / count as f64).max(0.0);
            max_spread = max_spread.max(hi - lo);
        }
    }
    MuReport { mus, max_spread }
}

/// Evaluate all optimality residuals of a feasible point with the given
/// multiplier estimates.
pub fn kkt_residuals(
    inst: &Instance,
    b: &ContributionMatrix,
    x: &[f64],
    lambda: &LambdaReport,
    mu: &MuReport,
) -> KktResiduals {
    let budget = inst.total_budget();
    let mut stationarity = 0.0_f64;
    let mut unfunded = 0.0_f64;
    let mut parked = 0.0_f64;
    for j in 0..inst.m() {
        if funded(x[j], budget) {
            for &(i, v) in inst.supporters(j) {
                let bij = b.spend(inst, i, j);
                if bij > 0.0 {
                    let r = (-v.ln() + (bij / x[j]).ln() + lambda.lambdas[i] + mu.mus[j]).abs();
                    stationarity = stationarity.max(r);
                }
            }
        } else {
            let col: f64 = inst
                .supporters(j)
                .iter()
                .map(|&(i, v)| v * (-lambda.lambdas[i]).exp())
                .sum();
            unfunded = unfunded.max(col - 1.0);
            for &(i, v) in inst.supporters(j) {
                let bij = b.spend(inst, i, j);
                if bij > 0.0 {
                    let gain = bij * (lambda.lambdas[i].exp() - v).max(0.0);
                    parked = parked.max(gain / budget);
                }
            }
        }
    }
    let mut row_slack = 0.0_f64;
    for i in 0..inst.n() {
        row_slack = row_slack.max((lambda.lambdas[i] * (b.agent_spend(i) - inst.budget(i))).abs());
    }
    let mut col_slack = 0.0_f64;
    for j in 0..inst.m() {
        if let Cap::Finite(c) = inst.cap(j) {
            col_slack = col_slack.max((mu.mus[j] * (x[j] - c)).abs());
        }
    }
    KktResiduals {
        stationarity,
        unfunded: unfunded.max(0.0),
        row_slack: row_slack / budget,
        col_slack: col_slack / budget,
        parked,
        lambda_spread: lambda.max_spread,
        mu_spread: mu.max_spread,
    }
}

/// KL (generalized Kullback-Leibler) projection of `raw` onto
/// `{b >= 0 : Σ_j b_ij <= B_i, Σ_i b_ij <= cap_j}` by Dykstra-corrected
/// alternating scaling; a row or column is rescaled only when its
/// constraint is violated. Default tolerance `1e-10 * B`, 10000 sweeps.
pub fn kl_dykstra_project(
    inst: &Instance,
    raw: &ContributionMatrix,
) -> Result<ContributionMatrix, CappedError> {
    kl_dykstra_project_with(inst, raw, 1e-10 * inst.total_budget(), 10_000)
}

pub fn kl_dykstra_project_with(
    inst: &Instance,
    raw: &ContributionMatrix,
    tol: f64,
    max_sweeps: usize,
) -> Result<ContributionMatrix, CappedError> {
    let n = inst.n();
    let mut b: Vec<Vec<f64>> = (0..n).map(|i| raw.row(i).to_vec()).collect();
    let mut q_row: Vec<Vec<f64>> = b.iter().map(|row| vec![1.0; row.len()]).collect();
    let mut q_col = q_row.clone();

    let mut violation = f64::INFINITY;
    let mut prev_change = f64::INFINITY;
    for _sweep in 0..max_sweeps {
        let before = b.clone();
        // Row family: Σ_j b_ij <= B_i.
        for i in 0..n {
            let mut sum = 0.0;
            for (bv, q) in b[i].iter_mut().zip(q_row[i].iter()) {
                *bv *= q;
                sum += *bv;
            }
            let scale = if sum > inst.budget(i) {
                inst.budget(i) / sum
            } else {
                1.0
            };
            for (bv, q) in b[i].iter_mut().zip(q_row[i].iter_mut()) {
                let w = *bv;
                *bv = w * scale;
                *q = if *bv > 0.0 { w / *bv } else { 1.0 };
            }
        }

        // Column family: Σ_i b_ij <= cap_j.
        let mut col_sums = vec![0.0; inst.m()];
        for i in 0..n {
            for (k, (bv, q)) in b[i].iter_mut().zip(q_col[i].iter()).enumerate() {
                *bv *= q;
                col_sums[inst.row(i)[k].0] += *bv;
            }
        }
        let mut col_scale = vec![1.0; inst.m()];
        for j in 0..inst.m() {
            if let Cap::Finite(c) = inst.cap(j) {
                if col_sums[j] > c {
                    col_scale[j] = c / col_sums[j];
                }
            }
        }
        for i in 0..n {
            for (k, (bv, q)) in b[i].iter_mut().zip(q_col[i].iter_mut()).enumerate() {
                let w = *bv;
                *bv = w * col_scale[inst.row(i)[k].0];
                *q = if *bv > 0.0 { w / *bv } else { 1.0 };
            }
        }

        // Feasibility of the current iterate across both families, plus an
        // extrapolated distance to the limit: feasibility alone arrives
        // long before the corrections settle on the actual projection, and
        // the last step size alone understates the remaining error for
        // linearly convergent sweeps.
        violation = 0.0;
        let mut change = 0.0_f64;
        let mut col_check = vec![0.0; inst.m()];
        for i in 0..n {
            let mut row_sum = 0.0;
            for (k, &bv) in b[i].iter().enumerate() {
                row_sum += bv;
                col_check[inst.row(i)[k].0] += bv;
                change = change.max((bv - before[i][k]).abs());
            }
            violation = violation.max(row_sum - inst.budget(i));
        }
        for j in 0..inst.m() {
            if let Cap::Finite(c) = inst.cap(j) {
                violation = violation.max(col_check[j] - c);
            }
        }
        let rate = (change / prev_change).clamp(0.0, 0.999);
        let remaining = if change == 0.0 {
            0.0
        } else {
            change * rate / (1.0 - rate)
        };
        prev_change = change;
        if violation <= tol && change <= tol && remaining <= tol {
            return ContributionMatrix::from_entries(inst, b)
                .map_err(|_| CappedError::ShapeMismatch);
        }
    }
    Err(CappedError::ProjectionDivergence {
        sweeps: max_sweeps,
        violation,
    })
}

fn ensure_rescaled(inst: &Instance) -> Result<(), CappedError> {
    for i in 0..inst.n() {
        for &(j, v) in inst.row(i) {
            if v <= 1.0 {
                return Err(CappedError::NotRescaled {
                    agent: i,
                    project: j,
                    value: v,
                });
            }
        }
    }
    Ok(())
}

/// Solve the capped spending program by mirror descent: the unconstrained
/// KL-proximal step has the closed form `v_ij * x_j`, which is then
/// projected back onto the capped polytope. The stepsize halves whenever
/// the objective would increase. Iteration stops when the KKT residuals of
/// the iterate fall below `opts.kkt_tol`; hitting the iteration cap returns
/// a result flagged `converged: false` with its residual report.
pub fn solve_capped_native(
    inst: &Instance,
    opts: &CappedSolveOptions,
) -> Result<CappedSolution, CappedError> {
    ensure_rescaled(inst)?;
    let budget = inst.total_budget();
    let proj_tol = opts.projection_tol.unwrap_or(1e-10 * budget);

    // Strictly positive near-feasible start.
    let mut init = ContributionMatrix::zeros(inst);
    for i in 0..inst.n() {
        let mi = inst.row(i).len().max(1) as f64;
        for (k, &(j, _)) in inst.row(i).iter().enumerate() {
            let col_share = match inst.cap(j) {
                Cap::Finite(c) => c / inst.supporters(j).len() as f64,
                Cap::Unbounded => f64::INFINITY,
            };
            init.row_mut(i)[k] = (inst.budget(i) / mi).min(col_share);
        }
    }
    let mut b = kl_dykstra_project_with(inst, &init, proj_tol, opts.projection_max_sweeps)?;
    let mut f = shmyrev_objective(inst, &b);

    let mut iterations = 0;
    let mut converged = false;
    let mut stalled = false;
    loop {
        if iterations >= opts.max_iters || converged || stalled {
            break;
        }
        iterations += 1;
        let x = b.project_totals(inst);

        let mut eta = 1.0_f64;
        let (next, f_next) = loop {
            let mut target = ContributionMatrix::zeros(inst);
            for i in 0..inst.n() {
                for (k, &(j, v)) in inst.row(i).iter().enumerate() {
                    let prox = v * x[j];
                    let cur = b.entry(i, k);
                    target.row_mut(i)[k] = if eta >= 1.0 {
                        prox
                    } else {
                        // 0^p = 0 keeps boundary entries at zero.
                        cur.powf(1.0 - eta) * prox.powf(eta)
                    };
                }
            }
            let cand = kl_dykstra_project_with(inst, &target, proj_tol, opts.projection_max_sweeps)?;
            let f_cand = shmyrev_objective(inst, &cand);
            if f_cand <= f + 1e-12 * (1.0 + f.abs()) {
                break (cand, f_cand);
            }
            eta *= 0.5;
            if eta < 1e-7 {
                stalled = true;
                break (cand, f_cand);
            }
        };
        if stalled {
            break;
        }
        b = next;
        f = f_next;

        if iterations % opts.check_every == 0 {
            let x_now = b.project_totals(inst);
            let est = estimate_multipliers(inst, &b, &x_now);
            let res = kkt_residuals(inst, &b, &x_now, &est.lambda, &est.mu);
            if res.within(opts.kkt_tol) {
                converged = true;
            }
        }
    }

    let x = b.project_totals(inst);
    let est = estimate_multipliers(inst, &b, &x);
    let residuals = kkt_residuals(inst, &b, &x, &est.lambda, &est.mu);
    let converged = residuals.within(opts.kkt_tol);
    let w = unfunded_price_exponents(inst, &x, &est.lambda.lambdas);

    Ok(CappedSolution {
        objective: -shmyrev_objective(inst, &b),
        x: Allocation::new(x),
        lambdas: est.lambda.lambdas,
        mus: est.mu.mus,
        w,
        iterations,
        converged,
        residuals,
        lambda_sources: est.lambda.sources,
        lambda_spread: est.lambda.max_spread,
        b,
    })
}

/// Price exponents for unfunded projects: `p_ij = v_ij e^{−λ_i}`, with the
/// column scaled down to sum at most 1 when the raw sums exceed it.
pub fn unfunded_price_exponents(
    inst: &Instance,
    x: &[f64],
    lambdas: &[f64],
) -> Vec<Vec<Option<f64>>> {
    let budget = inst.total_budget();
    let mut col_log_scale = vec![0.0; inst.m()];
    for j in 0..inst.m() {
        if !funded(x[j], budget) {
            let colsum: f64 = inst
                .supporters(j)
                .iter()
                .map(|&(i, v)| v * (-lambdas[i]).exp())
                .sum();
            if colsum > 1.0 {
                col_log_scale[j] = colsum.ln();
            }
        }
    }
    (0..inst.n())
        .map(|i| {
            inst.row(i)
                .iter()
                .map(|&(j, v)| {
                    if funded(x[j], budget) {
                        None
                    } else {
                        Some(v.ln() - lambdas[i] - col_log_scale[j])
                    }
                })
                .collect()
        })
        .collect()
}

/// Zero-respecting equilibrium prices from a solved point: `b_ij / x_j` on
/// funded projects, `e^{w_ij}` on unfunded ones, zero off the valuation
/// support. The identity `p_ij x_j = b_ij` holds on funded projects.
pub fn recover_prices_capped(inst: &Instance, sol: &CappedSolution) -> PriceSystem {
    let budget = inst.total_budget();
    let entries = (0..inst.n())
        .map(|i| {
            inst.row(i)
                .iter()
                .enumerate()
                .map(|(k, &(j, _))| {
                    let p = if funded(sol.x[j], budget) {
                        sol.b.entry(i, k) / sol.x[j]
                    } else {
                        sol.w[i][k].map(f64::exp).unwrap_or(0.0)
                    };
                    (j, p)
                })
                .collect()
        })
        .collect();
    PriceSystem::new(entries)
}
