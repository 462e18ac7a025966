//! Instance data model: agents with budgets and sparse valuations, projects
//! with optional funding caps, plus the allocation / contribution / price
//! containers shared by the solvers and the verifier.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance for the agent-budget vs. total-budget consistency check.
pub const BUDGET_SUM_REL_TOL: f64 = 1e-12;

/// Default rescaling target for the smallest positive valuation of each agent.
/// Any constant above 1 works; this one is fixed for reproducibility.
pub const DEFAULT_RESCALE_TARGET: f64 = std::f64::consts::E;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("agent {agent}: budget must be positive and finite, got {value}")]
    BadBudget { agent: usize, value: f64 },
    #[error("agent budgets sum to {sum} but the declared total budget is {total}")]
    BudgetSumMismatch { sum: f64, total: f64 },
    #[error("project {project}: cap must be positive and not NaN, got {value}")]
    BadCap { project: usize, value: f64 },
    #[error("project caps sum to {cap_sum}, below the total budget {budget}")]
    InsufficientCaps { cap_sum: f64, budget: f64 },
    #[error("agent {agent}, project {project}: valuation {value} must be finite and non-negative")]
    BadValuation {
        agent: usize,
        project: usize,
        value: f64,
    },
    #[error("agent {agent}: duplicate valuation entry for project {project}")]
    DuplicateValuation { agent: usize, project: usize },
    #[error("agent {agent}: valuation references project {project} but the instance has {m} projects")]
    ProjectOutOfRange {
        agent: usize,
        project: usize,
        m: usize,
    },
    #[error("rescale target must be greater than 1, got {0}")]
    BadRescaleTarget(f64),
    #[error("{context}: expected length {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Per-project spending cap. Unbounded caps are a distinct variant rather
/// than a large sentinel float, so tolerance checks never see them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Cap {
    Finite(f64),
    Unbounded,
}

impl Cap {
    pub fn as_f64(&self) -> f64 {
        match self {
            Cap::Finite(c) => *c,
            Cap::Unbounded => f64::INFINITY,
        }
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Cap::Finite(c) => Some(*c),
            Cap::Unbounded => None,
        }
    }

    pub fn is_unbounded(&self) -> bool {
        matches!(self, Cap::Unbounded)
    }
}

/// A budget-allocation instance: `n` agents with endowments summing to the
/// total budget, `m` projects with caps, and sparse non-negative valuations.
///
/// Projects that no agent values are dropped on construction; the original
/// index of each kept project is available through [`Instance::original_project`].
#[derive(Debug, Clone)]
pub struct Instance {
    budgets: Vec<f64>,
    total_budget: f64,
    caps: Vec<Cap>,
    /// Per agent: (project, value) with value > 0, sorted by project.
    rows: Vec<Vec<(usize, f64)>>,
    /// Per project: (agent, value), sorted by agent.
    cols: Vec<Vec<(usize, f64)>>,
    /// Kept project -> index in the input project list.
    origin: Vec<usize>,
    /// Input projects that were dropped because no agent values them.
    dropped: Vec<usize>,
}

impl Instance {
    /// Build an instance from per-agent sparse valuation rows.
    ///
    /// `total_budget` defaults to the sum of agent budgets; when given it is
    /// checked against that sum at relative tolerance [`BUDGET_SUM_REL_TOL`].
    pub fn new(
        budgets: Vec<f64>,
        valuations: Vec<Vec<(usize, f64)>>,
        caps: Vec<Cap>,
        total_budget: Option<f64>,
    ) -> Result<Self, ModelError> {
        let n = budgets.len();
        let m_in = caps.len();
        if valuations.len() != n {
            return Err(ModelError::DimensionMismatch {
                context: "valuation rows",
                expected: n,
                got: valuations.len(),
            });
        }
        for (i, &b) in budgets.iter().enumerate() {
            if !(b.is_finite() && b > 0.0) {
                return Err(ModelError::BadBudget { agent: i, value: b });
            }
        }
        let sum: f64 = budgets.iter().sum();
        let total = total_budget.unwrap_or(sum);
        if (sum - total).abs() > BUDGET_SUM_REL_TOL * total.abs().max(sum.abs()) {
            return Err(ModelError::BudgetSumMismatch { sum, total });
        }

        let mut cap_sum = 0.0_f64;
        for (j, cap) in caps.iter().enumerate() {
            match cap {
                Cap::Finite(c) if !(c.is_finite() && *c > 0.0) => {
                    return Err(ModelError::BadCap {
                        project: j,
                        value: *c,
                    })
                }
                Cap::Finite(c) => cap_sum += c,
                Cap::Unbounded => cap_sum = f64::INFINITY,
            }
        }
        if cap_sum < total {
            return Err(ModelError::InsufficientCaps {
                cap_sum,
                budget: total,
            });
        }

        // Validate and sort rows, dropping explicit zeros.
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        for (i, mut row) in valuations.into_iter().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            let mut clean: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            let mut last_seen = usize::MAX;
            for &(j, v) in &row {
                if j >= m_in {
                    return Err(ModelError::ProjectOutOfRange {
                        agent: i,
                        project: j,
                        m: m_in,
                    });
                }
                if !(v.is_finite() && v >= 0.0) {
                    return Err(ModelError::BadValuation {
                        agent: i,
                        project: j,
                        value: v,
                    });
                }
                if last_seen == j {
                    return Err(ModelError::DuplicateValuation {
                        agent: i,
                        project: j,
                    });
                }
                last_seen = j;
                if v > 0.0 {
                    clean.push((j, v));
                }
            }
            rows.push(clean);
        }

        // Drop projects with no supporter and reindex.
        let mut supported = vec![false; m_in];
        for row in &rows {
            for &(j, _) in row {
                supported[j] = true;
            }
        }
        let mut new_index = vec![usize::MAX; m_in];
        let mut origin = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..m_in {
            if supported[j] {
                new_index[j] = origin.len();
                origin.push(j);
            } else {
                dropped.push(j);
            }
        }
        let kept_caps: Vec<Cap> = origin.iter().map(|&j| caps[j]).collect();
        for row in &mut rows {
            for entry in row.iter_mut() {
                entry.0 = new_index[entry.0];
            }
        }

        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); origin.len()];
        for (i, row) in rows.iter().enumerate() {
            for &(j, v) in row {
                cols[j].push((i, v));
            }
        }

        Ok(Instance {
            budgets,
            total_budget: total,
            caps: kept_caps,
            rows,
            cols,
            origin,
            dropped,
        })
    }

    /// Convenience constructor with every cap unbounded.
    pub fn uncapped(
        budgets: Vec<f64>,
        valuations: Vec<Vec<(usize, f64)>>,
    ) -> Result<Self, ModelError> {
        let m = valuations
            .iter()
            .flat_map(|row| row.iter().map(|&(j, _)| j + 1))
            .max()
            .unwrap_or(0);
        Instance::new(budgets, valuations, vec![Cap::Unbounded; m], None)
    }

    pub fn n(&self) -> usize {
        self.budgets.len()
    }

    pub fn m(&self) -> usize {
        self.caps.len()
    }

    pub fn budget(&self, i: usize) -> f64 {
        self.budgets[i]
    }

    pub fn budgets(&self) -> &[f64] {
        &self.budgets
    }

    pub fn total_budget(&self) -> f64 {
        self.total_budget
    }

    pub fn cap(&self, j: usize) -> Cap {
        self.caps[j]
    }

    pub fn caps(&self) -> &[Cap] {
        &self.caps
    }

    /// Projects agent `i` values, with the valuations, sorted by project.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// Agents valuing project `j`, with the valuations, sorted by agent.
    pub fn supporters(&self, j: usize) -> &[(usize, f64)] {
        &self.cols[j]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        match self.rows[i].binary_search_by_key(&j, |&(p, _)| p) {
            Ok(k) => self.rows[i][k].1,
            Err(_) => 0.0,
        }
    }

    pub fn utility(&self, i: usize, x: &[f64]) -> f64 {
        self.rows[i].iter().map(|&(j, v)| v * x[j]).sum()
    }

    pub fn utilities(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n()).map(|i| self.utility(i, x)).collect()
    }

    /// Number of stored (agent, project) valuation pairs.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Index of kept project `j` in the input project list.
    pub fn original_project(&self, j: usize) -> usize {
        self.origin[j]
    }

    pub fn dropped_projects(&self) -> &[usize] {
        &self.dropped
    }

    /// Same instance with each agent's valuation row multiplied by a factor;
    /// sparsity pattern and project indexing are preserved.
    pub(crate) fn with_scaled_rows(&self, scale: &[f64]) -> Instance {
        let rows: Vec<Vec<(usize, f64)>> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().map(|&(j, v)| (j, v * scale[i])).collect())
            .collect();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.m()];
        for (i, row) in rows.iter().enumerate() {
            for &(j, v) in row {
                cols[j].push((i, v));
            }
        }
        Instance {
            budgets: self.budgets.clone(),
            total_budget: self.total_budget,
            caps: self.caps.clone(),
            rows,
            cols,
            origin: self.origin.clone(),
            dropped: self.dropped.clone(),
        }
    }
}

/// Result of the cap-sufficiency test: every agent's liked projects must
/// offer at least as much total cap as the pooled budgets of the agents
/// sharing a liked project with them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CapSufficiency {
    Sufficient,
    Insufficient {
        agent: usize,
        cap_sum: f64,
        friend_budgets: f64,
    },
}

impl CapSufficiency {
    pub fn is_sufficient(&self) -> bool {
        matches!(self, CapSufficiency::Sufficient)
    }
}

/// Check cap-sufficiency, returning the first violating agent as witness.
pub fn check_cap_sufficient(inst: &Instance) -> CapSufficiency {
    let mut friend_seen = vec![false; inst.n()];
    for i in 0..inst.n() {
        let mut cap_sum = 0.0_f64;
        for &(j, _) in inst.row(i) {
            cap_sum += inst.cap(j).as_f64();
        }
        if cap_sum.is_infinite() {
            continue;
        }
        let mut friend_budgets = 0.0;
        let mut touched = Vec::new();
        for &(j, _) in inst.row(i) {
            for &(f, _) in inst.supporters(j) {
                if !friend_seen[f] {
                    friend_seen[f] = true;
                    touched.push(f);
                    friend_budgets += inst.budget(f);
                }
            }
        }
        for f in touched {
            friend_seen[f] = false;
        }
        if cap_sum < friend_budgets {
            return CapSufficiency::Insufficient {
                agent: i,
                cap_sum,
                friend_budgets,
            };
        }
    }
    CapSufficiency::Sufficient
}

/// An instance with each agent's valuations scaled so the smallest positive
/// value equals the requested target. Scale factors convert utilities on the
/// rescaled instance back to raw units (`raw = rescaled / scale`).
#[derive(Debug, Clone)]
pub struct RescaledInstance {
    pub instance: Instance,
    pub scale: Vec<f64>,
    /// Agents with no positive valuation, left untouched.
    pub unscaled_agents: Vec<usize>,
}

/// Scale each agent's valuation row so its minimum positive entry equals
/// `target` (> 1). Zero valuations stay zero.
pub fn rescale_valuations(inst: &Instance, target: f64) -> Result<RescaledInstance, ModelError> {
    if !(target.is_finite() && target > 1.0) {
        return Err(ModelError::BadRescaleTarget(target));
    }
    let mut scale = vec![1.0; inst.n()];
    let mut unscaled = Vec::new();
    for i in 0..inst.n() {
        let min = inst
            .row(i)
            .iter()
            .map(|&(_, v)| v)
            .fold(f64::INFINITY, f64::min);
        if min.is_finite() {
            scale[i] = target / min;
        } else {
            unscaled.push(i);
        }
    }
    Ok(RescaledInstance {
        instance: inst.with_scaled_rows(&scale),
        scale,
        unscaled_agents: unscaled,
    })
}

/// Whether every positive valuation exceeds 1, as the capped program requires.
pub fn is_rescaled(inst: &Instance) -> bool {
    (0..inst.n()).all(|i| inst.row(i).iter().all(|&(_, v)| v > 1.0))
}

/// A spending vector over the instance's projects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation(Vec<f64>);

impl Allocation {
    pub fn new(x: Vec<f64>) -> Self {
        Allocation(x)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn total_spend(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl std::ops::Deref for Allocation {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Allocation {
    fn from(x: Vec<f64>) -> Self {
        Allocation(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum FeasibilityViolation {
    NegativeSpend { project: usize, amount: f64 },
    CapExceeded { project: usize, cap: f64, excess: f64 },
    BudgetExceeded { total: f64, excess: f64 },
}

/// Every violated bound of an allocation, with magnitudes. Empty iff feasible.
#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityReport {
    pub tol: f64,
    pub violations: Vec<FeasibilityViolation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check `x` against non-negativity, caps, and the total budget at absolute
/// tolerance `1e-9 * B`.
pub fn feasibility_report(
    inst: &Instance,
    x: &Allocation,
) -> Result<FeasibilityReport, ModelError> {
    feasibility_report_with_tol(inst, x, 1e-9 * inst.total_budget())
}

pub fn feasibility_report_with_tol(
    inst: &Instance,
    x: &Allocation,
    tol: f64,
) -> Result<FeasibilityReport, ModelError> {
    if x.len() != inst.m() {
        return Err(ModelError::DimensionMismatch {
            context: "allocation",
            expected: inst.m(),
            got: x.len(),
        });
    }
    let mut violations = Vec::new();
    for (j, &xj) in x.iter().enumerate() {
        if xj < -tol {
            violations.push(FeasibilityViolation::NegativeSpend {
                project: j,
                amount: xj,
            });
        }
        if let Cap::Finite(c) = inst.cap(j) {
            if xj > c + tol {
                violations.push(FeasibilityViolation::CapExceeded {
                    project: j,
                    cap: c,
                    excess: xj - c,
                });
            }
        }
    }
    let total = x.total_spend();
    if total > inst.total_budget() + tol {
        violations.push(FeasibilityViolation::BudgetExceeded {
            total,
            excess: total - inst.total_budget(),
        });
    }
    Ok(FeasibilityReport { tol, violations })
}

/// Per-agent per-project spending, stored on the instance's valuation
/// sparsity pattern: `entry(i, k)` pairs with `inst.row(i)[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionMatrix {
    entries: Vec<Vec<f64>>,
}

impl ContributionMatrix {
    pub fn zeros(inst: &Instance) -> Self {
        ContributionMatrix {
            entries: (0..inst.n())
                .map(|i| vec![0.0; inst.row(i).len()])
                .collect(),
        }
    }

    /// Uniform split of each agent's budget across the projects they value.
    pub fn uniform(inst: &Instance) -> Self {
        ContributionMatrix {
            entries: (0..inst.n())
                .map(|i| {
                    let k = inst.row(i).len();
                    if k == 0 {
                        Vec::new()
                    } else {
                        vec![inst.budget(i) / k as f64; k]
                    }
                })
                .collect(),
        }
    }

    pub fn from_entries(inst: &Instance, entries: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        if entries.len() != inst.n() {
            return Err(ModelError::DimensionMismatch {
                context: "contribution rows",
                expected: inst.n(),
                got: entries.len(),
            });
        }
        for (i, row) in entries.iter().enumerate() {
            if row.len() != inst.row(i).len() {
                return Err(ModelError::DimensionMismatch {
                    context: "contribution row entries",
                    expected: inst.row(i).len(),
                    got: row.len(),
                });
            }
        }
        Ok(ContributionMatrix { entries })
    }

    pub fn entry(&self, i: usize, k: usize) -> f64 {
        self.entries[i][k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.entries[i]
    }

    /// Spending on project `j` by agent `i`, zero off the valuation support.
    pub fn spend(&self, inst: &Instance, i: usize, j: usize) -> f64 {
        match inst.row(i).binary_search_by_key(&j, |&(p, _)| p) {
            Ok(k) => self.entries[i][k],
            Err(_) => 0.0,
        }
    }

    pub fn agent_spend(&self, i: usize) -> f64 {
        self.entries[i].iter().sum()
    }

    /// Implied project totals x_j(b), accumulated in fixed agent order so
    /// repeated runs are bit-identical.
    pub fn project_totals(&self, inst: &Instance) -> Vec<f64> {
        let mut x = vec![0.0; inst.m()];
        for (i, row) in self.entries.iter().enumerate() {
            for (k, &b) in row.iter().enumerate() {
                x[inst.row(i)[k].0] += b;
            }
        }
        x
    }

    pub fn allocation(&self, inst: &Instance) -> Allocation {
        Allocation(self.project_totals(inst))
    }
}

/// Personalized prices, stored sparsely per agent; absent entries are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSystem {
    entries: Vec<Vec<(usize, f64)>>,
}

impl PriceSystem {
    pub fn new(entries: Vec<Vec<(usize, f64)>>) -> Self {
        let entries = entries
            .into_iter()
            .map(|mut row| {
                row.sort_by_key(|&(j, _)| j);
                row
            })
            .collect();
        PriceSystem { entries }
    }

    pub fn n(&self) -> usize {
        self.entries.len()
    }

    pub fn price(&self, i: usize, j: usize) -> f64 {
        match self.entries[i].binary_search_by_key(&j, |&(p, _)| p) {
            Ok(k) => self.entries[i][k].1,
            Err(_) => 0.0,
        }
    }

    pub fn agent_prices(&self, i: usize) -> &[(usize, f64)] {
        &self.entries[i]
    }

    pub fn dense_row(&self, i: usize, m: usize) -> Vec<f64> {
        let mut row = vec![0.0; m];
        for &(j, p) in &self.entries[i] {
            row[j] = p;
        }
        row
    }

    pub fn column_sums(&self, m: usize) -> Vec<f64> {
        let mut sums = vec![0.0; m];
        for row in &self.entries {
            for &(j, p) in row {
                sums[j] += p;
            }
        }
        sums
    }

    /// Cost of allocation `x` at agent `i`'s prices.
    pub fn cost(&self, i: usize, x: &[f64]) -> f64 {
        self.entries[i].iter().map(|&(j, p)| p * x[j]).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_relative_eq;

    #[test]
    fn budget_sum_mismatch_rejected() {
        let err = Instance::new(
            vec![0.5, 0.5],
            vec![vec![(0, 1.0)], vec![(1, 1.0)]],
            vec![Cap::Unbounded, Cap::Unbounded],
            Some(1.1),
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::BudgetSumMismatch { .. }));
    }

    #[test]
    fn nonpositive_cap_rejected() {
        let err = Instance::new(
            vec![1.0],
            vec![vec![(0, 1.0)]],
            vec![Cap::Finite(0.0)],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::BadCap { project: 0, .. }));
    }

    #[test]
    fn cap_sum_below_budget_rejected() {
        let err = Instance::new(
            vec![1.0],
            vec![vec![(0, 1.0), (1, 1.0)]],
            vec![Cap::Finite(0.25), Cap::Finite(0.25)],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::InsufficientCaps { .. }));
    }

    #[test]
    fn unsupported_projects_dropped() {
        let inst = Instance::new(
            vec![1.0],
            vec![vec![(0, 1.0), (2, 2.0)]],
            vec![Cap::Unbounded, Cap::Finite(5.0), Cap::Unbounded],
            None,
        )
        .unwrap();
        assert_eq!(inst.m(), 2);
        assert_eq!(inst.dropped_projects(), &[1]);
        assert_eq!(inst.original_project(1), 2);
        assert_eq!(inst.value(0, 1), 2.0);
    }

    #[test]
    fn cap_sufficiency_underspend_witness() {
        let inst = fixtures::underspend_capped();
        match check_cap_sufficient(&inst) {
            CapSufficiency::Insufficient {
                agent,
                cap_sum,
                friend_budgets,
            } => {
                assert_eq!(agent, 0);
                assert_relative_eq!(cap_sum, 0.25);
                assert_relative_eq!(friend_budgets, 0.5);
            }
            CapSufficiency::Sufficient => panic!("expected insufficiency"),
        }
    }

    #[test]
    fn cap_sufficiency_uncapped_always_holds() {
        let inst = fixtures::irrational_optimum();
        assert!(check_cap_sufficient(&inst).is_sufficient());
    }

    #[test]
    fn cap_sufficiency_shared_capped_project() {
        let inst = fixtures::shared_capped_project();
        assert!(check_cap_sufficient(&inst).is_sufficient());
    }

    #[test]
    fn cap_sufficiency_when_each_agent_reaches_budget() {
        // Sufficient condition: each agent's liked caps alone reach B.
        let inst = Instance::new(
            vec![0.5, 0.5],
            vec![vec![(0, 1.0)], vec![(1, 1.0)]],
            vec![Cap::Finite(1.0), Cap::Finite(1.0)],
            None,
        )
        .unwrap();
        assert!(check_cap_sufficient(&inst).is_sufficient());
    }

    #[test]
    fn rescale_scales_minimum_to_target() {
        let inst = Instance::uncapped(vec![1.0], vec![vec![(0, 1.0), (2, 4.0)]]).unwrap();
        let r = rescale_valuations(&inst, std::f64::consts::E).unwrap();
        assert_relative_eq!(r.instance.value(0, 0), std::f64::consts::E);
        assert_relative_eq!(r.instance.value(0, 1), 4.0 * std::f64::consts::E);
        assert!(r.unscaled_agents.is_empty());
    }

    #[test]
    fn rescale_approval_row() {
        // Approval row (1, 0, 1) becomes (e, 0, e); zeros stay zero.
        let inst = Instance::new(
            vec![0.5, 0.5],
            vec![vec![(0, 1.0), (2, 1.0)], vec![(1, 5.0)]],
            vec![Cap::Unbounded; 3],
            None,
        )
        .unwrap();
        let r = rescale_valuations(&inst, std::f64::consts::E).unwrap();
        assert_relative_eq!(r.instance.value(0, 0), std::f64::consts::E);
        assert_relative_eq!(r.instance.value(0, 1), 0.0);
        assert_relative_eq!(r.instance.value(0, 2), std::f64::consts::E);
        assert_relative_eq!(r.instance.value(1, 1), std::f64::consts::E);
    }

    #[test]
    fn rescale_uniform_row() {
        let inst = Instance::uncapped(vec![1.0], vec![vec![(0, 2.0), (1, 2.0)]]).unwrap();
        let r = rescale_valuations(&inst, std::f64::consts::E).unwrap();
        assert_relative_eq!(r.instance.value(0, 0), std::f64::consts::E);
        assert_relative_eq!(r.instance.value(0, 1), std::f64::consts::E);
    }

    #[test]
    fn rescale_is_idempotent() {
        let inst =
            Instance::uncapped(vec![1.0, 1.0], vec![vec![(0, 3.0), (1, 7.0)], vec![(1, 2.0)]])
                .unwrap();
        let once = rescale_valuations(&inst, std::f64::consts::E).unwrap();
        let twice = rescale_valuations(&once.instance, std::f64::consts::E).unwrap();
        for i in 0..inst.n() {
            for (a, b) in once.instance.row(i).iter().zip(twice.instance.row(i)) {
                assert_relative_eq!(a.1, b.1, max_relative = 1e-15);
            }
            assert_relative_eq!(twice.scale[i], 1.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn rescale_flags_zero_agents() {
        // Second agent values nothing; the row survives untouched.
        let inst = Instance::new(
            vec![0.5, 0.5],
            vec![vec![(0, 1.0)], vec![]],
            vec![Cap::Unbounded],
            None,
        )
        .unwrap();
        let r = rescale_valuations(&inst, 2.0).unwrap();
        assert_eq!(r.unscaled_agents, vec![1]);
        assert_relative_eq!(r.scale[1], 1.0);
    }

    #[test]
    fn rescale_target_must_exceed_one() {
        let inst = fixtures::personal_projects(2);
        assert!(matches!(
            rescale_valuations(&inst, 1.0),
            Err(ModelError::BadRescaleTarget(_))
        ));
    }

    #[test]
    fn feasibility_underspend_allocation() {
        let inst = fixtures::underspend_capped();
        let report = feasibility_report(&inst, &Allocation::new(vec![0.25, 0.5])).unwrap();
        assert!(report.is_feasible());
    }

    #[test]
    fn feasibility_cap_violation_magnitude() {
        let inst = fixtures::underspend_capped();
        let report = feasibility_report(&inst, &Allocation::new(vec![1.25, 0.0])).unwrap();
        assert_eq!(report.violations.len(), 2); // cap and total budget
        match &report.violations[0] {
            FeasibilityViolation::CapExceeded {
                project, excess, ..
            } => {
                assert_eq!(*project, 0);
                assert_relative_eq!(*excess, 1.0);
            }
            other => panic!("unexpected violation {other:?}"),
        }
    }

    #[test]
    fn feasibility_exact_budget_is_feasible() {
        let inst = fixtures::personal_projects(2);
        let report = feasibility_report(&inst, &Allocation::new(vec![0.5, 0.5])).unwrap();
        assert!(report.is_feasible());
    }

    #[test]
    fn feasibility_dimension_mismatch() {
        let inst = fixtures::personal_projects(2);
        assert!(matches!(
            feasibility_report(&inst, &Allocation::new(vec![0.5])),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn contribution_totals_and_spend() {
        let inst = fixtures::shared_capped_project();
        let mut b = ContributionMatrix::zeros(&inst);
        b.row_mut(0).copy_from_slice(&[0.5, 0.5]);
        b.row_mut(1).copy_from_slice(&[0.5, 0.5]);
        let x = b.project_totals(&inst);
        assert_relative_eq!(x[0], 1.0);
        assert_relative_eq!(x[1], 0.5);
        assert_relative_eq!(x[2], 0.5);
        assert_relative_eq!(b.agent_spend(0), 1.0);
        assert_relative_eq!(b.spend(&inst, 0, 2), 0.0);
    }

    #[test]
    fn price_system_lookup_and_sums() {
        let p = PriceSystem::new(vec![vec![(1, 1.0), (0, 0.5)], vec![(0, 0.5), (2, 1.0)]]);
        assert_relative_eq!(p.price(0, 0), 0.5);
        assert_relative_eq!(p.price(0, 2), 0.0);
        let sums = p.column_sums(3);
        assert_relative_eq!(sums[0], 1.0);
        assert_relative_eq!(p.cost(0, &[1.0, 0.5, 0.5]), 1.0);
    }
}
