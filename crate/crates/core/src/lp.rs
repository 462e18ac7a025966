//! Dense two-phase primal simplex for the small audit LPs. Bland's rule
//! guards against cycling; not meant for large or sparse systems.

use thiserror::Error;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub cmp: Cmp,
    pub rhs: f64,
}

/// Maximize `objective . x` subject to the constraints and `x >= 0`,
/// with optional finite upper bounds per variable.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub upper_bounds: Vec<Option<f64>>,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        LinearProgram {
            objective,
            constraints: Vec::new(),
            upper_bounds: vec![None; n],
        }
    }

    pub fn constrain(&mut self, coeffs: Vec<f64>, cmp: Cmp, rhs: f64) {
        debug_assert_eq!(coeffs.len(), self.objective.len());
        self.constraints.push(Constraint { coeffs, cmp, rhs });
    }

    pub fn bound(&mut self, var: usize, upper: f64) {
        self.upper_bounds[var] = Some(upper);
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible (phase-1 residual {residual})")]
    Infeasible { residual: f64 },
    #[error("linear program is unbounded in column {column}")]
    Unbounded { column: usize },
    #[error("pivot limit {0} exceeded")]
    PivotLimit(usize),
}

/// Solve with the dense two-phase simplex; returns an optimal basic solution.
pub fn lp_solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    Tableau::build(lp).solve()
}

struct Tableau {
    n_struct: usize,
    n_total: usize,
    artificial_start: usize,
    /// Constraint rows, each of length n_total + 1 (rhs last).
    rows: Vec<Vec<f64>>,
    /// Pristine copy of `rows` for the final basis refinement.
    original: Vec<Vec<f64>>,
    basis: Vec<usize>,
    objective: Vec<f64>,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Tableau {
        let n_struct = lp.objective.len();
        let mut constraints: Vec<(Vec<f64>, Cmp, f64)> = lp
            .constraints
            .iter()
            .map(|c| (c.coeffs.clone(), c.cmp, c.rhs))
            .collect();
        for (v, ub) in lp.upper_bounds.iter().enumerate() {
            if let Some(u) = ub {
                let mut coeffs = vec![0.0; n_struct];
                coeffs[v] = 1.0;
                constraints.push((coeffs, Cmp::Le, *u));
            }
        }
        // Flip rows so every rhs is non-negative.
        for (coeffs, cmp, rhs) in constraints.iter_mut() {
            if *rhs < 0.0 {
                for c in coeffs.iter_mut() {
                    *c = -*c;
                }
                *rhs = -*rhs;
                *cmp = match *cmp {
                    Cmp::Le => Cmp::Ge,
                    Cmp::Ge => Cmp::Le,
                    Cmp::Eq => Cmp::Eq,
                };
            }
        }

        let m = constraints.len();
        let n_slack = constraints
            .iter()
            .filter(|(_, cmp, _)| *cmp != Cmp::Eq)
            .count();
        let n_art = constraints
            .iter()
            .filter(|(_, cmp, _)| *cmp != Cmp::Le)
            .count();
        let artificial_start = n_struct + n_slack;
        let n_total = artificial_start + n_art;

        let mut rows = vec![vec![0.0; n_total + 1]; m];
        let mut basis = vec![0usize; m];
        let mut slack_idx = n_struct;
        let mut art_idx = artificial_start;
        for (r, (coeffs, cmp, rhs)) in constraints.iter().enumerate() {
            rows[r][..n_struct].copy_from_slice(coeffs);
            rows[r][n_total] = *rhs;
            match cmp {
                Cmp::Le => {
                    rows[r][slack_idx] = 1.0;
                    basis[r] = slack_idx;
                    slack_idx += 1;
                }
                Cmp::Ge => {
                    rows[r][slack_idx] = -1.0;
                    slack_idx += 1;
                    rows[r][art_idx] = 1.0;
                    basis[r] = art_idx;
                    art_idx += 1;
                }
                Cmp::Eq => {
                    rows[r][art_idx] = 1.0;
                    basis[r] = art_idx;
                    art_idx += 1;
                }
            }
        }

        Tableau {
            n_struct,
            n_total,
            artificial_start,
            original: rows.clone(),
            rows,
            basis,
            objective: lp.objective.clone(),
        }
    }

    /// Re-derive the basic solution from the final basis using the pristine
    /// constraint data, shedding the drift accumulated by pivoting.
    fn refine(&self) -> Option<Vec<f64>> {
        let m = self.rows.len();
        let mut system = vec![vec![0.0; m + 1]; m];
        for r in 0..m {
            for (c, &bv) in self.basis.iter().enumerate() {
                system[r][c] = self.original[r][bv];
            }
            system[r][m] = self.original[r][self.n_total];
        }
        // Gaussian elimination with partial pivoting.
        for col in 0..m {
            let piv = (col..m)
                .max_by(|&a, &b| system[a][col].abs().partial_cmp(&system[b][col].abs()).unwrap())?;
            if system[piv][col].abs() < 1e-12 {
                return None;
            }
            system.swap(col, piv);
            for r in 0..m {
                if r != col {
                    let f = system[r][col] / system[col][col];
                    if f != 0.0 {
                        for c in col..=m {
                            system[r][c] -= f * system[col][c];
                        }
                    }
                }
            }
        }
        let mut x = vec![0.0; self.n_struct];
        for (c, &bv) in self.basis.iter().enumerate() {
            let value = system[c][m] / system[c][c];
            if value < -1e-7 {
                return None; // refinement left the feasible region; keep the tableau values
            }
            if bv < self.n_struct {
                x[bv] = value.max(0.0);
            }
        }
        Some(x)
    }

    fn pivot(&mut self, r: usize, c: usize, zrow: &mut [f64]) {
        let factor = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= factor;
        }
        let pivot_row = self.rows[r].clone();
        for (rr, row) in self.rows.iter_mut().enumerate() {
            if rr != r && row[c].abs() > 0.0 {
                let f = row[c];
                for (v, pv) in row.iter_mut().zip(pivot_row.iter()) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        let f = zrow[c];
        if f.abs() > 0.0 {
            for (v, pv) in zrow.iter_mut().zip(pivot_row.iter()) {
                *v -= f * pv;
            }
            zrow[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Bland's rule: entering = lowest-index column with negative reduced
    /// cost, leaving = min-ratio row breaking ties by lowest basic variable.
    fn run_phase(
        &mut self,
        zrow: &mut [f64],
        allowed: usize,
        limit: usize,
    ) -> Result<(), LpError> {
        for _ in 0..limit {
            let entering = (0..allowed).find(|&j| zrow[j] < -EPS);
            let Some(c) = entering else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows.len() {
                let a = self.rows[r][c];
                if a > EPS {
                    // Degenerate rows drift to epsilon-negative right-hand
                    // sides; a negative ratio would step the entering
                    // variable backwards out of the feasible region.
                    let ratio = self.rows[r][self.n_total].max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some((lr, lratio)) => {
                            ratio < lratio - EPS
                                || (ratio < lratio + EPS && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((r, _)) = leave else {
                return Err(LpError::Unbounded { column: c });
            };
            self.pivot(r, c, zrow);
        }
        Err(LpError::PivotLimit(limit))
    }

    fn solve(mut self) -> Result<LpSolution, LpError> {
        let m = self.rows.len();
        let limit = 50 * (m + self.n_total + 10);

        // Phase 1: drive the artificials to zero.
        if self.artificial_start < self.n_total {
            let mut zrow = vec![0.0; self.n_total + 1];
            for r in 0..m {
                if self.basis[r] >= self.artificial_start {
                    for j in 0..=self.n_total {
                        zrow[j] -= self.rows[r][j];
                    }
                }
            }
            for j in self.artificial_start..self.n_total {
                zrow[j] = 0.0;
            }
            self.run_phase(&mut zrow, self.artificial_start, limit)?;
            let residual = -zrow[self.n_total];
            if residual > 1e-7 {
                return Err(LpError::Infeasible { residual });
            }
            // Pivot leftover zero-level artificials out of the basis; rows
            // with no eligible pivot are redundant and can stay as they are.
            for r in 0..m {
                if self.basis[r] >= self.artificial_start {
                    let best = (0..self.artificial_start)
                        .filter(|&j| self.rows[r][j].abs() > EPS)
                        .max_by(|&a, &b| {
                            self.rows[r][a].abs().partial_cmp(&self.rows[r][b].abs()).unwrap()
                        });
                    if let Some(c) = best {
                        self.pivot(r, c, &mut zrow);
                    }
                }
            }
        }

        // Phase 2: maximize the real objective.
        let mut zrow = vec![0.0; self.n_total + 1];
        for j in 0..self.n_struct {
            zrow[j] = -self.objective[j];
        }
        for r in 0..m {
            let bv = self.basis[r];
            if bv < self.n_struct && self.objective[bv] != 0.0 {
                let c = self.objective[bv];
                for j in 0..=self.n_total {
                    zrow[j] += c * self.rows[r][j];
                }
            }
        }
        for r in 0..m {
            zrow[self.basis[r]] = 0.0;
        }
        self.run_phase(&mut zrow, self.artificial_start, limit)?;

        let x = self.refine().unwrap_or_else(|| {
            let mut x = vec![0.0; self.n_struct];
            for r in 0..m {
                if self.basis[r] < self.n_struct {
                    x[self.basis[r]] = self.rows[r][self.n_total].max(0.0);
                }
            }
            x
        });
        let objective = self
            .objective
            .iter()
            .zip(x.iter())
            .map(|(c, v)| c * v)
            .sum();
        Ok(LpSolution { x, objective })
    }
}
