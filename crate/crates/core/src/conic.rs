//! Exponential-cone formulation of the capped spending program, with a
//! line-oriented text format and a JSON mirror for handing the problem to
//! external conic solvers, and an importer for their solutions.
//!
//! The program over variables `b_ij` (pair spending), `x_j` (project
//! totals) and `t_ij` (entropy epigraph terms) is
//!
//! ```text
//! maximize   sum b_ij log v_ij - sum t_ij
//! subject to (x_j, b_ij, -t_ij) in Kexp   for every valued pair (i, j)
//!            sum_j b_ij <= B_i            for every agent i
//!            sum_i b_ij  = x_j            for every project j
//!            x_j <= cap_j                 for every capped project j
//! ```
//!
//! where `Kexp = {(u1, u2, u3) : u1 >= u2 * e^(u3/u2), u2 > 0}` (with its
//! closure on the boundary).

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capped::{
    estimate_multipliers, kkt_residuals, unfunded_price_exponents, CappedSolution,
};
use crate::dynamics::shmyrev_objective;
use crate::model::{Allocation, Cap, ContributionMatrix, Instance};

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("solution is missing variable {0}")]
    MissingVariable(String),
    #[error("instance shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    /// `b[i][j]`: agent i's spending on project j.
    Spend { agent: usize, project: usize },
    /// `x[j]`: total spending on project j.
    Total { project: usize },
    /// `t[i][j]`: epigraph variable for `b_ij log(b_ij / x_j)`.
    Entropy { agent: usize, project: usize },
}

impl fmt::Display for VarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarKind::Spend { agent, project } => write!(f, "b[{agent}][{project}]"),
            VarKind::Total { project } => write!(f, "x[{project}]"),
            VarKind::Entropy { agent, project } => write!(f, "t[{agent}][{project}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowCmp {
    Le,
    Eq,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearRow {
    pub label: String,
    pub cmp: RowCmp,
    pub rhs: f64,
    pub terms: Vec<(usize, f64)>,
}

/// One exponential-cone membership `(x_j, b_ij, -t_ij) in Kexp`, stored as
/// the indices of the three participating variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConeTriple {
    pub total: usize,
    pub spend: usize,
    pub entropy: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConicProgram {
    pub vars: Vec<VarKind>,
    /// Maximization objective, sparse over variables.
    pub objective: Vec<(usize, f64)>,
    pub rows: Vec<LinearRow>,
    pub cones: Vec<ConeTriple>,
}

impl ConicProgram {
    pub fn var_name(&self, index: usize) -> String {
        self.vars[index].to_string()
    }
}

/// Structured exponential-cone encoding of the capped program for a
/// rescaled instance. Variable order: all `b` pairs (agent-major), then
/// `x` totals, then `t` pairs.
pub fn emit_conic(inst: &Instance) -> ConicProgram {
    let mut vars = Vec::new();
    let mut pair_index = Vec::new(); // (i, k) -> b var index
    for i in 0..inst.n() {
        let mut row = Vec::new();
        for &(j, _) in inst.row(i) {
            row.push(vars.len());
            vars.push(VarKind::Spend {
                agent: i,
                project: j,
            });
        }
        pair_index.push(row);
    }
    let x_base = vars.len();
    for j in 0..inst.m() {
        vars.push(VarKind::Total { project: j });
    }
    let mut t_index: Vec<Vec<usize>> = Vec::new();
    for i in 0..inst.n() {
        let mut row = Vec::new();
        for &(j, _) in inst.row(i) {
            row.push(vars.len());
            vars.push(VarKind::Entropy {
                agent: i,
                project: j,
            });
        }
        t_index.push(row);
    }

    let mut objective = Vec::new();
    for i in 0..inst.n() {
        for (k, &(_, v)) in inst.row(i).iter().enumerate() {
            objective.push((pair_index[i][k], v.ln()));
        }
    }
    for row in &t_index {
        for &t in row {
            objective.push((t, -1.0));
        }
    }

    let mut rows = Vec::new();
    for i in 0..inst.n() {
        rows.push(LinearRow {
            label: format!("budget[{i}]"),
            cmp: RowCmp::Le,
            rhs: inst.budget(i),
            terms: pair_index[i].iter().map(|&v| (v, 1.0)).collect(),
        });
    }
    for j in 0..inst.m() {
        let mut terms: Vec<(usize, f64)> = inst
            .supporters(j)
            .iter()
            .map(|&(i, _)| {
                let k = inst
                    .row(i)
                    .binary_search_by_key(&j, |&(p, _)| p)
                    .expect("supporter row entry");
                (pair_index[i][k], 1.0)
            })
            .collect();
        terms.push((x_base + j, -1.0));
        rows.push(LinearRow {
            label: format!("xdef[{j}]"),
            cmp: RowCmp::Eq,
            rhs: 0.0,
            terms,
        });
    }
    for j in 0..inst.m() {
        if let Cap::Finite(c) = inst.cap(j) {
            rows.push(LinearRow {
                label: format!("cap[{j}]"),
                cmp: RowCmp::Le,
                rhs: c,
                terms: vec![(x_base + j, 1.0)],
            });
        }
    }

    let mut cones = Vec::new();
    for i in 0..inst.n() {
        for (k, &(j, _)) in inst.row(i).iter().enumerate() {
            cones.push(ConeTriple {
                total: x_base + j,
                spend: pair_index[i][k],
                entropy: t_index[i][k],
            });
        }
    }

    ConicProgram {
        vars,
        objective,
        rows,
        cones,
    }
}

impl ConicProgram {
    /// Line-oriented text serialization (see module docs for the program
    /// shape). Floats use the shortest representation that parses back to
    /// the same value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("CONIC-LINDAHL v1\n");
        out.push_str(&format!("VARS {}\n", self.vars.len()));
        for (idx, kind) in self.vars.iter().enumerate() {
            match kind {
                VarKind::Spend { agent, project } => {
                    out.push_str(&format!("VAR {idx} b {agent} {project}\n"))
                }
                VarKind::Total { project } => out.push_str(&format!("VAR {idx} x {project}\n")),
                VarKind::Entropy { agent, project } => {
                    out.push_str(&format!("VAR {idx} t {agent} {project}\n"))
                }
            }
        }
        out.push_str(&format!("OBJECTIVE {}\n", self.objective.len()));
        for (var, coeff) in &self.objective {
            out.push_str(&format!("OBJ {var} {coeff}\n"));
        }
        out.push_str(&format!("ROWS {}\n", self.rows.len()));
        for row in &self.rows {
            let cmp = match row.cmp {
                RowCmp::Le => "LE",
                RowCmp::Eq => "EQ",
            };
            out.push_str(&format!(
                "ROW {} {} {} {}",
                row.label,
                cmp,
                row.rhs,
                row.terms.len()
            ));
            for (var, coeff) in &row.terms {
                out.push_str(&format!(" {var} {coeff}"));
            }
            out.push('\n');
        }
        out.push_str(&format!("CONES {}\n", self.cones.len()));
        for cone in &self.cones {
            out.push_str(&format!(
                "CONE {} {} {}\n",
                cone.total, cone.spend, cone.entropy
            ));
        }
        out.push_str("END\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ConicError> {
        let err = |line: usize, message: &str| ConicError::Parse {
            line,
            message: message.to_string(),
        };
        let mut vars = Vec::new();
        let mut objective = Vec::new();
        let mut rows = Vec::new();
        let mut cones = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let fields: Vec<&str> = raw.split_whitespace().collect();
            match fields.first().copied() {
                None | Some("#") => {}
                Some("CONIC-LINDAHL") | Some("VARS") | Some("OBJECTIVE") | Some("ROWS")
                | Some("CONES") | Some("END") => {}
                Some("VAR") => {
                    if fields.len() < 4 {
                        return Err(err(line, "VAR needs index, kind and indices"));
                    }
                    let kind = match fields[2] {
                        "b" => VarKind::Spend {
                            agent: parse(fields[3], line)?,
                            project: parse(fields.get(4).ok_or_else(|| {
                                err(line, "b variable needs agent and project")
                            })?, line)?,
                        },
                        "x" => VarKind::Total {
                            project: parse(fields[3], line)?,
                        },
                        "t" => VarKind::Entropy {
                            agent: parse(fields[3], line)?,
                            project: parse(fields.get(4).ok_or_else(|| {
                                err(line, "t variable needs agent and project")
                            })?, line)?,
                        },
                        other => return Err(err(line, &format!("unknown var kind {other}"))),
                    };
                    vars.push(kind);
                }
                Some("OBJ") => {
                    if fields.len() != 3 {
                        return Err(err(line, "OBJ needs var and coefficient"));
                    }
                    objective.push((parse(fields[1], line)?, parse(fields[2], line)?));
                }
                Some("ROW") => {
                    if fields.len() < 5 {
                        return Err(err(line, "ROW needs label, cmp, rhs, nterms"));
                    }
                    let cmp = match fields[2] {
                        "LE" => RowCmp::Le,
                        "EQ" => RowCmp::Eq,
                        other => return Err(err(line, &format!("unknown cmp {other}"))),
                    };
                    let nterms: usize = parse(fields[4], line)?;
                    if fields.len() != 5 + 2 * nterms {
                        return Err(err(line, "ROW term count mismatch"));
                    }
                    let mut terms = Vec::with_capacity(nterms);
                    for t in 0..nterms {
                        terms.push((
                            parse(fields[5 + 2 * t], line)?,
                            parse(fields[6 + 2 * t], line)?,
                        ));
                    }
                    rows.push(LinearRow {
                        label: fields[1].to_string(),
                        cmp,
                        rhs: parse(fields[3], line)?,
                        terms,
                    });
                }
                Some("CONE") => {
                    if fields.len() != 4 {
                        return Err(err(line, "CONE needs three variable indices"));
                    }
                    cones.push(ConeTriple {
                        total: parse(fields[1], line)?,
                        spend: parse(fields[2], line)?,
                        entropy: parse(fields[3], line)?,
                    });
                }
                Some(other) => return Err(err(line, &format!("unknown record {other}"))),
            }
        }
        Ok(ConicProgram {
            vars,
            objective,
            rows,
            cones,
        })
    }
}

fn parse<T: std::str::FromStr>(s: &str, line: usize) -> Result<T, ConicError> {
    s.parse().map_err(|_| ConicError::Parse {
        line,
        message: format!("cannot parse {s}"),
    })
}

/// Rebuild a solver solution from a flat `variable name -> value` map as
/// produced by an external conic solver. Only the `b` variables are used;
/// totals and multipliers are recomputed for internal consistency. Slightly
/// negative spending values are clamped to zero.
pub fn import_solution(
    inst: &Instance,
    values: &HashMap<String, f64>,
    kkt_tol: f64,
) -> Result<CappedSolution, ConicError> {
    let mut b = ContributionMatrix::zeros(inst);
    for i in 0..inst.n() {
        for (k, &(j, _)) in inst.row(i).iter().enumerate() {
            let name = VarKind::Spend {
                agent: i,
                project: j,
            }
            .to_string();
            let value = *values
                .get(&name)
                .ok_or(ConicError::MissingVariable(name))?;
            b.row_mut(i)[k] = value.max(0.0);
        }
    }
    let x = b.project_totals(inst);
    let est = estimate_multipliers(inst, &b, &x);
    let residuals = kkt_residuals(inst, &b, &x, &est.lambda, &est.mu);
    let w = unfunded_price_exponents(inst, &x, &est.lambda.lambdas);
    Ok(CappedSolution {
        objective: -shmyrev_objective(inst, &b),
        x: Allocation::new(x),
        converged: residuals.within(kkt_tol),
        lambdas: est.lambda.lambdas,
        mus: est.mu.mus,
        w,
        iterations: 0,
        residuals,
        lambda_sources: est.lambda.sources,
        lambda_spread: est.lambda.max_spread,
        b,
    })
}
