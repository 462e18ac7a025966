//! Reader and writer for participatory-budgeting election files in the
//! Pabulib format: semicolon-separated sections `META`, `PROJECTS`, `VOTES`,
//! each headed by a column row. Only `approval` and `cumulative` vote types
//! are converted into instances.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::json::LoadedInstance;
use crate::model::{Cap, Instance, ModelError, DEFAULT_RESCALE_TARGET};

#[derive(Debug, Error)]
pub enum PabulibError {
    #[error("line {line}: row has no {column} column")]
    MissingColumn { line: usize, column: &'static str },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("missing required META key `budget`")]
    MissingBudget,
    #[error("budget must be positive, got {0}")]
    BadBudget(f64),
    #[error("line {line}: project {id} has non-positive cost {cost}")]
    BadCost { line: usize, id: String, cost: f64 },
    #[error("line {line}: vote references undeclared project {id}")]
    UnknownProject { line: usize, id: String },
    #[error("line {line}: duplicate voter id {id}")]
    DuplicateVoter { line: usize, id: String },
    #[error("line {line}: duplicate project id {id}")]
    DuplicateProject { line: usize, id: String },
    #[error("missing section {0}")]
    MissingSection(&'static str),
    #[error("vote type `{0}` is not supported; only approval and cumulative ballots are ingested")]
    UnsupportedVoteType(String),
    #[error("line {line}: points row has {got} entries for {expected} votes")]
    PointsMismatch {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("no voter with a non-empty ballot")]
    NoVoters,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A parsed file: sections kept cell-by-cell so serialization reproduces a
/// canonical file byte for byte, plus typed accessors for the fields used
/// to build instances. Money amounts keep their original strings.
#[derive(Debug, Clone, PartialEq)]
pub struct PabulibFile {
    /// META rows as (key, value), in file order.
    pub meta: Vec<(String, String)>,
    pub project_header: Vec<String>,
    pub project_rows: Vec<Vec<String>>,
    pub vote_header: Vec<String>,
    pub vote_rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct ProjectEntry {
    pub id: String,
    pub cost: f64,
    pub cost_str: String,
}

#[derive(Debug, Clone)]
pub struct VoteEntry {
    pub voter_id: String,
    pub project_ids: Vec<String>,
    pub points: Option<Vec<u64>>,
}

impl PabulibFile {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn budget(&self) -> Result<f64, PabulibError> {
        let raw = self.meta_value("budget").ok_or(PabulibError::MissingBudget)?;
        let value: f64 = raw
            .trim()
            .replace(',', ".")
            .parse()
            .map_err(|_| PabulibError::Malformed {
                line: 0,
                message: format!("cannot parse budget value `{raw}`"),
            })?;
        if value <= 0.0 {
            return Err(PabulibError::BadBudget(value));
        }
        Ok(value)
    }

    pub fn vote_type(&self) -> &str {
        self.meta_value("vote_type").unwrap_or("approval")
    }

    fn column(&self, header: &[String], name: &str) -> Option<usize> {
        header.iter().position(|h| h == name)
    }

    pub fn projects(&self) -> Result<Vec<ProjectEntry>, PabulibError> {
        let id_col = self
            .column(&self.project_header, "project_id")
            .ok_or(PabulibError::MissingColumn {
                line: 0,
                column: "project_id",
            })?;
        let cost_col = self
            .column(&self.project_header, "cost")
            .ok_or(PabulibError::MissingColumn {
                line: 0,
                column: "cost",
            })?;
        let mut out = Vec::with_capacity(self.project_rows.len());
        for row in &self.project_rows {
            let id = row[id_col].clone();
            let cost_str = row[cost_col].clone();
            let cost: f64 =
                cost_str
                    .trim()
                    .replace(',', ".")
                    .parse()
                    .map_err(|_| PabulibError::Malformed {
                        line: 0,
                        message: format!("cannot parse cost `{cost_str}` of project {id}"),
                    })?;
            out.push(ProjectEntry { id, cost, cost_str });
        }
        Ok(out)
    }

    pub fn votes(&self) -> Result<Vec<VoteEntry>, PabulibError> {
        let id_col = self
            .column(&self.vote_header, "voter_id")
            .ok_or(PabulibError::MissingColumn {
                line: 0,
                column: "voter_id",
            })?;
        let vote_col = self
            .column(&self.vote_header, "vote")
            .ok_or(PabulibError::MissingColumn {
                line: 0,
                column: "vote",
            })?;
        let points_col = self.column(&self.vote_header, "points");
        let mut out = Vec::with_capacity(self.vote_rows.len());
        for row in &self.vote_rows {
            let project_ids: Vec<String> = if row[vote_col].is_empty() {
                Vec::new()
            } else {
                row[vote_col].split(',').map(str::to_string).collect()
            };
            let points = match points_col {
                Some(c) if !row[c].is_empty() => {
                    let parsed: Result<Vec<u64>, _> =
                        row[c].split(',').map(|p| p.trim().parse()).collect();
                    Some(parsed.map_err(|_| PabulibError::Malformed {
                        line: 0,
                        message: format!("cannot parse points `{}`", row[c]),
                    })?)
                }
                _ => None,
            };
            out.push(VoteEntry {
                voter_id: row[id_col].clone(),
                project_ids,
                points,
            });
        }
        Ok(out)
    }

    /// Canonical serialization: `\n` line endings, sections in META,
    /// PROJECTS, VOTES order, cells joined with `;`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("META\n");
        out.push_str("key;value\n");
        for (k, v) in &self.meta {
            out.push_str(k);
            out.push(';');
            out.push_str(v);
            out.push('\n');
        }
        out.push_str("PROJECTS\n");
        out.push_str(&self.project_header.join(";"));
        out.push('\n');
        for row in &self.project_rows {
            out.push_str(&row.join(";"));
            out.push('\n');
        }
        out.push_str("VOTES\n");
        out.push_str(&self.vote_header.join(";"));
        out.push('\n');
        for row in &self.vote_rows {
            out.push_str(&row.join(";"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Meta,
    Projects,
    Votes,
}

/// Parse Pabulib text. Structural problems are reported with 1-based line
/// numbers; `\r\n` endings are accepted.
pub fn parse_pabulib(text: &str) -> Result<PabulibFile, PabulibError> {
    let mut meta = Vec::new();
    let mut project_header: Option<Vec<String>> = None;
    let mut project_rows = Vec::new();
    let mut vote_header: Option<Vec<String>> = None;
    let mut vote_rows = Vec::new();

    let mut section = Section::None;
    let mut expect_header = false;
    let mut seen_meta_header = false;

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim_end_matches('\r');
        if trimmed.is_empty() {
            continue;
        }
        match trimmed {
            "META" => {
                section = Section::Meta;
                expect_header = true;
                continue;
            }
            "PROJECTS" => {
                section = Section::Projects;
                expect_header = true;
                continue;
            }
            "VOTES" => {
                section = Section::Votes;
                expect_header = true;
                continue;
            }
            _ => {}
        }
        let cells: Vec<String> = trimmed.split(';').map(str::to_string).collect();
        match section {
            Section::None => {
                return Err(PabulibError::Malformed {
                    line,
                    message: "content before the first section header".to_string(),
                })
            }
            Section::Meta => {
                if expect_header {
                    // META's header row is `key;value`.
                    expect_header = false;
                    seen_meta_header = true;
                    if cells.len() < 2 || cells[0] != "key" {
                        return Err(PabulibError::Malformed {
                            line,
                            message: "META section must start with a key;value header".to_string(),
                        });
                    }
                    continue;
                }
                if cells.len() != 2 {
                    return Err(PabulibError::Malformed {
                        line,
                        message: format!("META row needs key;value, got {} cells", cells.len()),
                    });
                }
                meta.push((cells[0].clone(), cells[1].clone()));
            }
            Section::Projects => {
                if expect_header {
                    expect_header = false;
                    project_header = Some(cells);
                    continue;
                }
                let header = project_header.as_ref().unwrap();
                if cells.len() != header.len() {
                    return Err(PabulibError::Malformed {
                        line,
                        message: format!(
                            "project row has {} cells, header has {}",
                            cells.len(),
                            header.len()
                        ),
                    });
                }
                project_rows.push(cells);
            }
            Section::Votes => {
                if expect_header {
                    expect_header = false;
                    vote_header = Some(cells);
                    continue;
                }
                let header = vote_header.as_ref().unwrap();
                if cells.len() != header.len() {
                    return Err(PabulibError::Malformed {
                        line,
                        message: format!(
                            "vote row has {} cells, header has {}",
                            cells.len(),
                            header.len()
                        ),
                    });
                }
                vote_rows.push(cells);
            }
        }
    }

    if !seen_meta_header {
        return Err(PabulibError::MissingSection("META"));
    }
    let project_header = project_header.ok_or(PabulibError::MissingSection("PROJECTS"))?;
    let vote_header = vote_header.ok_or(PabulibError::MissingSection("VOTES"))?;

    let file = PabulibFile {
        meta,
        project_header,
        project_rows,
        vote_header,
        vote_rows,
    };
    validate(&file, text)?;
    Ok(file)
}

/// Structural validation needing cross-references: project ids unique,
/// voter ids unique, every voted project declared. Line numbers are
/// recovered from the original text.
fn validate(file: &PabulibFile, text: &str) -> Result<(), PabulibError> {
    let line_of = |needle: &str| -> usize {
        text.lines()
            .position(|l| l.trim_end_matches('\r') == needle)
            .map(|p| p + 1)
            .unwrap_or(0)
    };
    let projects = file.projects()?;
    let mut ids = HashSet::new();
    for (row, p) in file.project_rows.iter().zip(&projects) {
        if !ids.insert(p.id.clone()) {
            return Err(PabulibError::DuplicateProject {
                line: line_of(&row.join(";")),
                id: p.id.clone(),
            });
        }
        if p.cost <= 0.0 {
            return Err(PabulibError::BadCost {
                line: line_of(&row.join(";")),
                id: p.id.clone(),
                cost: p.cost,
            });
        }
    }
    let votes = file.votes()?;
    let mut voters = HashSet::new();
    for (row, v) in file.vote_rows.iter().zip(&votes) {
        if !voters.insert(v.voter_id.clone()) {
            return Err(PabulibError::DuplicateVoter {
                line: line_of(&row.join(";")),
                id: v.voter_id.clone(),
            });
        }
        for pid in &v.project_ids {
            if !ids.contains(pid) {
                return Err(PabulibError::UnknownProject {
                    line: line_of(&row.join(";")),
                    id: pid.clone(),
                });
            }
        }
        if let Some(points) = &v.points {
            if points.len() != v.project_ids.len() {
                return Err(PabulibError::PointsMismatch {
                    line: line_of(&row.join(";")),
                    expected: v.project_ids.len(),
                    got: points.len(),
                });
            }
        }
    }
    file.budget()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ToInstanceOptions {
    /// Merge identical ballots into one agent with a proportionally larger
    /// budget.
    pub deduplicate: bool,
    /// Valuation assigned to approved projects (and to the smallest positive
    /// cumulative weight); must exceed 1 for the capped program.
    pub rescale_target: f64,
}

impl Default for ToInstanceOptions {
    fn default() -> Self {
        ToInstanceOptions {
            deduplicate: true,
            rescale_target: DEFAULT_RESCALE_TARGET,
        }
    }
}

/// Convert a parsed file into a capped instance: equal entitlements
/// `B_i = B / n` over the voters with non-empty ballots, costs as caps,
/// approval ballots valued at the rescale target, cumulative ballots
/// normalized per voter and then rescaled.
pub fn to_instance(
    file: &PabulibFile,
    opts: &ToInstanceOptions,
) -> Result<LoadedInstance, PabulibError> {
    match file.vote_type() {
        "approval" | "cumulative" => {}
        other => return Err(PabulibError::UnsupportedVoteType(other.to_string())),
    }
    let budget = file.budget()?;
    let projects = file.projects()?;
    let votes = file.votes()?;

    let project_index: HashMap<&str, usize> = projects
        .iter()
        .enumerate()
        .map(|(idx, p)| (p.id.as_str(), idx))
        .collect();

    // Build one (sorted) sparse valuation row per ballot; zero-point and
    // empty ballots drop their voter.
    let mut ballots: Vec<(String, Vec<(usize, f64)>)> = Vec::new();
    let mut dropped_voters = Vec::new();
    for vote in &votes {
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(vote.project_ids.len());
        match &vote.points {
            None => {
                for pid in &vote.project_ids {
                    row.push((project_index[pid.as_str()], opts.rescale_target));
                }
            }
            Some(points) => {
                let total: u64 = points.iter().sum();
                let min_positive = points.iter().copied().filter(|&p| p > 0).min();
                if let (Some(min), true) = (min_positive, total > 0) {
                    // Normalize to sum 1, then scale the smallest positive
                    // weight to the target; zeros stay zero.
                    let scale = opts.rescale_target / (min as f64 / total as f64);
                    for (pid, &pts) in vote.project_ids.iter().zip(points.iter()) {
                        if pts > 0 {
                            row.push((
                                project_index[pid.as_str()],
                                (pts as f64 / total as f64) * scale,
                            ));
                        }
                    }
                }
            }
        }
        row.sort_by_key(|&(j, _)| j);
        row.dedup_by_key(|&mut (j, _)| j);
        if row.is_empty() {
            dropped_voters.push(vote.voter_id.clone());
        } else {
            ballots.push((vote.voter_id.clone(), row));
        }
    }
    if ballots.is_empty() {
        return Err(PabulibError::NoVoters);
    }

    let n_voters = ballots.len();
    let share = budget / n_voters as f64;

    type AgentRows = (Vec<String>, Vec<usize>, Vec<Vec<(usize, f64)>>);
    let (agent_ids, agent_weights, rows): AgentRows = if opts.deduplicate {
            type Group = (String, usize, Vec<(usize, f64)>);
            let mut groups: Vec<Group> = Vec::new();
            let mut index: HashMap<String, usize> = HashMap::new();
            for (voter, row) in ballots {
                let key = row
                    .iter()
                    .map(|(j, v)| format!("{j}:{v}"))
                    .collect::<Vec<_>>()
                    .join(",");
                match index.get(&key) {
                    Some(&g) => groups[g].1 += 1,
                    None => {
                        index.insert(key, groups.len());
                        groups.push((voter, 1, row));
                    }
                }
            }
            let mut ids = Vec::with_capacity(groups.len());
            let mut weights = Vec::with_capacity(groups.len());
            let mut rows = Vec::with_capacity(groups.len());
            for (voter, count, row) in groups {
                ids.push(if count == 1 {
                    voter
                } else {
                    format!("{voter} (x{count})")
                });
                weights.push(count);
                rows.push(row);
            }
            (ids, weights, rows)
        } else {
            let mut ids = Vec::with_capacity(ballots.len());
            let mut rows = Vec::with_capacity(ballots.len());
            for (voter, row) in ballots {
                ids.push(voter);
                rows.push(row);
            }
            let weights = vec![1; ids.len()];
            (ids, weights, rows)
        };

    let budgets: Vec<f64> = agent_weights.iter().map(|&w| w as f64 * share).collect();
    let caps: Vec<Cap> = projects.iter().map(|p| Cap::Finite(p.cost)).collect();
    let instance = Instance::new(budgets, rows, caps, None)?;
    let project_ids = (0..instance.m())
        .map(|j| projects[instance.original_project(j)].id.clone())
        .collect();

    Ok(LoadedInstance {
        instance,
        project_ids,
        agent_ids,
        agent_weights,
        dropped_voters,
    })
}
