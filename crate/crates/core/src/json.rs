//! Native JSON schemas: instances, piecewise-linear utility instances, and
//! the allocation/prices payload consumed by the verifier.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Cap, Instance, ModelError, PriceSystem};
use crate::splc::{harmonize_segments, PlcFunction, SplcError, SplcInstance};

#[derive(Debug, Error)]
pub enum JsonError {
    #[error("invalid JSON: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("agent {agent} references unknown project id {id}")]
    UnknownProject { agent: String, id: String },
    #[error("allocation references unknown project id {0}")]
    UnknownAllocationProject(String),
    #[error("prices reference unknown agent id {0}")]
    UnknownAgent(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Splc(#[from] SplcError),
}

/// An instance annotated with the external agent and project ids it was
/// loaded with.
#[derive(Debug, Clone)]
pub struct LoadedInstance {
    pub instance: Instance,
    /// Kept-project index -> external id.
    pub project_ids: Vec<String>,
    pub agent_ids: Vec<String>,
    /// Ballot multiplicity per agent (all 1 unless ballots were merged).
    pub agent_weights: Vec<usize>,
    /// Voters dropped at load time for having an empty ballot.
    pub dropped_voters: Vec<String>,
}

impl LoadedInstance {
    pub fn project_index(&self, id: &str) -> Option<usize> {
        self.project_ids.iter().position(|p| p == id)
    }

    pub fn agent_index(&self, id: &str) -> Option<usize> {
        self.agent_ids.iter().position(|a| a == id)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceJson {
    pub budget: f64,
    pub agents: Vec<AgentJson>,
    pub projects: Vec<ProjectJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentJson {
    pub id: String,
    pub budget: f64,
    pub valuations: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectJson {
    pub id: String,
    /// `null` means the project can absorb unlimited funding.
    pub cap: Option<f64>,
}

/// Parse the native instance JSON schema.
pub fn load_instance_json(text: &str) -> Result<LoadedInstance, JsonError> {
    let parsed: InstanceJson = serde_json::from_str(text)?;
    let project_index: BTreeMap<&str, usize> = parsed
        .projects
        .iter()
        .enumerate()
        .map(|(idx, p)| (p.id.as_str(), idx))
        .collect();
    let caps: Vec<Cap> = parsed
        .projects
        .iter()
        .map(|p| match p.cap {
            Some(c) => Cap::Finite(c),
            None => Cap::Unbounded,
        })
        .collect();
    let mut budgets = Vec::with_capacity(parsed.agents.len());
    let mut rows = Vec::with_capacity(parsed.agents.len());
    let mut agent_ids = Vec::with_capacity(parsed.agents.len());
    for agent in &parsed.agents {
        let mut row = Vec::with_capacity(agent.valuations.len());
        for (pid, &v) in &agent.valuations {
            let j = *project_index
                .get(pid.as_str())
                .ok_or_else(|| JsonError::UnknownProject {
                    agent: agent.id.clone(),
                    id: pid.clone(),
                })?;
            row.push((j, v));
        }
        budgets.push(agent.budget);
        rows.push(row);
        agent_ids.push(agent.id.clone());
    }
    let instance = Instance::new(budgets, rows, caps, Some(parsed.budget))?;
    let project_ids = (0..instance.m())
        .map(|j| parsed.projects[instance.original_project(j)].id.clone())
        .collect();
    let agent_weights = vec![1; agent_ids.len()];
    Ok(LoadedInstance {
        instance,
        project_ids,
        agent_ids,
        agent_weights,
        dropped_voters: Vec::new(),
    })
}

/// Serialize an instance back to the native schema (kept projects only).
pub fn instance_to_json(loaded: &LoadedInstance) -> InstanceJson {
    let inst = &loaded.instance;
    let agents = (0..inst.n())
        .map(|i| AgentJson {
            id: loaded.agent_ids[i].clone(),
            budget: inst.budget(i),
            valuations: inst
                .row(i)
                .iter()
                .map(|&(j, v)| (loaded.project_ids[j].clone(), v))
                .collect(),
        })
        .collect();
    let projects = (0..inst.m())
        .map(|j| ProjectJson {
            id: loaded.project_ids[j].clone(),
            cap: inst.cap(j).finite(),
        })
        .collect();
    InstanceJson {
        budget: inst.total_budget(),
        agents,
        projects,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplcAgentJson {
    pub id: String,
    pub budget: f64,
    /// Per project id, segments as `[length, slope]` pairs. Missing
    /// projects carry zero utility; short domains get a zero-slope tail.
    pub utilities: BTreeMap<String, Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplcJson {
    pub budget: f64,
    pub agents: Vec<SplcAgentJson>,
    pub projects: Vec<ProjectJson>,
}

/// Parse the SPLC JSON schema and harmonize the curves.
pub fn load_splc_json(text: &str) -> Result<(SplcInstance, Vec<String>, Vec<String>), JsonError> {
    let parsed: SplcJson = serde_json::from_str(text)?;
    let project_ids: Vec<String> = parsed.projects.iter().map(|p| p.id.clone()).collect();
    let agent_ids: Vec<String> = parsed.agents.iter().map(|a| a.id.clone()).collect();
    let budget = parsed.budget;
    let mut raw = Vec::with_capacity(parsed.agents.len());
    let mut budgets = Vec::with_capacity(parsed.agents.len());
    for agent in &parsed.agents {
        for pid in agent.utilities.keys() {
            if !project_ids.iter().any(|p| p == pid) {
                return Err(JsonError::UnknownProject {
                    agent: agent.id.clone(),
                    id: pid.clone(),
                });
            }
        }
        let row: Result<Vec<PlcFunction>, SplcError> = project_ids
            .iter()
            .map(|pid| match agent.utilities.get(pid) {
                Some(segments) => {
                    PlcFunction::new(segments.clone()).map(|f| f.extended_to(budget))
                }
                None => Ok(PlcFunction::zero(budget)),
            })
            .collect();
        raw.push(row?);
        budgets.push(agent.budget);
    }
    let splc = harmonize_segments(budgets, raw, Some(budget))?;
    Ok((splc, agent_ids, project_ids))
}

/// Allocation (+ optional prices) payload for the verifier and auditor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionJson {
    pub allocation: BTreeMap<String, f64>,
    #[serde(default)]
    pub prices: Vec<AgentPricesJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentPricesJson {
    pub agent: String,
    pub prices: BTreeMap<String, f64>,
}

/// Resolve a solution payload against a loaded instance: allocation ordered
/// by kept project, prices as a sparse system over agents.
pub fn resolve_solution(
    loaded: &LoadedInstance,
    sol: &SolutionJson,
) -> Result<(Vec<f64>, Option<PriceSystem>), JsonError> {
    let mut x = vec![0.0; loaded.instance.m()];
    for (pid, &amount) in &sol.allocation {
        let j = loaded
            .project_index(pid)
            .ok_or_else(|| JsonError::UnknownAllocationProject(pid.clone()))?;
        x[j] = amount;
    }
    if sol.prices.is_empty() {
        return Ok((x, None));
    }
    let mut entries = vec![Vec::new(); loaded.instance.n()];
    for row in &sol.prices {
        let i = loaded
            .agent_index(&row.agent)
            .ok_or_else(|| JsonError::UnknownAgent(row.agent.clone()))?;
        for (pid, &p) in &row.prices {
            let j = loaded
                .project_index(pid)
                .ok_or_else(|| JsonError::UnknownAllocationProject(pid.clone()))?;
            entries[i].push((j, p));
        }
    }
    Ok((x, Some(PriceSystem::new(entries))))
}
