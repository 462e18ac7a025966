//! Command-line surface: solve, verify, audit, trace, reduce-splc,
//! emit-conic, and bench over native JSON instances and Pabulib ballot
//! files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use lindahl_core::capped::{recover_prices_capped, solve_capped_native, CappedSolveOptions};
use lindahl_core::conic::emit_conic;
use lindahl_core::dynamics::{recover_prices_uncapped, run_pr, PrInit, PrOptions};
use lindahl_core::json::{
    instance_to_json, load_instance_json, load_splc_json, resolve_solution, LoadedInstance,
    SolutionJson,
};
use lindahl_core::model::{rescale_valuations, Instance, PriceSystem, DEFAULT_RESCALE_TARGET};
use lindahl_core::pabulib::{parse_pabulib, to_instance, ToInstanceOptions};
use lindahl_core::splc::reduce_splc;
use lindahl_core::verify::{
    audit_core, verify_lindahl, CoreAuditOptions, CoreMode, CoreSampling, EquilibriumCertificate,
};

/// Error classes with distinct exit codes: parse = 2, infeasible = 3,
/// non-convergence = 4, internal = 5.
#[derive(Debug)]
enum Failure {
    Parse(String),
    Infeasible(String),
    NonConvergence(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Parse(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::NonConvergence(_) => 4,
            Failure::Internal(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Parse(m)
            | Failure::Infeasible(m)
            | Failure::NonConvergence(m)
            | Failure::Internal(m) => m,
        }
    }
}

type CliResult<T> = Result<T, Failure>;

#[derive(Parser)]
#[command(
    name = "lindahl",
    about = "Lindahl equilibrium computation, verification and auditing for divisible public-goods budgets",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolveMode {
    /// Proportional response dynamics (uncapped instances only).
    UncappedPr,
    /// Mirror descent with KL projection on the capped program.
    CappedNative,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AuditMode {
    Weak,
    Strong,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ConicFormat {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an instance; emits allocation, contributions, prices and an
    /// equilibrium certificate as JSON. Exits 4 if the certificate fails.
    Solve {
        #[arg(long, value_enum)]
        mode: SolveMode,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Certificate tolerance.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        max_iters: usize,
        /// Valuation rescaling target for the capped program.
        #[arg(long, default_value_t = DEFAULT_RESCALE_TARGET)]
        rescale_target: f64,
        /// Solver stopping tolerance on the optimality residuals.
        #[arg(long, default_value_t = 1e-8)]
        kkt_tol: f64,
        /// Keep each ballot as its own agent instead of merging duplicates.
        #[arg(long)]
        no_dedup: bool,
    },
    /// Check a given allocation and price system against the equilibrium
    /// conditions; emits the certificate as JSON.
    Verify {
        #[arg(long)]
        input: PathBuf,
        /// JSON with `allocation` and `prices` (a solve output works).
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long)]
        no_dedup: bool,
    },
    /// Search for blocking coalitions against a given allocation.
    Audit {
        #[arg(long)]
        input: PathBuf,
        /// JSON with an `allocation` field (a solve output works).
        #[arg(long)]
        solution: PathBuf,
        #[arg(long, value_enum, default_value = "weak")]
        mode: AuditMode,
        #[arg(long, default_value_t = 3)]
        max_size: usize,
        /// Sample this many random coalitions instead of enumerating.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_dedup: bool,
    },
    /// Run the uncapped dynamics and write the per-iteration trace as CSV.
    Trace {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        max_iters: usize,
        /// Stop when the max-coordinate allocation change drops below this.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        no_dedup: bool,
    },
    /// Reduce a piecewise-linear utility instance (SPLC JSON) to a capped
    /// linear instance, with the segment-to-project map.
    ReduceSplc {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the exponential-cone formulation for external conic solvers.
    EmitConic {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: ConicFormat,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_RESCALE_TARGET)]
        rescale_target: f64,
        #[arg(long)]
        no_dedup: bool,
    },
    /// Solve every Pabulib file in a directory in capped-native mode and
    /// record timings as CSV (file, voters, agents, projects, parse_ms,
    /// solve_ms, converged, certified).
    Bench {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-6)]
        kkt_tol: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        max_iters: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}

fn require_positive(name: &str, value: f64) -> CliResult<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Failure::Parse(format!("{name} must be positive, got {value}")))
    }
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| Failure::Internal(format!("cannot read {}: {e}", path.display())))
}

fn write_output(out: &Option<PathBuf>, content: &str) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, content)
            .map_err(|e| Failure::Internal(format!("cannot write {}: {e}", path.display()))),
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

fn load_input(path: &Path, dedup: bool) -> CliResult<LoadedInstance> {
    let text = read_file(path)?;
    if path.extension().is_some_and(|e| e == "pb") {
        let file = parse_pabulib(&text).map_err(|e| Failure::Parse(e.to_string()))?;
        let opts = ToInstanceOptions {
            deduplicate: dedup,
            ..Default::default()
        };
        to_instance(&file, &opts).map_err(|e| Failure::Infeasible(e.to_string()))
    } else {
        load_instance_json(&text).map_err(|e| match e {
            lindahl_core::json::JsonError::Syntax(_) => Failure::Parse(e.to_string()),
            other => Failure::Infeasible(other.to_string()),
        })
    }
}

fn id_map<'a>(ids: &'a [String], values: &[f64]) -> BTreeMap<&'a str, f64> {
    ids.iter()
        .map(String::as_str)
        .zip(values.iter().copied())
        .collect()
}

fn prices_json(loaded: &LoadedInstance, prices: &PriceSystem) -> serde_json::Value {
    let rows: Vec<_> = (0..loaded.instance.n())
        .map(|i| {
            let map: BTreeMap<&str, f64> = prices
                .agent_prices(i)
                .iter()
                .map(|&(j, p)| (loaded.project_ids[j].as_str(), p))
                .collect();
            json!({"agent": loaded.agent_ids[i], "prices": map})
        })
        .collect();
    serde_json::Value::Array(rows)
}

fn contributions_json(
    loaded: &LoadedInstance,
    inst: &Instance,
    b: &lindahl_core::model::ContributionMatrix,
) -> serde_json::Value {
    let rows: Vec<_> = (0..inst.n())
        .map(|i| {
            let map: BTreeMap<&str, f64> = inst
                .row(i)
                .iter()
                .enumerate()
                .map(|(k, &(j, _))| (loaded.project_ids[j].as_str(), b.entry(i, k)))
                .collect();
            json!({"agent": loaded.agent_ids[i], "spend": map})
        })
        .collect();
    serde_json::Value::Array(rows)
}

fn certificate_summary(cert: &EquilibriumCertificate) -> String {
    format!(
        "affordable={} utility_maximizing={} profit_maximizing={} zero_respecting={}",
        cert.affordable, cert.utility_maximizing, cert.profit_maximizing, cert.zero_respecting
    )
}

fn run(command: Command) -> CliResult<ExitCode> {
    match command {
        Command::Solve {
            mode,
            input,
            out,
            tol,
            max_iters,
            rescale_target,
            kkt_tol,
            no_dedup,
        } => {
            require_positive("--tol", tol)?;
            require_positive("--kkt-tol", kkt_tol)?;
            let loaded = load_input(&input, !no_dedup)?;
            let (value, certified) = match mode {
                SolveMode::UncappedPr => {
                    solve_uncapped(&loaded, &input, tol, max_iters)?
                }
                SolveMode::CappedNative => {
                    solve_capped(&loaded, &input, tol, max_iters, rescale_target, kkt_tol)?
                }
            };
            let text = serde_json::to_string_pretty(&value)
                .map_err(|e| Failure::Internal(e.to_string()))?;
            write_output(&out, &text)?;
            if certified {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("error: solution failed certification");
                Ok(ExitCode::from(4))
            }
        }
        Command::Verify {
            input,
            solution,
            out,
            tol,
            no_dedup,
        } => {
            require_positive("--tol", tol)?;
            let loaded = load_input(&input, !no_dedup)?;
            let sol: SolutionJson = serde_json::from_str(&read_file(&solution)?)
                .map_err(|e| Failure::Parse(e.to_string()))?;
            let (x, prices) =
                resolve_solution(&loaded, &sol).map_err(|e| Failure::Infeasible(e.to_string()))?;
            let prices = prices.ok_or_else(|| {
                Failure::Parse("verify needs a `prices` field in the solution".to_string())
            })?;
            let cert = verify_lindahl(&loaded.instance, &x, &prices, tol)
                .map_err(|e| Failure::Internal(e.to_string()))?;
            eprintln!("{}", certificate_summary(&cert));
            let text = serde_json::to_string_pretty(&cert)
                .map_err(|e| Failure::Internal(e.to_string()))?;
            write_output(&out, &text)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Audit {
            input,
            solution,
            mode,
            max_size,
            samples,
            seed,
            out,
            no_dedup,
        } => {
            let loaded = load_input(&input, !no_dedup)?;
            let sol: SolutionJson = serde_json::from_str(&read_file(&solution)?)
                .map_err(|e| Failure::Parse(e.to_string()))?;
            let (x, _) =
                resolve_solution(&loaded, &sol).map_err(|e| Failure::Infeasible(e.to_string()))?;
            let opts = CoreAuditOptions {
                mode: match mode {
                    AuditMode::Weak => CoreMode::Weak,
                    AuditMode::Strong => CoreMode::Strong,
                },
                max_size,
                tol: None,
                sampling: samples.map(|draws| CoreSampling { draws, seed }),
            };
            let report = audit_core(&loaded.instance, &x, &opts)
                .map_err(|e| Failure::Internal(e.to_string()))?;
            let blocking = report.blocking.as_ref().map(|b| {
                json!({
                    "coalition": b.coalition.iter().map(|&i| &loaded.agent_ids[i]).collect::<Vec<_>>(),
                    "objection": id_map(&loaded.project_ids, &b.objection),
                    "gains": b.gains,
                })
            });
            let verdict = match (&report.blocking, report.exhaustive) {
                (Some(_), _) => "blocking-found",
                (None, true) => "no-blocking-exhaustive",
                (None, false) => "no-blocking-found",
            };
            let value = json!({
                "mode": match report.mode { CoreMode::Weak => "weak", CoreMode::Strong => "strong" },
                "max_size": report.max_size,
                "coalitions_checked": report.coalitions_checked,
                "exhaustive": report.exhaustive,
                "verdict": verdict,
                "blocking": blocking,
            });
            let text = serde_json::to_string_pretty(&value)
                .map_err(|e| Failure::Internal(e.to_string()))?;
            write_output(&out, &text)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Trace {
            input,
            out,
            max_iters,
            tol,
            no_dedup,
        } => {
            let loaded = load_input(&input, !no_dedup)?;
            ensure_uncapped(&loaded.instance)?;
            let opts = PrOptions {
                max_iters,
                x_change_tol: tol,
                record_trace: true,
            };
            let run = run_pr(&loaded.instance, PrInit::Uniform, &opts)
                .map_err(|e| Failure::Infeasible(e.to_string()))?;
            let mut csv = Vec::new();
            run.trace
                .write_csv(&mut csv)
                .map_err(|e| Failure::Internal(e.to_string()))?;
            let text = String::from_utf8(csv).map_err(|e| Failure::Internal(e.to_string()))?;
            write_output(&out, &text)?;
            if run.converged {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!(
                    "error: dynamics hit the iteration cap; objective gap bound {:?}",
                    run.gap_bound
                );
                Ok(ExitCode::from(4))
            }
        }
        Command::ReduceSplc { input, out } => {
            let text = read_file(&input)?;
            let (splc, agent_ids, project_ids) =
                load_splc_json(&text).map_err(|e| match e {
                    lindahl_core::json::JsonError::Syntax(_) => Failure::Parse(e.to_string()),
                    other => Failure::Infeasible(other.to_string()),
                })?;
            let reduction = reduce_splc(&splc).map_err(|e| Failure::Infeasible(e.to_string()))?;
            let derived_ids: Vec<String> = (0..reduction.instance.m())
                .map(|c| {
                    let flat = reduction.instance.original_project(c);
                    // Recover (project, segment) from the flat enumeration.
                    let mut acc = 0;
                    for (j, lens) in (0..splc.m()).map(|j| (j, splc.segment_lengths(j))) {
                        if flat < acc + lens.len() {
                            return format!("{}[{}]", project_ids[j], flat - acc);
                        }
                        acc += lens.len();
                    }
                    unreachable!("flat index out of range")
                })
                .collect();
            let derived = LoadedInstance {
                instance: reduction.instance.clone(),
                project_ids: derived_ids,
                agent_ids: agent_ids.clone(),
                agent_weights: vec![1; agent_ids.len()],
                dropped_voters: Vec::new(),
            };
            let column_map: Vec<_> = (0..splc.m())
                .map(|j| {
                    json!({
                        "project": project_ids[j],
                        "segments": reduction.column_map[j]
                            .iter()
                            .map(|c| c.map(|col| derived.project_ids[col].clone()))
                            .collect::<Vec<_>>(),
                        "lengths": splc.segment_lengths(j),
                    })
                })
                .collect();
            let value = json!({
                "instance": instance_to_json(&derived),
                "column_map": column_map,
                "rescale_scale": id_map(&agent_ids, &reduction.scale),
            });
            let text = serde_json::to_string_pretty(&value)
                .map_err(|e| Failure::Internal(e.to_string()))?;
            write_output(&out, &text)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::EmitConic {
            input,
            format,
            out,
            rescale_target,
            no_dedup,
        } => {
            let loaded = load_input(&input, !no_dedup)?;
            let rescaled = rescale_valuations(&loaded.instance, rescale_target)
                .map_err(|e| Failure::Infeasible(e.to_string()))?;
            let program = emit_conic(&rescaled.instance);
            let text = match format {
                ConicFormat::Text => program.to_text(),
                ConicFormat::Json => serde_json::to_string_pretty(&program)
                    .map_err(|e| Failure::Internal(e.to_string()))?,
            };
            write_output(&out, &text)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench {
            dir,
            out,
            kkt_tol,
            tol,
            max_iters,
        } => {
            require_positive("--tol", tol)?;
            require_positive("--kkt-tol", kkt_tol)?;
            let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(|e| Failure::Internal(format!("cannot read {}: {e}", dir.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "pb"))
                .collect();
            entries.sort();
            let mut csv =
                String::from("file,voters,agents,projects,parse_ms,solve_ms,converged,certified\n");
            for path in &entries {
                match bench_one(path, kkt_tol, tol, max_iters) {
                    Ok(row) => csv.push_str(&row),
                    Err(failure) => {
                        eprintln!("skipping {}: {}", path.display(), failure.message())
                    }
                }
            }
            write_output(&out, &csv)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn ensure_uncapped(inst: &Instance) -> CliResult<()> {
    if inst.caps().iter().any(|c| !c.is_unbounded()) {
        return Err(Failure::Infeasible(
            "this mode handles uncapped instances only; use capped-native".to_string(),
        ));
    }
    Ok(())
}

fn solve_uncapped(
    loaded: &LoadedInstance,
    input: &Path,
    tol: f64,
    max_iters: usize,
) -> CliResult<(serde_json::Value, bool)> {
    let inst = &loaded.instance;
    ensure_uncapped(inst)?;
    let opts = PrOptions {
        max_iters,
        x_change_tol: None,
        record_trace: false,
    };
    let run = run_pr(inst, PrInit::Uniform, &opts)
        .map_err(|e| Failure::Infeasible(e.to_string()))?;
    let prices = recover_prices_uncapped(inst, &run.allocation)
        .map_err(|e| Failure::NonConvergence(e.to_string()))?;
    let cert = verify_lindahl(inst, &run.allocation, &prices, tol)
        .map_err(|e| Failure::Internal(e.to_string()))?;
    let certified = run.converged && cert.is_zero_respecting_lindahl();
    let value = json!({
        "mode": "uncapped-pr",
        "input": input.display().to_string(),
        "converged": run.converged,
        "iterations": run.iterations,
        "gap_bound": run.gap_bound,
        "agents": loaded.agent_ids,
        "projects": loaded.project_ids,
        "allocation": id_map(&loaded.project_ids, &run.allocation),
        "total_spend": run.allocation.total_spend(),
        "utilities": id_map(&loaded.agent_ids, &inst.utilities(&run.allocation)),
        "contributions": contributions_json(loaded, inst, &run.contributions),
        "prices": prices_json(loaded, &prices),
        "certificate": serde_json::to_value(&cert).unwrap(),
    });
    Ok((value, certified))
}

fn solve_capped(
    loaded: &LoadedInstance,
    input: &Path,
    tol: f64,
    max_iters: usize,
    rescale_target: f64,
    kkt_tol: f64,
) -> CliResult<(serde_json::Value, bool)> {
    let rescaled = rescale_valuations(&loaded.instance, rescale_target)
        .map_err(|e| Failure::Infeasible(e.to_string()))?;
    let inst = &rescaled.instance;
    let opts = CappedSolveOptions {
        max_iters,
        kkt_tol,
        ..Default::default()
    };
    let sol = solve_capped_native(inst, &opts)
        .map_err(|e| Failure::NonConvergence(e.to_string()))?;
    let prices = recover_prices_capped(inst, &sol);
    let cert = verify_lindahl(inst, &sol.x, &prices, tol)
        .map_err(|e| Failure::Internal(e.to_string()))?;
    let certified = sol.converged && cert.is_zero_respecting_lindahl();
    let value = json!({
        "mode": "capped-native",
        "input": input.display().to_string(),
        "converged": sol.converged,
        "iterations": sol.iterations,
        "objective": sol.objective,
        "agents": loaded.agent_ids,
        "projects": loaded.project_ids,
        "rescale": {
            "target": rescale_target,
            "scale": id_map(&loaded.agent_ids, &rescaled.scale),
        },
        "allocation": id_map(&loaded.project_ids, &sol.x),
        "total_spend": sol.x.total_spend(),
        "utilities": id_map(&loaded.agent_ids, &inst.utilities(&sol.x)),
        "contributions": contributions_json(loaded, inst, &sol.b),
        "prices": prices_json(loaded, &prices),
        "multipliers": {
            "lambda": id_map(&loaded.agent_ids, &sol.lambdas),
            "mu": id_map(&loaded.project_ids, &sol.mus),
        },
        "kkt_residuals": serde_json::to_value(&sol.residuals).unwrap(),
        "certificate": serde_json::to_value(&cert).unwrap(),
    });
    Ok((value, certified))
}

fn bench_one(path: &Path, kkt_tol: f64, tol: f64, max_iters: usize) -> CliResult<String> {
    let text = read_file(path)?;
    let parse_start = Instant::now();
    let file = parse_pabulib(&text).map_err(|e| Failure::Parse(e.to_string()))?;
    let loaded = to_instance(&file, &ToInstanceOptions::default())
        .map_err(|e| Failure::Infeasible(e.to_string()))?;
    let parse_ms = parse_start.elapsed().as_secs_f64() * 1e3;
    let voters: usize = loaded.agent_weights.iter().sum();

    let rescaled = rescale_valuations(&loaded.instance, DEFAULT_RESCALE_TARGET)
        .map_err(|e| Failure::Infeasible(e.to_string()))?;
    let solve_start = Instant::now();
    let opts = CappedSolveOptions {
        max_iters,
        kkt_tol,
        ..Default::default()
    };
    let sol = solve_capped_native(&rescaled.instance, &opts)
        .map_err(|e| Failure::NonConvergence(e.to_string()))?;
    let solve_ms = solve_start.elapsed().as_secs_f64() * 1e3;
    let prices = recover_prices_capped(&rescaled.instance, &sol);
    let cert = verify_lindahl(&rescaled.instance, &sol.x, &prices, tol)
        .map_err(|e| Failure::Internal(e.to_string()))?;
    Ok(format!(
        "{},{},{},{},{:.3},{:.3},{},{}\n",
        path.file_name().unwrap_or_default().to_string_lossy(),
        voters,
        loaded.instance.n(),
        loaded.instance.m(),
        parse_ms,
        solve_ms,
        sol.converged,
        cert.is_zero_respecting_lindahl(),
    ))
}
