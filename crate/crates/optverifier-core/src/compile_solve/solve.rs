use std::collections::BTreeMap;
use std::io::Read;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::brute::{brute_force_solve, BruteForceConfig};
use super::lp::emit_lp;
use super::{GroundedModelOf, SolutionOf, SolveStatus};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error("solver command not found: {0}")]
    SolverNotFound(String),
    #[error("cannot parse solver output: {0}")]
    SolverParseError(String),
    #[error("solver timed out after {0} seconds")]
    Timeout(u64),
    #[error("solver I/O failure: {0}")]
    Io(String),
    #[error("LP emission failed: {0}")]
    Lp(#[from] super::lp::LpError),
    #[error("enumeration oracle not applicable: {0}")]
    OracleInapplicable(String),
    #[error("solution misses flat variable '{0}'")]
    MissingVariable(String),
}

/// Format of the solution file an external solver writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionFileFormat {
    /// `{"status": "...", "objective": N, "values": {"var": v}}`
    GenericJson,
    /// CBC-style text: first line status (with optional objective), then
    /// `index name value` rows.
    CbcSol,
}

/// External solver contract: a command invoked with `{lp}` and `{sol}`
/// placeholders substituted by the LP-file path and the solution-file path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalSolverConfig {
    pub command: String,
    pub args: Vec<String>,
    pub format: SolutionFileFormat,
    #[serde(default = "default_timeout")]
    pub timeout_seconds: u64,
}

fn default_timeout() -> u64 {
    60
}

/// Which solver backs `solve`.
#[derive(Debug, Clone)]
pub enum SolverBackend {
    /// Built-in enumeration oracle for finite integer models.
    Builtin(BruteForceConfig),
    External(ExternalSolverConfig),
}

impl Default for SolverBackend {
    fn default() -> Self {
        SolverBackend::Builtin(BruteForceConfig::default())
    }
}

/// Solve a grounded model with the configured backend. External backends
/// write the LP file into a per-run temp directory, run the command with a
/// timeout, and parse the solution file; absent variables are zero-filled.
pub fn solve<S: Scalar>(
    grounded: &GroundedModelOf<S>,
    backend: &SolverBackend,
) -> Result<SolutionOf<S>, SolveError> {
    match backend {
        SolverBackend::Builtin(config) => brute_force_solve(grounded, config),
        SolverBackend::External(config) => solve_external(grounded, config),
    }
}

fn solve_external<S: Scalar>(
    grounded: &GroundedModelOf<S>,
    config: &ExternalSolverConfig,
) -> Result<SolutionOf<S>, SolveError> {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| SolveError::Io(e.to_string()))?;
    let lp_path = dir.path().join("model.lp");
    let sol_path = dir.path().join("model.sol");
    std::fs::write(&lp_path, emit_lp(grounded)?).map_err(|e| SolveError::Io(e.to_string()))?;

    let args: Vec<String> = config
        .args
        .iter()
        .map(|arg| {
            arg.replace("{lp}", &lp_path.to_string_lossy())
                .replace("{sol}", &sol_path.to_string_lossy())
        })
        .collect();

    let mut child = Command::new(&config.command)
        .args(&args)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                SolveError::SolverNotFound(config.command.clone())
            } else {
                SolveError::Io(e.to_string())
            }
        })?;

    let deadline = Instant::now() + Duration::from_secs(config.timeout_seconds);
    loop {
        match child
            .try_wait()
            .map_err(|e| SolveError::Io(e.to_string()))?
        {
            Some(_status) => break,
            None => {
                if Instant::now() >= deadline {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(SolveError::Timeout(config.timeout_seconds));
                }
                std::thread::sleep(Duration::from_millis(20));
            }
        }
    }
    let mut stdout = String::new();
    if let Some(mut pipe) = child.stdout.take() {
        let _ = pipe.read_to_string(&mut stdout);
    }

    let text = std::fs::read_to_string(&sol_path).map_err(|e| {
        SolveError::SolverParseError(format!(
            "no solution file at {}: {e}; solver stdout: {}",
            sol_path.display(),
            stdout.chars().take(200).collect::<String>()
        ))
    })?;
    let mut solution = match config.format {
        SolutionFileFormat::GenericJson => parse_generic_json::<S>(&text)?,
        SolutionFileFormat::CbcSol => parse_cbc_sol::<S>(&text)?,
    };
    if solution.status.has_assignment() {
        backfill_zeros(grounded, &mut solution);
    }
    solution.solver_id = config.command.clone();
    solution.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(solution)
}

fn backfill_zeros<S: Scalar>(grounded: &GroundedModelOf<S>, solution: &mut SolutionOf<S>) {
    for var in &grounded.variables {
        solution
            .assignment
            .entry(var.name.clone())
            .or_insert_with(S::zero);
    }
}

#[derive(Deserialize)]
struct GenericSolution {
    status: String,
    #[serde(default)]
    objective: Option<f64>,
    #[serde(default)]
    values: BTreeMap<String, f64>,
}

fn parse_status(text: &str) -> Result<SolveStatus, SolveError> {
    let lower = text.to_ascii_lowercase();
    if lower.contains("optimal") {
        Ok(SolveStatus::Optimal)
    } else if lower.contains("infeasible") {
        Ok(SolveStatus::Infeasible)
    } else if lower.contains("unbounded") {
        Ok(SolveStatus::Unbounded)
    } else if lower.contains("feasible") || lower.contains("stopped") {
        Ok(SolveStatus::Feasible)
    } else if lower.contains("error") {
        Ok(SolveStatus::Error)
    } else {
        Err(SolveError::SolverParseError(format!(
            "unknown status '{text}'"
        )))
    }
}

fn parse_generic_json<S: Scalar>(text: &str) -> Result<SolutionOf<S>, SolveError> {
    let parsed: GenericSolution =
        serde_json::from_str(text).map_err(|e| SolveError::SolverParseError(e.to_string()))?;
    let status = parse_status(&parsed.status)?;
    Ok(SolutionOf {
        status,
        assignment: parsed
            .values
            .into_iter()
            .map(|(k, v)| (k, S::from_f64_lossy(v)))
            .collect(),
        objective_value: parsed.objective.map(S::from_f64_lossy),
        solver_id: String::new(),
        wall_time_seconds: 0.0,
    })
}

/// CBC writes `Optimal - objective value 48.00000000` then indexed rows
/// `0 ItemQuantities_4 4 12` (index, name, value, reduced cost).
fn parse_cbc_sol<S: Scalar>(text: &str) -> Result<SolutionOf<S>, SolveError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| SolveError::SolverParseError("empty solution file".into()))?;
    let status = parse_status(header)?;
    let objective_value = header
        .split("objective value")
        .nth(1)
        .and_then(|tail| tail.split_whitespace().next())
        .and_then(|token| token.parse::<f64>().ok())
        .map(S::from_f64_lossy);

    let mut assignment = BTreeMap::new();
    for line in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 {
            continue;
        }
        // Tolerate a leading `**` marker CBC uses for infeasibilities.
        let offset = usize::from(fields[0] == "**");
        if fields.len() < offset + 3 {
            continue;
        }
        let name = fields[offset + 1];
        if let Ok(value) = fields[offset + 2].parse::<f64>() {
            assignment.insert(name.to_string(), S::from_f64_lossy(value));
        }
    }
    Ok(SolutionOf {
        status,
        assignment,
        objective_value,
        solver_id: String::new(),
        wall_time_seconds: 0.0,
    })
}

/// Best-effort discovery of a usable external solver on this machine:
/// `cbc`, then `glpsol` is skipped (different solution format), then the
/// bundled reference solver next to the current executable.
pub fn autodetect_external() -> Option<ExternalSolverConfig> {
    if which("cbc") {
        return Some(ExternalSolverConfig {
            command: "cbc".into(),
            args: vec!["{lp}".into(), "solve".into(), "solu".into(), "{sol}".into()],
            format: SolutionFileFormat::CbcSol,
            timeout_seconds: default_timeout(),
        });
    }
    let sibling = std::env::current_exe().ok().and_then(|exe| {
        let candidate = exe.parent()?.join("optverifier-refsolve");
        candidate.exists().then_some(candidate)
    });
    if let Some(path) = sibling {
        return Some(ExternalSolverConfig {
            command: path.to_string_lossy().into_owned(),
            args: vec!["{lp}".into(), "{sol}".into()],
            format: SolutionFileFormat::GenericJson,
            timeout_seconds: default_timeout(),
        });
    }
    None
}

fn which(command: &str) -> bool {
    let Some(paths) = std::env::var_os("PATH") else {
        return false;
    };
    std::env::split_paths(&paths).any(|dir| dir.join(command).is_file())
}
