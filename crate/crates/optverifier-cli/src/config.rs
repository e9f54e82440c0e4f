//! Merged configuration: defaults, then the flat key=value file, then flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use optverifier_core::agents::{LlmAgentConfig, PromptSet};
use optverifier_core::compile_solve::{
    autodetect_external, BruteForceConfig, ExternalSolverConfig, SolutionFileFormat, SolverBackend,
};
use optverifier_core::llm_gateway::{LiveConfig, API_KEY_ENV};
use optverifier_core::orchestrator::PipelineConfig;

#[derive(Debug, Clone)]
pub struct CliConfig {
    pub pipeline: PipelineConfig,
    pub agent: LlmAgentConfig,
    pub live: LiveConfig,
    pub mock_agents: bool,
    pub cassette: Option<PathBuf>,
    pub jobs: usize,
    pub out: Option<PathBuf>,
    pub seed: u64,
}

/// Keys accepted in the configuration file.
const KNOWN_KEYS: &[&str] = &[
    "base_url",
    "model_name",
    "temperature",
    "seed",
    "max_retries",
    "prompt_set",
    "max_structure_rounds",
    "max_solution_rounds",
    "max_total_refinements",
    "max_compile_retries",
    "strict_reverify",
    "solver",
    "solver_command",
    "solver_args",
    "solver_format",
    "solve_timeout_seconds",
    "brute_force_cap",
    "toy_instantiation",
    "toy_seed",
    "jobs",
];

fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut map = BTreeMap::new();
    for (index, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("line {}: expected key = value", index + 1));
        };
        let key = key.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(format!("line {}: unknown key '{key}'", index + 1));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

fn get_parsed<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>, String> {
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|_| format!("bad value for {key}: {raw:?}")),
    }
}

impl CliConfig {
    pub fn assemble(cli: &crate::Cli) -> Result<Self, String> {
        let file = match &cli.config {
            Some(path) => parse_config_file(path)?,
            None => BTreeMap::new(),
        };

        let mut pipeline = PipelineConfig::default();
        if let Some(v) = get_parsed(&file, "max_structure_rounds")? {
            pipeline.max_structure_rounds = v;
        }
        if let Some(v) = get_parsed(&file, "max_solution_rounds")? {
            pipeline.max_solution_rounds = v;
        }
        if let Some(v) = get_parsed(&file, "max_total_refinements")? {
            pipeline.max_total_refinements = v;
        }
        if let Some(v) = get_parsed(&file, "max_compile_retries")? {
            pipeline.max_compile_retries = v;
        }
        if let Some(v) = get_parsed(&file, "strict_reverify")? {
            pipeline.strict_reverify = v;
        }
        if let Some(v) = get_parsed(&file, "toy_instantiation")? {
            pipeline.toy_instantiation = v;
        }
        if let Some(v) = get_parsed(&file, "toy_seed")? {
            pipeline.toy_seed = v;
        }

        let seed = cli.seed.or(get_parsed(&file, "seed")?).unwrap_or(0);
        if cli.seed.is_some() {
            pipeline.toy_seed = seed;
        }

        let brute_cap: f64 = get_parsed(&file, "brute_force_cap")?.unwrap_or(1e7);
        let solver_choice = cli
            .solver
            .clone()
            .or_else(|| file.get("solver").cloned())
            .unwrap_or_else(|| "builtin".to_string());
        pipeline.solver = match solver_choice.as_str() {
            "builtin" => SolverBackend::Builtin(BruteForceConfig {
                domain_cap: brute_cap,
            }),
            "cbc" => SolverBackend::External(ExternalSolverConfig {
                command: "cbc".into(),
                args: vec!["{lp}".into(), "solve".into(), "solu".into(), "{sol}".into()],
                format: SolutionFileFormat::CbcSol,
                timeout_seconds: get_parsed(&file, "solve_timeout_seconds")?.unwrap_or(60),
            }),
            "refsolve" => SolverBackend::External(ExternalSolverConfig {
                command: sibling_refsolve()?,
                args: vec!["{lp}".into(), "{sol}".into()],
                format: SolutionFileFormat::GenericJson,
                timeout_seconds: get_parsed(&file, "solve_timeout_seconds")?.unwrap_or(60),
            }),
            "auto" => match autodetect_external() {
                Some(external) => SolverBackend::External(external),
                None => SolverBackend::Builtin(BruteForceConfig {
                    domain_cap: brute_cap,
                }),
            },
            "external" => {
                let command = file
                    .get("solver_command")
                    .cloned()
                    .ok_or("solver = external requires solver_command")?;
                let args: Vec<String> = file
                    .get("solver_args")
                    .map(|raw| raw.split_whitespace().map(str::to_string).collect())
                    .unwrap_or_else(|| vec!["{lp}".into(), "{sol}".into()]);
                let format = match file.get("solver_format").map(String::as_str) {
                    None | Some("generic_json") => SolutionFileFormat::GenericJson,
                    Some("cbc_sol") => SolutionFileFormat::CbcSol,
                    Some(other) => return Err(format!("unknown solver_format '{other}'")),
                };
                SolverBackend::External(ExternalSolverConfig {
                    command,
                    args,
                    format,
                    timeout_seconds: get_parsed(&file, "solve_timeout_seconds")?.unwrap_or(60),
                })
            }
            other => return Err(format!("unknown solver '{other}'")),
        };

        let prompt_set = match file.get("prompt_set").map(String::as_str) {
            None | Some("dsl") => PromptSet::Dsl,
            Some("paper_latex") => PromptSet::PaperLatex,
            Some(other) => return Err(format!("unknown prompt_set '{other}'")),
        };
        let agent = LlmAgentConfig {
            model_name: file
                .get("model_name")
                .cloned()
                .unwrap_or_else(|| "gpt-4o-mini".into()),
            temperature: get_parsed(&file, "temperature")?.unwrap_or(0.0),
            seed: None,
            prompt_set,
        };
        let mut live = LiveConfig::from_env(
            file.get("base_url")
                .cloned()
                .unwrap_or_else(|| "https://api.openai.com/v1".into()),
            agent.model_name.clone(),
        );
        if let Some(v) = get_parsed(&file, "max_retries")? {
            live.max_retries = v;
        }

        Ok(CliConfig {
            pipeline,
            agent,
            live,
            mock_agents: cli.mock_agents,
            cassette: cli.cassette.clone(),
            jobs: cli.jobs.or(get_parsed(&file, "jobs")?).unwrap_or(1).max(1),
            out: cli.out.clone(),
            seed,
        })
    }

    pub fn require_api_key(&self) -> Result<(), String> {
        if self.live.api_key.trim().is_empty() {
            return Err(format!(
                "live mode requires the {API_KEY_ENV} environment variable"
            ));
        }
        Ok(())
    }
}

fn sibling_refsolve() -> Result<String, String> {
    let exe = std::env::current_exe().map_err(|e| e.to_string())?;
    let candidate = exe
        .parent()
        .ok_or("cannot locate executable directory")?
        .join("optverifier-refsolve");
    if candidate.exists() {
        Ok(candidate.to_string_lossy().into_owned())
    } else {
        // Fall back to PATH lookup.
        Ok("optverifier-refsolve".into())
    }
}
