//! Subcommand implementations. Exit codes: 0 success, 2 config/input error,
//! 3 pipeline or verification failure.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use optverifier_core::agents::{AgentSuite, LlmAgents, MockAgents};
use optverifier_core::compile_solve::{
    check_feasibility, emit_lp, ground, instantiate_toy, load_external_parameters, solve, Bindings,
};
use optverifier_core::evalbench::{
    efficiency_table, load_dataset, score_solving_accuracy, verifier_study, PerturbOp,
    PerturbationSpec, StudyCase,
};
use optverifier_core::llm_gateway::{Cassette, CassetteWriter, Gateway};
use optverifier_core::model_ir::{parse_model_json, validate_model, ProblemInstance};
use optverifier_core::orchestrator::{render_run_report, run_pipeline, RunRecord};
use optverifier_core::Tolerances;

use crate::config::CliConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunMode {
    Normal,
    Record,
    Replay,
}

/// Build the gateway for the selected mode; None for mock agents.
fn build_gateway(config: &CliConfig, mode: RunMode) -> Result<Option<Gateway>, (u8, String)> {
    if config.mock_agents {
        if mode == RunMode::Record {
            return Err((
                2,
                "recording with --mock-agents is pointless; drop one flag".into(),
            ));
        }
        return Ok(None);
    }
    match mode {
        RunMode::Replay => {
            let path = config
                .cassette
                .as_ref()
                .ok_or((2, "replay requires --cassette".to_string()))?;
            let gateway = Gateway::replay_file(path).map_err(|e| (2, e.to_string()))?;
            Ok(Some(gateway))
        }
        RunMode::Record => {
            config.require_api_key().map_err(|m| (2, m))?;
            let path = config
                .cassette
                .as_ref()
                .ok_or((2, "record requires --cassette".to_string()))?;
            let writer = CassetteWriter::create(path, &config.agent.model_name)
                .map_err(|e| (2, e.to_string()))?;
            Ok(Some(
                Gateway::live(config.live.clone()).with_recorder(writer),
            ))
        }
        RunMode::Normal => {
            if let Some(path) = &config.cassette {
                let gateway = Gateway::replay_file(path).map_err(|e| (2, e.to_string()))?;
                return Ok(Some(gateway));
            }
            config.require_api_key().map_err(|m| (2, m))?;
            Ok(Some(Gateway::live(config.live.clone())))
        }
    }
}

fn load_problem(path: &Path) -> Result<ProblemInstance, String> {
    let description = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    if description.trim().is_empty() {
        return Err(format!("{} is empty", path.display()));
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "problem".into());
    Ok(ProblemInstance {
        id,
        description,
        ground_truth_objective: None,
        difficulty: None,
        category: None,
    })
}

pub fn cmd_run(config: &CliConfig, description_file: &Path, mode: RunMode) -> u8 {
    let problem = match load_problem(description_file) {
        Ok(problem) => problem,
        Err(message) => {
            eprintln!("input error: {message}");
            return 2;
        }
    };
    let gateway = match build_gateway(config, mode) {
        Ok(gateway) => gateway,
        Err((code, message)) => {
            eprintln!("{message}");
            return code;
        }
    };
    let record = match &gateway {
        Some(gateway) => {
            let agents = LlmAgents::new(gateway, config.agent.clone());
            run_pipeline(&agents, &problem, &config.pipeline)
        }
        None => {
            let agents = MockAgents::new();
            run_pipeline(&agents, &problem, &config.pipeline)
        }
    };
    print!("{}", render_run_report(&record));
    if let Some(out) = &config.out {
        if let Err(e) = std::fs::write(out, record.to_json()) {
            eprintln!("cannot write {}: {e}", out.display());
            return 2;
        }
        println!("run record written to {}", out.display());
    }
    if record.outcome.is_accepted() {
        0
    } else {
        if let optverifier_core::orchestrator::Outcome::Failed { error } = &record.outcome {
            eprintln!("pipeline failed: {error}");
        }
        3
    }
}

pub fn cmd_bench(config: &CliConfig, dataset_path: &Path, name: Option<&str>) -> u8 {
    let instances = match load_dataset(dataset_path) {
        Ok(instances) => instances,
        Err(e) => {
            eprintln!("dataset error: {e}");
            return 2;
        }
    };
    let gateway = match build_gateway(config, RunMode::Normal) {
        Ok(gateway) => gateway,
        Err((code, message)) => {
            eprintln!("{message}");
            return code;
        }
    };

    // Bounded worker pool; records land in instance order.
    let records: Vec<RunRecord> = {
        let slots: Vec<Mutex<Option<RunRecord>>> =
            instances.iter().map(|_| Mutex::new(None)).collect();
        let cursor = AtomicUsize::new(0);
        let workers = config.jobs.min(instances.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let index = cursor.fetch_add(1, Ordering::SeqCst);
                    if index >= instances.len() {
                        break;
                    }
                    let record = match &gateway {
                        Some(gateway) => {
                            let agents = LlmAgents::new(gateway, config.agent.clone());
                            run_pipeline(&agents, &instances[index], &config.pipeline)
                        }
                        None => {
                            let agents = MockAgents::new();
                            run_pipeline(&agents, &instances[index], &config.pipeline)
                        }
                    };
                    *slots[index].lock().unwrap() = Some(record);
                });
            }
        });
        slots
            .into_iter()
            .map(|slot| slot.into_inner().unwrap().unwrap())
            .collect()
    };

    let dataset_name = name
        .map(str::to_string)
        .or_else(|| {
            dataset_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
        })
        .unwrap_or_else(|| "dataset".into());
    let pairs: Vec<(&ProblemInstance, &RunRecord)> = instances.iter().zip(records.iter()).collect();
    let report = score_solving_accuracy(&dataset_name, &pairs, 1e-4, 1e-6);

    match report.aggregates.sa_micro {
        Some(sa) => println!(
            "solving accuracy (SA): {sa:.4} over {} scored instances",
            report.aggregates.scored
        ),
        None => println!("solving accuracy (SA): n/a (no ground truth present)"),
    }
    let labeled: Vec<(&str, &RunRecord)> =
        records.iter().map(|r| (dataset_name.as_str(), r)).collect();
    print!("{}", efficiency_table(&labeled));

    let stem = config
        .out
        .clone()
        .unwrap_or_else(|| std::path::PathBuf::from("bench-report"));
    let json_path = stem.with_extension("json");
    let md_path = stem.with_extension("md");
    if let Err(e) = std::fs::write(&json_path, report.to_json()) {
        eprintln!("cannot write {}: {e}", json_path.display());
        return 2;
    }
    if let Err(e) = std::fs::write(&md_path, report.to_markdown()) {
        eprintln!("cannot write {}: {e}", md_path.display());
        return 2;
    }
    println!(
        "report written to {} and {}",
        json_path.display(),
        md_path.display()
    );
    0
}

fn parse_ops(raw: Option<&str>) -> Result<Vec<PerturbOp>, String> {
    let Some(raw) = raw else {
        return Ok(PerturbOp::ALL.to_vec());
    };
    let mut ops = Vec::new();
    for token in raw.split(',') {
        let op = match token.trim() {
            "drop_constraint" => PerturbOp::DropConstraint,
            "drop_variable" => PerturbOp::DropVariable,
            "flip_relop" => PerturbOp::FlipRelop,
            "scale_rhs" => PerturbOp::ScaleRhs,
            "drop_sum_guard" => PerturbOp::DropSumGuard,
            "flip_var_type" => PerturbOp::FlipVarType,
            other => return Err(format!("unknown perturbation op '{other}'")),
        };
        ops.push(op);
    }
    if ops.is_empty() {
        return Err("at least one op is required".into());
    }
    Ok(ops)
}

pub fn cmd_verify_bench(config: &CliConfig, models_dir: &Path, k: usize, ops: Option<&str>) -> u8 {
    let ops = match parse_ops(ops) {
        Ok(ops) => ops,
        Err(message) => {
            eprintln!("{message}");
            return 2;
        }
    };
    let mut cases: Vec<StudyCase> = Vec::new();
    let entries = match std::fs::read_dir(models_dir) {
        Ok(entries) => entries,
        Err(e) => {
            eprintln!("cannot read {}: {e}", models_dir.display());
            return 2;
        }
    };
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|ext| ext == "json").unwrap_or(false))
        .collect();
    paths.sort();
    for path in &paths {
        let text = match std::fs::read_to_string(path) {
            Ok(text) => text,
            Err(e) => {
                eprintln!("cannot read {}: {e}", path.display());
                return 2;
            }
        };
        match serde_json::from_str::<StudyCase>(&text) {
            Ok(case) => cases.push(case),
            Err(e) => {
                eprintln!("bad study case {}: {e}", path.display());
                return 2;
            }
        }
    }
    if cases.is_empty() {
        eprintln!("no study cases found in {}", models_dir.display());
        return 2;
    }

    let gateway = match build_gateway(config, RunMode::Normal) {
        Ok(gateway) => gateway,
        Err((code, message)) => {
            eprintln!("{message}");
            return code;
        }
    };
    let spec = PerturbationSpec {
        seed: config.seed,
        k,
        ops,
    };
    let metrics = {
        let run = |agents: &dyn AgentSuite| verifier_study(&cases, &spec, agents);
        let result = match &gateway {
            Some(gateway) => {
                let agents = LlmAgents::new(gateway, config.agent.clone());
                run(&agents)
            }
            None => run(&MockAgents::new()),
        };
        match result {
            Ok(metrics) => metrics,
            Err(e) => {
                eprintln!("study failed: {e}");
                return 3;
            }
        }
    };
    println!(
        "{} positives, {} samples total",
        cases.len(),
        metrics.total_samples
    );
    print!("{}", metrics.to_markdown());
    if let Some(out) = &config.out {
        let json = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
        if let Err(e) = std::fs::write(out, json) {
            eprintln!("cannot write {}: {e}", out.display());
            return 2;
        }
    }
    0
}

pub fn cmd_solve(
    config: &CliConfig,
    model_file: &Path,
    bindings_file: Option<&Path>,
    toy: bool,
    lp_out: Option<&Path>,
) -> u8 {
    let text = match std::fs::read_to_string(model_file) {
        Ok(text) => text,
        Err(e) => {
            eprintln!("cannot read {}: {e}", model_file.display());
            return 2;
        }
    };
    let model = match parse_model_json(&text) {
        Ok(model) => model,
        Err(e) => {
            eprintln!("model error: {e}");
            return 2;
        }
    };
    let report = validate_model(&model);
    if !report.is_valid() {
        for violation in &report.violations {
            eprintln!("violation {:?}: {}", violation.code, violation.message);
        }
        return 3;
    }

    let (model, mut bindings) = if toy {
        match instantiate_toy(&model, config.seed, &Default::default()) {
            Ok((bound, bindings)) => (bound, bindings),
            Err(e) => {
                eprintln!("toy instantiation failed: {e}");
                return 3;
            }
        }
    } else {
        (model, Bindings::new())
    };
    if let Some(path) = bindings_file {
        match load_external_parameters(&model, path) {
            Ok(loaded) => bindings.extend(loaded),
            Err(e) => {
                eprintln!("binding error: {e}");
                return 2;
            }
        }
    }

    let grounded = match ground::<f64>(&model, &bindings) {
        Ok(grounded) => grounded,
        Err(e) => {
            eprintln!("grounding error: {e}");
            return 3;
        }
    };
    for warning in &grounded.warnings {
        eprintln!("warning: {warning}");
    }
    println!(
        "grounded: {} flat variables, {} rows",
        grounded.variables.len(),
        grounded.rows.len()
    );
    if let Some(path) = lp_out {
        match emit_lp(&grounded) {
            Ok(text) => {
                if let Err(e) = std::fs::write(path, text) {
                    eprintln!("cannot write {}: {e}", path.display());
                    return 2;
                }
                println!("LP written to {}", path.display());
            }
            Err(e) => {
                eprintln!("LP emission failed: {e}");
                return 3;
            }
        }
    }

    let solution = match solve(&grounded, &config.pipeline.solver) {
        Ok(solution) => solution,
        Err(e) => {
            eprintln!("solve failed: {e}");
            return 3;
        }
    };
    println!("status: {}", solution.status);
    if let Some(objective) = solution.objective_value {
        println!("objective: {objective}");
    }
    if solution.status.has_assignment() {
        match check_feasibility(&grounded, &solution, &Tolerances::default()) {
            Ok(report) => println!("feasibility: {}", report.render()),
            Err(e) => eprintln!("feasibility check failed: {e}"),
        }
        for (name, value) in &solution.assignment {
            if *value != 0.0 {
                println!("  {name} = {value}");
            }
        }
    }
    if let Some(out) = &config.out {
        let json = serde_json::to_string_pretty(&solution).expect("solution serializes");
        if let Err(e) = std::fs::write(out, json) {
            eprintln!("cannot write {}: {e}", out.display());
            return 2;
        }
    }
    0
}

pub fn cmd_lint(model_file: &Path) -> u8 {
    let text = match std::fs::read_to_string(model_file) {
        Ok(text) => text,
        Err(e) => {
            eprintln!("cannot read {}: {e}", model_file.display());
            return 2;
        }
    };
    let model = match parse_model_json(&text) {
        Ok(model) => model,
        Err(e) => {
            eprintln!("parse error: {e}");
            return 2;
        }
    };
    let report = validate_model(&model);
    for warning in &report.warnings {
        println!("warning: {warning}");
    }
    if report.is_valid() {
        println!(
            "model is valid: {} parameters, {} variables, {} constraints",
            model.parameters.len(),
            model.variables.len(),
            model.constraints.len()
        );
        0
    } else {
        for violation in &report.violations {
            println!("violation {:?}: {}", violation.code, violation.message);
        }
        3
    }
}

pub fn cmd_cassette_list(file: &Path) -> u8 {
    match Cassette::load(file) {
        Ok(cassette) => {
            println!("{} entries", cassette.len());
            if let Some(metadata) = &cassette.metadata {
                println!("metadata: {metadata}");
            }
            0
        }
        Err(e) => {
            eprintln!("cassette error: {e}");
            2
        }
    }
}
