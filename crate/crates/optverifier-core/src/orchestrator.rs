//! The pipeline state machine: distill, formulate, structure-side
//! verification loop, compile/solve, solution-side verification loop, accept
//! — with budgets, full provenance, and a plug-and-play entry for externally
//! supplied models.

use serde::{Deserialize, Serialize};

use crate::agents::{AgentError, AgentSuite, Verdict};
use crate::compile_solve::{
    check_feasibility, ground, instantiate_toy, solve, Bindings, GroundError, SolverBackend,
};
use crate::llm_gateway::usage_totals;
use crate::model_ir::{validate_model, OptimizationModel, ProblemInstance, Provenance};
use crate::structure_schema::{structure_diff, ModelingStructure, StructureDiff};
use crate::trace::{digest16, EventLog, PipelineStage, StageEvent};
use crate::{FeasibilityReport, GroundedModel, Solution, Tolerances};

/// Budgets and backends for one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Structure-side refinement rounds (verification always runs once).
    pub max_structure_rounds: u32,
    /// Solution-side refinement rounds, shared with infeasible/unbounded
    /// solve outcomes.
    pub max_solution_rounds: u32,
    /// Global refinement cap across both loops.
    pub max_total_refinements: u32,
    /// Grounding retries per compile entry, each preceded by a refinement.
    pub max_compile_retries: u32,
    pub solver: SolverBackend,
    /// Bind parameterized models to a small synthetic dataset before solving.
    pub toy_instantiation: bool,
    pub toy_seed: u64,
    /// Re-run structure verification after a solution-side refinement.
    pub strict_reverify: bool,
    pub tolerances: Tolerances,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_structure_rounds: 2,
            max_solution_rounds: 2,
            max_total_refinements: 6,
            max_compile_retries: 2,
            solver: SolverBackend::default(),
            toy_instantiation: false,
            toy_seed: 0,
            strict_reverify: false,
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    BudgetExhausted,
    Failed { error: String },
}

impl Outcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Outcome::Accepted)
    }
}

/// One model revision produced by the refiner and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub step: u32,
    pub trigger: PipelineStage,
    pub comment: String,
    /// The refiner returned a model canonically identical to its input.
    #[serde(default)]
    pub no_change: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub agent_calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub estimated: bool,
    pub wall_time_seconds: f64,
}

/// Full provenance of one pipeline run: every event, every model revision,
/// final artifacts and exact usage totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance_id: String,
    pub outcome: Outcome,
    pub events: Vec<StageEvent>,
    pub models: Vec<OptimizationModel>,
    pub final_model: Option<OptimizationModel>,
    pub final_solution: Option<Solution>,
    pub structure: Option<ModelingStructure>,
    pub final_structure_verdict: Option<Verdict>,
    pub final_solution_verdict: Option<Verdict>,
    pub last_structure_diff: Option<StructureDiff>,
    pub feasibility: Option<FeasibilityReport>,
    pub refinements: Vec<Refinement>,
    pub totals: Totals,
}

impl RunRecord {
    pub fn predicted_objective(&self) -> Option<f64> {
        self.final_solution.as_ref().and_then(|s| s.objective_value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run records always serialize")
    }
}

struct PipelineRun<'a> {
    agents: &'a dyn AgentSuite,
    problem: &'a ProblemInstance,
    config: &'a PipelineConfig,
    log: EventLog,
    models: Vec<OptimizationModel>,
    refinements: Vec<Refinement>,
    total_refinements: u32,
    structure: Option<ModelingStructure>,
    structure_verdict: Option<Verdict>,
    solution_verdict: Option<Verdict>,
    structure_diff: Option<StructureDiff>,
    feasibility: Option<FeasibilityReport>,
    final_solution: Option<Solution>,
    started: std::time::Instant,
}

enum LoopOutcome {
    Accepted,
    Exhausted,
    Failed(String),
}

impl<'a> PipelineRun<'a> {
    fn new(
        agents: &'a dyn AgentSuite,
        problem: &'a ProblemInstance,
        config: &'a PipelineConfig,
    ) -> Self {
        PipelineRun {
            agents,
            problem,
            config,
            log: EventLog::default(),
            models: Vec::new(),
            refinements: Vec::new(),
            total_refinements: 0,
            structure: None,
            structure_verdict: None,
            solution_verdict: None,
            structure_diff: None,
            feasibility: None,
            final_solution: None,
            started: std::time::Instant::now(),
        }
    }

    fn finish(mut self, outcome: Outcome) -> RunRecord {
        let usage = usage_totals(
            self.log
                .events
                .iter()
                .filter(|e| e.stage.is_llm())
                .map(|e| (e.stage.as_str(), e.usage)),
        );
        let totals = Totals {
            agent_calls: self.log.llm_calls(),
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            estimated: usage.estimated,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        let final_model = self.models.last().cloned();
        RunRecord {
            instance_id: self.problem.id.clone(),
            outcome,
            events: std::mem::take(&mut self.log.events),
            models: std::mem::take(&mut self.models),
            final_model,
            final_solution: self.final_solution.take(),
            structure: self.structure.take(),
            final_structure_verdict: self.structure_verdict.take(),
            final_solution_verdict: self.solution_verdict.take(),
            last_structure_diff: self.structure_diff.take(),
            feasibility: self.feasibility.take(),
            refinements: std::mem::take(&mut self.refinements),
            totals,
        }
    }

    fn current_model(&self) -> &OptimizationModel {
        self.models
            .last()
            .expect("a model is always present after formulation")
    }

    /// Apply one refinement; returns false when the global budget is spent.
    fn refine(&mut self, trigger: PipelineStage, comment: &str) -> Result<bool, AgentError> {
        if self.total_refinements >= self.config.max_total_refinements {
            return Ok(false);
        }
        let structure = self
            .structure
            .clone()
            .expect("structure distilled before refinement");
        let current = self.current_model().clone();
        let refined =
            self.agents
                .refine(self.problem, &structure, &current, comment, &mut self.log)?;
        self.total_refinements += 1;
        let no_change = refined.to_canonical_json() == self.current_model().to_canonical_json();
        let mut refined = refined;
        refined.provenance = Provenance::Refined {
            step_index: self.total_refinements,
        };
        self.refinements.push(Refinement {
            step: self.total_refinements,
            trigger,
            comment: comment.to_string(),
            no_change,
        });
        self.models.push(refined);
        Ok(true)
    }

    /// Structure loop: interpret/evaluate, refining on rejection until the
    /// round budget runs out.
    fn structure_loop(&mut self) -> Result<LoopOutcome, AgentError> {
        let mut rounds = 0u32;
        loop {
            let current = self.current_model().clone();
            let candidate = self.agents.interpret_structure(&current, &mut self.log)?;
            let reference = self.structure.clone().expect("structure present");
            self.structure_diff = Some(structure_diff(&reference, &candidate));
            let verdict =
                self.agents
                    .evaluate_structure(&reference, &candidate, &current, &mut self.log)?;
            let accepted = verdict.accepted();
            let comment = verdict.comment.clone();
            self.structure_verdict = Some(verdict);
            if accepted {
                return Ok(LoopOutcome::Accepted);
            }
            if rounds >= self.config.max_structure_rounds {
                return Ok(LoopOutcome::Exhausted);
            }
            if !self.refine(PipelineStage::StruEval, &comment)? {
                return Ok(LoopOutcome::Exhausted);
            }
            rounds += 1;
        }
    }

    /// Ground the current model, refining on compile errors up to the
    /// per-entry retry budget. Toy instantiation is applied when configured
    /// and the model carries external parameters.
    fn compile(&mut self) -> Result<Result<GroundedModel, LoopOutcome>, AgentError> {
        let mut retries = 0u32;
        loop {
            let started = std::time::Instant::now();
            let attempt: Result<GroundedModel, GroundError> = if self.config.toy_instantiation
                && self.current_model().has_external_parameters()
            {
                match instantiate_toy(
                    self.current_model(),
                    self.config.toy_seed,
                    &Default::default(),
                ) {
                    Ok((bound, bindings)) => ground(&bound, &bindings),
                    Err(e) => {
                        self.log.record(
                            PipelineStage::Compile,
                            Default::default(),
                            &e.to_string(),
                            format!("toy instantiation failed: {e}"),
                            started.elapsed().as_millis() as u64,
                        );
                        return Ok(Err(LoopOutcome::Failed(e.to_string())));
                    }
                }
            } else {
                ground(self.current_model(), &Bindings::new())
            };
            match attempt {
                Ok(grounded) => {
                    self.log.record(
                        PipelineStage::Compile,
                        Default::default(),
                        &self.current_model().to_canonical_json(),
                        format!(
                            "{} rows, {} variables",
                            grounded.rows.len(),
                            grounded.variables.len()
                        ),
                        started.elapsed().as_millis() as u64,
                    );
                    return Ok(Ok(grounded));
                }
                Err(e) => {
                    self.log.record(
                        PipelineStage::Compile,
                        Default::default(),
                        &e.to_string(),
                        format!("compile error: {e}"),
                        started.elapsed().as_millis() as u64,
                    );
                    if retries >= self.config.max_compile_retries {
                        return Ok(Err(LoopOutcome::Failed(format!(
                            "grounding failed after {retries} retries: {e}"
                        ))));
                    }
                    let comment = format!(
                        "The model could not be compiled into linear rows: {e}. \
                         Please repair the formulation."
                    );
                    if !self.refine(PipelineStage::Compile, &comment)? {
                        return Ok(Err(LoopOutcome::Exhausted));
                    }
                    retries += 1;
                }
            }
        }
    }

    /// Compile, solve and run the solution-side verification loop.
    fn solve_loop(&mut self) -> Result<LoopOutcome, AgentError> {
        let mut rounds = 0u32;
        loop {
            let grounded = match self.compile()? {
                Ok(grounded) => grounded,
                Err(outcome) => return Ok(outcome),
            };

            let started = std::time::Instant::now();
            let solution = match solve(&grounded, &self.config.solver) {
                Ok(solution) => solution,
                Err(e) => {
                    self.log.record(
                        PipelineStage::Solve,
                        Default::default(),
                        &e.to_string(),
                        format!("solver error: {e}"),
                        started.elapsed().as_millis() as u64,
                    );
                    return Ok(LoopOutcome::Failed(e.to_string()));
                }
            };
            self.log.record(
                PipelineStage::Solve,
                Default::default(),
                &format!("{:?}", solution.objective_value),
                format!("status {}", solution.status),
                started.elapsed().as_millis() as u64,
            );
            self.final_solution = Some(solution.clone());

            if !solution.status.has_assignment() {
                // Infeasible/unbounded feed the refinement channel directly.
                let comment = format!(
                    "The solver reported the model is {}; the formulation is \
                     missing or misstating constraints. Please repair it.",
                    solution.status
                );
                self.solution_verdict = Some(Verdict::no(comment.clone()));
                if rounds >= self.config.max_solution_rounds
                    || !self.refine(PipelineStage::Solve, &comment)?
                {
                    return Ok(LoopOutcome::Exhausted);
                }
                rounds += 1;
                if self.config.strict_reverify {
                    match self.structure_loop()? {
                        LoopOutcome::Accepted => {}
                        other => return Ok(other),
                    }
                }
                continue;
            }

            let feasibility = match check_feasibility(&grounded, &solution, &self.config.tolerances)
            {
                Ok(report) => report,
                Err(e) => return Ok(LoopOutcome::Failed(e.to_string())),
            };
            self.feasibility = Some(feasibility.clone());

            let structure = self.structure.clone().expect("structure present");
            let current = self.current_model().clone();
            let narrative = self.agents.interpret_solution(
                self.problem,
                &current,
                &structure,
                &solution,
                &mut self.log,
            )?;
            let mut verdict = self.agents.evaluate_solution(
                self.problem,
                &current,
                &structure,
                &solution,
                &narrative,
                &feasibility,
                &mut self.log,
            )?;
            // The deterministic gate binds: an infeasible solution can never
            // be accepted, whatever the evaluating agent said.
            if !feasibility.feasible && verdict.accepted() {
                verdict = Verdict::no(format!(
                    "deterministic feasibility gate: {}",
                    feasibility.render()
                ));
            }
            let accepted = verdict.accepted();
            let comment = verdict.comment.clone();
            self.solution_verdict = Some(verdict);
            if accepted {
                return Ok(LoopOutcome::Accepted);
            }
            if rounds >= self.config.max_solution_rounds
                || !self.refine(PipelineStage::SolEval, &comment)?
            {
                return Ok(LoopOutcome::Exhausted);
            }
            rounds += 1;
            if self.config.strict_reverify {
                match self.structure_loop()? {
                    LoopOutcome::Accepted => {}
                    other => return Ok(other),
                }
            }
        }
    }

    fn execute(mut self, supplied: Option<OptimizationModel>) -> RunRecord {
        macro_rules! try_agent {
            ($expr:expr) => {
                match $expr {
                    Ok(value) => value,
                    Err(e) => {
                        return self.finish(Outcome::Failed {
                            error: e.to_string(),
                        })
                    }
                }
            };
        }

        let structure = try_agent!(self.agents.distill(self.problem, &mut self.log));
        self.structure = Some(structure);

        let model = match supplied {
            Some(mut model) => {
                model.provenance = Provenance::ExternallySupplied;
                model
            }
            None => {
                let reference = self.structure.as_ref().unwrap();
                try_agent!(self
                    .agents
                    .formulate(self.problem, reference, &mut self.log))
            }
        };
        self.models.push(model);

        match try_agent!(self.structure_loop()) {
            LoopOutcome::Accepted => {}
            LoopOutcome::Exhausted => return self.finish(Outcome::BudgetExhausted),
            LoopOutcome::Failed(error) => return self.finish(Outcome::Failed { error }),
        }

        match try_agent!(self.solve_loop()) {
            LoopOutcome::Accepted => self.finish(Outcome::Accepted),
            LoopOutcome::Exhausted => self.finish(Outcome::BudgetExhausted),
            LoopOutcome::Failed(error) => self.finish(Outcome::Failed { error }),
        }
    }
}

/// Run the full pipeline on a problem description. Errors never escape the
/// record: agent, gateway and solver failures end with `Outcome::Failed`.
pub fn run_pipeline(
    agents: &dyn AgentSuite,
    problem: &ProblemInstance,
    config: &PipelineConfig,
) -> RunRecord {
    PipelineRun::new(agents, problem, config).execute(None)
}

#[derive(Debug, thiserror::Error)]
pub enum PlugAndPlayError {
    #[error("supplied model is invalid: {0}")]
    InvalidModel(String),
}

/// Plug-and-play entry: verify and refine an externally supplied model. The
/// structure is still distilled from the description; formulation is skipped.
pub fn verify_and_refine(
    agents: &dyn AgentSuite,
    problem: &ProblemInstance,
    initial_model: OptimizationModel,
    config: &PipelineConfig,
) -> Result<RunRecord, PlugAndPlayError> {
    let report = validate_model(&initial_model);
    if !report.is_valid() {
        let details: Vec<String> = report
            .violations
            .iter()
            .map(|v| format!("{:?}: {}", v.code, v.message))
            .collect();
        return Err(PlugAndPlayError::InvalidModel(details.join("; ")));
    }
    Ok(PipelineRun::new(agents, problem, config).execute(Some(initial_model)))
}

/// Human-readable run trace: per-stage usage, refinements with model diffs,
/// final verdicts and solution.
pub fn render_run_report(record: &RunRecord) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let outcome = match &record.outcome {
        Outcome::Accepted => "accepted".to_string(),
        Outcome::BudgetExhausted => "budget_exhausted".to_string(),
        Outcome::Failed { error } => format!("failed ({error})"),
    };
    writeln!(out, "run {} — {}", record.instance_id, outcome).unwrap();

    let usage = usage_totals(
        record
            .events
            .iter()
            .filter(|e| e.stage.is_llm())
            .map(|e| (e.stage.as_str(), e.usage)),
    );
    if !record.events.is_empty() {
        writeln!(out, "\nstage        calls  prompt_tok  completion_tok").unwrap();
        for (stage, stage_usage) in &usage.by_stage {
            writeln!(
                out,
                "{:<12} {:>5}  {:>10}  {:>14}",
                stage, stage_usage.calls, stage_usage.prompt_tokens, stage_usage.completion_tokens
            )
            .unwrap();
        }
        writeln!(
            out,
            "total agent calls: {}; tokens: {} prompt + {} completion{}",
            record.totals.agent_calls,
            record.totals.prompt_tokens,
            record.totals.completion_tokens,
            if record.totals.estimated {
                " (estimated)"
            } else {
                ""
            }
        )
        .unwrap();
    }

    if !record.refinements.is_empty() {
        writeln!(out, "\nrefinements:").unwrap();
        for refinement in &record.refinements {
            let comment: String = refinement.comment.chars().take(160).collect();
            writeln!(
                out,
                "  step {} (triggered by {}){}: {}",
                refinement.step,
                refinement.trigger.as_str(),
                if refinement.no_change {
                    " [no change]"
                } else {
                    ""
                },
                comment
            )
            .unwrap();
            if let (Some(before), Some(after)) = (
                record.models.get(refinement.step as usize - 1),
                record.models.get(refinement.step as usize),
            ) {
                for line in model_diff_lines(before, after) {
                    writeln!(out, "    {line}").unwrap();
                }
            }
        }
    }

    if let Some(verdict) = &record.final_structure_verdict {
        writeln!(out, "\nstructure verdict: {}", verdict.score).unwrap();
    }
    if let Some(verdict) = &record.final_solution_verdict {
        writeln!(out, "solution verdict: {}", verdict.score).unwrap();
    }
    if let Some(solution) = &record.final_solution {
        write!(out, "solution: status {}", solution.status).unwrap();
        if let Some(objective) = solution.objective_value {
            write!(out, ", objective {objective}").unwrap();
        }
        writeln!(out, " ({})", solution.solver_id).unwrap();
    }
    if let Some(feasibility) = &record.feasibility {
        writeln!(out, "feasibility: {}", feasibility.render()).unwrap();
    }
    writeln!(
        out,
        "models: {} revision(s), final digest {}",
        record.models.len(),
        record
            .final_model
            .as_ref()
            .map(|m| digest16(&m.to_canonical_json()))
            .unwrap_or_else(|| "-".into())
    )
    .unwrap();
    out
}

/// Constraint/variable-level differences between two model revisions.
fn model_diff_lines(before: &OptimizationModel, after: &OptimizationModel) -> Vec<String> {
    let mut lines = Vec::new();
    let names = |m: &OptimizationModel| -> Vec<String> {
        m.constraints.iter().map(|c| c.name.clone()).collect()
    };
    let before_names = names(before);
    let after_names = names(after);
    for name in &after_names {
        if !before_names.contains(name) {
            lines.push(format!("+ constraint {name}"));
        }
    }
    for name in &before_names {
        if !after_names.contains(name) {
            lines.push(format!("- constraint {name}"));
        }
    }
    for name in &after_names {
        if before_names.contains(name) {
            let old = before.constraints.iter().find(|c| &c.name == name).unwrap();
            let new = after.constraints.iter().find(|c| &c.name == name).unwrap();
            if old.formulation != new.formulation {
                lines.push(format!("~ constraint {name}"));
            }
        }
    }
    let var_names = |m: &OptimizationModel| -> Vec<String> {
        m.variables.iter().map(|v| v.symbol.clone()).collect()
    };
    for symbol in var_names(after) {
        if !var_names(before).contains(&symbol) {
            lines.push(format!("+ variable {symbol}"));
        }
    }
    for symbol in var_names(before) {
        if !var_names(after).contains(&symbol) {
            lines.push(format!("- variable {symbol}"));
        }
    }
    lines
}
