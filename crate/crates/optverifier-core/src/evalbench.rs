//! Benchmark harness: dataset ingestion, solving-accuracy scoring, the
//! perturbation study with verifier precision/recall, efficiency tables and
//! the tour-enumeration oracle.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::AgentSuite;
use crate::compile_solve::{
    brute_force_solve, check_feasibility, ground, Bindings, BruteForceConfig, SolveError,
};
use crate::formula_dsl::{
    parse_constraint, parse_expression, print_canonical, print_constraint, ConstraintAst, Expr,
    Relop,
};
use crate::model_ir::{
    validate_model, Constraint, DecisionVariable, Difficulty, Objective, OptimizationModel,
    ParamValue, Parameter, ProblemInstance, Provenance, Sense, VarType,
};
use crate::orchestrator::RunRecord;
use crate::structure_schema::ModelingStructure;
use crate::trace::EventLog;
use crate::Tolerances;

// ---------------------------------------------------------------------------
// Dataset ingestion
// ---------------------------------------------------------------------------

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read dataset: {0}")]
    Io(String),
    #[error("malformed line {line}: {detail}")]
    MalformedLine { line: usize, detail: String },
}

/// Load a JSON Lines dataset: one instance per line with keys
/// `{id, description, ground_truth_objective?, difficulty?, category?}`.
pub fn load_dataset(path: &Path) -> Result<Vec<ProblemInstance>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io(e.to_string()))?;
    let mut instances = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let instance: ProblemInstance =
            serde_json::from_str(line).map_err(|e| DatasetError::MalformedLine {
                line: index + 1,
                detail: e.to_string(),
            })?;
        if instance.description.trim().is_empty() {
            return Err(DatasetError::MalformedLine {
                line: index + 1,
                detail: "description is empty".into(),
            });
        }
        instances.push(instance);
    }
    Ok(instances)
}

// ---------------------------------------------------------------------------
// Solving-accuracy scoring
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub id: String,
    pub predicted_objective: Option<f64>,
    pub truth: Option<f64>,
    /// None when no ground truth is available.
    pub correct: Option<bool>,
    pub outcome: String,
    pub status: Option<String>,
    pub difficulty: Option<Difficulty>,
    pub agent_calls: u64,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    /// Pooled over every scored instance.
    pub sa_micro: Option<f64>,
    /// Unweighted mean of the per-difficulty accuracies.
    pub sa_macro_by_difficulty: Option<f64>,
    pub by_difficulty: BTreeMap<String, f64>,
    pub scored: usize,
    pub unscored: usize,
    pub mean_agent_calls: f64,
    pub mean_tokens: f64,
}

/// Timing lives under its own key so byte-level report comparisons can strip
/// nondeterministic fields in one place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_wall_time_seconds: f64,
    pub per_instance_seconds: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub dataset: String,
    pub instances: Vec<InstanceScore>,
    pub aggregates: Aggregates,
    pub timing: Timing,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bench reports always serialize")
    }

    /// Markdown rendering with the accuracy and efficiency summary.
    pub fn to_markdown(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "# Benchmark report: {}\n", self.dataset).unwrap();
        writeln!(out, "| id | predicted | truth | correct | outcome |").unwrap();
        writeln!(out, "|---|---|---|---|---|").unwrap();
        for i in &self.instances {
            writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                i.id,
                i.predicted_objective
                    .map(|v| v.to_string())
                    .unwrap_or_else(|| "-".into()),
                i.truth.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
                i.correct
                    .map(|c| c.to_string())
                    .unwrap_or_else(|| "n/a".into()),
                i.outcome,
            )
            .unwrap();
        }
        match self.aggregates.sa_micro {
            Some(sa) => writeln!(out, "\nSolving accuracy (micro): {sa:.4}").unwrap(),
            None => writeln!(out, "\nSolving accuracy: n/a (no ground truth)").unwrap(),
        }
        if let Some(sa) = self.aggregates.sa_macro_by_difficulty {
            writeln!(out, "Solving accuracy (macro over difficulties): {sa:.4}").unwrap();
        }
        for (difficulty, sa) in &self.aggregates.by_difficulty {
            writeln!(out, "  {difficulty}: {sa:.4}").unwrap();
        }
        writeln!(
            out,
            "Mean agent calls: {:.2}; mean tokens: {:.1}; mean time: {:.3}s",
            self.aggregates.mean_agent_calls,
            self.aggregates.mean_tokens,
            self.timing.mean_wall_time_seconds
        )
        .unwrap();
        out
    }
}

/// Correct iff the run was accepted, the final status is optimal, and the
/// objective matches the truth within `max(tol_abs, tol_rel * |truth|)`.
/// Instances without a truth are reported but excluded from the accuracy.
pub fn score_solving_accuracy(
    dataset: &str,
    pairs: &[(&ProblemInstance, &RunRecord)],
    tol_rel: f64,
    tol_abs: f64,
) -> BenchReport {
    let mut instances = Vec::new();
    let mut per_instance_seconds = BTreeMap::new();
    for (instance, record) in pairs {
        let predicted = record.predicted_objective();
        let status = record.final_solution.as_ref().map(|s| s.status.to_string());
        let correct = instance.ground_truth_objective.map(|truth| {
            let accepted = record.outcome.is_accepted();
            let optimal = status.as_deref() == Some("optimal");
            let close = predicted
                .map(|p| (p - truth).abs() <= tol_abs.max(tol_rel * truth.abs()))
                .unwrap_or(false);
            accepted && optimal && close
        });
        per_instance_seconds.insert(instance.id.clone(), record.totals.wall_time_seconds);
        instances.push(InstanceScore {
            id: instance.id.clone(),
            predicted_objective: predicted,
            truth: instance.ground_truth_objective,
            correct,
            outcome: match &record.outcome {
                crate::orchestrator::Outcome::Accepted => "accepted".into(),
                crate::orchestrator::Outcome::BudgetExhausted => "budget_exhausted".into(),
                crate::orchestrator::Outcome::Failed { error } => format!("failed: {error}"),
            },
            status,
            difficulty: instance.difficulty,
            agent_calls: record.totals.agent_calls,
            tokens: record.totals.prompt_tokens + record.totals.completion_tokens,
        });
    }

    let scored: Vec<&InstanceScore> = instances.iter().filter(|i| i.correct.is_some()).collect();
    let sa_micro = if scored.is_empty() {
        None
    } else {
        Some(scored.iter().filter(|i| i.correct == Some(true)).count() as f64 / scored.len() as f64)
    };
    let mut by_difficulty: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for score in &scored {
        if let Some(difficulty) = score.difficulty {
            let entry = by_difficulty
                .entry(difficulty.to_string())
                .or_insert((0, 0));
            entry.1 += 1;
            if score.correct == Some(true) {
                entry.0 += 1;
            }
        }
    }
    let by_difficulty: BTreeMap<String, f64> = by_difficulty
        .into_iter()
        .map(|(k, (correct, total))| (k, correct as f64 / total as f64))
        .collect();
    let sa_macro_by_difficulty = if by_difficulty.is_empty() {
        None
    } else {
        Some(by_difficulty.values().sum::<f64>() / by_difficulty.len() as f64)
    };

    let n = instances.len().max(1) as f64;
    let mean_agent_calls = instances.iter().map(|i| i.agent_calls as f64).sum::<f64>() / n;
    let mean_tokens = instances.iter().map(|i| i.tokens as f64).sum::<f64>() / n;
    let mean_wall = per_instance_seconds.values().sum::<f64>() / n;

    BenchReport {
        dataset: dataset.to_string(),
        aggregates: Aggregates {
            sa_micro,
            sa_macro_by_difficulty,
            by_difficulty,
            scored: scored.len(),
            unscored: instances.len() - scored.len(),
            mean_agent_calls,
            mean_tokens,
        },
        timing: Timing {
            mean_wall_time_seconds: mean_wall,
            per_instance_seconds,
        },
        instances,
    }
}

// ---------------------------------------------------------------------------
// Perturbation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbOp {
    DropConstraint,
    DropVariable,
    FlipRelop,
    ScaleRhs,
    DropSumGuard,
    FlipVarType,
}

impl PerturbOp {
    pub const ALL: [PerturbOp; 6] = [
        PerturbOp::DropConstraint,
        PerturbOp::DropVariable,
        PerturbOp::FlipRelop,
        PerturbOp::ScaleRhs,
        PerturbOp::DropSumGuard,
        PerturbOp::FlipVarType,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbOp::DropConstraint => "drop_constraint",
            PerturbOp::DropVariable => "drop_variable",
            PerturbOp::FlipRelop => "flip_relop",
            PerturbOp::ScaleRhs => "scale_rhs",
            PerturbOp::DropSumGuard => "drop_sum_guard",
            PerturbOp::FlipVarType => "flip_var_type",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PerturbationSpec {
    pub seed: u64,
    pub k: usize,
    pub ops: Vec<PerturbOp>,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            seed: 0,
            k: 9,
            ops: PerturbOp::ALL.to_vec(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PerturbError {
    #[error("could not produce {wanted} distinct valid perturbations (got {got})")]
    Exhausted { wanted: usize, got: usize },
    #[error("model has no constraints to perturb")]
    NoConstraints,
}

/// Generate `k` distinct, individually valid negative samples by randomly
/// deleting or rewriting variables and constraints. Draws that produce an
/// invalid or duplicate model are retried up to 100 times per slot.
pub fn perturb_model(
    model: &OptimizationModel,
    spec: &PerturbationSpec,
) -> Result<Vec<OptimizationModel>, PerturbError> {
    if model.constraints.is_empty() {
        return Err(PerturbError::NoConstraints);
    }
    assert!(spec.k >= 1, "k must be at least 1");
    assert!(!spec.ops.is_empty(), "at least one op must be enabled");

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let original = model.to_canonical_json();
    let mut seen = std::collections::BTreeSet::new();
    seen.insert(original);
    let mut out = Vec::new();

    for _slot in 0..spec.k {
        let mut produced = false;
        for _attempt in 0..100 {
            let op = spec.ops[rng.random_range(0..spec.ops.len())];
            let Some(mut candidate) = apply_op(model, op, &mut rng) else {
                continue;
            };
            candidate.provenance = Provenance::Perturbed {
                seed: spec.seed,
                op: op.name().into(),
            };
            if !validate_model(&candidate).is_valid() {
                continue;
            }
            let canonical = candidate.to_canonical_json();
            if !seen.insert(canonical) {
                continue;
            }
            out.push(candidate);
            produced = true;
            break;
        }
        if !produced {
            return Err(PerturbError::Exhausted {
                wanted: spec.k,
                got: out.len(),
            });
        }
    }
    Ok(out)
}

fn apply_op(
    model: &OptimizationModel,
    op: PerturbOp,
    rng: &mut ChaCha8Rng,
) -> Option<OptimizationModel> {
    let mut out = model.clone();
    let symbols = model.symbol_table();
    match op {
        PerturbOp::DropConstraint => {
            let index = rng.random_range(0..out.constraints.len());
            out.constraints.remove(index);
        }
        PerturbOp::DropVariable => {
            if out.variables.is_empty() {
                return None;
            }
            let index = rng.random_range(0..out.variables.len());
            let symbol = out.variables[index].symbol.clone();
            out.variables.remove(index);
            let mut kept = Vec::new();
            for constraint in &out.constraints {
                let ast = parse_constraint(&constraint.formulation, &symbols).ok()?;
                let lhs = strip_variable_terms(&ast.lhs, &symbol);
                let rhs = strip_variable_terms(&ast.rhs, &symbol);
                if let (Some(lhs), Some(rhs)) = (lhs, rhs) {
                    let stripped = ConstraintAst { lhs, rhs, ..ast };
                    // A constraint with no variables left is trivially empty
                    // and dropped.
                    let mut syms = std::collections::BTreeSet::new();
                    stripped.collect_symbols(&mut syms);
                    let still_has_var = model
                        .variables
                        .iter()
                        .any(|v| v.symbol != symbol && syms.contains(&v.symbol));
                    if still_has_var {
                        let mut updated = constraint.clone();
                        updated.formulation = print_constraint(&stripped);
                        kept.push(updated);
                    }
                }
            }
            out.constraints = kept;
            let objective_ast = parse_expression(&model.objective.formulation, &symbols).ok()?;
            out.objective.formulation = match strip_variable_terms(&objective_ast, &symbol) {
                Some(expr) => print_canonical(&expr),
                None => "0".to_string(),
            };
        }
        PerturbOp::FlipRelop => {
            let flippable: Vec<usize> = out
                .constraints
                .iter()
                .enumerate()
                .filter_map(|(i, c)| {
                    let ast = parse_constraint(&c.formulation, &symbols).ok()?;
                    (ast.relop != Relop::Eq).then_some(i)
                })
                .collect();
            if flippable.is_empty() {
                return None;
            }
            let index = flippable[rng.random_range(0..flippable.len())];
            let mut ast = parse_constraint(&out.constraints[index].formulation, &symbols).ok()?;
            ast.relop = ast.relop.flipped();
            out.constraints[index].formulation = print_constraint(&ast);
        }
        PerturbOp::ScaleRhs => {
            let factor = if rng.random_range(0..2) == 0 {
                2.0
            } else {
                0.5
            };
            let index = rng.random_range(0..out.constraints.len());
            let mut ast = parse_constraint(&out.constraints[index].formulation, &symbols).ok()?;
            ast.rhs = match ast.rhs {
                Expr::Number(n) => {
                    if n == 0.0 {
                        return None; // scaling zero is a no-op
                    }
                    Expr::Number(n * factor)
                }
                other => Expr::Mul(Box::new(Expr::Number(factor)), Box::new(other)),
            };
            out.constraints[index].formulation = print_constraint(&ast);
        }
        PerturbOp::DropSumGuard => {
            let mut guarded: Vec<usize> = Vec::new();
            for (i, constraint) in out.constraints.iter().enumerate() {
                let ast = parse_constraint(&constraint.formulation, &symbols).ok()?;
                if ast.quantifiers.iter().any(|q| q.guard.is_some())
                    || expr_has_guarded_sum(&ast.lhs)
                    || expr_has_guarded_sum(&ast.rhs)
                {
                    guarded.push(i);
                }
            }
            if guarded.is_empty() {
                return None;
            }
            let index = guarded[rng.random_range(0..guarded.len())];
            let mut ast = parse_constraint(&out.constraints[index].formulation, &symbols).ok()?;
            if let Some(quantifier) = ast.quantifiers.iter_mut().find(|q| q.guard.is_some()) {
                quantifier.guard = None;
            } else {
                let _ =
                    remove_first_sum_guard(&mut ast.lhs) || remove_first_sum_guard(&mut ast.rhs);
            }
            out.constraints[index].formulation = print_constraint(&ast);
        }
        PerturbOp::FlipVarType => {
            let discrete: Vec<usize> = out
                .variables
                .iter()
                .enumerate()
                .filter(|(_, v)| matches!(v.var_type, VarType::Integer | VarType::Binary))
                .map(|(i, _)| i)
                .collect();
            if discrete.is_empty() {
                return None;
            }
            let index = discrete[rng.random_range(0..discrete.len())];
            let variable = &mut out.variables[index];
            if variable.var_type == VarType::Binary {
                // Keep the unit box; only the integrality requirement drops.
                variable.lower_bound = Some(0.0);
                variable.upper_bound = Some(1.0);
            }
            variable.var_type = VarType::Continuous;
        }
    }
    Some(out)
}

/// Remove additive terms that reference `symbol`; None when nothing remains.
fn strip_variable_terms(expr: &Expr, symbol: &str) -> Option<Expr> {
    match expr {
        Expr::Add(a, b) => match (
            strip_variable_terms(a, symbol),
            strip_variable_terms(b, symbol),
        ) {
            (Some(a), Some(b)) => Some(Expr::Add(Box::new(a), Box::new(b))),
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(b),
            (None, None) => None,
        },
        Expr::Sub(a, b) => match (
            strip_variable_terms(a, symbol),
            strip_variable_terms(b, symbol),
        ) {
            (Some(a), Some(b)) => Some(Expr::Sub(Box::new(a), Box::new(b))),
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(Expr::Neg(Box::new(b))),
            (None, None) => None,
        },
        Expr::Neg(inner) => strip_variable_terms(inner, symbol).map(|e| Expr::Neg(Box::new(e))),
        Expr::Sum {
            binders,
            guard,
            body,
        } => strip_variable_terms(body, symbol).map(|body| Expr::Sum {
            binders: binders.clone(),
            guard: guard.clone(),
            body: Box::new(body),
        }),
        other => {
            if other.references_var(symbol) {
                None
            } else {
                Some(other.clone())
            }
        }
    }
}

fn expr_has_guarded_sum(expr: &Expr) -> bool {
    match expr {
        Expr::Sum { guard, body, .. } => guard.is_some() || expr_has_guarded_sum(body),
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
            expr_has_guarded_sum(a) || expr_has_guarded_sum(b)
        }
        Expr::Neg(inner) => expr_has_guarded_sum(inner),
        _ => false,
    }
}

fn remove_first_sum_guard(expr: &mut Expr) -> bool {
    match expr {
        Expr::Sum { guard, body, .. } => {
            if guard.is_some() {
                *guard = None;
                true
            } else {
                remove_first_sum_guard(body)
            }
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
            remove_first_sum_guard(a) || remove_first_sum_guard(b)
        }
        Expr::Neg(inner) => remove_first_sum_guard(inner),
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// Verifier study
// ---------------------------------------------------------------------------

/// One hand-labeled positive: a correct model and its reference structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyCase {
    pub id: String,
    pub difficulty: Difficulty,
    pub model: OptimizationModel,
    pub structure: ModelingStructure,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SideCounts {
    /// Perturbed samples flagged (score 0) — true detections.
    pub true_positives: usize,
    /// Correct samples flagged — false alarms.
    pub false_positives: usize,
    /// Perturbed samples accepted — misses.
    pub false_negatives: usize,
    /// Correct samples accepted.
    pub true_negatives: usize,
    /// Samples this side could not evaluate.
    pub abstentions: usize,
}

impl SideCounts {
    /// Positive class is "perturbed model detected".
    pub fn precision(&self) -> Option<f64> {
        let flagged = self.true_positives + self.false_positives;
        (flagged > 0).then(|| self.true_positives as f64 / flagged as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let perturbed = self.true_positives + self.false_negatives;
        (perturbed > 0).then(|| self.true_positives as f64 / perturbed as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StratumMetrics {
    pub positives: usize,
    pub negatives: usize,
    pub structure: SideCounts,
    pub solution: SideCounts,
    /// Structure-side detection counts per perturbation op: (flagged, total).
    pub structure_by_op: BTreeMap<String, (usize, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyMetrics {
    pub per_stratum: BTreeMap<String, StratumMetrics>,
    pub total_samples: usize,
}

impl StudyMetrics {
    pub fn to_markdown(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "| difficulty | samples | side | precision | recall |").unwrap();
        writeln!(out, "|---|---|---|---|---|").unwrap();
        for (difficulty, metrics) in &self.per_stratum {
            for (side, counts) in [
                ("structure", &metrics.structure),
                ("solution", &metrics.solution),
            ] {
                writeln!(
                    out,
                    "| {} | {} | {} | {} | {} |",
                    difficulty,
                    metrics.positives + metrics.negatives,
                    side,
                    counts
                        .precision()
                        .map(|p| format!("{p:.3}"))
                        .unwrap_or_else(|| "n/a".into()),
                    counts
                        .recall()
                        .map(|r| format!("{r:.3}"))
                        .unwrap_or_else(|| "n/a".into()),
                )
                .unwrap();
            }
        }
        out
    }
}

/// Run the perturbation study: for each positive and its `k` negatives, run
/// structure-side verification (and solution-side where a solvable grounding
/// exists) and count flags. The positive class for precision/recall is
/// "perturbed model detected".
pub fn verifier_study(
    positives: &[StudyCase],
    spec: &PerturbationSpec,
    agents: &dyn AgentSuite,
) -> Result<StudyMetrics, PerturbError> {
    let mut metrics = StudyMetrics::default();
    for case in positives {
        let negatives = perturb_model(&case.model, spec)?;
        let stratum = metrics
            .per_stratum
            .entry(case.difficulty.to_string())
            .or_default();
        stratum.positives += 1;
        stratum.negatives += negatives.len();
        metrics.total_samples += 1 + negatives.len();

        evaluate_sample(case, &case.model, false, None, agents, stratum);
        for negative in &negatives {
            let op = match &negative.provenance {
                Provenance::Perturbed { op, .. } => Some(op.clone()),
                _ => None,
            };
            evaluate_sample(case, negative, true, op, agents, stratum);
        }
    }
    Ok(metrics)
}

fn evaluate_sample(
    case: &StudyCase,
    model: &OptimizationModel,
    perturbed: bool,
    op: Option<String>,
    agents: &dyn AgentSuite,
    stratum: &mut StratumMetrics,
) {
    let mut log = EventLog::default();

    // Structure side.
    let structure_flagged = match agents.interpret_structure(model, &mut log) {
        Ok(candidate) => {
            match agents.evaluate_structure(&case.structure, &candidate, model, &mut log) {
                Ok(verdict) => Some(!verdict.accepted()),
                Err(_) => None,
            }
        }
        Err(_) => None,
    };
    record_side(&mut stratum.structure, structure_flagged, perturbed);
    if let (Some(flagged), Some(op)) = (structure_flagged, op.as_deref()) {
        let entry = stratum
            .structure_by_op
            .entry(op.to_string())
            .or_insert((0, 0));
        entry.1 += 1;
        if flagged {
            entry.0 += 1;
        }
    }

    // Solution side, where the enumeration oracle applies.
    let solution_flagged = solution_side_flag(case, model, agents);
    record_side(&mut stratum.solution, solution_flagged, perturbed);
}

fn solution_side_flag(
    case: &StudyCase,
    model: &OptimizationModel,
    agents: &dyn AgentSuite,
) -> Option<bool> {
    let grounded = match ground::<f64>(model, &Bindings::new()) {
        Ok(grounded) => grounded,
        // A model the compiler rejects is a deterministic detection.
        Err(_) => return Some(true),
    };
    let solution = match brute_force_solve(&grounded, &BruteForceConfig::default()) {
        Ok(solution) => solution,
        Err(SolveError::OracleInapplicable(_)) => return None,
        Err(_) => return None,
    };
    if !solution.status.has_assignment() {
        // Infeasible or unbounded: flagged through the deterministic channel.
        return Some(true);
    }
    let feasibility = check_feasibility(&grounded, &solution, &Tolerances::default()).ok()?;
    let mut log = EventLog::default();
    let problem = ProblemInstance {
        id: case.id.clone(),
        description: format!("verification study sample derived from {}", case.id),
        ground_truth_objective: None,
        difficulty: Some(case.difficulty),
        category: None,
    };
    let narrative = agents
        .interpret_solution(&problem, model, &case.structure, &solution, &mut log)
        .ok()?;
    let verdict = agents
        .evaluate_solution(
            &problem,
            model,
            &case.structure,
            &solution,
            &narrative,
            &feasibility,
            &mut log,
        )
        .ok()?;
    Some(!verdict.accepted())
}

fn record_side(counts: &mut SideCounts, flagged: Option<bool>, perturbed: bool) {
    match flagged {
        None => counts.abstentions += 1,
        Some(true) if perturbed => counts.true_positives += 1,
        Some(true) => counts.false_positives += 1,
        Some(false) if perturbed => counts.false_negatives += 1,
        Some(false) => counts.true_negatives += 1,
    }
}

/// Deterministic synthetic positives for the study: production-mix MILPs
/// with enough constraints and variables that nine distinct perturbations
/// always exist. Structures follow the mock interpreter's conventions so the
/// offline study is exactly reproducible.
pub fn synth_study_positives(seed: u64, per_stratum: usize) -> Vec<StudyCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = [
        "Alpha", "Beta", "Gamma", "Delta", "Epsilon", "Zeta", "Eta", "Theta", "Iota", "Kappa",
    ];
    let mut cases = Vec::new();
    for difficulty in [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard] {
        // Sizes keep nine distinct drop-only perturbations reachable
        // (constraints + variables >= 9) and the enumeration oracle in play.
        let (nv, nc) = match difficulty {
            Difficulty::Easy => (4usize, 6usize),
            Difficulty::Medium => (5, 7),
            Difficulty::Hard => (5, 9),
        };
        for index in 0..per_stratum {
            let mut parameters = Vec::new();
            let mut constraints = Vec::new();
            let variables: Vec<DecisionVariable> = (0..nv)
                .map(|v| DecisionVariable {
                    symbol: format!("Product{}", names[v]),
                    definition: format!("Units of product {} to make.", names[v]),
                    var_type: VarType::Integer,
                    shape: vec![],
                    lower_bound: None,
                    upper_bound: None,
                })
                .collect();

            for c in 0..nc {
                let capacity = rng.random_range(20..=40) as f64;
                let param = format!("ResourceLimit{}", names[c]);
                parameters.push(Parameter {
                    symbol: param.clone(),
                    definition: format!("Available amount of resource {}.", names[c]),
                    value: ParamValue::Scalar(capacity),
                    shape: vec![],
                });
                // Every variable appears in the last row so bounds propagate.
                let members: Vec<usize> = if c == nc - 1 {
                    (0..nv).collect()
                } else {
                    let mut members: Vec<usize> =
                        (0..nv).filter(|_| rng.random_range(0..2) == 0).collect();
                    if members.is_empty() {
                        members.push(rng.random_range(0..nv));
                    }
                    members
                };
                let terms: Vec<String> = members
                    .iter()
                    .map(|&v| {
                        let coeff = rng.random_range(2..=9);
                        format!("{} * Product{}", coeff, names[v])
                    })
                    .collect();
                constraints.push(Constraint {
                    name: format!("Resource {} Limit", names[c]),
                    description: format!(
                        "Consumption of resource {} stays within its limit.",
                        names[c]
                    ),
                    formulation: format!("{} <= {}", terms.join(" + "), param),
                });
            }

            let objective_terms: Vec<String> = (0..nv)
                .map(|v| format!("{} * Product{}", rng.random_range(1..=9), names[v]))
                .collect();
            let model = OptimizationModel {
                parameters,
                variables,
                constraints,
                objective: Objective {
                    description: "Maximize total profit across products.".into(),
                    formulation: objective_terms.join(" + "),
                    sense: Sense::Maximize,
                },
                provenance: Provenance::default(),
            };
            debug_assert!(validate_model(&model).is_valid());
            let structure = crate::agents::mock_structure_of_model(
                &model,
                "Optimization Problem",
                "General Linear Program",
                &[],
                crate::structure_schema::StructureProvenance::DistilledFromDescription,
            );
            cases.push(StudyCase {
                id: format!("synthetic-{difficulty}-{index}"),
                difficulty,
                model,
                structure,
            });
        }
    }
    cases
}

// ---------------------------------------------------------------------------
// Tour oracle
// ---------------------------------------------------------------------------

#[derive(Debug, thiserror::Error)]
pub enum TourOracleError {
    #[error("matrix must be square, got {rows} rows with a row of length {cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("tour enumeration is limited to 10 cities, got {0}")]
    TooLarge(usize),
}

/// Exhaustive directed-tour enumeration from city 0. Ties break to the
/// lexicographically smallest tour.
pub fn tsp_tour_oracle(cost_matrix: &[Vec<f64>]) -> Result<(f64, Vec<usize>), TourOracleError> {
    let n = cost_matrix.len();
    for row in cost_matrix {
        if row.len() != n {
            return Err(TourOracleError::NotSquare {
                rows: n,
                cols: row.len(),
            });
        }
    }
    if n > 10 {
        return Err(TourOracleError::TooLarge(n));
    }
    if n == 0 {
        return Ok((0.0, vec![]));
    }
    if n == 1 {
        return Ok((0.0, vec![0, 0]));
    }

    let mut rest: Vec<usize> = (1..n).collect();
    let mut best_cost = f64::INFINITY;
    let mut best_tour = Vec::new();
    permute(&mut rest, 0, &mut |perm| {
        let mut cost = cost_matrix[0][perm[0]];
        for w in perm.windows(2) {
            cost += cost_matrix[w[0]][w[1]];
        }
        cost += cost_matrix[*perm.last().unwrap()][0];
        if cost < best_cost {
            best_cost = cost;
            best_tour = std::iter::once(0)
                .chain(perm.iter().copied())
                .chain(std::iter::once(0))
                .collect();
        }
    });
    Ok((best_cost, best_tour))
}

/// Lexicographic-order permutation visitor (Heap's algorithm reorders, so a
/// simple recursive selection keeps lexicographic first-found semantics).
fn permute(items: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        let value = items.remove(i);
        items.insert(start, value);
        permute(items, start + 1, visit);
        let value = items.remove(start);
        items.insert(i, value);
    }
}

// ---------------------------------------------------------------------------
// Efficiency table
// ---------------------------------------------------------------------------

/// Per-dataset means plus per-stage token means, as a Markdown table.
pub fn efficiency_table(records: &[(&str, &RunRecord)]) -> String {
    use std::fmt::Write;
    if records.is_empty() {
        return String::new();
    }
    let mut by_dataset: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for (dataset, record) in records {
        by_dataset.entry(dataset).or_default().push(record);
    }
    let mut out = String::new();
    writeln!(
        out,
        "| dataset | runs | mean time (s) | mean agent calls | mean tokens |"
    )
    .unwrap();
    writeln!(out, "|---|---|---|---|---|").unwrap();
    for (dataset, runs) in &by_dataset {
        let n = runs.len() as f64;
        let time = runs.iter().map(|r| r.totals.wall_time_seconds).sum::<f64>() / n;
        let calls = runs
            .iter()
            .map(|r| r.totals.agent_calls as f64)
            .sum::<f64>()
            / n;
        let tokens = runs
            .iter()
            .map(|r| (r.totals.prompt_tokens + r.totals.completion_tokens) as f64)
            .sum::<f64>()
            / n;
        writeln!(
            out,
            "| {dataset} | {} | {time:.3} | {calls:.1} | {tokens:.1} |",
            runs.len()
        )
        .unwrap();
    }

    // Stage-wise token means across every run.
    let mut stage_tokens: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for (_, record) in records {
        for event in record.events.iter().filter(|e| e.stage.is_llm()) {
            let entry = stage_tokens.entry(event.stage.as_str()).or_insert((0, 0));
            entry.0 += event.usage.prompt_tokens + event.usage.completion_tokens;
            entry.1 += 1;
        }
    }
    if !stage_tokens.is_empty() {
        writeln!(out, "\n| stage | mean tokens per call | calls |").unwrap();
        writeln!(out, "|---|---|---|").unwrap();
        for (stage, (tokens, calls)) in &stage_tokens {
            writeln!(
                out,
                "| {stage} | {:.1} | {calls} |",
                *tokens as f64 / *calls as f64
            )
            .unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_ir::parse_model_json;

    fn knapsack() -> OptimizationModel {
        parse_model_json(include_str!("agents/canned/knapsack.json")).unwrap()
    }

    #[test]
    fn tsp_oracle_matches_known_minimum() {
        let costs = vec![
            vec![0.0, 58.0, 15.0, 75.0, 91.0],
            vec![58.0, 0.0, 54.0, 85.0, 11.0],
            vec![15.0, 54.0, 0.0, 28.0, 61.0],
            vec![75.0, 85.0, 28.0, 0.0, 47.0],
            vec![91.0, 11.0, 61.0, 47.0, 0.0],
        ];
        let (cost, tour) = tsp_tour_oracle(&costs).unwrap();
        assert_eq!(cost, 159.0);
        assert_eq!(tour, vec![0, 1, 4, 3, 2, 0]);
    }

    #[test]
    fn two_city_tour_is_round_trip() {
        let costs = vec![vec![0.0, 7.0], vec![7.0, 0.0]];
        let (cost, tour) = tsp_tour_oracle(&costs).unwrap();
        assert_eq!(cost, 14.0);
        assert_eq!(tour, vec![0, 1, 0]);
    }

    #[test]
    fn eleven_cities_is_too_large() {
        let costs = vec![vec![0.0; 11]; 11];
        assert!(matches!(
            tsp_tour_oracle(&costs),
            Err(TourOracleError::TooLarge(11))
        ));
    }

    #[test]
    fn perturbations_are_deterministic_distinct_and_valid() {
        let model = knapsack();
        let spec = PerturbationSpec {
            seed: 7,
            k: 9,
            ops: PerturbOp::ALL.to_vec(),
        };
        let a = perturb_model(&model, &spec).unwrap();
        let b = perturb_model(&model, &spec).unwrap();
        assert_eq!(a.len(), 9);
        let canon_a: Vec<String> = a.iter().map(|m| m.to_canonical_json()).collect();
        let canon_b: Vec<String> = b.iter().map(|m| m.to_canonical_json()).collect();
        assert_eq!(canon_a, canon_b, "same spec must give identical outputs");
        let unique: std::collections::BTreeSet<&String> = canon_a.iter().collect();
        assert_eq!(unique.len(), 9, "outputs must be pairwise distinct");
        for perturbed in &a {
            assert!(validate_model(perturbed).is_valid());
            assert!(matches!(
                perturbed.provenance,
                Provenance::Perturbed { seed: 7, .. }
            ));
        }
    }

    #[test]
    fn flip_var_type_keeps_binary_box() {
        let model = parse_model_json(include_str!("agents/canned/warehouse.json")).unwrap();
        let spec = PerturbationSpec {
            seed: 3,
            k: 1,
            ops: vec![PerturbOp::FlipVarType],
        };
        let perturbed = &perturb_model(&model, &spec).unwrap()[0];
        let open = perturbed.find_variable("WarehouseOpen").unwrap();
        assert_eq!(open.var_type, VarType::Continuous);
        assert_eq!(open.bounds(), (0.0, 1.0));
    }

    #[test]
    fn drop_variable_leaves_no_references() {
        let model = parse_model_json(include_str!("agents/canned/fishery.json")).unwrap();
        let spec = PerturbationSpec {
            seed: 11,
            k: 2,
            ops: vec![PerturbOp::DropVariable],
        };
        // Only two variables exist, so two distinct drops are possible.
        let outputs = perturb_model(&model, &spec).unwrap();
        for perturbed in &outputs {
            assert!(validate_model(perturbed).is_valid());
            assert_eq!(perturbed.variables.len(), 1);
        }
    }

    #[test]
    fn scale_rhs_with_ref_injects_coefficient() {
        let model = knapsack();
        let spec = PerturbationSpec {
            seed: 5,
            k: 1,
            ops: vec![PerturbOp::ScaleRhs],
        };
        let perturbed = &perturb_model(&model, &spec).unwrap()[0];
        let weight = perturbed
            .constraints
            .iter()
            .find(|c| c.name.starts_with("Weight"))
            .unwrap();
        assert!(
            weight.formulation.contains("* MaxKnapsackWeight"),
            "got {}",
            weight.formulation
        );
    }

    #[test]
    fn scoring_matches_tolerance_semantics() {
        use crate::agents::MockAgents;
        use crate::orchestrator::{run_pipeline, PipelineConfig};
        let agents = MockAgents::new();
        let mk = |id: &str, truth: Option<f64>| ProblemInstance {
            id: id.into(),
            description: "Pick item quantities for a knapsack with weight capacity 60.".into(),
            ground_truth_objective: truth,
            difficulty: Some(Difficulty::Easy),
            category: None,
        };
        let good = mk("good", Some(48.0));
        let near = mk("near", Some(48.0000001));
        let wrong = mk("wrong", Some(50.0));
        let unknown = mk("unknown", None);
        let records: Vec<RunRecord> = [&good, &near, &wrong, &unknown]
            .iter()
            .map(|p| run_pipeline(&agents, p, &PipelineConfig::default()))
            .collect();
        let pairs: Vec<(&ProblemInstance, &RunRecord)> = vec![
            (&good, &records[0]),
            (&near, &records[1]),
            (&wrong, &records[2]),
            (&unknown, &records[3]),
        ];
        let report = score_solving_accuracy("fixture", &pairs, 1e-4, 1e-6);
        assert_eq!(report.aggregates.scored, 3);
        assert_eq!(report.aggregates.unscored, 1);
        let sa = report.aggregates.sa_micro.unwrap();
        assert!((sa - 2.0 / 3.0).abs() < 1e-12, "sa = {sa}");
    }

    #[test]
    fn accuracy_is_scale_consistent() {
        // Multiplying prediction and truth by the same positive factor never
        // changes correctness under the relative branch.
        let close =
            |pred: f64, truth: f64| (pred - truth).abs() <= (1e-4f64 * truth.abs()).max(0.0);
        for (pred, truth) in [(2999.9999, 3000.0), (48.0, 48.0001), (10.0, 11.0)] {
            for factor in [1.0, 10.0, 1e6] {
                assert_eq!(close(pred, truth), close(pred * factor, truth * factor));
            }
        }
    }

    #[test]
    fn precision_recall_formulas() {
        let counts = SideCounts {
            true_positives: 9,
            false_positives: 1,
            false_negatives: 1,
            true_negatives: 9,
            abstentions: 0,
        };
        assert_eq!(counts.precision(), Some(0.9));
        assert_eq!(counts.recall(), Some(0.9));
        // Everything flagged: precision equals the perturbed fraction and
        // recall is 1.0.
        let all_flagged = SideCounts {
            true_positives: 27,
            false_positives: 3,
            false_negatives: 0,
            true_negatives: 0,
            abstentions: 0,
        };
        assert_eq!(all_flagged.precision(), Some(0.9));
        assert_eq!(all_flagged.recall(), Some(1.0));
        assert_eq!(SideCounts::default().precision(), None);
    }

    #[test]
    fn empty_dataset_has_na_accuracy() {
        let report = score_solving_accuracy("empty", &[], 1e-4, 1e-6);
        assert!(report.aggregates.sa_micro.is_none());
    }

    #[test]
    fn synthetic_positives_support_nine_perturbations() {
        let cases = synth_study_positives(42, 10);
        assert_eq!(cases.len(), 30);
        let spec = PerturbationSpec::default();
        for case in &cases {
            let negatives = perturb_model(&case.model, &spec).unwrap();
            assert_eq!(negatives.len(), 9);
        }
    }

    #[test]
    fn study_counts_follow_the_protocol_shape() {
        use crate::agents::MockAgents;
        let cases = synth_study_positives(1, 10);
        let agents = MockAgents::new();
        let spec = PerturbationSpec {
            seed: 2,
            k: 9,
            ops: PerturbOp::ALL.to_vec(),
        };
        let metrics = verifier_study(&cases, &spec, &agents).unwrap();
        // 10 positives + 90 negatives per stratum, 300 total at 3 strata.
        assert_eq!(metrics.total_samples, 300);
        for metrics in metrics.per_stratum.values() {
            assert_eq!(metrics.positives, 10);
            assert_eq!(metrics.negatives, 90);
        }
    }

    #[test]
    fn mock_study_detects_all_drop_negatives() {
        use crate::agents::MockAgents;
        let cases = synth_study_positives(3, 4);
        let agents = MockAgents::new();
        let spec = PerturbationSpec {
            seed: 9,
            k: 9,
            ops: vec![PerturbOp::DropConstraint, PerturbOp::DropVariable],
        };
        let metrics = verifier_study(&cases, &spec, &agents).unwrap();
        for stratum in metrics.per_stratum.values() {
            assert_eq!(stratum.structure.recall(), Some(1.0));
            assert_eq!(stratum.structure.precision(), Some(1.0));
            for (op, (flagged, total)) in &stratum.structure_by_op {
                assert_eq!(flagged, total, "op {op} must be fully detected");
            }
        }
    }

    #[test]
    fn load_dataset_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("instances.jsonl");
        std::fs::write(
            &path,
            "{\"id\": \"a\", \"description\": \"first\"}\n\
             {\"id\": \"b\", \"description\": \"second\", \"difficulty\": \"hard\"}\n\
             {\"id\": \"c\", \"description\": \"third\", \"ground_truth_objective\": 5.0}\n",
        )
        .unwrap();
        let instances = load_dataset(&path).unwrap();
        assert_eq!(instances.len(), 3);
        assert_eq!(instances[1].difficulty, Some(Difficulty::Hard));

        std::fs::write(
            &path,
            "{\"id\": \"a\", \"description\": \"ok\"}\n{\"id\": \"bad\"}\n",
        )
        .unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(matches!(err, DatasetError::MalformedLine { line: 2, .. }));
    }

    #[test]
    fn efficiency_table_means() {
        use crate::agents::MockAgents;
        use crate::orchestrator::{run_pipeline, PipelineConfig};
        let agents = MockAgents::new();
        let problem = ProblemInstance {
            id: "knapsack".into(),
            description: "A knapsack with weight capacity 60.".into(),
            ground_truth_objective: Some(48.0),
            difficulty: None,
            category: None,
        };
        let record = run_pipeline(&agents, &problem, &PipelineConfig::default());
        let table = efficiency_table(&[("demo", &record)]);
        assert!(table.contains("| demo | 1 |"));
        assert!(
            table.contains("7.0"),
            "mean agent calls should be 7.0: {table}"
        );
        assert_eq!(efficiency_table(&[]), "");
    }
}
