//! The agent operations: structure distillation, two-phase formulation,
//! structure interpretation and consistency evaluation, solution
//! interpretation and validity evaluation, and refinement — implemented over
//! the chat gateway with the shipped prompt templates, plus a deterministic
//! rule-based suite for offline tests.

mod base_lib;
mod mock;
pub mod templates;

pub use base_lib::base_formulation_for;
pub use mock::{mock_structure_of_model, MockAgents};
pub use templates::{PromptSet, PromptTemplate, TemplateSet, TemplateStage};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::compile_solve::{FeasibilityReportOf, SolutionOf};
use crate::llm_gateway::{
    extract_json_block, ChatMessage, ChatRequest, Gateway, GatewayError, TokenUsage,
};
use crate::model_ir::{
    model_from_value, validate_model, OptimizationModel, Parameter, ProblemInstance, Provenance,
};
use crate::scalar::Scalar;
use crate::structure_schema::{structure_from_value, ModelingStructure, StructureProvenance};
use crate::trace::{EventLog, PipelineStage};

/// Binary verdict from an evaluator: score 1 means accepted, and the comment
/// is empty exactly then; score 0 carries the critique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub score: u8,
    pub comment: String,
}

impl Verdict {
    pub fn yes() -> Self {
        Verdict {
            score: 1,
            comment: String::new(),
        }
    }

    pub fn no(comment: impl Into<String>) -> Self {
        let mut comment: String = comment.into();
        if comment.trim().is_empty() {
            comment = "(evaluator returned no critique)".into();
        }
        Verdict { score: 0, comment }
    }

    pub fn accepted(&self) -> bool {
        self.score == 1
    }
}

/// Natural-language interpretation of a numeric solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionNarrative {
    pub text: String,
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("agent output invalid at stage {stage}: {detail}")]
    OutputInvalid { stage: &'static str, detail: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Yes-token protocol: score 1 iff the reply's first whitespace-delimited
/// token, stripped of trailing punctuation, is case-insensitively "yes".
pub fn score_reply(reply: &str) -> Verdict {
    let token = reply.split_whitespace().next().unwrap_or("");
    let token = token.trim_end_matches(|c: char| !c.is_ascii_alphanumeric());
    if token.eq_ignore_ascii_case("yes") {
        Verdict::yes()
    } else {
        Verdict::no(reply.trim())
    }
}

/// The seven agent operations. Implementations append one stage-labeled
/// event to the log per underlying call (formulation makes two calls: the
/// parameter phase and the model phase).
pub trait AgentSuite: Send + Sync {
    fn distill(
        &self,
        problem: &ProblemInstance,
        log: &mut EventLog,
    ) -> Result<ModelingStructure, AgentError>;

    fn formulate(
        &self,
        problem: &ProblemInstance,
        structure: &ModelingStructure,
        log: &mut EventLog,
    ) -> Result<OptimizationModel, AgentError>;

    fn interpret_structure(
        &self,
        model: &OptimizationModel,
        log: &mut EventLog,
    ) -> Result<ModelingStructure, AgentError>;

    fn evaluate_structure(
        &self,
        reference: &ModelingStructure,
        candidate: &ModelingStructure,
        model: &OptimizationModel,
        log: &mut EventLog,
    ) -> Result<Verdict, AgentError>;

    fn interpret_solution(
        &self,
        problem: &ProblemInstance,
        model: &OptimizationModel,
        structure: &ModelingStructure,
        solution: &SolutionOf<f64>,
        log: &mut EventLog,
    ) -> Result<SolutionNarrative, AgentError>;

    #[allow(clippy::too_many_arguments)]
    fn evaluate_solution(
        &self,
        problem: &ProblemInstance,
        model: &OptimizationModel,
        structure: &ModelingStructure,
        solution: &SolutionOf<f64>,
        narrative: &SolutionNarrative,
        feasibility: &FeasibilityReportOf<f64>,
        log: &mut EventLog,
    ) -> Result<Verdict, AgentError>;

    fn refine(
        &self,
        problem: &ProblemInstance,
        structure: &ModelingStructure,
        model: &OptimizationModel,
        comment: &str,
        log: &mut EventLog,
    ) -> Result<OptimizationModel, AgentError>;
}

/// Agent configuration for the LLM-backed suite.
#[derive(Debug, Clone)]
pub struct LlmAgentConfig {
    pub model_name: String,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub prompt_set: PromptSet,
}

impl Default for LlmAgentConfig {
    fn default() -> Self {
        LlmAgentConfig {
            model_name: "gpt-4o-mini".into(),
            temperature: 0.0,
            seed: None,
            prompt_set: PromptSet::Dsl,
        }
    }
}

/// Template-driven agents over a chat gateway (live, replay or scripted).
pub struct LlmAgents<'g> {
    gateway: &'g Gateway,
    templates: TemplateSet,
    config: LlmAgentConfig,
}

impl<'g> LlmAgents<'g> {
    pub fn new(gateway: &'g Gateway, config: LlmAgentConfig) -> Self {
        LlmAgents {
            gateway,
            templates: TemplateSet::load(config.prompt_set),
            config,
        }
    }

    fn call(
        &self,
        stage: PipelineStage,
        messages: &[ChatMessage],
        log: &mut EventLog,
    ) -> Result<String, AgentError> {
        let started = std::time::Instant::now();
        let request = ChatRequest {
            model_name: self.config.model_name.clone(),
            messages: messages.to_vec(),
            temperature: self.config.temperature,
            seed: self.config.seed,
        };
        let response = self.gateway.complete(&request)?;
        let prompt_payload: String = messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        log.record(
            stage,
            response.usage,
            &prompt_payload,
            "",
            started.elapsed().as_millis() as u64,
        );
        Ok(response.content)
    }

    /// One automatic re-ask with the failure appended before giving up.
    fn call_with_repair<T>(
        &self,
        stage: PipelineStage,
        stage_name: &'static str,
        mut messages: Vec<ChatMessage>,
        log: &mut EventLog,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, AgentError> {
        let reply = self.call(stage, &messages, log)?;
        match parse(&reply) {
            Ok(value) => Ok(value),
            Err(first_failure) => {
                messages.push(ChatMessage::assistant(reply));
                messages.push(ChatMessage::user(format!(
                    "Your reply could not be used: {first_failure}\n\
                     Please answer again with a complete, corrected response in the requested format."
                )));
                let retry = self.call(stage, &messages, log)?;
                parse(&retry).map_err(|detail| AgentError::OutputInvalid {
                    stage: stage_name,
                    detail,
                })
            }
        }
    }

    fn vars(&self) -> BTreeMap<&'static str, String> {
        let mut vars = BTreeMap::new();
        vars.insert("grammar", crate::formula_dsl::GRAMMAR.to_string());
        vars.insert("model_schema", templates::MODEL_SCHEMA_BLOCK.to_string());
        vars
    }
}

fn render_structure(structure: &ModelingStructure) -> String {
    structure.to_json()
}

fn render_parameters(parameters: &[Parameter]) -> String {
    serde_json::to_string_pretty(parameters).expect("parameters always serialize")
}

fn render_model(model: &OptimizationModel) -> String {
    model.to_canonical_json()
}

/// Plain-text rendering of a solution for the interpretation prompt:
/// status, objective and the nonzero assignments.
pub fn render_solution<S: Scalar>(solution: &SolutionOf<S>) -> String {
    let mut out = format!("status: {}", solution.status);
    if let Some(objective) = solution.objective_value {
        out.push_str(&format!("\nobjective value: {objective}"));
    }
    let mut nonzero = 0usize;
    for (name, value) in &solution.assignment {
        if *value != S::zero() {
            out.push_str(&format!("\n{name} = {value}"));
            nonzero += 1;
        }
    }
    let zeros = solution.assignment.len() - nonzero;
    if zeros > 0 {
        out.push_str(&format!("\n(all other {zeros} variables are 0)"));
    }
    out
}

fn parse_structure_reply(
    reply: &str,
    provenance: StructureProvenance,
) -> Result<ModelingStructure, String> {
    let value = extract_json_block(reply).map_err(|e| e.to_string())?;
    let mut structure = structure_from_value(&value).map_err(|e| e.to_string())?;
    structure.provenance = provenance;
    Ok(structure)
}

fn parse_model_reply(
    reply: &str,
    parameters_fallback: &[Parameter],
) -> Result<OptimizationModel, String> {
    let value = extract_json_block(reply).map_err(|e| e.to_string())?;
    let mut model = model_from_value(&value).map_err(|e| e.to_string())?;
    if model.parameters.is_empty() && !parameters_fallback.is_empty() {
        model.parameters = parameters_fallback.to_vec();
    }
    let report = validate_model(&model);
    if !report.is_valid() {
        let details: Vec<String> = report
            .violations
            .iter()
            .map(|v| format!("{:?}: {}", v.code, v.message))
            .collect();
        return Err(format!(
            "the model failed validation: {}",
            details.join("; ")
        ));
    }
    Ok(model)
}

impl AgentSuite for LlmAgents<'_> {
    fn distill(
        &self,
        problem: &ProblemInstance,
        log: &mut EventLog,
    ) -> Result<ModelingStructure, AgentError> {
        if problem.description.trim().is_empty() {
            return Err(AgentError::Precondition(
                "problem description is empty".into(),
            ));
        }
        let mut vars = self.vars();
        vars.insert("problem", problem.description.clone());
        vars.insert(
            "base_formulation",
            base_formulation_for(&problem.description)
                .unwrap_or("none available")
                .to_string(),
        );
        let messages = self.templates.get(TemplateStage::Distill).render(&vars);
        self.call_with_repair(PipelineStage::Distill, "distill", messages, log, |reply| {
            parse_structure_reply(reply, StructureProvenance::DistilledFromDescription)
        })
    }

    fn formulate(
        &self,
        problem: &ProblemInstance,
        structure: &ModelingStructure,
        log: &mut EventLog,
    ) -> Result<OptimizationModel, AgentError> {
        // Phase 1: parameter extraction.
        let mut vars = self.vars();
        vars.insert("problem", problem.description.clone());
        let messages = self
            .templates
            .get(TemplateStage::FormulateParams)
            .render(&vars);
        let parameters = self.call_with_repair(
            PipelineStage::Formulate,
            "formulate",
            messages,
            log,
            |reply| {
                let value = extract_json_block(reply).map_err(|e| e.to_string())?;
                let array = value
                    .get("parameters")
                    .cloned()
                    .unwrap_or_else(|| value.clone());
                serde_json::from_value::<Vec<Parameter>>(array).map_err(|e| e.to_string())
            },
        )?;

        // Phase 2: full model with the structure and a base formulation.
        let keyword_source = format!(
            "{} {} {}",
            problem.description, structure.problem_type, structure.specific_type
        );
        let mut vars = self.vars();
        vars.insert("problem", problem.description.clone());
        vars.insert("problem_type", structure.problem_type.clone());
        vars.insert("structure", render_structure(structure));
        vars.insert(
            "base_formulation",
            base_formulation_for(&keyword_source)
                .unwrap_or("none available")
                .to_string(),
        );
        let messages = self
            .templates
            .get(TemplateStage::FormulateModel)
            .render(&vars);
        let mut model = self.call_with_repair(
            PipelineStage::Formulate,
            "formulate",
            messages,
            log,
            |reply| parse_model_reply(reply, &parameters),
        )?;
        model.provenance = Provenance::LlmFormulated;
        Ok(model)
    }

    fn interpret_structure(
        &self,
        model: &OptimizationModel,
        log: &mut EventLog,
    ) -> Result<ModelingStructure, AgentError> {
        let mut vars = self.vars();
        vars.insert("parameters", render_parameters(&model.parameters));
        vars.insert("model", render_model(model));
        let messages = self.templates.get(TemplateStage::StruInterp).render(&vars);
        self.call_with_repair(
            PipelineStage::StruInterp,
            "stru_interp",
            messages,
            log,
            |reply| parse_structure_reply(reply, StructureProvenance::InterpretedFromModel),
        )
    }

    fn evaluate_structure(
        &self,
        reference: &ModelingStructure,
        candidate: &ModelingStructure,
        model: &OptimizationModel,
        log: &mut EventLog,
    ) -> Result<Verdict, AgentError> {
        let mut vars = self.vars();
        vars.insert("problem_type", reference.problem_type.clone());
        vars.insert("parameters", render_parameters(&model.parameters));
        vars.insert("formulation_interpretation", render_structure(candidate));
        vars.insert(
            "original_problem_interpretation",
            render_structure(reference),
        );
        let messages = self.templates.get(TemplateStage::StruEval).render(&vars);
        let reply = self.call(PipelineStage::StruEval, &messages, log)?;
        Ok(score_reply(&reply))
    }

    fn interpret_solution(
        &self,
        problem: &ProblemInstance,
        model: &OptimizationModel,
        structure: &ModelingStructure,
        solution: &SolutionOf<f64>,
        log: &mut EventLog,
    ) -> Result<SolutionNarrative, AgentError> {
        if !solution.status.has_assignment() {
            return Err(AgentError::Precondition(format!(
                "solution status is {}; interpretation needs an optimal or feasible solution",
                solution.status
            )));
        }
        let _ = problem;
        let mut vars = self.vars();
        vars.insert("problem_type", structure.problem_type.clone());
        vars.insert("solutions", render_solution(solution));
        vars.insert("formulation_interpretation", render_model(model));
        let messages = self.templates.get(TemplateStage::SolInterp).render(&vars);
        self.call_with_repair(
            PipelineStage::SolInterp,
            "sol_interp",
            messages,
            log,
            |reply| {
                let trimmed = reply.trim();
                if trimmed.is_empty() {
                    Err("the interpretation reply was empty".into())
                } else {
                    Ok(SolutionNarrative {
                        text: trimmed.to_string(),
                    })
                }
            },
        )
    }

    fn evaluate_solution(
        &self,
        problem: &ProblemInstance,
        model: &OptimizationModel,
        structure: &ModelingStructure,
        solution: &SolutionOf<f64>,
        narrative: &SolutionNarrative,
        feasibility: &FeasibilityReportOf<f64>,
        log: &mut EventLog,
    ) -> Result<Verdict, AgentError> {
        let mut vars = self.vars();
        vars.insert("problem_type", structure.problem_type.clone());
        vars.insert("solutions", render_solution(solution));
        vars.insert("formulation_interpretation", render_model(model));
        vars.insert("narrative", narrative.text.clone());
        vars.insert(
            "original_problem_interpretation",
            problem.description.clone(),
        );
        vars.insert("feasibility_report", feasibility.render());
        let messages = self.templates.get(TemplateStage::SolEval).render(&vars);
        let reply = self.call(PipelineStage::SolEval, &messages, log)?;
        Ok(score_reply(&reply))
    }

    fn refine(
        &self,
        problem: &ProblemInstance,
        structure: &ModelingStructure,
        model: &OptimizationModel,
        comment: &str,
        log: &mut EventLog,
    ) -> Result<OptimizationModel, AgentError> {
        if comment.trim().is_empty() {
            return Err(AgentError::Precondition(
                "refinement comment is empty".into(),
            ));
        }
        let mut vars = self.vars();
        vars.insert("problem", problem.description.clone());
        vars.insert("problem_type", structure.problem_type.clone());
        vars.insert("structure", render_structure(structure));
        vars.insert("model", render_model(model));
        vars.insert("comment", comment.to_string());
        let messages = self.templates.get(TemplateStage::Refine).render(&vars);
        let parameters = model.parameters.clone();
        self.call_with_repair(
            PipelineStage::Refine,
            "refine",
            messages,
            log,
            move |reply| parse_model_reply(reply, &parameters),
        )
    }
}

/// Estimated usage for deterministic offline agents.
pub(crate) fn synthetic_usage(prompt: &str, completion: &str) -> TokenUsage {
    TokenUsage::estimate(prompt.len(), completion.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yes_token_protocol() {
        assert!(score_reply("Yes").accepted());
        assert!(score_reply("yes.").accepted());
        assert!(score_reply("  YES, this is consistent").accepted());
        assert!(!score_reply("Yesterday I checked").accepted());
        assert!(!score_reply("No, the model misses a constraint").accepted());
        assert!(!score_reply("").accepted());
        let verdict = score_reply("The model is missing flow conservation.");
        assert_eq!(verdict.score, 0);
        assert_eq!(verdict.comment, "The model is missing flow conservation.");
    }

    #[test]
    fn empty_reply_scores_zero_with_placeholder_comment() {
        let verdict = score_reply("   ");
        assert_eq!(verdict.score, 0);
        assert!(!verdict.comment.is_empty());
    }

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// score == 1 exactly when the normalized first token is "yes".
            #[test]
            fn yes_iff_first_token_yes(reply in "[A-Za-z,\\.! ]{0,40}") {
                let verdict = score_reply(&reply);
                let first = reply
                    .split_whitespace()
                    .next()
                    .unwrap_or("")
                    .trim_end_matches(|c: char| !c.is_ascii_alphanumeric())
                    .to_ascii_lowercase();
                prop_assert_eq!(verdict.accepted(), first == "yes");
            }
        }
    }
}
