//! Verification engine for LLM-driven optimization modeling.
//!
//! The pipeline distills a multi-level modeling structure from a
//! natural-language problem description, formulates a structured MILP model,
//! verifies it from the structure side (back-translation plus consistency
//! check) and the solution side (solve, interpret, critique validity), and
//! refines the model until both checks accept. A deterministic compiler,
//! solver and feasibility core plus a record/replay LLM gateway make every
//! pipeline behavior testable offline.
//!
//! Modules:
//! - [`model_ir`]: the optimization-model data model and validation
//! - [`formula_dsl`]: grammar, parser and canonical printer for formulations
//! - [`structure_schema`]: the multi-level modeling structure and its diff
//! - [`llm_gateway`]: chat-completion access with record/replay cassettes
//! - [`agents`]: the agent operations with shipped prompt templates and mocks
//! - [`compile_solve`]: grounding, LP emission, solving, feasibility checking
//! - [`orchestrator`]: the end-to-end pipeline state machine
//! - [`evalbench`]: benchmark harness, perturbation and verifier studies

pub mod agents;
pub mod compile_solve;
pub mod evalbench;
pub mod formula_dsl;
pub mod llm_gateway;
pub mod model_ir;
pub mod orchestrator;
pub mod scalar;
pub mod structure_schema;
pub mod trace;

pub use scalar::Scalar;

/// Grounded model over `f64`, the pipeline default.
pub type GroundedModel = compile_solve::GroundedModelOf<f64>;
/// Solver solution over `f64`.
pub type Solution = compile_solve::SolutionOf<f64>;
/// Feasibility report over `f64`.
pub type FeasibilityReport = compile_solve::FeasibilityReportOf<f64>;
/// Feasibility tolerances over `f64`.
pub type Tolerances = compile_solve::TolerancesOf<f64>;
