//! Stage-labeled event log shared by the agent layer and the orchestrator.
//! Every agent call appends exactly one event; compile and solve steps append
//! their own, so run records account for calls and tokens exactly.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::llm_gateway::TokenUsage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStage {
    Distill,
    Formulate,
    StruInterp,
    StruEval,
    SolInterp,
    SolEval,
    Refine,
    Compile,
    Solve,
}

impl PipelineStage {
    /// True for stages implemented by an LLM agent (counted as agent calls).
    pub fn is_llm(self) -> bool {
        !matches!(self, PipelineStage::Compile | PipelineStage::Solve)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineStage::Distill => "distill",
            PipelineStage::Formulate => "formulate",
            PipelineStage::StruInterp => "stru_interp",
            PipelineStage::StruEval => "stru_eval",
            PipelineStage::SolInterp => "sol_interp",
            PipelineStage::SolEval => "sol_eval",
            PipelineStage::Refine => "refine",
            PipelineStage::Compile => "compile",
            PipelineStage::Solve => "solve",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEvent {
    pub stage: PipelineStage,
    pub at_unix_ms: u64,
    pub duration_ms: u64,
    pub usage: TokenUsage,
    /// Short digest of the payload (prompt or artifact) for provenance.
    pub payload_digest: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

/// Append-only event log carried through one pipeline run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<StageEvent>,
}

impl EventLog {
    pub fn record(
        &mut self,
        stage: PipelineStage,
        usage: TokenUsage,
        payload: &str,
        note: impl Into<String>,
        duration_ms: u64,
    ) {
        self.events.push(StageEvent {
            stage,
            at_unix_ms: now_unix_ms(),
            duration_ms,
            usage,
            payload_digest: digest16(payload),
            note: note.into(),
        });
    }

    pub fn llm_calls(&self) -> u64 {
        self.events.iter().filter(|e| e.stage.is_llm()).count() as u64
    }

    pub fn usage_pairs(&self) -> impl Iterator<Item = (&str, TokenUsage)> {
        self.events.iter().map(|e| (e.stage.as_str(), e.usage))
    }
}

pub fn now_unix_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// First 16 hex chars of SHA-256; enough to correlate artifacts in reports.
pub fn digest16(payload: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(payload.as_bytes());
    hex::encode(hasher.finalize())[..16].to_string()
}
