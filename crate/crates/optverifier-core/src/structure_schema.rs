//! The multi-level modeling structure: problem type (high level), specific
//! type (medium level), and named subdivisions/implicit constraints (low
//! level), plus a deterministic diff used for reporting and mock evaluation.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Whether a structure came from the problem description or was read back
/// off a formulated model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureProvenance {
    DistilledFromDescription,
    InterpretedFromModel,
}

/// Multi-level modeling structure. Key order of the low-level maps is
/// preserved through serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelingStructure {
    pub problem_type: String,
    pub specific_type: String,
    #[serde(default)]
    pub subdivisions: IndexMap<String, String>,
    #[serde(default)]
    pub implicit_constraints: IndexMap<String, String>,
    #[serde(
        default = "default_structure_provenance",
        skip_serializing_if = "is_distilled"
    )]
    pub provenance: StructureProvenance,
}

fn default_structure_provenance() -> StructureProvenance {
    StructureProvenance::DistilledFromDescription
}

fn is_distilled(p: &StructureProvenance) -> bool {
    *p == StructureProvenance::DistilledFromDescription
}

#[derive(Debug, thiserror::Error)]
pub enum StructureJsonError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("schema error: missing or invalid key '{key}'")]
    SchemaError { key: String },
}

/// Parse a structure JSON object. `subdivisions` and `implicit_constraints`
/// may be absent or empty; map values are coerced to strings so number- or
/// list-valued drift from model output still loads.
pub fn parse_structure(text: &str) -> Result<ModelingStructure, StructureJsonError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| StructureJsonError::MalformedJson(e.to_string()))?;
    structure_from_value(&value)
}

pub fn structure_from_value(value: &Value) -> Result<ModelingStructure, StructureJsonError> {
    let obj = value
        .as_object()
        .ok_or_else(|| StructureJsonError::SchemaError {
            key: "(document)".into(),
        })?;
    let field = |key: &str| -> Result<String, StructureJsonError> {
        match obj.get(key) {
            Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
            _ => Err(StructureJsonError::SchemaError { key: key.into() }),
        }
    };
    let map_field = |key: &str| -> Result<IndexMap<String, String>, StructureJsonError> {
        match obj.get(key) {
            None | Some(Value::Null) => Ok(IndexMap::new()),
            Some(Value::Object(m)) => Ok(m
                .iter()
                .map(|(k, v)| {
                    let text = match v {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    };
                    (k.clone(), text)
                })
                .collect()),
            Some(_) => Err(StructureJsonError::SchemaError { key: key.into() }),
        }
    };
    Ok(ModelingStructure {
        problem_type: field("problem_type")?,
        specific_type: field("specific_type")?,
        subdivisions: map_field("subdivisions")?,
        implicit_constraints: map_field("implicit_constraints")?,
        provenance: StructureProvenance::DistilledFromDescription,
    })
}

impl ModelingStructure {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("structure serialization cannot fail")
    }
}

/// Deterministic comparison of two structures. Low-level entries are the
/// `implicit_constraints` keys; matching is case-insensitive word-set
/// (Jaccard) overlap at threshold 0.5, intentionally strict so the diff
/// reports differences and the evaluating agent handles paraphrase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureDiff {
    pub missing_low_level: Vec<String>,
    pub extra_low_level: Vec<String>,
    /// Set per level when the high (problem_type) or medium (specific_type)
    /// descriptions fail to match: (reference, candidate).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub high_level_mismatch: Option<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub medium_level_mismatch: Option<(String, String)>,
    pub similarity: f64,
}

impl StructureDiff {
    pub fn is_identical(&self) -> bool {
        self.similarity == 1.0
    }

    /// Compact human-readable rendering used as evaluator feedback.
    pub fn render(&self) -> String {
        if self.is_identical() {
            return "structures are consistent".into();
        }
        let mut parts = Vec::new();
        if let Some((reference, candidate)) = &self.high_level_mismatch {
            parts.push(format!(
                "problem type differs: expected '{reference}', found '{candidate}'"
            ));
        }
        if let Some((reference, candidate)) = &self.medium_level_mismatch {
            parts.push(format!(
                "specific type differs: expected '{reference}', found '{candidate}'"
            ));
        }
        if !self.missing_low_level.is_empty() {
            parts.push(format!(
                "missing low-level entries: {}",
                self.missing_low_level.join(", ")
            ));
        }
        if !self.extra_low_level.is_empty() {
            parts.push(format!(
                "extra low-level entries: {}",
                self.extra_low_level.join(", ")
            ));
        }
        parts.push(format!("similarity {:.3}", self.similarity));
        parts.join("; ")
    }
}

fn word_set(text: &str) -> std::collections::BTreeSet<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_ascii_lowercase())
        .collect()
}

/// Jaccard similarity over lowercase word sets.
fn jaccard(a: &str, b: &str) -> f64 {
    let sa = word_set(a);
    let sb = word_set(b);
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count() as f64;
    let union = sa.union(&sb).count() as f64;
    inter / union
}

fn names_match(a: &str, b: &str) -> bool {
    jaccard(a, b) >= 0.5
}

/// Diff `candidate` against `reference`. Similarity is the matched low-level
/// fraction, scaled by level agreement (1.0 both levels match, 0.5 one
/// mismatch, 0.0 both), so 1.0 holds exactly when nothing differs.
pub fn structure_diff(
    reference: &ModelingStructure,
    candidate: &ModelingStructure,
) -> StructureDiff {
    let ref_names: Vec<&String> = reference.implicit_constraints.keys().collect();
    let cand_names: Vec<&String> = candidate.implicit_constraints.keys().collect();

    let mut cand_matched = vec![false; cand_names.len()];
    let mut missing = Vec::new();
    let mut matched_count = 0usize;
    for name in &ref_names {
        let mut found = false;
        for (j, cand) in cand_names.iter().enumerate() {
            if !cand_matched[j] && names_match(name, cand) {
                cand_matched[j] = true;
                found = true;
                break;
            }
        }
        if found {
            matched_count += 1;
        } else {
            missing.push((*name).clone());
        }
    }
    let extra: Vec<String> = cand_names
        .iter()
        .zip(&cand_matched)
        .filter(|(_, matched)| !**matched)
        .map(|(name, _)| (*name).clone())
        .collect();

    let high_mismatch = if names_match(&reference.problem_type, &candidate.problem_type) {
        None
    } else {
        Some((
            reference.problem_type.clone(),
            candidate.problem_type.clone(),
        ))
    };
    let medium_mismatch = if names_match(&reference.specific_type, &candidate.specific_type) {
        None
    } else {
        Some((
            reference.specific_type.clone(),
            candidate.specific_type.clone(),
        ))
    };

    let denom = ref_names.len().max(cand_names.len()).max(1) as f64;
    let base = matched_count as f64 / denom;
    let level_factor = match (&high_mismatch, &medium_mismatch) {
        (None, None) => 1.0,
        (Some(_), Some(_)) => 0.0,
        _ => 0.5,
    };
    StructureDiff {
        missing_low_level: missing,
        extra_low_level: extra,
        high_level_mismatch: high_mismatch,
        medium_level_mismatch: medium_mismatch,
        similarity: base * level_factor,
    }
}
