//! Optimization-model data model: parameters, decision variables, constraints
//! and a single objective, carried as JSON-round-trippable value types.
//!
//! The canonical JSON document has top-level arrays `parameters`, `variables`,
//! `constraints` and `objective` (an array holding exactly one entry), plus an
//! optional `provenance` tag. Constraint ordering is preserved through
//! serialization so replayed runs produce identical artifacts.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::formula_dsl::{self, DslError, SymbolTable};

/// One dimension of a parameter/variable shape: a fixed extent or a symbolic
/// name resolved against a scalar parameter at binding time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Dim {
    Fixed(usize),
    Symbolic(String),
}

/// Parameter value: scalar, (nested) numeric array, or a marker referencing
/// an external data source bound before grounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Scalar(f64),
    Array(Vec<ParamValue>),
    External { external: String },
}

impl ParamValue {
    pub fn is_external(&self) -> bool {
        matches!(self, ParamValue::External { .. })
    }

    /// Dimensions of a concrete value ([] for scalars).
    pub fn concrete_shape(&self) -> Option<Vec<usize>> {
        match self {
            ParamValue::Scalar(_) => Some(Vec::new()),
            ParamValue::External { .. } => None,
            ParamValue::Array(items) => {
                let mut shape = vec![items.len()];
                if let Some(first) = items.first() {
                    let inner = first.concrete_shape()?;
                    for item in items {
                        if item.concrete_shape()? != inner {
                            return None;
                        }
                    }
                    shape.extend(inner);
                }
                Some(shape)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub symbol: String,
    pub definition: String,
    pub value: ParamValue,
    #[serde(default)]
    pub shape: Vec<Dim>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarType {
    Continuous,
    Integer,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVariable {
    pub symbol: String,
    pub definition: String,
    #[serde(rename = "type")]
    pub var_type: VarType,
    #[serde(default)]
    pub shape: Vec<Dim>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper_bound: Option<f64>,
}

impl DecisionVariable {
    /// Effective bounds: defaults are `[0, +inf)`; binary forces `{0, 1}`.
    pub fn bounds(&self) -> (f64, f64) {
        match self.var_type {
            VarType::Binary => (0.0, 1.0),
            _ => (
                self.lower_bound.unwrap_or(0.0),
                self.upper_bound.unwrap_or(f64::INFINITY),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub description: String,
    pub formulation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub description: String,
    pub formulation: String,
    #[serde(rename = "objective_sense")]
    pub sense: Sense,
}

/// Where a model came from; refinement and perturbation steps are recorded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    LlmFormulated,
    #[default]
    ExternallySupplied,
    Refined {
        step_index: u32,
    },
    Perturbed {
        seed: u64,
        op: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationModel {
    #[serde(default)]
    pub parameters: Vec<Parameter>,
    pub variables: Vec<DecisionVariable>,
    pub constraints: Vec<Constraint>,
    #[serde(with = "objective_array")]
    pub objective: Objective,
    #[serde(default, skip_serializing_if = "is_default_provenance")]
    pub provenance: Provenance,
}

fn is_default_provenance(p: &Provenance) -> bool {
    *p == Provenance::ExternallySupplied
}

/// Canonical documents carry the objective as a one-element array.
mod objective_array {
    use super::Objective;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(obj: &Objective, ser: S) -> Result<S::Ok, S::Error> {
        [obj].serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Objective, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum OneOrMany {
            One(Objective),
            Many(Vec<Objective>),
        }
        match OneOrMany::deserialize(de)? {
            OneOrMany::One(o) => Ok(o),
            OneOrMany::Many(v) if v.len() == 1 => Ok(v.into_iter().next().unwrap()),
            OneOrMany::Many(v) if v.is_empty() => Err(D::Error::custom("objective array is empty")),
            OneOrMany::Many(_) => Err(D::Error::custom("exactly one objective entry is required")),
        }
    }
}

/// A benchmark problem: identifier, natural-language description and optional
/// ground truth used for scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub id: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl std::fmt::Display for Difficulty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Difficulty::Easy => write!(f, "easy"),
            Difficulty::Medium => write!(f, "medium"),
            Difficulty::Hard => write!(f, "hard"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    UndeclaredSymbol,
    DuplicateSymbol,
    ShapeMismatch,
    BadBounds,
    ParseError,
    NoObjective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
}

/// Violations are data, not failures: an empty list means the model is valid.
/// Warnings carry non-fatal drift such as naming-convention breaches.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn violation(&mut self, code: ViolationCode, message: impl Into<String>) {
        self.violations.push(Violation {
            code,
            message: message.into(),
        });
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelJsonError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("schema error at {path}: missing or invalid key '{key}'")]
    SchemaError { key: String, path: String },
}

impl OptimizationModel {
    /// Symbol table over this model's declared parameters and variables.
    pub fn symbol_table(&self) -> SymbolTable {
        SymbolTable::new(
            self.parameters.iter().map(|p| p.symbol.clone()),
            self.variables.iter().map(|v| v.symbol.clone()),
        )
    }

    /// Canonical JSON rendering; stable ordering for digests and equality.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn find_parameter(&self, symbol: &str) -> Option<&Parameter> {
        self.parameters.iter().find(|p| p.symbol == symbol)
    }

    pub fn find_variable(&self, symbol: &str) -> Option<&DecisionVariable> {
        self.variables.iter().find(|v| v.symbol == symbol)
    }

    pub fn has_external_parameters(&self) -> bool {
        self.parameters.iter().any(|p| p.value.is_external())
            || self
                .parameters
                .iter()
                .any(|p| p.shape.iter().any(|d| matches!(d, Dim::Symbolic(_))))
    }
}

/// Parse the canonical model JSON. Unknown top-level keys are ignored and a
/// missing `parameters` array is treated as empty.
pub fn parse_model_json(text: &str) -> Result<OptimizationModel, ModelJsonError> {
    parse_model_json_with_warnings(text).map(|(model, _)| model)
}

/// As [`parse_model_json`], also reporting tolerated drift: unknown
/// top-level keys and a missing `parameters` array.
pub fn parse_model_json_with_warnings(
    text: &str,
) -> Result<(OptimizationModel, Vec<String>), ModelJsonError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| ModelJsonError::MalformedJson(e.to_string()))?;
    let model = model_from_value(&value)?;
    let mut warnings = Vec::new();
    if let Some(obj) = value.as_object() {
        for key in obj.keys() {
            if !matches!(
                key.as_str(),
                "parameters" | "variables" | "constraints" | "objective" | "provenance"
            ) {
                warnings.push(format!("unknown top-level key '{key}' ignored"));
            }
        }
        if !obj.contains_key("parameters") {
            warnings.push("no 'parameters' array; treated as empty".into());
        }
    }
    Ok((model, warnings))
}

/// Build a model from an already-parsed JSON value.
pub fn model_from_value(value: &Value) -> Result<OptimizationModel, ModelJsonError> {
    let obj = value
        .as_object()
        .ok_or_else(|| ModelJsonError::SchemaError {
            key: "(document)".into(),
            path: "$".into(),
        })?;
    for key in ["variables", "constraints", "objective"] {
        if !obj.contains_key(key) {
            return Err(ModelJsonError::SchemaError {
                key: key.into(),
                path: "$".into(),
            });
        }
    }
    serde_json::from_value(value.clone()).map_err(|e| {
        let msg = e.to_string();
        // Attribute the failure to the nearest known key for actionable errors.
        let key = [
            "parameters",
            "variables",
            "constraints",
            "objective",
            "provenance",
        ]
        .iter()
        .find(|k| msg.contains(*k))
        .map(|k| k.to_string())
        .unwrap_or_else(|| msg.clone());
        ModelJsonError::SchemaError {
            key,
            path: "$".into(),
        }
    })
}

/// CamelCase-without-indices naming convention for variable symbols.
fn is_camel_case(symbol: &str) -> bool {
    let mut chars = symbol.chars();
    match chars.next() {
        Some(c) if c.is_ascii_uppercase() => {}
        _ => return false,
    }
    symbol.chars().all(|c| c.is_ascii_alphanumeric())
}

/// Validate a model against the schema rules. Violations are returned as
/// data; the model is valid iff the list is empty.
pub fn validate_model(model: &OptimizationModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    let symbols = model.symbol_table();

    // Namespace is shared between parameters and variables.
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for symbol in model
        .parameters
        .iter()
        .map(|p| p.symbol.as_str())
        .chain(model.variables.iter().map(|v| v.symbol.as_str()))
    {
        if !seen.insert(symbol) {
            report.violation(
                ViolationCode::DuplicateSymbol,
                format!("symbol '{symbol}' is declared more than once"),
            );
        }
    }

    for param in &model.parameters {
        if let Some(actual) = param.value.concrete_shape() {
            let declared: Option<Vec<usize>> = param
                .shape
                .iter()
                .map(|d| match d {
                    Dim::Fixed(n) => Some(*n),
                    Dim::Symbolic(_) => None,
                })
                .collect();
            if let Some(declared) = declared {
                if declared != actual {
                    report.violation(
                        ViolationCode::ShapeMismatch,
                        format!(
                            "parameter '{}' declares shape {:?} but its value has shape {:?}",
                            param.symbol, declared, actual
                        ),
                    );
                }
            }
        } else if !param.value.is_external() {
            report.violation(
                ViolationCode::ShapeMismatch,
                format!("parameter '{}' has a ragged array value", param.symbol),
            );
        }
    }

    for var in &model.variables {
        if !is_camel_case(&var.symbol) {
            report.warnings.push(format!(
                "variable '{}' does not follow the CamelCase-without-indices convention",
                var.symbol
            ));
        }
        let (lower, upper) = var.bounds();
        if lower > upper {
            report.violation(
                ViolationCode::BadBounds,
                format!(
                    "variable '{}' has lower bound {lower} > upper bound {upper}",
                    var.symbol
                ),
            );
        }
        if var.var_type == VarType::Binary {
            if let (Some(lb), Some(ub)) = (var.lower_bound, var.upper_bound) {
                if lb != 0.0 || ub != 1.0 {
                    report.violation(
                        ViolationCode::BadBounds,
                        format!("binary variable '{}' must have bounds [0, 1]", var.symbol),
                    );
                }
            }
        }
    }

    let check_formulation = |what: &str, text: &str, report: &mut ValidationReport| {
        match formula_dsl::parse_constraint(text, &symbols) {
            Ok(_) => {}
            Err(DslError::UndeclaredSymbol { symbol, .. }) => report.violation(
                ViolationCode::UndeclaredSymbol,
                format!("{what} references undeclared symbol '{symbol}'"),
            ),
            Err(e) => report.violation(ViolationCode::ParseError, format!("{what}: {e}")),
        }
    };

    for constraint in &model.constraints {
        check_formulation(
            &format!("constraint '{}'", constraint.name),
            &constraint.formulation,
            &mut report,
        );
    }

    if model.objective.formulation.trim().is_empty() {
        report.violation(ViolationCode::NoObjective, "objective formulation is empty");
    } else {
        match formula_dsl::parse_expression(&model.objective.formulation, &symbols) {
            Ok(_) => {}
            Err(DslError::UndeclaredSymbol { symbol, .. }) => report.violation(
                ViolationCode::UndeclaredSymbol,
                format!("objective references undeclared symbol '{symbol}'"),
            ),
            Err(e) => report.violation(ViolationCode::ParseError, format!("objective: {e}")),
        }
    }

    report
}

/// Union of symbols referenced by constraint and objective formulations,
/// excluding bound indices. Formulations must parse.
pub fn free_symbols(model: &OptimizationModel) -> Result<BTreeSet<String>, DslError> {
    let symbols = model.symbol_table();
    let mut out = BTreeSet::new();
    for constraint in &model.constraints {
        let ast = formula_dsl::parse_constraint(&constraint.formulation, &symbols)?;
        ast.collect_symbols(&mut out);
    }
    let obj = formula_dsl::parse_expression(&model.objective.formulation, &symbols)?;
    obj.collect_symbols(&mut out);
    Ok(out)
}
