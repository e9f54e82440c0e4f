//! Deterministic grounding of an optimization model into flat linear rows,
//! LP-file emission, solver execution (external subprocess or the built-in
//! enumeration oracle), feasibility checking, and toy instantiation for
//! parameterized models.
//!
//! Everything here is generic over the [`Scalar`] type; the crate root
//! exports `f64` aliases used by the pipeline.

mod brute;
mod external_data;
mod feasibility;
mod ground;
mod lp;
mod solve;
mod toy;

pub use brute::{brute_force_solve, BruteForceConfig};
pub use external_data::{load_external_parameters, ExternalDataError};
pub use feasibility::check_feasibility;
pub use ground::{ground, Bindings, GroundError};
pub use lp::{emit_lp, LpError};
pub use solve::{
    autodetect_external, solve, ExternalSolverConfig, SolutionFileFormat, SolveError, SolverBackend,
};
pub use toy::{instantiate_toy, ToyError};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::formula_dsl::Relop;
use crate::model_ir::{Sense, VarType};
use crate::scalar::Scalar;

/// A flattened decision variable with resolved bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatVar<S: Scalar> {
    pub name: String,
    pub var_type: VarType,
    pub lower: S,
    pub upper: S,
}

/// One linear row: sparse coefficients over flat-variable indices, a
/// non-strict relation and a finite right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct Row<S: Scalar> {
    pub name: String,
    pub coeffs: Vec<(usize, S)>,
    pub relop: Relop,
    pub rhs: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundedObjective<S: Scalar> {
    pub sense: Sense,
    pub coeffs: Vec<(usize, S)>,
    pub constant: S,
}

/// Fully expanded model: flat variables, affine rows, linear objective.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedModelOf<S: Scalar> {
    pub variables: Vec<FlatVar<S>>,
    pub rows: Vec<Row<S>>,
    pub objective: GroundedObjective<S>,
    /// Non-fatal notes: empty index sets, tautological rows dropped.
    pub warnings: Vec<String>,
}

impl<S: Scalar> GroundedModelOf<S> {
    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Evaluate the objective at an assignment in flat-variable order.
    pub fn objective_at(&self, values: &[S]) -> S {
        let mut total = self.objective.constant;
        for &(var, coeff) in &self.objective.coeffs {
            total = total + coeff * values[var];
        }
        total
    }

    pub fn row_activity(&self, row: &Row<S>, values: &[S]) -> S {
        let mut total = S::zero();
        for &(var, coeff) in &row.coeffs {
            total = total + coeff * values[var];
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    Optimal,
    Feasible,
    Infeasible,
    Unbounded,
    Error,
}

impl SolveStatus {
    pub fn has_assignment(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::Feasible)
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Feasible => "feasible",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::Error => "error",
        };
        write!(f, "{s}")
    }
}

/// Solver output: status, assignment over flat variables, objective value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionOf<S: Scalar> {
    pub status: SolveStatus,
    pub assignment: BTreeMap<String, S>,
    pub objective_value: Option<S>,
    pub solver_id: String,
    pub wall_time_seconds: f64,
}

impl<S: Scalar> SolutionOf<S> {
    pub fn status_only(status: SolveStatus, solver_id: impl Into<String>) -> Self {
        SolutionOf {
            status,
            assignment: BTreeMap::new(),
            objective_value: None,
            solver_id: solver_id.into(),
            wall_time_seconds: 0.0,
        }
    }
}

/// Feasibility tolerances. A row is violated when the infeasibility exceeds
/// `max(abs_tol, rel_tol * |rhs|)`; integrality uses `int_tol` directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TolerancesOf<S: Scalar> {
    pub abs_tol: S,
    pub rel_tol: S,
    pub int_tol: S,
}

impl<S: Scalar> Default for TolerancesOf<S> {
    fn default() -> Self {
        TolerancesOf {
            abs_tol: S::from_f64_lossy(1e-6),
            rel_tol: S::from_f64_lossy(1e-6),
            int_tol: S::from_f64_lossy(1e-5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowViolation<S: Scalar> {
    pub row: String,
    pub lhs_value: S,
    pub relop: Relop,
    pub rhs: S,
    pub magnitude: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralityViolation<S: Scalar> {
    pub variable: String,
    pub value: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation<S: Scalar> {
    pub variable: String,
    pub value: S,
    pub lower: S,
    pub upper: S,
    pub magnitude: S,
}

/// Deterministic feasibility verdict for a solution against a grounded model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReportOf<S: Scalar> {
    pub violated_rows: Vec<RowViolation<S>>,
    pub integrality_violations: Vec<IntegralityViolation<S>>,
    pub bound_violations: Vec<BoundViolation<S>>,
    pub feasible: bool,
    pub objective_recomputed: S,
}

impl<S: Scalar> FeasibilityReportOf<S> {
    /// Human-readable rendering appended to solution-evaluation prompts.
    pub fn render(&self) -> String {
        if self.feasible {
            return format!(
                "all constraints satisfied; recomputed objective {}",
                self.objective_recomputed
            );
        }
        let mut parts = Vec::new();
        for v in &self.violated_rows {
            parts.push(format!(
                "row {} violated: lhs {} {} rhs {} (by {})",
                v.row,
                v.lhs_value,
                v.relop.as_str(),
                v.rhs,
                v.magnitude
            ));
        }
        for v in &self.integrality_violations {
            parts.push(format!(
                "variable {} = {} is not integral",
                v.variable, v.value
            ));
        }
        for v in &self.bound_violations {
            parts.push(format!(
                "variable {} = {} outside bounds [{}, {}]",
                v.variable, v.value, v.lower, v.upper
            ));
        }
        parts.join("; ")
    }
}
