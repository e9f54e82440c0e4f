use super::solve::SolveError;
use super::{
    BoundViolation, FeasibilityReportOf, GroundedModelOf, IntegralityViolation, RowViolation,
    SolutionOf, TolerancesOf,
};
use crate::formula_dsl::Relop;
use crate::model_ir::VarType;
use crate::scalar::Scalar;

/// Re-verify a solution against the grounded rows, bounds and integrality
/// requirements. The assignment must cover every flat variable.
pub fn check_feasibility<S: Scalar>(
    grounded: &GroundedModelOf<S>,
    solution: &SolutionOf<S>,
    tolerances: &TolerancesOf<S>,
) -> Result<FeasibilityReportOf<S>, SolveError> {
    let mut values: Vec<S> = Vec::with_capacity(grounded.variables.len());
    for var in &grounded.variables {
        match solution.assignment.get(&var.name) {
            Some(&v) => values.push(v),
            None => return Err(SolveError::MissingVariable(var.name.clone())),
        }
    }

    let mut report = FeasibilityReportOf {
        violated_rows: Vec::new(),
        integrality_violations: Vec::new(),
        bound_violations: Vec::new(),
        feasible: true,
        objective_recomputed: grounded.objective_at(&values),
    };

    for row in &grounded.rows {
        let activity = grounded.row_activity(row, &values);
        let tol = tolerances.abs_tol.max(tolerances.rel_tol * row.rhs.abs());
        let excess = match row.relop {
            Relop::Le => activity - row.rhs,
            Relop::Ge => row.rhs - activity,
            Relop::Eq => (activity - row.rhs).abs(),
        };
        if excess > tol {
            report.violated_rows.push(RowViolation {
                row: row.name.clone(),
                lhs_value: activity,
                relop: row.relop,
                rhs: row.rhs,
                magnitude: excess,
            });
        }
    }

    for (var, &value) in grounded.variables.iter().zip(&values) {
        if matches!(var.var_type, VarType::Integer | VarType::Binary) {
            let nearest = value.round();
            if (value - nearest).abs() > tolerances.int_tol {
                report.integrality_violations.push(IntegralityViolation {
                    variable: var.name.clone(),
                    value,
                });
            }
        }
        let lower_tol = tolerances.abs_tol.max(tolerances.rel_tol * var.lower.abs());
        let upper_tol = tolerances.abs_tol.max(tolerances.rel_tol * var.upper.abs());
        let below = var.lower - value;
        let above = value - var.upper;
        if below > lower_tol || above > upper_tol {
            report.bound_violations.push(BoundViolation {
                variable: var.name.clone(),
                value,
                lower: var.lower,
                upper: var.upper,
                magnitude: below.max(above),
            });
        }
    }

    report.feasible = report.violated_rows.is_empty()
        && report.integrality_violations.is_empty()
        && report.bound_violations.is_empty();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compile_solve::{
        brute_force_solve, ground, Bindings, BruteForceConfig, SolveStatus,
    };
    use crate::model_ir::parse_model_json;
    use std::collections::BTreeMap;

    #[test]
    fn knapsack_optimal_assignment_is_feasible_with_weight_at_capacity() {
        let model = parse_model_json(include_str!("../agents/canned/knapsack.json")).unwrap();
        let grounded = ground::<f64>(&model, &Bindings::new()).unwrap();
        let mut assignment = BTreeMap::new();
        for i in 0..6 {
            assignment.insert(
                format!("ItemQuantities_{i}"),
                if i == 4 { 4.0 } else { 0.0 },
            );
        }
        let solution = SolutionOf {
            status: SolveStatus::Optimal,
            assignment,
            objective_value: Some(48.0),
            solver_id: "test".into(),
            wall_time_seconds: 0.0,
        };
        let report = check_feasibility(&grounded, &solution, &TolerancesOf::default()).unwrap();
        assert!(report.feasible, "violations: {:?}", report.violated_rows);
        assert_eq!(report.objective_recomputed, 48.0);
    }

    #[test]
    fn integer_variable_at_two_point_five_violates_integrality() {
        let model = parse_model_json(include_str!("../agents/canned/fishery.json")).unwrap();
        let grounded = ground::<f64>(&model, &Bindings::new()).unwrap();
        let mut assignment = BTreeMap::new();
        assignment.insert("NumberOfSledDogTrips".to_string(), 2.5);
        assignment.insert("NumberOfTruckTrips".to_string(), 5.0);
        let solution = SolutionOf {
            status: SolveStatus::Feasible,
            assignment,
            objective_value: Some(1750.0),
            solver_id: "test".into(),
            wall_time_seconds: 0.0,
        };
        let report = check_feasibility(&grounded, &solution, &TolerancesOf::default()).unwrap();
        assert!(!report.feasible);
        assert_eq!(report.integrality_violations.len(), 1);
        assert_eq!(
            report.integrality_violations[0].variable,
            "NumberOfSledDogTrips"
        );
    }

    #[test]
    fn missing_variable_is_an_error() {
        let model = parse_model_json(include_str!("../agents/canned/fishery.json")).unwrap();
        let grounded = ground::<f64>(&model, &Bindings::new()).unwrap();
        let solution = SolutionOf::<f64>::status_only(SolveStatus::Optimal, "test");
        let err = check_feasibility(&grounded, &solution, &TolerancesOf::default()).unwrap_err();
        assert!(matches!(err, SolveError::MissingVariable(_)));
    }

    #[test]
    fn closed_warehouse_shipping_ninety_units_violates_exactly_its_linking_row() {
        let model = parse_model_json(include_str!("../agents/canned/warehouse.json")).unwrap();
        let grounded = ground::<f64>(&model, &Bindings::new()).unwrap();

        // Deterministic feasible base: warehouses {0,1,2,3,4,6,7,8} open,
        // customer c served entirely by the c-th open warehouse (mod 8).
        let open = [0usize, 1, 2, 3, 4, 6, 7, 8];
        let demands = [
            117.0, 86.0, 69.0, 53.0, 110.0, 74.0, 136.0, 140.0, 126.0, 79.0, 54.0, 86.0, 114.0,
            76.0, 136.0, 73.0, 144.0, 51.0, 53.0, 120.0,
        ];
        let mut assignment = BTreeMap::new();
        for j in 0..10 {
            assignment.insert(
                format!("WarehouseOpen_{j}"),
                if open.contains(&j) { 1.0 } else { 0.0 },
            );
        }
        for i in 0..20 {
            for j in 0..10 {
                assignment.insert(format!("ServiceAmount_{i}_{j}"), 0.0);
            }
        }
        for (c, demand) in demands.iter().enumerate() {
            let warehouse = open[c % open.len()];
            assignment.insert(format!("ServiceAmount_{c}_{warehouse}"), *demand);
        }
        let base = SolutionOf {
            status: SolveStatus::Feasible,
            assignment: assignment.clone(),
            objective_value: None,
            solver_id: "test".into(),
            wall_time_seconds: 0.0,
        };
        let report = check_feasibility(&grounded, &base, &TolerancesOf::default()).unwrap();
        assert!(
            report.feasible,
            "base must be feasible, got {:?}",
            report.violated_rows
        );

        // Inject the contradiction: move 90 units of customer 4's demand to
        // the closed warehouse 5.
        assignment.insert("ServiceAmount_4_4".to_string(), 110.0 - 90.0);
        assignment.insert("ServiceAmount_4_5".to_string(), 90.0);
        let broken = SolutionOf {
            status: SolveStatus::Feasible,
            assignment,
            objective_value: None,
            solver_id: "test".into(),
            wall_time_seconds: 0.0,
        };
        let report = check_feasibility(&grounded, &broken, &TolerancesOf::default()).unwrap();
        assert!(!report.feasible);
        assert_eq!(
            report.violated_rows.len(),
            1,
            "got {:?}",
            report.violated_rows
        );
        let violation = &report.violated_rows[0];
        assert_eq!(violation.row, "CapacityWarehouse_5");
        assert_eq!(violation.magnitude, 90.0);
    }

    #[test]
    fn brute_force_optimum_passes_feasibility_in_f32() {
        // The kernel is scalar-generic; run one path in f32.
        let model = parse_model_json(include_str!("../agents/canned/fishery.json")).unwrap();
        let grounded = ground::<f32>(&model, &Bindings::new()).unwrap();
        let solution = brute_force_solve(&grounded, &BruteForceConfig::default()).unwrap();
        assert_eq!(solution.objective_value, Some(3000.0f32));
        let report = check_feasibility(&grounded, &solution, &TolerancesOf::default()).unwrap();
        assert!(report.feasible);
    }
}
