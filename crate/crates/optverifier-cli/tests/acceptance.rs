//! Acceptance suite: every project exit criterion as one test, with a
//! printed pass line per criterion (visible under `--nocapture`).
//!
//! The suite is fully offline: solver oracles, deterministic mock agents
//! and recorded cassettes stand in for live models and external datasets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use optverifier_core::agents::{LlmAgentConfig, LlmAgents, MockAgents};
use optverifier_core::compile_solve::{
    brute_force_solve, check_feasibility, emit_lp, ground, solve, Bindings, BruteForceConfig,
    ExternalSolverConfig, FlatVar, GroundedObjective, Row, SolutionFileFormat, SolveStatus,
    SolverBackend,
};
use optverifier_core::evalbench::{
    synth_study_positives, tsp_tour_oracle, verifier_study, PerturbOp, PerturbationSpec,
};
use optverifier_core::formula_dsl::{
    parse_constraint, print_canonical, print_constraint, Binder, ConstraintAst, DslError, Expr,
    Guard, GuardCond, GuardOperand, Index, Quantifier, Relop, SymbolTable,
};
use optverifier_core::llm_gateway::{CassetteWriter, Gateway};
use optverifier_core::model_ir::{
    parse_model_json, OptimizationModel, ProblemInstance, Sense, VarType,
};
use optverifier_core::orchestrator::{run_pipeline, PipelineConfig, RunRecord};
use optverifier_core::trace::PipelineStage;
use optverifier_core::{GroundedModel, Solution, Tolerances};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pass(name: &str) {
    println!("ACCEPTANCE PASS: {name}");
}

fn refsolve_backend() -> Option<SolverBackend> {
    let path = PathBuf::from(env!("CARGO_BIN_EXE_optverifier-refsolve"));
    if !path.exists() {
        return None;
    }
    Some(SolverBackend::External(ExternalSolverConfig {
        command: path.to_string_lossy().into_owned(),
        args: vec!["{lp}".into(), "{sol}".into()],
        format: SolutionFileFormat::GenericJson,
        timeout_seconds: 60,
    }))
}

fn canned(name: &str) -> OptimizationModel {
    let text = match name {
        "knapsack" => include_str!("../../optverifier-core/src/agents/canned/knapsack.json"),
        "fishery" => include_str!("../../optverifier-core/src/agents/canned/fishery.json"),
        "tsp" => include_str!("../../optverifier-core/src/agents/canned/tsp.json"),
        "warehouse" => include_str!("../../optverifier-core/src/agents/canned/warehouse.json"),
        "maxflow" => include_str!("../../optverifier-core/src/agents/canned/maxflow.json"),
        other => panic!("unknown canned model {other}"),
    };
    parse_model_json(text).unwrap()
}

// ---------------------------------------------------------------------------
// Random small-MILP corpus shared by the oracle-equivalence and
// feasibility-gate criteria.
// ---------------------------------------------------------------------------

fn random_milp(rng: &mut ChaCha8Rng) -> GroundedModel {
    let n = rng.random_range(1..=6usize);
    let mut variables = Vec::new();
    for index in 0..n {
        let lower = rng.random_range(-2..=2i64) as f64;
        let upper = lower + rng.random_range(0..=6i64) as f64;
        let var_type = if lower == 0.0 && upper == 1.0 && rng.random_range(0..2) == 0 {
            VarType::Binary
        } else {
            VarType::Integer
        };
        variables.push(FlatVar {
            name: format!("x{index}"),
            var_type,
            lower,
            upper,
        });
    }
    let reference: Vec<f64> = variables
        .iter()
        .map(|v| rng.random_range(v.lower as i64..=v.upper as i64) as f64)
        .collect();

    let row_count = rng.random_range(0..=8usize);
    let mut rows = Vec::new();
    for r in 0..row_count {
        let mut coeffs = Vec::new();
        for (index, _) in variables.iter().enumerate() {
            if rng.random_range(0..2) == 0 {
                let mut coeff = 0;
                while coeff == 0 {
                    coeff = rng.random_range(-5..=5i64);
                }
                coeffs.push((index, coeff as f64));
            }
        }
        if coeffs.is_empty() {
            coeffs.push((rng.random_range(0..n), 1.0));
        }
        let activity: f64 = coeffs.iter().map(|&(v, c)| c * reference[v]).sum();
        let (relop, rhs) = match rng.random_range(0..4) {
            0 => (Relop::Ge, activity - rng.random_range(-2..=5i64) as f64),
            1 => (Relop::Eq, activity),
            _ => (Relop::Le, activity + rng.random_range(-2..=5i64) as f64),
        };
        rows.push(Row {
            name: format!("r{r}"),
            coeffs,
            relop,
            rhs,
        });
    }

    let objective_coeffs: Vec<(usize, f64)> = (0..n)
        .filter_map(|index| {
            let coeff = rng.random_range(-5..=5i64) as f64;
            (coeff != 0.0).then_some((index, coeff))
        })
        .collect();
    GroundedModel {
        variables,
        rows,
        objective: GroundedObjective {
            sense: if rng.random_range(0..2) == 0 {
                Sense::Maximize
            } else {
                Sense::Minimize
            },
            coeffs: objective_coeffs,
            constant: rng.random_range(-3..=3i64) as f64,
        },
        warnings: vec![],
    }
}

/// Over >= 200 generated small integer MILPs, the enumeration oracle and the
/// external solver (independent LP-file branch-and-bound subprocess) agree
/// on status, and objectives match within 1e-6, inside 60 seconds.
#[test]
fn oracle_equivalence_over_random_milp_corpus() {
    let Some(backend) = refsolve_backend() else {
        println!("ACCEPTANCE SKIPPED: oracle equivalence (no external solver available)");
        return;
    };
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20240817);
    let mut optimal = 0usize;
    let mut infeasible = 0usize;
    for case in 0..200 {
        let grounded = random_milp(&mut rng);
        let brute = brute_force_solve(&grounded, &BruteForceConfig::default())
            .unwrap_or_else(|e| panic!("case {case}: oracle must apply: {e}"));
        let external = solve(&grounded, &backend)
            .unwrap_or_else(|e| panic!("case {case}: external solve failed: {e}"));
        assert_eq!(
            brute.status,
            external.status,
            "case {case}: status disagreement\nLP:\n{}",
            emit_lp(&grounded).unwrap()
        );
        match brute.status {
            SolveStatus::Optimal => {
                optimal += 1;
                let a = brute.objective_value.unwrap();
                let b = external.objective_value.unwrap();
                assert!(
                    (a - b).abs() <= 1e-6,
                    "case {case}: objective {a} vs {b}\nLP:\n{}",
                    emit_lp(&grounded).unwrap()
                );
            }
            SolveStatus::Infeasible => infeasible += 1,
            other => panic!("case {case}: unexpected status {other}"),
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "corpus took {elapsed:?}");
    assert!(
        optimal >= 50,
        "corpus should contain many solvable instances, got {optimal}"
    );
    assert!(
        infeasible >= 5,
        "corpus should contain infeasible instances, got {infeasible}"
    );
    pass(&format!(
        "oracle equivalence on 200 random MILPs ({optimal} optimal, {infeasible} infeasible, {elapsed:?})"
    ));
}

// ---------------------------------------------------------------------------
// Worked examples
// ---------------------------------------------------------------------------

#[test]
fn worked_example_knapsack_accepts_with_objective_48() {
    let agents = MockAgents::new();
    let problem = ProblemInstance {
        id: "knapsack".into(),
        description: "Select item quantities for a knapsack with weight capacity 60.".into(),
        ground_truth_objective: Some(48.0),
        difficulty: None,
        category: None,
    };
    let record = run_pipeline(&agents, &problem, &PipelineConfig::default());
    assert!(record.outcome.is_accepted());
    assert_eq!(record.predicted_objective(), Some(48.0));
    pass("knapsack pipeline accepted with objective 48");
}

#[test]
fn worked_example_fishery_objective_3000() {
    let agents = MockAgents::new();
    let problem = ProblemInstance {
        id: "fishery".into(),
        description: "A fishery transports fish by sled dogs or trucks within a budget.".into(),
        ground_truth_objective: Some(3000.0),
        difficulty: None,
        category: None,
    };
    let record = run_pipeline(&agents, &problem, &PipelineConfig::default());
    assert!(record.outcome.is_accepted());
    assert_eq!(record.predicted_objective(), Some(3000.0));
    pass("fishery pipeline accepted with objective 3000");
}

#[test]
fn worked_example_tsp_external_solver_matches_tour_oracle() {
    let costs = vec![
        vec![0.0, 58.0, 15.0, 75.0, 91.0],
        vec![58.0, 0.0, 54.0, 85.0, 11.0],
        vec![15.0, 54.0, 0.0, 28.0, 61.0],
        vec![75.0, 85.0, 28.0, 0.0, 47.0],
        vec![91.0, 11.0, 61.0, 47.0, 0.0],
    ];
    let (oracle_cost, oracle_tour) = tsp_tour_oracle(&costs).unwrap();
    assert_eq!(oracle_cost, 159.0);
    assert_eq!(oracle_tour, vec![0, 1, 4, 3, 2, 0]);

    let Some(backend) = refsolve_backend() else {
        println!(
            "ACCEPTANCE SKIPPED: TSP solved-objective check (no external MILP solver configured)"
        );
        return;
    };
    let grounded = ground::<f64>(&canned("tsp"), &Bindings::new()).unwrap();
    let solution = solve(&grounded, &backend).unwrap();
    assert_eq!(solution.status, SolveStatus::Optimal);
    let objective = solution.objective_value.unwrap();
    assert!(
        (objective - oracle_cost).abs() <= 1e-6,
        "{objective} vs {oracle_cost}"
    );
    let report = check_feasibility(&grounded, &solution, &Tolerances::default()).unwrap();
    assert!(report.feasible);
    pass("TSP external solve equals tour-oracle optimum 159");
}

#[test]
fn worked_example_warehouse_open_bound_rows_present() {
    let grounded = ground::<f64>(&canned("warehouse"), &Bindings::new()).unwrap();
    let min_open = grounded
        .rows
        .iter()
        .find(|r| r.name == "MinOpenWarehouses")
        .expect("min-open row present");
    assert_eq!(min_open.relop, Relop::Ge);
    assert_eq!(min_open.rhs, 3.0);
    let max_open = grounded
        .rows
        .iter()
        .find(|r| r.name == "MaxOpenWarehouses")
        .expect("max-open row present");
    assert_eq!(max_open.relop, Relop::Le);
    assert_eq!(max_open.rhs, 8.0);
    pass("warehouse grounding carries min-open >= 3 and max-open <= 8 rows");
}

// ---------------------------------------------------------------------------
// Dual-loop behavior on the max-flow cassette
// ---------------------------------------------------------------------------

fn fenced(value: &str) -> String {
    format!("```json\n{value}\n```")
}

fn maxflow_structure_json(with_conservation: bool) -> String {
    let mut implicit = vec![
        (
            "Directed Network",
            "Water moves along directed canals between reservoirs.",
        ),
        (
            "Capacity Constraints",
            "Each canal has a maximum daily capacity.",
        ),
    ];
    if with_conservation {
        implicit.push((
            "Flow Conservation",
            "Water entering any intermediate reservoir equals the water leaving it.",
        ));
    }
    let implicit_json: Vec<String> = implicit
        .iter()
        .map(|(k, v)| format!("    \"{k}\": \"{v}\""))
        .collect();
    format!(
        "{{\n  \"problem_type\": \"Maximum flow problem\",\n  \"specific_type\": \"Single commodity maximum flow\",\n  \"subdivisions\": {{\n    \"Single commodity\": \"One kind of flow moves through the network.\"\n  }},\n  \"implicit_constraints\": {{\n{}\n  }}\n}}",
        implicit_json.join(",\n")
    )
}

fn maxflow_problem() -> ProblemInstance {
    ProblemInstance {
        id: "maxflow-reservoirs".into(),
        description: "A network of canals connects nine reservoirs numbered 0 to 8 with known \
                      per-canal daily capacities. Maximize the daily water transfer from \
                      reservoir 0 to reservoir 8."
            .into(),
        ground_truth_objective: Some(4.0),
        difficulty: None,
        category: None,
    }
}

/// Scripted agent replies reproducing a formulation that first misses flow
/// conservation and is repaired by one structure-side refinement.
fn maxflow_dual_loop_replies() -> Vec<String> {
    let correct = canned("maxflow");
    let mut incomplete = correct.clone();
    incomplete
        .constraints
        .retain(|c| c.name != "Flow Conservation");
    let parameters = format!(
        "{{\"parameters\": {}}}",
        serde_json::to_string_pretty(&correct.parameters).unwrap()
    );
    vec![
        fenced(&maxflow_structure_json(true)),
        fenced(&parameters),
        fenced(&incomplete.to_canonical_json()),
        fenced(&maxflow_structure_json(false)),
        "The interpreted structure is missing flow conservation: the water entering each \
         intermediate reservoir must equal the water leaving it. Please add flow balance \
         constraints for reservoirs 1 through 7."
            .to_string(),
        fenced(&correct.to_canonical_json()),
        fenced(&maxflow_structure_json(true)),
        "Yes".to_string(),
        "The plan pushes 4 units of water per day from reservoir 0 to reservoir 8, saturating \
         both outgoing canals at the source and both incoming canals at the sink."
            .to_string(),
        "Yes".to_string(),
    ]
}

fn strip_record_times(mut record: RunRecord) -> RunRecord {
    for event in &mut record.events {
        event.at_unix_ms = 0;
        event.duration_ms = 0;
    }
    if let Some(solution) = record.final_solution.as_mut() {
        solution.wall_time_seconds = 0.0;
    }
    record.totals.wall_time_seconds = 0.0;
    record
}

#[test]
fn dual_loop_maxflow_cassette_single_refinement_restores_conservation() {
    let dir = tempfile::tempdir().unwrap();
    let cassette_path = dir.path().join("maxflow.jsonl");
    let problem = maxflow_problem();
    let config = PipelineConfig::default();

    // Record the scripted run into a cassette.
    let recorded = {
        let writer = CassetteWriter::create(&cassette_path, "test-model").unwrap();
        let gateway = Gateway::scripted_texts(maxflow_dual_loop_replies()).with_recorder(writer);
        let agents = LlmAgents::new(&gateway, LlmAgentConfig::default());
        run_pipeline(&agents, &problem, &config)
    };
    assert!(
        recorded.outcome.is_accepted(),
        "outcome: {:?}",
        recorded.outcome
    );

    // Replay: exactly one structure-side refinement, and the final model
    // grounds with one conservation row per intermediate reservoir.
    let replayed = {
        let gateway = Gateway::replay_file(&cassette_path).unwrap();
        let agents = LlmAgents::new(&gateway, LlmAgentConfig::default());
        run_pipeline(&agents, &problem, &config)
    };
    assert!(replayed.outcome.is_accepted());
    assert_eq!(replayed.refinements.len(), 1);
    assert_eq!(replayed.refinements[0].trigger, PipelineStage::StruEval);
    assert!(replayed.refinements[0]
        .comment
        .contains("flow conservation"));

    let final_model = replayed.final_model.as_ref().unwrap();
    let grounded = ground::<f64>(final_model, &Bindings::new()).unwrap();
    let conservation_rows: Vec<&Row<f64>> = grounded
        .rows
        .iter()
        .filter(|r| r.name.starts_with("Flow_Conservation"))
        .collect();
    assert_eq!(
        conservation_rows.len(),
        7,
        "one row per intermediate reservoir"
    );

    // Feasible solutions of the refined model conserve flow within 1e-6.
    let solution: &Solution = replayed.final_solution.as_ref().unwrap();
    assert_eq!(solution.status, SolveStatus::Optimal);
    assert_eq!(solution.objective_value, Some(4.0));
    for node in 1..=7usize {
        let inflow: f64 = (0..9)
            .map(|i| solution.assignment[&format!("FlowAmount_{i}_{node}")])
            .sum();
        let outflow: f64 = (0..9)
            .map(|j| solution.assignment[&format!("FlowAmount_{node}_{j}")])
            .sum();
        assert!(
            (inflow - outflow).abs() <= 1e-6,
            "node {node}: {inflow} vs {outflow}"
        );
    }

    // Replay twice: identical records modulo clocks.
    let replayed_again = {
        let gateway = Gateway::replay_file(&cassette_path).unwrap();
        let agents = LlmAgents::new(&gateway, LlmAgentConfig::default());
        run_pipeline(&agents, &problem, &config)
    };
    assert_eq!(
        strip_record_times(replayed),
        strip_record_times(replayed_again)
    );
    pass("max-flow cassette: one structure refinement, conservation restored and holding");
}

// ---------------------------------------------------------------------------
// Verifier study
// ---------------------------------------------------------------------------

/// 10 positives with k = 9 gives 10 + 90 samples per difficulty stratum, and
/// the deterministic mock verifier detects every dropped constraint/variable
/// with no false alarms, inside 30 seconds.
#[test]
fn verifier_study_shape_and_deterministic_drop_detection() {
    let started = Instant::now();
    let cases = synth_study_positives(71, 10);
    assert_eq!(cases.len(), 30);
    let agents = MockAgents::new();
    let spec = PerturbationSpec {
        seed: 13,
        k: 9,
        ops: vec![PerturbOp::DropConstraint, PerturbOp::DropVariable],
    };
    let metrics = verifier_study(&cases, &spec, &agents).unwrap();
    assert_eq!(metrics.total_samples, 300);
    for (difficulty, stratum) in &metrics.per_stratum {
        assert_eq!(stratum.positives, 10, "{difficulty}");
        assert_eq!(stratum.negatives, 90, "{difficulty}");
        assert_eq!(
            stratum.structure.recall(),
            Some(1.0),
            "{difficulty}: {:?}",
            stratum.structure
        );
        assert_eq!(
            stratum.structure.precision(),
            Some(1.0),
            "{difficulty}: {:?}",
            stratum.structure
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 30, "study took {elapsed:?}");
    pass(&format!(
        "verifier study: 10+90 per stratum, drop-op recall/precision 1.0 ({elapsed:?})"
    ));
}

// ---------------------------------------------------------------------------
// Feasibility gate
// ---------------------------------------------------------------------------

#[test]
fn feasibility_gate_reverifies_solver_output() {
    // Every optimal enumeration result in a generated corpus re-verifies
    // as feasible.
    let mut rng = ChaCha8Rng::seed_from_u64(5150);
    let mut optimal = 0usize;
    for _ in 0..120 {
        let grounded = random_milp(&mut rng);
        let solution = brute_force_solve(&grounded, &BruteForceConfig::default()).unwrap();
        if solution.status == SolveStatus::Optimal {
            optimal += 1;
            let report = check_feasibility(&grounded, &solution, &Tolerances::default()).unwrap();
            assert!(report.feasible, "optimal solution failed re-verification");
            let recomputed = report.objective_recomputed;
            let reported = solution.objective_value.unwrap();
            assert!((recomputed - reported).abs() <= 1e-6);
        }
    }
    assert!(
        optimal >= 30,
        "need optimal instances to exercise the gate, got {optimal}"
    );

    // The injected closed-warehouse contradiction is reported as exactly the
    // violated linking row with magnitude 90.
    let grounded = ground::<f64>(&canned("warehouse"), &Bindings::new()).unwrap();
    let open = [0usize, 1, 2, 3, 4, 6, 7, 8];
    let demands = [
        117.0, 86.0, 69.0, 53.0, 110.0, 74.0, 136.0, 140.0, 126.0, 79.0, 54.0, 86.0, 114.0, 76.0,
        136.0, 73.0, 144.0, 51.0, 53.0, 120.0,
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
    for (customer, demand) in demands.iter().enumerate() {
        let warehouse = open[customer % open.len()];
        assignment.insert(format!("ServiceAmount_{customer}_{warehouse}"), *demand);
    }
    assignment.insert("ServiceAmount_4_4".to_string(), 20.0);
    assignment.insert("ServiceAmount_4_5".to_string(), 90.0);
    let broken = Solution {
        status: SolveStatus::Feasible,
        assignment,
        objective_value: None,
        solver_id: "injected".into(),
        wall_time_seconds: 0.0,
    };
    let report = check_feasibility(&grounded, &broken, &Tolerances::default()).unwrap();
    assert!(!report.feasible);
    assert_eq!(report.violated_rows.len(), 1);
    assert_eq!(report.violated_rows[0].row, "CapacityWarehouse_5");
    assert_eq!(report.violated_rows[0].magnitude, 90.0);
    pass(&format!(
        "feasibility gate: {optimal} optimal solutions re-verified; injected contradiction isolated to CapacityWarehouse_5 by 90"
    ));
}

// ---------------------------------------------------------------------------
// Replay determinism of benchmark reports
// ---------------------------------------------------------------------------

fn prodmix_model_json() -> String {
    r#"{
  "parameters": [
    {"symbol": "AssemblyHours", "definition": "Available assembly hours.", "value": 4, "shape": []},
    {"symbol": "AlphaLimit", "definition": "Cap on product Alpha output.", "value": 2, "shape": []}
  ],
  "variables": [
    {"symbol": "ProductAlpha", "definition": "Units of product Alpha.", "type": "integer", "shape": []},
    {"symbol": "ProductBeta", "definition": "Units of product Beta.", "type": "integer", "shape": []}
  ],
  "constraints": [
    {"name": "Assembly Hours", "description": "Total units fit the assembly budget.", "formulation": "ProductAlpha + ProductBeta <= AssemblyHours"},
    {"name": "Alpha Limit", "description": "Alpha output is capped.", "formulation": "ProductAlpha <= AlphaLimit"}
  ],
  "objective": [
    {"description": "Maximize profit.", "formulation": "3 * ProductAlpha + 2 * ProductBeta", "objective_sense": "Maximize"}
  ]
}"#
    .to_string()
}

fn happy_path_replies(
    model: &OptimizationModel,
    structure_json: &str,
    narrative: &str,
) -> Vec<String> {
    let parameters = format!(
        "{{\"parameters\": {}}}",
        serde_json::to_string_pretty(&model.parameters).unwrap()
    );
    vec![
        fenced(structure_json),
        fenced(&parameters),
        fenced(&model.to_canonical_json()),
        fenced(structure_json),
        "Yes".to_string(),
        narrative.to_string(),
        "Yes".to_string(),
    ]
}

fn simple_structure_json(problem_type: &str, specific: &str) -> String {
    format!(
        "{{\"problem_type\": \"{problem_type}\", \"specific_type\": \"{specific}\", \
         \"subdivisions\": {{}}, \"implicit_constraints\": {{\"bounded decisions\": \
         \"Decision quantities are bounded by the stated limits.\"}}}}"
    )
}

fn strip_timing(text: &str) -> String {
    let mut value: serde_json::Value = serde_json::from_str(text).unwrap();
    value.as_object_mut().unwrap().remove("timing");
    serde_json::to_string_pretty(&value).unwrap()
}

#[test]
fn replay_determinism_bench_reports_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("fixture.jsonl");
    std::fs::write(
        &dataset,
        concat!(
            "{\"id\": \"knapsack\", \"description\": \"Select item quantities for a knapsack with weight capacity 60.\", \"ground_truth_objective\": 48.0}\n",
            "{\"id\": \"fishery\", \"description\": \"A fishery transports fish by sled dogs or trucks within a budget.\", \"ground_truth_objective\": 3000.0}\n",
            "{\"id\": \"maxflow\", \"description\": \"Maximize daily water transfer through canals between nine reservoirs.\", \"ground_truth_objective\": 4.0}\n",
            "{\"id\": \"prodmix\", \"description\": \"Plan integer production of two products under assembly hours.\", \"ground_truth_objective\": 10.0}\n",
        ),
    )
    .unwrap();

    // Record one cassette covering all four instances, in dataset order.
    let cassette_path = dir.path().join("bench.jsonl");
    {
        let mut replies = Vec::new();
        replies.extend(happy_path_replies(
            &canned("knapsack"),
            &simple_structure_json("Combinatorial Optimization", "Bounded Knapsack Problem"),
            "Pack four units of the fifth item kind for a value of 48.",
        ));
        replies.extend(happy_path_replies(
            &canned("fishery"),
            &simple_structure_json("Linear Programming", "Resource Allocation Problem"),
            "Run ten truck trips and no sled dog trips, moving 3000 fish.",
        ));
        replies.extend(happy_path_replies(
            &canned("maxflow"),
            &maxflow_structure_json(true),
            "Route 4 units of water from reservoir 0 to reservoir 8.",
        ));
        replies.extend(happy_path_replies(
            &parse_model_json(&prodmix_model_json()).unwrap(),
            &simple_structure_json("Linear Programming", "Production Planning"),
            "Make two units of each product for a profit of 10.",
        ));
        let writer = CassetteWriter::create(&cassette_path, "test-model").unwrap();
        let gateway = Gateway::scripted_texts(replies).with_recorder(writer);
        let agents = LlmAgents::new(&gateway, LlmAgentConfig::default());
        let instances = optverifier_core::evalbench::load_dataset(&dataset).unwrap();
        for instance in &instances {
            let record = run_pipeline(&agents, instance, &PipelineConfig::default());
            assert!(
                record.outcome.is_accepted(),
                "{}: {:?}",
                instance.id,
                record.outcome
            );
        }
    }

    // Two executions of the bench command against the same cassette.
    let run_bench = |stem: &Path| {
        let output = Command::new(env!("CARGO_BIN_EXE_optverifier"))
            .args([
                "--cassette",
                cassette_path.to_str().unwrap(),
                "--out",
                stem.to_str().unwrap(),
                "bench",
                dataset.to_str().unwrap(),
                "--name",
                "fixture",
            ])
            .output()
            .unwrap();
        assert_eq!(
            output.status.code(),
            Some(0),
            "stderr: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        std::fs::read_to_string(stem.with_extension("json")).unwrap()
    };
    let first = run_bench(&dir.path().join("report-a"));
    let second = run_bench(&dir.path().join("report-b"));
    assert_eq!(
        strip_timing(&first),
        strip_timing(&second),
        "reports must be byte-identical after timing strip"
    );

    let report: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(report["aggregates"]["sa_micro"], 1.0);
    pass("bench replay determinism: byte-identical reports (timing excluded)");
}

// ---------------------------------------------------------------------------
// Grammar properties
// ---------------------------------------------------------------------------

fn acceptance_symbols() -> SymbolTable {
    SymbolTable::new(
        vec!["CapacityRow", "UnitCost", "Sizes", "Groups"],
        vec!["MakeAmount", "ShipAmount"],
    )
}

fn random_expr(rng: &mut ChaCha8Rng, depth: u32, want_var: bool, bound: &[String]) -> Expr {
    let leaf = |rng: &mut ChaCha8Rng, want_var: bool, bound: &[String]| -> Expr {
        let index = || Index::Literal(0);
        let pick_index = |rng: &mut ChaCha8Rng, bound: &[String]| -> Index {
            if !bound.is_empty() && rng.random_range(0..2) == 0 {
                Index::Bound(bound[rng.random_range(0..bound.len())].clone())
            } else {
                Index::Literal(rng.random_range(0..4))
            }
        };
        if want_var {
            let symbol = if rng.random_range(0..2) == 0 {
                "MakeAmount"
            } else {
                "ShipAmount"
            };
            Expr::Var {
                symbol: symbol.into(),
                indices: vec![pick_index(rng, bound)],
            }
        } else {
            match rng.random_range(0..4) {
                0 => Expr::Number(rng.random_range(0..50) as f64),
                1 => Expr::Number(rng.random_range(0..50) as f64 + 0.5),
                2 => Expr::Param {
                    symbol: "UnitCost".into(),
                    indices: vec![pick_index(rng, bound)],
                },
                _ => {
                    let _ = index;
                    Expr::Param {
                        symbol: "CapacityRow".into(),
                        indices: vec![],
                    }
                }
            }
        }
    };
    if depth == 0 {
        return leaf(rng, want_var, bound);
    }
    match rng.random_range(0..6) {
        0 => {
            let left = random_expr(rng, depth - 1, want_var, bound);
            let right = random_expr(rng, depth - 1, false, bound);
            Expr::Add(Box::new(left), Box::new(right))
        }
        1 => {
            let left = random_expr(rng, depth - 1, false, bound);
            let right = random_expr(rng, depth - 1, want_var, bound);
            Expr::Sub(Box::new(left), Box::new(right))
        }
        2 => {
            // Scalar multiplication: the variable side carries the degree.
            let coeff = random_expr(rng, depth - 1, false, bound);
            let body = random_expr(rng, depth - 1, want_var, bound);
            Expr::Mul(Box::new(coeff), Box::new(body))
        }
        3 => {
            let inner = random_expr(rng, depth - 1, want_var, bound);
            match inner {
                Expr::Number(n) => Expr::Number(-n),
                other => Expr::Neg(Box::new(other)),
            }
        }
        4 => {
            let fresh = format!("k{}", bound.len());
            let mut inner_bound = bound.to_vec();
            inner_bound.push(fresh.clone());
            let body = random_expr(rng, depth - 1, want_var, &inner_bound);
            let guard = (rng.random_range(0..2) == 0).then(|| Guard {
                conds: vec![GuardCond {
                    lhs: GuardOperand::Index(fresh.clone()),
                    op: optverifier_core::formula_dsl::CmpOp::Ne,
                    rhs: GuardOperand::Literal(rng.random_range(0..3)),
                }],
            });
            Expr::Sum {
                binders: vec![Binder {
                    index: fresh,
                    set: "Groups".into(),
                }],
                guard,
                body: Box::new(body),
            }
        }
        _ => leaf(rng, want_var, bound),
    }
}

fn random_constraint(rng: &mut ChaCha8Rng) -> ConstraintAst {
    let quantifiers = if rng.random_range(0..2) == 0 {
        vec![Quantifier {
            index: "q0".into(),
            set: "Sizes".into(),
            guard: (rng.random_range(0..2) == 0).then(|| Guard {
                conds: vec![GuardCond {
                    lhs: GuardOperand::Index("q0".into()),
                    op: optverifier_core::formula_dsl::CmpOp::Ge,
                    rhs: GuardOperand::Literal(1),
                }],
            }),
        }]
    } else {
        vec![]
    };
    let bound: Vec<String> = quantifiers.iter().map(|q| q.index.clone()).collect();
    let relop = match rng.random_range(0..3) {
        0 => Relop::Le,
        1 => Relop::Ge,
        _ => Relop::Eq,
    };
    let lhs_has_var = rng.random_range(0..4) != 0;
    let rhs_has_var = rng.random_range(0..4) == 0;
    ConstraintAst {
        lhs: random_expr(rng, 3, lhs_has_var, &bound),
        relop,
        rhs: random_expr(rng, 2, rhs_has_var, &bound),
        quantifiers,
    }
}

/// 1,000 randomized print/parse/print cycles with zero mismatches, and the
/// strict-inequality / variable-product rejections fire with their dedicated
/// error codes.
#[test]
fn grammar_round_trip_and_rejection_properties() {
    let symbols = acceptance_symbols();
    let mut rng = ChaCha8Rng::seed_from_u64(424242);
    for case in 0..1000 {
        let ast = random_constraint(&mut rng);
        let printed = print_constraint(&ast);
        let reparsed = parse_constraint(&printed, &symbols)
            .unwrap_or_else(|e| panic!("case {case}: {printed:?} failed to reparse: {e}"));
        assert_eq!(
            reparsed, ast,
            "case {case}: round trip changed the AST for {printed:?}"
        );
        let reprinted = print_constraint(&reparsed);
        assert_eq!(
            reprinted, printed,
            "case {case}: printing is not a fixpoint"
        );
    }

    for case in 0..200 {
        let expr = random_expr(&mut rng, 2, false, &[]);
        let strict = if case % 2 == 0 {
            format!("{} < MakeAmount[0]", print_canonical(&expr))
        } else {
            format!("MakeAmount[0] > {}", print_canonical(&expr))
        };
        let err = parse_constraint(&strict, &symbols).unwrap_err();
        assert!(
            matches!(err, DslError::NonstrictRequired { .. }),
            "case {case}: expected strict-inequality rejection for {strict:?}, got {err:?}"
        );

        let var_product = format!(
            "MakeAmount[0] * ({}) <= 1",
            print_canonical(&random_expr(&mut rng, 2, true, &[]))
        );
        let err = parse_constraint(&var_product, &symbols).unwrap_err();
        assert!(
            matches!(err, DslError::Nonlinear { .. }),
            "case {case}: expected nonlinear rejection for {var_product:?}, got {err:?}"
        );
    }
    pass("grammar: 1000 round-trip cycles clean; strict and nonlinear inputs rejected");
}

// ---------------------------------------------------------------------------
// Efficiency accounting
// ---------------------------------------------------------------------------

#[test]
fn efficiency_accounting_exact_totals_and_happy_path_events() {
    let agents = MockAgents::new();
    let problem = ProblemInstance {
        id: "knapsack".into(),
        description: "Select item quantities for a knapsack with weight capacity 60.".into(),
        ground_truth_objective: Some(48.0),
        difficulty: None,
        category: None,
    };
    let record = run_pipeline(&agents, &problem, &PipelineConfig::default());
    let llm_events: Vec<_> = record.events.iter().filter(|e| e.stage.is_llm()).collect();
    assert_eq!(
        llm_events.len(),
        7,
        "happy path runs seven agent-stage calls"
    );
    assert_eq!(record.totals.agent_calls, 7);
    let prompt: u64 = llm_events.iter().map(|e| e.usage.prompt_tokens).sum();
    let completion: u64 = llm_events.iter().map(|e| e.usage.completion_tokens).sum();
    assert_eq!(record.totals.prompt_tokens, prompt);
    assert_eq!(record.totals.completion_tokens, completion);

    // One refinement round adds refine + interpret + evaluate: ten calls,
    // in line with the reported per-problem averages around nine.
    struct DropFirst(MockAgents);
    impl optverifier_core::agents::AgentSuite for DropFirst {
        fn distill(
            &self,
            problem: &ProblemInstance,
            log: &mut optverifier_core::trace::EventLog,
        ) -> Result<
            optverifier_core::structure_schema::ModelingStructure,
            optverifier_core::agents::AgentError,
        > {
            self.0.distill(problem, log)
        }
        fn formulate(
            &self,
            problem: &ProblemInstance,
            structure: &optverifier_core::structure_schema::ModelingStructure,
            log: &mut optverifier_core::trace::EventLog,
        ) -> Result<OptimizationModel, optverifier_core::agents::AgentError> {
            let mut model = self.0.formulate(problem, structure, log)?;
            model.constraints.remove(0);
            Ok(model)
        }
        fn interpret_structure(
            &self,
            model: &OptimizationModel,
            log: &mut optverifier_core::trace::EventLog,
        ) -> Result<
            optverifier_core::structure_schema::ModelingStructure,
            optverifier_core::agents::AgentError,
        > {
            self.0.interpret_structure(model, log)
        }
        fn evaluate_structure(
            &self,
            reference: &optverifier_core::structure_schema::ModelingStructure,
            candidate: &optverifier_core::structure_schema::ModelingStructure,
            model: &OptimizationModel,
            log: &mut optverifier_core::trace::EventLog,
        ) -> Result<optverifier_core::agents::Verdict, optverifier_core::agents::AgentError>
        {
            self.0.evaluate_structure(reference, candidate, model, log)
        }
        fn interpret_solution(
            &self,
            problem: &ProblemInstance,
            model: &OptimizationModel,
            structure: &optverifier_core::structure_schema::ModelingStructure,
            solution: &Solution,
            log: &mut optverifier_core::trace::EventLog,
        ) -> Result<optverifier_core::agents::SolutionNarrative, optverifier_core::agents::AgentError>
        {
            self.0
                .interpret_solution(problem, model, structure, solution, log)
        }
        fn evaluate_solution(
            &self,
            problem: &ProblemInstance,
            model: &OptimizationModel,
            structure: &optverifier_core::structure_schema::ModelingStructure,
            solution: &Solution,
            narrative: &optverifier_core::agents::SolutionNarrative,
            feasibility: &optverifier_core::FeasibilityReport,
            log: &mut optverifier_core::trace::EventLog,
        ) -> Result<optverifier_core::agents::Verdict, optverifier_core::agents::AgentError>
        {
            self.0.evaluate_solution(
                problem,
                model,
                structure,
                solution,
                narrative,
                feasibility,
                log,
            )
        }
        fn refine(
            &self,
            problem: &ProblemInstance,
            structure: &optverifier_core::structure_schema::ModelingStructure,
            model: &OptimizationModel,
            comment: &str,
            log: &mut optverifier_core::trace::EventLog,
        ) -> Result<OptimizationModel, optverifier_core::agents::AgentError> {
            self.0.refine(problem, structure, model, comment, log)
        }
    }
    let record = run_pipeline(
        &DropFirst(MockAgents::new()),
        &problem,
        &PipelineConfig::default(),
    );
    assert!(record.outcome.is_accepted());
    assert_eq!(record.refinements.len(), 1);
    assert_eq!(record.totals.agent_calls, 10);
    pass("efficiency accounting: totals equal event sums; 7 happy-path calls, 10 with one refinement round");
}
