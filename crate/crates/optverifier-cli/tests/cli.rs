//! Exit-code and artifact contract of the command-line interface.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn optverifier() -> Command {
    Command::new(env!("CARGO_BIN_EXE_optverifier"))
}

fn run(args: &[&str]) -> Output {
    optverifier().args(args).output().expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn write(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

fn knapsack_description(dir: &Path) -> PathBuf {
    let path = dir.join("knapsack.txt");
    write(
        &path,
        "Choose item quantities for a knapsack with weight capacity 60: \
         values 17, 4, 10, 21, 12, 18 and weights 23, 6, 14, 30, 15, 25. Maximize value.",
    );
    path
}

#[test]
fn run_with_mock_agents_accepts_and_writes_record() {
    let dir = tempfile::tempdir().unwrap();
    let description = knapsack_description(dir.path());
    let record_path = dir.path().join("record.json");
    let output = run(&[
        "--mock-agents",
        "--out",
        record_path.to_str().unwrap(),
        "run",
        description.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    assert!(
        stdout(&output).contains("objective 48"),
        "{}",
        stdout(&output)
    );
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&record_path).unwrap()).unwrap();
    assert_eq!(record["outcome"]["kind"], "accepted");
    assert_eq!(record["totals"]["agent_calls"], 7);
}

#[test]
fn run_missing_file_is_config_error() {
    let output = run(&["--mock-agents", "run", "/nonexistent/problem.txt"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn replay_without_cassette_entry_fails_with_miss() {
    let dir = tempfile::tempdir().unwrap();
    let description = knapsack_description(dir.path());
    let cassette = dir.path().join("empty.jsonl");
    write(&cassette, "");
    let output = run(&[
        "--cassette",
        cassette.to_str().unwrap(),
        "replay",
        description.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3), "stderr: {}", stderr(&output));
    assert!(
        stderr(&output).contains("replay miss"),
        "{}",
        stderr(&output)
    );
}

#[test]
fn replay_requires_cassette_flag() {
    let dir = tempfile::tempdir().unwrap();
    let description = knapsack_description(dir.path());
    let output = run(&["replay", description.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn record_without_api_key_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let description = knapsack_description(dir.path());
    let cassette = dir.path().join("recorded.jsonl");
    let output = optverifier()
        .env_remove("OPTVERIFIER_API_KEY")
        .args([
            "--cassette",
            cassette.to_str().unwrap(),
            "record",
            description.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("OPTVERIFIER_API_KEY"));
}

#[test]
fn bench_with_mocks_prints_accuracy_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("instances.jsonl");
    write(
        &dataset,
        concat!(
            "{\"id\": \"knapsack\", \"description\": \"Fill a knapsack with weight capacity 60.\", \"ground_truth_objective\": 48.0, \"difficulty\": \"easy\"}\n",
            "{\"id\": \"fishery\", \"description\": \"A fishery ships fish by sled dogs or trucks under a budget.\", \"ground_truth_objective\": 3000.0, \"difficulty\": \"easy\"}\n",
            "{\"id\": \"maxflow\", \"description\": \"Maximize water transfer through canals between nine reservoirs.\", \"ground_truth_objective\": 4.0, \"difficulty\": \"medium\"}\n",
        ),
    );
    let stem = dir.path().join("report");
    let output = run(&[
        "--mock-agents",
        "--out",
        stem.to_str().unwrap(),
        "bench",
        dataset.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    assert!(
        stdout(&output).contains("solving accuracy (SA): 1.0000"),
        "{}",
        stdout(&output)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json")).unwrap())
            .unwrap();
    assert_eq!(report["aggregates"]["sa_micro"], 1.0);
    assert!(stem.with_extension("md").exists());
}

#[test]
fn bench_empty_dataset_reports_na_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("empty.jsonl");
    write(&dataset, "");
    let stem = dir.path().join("report");
    let output = run(&[
        "--mock-agents",
        "--out",
        stem.to_str().unwrap(),
        "bench",
        dataset.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    assert!(stdout(&output).contains("n/a"));
}

#[test]
fn bench_malformed_dataset_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("bad.jsonl");
    write(
        &dataset,
        "{\"id\": \"x\", \"description\": \"ok\"}\nnot json at all\n",
    );
    let output = run(&["--mock-agents", "bench", dataset.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("line 2"));
}

#[test]
fn verify_bench_runs_study_on_fixture_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cases_dir = dir.path().join("cases");
    std::fs::create_dir(&cases_dir).unwrap();
    for case in optverifier_core::evalbench::synth_study_positives(5, 2) {
        let path = cases_dir.join(format!("{}.json", case.id));
        write(&path, &serde_json::to_string_pretty(&case).unwrap());
    }
    let output = run(&[
        "--mock-agents",
        "--seed",
        "3",
        "verify-bench",
        cases_dir.to_str().unwrap(),
        "--k",
        "9",
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("6 positives, 60 samples total"), "{text}");
    assert!(text.contains("| easy |"), "{text}");
}

#[test]
fn verify_bench_empty_dir_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(&[
        "--mock-agents",
        "verify-bench",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn lint_flags_undeclared_symbols() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    write(
        &model,
        r#"{
            "parameters": [],
            "variables": [{"symbol": "Output", "definition": "units", "type": "integer", "shape": []}],
            "constraints": [{"name": "Cap", "description": "limit", "formulation": "Output <= MissingLimit"}],
            "objective": [{"description": "max", "formulation": "Output", "objective_sense": "Maximize"}]
        }"#,
    );
    let output = run(&["lint", model.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(3));
    assert!(stdout(&output).contains("UndeclaredSymbol"));
}

#[test]
fn cassette_list_prints_entry_count() {
    let dir = tempfile::tempdir().unwrap();
    let cassette = dir.path().join("c.jsonl");
    write(
        &cassette,
        "{\"meta\": {\"model_name\": \"m\"}}\n\
         {\"fp\": \"a\", \"response\": {\"content\": \"x\", \"prompt_tokens\": 1, \"completion_tokens\": 1}}\n\
         {\"fp\": \"b\", \"response\": {\"content\": \"y\", \"prompt_tokens\": 1, \"completion_tokens\": 1}}\n",
    );
    let output = run(&["cassette", "list", cassette.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(0));
    assert!(stdout(&output).contains("2 entries"));
}

#[test]
fn solve_reports_infeasible_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    write(
        &model,
        r#"{
            "parameters": [],
            "variables": [{"symbol": "Amount", "definition": "units", "type": "integer", "shape": []}],
            "constraints": [
                {"name": "AtLeastOne", "description": "", "formulation": "Amount >= 1"},
                {"name": "AtMostZero", "description": "", "formulation": "Amount <= 0"}
            ],
            "objective": [{"description": "max", "formulation": "Amount", "objective_sense": "Maximize"}]
        }"#,
    );
    let output = run(&["solve", model.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    assert!(stdout(&output).contains("status: infeasible"));
}

#[test]
fn config_file_overrides_defaults_and_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.conf");
    write(
        &good,
        "# comment\nmax_total_refinements = 1\nmodel_name = test-model\n",
    );
    let description = knapsack_description(dir.path());
    let output = run(&[
        "--mock-agents",
        "--config",
        good.to_str().unwrap(),
        "run",
        description.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));

    let bad = dir.path().join("bad.conf");
    write(&bad, "no_such_key = 1\n");
    let output = run(&[
        "--mock-agents",
        "--config",
        bad.to_str().unwrap(),
        "run",
        description.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn bench_with_worker_pool_matches_sequential_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("instances.jsonl");
    write(
        &dataset,
        concat!(
            "{\"id\": \"k1\", \"description\": \"A knapsack with weight capacity 60.\", \"ground_truth_objective\": 48.0}\n",
            "{\"id\": \"f1\", \"description\": \"A fishery ships fish by sled dogs or trucks.\", \"ground_truth_objective\": 3000.0}\n",
            "{\"id\": \"m1\", \"description\": \"Maximize flow through canals between reservoirs.\", \"ground_truth_objective\": 4.0}\n",
            "{\"id\": \"k2\", \"description\": \"Another knapsack with weight capacity 60.\", \"ground_truth_objective\": 48.0}\n",
        ),
    );
    let stem = dir.path().join("parallel");
    let output = run(&[
        "--mock-agents",
        "--jobs",
        "3",
        "--out",
        stem.to_str().unwrap(),
        "bench",
        dataset.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json")).unwrap())
            .unwrap();
    assert_eq!(report["aggregates"]["sa_micro"], 1.0);
    // Instance order in the report follows dataset order despite the pool.
    assert_eq!(report["instances"][0]["id"], "k1");
    assert_eq!(report["instances"][3]["id"], "k2");
}

#[test]
fn solve_binds_external_csv_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    write(
        &model,
        r#"{
            "parameters": [
                {"symbol": "Plots", "definition": "Number of plots.", "value": 3, "shape": []},
                {"symbol": "PlotYield", "definition": "Yield per plot.", "value": {"external": "yields.csv"}, "shape": [3]}
            ],
            "variables": [
                {"symbol": "PlantChoice", "definition": "1 when a plot is planted.", "type": "binary", "shape": [3]}
            ],
            "constraints": [
                {"name": "Pick Two", "description": "Plant at most two plots.", "formulation": "sum(i in Plots, PlantChoice[i]) <= 2"}
            ],
            "objective": [
                {"description": "Maximize yield.", "formulation": "sum(i in Plots, PlotYield[i] * PlantChoice[i])", "objective_sense": "Maximize"}
            ]
        }"#,
    );
    let csv = dir.path().join("yields.csv");
    write(&csv, "PlotYield\n5\n9\n7\n");
    let output = run(&[
        "solve",
        model.to_str().unwrap(),
        "--bindings",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    assert!(
        stdout(&output).contains("objective: 16"),
        "{}",
        stdout(&output)
    );
}
