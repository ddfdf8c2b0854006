use std::collections::BTreeMap;

use decitree_core::problem::{parse_instance, brute_force_optimum, QuboMatrix};
use decitree_core::query::{Automation, ScriptedAnswers};
use decitree_core::tree::{DecisionTree, NodeRegistry, PathSpec, RunOptions, RunResult, Services, TreeConfig};
use serde_json::{json, Value};

const BASIC: &str = include_str!("../../../configs/basic_tree.yaml");
const RECOMMEND: &str = include_str!("../../../configs/recommend_tree.yaml");
const ESTIMATE: &str = include_str!("../../../configs/estimate_tree.yaml");

fn tree(text: &str) -> DecisionTree {
    DecisionTree::build(TreeConfig::from_yaml(text).unwrap(), &NodeRegistry::with_builtin(), Services::default()).unwrap()
}

fn square() -> Value {
    json!({"problem_class": "maxcut", "nodes": 4, "edges": [[0,1],[1,2],[2,3],[3,0]]})
}

fn auto(t: &DecisionTree, inst: Value, path: &PathSpec) -> RunResult {
    t.run(inst, path, RunOptions::default()).unwrap()
}

#[test]
fn shipped_trees_validate() {
    for text in [BASIC, RECOMMEND, ESTIMATE] {
        let report = tree(text).validate();
        assert!(report.valid, "{report}");
    }
}

#[test]
fn default_route_is_qaoa_with_spsa() {
    let t = tree(BASIC);
    let r = auto(&t, square(), &PathSpec::new().with("shots", 0));
    assert!(r.is_completed(), "{:?}", r.status);
    assert_eq!(
        r.visited_path,
        ["load_problem", "encode_qubo", "algorithm_selection", "qaoa_setup", "optimizer_selection", "qaoa_run"]
    );
    let mut back = r.visited_path.clone();
    back.reverse();
    assert_eq!(r.backward_order, back);
    assert_eq!(r.problem_data["optimizer"]["id"], "spsa");
    let report = &r.result_entries["objective_report"];
    assert_eq!(report["bitstring"].as_str().unwrap().len(), 4);
    assert!(r.result_entries["algorithm_trace"]["n_calls"].as_u64().unwrap() > 0);
}

#[test]
fn classical_route_finds_the_optimum() {
    let t = tree(BASIC);
    let r = auto(&t, square(), &PathSpec::new().with("algorithm", "classical"));
    assert!(r.is_completed());
    assert_eq!(r.visited_path.last().unwrap(), "classical_solver");
    let bits = r.result_entries["solution_bitstring"].as_str().unwrap();
    assert!(bits == "0101" || bits == "1010", "{bits}");
    assert_eq!(r.result_entries["objective_report"]["objective_value"], json!(4.0));
}

#[test]
fn lr_qaoa_route_runs_without_an_optimizer() {
    let t = tree(BASIC);
    let path = PathSpec::new().with("algorithm", "lr_qaoa").with("depth", 3).with("shots", 0);
    let r = auto(&t, square(), &path);
    assert!(r.is_completed(), "{:?}", r.status);
    assert_eq!(r.visited_path.last().unwrap(), "lr_qaoa_run");
    assert!(!r.problem_data.contains_key("optimizer"));
    assert_eq!(r.problem_data["ansatz"]["p"], 3);
}

#[test]
fn vqe_route_with_tuned_optimizer() {
    let t = tree(BASIC);
    let path = PathSpec::new()
        .with("algorithm", "vqe")
        .with("depth", 1)
        .with("optimizer", "nft")
        .with("budget", 60)
        .with("shots", 0);
    let r = auto(&t, square(), &path);
    assert!(r.is_completed(), "{:?}", r.status);
    assert_eq!(r.visited_path.last().unwrap(), "vqe_run");
    assert_eq!(r.problem_data["optimizer"]["id"], "nft");
    assert!(r.result_entries["algorithm_trace"]["n_calls"].as_u64().unwrap() <= 60);
}

#[test]
fn knapsack_solution_is_decoded_to_items() {
    let t = tree(BASIC);
    let inst = json!({"problem_class": "knapsack", "values": [3.0, 4.0, 5.0], "weights": [2, 3, 4], "capacity": 5});
    let r = auto(&t, inst.clone(), &PathSpec::new().with("algorithm", "classical"));
    assert!(r.is_completed(), "{:?}", r.status);
    let bits = r.result_entries["solution_bitstring"].as_str().unwrap();
    assert_eq!(bits.len(), 3);
    assert_eq!(bits, "110");
    assert_eq!(r.result_entries["objective_report"]["feasible"], true);

    let parsed = parse_instance(&inst.to_string()).unwrap();
    let rows: Vec<Vec<f64>> = serde_json::from_value(r.problem_data["qubo_matrix"].clone()).unwrap();
    let (_, opt) = brute_force_optimum(&QuboMatrix::from_rows(&rows).unwrap()).unwrap();
    assert_eq!(r.result_entries["qubo_value"], json!(opt));
    assert_eq!(parsed.num_variables(), 3);
}

#[test]
fn scripted_manual_run_matches_automatic_run() {
    let t = tree(BASIC);
    let cases = [
        PathSpec::new(),
        PathSpec::new().with("algorithm", "vqe").with("budget", 40),
        PathSpec::new().with("algorithm", "classical"),
        PathSpec::new().with("algorithm", "lr_qaoa").with("shots", 0),
    ];
    for path in cases {
        let a = auto(&t, square(), &path);
        assert!(a.is_completed());
        let script: BTreeMap<String, Value> = a.queries.iter().map(|q| (q.id.clone(), q.value.clone())).collect();
        let mut source = ScriptedAnswers::from_map(script);
        let m = t
            .run(
                square(),
                &path,
                RunOptions {
                    mode: Some(Automation::Manual),
                    source: Some(&mut source),
                    ..Default::default()
                },
            )
            .unwrap();
        assert_eq!(a.content(), m.content());
    }
}

#[test]
fn manual_run_without_answers_aborts() {
    let t = tree(BASIC);
    let mut source = ScriptedAnswers::new();
    let r = t
        .run(
            square(),
            &PathSpec::new(),
            RunOptions {
                mode: Some(Automation::Manual),
                source: Some(&mut source),
                ..Default::default()
            },
        )
        .unwrap();
    assert!(!r.is_completed());
    assert_eq!(source.asked(), ["algorithm"]);
}

#[test]
fn unknown_path_key_is_rejected() {
    let t = tree(BASIC);
    assert!(t.run(square(), &PathSpec::new().with("colour", "red"), RunOptions::default()).is_err());
}

#[test]
fn trees_without_database_skip_assessment() {
    for text in [RECOMMEND, ESTIMATE] {
        let r = auto(&tree(text), square(), &PathSpec::new().with("shots", 0).with("budget", 30));
        assert!(r.is_completed(), "{:?}", r.status);
        assert!(r.problem_data["scalability_assessment"].is_null());
        assert!(r.notes.iter().any(|n| n.contains("no scaling database")));
    }
}
