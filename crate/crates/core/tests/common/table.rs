//! Database fixture carrying reference worst-case shot estimates for a
//! 60-variable weighted MaxCut at edge density 0.4.
//!
//! Each valid row is an exponential fit with κ ≡ 1 and A = 1, so that
//! `(κ/ε*)² = value` at n = 60, and a constant call count of 1e5.
//! Non-characterizable rows carry no valid fit.

#![allow(dead_code)]

use decitree_core::builders::HyperValues;
use decitree_core::problem::{formulate_problem, MaxCut, ProblemInstance, QuboMatrix};
use decitree_core::scalability::{
    CallsFit, Feasibility, Hypothesis, KappaFit, RecordProvenance, ScalingDatabase, ScalingFit, ScalingRecord,
};
use decitree_core::vqa::AnsatzSpec;

pub const N: usize = 60;
pub const DENSITY: f64 = 0.4;
pub const CALLS: f64 = 1e5;

/// (vqa, optimizer, value, status)
pub const ROWS: &[(&str, &str, Option<f64>, Feasibility)] = &[
    ("vqe", "ngd", Some(1.9e6), Feasibility::Feasible),
    ("vqe", "powell", Some(6.5e12), Feasibility::Feasible),
    ("vqe", "nft", Some(1.9e15), Feasibility::Infeasible),
    ("vqe", "cobyla", None, Feasibility::NotCharacterizable),
    ("vqe", "spsa", None, Feasibility::NotCharacterizable),
    ("ma_qaoa", "powell", Some(5.8e14), Feasibility::Infeasible),
    ("ma_qaoa", "cobyla", Some(1.4e22), Feasibility::Infeasible),
    ("ma_qaoa", "ngd", Some(8.3e51), Feasibility::Infeasible),
    ("ma_qaoa", "nft", None, Feasibility::NotCharacterizable),
    ("ma_qaoa", "spsa", None, Feasibility::NotCharacterizable),
    ("qaoa_plus", "powell", Some(3.6e80), Feasibility::Infeasible),
    ("qaoa_plus", "ngd", None, Feasibility::NotCharacterizable),
    ("qaoa_plus", "nft", None, Feasibility::NotCharacterizable),
    ("qaoa_plus", "spsa", None, Feasibility::NotCharacterizable),
    ("qaoa_plus", "cobyla", None, Feasibility::NotCharacterizable),
    ("dc_qaoa", "powell", Some(1.6e25), Feasibility::Infeasible),
    ("dc_qaoa", "cobyla", Some(1.3e145), Feasibility::Infeasible),
    ("dc_qaoa", "ngd", None, Feasibility::NotCharacterizable),
    ("dc_qaoa", "nft", None, Feasibility::NotCharacterizable),
    ("dc_qaoa", "spsa", None, Feasibility::NotCharacterizable),
    ("qaoa", "powell", Some(9.1e19), Feasibility::Infeasible),
    ("qaoa", "spsa", Some(1.5e62), Feasibility::Infeasible),
    ("qaoa", "cobyla", Some(2.6e144), Feasibility::Infeasible),
    ("qaoa", "ngd", None, Feasibility::NotCharacterizable),
    ("qaoa", "nft", None, Feasibility::NotCharacterizable),
];

fn ansatz(vqa: &str) -> AnsatzSpec {
    match vqa {
        "vqe" => AnsatzSpec::HardwareEfficient { layers: 2 },
        "ma_qaoa" => AnsatzSpec::MaQaoa { p: 1 },
        "qaoa_plus" => AnsatzSpec::QaoaPlus { p: 1 },
        "dc_qaoa" => AnsatzSpec::DcQaoa { p: 5 },
        "qaoa" => AnsatzSpec::Qaoa { p: 5 },
        other => panic!("no fixture ansatz for {other}"),
    }
}

fn fit(hypothesis: Hypothesis, value: Option<f64>) -> ScalingFit {
    let n = N as f64;
    let (a, b, valid) = match (hypothesis, value) {
        (Hypothesis::Exponential, Some(v)) => (1.0, v.ln() / (2.0 * n), true),
        // below-threshold fits for the other hypotheses
        (Hypothesis::PowerLaw, Some(v)) => (1.0, v.ln() / (4.0 * n.ln()), true),
        (Hypothesis::Logarithmic, Some(_)) => (1.0, 0.1, false),
        (_, None) => (1.0, -0.1, false),
    };
    ScalingFit {
        hypothesis,
        a,
        b,
        covariance: [[0.0; 2]; 2],
        r_squared: if valid { 0.95 } else { 0.3 },
        valid,
        n_range: (4, 12),
    }
}

pub fn database() -> ScalingDatabase {
    let mut db = ScalingDatabase::default();
    for (i, (vqa, opt, value, _)) in ROWS.iter().enumerate() {
        for h in Hypothesis::ALL {
            db.records.push(ScalingRecord {
                problem_type: "maxcut".into(),
                density: DENSITY,
                vqa: (*vqa).into(),
                optimizer: (*opt).into(),
                ansatz: ansatz(vqa),
                optimizer_hyperparams: HyperValues::new(),
                budget: 300,
                hypothesis: h,
                fit: Some(fit(h, *value)),
                fit_error: None,
                thresholds: Vec::new(),
                never_succeeds: if value.is_some() { Vec::new() } else { vec![4, 6] },
                no_crossing: Vec::new(),
                kappa: KappaFit { a: 1.0, b: 0.0, covariance: [[0.0; 2]; 2], samples: Vec::new() },
                calls: Some(CallsFit { c: CALLS, gamma: 0.0, covariance: [[0.0; 2]; 2], samples: Vec::new() }),
                fitted_n_range: (4, 12),
                provenance: RecordProvenance {
                    plan_hash: "fixture".into(),
                    seed: 0,
                    cell_index: i,
                    date: "2025-01-01".into(),
                },
            });
        }
    }
    db
}

pub fn instance() -> ProblemInstance {
    ProblemInstance::new(std::sync::Arc::new(MaxCut::random(N, DENSITY, true, 60).unwrap()), None).unwrap()
}

pub fn qubo() -> QuboMatrix {
    formulate_problem(&instance(), "standard").unwrap().qubo
}
