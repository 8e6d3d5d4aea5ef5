//! Ready-to-run example configs, one per experiment.

use cocycle_lab::cocycles::perturb_generator;
use cocycle_lab::{CocycleGenerator, Matrix};
use serde_json::{json, Value};

use crate::config::{ExperimentKind, FORMAT_VERSION};

fn gen(g: CocycleGenerator<f64>) -> Value {
    serde_json::to_value(g).expect("generator serializes")
}

/// Params block of the demo config for `kind`.
pub fn demo_params(kind: ExperimentKind) -> Value {
    let trig = CocycleGenerator::random_trig(2, 3, 1.0, 2);
    match kind {
        ExperimentKind::FlowSpectrum => json!({
            "generator": gen(CocycleGenerator::dynamical()),
            "horizon": 10000.0,
            "renorm_dt": 0.5,
        }),
        ExperimentKind::MapSpectrum => json!({
            "random": { "n_cases": 100, "dims": [2, 3, 4], "length": 2000, "seed": 0 },
            "discard": 1000,
        }),
        ExperimentKind::SectionSample => json!({ "n_returns": 500 }),
        ExperimentKind::Bunching => json!({
            "generator": gen(trig),
            "n_points": 50,
            "theta": 0.9,
            "t_grid": [0.5, 1.0, 2.0],
            "n_returns": 200,
        }),
        ExperimentKind::SplittingCheck => json!({ "n_samples": 500, "sampling": "section" }),
        ExperimentKind::RelationCheck => json!({ "generator": gen(trig), "horizon": 2000.0 }),
        ExperimentKind::SuspensionCheck => json!({ "generator": gen(trig), "n_returns": 100 }),
        ExperimentKind::SimplicityScan => json!({
            "dim": 2,
            "epsilon_grid": [0.05, 0.1, 0.2],
            "n_seeds": 50,
            "horizon": 2000.0,
            "bunching": { "theta": 0.9 },
        }),
        ExperimentKind::OpennessProbe => {
            let g = perturb_generator(&CocycleGenerator::constant(&Matrix::from_diag(&[0.3, -0.3])), 0.1, 1)
                .expect("valid generator");
            json!({
                "generator": gen(g),
                "delta_grid": [0.0, 0.01, 0.02, 0.05, 0.1],
                "n_seeds": 10,
                "horizon": 1000.0,
            })
        }
        ExperimentKind::Birkhoff => json!({ "n_initial": 6, "horizon": 1000.0, "compare_doubled": true }),
    }
}

pub fn demo_config(kind: ExperimentKind) -> Value {
    json!({
        "format_version": FORMAT_VERSION,
        "experiment": kind,
        "output_dir": format!("results/{}", kind.name()),
        "params": demo_params(kind),
    })
}
