// temporary diagnostic (not committed)
//! Verifies that the `search-bench` model kind compiles to the exact layer
//! geometry of the library convergence fixture, then replays the proven
//! search run through the CLI-equivalent path.

use cim_aq::oracle::{synthetic_layers, AccuracyOracle, SyntheticOracle};
use cim_aq::search::{brute_force_best, search, ConstraintMode, SearchParams};
use cimforge_core::builder::{self, calib_inputs};
use cimforge_core::compiler::compile;
use cimforge_core::quantizer::qdq_from_float;
use cimforge_core::target::CimTarget;

#[test]
fn search_bench_matches_convergence_fixture() {
    let target = CimTarget::reference();

    let float = builder::search_bench_float(0);
    let calib = calib_inputs(&float, 0, 4);
    let qdq = qdq_from_float(&float, &calib, 8, 8, true).unwrap();
    let compiled = compile(&qdq, &target).unwrap();
    let descs = compiled.layer_descs();

    let expected = synthetic_layers(5, 42);
    assert_eq!(descs.len(), expected.len());
    for (d, e) in descs.iter().zip(expected.iter()) {
        println!(
            "compiled ({}, {}, {})  expected ({}, {}, {})",
            d.m, d.n, d.v, e.m, e.n, e.v
        );
    }
    for (d, e) in descs.iter().zip(expected.iter()) {
        assert_eq!((d.m, d.n, d.v), (e.m, e.n, e.v));
        assert_eq!(d.kind, e.kind);
    }

    let oracle = SyntheticOracle::new(30, 5);
    let params = SearchParams {
        episodes: 300,
        seed: 0,
        constraint_mode: ConstraintMode::None,
        acc_loss: 5.0,
    };
    let result = search(&descs, &oracle, &target, &params).unwrap();
    let best = brute_force_best(&descs, &oracle, &target, params.constraint_mode, params.acc_loss)
        .unwrap();
    let ratio = result.best_reward / best.reward;
    println!(
        "search seed 0: best {:.3} / opt {:.3} = ratio {:.4} bits {:?}",
        result.best_reward, best.reward, ratio, result.best_bits
    );
    assert!(ratio >= 0.95, "ratio {ratio:.4} below 0.95");
}
