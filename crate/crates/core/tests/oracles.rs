//! Grounding, postdiction and object projection against explicit-loop references.

mod common;

use common::oracle::*;
use mdst::config::StateWriteKeys;

const TOL: f64 = 1e-9;
const INSTANCES: u64 = 100;

#[test]
fn grounding_matches_reference() {
    for seed in 0..INSTANCES {
        let inst = instance(seed);
        for switching in [true, false] {
            let e = grounding_error(&inst, switching);
            assert!(e < TOL, "seed {seed} switching {switching}: {e:e}");
        }
    }
}

#[test]
fn postdiction_matches_reference() {
    for seed in 0..INSTANCES {
        let inst = instance(1000 + seed);
        for keys in [StateWriteKeys::Language, StateWriteKeys::ObjectAnchored] {
            let e = postdiction_error(&inst, keys);
            assert!(e < TOL, "seed {seed} keys {keys:?}: {e:e}");
        }
    }
}

#[test]
fn write_advances_the_round_counter() {
    let out = run(&instance(7), true, StateWriteKeys::ObjectAnchored);
    assert_eq!(out.round_after, out.round_before + 1);
}

#[test]
fn object_projection_matches_reference() {
    for seed in 0..INSTANCES {
        let e = projection_error(5000 + seed);
        assert!(e < TOL, "seed {seed}: {e:e}");
    }
}

#[test]
fn attention_rows_are_distributions() {
    for seed in 0..200 {
        if let Err(e) = shape_contract(&instance(9000 + seed)) {
            panic!("seed {seed}: {e}");
        }
    }
}
