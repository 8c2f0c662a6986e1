mod common;

use std::collections::BTreeMap;

use common::{gradcheck, op_cases, unet_gradcheck};

const TOLERANCE: f64 = 1e-3;

#[test]
fn every_op_matches_finite_differences() {
    let mut per_op: BTreeMap<&str, usize> = BTreeMap::new();
    let mut failures = Vec::new();
    for (i, case) in op_cases(42).into_iter().enumerate() {
        let r = gradcheck(&case.inputs, &case.f, 1e-3, 64, i as u64);
        *per_op.entry(case.op).or_default() += 1;
        if !(r.rel_error < TOLERANCE) {
            failures.push(format!("{} {}: rel error {:.2e}", case.op, case.shape, r.rel_error));
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
    for (op, n) in per_op {
        assert!(n >= 5, "{op} checked on only {n} shapes");
    }
}

#[test]
fn unet_matches_finite_differences() {
    for seed in [1, 2] {
        let r = unet_gradcheck(seed);
        assert!(r.checked > 100);
        assert!(r.rel_error < TOLERANCE, "seed {seed}: {r:?}");
    }
}
