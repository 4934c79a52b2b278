//! Condensed MPC QPs against brute-force oracles.

#[allow(dead_code)]
mod common;

#[test]
fn solver_matches_oracles() {
    let r = common::qp_oracle_check(50);
    println!("largest objective gap {:.3e} over {} instances", r.worst_gap, r.instances);
    assert!(r.enumerated >= 25);
    assert_eq!(r.infeasible, 0, "solutions outside the box");
    assert!(r.worst_gap <= 1e-6, "objective gap {:.3e}", r.worst_gap);
}
