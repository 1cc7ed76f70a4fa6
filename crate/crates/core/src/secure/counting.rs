//! Counting backend: evaluates the predicate in plaintext fixed-point
//! arithmetic while charging the exact primitive counts and message schedule
//! of the sharing backend. This is what makes the large scalability sweeps
//! feasible at desk scale; both backends produce identical decisions and
//! identical counters on identical inputs.

use crate::fixed::FixedCoord;
use crate::model::TemporalMode;
use crate::secure::{expected_op_count, OpCounter, PrivateInputs, SecureConstraint};

/// Whether one (patient visit, user visit) pair passes the constraint, with
/// exactly the semantics of the share-based circuit: squared distances in
/// raw^2 scale against `encode(r)^2`, integer-second time differences.
pub fn pair_passes_fixed(
    px: FixedCoord,
    py: FixedCoord,
    pt: i64,
    ux: FixedCoord,
    uy: FixedCoord,
    ut: i64,
    constraint: &SecureConstraint,
) -> bool {
    let dx = (ux.raw as i64).wrapping_sub(px.raw as i64);
    let dy = (uy.raw as i64).wrapping_sub(py.raw as i64);
    let d2 = dx * dx + dy * dy;
    if (d2 as u64) > constraint.r_squared_raw {
        return false;
    }
    let x = ut - pt;
    match constraint.mode {
        TemporalMode::PatientEarlier => x >= 0 && (x as u64) <= constraint.delta,
        TemporalMode::Absolute => (x.unsigned_abs()) <= constraint.delta,
    }
}

/// Plaintext evaluation of the full `n1 x n2` predicate plus the counter
/// values the sharing backend would produce.
pub fn counting_predicate(
    server: &PrivateInputs,
    user: &PrivateInputs,
    constraint: &SecureConstraint,
) -> (bool, OpCounter) {
    let n1 = server.n();
    let n2 = user.n();
    if n1 == 0 || n2 == 0 {
        return (false, OpCounter::default());
    }
    let mut any = false;
    for i in 0..n1 {
        for j in 0..n2 {
            // no early exit, mirroring the oblivious loop
            any |= pair_passes_fixed(
                server.x[i],
                server.y[i],
                server.time[i],
                user.x[j],
                user.y[j],
                user.time[j],
                constraint,
            );
        }
    }
    (any, expected_op_count(n1, n2))
}
