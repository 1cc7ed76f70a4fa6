//! Domain types, the exact plaintext contact oracle, and effectiveness
//! metrics. Everything here is the ground truth that the privacy-preserving
//! protocols are measured against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 2-D point in abstract distance units on a pre-projected Cartesian plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub fn new(x: f64, y: f64) -> Self {
        Location { x, y }
    }
}

/// A visit: a location plus the time it was visited (seconds since epoch).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimestampedLocation {
    pub loc: Location,
    pub t: i64,
}

impl TimestampedLocation {
    pub fn new(x: f64, y: f64, t: i64) -> Self {
        TimestampedLocation {
            loc: Location::new(x, y),
            t,
        }
    }
}

/// An ordered list of visits. The length is public; the contents are not.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub visits: Vec<TimestampedLocation>,
}

impl Trajectory {
    pub fn new(visits: Vec<TimestampedLocation>) -> Self {
        Trajectory { visits }
    }

    pub fn len(&self) -> usize {
        self.visits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visits.is_empty()
    }
}

/// How the temporal constraint of a contact is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalMode {
    /// The patient must visit first: pass iff `0 <= t_user - t_patient <= delta`.
    PatientEarlier,
    /// Order-free: pass iff `|t_user - t_patient| <= delta`.
    Absolute,
}

/// Policy for the high-risk radius `r'` used by subset selection and by the
/// perturbed-location baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RPrimePolicy {
    /// Subset selection widens the contact radius by twice the expected
    /// perturbation radius (`2/eps'` per draw): `r' = r + 4/eps'`. The
    /// unverified baseline classifier resolves this policy to the contact
    /// radius `r` itself, since it has no verification step to absorb an
    /// inflated candidate radius.
    Auto,
    /// An explicit radius, used as-is by both consumers. Must be `>= r`.
    Fixed(f64),
}

impl RPrimePolicy {
    /// Radius used when selecting candidate locations for secure verification.
    pub fn subset_radius(&self, r: f64, per_loc_eps: f64) -> f64 {
        match self {
            RPrimePolicy::Auto => r + 4.0 / per_loc_eps,
            RPrimePolicy::Fixed(v) => *v,
        }
    }

    /// Radius used when the perturbed locations themselves are the verdict.
    pub fn baseline_radius(&self, r: f64) -> f64 {
        match self {
            RPrimePolicy::Auto => r,
            RPrimePolicy::Fixed(v) => *v,
        }
    }
}

/// Thresholds and budgets governing a contact-tracing run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    /// Distance threshold for a contact, in coordinate units.
    pub r: f64,
    /// Time difference threshold, in seconds.
    pub delta: i64,
    /// High-risk radius policy (see [`RPrimePolicy`]).
    pub r_prime: RPrimePolicy,
    /// Total per-user privacy budget, split across the user's locations.
    pub eps_user: f64,
    /// Budget protecting the patient side of subset selection.
    pub eps_patients: f64,
    pub temporal_mode: TemporalMode,
}

impl ContactParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::invalid("r must be positive and finite"));
        }
        if self.delta <= 0 {
            return Err(Error::invalid("delta must be positive"));
        }
        if let RPrimePolicy::Fixed(v) = self.r_prime {
            if !(v >= self.r && v.is_finite()) {
                return Err(Error::invalid("fixed r' must satisfy r' >= r"));
            }
        }
        if !(self.eps_user > 0.0 && self.eps_user.is_finite()) {
            return Err(Error::invalid("eps_user must be positive and finite"));
        }
        if !(self.eps_patients > 0.0 && self.eps_patients.is_finite()) {
            return Err(Error::invalid("eps_patients must be positive and finite"));
        }
        Ok(())
    }
}

impl Default for ContactParams {
    /// `r` and `delta` defaults are illustrative values (5 units, 2 days),
    /// not experimentally calibrated ones; override per deployment.
    fn default() -> Self {
        ContactParams {
            r: 5.0,
            delta: 172_800,
            r_prime: RPrimePolicy::Auto,
            eps_user: 4.0,
            eps_patients: 4.0,
            temporal_mode: TemporalMode::PatientEarlier,
        }
    }
}

/// Euclidean distance between two locations.
pub fn euclidean_distance(a: Location, b: Location) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    (dx * dx + dy * dy).sqrt()
}

/// Time difference under the given mode. `None` means the constraint is
/// unsatisfiable for this ordering (patient-earlier with `t_u < t_p`), which
/// is a value, not a fault.
pub fn time_difference(t_p: i64, t_u: i64, mode: TemporalMode) -> Option<i64> {
    match mode {
        TemporalMode::PatientEarlier => {
            if t_u >= t_p {
                Some(t_u - t_p)
            } else {
                None
            }
        }
        TemporalMode::Absolute => Some((t_u - t_p).abs()),
    }
}

/// The exact contact oracle: true iff some user visit is within `r` of some
/// patient visit and the time constraint holds. All protocol outputs are
/// judged against this.
pub fn is_contact_exact(l_u: &Trajectory, l_p: &Trajectory, params: &ContactParams) -> bool {
    l_u.visits.iter().any(|vu| {
        l_p.visits.iter().any(|vp| {
            euclidean_distance(vu.loc, vp.loc) <= params.r
                && time_difference(vp.t, vu.t, params.temporal_mode)
                    .is_some_and(|dt| dt <= params.delta)
        })
    })
}

/// Confusion counts plus the derived effectiveness measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub accuracy: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Compare predictions against ground truth. Divisions with a zero
/// denominator yield 0 so empty-positive populations still produce reports.
pub fn confusion_metrics(predicted: &[bool], truth: &[bool]) -> Result<Metrics> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid(format!(
            "prediction/truth length mismatch: {} vs {}",
            predicted.len(),
            truth.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let recall = ratio(tp, tp + fn_);
    let precision = ratio(tp, tp + fp);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let accuracy = ratio(tp + tn, tp + fp + tn + fn_);
    Ok(Metrics {
        tp,
        fp,
        tn,
        fn_,
        recall,
        precision,
        f1,
        accuracy,
    })
}
