//! The three end-to-end classification pipelines over a population of users
//! against the server's patient set:
//!
//! * MPC baseline: the full trajectories go through the secure predicate.
//! * Perturbed-location baseline: the server classifies directly on the
//!   geo-indistinguishable locations; fast and noisy, no secure operations.
//! * Combined pipeline: perturbed locations select a noisy candidate index
//!   set under randomized response, and only that subset is verified by the
//!   secure predicate. A positive verdict always corresponds to a truly
//!   matching pair, so the pipeline adds no false positives beyond the
//!   fixed-point rounding quantum.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{perturb_location_set, randomized_response_bit, Budget, PerturbedSet};
use crate::model::{euclidean_distance, ContactParams, Trajectory};
use crate::net::channel::InMemoryChannel;
use crate::rng::RngStream;
use crate::secure::{
    counting_predicate, eval_contact_predicate, OpCounter, Party, SecureConstraint, SecureSession,
};

pub use crate::secure::PrivateInputs;

/// Stream labels under a user's per-user stream; both transports derive the
/// same labels so in-process and TCP runs make identical decisions.
pub mod stream_label {
    /// Client-side location perturbation.
    pub const GEO: u64 = 0;
    /// Server-side randomized response in subset selection.
    pub const RR: u64 = 1;
    /// Server-side dealer pools and input-share masks.
    pub const DEALER: u64 = 2;
    /// Client-side input-share masks.
    pub const CLIENT_MASKS: u64 = 3;
}

/// Classification method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mpc,
    Geoi,
    Cg,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Mpc => "mpc",
            Method::Geoi => "geoi",
            Method::Cg => "cg",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mpc" => Ok(Method::Mpc),
            "geoi" => Ok(Method::Geoi),
            "cg" => Ok(Method::Cg),
            other => Err(Error::invalid(format!(
                "unknown method '{other}' (expected mpc|geoi|cg)"
            ))),
        }
    }
}

/// Predicate backend: real shares over a channel, or the plaintext counting
/// simulation with identical decisions and counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Sharing,
    Counting,
}

/// The server's view: the union of patient visits and the run parameters.
/// Patient visits never leave this component in plaintext.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub l_p: Trajectory,
    pub params: ContactParams,
}

impl ServerState {
    pub fn new(l_p: Trajectory, params: ContactParams) -> Result<Self> {
        params.validate()?;
        Ok(ServerState { l_p, params })
    }
}

/// The randomized-response-perturbed set of 1-based high-risk location
/// indexes into a perturbed location set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoisyIndexSet {
    pub indexes: BTreeSet<usize>,
    pub universe_size: usize,
}

impl NoisyIndexSet {
    pub fn len(&self) -> usize {
        self.indexes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indexes.is_empty()
    }
}

/// Outcome of classifying one user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub user_id: u64,
    pub predicted: bool,
    pub secure_ops: OpCounter,
    pub wall_nanos: u128,
}

/// Server side of step 2: flag each perturbed location within the subset
/// radius of some patient visit, push every flag through randomized response
/// with the patient budget, and return the 1-based indexes that survived.
pub fn subset_selection(
    perturbed: &PerturbedSet,
    server: &ServerState,
    rng: &mut RngStream,
) -> Result<NoisyIndexSet> {
    let params = &server.params;
    let eps_p = Budget::new(params.eps_patients)?;
    let radius = params
        .r_prime
        .subset_radius(params.r, perturbed.per_loc_eps);
    let mut indexes = BTreeSet::new();
    for (i, point) in perturbed.points.iter().enumerate() {
        let flag = server
            .l_p
            .visits
            .iter()
            .any(|v| euclidean_distance(*point, v.loc) <= radius);
        if randomized_response_bit(flag, eps_p, rng) {
            indexes.insert(i + 1);
        }
    }
    Ok(NoisyIndexSet {
        indexes,
        universe_size: perturbed.points.len(),
    })
}

/// Client side of step 3: copy the coordinates and the (true) timestamps of
/// exactly the selected visits, in index order. Timestamps re-enter the
/// pipeline here; the perturbation step never saw them.
pub fn prepare_mpc_inputs(l_u: &Trajectory, selected: &NoisyIndexSet) -> Result<PrivateInputs> {
    let mut io = PrivateInputs::empty();
    for &idx in &selected.indexes {
        if idx == 0 || idx > l_u.len() {
            return Err(Error::invalid(format!(
                "index {idx} out of range for a {}-visit trajectory",
                l_u.len()
            )));
        }
        let v = &l_u.visits[idx - 1];
        io.x.push(crate::fixed::encode_fixed(v.loc.x)?);
        io.y.push(crate::fixed::encode_fixed(v.loc.y)?);
        io.time.push(v.t);
    }
    Ok(io)
}

/// The perturbed-location baseline: a user is classified positive iff some
/// perturbed point lies within the baseline decision radius of some patient
/// visit. Plaintext, timestamp-free, zero secure operations.
pub fn geoi_baseline_classify(perturbed: &PerturbedSet, server: &ServerState) -> bool {
    let radius = server.params.r_prime.baseline_radius(server.params.r);
    perturbed.points.iter().any(|p| {
        server
            .l_p
            .visits
            .iter()
            .any(|v| euclidean_distance(*p, v.loc) <= radius)
    })
}

/// Evaluate the secure predicate between the two input sets with the chosen
/// backend. The sharing backend runs both protocol halves over an in-memory
/// channel pair and cross-checks that they agree.
fn run_predicate(
    server_io: PrivateInputs,
    user_io: PrivateInputs,
    constraint: &SecureConstraint,
    dealer_rng: RngStream,
    client_rng: RngStream,
    backend: Backend,
) -> Result<(bool, OpCounter)> {
    match backend {
        Backend::Counting => Ok(counting_predicate(&server_io, &user_io, constraint)),
        Backend::Sharing => {
            let (ch_s, ch_u) = InMemoryChannel::pair();
            let constraint_s = *constraint;
            let mut dealer_rng = dealer_rng;
            let handle = thread::spawn(move || -> Result<(bool, OpCounter)> {
                let mut session = SecureSession::new(Party::Server, ch_s);
                let r =
                    eval_contact_predicate(&mut session, &server_io, &constraint_s, &mut dealer_rng)?;
                Ok((r, session.op_count()))
            });
            let mut session = SecureSession::new(Party::User, ch_u);
            let mut client_rng = client_rng;
            let predicted =
                eval_contact_predicate(&mut session, &user_io, constraint, &mut client_rng)?;
            let ops = session.op_count();
            let (peer_predicted, peer_ops) = handle
                .join()
                .map_err(|_| Error::protocol("server half panicked"))??;
            if peer_predicted != predicted || peer_ops != ops {
                return Err(Error::protocol("protocol halves disagree"));
            }
            Ok((predicted, ops))
        }
    }
}

/// MPC baseline for one user: the full trajectory on each side.
pub fn mpc_baseline_classify(
    user_id: u64,
    l_u: &Trajectory,
    server: &ServerState,
    backend: Backend,
    user_stream: &RngStream,
) -> Result<ClassificationResult> {
    let start = Instant::now();
    let constraint = SecureConstraint::from_params(&server.params)?;
    let server_io = PrivateInputs::from_trajectory(&server.l_p)?;
    let user_io = PrivateInputs::from_trajectory(l_u)?;
    let (predicted, secure_ops) = run_predicate(
        server_io,
        user_io,
        &constraint,
        user_stream.split(stream_label::DEALER),
        user_stream.split(stream_label::CLIENT_MASKS),
        backend,
    )?;
    Ok(ClassificationResult {
        user_id,
        predicted,
        secure_ops,
        wall_nanos: start.elapsed().as_nanos(),
    })
}

/// The combined pipeline for one user: perturb, select the noisy subset,
/// verify only the subset securely.
pub fn contactguard_classify(
    user_id: u64,
    l_u: &Trajectory,
    server: &ServerState,
    backend: Backend,
    user_stream: &RngStream,
) -> Result<ClassificationResult> {
    let start = Instant::now();
    if l_u.is_empty() {
        return Ok(ClassificationResult {
            user_id,
            predicted: false,
            secure_ops: OpCounter::default(),
            wall_nanos: start.elapsed().as_nanos(),
        });
    }
    let params = &server.params;
    let constraint = SecureConstraint::from_params(params)?;
    let mut geo_rng = user_stream.split(stream_label::GEO);
    let mut rr_rng = user_stream.split(stream_label::RR);
    let perturbed =
        perturb_location_set(Budget::new(params.eps_user)?, l_u, &mut geo_rng)?.quantized()?;
    let selected = subset_selection(&perturbed, server, &mut rr_rng)?;
    let user_io = prepare_mpc_inputs(l_u, &selected)?;
    let server_io = PrivateInputs::from_trajectory(&server.l_p)?;
    let (predicted, secure_ops) = run_predicate(
        server_io,
        user_io,
        &constraint,
        user_stream.split(stream_label::DEALER),
        user_stream.split(stream_label::CLIENT_MASKS),
        backend,
    )?;
    Ok(ClassificationResult {
        user_id,
        predicted,
        secure_ops,
        wall_nanos: start.elapsed().as_nanos(),
    })
}

/// The perturbed-location baseline for one user.
pub fn geoi_classify(
    user_id: u64,
    l_u: &Trajectory,
    server: &ServerState,
    user_stream: &RngStream,
) -> Result<ClassificationResult> {
    let start = Instant::now();
    let predicted = if l_u.is_empty() {
        false
    } else {
        let mut geo_rng = user_stream.split(stream_label::GEO);
        let perturbed =
            perturb_location_set(Budget::new(server.params.eps_user)?, l_u, &mut geo_rng)?
                .quantized()?;
        geoi_baseline_classify(&perturbed, server)
    };
    Ok(ClassificationResult {
        user_id,
        predicted,
        secure_ops: OpCounter::default(),
        wall_nanos: start.elapsed().as_nanos(),
    })
}

/// Classify one user with the selected method.
pub fn classify_user(
    user_id: u64,
    l_u: &Trajectory,
    server: &ServerState,
    method: Method,
    backend: Backend,
    run_stream: &RngStream,
) -> Result<ClassificationResult> {
    let user_stream = run_stream.split(user_id);
    match method {
        Method::Mpc => mpc_baseline_classify(user_id, l_u, server, backend, &user_stream),
        Method::Geoi => geoi_classify(user_id, l_u, server, &user_stream),
        Method::Cg => contactguard_classify(user_id, l_u, server, backend, &user_stream),
    }
}

/// Classify a whole population. Each user gets an independent stream split
/// from the run seed by user id, so results do not depend on evaluation
/// order. One user's failure aborts the run with that user's context.
pub fn classify_population(
    users: &[(u64, Trajectory)],
    server: &ServerState,
    method: Method,
    backend: Backend,
    run_stream: &RngStream,
) -> Result<Vec<ClassificationResult>> {
    users
        .iter()
        .map(|(id, l_u)| {
            classify_user(*id, l_u, server, method, backend, run_stream)
                .map_err(|e| Error::protocol(format!("user {id}: {e}")))
        })
        .collect()
}
