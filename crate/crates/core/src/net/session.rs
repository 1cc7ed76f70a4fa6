//! Client and server halves of a classification session over a socket.
//!
//! Session shape (client-first): HELLO carrying the protocol version, the
//! method, and the public user id, acknowledged by the server. Then per
//! method:
//!
//! * perturbed-location baseline: PERTURBED_SET in, RESULT out.
//! * secure baseline: straight into the predicate exchange (SIZES,
//!   DEALER_POOL, MASKED_OPENING stream), RESULT out.
//! * combined pipeline: PERTURBED_SET in, NOISY_INDEXES out, then the
//!   predicate exchange over the selected subset, RESULT out.
//!
//! The dealer runs co-located with the server process but is logically
//! separate; DEALER_POOL frames deliver the client's pool shares. A version
//! mismatch or method mismatch is answered with an ERROR frame and the
//! connection is dropped.

use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::fixed::{decode_fixed, encode_fixed, FixedCoord};
use crate::geo::{perturb_location_set, Budget, PerturbedSet};
use crate::model::{Location, Trajectory};
use crate::net::channel::{FrameChannel, TcpChannel};
use crate::net::frame::{wire, MessageType, PROTOCOL_VERSION};
use crate::protocols::{
    prepare_mpc_inputs, stream_label, subset_selection, ClassificationResult, Method,
    PrivateInputs, ServerState,
};
use crate::rng::RngStream;
use crate::secure::{
    eval_contact_predicate, OpCounter, Party, SecureConstraint, SecureSession,
};

/// ERROR frame codes.
mod err_code {
    pub const VERSION_MISMATCH: u8 = 1;
    pub const METHOD_MISMATCH: u8 = 2;
    pub const PROTOCOL: u8 = 3;
}

fn method_tag(m: Method) -> u8 {
    match m {
        Method::Mpc => 0,
        Method::Geoi => 1,
        Method::Cg => 2,
    }
}

fn method_from_tag(tag: u8) -> Result<Method> {
    match tag {
        0 => Ok(Method::Mpc),
        1 => Ok(Method::Geoi),
        2 => Ok(Method::Cg),
        other => Err(Error::protocol(format!("unknown method tag {other}"))),
    }
}

fn encode_perturbed(set: &PerturbedSet) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(4 + set.points.len() * 16);
    wire::put_u32(&mut payload, set.points.len() as u32);
    for p in &set.points {
        wire::put_u64(&mut payload, encode_fixed(p.x)?.raw);
        wire::put_u64(&mut payload, encode_fixed(p.y)?.raw);
    }
    Ok(payload)
}

fn decode_perturbed(payload: &[u8], eps_user: f64) -> Result<PerturbedSet> {
    let mut cur = wire::Cursor::new(payload);
    let n = cur.u32()? as usize;
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let x = decode_fixed(FixedCoord { raw: cur.u64()? });
        let y = decode_fixed(FixedCoord { raw: cur.u64()? });
        points.push(Location::new(x, y));
    }
    cur.finish()?;
    if n == 0 {
        return Err(Error::protocol("perturbed set must be non-empty"));
    }
    Ok(PerturbedSet {
        points,
        source_len: n,
        per_loc_eps: eps_user / n as f64,
    })
}

/// Results collected by a server run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerReport {
    pub results: Vec<ClassificationResult>,
}

/// A listening server running on a background thread.
pub struct ServerHandle {
    addr: SocketAddr,
    thread: thread::JoinHandle<Result<ServerReport>>,
}

impl ServerHandle {
    /// The bound address (useful with an ephemeral port).
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Wait for the server to finish serving its session budget.
    pub fn join(self) -> Result<ServerReport> {
        self.thread
            .join()
            .map_err(|_| Error::protocol("server thread panicked"))?
    }
}

/// Bind and serve on a background thread. With `max_sessions = None` the
/// server accepts connections forever; otherwise it returns its report after
/// that many sessions.
pub fn spawn_server(
    bind_addr: &str,
    state: ServerState,
    method: Method,
    seed: u64,
    max_sessions: Option<usize>,
) -> Result<ServerHandle> {
    let listener = TcpListener::bind(bind_addr)?;
    let addr = listener.local_addr()?;
    let thread = thread::spawn(move || serve(listener, state, method, seed, max_sessions));
    Ok(ServerHandle { addr, thread })
}

/// Blocking variant of [`spawn_server`].
pub fn run_server(
    bind_addr: &str,
    state: ServerState,
    method: Method,
    seed: u64,
    max_sessions: Option<usize>,
) -> Result<ServerReport> {
    spawn_server(bind_addr, state, method, seed, max_sessions)?.join()
}

fn serve(
    listener: TcpListener,
    state: ServerState,
    method: Method,
    seed: u64,
    max_sessions: Option<usize>,
) -> Result<ServerReport> {
    let state = Arc::new(state);
    let results = Arc::new(Mutex::new(Vec::new()));
    let mut handles = Vec::new();
    let mut served = 0usize;
    for conn in listener.incoming() {
        let stream = conn?;
        let state = Arc::clone(&state);
        let results = Arc::clone(&results);
        let run_seed = seed;
        handles.push(thread::spawn(move || {
            match serve_one(stream, &state, method, run_seed) {
                Ok(result) => results.lock().unwrap().push(result),
                Err(e) => eprintln!("session failed: {e}"),
            }
        }));
        served += 1;
        if let Some(max) = max_sessions {
            if served >= max {
                break;
            }
        }
    }
    for h in handles {
        let _ = h.join();
    }
    let mut results = Arc::try_unwrap(results)
        .map_err(|_| Error::protocol("session handler still running"))?
        .into_inner()
        .unwrap();
    results.sort_by_key(|r| r.user_id);
    Ok(ServerReport { results })
}

fn serve_one(
    stream: TcpStream,
    state: &ServerState,
    method: Method,
    run_seed: u64,
) -> Result<ClassificationResult> {
    let mut channel = TcpChannel::new(stream)?;
    let hello = channel.expect(MessageType::Hello)?;
    let mut cur = wire::Cursor::new(&hello.payload);
    let version = cur.u8()?;
    let client_method = method_from_tag(cur.u8()?)?;
    let user_id = cur.u64()?;
    cur.finish()?;
    if version != PROTOCOL_VERSION {
        channel.send(MessageType::Error, &[err_code::VERSION_MISMATCH])?;
        return Err(Error::Handshake(format!(
            "client speaks version {version}, server speaks {PROTOCOL_VERSION}"
        )));
    }
    if client_method != method {
        channel.send(MessageType::Error, &[err_code::METHOD_MISMATCH])?;
        return Err(Error::Handshake(format!(
            "client requested {client_method}, server serves {method}"
        )));
    }
    channel.send(MessageType::Hello, &hello.payload)?;

    let start = Instant::now();
    let user_stream = RngStream::from_seed(run_seed).split(user_id);
    let outcome = serve_session(&mut channel, state, method, user_id, &user_stream);
    match outcome {
        Ok((predicted, secure_ops)) => {
            channel.send(MessageType::Result, &[predicted as u8])?;
            Ok(ClassificationResult {
                user_id,
                predicted,
                secure_ops,
                wall_nanos: start.elapsed().as_nanos(),
            })
        }
        Err(e) => {
            let _ = channel.send(MessageType::Error, &[err_code::PROTOCOL]);
            Err(e)
        }
    }
}

fn serve_session(
    channel: &mut TcpChannel,
    state: &ServerState,
    method: Method,
    _user_id: u64,
    user_stream: &RngStream,
) -> Result<(bool, OpCounter)> {
    let constraint = SecureConstraint::from_params(&state.params)?;
    match method {
        Method::Geoi => {
            let frame = channel.expect(MessageType::PerturbedSet)?;
            let perturbed = decode_perturbed(&frame.payload, state.params.eps_user)?;
            let predicted = crate::protocols::geoi_baseline_classify(&perturbed, state);
            Ok((predicted, OpCounter::default()))
        }
        Method::Mpc => {
            run_server_predicate(channel, state, &constraint, user_stream)
        }
        Method::Cg => {
            let frame = channel.expect(MessageType::PerturbedSet)?;
            let perturbed = decode_perturbed(&frame.payload, state.params.eps_user)?;
            let mut rr_rng = user_stream.split(stream_label::RR);
            let selected = subset_selection(&perturbed, state, &mut rr_rng)?;
            let mut payload = Vec::with_capacity(4 + selected.len() * 4);
            wire::put_u32(&mut payload, selected.len() as u32);
            for &idx in &selected.indexes {
                wire::put_u32(&mut payload, idx as u32);
            }
            channel.send(MessageType::NoisyIndexes, &payload)?;
            run_server_predicate(channel, state, &constraint, user_stream)
        }
    }
}

fn run_server_predicate(
    channel: &mut TcpChannel,
    state: &ServerState,
    constraint: &SecureConstraint,
    user_stream: &RngStream,
) -> Result<(bool, OpCounter)> {
    let server_io = PrivateInputs::from_trajectory(&state.l_p)?;
    let mut dealer_rng = user_stream.split(stream_label::DEALER);
    // the session borrows the connection for the predicate exchange
    let mut session = SecureSession::new(Party::Server, BorrowedChannel(channel));
    let predicted = eval_contact_predicate(&mut session, &server_io, constraint, &mut dealer_rng)?;
    let ops = session.op_count();
    Ok((predicted, ops))
}

/// Adapter letting a session temporarily drive an existing channel.
struct BorrowedChannel<'a, C: FrameChannel>(&'a mut C);

impl<C: FrameChannel> FrameChannel for BorrowedChannel<'_, C> {
    fn send(&mut self, msg_type: MessageType, payload: &[u8]) -> Result<()> {
        self.0.send(msg_type, payload)
    }

    fn recv(&mut self) -> Result<crate::net::frame::Frame> {
        self.0.recv()
    }
}

/// Execute the client half of the chosen pipeline against a server.
///
/// `seed` must match the server's run seed for reproducible experiments; the
/// per-user streams are derived exactly as in the in-process pipelines, so a
/// loopback run and an in-process run of the same seed agree bit-for-bit on
/// decisions and counters.
pub fn run_client<A: ToSocketAddrs>(
    server_addr: A,
    user_id: u64,
    l_u: &Trajectory,
    method: Method,
    eps_user: f64,
    constraint: &SecureConstraint,
    seed: u64,
) -> Result<ClassificationResult> {
    let stream = TcpStream::connect(server_addr)?;
    let mut channel = TcpChannel::new(stream)?;
    let start = Instant::now();

    let mut hello = Vec::with_capacity(10);
    hello.push(PROTOCOL_VERSION);
    hello.push(method_tag(method));
    wire::put_u64(&mut hello, user_id);
    channel.send(MessageType::Hello, &hello)?;
    let ack = channel.recv()?;
    match ack.msg_type {
        MessageType::Hello => {}
        MessageType::Error => {
            let code = ack.payload.first().copied().unwrap_or(0);
            return Err(Error::Handshake(format!(
                "server rejected the session (code {code})"
            )));
        }
        other => return Err(Error::protocol(format!("unexpected ack {other:?}"))),
    }

    let user_stream = RngStream::from_seed(seed).split(user_id);
    let (own_predicted, secure_ops) = match method {
        Method::Geoi => {
            let mut geo_rng = user_stream.split(stream_label::GEO);
            let perturbed = perturb_location_set(Budget::new(eps_user)?, l_u, &mut geo_rng)?;
            channel.send(MessageType::PerturbedSet, &encode_perturbed(&perturbed)?)?;
            (None, OpCounter::default())
        }
        Method::Mpc => {
            let user_io = PrivateInputs::from_trajectory(l_u)?;
            let (p, ops) = run_client_predicate(&mut channel, &user_io, constraint, &user_stream)?;
            (Some(p), ops)
        }
        Method::Cg => {
            let mut geo_rng = user_stream.split(stream_label::GEO);
            let perturbed = perturb_location_set(Budget::new(eps_user)?, l_u, &mut geo_rng)?;
            channel.send(MessageType::PerturbedSet, &encode_perturbed(&perturbed)?)?;
            let frame = channel.expect(MessageType::NoisyIndexes)?;
            let mut cur = wire::Cursor::new(&frame.payload);
            let k = cur.u32()? as usize;
            let mut indexes = std::collections::BTreeSet::new();
            for _ in 0..k {
                indexes.insert(cur.u32()? as usize);
            }
            cur.finish()?;
            let selected = crate::protocols::NoisyIndexSet {
                indexes,
                universe_size: l_u.len(),
            };
            let user_io = prepare_mpc_inputs(l_u, &selected)?;
            let (p, ops) = run_client_predicate(&mut channel, &user_io, constraint, &user_stream)?;
            (Some(p), ops)
        }
    };

    let result = channel.expect(MessageType::Result)?;
    let server_predicted = match result.payload.as_slice() {
        [0] => false,
        [1] => true,
        _ => return Err(Error::protocol("malformed RESULT payload")),
    };
    if let Some(own) = own_predicted {
        if own != server_predicted {
            return Err(Error::protocol(
                "server RESULT disagrees with the jointly opened value",
            ));
        }
    }
    Ok(ClassificationResult {
        user_id,
        predicted: server_predicted,
        secure_ops,
        wall_nanos: start.elapsed().as_nanos(),
    })
}

fn run_client_predicate(
    channel: &mut TcpChannel,
    user_io: &PrivateInputs,
    constraint: &SecureConstraint,
    user_stream: &RngStream,
) -> Result<(bool, OpCounter)> {
    let mut mask_rng = user_stream.split(stream_label::CLIENT_MASKS);
    let mut session = SecureSession::new(Party::User, BorrowedChannel(channel));
    let predicted = eval_contact_predicate(&mut session, user_io, constraint, &mut mask_rng)?;
    let ops = session.op_count();
    Ok((predicted, ops))
}
