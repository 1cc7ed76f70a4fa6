//! The two-party secure contact predicate.
//!
//! Both parties run [`eval_contact_predicate`] symmetrically over a frame
//! channel: sizes are broadcast (trajectory lengths are public), the
//! co-located dealer provisions multiplication triples and random-bit
//! decompositions sized from those sizes, inputs are loaded as additive
//! shares, and every pair of visits is checked for the spatial and temporal
//! constraints on shares. Per-pair results are OR-accumulated as shares and
//! opened once at the end, so there is no data-dependent early exit: the
//! message count and every message length depend only on `(n1, n2)`.
//!
//! Comparisons reduce to extracting the most significant bit of a bounded
//! difference: the value is masked with a dealer-supplied random `r`, the
//! mask is opened, and the top bit of `opened - r` is recomputed from the
//! public opening and the shared bit decomposition of `r` with a 63-step
//! borrow chain.

mod counting;
mod dealer;
mod share;

pub use counting::{counting_predicate, pair_passes_fixed};
pub use dealer::{generate_pools, pool_requirements, BitEntry, PoolPair, TripleShare};
pub use share::{as_bit, reconstruct, share_secret, Party, Share};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed::{encode_fixed, encode_radius_squared, FixedCoord};
use crate::model::{ContactParams, TemporalMode, Trajectory};
use crate::net::channel::FrameChannel;
use crate::net::frame::{wire, MessageType};
use crate::rng::RngStream;

/// Counts of security primitives executed within a session. Comparisons are
/// counted as single primitives; the multiplications backing a comparison's
/// internal bit circuit are part of its price, not separate secure
/// multiplications.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OpCounter {
    pub secure_mults: u64,
    pub secure_cmps: u64,
    pub oblivious_loads: u64,
}

impl OpCounter {
    pub fn add(&mut self, other: OpCounter) {
        self.secure_mults += other.secure_mults;
        self.secure_cmps += other.secure_cmps;
        self.oblivious_loads += other.oblivious_loads;
    }
}

/// One party's private arrays for the predicate, fixed-point encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivateInputs {
    pub x: Vec<FixedCoord>,
    pub y: Vec<FixedCoord>,
    pub time: Vec<i64>,
}

impl PrivateInputs {
    pub fn empty() -> Self {
        PrivateInputs {
            x: Vec::new(),
            y: Vec::new(),
            time: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        debug_assert!(self.x.len() == self.y.len() && self.y.len() == self.time.len());
        self.x.len()
    }

    /// Encode a whole trajectory (the full-trajectory baseline input).
    pub fn from_trajectory(t: &Trajectory) -> Result<Self> {
        let mut io = PrivateInputs::empty();
        for v in &t.visits {
            io.x.push(encode_fixed(v.loc.x)?);
            io.y.push(encode_fixed(v.loc.y)?);
            io.time.push(v.t);
        }
        Ok(io)
    }
}

/// The public constraint evaluated on shares.
#[derive(Debug, Clone, Copy)]
pub struct SecureConstraint {
    /// `encode(r)^2`, in raw^2 scale.
    pub r_squared_raw: u64,
    pub delta: u64,
    pub mode: TemporalMode,
}

impl SecureConstraint {
    pub fn from_params(params: &ContactParams) -> Result<Self> {
        params.validate()?;
        Ok(SecureConstraint {
            r_squared_raw: encode_radius_squared(params.r)?,
            delta: params.delta as u64,
            mode: params.temporal_mode,
        })
    }
}

/// The stateful two-party session: role, channel, preprocessing pools, and
/// the primitive counters.
pub struct SecureSession<C: FrameChannel> {
    party: Party,
    channel: C,
    triples: VecDeque<TripleShare>,
    bits: VecDeque<BitEntry>,
    counter: OpCounter,
}

impl<C: FrameChannel> SecureSession<C> {
    pub fn new(party: Party, channel: C) -> Self {
        SecureSession {
            party,
            channel,
            triples: VecDeque::new(),
            bits: VecDeque::new(),
            counter: OpCounter::default(),
        }
    }

    pub fn party(&self) -> Party {
        self.party
    }

    /// Snapshot of the primitive counters.
    pub fn op_count(&self) -> OpCounter {
        self.counter
    }

    pub fn into_channel(self) -> C {
        self.channel
    }

    fn pop_triple(&mut self) -> Result<TripleShare> {
        self.triples
            .pop_front()
            .ok_or_else(|| Error::protocol("triple pool exhausted"))
    }

    fn pop_bit_entry(&mut self) -> Result<BitEntry> {
        self.bits
            .pop_front()
            .ok_or_else(|| Error::protocol("bit pool exhausted"))
    }

    /// Exchange equal-length vectors of ring elements with the peer under the
    /// MASKED_OPENING tag.
    fn exchange(&mut self, values: &[u64]) -> Result<Vec<u64>> {
        let mut payload = Vec::with_capacity(values.len() * 8);
        for v in values {
            wire::put_u64(&mut payload, *v);
        }
        self.channel.send(MessageType::MaskedOpening, &payload)?;
        let frame = self.channel.expect(MessageType::MaskedOpening)?;
        if frame.payload.len() != values.len() * 8 {
            return Err(Error::protocol(format!(
                "peer opening has {} bytes, expected {}",
                frame.payload.len(),
                values.len() * 8
            )));
        }
        let mut cur = wire::Cursor::new(&frame.payload);
        (0..values.len()).map(|_| cur.u64()).collect()
    }

    /// Open a shared value to both parties.
    fn open(&mut self, x: Share) -> Result<u64> {
        let peer = self.exchange(&[x.value])?;
        Ok(reconstruct(x.value, peer[0]))
    }

    /// Beaver multiplication without touching the public counter; backs both
    /// the counted multiplication and the comparison-internal bit circuit.
    fn raw_mul(&mut self, x: Share, y: Share) -> Result<Share> {
        let t = self.pop_triple()?;
        let d_share = x.value.wrapping_sub(t.a);
        let e_share = y.value.wrapping_sub(t.b);
        let peer = self.exchange(&[d_share, e_share])?;
        let d = d_share.wrapping_add(peer[0]);
        let e = e_share.wrapping_add(peer[1]);
        let mut z = t
            .c
            .wrapping_add(d.wrapping_mul(t.b))
            .wrapping_add(e.wrapping_mul(t.a));
        if self.party == Party::Server {
            z = z.wrapping_add(d.wrapping_mul(e));
        }
        Ok(Share::new(z, self.party))
    }

    /// Secure multiplication: one consumed triple, two masked openings, one
    /// counted primitive.
    pub fn beaver_mul(&mut self, x: Share, y: Share) -> Result<Share> {
        let z = self.raw_mul(x, y)?;
        self.counter.secure_mults += 1;
        Ok(z)
    }

    /// Shares of the most significant bit of `x`.
    ///
    /// Opens `x + r` for a dealer-supplied random `r` (uniform, so the
    /// opening carries no information), then rebuilds bit 63 of
    /// `opened - r` from the public opening and the shared bits of `r` via
    /// the subtraction borrow chain. Exactly 64 internal multiplications and
    /// one opening regardless of the data.
    fn msb_extract(&mut self, x: Share) -> Result<Share> {
        let entry = self.pop_bit_entry()?;
        let masked = x + Share::new(entry.r, self.party);
        let m = self.open(masked)?;
        // borrow into bit 0 is the zero sharing; the first multiplication
        // runs on it anyway to keep the loop uniform
        let mut borrow = Share::public(0, self.party);
        for j in 0..63 {
            let r_j = Share::new(entry.bits[j], self.party);
            let t = self.raw_mul(r_j, borrow)?;
            borrow = if (m >> j) & 1 == 0 {
                // borrow' = r_j OR borrow
                r_j + borrow - t
            } else {
                // borrow' = r_j AND borrow
                t
            };
        }
        let r_63 = Share::new(entry.bits[63], self.party);
        let t = self.raw_mul(r_63, borrow)?;
        let xor = r_63 + borrow - t.mul_public(2);
        let msb = if (m >> 63) & 1 == 1 {
            Share::public(1, self.party) - xor
        } else {
            xor
        };
        Ok(msb)
    }

    /// Shares of the bit `a <= b`. Callers keep both plaintexts in
    /// `[0, 2^62)` so the sign of `b - a` survives the ring.
    pub fn secure_less_equal(&mut self, a: Share, b: Share) -> Result<Share> {
        let msb = self.msb_extract(b - a)?;
        self.counter.secure_cmps += 1;
        Ok(Share::public(1, self.party) - msb)
    }

    /// Shares of the bit "the pair satisfies the temporal constraint":
    /// `0 <= t_u - t_p <= delta` in the directional mode, `|t_u - t_p| <=
    /// delta` in the absolute mode. One counted comparison either way; the
    /// extra bit extraction of the absolute mode is part of its price.
    pub fn secure_time_within(
        &mut self,
        t_patient: Share,
        t_user: Share,
        delta: u64,
        mode: TemporalMode,
    ) -> Result<Share> {
        let x = t_user - t_patient;
        let delta_sh = Share::public(delta, self.party);
        let one = Share::public(1, self.party);
        let bit = match mode {
            TemporalMode::PatientEarlier => {
                let neg = self.msb_extract(x)?;
                let over = self.msb_extract(delta_sh - x)?;
                self.raw_mul(one - neg, one - over)?
            }
            TemporalMode::Absolute => {
                let neg = self.msb_extract(x)?;
                let over = self.msb_extract(delta_sh - x)?;
                let under = self.msb_extract(delta_sh + x)?;
                let pos_ok = self.raw_mul(one - neg, one - over)?;
                let neg_ok = self.raw_mul(neg, one - under)?;
                pos_ok + neg_ok
            }
        };
        self.counter.secure_cmps += 1;
        Ok(bit)
    }

    /// Server side: generate pools for `(n1, n2)`, keep own halves, ship the
    /// peer's.
    fn provision_as_dealer(
        &mut self,
        n1: usize,
        n2: usize,
        mode: TemporalMode,
        rng: &mut RngStream,
    ) -> Result<()> {
        let (n_triples, n_bits) = pool_requirements(n1, n2, mode);
        let pools = generate_pools(n_triples, n_bits, rng);
        let mut payload = Vec::new();
        wire::put_u32(&mut payload, n_triples as u32);
        wire::put_u32(&mut payload, n_bits as u32);
        for t in &pools.user_triples {
            wire::put_u64(&mut payload, t.a);
            wire::put_u64(&mut payload, t.b);
            wire::put_u64(&mut payload, t.c);
        }
        for b in &pools.user_bits {
            wire::put_u64(&mut payload, b.r);
            for j in 0..64 {
                wire::put_u64(&mut payload, b.bits[j]);
            }
        }
        self.channel.send(MessageType::DealerPool, &payload)?;
        self.triples = pools.server_triples;
        self.bits = pools.server_bits;
        Ok(())
    }

    /// User side: receive the dealer pool and verify it matches the public
    /// requirements.
    fn receive_pool(&mut self, n1: usize, n2: usize, mode: TemporalMode) -> Result<()> {
        let (n_triples, n_bits) = pool_requirements(n1, n2, mode);
        let frame = self.channel.expect(MessageType::DealerPool)?;
        let mut cur = wire::Cursor::new(&frame.payload);
        let got_triples = cur.u32()? as u64;
        let got_bits = cur.u32()? as u64;
        if got_triples != n_triples || got_bits != n_bits {
            return Err(Error::protocol(format!(
                "dealer pool sized ({got_triples}, {got_bits}), expected ({n_triples}, {n_bits})"
            )));
        }
        for _ in 0..n_triples {
            let a = cur.u64()?;
            let b = cur.u64()?;
            let c = cur.u64()?;
            self.triples.push_back(TripleShare { a, b, c });
        }
        for _ in 0..n_bits {
            let r = cur.u64()?;
            let mut bits = [0u64; 64];
            for b in bits.iter_mut() {
                *b = cur.u64()?;
            }
            self.bits.push_back(BitEntry { r, bits });
        }
        cur.finish()
    }

    /// Share my private arrays with the peer and receive my halves of theirs.
    /// Layout per frame: `x[0..n] y[0..n] t[0..n]`, 64-bit LE each.
    fn load_inputs(
        &mut self,
        mine: &PrivateInputs,
        peer_n: usize,
        rng: &mut RngStream,
    ) -> Result<(SharedArrays, SharedArrays)> {
        let n = mine.n();
        let mut payload = Vec::with_capacity(3 * n * 8);
        let mut my_shares = Vec::with_capacity(3 * n);
        let raw_values = mine
            .x
            .iter()
            .map(|c| c.raw)
            .chain(mine.y.iter().map(|c| c.raw))
            .chain(mine.time.iter().map(|&t| t as u64));
        for v in raw_values {
            let (keep, send) = {
                let peer_half = rng.next_u64();
                (v.wrapping_sub(peer_half), peer_half)
            };
            my_shares.push(Share::new(keep, self.party));
            wire::put_u64(&mut payload, send);
        }
        self.channel.send(MessageType::MaskedOpening, &payload)?;
        let frame = self.channel.expect(MessageType::MaskedOpening)?;
        if frame.payload.len() != 3 * peer_n * 8 {
            return Err(Error::protocol("peer input share block has wrong size"));
        }
        let mut cur = wire::Cursor::new(&frame.payload);
        let mut peer_shares = Vec::with_capacity(3 * peer_n);
        for _ in 0..3 * peer_n {
            peer_shares.push(Share::new(cur.u64()?, self.party));
        }
        self.counter.oblivious_loads += 3 * (n + peer_n) as u64;
        Ok((
            SharedArrays::from_flat(my_shares, n),
            SharedArrays::from_flat(peer_shares, peer_n),
        ))
    }
}

/// Shares of one party's input arrays, as held locally.
struct SharedArrays {
    x: Vec<Share>,
    y: Vec<Share>,
    t: Vec<Share>,
}

impl SharedArrays {
    fn from_flat(flat: Vec<Share>, n: usize) -> Self {
        debug_assert_eq!(flat.len(), 3 * n);
        SharedArrays {
            x: flat[..n].to_vec(),
            y: flat[n..2 * n].to_vec(),
            t: flat[2 * n..].to_vec(),
        }
    }
}

/// Run the contact predicate over the session. Both parties call this with
/// their own private inputs; both learn the boolean result.
///
/// True iff some (patient visit, user visit) pair is within the encoded
/// squared radius and satisfies the temporal constraint. The full `n1 x n2`
/// loop always executes.
pub fn eval_contact_predicate<C: FrameChannel>(
    session: &mut SecureSession<C>,
    mine: &PrivateInputs,
    constraint: &SecureConstraint,
    rng: &mut RngStream,
) -> Result<bool> {
    let my_n = mine.n() as u32;
    let mut sizes = Vec::new();
    wire::put_u32(&mut sizes, my_n);
    session.channel.send(MessageType::Sizes, &sizes)?;
    let frame = session.channel.expect(MessageType::Sizes)?;
    let mut cur = wire::Cursor::new(&frame.payload);
    let peer_n = cur.u32()?;
    cur.finish()?;

    let (n1, n2) = match session.party {
        Party::Server => (my_n as usize, peer_n as usize),
        Party::User => (peer_n as usize, my_n as usize),
    };
    if n1 == 0 || n2 == 0 {
        return Ok(false);
    }

    match session.party {
        Party::Server => session.provision_as_dealer(n1, n2, constraint.mode, rng)?,
        Party::User => session.receive_pool(n1, n2, constraint.mode)?,
    }

    let (my_arrays, peer_arrays) = session.load_inputs(mine, peer_n as usize, rng)?;
    let (server_arrays, user_arrays) = match session.party {
        Party::Server => (my_arrays, peer_arrays),
        Party::User => (peer_arrays, my_arrays),
    };

    let r_sq = Share::public(constraint.r_squared_raw, session.party);
    let mut acc: Option<Share> = None;
    for i in 0..n1 {
        for j in 0..n2 {
            let dx = server_arrays.x[i] - user_arrays.x[j];
            let dy = server_arrays.y[i] - user_arrays.y[j];
            let dx2 = session.beaver_mul(dx, dx)?;
            let dy2 = session.beaver_mul(dy, dy)?;
            let d2 = dx2 + dy2;
            let dist_ok = session.secure_less_equal(d2, r_sq)?;
            let time_ok = session.secure_time_within(
                server_arrays.t[i],
                user_arrays.t[j],
                constraint.delta,
                constraint.mode,
            )?;
            let pair = session.beaver_mul(dist_ok, time_ok)?;
            acc = Some(match acc {
                None => pair,
                // a OR b = a + b - a*b
                Some(a) => {
                    let ab = session.beaver_mul(a, pair)?;
                    a + pair - ab
                }
            });
        }
    }

    let result = session.open(acc.expect("n1*n2 >= 1"))?;
    // pools are provisioned exactly for (n1, n2); leftovers mean the sizing
    // formula and the circuit disagree
    if !session.triples.is_empty() || !session.bits.is_empty() {
        return Err(Error::protocol(format!(
            "preprocessing not fully consumed: {} triples, {} bit entries left",
            session.triples.len(),
            session.bits.len()
        )));
    }
    as_bit(result)
}

/// The per-direction frame shape of one predicate evaluation, as
/// `(type, payload length)` pairs in order. The schedule is a pure function
/// of the public sizes and the mode; tests assert recorded transcripts match
/// it exactly.
pub fn predicate_frame_schedule(
    party: Party,
    n1: usize,
    n2: usize,
    mode: TemporalMode,
) -> Vec<(MessageType, usize)> {
    let mut out = vec![(MessageType::Sizes, 4)];
    if n1 == 0 || n2 == 0 {
        return out;
    }
    if party == Party::Server {
        let (n_triples, n_bits) = pool_requirements(n1, n2, mode);
        out.push((
            MessageType::DealerPool,
            8 + 24 * n_triples as usize + 520 * n_bits as usize,
        ));
    }
    let my_n = match party {
        Party::Server => n1,
        Party::User => n2,
    };
    out.push((MessageType::MaskedOpening, 3 * my_n * 8));
    let msb = |out: &mut Vec<(MessageType, usize)>| {
        out.push((MessageType::MaskedOpening, 8));
        for _ in 0..64 {
            out.push((MessageType::MaskedOpening, 16));
        }
    };
    let pairs = n1 * n2;
    for p in 0..pairs {
        out.push((MessageType::MaskedOpening, 16)); // dx^2
        out.push((MessageType::MaskedOpening, 16)); // dy^2
        msb(&mut out); // distance comparison
        match mode {
            TemporalMode::PatientEarlier => {
                msb(&mut out);
                msb(&mut out);
                out.push((MessageType::MaskedOpening, 16)); // combine
            }
            TemporalMode::Absolute => {
                msb(&mut out);
                msb(&mut out);
                msb(&mut out);
                out.push((MessageType::MaskedOpening, 16));
                out.push((MessageType::MaskedOpening, 16));
            }
        }
        out.push((MessageType::MaskedOpening, 16)); // AND
        if p > 0 {
            out.push((MessageType::MaskedOpening, 16)); // OR fold
        }
    }
    out.push((MessageType::MaskedOpening, 8)); // final opening
    out
}

/// The exact primitive counts of one predicate evaluation over `(n1, n2)`.
pub fn expected_op_count(n1: usize, n2: usize) -> OpCounter {
    let pairs = (n1 * n2) as u64;
    if pairs == 0 {
        return OpCounter::default();
    }
    OpCounter {
        secure_mults: 3 * pairs + (pairs - 1),
        secure_cmps: 2 * pairs,
        oblivious_loads: 3 * (n1 + n2) as u64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::channel::InMemoryChannel;
    use std::thread;

    fn spawn_pair<F, G, A, B>(server_fn: F, user_fn: G) -> (A, B)
    where
        F: FnOnce(SecureSession<InMemoryChannel>) -> A + Send + 'static,
        G: FnOnce(SecureSession<InMemoryChannel>) -> B + Send + 'static,
        A: Send + 'static,
        B: Send + 'static,
    {
        let (ch_s, ch_u) = InMemoryChannel::pair();
        let server = SecureSession::new(Party::Server, ch_s);
        let user = SecureSession::new(Party::User, ch_u);
        let hs = thread::spawn(move || server_fn(server));
        let hu = thread::spawn(move || user_fn(user));
        (hs.join().unwrap(), hu.join().unwrap())
    }

    /// Provision both sessions directly from a locally generated pool.
    fn preload(
        server: &mut SecureSession<InMemoryChannel>,
        user: &mut SecureSession<InMemoryChannel>,
        n_triples: u64,
        n_bits: u64,
        seed: u64,
    ) {
        let mut rng = RngStream::from_seed(seed);
        let pools = generate_pools(n_triples, n_bits, &mut rng);
        server.triples = pools.server_triples;
        server.bits = pools.server_bits;
        user.triples = pools.user_triples;
        user.bits = pools.user_bits;
    }

    fn mul_once(x: u64, y: u64, seed: u64) -> u64 {
        let (ch_s, ch_u) = InMemoryChannel::pair();
        let mut server = SecureSession::new(Party::Server, ch_s);
        let mut user = SecureSession::new(Party::User, ch_u);
        preload(&mut server, &mut user, 1, 0, seed);
        let mut rng = RngStream::from_seed(seed ^ 1);
        let (x1, x2) = share_secret(x, &mut rng);
        let (y1, y2) = share_secret(y, &mut rng);
        let hs = thread::spawn(move || {
            let z = server
                .beaver_mul(Share::new(x1, Party::Server), Share::new(y1, Party::Server))
                .unwrap();
            (z.value, server.op_count())
        });
        let hu = thread::spawn(move || {
            let z = user
                .beaver_mul(Share::new(x2, Party::User), Share::new(y2, Party::User))
                .unwrap();
            (z.value, user.op_count())
        });
        let (s, u) = (hs.join().unwrap(), hu.join().unwrap());
        assert_eq!(s.1.secure_mults, 1);
        assert_eq!(u.1.secure_mults, 1);
        reconstruct(s.0, u.0)
    }

    #[test]
    fn beaver_mul_small_values() {
        assert_eq!(mul_once(3, 4, 100), 12);
        assert_eq!(mul_once(0, 987_654_321, 101), 0);
    }

    #[test]
    fn beaver_mul_matches_plaintext_oracle() {
        let mut rng = RngStream::from_seed(500);
        for i in 0..1000 {
            let x = rng.next_u64();
            let y = rng.next_u64();
            assert_eq!(mul_once(x, y, 1000 + i), x.wrapping_mul(y));
        }
    }

    #[test]
    fn triple_exhaustion_is_a_protocol_error() {
        let (ch_s, ch_u) = InMemoryChannel::pair();
        let mut server = SecureSession::new(Party::Server, ch_s);
        let mut user = SecureSession::new(Party::User, ch_u);
        preload(&mut server, &mut user, 0, 0, 7);
        let r = server.beaver_mul(
            Share::new(1, Party::Server),
            Share::new(1, Party::Server),
        );
        assert!(matches!(r, Err(Error::Protocol(_))));
        drop(user);
    }

    fn leq_once(a: u64, b: u64, seed: u64) -> (bool, OpCounter) {
        let (ch_s, ch_u) = InMemoryChannel::pair();
        let mut server = SecureSession::new(Party::Server, ch_s);
        let mut user = SecureSession::new(Party::User, ch_u);
        preload(&mut server, &mut user, 64, 1, seed);
        let mut rng = RngStream::from_seed(seed ^ 0xabc);
        let (a1, a2) = share_secret(a, &mut rng);
        let (b1, b2) = share_secret(b, &mut rng);
        let hs = thread::spawn(move || {
            let bit = server
                .secure_less_equal(Share::new(a1, Party::Server), Share::new(b1, Party::Server))
                .unwrap();
            let v = server.open(bit).unwrap();
            (v, server.op_count())
        });
        let hu = thread::spawn(move || {
            let bit = user
                .secure_less_equal(Share::new(a2, Party::User), Share::new(b2, Party::User))
                .unwrap();
            let v = user.open(bit).unwrap();
            (v, user.op_count())
        });
        let (s, u) = (hs.join().unwrap(), hu.join().unwrap());
        assert_eq!(s.0, u.0);
        (as_bit(s.0).unwrap(), s.1)
    }

    #[test]
    fn leq_boundary_cases() {
        let (r, c) = leq_once(5, 5, 1);
        assert!(r);
        assert_eq!(c.secure_cmps, 1);
        assert_eq!(c.secure_mults, 0); // comparison internals are not mults
        let (r, _) = leq_once(6, 5, 2);
        assert!(!r);
        let (r, _) = leq_once(0, 0, 3);
        assert!(r);
        // top of the supported range
        let (r, _) = leq_once((1 << 62) - 1, (1 << 62) - 1, 4);
        assert!(r);
        let (r, _) = leq_once((1 << 62) - 1, 0, 5);
        assert!(!r);
    }

    /// Run many comparisons through one session pair; mirrors how the
    /// predicate consumes pools.
    fn leq_batch(pairs: Vec<(u64, u64)>, seed: u64) -> Vec<bool> {
        let n = pairs.len() as u64;
        let (ch_s, ch_u) = InMemoryChannel::pair();
        let mut server = SecureSession::new(Party::Server, ch_s);
        let mut user = SecureSession::new(Party::User, ch_u);
        preload(&mut server, &mut user, 64 * n, n, seed);
        let mut rng = RngStream::from_seed(seed ^ 0xf00);
        let mut server_shares = Vec::new();
        let mut user_shares = Vec::new();
        for &(a, b) in &pairs {
            let (a1, a2) = share_secret(a, &mut rng);
            let (b1, b2) = share_secret(b, &mut rng);
            server_shares.push((a1, b1));
            user_shares.push((a2, b2));
        }
        let hs = thread::spawn(move || {
            server_shares
                .into_iter()
                .map(|(a, b)| {
                    let bit = server
                        .secure_less_equal(
                            Share::new(a, Party::Server),
                            Share::new(b, Party::Server),
                        )
                        .unwrap();
                    server.open(bit).unwrap()
                })
                .collect::<Vec<_>>()
        });
        let hu = thread::spawn(move || {
            user_shares
                .into_iter()
                .map(|(a, b)| {
                    let bit = user
                        .secure_less_equal(Share::new(a, Party::User), Share::new(b, Party::User))
                        .unwrap();
                    user.open(bit).unwrap()
                })
                .collect::<Vec<_>>()
        });
        let s = hs.join().unwrap();
        let u = hu.join().unwrap();
        assert_eq!(s, u);
        s.into_iter().map(|v| as_bit(v).unwrap()).collect()
    }

    #[test]
    fn leq_exhaustive_over_byte_pairs() {
        // all 65536 pairs in [0, 255]^2 against the plaintext oracle,
        // chunked across independent session pairs to keep the suite fast
        let chunks: Vec<Vec<(u64, u64)>> = (0..16)
            .map(|c| {
                (0..=255u64)
                    .filter(|a| a % 16 == c)
                    .flat_map(|a| (0..=255u64).map(move |b| (a, b)))
                    .collect()
            })
            .collect();
        let handles: Vec<_> = chunks
            .into_iter()
            .enumerate()
            .map(|(i, pairs)| {
                thread::spawn(move || {
                    let got = leq_batch(pairs.clone(), 99 + i as u64);
                    for (&(a, b), &bit) in pairs.iter().zip(&got) {
                        assert_eq!(bit, a <= b, "({a}, {b})");
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
    }

    #[test]
    fn leq_random_wide_values() {
        let mut rng = RngStream::from_seed(321);
        let pairs: Vec<(u64, u64)> = (0..256)
            .map(|_| {
                (
                    rng.next_u64() & ((1 << 62) - 1),
                    rng.next_u64() & ((1 << 62) - 1),
                )
            })
            .collect();
        let got = leq_batch(pairs.clone(), 777);
        for (&(a, b), &bit) in pairs.iter().zip(&got) {
            assert_eq!(bit, a <= b, "({a}, {b})");
        }
    }

    #[test]
    fn openings_of_identical_inputs_are_masked() {
        // the same multiplication twice must transmit different openings:
        // every opened value is masked by fresh triple randomness
        let (ch_s, ch_u) = InMemoryChannel::pair();
        let mut server = SecureSession::new(Party::Server, ch_s);
        let mut user = SecureSession::new(Party::User, ch_u);
        preload(&mut server, &mut user, 64, 0, 4141);
        let mut rng = RngStream::from_seed(5152);
        let (x1, x2) = share_secret(123_456, &mut rng);
        let hs = thread::spawn(move || {
            let x = Share::new(x1, Party::Server);
            let mut opened = Vec::new();
            for _ in 0..32 {
                let t = server.pop_triple().unwrap();
                let d = x.value.wrapping_sub(t.a);
                opened.push(d);
                // run the actual exchange so the peer stays in lockstep
                let e = x.value.wrapping_sub(t.b);
                server.exchange(&[d, e]).unwrap();
            }
            opened
        });
        let hu = thread::spawn(move || {
            let x = Share::new(x2, Party::User);
            for _ in 0..32 {
                let t = user.pop_triple().unwrap();
                let d = x.value.wrapping_sub(t.a);
                let e = x.value.wrapping_sub(t.b);
                user.exchange(&[d, e]).unwrap();
            }
        });
        let opened = hs.join().unwrap();
        hu.join().unwrap();
        let mut dedup = opened.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), opened.len(), "repeated openings collided");
    }

    fn predicate_pair(
        server_io: PrivateInputs,
        user_io: PrivateInputs,
        constraint: SecureConstraint,
        seed: u64,
    ) -> (bool, OpCounter) {
        let ((rs, cs), (ru, cu)) = spawn_pair(
            move |mut s| {
                let mut rng = RngStream::from_seed(seed);
                let r = eval_contact_predicate(&mut s, &server_io, &constraint, &mut rng).unwrap();
                (r, s.op_count())
            },
            move |mut u| {
                let mut rng = RngStream::from_seed(seed ^ 0x55aa);
                let r = eval_contact_predicate(&mut u, &user_io, &constraint, &mut rng).unwrap();
                (r, u.op_count())
            },
        );
        assert_eq!(rs, ru, "parties disagree on the result");
        assert_eq!(cs, cu, "parties disagree on op counts");
        (rs, cs)
    }

    fn io_from(points: &[(f64, f64, i64)]) -> PrivateInputs {
        let t = Trajectory::new(
            points
                .iter()
                .map(|&(x, y, t)| crate::model::TimestampedLocation::new(x, y, t))
                .collect(),
        );
        PrivateInputs::from_trajectory(&t).unwrap()
    }

    #[test]
    fn identical_visit_is_a_contact() {
        let constraint = SecureConstraint::from_params(&ContactParams::default()).unwrap();
        let server = io_from(&[(100.0, 200.0, 5000)]);
        let user = io_from(&[(100.0, 200.0, 5000)]);
        let (r, c) = predicate_pair(server, user, constraint, 1);
        assert!(r);
        assert_eq!(c, expected_op_count(1, 1));
        assert_eq!(c.secure_cmps, 2);
        assert_eq!(c.secure_mults, 3);
    }

    #[test]
    fn worked_two_user_example() {
        // u1 visits within r of a patient visit one hour later; u2 is remote
        let params = ContactParams {
            r: 10.0,
            delta: 7200,
            ..ContactParams::default()
        };
        let constraint = SecureConstraint::from_params(&params).unwrap();
        let t5 = 1_623_319_200i64;
        let server = io_from(&[(305.0, 505.0, t5), (5000.0, 5000.0, t5 + 600)]);
        let u1 = io_from(&[(300.0, 500.0, t5 + 3600), (200.0, 200.0, t5 + 10_800)]);
        let u2 = io_from(&[(9000.0, 8000.0, t5 + 100), (9500.0, 400.0, t5 + 200)]);
        let (r1, c1) = predicate_pair(server.clone(), u1, constraint, 2);
        assert!(r1);
        assert_eq!(c1, expected_op_count(2, 2));
        let (r2, c2) = predicate_pair(server, u2, constraint, 3);
        assert!(!r2);
        // obliviousness: same sizes, same counts, regardless of outcome
        assert_eq!(c1, c2);
    }

    #[test]
    fn empty_user_input_short_circuits_publicly() {
        let constraint = SecureConstraint::from_params(&ContactParams::default()).unwrap();
        let server = io_from(&[(1.0, 2.0, 3)]);
        let (r, c) = predicate_pair(server, PrivateInputs::empty(), constraint, 4);
        assert!(!r);
        assert_eq!(c, OpCounter::default());
    }

    #[test]
    fn op_counts_follow_the_formula() {
        let constraint = SecureConstraint::from_params(&ContactParams::default()).unwrap();
        let server = io_from(&[(0.0, 0.0, 0), (50.0, 50.0, 100)]);
        let user = io_from(&[(10.0, 0.0, 50), (60.0, 50.0, 150), (1000.0, 1000.0, 10)]);
        let (_, c) = predicate_pair(server, user, constraint, 5);
        assert_eq!(c, expected_op_count(2, 3));
        assert_eq!(c.secure_cmps, 12);
        assert_eq!(c.secure_mults, 23);
    }

    #[test]
    fn predicate_agrees_with_plaintext_oracle_on_random_instances() {
        use crate::model::{is_contact_exact, TimestampedLocation};
        let params = ContactParams {
            r: 8.0,
            delta: 600,
            ..ContactParams::default()
        };
        let constraint = SecureConstraint::from_params(&params).unwrap();
        let mut rng = RngStream::from_seed(2718);
        for trial in 0..60 {
            let mut gen_traj = |n: usize| {
                Trajectory::new(
                    (0..n)
                        .map(|_| {
                            TimestampedLocation::new(
                                rng.uniform_in(0.0, 40.0),
                                rng.uniform_in(0.0, 40.0),
                                rng.int_in(0, 2000) as i64,
                            )
                        })
                        .collect(),
                )
            };
            let lp = gen_traj(1 + (trial % 4));
            let lu = gen_traj(1 + (trial % 3));
            // keep clear of the fixed-point boundary quantum around r
            let near_boundary = lu.visits.iter().any(|vu| {
                lp.visits.iter().any(|vp| {
                    (crate::model::euclidean_distance(vu.loc, vp.loc) - params.r).abs() < 0.02
                })
            });
            if near_boundary {
                continue;
            }
            let expected = is_contact_exact(&lu, &lp, &params);
            let server = PrivateInputs::from_trajectory(&lp).unwrap();
            let user = PrivateInputs::from_trajectory(&lu).unwrap();
            let (got, counter) = predicate_pair(server, user, constraint, 9000 + trial as u64);
            assert_eq!(got, expected, "trial {trial}");
            assert_eq!(counter, expected_op_count(lp.len(), lu.len()));
        }
    }

    #[test]
    fn absolute_mode_accepts_either_order() {
        let params = ContactParams {
            r: 5.0,
            delta: 100,
            temporal_mode: TemporalMode::Absolute,
            ..ContactParams::default()
        };
        let constraint = SecureConstraint::from_params(&params).unwrap();
        // user earlier than patient by 50s: rejected directionally, accepted here
        let server = io_from(&[(10.0, 10.0, 1000)]);
        let user = io_from(&[(10.0, 10.0, 950)]);
        let (r, _) = predicate_pair(server.clone(), user.clone(), constraint, 6);
        assert!(r);
        let directional =
            SecureConstraint::from_params(&ContactParams { delta: 100, ..ContactParams::default() })
                .unwrap();
        let (r, _) = predicate_pair(server, user, directional, 7);
        assert!(!r);
    }

    #[test]
    fn transcript_matches_published_schedule() {
        use crate::net::channel::RecordingChannel;
        for mode in [TemporalMode::PatientEarlier, TemporalMode::Absolute] {
            let params = ContactParams {
                temporal_mode: mode,
                ..ContactParams::default()
            };
            let constraint = SecureConstraint::from_params(&params).unwrap();
            let server_io = io_from(&[(1.0, 1.0, 10), (2.0, 2.0, 20)]);
            let user_io = io_from(&[(1.5, 1.0, 15), (100.0, 100.0, 5), (7.0, 3.0, 25)]);
            let (ch_s, ch_u) = InMemoryChannel::pair();
            let mut server = SecureSession::new(Party::Server, RecordingChannel::new(ch_s));
            let mut user = SecureSession::new(Party::User, RecordingChannel::new(ch_u));
            let hs = thread::spawn(move || {
                let mut rng = RngStream::from_seed(10);
                eval_contact_predicate(&mut server, &server_io, &constraint, &mut rng).unwrap();
                server.into_channel().sent_shape()
            });
            let hu = thread::spawn(move || {
                let mut rng = RngStream::from_seed(11);
                eval_contact_predicate(&mut user, &user_io, &constraint, &mut rng).unwrap();
                user.into_channel().sent_shape()
            });
            let server_sent = hs.join().unwrap();
            let user_sent = hu.join().unwrap();
            assert_eq!(
                server_sent,
                predicate_frame_schedule(Party::Server, 2, 3, mode),
                "{mode:?}"
            );
            assert_eq!(
                user_sent,
                predicate_frame_schedule(Party::User, 2, 3, mode),
                "{mode:?}"
            );
        }
    }
}
