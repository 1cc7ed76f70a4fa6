//! Trusted-dealer preprocessing: Beaver multiplication triples and shared
//! random bit decompositions for the comparison protocol.
//!
//! Pools are sized from the public input sizes before a session starts, so
//! the dealer learns nothing but `(n1, n2)`. Exhausting a pool is a protocol
//! error, never silent reuse.

use std::collections::VecDeque;

use crate::model::TemporalMode;
use crate::rng::RngStream;
use crate::secure::share::share_secret;

/// One party's share of a multiplication triple `c = a * b`.
#[derive(Debug, Clone, Copy)]
pub struct TripleShare {
    pub a: u64,
    pub b: u64,
    pub c: u64,
}

/// One party's share of a random ring element `r` together with shares of
/// each of its 64 bits; backs one most-significant-bit extraction.
#[derive(Debug, Clone)]
pub struct BitEntry {
    pub r: u64,
    pub bits: [u64; 64],
}

/// Both halves of a provisioned pool.
pub struct PoolPair {
    pub server_triples: VecDeque<TripleShare>,
    pub server_bits: VecDeque<BitEntry>,
    pub user_triples: VecDeque<TripleShare>,
    pub user_bits: VecDeque<BitEntry>,
}

/// Triples consumed by one `<=` comparison: the 63-step borrow chain plus
/// the final xor of the top bit.
pub const TRIPLES_PER_MSB: u64 = 64;

/// Pool requirements for one predicate over public sizes `(n1, n2)`.
///
/// Per pair: two coordinate squarings, one distance comparison, one temporal
/// constraint (two or three bit extractions plus one or two combine
/// multiplications depending on the mode), and one AND; plus one OR per fold
/// step across pairs.
pub fn pool_requirements(n1: usize, n2: usize, mode: TemporalMode) -> (u64, u64) {
    let pairs = (n1 * n2) as u64;
    if pairs == 0 {
        return (0, 0);
    }
    let (time_msbs, time_combines) = match mode {
        TemporalMode::PatientEarlier => (2, 1),
        TemporalMode::Absolute => (3, 2),
    };
    let per_pair_triples = 2 + 1 + TRIPLES_PER_MSB + time_msbs * TRIPLES_PER_MSB + time_combines;
    let triples = pairs * per_pair_triples + (pairs - 1);
    let bits = pairs * (1 + time_msbs);
    (triples, bits)
}

/// Generate both parties' pool halves.
pub fn generate_pools(n_triples: u64, n_bits: u64, rng: &mut RngStream) -> PoolPair {
    let mut pair = PoolPair {
        server_triples: VecDeque::with_capacity(n_triples as usize),
        server_bits: VecDeque::with_capacity(n_bits as usize),
        user_triples: VecDeque::with_capacity(n_triples as usize),
        user_bits: VecDeque::with_capacity(n_bits as usize),
    };
    for _ in 0..n_triples {
        let a = rng.next_u64();
        let b = rng.next_u64();
        let c = a.wrapping_mul(b);
        let (a1, a2) = share_secret(a, rng);
        let (b1, b2) = share_secret(b, rng);
        let (c1, c2) = share_secret(c, rng);
        pair.server_triples.push_back(TripleShare { a: a1, b: b1, c: c1 });
        pair.user_triples.push_back(TripleShare { a: a2, b: b2, c: c2 });
    }
    for _ in 0..n_bits {
        let r = rng.next_u64();
        let (r1, r2) = share_secret(r, rng);
        let mut bits1 = [0u64; 64];
        let mut bits2 = [0u64; 64];
        for j in 0..64 {
            let bit = (r >> j) & 1;
            let (s1, s2) = share_secret(bit, rng);
            bits1[j] = s1;
            bits2[j] = s2;
        }
        pair.server_bits.push_back(BitEntry { r: r1, bits: bits1 });
        pair.user_bits.push_back(BitEntry { r: r2, bits: bits2 });
    }
    pair
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::secure::share::reconstruct;

    #[test]
    fn triples_satisfy_multiplicative_identity() {
        let mut rng = RngStream::from_seed(21);
        let pair = generate_pools(50, 0, &mut rng);
        for (s, u) in pair.server_triples.iter().zip(&pair.user_triples) {
            let a = reconstruct(s.a, u.a);
            let b = reconstruct(s.b, u.b);
            let c = reconstruct(s.c, u.c);
            assert_eq!(c, a.wrapping_mul(b));
        }
    }

    #[test]
    fn bit_entries_decompose_their_mask() {
        let mut rng = RngStream::from_seed(22);
        let pair = generate_pools(0, 8, &mut rng);
        for (s, u) in pair.server_bits.iter().zip(&pair.user_bits) {
            let r = reconstruct(s.r, u.r);
            for j in 0..64 {
                let bit = reconstruct(s.bits[j], u.bits[j]);
                assert_eq!(bit, (r >> j) & 1, "bit {j} of {r:#x}");
            }
        }
    }

    #[test]
    fn requirements_match_hand_counts() {
        // 1 pair, patient-earlier: 2 squarings + 1 AND + 64 + 2*64 + 1 = 196
        assert_eq!(pool_requirements(1, 1, TemporalMode::PatientEarlier), (196, 3));
        // 6 pairs: 196*6 + 5 or-folds
        assert_eq!(
            pool_requirements(2, 3, TemporalMode::PatientEarlier),
            (196 * 6 + 5, 18)
        );
        // absolute mode: 2 + 1 + 64 + 3*64 + 2 = 261 per pair
        assert_eq!(pool_requirements(1, 1, TemporalMode::Absolute), (261, 4));
        assert_eq!(pool_requirements(0, 5, TemporalMode::Absolute), (0, 0));
    }
}
