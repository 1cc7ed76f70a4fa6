//! Additive secret sharing over the ring `Z_{2^64}`.
//!
//! A secret `s` is held as two ring elements with `share1 + share2 = s
//! (mod 2^64)`. Linear operations are local; multiplication consumes a
//! dealer triple (see the session). Public constants are embedded by letting
//! the server hold the constant and the user hold zero.

use std::ops::{Add, Sub};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// The two protocol roles. The server holds the patient data and plays the
/// co-located dealer; the user holds one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Party {
    Server = 1,
    User = 2,
}

/// One party's additive share of a ring element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Share {
    pub value: u64,
    pub party: Party,
}

impl Share {
    pub fn new(value: u64, party: Party) -> Self {
        Share { value, party }
    }

    /// Embed a public constant: the server's share carries it, the user's is 0.
    pub fn public(value: u64, party: Party) -> Self {
        let value = match party {
            Party::Server => value,
            Party::User => 0,
        };
        Share { value, party }
    }

    /// Multiply by a public scalar (both shares scale).
    pub fn mul_public(self, k: u64) -> Self {
        Share {
            value: self.value.wrapping_mul(k),
            party: self.party,
        }
    }
}

impl Add for Share {
    type Output = Share;
    fn add(self, rhs: Share) -> Share {
        debug_assert_eq!(self.party, rhs.party);
        Share {
            value: self.value.wrapping_add(rhs.value),
            party: self.party,
        }
    }
}

impl Sub for Share {
    type Output = Share;
    fn sub(self, rhs: Share) -> Share {
        debug_assert_eq!(self.party, rhs.party);
        Share {
            value: self.value.wrapping_sub(rhs.value),
            party: self.party,
        }
    }
}

/// Split a secret into a uniformly random first share and the matching
/// second share.
pub fn share_secret(v: u64, rng: &mut RngStream) -> (u64, u64) {
    let s1 = rng.next_u64();
    (s1, v.wrapping_sub(s1))
}

/// Recombine two share values.
pub fn reconstruct(s1: u64, s2: u64) -> u64 {
    s1.wrapping_add(s2)
}

/// Interpret a reconstructed ring element that is known to be a bit.
pub fn as_bit(v: u64) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(Error::protocol(format!(
            "opened value {other} is not a bit; shares are inconsistent"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sharing_round_trips() {
        let mut rng = RngStream::from_seed(11);
        for v in [0u64, 1, 128, u64::MAX, 0xdead_beef_cafe_f00d] {
            let (s1, s2) = share_secret(v, &mut rng);
            assert_eq!(reconstruct(s1, s2), v);
        }
    }

    #[test]
    fn zero_secret_gives_negated_pair() {
        let mut rng = RngStream::from_seed(12);
        let (s1, s2) = share_secret(0, &mut rng);
        assert_eq!(s2, 0u64.wrapping_sub(s1));
    }

    #[test]
    fn first_share_bytes_look_uniform() {
        // chi-square over byte values of 1e4 first shares of the same secret;
        // 255 dof, far below the 0.999 quantile (~330)
        let mut rng = RngStream::from_seed(13);
        let mut counts = [0u32; 256];
        let n = 10_000;
        for _ in 0..n {
            let (s1, _) = share_secret(42, &mut rng);
            for b in s1.to_le_bytes() {
                counts[b as usize] += 1;
            }
        }
        let expected = (n * 8) as f64 / 256.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 340.0, "chi2 = {chi2}");
    }

    #[test]
    fn public_embedding_reconstructs() {
        let a = Share::public(77, Party::Server);
        let b = Share::public(77, Party::User);
        assert_eq!(reconstruct(a.value, b.value), 77);
    }

    #[test]
    fn linear_ops_commute_with_reconstruction() {
        let mut rng = RngStream::from_seed(14);
        let (a1, a2) = share_secret(1000, &mut rng);
        let (b1, b2) = share_secret(58, &mut rng);
        let s1 = Share::new(a1, Party::Server) + Share::new(b1, Party::Server);
        let s2 = Share::new(a2, Party::User) + Share::new(b2, Party::User);
        assert_eq!(reconstruct(s1.value, s2.value), 1058);
        let d1 = Share::new(a1, Party::Server) - Share::new(b1, Party::Server);
        let d2 = Share::new(a2, Party::User) - Share::new(b2, Party::User);
        assert_eq!(reconstruct(d1.value, d2.value), 942);
    }

    #[test]
    fn as_bit_rejects_non_bits() {
        assert!(!as_bit(0).unwrap());
        assert!(as_bit(1).unwrap());
        assert!(as_bit(2).is_err());
    }
}
