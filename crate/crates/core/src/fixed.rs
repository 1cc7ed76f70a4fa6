//! Fixed-point coordinate encoding for the secure comparison.
//!
//! Coordinates enter the two-party protocol as ring elements of `Z_{2^64}`
//! encoding `round(value * 2^SCALE_BITS)` in two's complement. With
//! `SCALE_BITS = 7` one unit is 128 raw steps, squared distances live in a
//! `2^14`-per-unit^2 scale, and inputs bounded by `2^20` units keep every
//! intermediate below `2^62` in magnitude, so ring wraparound never corrupts
//! a sign.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCALE_BITS: u32 = 7;
pub const SCALE: f64 = (1u64 << SCALE_BITS) as f64;

/// Largest encodable magnitude, in units.
pub const MAX_ABS_VALUE: f64 = (1u64 << 20) as f64;

/// A fixed-point coordinate as a 64-bit ring element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedCoord {
    pub raw: u64,
}

/// Encode a real value. Errors outside `|v| <= 2^20` units.
pub fn encode_fixed(v: f64) -> Result<FixedCoord> {
    if !v.is_finite() || v.abs() > MAX_ABS_VALUE {
        return Err(Error::invalid(format!(
            "coordinate {v} outside encodable range +-2^20"
        )));
    }
    let raw = (v * SCALE).round() as i64;
    Ok(FixedCoord { raw: raw as u64 })
}

/// Decode back to a real value; within `2^-8` of the encoded input.
pub fn decode_fixed(c: FixedCoord) -> f64 {
    (c.raw as i64) as f64 / SCALE
}

/// The squared-distance threshold in raw^2 scale: `encode(r)^2`.
pub fn encode_radius_squared(r: f64) -> Result<u64> {
    let r_raw = encode_fixed(r)?.raw as i64;
    Ok((r_raw * r_raw) as u64)
}
