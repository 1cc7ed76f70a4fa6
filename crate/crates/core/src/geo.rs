//! Geo-indistinguishability primitives: the lower Lambert W branch, planar
//! Laplace sampling by inverse-CDF, per-location budget splitting, and
//! randomized response.
//!
//! The planar Laplace density is `(eps^2 / 2pi) * exp(-eps * d)`; integrating
//! it over a disk of radius `d` gives the radial CDF `1 - (1 + eps*d) *
//! exp(-eps*d)`, whose inverse is expressed through `W_{-1}`.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{euclidean_distance, Location, Trajectory};
use crate::rng::RngStream;

/// A positive, finite privacy budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget(f64);

impl Budget {
    pub fn new(eps: f64) -> Result<Self> {
        if eps > 0.0 && eps.is_finite() {
            Ok(Budget(eps))
        } else {
            Err(Error::invalid(format!(
                "privacy budget must be positive and finite, got {eps}"
            )))
        }
    }

    pub fn get(&self) -> f64 {
        self.0
    }
}

/// A perturbed location set: the noisy counterparts of a trajectory's
/// locations, with timestamps dropped and order preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedSet {
    pub points: Vec<Location>,
    pub source_len: usize,
    /// The per-location share `eps / source_len` of the total budget.
    pub per_loc_eps: f64,
}

impl PerturbedSet {
    /// Snap every point to the fixed-point transport grid. Perturbed
    /// locations cross the wire as raw fixed-point encodings, so in-process
    /// runs quantize the same way to stay bit-identical with socket runs.
    pub fn quantized(&self) -> Result<PerturbedSet> {
        let points = self
            .points
            .iter()
            .map(|p| {
                Ok(Location::new(
                    crate::fixed::decode_fixed(crate::fixed::encode_fixed(p.x)?),
                    crate::fixed::decode_fixed(crate::fixed::encode_fixed(p.y)?),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PerturbedSet {
            points,
            source_len: self.source_len,
            per_loc_eps: self.per_loc_eps,
        })
    }
}

const MAX_HALLEY_ITERS: usize = 100;

/// Contractual bound on `|w e^w - x|`.
const RESIDUAL_TOL: f64 = 1e-10;

/// Lower real branch `W_{-1}` of the Lambert W function on `[-1/e, 0)`.
///
/// Returns `w <= -1` with `|w*e^w - x| <= 1e-10`. Seeded by the branch-point
/// series in `sqrt(2(1 + e x))` near `-1/e` and by `ln(-x) - ln(-ln(-x))`
/// elsewhere, then refined by guarded Halley iteration. Iterates are kept on
/// the lower branch: any step that would cross `w = -1` is replaced by the
/// midpoint toward it.
pub fn lambert_w_minus1(x: f64) -> Result<f64> {
    let min = -1.0 / E;
    if !x.is_finite() || x < min - 1e-15 || x >= 0.0 {
        return Err(Error::invalid(format!("W_-1 domain is [-1/e, 0), got {x}")));
    }
    if x <= min {
        return Ok(-1.0);
    }
    let eta2 = 2.0 * (1.0 + E * x);
    if eta2 <= 0.0 {
        return Ok(-1.0);
    }
    let eta = eta2.sqrt();
    let mut w = if x < min + 1e-3 {
        -1.0 - eta - eta * eta / 3.0 - 11.0 / 72.0 * eta * eta * eta
    } else {
        let lx = (-x).ln();
        (lx - (-lx).ln()).min(-1.0 - 1e-9)
    };
    for _ in 0..MAX_HALLEY_ITERS {
        let ew = w.exp();
        let f = w * ew - x;
        if f == 0.0 {
            break;
        }
        let fp = ew * (w + 1.0);
        // the Halley correction divides by (w + 1); fall back to Newton
        // where that would blow up near the branch point
        let denom = if (w + 1.0).abs() > 1e-6 {
            fp - f * (w + 2.0) / (2.0 * (w + 1.0))
        } else {
            fp
        };
        if denom == 0.0 {
            break;
        }
        let mut next = w - f / denom;
        if next >= -1.0 {
            next = (w - 1.0) / 2.0;
        }
        if (next - w).abs() <= f64::EPSILON * w.abs() {
            w = next;
            break;
        }
        w = next;
    }
    let residual = w * w.exp() - x;
    if residual.abs() <= RESIDUAL_TOL {
        Ok(w.min(-1.0))
    } else {
        Err(Error::invalid(format!(
            "W_-1 failed to converge at x = {x} (residual {residual})"
        )))
    }
}

/// Radial CDF of the planar Laplace mechanism: `P(|noise| <= d)`.
pub fn radial_cdf(eps: Budget, d: f64) -> f64 {
    if d <= 0.0 {
        return 0.0;
    }
    let ed = eps.get() * d;
    1.0 - (1.0 + ed) * (-ed).exp()
}

/// The noise radius whose radial CDF equals `p`; the deterministic half of
/// the sampler, exposed so tests can force quantiles.
pub fn radius_for_quantile(eps: Budget, p: f64) -> f64 {
    let p = p.min(1.0 - 1e-12); // keep (p-1)/e strictly negative
    let w = lambert_w_minus1((p - 1.0) / E).expect("(p-1)/e is inside [-1/e, 0)");
    -(w + 1.0) / eps.get()
}

/// Draw one planar-Laplace-perturbed location around `center`: a uniform
/// angle and an inverse-CDF radius through `W_{-1}`.
pub fn planar_laplace_sample(eps: Budget, center: Location, rng: &mut RngStream) -> Location {
    let theta = rng.uniform_in(0.0, 2.0 * PI);
    let p = rng.uniform();
    let d = radius_for_quantile(eps, p);
    Location::new(center.x + d * theta.cos(), center.y + d * theta.sin())
}

/// Perturb every location of a trajectory, splitting the total budget
/// equally: each of the `|L_u|` locations is perturbed with `eps / |L_u|`.
/// Timestamps are dropped; output index i corresponds to visit i.
pub fn perturb_location_set(
    eps: Budget,
    trajectory: &Trajectory,
    rng: &mut RngStream,
) -> Result<PerturbedSet> {
    if trajectory.is_empty() {
        return Err(Error::invalid("cannot perturb an empty trajectory"));
    }
    let per_loc_eps = eps.get() / trajectory.len() as f64;
    let per_loc = Budget::new(per_loc_eps)?;
    let points = trajectory
        .visits
        .iter()
        .map(|v| planar_laplace_sample(per_loc, v.loc, rng))
        .collect();
    Ok(PerturbedSet {
        points,
        source_len: trajectory.len(),
        per_loc_eps,
    })
}

/// Probability that randomized response reports the true bit.
pub fn rr_keep_probability(eps_p: Budget) -> f64 {
    let e = eps_p.get().exp();
    e / (e + 1.0)
}

/// Randomized response on one bit: keep the truth with probability
/// `e^eps / (e^eps + 1)`, otherwise flip.
pub fn randomized_response_bit(bit: bool, eps_p: Budget, rng: &mut RngStream) -> bool {
    if rng.uniform() < rr_keep_probability(eps_p) {
        bit
    } else {
        !bit
    }
}

/// The tuple metric for location sets: the largest pairwise distance.
pub fn max_pairwise_distance(a: &[Location], b: &[Location]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "tuple length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::invalid("tuples must be non-empty"));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&p, &q)| euclidean_distance(p, q))
        .fold(0.0, f64::max))
}

/// Kolmogorov-Smirnov statistic of `samples` against `cdf`. Sorts in place.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    d
}

/// Asymptotic KS critical value at significance 0.01: `sqrt(ln(2/a)/2)/sqrt(n)`.
pub fn ks_critical_001(n: usize) -> f64 {
    1.627_623_630_718_729_3 / (n as f64).sqrt()
}

/// Chi-square statistic of angles in `[0, 2pi)` against uniformity over
/// `bins` equal sectors.
pub fn chi_square_uniform_angles(angles: &[f64], bins: usize) -> f64 {
    let mut counts = vec![0usize; bins];
    for &a in angles {
        let mut idx = ((a / (2.0 * PI)) * bins as f64) as usize;
        if idx >= bins {
            idx = bins - 1;
        }
        counts[idx] += 1;
    }
    let expected = angles.len() as f64 / bins as f64;
    counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent root-finder for w*e^w = x on the lower branch; bisection
    /// over [-64, -1] where w*e^w is strictly decreasing.
    fn lambert_w_minus1_bisect(x: f64) -> f64 {
        let (mut lo, mut hi) = (-64.0f64, -1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid.exp() > x {
                lo = mid; // value too high means w is too far right on this branch
            } else {
                hi = mid;
            }
        }
        // g(w) decreasing: g(-64) ~ 0-, g(-1) = -1/e. g(mid) > x => mid left of root.
        // The bracket update above keeps the root in [lo, hi]; midpoint is the answer.
        0.5 * (lo + hi)
    }

    /// Invert the radial CDF by bisection; oracle for the quantile examples.
    fn radius_by_cdf_bisect(eps: f64, p: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1e6f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let cdf = 1.0 - (1.0 + eps * mid) * (-eps * mid).exp();
            if cdf < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn lambert_branch_point_is_exact() {
        assert_eq!(lambert_w_minus1(-1.0 / E).unwrap(), -1.0);
    }

    #[test]
    fn lambert_known_values() {
        // frozen from the bisection oracle (and cross-checked against it below)
        let w1 = lambert_w_minus1(-0.1).unwrap();
        assert!((w1 - (-3.577152)).abs() < 1e-5, "w1 = {w1}");
        assert!((w1 * w1.exp() - (-0.1)).abs() <= 1e-10);

        let w3 = lambert_w_minus1(-0.3).unwrap();
        assert!((w3 - (-1.781337)).abs() < 1e-5, "w3 = {w3}");
        assert!((w3 * w3.exp() - (-0.3)).abs() <= 1e-10);
    }

    #[test]
    fn lambert_agrees_with_bisection_oracle_across_domain() {
        let mut x = -1.0 / E + 1e-9;
        while x < -1e-12 {
            let w = lambert_w_minus1(x).unwrap();
            let oracle = lambert_w_minus1_bisect(x);
            assert!(
                (w - oracle).abs() < 1e-6,
                "x = {x}: w = {w}, oracle = {oracle}"
            );
            assert!(w <= -1.0);
            assert!((w * w.exp() - x).abs() <= 1e-10, "residual at x = {x}");
            x *= 0.7;
        }
    }

    #[test]
    fn lambert_domain_errors() {
        assert!(lambert_w_minus1(-0.5).is_err());
        assert!(lambert_w_minus1(0.0).is_err());
        assert!(lambert_w_minus1(0.1).is_err());
        assert!(lambert_w_minus1(f64::NAN).is_err());
    }

    #[test]
    fn forced_quantiles() {
        let eps = Budget::new(0.5).unwrap();
        // p = 0 collapses to the branch point: zero radius
        assert_eq!(radius_for_quantile(eps, 0.0), 0.0);
        // p = 0.5 at eps = 0.5: frozen from the radial-CDF bisection oracle
        let d = radius_for_quantile(eps, 0.5);
        let oracle = radius_by_cdf_bisect(0.5, 0.5);
        assert!((d - 3.3566).abs() < 1e-3, "d = {d}");
        assert!((d - oracle).abs() < 1e-6);
        // consistency: the CDF at the sampled radius recovers p
        assert!((radial_cdf(eps, d) - 0.5).abs() < 1e-4);
    }

    #[test]
    fn radial_cdf_limits() {
        let eps = Budget::new(1.0).unwrap();
        assert_eq!(radial_cdf(eps, 0.0), 0.0);
        assert!((radial_cdf(eps, 1e9) - 1.0).abs() < 1e-12);
        // monotone nondecreasing on a grid
        let mut prev = 0.0;
        for i in 0..1000 {
            let c = radial_cdf(eps, i as f64 * 0.01);
            assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn sample_at_forced_p_zero_hits_center() {
        // radius at p = 0 is exactly 0, so the output equals the center
        let eps = Budget::new(1.0).unwrap();
        let c = Location::new(12.0, -7.0);
        let d = radius_for_quantile(eps, 0.0);
        assert_eq!(d, 0.0);
        let out = Location::new(c.x + d, c.y + d);
        assert_eq!(out, c);
    }

    #[test]
    fn sample_mean_radius_matches_expectation() {
        // E[d] = 2/eps; Monte Carlo at eps = 1 over 1e5 draws
        let eps = Budget::new(1.0).unwrap();
        let mut rng = RngStream::from_seed(31337);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| {
                let s = planar_laplace_sample(eps, Location::new(0.0, 0.0), &mut rng);
                euclidean_distance(s, Location::new(0.0, 0.0))
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - 2.0).abs() < 0.06, "mean = {mean}");
    }

    #[test]
    fn perturb_splits_budget_and_preserves_order() {
        let eps = Budget::new(4.0).unwrap();
        let traj = Trajectory::new(
            (0..4)
                .map(|i| crate::model::TimestampedLocation::new(i as f64 * 100.0, 0.0, i))
                .collect(),
        );
        let mut rng = RngStream::from_seed(5);
        let set = perturb_location_set(eps, &traj, &mut rng).unwrap();
        assert_eq!(set.per_loc_eps, 1.0);
        assert_eq!(set.source_len, 4);
        assert_eq!(set.points.len(), 4);
        // budget accounting is exact up to rounding in the division itself
        assert_eq!(set.per_loc_eps * set.source_len as f64, eps.get());
        // with eps' = 1 the noise is a few units; order must be preserved
        for (i, p) in set.points.iter().enumerate() {
            assert!((p.x - i as f64 * 100.0).abs() < 60.0);
        }
    }

    #[test]
    fn perturb_single_location_uses_full_budget() {
        let eps = Budget::new(2.5).unwrap();
        let traj = Trajectory::new(vec![crate::model::TimestampedLocation::new(1.0, 2.0, 0)]);
        let mut rng = RngStream::from_seed(6);
        let set = perturb_location_set(eps, &traj, &mut rng).unwrap();
        assert_eq!(set.per_loc_eps, 2.5);
        assert_eq!(set.points.len(), 1);
    }

    #[test]
    fn perturb_is_deterministic_per_seed() {
        let eps = Budget::new(4.0).unwrap();
        let traj = Trajectory::new(
            (0..3)
                .map(|i| crate::model::TimestampedLocation::new(10.0 * i as f64, 5.0, i))
                .collect(),
        );
        let a = perturb_location_set(eps, &traj, &mut RngStream::from_seed(99)).unwrap();
        let b = perturb_location_set(eps, &traj, &mut RngStream::from_seed(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perturb_empty_is_an_error() {
        let eps = Budget::new(1.0).unwrap();
        assert!(perturb_location_set(eps, &Trajectory::default(), &mut RngStream::from_seed(0)).is_err());
    }

    #[test]
    fn rr_keep_probability_value() {
        let p = rr_keep_probability(Budget::new(4.0).unwrap());
        assert!((p - 0.98201).abs() < 1e-5);
    }

    #[test]
    fn rr_large_budget_never_flips_in_practice() {
        let eps = Budget::new(50.0).unwrap();
        let mut rng = RngStream::from_seed(1);
        let kept = (0..10_000)
            .filter(|i| randomized_response_bit(i % 2 == 0, eps, &mut rng) == (i % 2 == 0))
            .count();
        assert!(kept as f64 / 10_000.0 >= 0.9999);
    }

    #[test]
    fn rr_flip_rate_matches_formula() {
        let eps = Budget::new(2.0).unwrap();
        let mut rng = RngStream::from_seed(2);
        let n = 100_000;
        let flips = (0..n)
            .filter(|_| randomized_response_bit(false, eps, &mut rng))
            .count();
        let rate = flips as f64 / n as f64;
        assert!((rate - 0.1192).abs() < 0.01, "rate = {rate}");
    }

    #[test]
    fn max_pairwise_distance_cases() {
        let a = vec![Location::new(0.0, 0.0), Location::new(0.0, 0.0)];
        let b = vec![Location::new(3.0, 4.0), Location::new(6.0, 8.0)];
        assert_eq!(max_pairwise_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(max_pairwise_distance(&a, &b).unwrap(), 10.0);
        // singleton tuples collapse to plain euclidean distance
        assert_eq!(
            max_pairwise_distance(&a[..1], &b[..1]).unwrap(),
            euclidean_distance(a[0], b[0])
        );
        assert!(max_pairwise_distance(&a, &b[..1]).is_err());
        assert!(max_pairwise_distance(&[], &[]).is_err());
    }

    #[test]
    fn rr_positions_are_independent() {
        // apply RR to fixed all-zero and all-one vectors; empirical pairwise
        // correlation between positions should vanish
        let eps = Budget::new(2.0).unwrap();
        for input in [false, true] {
            let mut rng = RngStream::from_seed(77);
            let trials = 100_000;
            let k = 4;
            let mut sums = vec![0.0f64; k];
            let mut prods = vec![0.0f64; k * k];
            for _ in 0..trials {
                let out: Vec<f64> = (0..k)
                    .map(|_| randomized_response_bit(input, eps, &mut rng) as u8 as f64)
                    .collect();
                for i in 0..k {
                    sums[i] += out[i];
                    for j in 0..k {
                        prods[i * k + j] += out[i] * out[j];
                    }
                }
            }
            let n = trials as f64;
            for i in 0..k {
                for j in (i + 1)..k {
                    let mi = sums[i] / n;
                    let mj = sums[j] / n;
                    let cov = prods[i * k + j] / n - mi * mj;
                    let vi = mi * (1.0 - mi);
                    let vj = mj * (1.0 - mj);
                    let rho = cov / (vi * vj).sqrt();
                    assert!(rho.abs() < 0.02, "rho[{i},{j}] = {rho} on input {input}");
                }
            }
        }
    }

    #[test]
    fn composed_marginals_pass_ks_at_their_own_budgets() {
        // perturbing a 2-location tuple with budgets (eps1, eps2) gives
        // marginals distributed per the single-location mechanism
        let eps1 = Budget::new(0.5).unwrap();
        let eps2 = Budget::new(2.0).unwrap();
        let center = Location::new(0.0, 0.0);
        let mut rng = RngStream::from_seed(2024);
        let n = 50_000;
        let mut d1 = Vec::with_capacity(n);
        let mut d2 = Vec::with_capacity(n);
        for _ in 0..n {
            let o1 = planar_laplace_sample(eps1, center, &mut rng);
            let o2 = planar_laplace_sample(eps2, center, &mut rng);
            d1.push(euclidean_distance(o1, center));
            d2.push(euclidean_distance(o2, center));
        }
        let k1 = ks_statistic(&mut d1, |d| radial_cdf(eps1, d));
        let k2 = ks_statistic(&mut d2, |d| radial_cdf(eps2, d));
        let crit = ks_critical_001(n);
        assert!(k1 < crit, "k1 = {k1}, crit = {crit}");
        assert!(k2 < crit, "k2 = {k2}, crit = {crit}");
    }

    #[test]
    fn density_ratio_bound_on_coarse_grid() {
        // two centers one unit apart, eps = 1: every well-populated cell of a
        // 20x20 grid over a 10x10 window must have count ratio within
        // e^{eps * d} times 1.25 sampling slack
        let eps = Budget::new(1.0).unwrap();
        let ca = Location::new(-0.5, 0.0);
        let cb = Location::new(0.5, 0.0);
        let n = 1_000_000usize;
        let bins = 20usize;
        let (x0, y0, w) = (-5.0f64, -5.0f64, 10.0f64);
        let cell = w / bins as f64;
        let mut ha = vec![0u32; bins * bins];
        let mut hb = vec![0u32; bins * bins];
        let mut rng = RngStream::from_seed(4242);
        let fill = |center: Location, h: &mut Vec<u32>, rng: &mut RngStream| {
            for _ in 0..n {
                let s = planar_laplace_sample(eps, center, rng);
                let i = ((s.x - x0) / cell).floor();
                let j = ((s.y - y0) / cell).floor();
                if (0.0..bins as f64).contains(&i) && (0.0..bins as f64).contains(&j) {
                    h[i as usize * bins + j as usize] += 1;
                }
            }
        };
        fill(ca, &mut ha, &mut rng);
        fill(cb, &mut hb, &mut rng);
        let bound = (eps.get() * euclidean_distance(ca, cb)).exp() * 1.25;
        let mut checked = 0;
        for (a, b) in ha.iter().zip(&hb) {
            if *a >= 500 && *b >= 500 {
                let ratio = (*a).max(*b) as f64 / (*a).min(*b) as f64;
                assert!(ratio <= bound, "ratio {ratio} exceeds {bound}");
                checked += 1;
            }
        }
        assert!(checked > 50, "too few populated cells: {checked}");
    }
}
