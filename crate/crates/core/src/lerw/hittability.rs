use rustc_hash::FxHashSet;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::lattice::LatticePoint;
use crate::rng::RngStream;
use crate::stats::wilson_interval;

/// Empirical probability that a walk misses the target, with a 95%
/// Wilson-score interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HitEstimate {
    pub non_hit: f64,
    pub misses: u64,
    pub trials: u64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Runs `trials` walks from `y`, each stopped at its first exit of
/// `B(y, sqrt(r) * scale)`, and counts those that never touch `target`.
///
/// Requires `dist(y, target) <= r * scale` (the activation clause of the
/// hittability definition, in lattice units); an empty target is vacuous.
pub fn hittability_probe(
    target: &FxHashSet<LatticePoint>,
    y: LatticePoint,
    r: f64,
    scale: f64,
    trials: u64,
    rng: &mut RngStream,
) -> Result<HitEstimate> {
    if trials == 0 {
        return Err(invalid("trials", "must be >= 1"));
    }
    if !(r > 0.0) || !(scale > 0.0) || !(r * scale).is_finite() {
        return Err(invalid("r", format!("need r > 0 and scale > 0, got {r}, {scale}")));
    }
    let finish = |misses: u64| {
        let (ci_low, ci_high) = wilson_interval(misses, trials);
        Ok(HitEstimate {
            non_hit: misses as f64 / trials as f64,
            misses,
            trials,
            ci_low,
            ci_high,
        })
    };
    if target.is_empty() {
        return finish(trials);
    }
    if target.contains(&y) {
        return finish(0);
    }
    let d = target.iter().map(|q| q.dist(y)).fold(f64::INFINITY, f64::min);
    if d > r * scale {
        return Err(invalid(
            "y",
            format!("distance {d} to the target exceeds r * scale = {}", r * scale),
        ));
    }
    let rho = r.sqrt() * scale;
    let rho2 = rho * rho;
    let mut misses = 0;
    for _ in 0..trials {
        let mut p = y;
        loop {
            p = p + rng.next_uniform_step();
            if target.contains(&p) {
                break;
            }
            if ((p - y).norm_sq() as f64) >= rho2 {
                misses += 1;
                break;
            }
        }
    }
    finish(misses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_cases() {
        let mut rng = RngStream::new(0, 0);
        let y = LatticePoint::ORIGIN;
        let e = hittability_probe(&FxHashSet::default(), y, 4.0, 2.0, 10, &mut rng).unwrap();
        assert_eq!(e.non_hit, 1.0);
        let t: FxHashSet<_> = [y].into_iter().collect();
        let e = hittability_probe(&t, y, 4.0, 2.0, 10, &mut rng).unwrap();
        assert_eq!(e.non_hit, 0.0);
        assert!(e.ci_low == 0.0 && e.ci_high > 0.0);
    }

    #[test]
    fn plane_is_hit_more_often_than_point() {
        let mut rng = RngStream::new(1, 1);
        let y = LatticePoint::new(0, 0, 1);
        let point: FxHashSet<_> = [LatticePoint::ORIGIN].into_iter().collect();
        let plane: FxHashSet<_> = (-30..=30)
            .flat_map(|a| (-30..=30).map(move |b| LatticePoint::new(a, b, 0)))
            .collect();
        let a = hittability_probe(&point, y, 9.0, 3.0, 2000, &mut rng).unwrap();
        let b = hittability_probe(&plane, y, 9.0, 3.0, 2000, &mut rng).unwrap();
        assert!(b.non_hit < a.non_hit);
        assert!(a.ci_low <= a.non_hit && a.non_hit <= a.ci_high);
    }

    #[test]
    fn activation_clause_enforced() {
        let t: FxHashSet<_> = [LatticePoint::new(50, 0, 0)].into_iter().collect();
        assert!(hittability_probe(&t, LatticePoint::ORIGIN, 4.0, 2.0, 10, &mut RngStream::new(0, 0)).is_err());
    }
}
