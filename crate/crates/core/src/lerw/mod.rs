//! Simple random walk on Z^3 and chronological loop erasure.

mod domain;
mod hittability;
mod quasi_loop;

pub use domain::DomainSpec;
pub use hittability::{hittability_probe, HitEstimate};
pub use quasi_loop::{detect_quasi_loops, has_quasi_loop, QuasiLoopReport};

use rustc_hash::{FxHashMap, FxHashSet};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::lattice::LatticePoint;
use crate::rng::{namespace, RngStream};

/// Default hard cap on walk length in unbounded domains.
pub const DEFAULT_STEP_CAP: u64 = 10_000_000;

/// Default ILERW truncation: the walk is killed on leaving `B(start, K r)`.
pub const DEFAULT_SAFETY_FACTOR: f64 = 8.0;

/// Nearest-neighbour path on Z^3. `steps()` is the path length `len(γ)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticePath {
    vertices: Vec<LatticePoint>,
    simple: bool,
}

impl LatticePath {
    /// Validates nearest-neighbour steps and records simplicity.
    pub fn new(vertices: Vec<LatticePoint>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::MalformedPath("empty path".into()));
        }
        if let Some(i) = vertices.windows(2).position(|w| !w[0].is_neighbor(w[1])) {
            return Err(Error::MalformedPath(format!(
                "vertices {i} and {} are not nearest neighbours",
                i + 1
            )));
        }
        Ok(Self::from_walk(vertices))
    }

    /// Caller guarantees nearest-neighbour steps; simplicity is computed.
    pub(crate) fn from_walk(vertices: Vec<LatticePoint>) -> Self {
        let mut seen = FxHashSet::with_capacity_and_hasher(vertices.len(), Default::default());
        let simple = vertices.iter().all(|v| seen.insert(*v));
        LatticePath { vertices, simple }
    }

    /// Caller guarantees a simple nearest-neighbour path.
    pub(crate) fn simple_unchecked(vertices: Vec<LatticePoint>) -> Self {
        debug_assert!(!vertices.is_empty());
        LatticePath {
            vertices,
            simple: true,
        }
    }

    pub fn vertices(&self) -> &[LatticePoint] {
        &self.vertices
    }

    pub fn into_vertices(self) -> Vec<LatticePoint> {
        self.vertices
    }

    pub fn steps(&self) -> usize {
        self.vertices.len() - 1
    }

    pub fn is_simple(&self) -> bool {
        self.simple
    }

    pub fn first(&self) -> LatticePoint {
        self.vertices[0]
    }

    pub fn last(&self) -> LatticePoint {
        *self.vertices.last().unwrap()
    }

    /// Index of the first vertex with `|v - center| >= radius`.
    pub fn first_exit(&self, center: LatticePoint, radius: f64) -> Option<usize> {
        let r2 = radius * radius;
        self.vertices
            .iter()
            .position(|v| ((*v - center).norm_sq() as f64) >= r2)
    }

    /// `γ|^R` about `center`: the prefix up to and including the first exit
    /// of the open ball; the whole path if it never exits.
    pub fn restrict_to_ball(&self, center: LatticePoint, radius: f64) -> LatticePath {
        match self.first_exit(center, radius) {
            Some(i) => LatticePath {
                vertices: self.vertices[..=i].to_vec(),
                simple: self.simple || Self::from_walk(self.vertices[..=i].to_vec()).simple,
            },
            None => self.clone(),
        }
    }
}

/// Chronological loop erasure of `path`.
///
/// Uses last-visit indexing: `ṽ_0 = v_0`, and `ṽ_{j+1} = v_{T(j)}` with
/// `T(j) = 1 + max{n : v_n = ṽ_j}`, stopping once the last visit is the final
/// index.
pub fn loop_erase(path: &LatticePath) -> LatticePath {
    if path.is_simple() {
        return path.clone();
    }
    let v = path.vertices();
    let mut last: FxHashMap<LatticePoint, usize> =
        FxHashMap::with_capacity_and_hasher(v.len(), Default::default());
    for (i, p) in v.iter().enumerate() {
        last.insert(*p, i);
    }
    let mut out = Vec::new();
    let mut i = 0;
    loop {
        out.push(v[i]);
        let j = last[&v[i]];
        if j + 1 == v.len() {
            break;
        }
        i = j + 1;
    }
    LatticePath::simple_unchecked(out)
}

const PACK_OFFSET: i64 = 1 << 20;

/// Packs a point whose coordinates relative to an anchor lie in
/// `(-2^20, 2^20)` into 63 bits.
#[inline]
fn pack(d: LatticePoint) -> u64 {
    debug_assert!(d.norm_inf() < PACK_OFFSET);
    (((d.x + PACK_OFFSET) as u64) << 42) | (((d.y + PACK_OFFSET) as u64) << 21) | ((d.z + PACK_OFFSET) as u64)
}

pub(crate) const MAX_PACKED_EXTENT: f64 = (PACK_OFFSET - 2) as f64;

/// Streaming loop erasure: feeding the walk one vertex at a time keeps the
/// current erasure on a stack. Equal to [`loop_erase`] of the walk so far.
pub(crate) struct LoopEraser {
    anchor: LatticePoint,
    stack: Vec<LatticePoint>,
    position: FxHashMap<u64, u32>,
}

impl LoopEraser {
    pub(crate) fn new(anchor: LatticePoint, start: LatticePoint) -> Self {
        let mut e = LoopEraser {
            anchor,
            stack: Vec::with_capacity(1024),
            position: FxHashMap::default(),
        };
        e.push(start);
        e
    }

    #[inline]
    pub(crate) fn push(&mut self, p: LatticePoint) {
        let key = pack(p - self.anchor);
        match self.position.get(&key) {
            Some(&idx) => {
                // Closing a loop: erase everything visited since the last
                // stay at p.
                for q in self.stack.drain(idx as usize + 1..) {
                    self.position.remove(&pack(q - self.anchor));
                }
            }
            None => {
                self.position.insert(key, self.stack.len() as u32);
                self.stack.push(p);
            }
        }
    }

    pub(crate) fn into_path(self) -> LatticePath {
        LatticePath::simple_unchecked(self.stack)
    }
}

/// Simple random walk from `start`, stopped at the first vertex outside the
/// domain (that vertex is the last one of the returned path).
pub fn simulate_srw(start: LatticePoint, domain: &DomainSpec, rng: &mut RngStream) -> Result<LatticePath> {
    if !domain.contains(start) {
        return Err(Error::StartOutsideDomain(start));
    }
    let cap = domain.step_cap();
    let mut vertices = vec![start];
    let mut p = start;
    loop {
        if let Some(cap) = cap {
            if (vertices.len() - 1) as u64 >= cap {
                return Err(Error::StepCapExhausted {
                    cap,
                    partial: Box::new(LatticePath::from_walk(vertices)),
                });
            }
        }
        p = p + rng.next_uniform_step();
        vertices.push(p);
        if !domain.contains(p) {
            return Ok(LatticePath::from_walk(vertices));
        }
    }
}

/// Loop erasure of [`simulate_srw`] in the domain.
pub fn lerw_in_domain(start: LatticePoint, domain: &DomainSpec, rng: &mut RngStream) -> Result<LatticePath> {
    simulate_srw(start, domain, rng).map(|w| loop_erase(&w))
}

/// Loop erasure of a walk from `start` killed on first leaving the open ball
/// `B(start, kill_radius)`. Memory is proportional to the erasure, not the
/// walk.
pub fn killed_lerw(start: LatticePoint, kill_radius: f64, rng: &mut RngStream) -> Result<(LatticePath, u64)> {
    if !(kill_radius >= 1.0) || kill_radius > MAX_PACKED_EXTENT {
        return Err(invalid(
            "kill_radius",
            format!("must lie in [1, {MAX_PACKED_EXTENT}], got {kill_radius}"),
        ));
    }
    let r2 = kill_radius * kill_radius;
    let mut eraser = LoopEraser::new(start, start);
    let mut d = LatticePoint::ORIGIN;
    let mut steps = 0u64;
    loop {
        d = d + rng.next_uniform_step();
        steps += 1;
        eraser.push(start + d);
        if (d.norm_sq() as f64) >= r2 {
            return Ok((eraser.into_path(), steps));
        }
    }
}

/// ILERW sample with its truncation provenance.
#[derive(Clone, Debug)]
pub struct IlerwSample {
    /// Erasure restricted to its first exit of `B(start, r)`.
    pub path: LatticePath,
    pub target_radius: f64,
    pub safety_factor: f64,
    pub walk_steps: u64,
}

/// Approximate infinite LERW from `start`, restricted to its first exit of
/// `B(start, r)`. The underlying walk is killed on leaving `B(start, K r)`.
pub fn ilerw(start: LatticePoint, r: f64, safety_factor: f64, rng: &mut RngStream) -> Result<IlerwSample> {
    if !(r >= 1.0) {
        return Err(invalid("r", format!("must be >= 1, got {r}")));
    }
    if !(safety_factor >= 4.0) {
        return Err(invalid("safety_factor", format!("must be >= 4, got {safety_factor}")));
    }
    let (full, walk_steps) = killed_lerw(start, safety_factor * r, rng)?;
    Ok(IlerwSample {
        path: full.restrict_to_ball(start, r),
        target_radius: r,
        safety_factor,
        walk_steps,
    })
}

/// One raw row of the growth table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct GrowthRow {
    pub radius: u32,
    pub sample_index: u32,
    pub length: u64,
    pub seed: u64,
    pub stream: u64,
}

pub fn growth_stream(radius_index: usize, sample: u32) -> u64 {
    namespace::GROWTH | ((radius_index as u64) << 32) | sample as u64
}

/// Independent ILERW lengths `ξ_n` (steps to first exit of `B(n)`) for each
/// radius. Raw rows, in (radius, sample) order.
pub fn growth_samples(radii: &[u32], samples: u32, safety_factor: f64, seed: u64) -> Result<Vec<GrowthRow>> {
    if radii.is_empty() {
        return Err(invalid("radii", "empty"));
    }
    if radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("radii", "must be strictly increasing"));
    }
    if radii[0] < 1 {
        return Err(invalid("radii", "must be >= 1"));
    }
    let mut rows = Vec::with_capacity(radii.len() * samples as usize);
    for (ri, &n) in radii.iter().enumerate() {
        for s in 0..samples {
            let stream = growth_stream(ri, s);
            let mut rng = RngStream::new(seed, stream);
            let sample = ilerw(LatticePoint::ORIGIN, n as f64, safety_factor, &mut rng)?;
            rows.push(GrowthRow {
                radius: n,
                sample_index: s,
                length: sample.path.steps() as u64,
                seed,
                stream,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Region;
    use proptest::prelude::*;

    fn p(x: i64, y: i64, z: i64) -> LatticePoint {
        LatticePoint::new(x, y, z)
    }

    /// Repeatedly deletes the first cycle: quadratic reference erasure.
    pub(crate) fn first_loop_removal(v: &[LatticePoint]) -> Vec<LatticePoint> {
        let mut cur = v.to_vec();
        'outer: loop {
            for j in 0..cur.len() {
                if let Some(i) = cur[..j].iter().position(|q| *q == cur[j]) {
                    cur.drain(i + 1..=j);
                    continue 'outer;
                }
            }
            return cur;
        }
    }

    fn random_walk(len: usize, rng: &mut RngStream) -> Vec<LatticePoint> {
        let mut v = vec![LatticePoint::ORIGIN];
        for _ in 0..len {
            let last = *v.last().unwrap();
            v.push(last + rng.next_uniform_step());
        }
        v
    }

    #[test]
    fn path_validation() {
        assert!(LatticePath::new(vec![]).is_err());
        assert!(LatticePath::new(vec![p(0, 0, 0), p(1, 1, 0)]).is_err());
        let ok = LatticePath::new(vec![p(0, 0, 0), p(1, 0, 0), p(0, 0, 0)]).unwrap();
        assert!(!ok.is_simple());
        assert_eq!(ok.steps(), 2);
    }

    #[test]
    fn erasure_hand_example() {
        let path = LatticePath::new(vec![p(0, 0, 0), p(1, 0, 0), p(0, 0, 0), p(0, 1, 0)]).unwrap();
        assert_eq!(loop_erase(&path).vertices(), &[p(0, 0, 0), p(0, 1, 0)]);
    }

    #[test]
    fn erasure_identity_on_simple() {
        let path = LatticePath::new(vec![p(0, 0, 0), p(1, 0, 0), p(1, 1, 0)]).unwrap();
        assert_eq!(loop_erase(&path), path);
    }

    #[test]
    fn erasure_matches_first_loop_removal() {
        let mut rng = RngStream::new(11, 0);
        for k in 0..2000 {
            let len = 1 + (k % 200);
            let w = random_walk(len, &mut rng);
            let le = loop_erase(&LatticePath::new(w.clone()).unwrap());
            assert_eq!(le.vertices(), first_loop_removal(&w).as_slice());
        }
    }

    #[test]
    fn streaming_eraser_matches_batch() {
        let mut rng = RngStream::new(12, 0);
        for _ in 0..300 {
            let w = random_walk(500, &mut rng);
            let mut e = LoopEraser::new(LatticePoint::ORIGIN, w[0]);
            for q in &w[1..] {
                e.push(*q);
            }
            assert_eq!(e.into_path(), loop_erase(&LatticePath::new(w).unwrap()));
        }
    }

    proptest! {
        #[test]
        fn erasure_idempotent_subsequence(seed in 0u64..1000, len in 1usize..300) {
            let mut rng = RngStream::new(seed, 5);
            let w = random_walk(len, &mut rng);
            let path = LatticePath::new(w.clone()).unwrap();
            let le = loop_erase(&path);
            prop_assert!(le.is_simple());
            prop_assert_eq!(&loop_erase(&le), &le);
            prop_assert_eq!(le.first(), w[0]);
            prop_assert_eq!(le.last(), *w.last().unwrap());
            // subsequence
            let mut it = w.iter();
            prop_assert!(le.vertices().iter().all(|q| it.any(|x| x == q)));
            prop_assert!(LatticePath::new(le.vertices().to_vec()).unwrap().is_simple());
        }
    }

    #[test]
    fn srw_unit_ball_is_one_step() {
        let mut rng = RngStream::new(1, 1);
        let d = DomainSpec::from(Region::ball(LatticePoint::ORIGIN, 1.0));
        for _ in 0..50 {
            let w = simulate_srw(LatticePoint::ORIGIN, &d, &mut rng).unwrap();
            assert_eq!(w.steps(), 1);
            assert!(lerw_in_domain(LatticePoint::ORIGIN, &d, &mut rng).unwrap().is_simple());
        }
    }

    #[test]
    fn srw_determinism_and_containment() {
        let d = DomainSpec::from(Region::cube(p(2, 2, 2), 6.0));
        let a = simulate_srw(p(2, 2, 2), &d, &mut RngStream::new(3, 9)).unwrap();
        let b = simulate_srw(p(2, 2, 2), &d, &mut RngStream::new(3, 9)).unwrap();
        assert_eq!(a, b);
        let v = a.vertices();
        assert!(v[..v.len() - 1].iter().all(|q| d.contains(*q)));
        assert!(!d.contains(a.last()));
        let le = loop_erase(&a);
        assert!(le.vertices()[..le.steps()].iter().all(|q| d.contains(*q)));
    }

    #[test]
    fn srw_rejects_start_outside() {
        let d = DomainSpec::from(Region::ball(LatticePoint::ORIGIN, 3.0));
        assert!(matches!(
            simulate_srw(p(5, 0, 0), &d, &mut RngStream::new(0, 0)),
            Err(Error::StartOutsideDomain(_))
        ));
    }

    #[test]
    fn srw_step_cap_carries_partial_path() {
        let blocked: FxHashSet<_> = [p(1000, 0, 0)].into_iter().collect();
        let d = DomainSpec::complement_of(blocked, 500);
        match simulate_srw(LatticePoint::ORIGIN, &d, &mut RngStream::new(0, 0)) {
            Err(Error::StepCapExhausted { cap, partial }) => {
                assert_eq!(cap, 500);
                assert_eq!(partial.steps(), 500);
            }
            other => panic!("expected cap exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn optional_stopping_identity() {
        // |S_n|^2 - n is a martingale, so E tau = E |S_tau|^2.
        let d = DomainSpec::from(Region::ball(LatticePoint::ORIGIN, 20.0));
        let mut rng = RngStream::new(99, 0);
        let (mut t, mut sq) = (0.0, 0.0);
        let runs = 10_000;
        for _ in 0..runs {
            let w = simulate_srw(LatticePoint::ORIGIN, &d, &mut rng).unwrap();
            t += w.steps() as f64;
            sq += w.last().norm_sq() as f64;
        }
        let rel = (t - sq).abs() / t;
        assert!(rel < 0.03, "E tau {} vs E|S|^2 {}", t / runs as f64, sq / runs as f64);
    }

    #[test]
    fn ilerw_exits_at_last_vertex() {
        let mut rng = RngStream::new(5, 5);
        for _ in 0..50 {
            let s = ilerw(p(3, -1, 2), 10.0, 4.0, &mut rng).unwrap();
            let v = s.path.vertices();
            assert!(s.path.is_simple());
            assert!(v[..v.len() - 1].iter().all(|q| q.dist(p(3, -1, 2)) < 10.0));
            assert!(s.path.last().dist(p(3, -1, 2)) >= 10.0);
            assert_eq!(s.safety_factor, 4.0);
        }
        assert!(ilerw(LatticePoint::ORIGIN, 10.0, 2.0, &mut rng).is_err());
    }

    #[test]
    fn ilerw_restriction_is_consistent() {
        // Restricting the same erasure to r' < r equals restricting in two stages.
        let mut rng = RngStream::new(8, 8);
        for _ in 0..20 {
            let (full, _) = killed_lerw(LatticePoint::ORIGIN, 64.0, &mut rng).unwrap();
            let a = full.restrict_to_ball(LatticePoint::ORIGIN, 16.0);
            let b = full
                .restrict_to_ball(LatticePoint::ORIGIN, 32.0)
                .restrict_to_ball(LatticePoint::ORIGIN, 16.0);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn growth_unit_radius_is_one_step() {
        let rows = growth_samples(&[1, 2, 4], 20, 4.0, 17).unwrap();
        assert_eq!(rows.len(), 60);
        assert!(rows.iter().filter(|r| r.radius == 1).all(|r| r.length == 1));
        let rerun = growth_samples(&[1, 2, 4], 20, 4.0, 17).unwrap();
        assert_eq!(rows, rerun);
        assert!(growth_samples(&[4, 2], 1, 4.0, 0).is_err());
    }

    #[test]
    fn growth_mean_increases_and_upper_tail() {
        let rows = growth_samples(&[4, 8, 16], 300, 4.0, 23).unwrap();
        let mean = |n: u32| {
            let v: Vec<_> = rows.iter().filter(|r| r.radius == n).map(|r| r.length as f64).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(4) < mean(8) && mean(8) < mean(16));
        // P(ξ_n <= 8 n^β) with β = 1.624
        for n in [16u32] {
            let bound = 8.0 * (n as f64).powf(1.624);
            let ok = rows.iter().filter(|r| r.radius == n && (r.length as f64) <= bound).count();
            assert!(ok as f64 / 300.0 > 0.99);
        }
    }
}
