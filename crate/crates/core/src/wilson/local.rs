//! Wired uniform spanning tree of a large cube, revealed only near the
//! origin.
//!
//! Wilson's algorithm may process vertices in any order, so running it from
//! the points of a Euclidean ball (and, later, of larger balls) yields the
//! exact marginal of the full wired tree on every revealed vertex.

use rustc_hash::FxHashMap;

use super::{SpanningTree, TreeRoot, NO_PARENT};
use crate::error::{invalid, Error, Result};
use crate::lattice::{LatticePoint, UNIT_STEPS};
use crate::rng::RngStream;

pub struct LocalUst {
    half_extent: i64,
    points: Vec<LatticePoint>,
    parent: Vec<u32>,
    index: FxHashMap<LatticePoint, u32>,
    /// Tree neighbours of expanded vertices; `GHOST` marks the boundary.
    adj: Vec<Option<Box<[u32]>>>,
    covered: f64,
    walk_steps: u64,
    rng: RngStream,
}

/// Neighbour entry standing for the wired boundary.
pub const GHOST: u32 = u32::MAX;

impl LocalUst {
    /// Nothing is revealed until the first `cover` call.
    pub fn new(half_extent: i64, rng: RngStream) -> Result<Self> {
        if half_extent < 1 {
            return Err(invalid("half_extent", "must be >= 1"));
        }
        Ok(LocalUst {
            half_extent,
            points: Vec::new(),
            parent: Vec::new(),
            index: FxHashMap::default(),
            adj: Vec::new(),
            covered: -1.0,
            walk_steps: 0,
            rng,
        })
    }

    pub fn half_extent(&self) -> i64 {
        self.half_extent
    }

    /// Every lattice point of the box within this distance of the origin is
    /// revealed.
    pub fn covered_radius(&self) -> f64 {
        self.covered
    }

    /// All tree edges at `p` are revealed by the Euclidean cover.
    pub fn is_complete_at(&self, p: LatticePoint) -> bool {
        p.norm() <= self.covered - 1.0
    }

    pub fn revealed(&self) -> usize {
        self.points.len()
    }

    /// Largest distance from the origin of a vertex whose tree neighbours
    /// have been computed.
    pub fn expanded_reach(&self) -> f64 {
        self.points
            .iter()
            .zip(&self.adj)
            .filter(|(_, a)| a.is_some())
            .map(|(p, _)| p.norm())
            .fold(0.0, f64::max)
    }

    pub fn walk_steps(&self) -> u64 {
        self.walk_steps
    }

    pub fn index_of(&self, p: LatticePoint) -> Option<u32> {
        self.index.get(&p).copied()
    }

    pub fn point(&self, v: u32) -> LatticePoint {
        self.points[v as usize]
    }

    /// Adds `p` (a box point) and its path to the current tree; returns its
    /// index.
    pub fn reveal(&mut self, p: LatticePoint) -> Result<u32> {
        if let Some(&i) = self.index.get(&p) {
            return Ok(i);
        }
        if !self.in_box(p) {
            return Err(invalid("p", format!("{p:?} lies outside the box")));
        }
        let mut next: FxHashMap<LatticePoint, LatticePoint> = FxHashMap::default();
        let mut u = p;
        loop {
            let q = u + UNIT_STEPS[self.rng.next_direction()];
            next.insert(u, q);
            self.walk_steps += 1;
            if !self.in_box(q) || self.index.contains_key(&q) {
                break;
            }
            u = q;
        }
        let first = self.points.len() as u32;
        let mut u = p;
        loop {
            let q = next[&u];
            let i = self.points.len() as u32;
            self.points.push(u);
            self.index.insert(u, i);
            self.adj.push(None);
            if !self.in_box(q) {
                self.parent.push(NO_PARENT);
                break;
            }
            match self.index.get(&q) {
                Some(&j) if j < first => {
                    self.parent.push(j);
                    break;
                }
                _ => self.parent.push(i + 1),
            }
            u = q;
        }
        Ok(first)
    }

    /// Tree neighbours of `v`, revealing its lattice neighbours first so the
    /// list is final.
    pub fn tree_neighbors(&mut self, v: u32) -> Result<&[u32]> {
        if self.adj[v as usize].is_none() {
            let p = self.points[v as usize];
            let mut nb = Vec::with_capacity(6);
            nb.push(match self.parent[v as usize] {
                NO_PARENT => GHOST,
                q => q,
            });
            for step in UNIT_STEPS {
                let q = p + step;
                if self.in_box(q) {
                    let w = self.reveal(q)?;
                    if self.parent[w as usize] == v {
                        nb.push(w);
                    }
                }
            }
            self.adj[v as usize] = Some(nb.into_boxed_slice());
        }
        Ok(self.adj[v as usize].as_deref().unwrap())
    }

    /// Reveals every vertex within tree distance `radius + 1` of `center`
    /// together with all tree edges at distance at most `radius`.
    /// Fails if the ball reaches the wired boundary.
    pub fn reveal_intrinsic_ball(&mut self, center: LatticePoint, radius: u64) -> Result<()> {
        self.explore(center, |_, d| d <= radius)
    }

    /// Reveals the tree component of `center` inside the closed Euclidean
    /// ball of radius `radius`, with all tree edges at its vertices.
    pub fn reveal_euclidean_component(&mut self, center: LatticePoint, radius: f64) -> Result<()> {
        let r2 = radius * radius;
        self.explore(center, move |p, _| ((p - center).norm_sq() as f64) <= r2)
    }

    fn explore(&mut self, center: LatticePoint, keep: impl Fn(LatticePoint, u64) -> bool) -> Result<()> {
        let c = self.reveal(center)?;
        let mut seen: FxHashMap<u32, ()> = FxHashMap::default();
        seen.insert(c, ());
        let mut queue = std::collections::VecDeque::from([(c, 0u64)]);
        while let Some((v, d)) = queue.pop_front() {
            let nb = self.tree_neighbors(v)?.to_vec();
            for w in nb {
                if w == GHOST {
                    return Err(Error::InvalidInstance(format!(
                        "exploration reached the wired boundary of the half-extent {} box",
                        self.half_extent
                    )));
                }
                if seen.insert(w, ()).is_none() && keep(self.points[w as usize], d + 1) {
                    queue.push_back((w, d + 1));
                }
            }
        }
        Ok(())
    }

    fn in_box(&self, p: LatticePoint) -> bool {
        p.norm_inf() <= self.half_extent
    }

    /// Runs Wilson's algorithm from every box point within distance `rho`
    /// not yet in the tree, in order of distance from the origin.
    pub fn cover(&mut self, rho: f64) -> Result<()> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(invalid("rho", format!("must be finite and >= 0, got {rho}")));
        }
        if rho <= self.covered {
            return Ok(());
        }
        let k = (rho.floor() as i64).min(self.half_extent);
        let mut starts = Vec::new();
        for x in -k..=k {
            for y in -k..=k {
                for z in -k..=k {
                    let p = LatticePoint::new(x, y, z);
                    if (p.norm_sq() as f64) <= rho * rho && !self.index.contains_key(&p) {
                        starts.push(p);
                    }
                }
            }
        }
        starts.sort_by_key(|p| (p.norm_sq(), p.x, p.y, p.z));
        for p in starts {
            self.reveal(p)?;
        }
        self.covered = rho;
        Ok(())
    }

    /// The revealed subforest, rooted at the wired boundary.
    pub fn tree(&self) -> SpanningTree {
        SpanningTree {
            vertices: self.points.clone(),
            parent: self.parent.clone(),
            root: TreeRoot::Wired,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Region;
    use crate::wilson::{wilson_box, BoxRoot};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn two_sample_p(a: &[u64], b: &[u64]) -> f64 {
        let mut stat = 0.0;
        let mut cells = 0;
        for (&x, &y) in a.iter().zip(b) {
            let tot = (x + y) as f64;
            if tot < 10.0 {
                continue;
            }
            cells += 1;
            let e = tot / 2.0;
            stat += (x as f64 - e).powi(2) / e + (y as f64 - e).powi(2) / e;
        }
        1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat)
    }

    #[test]
    fn revealed_forest_is_valid_and_grows() {
        let mut ust = LocalUst::new(20, RngStream::new(50, 0)).unwrap();
        ust.cover(3.0).unwrap();
        let n3 = ust.revealed();
        let t = ust.tree();
        SpanningTree::new(t.vertices().to_vec(), t.parent().to_vec(), TreeRoot::Wired).unwrap();
        assert!(n3 >= Region::ball(LatticePoint::ORIGIN, 3.01).points().len());
        ust.cover(2.0).unwrap();
        assert_eq!(ust.revealed(), n3);
        ust.cover(6.0).unwrap();
        let t = ust.tree();
        SpanningTree::new(t.vertices().to_vec(), t.parent().to_vec(), TreeRoot::Wired).unwrap();
        // earlier edges are kept
        assert_eq!(&t.parent()[..n3], &ust.tree().parent()[..n3]);
        assert!(ust.is_complete_at(LatticePoint::new(5, 0, 0)));
        assert!(!ust.is_complete_at(LatticePoint::new(6, 0, 0)));
        assert!(LocalUst::new(0, RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn full_cover_is_deterministic() {
        let run = || {
            let mut u = LocalUst::new(4, RngStream::new(51, 3)).unwrap();
            u.cover(3.5).unwrap();
            u.tree()
        };
        assert_eq!(run(), run());
    }

    /// Two-sample chi-square: degree of the origin after a local cover
    /// against the full-box sampler on the same wired cube.
    #[test]
    fn local_marginal_matches_full_box() {
        let h = 2;
        let samples = 20_000;
        let mut local = [0u64; 7];
        let mut full = [0u64; 7];
        let mut rng = RngStream::new(52, 0);
        let region = Region::cube(LatticePoint::ORIGIN, (h + 1) as f64);
        let degree = |t: &SpanningTree| {
            let o = t.vertices().iter().position(|p| *p == LatticePoint::ORIGIN).unwrap() as u32;
            let children = t.parent().iter().filter(|&&q| q == o).count();
            children + 1
        };
        for s in 0..samples {
            let mut u = LocalUst::new(h, rng.derive(1000 + s)).unwrap();
            u.cover(1.0).unwrap();
            local[degree(&u.tree())] += 1;
            let t = wilson_box(&region, BoxRoot::Wired, &mut rng).unwrap();
            full[degree(&t)] += 1;
        }
        assert!(two_sample_p(&local, &full) > 0.001, "{local:?} vs {full:?}");
    }

    #[test]
    fn on_demand_ball_is_fully_expanded() {
        use crate::tree::{expected_exit_time, StopRule, TreeMetricView};
        for seed in 0..5 {
            let mut lazy = LocalUst::new(40, RngStream::new(53, seed)).unwrap();
            lazy.reveal_intrinsic_ball(LatticePoint::ORIGIN, 12).unwrap();
            lazy.reveal_euclidean_component(LatticePoint::ORIGIN, 4.0).unwrap();
            let t = lazy.tree();
            SpanningTree::new(t.vertices().to_vec(), t.parent().to_vec(), TreeRoot::Wired).unwrap();
            let v = TreeMetricView::new(&t);
            let o = v.index_of(LatticePoint::ORIGIN).unwrap();
            let vol = v.ball_volume(o, 12).unwrap();
            let ei = expected_exit_time(&v, o, StopRule::IntrinsicExit(12)).unwrap();
            let ee = expected_exit_time(&v, o, StopRule::EuclideanExit(4.0)).unwrap();
            assert!(vol >= 13 && ei > 0.0 && ee > 0.0);
            // every ball vertex is fully expanded: degrees match the stored lists
            for (x, d) in v.ball(o, 12).unwrap() {
                let nb = lazy.tree_neighbors(x as u32).unwrap().len();
                assert_eq!(nb, v.degree(x), "vertex at distance {d}");
            }
        }
    }

    /// Origin degree under on-demand revelation against the full-box sampler.
    #[test]
    fn on_demand_marginal_matches_full_box() {
        let h = 2;
        let samples = 20_000;
        let mut local = [0u64; 7];
        let mut full = [0u64; 7];
        let mut rng = RngStream::new(54, 0);
        let region = Region::cube(LatticePoint::ORIGIN, (h + 1) as f64);
        for s in 0..samples {
            let mut u = LocalUst::new(h, rng.derive(1000 + s)).unwrap();
            let o = u.reveal(LatticePoint::ORIGIN).unwrap();
            local[u.tree_neighbors(o).unwrap().len()] += 1;
            let t = wilson_box(&region, BoxRoot::Wired, &mut rng).unwrap();
            let o = t.vertices().iter().position(|p| *p == LatticePoint::ORIGIN).unwrap() as u32;
            full[t.parent().iter().filter(|&&q| q == o).count() + 1] += 1;
        }
        assert!(two_sample_p(&local, &full) > 0.001, "{local:?} vs {full:?}");
    }
}
