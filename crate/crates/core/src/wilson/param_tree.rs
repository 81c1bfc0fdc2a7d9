use std::fs;
use std::path::Path;

use rustc_hash::{FxHashMap, FxHashSet};
use serde::Serialize;

use crate::curve::{chi_distance, Curve, Point3, TransientCurve};
use crate::error::{invalid, Error, Result};
use crate::lattice::LatticePoint;
use crate::lerw::{LatticePath, LoopEraser, MAX_PACKED_EXTENT};
use crate::rng::RngStream;

/// Exact point identity (with `-0.0` folded into `0.0`).
fn key(p: Point3) -> [u64; 3] {
    p.map(|c| (c + 0.0).to_bits())
}

/// Index of the first knot of `a` lying on the knots of `b`.
fn first_hit(a: &Curve, b: &Curve) -> Option<usize> {
    let trace: FxHashSet<[u64; 3]> = b.points().iter().map(|p| key(*p)).collect();
    a.points().iter().position(|p| trace.contains(&key(*p)))
}

fn knot_at(c: &Curve, t: f64) -> Option<usize> {
    let k = c.times().partition_point(|&s| s < t);
    (k < c.times().len() && c.times()[k] == t).then_some(k)
}

/// `K` spanning points with one transient curve each and the merging times
/// `merging[i][j] = s^{ij}` (diagonal unused, zero).
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterizedTree {
    pub points: Vec<Point3>,
    pub curves: Vec<TransientCurve>,
    pub merging: Vec<Vec<f64>>,
}

impl ParameterizedTree {
    pub fn k(&self) -> usize {
        self.points.len()
    }

    /// Merging times recomputed as first-common-knot times.
    pub fn scan_merging_times(curves: &[TransientCurve]) -> Result<Vec<Vec<f64>>> {
        let k = curves.len();
        let mut m = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    let a = curves[i].curve();
                    let idx = first_hit(a, curves[j].curve()).ok_or(Error::TruncationExceeded { index: i })?;
                    m[i][j] = a.times()[idx];
                }
            }
        }
        Ok(m)
    }

    /// Conditions (a) and (b) at knot resolution: after their merging times
    /// two curves coincide knot for knot, and before them they are disjoint.
    pub fn check_conditions(&self) -> Result<()> {
        let k = self.k();
        if self.curves.len() != k || self.merging.len() != k || self.merging.iter().any(|r| r.len() != k) {
            return Err(Error::SizeMismatch(k, self.curves.len()));
        }
        for i in 0..k {
            if key(self.curves[i].curve().start()) != key(self.points[i]) {
                return Err(Error::InvalidInstance(format!("curve {i} does not start at its spanning point")));
            }
            for j in i + 1..k {
                let (a, b) = (self.curves[i].curve(), self.curves[j].curve());
                let bad = || Error::InvalidInstance(format!("merging times of curves {i} and {j}"));
                let ka = knot_at(a, self.merging[i][j]).ok_or_else(bad)?;
                let kb = knot_at(b, self.merging[j][i]).ok_or_else(bad)?;
                let (sa, sb) = (&a.points()[ka..], &b.points()[kb..]);
                let (ta, tb) = (&a.times()[ka..], &b.times()[kb..]);
                let same_suffix = sa.len() == sb.len()
                    && sa.iter().zip(sb).all(|(p, q)| key(*p) == key(*q))
                    && ta.iter().zip(tb).all(|(x, y)| x - ta[0] == y - tb[0]);
                if !same_suffix {
                    return Err(Error::InvalidInstance(format!("condition (a) fails for curves {i} and {j}")));
                }
                let pre: FxHashSet<_> = a.points()[..ka].iter().map(|p| key(*p)).collect();
                if b.points()[..kb].iter().any(|p| pre.contains(&key(*p))) {
                    return Err(Error::InvalidInstance(format!("condition (b) fails for curves {i} and {j}")));
                }
            }
        }
        Ok(())
    }

    /// One `branch_<i>.curve` text file per spanning point and a
    /// `merging.txt` matrix (row `i` holds `s^{i,j}`).
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (i, c) in self.curves.iter().enumerate() {
            fs::write(dir.join(format!("branch_{i}.curve")), c.curve().to_text())?;
        }
        let mut s = String::new();
        for row in &self.merging {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        fs::write(dir.join("merging.txt"), s)?;
        Ok(())
    }
}

/// Walk from `start` until it hits `tree` or leaves the kill ball about the
/// origin; returns the loop erasure and the tree vertex hit, if any.
fn lerw_to_tree(
    start: LatticePoint,
    kill_r2: i128,
    tree: &FxHashMap<LatticePoint, (u32, u32)>,
    rng: &mut RngStream,
) -> (Vec<LatticePoint>, Option<(u32, u32)>) {
    let mut eraser = LoopEraser::new(LatticePoint::ORIGIN, start);
    let mut p = start;
    loop {
        p = p + rng.next_uniform_step();
        eraser.push(p);
        if let Some(&hit) = tree.get(&p) {
            return (eraser.into_path().into_vertices(), Some(hit));
        }
        if p.norm_sq() >= kill_r2 {
            return (eraser.into_path().into_vertices(), None);
        }
    }
}

/// Infinity-rooted subtree spanned by `points`, by Wilson's algorithm.
///
/// Branch 0 is the loop erasure of a walk from `points[0]` killed on leaving
/// `B(0, K R)`; branch `i` is the loop erasure of a walk from `points[i]`
/// stopped on hitting branches `0..i`. Each curve follows the tree from its
/// spanning point and is cut at its first exit of `B(0, R)`. Errors (with
/// 0-based branch indices) flag a walk reaching the kill radius or a branch
/// leaving `B(0, R)` before it merges.
pub fn spanned_subtree(
    points: &[LatticePoint],
    truncation_radius: f64,
    safety_factor: f64,
    rng: &mut RngStream,
) -> Result<ParameterizedTree> {
    if points.is_empty() {
        return Err(invalid("points", "need at least one spanning point"));
    }
    let mut seen = FxHashSet::default();
    if let Some(i) = points.iter().position(|p| !seen.insert(*p)) {
        return Err(Error::DuplicateSpanningPoint(i));
    }
    let max_norm = points.iter().map(|p| p.norm()).fold(0.0, f64::max);
    if !(truncation_radius > max_norm) {
        return Err(invalid(
            "truncation_radius",
            format!("must exceed the largest spanning-point norm {max_norm}"),
        ));
    }
    if !(safety_factor >= 1.0) || safety_factor * truncation_radius > MAX_PACKED_EXTENT {
        return Err(invalid("safety_factor", format!("got {safety_factor}")));
    }
    let kill = safety_factor * truncation_radius;
    let kill_r2 = (kill * kill).ceil() as i128;
    let r2 = truncation_radius * truncation_radius;

    let mut tree: FxHashMap<LatticePoint, (u32, u32)> = FxHashMap::default();
    let mut full: Vec<Vec<LatticePoint>> = Vec::with_capacity(points.len());
    let mut branch_len = Vec::with_capacity(points.len());
    for (i, &x) in points.iter().enumerate() {
        let (branch, hit) = if let Some(&h) = tree.get(&x) {
            (vec![x], Some(h))
        } else {
            lerw_to_tree(x, kill_r2, &tree, rng)
        };
        let own = if hit.is_some() { branch.len() - 1 } else { branch.len() };
        branch_len.push(branch.len());
        let path = match hit {
            None if i > 0 => return Err(Error::SafetyFactorExceeded { index: i }),
            None => branch,
            Some((b, idx)) => {
                let mut p = branch;
                p.pop();
                p.extend_from_slice(&full[b as usize][idx as usize..]);
                p
            }
        };
        for (k, v) in path[..own].iter().enumerate() {
            tree.insert(*v, (i as u32, k as u32));
        }
        full.push(path);
    }

    let mut curves = Vec::with_capacity(points.len());
    for (i, path) in full.iter().enumerate() {
        let cut = path
            .iter()
            .position(|v| (v.norm_sq() as f64) >= r2)
            .ok_or(Error::TruncationExceeded { index: i })?;
        // the pre-merge part of the branch must lie inside the ball
        if i > 0 && cut + 1 < branch_len[i] {
            return Err(Error::TruncationExceeded { index: i });
        }
        let lp = LatticePath::simple_unchecked(path[..=cut].to_vec());
        curves.push(TransientCurve::new(Curve::from_path(&lp), truncation_radius)?);
    }
    let merging = ParameterizedTree::scan_merging_times(&curves)?;
    let tree = ParameterizedTree {
        points: points.iter().map(|p| p.to_f64()).collect(),
        curves,
        merging,
    };
    // a merge past one curve's truncation shows up as a broken condition (a)
    tree.check_conditions().map_err(|_| Error::TruncationExceeded {
        index: points.len() - 1,
    })?;
    Ok(tree)
}

/// Essential branches and branching points; `branching_points[0]` is `None`
/// (the point at infinity).
#[derive(Clone, Debug, PartialEq)]
pub struct EssentialBranchSet {
    pub branches: Vec<Curve>,
    pub branching_points: Vec<Option<Point3>>,
    pub truncation_radius: f64,
}

/// Branch `i` is `γ^i` on `[0, min_{j<i} s^{i,j}]`; branch 0 is `γ^0`.
pub fn essential_branches(tree: &ParameterizedTree) -> Result<EssentialBranchSet> {
    let k = tree.k();
    if k == 0 {
        return Err(invalid("tree", "no spanning points"));
    }
    let mut branches = vec![tree.curves[0].curve().clone()];
    let mut branching_points = vec![None];
    for i in 1..k {
        let s = (0..i).map(|j| tree.merging[i][j]).fold(f64::INFINITY, f64::min);
        let c = tree.curves[i].curve();
        branches.push(c.restrict(0.0, s)?);
        branching_points.push(Some(c.eval(s)?));
    }
    Ok(EssentialBranchSet {
        branches,
        branching_points,
        truncation_radius: tree.curves[0].truncation_radius(),
    })
}

/// Rebuilds the curves: `γ^i` is branch `i` followed by the part of the
/// lowest-indexed earlier curve after the branch endpoint.
pub fn reconstruct(set: &EssentialBranchSet) -> Result<ParameterizedTree> {
    if set.branches.is_empty() {
        return Err(invalid("branches", "empty"));
    }
    let mut curves: Vec<TransientCurve> = vec![TransientCurve::new(set.branches[0].clone(), set.truncation_radius)?];
    // lowest curve index and knot index of every point on earlier curves
    let mut trace: FxHashMap<[u64; 3], (usize, usize)> = FxHashMap::default();
    let add = |trace: &mut FxHashMap<_, _>, j: usize, c: &Curve| {
        for (k, p) in c.points().iter().enumerate() {
            trace.entry(key(*p)).or_insert((j, k));
        }
    };
    add(&mut trace, 0, curves[0].curve());
    for (i, b) in set.branches.iter().enumerate().skip(1) {
        let n = b.points().len();
        if b.points()[..n - 1].iter().any(|p| trace.contains_key(&key(*p))) {
            return Err(Error::BranchNotFirstHit(i));
        }
        let &(j, k) = trace.get(&key(b.end())).ok_or(Error::DanglingBranch(i))?;
        let cj = curves[j].curve();
        let suffix = cj.restrict(cj.times()[k], cj.duration())?;
        let c = b.concatenate(&suffix)?;
        let c = TransientCurve::new(c, set.truncation_radius)?;
        add(&mut trace, i, c.curve());
        curves.push(c);
    }
    let merging = ParameterizedTree::scan_merging_times(&curves)?;
    Ok(ParameterizedTree {
        points: set.branches.iter().map(|b| b.start()).collect(),
        curves,
        merging,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ForestDistance {
    pub value: f64,
    /// Bound on the truncated χ tails, `2^{-horizon}`.
    pub remainder: f64,
}

/// `max_i χ(γ_i, γ̃_i) + max_{i,j} |s^{ij} - s̃^{ij}|`.
pub fn forest_distance(a: &ParameterizedTree, b: &ParameterizedTree, horizon: u32) -> Result<ForestDistance> {
    if a.k() != b.k() {
        return Err(Error::SizeMismatch(a.k(), b.k()));
    }
    let mut chi = 0.0f64;
    let mut remainder = 0.5f64.powi(horizon as i32);
    for (ca, cb) in a.curves.iter().zip(&b.curves) {
        let v = chi_distance(ca, cb, horizon)?;
        chi = chi.max(v.value);
        remainder = v.remainder;
    }
    let mut merge = 0.0f64;
    for i in 0..a.k() {
        for j in 0..a.k() {
            if i != j {
                merge = merge.max((a.merging[i][j] - b.merging[i][j]).abs());
            }
        }
    }
    Ok(ForestDistance {
        value: chi + merge,
        remainder,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: i64, y: i64, z: i64) -> LatticePoint {
        LatticePoint::new(x, y, z)
    }

    fn sample(seed: u64, pts: &[LatticePoint], radius: f64) -> Option<ParameterizedTree> {
        spanned_subtree(pts, radius, 4.0, &mut RngStream::new(seed, 0)).ok()
    }

    #[test]
    fn single_point_is_an_ilerw() {
        let t = sample(1, &[p(1, 0, 0)], 10.0).unwrap();
        assert_eq!(t.k(), 1);
        assert_eq!(t.merging, vec![vec![0.0]]);
        let c = t.curves[0].curve();
        assert_eq!(c.start(), [1.0, 0.0, 0.0]);
        let n = c.points().len();
        assert!(c.points()[..n - 1].iter().all(|q| q.iter().map(|v| v * v).sum::<f64>() < 100.0));
        let e = essential_branches(&t).unwrap();
        assert_eq!(e.branching_points, vec![None]);
    }

    #[test]
    fn point_on_first_branch_gives_zero_length_branch() {
        let seed = 2;
        let t1 = sample(seed, &[p(0, 0, 0)], 12.0).unwrap();
        let q = t1.curves[0].curve().points()[3];
        let x2 = p(q[0] as i64, q[1] as i64, q[2] as i64);
        let t2 = sample(seed, &[p(0, 0, 0), x2], 12.0).unwrap();
        assert_eq!(t2.curves[0], t1.curves[0]);
        assert_eq!(t2.merging[1][0], 0.0);
        assert_eq!(t2.merging[0][1], 3.0);
        let e = essential_branches(&t2).unwrap();
        assert_eq!(e.branches[1].duration(), 0.0);
        assert_eq!(e.branching_points[1], Some(q));
        assert_eq!(reconstruct(&e).unwrap(), t2);
    }

    fn edges_of(c: &Curve) -> Vec<([u64; 3], [u64; 3])> {
        c.points()
            .windows(2)
            .map(|w| {
                let (a, b) = (key(w[0]), key(w[1]));
                if a < b {
                    (a, b)
                } else {
                    (b, a)
                }
            })
            .collect()
    }

    fn random_points(rng: &mut RngStream, k: usize, spread: u32) -> Vec<LatticePoint> {
        let mut pts = Vec::new();
        while pts.len() < k {
            let c = |rng: &mut RngStream| rng.below(2 * spread + 1) as i64 - spread as i64;
            let q = p(c(rng), c(rng), c(rng));
            if !pts.contains(&q) {
                pts.push(q);
            }
        }
        pts
    }

    #[test]
    fn subtrees_are_trees_and_satisfy_conditions() {
        // a walk can escape the truncation ball before merging (escape
        // probability decays only like n^{-(2-β)}), so failures are expected
        let mut rng = RngStream::new(3, 1);
        let mut ok = 0;
        for seed in 0..120 {
            let pts = random_points(&mut rng, 4, 3);
            let Some(t) = sample(seed, &pts, 32.0) else { continue };
            ok += 1;
            t.check_conditions().unwrap();
            // union of traces as a graph on lattice vertices has no cycle
            let mut edges: Vec<_> = t.curves.iter().flat_map(|c| edges_of(c.curve())).collect();
            edges.sort_unstable();
            edges.dedup();
            let mut uf: FxHashMap<[u64; 3], [u64; 3]> = FxHashMap::default();
            fn find(uf: &mut FxHashMap<[u64; 3], [u64; 3]>, x: [u64; 3]) -> [u64; 3] {
                let mut r = x;
                while let Some(&q) = uf.get(&r) {
                    if q == r {
                        break;
                    }
                    r = q;
                }
                uf.insert(x, r);
                r
            }
            for (a, b) in edges {
                uf.entry(a).or_insert(a);
                uf.entry(b).or_insert(b);
                let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
                assert_ne!(ra, rb, "cycle in the union of traces");
                uf.insert(ra, rb);
            }
            // y(2) is the first vertex of γ^2 on the trace of γ^1
            let e = essential_branches(&t).unwrap();
            let c1 = t.curves[1].curve();
            let on_first: Vec<_> = t.curves[0].curve().points().to_vec();
            let y = c1.points().iter().find(|q| on_first.contains(q)).copied();
            assert_eq!(e.branching_points[1], y);
        }
        assert!(ok >= 30, "only {ok} subtrees completed");
    }

    #[test]
    fn round_trip() {
        let mut rng = RngStream::new(4, 1);
        let mut done = 0;
        for seed in 0..40 {
            let k = 1 + (seed % 4) as usize;
            let pts = random_points(&mut rng, k, 3);
            let Some(t) = sample(100 + seed, &pts, 24.0) else { continue };
            let back = reconstruct(&essential_branches(&t).unwrap()).unwrap();
            assert_eq!(back, t);
            done += 1;
        }
        assert!(done >= 15, "{done}");
    }

    fn line_curve(pts: &[[i64; 3]]) -> Curve {
        let v: Vec<_> = pts.iter().map(|q| p(q[0], q[1], q[2])).collect();
        Curve::from_path(&LatticePath::new(v).unwrap())
    }

    #[test]
    fn synthetic_reconstruction() {
        let b1 = line_curve(&[[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0], [4, 0, 0], [5, 0, 0]]);
        let b2 = line_curve(&[[2, 3, 0], [2, 2, 0], [2, 1, 0], [2, 0, 0]]);
        let set = EssentialBranchSet {
            branches: vec![b1, b2],
            branching_points: vec![None, Some([2.0, 0.0, 0.0])],
            truncation_radius: 5.0,
        };
        let t = reconstruct(&set).unwrap();
        let expect = line_curve(&[[2, 3, 0], [2, 2, 0], [2, 1, 0], [2, 0, 0], [3, 0, 0], [4, 0, 0], [5, 0, 0]]);
        assert_eq!(t.curves[1].curve(), &expect);
        assert_eq!(t.merging[1][0], 3.0);
        assert_eq!(t.merging[0][1], 2.0);
        t.check_conditions().unwrap();

        let mut dangling = set.clone();
        dangling.branches[1] = line_curve(&[[2, 3, 0], [2, 2, 0], [2, 1, 0]]);
        assert!(matches!(reconstruct(&dangling), Err(Error::DanglingBranch(1))));
        let mut crossing = set.clone();
        crossing.branches[1] = line_curve(&[[1, 1, 0], [1, 0, 0], [2, 0, 0]]);
        assert!(matches!(reconstruct(&crossing), Err(Error::BranchNotFirstHit(1))));
    }

    #[test]
    fn forest_distance_examples() {
        let t = sample(7, &[p(0, 0, 0), p(2, 1, 0)], 14.0).unwrap();
        let d = forest_distance(&t, &t, 3).unwrap();
        assert_eq!(d.value, 0.0);
        assert_eq!(d.remainder, 0.125);
        let mut u = t.clone();
        u.merging[0][1] += 0.3;
        assert!((forest_distance(&t, &u, 3).unwrap().value - 0.3).abs() < 1e-12);
        let single = sample(7, &[p(0, 0, 0)], 14.0).unwrap();
        assert!(matches!(forest_distance(&t, &single, 3), Err(Error::SizeMismatch(2, 1))));
    }

    #[test]
    fn forest_distance_is_a_pseudometric() {
        let pts = [p(0, 0, 0), p(2, 0, 1)];
        let trees: Vec<_> = (0..40).filter_map(|s| sample(200 + s, &pts, 12.0)).collect();
        let h = 4;
        let ok: Vec<_> = trees.iter().filter(|t| t.curves.iter().all(|c| c.valid_until() >= h as f64)).collect();
        for a in &ok {
            for b in &ok {
                let ab = forest_distance(a, b, h).unwrap().value;
                assert!((ab - forest_distance(b, a, h).unwrap().value).abs() < 1e-12);
                for c in ok.iter().take(6) {
                    let ac = forest_distance(a, c, h).unwrap().value;
                    let bc = forest_distance(b, c, h).unwrap().value;
                    assert!(ac <= ab + bc + 1e-12);
                }
            }
        }
    }

    #[test]
    fn input_validation() {
        let mut rng = RngStream::new(0, 0);
        assert!(matches!(
            spanned_subtree(&[p(0, 0, 0), p(0, 0, 0)], 5.0, 4.0, &mut rng),
            Err(Error::DuplicateSpanningPoint(1))
        ));
        assert!(spanned_subtree(&[p(6, 0, 0)], 5.0, 4.0, &mut rng).is_err());
    }

    #[test]
    fn write_dir_layout() {
        let t = sample(9, &[p(0, 0, 0), p(1, 1, 0)], 8.0).unwrap();
        let dir = std::env::temp_dir().join(format!("ustlab-ptree-{}", std::process::id()));
        t.write_dir(&dir).unwrap();
        let c = Curve::from_text(&fs::read_to_string(dir.join("branch_1.curve")).unwrap()).unwrap();
        assert_eq!(&c, t.curves[1].curve());
        let m = fs::read_to_string(dir.join("merging.txt")).unwrap();
        assert_eq!(m.lines().count(), 2);
        fs::remove_dir_all(dir).unwrap();
    }
}
