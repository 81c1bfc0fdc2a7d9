//! Gromov-Hausdorff-Prohorov style comparisons of small measured, rooted,
//! spatial trees, and Schramm's path-ensemble distance.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;
use crate::tree::TreeMetricView;
use crate::wilson::{SpanningTree, TreeRoot};

pub const MAX_POINTS: usize = 64;
const TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RawTree {
    distances: Vec<Vec<f64>>,
    masses: Vec<f64>,
    embedding: Vec<[f64; 3]>,
    root: usize,
}

/// Finite measured, rooted, spatial tree `(T, d, μ, φ, ρ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTree", into = "RawTree")]
pub struct FiniteMeasuredSpatialTree {
    d: Vec<Vec<f64>>,
    mass: Vec<f64>,
    phi: Vec<[f64; 3]>,
    root: usize,
}

impl TryFrom<RawTree> for FiniteMeasuredSpatialTree {
    type Error = Error;
    fn try_from(r: RawTree) -> Result<Self> {
        FiniteMeasuredSpatialTree::new(r.distances, r.masses, r.embedding, r.root)
    }
}

impl From<FiniteMeasuredSpatialTree> for RawTree {
    fn from(t: FiniteMeasuredSpatialTree) -> Self {
        RawTree {
            distances: t.d,
            masses: t.mass,
            embedding: t.phi,
            root: t.root,
        }
    }
}

fn euclid(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Multiplicative rescaling applied when extracting an instance from a
/// lattice tree.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rescaling {
    pub distance: f64,
    pub mass: f64,
    pub space: f64,
}

impl Default for Rescaling {
    fn default() -> Self {
        Rescaling {
            distance: 1.0,
            mass: 1.0,
            space: 1.0,
        }
    }
}

impl FiniteMeasuredSpatialTree {
    /// Validates symmetry, the triangle inequality and the four-point
    /// condition to within 1e-9.
    pub fn new(d: Vec<Vec<f64>>, mass: Vec<f64>, phi: Vec<[f64; 3]>, root: usize) -> Result<Self> {
        let n = d.len();
        if n == 0 || n > MAX_POINTS {
            return Err(invalid("distances", format!("need 1 to {MAX_POINTS} points, got {n}")));
        }
        if mass.len() != n {
            return Err(Error::SizeMismatch(n, mass.len()));
        }
        if phi.len() != n {
            return Err(Error::SizeMismatch(n, phi.len()));
        }
        if root >= n {
            return Err(Error::UnknownVertex(root));
        }
        if d.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidInstance("distance matrix is not square".into()));
        }
        if d.iter().flatten().any(|v| !v.is_finite()) || phi.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tree instance"));
        }
        if mass.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(invalid("masses", "must be finite and nonnegative"));
        }
        for i in 0..n {
            if d[i][i] != 0.0 {
                return Err(Error::InvalidInstance(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                if d[i][j] < 0.0 || (d[i][j] - d[j][i]).abs() > TOL {
                    return Err(Error::InvalidInstance(format!("asymmetric or negative entry ({i}, {j})")));
                }
                for k in 0..n {
                    if d[i][k] > d[i][j] + d[j][k] + TOL {
                        return Err(Error::InvalidInstance(format!("triangle inequality fails at ({i}, {j}, {k})")));
                    }
                }
            }
        }
        for x in 0..n {
            for y in x + 1..n {
                for z in y + 1..n {
                    for w in z + 1..n {
                        let mut s = [d[x][y] + d[z][w], d[x][z] + d[y][w], d[x][w] + d[y][z]];
                        s.sort_by(f64::total_cmp);
                        if s[2] - s[1] > TOL {
                            return Err(Error::InvalidInstance(format!("four-point condition fails at ({x}, {y}, {z}, {w})")));
                        }
                    }
                }
            }
        }
        Ok(FiniteMeasuredSpatialTree { d, mass, phi, root })
    }

    /// Intrinsic closed ball `B(center, radius)` of a lattice tree, with
    /// counting measure and the lattice embedding.
    pub fn from_tree_ball(view: &TreeMetricView, center: usize, radius: u64, scale: Rescaling) -> Result<Self> {
        let ball = view.ball(center, radius)?;
        if ball.len() > MAX_POINTS {
            return Err(invalid("radius", format!("ball has {} points, at most {MAX_POINTS} allowed", ball.len())));
        }
        let ids: Vec<usize> = ball.iter().map(|&(v, _)| v).collect();
        let mut d = vec![vec![0.0; ids.len()]; ids.len()];
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                let t = view.tree_distance(ids[i], ids[j])? as f64 * scale.distance;
                d[i][j] = t;
                d[j][i] = t;
            }
        }
        let phi = ids
            .iter()
            .map(|&v| {
                let p = view.position(v).expect("ball vertices are real").to_f64();
                [p[0] * scale.space, p[1] * scale.space, p[2] * scale.space]
            })
            .collect();
        FiniteMeasuredSpatialTree::new(d, vec![scale.mass; ids.len()], phi, 0)
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn distances(&self) -> &[Vec<f64>] {
        &self.d
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn embedding(&self) -> &[[f64; 3]] {
        &self.phi
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Closed intrinsic ball of radius `r` about the root.
    pub fn restrict(&self, r: f64) -> FiniteMeasuredSpatialTree {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.d[self.root][i] <= r).collect();
        let root = keep.iter().position(|&i| i == self.root).unwrap();
        FiniteMeasuredSpatialTree {
            d: keep.iter().map(|&i| keep.iter().map(|&j| self.d[i][j]).collect()).collect(),
            mass: keep.iter().map(|&i| self.mass[i]).collect(),
            phi: keep.iter().map(|&i| self.phi[i]).collect(),
            root,
        }
    }

    /// Relabels points by `perm[new] = old`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.len();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(invalid("perm", "not a permutation"));
        }
        Ok(FiniteMeasuredSpatialTree {
            d: perm.iter().map(|&i| perm.iter().map(|&j| self.d[i][j]).collect()).collect(),
            mass: perm.iter().map(|&i| self.mass[i]).collect(),
            phi: perm.iter().map(|&i| self.phi[i]).collect(),
            root: perm.iter().position(|&p| p == self.root).unwrap(),
        })
    }
}

/// Dense Edmonds-Karp max-flow; small instances only.
fn max_flow(cap: &mut [Vec<f64>], s: usize, t: usize) -> f64 {
    let n = cap.len();
    let mut flow = 0.0;
    loop {
        let mut prev = vec![usize::MAX; n];
        prev[s] = s;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            if u == t {
                break;
            }
            for v in 0..n {
                if prev[v] == usize::MAX && cap[u][v] > 1e-15 {
                    prev[v] = u;
                    q.push_back(v);
                }
            }
        }
        if prev[t] == usize::MAX {
            return flow;
        }
        let mut push = f64::INFINITY;
        let mut v = t;
        while v != s {
            push = push.min(cap[prev[v]][v]);
            v = prev[v];
        }
        let mut v = t;
        while v != s {
            let u = prev[v];
            cap[u][v] -= push;
            cap[v][u] += push;
            v = u;
        }
        flow += push;
    }
}

/// `max_A μ(A) − ν(A^t)` with `A^t = {y : d(A, y) <= t}`, via max-flow
/// min-cut on the transport graph.
fn worst_gap(mu: &[f64], nu: &[f64], d: &[Vec<f64>], t: f64) -> f64 {
    let src: Vec<usize> = (0..mu.len()).filter(|&i| mu[i] > 0.0).collect();
    let dst: Vec<usize> = (0..nu.len()).filter(|&j| nu[j] > 0.0).collect();
    let total: f64 = src.iter().map(|&i| mu[i]).sum();
    let (a, b) = (src.len(), dst.len());
    let n = a + b + 2;
    let (s, sink) = (n - 2, n - 1);
    let mut cap = vec![vec![0.0; n]; n];
    for (i, &x) in src.iter().enumerate() {
        cap[s][i] = mu[x];
        for (j, &y) in dst.iter().enumerate() {
            if d[x][y] <= t {
                cap[i][a + j] = f64::INFINITY;
            }
        }
    }
    for (j, &y) in dst.iter().enumerate() {
        cap[a + j][sink] = nu[y];
    }
    total - max_flow(&mut cap, s, sink)
}

/// Prohorov distance between two finite measures on one finite
/// (pseudo)metric space. Exact: the expansion sets are constant between
/// consecutive distance values, and each set-wise condition reduces to a
/// max-flow.
pub fn prohorov_distance(mu: &[f64], nu: &[f64], d: &[Vec<f64>]) -> Result<f64> {
    let n = d.len();
    if mu.len() != n {
        return Err(Error::SizeMismatch(n, mu.len()));
    }
    if nu.len() != n {
        return Err(Error::SizeMismatch(n, nu.len()));
    }
    if d.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInstance("distance matrix is not square".into()));
    }
    if mu.iter().chain(nu).any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(invalid("mu", "masses must be finite and nonnegative"));
    }
    let mut ts: Vec<f64> = d.iter().flatten().copied().chain([0.0]).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let gap = |t: f64| worst_gap(mu, nu, d, t).max(worst_gap(nu, mu, d, t)).max(0.0);
    // first k with t_k >= gap(t_k); gap is nonincreasing in t
    let (mut lo, mut hi) = (0usize, ts.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        if ts[mid] >= gap(ts[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(match lo {
        0 => 0.0,
        k if k == ts.len() => gap(ts[k - 1]),
        k => ts[k].min(gap(ts[k - 1])),
    })
}

/// Certified two-sided bounds on `Δ_c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaBounds {
    pub lower: f64,
    pub upper: f64,
    /// Whether every correspondence was enumerated.
    pub exhaustive: bool,
    /// Pairs `(i, j)` of the best correspondence found.
    pub correspondence: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaOptions {
    /// Enumerate every correspondence when `n_a * n_b` is at most this.
    pub exhaustive_pairs: usize,
    /// Largest side for which local search runs.
    pub search_limit: usize,
    pub restarts: u32,
    pub seed: u64,
}

impl Default for DeltaOptions {
    fn default() -> Self {
        DeltaOptions {
            exhaustive_pairs: 16,
            search_limit: 12,
            restarts: 16,
            seed: 0,
        }
    }
}

struct Problem<'a> {
    a: &'a FiniteMeasuredSpatialTree,
    b: &'a FiniteMeasuredSpatialTree,
    spatial: Vec<Vec<f64>>,
    mu: Vec<f64>,
    nu: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(a: &'a FiniteMeasuredSpatialTree, b: &'a FiniteMeasuredSpatialTree) -> Self {
        let (na, nb) = (a.len(), b.len());
        let spatial = (0..na).map(|i| (0..nb).map(|j| euclid(a.phi[i], b.phi[j])).collect()).collect();
        let mut mu = a.mass.clone();
        mu.resize(na + nb, 0.0);
        let mut nu = vec![0.0; na];
        nu.extend_from_slice(&b.mass);
        Problem { a, b, spatial, mu, nu }
    }

    fn pair(&self, k: usize) -> (usize, usize) {
        (k / self.b.len(), k % self.b.len())
    }

    fn covers(&self, set: &[bool]) -> bool {
        let (na, nb) = (self.a.len(), self.b.len());
        let root = self.a.root * nb + self.b.root;
        if !set[root] {
            return false;
        }
        (0..na).all(|i| (0..nb).any(|j| set[i * nb + j])) && (0..nb).all(|j| (0..na).any(|i| set[i * nb + j]))
    }

    /// Upper bound realized by gluing along the correspondence at half its
    /// distortion.
    fn upper(&self, pairs: &[(usize, usize)]) -> f64 {
        let (a, b) = (&self.a.d, &self.b.d);
        let (na, nb) = (self.a.len(), self.b.len());
        let mut dis: f64 = 0.0;
        for &(x, xp) in pairs {
            for &(y, yp) in pairs {
                dis = dis.max((a[x][y] - b[xp][yp]).abs());
            }
        }
        let half = dis / 2.0;
        let mut z = vec![vec![0.0; na + nb]; na + nb];
        for i in 0..na {
            z[i][..na].copy_from_slice(&a[i]);
        }
        for j in 0..nb {
            z[na + j][na..].copy_from_slice(&b[j]);
        }
        for i in 0..na {
            for j in 0..nb {
                let c = pairs.iter().map(|&(y, yp)| a[i][y] + half + b[yp][j]).fold(f64::INFINITY, f64::min);
                z[i][na + j] = c;
                z[na + j][i] = c;
            }
        }
        let sup = pairs.iter().map(|&(x, xp)| z[x][na + xp] + self.spatial[x][xp]).fold(0.0, f64::max);
        prohorov_distance(&self.mu, &self.nu, &z).expect("shapes agree") + sup
    }

    /// Lower bound valid for every ambient space, given the correspondence.
    fn lower(&self, pairs: &[(usize, usize)]) -> f64 {
        let (a, b) = (&self.a.d, &self.b.d);
        let mut l: f64 = 0.0;
        for &(x, xp) in pairs {
            for &(y, yp) in pairs {
                l = l.max(((a[x][y] - b[xp][yp]).abs() + self.spatial[x][xp] + self.spatial[y][yp]) / 2.0);
            }
        }
        l
    }

    /// Lower bound valid for every correspondence.
    fn invariant_lower(&self) -> f64 {
        let (a, b) = (self.a, self.b);
        let (ra, rb) = (a.root, b.root);
        let diam = |t: &FiniteMeasuredSpatialTree| t.d.iter().flatten().fold(0.0, |m: f64, v| m.max(*v));
        let ecc = |t: &FiniteMeasuredSpatialTree| t.d[t.root].iter().fold(0.0, |m: f64, v| m.max(*v));
        let hd = {
            let ab = (0..a.len()).map(|i| self.spatial[i].iter().fold(f64::INFINITY, |m, v| m.min(*v))).fold(0.0, f64::max);
            let ba = (0..b.len())
                .map(|j| (0..a.len()).map(|i| self.spatial[i][j]).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max);
            ab.max(ba)
        };
        self.spatial[ra][rb]
            .max(hd)
            .max((diam(a) - diam(b)).abs() / 2.0)
            .max((ecc(a) - ecc(b)).abs() / 2.0)
    }

    fn pairs_of(&self, set: &[bool]) -> Vec<(usize, usize)> {
        (0..set.len()).filter(|&k| set[k]).map(|k| self.pair(k)).collect()
    }

    fn heuristics(&self) -> Vec<Vec<bool>> {
        let (na, nb) = (self.a.len(), self.b.len());
        let (ra, rb) = (self.a.root, self.b.root);
        let root_cost = |i: usize, j: usize| (self.a.d[ra][i] - self.b.d[rb][j]).abs();
        let costs: [&dyn Fn(usize, usize) -> f64; 3] = [
            &|i, j| root_cost(i, j) + self.spatial[i][j],
            &|i, j| self.spatial[i][j],
            &|i, j| root_cost(i, j),
        ];
        let mut out = vec![vec![true; na * nb]];
        for cost in costs {
            let mut set = vec![false; na * nb];
            set[ra * nb + rb] = true;
            for i in 0..na {
                let j = (0..nb).min_by(|&x, &y| cost(i, x).total_cmp(&cost(i, y))).unwrap();
                set[i * nb + j] = true;
            }
            for j in 0..nb {
                let i = (0..na).min_by(|&x, &y| cost(x, j).total_cmp(&cost(y, j))).unwrap();
                set[i * nb + j] = true;
            }
            out.push(set);
        }
        out
    }

    /// Lower bound shared by every correspondence, including the mass gap.
    fn floor(&self) -> f64 {
        (self.a.total_mass() - self.b.total_mass()).abs() + self.invariant_lower()
    }

    fn local_search(&self, opts: &DeltaOptions) -> (f64, Vec<bool>) {
        let total = self.a.len() * self.b.len();
        let floor = self.floor();
        let mut rng = RngStream::new(opts.seed, crate::rng::namespace::SEARCH);
        let mut starts = self.heuristics();
        for _ in 0..opts.restarts {
            let mut set: Vec<bool> = (0..total).map(|_| rng.uniform() < 0.5).collect();
            set[self.a.root * self.b.len() + self.b.root] = true;
            if !self.covers(&set) {
                for (s, &h) in set.iter_mut().zip(&self.heuristics()[1]) {
                    *s |= h;
                }
            }
            starts.push(set);
        }
        let mut best = (f64::INFINITY, Vec::new());
        for mut set in starts {
            let mut val = self.upper(&self.pairs_of(&set));
            // single toggles first, then pairs of toggles once those stall
            'climb: loop {
                if val <= floor {
                    break;
                }
                let mut order: Vec<usize> = (0..total).collect();
                for i in (1..total).rev() {
                    order.swap(i, rng.below(i as u32 + 1) as usize);
                }
                for &k in &order {
                    set[k] = !set[k];
                    if self.covers(&set) {
                        let v = self.upper(&self.pairs_of(&set));
                        if v < val - 1e-15 {
                            val = v;
                            continue 'climb;
                        }
                    }
                    set[k] = !set[k];
                }
                let pairs_of_moves = if total <= 64 { total } else { 0 };
                for (x, &k) in order.iter().enumerate().take(pairs_of_moves) {
                    for &l in &order[x + 1..] {
                        set[k] = !set[k];
                        set[l] = !set[l];
                        if self.covers(&set) {
                            let v = self.upper(&self.pairs_of(&set));
                            if v < val - 1e-15 {
                                val = v;
                                continue 'climb;
                            }
                        }
                        set[k] = !set[k];
                        set[l] = !set[l];
                    }
                }
                break;
            }
            if val < best.0 {
                best = (val, set);
            }
            if best.0 <= floor {
                break;
            }
        }
        best
    }
}

fn transpose(pairs: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut t: Vec<_> = pairs.iter().map(|&(i, j)| (j, i)).collect();
    t.sort_unstable();
    t
}

/// Two-sided bounds `lower <= Δ_c(a, b) <= upper`.
pub fn delta_c_bounds(a: &FiniteMeasuredSpatialTree, b: &FiniteMeasuredSpatialTree, opts: &DeltaOptions) -> DeltaBounds {
    let p = Problem::new(a, b);
    let mass_gap = (a.total_mass() - b.total_mass()).abs();
    let total = a.len() * b.len();
    let (upper, corr, lower_c, exhaustive) = if total <= opts.exhaustive_pairs.min(24) {
        let root_bit = a.root * b.len() + b.root;
        let mut best = (f64::INFINITY, Vec::new());
        let mut min_lower = f64::INFINITY;
        let mut set = vec![false; total];
        for mask in 0u32..(1u32 << total) {
            if mask >> root_bit & 1 == 0 {
                continue;
            }
            for (k, s) in set.iter_mut().enumerate() {
                *s = mask >> k & 1 == 1;
            }
            if !p.covers(&set) {
                continue;
            }
            let pairs = p.pairs_of(&set);
            let l = p.lower(&pairs);
            min_lower = min_lower.min(l);
            // upper(C) >= mass gap + lower(C)
            if mass_gap + l >= best.0 {
                continue;
            }
            let u = p.upper(&pairs);
            if u < best.0 {
                best = (u, pairs);
            }
        }
        (best.0, best.1, min_lower, true)
    } else if a.len().max(b.len()) <= opts.search_limit {
        // searching both orientations keeps the bound symmetric
        let q = Problem::new(b, a);
        let (u1, s1) = p.local_search(opts);
        let (u2, s2) = q.local_search(opts);
        if u1 <= u2 {
            (u1, p.pairs_of(&s1), 0.0, false)
        } else {
            (u2, transpose(&q.pairs_of(&s2)), 0.0, false)
        }
    } else {
        let q = Problem::new(b, a);
        let best_p = p.heuristics().into_iter().map(|s| (p.upper(&p.pairs_of(&s)), p.pairs_of(&s)));
        let best_q = q.heuristics().into_iter().map(|s| (q.upper(&q.pairs_of(&s)), transpose(&q.pairs_of(&s))));
        let (u, c) = best_p.chain(best_q).min_by(|x, y| x.0.total_cmp(&y.0)).unwrap();
        (u, c, 0.0, false)
    };
    let lower = mass_gap + lower_c.max(p.invariant_lower());
    DeltaBounds {
        lower,
        upper,
        exhaustive,
        correspondence: corr,
    }
}

/// Piecewise-constant quadrature of `Δ = ∫ e^{-r} (1 ∧ Δ_c(a^(r), b^(r))) dr`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedDelta {
    pub lower: f64,
    pub upper: f64,
    /// `e^{-r_max}`, bounding the integral beyond the last radius.
    pub remainder: f64,
    /// True when the radii contain 0 and every root distance of either tree
    /// up to the last radius; then `lower <= Δ <= upper + remainder`.
    pub certified: bool,
}

/// Radii at which either restriction changes: 0 and every root distance.
pub fn breakpoints(a: &FiniteMeasuredSpatialTree, b: &FiniteMeasuredSpatialTree) -> Vec<f64> {
    let mut r: Vec<f64> = a.d[a.root].iter().chain(&b.d[b.root]).copied().chain([0.0]).collect();
    r.sort_by(f64::total_cmp);
    r.dedup();
    r
}

pub fn delta_truncated(
    a: &FiniteMeasuredSpatialTree,
    b: &FiniteMeasuredSpatialTree,
    radii: &[f64],
    opts: &DeltaOptions,
) -> Result<TruncatedDelta> {
    if radii.is_empty() || radii.windows(2).any(|w| !(w[0] < w[1])) || !(radii[0] >= 0.0) || !radii[radii.len() - 1].is_finite() {
        return Err(invalid("radii", "must be nonempty, finite, nonnegative and strictly increasing"));
    }
    let r_max = radii[radii.len() - 1];
    let (mut lower, mut upper) = (0.0, 0.0);
    // r_i's restriction stands for [r_i, r_{i+1}), and r_0's also for [0, r_0)
    for (i, w) in radii.windows(2).enumerate() {
        let (r, start) = (w[0], if i == 0 { 0.0 } else { w[0] });
        let w = (-start).exp() - (-w[1]).exp();
        let bd = delta_c_bounds(&a.restrict(r), &b.restrict(r), opts);
        lower += w * bd.lower.min(1.0);
        upper += w * bd.upper.min(1.0);
    }
    let certified = radii[0] == 0.0
        && breakpoints(a, b)
            .iter()
            .filter(|&&t| t <= r_max)
            .all(|t| radii.iter().any(|r| r == t));
    Ok(TruncatedDelta {
        lower,
        upper,
        remainder: (-r_max).exp(),
        certified,
    })
}

/// Inverse stereographic image in `S^3 ⊂ R^4` of `x / scale`.
pub fn to_sphere(p: [f64; 3], scale: f64) -> [f64; 4] {
    let x = [p[0] / scale, p[1] / scale, p[2] / scale];
    let n2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    let k = 1.0 + n2;
    [2.0 * x[0] / k, 2.0 * x[1] / k, 2.0 * x[2] / k, (n2 - 1.0) / k]
}

fn chord(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Hausdorff distance of two point sets, stopping once it reaches `cap`.
fn hausdorff_capped(p: &[[f64; 4]], q: &[[f64; 4]], cap: f64) -> f64 {
    let mut h: f64 = 0.0;
    for (s, t) in [(p, q), (q, p)] {
        for x in s {
            let m = t.iter().map(|y| chord(x, y)).fold(f64::INFINITY, f64::min);
            h = h.max(m);
            if h >= cap {
                return h;
            }
        }
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEnsembleConfig {
    /// Lattice units per unit length before compactification.
    pub scale: f64,
    /// Sampled pairs per tree when a tree has more than 1000 unordered pairs.
    pub sample_pairs: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEnsembleDistance {
    pub value: f64,
    /// True when every pair of both trees was used, so `value` is exact for
    /// the vertex path ensembles; otherwise it is a lower bound.
    pub exact: bool,
    pub pairs_a: usize,
    pub pairs_b: usize,
}

struct Ensemble<'t> {
    view: TreeMetricView<'t>,
    sphere: Vec<[f64; 4]>,
}

impl<'t> Ensemble<'t> {
    fn new(tree: &'t SpanningTree, scale: f64) -> Result<Self> {
        if matches!(tree.root(), TreeRoot::Wired) {
            return Err(Error::InvalidInstance("path ensembles need a tree without a wired boundary".into()));
        }
        let sphere = tree.vertices().iter().map(|p| to_sphere(p.to_f64(), scale)).collect();
        Ok(Ensemble {
            view: TreeMetricView::new(tree),
            sphere,
        })
    }

    fn trace(&self, x: usize, y: usize) -> Vec<[f64; 4]> {
        self.view.tree_path(x, y).expect("vertices are in range").iter().map(|&v| self.sphere[v]).collect()
    }

    fn pairs(&self, limit: usize, rng: &mut RngStream) -> (Vec<(usize, usize)>, bool) {
        let n = self.sphere.len();
        if n * (n + 1) / 2 <= 1000 {
            ((0..n).flat_map(|x| (x..n).map(move |y| (x, y))).collect(), true)
        } else {
            let pick = |rng: &mut RngStream| rng.below(n as u32) as usize;
            ((0..limit).map(|_| (pick(rng), pick(rng))).collect(), false)
        }
    }

    /// Distance from `(x, y, trace)` to this full ensemble, in the max
    /// product metric.
    fn distance_to(&self, x: [f64; 4], y: [f64; 4], trace: &[[f64; 4]]) -> f64 {
        let n = self.sphere.len();
        let sorted = |p: [f64; 4]| {
            let mut v: Vec<(f64, usize)> = (0..n).map(|i| (chord(&p, &self.sphere[i]), i)).collect();
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            v
        };
        let (sx, sy) = (sorted(x), sorted(y));
        let mut best = f64::INFINITY;
        for &(dx, u) in &sx {
            if dx >= best {
                break;
            }
            for &(dy, v) in &sy {
                let e = dx.max(dy);
                if e >= best {
                    break;
                }
                let h = hausdorff_capped(trace, &self.trace(u, v), best);
                best = best.min(e.max(h));
            }
        }
        best
    }
}

/// Hausdorff distance between the vertex path ensembles of two finite
/// trees, compactified into `S^3`.
pub fn path_ensemble_hausdorff(a: &SpanningTree, b: &SpanningTree, cfg: &PathEnsembleConfig) -> Result<PathEnsembleDistance> {
    if !(cfg.scale > 0.0 && cfg.scale.is_finite()) {
        return Err(invalid("scale", "must be positive"));
    }
    if a.is_empty() || b.is_empty() {
        return Err(invalid("tree", "must be nonempty"));
    }
    let (ea, eb) = (Ensemble::new(a, cfg.scale)?, Ensemble::new(b, cfg.scale)?);
    let (pa, full_a) = ea.pairs(cfg.sample_pairs, &mut RngStream::new(cfg.seed, crate::rng::namespace::SEARCH));
    let (pb, full_b) = eb.pairs(cfg.sample_pairs, &mut RngStream::new(cfg.seed, crate::rng::namespace::SEARCH | 1));
    let mut value: f64 = 0.0;
    for (from, to, pairs) in [(&ea, &eb, &pa), (&eb, &ea, &pb)] {
        for &(x, y) in pairs.iter() {
            let d = to.distance_to(from.sphere[x], from.sphere[y], &from.trace(x, y));
            value = value.max(d);
        }
    }
    Ok(PathEnsembleDistance {
        value,
        exact: full_a && full_b,
        pairs_a: pa.len(),
        pairs_b: pb.len(),
    })
}
