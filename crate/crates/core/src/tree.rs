//! Intrinsic metric, volume, resistance and random walk on sampled trees.
//!
//! In wired mode the boundary vertex is a node of the view (index
//! `vertex_count()`); it carries no position and is never counted in
//! volumes.

use std::collections::VecDeque;

use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::curve::point_set_diameter;
use crate::error::{invalid, Error, Result};
use crate::lattice::{LatticePoint, PointIndex};
use crate::rng::RngStream;
use crate::wilson::{LocalUst, SpanningTree, TreeRoot, GHOST, NO_PARENT};

/// Indexed, immutable view of a spanning tree.
pub struct TreeMetricView<'a> {
    tree: &'a SpanningTree,
    offsets: Vec<u32>,
    adj: Vec<u32>,
    parent: Vec<u32>,
    depth: Vec<u32>,
    jump: Vec<u32>,
    index: PointIndex,
}

impl<'a> TreeMetricView<'a> {
    pub fn new(tree: &'a SpanningTree) -> Self {
        let n = tree.len();
        let wired = tree.root() == TreeRoot::Wired;
        let nodes = n + wired as usize;
        let up = |v: usize| -> Option<usize> {
            match tree.parent()[v] {
                NO_PARENT if wired => Some(n),
                NO_PARENT => None,
                p => Some(p as usize),
            }
        };
        let mut deg = vec![0u32; nodes];
        for v in 0..n {
            if let Some(p) = up(v) {
                deg[v] += 1;
                deg[p] += 1;
            }
        }
        let mut offsets = vec![0u32; nodes + 1];
        for v in 0..nodes {
            offsets[v + 1] = offsets[v] + deg[v];
        }
        let mut fill: Vec<u32> = offsets[..nodes].to_vec();
        let mut adj = vec![0u32; offsets[nodes] as usize];
        for v in 0..n {
            if let Some(p) = up(v) {
                adj[fill[v] as usize] = p as u32;
                fill[v] += 1;
                adj[fill[p] as usize] = v as u32;
                fill[p] += 1;
            }
        }
        let root = match tree.root() {
            TreeRoot::Vertex(r) => r as usize,
            TreeRoot::Wired => n,
        };
        let mut parent = vec![NO_PARENT; nodes];
        let mut depth = vec![0u32; nodes];
        let mut jump = vec![0u32; nodes];
        jump[root] = root as u32;
        parent[root] = root as u32;
        // BFS order puts parents before children, as the jump pointers need
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &w in &adj[offsets[u] as usize..offsets[u + 1] as usize] {
                let w = w as usize;
                if parent[w] != NO_PARENT {
                    continue;
                }
                parent[w] = u as u32;
                depth[w] = depth[u] + 1;
                let j = jump[u] as usize;
                let jj = jump[j] as usize;
                jump[w] = if depth[u] - depth[j] == depth[j] - depth[jj] {
                    jj as u32
                } else {
                    u as u32
                };
                queue.push_back(w);
            }
        }
        let index = PointIndex::new(tree.vertices());
        TreeMetricView {
            tree,
            offsets,
            adj,
            parent,
            depth,
            jump,
            index,
        }
    }

    pub fn tree(&self) -> &SpanningTree {
        self.tree
    }

    /// Lattice vertices (the boundary node excluded).
    pub fn vertex_count(&self) -> usize {
        self.tree.len()
    }

    pub fn node_count(&self) -> usize {
        self.depth.len()
    }

    pub fn ghost(&self) -> Option<usize> {
        (self.node_count() > self.vertex_count()).then_some(self.vertex_count())
    }

    pub fn index_of(&self, p: LatticePoint) -> Option<usize> {
        self.index.get(p)
    }

    pub fn position(&self, v: usize) -> Option<LatticePoint> {
        self.tree.vertices().get(v).copied()
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.adj[self.offsets[v] as usize..self.offsets[v + 1] as usize]
    }

    pub fn degree(&self, v: usize) -> usize {
        (self.offsets[v + 1] - self.offsets[v]) as usize
    }

    fn check(&self, v: usize) -> Result<()> {
        if v >= self.node_count() {
            return Err(Error::UnknownVertex(v));
        }
        Ok(())
    }

    pub fn lca(&self, u: usize, v: usize) -> Result<usize> {
        self.check(u)?;
        self.check(v)?;
        let (mut u, mut v) = (u, v);
        if self.depth[u] < self.depth[v] {
            std::mem::swap(&mut u, &mut v);
        }
        while self.depth[u] > self.depth[v] {
            let j = self.jump[u] as usize;
            u = if self.depth[j] >= self.depth[v] { j } else { self.parent[u] as usize };
        }
        while u != v {
            let (ju, jv) = (self.jump[u] as usize, self.jump[v] as usize);
            if ju != jv {
                u = ju;
                v = jv;
            } else {
                u = self.parent[u] as usize;
                v = self.parent[v] as usize;
            }
        }
        Ok(u)
    }

    /// Number of edges on the unique path.
    pub fn tree_distance(&self, u: usize, v: usize) -> Result<u64> {
        let a = self.lca(u, v)?;
        Ok((self.depth[u] + self.depth[v] - 2 * self.depth[a]) as u64)
    }

    /// Vertices of the `u`–`v` path, in order.
    pub fn tree_path(&self, u: usize, v: usize) -> Result<Vec<usize>> {
        let a = self.lca(u, v)?;
        let mut left = vec![u];
        let mut x = u;
        while x != a {
            x = self.parent[x] as usize;
            left.push(x);
        }
        let mut right = Vec::new();
        let mut y = v;
        while y != a {
            right.push(y);
            y = self.parent[y] as usize;
        }
        left.extend(right.into_iter().rev());
        Ok(left)
    }

    /// `(vertex, distance)` for every node within tree distance `r`, in BFS
    /// order; the boundary node is traversed but not listed.
    pub fn ball(&self, center: usize, r: u64) -> Result<Vec<(usize, u64)>> {
        self.check(center)?;
        let mut dist: FxHashMap<u32, u64> = FxHashMap::default();
        dist.insert(center as u32, 0);
        let mut order = vec![(center, 0u64)];
        let mut head = 0;
        while head < order.len() {
            let (u, d) = order[head];
            head += 1;
            if d == r {
                continue;
            }
            for &w in self.neighbors(u) {
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                    e.insert(d + 1);
                    order.push((w as usize, d + 1));
                }
            }
        }
        if let Some(g) = self.ghost() {
            order.retain(|&(v, _)| v != g);
        }
        Ok(order)
    }

    /// `μ_U(B_U(center, r))`: vertices within tree distance `r`.
    pub fn ball_volume(&self, center: usize, r: u64) -> Result<u64> {
        Ok(self.ball(center, r)?.len() as u64)
    }

    /// Euclidean diameter of the lattice points on the `u`–`v` path.
    pub fn schramm_tree_distance(&self, u: usize, v: usize) -> Result<f64> {
        let path = self.tree_path(u, v)?;
        let mut pts = Vec::with_capacity(path.len());
        for w in path {
            let p = self
                .position(w)
                .ok_or_else(|| invalid("u, v", "the path passes through the wired boundary"))?;
            pts.push(p.to_f64());
        }
        Ok(point_set_diameter(&pts))
    }

    /// Effective resistance between `root` and `{v : d(root, v) > R}` with
    /// unit resistors on edges.
    ///
    /// Post-order series/parallel reduction: a child beyond the shell
    /// grounds its edge; an inner child with subtree resistance `r`
    /// contributes conductance `1 / (1 + r)`.
    pub fn effective_resistance_to_shell(&self, root: usize, radius: u64) -> Result<Resistance> {
        let ball = self.ball(root, radius + 1)?;
        let dist: FxHashMap<usize, u64> = ball.iter().copied().collect();
        // ghost (if any) reached within R + 1 still counts as a node
        let dist_of = |v: usize| -> Option<u64> {
            dist.get(&v).copied().or_else(|| {
                // the boundary node is dropped from `ball`; recover it
                self.ghost().filter(|&g| g == v).and_then(|g| {
                    self.neighbors(g)
                        .iter()
                        .filter_map(|&w| dist.get(&(w as usize)))
                        .min()
                        .map(|d| d + 1)
                        .filter(|&d| d <= radius + 1)
                })
            })
        };
        let mut nodes: Vec<(usize, u64)> = ball.clone();
        if let Some(g) = self.ghost() {
            if let Some(d) = dist_of(g) {
                nodes.push((g, d));
                nodes.sort_by_key(|&(_, d)| d);
            }
        }
        // resistance from each inner node to the shell through its subtree
        let mut res: FxHashMap<usize, f64> = FxHashMap::default();
        for &(u, d) in nodes.iter().rev() {
            if d > radius {
                continue;
            }
            let mut c = 0.0;
            for &w in self.neighbors(u) {
                let w = w as usize;
                match dist_of(w) {
                    Some(dw) if dw == d + 1 => {
                        let rw = if dw > radius { 0.0 } else { res[&w] };
                        c += 1.0 / (1.0 + rw);
                    }
                    _ => {}
                }
            }
            res.insert(u, if c == 0.0 { f64::INFINITY } else { 1.0 / c });
        }
        let r = res[&root];
        Ok(if r.is_infinite() {
            Resistance::Infinite
        } else {
            Resistance::Finite(r)
        })
    }

    /// Both clauses of `J(λ)` at radius `R` about `root`.
    pub fn check_well_behaved(&self, root: usize, radius: u64, lambda: f64, d_f: f64) -> Result<WellBehavedScaleCheck> {
        if !(lambda >= 1.0) {
            return Err(invalid("lambda", format!("must be >= 1, got {lambda}")));
        }
        if radius == 0 {
            return Err(invalid("R", "must be >= 1"));
        }
        let volume = self.ball_volume(root, radius)?;
        let resistance = self.effective_resistance_to_shell(root, radius)?.value();
        let r = radius as f64;
        let scaled = volume as f64 / r.powf(d_f);
        let volume_ok = scaled >= 1.0 / lambda && scaled <= lambda;
        let resistance_ok = resistance >= r / lambda;
        Ok(WellBehavedScaleCheck {
            radius,
            lambda,
            volume,
            resistance,
            volume_ok,
            resistance_ok,
            in_j: volume_ok && resistance_ok,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Resistance {
    Finite(f64),
    /// No vertex lies beyond the shell.
    Infinite,
}

impl Resistance {
    pub fn value(self) -> f64 {
        match self {
            Resistance::Finite(r) => r,
            Resistance::Infinite => f64::INFINITY,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WellBehavedScaleCheck {
    pub radius: u64,
    pub lambda: f64,
    pub volume: u64,
    pub resistance: f64,
    pub volume_ok: bool,
    pub resistance_ok: bool,
    pub in_j: bool,
}

/// When a walk on the tree stops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StopRule {
    /// First time the intrinsic distance from the start exceeds `R`.
    IntrinsicExit(u64),
    /// First time the Euclidean distance from the start exceeds `R`.
    EuclideanExit(f64),
    /// After exactly this many steps.
    Steps(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkSummary {
    pub steps: u64,
    pub end: usize,
    /// For `Steps`: whether the walk sits at its start at times 0, 2, 4, ...
    pub at_start_even: Option<Vec<bool>>,
}

/// Stop-rule state prepared once per start vertex.
enum Prepared {
    Intrinsic(FxHashMap<u32, ()>),
    Euclidean(LatticePoint, f64),
    Steps(u64),
}

fn prepare(view: &TreeMetricView, start: usize, stop: StopRule) -> Result<Prepared> {
    view.check(start)?;
    match stop {
        StopRule::IntrinsicExit(r) => {
            let ball = view.ball(start, r)?;
            let mut inside: FxHashMap<u32, ()> = ball.iter().map(|&(v, _)| (v as u32, ())).collect();
            if let Some(g) = view.ghost() {
                // the boundary node may sit inside the ball
                if ball.iter().any(|&(v, d)| d < r && view.neighbors(v).contains(&(g as u32))) {
                    inside.insert(g as u32, ());
                }
            }
            if inside.len() >= view.node_count() {
                return Err(Error::UnreachableStop);
            }
            Ok(Prepared::Intrinsic(inside))
        }
        StopRule::EuclideanExit(r) => {
            let x = view.position(start).ok_or_else(|| invalid("start", "the wired boundary has no position"))?;
            let r2 = r * r;
            if !view.tree.vertices().iter().any(|p| ((*p - x).norm_sq() as f64) > r2) {
                return Err(Error::UnreachableStop);
            }
            Ok(Prepared::Euclidean(x, r2))
        }
        StopRule::Steps(n) => {
            if view.node_count() < 2 && n > 0 {
                return Err(Error::UnreachableStop);
            }
            Ok(Prepared::Steps(n))
        }
    }
}

fn run_walk(view: &TreeMetricView, start: usize, prep: &Prepared, rng: &mut RngStream) -> Result<WalkSummary> {
    let step = |u: usize, rng: &mut RngStream| -> usize {
        let nb = view.neighbors(u);
        nb[rng.below(nb.len() as u32) as usize] as usize
    };
    let mut u = start;
    let mut t = 0u64;
    match prep {
        Prepared::Intrinsic(inside) => {
            while inside.contains_key(&(u as u32)) {
                u = step(u, rng);
                t += 1;
            }
            Ok(WalkSummary {
                steps: t,
                end: u,
                at_start_even: None,
            })
        }
        Prepared::Euclidean(x, r2) => loop {
            let p = view
                .position(u)
                .ok_or_else(|| invalid("walk", "reached the wired boundary before its Euclidean exit"))?;
            if ((p - *x).norm_sq() as f64) > *r2 {
                return Ok(WalkSummary {
                    steps: t,
                    end: u,
                    at_start_even: None,
                });
            }
            u = step(u, rng);
            t += 1;
        },
        Prepared::Steps(n) => {
            let mut hits = vec![true];
            for k in 1..=*n {
                u = step(u, rng);
                if k % 2 == 0 {
                    hits.push(u == start);
                }
            }
            Ok(WalkSummary {
                steps: *n,
                end: u,
                at_start_even: Some(hits),
            })
        }
    }
}

/// Tree adjacency that may be computed on demand. `GHOST` entries stand for
/// the wired boundary.
pub trait TreeNeighbors {
    fn tree_neighbors(&mut self, v: u32) -> Result<&[u32]>;
}

impl TreeNeighbors for TreeMetricView<'_> {
    fn tree_neighbors(&mut self, v: u32) -> Result<&[u32]> {
        self.check(v as usize)?;
        Ok(self.neighbors(v as usize))
    }
}

impl TreeNeighbors for LocalUst {
    fn tree_neighbors(&mut self, v: u32) -> Result<&[u32]> {
        LocalUst::tree_neighbors(self, v)
    }
}

/// Returns to `start` at times 0, 2, ..., `max_time`, summed over
/// `walkers` walks; `on_visit` sees every vertex the walks occupy.
pub fn return_counts<G: TreeNeighbors>(
    g: &mut G,
    start: u32,
    max_time: u64,
    walkers: u64,
    rng: &mut RngStream,
    mut on_visit: impl FnMut(u32),
) -> Result<Vec<u64>> {
    if max_time % 2 != 0 {
        return Err(invalid("max_time", "must be even"));
    }
    let mut counts = vec![0u64; (max_time / 2 + 1) as usize];
    counts[0] = walkers;
    for _ in 0..walkers {
        let mut u = start;
        for k in 1..=max_time {
            let nb = g.tree_neighbors(u)?;
            if nb.is_empty() {
                return Err(Error::UnreachableStop);
            }
            u = nb[rng.below(nb.len() as u32) as usize];
            if u == GHOST {
                return Err(invalid("walk", "reached the wired boundary"));
            }
            on_visit(u);
            if k % 2 == 0 && u == start {
                counts[(k / 2) as usize] += 1;
            }
        }
    }
    Ok(counts)
}

/// One simple random walk on the tree from `start`.
pub fn srw_on_tree(view: &TreeMetricView, start: usize, stop: StopRule, rng: &mut RngStream) -> Result<WalkSummary> {
    let prep = prepare(view, start, stop)?;
    run_walk(view, start, &prep, rng)
}

/// Stopping times of `walkers` independent walks from `start`.
pub fn srw_exit_times(
    view: &TreeMetricView,
    start: usize,
    stop: StopRule,
    walkers: u64,
    rng: &mut RngStream,
) -> Result<Vec<u64>> {
    let prep = prepare(view, start, stop)?;
    (0..walkers).map(|_| run_walk(view, start, &prep, rng).map(|s| s.steps)).collect()
}

/// Exact `E_x τ` for the walk on the tree stopped by `stop` (an exit rule).
///
/// With unit current entering at `x` and the stopping set grounded, the
/// Green function is the potential `φ`, and `E_x τ = Σ_y deg(y) φ(y)`. On a
/// tree `φ` follows from the subtree resistances by voltage division.
pub fn expected_exit_time(view: &TreeMetricView, x: usize, stop: StopRule) -> Result<f64> {
    view.check(x)?;
    let inside: Box<dyn Fn(usize, u64) -> bool> = match stop {
        StopRule::IntrinsicExit(r) => Box::new(move |_, d| d <= r),
        StopRule::EuclideanExit(r) => {
            let c = view.position(x).ok_or_else(|| invalid("start", "the wired boundary has no position"))?;
            let r2 = r * r;
            Box::new(move |v, _| view.position(v).is_some_and(|p| ((p - c).norm_sq() as f64) <= r2))
        }
        StopRule::Steps(_) => return Err(invalid("stop", "expected an exit rule")),
    };
    // BFS from x over the stopped region; `order` holds inner nodes only
    let mut parent: FxHashMap<u32, u32> = FxHashMap::default();
    parent.insert(x as u32, x as u32);
    let mut order = vec![(x, 0u64)];
    let mut head = 0;
    while head < order.len() {
        let (u, d) = order[head];
        head += 1;
        for &w in view.neighbors(u) {
            if parent.contains_key(&w) {
                continue;
            }
            parent.insert(w, u as u32);
            if inside(w as usize, d + 1) {
                order.push((w as usize, d + 1));
            }
        }
    }
    let inner: FxHashMap<u32, usize> = order.iter().enumerate().map(|(i, &(v, _))| (v as u32, i)).collect();
    let mut res = vec![0.0f64; order.len()];
    let mut grounded = false;
    for i in (0..order.len()).rev() {
        let u = order[i].0;
        let mut c = 0.0;
        for &w in view.neighbors(u) {
            if i > 0 && parent[&(u as u32)] == w {
                continue;
            }
            match inner.get(&w) {
                Some(&j) => c += 1.0 / (1.0 + res[j]),
                None => {
                    c += 1.0;
                    grounded = true;
                }
            }
        }
        res[i] = if c == 0.0 { f64::INFINITY } else { 1.0 / c };
    }
    if !grounded {
        return Err(Error::UnreachableStop);
    }
    let mut phi = vec![0.0f64; order.len()];
    phi[0] = res[0];
    let mut total = phi[0] * view.degree(x) as f64;
    for i in 1..order.len() {
        let u = order[i].0;
        let p = inner[&parent[&(u as u32)]];
        phi[i] = if res[i].is_infinite() {
            phi[p]
        } else {
            phi[p] * res[i] / (1.0 + res[i])
        };
        total += phi[i] * view.degree(u) as f64;
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReturnRow {
    pub time: u64,
    pub p_hat: f64,
    pub std_err: f64,
}

/// Monte Carlo `p̂_{2n}(root, root)` for `2n = 0, 2, ..., max_time`; odd
/// times vanish on a bipartite graph and are not listed.
pub fn return_probability_profile(
    view: &TreeMetricView,
    root: usize,
    max_time: u64,
    walkers: u64,
    rng: &mut RngStream,
) -> Result<Vec<ReturnRow>> {
    if max_time % 2 != 0 {
        return Err(invalid("max_time", "must be even"));
    }
    if walkers == 0 {
        return Err(invalid("walkers", "must be >= 1"));
    }
    let prep = prepare(view, root, StopRule::Steps(max_time))?;
    let mut counts = vec![0u64; (max_time / 2 + 1) as usize];
    for _ in 0..walkers {
        let s = run_walk(view, root, &prep, rng)?;
        for (c, hit) in counts.iter_mut().zip(s.at_start_even.unwrap()) {
            *c += hit as u64;
        }
    }
    Ok(counts
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let p = c as f64 / walkers as f64;
            ReturnRow {
                time: 2 * k as u64,
                p_hat: p,
                std_err: (p * (1.0 - p) / walkers as f64).sqrt(),
            }
        })
        .collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::lattice::Region;
    use crate::wilson::{wilson_box, BoxRoot};
    use proptest::prelude::*;

    fn p(x: i64, y: i64, z: i64) -> LatticePoint {
        LatticePoint::new(x, y, z)
    }

    /// Path along e1 from 0 to n, rooted at 0.
    pub(crate) fn path_tree(n: i64) -> SpanningTree {
        let v: Vec<_> = (0..=n).map(|x| p(x, 0, 0)).collect();
        let parent = (0..=n).map(|i| if i == 0 { NO_PARENT } else { (i - 1) as u32 }).collect();
        SpanningTree::new(v, parent, TreeRoot::Vertex(0)).unwrap()
    }

    /// Random lattice tree: a Wilson sample on a random small box.
    pub(crate) fn random_tree(rng: &mut RngStream, max_side: i64) -> SpanningTree {
        let (a, b, c) = (
            1 + rng.below(max_side as u32) as i64,
            1 + rng.below(max_side as u32) as i64,
            1 + rng.below(max_side as u32) as i64,
        );
        let mut pts = Vec::new();
        for x in 0..a {
            for y in 0..b {
                for z in 0..c {
                    pts.push(p(x, y, z));
                }
            }
        }
        let root = pts[rng.below(pts.len() as u32) as usize];
        crate::wilson::wilson_lattice(pts, BoxRoot::At(root), None, rng).unwrap()
    }

    fn bfs(view: &TreeMetricView, u: usize) -> Vec<u64> {
        let mut d = vec![u64::MAX; view.node_count()];
        d[u] = 0;
        let mut q = VecDeque::from([u]);
        while let Some(x) = q.pop_front() {
            for &w in view.neighbors(x) {
                if d[w as usize] == u64::MAX {
                    d[w as usize] = d[x] + 1;
                    q.push_back(w as usize);
                }
            }
        }
        d
    }

    /// Grounded-Laplacian potential solve by Gaussian elimination.
    fn resistance_oracle(view: &TreeMetricView, root: usize, radius: u64) -> f64 {
        let d = bfs(view, root);
        let n = view.node_count();
        let free: Vec<usize> = (0..n).filter(|&v| d[v] <= radius).collect();
        if free.len() == n {
            return f64::INFINITY;
        }
        let pos: FxHashMap<usize, usize> = free.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let m = free.len();
        // unit current injected at root, potential 0 on the grounded set
        let mut a = vec![vec![0.0f64; m + 1]; m];
        for (i, &v) in free.iter().enumerate() {
            for &w in view.neighbors(v) {
                a[i][i] += 1.0;
                if let Some(&j) = pos.get(&(w as usize)) {
                    a[i][j] -= 1.0;
                }
            }
            if v == root {
                a[i][m] = 1.0;
            }
        }
        for c in 0..m {
            let piv = (c..m).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
            a.swap(piv, c);
            for r in 0..m {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    if f != 0.0 {
                        for k in c..=m {
                            a[r][k] -= f * a[c][k];
                        }
                    }
                }
            }
        }
        let i = pos[&root];
        a[i][m] / a[i][i]
    }

    #[test]
    fn path_graph_values() {
        let t = path_tree(10);
        let v = TreeMetricView::new(&t);
        assert_eq!(v.tree_distance(0, 10).unwrap(), 10);
        assert_eq!(v.tree_distance(4, 4).unwrap(), 0);
        assert_eq!(v.ball_volume(5, 0).unwrap(), 1);
        assert_eq!(v.ball_volume(5, 3).unwrap(), 7);
        assert_eq!(v.schramm_tree_distance(2, 9).unwrap(), 7.0);
        assert_eq!(v.schramm_tree_distance(3, 3).unwrap(), 0.0);
        for r in 0..10 {
            assert_eq!(v.effective_resistance_to_shell(0, r).unwrap(), Resistance::Finite((r + 1) as f64));
        }
        assert_eq!(v.effective_resistance_to_shell(0, 10).unwrap(), Resistance::Infinite);
        assert!(v.tree_distance(0, 11).is_err());
    }

    #[test]
    fn star_resistance() {
        for k in 1..=6usize {
            let arm = 5i64;
            let dirs = crate::lattice::UNIT_STEPS;
            let mut v = vec![p(0, 0, 0)];
            let mut parent = vec![NO_PARENT];
            for d in dirs.iter().take(k) {
                for s in 1..=arm {
                    v.push(p(d.x * s, d.y * s, d.z * s));
                    parent.push(if s == 1 { 0 } else { (v.len() - 2) as u32 });
                }
            }
            let t = SpanningTree::new(v, parent, TreeRoot::Vertex(0)).unwrap();
            let view = TreeMetricView::new(&t);
            for r in 0..4u64 {
                let got = view.effective_resistance_to_shell(0, r).unwrap().value();
                assert!((got - (r + 1) as f64 / k as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn distances_match_bfs_and_lca_on_random_trees() {
        let mut rng = RngStream::new(40, 0);
        for _ in 0..30 {
            let t = random_tree(&mut rng, 10);
            let view = TreeMetricView::new(&t);
            let n = view.node_count();
            for _ in 0..5 {
                let u = rng.below(n as u32) as usize;
                let d = bfs(&view, u);
                for v in 0..n {
                    assert_eq!(view.tree_distance(u, v).unwrap(), d[v]);
                }
                let r = rng.below(8) as u64;
                let oracle = (0..n).filter(|&v| d[v] <= r).count() as u64;
                assert_eq!(view.ball_volume(u, r).unwrap(), oracle);
                let v = rng.below(n as u32) as usize;
                let path = view.tree_path(u, v).unwrap();
                assert_eq!(path.len() as u64, d[v] + 1);
                let pts: Vec<_> = path.iter().map(|&w| t.vertices()[w]).collect();
                let brute = pts.iter().flat_map(|a| pts.iter().map(move |b| a.dist(*b))).fold(0.0, f64::max);
                let s = view.schramm_tree_distance(u, v).unwrap();
                assert!((s - brute).abs() < 1e-12);
                assert!(s <= d[v] as f64);
            }
        }
    }

    #[test]
    fn resistance_matches_laplacian_oracle() {
        let mut rng = RngStream::new(41, 0);
        for _ in 0..200 {
            let t = random_tree(&mut rng, 6);
            let view = TreeMetricView::new(&t);
            let root = rng.below(view.node_count() as u32) as usize;
            let r = rng.below(10) as u64;
            let got = view.effective_resistance_to_shell(root, r).unwrap().value();
            let want = resistance_oracle(&view, root, r);
            if want.is_infinite() {
                assert!(got.is_infinite());
            } else {
                assert!((got - want).abs() < 1e-9, "{got} {want}");
                assert!(got <= (r + 1) as f64 + 1e-12);
            }
        }
    }

    #[test]
    fn rayleigh_spot_checks() {
        // path 0..10 with a dead-end twig at vertex 2: resistance unchanged
        let mut v: Vec<_> = (0..=10).map(|x| p(x, 0, 0)).collect();
        let mut parent: Vec<u32> = (0..=10).map(|i| if i == 0 { NO_PARENT } else { i - 1 }).collect();
        v.push(p(2, 1, 0));
        parent.push(2);
        let t = SpanningTree::new(v.clone(), parent.clone(), TreeRoot::Vertex(0)).unwrap();
        let base = TreeMetricView::new(&t).effective_resistance_to_shell(0, 5).unwrap().value();
        assert_eq!(base, 6.0);
        // a parallel branch reaching the shell lowers it
        for y in 1..=7 {
            v.push(p(0, -y, 0));
            parent.push(if y == 1 { 0 } else { (v.len() - 2) as u32 });
        }
        let t = SpanningTree::new(v, parent, TreeRoot::Vertex(0)).unwrap();
        let with = TreeMetricView::new(&t).effective_resistance_to_shell(0, 5).unwrap().value();
        assert!(with < base);
        assert_eq!(with, 3.0);
    }

    #[test]
    fn well_behaved_checks() {
        let t = path_tree(40);
        let v = TreeMetricView::new(&t);
        let c = v.check_well_behaved(0, 10, 100.0, 1.0).unwrap();
        assert!(c.in_j && c.volume == 11 && c.resistance == 11.0);
        // unbalanced: long path plus a heavy star near the root
        let mut pts: Vec<_> = (0..=40).map(|x| p(x, 0, 0)).collect();
        let mut parent: Vec<u32> = (0..=40).map(|i| if i == 0 { NO_PARENT } else { i - 1 }).collect();
        for sign in [1, -1] {
            for y in 1..=30 {
                pts.push(p(1, sign * y, 0));
                parent.push(if y == 1 { 1 } else { (pts.len() - 2) as u32 });
            }
        }
        let t = SpanningTree::new(pts, parent, TreeRoot::Vertex(0));
        let t = t.unwrap();
        let v = TreeMetricView::new(&t);
        let c = v.check_well_behaved(0, 10, 1.0, 1.0).unwrap();
        assert!(!c.in_j);
        assert!(v.check_well_behaved(0, 10, 0.5, 1.0).is_err());
    }

    #[test]
    fn walk_basics() {
        let edge = path_tree(1);
        let v = TreeMetricView::new(&edge);
        let mut rng = RngStream::new(42, 0);
        let s = srw_on_tree(&v, 1, StopRule::IntrinsicExit(0), &mut rng).unwrap();
        assert_eq!(s.steps, 1);
        assert!(matches!(srw_on_tree(&v, 0, StopRule::IntrinsicExit(1), &mut rng), Err(Error::UnreachableStop)));
        assert!(matches!(srw_on_tree(&v, 0, StopRule::EuclideanExit(1.0), &mut rng), Err(Error::UnreachableStop)));
        let s = srw_on_tree(&v, 0, StopRule::EuclideanExit(0.5), &mut rng).unwrap();
        assert_eq!((s.steps, s.end), (1, 1));
    }

    #[test]
    fn gamblers_ruin_exit_time() {
        // from the middle of a path of length 2R, exit of the intrinsic ball
        // of radius R - 1 happens at distance R: mean time R^2
        let r = 10u64;
        let t = path_tree(2 * r as i64);
        let v = TreeMetricView::new(&t);
        let mut rng = RngStream::new(43, 0);
        let times = srw_exit_times(&v, r as usize, StopRule::IntrinsicExit(r - 1), 10_000, &mut rng).unwrap();
        let mean = times.iter().sum::<u64>() as f64 / times.len() as f64;
        assert!((mean / (r * r) as f64 - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn exact_exit_time_matches_closed_forms_and_monte_carlo() {
        let r = 10u64;
        let t = path_tree(2 * r as i64);
        let v = TreeMetricView::new(&t);
        let e = expected_exit_time(&v, r as usize, StopRule::IntrinsicExit(r - 1)).unwrap();
        assert!((e - (r * r) as f64).abs() < 1e-9);
        let e = expected_exit_time(&v, r as usize, StopRule::EuclideanExit(r as f64 - 0.5)).unwrap();
        assert!((e - (r * r) as f64).abs() < 1e-9);
        // from the end of a path, exit past distance R takes (R+1)^2 on average
        let e = expected_exit_time(&v, 0, StopRule::IntrinsicExit(4)).unwrap();
        assert!((e - 25.0).abs() < 1e-9);
        assert!(matches!(expected_exit_time(&v, 0, StopRule::IntrinsicExit(50)), Err(Error::UnreachableStop)));
        assert!(expected_exit_time(&v, 0, StopRule::Steps(3)).is_err());

        let mut rng = RngStream::new(46, 0);
        let t = wilson_box(&Region::cube(p(0, 0, 0), 6.0), BoxRoot::At(p(0, 0, 0)), &mut rng).unwrap();
        let v = TreeMetricView::new(&t);
        let root = v.index_of(p(0, 0, 0)).unwrap();
        for stop in [StopRule::IntrinsicExit(6), StopRule::EuclideanExit(2.5)] {
            let exact = expected_exit_time(&v, root, stop).unwrap();
            let ts = srw_exit_times(&v, root, stop, 40_000, &mut rng).unwrap();
            let xs: Vec<f64> = ts.iter().map(|&t| t as f64).collect();
            let se = (crate::stats::variance(&xs) / xs.len() as f64).sqrt();
            let mc = crate::stats::mean(&xs);
            assert!((mc - exact).abs() < 4.0 * se, "{stop:?}: {mc} vs {exact}");
        }
    }

    #[test]
    fn return_profile_parity_and_two_step_bound() {
        let mut rng = RngStream::new(44, 0);
        let t = wilson_box(&Region::cube(p(0, 0, 0), 4.0), BoxRoot::At(p(0, 0, 0)), &mut rng).unwrap();
        let v = TreeMetricView::new(&t);
        let root = v.index_of(p(0, 0, 0)).unwrap();
        let prof = return_probability_profile(&v, root, 20, 20_000, &mut rng).unwrap();
        assert_eq!(prof[0].p_hat, 1.0);
        assert!(prof.iter().all(|r| r.time % 2 == 0));
        // exact p_2 = Σ_{y ~ x} 1 / (deg x deg y) >= 1 / max degree
        let dx = v.degree(root) as f64;
        let p2: f64 = v.neighbors(root).iter().map(|&y| 1.0 / (dx * v.degree(y as usize) as f64)).sum();
        let max_deg = (0..v.node_count()).map(|u| v.degree(u)).max().unwrap() as f64;
        assert!(p2 >= 1.0 / max_deg);
        assert!((prof[1].p_hat - p2).abs() < 4.0 * prof[1].std_err.max(1e-3));
        let s = srw_on_tree(&v, root, StopRule::Steps(1), &mut rng).unwrap();
        assert_ne!(s.end, root);
        assert!(return_probability_profile(&v, root, 3, 1, &mut rng).is_err());
    }

    #[test]
    fn return_counts_on_view_and_lazy_tree() {
        let t = path_tree(40);
        let mut v = TreeMetricView::new(&t);
        let mut rng = RngStream::new(47, 0);
        let mut far = 0;
        let c = return_counts(&mut v, 20, 8, 50_000, &mut rng, |u| far = far.max((u as i64 - 20).abs())).unwrap();
        assert_eq!(c[0], 50_000);
        // simple random walk on Z: p_2 = 1/2, p_4 = 3/8
        let p2 = c[1] as f64 / 50_000.0;
        let p4 = c[2] as f64 / 50_000.0;
        assert!((p2 - 0.5).abs() < 0.01 && (p4 - 0.375).abs() < 0.01);
        assert!(far <= 8);
        assert!(return_counts(&mut v, 20, 3, 1, &mut rng, |_| ()).is_err());

        let mut ust = LocalUst::new(64, RngStream::new(48, 0)).unwrap();
        let o = ust.reveal(LatticePoint::ORIGIN).unwrap();
        let c = return_counts(&mut ust, o, 20, 1000, &mut rng, |_| ()).unwrap();
        assert!(c[1] > 0 && c.len() == 11);
    }

    #[test]
    fn wired_view_keeps_boundary_out_of_volumes() {
        let mut rng = RngStream::new(45, 0);
        let t = wilson_box(&Region::cube(p(0, 0, 0), 3.0), BoxRoot::Wired, &mut rng).unwrap();
        let v = TreeMetricView::new(&t);
        assert_eq!(v.ghost(), Some(t.len()));
        assert_eq!(v.ball_volume(0, 100).unwrap(), t.len() as u64);
        let r = v.effective_resistance_to_shell(0, 2).unwrap().value();
        let want = resistance_oracle(&v, 0, 2);
        assert!((r - want).abs() < 1e-9 || (r.is_infinite() && want.is_infinite()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn tree_distance_axioms(seed in 0u64..200, a in 0u32..1000, b in 0u32..1000, c in 0u32..1000) {
            let mut rng = RngStream::new(seed, 7);
            let t = random_tree(&mut rng, 6);
            let v = TreeMetricView::new(&t);
            let n = v.node_count() as u32;
            let (a, b, c) = ((a % n) as usize, (b % n) as usize, (c % n) as usize);
            let d = |x, y| v.tree_distance(x, y).unwrap();
            prop_assert_eq!(d(a, b), d(b, a));
            prop_assert!(d(a, c) <= d(a, b) + d(b, c));
            prop_assert_eq!(d(a, a), 0);
            prop_assert!(a == b || d(a, b) > 0);
            let s = v.schramm_tree_distance(a, b).unwrap();
            prop_assert!(s <= d(a, b) as f64);
        }
    }
}
