//! Uniform spanning trees by Wilson's algorithm, and parameterized trees.

mod local;
mod param_tree;

pub use local::{LocalUst, GHOST};
pub use param_tree::{
    essential_branches, forest_distance, reconstruct, spanned_subtree, EssentialBranchSet, ForestDistance,
    ParameterizedTree,
};

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{LatticePoint, Region, UNIT_STEPS};
use crate::rng::RngStream;

/// Parent sentinel: the root, or (wired mode) attachment to the boundary.
pub const NO_PARENT: u32 = u32::MAX;

/// Graph on which a simple random walk can be run.
pub trait WalkGraph {
    fn vertex_count(&self) -> usize;
    /// A uniformly chosen neighbour, counting multi-edges with multiplicity.
    fn random_neighbor(&self, v: usize, rng: &mut RngStream) -> usize;
}

/// Undirected multigraph in compressed adjacency form.
#[derive(Clone, Debug)]
pub struct CsrGraph {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl CsrGraph {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut deg = vec![0usize; n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::UnknownVertex(a.max(b)));
            }
            if a == b {
                return Err(invalid("edges", format!("self-loop at {a}")));
            }
            deg[a] += 1;
            deg[b] += 1;
        }
        let mut offsets = vec![0; n + 1];
        for v in 0..n {
            offsets[v + 1] = offsets[v] + deg[v];
        }
        let mut fill = offsets.clone();
        let mut targets = vec![0u32; offsets[n]];
        for &(a, b) in edges {
            targets[fill[a]] = b as u32;
            fill[a] += 1;
            targets[fill[b]] = a as u32;
            fill[b] += 1;
        }
        Ok(CsrGraph { offsets, targets })
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }
}

impl WalkGraph for CsrGraph {
    fn vertex_count(&self) -> usize {
        self.offsets.len() - 1
    }

    fn random_neighbor(&self, v: usize, rng: &mut RngStream) -> usize {
        let nb = self.neighbors(v);
        nb[rng.below(nb.len() as u32) as usize] as usize
    }
}

/// Boundary condition for a finite set of lattice vertices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Nearest-neighbour graph of the set itself.
    Free,
    /// Every outside neighbour is identified with one extra ghost vertex.
    Wired,
}

/// Nearest-neighbour graph induced by a finite set of lattice points.
/// In wired mode the ghost vertex has index `len()`.
pub struct LatticeGraph {
    points: Vec<LatticePoint>,
    lo: LatticePoint,
    dims: [i64; 3],
    index: Vec<u32>,
    boundary: Boundary,
}

impl LatticeGraph {
    pub fn new(points: Vec<LatticePoint>, boundary: Boundary) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("points", "empty vertex set"));
        }
        if points.len() >= NO_PARENT as usize {
            return Err(invalid("points", "too many vertices"));
        }
        let mut lo = points[0];
        let mut hi = points[0];
        for p in &points {
            lo = LatticePoint::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = LatticePoint::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        let dims = [hi.x - lo.x + 1, hi.y - lo.y + 1, hi.z - lo.z + 1];
        let cells = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
        let cells = match cells {
            Some(c) if c <= 1 << 31 => c,
            _ => return Err(invalid("points", "bounding box too large")),
        };
        let mut index = vec![NO_PARENT; cells];
        for (i, p) in points.iter().enumerate() {
            let d = *p - lo;
            let c = ((d.x * dims[1] + d.y) * dims[2] + d.z) as usize;
            if index[c] != NO_PARENT {
                return Err(invalid("points", format!("duplicate vertex {p:?}")));
            }
            index[c] = i as u32;
        }
        if boundary == Boundary::Free && points.len() > 1 {
            let g = LatticeGraph {
                points,
                lo,
                dims,
                index,
                boundary,
            };
            if !g.is_connected() {
                return Err(invalid("points", "free-boundary vertex set is not connected"));
            }
            return Ok(g);
        }
        Ok(LatticeGraph {
            points,
            lo,
            dims,
            index,
            boundary,
        })
    }

    pub fn points(&self) -> &[LatticePoint] {
        &self.points
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Number of lattice vertices (the ghost excluded).
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn ghost(&self) -> Option<usize> {
        (self.boundary == Boundary::Wired).then_some(self.points.len())
    }

    #[inline]
    pub fn index_of(&self, p: LatticePoint) -> Option<usize> {
        let d = p - self.lo;
        if d.x < 0 || d.y < 0 || d.z < 0 || d.x >= self.dims[0] || d.y >= self.dims[1] || d.z >= self.dims[2] {
            return None;
        }
        let i = self.index[((d.x * self.dims[1] + d.y) * self.dims[2] + d.z) as usize];
        (i != NO_PARENT).then_some(i as usize)
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.points.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for q in self.points[v].neighbors() {
                if let Some(j) = self.index_of(q) {
                    if !seen[j] {
                        seen[j] = true;
                        count += 1;
                        stack.push(j);
                    }
                }
            }
        }
        count == self.points.len()
    }
}

impl WalkGraph for LatticeGraph {
    fn vertex_count(&self) -> usize {
        self.points.len() + (self.boundary == Boundary::Wired) as usize
    }

    #[inline]
    fn random_neighbor(&self, v: usize, rng: &mut RngStream) -> usize {
        let n = self.points.len();
        if v == n {
            // ghost: uniform over its edges, one per (boundary vertex, outside
            // direction) pair
            return self.ghost_neighbor(rng);
        }
        loop {
            let q = self.points[v] + rng.next_uniform_step();
            match self.index_of(q) {
                Some(j) => return j,
                None if self.boundary == Boundary::Wired => return n,
                None => continue,
            }
        }
    }
}

impl LatticeGraph {
    fn ghost_neighbor(&self, rng: &mut RngStream) -> usize {
        // rejection: a uniform (vertex, direction) pair pointing outside
        loop {
            let v = rng.below(self.points.len() as u32) as usize;
            let q = self.points[v] + UNIT_STEPS[rng.next_direction()];
            if self.index_of(q).is_none() {
                return v;
            }
        }
    }
}

/// Wilson's algorithm: parent pointers of a uniform spanning tree of `g`
/// rooted at `root`, starting walks from the vertices in `order`.
///
/// Each walk records its last exit from every vertex; following those
/// pointers from the start retraces the chronological loop erasure.
pub fn wilson<G: WalkGraph>(g: &G, root: usize, order: &[usize], rng: &mut RngStream) -> Result<Vec<u32>> {
    let n = g.vertex_count();
    if root >= n {
        return Err(Error::UnknownVertex(root));
    }
    let mut in_tree = vec![false; n];
    let mut next = vec![NO_PARENT; n];
    in_tree[root] = true;
    for &start in order {
        if start >= n {
            return Err(Error::UnknownVertex(start));
        }
        let mut u = start;
        while !in_tree[u] {
            let w = g.random_neighbor(u, rng);
            next[u] = w as u32;
            u = w;
        }
        u = start;
        while !in_tree[u] {
            in_tree[u] = true;
            u = next[u] as usize;
        }
    }
    if let Some(v) = in_tree.iter().position(|&b| !b) {
        return Err(invalid("order", format!("vertex {v} is never started from")));
    }
    Ok(next)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeRoot {
    Vertex(u32),
    /// Wired boundary: every vertex with no parent hangs off the boundary.
    Wired,
}

/// Rooted spanning tree of a finite set of lattice points, as parent
/// pointers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpanningTree {
    vertices: Vec<LatticePoint>,
    parent: Vec<u32>,
    root: TreeRoot,
}

impl SpanningTree {
    /// Checks nearest-neighbour edges and that every vertex reaches the root.
    pub fn new(vertices: Vec<LatticePoint>, parent: Vec<u32>, root: TreeRoot) -> Result<Self> {
        if vertices.len() != parent.len() {
            return Err(Error::SizeMismatch(vertices.len(), parent.len()));
        }
        let n = vertices.len();
        for (v, &p) in parent.iter().enumerate() {
            if p == NO_PARENT {
                let ok = match root {
                    TreeRoot::Vertex(r) => r as usize == v,
                    TreeRoot::Wired => true,
                };
                if !ok {
                    return Err(Error::InvalidInstance(format!("vertex {v} has no parent but is not the root")));
                }
            } else if p as usize >= n {
                return Err(Error::UnknownVertex(p as usize));
            } else if !vertices[v].is_neighbor(vertices[p as usize]) {
                return Err(Error::InvalidInstance(format!("edge {v} - {p} is not a lattice edge")));
            }
        }
        if let TreeRoot::Vertex(r) = root {
            if r as usize >= n || parent[r as usize] != NO_PARENT {
                return Err(Error::InvalidInstance("root must have no parent".into()));
            }
        }
        // acyclicity: iterative depth resolution
        let mut state = vec![0u8; n]; // 0 unknown, 1 on stack, 2 reaches root
        let mut stack = Vec::new();
        for s in 0..n {
            let mut v = s;
            while state[v] == 0 {
                state[v] = 1;
                stack.push(v);
                if parent[v] == NO_PARENT {
                    break;
                }
                v = parent[v] as usize;
            }
            if state[v] == 1 && parent[v] != NO_PARENT {
                return Err(Error::InvalidInstance(format!("cycle through vertex {v}")));
            }
            for u in stack.drain(..) {
                state[u] = 2;
            }
        }
        Ok(SpanningTree { vertices, parent, root })
    }

    pub fn vertices(&self) -> &[LatticePoint] {
        &self.vertices
    }

    pub fn parent(&self) -> &[u32] {
        &self.parent
    }

    pub fn root(&self) -> TreeRoot {
        self.root
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Tree edges `(child, parent)`; wired attachments are omitted.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parent
            .iter()
            .enumerate()
            .filter(|(_, &p)| p != NO_PARENT)
            .map(|(v, &p)| (v, p as usize))
    }

    pub fn index_of(&self, p: LatticePoint) -> Option<usize> {
        self.vertices.iter().position(|q| *q == p)
    }

    /// CSV with columns `vertex_index,x,y,z,parent_index`; the sentinel
    /// parent is written as -1. A leading `#` comment line is allowed.
    pub fn write_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "vertex_index,x,y,z,parent_index")?;
        for (i, (p, &q)) in self.vertices.iter().zip(&self.parent).enumerate() {
            let parent = if q == NO_PARENT { -1 } else { q as i64 };
            writeln!(w, "{i},{},{},{},{parent}", p.x, p.y, p.z)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, root: TreeRoot) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut parent = Vec::new();
        let mut header = false;
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            if !header {
                if t != "vertex_index,x,y,z,parent_index" {
                    return Err(Error::Parse {
                        line: n + 1,
                        reason: "unexpected header".into(),
                    });
                }
                header = true;
                continue;
            }
            let f: std::result::Result<Vec<i64>, _> = t.split(',').map(|s| s.trim().parse()).collect();
            let f = match f {
                Ok(f) if f.len() == 5 && f[0] as usize == vertices.len() => f,
                _ => {
                    return Err(Error::Parse {
                        line: n + 1,
                        reason: "expected five integers with consecutive vertex indices".into(),
                    })
                }
            };
            vertices.push(LatticePoint::new(f[1], f[2], f[3]));
            parent.push(if f[4] < 0 { NO_PARENT } else { f[4] as u32 });
        }
        SpanningTree::new(vertices, parent, root)
    }
}

/// Where a box tree is rooted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxRoot {
    /// Free boundary, rooted at this lattice point.
    At(LatticePoint),
    /// Boundary collapsed to a single root.
    Wired,
}

/// Uniform spanning tree of a finite set of lattice points, with walks
/// started in the given vertex order (default: the order of `points`).
pub fn wilson_lattice(
    points: Vec<LatticePoint>,
    root: BoxRoot,
    order: Option<&[usize]>,
    rng: &mut RngStream,
) -> Result<SpanningTree> {
    let boundary = match root {
        BoxRoot::At(_) => Boundary::Free,
        BoxRoot::Wired => Boundary::Wired,
    };
    let g = LatticeGraph::new(points, boundary)?;
    let (root_index, tree_root) = match root {
        BoxRoot::At(p) => {
            let r = g.index_of(p).ok_or_else(|| invalid("root", format!("{p:?} is not in the vertex set")))?;
            (r, TreeRoot::Vertex(r as u32))
        }
        BoxRoot::Wired => (g.ghost().unwrap(), TreeRoot::Wired),
    };
    let default_order: Vec<usize>;
    let order = match order {
        Some(o) => o,
        None => {
            default_order = (0..g.len()).collect();
            &default_order
        }
    };
    let mut parent = wilson(&g, root_index, order, rng)?;
    if let Some(ghost) = g.ghost() {
        parent.truncate(ghost);
        for p in parent.iter_mut() {
            if *p as usize == ghost {
                *p = NO_PARENT;
            }
        }
    }
    let LatticeGraph { points, .. } = g;
    Ok(SpanningTree {
        vertices: points,
        parent,
        root: tree_root,
    })
}

/// Uniform spanning tree of the region's nearest-neighbour graph.
pub fn wilson_box(region: &Region, root: BoxRoot, rng: &mut RngStream) -> Result<SpanningTree> {
    region.validate()?;
    wilson_lattice(region.points(), root, None, rng)
}
