use rustc_hash::FxHashSet;

use crate::error::{invalid, Result};
use crate::lattice::{LatticePoint, Region};

/// Domain in which a walk runs. Walks stop at their first vertex outside it.
#[derive(Clone, Debug)]
pub enum DomainSpec {
    Region(Region),
    /// `Z^3` minus a finite set of vertices. Unbounded, so a hard step cap
    /// is part of the domain.
    ComplementOf {
        blocked: FxHashSet<LatticePoint>,
        step_cap: u64,
    },
    /// `2^level * P` where `P` is a connected union of closed unit cubes
    /// `[a, a + 1]^3`, listed by their lower corners `a`.
    DyadicPolyhedron {
        level: u32,
        cubes: FxHashSet<[i64; 3]>,
    },
}

impl From<Region> for DomainSpec {
    fn from(r: Region) -> Self {
        DomainSpec::Region(r)
    }
}

impl DomainSpec {
    pub fn complement_of(blocked: FxHashSet<LatticePoint>, step_cap: u64) -> Self {
        DomainSpec::ComplementOf { blocked, step_cap }
    }

    /// Validates that the cubes form a connected closed set (cubes touching
    /// at a face, edge or corner are connected).
    pub fn dyadic_polyhedron(level: u32, cubes: &[[i64; 3]]) -> Result<Self> {
        if cubes.is_empty() {
            return Err(invalid("cubes", "a dyadic polyhedron needs at least one cube"));
        }
        if level > 40 {
            return Err(invalid("level", format!("must be <= 40, got {level}")));
        }
        let set: FxHashSet<[i64; 3]> = cubes.iter().copied().collect();
        let mut seen = FxHashSet::default();
        let mut stack = vec![cubes[0]];
        seen.insert(cubes[0]);
        while let Some(c) = stack.pop() {
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let n = [c[0] + dx, c[1] + dy, c[2] + dz];
                        if set.contains(&n) && seen.insert(n) {
                            stack.push(n);
                        }
                    }
                }
            }
        }
        if seen.len() != set.len() {
            return Err(invalid("cubes", "the union of cubes is not connected"));
        }
        Ok(DomainSpec::DyadicPolyhedron { level, cubes: set })
    }

    pub fn step_cap(&self) -> Option<u64> {
        match self {
            DomainSpec::ComplementOf { step_cap, .. } => Some(*step_cap),
            _ => None,
        }
    }

    pub fn contains(&self, p: LatticePoint) -> bool {
        match self {
            DomainSpec::Region(r) => r.contains(p),
            DomainSpec::ComplementOf { blocked, .. } => !blocked.contains(&p),
            DomainSpec::DyadicPolyhedron { level, cubes } => {
                let side = 1i64 << level;
                let coords = [p.x, p.y, p.z];
                // Candidate lower corners: floor(c / side), and one less when
                // c sits exactly on a cube face.
                let mut cand = [[0i64; 2]; 3];
                let mut count = [1usize; 3];
                for k in 0..3 {
                    let q = coords[k].div_euclid(side);
                    cand[k][0] = q;
                    if coords[k].rem_euclid(side) == 0 {
                        cand[k][1] = q - 1;
                        count[k] = 2;
                    }
                }
                for a in &cand[0][..count[0]] {
                    for b in &cand[1][..count[1]] {
                        for c in &cand[2][..count[2]] {
                            if cubes.contains(&[*a, *b, *c]) {
                                return true;
                            }
                        }
                    }
                }
                false
            }
        }
    }
}
