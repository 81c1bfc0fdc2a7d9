//! Points, regions and nets on the integer lattice Z^3.
//!
//! Coordinates are exact integers; any lattice spacing is carried by the
//! caller as an external scale factor.

use std::fmt;
use std::ops::{Add, Neg, Sub};

use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct LatticePoint {
    pub x: i64,
    pub y: i64,
    pub z: i64,
}

/// The six unit vectors `+e1, -e1, +e2, -e2, +e3, -e3`, in that order.
pub const UNIT_STEPS: [LatticePoint; 6] = [
    LatticePoint::new(1, 0, 0),
    LatticePoint::new(-1, 0, 0),
    LatticePoint::new(0, 1, 0),
    LatticePoint::new(0, -1, 0),
    LatticePoint::new(0, 0, 1),
    LatticePoint::new(0, 0, -1),
];

impl LatticePoint {
    pub const ORIGIN: LatticePoint = LatticePoint::new(0, 0, 0);

    pub const fn new(x: i64, y: i64, z: i64) -> Self {
        LatticePoint { x, y, z }
    }

    /// Squared Euclidean norm, exact.
    pub fn norm_sq(self) -> i128 {
        let (x, y, z) = (self.x as i128, self.y as i128, self.z as i128);
        x * x + y * y + z * z
    }

    /// Euclidean norm computed in floating point without intermediate overflow.
    pub fn norm(self) -> f64 {
        (self.x as f64).hypot(self.y as f64).hypot(self.z as f64)
    }

    pub fn norm_inf(self) -> i64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }

    pub fn dist(self, other: LatticePoint) -> f64 {
        (self - other).norm()
    }

    pub fn neighbors(self) -> [LatticePoint; 6] {
        UNIT_STEPS.map(|s| self + s)
    }

    pub fn is_neighbor(self, other: LatticePoint) -> bool {
        (self - other).norm_sq() == 1
    }

    pub fn to_f64(self) -> [f64; 3] {
        [self.x as f64, self.y as f64, self.z as f64]
    }
}

impl fmt::Debug for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

impl Add for LatticePoint {
    type Output = LatticePoint;
    fn add(self, o: LatticePoint) -> LatticePoint {
        LatticePoint::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for LatticePoint {
    type Output = LatticePoint;
    fn sub(self, o: LatticePoint) -> LatticePoint {
        LatticePoint::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for LatticePoint {
    type Output = LatticePoint;
    fn neg(self) -> LatticePoint {
        LatticePoint::new(-self.x, -self.y, -self.z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionKind {
    /// Open Euclidean ball `B(x, r) = {p : |p - x| < r}`.
    Ball,
    /// Open sup-norm ball `D(x, r) = {p : |p - x|_inf < r}`.
    Cube,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub kind: RegionKind,
    pub center: LatticePoint,
    pub radius: f64,
}

impl Region {
    pub fn ball(center: LatticePoint, radius: f64) -> Self {
        Region {
            kind: RegionKind::Ball,
            center,
            radius,
        }
    }

    pub fn cube(center: LatticePoint, radius: f64) -> Self {
        Region {
            kind: RegionKind::Cube,
            center,
            radius,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(invalid("radius", format!("must be positive, got {}", self.radius)));
        }
        Ok(())
    }

    pub fn contains(&self, p: LatticePoint) -> bool {
        let d = p - self.center;
        match self.kind {
            RegionKind::Ball => (d.norm_sq() as f64) < self.radius * self.radius,
            RegionKind::Cube => (d.norm_inf() as f64) < self.radius,
        }
    }

    /// Largest integer `k` with every member satisfying `|p - center|_inf <= k`.
    pub fn half_extent(&self) -> i64 {
        // Members satisfy |coord| < radius, so |coord| <= ceil(radius) - 1.
        (self.radius.ceil() as i64 - 1).max(0)
    }

    /// All lattice points of the region in lexicographic (x, y, z) order.
    pub fn points(&self) -> Vec<LatticePoint> {
        let k = self.half_extent();
        let c = self.center;
        let mut out = Vec::new();
        for x in -k..=k {
            for y in -k..=k {
                for z in -k..=k {
                    let p = c + LatticePoint::new(x, y, z);
                    if self.contains(p) {
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

/// `ball_contains` for either region kind.
pub fn ball_contains(region: &Region, p: LatticePoint) -> bool {
    region.contains(p)
}

/// Inner vertex boundary: members with at least one nearest neighbour outside
/// the set. Returned sorted.
pub fn inner_boundary<'a, I>(set: I) -> Vec<LatticePoint>
where
    I: IntoIterator<Item = &'a LatticePoint>,
{
    let members: FxHashSet<LatticePoint> = set.into_iter().copied().collect();
    let mut out: Vec<LatticePoint> = members
        .iter()
        .copied()
        .filter(|p| p.neighbors().iter().any(|q| !members.contains(q)))
        .collect();
    out.sort_unstable();
    out
}

/// Deterministic net of lattice points covering `region` at Euclidean mesh
/// `mesh`.
///
/// Points lie on the sub-grid `center + pitch * Z^3` with integer pitch
/// `max(1, floor(mesh / sqrt 3))`. Every member `q` is covered by the grid
/// node obtained by truncating `q - center` towards zero coordinatewise: that
/// node stays in the region (it is no farther from the center in any
/// coordinate) and lies within `pitch * sqrt 3 <= mesh` of `q`.
pub fn epsilon_net(region: &Region, mesh: f64) -> Result<Vec<LatticePoint>> {
    region.validate()?;
    if !(mesh >= 1.0) || !mesh.is_finite() {
        return Err(invalid("mesh", format!("must be >= 1, got {mesh}")));
    }
    if mesh > 2.0 * region.radius {
        return Ok(vec![region.center]);
    }
    let pitch = ((mesh / 3f64.sqrt()).floor() as i64).max(1);
    let k = region.half_extent() / pitch;
    let c = region.center;
    let mut out = Vec::new();
    for i in -k..=k {
        for j in -k..=k {
            for l in -k..=k {
                let p = c + LatticePoint::new(i * pitch, j * pitch, l * pitch);
                if region.contains(p) {
                    out.push(p);
                }
            }
        }
    }
    Ok(out)
}

/// Point-to-index lookup: a flat array over the bounding box when that box
/// is at most 8 times the point count, a hash map otherwise.
#[derive(Clone, Debug)]
pub enum PointIndex {
    Dense {
        lo: LatticePoint,
        dims: [i64; 3],
        slots: Vec<u32>,
    },
    Sparse(FxHashMap<LatticePoint, u32>),
}

impl PointIndex {
    pub fn new(points: &[LatticePoint]) -> Self {
        let (mut lo, mut hi) = (LatticePoint::new(i64::MAX, i64::MAX, i64::MAX), LatticePoint::new(i64::MIN, i64::MIN, i64::MIN));
        for p in points {
            lo = LatticePoint::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = LatticePoint::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        let dims = [hi.x - lo.x + 1, hi.y - lo.y + 1, hi.z - lo.z + 1];
        let volume = dims.iter().try_fold(1i64, |a, &d| a.checked_mul(d.max(0)));
        match volume {
            Some(v) if !points.is_empty() && v <= 8 * points.len() as i64 => {
                let mut slots = vec![u32::MAX; v as usize];
                for (i, p) in points.iter().enumerate() {
                    let d = *p - lo;
                    slots[((d.x * dims[1] + d.y) * dims[2] + d.z) as usize] = i as u32;
                }
                PointIndex::Dense { lo, dims, slots }
            }
            _ => PointIndex::Sparse(points.iter().enumerate().map(|(i, p)| (*p, i as u32)).collect()),
        }
    }

    pub fn get(&self, p: LatticePoint) -> Option<usize> {
        match self {
            PointIndex::Dense { lo, dims, slots } => {
                let d = p - *lo;
                if d.x < 0 || d.y < 0 || d.z < 0 || d.x >= dims[0] || d.y >= dims[1] || d.z >= dims[2] {
                    return None;
                }
                let i = slots[((d.x * dims[1] + d.y) * dims[2] + d.z) as usize];
                (i != u32::MAX).then_some(i as usize)
            }
            PointIndex::Sparse(m) => m.get(&p).map(|&i| i as usize),
        }
    }
}
