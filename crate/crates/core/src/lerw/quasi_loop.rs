use rustc_hash::FxHashMap;

use super::LatticePath;
use crate::error::{invalid, Error, Result};
use crate::lattice::LatticePoint;

/// Index pairs `(i, j)`, `i < j`, with `|v_i - v_j| < r` whose connecting
/// sub-path leaves `B(v_i, R)`. Sorted lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct QuasiLoopReport {
    pub r: f64,
    pub big_r: f64,
    pub pairs: Vec<(usize, usize)>,
}

impl QuasiLoopReport {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

struct Scanner<'a> {
    v: &'a [LatticePoint],
    r2: f64,
    big_r2: f64,
    cell: i64,
    grid: FxHashMap<(i64, i64, i64), Vec<u32>>,
    // first index k > i with |v_k - v_i| >= R, computed on demand
    escape: FxHashMap<u32, usize>,
}

impl<'a> Scanner<'a> {
    fn new(path: &'a LatticePath, r: f64, big_r: f64) -> Result<Self> {
        if !(r > 0.0) || !(big_r > r) || !big_r.is_finite() {
            return Err(invalid("r", format!("need 0 < r < R, got r = {r}, R = {big_r}")));
        }
        if !path.is_simple() {
            return Err(Error::NotSimple);
        }
        Ok(Scanner {
            v: path.vertices(),
            r2: r * r,
            big_r2: big_r * big_r,
            cell: (r.ceil() as i64).max(1),
            grid: FxHashMap::default(),
            escape: FxHashMap::default(),
        })
    }

    fn key(&self, p: LatticePoint) -> (i64, i64, i64) {
        (
            p.x.div_euclid(self.cell),
            p.y.div_euclid(self.cell),
            p.z.div_euclid(self.cell),
        )
    }

    fn escape_index(&mut self, i: usize) -> usize {
        if let Some(&k) = self.escape.get(&(i as u32)) {
            return k;
        }
        let vi = self.v[i];
        let k = (i + 1..self.v.len())
            .find(|&k| ((self.v[k] - vi).norm_sq() as f64) >= self.big_r2)
            .unwrap_or(usize::MAX);
        self.escape.insert(i as u32, k);
        k
    }

    /// Visits pairs ending at each `j` in order; `emit` returns false to stop.
    fn run(&mut self, mut emit: impl FnMut(usize, usize) -> bool) {
        let mut near = Vec::new();
        for j in 0..self.v.len() {
            let vj = self.v[j];
            let (cx, cy, cz) = self.key(vj);
            near.clear();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(list) = self.grid.get(&(cx + dx, cy + dy, cz + dz)) {
                            near.extend(
                                list.iter()
                                    .map(|&i| i as usize)
                                    .filter(|&i| ((self.v[i] - vj).norm_sq() as f64) < self.r2),
                            );
                        }
                    }
                }
            }
            near.sort_unstable();
            for &i in near.iter() {
                if self.escape_index(i) <= j && !emit(i, j) {
                    return;
                }
            }
            self.grid.entry((cx, cy, cz)).or_default().push(j as u32);
        }
    }
}

/// All `(r, R)` quasi-loops of a simple path.
pub fn detect_quasi_loops(path: &LatticePath, r: f64, big_r: f64) -> Result<QuasiLoopReport> {
    let mut s = Scanner::new(path, r, big_r)?;
    let mut pairs = Vec::new();
    s.run(|i, j| {
        pairs.push((i, j));
        true
    });
    pairs.sort_unstable();
    Ok(QuasiLoopReport { r, big_r, pairs })
}

/// Whether `QL(r, R; path)` is nonempty; stops at the first witness.
pub fn has_quasi_loop(path: &LatticePath, r: f64, big_r: f64) -> Result<bool> {
    let mut s = Scanner::new(path, r, big_r)?;
    let mut found = false;
    s.run(|_, _| {
        found = true;
        false
    });
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lerw::killed_lerw;
    use crate::rng::RngStream;

    fn brute(path: &LatticePath, r: f64, big_r: f64) -> Vec<(usize, usize)> {
        let v = path.vertices();
        let mut out = Vec::new();
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                if v[i].dist(v[j]) < r && v[i..=j].iter().any(|q| q.dist(v[i]) >= big_r) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    fn line(n: i64) -> LatticePath {
        LatticePath::new((0..=n).map(|x| LatticePoint::new(x, 0, 0)).collect()).unwrap()
    }

    #[test]
    fn straight_line_has_none() {
        let p = line(50);
        for (r, big_r) in [(1.5, 2.0), (3.0, 10.0), (20.0, 30.0)] {
            assert!(detect_quasi_loops(&p, r, big_r).unwrap().is_empty());
        }
    }

    #[test]
    fn staple_is_detected() {
        // out along x to R + 2, one step over in y, back to x = 0
        let big_r = 6.0;
        let far = big_r as i64 + 2;
        let mut v: Vec<_> = (0..=far).map(|x| LatticePoint::new(x, 0, 0)).collect();
        v.extend((0..=far).rev().map(|x| LatticePoint::new(x, 1, 0)));
        let p = LatticePath::new(v).unwrap();
        let rep = detect_quasi_loops(&p, 2.0, big_r).unwrap();
        assert!(rep.pairs.contains(&(0, p.steps())));
        assert!(has_quasi_loop(&p, 2.0, big_r).unwrap());
        assert_eq!(rep.pairs, brute(&p, 2.0, big_r));
    }

    #[test]
    fn rejects_bad_input() {
        let p = LatticePath::new(vec![LatticePoint::ORIGIN, LatticePoint::new(1, 0, 0), LatticePoint::ORIGIN]).unwrap();
        assert!(matches!(detect_quasi_loops(&p, 1.0, 2.0), Err(Error::NotSimple)));
        assert!(detect_quasi_loops(&line(3), 2.0, 2.0).is_err());
    }

    #[test]
    fn matches_brute_force_and_is_monotone() {
        let mut rng = RngStream::new(3, 3);
        let mut checked = 0;
        while checked < 40 {
            let (p, _) = killed_lerw(LatticePoint::ORIGIN, 12.0, &mut rng).unwrap();
            if p.steps() > 500 {
                continue;
            }
            checked += 1;
            for (r, big_r) in [(1.5, 3.0), (2.0, 4.0), (3.0, 6.0), (2.5, 10.0)] {
                let rep = detect_quasi_loops(&p, r, big_r).unwrap();
                assert_eq!(rep.pairs, brute(&p, r, big_r));
                assert_eq!(has_quasi_loop(&p, r, big_r).unwrap(), !rep.is_empty());
            }
            let small = detect_quasi_loops(&p, 2.0, 6.0).unwrap().pairs;
            let large = detect_quasi_loops(&p, 3.0, 4.0).unwrap().pairs;
            assert!(small.iter().all(|x| large.contains(x)));
        }
    }
}
