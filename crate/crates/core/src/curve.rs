//! Piecewise-linear parameterized curves in R^3 and the curve metrics.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::lerw::LatticePath;

pub type Point3 = [f64; 3];

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dist3(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

fn norm_sq(a: Point3) -> f64 {
    a[0] * a[0] + a[1] * a[1] + a[2] * a[2]
}

fn lerp(a: Point3, b: Point3, u: f64) -> Point3 {
    [
        a[0] + u * (b[0] - a[0]),
        a[1] + u * (b[1] - a[1]),
        a[2] + u * (b[2] - a[2]),
    ]
}

/// Linear interpolation through `points` at the knot `times`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Curve {
    points: Vec<Point3>,
    times: Vec<f64>,
    simple: bool,
}

impl Curve {
    /// Knot times must start at 0 and be nondecreasing; a repeated time must
    /// repeat the point (curves are continuous).
    pub fn new(points: Vec<Point3>, times: Vec<f64>, simple: bool) -> Result<Self> {
        if points.is_empty() || points.len() != times.len() {
            return Err(Error::MalformedCurve(format!(
                "{} points and {} knot times",
                points.len(),
                times.len()
            )));
        }
        if points.iter().flatten().chain(&times).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("curve"));
        }
        if times[0] != 0.0 {
            return Err(Error::MalformedCurve("first knot time must be 0".into()));
        }
        for k in 1..times.len() {
            if times[k] < times[k - 1] {
                return Err(Error::MalformedCurve(format!("knot times decrease at {k}")));
            }
            if times[k] == times[k - 1] && points[k] != points[k - 1] {
                return Err(Error::MalformedCurve(format!("jump at repeated knot time {k}")));
            }
        }
        Ok(Curve { points, times, simple })
    }

    /// Single point, duration zero.
    pub fn point(p: Point3) -> Self {
        Curve {
            points: vec![p],
            times: vec![0.0],
            simple: true,
        }
    }

    /// Unit-speed curve through a lattice path.
    pub fn from_path(path: &LatticePath) -> Self {
        Curve {
            points: path.vertices().iter().map(|v| v.to_f64()).collect(),
            times: (0..path.vertices().len()).map(|i| i as f64).collect(),
            simple: path.is_simple(),
        }
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn duration(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn is_simple(&self) -> bool {
        self.simple
    }

    pub fn start(&self) -> Point3 {
        self.points[0]
    }

    pub fn end(&self) -> Point3 {
        *self.points.last().unwrap()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.duration()).contains(&t) {
            return Err(Error::TimeOutOfRange {
                time: t,
                duration: self.duration(),
            });
        }
        Ok(())
    }

    /// `γ(t)`; `t` must lie in `[0, T]`.
    pub fn eval(&self, t: f64) -> Result<Point3> {
        self.check_time(t)?;
        Ok(self.eval_unchecked(t))
    }

    fn eval_unchecked(&self, t: f64) -> Point3 {
        // last knot with time <= t
        let k = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        if k + 1 >= self.times.len() {
            return self.end();
        }
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        if t1 == t0 {
            return self.points[k];
        }
        lerp(self.points[k], self.points[k + 1], (t - t0) / (t1 - t0))
    }

    /// Knot times strictly inside `(s, t)`.
    fn interior_knots(&self, s: f64, t: f64) -> std::ops::Range<usize> {
        let lo = self.times.partition_point(|&x| x <= s);
        let hi = self.times.partition_point(|&x| x < t);
        lo..hi.max(lo)
    }

    /// `γ(· + s)` on `[0, t - s]`.
    pub fn restrict(&self, s: f64, t: f64) -> Result<Curve> {
        self.check_time(s)?;
        self.check_time(t)?;
        if s > t {
            return Err(invalid("s", format!("restriction interval [{s}, {t}] is reversed")));
        }
        let mut points = vec![self.eval_unchecked(s)];
        let mut times = vec![0.0];
        if t > s {
            for k in self.interior_knots(s, t) {
                points.push(self.points[k]);
                times.push(self.times[k] - s);
            }
            points.push(self.eval_unchecked(t));
            times.push(t - s);
        }
        Ok(Curve {
            points,
            times,
            simple: self.simple,
        })
    }

    /// `γ(T - t)`.
    pub fn reverse(&self) -> Curve {
        let t = self.duration();
        Curve {
            points: self.points.iter().rev().copied().collect(),
            times: self.times.iter().rev().map(|s| t - s).collect(),
            simple: self.simple,
        }
    }

    /// `a` followed by `b` shifted in time by `T_a`. The result is flagged
    /// simple only if both parts are and they share just the junction point.
    pub fn concatenate(&self, b: &Curve) -> Result<Curve> {
        let gap = dist3(self.end(), b.start());
        let scale = 1.0 + norm_sq(self.end()).sqrt();
        if gap > 1e-9 * scale {
            return Err(Error::EndpointMismatch { gap });
        }
        let ta = self.duration();
        let mut points = self.points.clone();
        let mut times = self.times.clone();
        points.extend_from_slice(&b.points[1..]);
        times.extend(b.times[1..].iter().map(|s| s + ta));
        let simple = self.simple && b.simple && {
            let mut seen = std::collections::HashSet::new();
            self.points
                .iter()
                .chain(&b.points[1..])
                .all(|p| seen.insert(p.map(f64::to_bits)))
        };
        Ok(Curve { points, times, simple })
    }

    /// `γ` on `[0, ξ_R ∧ T]`, `ξ_R` the first time with `|γ(t)| >= R`.
    pub fn restrict_to_radius(&self, radius: f64) -> Result<Curve> {
        if !(radius > 0.0) {
            return Err(invalid("R", format!("must be positive, got {radius}")));
        }
        match self.exit_time(radius) {
            Some(t) => self.restrict(0.0, t),
            None => Ok(self.clone()),
        }
    }

    /// First time `t` with `|γ(t)| >= R`, exact on each linear piece.
    pub fn exit_time(&self, radius: f64) -> Option<f64> {
        let r2 = radius * radius;
        if norm_sq(self.points[0]) >= r2 {
            return Some(0.0);
        }
        for k in 0..self.points.len() - 1 {
            let (p, q) = (self.points[k], self.points[k + 1]);
            if norm_sq(q) < r2 {
                // the ball is convex, so the whole segment stays inside
                continue;
            }
            let d = sub(q, p);
            let a = norm_sq(d);
            let b = p[0] * d[0] + p[1] * d[1] + p[2] * d[2];
            let c = norm_sq(p) - r2;
            // positive root of a u^2 + 2 b u + c, with c < 0 <= a + 2b + c
            let disc = (b * b - a * c).max(0.0);
            let u = if b >= 0.0 {
                -c / (b + disc.sqrt())
            } else {
                (disc.sqrt() - b) / a
            };
            let u = u.clamp(0.0, 1.0);
            let (t0, t1) = (self.times[k], self.times[k + 1]);
            return Some(t0 + u * (t1 - t0));
        }
        None
    }

    /// Text form: a header `duration <T> simple <bool>`, then one `t x y z`
    /// line per knot.
    pub fn to_text(&self) -> String {
        let mut s = format!("duration {} simple {}\n", self.duration(), self.simple);
        for (t, p) in self.times.iter().zip(&self.points) {
            writeln!(s, "{} {} {} {}", t, p[0], p[1], p[2]).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Curve> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            reason: "missing header".into(),
        })?;
        let h: Vec<&str> = header.split_whitespace().collect();
        let bad_header = || Error::Parse {
            line: 1,
            reason: "expected `duration <T> simple <bool>`".into(),
        };
        if h.len() != 4 || h[0] != "duration" || h[2] != "simple" {
            return Err(bad_header());
        }
        let duration: f64 = h[1].parse().map_err(|_| bad_header())?;
        let simple: bool = h[3].parse().map_err(|_| bad_header())?;
        let mut points = Vec::new();
        let mut times = Vec::new();
        for (i, line) in lines {
            let v: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
            match v {
                Ok(v) if v.len() == 4 => {
                    times.push(v[0]);
                    points.push([v[1], v[2], v[3]]);
                }
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        reason: "expected four numbers `t x y z`".into(),
                    })
                }
            }
        }
        let c = Curve::new(points, times, simple)?;
        if c.duration() != duration {
            return Err(Error::Parse {
                line: 1,
                reason: format!("header duration {duration} but last knot at {}", c.duration()),
            });
        }
        Ok(c)
    }
}

/// `γ̄(t) = δ γ(δ^{-β} t)`: knots at `i δ^β`, coordinates scaled by `δ`.
pub fn beta_parameterize(path: &LatticePath, delta: f64, beta: f64) -> Result<Curve> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(invalid("delta", format!("must lie in (0, 1], got {delta}")));
    }
    if !(beta > 1.0 && beta < 2.0) {
        return Err(invalid("beta", format!("must lie in (1, 2), got {beta}")));
    }
    let dt = delta.powf(beta);
    Ok(Curve {
        points: path
            .vertices()
            .iter()
            .map(|v| [delta * v.x as f64, delta * v.y as f64, delta * v.z as f64])
            .collect(),
        times: (0..path.vertices().len()).map(|i| i as f64 * dt).collect(),
        simple: path.is_simple(),
    })
}

/// `ψ(a, b) = |T_a - T_b| + max_s |a(s T_a) - b(s T_b)|`, exact.
///
/// In normalized time both curves are linear between consecutive points of
/// the merged breakpoint set, so the distance is convex there and its maximum
/// sits at a breakpoint. A zero-duration curve is its single point.
pub fn psi_distance(a: &Curve, b: &Curve) -> f64 {
    let (ta, tb) = (a.duration(), b.duration());
    let normalized = |c: &Curve, t: f64| -> Vec<f64> {
        if t == 0.0 {
            Vec::new()
        } else {
            c.times.iter().map(|s| s / t).collect()
        }
    };
    let mut grid = normalized(a, ta);
    grid.extend(normalized(b, tb));
    grid.push(0.0);
    grid.push(1.0);
    grid.sort_unstable_by(f64::total_cmp);
    grid.dedup();
    let mut sup = 0.0f64;
    for s in grid {
        let pa = a.eval_unchecked((s * ta).min(ta));
        let pb = b.eval_unchecked((s * tb).min(tb));
        sup = sup.max(dist3(pa, pb));
    }
    (ta - tb).abs() + sup
}

/// Curve whose image is faithful up to its final time, when it first reaches
/// the truncation radius (about the origin).
#[derive(Clone, Debug, PartialEq)]
pub struct TransientCurve {
    curve: Curve,
    truncation_radius: f64,
}

impl TransientCurve {
    /// The final point must be the only knot at or beyond the radius.
    pub fn new(curve: Curve, truncation_radius: f64) -> Result<Self> {
        if !(truncation_radius > 0.0) || !truncation_radius.is_finite() {
            return Err(invalid("truncation_radius", format!("got {truncation_radius}")));
        }
        let r2 = truncation_radius * truncation_radius;
        let n = curve.points.len();
        if norm_sq(curve.end()) < r2 * (1.0 - 1e-12) {
            return Err(Error::MalformedCurve("transient curve ends inside its truncation ball".into()));
        }
        if curve.points[..n - 1].iter().any(|p| norm_sq(*p) >= r2) {
            return Err(Error::MalformedCurve(
                "transient curve reaches its truncation radius before the final knot".into(),
            ));
        }
        Ok(TransientCurve {
            curve,
            truncation_radius,
        })
    }

    pub fn curve(&self) -> &Curve {
        &self.curve
    }

    pub fn truncation_radius(&self) -> f64 {
        self.truncation_radius
    }

    /// Times in `[0, valid_until]` are faithfully represented.
    pub fn valid_until(&self) -> f64 {
        self.curve.duration()
    }
}

/// Truncated `χ` with its certified tail bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChiValue {
    pub value: f64,
    /// Upper bound `2^{-K}` on the omitted terms.
    pub remainder: f64,
}

/// `Σ_{k=1}^K 2^{-k} (1 ∧ max_{t<=k} |a(t) - b(t)|)`, exact over the merged
/// breakpoints.
pub fn chi_distance(a: &TransientCurve, b: &TransientCurve, horizon: u32) -> Result<ChiValue> {
    if horizon == 0 {
        return Err(invalid("horizon", "must be >= 1"));
    }
    let h = horizon as f64;
    for c in [a, b] {
        if h > c.valid_until() {
            return Err(Error::HorizonExceeded {
                horizon: h,
                valid: c.valid_until(),
            });
        }
    }
    let (ca, cb) = (&a.curve, &b.curve);
    let mut grid: Vec<f64> = ca
        .times
        .iter()
        .chain(&cb.times)
        .copied()
        .filter(|&t| t <= h)
        .chain((0..=horizon).map(f64::from))
        .collect();
    grid.sort_unstable_by(f64::total_cmp);
    grid.dedup();
    let mut value = 0.0;
    let mut running = 0.0f64;
    let mut k = 1u32;
    for t in grid {
        running = running.max(dist3(ca.eval_unchecked(t), cb.eval_unchecked(t)));
        // t is a grid point, so every integer k <= horizon appears exactly
        while k <= horizon && t == k as f64 {
            value += 0.5f64.powi(k as i32) * running.min(1.0);
            k += 1;
        }
    }
    Ok(ChiValue {
        value,
        remainder: 0.5f64.powi(horizon as i32),
    })
}

fn ordered_times(a: &Curve, x: f64, y: f64) -> Result<(f64, f64)> {
    a.check_time(x)?;
    a.check_time(y)?;
    Ok(if x <= y { (x, y) } else { (y, x) })
}

/// Euclidean diameter of a finite point set, exact. Skips points whose
/// bounding-box reach cannot beat the current best.
pub fn point_set_diameter(pts: &[Point3]) -> f64 {
    if pts.len() < 2 {
        return 0.0;
    }
    let mut lo = pts[0];
    let mut hi = pts[0];
    for p in pts {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let mut best2 = 0.0f64;
    for (i, p) in pts.iter().enumerate() {
        let far: f64 = (0..3)
            .map(|k| {
                let e = (p[k] - lo[k]).abs().max((hi[k] - p[k]).abs());
                e * e
            })
            .sum();
        if far <= best2 {
            continue;
        }
        for q in &pts[i + 1..] {
            best2 = best2.max(norm_sq(sub(*p, *q)));
        }
    }
    best2.sqrt()
}

/// Schramm distance: diameter of `γ[x, y]`. Symmetric in the two times.
pub fn schramm_metric(a: &Curve, x: f64, y: f64) -> Result<f64> {
    let (s, t) = ordered_times(a, x, y)?;
    if !a.simple {
        return Err(Error::NotSimple);
    }
    let mut pts = vec![a.eval_unchecked(s), a.eval_unchecked(t)];
    pts.extend(a.interior_knots(s, t).map(|k| a.points[k]));
    Ok(point_set_diameter(&pts))
}

/// Intrinsic distance `|y - x|`: the duration of `γ[x, y]`.
pub fn intrinsic_metric(a: &Curve, x: f64, y: f64) -> Result<f64> {
    let (s, t) = ordered_times(a, x, y)?;
    if !a.simple {
        return Err(Error::NotSimple);
    }
    Ok(t - s)
}
