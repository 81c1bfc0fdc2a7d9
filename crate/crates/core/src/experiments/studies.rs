use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use super::fit::{fit_power_law, ExponentFit, Resampling};
use super::walks::{MARGIN, REFERENCE_BETA};
use super::ExperimentRecord;
use crate::error::{first_error, invalid, Checks, Error, Result};
use crate::lattice::{LatticePoint, UNIT_STEPS};
use crate::lerw::{has_quasi_loop, hittability_probe, ilerw};
use crate::rng::{namespace, RngStream};
use crate::stats::{mean, variance, wilson_interval};
use crate::tree::TreeMetricView;
use crate::wilson::LocalUst;

/// z for a one-sided 95% test.
const Z_ONE_SIDED: f64 = 1.644_853_626_951_472;

/// Empirical probability of an event in one parameter cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub scale: f64,
    pub parameter: f64,
    pub count: u64,
    pub trials: u64,
    pub p: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Set when the cell is degenerate and was not run.
    pub skipped: Option<String>,
}

impl StudyCell {
    fn new(scale: f64, parameter: f64, count: u64, trials: u64) -> Self {
        let (ci_low, ci_high) = wilson_interval(count, trials);
        StudyCell {
            scale,
            parameter,
            count,
            trials,
            p: count as f64 / trials as f64,
            ci_low,
            ci_high,
            skipped: None,
        }
    }

    fn skipped(scale: f64, parameter: f64, why: &str) -> Self {
        StudyCell {
            scale,
            parameter,
            count: 0,
            trials: 0,
            p: f64::NAN,
            ci_low: f64::NAN,
            ci_high: f64::NAN,
            skipped: Some(why.into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolumeTailConfig {
    pub half_extent: i64,
    pub radii: Vec<u64>,
    pub lambdas: Vec<f64>,
    pub trees: u64,
    pub d_f: f64,
}

impl Default for VolumeTailConfig {
    fn default() -> Self {
        VolumeTailConfig {
            half_extent: 512,
            radii: vec![16, 32, 64],
            lambdas: vec![1.0, 1.5, 2.0, 3.0, 4.0],
            trees: 200,
            d_f: 3.0 / REFERENCE_BETA,
        }
    }
}

impl VolumeTailConfig {
    /// Every violated precondition.
    pub fn diagnostics(&self) -> Vec<Error> {
        let mut c = Checks::default();
        c.require(
            !self.radii.is_empty() && self.radii[0] > 0 && self.radii.windows(2).all(|w| w[0] < w[1]),
            "radii",
            "must be nonempty, positive and strictly increasing",
        );
        c.require(
            !self.lambdas.is_empty() && self.lambdas[0] >= 1.0 && self.lambdas.windows(2).all(|w| w[0] < w[1]),
            "lambdas",
            "must be nonempty, >= 1 and strictly increasing",
        );
        c.require(self.trees >= 100, "trees", format!("need at least 100 per cell, got {}", self.trees));
        c.require(self.d_f > 0.0 && self.d_f <= 3.0, "d_f", format!("must lie in (0, 3], got {}", self.d_f));
        if let Some(&r) = self.radii.last() {
            let reach = (r as f64 + 1.0).powf(1.0 / REFERENCE_BETA);
            c.require(
                MARGIN * reach <= self.half_extent as f64,
                "half_extent",
                format!("truncation margin violated: half-extent {} < {MARGIN} x reach {reach:.1}", self.half_extent),
            );
        }
        c.finish()
    }

    pub fn validate(&self) -> Result<()> {
        first_error(self.diagnostics())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeTailRow {
    pub radius: u64,
    pub lambda: f64,
    pub trees: u64,
    /// `P(μ(B_U(0, R)) <= R^{d_f} / λ)`
    pub lower: StudyCell,
    /// `P(μ(B_U(0, R)) >= λ R^{d_f})`
    pub upper: StudyCell,
    /// `P(R ∈ J(λ))`
    pub well_behaved: StudyCell,
}

/// One-sided paired test that a tail probability does not increase from
/// `lambda_from` to `lambda_to`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCheck {
    pub radius: u64,
    pub tail: String,
    pub lambda_from: f64,
    pub lambda_to: f64,
    pub diff: f64,
    pub std_err: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VolumeTailStudy {
    pub rows: Vec<VolumeTailRow>,
    pub checks: Vec<MonotoneCheck>,
    /// `(radius, tail, concave)`: second differences of log-probability in λ
    /// are nonpositive wherever defined.
    pub shape: Vec<(u64, String, bool)>,
    pub records: Vec<ExperimentRecord>,
    pub max_reach: f64,
}

fn monotone(radius: u64, tail: &str, lambdas: &[f64], ind: &[Vec<bool>]) -> Vec<MonotoneCheck> {
    (1..lambdas.len())
        .map(|k| {
            let d: Vec<f64> = ind[k].iter().zip(&ind[k - 1]).map(|(&b, &a)| b as u8 as f64 - a as u8 as f64).collect();
            let diff = mean(&d);
            let std_err = (variance(&d) / d.len() as f64).sqrt();
            MonotoneCheck {
                radius,
                tail: tail.into(),
                lambda_from: lambdas[k - 1],
                lambda_to: lambdas[k],
                diff,
                std_err,
                pass: diff <= Z_ONE_SIDED * std_err,
            }
        })
        .collect()
}

fn log_concave(ps: &[f64]) -> bool {
    ps.windows(3)
        .filter(|w| w.iter().all(|p| *p > 0.0))
        .all(|w| w[2].ln() - 2.0 * w[1].ln() + w[0].ln() <= 1e-12)
}

/// Lower and upper volume tails of intrinsic balls about the origin, with
/// the same trees reused across every `(R, λ)` cell.
pub fn volume_tail_study(cfg: &VolumeTailConfig, seed: u64) -> Result<VolumeTailStudy> {
    cfg.validate()?;
    let nr = cfg.radii.len();
    let nl = cfg.lambdas.len();
    let r_max = *cfg.radii.last().unwrap();
    // indicators[r][l][tree]
    let mut lower = vec![vec![Vec::with_capacity(cfg.trees as usize); nl]; nr];
    let mut upper = lower.clone();
    let mut good = lower.clone();
    let mut records = Vec::new();
    let mut max_reach: f64 = 0.0;
    for t in 0..cfg.trees {
        let stream = namespace::VOLUME | t;
        let mut ust = LocalUst::new(cfg.half_extent, RngStream::new(seed, stream))?;
        ust.reveal_intrinsic_ball(LatticePoint::ORIGIN, r_max)?;
        let tree = ust.tree();
        let view = TreeMetricView::new(&tree);
        let root = view.index_of(LatticePoint::ORIGIN).unwrap();
        let reach = view
            .ball(root, r_max + 1)?
            .iter()
            .map(|&(v, _)| tree.vertices()[v].norm())
            .fold(0.0, f64::max);
        if MARGIN * reach > cfg.half_extent as f64 {
            return Err(invalid("half_extent", format!("truncation margin violated: reach {reach:.1}")));
        }
        max_reach = max_reach.max(reach);
        for (i, &r) in cfg.radii.iter().enumerate() {
            let rf = r as f64;
            for (l, &lambda) in cfg.lambdas.iter().enumerate() {
                let c = view.check_well_behaved(root, r, lambda, cfg.d_f)?;
                let scaled = c.volume as f64 / rf.powf(cfg.d_f);
                lower[i][l].push(scaled <= 1.0 / lambda);
                upper[i][l].push(scaled >= lambda);
                good[i][l].push(c.in_j);
                if l == 0 {
                    records.push(ExperimentRecord::new("volume-tails", seed, stream, "ball_volume", c.volume as f64).with_radius(rf));
                    records.push(ExperimentRecord::new("volume-tails", seed, stream, "resistance", c.resistance).with_radius(rf));
                }
            }
        }
    }
    let count = |v: &[bool]| v.iter().filter(|&&b| b).count() as u64;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut shape = Vec::new();
    for (i, &r) in cfg.radii.iter().enumerate() {
        for (l, &lambda) in cfg.lambdas.iter().enumerate() {
            rows.push(VolumeTailRow {
                radius: r,
                lambda,
                trees: cfg.trees,
                lower: StudyCell::new(r as f64, lambda, count(&lower[i][l]), cfg.trees),
                upper: StudyCell::new(r as f64, lambda, count(&upper[i][l]), cfg.trees),
                well_behaved: StudyCell::new(r as f64, lambda, count(&good[i][l]), cfg.trees),
            });
        }
        checks.extend(monotone(r, "lower", &cfg.lambdas, &lower[i]));
        checks.extend(monotone(r, "upper", &cfg.lambdas, &upper[i]));
        for (name, ind) in [("lower", &lower[i]), ("upper", &upper[i])] {
            let ps: Vec<f64> = ind.iter().map(|v| count(v) as f64 / cfg.trees as f64).collect();
            shape.push((r, name.to_string(), log_concave(&ps)));
        }
    }
    Ok(VolumeTailStudy {
        rows,
        checks,
        shape,
        records,
        max_reach,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuasiLoopConfig {
    /// Scales `s = δ^{-1}`.
    pub scales: Vec<u32>,
    pub epsilons: Vec<f64>,
    /// Exponent in the inner radius `ε^M s`.
    pub m: f64,
    /// Paths are cut at their first exit of `B(0, factor × s)`.
    pub path_radius_factor: f64,
    pub samples: u32,
    pub safety_factor: f64,
    pub bootstrap: u32,
}

impl Default for QuasiLoopConfig {
    fn default() -> Self {
        QuasiLoopConfig {
            scales: vec![64],
            epsilons: vec![0.5, 0.35, 0.25, 0.18, 0.125],
            m: 2.0,
            path_radius_factor: 1.0,
            samples: 400,
            safety_factor: 8.0,
            bootstrap: 1000,
        }
    }
}

impl QuasiLoopConfig {
    /// Every violated precondition.
    pub fn diagnostics(&self) -> Vec<Error> {
        let mut c = Checks::default();
        c.require(!self.scales.is_empty() && self.scales.iter().all(|&s| s > 0), "scales", "must be nonempty and positive");
        c.require(
            !self.epsilons.is_empty() && self.epsilons.iter().all(|e| *e > 0.0),
            "epsilons",
            "must be nonempty and positive",
        );
        c.require(self.m >= 1.0, "m", "must be >= 1");
        c.require(self.path_radius_factor >= 1.0, "path_radius_factor", "must be >= 1");
        c.require(self.samples >= 1, "samples", "must be >= 1");
        c.require(self.safety_factor >= 4.0, "safety_factor", "must be >= 4");
        c.finish()
    }

    pub fn validate(&self) -> Result<()> {
        first_error(self.diagnostics())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuasiLoopStudy {
    pub cells: Vec<StudyCell>,
    /// Slope of log P against log ε over the nonzero cells, pooled over
    /// scales.
    pub exponent: ExponentFit,
    /// One-sided 95% test that the exponent is positive.
    pub positive: bool,
    pub records: Vec<ExperimentRecord>,
}

/// `P(QL(ε^M s, √ε s; γ) ≠ ∅)` for ILERW paths `γ` at each scale `s`.
pub fn quasi_loop_study(cfg: &QuasiLoopConfig, seed: u64) -> Result<QuasiLoopStudy> {
    cfg.validate()?;
    let ne = cfg.epsilons.len();
    let mut cells = Vec::new();
    let mut records = Vec::new();
    // pooled indicators per ε (rows: every path at every scale)
    let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); ne];
    let mut active = vec![true; ne];
    for (si, &s) in cfg.scales.iter().enumerate() {
        let sf = s as f64;
        let mut hits = vec![0u64; ne];
        let mut runnable = vec![true; ne];
        for (k, &eps) in cfg.epsilons.iter().enumerate() {
            let (r, big_r) = (eps.powf(cfg.m) * sf, eps.sqrt() * sf);
            if eps >= 1.0 || r >= big_r {
                runnable[k] = false;
                active[k] = false;
            }
        }
        for i in 0..cfg.samples {
            let stream = namespace::QUASI_LOOP | ((si as u64) << 32) | i as u64;
            let mut rng = RngStream::new(seed, stream);
            let path = ilerw(LatticePoint::ORIGIN, cfg.path_radius_factor * sf, cfg.safety_factor, &mut rng)?.path;
            for (k, &eps) in cfg.epsilons.iter().enumerate() {
                if !runnable[k] {
                    continue;
                }
                let q = has_quasi_loop(&path, eps.powf(cfg.m) * sf, eps.sqrt() * sf)?;
                hits[k] += q as u64;
                pooled[k].push(q as u8 as f64);
                records.push(
                    ExperimentRecord::new("quasi-loops", seed, stream, "quasi_loop", q as u8 as f64)
                        .with_radius(sf)
                        .with_epsilon(eps),
                );
            }
        }
        for (k, &eps) in cfg.epsilons.iter().enumerate() {
            cells.push(if runnable[k] {
                StudyCell::new(sf, eps, hits[k], cfg.samples as u64)
            } else {
                StudyCell::skipped(sf, eps, "degenerate parameters: epsilon >= 1 or r >= R")
            });
        }
    }
    let keep: Vec<usize> = (0..ne).filter(|&k| active[k] && pooled[k].iter().any(|&v| v > 0.0)).collect();
    if keep.len() < 2 {
        return Err(Error::DegenerateFit("fewer than two epsilon values with observed quasi-loops".into()));
    }
    let x: Vec<f64> = keep.iter().map(|&k| cfg.epsilons[k]).collect();
    let cols: Vec<Vec<f64>> = keep.iter().map(|&k| pooled[k].clone()).collect();
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let x: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let cols: Vec<Vec<f64>> = order.iter().map(|&i| cols[i].clone()).collect();
    let mut rng = RngStream::new(seed, namespace::BOOTSTRAP);
    let exponent = fit_power_law(&x, &cols, 0, Resampling::Paired, cfg.bootstrap, &mut rng)?;
    Ok(QuasiLoopStudy {
        positive: exponent.lower_95 > 0.0,
        cells,
        exponent,
        records,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HittabilityConfig {
    /// `δ^{-1}` in lattice units.
    pub scale: f64,
    /// Values of `r` in `(0, 1)`.
    pub rs: Vec<f64>,
    pub paths: u32,
    pub trials: u64,
    pub safety_factor: f64,
    pub bootstrap: u32,
}

impl Default for HittabilityConfig {
    fn default() -> Self {
        HittabilityConfig {
            scale: 64.0,
            rs: vec![0.5, 0.25, 0.125, 0.0625],
            paths: 100,
            trials: 200,
            safety_factor: 8.0,
            bootstrap: 1000,
        }
    }
}

impl HittabilityConfig {
    /// Every violated precondition.
    pub fn diagnostics(&self) -> Vec<Error> {
        let mut c = Checks::default();
        c.require(self.scale >= 2.0, "scale", "must be >= 2");
        c.require(
            self.rs.len() >= 2 && self.rs.iter().all(|r| *r > 0.0 && *r < 1.0),
            "rs",
            "need at least two values in (0, 1)",
        );
        c.require(self.rs.iter().all(|r| r * self.scale >= 1.0), "rs", "r * scale must be >= 1 lattice unit");
        c.require(self.paths >= 2, "paths", "need at least two paths");
        c.require(self.trials >= 1, "trials", "must be >= 1");
        c.require(self.safety_factor >= 4.0, "safety_factor", "must be >= 4");
        c.finish()
    }

    pub fn validate(&self) -> Result<()> {
        first_error(self.diagnostics())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HittabilityStudy {
    /// Pooled non-hit probabilities per `r`.
    pub cells: Vec<StudyCell>,
    /// `η̂`: slope of log non-hit probability against log r.
    pub eta: ExponentFit,
    pub positive: bool,
    pub records: Vec<ExperimentRecord>,
}

/// Probability that a walk started at distance `r s` from an ILERW path
/// exits `B(y, √r s)` without hitting it.
pub fn hittability_study(cfg: &HittabilityConfig, seed: u64) -> Result<HittabilityStudy> {
    cfg.validate()?;
    let mut rs = cfg.rs.clone();
    rs.sort_by(f64::total_cmp);
    rs.dedup();
    let mut cols = vec![Vec::with_capacity(cfg.paths as usize); rs.len()];
    let mut misses = vec![0u64; rs.len()];
    let mut records = Vec::new();
    for p in 0..cfg.paths {
        let stream = namespace::HITTABILITY | p as u64;
        let mut rng = RngStream::new(seed, stream);
        let path = ilerw(LatticePoint::ORIGIN, 2.0 * cfg.scale, cfg.safety_factor, &mut rng)?.path;
        let target: FxHashSet<LatticePoint> = path.vertices().iter().copied().collect();
        let x = *path
            .vertices()
            .iter()
            .find(|v| v.norm() >= cfg.scale / 2.0)
            .expect("the path leaves B(0, 2s)");
        for (k, &r) in rs.iter().enumerate() {
            let d = (r * cfg.scale).floor() as i64;
            let y = UNIT_STEPS
                .iter()
                .map(|e| x + LatticePoint::new(e.x * d, e.y * d, e.z * d))
                .find(|y| !target.contains(y))
                .unwrap_or(x + LatticePoint::new(d, 0, 0));
            let est = hittability_probe(&target, y, r, cfg.scale, cfg.trials, &mut rng)?;
            misses[k] += est.misses;
            cols[k].push(est.non_hit);
            records.push(
                ExperimentRecord::new("hittability", seed, stream, "non_hit", est.non_hit)
                    .with_radius(cfg.scale)
                    .with_epsilon(r)
                    .with_n(cfg.trials),
            );
        }
    }
    let total = cfg.paths as u64 * cfg.trials;
    let cells = rs.iter().zip(&misses).map(|(&r, &m)| StudyCell::new(cfg.scale, r, m, total)).collect();
    let mut rng = RngStream::new(seed, namespace::BOOTSTRAP);
    let eta = fit_power_law(&rs, &cols, 0, Resampling::Paired, cfg.bootstrap, &mut rng)?;
    Ok(HittabilityStudy {
        positive: eta.lower_95 > 0.0,
        cells,
        eta,
        records,
    })
}
