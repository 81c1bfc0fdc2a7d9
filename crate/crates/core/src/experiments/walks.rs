use serde::{Deserialize, Serialize};

use super::fit::{fit_power_law, headline_skip, ExponentFit, Resampling};
use super::ExperimentRecord;
use crate::error::{first_error, invalid, Checks, Error, Result};
use crate::lattice::LatticePoint;
use crate::rng::{namespace, RngStream};
use crate::tree::{expected_exit_time, return_counts, srw_exit_times, StopRule, TreeMetricView};
use crate::wilson::{LocalUst, SpanningTree, TreeRoot, NO_PARENT};

/// Required ratio of box half-extent to the Euclidean reach of everything
/// a measurement touches.
pub const MARGIN: f64 = 4.0;
/// Growth exponent used only for a-priori margin checks on intrinsic radii.
pub const REFERENCE_BETA: f64 = 1.624;

/// Tree the walks run on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum TreeModel {
    /// Wired UST of the cube `[-h, h]^3`, revealed around the origin.
    Ust { half_extent: i64 },
    /// The integer line (a long path centred at the origin).
    PathGraph,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentinelRow {
    pub tree: u64,
    pub observable: String,
    pub radius: f64,
    pub base: f64,
    pub sentinel: f64,
}

fn path_graph(half_len: i64) -> SpanningTree {
    let vertices: Vec<LatticePoint> = (-half_len..=half_len).map(|x| LatticePoint::new(x, 0, 0)).collect();
    let parent = (0..vertices.len()).map(|i| if i == 0 { NO_PARENT } else { (i - 1) as u32 }).collect();
    SpanningTree::new(vertices, parent, TreeRoot::Vertex(0)).expect("a path is a tree")
}

fn check_increasing<T: PartialOrd + Copy>(name: &'static str, xs: &[T], positive: impl Fn(T) -> bool) -> Result<()> {
    if xs.is_empty() {
        return Err(invalid(name, "empty"));
    }
    if xs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid(name, "must be strictly increasing"));
    }
    if !positive(xs[0]) {
        return Err(invalid(name, "must be positive"));
    }
    Ok(())
}

fn check_margin(half_extent: i64, reach: f64) -> Result<()> {
    if MARGIN * reach > half_extent as f64 {
        return Err(invalid(
            "half_extent",
            format!("truncation margin violated: half-extent {half_extent} < {MARGIN} x reach {reach:.1}"),
        ));
    }
    Ok(())
}

fn sentinel_period(fraction: f64) -> Option<u64> {
    (fraction > 0.0).then(|| (1.0 / fraction).round().max(1.0) as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkDimConfig {
    pub model: TreeModel,
    pub intrinsic_radii: Vec<u64>,
    pub extrinsic_radii: Vec<f64>,
    pub trees: u64,
    /// Monte Carlo walkers for a cross-check at the smallest radii (0: off).
    pub walkers: u64,
    pub bootstrap: u32,
    /// Share of trees re-run in a box twice as large.
    pub sentinel_fraction: f64,
}

impl Default for WalkDimConfig {
    fn default() -> Self {
        WalkDimConfig {
            model: TreeModel::Ust { half_extent: 1024 },
            intrinsic_radii: vec![16, 32, 64, 128, 256, 512],
            extrinsic_radii: vec![16.0, 24.0, 32.0, 48.0, 64.0, 96.0, 128.0],
            trees: 60,
            walkers: 0,
            bootstrap: 1000,
            sentinel_fraction: 0.05,
        }
    }
}

impl WalkDimConfig {
    /// Every violated precondition.
    pub fn diagnostics(&self) -> Vec<Error> {
        let mut c = Checks::default();
        c.result(check_increasing("intrinsic_radii", &self.intrinsic_radii, |r| r >= 1));
        c.result(check_increasing("extrinsic_radii", &self.extrinsic_radii, |r| r > 0.0));
        c.require(self.intrinsic_radii.len() >= 3, "intrinsic_radii", "need at least three radii");
        c.require(self.extrinsic_radii.len() >= 3, "extrinsic_radii", "need at least three radii");
        c.require(self.trees >= 1, "trees", "must be >= 1");
        c.require((0.0..=1.0).contains(&self.sentinel_fraction), "sentinel_fraction", "must lie in [0, 1]");
        if let (TreeModel::Ust { half_extent }, Some(&r), Some(&e)) =
            (self.model, self.intrinsic_radii.last(), self.extrinsic_radii.last())
        {
            c.result(check_margin(half_extent, (r as f64).powf(1.0 / REFERENCE_BETA).max(e + 1.0)));
        }
        c.finish()
    }

    pub fn validate(&self) -> Result<()> {
        first_error(self.diagnostics())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WalkDimStudy {
    pub intrinsic: ExponentFit,
    pub extrinsic: ExponentFit,
    pub records: Vec<ExperimentRecord>,
    pub sentinel: Vec<SentinelRow>,
    pub max_reach: f64,
}

struct TreeExits {
    intrinsic: Vec<f64>,
    extrinsic: Vec<f64>,
    reach: f64,
    revealed: usize,
    mc: Option<(f64, f64)>,
}

fn exits_on(view: &TreeMetricView, root: usize, cfg: &WalkDimConfig, walk_rng: Option<&mut RngStream>) -> Result<(Vec<f64>, Vec<f64>, Option<(f64, f64)>)> {
    let intrinsic = cfg
        .intrinsic_radii
        .iter()
        .map(|&r| expected_exit_time(view, root, StopRule::IntrinsicExit(r)))
        .collect::<Result<Vec<_>>>()?;
    let extrinsic = cfg
        .extrinsic_radii
        .iter()
        .map(|&r| expected_exit_time(view, root, StopRule::EuclideanExit(r)))
        .collect::<Result<Vec<_>>>()?;
    let mc = match walk_rng {
        Some(rng) if cfg.walkers > 0 => {
            let mean = |v: Vec<u64>| v.iter().sum::<u64>() as f64 / v.len() as f64;
            let a = srw_exit_times(view, root, StopRule::IntrinsicExit(cfg.intrinsic_radii[0]), cfg.walkers, rng)?;
            let b = srw_exit_times(view, root, StopRule::EuclideanExit(cfg.extrinsic_radii[0]), cfg.walkers, rng)?;
            Some((mean(a), mean(b)))
        }
        _ => None,
    };
    Ok((intrinsic, extrinsic, mc))
}

fn measure_tree(cfg: &WalkDimConfig, half_extent: Option<i64>, seed: u64, t: u64) -> Result<TreeExits> {
    let r_max = *cfg.intrinsic_radii.last().unwrap();
    let e_max = *cfg.extrinsic_radii.last().unwrap();
    let mut walk_rng = RngStream::new(seed, namespace::TREE_WALK | t);
    match (cfg.model, half_extent) {
        (TreeModel::PathGraph, _) => {
            let half = (r_max as i64).max(e_max.ceil() as i64) + 2;
            let tree = path_graph(half);
            let view = TreeMetricView::new(&tree);
            let root = view.index_of(LatticePoint::ORIGIN).unwrap();
            let (intrinsic, extrinsic, mc) = exits_on(&view, root, cfg, Some(&mut walk_rng))?;
            Ok(TreeExits {
                intrinsic,
                extrinsic,
                reach: half as f64,
                revealed: tree.len(),
                mc,
            })
        }
        (TreeModel::Ust { .. }, Some(h)) => {
            let mut ust = LocalUst::new(h, RngStream::new(seed, namespace::UST | t))?;
            ust.reveal_intrinsic_ball(LatticePoint::ORIGIN, r_max)?;
            ust.reveal_euclidean_component(LatticePoint::ORIGIN, e_max)?;
            let tree = ust.tree();
            let view = TreeMetricView::new(&tree);
            let root = view.index_of(LatticePoint::ORIGIN).unwrap();
            let reach = view
                .ball(root, r_max + 1)?
                .iter()
                .map(|&(v, _)| tree.vertices()[v].norm())
                .fold(e_max + 1.0, f64::max);
            let (intrinsic, extrinsic, mc) = exits_on(&view, root, cfg, Some(&mut walk_rng))?;
            Ok(TreeExits {
                intrinsic,
                extrinsic,
                reach,
                revealed: tree.len(),
                mc,
            })
        }
        (TreeModel::Ust { .. }, None) => unreachable!(),
    }
}

/// Exact quenched mean exit times `E_0 τ` over intrinsic and Euclidean
/// balls, averaged over independent trees, and their power-law slopes.
pub fn estimate_walk_dimension(cfg: &WalkDimConfig, seed: u64) -> Result<WalkDimStudy> {
    cfg.validate()?;
    let h = match cfg.model {
        TreeModel::Ust { half_extent } => Some(half_extent),
        TreeModel::PathGraph => None,
    };
    let mut int_cols = vec![Vec::new(); cfg.intrinsic_radii.len()];
    let mut ext_cols = vec![Vec::new(); cfg.extrinsic_radii.len()];
    let mut records = Vec::new();
    let mut sentinel = Vec::new();
    let mut max_reach: f64 = 0.0;
    let period = sentinel_period(cfg.sentinel_fraction);
    for t in 0..cfg.trees {
        let stream = namespace::UST | t;
        let m = measure_tree(cfg, h, seed, t)?;
        if let Some(h) = h {
            check_margin(h, m.reach)?;
        }
        max_reach = max_reach.max(m.reach);
        for (i, &r) in cfg.intrinsic_radii.iter().enumerate() {
            int_cols[i].push(m.intrinsic[i]);
            records.push(ExperimentRecord::new("walk-dim", seed, stream, "intrinsic_exit_time", m.intrinsic[i]).with_radius(r as f64));
        }
        for (i, &r) in cfg.extrinsic_radii.iter().enumerate() {
            ext_cols[i].push(m.extrinsic[i]);
            records.push(ExperimentRecord::new("walk-dim", seed, stream, "extrinsic_exit_time", m.extrinsic[i]).with_radius(r));
        }
        records.push(ExperimentRecord::new("walk-dim", seed, stream, "revealed_vertices", m.revealed as f64));
        records.push(ExperimentRecord::new("walk-dim", seed, stream, "reach", m.reach));
        if let Some((a, b)) = m.mc {
            records.push(
                ExperimentRecord::new("walk-dim", seed, namespace::TREE_WALK | t, "mc_intrinsic_exit_time", a)
                    .with_radius(cfg.intrinsic_radii[0] as f64)
                    .with_n(cfg.walkers),
            );
            records.push(
                ExperimentRecord::new("walk-dim", seed, namespace::TREE_WALK | t, "mc_extrinsic_exit_time", b)
                    .with_radius(cfg.extrinsic_radii[0])
                    .with_n(cfg.walkers),
            );
        }
        if let (Some(h), Some(p)) = (h, period) {
            if t % p == 0 {
                let s = measure_tree(cfg, Some(2 * h), seed, t)?;
                for (i, &r) in cfg.intrinsic_radii.iter().enumerate() {
                    sentinel.push(SentinelRow {
                        tree: t,
                        observable: "intrinsic_exit_time".into(),
                        radius: r as f64,
                        base: m.intrinsic[i],
                        sentinel: s.intrinsic[i],
                    });
                }
                for (i, &r) in cfg.extrinsic_radii.iter().enumerate() {
                    sentinel.push(SentinelRow {
                        tree: t,
                        observable: "extrinsic_exit_time".into(),
                        radius: r,
                        base: m.extrinsic[i],
                        sentinel: s.extrinsic[i],
                    });
                }
            }
        }
    }
    let mut rng = RngStream::new(seed, namespace::BOOTSTRAP);
    let xi: Vec<f64> = cfg.intrinsic_radii.iter().map(|&r| r as f64).collect();
    let intrinsic = fit_power_law(&xi, &int_cols, headline_skip(xi.len()), Resampling::Paired, cfg.bootstrap, &mut rng)?;
    let extrinsic = fit_power_law(
        &cfg.extrinsic_radii,
        &ext_cols,
        headline_skip(cfg.extrinsic_radii.len()),
        Resampling::Paired,
        cfg.bootstrap,
        &mut rng,
    )?;
    Ok(WalkDimStudy {
        intrinsic,
        extrinsic,
        records,
        sentinel,
        max_reach,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    pub model: TreeModel,
    /// Even times `2n`.
    pub times: Vec<u64>,
    pub walkers: u64,
    pub trees: u64,
    pub bootstrap: u32,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            model: TreeModel::Ust { half_extent: 1024 },
            times: vec![64, 128, 256, 512, 1024, 2048, 4096],
            walkers: 10_000,
            trees: 100,
            bootstrap: 1000,
        }
    }
}

impl SpectralConfig {
    /// Every violated precondition.
    pub fn diagnostics(&self) -> Vec<Error> {
        let mut c = Checks::default();
        c.result(check_increasing("times", &self.times, |t| t >= 2));
        c.require(self.times.iter().all(|t| t % 2 == 0), "times", "must be even");
        c.require(self.times.len() >= 3, "times", "need at least three times");
        if let (Some(&lo), Some(&hi)) = (self.times.first(), self.times.last()) {
            c.require(hi >= 16 * lo, "times", "must span at least a factor 16");
            if let TreeModel::Ust { half_extent } = self.model {
                // a walk of length T stays within intrinsic distance T
                c.result(check_margin(half_extent, (hi as f64 / 2.0).powf(1.0 / REFERENCE_BETA).max(1.0)));
            }
        }
        c.require(self.walkers >= 1, "walkers", "must be >= 1");
        c.require(self.trees >= 1, "trees", "must be >= 1");
        c.finish()
    }

    pub fn validate(&self) -> Result<()> {
        first_error(self.diagnostics())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralStudy {
    /// Fit of `p̂_{2n}(0, 0)` against `2n`.
    pub fit: ExponentFit,
    pub d_s: f64,
    pub d_s_ci: (f64, f64),
    pub records: Vec<ExperimentRecord>,
    pub max_reach: f64,
}

/// Monte Carlo on-diagonal return probabilities at the origin, pooled over
/// trees; `d_s = -2 × slope`.
pub fn estimate_spectral_dimension(cfg: &SpectralConfig, seed: u64) -> Result<SpectralStudy> {
    cfg.validate()?;
    let t_max = *cfg.times.last().unwrap();
    let mut cols = vec![Vec::new(); cfg.times.len()];
    let mut records = Vec::new();
    let mut max_reach: f64 = 0.0;
    let line = matches!(cfg.model, TreeModel::PathGraph).then(|| path_graph(t_max as i64 + 1));
    for t in 0..cfg.trees {
        let stream = namespace::UST | t;
        let mut rng = RngStream::new(seed, namespace::TREE_WALK | t);
        let (counts, reach) = match cfg.model {
            TreeModel::PathGraph => {
                let tree = line.as_ref().unwrap();
                let mut view = TreeMetricView::new(tree);
                let o = view.index_of(LatticePoint::ORIGIN).unwrap() as u32;
                let mut far = 0u32;
                let c = return_counts(&mut view, o, t_max, cfg.walkers, &mut rng, |u| far = far.max(u.abs_diff(o)))?;
                (c, far as f64)
            }
            TreeModel::Ust { half_extent } => {
                let mut ust = LocalUst::new(half_extent, RngStream::new(seed, stream))?;
                let o = ust.reveal(LatticePoint::ORIGIN)?;
                let c = return_counts(&mut ust, o, t_max, cfg.walkers, &mut rng, |_| ())?;
                let reach = ust.expanded_reach() + 1.0;
                check_margin(half_extent, reach)?;
                records.push(ExperimentRecord::new("spectral-dim", seed, stream, "revealed_vertices", ust.revealed() as f64));
                (c, reach)
            }
        };
        max_reach = max_reach.max(reach);
        records.push(ExperimentRecord::new("spectral-dim", seed, stream, "reach", reach));
        for (i, &time) in cfg.times.iter().enumerate() {
            let p = counts[(time / 2) as usize] as f64 / cfg.walkers as f64;
            cols[i].push(p);
            records.push(ExperimentRecord::new("spectral-dim", seed, stream, "return_probability", p).with_n(time));
        }
    }
    for (i, c) in cols.iter().enumerate() {
        if c.iter().all(|p| *p == 0.0) {
            return Err(Error::ZeroReturns(cfg.times[i]));
        }
    }
    let x: Vec<f64> = cfg.times.iter().map(|&t| t as f64).collect();
    let mut rng = RngStream::new(seed, namespace::BOOTSTRAP);
    let fit = fit_power_law(&x, &cols, headline_skip(x.len()), Resampling::Paired, cfg.bootstrap, &mut rng)?;
    Ok(SpectralStudy {
        d_s: -2.0 * fit.slope,
        d_s_ci: (-2.0 * fit.ci_high, -2.0 * fit.ci_low),
        fit,
        records,
        max_reach,
    })
}
