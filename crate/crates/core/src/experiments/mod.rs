//! Monte Carlo pipelines: growth exponent, derived exponents, walk and
//! spectral dimensions, and tail studies.

mod fit;
mod studies;
mod walks;

pub use fit::{fit_power_law, headline_skip, ExponentFit, Resampling};
pub use studies::{
    hittability_study, quasi_loop_study, volume_tail_study, HittabilityConfig, HittabilityStudy, MonotoneCheck,
    QuasiLoopConfig, QuasiLoopStudy, StudyCell, VolumeTailConfig, VolumeTailRow, VolumeTailStudy,
};
pub use walks::{
    estimate_spectral_dimension, estimate_walk_dimension, SentinelRow, SpectralConfig, SpectralStudy, TreeModel,
    WalkDimConfig, WalkDimStudy, MARGIN, REFERENCE_BETA,
};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lerw::{growth_samples, GrowthRow};
use crate::rng::{namespace, RngStream};

/// One raw observation, reproducible from (config, seed, stream).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment: String,
    pub seed: u64,
    pub stream: u64,
    pub n: Option<u64>,
    pub radius: Option<f64>,
    pub lambda: Option<f64>,
    pub epsilon: Option<f64>,
    pub observable: String,
    pub value: f64,
}

impl ExperimentRecord {
    pub fn new(experiment: &str, seed: u64, stream: u64, observable: &str, value: f64) -> Self {
        ExperimentRecord {
            experiment: experiment.into(),
            seed,
            stream,
            n: None,
            radius: None,
            lambda: None,
            epsilon: None,
            observable: observable.into(),
            value,
        }
    }

    pub fn with_n(mut self, n: u64) -> Self {
        self.n = Some(n);
        self
    }

    pub fn with_radius(mut self, r: f64) -> Self {
        self.radius = Some(r);
        self
    }

    pub fn with_lambda(mut self, l: f64) -> Self {
        self.lambda = Some(l);
        self
    }

    pub fn with_epsilon(mut self, e: f64) -> Self {
        self.epsilon = Some(e);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BetaEstimate {
    pub fit: ExponentFit,
    pub rows: Vec<GrowthRow>,
}

/// Slope of `log E ξ_n` against `log n` from independent ILERW samples.
pub fn estimate_beta(radii: &[u32], samples: u32, safety_factor: f64, seed: u64, bootstrap: u32) -> Result<BetaEstimate> {
    if radii.len() < 4 {
        return Err(invalid("radii", format!("need at least 4, got {}", radii.len())));
    }
    if radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("radii", "must be strictly increasing"));
    }
    if radii[radii.len() - 1] < 8 * radii[0] {
        return Err(invalid("radii", "must span at least a factor 8"));
    }
    if samples < 2 {
        return Err(invalid("samples", "need at least 2 per radius"));
    }
    let rows = growth_samples(radii, samples, safety_factor, seed)?;
    let fit = fit_growth(radii, &rows, seed, bootstrap)?;
    Ok(BetaEstimate { fit, rows })
}

/// Refits raw growth rows.
pub fn fit_growth(radii: &[u32], rows: &[GrowthRow], seed: u64, bootstrap: u32) -> Result<ExponentFit> {
    let x: Vec<f64> = radii.iter().map(|&r| r as f64).collect();
    let cols: Vec<Vec<f64>> = radii
        .iter()
        .map(|&r| rows.iter().filter(|g| g.radius == r).map(|g| g.length as f64).collect())
        .collect();
    let mut rng = RngStream::new(seed, namespace::BOOTSTRAP);
    fit_power_law(&x, &cols, headline_skip(x.len()), Resampling::Independent, bootstrap, &mut rng)
}

/// Exponents implied by the growth exponent in dimension `d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedExponents {
    pub dimension: u32,
    pub beta: f64,
    pub d_f: f64,
    pub d_w: f64,
    pub extrinsic_walk: f64,
    pub d_s: f64,
}

fn check_beta(dimension: u32, beta: f64) -> Result<()> {
    if dimension != 2 && dimension != 3 {
        return Err(invalid("dimension", format!("must be 2 or 3, got {dimension}")));
    }
    if !(beta > 1.0 && beta < 2.0) {
        return Err(invalid("beta", format!("must lie in (1, 2), got {beta}")));
    }
    Ok(())
}

pub fn derived_exponents(beta: f64) -> Result<DerivedExponents> {
    derived_exponents_in(3, beta)
}

pub fn derived_exponents_in(dimension: u32, beta: f64) -> Result<DerivedExponents> {
    check_beta(dimension, beta)?;
    let d = dimension as f64;
    let d_f = d / beta;
    let d_w = 1.0 + d_f;
    let extrinsic_walk = beta * d_w;
    let d_s = 2.0 * d_f / d_w;
    let tol = 1e-12;
    if (d_s - 2.0 * d / (d + beta)).abs() > tol || (extrinsic_walk - (d + beta)).abs() > tol {
        return Err(crate::Error::InvalidInstance("exponent identities failed".into()));
    }
    Ok(DerivedExponents {
        dimension,
        beta,
        d_f,
        d_w,
        extrinsic_walk,
        d_s,
    })
}

/// Exact counterpart for rational `β`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExactExponents {
    pub dimension: u32,
    pub beta: Ratio<i64>,
    pub d_f: Ratio<i64>,
    pub d_w: Ratio<i64>,
    pub extrinsic_walk: Ratio<i64>,
    pub d_s: Ratio<i64>,
}

pub fn derived_exponents_exact(dimension: u32, beta: Ratio<i64>) -> Result<ExactExponents> {
    let one = Ratio::from_integer(1);
    if dimension != 2 && dimension != 3 {
        return Err(invalid("dimension", format!("must be 2 or 3, got {dimension}")));
    }
    if beta <= one || beta >= Ratio::from_integer(2) {
        return Err(invalid("beta", format!("must lie in (1, 2), got {beta}")));
    }
    let d = Ratio::from_integer(dimension as i64);
    let d_f = d / beta;
    let d_w = one + d_f;
    let extrinsic_walk = beta * d_w;
    let d_s = Ratio::from_integer(2) * d_f / d_w;
    debug_assert_eq!(extrinsic_walk, d + beta);
    debug_assert_eq!(d_s, Ratio::from_integer(2) * d / (d + beta));
    Ok(ExactExponents {
        dimension,
        beta,
        d_f,
        d_w,
        extrinsic_walk,
        d_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_three_dimensional_column() {
        let e = derived_exponents(1.62).unwrap();
        assert!((e.d_f - 1.85).abs() < 0.01);
        assert!((e.d_w - 2.85).abs() < 0.01);
        assert!((e.extrinsic_walk - 4.62).abs() < 0.01);
        assert!((e.d_s - 1.30).abs() < 0.01);
        assert!(derived_exponents(1.0).is_err());
        assert!(derived_exponents(2.0).is_err());
        assert!(derived_exponents(f64::NAN).is_err());
    }

    #[test]
    fn table_two_dimensional_column_is_exact() {
        let e = derived_exponents_exact(2, Ratio::new(5, 4)).unwrap();
        assert_eq!(e.d_f, Ratio::new(8, 5));
        assert_eq!(e.d_w, Ratio::new(13, 5));
        assert_eq!(e.extrinsic_walk, Ratio::new(13, 4));
        assert_eq!(e.d_s, Ratio::new(16, 13));
        assert!(derived_exponents_exact(3, Ratio::new(5, 2)).is_err());
        assert!(derived_exponents_exact(4, Ratio::new(3, 2)).is_err());
    }

    #[test]
    fn spectral_identity_for_random_beta() {
        let mut rng = RngStream::new(62, 0);
        for _ in 0..1000 {
            let beta = 1.0 + 1e-6 + rng.uniform() * (1.0 - 2e-6);
            let e = derived_exponents(beta).unwrap();
            assert!((e.d_s * (3.0 + beta) - 6.0).abs() < 1e-12);
            let num = 1 + rng.below(999) as i64;
            let b = Ratio::new(1000 + num, 1000);
            let x = derived_exponents_exact(3, b).unwrap();
            assert_eq!(x.d_s * (Ratio::from_integer(3) + b), Ratio::from_integer(6));
        }
    }

    #[test]
    fn beta_input_checks_and_small_run() {
        assert!(estimate_beta(&[8, 16, 32], 10, 8.0, 1, 10).is_err());
        assert!(estimate_beta(&[8, 16, 32, 48], 10, 8.0, 1, 10).is_err());
        assert!(estimate_beta(&[8, 4, 32, 64], 10, 8.0, 1, 10).is_err());
        let b = estimate_beta(&[2, 4, 8, 16], 40, 8.0, 1, 50).unwrap();
        assert_eq!(b.rows.len(), 160);
        assert!(b.fit.slope > 1.0 && b.fit.slope < 2.0, "{:?}", b.fit);
        let again = fit_growth(&[2, 4, 8, 16], &b.rows, 1, 50).unwrap();
        assert_eq!(again, b.fit);
    }
}
