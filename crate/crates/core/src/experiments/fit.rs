use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;
use crate::stats::{linear_fit, mean, quantile_sorted};

/// Power-law fit `log(mean y) = intercept + slope log x` over the headline
/// abscissae, with a percentile bootstrap interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub std_err: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// One-sided 95% lower bound (5th bootstrap percentile).
    pub lower_95: f64,
    pub abscissae: Vec<f64>,
    pub sample_sizes: Vec<u64>,
    /// Index of the first abscissa used by the headline fit.
    pub fitted_from: usize,
    /// Slope over every abscissa.
    pub sensitivity_slope: f64,
    /// Slope of the mean of `log y` (diagnostic).
    pub mean_log_slope: f64,
    pub bootstrap_reps: u32,
}

/// How bootstrap resamples are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resampling {
    /// Each abscissa has its own independent samples.
    Independent,
    /// Row `i` of every abscissa comes from the same unit (one tree, one
    /// path); rows are resampled together.
    Paired,
}

fn log_means(x: &[f64], cols: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let mut ly = Vec::with_capacity(cols.len());
    for c in cols {
        let m = mean(c);
        if !(m > 0.0) {
            return Err(Error::DegenerateFit(format!("non-positive mean {m}")));
        }
        ly.push(m.ln());
    }
    Ok((lx, ly))
}

/// Fits the power law, skipping the `skip` smallest abscissae in the
/// headline numbers.
pub fn fit_power_law(
    x: &[f64],
    samples: &[Vec<f64>],
    skip: usize,
    resampling: Resampling,
    reps: u32,
    rng: &mut RngStream,
) -> Result<ExponentFit> {
    if x.len() != samples.len() {
        return Err(Error::SizeMismatch(x.len(), samples.len()));
    }
    if x.len() < skip + 2 {
        return Err(Error::DegenerateFit(format!("{} abscissae leave fewer than two after skipping {skip}", x.len())));
    }
    if x.iter().any(|v| !(*v > 0.0)) {
        return Err(invalid("x", "abscissae must be positive"));
    }
    if samples.iter().any(|c| c.is_empty()) {
        return Err(invalid("samples", "every abscissa needs at least one sample"));
    }
    let rows = samples[0].len();
    if resampling == Resampling::Paired && samples.iter().any(|c| c.len() != rows) {
        return Err(invalid("samples", "paired resampling needs equal sample counts"));
    }
    let (lx, ly) = log_means(x, samples)?;
    let head = linear_fit(&lx[skip..], &ly[skip..])?;
    let sensitivity = linear_fit(&lx, &ly)?.slope;
    let mean_log_slope = if samples.iter().flatten().all(|v| *v > 0.0) {
        let ml: Vec<f64> = samples.iter().map(|c| mean(&c.iter().map(|v| v.ln()).collect::<Vec<_>>())).collect();
        linear_fit(&lx[skip..], &ml[skip..])?.slope
    } else {
        f64::NAN
    };
    let mut slopes = Vec::with_capacity(reps as usize);
    let mut buf: Vec<Vec<f64>> = samples.iter().map(|c| vec![0.0; c.len()]).collect();
    for _ in 0..reps {
        match resampling {
            Resampling::Independent => {
                for (c, b) in samples.iter().zip(buf.iter_mut()) {
                    for slot in b.iter_mut() {
                        *slot = c[rng.below(c.len() as u32) as usize];
                    }
                }
            }
            Resampling::Paired => {
                for i in 0..rows {
                    let j = rng.below(rows as u32) as usize;
                    for (c, b) in samples.iter().zip(buf.iter_mut()) {
                        b[i] = c[j];
                    }
                }
            }
        }
        // resamples with a zero mean have no log and are dropped
        if let Ok((_, ly_b)) = log_means(x, &buf) {
            slopes.push(linear_fit(&lx[skip..], &ly_b[skip..])?.slope);
        }
    }
    let (ci_low, ci_high, lower_95) = if slopes.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        slopes.sort_by(f64::total_cmp);
        (
            quantile_sorted(&slopes, 0.025).min(head.slope),
            quantile_sorted(&slopes, 0.975).max(head.slope),
            quantile_sorted(&slopes, 0.05),
        )
    };
    Ok(ExponentFit {
        slope: head.slope,
        intercept: head.intercept,
        std_err: head.slope_se,
        ci_low,
        ci_high,
        lower_95,
        abscissae: x.to_vec(),
        sample_sizes: samples.iter().map(|c| c.len() as u64).collect(),
        fitted_from: skip,
        sensitivity_slope: sensitivity,
        mean_log_slope,
        bootstrap_reps: reps,
    })
}

/// The headline fit skips the two smallest abscissae while keeping at
/// least three points.
pub fn headline_skip(n: usize) -> usize {
    n.saturating_sub(3).min(2)
}
