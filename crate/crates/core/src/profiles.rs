//! Dimension estimates from scale-indexed quantities.
//!
//! Every `limsup`/`liminf` as `r ↓ 0` is rendered as a least-squares slope
//! over a finite geometric schedule of scales. Fits with `r² < 0.9` are
//! flagged in the diagnostics, not rejected.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{entropy_number, z_value, EntropyMode, GameSolution, SolverOptions};
use crate::kernel::{support_potentials, KernelOrder, WeightedMeasure};
use crate::pointset::PointCloud;

/// Fits below this `r²` get a diagnostic note.
pub const POOR_FIT_R2: f64 = 0.9;

/// Default μ-weighted quantile standing in for the essential bound.
pub const DEFAULT_QUANTILE: f64 = 0.05;

/// Relative slack when comparing the finest scale with a cloud resolution.
const RESOLUTION_SLACK: f64 = 1e-9;

/// Note attached to every packing-profile claim made from box profiles.
pub const REGULARITY_NOTE: &str = "regularity assumption: the box profile is reported as the packing \
profile; this holds for self-similar sets whose relatively open subsets all share the same profile";

/// Strictly decreasing scales `r_1 > … > r_m`, `m ≥ 4`, consecutive
/// ratios in `[1.2, 10]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleSchedule {
    scales: Vec<f64>,
}

impl ScaleSchedule {
    pub fn new(scales: Vec<f64>) -> Result<Self> {
        if scales.len() < 4 {
            return Err(Error::InvalidSchedule(format!("{} scales, need at least 4", scales.len())));
        }
        if scales.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidSchedule("scales must be positive".into()));
        }
        for w in scales.windows(2) {
            let ratio = w[0] / w[1];
            // tiny slack so that exact geometric schedules at the endpoints pass
            if !(1.2 * (1.0 - 1e-12)..=10.0 * (1.0 + 1e-12)).contains(&ratio) {
                return Err(Error::InvalidSchedule(format!(
                    "consecutive ratio {ratio} outside [1.2, 10] (strictly decreasing required)"
                )));
            }
        }
        Ok(ScaleSchedule { scales })
    }

    /// `base^{-j}` for `j = first..=last`.
    pub fn geometric(base: f64, first: i32, last: i32) -> Result<Self> {
        Self::new((first..=last).map(|j| base.powi(-j)).collect())
    }

    /// Scales `hi, hi/ratio, hi/ratio², …` down to `lo`.
    pub fn spanning(hi: f64, lo: f64, ratio: f64) -> Result<Self> {
        if !(ratio > 1.0) || !(hi > 0.0) || !(lo > 0.0) {
            return Err(Error::InvalidSchedule("need hi, lo > 0 and ratio > 1".into()));
        }
        let mut scales = Vec::new();
        let mut r = hi;
        while r >= lo * (1.0 - RESOLUTION_SLACK) && scales.len() < 10_000 {
            scales.push(r);
            r /= ratio;
        }
        Self::new(scales)
    }

    /// Powers `base^{-j}` lying in `[resolution, diameter/4]`.
    pub fn for_cloud(cloud: &PointCloud, base: f64) -> Result<Self> {
        let hi = cloud.diameter() / 4.0;
        let lo = cloud.resolution();
        let first = (-(hi.ln() / base.ln())).ceil() as i32;
        let last = (-(lo.ln() / base.ln()) + 1e-9).floor() as i32;
        Self::geometric(base, first, last)
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    pub fn finest(&self) -> f64 {
        *self.scales.last().expect("nonempty")
    }

    pub fn coarsest(&self) -> f64 {
        self.scales[0]
    }

    /// Every scale multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.scales.iter().map(|r| r * c).collect())
    }

    fn check_above(&self, resolution: f64) -> Result<()> {
        if self.finest() < resolution * (1.0 - RESOLUTION_SLACK) {
            return Err(Error::InvalidSchedule(format!(
                "finest scale {} is below the cloud resolution {resolution}",
                self.finest()
            )));
        }
        Ok(())
    }
}

/// Ordinary least-squares line through `(x, y)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Standard error of the slope.
    pub stderr: f64,
    pub n_points: usize,
    pub scale_range: (f64, f64),
}

impl SlopeFit {
    pub fn fit(xs: &[f64], ys: &[f64], scale_range: (f64, f64)) -> Result<Self> {
        let n = xs.len();
        if n < 4 || ys.len() != n {
            return Err(Error::InvalidSchedule(format!("a slope fit needs at least 4 points, got {n}")));
        }
        let nf = n as f64;
        let mx = xs.iter().sum::<f64>() / nf;
        let my = ys.iter().sum::<f64>() / nf;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        if !(sxx > 0.0) {
            return Err(Error::InvalidSchedule("slope fit needs distinct abscissae".into()));
        }
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let ss_res: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        // a constant response is fitted perfectly by a flat line
        let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
        let stderr = (ss_res / (nf - 2.0) / sxx).sqrt();
        Ok(SlopeFit {
            slope,
            intercept,
            r_squared,
            stderr,
            n_points: n,
            scale_range,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Box,
    BoxProfile,
    FhProfile,
}

/// One scale of an estimator: the scale and the raw quantity fitted
/// (`N_r`, `Z_s(r)` or the quantile point's potential).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleSample {
    pub scale: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileEstimate {
    pub kind: ProfileKind,
    pub order: Option<KernelOrder>,
    /// Slope clamped to `[0, N]`.
    pub estimate: f64,
    pub fit: SlopeFit,
    pub samples: Vec<ScaleSample>,
    pub diagnostics: Vec<String>,
}

impl ProfileEstimate {
    fn from_fit(
        kind: ProfileKind,
        order: Option<KernelOrder>,
        fit: SlopeFit,
        samples: Vec<ScaleSample>,
        ambient: usize,
    ) -> Self {
        let mut diagnostics = Vec::new();
        let estimate = fit.slope.clamp(0.0, ambient as f64);
        if estimate != fit.slope {
            diagnostics.push(format!("slope {:.4} clamped to [0, {ambient}]", fit.slope));
        }
        if fit.r_squared < POOR_FIT_R2 {
            diagnostics.push(format!("poor fit: r^2 = {:.3}", fit.r_squared));
        }
        ProfileEstimate {
            kind,
            order,
            estimate,
            fit,
            samples,
            diagnostics,
        }
    }
}

fn range(schedule: &ScaleSchedule) -> (f64, f64) {
    (schedule.finest(), schedule.coarsest())
}

/// Upper box dimension: slope of `log N_r` (greedy packing count)
/// against `log(1/r)`.
pub fn box_dimension(cloud: &PointCloud, schedule: &ScaleSchedule) -> Result<ProfileEstimate> {
    schedule.check_above(cloud.resolution())?;
    let counts = schedule
        .scales()
        .iter()
        .map(|&r| entropy_number(cloud, r, EntropyMode::Greedy))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = schedule.scales().iter().map(|r| -r.ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|&n| (n as f64).ln()).collect();
    let fit = SlopeFit::fit(&xs, &ys, range(schedule))?;
    let samples = schedule
        .scales()
        .iter()
        .zip(&counts)
        .map(|(&scale, &n)| ScaleSample { scale, value: n as f64 })
        .collect();
    Ok(ProfileEstimate::from_fit(ProfileKind::Box, None, fit, samples, cloud.dim()))
}

/// Game values at every scale of the schedule, solved concurrently and
/// returned in schedule order.
pub fn game_values(
    cloud: &PointCloud,
    order: KernelOrder,
    schedule: &ScaleSchedule,
    opts: &SolverOptions,
) -> Result<Vec<GameSolution>> {
    schedule
        .scales()
        .par_iter()
        .map(|&r| z_value(cloud, r, order, opts))
        .collect()
}

/// The `s`-dimensional box profile: slope of `log Z_s(r)` against `log r`.
///
/// Aborts if the game fails to converge at any scale.
pub fn box_profile(
    cloud: &PointCloud,
    order: KernelOrder,
    schedule: &ScaleSchedule,
    opts: &SolverOptions,
) -> Result<ProfileEstimate> {
    schedule.check_above(cloud.resolution())?;
    let solutions = game_values(cloud, order, schedule, opts)?;
    for (r, sol) in schedule.scales().iter().zip(&solutions) {
        if !sol.converged {
            return Err(Error::NotConverged {
                scale: *r,
                residual: sol.residual,
                iterations: sol.iterations,
            });
        }
    }
    let xs: Vec<f64> = schedule.scales().iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = solutions.iter().map(|s| s.value.ln()).collect();
    let fit = SlopeFit::fit(&xs, &ys, range(schedule))?;
    let samples = schedule
        .scales()
        .iter()
        .zip(&solutions)
        .map(|(&scale, s)| ScaleSample { scale, value: s.value })
        .collect();
    let mut est = ProfileEstimate::from_fit(ProfileKind::BoxProfile, Some(order), fit, samples, cloud.dim());
    est.diagnostics.push(REGULARITY_NOTE.to_string());
    Ok(est)
}

/// Finite-scale pointwise packing profile `Dim_s μ` of a measure.
///
/// For each atom `x` the slope `t(x)` of `log F_s^μ(x, r)` against
/// `log r` is fitted; the estimate is the μ-weighted lower `quantile` of
/// these slopes, a stand-in for the μ-essential bound.
pub fn fh_profile(
    mu: &WeightedMeasure,
    order: KernelOrder,
    schedule: &ScaleSchedule,
    quantile: f64,
) -> Result<ProfileEstimate> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(crate::error::invalid(format!("quantile {quantile} outside (0, 1)")));
    }
    let mu = mu.pruned()?;
    schedule.check_above(mu.support().resolution())?;
    let per_scale = schedule
        .scales()
        .iter()
        .map(|&r| support_potentials(order, &mu, r))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = schedule.scales().iter().map(|r| r.ln()).collect();
    let k = mu.support().len();
    let fits = (0..k)
        .into_par_iter()
        .map(|i| {
            let ys: Vec<f64> = per_scale.iter().map(|f| f[i].ln()).collect();
            SlopeFit::fit(&xs, &ys, range(schedule))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut ranked: Vec<usize> = (0..k).collect();
    ranked.sort_by(|&a, &b| fits[a].slope.total_cmp(&fits[b].slope).then(a.cmp(&b)));
    let mut acc = 0.0;
    let mut pick = ranked[k - 1];
    for &i in &ranked {
        acc += mu.weights()[i];
        if acc >= quantile {
            pick = i;
            break;
        }
    }
    let fit = fits[pick].clone();
    let samples = schedule
        .scales()
        .iter()
        .zip(&per_scale)
        .map(|(&scale, f)| ScaleSample { scale, value: f[pick] })
        .collect();
    let mut est = ProfileEstimate::from_fit(ProfileKind::FhProfile, Some(order), fit, samples, mu.support().dim());
    let median = fits[ranked[k / 2]].slope;
    est.diagnostics.push(format!(
        "pointwise slopes: min {:.4}, median {median:.4}, max {:.4}; quantile {quantile} at atom {pick}",
        fits[ranked[0]].slope,
        fits[ranked[k - 1]].slope
    ));
    Ok(est)
}

/// `s ↦ B-dim_s` over an ascending grid of orders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileCurve {
    pub estimates: Vec<ProfileEstimate>,
    /// Index pairs `(i, i+1)` where the curve drops by more than twice the
    /// combined slope standard error.
    pub violations: Vec<(usize, usize)>,
}

impl ProfileCurve {
    pub fn is_monotone(&self) -> bool {
        self.violations.is_empty()
    }

    /// Columns `s, estimate, stderr, r2`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["s", "estimate", "stderr", "r2"])?;
        for e in &self.estimates {
            let s = e.order.map_or("box".to_string(), |o| o.to_string());
            w.write_record([
                s,
                format!("{:.16e}", e.estimate),
                format!("{:.16e}", e.fit.stderr),
                format!("{:.16e}", e.fit.r_squared),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Curve drop tolerated between neighbours: twice their combined stderr.
pub fn monotonicity_violations(estimates: &[ProfileEstimate]) -> Vec<(usize, usize)> {
    estimates
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].estimate < w[0].estimate - 2.0 * (w[0].fit.stderr + w[1].fit.stderr))
        .map(|(i, _)| (i, i + 1))
        .collect()
}

pub fn profile_curve(
    cloud: &PointCloud,
    s_grid: &[KernelOrder],
    schedule: &ScaleSchedule,
    opts: &SolverOptions,
) -> Result<ProfileCurve> {
    if s_grid.windows(2).any(|w| w[1].as_f64() <= w[0].as_f64()) {
        return Err(crate::error::invalid("s grid must be strictly ascending"));
    }
    let estimates = s_grid
        .iter()
        .map(|&order| box_profile(cloud, order, schedule, opts))
        .collect::<Result<Vec<_>>>()?;
    let violations = monotonicity_violations(&estimates);
    Ok(ProfileCurve { estimates, violations })
}
