//! Post-measurement analysis: power-law fits of volume against dataset
//! size, radii histograms and summaries, and cross-landscape volume
//! matrices.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{NetworkSpec, ParameterVector};
use crate::volume::{volume_of_network_minimum, McConfig, VolumeEstimate};

/// Result of fitting log V = slope * ln D + intercept by ordinary least
/// squares; alpha is the slope normalized by the parameter count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingFit {
    pub alpha: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_params: usize,
    /// (dataset size, log volume) pairs that entered the fit.
    pub points: Vec<(f64, f64)>,
    /// Collapsed (-inf) estimates excluded from the fit.
    pub excluded_collapsed: usize,
}

/// Ordinary least squares of log volume on ln(dataset size). Points with
/// non-finite log volume (collapsed estimates) are excluded but counted.
pub fn fit_power_law(points: &[(f64, f64)], n_params: usize) -> Result<ScalingFit> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(d, v)| *d > 0.0 && v.is_finite())
        .copied()
        .collect();
    let excluded = points.len() - usable.len();
    if usable.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 usable points, have {}",
            usable.len()
        )));
    }
    let xs: Vec<f64> = usable.iter().map(|(d, _)| d.ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|(_, v)| *v).collect();
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument(
            "all dataset sizes are equal; slope is undefined".into(),
        ));
    }
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - y_mean) * (y - y_mean)).sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(ScalingFit {
        alpha: slope / n_params as f64,
        slope,
        intercept,
        r_squared,
        n_params,
        points: usable,
        excluded_collapsed: excluded,
    })
}

/// One histogram bin: [lo, hi) except the last bin, which is closed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Censored samples landing in this bin (they sit at c_max).
    pub censored: usize,
}

/// Equal-width histogram of the per-direction radii over [0, max radius].
/// Censored radii are binned at their cap value and tallied separately.
pub fn radii_histogram(estimate: &VolumeEstimate, bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be >= 1".into()));
    }
    if estimate.radii.is_empty() {
        return Err(Error::InvalidArgument("no radii to bin".into()));
    }
    let max = estimate
        .radii
        .iter()
        .map(|r| r.radius)
        .fold(0.0f64, f64::max);
    let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lo: i as f64 * width,
            hi: (i + 1) as f64 * width,
            count: 0,
            censored: 0,
        })
        .collect();
    for r in &estimate.radii {
        let idx = ((r.radius / width) as usize).min(bins - 1);
        if r.censored {
            out[idx].censored += 1;
        } else {
            out[idx].count += 1;
        }
    }
    Ok(out)
}

/// Min / max / mean / median of the radii, censored samples included at
/// their cap value and flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiiSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    pub censored: usize,
    pub all_censored: bool,
}

pub fn summarize_radii(estimate: &VolumeEstimate) -> Result<RadiiSummary> {
    if estimate.radii.is_empty() {
        return Err(Error::InvalidArgument("no radii to summarize".into()));
    }
    let mut values = estimate.radius_values();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = values.len();
    let median = if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    };
    let censored = estimate.radii.iter().filter(|r| r.censored).count();
    Ok(RadiiSummary {
        min: values[0],
        max: values[k - 1],
        mean: values.iter().sum::<f64>() / k as f64,
        median,
        censored,
        all_censored: censored == k,
    })
}

/// Volumes of each model in each landscape; rows are models, columns are
/// landscapes. Collapsed cells are the ones whose anchor loss already
/// exceeds the threshold on that landscape.
#[derive(Debug, Clone)]
pub struct CrossLandscapeMatrix {
    pub model_labels: Vec<String>,
    pub landscape_ids: Vec<String>,
    pub cells: Vec<Vec<VolumeEstimate>>,
}

impl CrossLandscapeMatrix {
    pub fn cell(&self, model: usize, landscape: usize) -> &VolumeEstimate {
        &self.cells[model][landscape]
    }
}

/// Measure every (model, landscape) pair. All models must share the
/// network spec used for measurement.
pub fn cross_landscape_matrix(
    spec: &NetworkSpec,
    models: &[(String, ParameterVector)],
    landscapes: &[&Dataset],
    mc: &McConfig,
) -> Result<CrossLandscapeMatrix> {
    let expected = spec.param_count();
    for (label, params) in models {
        if params.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "model \"{label}\" has {} params, spec expects {expected}",
                params.len()
            )));
        }
    }
    let mut cells = Vec::with_capacity(models.len());
    for (_, params) in models {
        let mut row = Vec::with_capacity(landscapes.len());
        for landscape in landscapes {
            row.push(volume_of_network_minimum(spec, params, landscape, mc)?);
        }
        cells.push(row);
    }
    Ok(CrossLandscapeMatrix {
        model_labels: models.iter().map(|(l, _)| l.clone()).collect(),
        landscape_ids: landscapes.iter().map(|d| d.meta.id.clone()).collect(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::RadiusSample;

    fn fake_estimate(radii: &[(f64, bool)]) -> VolumeEstimate {
        VolumeEstimate {
            n_params: 2,
            threshold: 0.1,
            k: radii.len(),
            radii: radii
                .iter()
                .enumerate()
                .map(|(i, &(radius, censored))| RadiusSample {
                    direction_index: i,
                    radius,
                    censored,
                    crossing_step: if censored { None } else { Some(1) },
                    scan_points: 2,
                })
                .collect(),
            log_volume: 0.0,
            landscape_dataset_id: "test".into(),
            c_max: 50.0,
        }
    }

    #[test]
    fn power_law_recovers_exact_line() {
        // log V = n * (-0.2 ln D + 3) with n = 50
        let n = 50usize;
        let points: Vec<(f64, f64)> = [10.0, 100.0, 1000.0, 10000.0]
            .iter()
            .map(|&d: &f64| (d, n as f64 * (-0.2 * d.ln() + 3.0)))
            .collect();
        let fit = fit_power_law(&points, n).unwrap();
        assert!((fit.alpha + 0.2).abs() < 1e-12, "alpha {}", fit.alpha);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!((fit.intercept - n as f64 * 3.0).abs() < 1e-9);
        assert_eq!(fit.excluded_collapsed, 0);
    }

    #[test]
    fn power_law_excludes_collapsed_and_checks_preconditions() {
        let points = vec![
            (10.0, -5.0),
            (100.0, -10.0),
            (1000.0, f64::NEG_INFINITY),
        ];
        let fit = fit_power_law(&points, 1).unwrap();
        assert_eq!(fit.excluded_collapsed, 1);
        assert_eq!(fit.points.len(), 2);

        assert!(fit_power_law(&[(10.0, 1.0)], 1).is_err());
        assert!(fit_power_law(&[(10.0, 1.0), (10.0, 2.0)], 1).is_err());
    }

    #[test]
    fn power_law_alpha_invariant_to_volume_rescale() {
        let points: Vec<(f64, f64)> = vec![(10.0, -4.0), (100.0, -6.5), (1000.0, -8.2)];
        let shifted: Vec<(f64, f64)> = points.iter().map(|(d, v)| (*d, v + 42.0)).collect();
        let a = fit_power_law(&points, 7).unwrap();
        let b = fit_power_law(&shifted, 7).unwrap();
        assert!((a.alpha - b.alpha).abs() < 1e-12);
        assert!((b.intercept - a.intercept - 42.0).abs() < 1e-9);
    }

    #[test]
    fn histogram_conserves_counts() {
        let est = fake_estimate(&[(0.5, false), (1.0, false), (2.0, false), (50.0, true)]);
        let bins = radii_histogram(&est, 10).unwrap();
        let total: usize = bins.iter().map(|b| b.count + b.censored).sum();
        assert_eq!(total, 4);
        let censored: usize = bins.iter().map(|b| b.censored).sum();
        assert_eq!(censored, 1);
        // censored sample sits in the last bin (at the cap = max radius)
        assert_eq!(bins.last().unwrap().censored, 1);
    }

    #[test]
    fn histogram_single_bin_when_all_equal() {
        let est = fake_estimate(&[(1.5, false), (1.5, false), (1.5, false)]);
        let bins = radii_histogram(&est, 8).unwrap();
        let occupied: Vec<_> = bins.iter().filter(|b| b.count > 0).collect();
        assert_eq!(occupied.len(), 1);
        assert_eq!(occupied[0].count, 3);
    }

    #[test]
    fn summary_order_statistics() {
        let est = fake_estimate(&[(1.0, false), (2.0, false), (3.0, false)]);
        let s = summarize_radii(&est).unwrap();
        assert_eq!(s.min, 1.0);
        assert_eq!(s.max, 3.0);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.median, 2.0);
        assert!(!s.all_censored);
        assert!(s.min <= s.median && s.min <= s.mean && s.mean <= s.max);

        let single = summarize_radii(&fake_estimate(&[(0.7, false)])).unwrap();
        assert_eq!(single.min, 0.7);
        assert_eq!(single.max, 0.7);
        assert_eq!(single.mean, 0.7);
        assert_eq!(single.median, 0.7);

        let capped = summarize_radii(&fake_estimate(&[(50.0, true), (50.0, true)])).unwrap();
        assert!(capped.all_censored);
        assert_eq!(capped.min, 50.0);
        assert_eq!(capped.max, 50.0);
        assert_eq!(capped.median, 50.0);
    }
}
