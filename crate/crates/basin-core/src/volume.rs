//! Monte Carlo star-convex basin volume estimation.
//!
//! The basin around a trained point is the region of parameter space where
//! the landscape loss stays below a threshold. Along each of K random
//! filter-normalized directions we find the first crossing radius r_i, and
//! the star-convex volume estimate is
//!
//! ```text
//! log V = log V_ball(n) - log K + logsumexp_i(n * log r_i)
//! ```
//!
//! i.e. the unit-ball volume times the sample mean of r^n, computed entirely
//! in the log domain so it stays finite for n up to millions of parameters.
//!
//! A direction is an isotropic unit vector (normalized standard-normal
//! draws) multiplied element-wise by the per-group filter norms of the
//! anchor. Normalizing the raw Gaussian keeps the radii in Euclidean units
//! at unit filter norms, which is what makes the estimate agree with the
//! analytic toy-basin area and makes the radius multiset exactly invariant
//! under layer rescaling. Sampling is counter-based and keyed by
//! (master seed, direction index, parameter index), so direction i is the
//! same regardless of how many directions a run uses.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, Layout, NetworkSpec, ParameterVector};
use crate::rng::{derive_key, normal_at};

const TAG_DIRECTION: u64 = 0x4449;

/// A loss landscape the estimator can probe: a loss over flat parameter
/// vectors plus the filter-norm structure of that space.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    /// Loss at a parameter point. May return non-finite values; the radius
    /// search treats those as above any threshold.
    fn loss(&self, params: &[f64]) -> f64;

    /// Per-index filter norms at the anchor: each index carries the
    /// Euclidean norm of its parameter group.
    fn filter_norms(&self, anchor: &[f64]) -> Vec<f64>;

    /// Identifier of the landscape (dataset id) for result bookkeeping.
    fn landscape_id(&self) -> String;
}

/// An MLP loss landscape over a fixed dataset.
pub struct NetworkObjective<'a> {
    spec: &'a NetworkSpec,
    dataset: &'a Dataset,
    layout: Layout,
}

impl<'a> NetworkObjective<'a> {
    pub fn new(spec: &'a NetworkSpec, dataset: &'a Dataset) -> Result<Self> {
        spec.validate()?;
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if dataset.feature_dim() != spec.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "dataset width {} != spec input_dim {}",
                dataset.feature_dim(),
                spec.input_dim
            )));
        }
        Ok(NetworkObjective {
            spec,
            dataset,
            layout: spec.layout(),
        })
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }
}

impl Objective for NetworkObjective<'_> {
    fn dim(&self) -> usize {
        self.layout.len
    }

    fn loss(&self, params: &[f64]) -> f64 {
        match nn::loss_mean_flat(self.spec, &self.layout, params, self.dataset) {
            Ok(l) => l,
            Err(_) => f64::INFINITY,
        }
    }

    fn filter_norms(&self, anchor: &[f64]) -> Vec<f64> {
        let pv = ParameterVector::from_values(self.layout.clone(), anchor.to_vec())
            .expect("anchor length matches layout");
        nn::filter_norms(&pv).values
    }

    fn landscape_id(&self) -> String {
        self.dataset.meta.id.clone()
    }
}

/// One sampled perturbation direction.
#[derive(Debug, Clone)]
pub struct Direction {
    pub index: usize,
    /// Isotropic unit vector (standard-normal draws, normalized).
    pub raw: Vec<f64>,
    /// raw[j] * F[j]: the vector the radius search actually walks along.
    pub scaled: Vec<f64>,
    pub seed: u64,
}

/// Outcome of the radius search along one direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusSample {
    pub direction_index: usize,
    /// Value of the scan coefficient c at the first threshold crossing
    /// (0 when the anchor is already above threshold; c_max when censored).
    pub radius: f64,
    pub censored: bool,
    /// 1-based scan step containing the first crossing; 0 means the anchor
    /// itself was above threshold; None when censored.
    pub crossing_step: Option<usize>,
    /// Loss evaluations spent on this direction.
    pub scan_points: usize,
}

/// Monte Carlo measurement settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    /// Number of random directions K.
    pub directions: usize,
    pub threshold: f64,
    /// Radius search cap, in units of the scaled direction.
    pub c_max: f64,
    pub scan_steps: usize,
    pub bisect_iters: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            directions: 500,
            threshold: 0.1,
            c_max: 50.0,
            scan_steps: 100,
            bisect_iters: 20,
            seed: 0,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.directions == 0 {
            return Err(Error::InvalidArgument("need at least one direction".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::InvalidArgument("threshold must be > 0".into()));
        }
        if self.scan_steps < 2 {
            return Err(Error::InvalidArgument("scan_steps must be >= 2".into()));
        }
        if !(self.c_max > 0.0) {
            return Err(Error::InvalidArgument("c_max must be > 0".into()));
        }
        Ok(())
    }
}

/// A full volume measurement: per-direction radii plus the log-domain
/// aggregate. `log_volume` is -inf when every radius collapsed to zero.
#[derive(Debug, Clone)]
pub struct VolumeEstimate {
    pub n_params: usize,
    pub threshold: f64,
    pub k: usize,
    pub radii: Vec<RadiusSample>,
    pub log_volume: f64,
    pub landscape_dataset_id: String,
    pub c_max: f64,
}

impl VolumeEstimate {
    pub fn collapsed(&self) -> bool {
        self.log_volume == f64::NEG_INFINITY
    }

    pub fn censored_fraction(&self) -> f64 {
        self.radii.iter().filter(|r| r.censored).count() as f64 / self.k as f64
    }

    pub fn radius_values(&self) -> Vec<f64> {
        self.radii.iter().map(|r| r.radius).collect()
    }
}

/// Sample direction `index` of the stream `master_seed`: i.i.d. standard
/// normals per coordinate, normalized to a unit vector, then multiplied by
/// the anchor's filter norms. Zero-norm groups get zero entries, so dead
/// parameters are never moved.
pub fn sample_direction<O: Objective + ?Sized>(
    obj: &O,
    anchor: &[f64],
    master_seed: u64,
    index: usize,
) -> Direction {
    let filter = obj.filter_norms(anchor);
    sample_direction_with_norms(&filter, master_seed, index)
}

/// As [`sample_direction`] with precomputed filter norms (one volume
/// measurement reuses the same norms for all K directions).
pub fn sample_direction_with_norms(
    filter_norms: &[f64],
    master_seed: u64,
    index: usize,
) -> Direction {
    let n = filter_norms.len();
    let key = derive_key(derive_key(master_seed, TAG_DIRECTION), index as u64);
    let mut raw: Vec<f64> = (0..n).map(|j| normal_at(key, j as u64)).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut raw {
            *v /= norm;
        }
    }
    let scaled: Vec<f64> = raw.iter().zip(filter_norms).map(|(r, f)| r * f).collect();
    Direction {
        index,
        raw,
        scaled,
        seed: master_seed,
    }
}

/// Loss at anchor + c * direction. Non-finite losses are reported as +inf,
/// which the radius search counts as above threshold.
pub fn loss_along<O: Objective + ?Sized>(
    obj: &O,
    anchor: &[f64],
    direction: &[f64],
    c: f64,
) -> f64 {
    debug_assert!(c >= 0.0);
    let mut buf = vec![0.0; anchor.len()];
    loss_along_into(obj, anchor, direction, c, &mut buf)
}

fn loss_along_into<O: Objective + ?Sized>(
    obj: &O,
    anchor: &[f64],
    direction: &[f64],
    c: f64,
    buf: &mut [f64],
) -> f64 {
    for ((b, a), d) in buf.iter_mut().zip(anchor).zip(direction) {
        *b = a + c * d;
    }
    let loss = obj.loss(buf);
    if loss.is_finite() {
        loss
    } else {
        f64::INFINITY
    }
}

/// Walk outward along a direction until the loss first exceeds the
/// threshold.
///
/// A linear scan over c in {0, c_max/scan_steps, ..., c_max} finds the first
/// step whose loss exceeds the threshold; bisection then refines the
/// crossing inside that step. The first crossing is what the star-convex
/// convention calls the basin edge, even if the loss dips back below the
/// threshold further out. If no scan point exceeds the threshold the sample
/// is censored at c_max; if the anchor itself is above threshold the radius
/// is zero.
pub fn find_radius<O: Objective + ?Sized>(
    obj: &O,
    anchor: &[f64],
    direction: &[f64],
    direction_index: usize,
    mc: &McConfig,
) -> RadiusSample {
    let mut buf = vec![0.0; anchor.len()];
    find_radius_into(obj, anchor, direction, direction_index, mc, &mut buf)
}

fn find_radius_into<O: Objective + ?Sized>(
    obj: &O,
    anchor: &[f64],
    direction: &[f64],
    direction_index: usize,
    mc: &McConfig,
    buf: &mut [f64],
) -> RadiusSample {
    let mut evals = 0usize;
    let mut eval = |c: f64, evals: &mut usize| {
        *evals += 1;
        loss_along_into(obj, anchor, direction, c, buf)
    };

    if eval(0.0, &mut evals) > mc.threshold {
        return RadiusSample {
            direction_index,
            radius: 0.0,
            censored: false,
            crossing_step: Some(0),
            scan_points: evals,
        };
    }

    let step = mc.c_max / mc.scan_steps as f64;
    let mut crossing = None;
    for k in 1..=mc.scan_steps {
        let c = step * k as f64;
        if eval(c, &mut evals) > mc.threshold {
            crossing = Some(k);
            break;
        }
    }
    let Some(k) = crossing else {
        return RadiusSample {
            direction_index,
            radius: mc.c_max,
            censored: true,
            crossing_step: None,
            scan_points: evals,
        };
    };

    let mut lo = step * (k - 1) as f64;
    let mut hi = step * k as f64;
    for _ in 0..mc.bisect_iters {
        let mid = 0.5 * (lo + hi);
        if eval(mid, &mut evals) > mc.threshold {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    RadiusSample {
        direction_index,
        radius: hi,
        censored: false,
        crossing_step: Some(k),
        scan_points: evals,
    }
}

/// Log-volume of the unit ball in n dimensions:
/// (n/2) ln pi - ln Gamma(n/2 + 1).
pub fn log_unit_ball(n: usize) -> f64 {
    let half = n as f64 / 2.0;
    half * std::f64::consts::PI.ln() - libm::lgamma(half + 1.0)
}

/// Numerically stable log(sum(exp(terms))) over possibly -inf terms.
fn logsumexp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = terms.map(|t| (t - max).exp()).sum();
    max + sum.ln()
}

/// Aggregate per-direction radii into the log-volume estimate:
/// log V_ball(n) - ln K + logsumexp(n ln r_i). Zero radii contribute nothing
/// to the sum but stay in K; an all-zero radius set yields -inf.
pub fn estimate_log_volume(radii: &[f64], n_params: usize) -> Result<f64> {
    if radii.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one radius (K = 0)".into(),
        ));
    }
    let k = radii.len() as f64;
    let n = n_params as f64;
    let terms = radii.iter().map(move |&r| {
        if r > 0.0 {
            n * r.ln()
        } else {
            f64::NEG_INFINITY
        }
    });
    let lse = logsumexp(terms);
    if lse == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(log_unit_ball(n_params) - k.ln() + lse)
}

/// Full measurement: K directions, radius search per direction (parallel,
/// assembled in index order), log-domain aggregation.
pub fn volume_of_minimum<O: Objective + ?Sized>(
    obj: &O,
    anchor: &[f64],
    mc: &McConfig,
) -> Result<VolumeEstimate> {
    mc.validate()?;
    let n = obj.dim();
    if anchor.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "anchor length {} != objective dim {n}",
            anchor.len()
        )));
    }

    let base_loss = {
        let loss = obj.loss(anchor);
        if loss.is_finite() {
            loss
        } else {
            f64::INFINITY
        }
    };
    let radii: Vec<RadiusSample> = if base_loss > mc.threshold {
        // the anchor is outside the basin on this landscape: every ray has
        // radius zero and the volume collapses
        (0..mc.directions)
            .map(|i| RadiusSample {
                direction_index: i,
                radius: 0.0,
                censored: false,
                crossing_step: Some(0),
                scan_points: 1,
            })
            .collect()
    } else {
        let filter = obj.filter_norms(anchor);
        (0..mc.directions)
            .into_par_iter()
            .map(|i| {
                let dir = sample_direction_with_norms(&filter, mc.seed, i);
                let mut buf = vec![0.0; n];
                find_radius_into(obj, anchor, &dir.scaled, i, mc, &mut buf)
            })
            .collect()
    };

    let values: Vec<f64> = radii.iter().map(|r| r.radius).collect();
    let log_volume = estimate_log_volume(&values, n)?;
    Ok(VolumeEstimate {
        n_params: n,
        threshold: mc.threshold,
        k: mc.directions,
        radii,
        log_volume,
        landscape_dataset_id: obj.landscape_id(),
        c_max: mc.c_max,
    })
}

/// Convenience wrapper: measure a trained network on a landscape dataset.
pub fn volume_of_network_minimum(
    spec: &NetworkSpec,
    params: &ParameterVector,
    landscape: &Dataset,
    mc: &McConfig,
) -> Result<VolumeEstimate> {
    let obj = NetworkObjective::new(spec, landscape)?;
    volume_of_minimum(&obj, &params.values, mc)
}

/// 2D slice geometry: losses on a (2 steps + 1)^2 grid spanning
/// [-half_width, half_width] along two direction vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceGrid {
    pub half_width: f64,
    pub steps: usize,
}

/// Loss surface on the plane through `anchor` spanned by two scaled
/// directions. Entry (i, j) is the loss at
/// anchor + a_i * dir_a + b_j * dir_b with a, b running from -half_width to
/// +half_width; the output is row-major in (i, j).
pub fn landscape_slice<O: Objective + ?Sized>(
    obj: &O,
    anchor: &[f64],
    dir_a: &[f64],
    dir_b: &[f64],
    grid: &SliceGrid,
) -> Result<ndarray::Array2<f64>> {
    if grid.steps < 1 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    let side = 2 * grid.steps + 1;
    let coord = |idx: usize| -> f64 {
        grid.half_width * (idx as f64 - grid.steps as f64) / grid.steps as f64
    };
    let rows: Vec<Vec<f64>> = (0..side)
        .into_par_iter()
        .map(|i| {
            let a = coord(i);
            let mut buf = vec![0.0; anchor.len()];
            (0..side)
                .map(|j| {
                    let b = coord(j);
                    for (idx, v) in buf.iter_mut().enumerate() {
                        *v = anchor[idx] + a * dir_a[idx] + b * dir_b[idx];
                    }
                    let loss = obj.loss(&buf);
                    if loss.is_finite() {
                        loss
                    } else {
                        f64::INFINITY
                    }
                })
                .collect()
        })
        .collect();
    let mut out = ndarray::Array2::zeros((side, side));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}
