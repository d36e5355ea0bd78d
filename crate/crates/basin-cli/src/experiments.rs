//! Experiment runners: each takes a resolved config, executes its seed
//! grid, writes per-figure tabular artifacts into the run directory, and
//! returns a deterministic JSON payload for the result record.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Value};

use basin_core::analysis::{cross_landscape_matrix, fit_power_law, radii_histogram, summarize_radii};
use basin_core::data::{gen_modulo, gen_swiss_roll, load_idx, poison, subset, CountSpec, Dataset, SubsetSpec};
use basin_core::error::Error as CoreError;
use basin_core::nn::{self, init_params, NetworkSpec};
use basin_core::optim::{evaluate_accuracy, train, TrainResult};
use basin_core::oracle::{grid_volume, toy_bounds, toy_loss, toy_volume_closed_form, ToyBasin};
use basin_core::rng::derive_key;
use basin_core::volume::{
    landscape_slice, sample_direction, volume_of_minimum, volume_of_network_minimum,
    NetworkObjective, SliceGrid, VolumeEstimate,
};

use crate::config::{DatasetConfig, ExperimentKind, ResolvedConfig};
use crate::persist::{
    estimate_to_json, format_f64, write_checkpoint, write_csv, write_radii_dump,
};
use crate::{read_checkpoint, CliError};

const TAG_TEST_SPLIT: u64 = 0x7465;
const TAG_POISON_POOL: u64 = 0x706f;
const TAG_SHUFFLE: u64 = 0x7566;
const TAG_POISON_RELABEL: u64 = 0x7072;

/// What a runner hands back to the driver.
pub struct RunOutcome {
    pub payload: Value,
    /// Seed-grid cells that diverged or missed their training target; they
    /// are excluded from comparisons but recorded.
    pub flagged_seeds: usize,
}

pub fn execute(cfg: &ResolvedConfig, dir: &Path) -> Result<RunOutcome, CliError> {
    match cfg.kind {
        ExperimentKind::Train => run_train(cfg, dir),
        ExperimentKind::Volume => run_volume(cfg, dir),
        ExperimentKind::PoisonScan => run_poison_scan(cfg, dir),
        ExperimentKind::DataScan => run_data_scan(cfg, dir),
        ExperimentKind::Grok => run_grok(cfg, dir),
        ExperimentKind::Oracle => run_oracle(cfg, dir),
        ExperimentKind::Fit => run_fit(cfg, dir),
        ExperimentKind::Slice => run_slice(cfg, dir),
        ExperimentKind::Imbalance => run_imbalance(cfg, dir),
    }
}

// ---------------------------------------------------------------------------
// Dataset plumbing shared by the runners.
// ---------------------------------------------------------------------------

/// Builds train/test datasets per split seed; IDX files are loaded once.
pub struct DataFactory<'a> {
    cfg: &'a ResolvedConfig,
    idx_train: Option<Dataset>,
    idx_test: Option<Dataset>,
}

impl<'a> DataFactory<'a> {
    pub fn new(cfg: &'a ResolvedConfig) -> Result<Self, CliError> {
        let (idx_train, idx_test) = match &cfg.dataset {
            DatasetConfig::Idx {
                images,
                labels,
                test_images,
                test_labels,
                ..
            } => {
                let train = load_idx(Path::new(images), Path::new(labels))?;
                let test = load_idx(Path::new(test_images), Path::new(test_labels))?;
                (Some(train), Some(test))
            }
            _ => (None, None),
        };
        Ok(DataFactory {
            cfg,
            idx_train,
            idx_test,
        })
    }

    /// The train/test pair for one split seed.
    pub fn train_test(&self, split_seed: u64) -> Result<(Dataset, Dataset), CliError> {
        match &self.cfg.dataset {
            DatasetConfig::SwissRoll { n, noise, test_n } => {
                let train = gen_swiss_roll(*n, *noise, split_seed)?;
                let test = gen_swiss_roll(*test_n, *noise, derive_key(split_seed, TAG_TEST_SPLIT))?;
                Ok((train, test))
            }
            DatasetConfig::Modulo { p, fraction } => {
                let parent = gen_modulo(*p)?;
                let count = (fraction * parent.len() as f64).round() as usize;
                self.split_with_complement(&parent, count, split_seed)
            }
            DatasetConfig::Idx {
                fraction,
                count,
                class_proportions,
                ..
            } => {
                let parent = self.idx_train.as_ref().unwrap();
                let spec = SubsetSpec {
                    count: if *count > 0 {
                        CountSpec::Absolute(*count)
                    } else {
                        CountSpec::Fraction(*fraction)
                    },
                    split_seed,
                    class_proportions: if class_proportions.is_empty() {
                        None
                    } else {
                        Some(class_proportions.clone())
                    },
                };
                let train = subset(parent, &spec)?;
                Ok((train, self.idx_test.clone().unwrap()))
            }
        }
    }

    /// Subset of `count` rows plus its complement as the test set.
    fn split_with_complement(
        &self,
        parent: &Dataset,
        count: usize,
        split_seed: u64,
    ) -> Result<(Dataset, Dataset), CliError> {
        let spec = SubsetSpec {
            count: CountSpec::Absolute(count),
            split_seed,
            class_proportions: None,
        };
        let train = subset(parent, &spec)?;
        let taken: std::collections::HashSet<u64> =
            train.meta.origin.iter().map(|o| o.row).collect();
        let rest: Vec<usize> = (0..parent.len())
            .filter(|&i| !taken.contains(&parent.meta.origin[i].row))
            .collect();
        let test = parent.select(&rest);
        Ok((train, test))
    }

    /// Nested training subset of an absolute size (data scans, slices). The
    /// same split seed gives nested subsets across sizes.
    pub fn train_sized(&self, split_seed: u64, size: usize) -> Result<Dataset, CliError> {
        let sized = |parent: &Dataset| -> Result<Dataset, CliError> {
            Ok(subset(
                parent,
                &SubsetSpec {
                    count: CountSpec::Absolute(size),
                    split_seed,
                    class_proportions: None,
                },
            )?)
        };
        match &self.cfg.dataset {
            DatasetConfig::SwissRoll { noise, n, .. } => {
                let parent_n = size.max(*n);
                let parent = gen_swiss_roll(parent_n, *noise, split_seed)?;
                sized(&parent)
            }
            DatasetConfig::Modulo { p, .. } => sized(&gen_modulo(*p)?),
            DatasetConfig::Idx { .. } => sized(self.idx_train.as_ref().unwrap()),
        }
    }

    /// Shared test set for sized scans: independent samples for generators,
    /// the held-out complement of the largest subset for modulo, the test
    /// files for IDX data.
    pub fn scan_test(&self, split_seed: u64, max_size: usize) -> Result<Dataset, CliError> {
        match &self.cfg.dataset {
            DatasetConfig::SwissRoll { noise, test_n, .. } => Ok(gen_swiss_roll(
                *test_n,
                *noise,
                derive_key(split_seed, TAG_TEST_SPLIT),
            )?),
            DatasetConfig::Modulo { p, .. } => {
                let parent = gen_modulo(*p)?;
                let (_, test) = self.split_with_complement(&parent, max_size, split_seed)?;
                Ok(test)
            }
            DatasetConfig::Idx { .. } => Ok(self.idx_test.clone().unwrap()),
        }
    }

    /// Disjoint pool the poisoner draws from: freshly generated points for
    /// the swiss roll, held-out parent rows otherwise.
    pub fn poison_pool(
        &self,
        split_seed: u64,
        size: usize,
        base: &Dataset,
    ) -> Result<Dataset, CliError> {
        match &self.cfg.dataset {
            DatasetConfig::SwissRoll { noise, .. } => Ok(gen_swiss_roll(
                size,
                *noise,
                derive_key(split_seed, TAG_POISON_POOL),
            )?),
            DatasetConfig::Modulo { p, .. } => {
                let parent = gen_modulo(*p)?;
                self.pool_from_parent(&parent, base, size, split_seed)
            }
            DatasetConfig::Idx { .. } => {
                self.pool_from_parent(self.idx_train.as_ref().unwrap(), base, size, split_seed)
            }
        }
    }

    fn pool_from_parent(
        &self,
        parent: &Dataset,
        base: &Dataset,
        size: usize,
        split_seed: u64,
    ) -> Result<Dataset, CliError> {
        let taken: std::collections::HashSet<u64> =
            base.meta.origin.iter().map(|o| o.row).collect();
        let big = subset(
            parent,
            &SubsetSpec {
                count: CountSpec::Absolute((base.len() + size).min(parent.len())),
                split_seed,
                class_proportions: None,
            },
        )?;
        let fresh: Vec<usize> = (0..big.len())
            .filter(|&i| !taken.contains(&big.meta.origin[i].row))
            .take(size)
            .collect();
        if fresh.len() < size {
            return Err(CliError::Config(format!(
                "cannot carve a disjoint poison pool of {size} rows from the parent"
            )));
        }
        Ok(big.select(&fresh))
    }

    pub fn network_spec(&self, sample: &Dataset) -> NetworkSpec {
        self.cfg
            .model
            .spec_for(sample.feature_dim(), sample.num_classes)
    }
}

fn shuffle_seed(model_seed: u64, split_seed: u64) -> u64 {
    derive_key(derive_key(model_seed, TAG_SHUFFLE), split_seed)
}

/// Train one seed-grid cell; divergence comes back as Ok(Err(epoch)).
fn train_cell(
    cfg: &ResolvedConfig,
    spec: &NetworkSpec,
    train_data: &Dataset,
    test_data: &Dataset,
    model_seed: u64,
    split_seed: u64,
) -> Result<std::result::Result<TrainResult, usize>, CliError> {
    let init = init_params(spec, model_seed)?;
    let tc = cfg.train.to_train_config(shuffle_seed(model_seed, split_seed));
    match train(spec, train_data, test_data, &init, &cfg.optimizer, &tc) {
        Ok(result) => Ok(Ok(result)),
        Err(CoreError::Diverged { epoch }) => Ok(Err(epoch)),
        Err(e) => Err(e.into()),
    }
}

fn json_f64(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn estimate_summary(est: &VolumeEstimate) -> Value {
    let summary = summarize_radii(est).ok();
    json!({
        "log_volume": json_f64(est.log_volume),
        "collapsed": est.collapsed(),
        "censored_fraction": est.censored_fraction(),
        "radii_min": summary.map_or(Value::Null, |s| json!(s.min)),
        "radii_median": summary.map_or(Value::Null, |s| json!(s.median)),
        "radii_max": summary.map_or(Value::Null, |s| json!(s.max)),
    })
}

fn median(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = values.len();
    Some(if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    })
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn run_train(cfg: &ResolvedConfig, dir: &Path) -> Result<RunOutcome, CliError> {
    let factory = DataFactory::new(cfg)?;
    let mut cells = Vec::new();
    let mut flagged = 0;
    for (m, s) in cfg.seeds.grid() {
        let (train_data, test_data) = factory.train_test(s)?;
        let spec = factory.network_spec(&train_data);
        match train_cell(cfg, &spec, &train_data, &test_data, m, s)? {
            Err(epoch) => {
                flagged += 1;
                cells.push(json!({
                    "model_seed": m,
                    "split_seed": s,
                    "diverged_at_epoch": epoch,
                    "flagged": true,
                }));
            }
            Ok(result) => {
                let mut checkpoint_files = Vec::new();
                for (epoch, params) in &result.checkpoints {
                    let name = format!("ckpt-m{m}-s{s}-e{epoch}.ckpt");
                    write_checkpoint(&dir.join(&name), &spec, m, s, *epoch, params)?;
                    checkpoint_files.push(name);
                }
                let final_name = format!("final-m{m}-s{s}.ckpt");
                write_checkpoint(
                    &dir.join(&final_name),
                    &spec,
                    m,
                    s,
                    result.completed_epochs(),
                    &result.final_params,
                )?;
                let rows: Vec<Vec<String>> = (0..result.completed_epochs())
                    .map(|e| {
                        vec![
                            (e + 1).to_string(),
                            format_f64(result.train_loss_curve[e]),
                            format_f64(result.test_loss_curve[e]),
                            format_f64(result.test_accuracy_curve[e]),
                        ]
                    })
                    .collect();
                write_csv(
                    &dir.join(format!("curves-m{m}-s{s}.csv")),
                    "epoch,train_loss,test_loss,test_accuracy",
                    &rows,
                )?;
                let missed_target = result.target_reached == Some(false);
                if missed_target {
                    flagged += 1;
                }
                cells.push(json!({
                    "model_seed": m,
                    "split_seed": s,
                    "epochs": result.completed_epochs(),
                    "final_train_loss": json_f64(result.final_train_loss().unwrap_or(f64::NAN)),
                    "final_test_loss": json_f64(*result.test_loss_curve.last().unwrap_or(&f64::NAN)),
                    "final_test_accuracy": json_f64(*result.test_accuracy_curve.last().unwrap_or(&f64::NAN)),
                    "target_reached": result.target_reached,
                    "flagged": missed_target,
                    "final_checkpoint": final_name,
                    "checkpoints": checkpoint_files,
                }));
            }
        }
    }
    Ok(RunOutcome {
        payload: json!({ "cells": cells }),
        flagged_seeds: flagged,
    })
}

// ---------------------------------------------------------------------------
// volume
// ---------------------------------------------------------------------------

fn run_volume(cfg: &ResolvedConfig, dir: &Path) -> Result<RunOutcome, CliError> {
    let factory = DataFactory::new(cfg)?;
    let mc_seed = cfg.seeds.mc_seed;
    let mut cells = Vec::new();
    let mut flagged = 0;

    if !cfg.volume.checkpoints.is_empty() {
        // measure existing checkpoints on their own training landscapes
        for name in &cfg.volume.checkpoints {
            let (header, params) = read_checkpoint(Path::new(name))?;
            let (landscape, _) = factory.train_test(header.split_seed)?;
            let est = volume_of_network_minimum(
                &header.spec,
                &params,
                &landscape,
                &cfg.mc.to_mc_config(mc_seed),
            )?;
            write_radii_dump(
                &dir.join(format!("radii-e{}.csv", header.epoch)),
                &est,
            )?;
            cells.push(json!({
                "checkpoint": name,
                "epoch": header.epoch,
                "estimate": estimate_to_json(&est),
            }));
        }
        return Ok(RunOutcome {
            payload: json!({ "cells": cells }),
            flagged_seeds: 0,
        });
    }

    for (m, s) in cfg.seeds.grid() {
        let (train_data, test_data) = factory.train_test(s)?;
        let spec = factory.network_spec(&train_data);
        match train_cell(cfg, &spec, &train_data, &test_data, m, s)? {
            Err(epoch) => {
                flagged += 1;
                cells.push(json!({
                    "model_seed": m, "split_seed": s,
                    "diverged_at_epoch": epoch, "flagged": true,
                }));
            }
            Ok(result) => {
                let est = volume_of_network_minimum(
                    &spec,
                    &result.final_params,
                    &train_data,
                    &cfg.mc.to_mc_config(mc_seed),
                )?;
                write_radii_dump(&dir.join(format!("radii-m{m}-s{s}.csv")), &est)?;
                let hist = radii_histogram(&est, 20)?;
                let hist_rows: Vec<Vec<String>> = hist
                    .iter()
                    .map(|b| {
                        vec![
                            format_f64(b.lo),
                            format_f64(b.hi),
                            b.count.to_string(),
                            b.censored.to_string(),
                        ]
                    })
                    .collect();
                write_csv(
                    &dir.join(format!("radii-hist-m{m}-s{s}.csv")),
                    "bin_lo,bin_hi,count,censored",
                    &hist_rows,
                )?;
                cells.push(json!({
                    "model_seed": m,
                    "split_seed": s,
                    "final_train_loss": json_f64(result.final_train_loss().unwrap_or(f64::NAN)),
                    "test_accuracy": json_f64(*result.test_accuracy_curve.last().unwrap_or(&f64::NAN)),
                    "estimate": estimate_to_json(&est),
                    "summary": estimate_summary(&est),
                }));
            }
        }
    }
    Ok(RunOutcome {
        payload: json!({ "cells": cells }),
        flagged_seeds: flagged,
    })
}

// ---------------------------------------------------------------------------
// poison_scan
// ---------------------------------------------------------------------------

fn run_poison_scan(cfg: &ResolvedConfig, dir: &Path) -> Result<RunOutcome, CliError> {
    let factory = DataFactory::new(cfg)?;
    let mc = cfg.mc.to_mc_config(cfg.seeds.mc_seed);
    let max_count = cfg.poison.counts.iter().copied().max().unwrap_or(0);
    if max_count == 0 {
        return Err(CliError::Config("poison.counts must be non-empty".into()));
    }
    let mut rows = Vec::new();
    let mut flagged = 0usize;
    // per poison count, the per-seed log volumes of poisoned vs clean arms
    let mut per_count: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();

    for (m, s) in cfg.seeds.grid() {
        let (base, test_data) = factory.train_test(s)?;
        let pool = factory.poison_pool(s, max_count, &base)?;
        let spec = factory.network_spec(&base);

        // arm 0: clean training on the base dataset
        let clean = match train_cell(cfg, &spec, &base, &test_data, m, s)? {
            Err(_) => None,
            Ok(r) => Some(r),
        };
        let clean_ok = clean
            .as_ref()
            .map(|r| {
                r.target_reached != Some(false)
                    && r.final_train_loss().unwrap_or(f64::INFINITY) <= mc.threshold
            })
            .unwrap_or(false);
        let clean_est = if clean_ok {
            let r = clean.as_ref().unwrap();
            Some(volume_of_network_minimum(
                &spec,
                &r.final_params,
                &base,
                &mc,
            )?)
        } else {
            flagged += 1;
            None
        };
        rows.push(json!({
            "model_seed": m,
            "split_seed": s,
            "poison_count": 0,
            "flagged": !clean_ok,
            "base_train_loss": clean.as_ref().map_or(Value::Null, |r| json_f64(r.final_train_loss().unwrap_or(f64::NAN))),
            "test_accuracy": clean.as_ref().map_or(Value::Null, |r| json_f64(*r.test_accuracy_curve.last().unwrap_or(&f64::NAN))),
            "estimate": clean_est.as_ref().map_or(Value::Null, estimate_to_json),
        }));

        for &count in &cfg.poison.counts {
            let poisoned_data = poison(&base, &pool, count, derive_key(s, TAG_POISON_RELABEL ^ count as u64))?;
            let arm = match train_cell(cfg, &spec, &poisoned_data, &test_data, m, s)? {
                Err(_) => None,
                Ok(r) => Some(r),
            };
            // the arm counts only if the poisoned model still minimizes the
            // base training loss below the basin threshold
            let base_loss = arm
                .as_ref()
                .map(|r| nn::loss_mean(&spec, &r.final_params, &base))
                .transpose()?
                .unwrap_or(f64::INFINITY);
            let arm_ok = arm.is_some() && base_loss <= mc.threshold;
            let est = if arm_ok {
                let r = arm.as_ref().unwrap();
                Some(volume_of_network_minimum(
                    &spec,
                    &r.final_params,
                    &base,
                    &mc,
                )?)
            } else {
                flagged += 1;
                None
            };
            if let (Some(ce), Some(pe)) = (&clean_est, &est) {
                per_count
                    .entry(count)
                    .or_default()
                    .push((ce.log_volume, pe.log_volume));
            }
            rows.push(json!({
                "model_seed": m,
                "split_seed": s,
                "poison_count": count,
                "flagged": !arm_ok,
                "base_train_loss": json_f64(base_loss),
                "test_accuracy": arm.as_ref().map_or(Value::Null, |r| json_f64(*r.test_accuracy_curve.last().unwrap_or(&f64::NAN))),
                "estimate": est.as_ref().map_or(Value::Null, estimate_to_json),
            }));
        }
    }

    // aggregate: median clean vs median poisoned per count
    let mut aggregate = Vec::new();
    let mut csv_rows = Vec::new();
    for (&count, pairs) in &per_count {
        let mut clean_vals: Vec<f64> = pairs.iter().map(|(c, _)| *c).collect();
        let mut pois_vals: Vec<f64> = pairs.iter().map(|(_, p)| *p).collect();
        let ordered = pairs.iter().filter(|(c, p)| p < c).count();
        let clean_med = median(&mut clean_vals);
        let pois_med = median(&mut pois_vals);
        aggregate.push(json!({
            "poison_count": count,
            "pairs": pairs.len(),
            "clean_median_log_volume": clean_med.map_or(Value::Null, |v| json_f64(v)),
            "poisoned_median_log_volume": pois_med.map_or(Value::Null, |v| json_f64(v)),
            "seeds_with_poisoned_smaller": ordered,
        }));
        csv_rows.push(vec![
            count.to_string(),
            pairs.len().to_string(),
            clean_med.map_or(String::new(), format_f64),
            pois_med.map_or(String::new(), format_f64),
            ordered.to_string(),
        ]);
    }
    write_csv(
        &dir.join("volume_vs_poison.csv"),
        "poison_count,pairs,clean_median_log_volume,poisoned_median_log_volume,seeds_with_poisoned_smaller",
        &csv_rows,
    )?;

    Ok(RunOutcome {
        payload: json!({
            "rows": rows,
            "aggregate": aggregate,
            "excluded_seeds": flagged,
        }),
        flagged_seeds: flagged,
    })
}

// ---------------------------------------------------------------------------
// data_scan
// ---------------------------------------------------------------------------

fn run_data_scan(cfg: &ResolvedConfig, dir: &Path) -> Result<RunOutcome, CliError> {
    let factory = DataFactory::new(cfg)?;
    let mc = cfg.mc.to_mc_config(cfg.seeds.mc_seed);
    let sizes = &cfg.scan.sizes;
    if sizes.len() < 2 {
        return Err(CliError::Config("scan.sizes needs at least two sizes".into()));
    }
    let max_size = *sizes.iter().max().unwrap();
    let mut flagged = 0usize;
    let mut cells = Vec::new();
    // mean matrix over seeds: (model size, landscape size) -> (sum, n, collapsed)
    let mut acc: BTreeMap<(usize, usize), (f64, usize, usize)> = BTreeMap::new();
    let mut diag_points: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut n_params = 0usize;

    for (m, s) in cfg.seeds.grid() {
        let test_data = factory.scan_test(s, max_size)?;
        let trainsets: Vec<Dataset> = sizes
            .iter()
            .map(|&size| factory.train_sized(s, size))
            .collect::<Result<_, _>>()?;
        let spec = factory.network_spec(&trainsets[0]);
        n_params = spec.param_count();

        let mut models = Vec::new();
        let mut accs = Vec::new();
        let mut ok = true;
        for (i, tset) in trainsets.iter().enumerate() {
            match train_cell(cfg, &spec, tset, &test_data, m, s)? {
                Err(_) => {
                    ok = false;
                    break;
                }
                Ok(r) => {
                    if r.target_reached == Some(false) {
                        ok = false;
                        break;
                    }
                    accs.push(*r.test_accuracy_curve.last().unwrap_or(&f64::NAN));
                    models.push((format!("size-{}", sizes[i]), r.final_params));
                }
            }
        }
        if !ok {
            flagged += 1;
            cells.push(json!({
                "model_seed": m, "split_seed": s, "flagged": true,
            }));
            continue;
        }

        let landscape_refs: Vec<&Dataset> = trainsets.iter().collect();
        let matrix = cross_landscape_matrix(&spec, &models, &landscape_refs, &mc)?;
        let mut matrix_json = Vec::new();
        for (i, row) in matrix.cells.iter().enumerate() {
            let mut row_json = Vec::new();
            for (j, est) in row.iter().enumerate() {
                let entry = acc.entry((sizes[i], sizes[j])).or_insert((0.0, 0, 0));
                if est.collapsed() {
                    entry.2 += 1;
                } else {
                    entry.0 += est.log_volume;
                    entry.1 += 1;
                }
                if i == j {
                    diag_points
                        .entry(sizes[i])
                        .or_default()
                        .push(est.log_volume);
                }
                row_json.push(json!({
                    "model_size": sizes[i],
                    "landscape_size": sizes[j],
                    "log_volume": json_f64(est.log_volume),
                    "collapsed": est.collapsed(),
                    "censored_fraction": est.censored_fraction(),
                }));
            }
            matrix_json.push(Value::Array(row_json));
        }
        cells.push(json!({
            "model_seed": m,
            "split_seed": s,
            "flagged": false,
            "sizes": sizes,
            "test_accuracy": accs,
            "matrix": matrix_json,
        }));
    }

    // artifacts: mean cross-landscape matrix and the diagonal scaling points
    let mut matrix_rows = Vec::new();
    for (&(ms, ls), &(sum, n, collapsed)) in &acc {
        matrix_rows.push(vec![
            ms.to_string(),
            ls.to_string(),
            if n > 0 {
                format_f64(sum / n as f64)
            } else {
                String::new()
            },
            n.to_string(),
            collapsed.to_string(),
        ]);
    }
    write_csv(
        &dir.join("cross_landscape.csv"),
        "model_size,landscape_size,mean_log_volume,finite_cells,collapsed_cells",
        &matrix_rows,
    )?;

    let mut scaling_points = Vec::new();
    let mut scaling_rows = Vec::new();
    for (&size, vals) in &diag_points {
        let finite: Vec<f64> = vals.iter().copied().filter(|v| v.is_finite()).collect();
        if !finite.is_empty() {
            let mean = finite.iter().sum::<f64>() / finite.len() as f64;
            scaling_points.push(json!([size as f64, mean]));
            scaling_rows.push(vec![size.to_string(), format_f64(mean)]);
        }
    }
    write_csv(
        &dir.join("volume_vs_size.csv"),
        "dataset_size,mean_log_volume",
        &scaling_rows,
    )?;

    Ok(RunOutcome {
        payload: json!({
            "cells": cells,
            "n_params": n_params,
            "scaling_points": scaling_points,
            "excluded_seeds": flagged,
        }),
        flagged_seeds: flagged,
    })
}

// ---------------------------------------------------------------------------
// grok
// ---------------------------------------------------------------------------

fn run_grok(cfg: &ResolvedConfig, dir: &Path) -> Result<RunOutcome, CliError> {
    if cfg.train.checkpoint_epochs.is_empty() {
        return Err(CliError::Config(
            "grok runs need train.checkpoint_epochs".into(),
        ));
    }
    let factory = DataFactory::new(cfg)?;
    let mc = cfg.mc.to_mc_config(cfg.seeds.mc_seed);
    let mut cells = Vec::new();
    let mut flagged = 0usize;

    for (m, s) in cfg.seeds.grid() {
        let (train_data, test_data) = factory.train_test(s)?;
        let spec = factory.network_spec(&train_data);
        let result = match train_cell(cfg, &spec, &train_data, &test_data, m, s)? {
            Err(epoch) => {
                flagged += 1;
                cells.push(json!({
                    "model_seed": m, "split_seed": s,
                    "diverged_at_epoch": epoch, "flagged": true,
                }));
                continue;
            }
            Ok(r) => r,
        };
        let mut series = Vec::new();
        let mut csv_rows = Vec::new();
        for (epoch, params) in &result.checkpoints {
            let train_loss = nn::loss_mean(&spec, params, &train_data)?;
            let test_acc = evaluate_accuracy(&spec, params, &test_data)?;
            let est = volume_of_network_minimum(&spec, params, &train_data, &mc)?;
            write_radii_dump(&dir.join(format!("radii-m{m}-s{s}-e{epoch}.csv")), &est)?;
            series.push(json!({
                "epoch": epoch,
                "train_loss": json_f64(train_loss),
                "test_accuracy": json_f64(test_acc),
                "log_volume": json_f64(est.log_volume),
                "collapsed": est.collapsed(),
                "censored_fraction": est.censored_fraction(),
            }));
            csv_rows.push(vec![
                epoch.to_string(),
                format_f64(train_loss),
                format_f64(test_acc),
                if est.collapsed() {
                    String::new()
                } else {
                    format_f64(est.log_volume)
                },
                est.collapsed().to_string(),
            ]);
        }
        write_csv(
            &dir.join(format!("grok-m{m}-s{s}.csv")),
            "epoch,train_loss,test_accuracy,log_volume,collapsed",
            &csv_rows,
        )?;
        cells.push(json!({
            "model_seed": m,
            "split_seed": s,
            "flagged": false,
            "train_size": train_data.len(),
            "series": series,
        }));
    }
    Ok(RunOutcome {
        payload: json!({ "cells": cells }),
        flagged_seeds: flagged,
    })
}

// ---------------------------------------------------------------------------
// oracle
// ---------------------------------------------------------------------------

fn run_oracle(cfg: &ResolvedConfig, dir: &Path) -> Result<RunOutcome, CliError> {
    let mut cases = Vec::new();
    let mut csv_rows = Vec::new();
    for &s in &cfg.oracle.s {
        let closed = toy_volume_closed_form(s)?;
        for &b in &cfg.oracle.b {
            let basin = ToyBasin::new(s, b)?;
            let anchor = basin.anchor();
            let grid = grid_volume(
                toy_loss,
                s,
                toy_bounds(s, b)?,
                cfg.oracle.resolution,
                (anchor[0], anchor[1]),
                true,
            )?;
            let mc = basin_core::volume::McConfig {
                directions: cfg.mc.directions,
                threshold: s,
                c_max: cfg.mc.c_max,
                scan_steps: cfg.mc.scan_steps,
                bisect_iters: cfg.mc.bisect_iters,
                seed: cfg.seeds.mc_seed,
            };
            let est = volume_of_minimum(&basin, &anchor, &mc)?;
            let mc_vol = est.log_volume.exp();
            cases.push(json!({
                "s": s,
                "b": b,
                "closed_form": closed,
                "grid_volume": grid,
                "grid_rel_err": (grid - closed) / closed,
                "mc_volume": json_f64(mc_vol),
                "mc_log_volume": json_f64(est.log_volume),
                "mc_rel_err": json_f64((mc_vol - closed) / closed),
                "censored_fraction": est.censored_fraction(),
                "k": est.k,
            }));
            csv_rows.push(vec![
                format_f64(s),
                format_f64(b),
                format_f64(closed),
                format_f64(grid),
                format_f64(mc_vol),
                format_f64((grid - closed) / closed),
                format_f64((mc_vol - closed) / closed),
            ]);
        }
    }
    write_csv(
        &dir.join("oracle.csv"),
        "s,b,closed_form,grid_volume,mc_volume,grid_rel_err,mc_rel_err",
        &csv_rows,
    )?;
    Ok(RunOutcome {
        payload: json!({ "cases": cases }),
        flagged_seeds: 0,
    })
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

fn run_fit(cfg: &ResolvedConfig, dir: &Path) -> Result<RunOutcome, CliError> {
    let (points, n_params): (Vec<(f64, f64)>, usize) = if let Some(from) = &cfg.fit.from {
        let text = std::fs::read_to_string(from)
            .map_err(|e| CliError::Data(format!("cannot read {from}: {e}")))?;
        let doc: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("bad result document {from}: {e}")))?;
        let pts = doc["payload"]["scaling_points"]
            .as_array()
            .ok_or_else(|| {
                CliError::Data(format!("{from} has no payload.scaling_points array"))
            })?
            .iter()
            .map(|p| {
                Ok((
                    p[0].as_f64()
                        .ok_or_else(|| CliError::Data("bad scaling point".into()))?,
                    p[1].as_f64()
                        .ok_or_else(|| CliError::Data("bad scaling point".into()))?,
                ))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let n = doc["payload"]["n_params"].as_u64().unwrap_or(0) as usize;
        (pts, if cfg.fit.n_params > 0 { cfg.fit.n_params } else { n })
    } else {
        (cfg.fit.points.clone(), cfg.fit.n_params)
    };
    if n_params == 0 {
        return Err(CliError::Config(
            "fit.n_params is required (or a data_scan result with payload.n_params)".into(),
        ));
    }
    let fit = fit_power_law(&points, n_params)?;
    let rows: Vec<Vec<String>> = fit
        .points
        .iter()
        .map(|(d, v)| vec![format_f64(*d), format_f64(*v)])
        .collect();
    write_csv(&dir.join("fit_points.csv"), "dataset_size,log_volume", &rows)?;
    Ok(RunOutcome {
        payload: json!({
            "alpha": fit.alpha,
            "slope": fit.slope,
            "intercept": fit.intercept,
            "r_squared": fit.r_squared,
            "n_params": fit.n_params,
            "points_used": fit.points.len(),
            "excluded_collapsed": fit.excluded_collapsed,
        }),
        flagged_seeds: 0,
    })
}

// ---------------------------------------------------------------------------
// slice
// ---------------------------------------------------------------------------

fn run_slice(cfg: &ResolvedConfig, dir: &Path) -> Result<RunOutcome, CliError> {
    let factory = DataFactory::new(cfg)?;
    let m = cfg.seeds.model_seeds[0];
    let s = cfg.seeds.split_seeds[0];
    let sizes = if cfg.slice.sizes.is_empty() {
        match &cfg.dataset {
            DatasetConfig::SwissRoll { n, .. } => vec![*n],
            DatasetConfig::Modulo { p, fraction } => {
                vec![(fraction * (*p * *p) as f64).round() as usize]
            }
            DatasetConfig::Idx { .. } => {
                return Err(CliError::Config(
                    "slice.sizes is required for idx datasets".into(),
                ))
            }
        }
    } else {
        cfg.slice.sizes.clone()
    };
    if sizes.len() != 1 && sizes.len() != 3 {
        return Err(CliError::Config(
            "slice.sizes takes one size (random plane) or three (minima plane)".into(),
        ));
    }

    let max_size = *sizes.iter().max().unwrap();
    let test_data = factory.scan_test(s, max_size)?;
    let trainsets: Vec<Dataset> = sizes
        .iter()
        .map(|&size| factory.train_sized(s, size))
        .collect::<Result<_, _>>()?;
    let spec = factory.network_spec(&trainsets[0]);

    let mut models = Vec::new();
    for tset in &trainsets {
        match train_cell(cfg, &spec, tset, &test_data, m, s)? {
            Err(epoch) => {
                return Err(CliError::Data(format!(
                    "slice training diverged at epoch {epoch}"
                )))
            }
            Ok(r) => models.push(r.final_params),
        }
    }

    let anchor = models[0].values.clone();
    let (dir_a, dir_b, positions): (Vec<f64>, Vec<f64>, Vec<(f64, f64)>) = if models.len() == 3 {
        // plane through the three minima by Gram-Schmidt on (B-A, C-A)
        let ab: Vec<f64> = models[1]
            .values
            .iter()
            .zip(&anchor)
            .map(|(b, a)| b - a)
            .collect();
        let ac: Vec<f64> = models[2]
            .values
            .iter()
            .zip(&anchor)
            .map(|(c, a)| c - a)
            .collect();
        let norm_ab = ab.iter().map(|v| v * v).sum::<f64>().sqrt();
        let e1: Vec<f64> = ab.iter().map(|v| v / norm_ab).collect();
        let proj: f64 = ac.iter().zip(&e1).map(|(x, e)| x * e).sum();
        let mut u2: Vec<f64> = ac.iter().zip(&e1).map(|(x, e)| x - proj * e).collect();
        let norm_u2 = u2.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm_u2 == 0.0 {
            return Err(CliError::Data(
                "the three minima are collinear; no plane to slice".into(),
            ));
        }
        for v in &mut u2 {
            *v /= norm_u2;
        }
        let positions = vec![(0.0, 0.0), (norm_ab, 0.0), (proj, norm_u2)];
        (e1, u2, positions)
    } else {
        let obj = NetworkObjective::new(&spec, &trainsets[0])?;
        let d0 = sample_direction(&obj, &anchor, cfg.seeds.mc_seed, 0);
        let d1 = sample_direction(&obj, &anchor, cfg.seeds.mc_seed, 1);
        (d0.scaled, d1.scaled, vec![(0.0, 0.0)])
    };

    let auto_half = positions
        .iter()
        .map(|(a, b)| a.abs().max(b.abs()))
        .fold(0.0f64, f64::max);
    let half_width = if cfg.slice.half_width > 0.0 {
        cfg.slice.half_width
    } else if auto_half > 0.0 {
        1.25 * auto_half
    } else {
        1.0
    };
    let grid = SliceGrid {
        half_width,
        steps: cfg.slice.steps,
    };

    let mut landscapes_json = Vec::new();
    for (i, tset) in trainsets.iter().enumerate() {
        let obj = NetworkObjective::new(&spec, tset)?;
        let surface = landscape_slice(&obj, &anchor, &dir_a, &dir_b, &grid)?;
        let rows: Vec<Vec<String>> = surface
            .rows()
            .into_iter()
            .map(|row| row.iter().map(|v| format_f64(*v)).collect())
            .collect();
        write_csv(
            &dir.join(format!("slice-landscape-{}.csv", sizes[i])),
            &(0..surface.ncols())
                .map(|j| format!("b{j}"))
                .collect::<Vec<_>>()
                .join(","),
            &rows,
        )?;

        // loss at the grid node nearest to each minimum
        let side = 2 * grid.steps + 1;
        let nearest = |coord: f64| -> usize {
            let idx = ((coord / half_width) * grid.steps as f64 + grid.steps as f64).round();
            (idx.max(0.0) as usize).min(side - 1)
        };
        let at_minima: Vec<Value> = positions
            .iter()
            .map(|&(a, b)| json!(surface[[nearest(a), nearest(b)]]))
            .collect();
        landscapes_json.push(json!({
            "landscape_size": sizes[i],
            "grid_loss_at_minima": at_minima,
        }));
    }

    Ok(RunOutcome {
        payload: json!({
            "sizes": sizes,
            "half_width": half_width,
            "steps": cfg.slice.steps,
            "minima_positions": positions
                .iter()
                .map(|&(a, b)| json!([a, b]))
                .collect::<Vec<_>>(),
            "landscapes": landscapes_json,
        }),
        flagged_seeds: 0,
    })
}

// ---------------------------------------------------------------------------
// imbalance
// ---------------------------------------------------------------------------

fn run_imbalance(cfg: &ResolvedConfig, dir: &Path) -> Result<RunOutcome, CliError> {
    let factory = DataFactory::new(cfg)?;
    let mc = cfg.mc.to_mc_config(cfg.seeds.mc_seed);
    let (proportions, count) = match &cfg.dataset {
        DatasetConfig::Idx {
            class_proportions,
            count,
            ..
        } if !class_proportions.is_empty() && *count > 0 => (class_proportions.clone(), *count),
        DatasetConfig::SwissRoll { .. } => (vec![0.8, 0.2], 100),
        _ => {
            return Err(CliError::Config(
                "imbalance needs dataset.class_proportions and dataset.count".into(),
            ))
        }
    };

    let mut cells = Vec::new();
    let mut flagged = 0usize;
    for (m, s) in cfg.seeds.grid() {
        // the full parent this split sees
        let (parent, test_data) = match &cfg.dataset {
            DatasetConfig::SwissRoll { n, noise, test_n } => (
                gen_swiss_roll(*n, *noise, s)?,
                gen_swiss_roll(*test_n, *noise, derive_key(s, TAG_TEST_SPLIT))?,
            ),
            _ => {
                let (p, t) = factory.train_test(s)?;
                (p, t)
            }
        };
        let classes = parent.num_classes;
        let uniform = vec![1.0; classes];
        let imbalanced = subset(
            &parent,
            &SubsetSpec {
                count: CountSpec::Absolute(count),
                split_seed: s,
                class_proportions: Some(proportions.clone()),
            },
        )?;
        let balanced_small = subset(
            &parent,
            &SubsetSpec {
                count: CountSpec::Absolute(count / 2),
                split_seed: s,
                class_proportions: Some(uniform),
            },
        )?;
        let larger_imbalanced = subset(
            &parent,
            &SubsetSpec {
                count: CountSpec::Absolute((2 * count).min(parent.len())),
                split_seed: s,
                class_proportions: Some(proportions.clone()),
            },
        )?;

        let spec = factory.network_spec(&imbalanced);
        let result = match train_cell(cfg, &spec, &imbalanced, &test_data, m, s)? {
            Err(_) => {
                flagged += 1;
                cells.push(json!({"model_seed": m, "split_seed": s, "flagged": true}));
                continue;
            }
            Ok(r) if r.target_reached == Some(false) => {
                flagged += 1;
                cells.push(json!({"model_seed": m, "split_seed": s, "flagged": true}));
                continue;
            }
            Ok(r) => r,
        };
        let mut volumes = Vec::new();
        for (label, landscape) in [
            ("balanced_small", &balanced_small),
            ("train_imbalanced", &imbalanced),
            ("larger_imbalanced", &larger_imbalanced),
        ] {
            let est =
                volume_of_network_minimum(&spec, &result.final_params, landscape, &mc)?;
            volumes.push(json!({
                "landscape": label,
                "landscape_size": landscape.len(),
                "log_volume": json_f64(est.log_volume),
                "collapsed": est.collapsed(),
            }));
        }
        cells.push(json!({
            "model_seed": m,
            "split_seed": s,
            "flagged": false,
            "train_class_counts": imbalanced.class_counts(),
            "volumes": volumes,
        }));
    }
    let csv_rows: Vec<Vec<String>> = cells
        .iter()
        .filter(|c| c["flagged"] == json!(false))
        .flat_map(|c| {
            let m = c["model_seed"].clone();
            let s = c["split_seed"].clone();
            c["volumes"]
                .as_array()
                .unwrap()
                .iter()
                .map(move |v| {
                    vec![
                        m.to_string(),
                        s.to_string(),
                        v["landscape"].as_str().unwrap().to_string(),
                        v["landscape_size"].to_string(),
                        v["log_volume"]
                            .as_f64()
                            .map_or(String::new(), format_f64),
                        v["collapsed"].to_string(),
                    ]
                })
                .collect::<Vec<_>>()
        })
        .collect();
    write_csv(
        &dir.join("imbalance.csv"),
        "model_seed,split_seed,landscape,landscape_size,log_volume,collapsed",
        &csv_rows,
    )?;
    Ok(RunOutcome {
        payload: json!({ "cells": cells }),
        flagged_seeds: flagged,
    })
}
