//! Experiment configuration: a human-editable TOML document with nested
//! blocks.
//!
//! Configs are loaded leniently (every field optional), then resolved into a
//! [`ResolvedConfig`] in which every effective value is explicit. The
//! resolved form is echoed next to the results and is the source of truth
//! for reproduction: loading the echo resolves to itself.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use basin_core::nn::{LossKind, NetworkSpec};
use basin_core::optim::{OptimizerConfig, OptimizerKind, TrainConfig};
use basin_core::volume::McConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Train,
    Volume,
    PoisonScan,
    DataScan,
    Grok,
    Oracle,
    Fit,
    Slice,
    Imbalance,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Train => "train",
            ExperimentKind::Volume => "volume",
            ExperimentKind::PoisonScan => "poison_scan",
            ExperimentKind::DataScan => "data_scan",
            ExperimentKind::Grok => "grok",
            ExperimentKind::Oracle => "oracle",
            ExperimentKind::Fit => "fit",
            ExperimentKind::Slice => "slice",
            ExperimentKind::Imbalance => "imbalance",
        }
    }
}

// ---------------------------------------------------------------------------
// Raw (lenient) schema: everything optional, filled in by resolve().
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub kind: Option<ExperimentKind>,
    pub output: Option<String>,
    #[serde(default)]
    pub dataset: RawDataset,
    #[serde(default)]
    pub model: RawModel,
    #[serde(default)]
    pub optimizer: RawOptimizer,
    #[serde(default)]
    pub train: RawTrain,
    #[serde(default)]
    pub mc: RawMc,
    #[serde(default)]
    pub seeds: RawSeeds,
    #[serde(default)]
    pub poison: RawPoison,
    #[serde(default)]
    pub scan: RawScan,
    #[serde(default)]
    pub oracle: RawOracle,
    #[serde(default)]
    pub fit: RawFit,
    #[serde(default)]
    pub slice: RawSlice,
    #[serde(default)]
    pub volume: RawVolume,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDataset {
    /// swiss_roll | modulo | idx
    pub source: Option<String>,
    pub n: Option<usize>,
    pub noise: Option<f64>,
    pub test_n: Option<usize>,
    pub p: Option<usize>,
    pub fraction: Option<f64>,
    pub count: Option<usize>,
    pub images: Option<String>,
    pub labels: Option<String>,
    pub test_images: Option<String>,
    pub test_labels: Option<String>,
    pub class_proportions: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawModel {
    pub hidden_dims: Option<Vec<usize>>,
    /// cross_entropy | mse_onehot
    pub loss: Option<String>,
    /// 0 (default) infers from the dataset
    pub input_dim: Option<usize>,
    pub output_dim: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawOptimizer {
    /// sgd | adamw | sam_adamw
    pub kind: Option<String>,
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub weight_decay: Option<f64>,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTrain {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub checkpoint_epochs: Option<Vec<usize>>,
    pub target_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMc {
    pub directions: Option<usize>,
    pub threshold: Option<f64>,
    pub c_max: Option<f64>,
    pub scan_steps: Option<usize>,
    pub bisect_iters: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSeeds {
    pub model_seeds: Option<Vec<u64>>,
    pub split_seeds: Option<Vec<u64>>,
    pub mc_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPoison {
    pub counts: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawScan {
    pub sizes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawOracle {
    pub s: Option<Vec<f64>>,
    pub b: Option<Vec<f64>>,
    pub resolution: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawFit {
    /// (dataset size, log volume) pairs
    pub points: Option<Vec<(f64, f64)>>,
    pub n_params: Option<usize>,
    /// path to a data_scan result.json to fit instead of inline points
    pub from: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSlice {
    pub half_width: Option<f64>,
    pub steps: Option<usize>,
    /// dataset sizes of the minima spanning the plane (1 or 3 entries)
    pub sizes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawVolume {
    /// measure these checkpoint files instead of training fresh models
    pub checkpoints: Option<Vec<String>>,
}

// ---------------------------------------------------------------------------
// Resolved schema: every effective value explicit.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub kind: ExperimentKind,
    pub output: String,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub train: TrainBlock,
    pub mc: McBlock,
    pub seeds: SeedsBlock,
    pub poison: PoisonBlock,
    pub scan: ScanBlock,
    pub oracle: OracleBlock,
    pub fit: FitBlock,
    pub slice: SliceBlock,
    pub volume: VolumeBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetConfig {
    SwissRoll {
        n: usize,
        noise: f64,
        test_n: usize,
    },
    Modulo {
        p: usize,
        fraction: f64,
    },
    Idx {
        images: String,
        labels: String,
        test_images: String,
        test_labels: String,
        fraction: f64,
        count: usize,
        class_proportions: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub loss: LossKind,
}

impl ModelConfig {
    /// Concrete network spec with dims inferred from the dataset when left
    /// at zero.
    pub fn spec_for(&self, input_dim: usize, output_dim: usize) -> NetworkSpec {
        NetworkSpec::new(
            if self.input_dim == 0 { input_dim } else { self.input_dim },
            self.hidden_dims.clone(),
            if self.output_dim == 0 { output_dim } else { self.output_dim },
            self.loss,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainBlock {
    pub epochs: usize,
    pub batch_size: usize,
    pub checkpoint_epochs: Vec<usize>,
    pub target_loss: Option<f64>,
}

impl TrainBlock {
    pub fn to_train_config(&self, shuffle_seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            shuffle_seed,
            checkpoint_epochs: self.checkpoint_epochs.clone(),
            target_loss: self.target_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McBlock {
    pub directions: usize,
    pub threshold: f64,
    pub c_max: f64,
    pub scan_steps: usize,
    pub bisect_iters: usize,
}

impl McBlock {
    pub fn to_mc_config(&self, seed: u64) -> McConfig {
        McConfig {
            directions: self.directions,
            threshold: self.threshold,
            c_max: self.c_max,
            scan_steps: self.scan_steps,
            bisect_iters: self.bisect_iters,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedsBlock {
    pub model_seeds: Vec<u64>,
    pub split_seeds: Vec<u64>,
    pub mc_seed: u64,
}

impl SeedsBlock {
    /// Cartesian product of model seeds and split seeds, model-major.
    pub fn grid(&self) -> Vec<(u64, u64)> {
        let mut cells = Vec::with_capacity(self.model_seeds.len() * self.split_seeds.len());
        for &m in &self.model_seeds {
            for &s in &self.split_seeds {
                cells.push((m, s));
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonBlock {
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanBlock {
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleBlock {
    pub s: Vec<f64>,
    pub b: Vec<f64>,
    pub resolution: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitBlock {
    pub points: Vec<(f64, f64)>,
    pub n_params: usize,
    pub from: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceBlock {
    pub half_width: f64,
    pub steps: usize,
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeBlock {
    pub checkpoints: Vec<String>,
}

fn parse_loss(s: &str) -> Result<LossKind, CliError> {
    match s {
        "cross_entropy" => Ok(LossKind::CrossEntropy),
        "mse_onehot" => Ok(LossKind::MseOnehot),
        other => Err(CliError::Config(format!(
            "model.loss must be cross_entropy or mse_onehot, got \"{other}\""
        ))),
    }
}

fn parse_optimizer_kind(s: &str) -> Result<OptimizerKind, CliError> {
    match s {
        "sgd" => Ok(OptimizerKind::Sgd),
        "adamw" => Ok(OptimizerKind::Adamw),
        "sam_adamw" => Ok(OptimizerKind::SamAdamw),
        other => Err(CliError::Config(format!(
            "optimizer.kind must be sgd, adamw or sam_adamw, got \"{other}\""
        ))),
    }
}

impl RawConfig {
    pub fn from_toml(text: &str) -> Result<RawConfig, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config parse error: {e}")))
    }

    /// Fill in every default, validate, and fix the effective values.
    pub fn resolve(&self) -> Result<ResolvedConfig, CliError> {
        let kind = self
            .kind
            .ok_or_else(|| CliError::Config("missing required field: kind".into()))?;

        let loss = parse_loss(self.model.loss.as_deref().unwrap_or("cross_entropy"))?;
        let model = ModelConfig {
            input_dim: self.model.input_dim.unwrap_or(0),
            hidden_dims: self
                .model
                .hidden_dims
                .clone()
                .unwrap_or_else(|| vec![32, 32, 32, 32, 32]),
            output_dim: self.model.output_dim.unwrap_or(0),
            loss,
        };
        if model.hidden_dims.is_empty() || model.hidden_dims.iter().any(|&d| d == 0) {
            return Err(CliError::Config(
                "model.hidden_dims must be non-empty positive integers".into(),
            ));
        }

        let source = self.dataset.source.as_deref().unwrap_or("swiss_roll");
        let dataset = match source {
            "swiss_roll" => DatasetConfig::SwissRoll {
                n: self.dataset.n.unwrap_or(400),
                noise: self.dataset.noise.unwrap_or(0.1),
                test_n: self.dataset.test_n.unwrap_or(1000),
            },
            "modulo" => DatasetConfig::Modulo {
                p: self.dataset.p.unwrap_or(97),
                fraction: self.dataset.fraction.unwrap_or(0.3),
            },
            "idx" => {
                let need = |v: &Option<String>, name: &str| {
                    v.clone().ok_or_else(|| {
                        CliError::Config(format!("dataset.{name} is required for idx datasets"))
                    })
                };
                DatasetConfig::Idx {
                    images: need(&self.dataset.images, "images")?,
                    labels: need(&self.dataset.labels, "labels")?,
                    test_images: need(&self.dataset.test_images, "test_images")?,
                    test_labels: need(&self.dataset.test_labels, "test_labels")?,
                    fraction: self.dataset.fraction.unwrap_or(1.0),
                    count: self.dataset.count.unwrap_or(0),
                    class_proportions: self.dataset.class_proportions.clone().unwrap_or_default(),
                }
            }
            other => {
                return Err(CliError::Config(format!(
                    "dataset.source must be swiss_roll, modulo or idx, got \"{other}\""
                )))
            }
        };

        let opt_kind = parse_optimizer_kind(self.optimizer.kind.as_deref().unwrap_or("adamw"))?;
        let defaults = match opt_kind {
            OptimizerKind::Sgd => OptimizerConfig::sgd(),
            OptimizerKind::Adamw => OptimizerConfig::adamw(),
            OptimizerKind::SamAdamw => OptimizerConfig::sam_adamw(),
        };
        let optimizer = OptimizerConfig {
            kind: opt_kind,
            learning_rate: self.optimizer.learning_rate.unwrap_or(defaults.learning_rate),
            beta1: self.optimizer.beta1.unwrap_or(defaults.beta1),
            beta2: self.optimizer.beta2.unwrap_or(defaults.beta2),
            epsilon: self.optimizer.epsilon.unwrap_or(defaults.epsilon),
            weight_decay: self.optimizer.weight_decay.unwrap_or(defaults.weight_decay),
            rho: self.optimizer.rho.unwrap_or(defaults.rho),
        };
        optimizer
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;

        let train = TrainBlock {
            epochs: self.train.epochs.unwrap_or(2000),
            batch_size: self.train.batch_size.unwrap_or(32),
            checkpoint_epochs: self.train.checkpoint_epochs.clone().unwrap_or_default(),
            target_loss: self.train.target_loss,
        };
        train
            .to_train_config(0)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;

        // basin threshold defaults to 0.1, except mse_onehot tasks where
        // typical losses are much smaller and 0.01 is the meaningful scale
        let default_threshold = match loss {
            LossKind::CrossEntropy => 0.1,
            LossKind::MseOnehot => 0.01,
        };
        let mc = McBlock {
            directions: self.mc.directions.unwrap_or(500),
            threshold: self.mc.threshold.unwrap_or(default_threshold),
            c_max: self.mc.c_max.unwrap_or(50.0),
            scan_steps: self.mc.scan_steps.unwrap_or(100),
            bisect_iters: self.mc.bisect_iters.unwrap_or(20),
        };
        mc.to_mc_config(0)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;

        let seeds = SeedsBlock {
            model_seeds: self.seeds.model_seeds.clone().unwrap_or_else(|| vec![1]),
            split_seeds: self.seeds.split_seeds.clone().unwrap_or_else(|| vec![1]),
            mc_seed: self.seeds.mc_seed.unwrap_or(0),
        };
        if seeds.model_seeds.is_empty() || seeds.split_seeds.is_empty() {
            return Err(CliError::Config("seed lists must be non-empty".into()));
        }

        let resolved = ResolvedConfig {
            kind,
            output: self.output.clone().unwrap_or_else(|| "runs".into()),
            dataset,
            model,
            optimizer,
            train,
            mc,
            seeds,
            poison: PoisonBlock {
                counts: self.poison.counts.clone().unwrap_or_else(|| vec![8, 40, 80]),
            },
            scan: ScanBlock {
                sizes: self.scan.sizes.clone().unwrap_or_else(|| vec![20, 80, 400]),
            },
            oracle: OracleBlock {
                s: self.oracle.s.clone().unwrap_or_else(|| vec![0.2]),
                b: self.oracle.b.clone().unwrap_or_else(|| vec![1.0, 3.0]),
                resolution: self.oracle.resolution.unwrap_or(2000),
            },
            fit: FitBlock {
                points: self.fit.points.clone().unwrap_or_default(),
                n_params: self.fit.n_params.unwrap_or(0),
                from: self.fit.from.clone(),
            },
            slice: SliceBlock {
                half_width: self.slice.half_width.unwrap_or(1.0),
                steps: self.slice.steps.unwrap_or(20),
                sizes: self.slice.sizes.clone().unwrap_or_default(),
            },
            volume: VolumeBlock {
                checkpoints: self.volume.checkpoints.clone().unwrap_or_default(),
            },
        };
        Ok(resolved)
    }
}

impl ResolvedConfig {
    /// Echo the resolved form as TOML. Loading the echo resolves back to
    /// the identical configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("resolved config serializes")
    }

    /// Stable content hash of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("resolved config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut out = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }

    /// Directory this run writes into: `<root>/<kind>-<hash>` where root is
    /// the config output joined under `BASIN_OUT` when that is set and the
    /// output path is relative.
    pub fn run_dir(&self) -> std::path::PathBuf {
        let root = match std::env::var("BASIN_OUT") {
            Ok(base) if !Path::new(&self.output).is_absolute() => {
                Path::new(&base).join(&self.output)
            }
            _ => Path::new(&self.output).to_path_buf(),
        };
        root.join(format!("{}-{}", self.kind.as_str(), self.hash()))
    }
}

/// Apply `--set key.path=value` overrides onto the raw TOML document before
/// resolution. Values parse as TOML (so `[1,2]`, `0.5`, `"text"` all work;
/// bare words fall back to strings).
pub fn apply_overrides(text: &str, overrides: &[String]) -> Result<String, CliError> {
    let mut doc: toml::Table = toml::from_str(text)
        .map_err(|e| CliError::Config(format!("config parse error: {e}")))?;
    for entry in overrides {
        let (path, raw_value) = entry.split_once('=').ok_or_else(|| {
            CliError::Config(format!("override \"{entry}\" must look like key.path=value"))
        })?;
        // parse the right-hand side as a TOML value by wrapping it in a
        // one-line document; bare words fall back to strings
        let parse_value = |v: &str| -> Result<toml::Value, toml::de::Error> {
            let doc: toml::Table = format!("v = {v}").parse()?;
            Ok(doc["v"].clone())
        };
        let value = parse_value(raw_value)
            .or_else(|_| parse_value(&format!("\"{raw_value}\"")))
            .map_err(|e| CliError::Config(format!("override value \"{raw_value}\": {e}")))?;
        let keys: Vec<&str> = path.trim().split('.').collect();
        let mut cursor = &mut doc;
        for key in &keys[..keys.len() - 1] {
            cursor = cursor
                .entry(key.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| {
                    CliError::Config(format!("override path \"{path}\" crosses a non-table"))
                })?;
        }
        cursor.insert(keys[keys.len() - 1].to_string(), value);
    }
    Ok(toml::to_string(&doc).expect("table serializes"))
}

/// Sorted key/value view of a config for the resolved echo header.
pub fn summary_pairs(cfg: &ResolvedConfig) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    map.insert("kind".into(), cfg.kind.as_str().into());
    map.insert("hash".into(), cfg.hash());
    map.insert(
        "seed_grid".into(),
        format!(
            "{} model x {} split",
            cfg.seeds.model_seeds.len(),
            cfg.seeds.split_seeds.len()
        ),
    );
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_resolves_with_defaults() {
        let raw = RawConfig::from_toml("kind = \"train\"").unwrap();
        let cfg = raw.resolve().unwrap();
        assert_eq!(cfg.mc.directions, 500);
        assert_eq!(cfg.mc.threshold, 0.1);
        assert_eq!(cfg.mc.scan_steps, 100);
        assert_eq!(cfg.mc.bisect_iters, 20);
        assert_eq!(cfg.optimizer.learning_rate, 1e-3);
        assert_eq!(cfg.optimizer.weight_decay, 0.01);
        assert_eq!(cfg.seeds.model_seeds, vec![1]);
    }

    #[test]
    fn mse_tasks_default_to_small_threshold() {
        let raw = RawConfig::from_toml(
            "kind = \"grok\"\n[dataset]\nsource = \"modulo\"\n[model]\nloss = \"mse_onehot\"",
        )
        .unwrap();
        let cfg = raw.resolve().unwrap();
        assert_eq!(cfg.mc.threshold, 0.01);
    }

    #[test]
    fn echo_roundtrip_is_identity() {
        let raw = RawConfig::from_toml(
            "kind = \"poison_scan\"\noutput = \"out\"\n[seeds]\nmodel_seeds = [1,2]\nsplit_seeds = [3]\n",
        )
        .unwrap();
        let cfg = raw.resolve().unwrap();
        let echo = cfg.to_toml();
        let reloaded: ResolvedConfig = toml::from_str(&echo).unwrap();
        assert_eq!(reloaded, cfg);
        assert_eq!(reloaded.hash(), cfg.hash());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RawConfig::from_toml("kind = \"train\"\nbanana = 1").is_err());
        assert!(RawConfig::from_toml("kind = \"train\"\n[mc]\nk = 5").is_err());
    }

    #[test]
    fn overrides_apply_before_resolution() {
        let text = "kind = \"train\"\n[mc]\ndirections = 500";
        let patched = apply_overrides(
            text,
            &["mc.directions=50".into(), "seeds.mc_seed=7".into()],
        )
        .unwrap();
        let cfg = RawConfig::from_toml(&patched).unwrap().resolve().unwrap();
        assert_eq!(cfg.mc.directions, 50);
        assert_eq!(cfg.seeds.mc_seed, 7);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let raw = RawConfig::from_toml("kind = \"train\"\n[model]\nloss = \"hinge\"").unwrap();
        assert!(raw.resolve().is_err());
        let raw = RawConfig::from_toml("kind = \"train\"\n[seeds]\nmodel_seeds = []").unwrap();
        assert!(raw.resolve().is_err());
        let raw =
            RawConfig::from_toml("kind = \"train\"\n[optimizer]\nlearning_rate = -1.0").unwrap();
        assert!(raw.resolve().is_err());
    }
}
