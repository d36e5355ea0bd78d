//! Dataset generation, loading, subsetting, poisoning and imbalance, with
//! full provenance.
//!
//! Every dataset carries a replayable [`DataSource`] description and
//! per-row origin tags, so derived datasets can be reconstructed bit for bit
//! from their meta chain and disjointness between derived sets is checkable.

use std::collections::HashSet;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_key, Stream};

const TAG_SWISS: u64 = 0x5157;
const TAG_SUBSET: u64 = 0x5342;
const TAG_POISON_PICK: u64 = 0x504b;
const TAG_POISON_LABEL: u64 = 0x504c;

/// How many rows a subset takes from its parent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountSpec {
    Absolute(usize),
    Fraction(f64),
}

impl CountSpec {
    pub fn resolve(&self, parent_len: usize) -> Result<usize> {
        let count = match *self {
            CountSpec::Absolute(c) => c,
            CountSpec::Fraction(f) => {
                if !(0.0..=1.0).contains(&f) {
                    return Err(Error::InvalidArgument(format!(
                        "fraction must be in [0, 1], got {f}"
                    )));
                }
                (f * parent_len as f64).round() as usize
            }
        };
        if count > parent_len {
            return Err(Error::InvalidArgument(format!(
                "subset count {count} exceeds parent size {parent_len}"
            )));
        }
        Ok(count)
    }
}

/// Subset selection: how many rows, which split seed, and optional per-class
/// proportions for imbalanced subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub count: CountSpec,
    pub split_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_proportions: Option<Vec<f64>>,
}

/// Replayable description of where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    SwissRoll {
        n: usize,
        noise: f64,
        seed: u64,
    },
    Modulo {
        p: usize,
    },
    Idx {
        images: String,
        labels: String,
    },
    Subset {
        parent: Box<DataSource>,
        spec: SubsetSpec,
    },
    Poison {
        base: Box<DataSource>,
        source: Box<DataSource>,
        n_poison: usize,
        seed: u64,
    },
    /// Ad-hoc data (tests, caches); not replayable.
    Inline {
        name: String,
    },
}

/// Identifies a row of a root dataset: (root id, row index within the root).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowOrigin {
    pub root: u64,
    pub row: u64,
}

/// Provenance metadata attached to every dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// Short stable id derived from the source description.
    pub id: String,
    /// Replayable generation chain.
    pub source: DataSource,
    /// Human-readable description of the last transform.
    pub transform: String,
    /// Per-row provenance into root datasets.
    #[serde(skip)]
    pub origin: Vec<RowOrigin>,
    /// Rows (indices into this dataset) whose labels were deliberately
    /// corrupted.
    pub poisoned_rows: Vec<usize>,
    /// (mean, std) per feature column when the generator standardized its
    /// output; lets tests undo the transform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<(Vec<f64>, Vec<f64>)>,
}

/// Feature matrix (rows = samples), integer labels, provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<u32>,
    pub num_classes: usize,
    pub meta: DatasetMeta,
}

/// FNV-1a over a string; used for stable dataset ids.
fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn source_id(source: &DataSource) -> u64 {
    let json = serde_json::to_string(source).expect("source serializes");
    stable_hash(&json)
}

fn make_meta(source: DataSource, transform: String, origin: Vec<RowOrigin>) -> DatasetMeta {
    DatasetMeta {
        id: format!("{:016x}", source_id(&source)),
        source,
        transform,
        origin,
        poisoned_rows: Vec::new(),
        standardization: None,
    }
}

impl Dataset {
    /// Build a dataset from raw parts (tests and ad-hoc callers).
    pub fn from_parts(
        features: Array2<f64>,
        labels: Vec<u32>,
        num_classes: usize,
        name: &str,
    ) -> Dataset {
        assert_eq!(features.nrows(), labels.len(), "rows must match labels");
        let source = DataSource::Inline { name: name.to_string() };
        let root = source_id(&source);
        let origin = (0..labels.len() as u64).map(|row| RowOrigin { root, row }).collect();
        Dataset {
            features,
            labels,
            num_classes,
            meta: make_meta(source, format!("inline \"{name}\""), origin),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Rows at the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let dim = self.feature_dim();
        let mut features = Array2::zeros((indices.len(), dim));
        let mut labels = Vec::with_capacity(indices.len());
        let mut origin = Vec::with_capacity(indices.len());
        let poisoned: HashSet<usize> = self.meta.poisoned_rows.iter().copied().collect();
        let mut poisoned_rows = Vec::new();
        for (new_row, &i) in indices.iter().enumerate() {
            features.row_mut(new_row).assign(&self.features.row(i));
            labels.push(self.labels[i]);
            origin.push(self.meta.origin[i]);
            if poisoned.contains(&i) {
                poisoned_rows.push(new_row);
            }
        }
        let mut meta = make_meta(
            self.meta.source.clone(),
            format!("select {} rows", indices.len()),
            origin,
        );
        meta.poisoned_rows = poisoned_rows;
        Dataset {
            features,
            labels,
            num_classes: self.num_classes,
            meta,
        }
    }

    /// The dataset concatenated with itself (mean-reduction tests).
    pub fn duplicated(&self) -> Dataset {
        let indices: Vec<usize> = (0..self.len()).chain(0..self.len()).collect();
        self.select(&indices)
    }
}

/// Two interleaved 2D spirals, classes 0/1, balanced to within one sample,
/// standardized to zero mean and unit variance per feature.
///
/// Class c points are (t cos(t + c pi), t sin(t + c pi)) for t uniform in
/// [pi/2, 3.5 pi], plus isotropic Gaussian noise of scale `noise`.
pub fn gen_swiss_roll(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise must be >= 0, got {noise}"
        )));
    }
    let n0 = n - n / 2; // class 0 gets the extra sample when n is odd
    let mut stream = Stream::new(derive_key(seed, TAG_SWISS));
    let mut features = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    let (t_lo, t_hi) = (std::f64::consts::PI / 2.0, 3.5 * std::f64::consts::PI);
    for row in 0..n {
        let class = if row < n0 { 0u32 } else { 1u32 };
        let t = stream.next_range(t_lo, t_hi);
        let phase = t + class as f64 * std::f64::consts::PI;
        let x = t * phase.cos() + noise * stream.next_normal();
        let y = t * phase.sin() + noise * stream.next_normal();
        features[[row, 0]] = x;
        features[[row, 1]] = y;
        labels.push(class);
    }
    // standardize each column
    let mut means = vec![0.0; 2];
    let mut stds = vec![0.0; 2];
    for j in 0..2 {
        let col = features.column(j);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        means[j] = mean;
        stds[j] = std;
        if std > 0.0 {
            for v in features.column_mut(j) {
                *v = (*v - mean) / std;
            }
        }
    }
    let source = DataSource::SwissRoll { n, noise, seed };
    let root = source_id(&source);
    let origin = (0..n as u64).map(|row| RowOrigin { root, row }).collect();
    let mut meta = make_meta(
        source,
        format!("swiss roll n={n} noise={noise} seed={seed}"),
        origin,
    );
    meta.standardization = Some((means, stds));
    Ok(Dataset {
        features,
        labels,
        num_classes: 2,
        meta,
    })
}

/// Modular addition: all p^2 ordered pairs (a, b), features are the
/// concatenated one-hots of a and b (width 2p), label (a + b) mod p.
pub fn gen_modulo(p: usize) -> Result<Dataset> {
    if p < 2 {
        return Err(Error::InvalidArgument(format!("need p >= 2, got {p}")));
    }
    let n = p * p;
    let mut features = Array2::zeros((n, 2 * p));
    let mut labels = Vec::with_capacity(n);
    for a in 0..p {
        for b in 0..p {
            let row = a * p + b;
            features[[row, a]] = 1.0;
            features[[row, p + b]] = 1.0;
            labels.push(((a + b) % p) as u32);
        }
    }
    let source = DataSource::Modulo { p };
    let root = source_id(&source);
    let origin = (0..n as u64).map(|row| RowOrigin { root, row }).collect();
    Ok(Dataset {
        features,
        labels,
        num_classes: p,
        meta: make_meta(source, format!("modulo addition p={p}"), origin),
    })
}

fn read_u32_be(buf: &[u8], pos: usize, path: &str) -> Result<u32> {
    let bytes = buf.get(pos..pos + 4).ok_or_else(|| Error::BadIdxFile {
        path: path.to_string(),
        reason: "truncated header".to_string(),
    })?;
    Ok(u32::from_be_bytes(bytes.try_into().unwrap()))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

/// Load an IDX image/label pair (the MNIST family formats). Pixels are
/// scaled to [0, 1] and images flattened row-major.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_name = images_path.display().to_string();
    let lab_name = labels_path.display().to_string();

    let img = read_file(images_path)?;
    let magic = read_u32_be(&img, 0, &img_name)?;
    if magic != 2051 {
        return Err(Error::BadIdxFile {
            path: img_name,
            reason: format!("image magic {magic} != 2051"),
        });
    }
    let count = read_u32_be(&img, 4, &img_name)? as usize;
    let rows = read_u32_be(&img, 8, &img_name)? as usize;
    let cols = read_u32_be(&img, 12, &img_name)? as usize;
    let pixels = count * rows * cols;
    if img.len() != 16 + pixels {
        return Err(Error::BadIdxFile {
            path: img_name,
            reason: format!("expected {} payload bytes, found {}", pixels, img.len() - 16),
        });
    }

    let lab = read_file(labels_path)?;
    let magic = read_u32_be(&lab, 0, &lab_name)?;
    if magic != 2049 {
        return Err(Error::BadIdxFile {
            path: lab_name,
            reason: format!("label magic {magic} != 2049"),
        });
    }
    let lab_count = read_u32_be(&lab, 4, &lab_name)? as usize;
    if lab.len() != 8 + lab_count {
        return Err(Error::BadIdxFile {
            path: lab_name,
            reason: format!(
                "expected {} payload bytes, found {}",
                lab_count,
                lab.len() - 8
            ),
        });
    }
    if lab_count != count {
        return Err(Error::BadIdxFile {
            path: lab_name,
            reason: format!("label count {lab_count} != image count {count}"),
        });
    }

    let dim = rows * cols;
    let mut features = Array2::zeros((count, dim));
    for i in 0..count {
        for j in 0..dim {
            features[[i, j]] = img[16 + i * dim + j] as f64 / 255.0;
        }
    }
    let labels: Vec<u32> = lab[8..].iter().map(|&b| b as u32).collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0) as usize + 1;

    let source = DataSource::Idx {
        images: img_name,
        labels: lab_name,
    };
    let root = source_id(&source);
    let origin = (0..count as u64).map(|row| RowOrigin { root, row }).collect();
    Ok(Dataset {
        features,
        labels,
        num_classes,
        meta: make_meta(source, format!("idx {count} x {dim}"), origin),
    })
}

/// Largest-remainder apportionment of `count` rows across class weights.
fn class_quotas(weights: &[f64], count: usize) -> Result<Vec<usize>> {
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::InvalidArgument(
            "class proportions must be non-negative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument(
            "class proportions must not all be zero".into(),
        ));
    }
    let ideal: Vec<f64> = weights.iter().map(|w| w / total * count as f64).collect();
    let mut quotas: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // biggest fractional remainder first; ties broken by class index
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &class in order.iter().take(count - assigned) {
        quotas[class] += 1;
    }
    Ok(quotas)
}

/// Sample rows without replacement, deterministically in `split_seed`.
///
/// Selection is a prefix of a seeded permutation, so subsets of the same
/// parent with the same seed nest: a smaller count is a subset of a larger
/// one. With `class_proportions` set, per-class quotas are filled walking
/// the same permutation.
pub fn subset(parent: &Dataset, spec: &SubsetSpec) -> Result<Dataset> {
    let count = spec.count.resolve(parent.len())?;
    let mut stream = Stream::new(derive_key(spec.split_seed, TAG_SUBSET));
    let perm = stream.permutation(parent.len());
    let indices: Vec<usize> = match &spec.class_proportions {
        None => perm[..count].to_vec(),
        Some(weights) => {
            if weights.len() != parent.num_classes {
                return Err(Error::InvalidArgument(format!(
                    "{} class proportions for {} classes",
                    weights.len(),
                    parent.num_classes
                )));
            }
            let quotas = class_quotas(weights, count)?;
            let mut remaining = quotas.clone();
            let mut picked = Vec::with_capacity(count);
            for &i in &perm {
                let class = parent.labels[i] as usize;
                if remaining[class] > 0 {
                    remaining[class] -= 1;
                    picked.push(i);
                    if picked.len() == count {
                        break;
                    }
                }
            }
            if picked.len() < count {
                let class = remaining.iter().position(|&r| r > 0).unwrap();
                let available = parent.class_counts()[class];
                return Err(Error::InfeasibleQuota {
                    class: class as u32,
                    available,
                    requested: quotas[class],
                });
            }
            picked
        }
    };
    let mut out = parent.select(&indices);
    out.meta.source = DataSource::Subset {
        parent: Box::new(parent.meta.source.clone()),
        spec: spec.clone(),
    };
    out.meta.id = format!("{:016x}", source_id(&out.meta.source));
    out.meta.transform = format!(
        "subset {count} of {} (seed {})",
        parent.len(),
        spec.split_seed
    );
    out.meta.standardization = parent.meta.standardization.clone();
    Ok(out)
}

/// Append `n_poison` rows drawn from `source` to `base`, relabeling each
/// with a uniformly random incorrect class. Base rows are untouched;
/// appended rows are flagged in the meta.
pub fn poison(base: &Dataset, source: &Dataset, n_poison: usize, seed: u64) -> Result<Dataset> {
    if base.feature_dim() != source.feature_dim() || base.num_classes != source.num_classes {
        return Err(Error::DimensionMismatch(
            "poison source and base must share feature width and class count".into(),
        ));
    }
    if n_poison > source.len() {
        return Err(Error::PoisonSourceExhausted {
            requested: n_poison,
            available: source.len(),
        });
    }
    let base_rows: HashSet<RowOrigin> = base.meta.origin.iter().copied().collect();
    if let Some(shared) = source.meta.origin.iter().find(|o| base_rows.contains(o)) {
        return Err(Error::DatasetsOverlap(format!(
            "row {} of root {:016x} appears in both base and poison source",
            shared.row, shared.root
        )));
    }
    if base.num_classes < 2 {
        return Err(Error::InvalidArgument(
            "poisoning needs at least two classes".into(),
        ));
    }

    let mut pick = Stream::new(derive_key(seed, TAG_POISON_PICK));
    let chosen = pick.permutation(source.len());
    let chosen = &chosen[..n_poison];

    let dim = base.feature_dim();
    let n_total = base.len() + n_poison;
    let mut features = Array2::zeros((n_total, dim));
    let mut labels = Vec::with_capacity(n_total);
    let mut origin = Vec::with_capacity(n_total);
    for i in 0..base.len() {
        features.row_mut(i).assign(&base.features.row(i));
        labels.push(base.labels[i]);
        origin.push(base.meta.origin[i]);
    }
    let mut relabel = Stream::new(derive_key(seed, TAG_POISON_LABEL));
    let mut poisoned_rows = base.meta.poisoned_rows.clone();
    for (k, &src_row) in chosen.iter().enumerate() {
        let row = base.len() + k;
        features.row_mut(row).assign(&source.features.row(src_row));
        let orig = source.labels[src_row];
        let offset = 1 + relabel.next_below(base.num_classes as u64 - 1) as u32;
        labels.push((orig + offset) % base.num_classes as u32);
        origin.push(source.meta.origin[src_row]);
        poisoned_rows.push(row);
    }

    let src = DataSource::Poison {
        base: Box::new(base.meta.source.clone()),
        source: Box::new(source.meta.source.clone()),
        n_poison,
        seed,
    };
    let mut meta = make_meta(
        src,
        format!("{} base rows + {n_poison} poisoned", base.len()),
        origin,
    );
    meta.poisoned_rows = poisoned_rows;
    meta.standardization = base.meta.standardization.clone();
    Ok(Dataset {
        features,
        labels,
        num_classes: base.num_classes,
        meta,
    })
}

/// Replay a source description into the dataset it denotes.
pub fn reconstruct(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::SwissRoll { n, noise, seed } => gen_swiss_roll(*n, *noise, *seed),
        DataSource::Modulo { p } => gen_modulo(*p),
        DataSource::Idx { images, labels } => {
            load_idx(Path::new(images), Path::new(labels))
        }
        DataSource::Subset { parent, spec } => {
            let parent = reconstruct(parent)?;
            subset(&parent, spec)
        }
        DataSource::Poison {
            base,
            source,
            n_poison,
            seed,
        } => {
            let base = reconstruct(base)?;
            let source = reconstruct(source)?;
            poison(&base, &source, *n_poison, *seed)
        }
        DataSource::Inline { name } => Err(Error::InvalidArgument(format!(
            "inline dataset \"{name}\" is not replayable"
        ))),
    }
}
