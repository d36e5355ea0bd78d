//! Persistence formats owned by the CLI: checkpoint files, dataset caches,
//! radii dumps, estimate documents and result records.
//!
//! Checkpoints and caches are line-oriented text: a single JSON header line
//! followed by decimal 64-bit floats, one value (or row) per line. Shortest
//! round-trip decimal formatting keeps them diff-able and bit-exact across
//! write/read cycles.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::json;

use basin_core::data::{DataSource, Dataset};
use basin_core::nn::{NetworkSpec, ParameterVector};
use basin_core::volume::VolumeEstimate;

use crate::CliError;

/// Format an f64 as its shortest decimal that parses back bit-exactly.
pub fn format_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

fn parse_f64(s: &str) -> Result<f64, CliError> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s
            .parse()
            .map_err(|e| CliError::Data(format!("bad float \"{s}\": {e}"))),
    }
}

/// Header line of a checkpoint file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub spec: NetworkSpec,
    pub model_seed: u64,
    pub split_seed: u64,
    pub epoch: usize,
    pub n: usize,
}

/// Write a checkpoint: JSON header line, then one decimal float per line.
pub fn write_checkpoint(
    path: &Path,
    spec: &NetworkSpec,
    model_seed: u64,
    split_seed: u64,
    epoch: usize,
    params: &ParameterVector,
) -> Result<(), CliError> {
    let header = CheckpointHeader {
        format: "basin-checkpoint-v1".into(),
        spec: spec.clone(),
        model_seed,
        split_seed,
        epoch,
        n: params.len(),
    };
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &header).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(w)?;
    for &v in &params.values {
        writeln!(w, "{}", format_f64(v))?;
    }
    Ok(())
}

/// Read a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, ParameterVector), CliError> {
    let file = fs::File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open checkpoint {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| CliError::Data("empty checkpoint file".into()))??;
    let header: CheckpointHeader = serde_json::from_str(&header_line)
        .map_err(|e| CliError::Data(format!("bad checkpoint header: {e}")))?;
    if header.format != "basin-checkpoint-v1" {
        return Err(CliError::Data(format!(
            "unknown checkpoint format \"{}\"",
            header.format
        )));
    }
    let mut values = Vec::with_capacity(header.n);
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        values.push(parse_f64(&line)?);
    }
    if values.len() != header.n {
        return Err(CliError::Data(format!(
            "checkpoint holds {} values, header says {}",
            values.len(),
            header.n
        )));
    }
    let params = ParameterVector::from_values(header.spec.layout(), values)
        .map_err(|e| CliError::Data(e.to_string()))?;
    Ok((header, params))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetCacheHeader {
    pub format: String,
    pub source: DataSource,
    pub n: usize,
    pub dim: usize,
    pub classes: usize,
}

/// Write a dataset cache: JSON header line, then one row per line as
/// `label v1 v2 ...` in decimal floats.
pub fn write_dataset_cache(path: &Path, dataset: &Dataset) -> Result<(), CliError> {
    let header = DatasetCacheHeader {
        format: "basin-dataset-v1".into(),
        source: dataset.meta.source.clone(),
        n: dataset.len(),
        dim: dataset.feature_dim(),
        classes: dataset.num_classes,
    };
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &header).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(w)?;
    for i in 0..dataset.len() {
        write!(w, "{}", dataset.labels[i])?;
        for v in dataset.features.row(i) {
            write!(w, " {}", format_f64(*v))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Read a dataset cache written by [`write_dataset_cache`].
pub fn read_dataset_cache(path: &Path) -> Result<Dataset, CliError> {
    let file = fs::File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open dataset {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| CliError::Data("empty dataset cache".into()))??;
    let header: DatasetCacheHeader = serde_json::from_str(&header_line)
        .map_err(|e| CliError::Data(format!("bad dataset header: {e}")))?;
    if header.format != "basin-dataset-v1" {
        return Err(CliError::Data(format!(
            "unknown dataset format \"{}\"",
            header.format
        )));
    }
    let mut features = Array2::zeros((header.n, header.dim));
    let mut labels = Vec::with_capacity(header.n);
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        if row >= header.n {
            return Err(CliError::Data("more rows than the header declares".into()));
        }
        let mut parts = line.split(' ');
        let label: u32 = parts
            .next()
            .unwrap()
            .parse()
            .map_err(|e| CliError::Data(format!("bad label on row {row}: {e}")))?;
        labels.push(label);
        for j in 0..header.dim {
            let tok = parts.next().ok_or_else(|| {
                CliError::Data(format!("row {row} has fewer than {} values", header.dim))
            })?;
            features[[row, j]] = parse_f64(tok)?;
        }
    }
    if labels.len() != header.n {
        return Err(CliError::Data(format!(
            "dataset holds {} rows, header says {}",
            labels.len(),
            header.n
        )));
    }
    let mut out = Dataset::from_parts(features, labels, header.classes, "cache");
    out.meta.source = header.source;
    Ok(out)
}

/// One row per direction: index, radius, censored, crossing step.
pub fn write_radii_dump(path: &Path, estimate: &VolumeEstimate) -> Result<(), CliError> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "index,radius,censored,crossing_step")?;
    for r in &estimate.radii {
        writeln!(
            w,
            "{},{},{},{}",
            r.direction_index,
            format_f64(r.radius),
            r.censored,
            r.crossing_step.map_or(String::new(), |s| s.to_string()),
        )?;
    }
    Ok(())
}

/// JSON view of a volume estimate; a collapsed (-inf) log volume is
/// serialized as null with the `collapsed` flag set.
pub fn estimate_to_json(estimate: &VolumeEstimate) -> serde_json::Value {
    let log_volume = if estimate.collapsed() {
        serde_json::Value::Null
    } else {
        json!(estimate.log_volume)
    };
    json!({
        "n_params": estimate.n_params,
        "threshold": estimate.threshold,
        "k": estimate.k,
        "log_volume": log_volume,
        "collapsed": estimate.collapsed(),
        "censored_fraction": estimate.censored_fraction(),
        "landscape_dataset_id": estimate.landscape_dataset_id,
        "c_max": estimate.c_max,
    })
}

/// The deterministic result document of a run. Wall-clock time lives in a
/// sidecar file so that identical configs reproduce this payload bit for
/// bit.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub kind: String,
    pub toolkit_version: String,
    pub payload: serde_json::Value,
}

pub fn write_result(
    dir: &Path,
    record: &ResultRecord,
    wall_clock_secs: f64,
    flagged_seeds: usize,
) -> Result<(), CliError> {
    let result_path = dir.join("result.json");
    let json = serde_json::to_string_pretty(record).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(&result_path, json + "\n")?;
    let info = json!({
        "wall_clock_secs": wall_clock_secs,
        "flagged_seeds": flagged_seeds,
    });
    fs::write(
        dir.join("run_info.json"),
        serde_json::to_string_pretty(&info).unwrap() + "\n",
    )?;
    Ok(())
}

/// Write a comma-separated table with a header row.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<(), CliError> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use basin_core::data::gen_swiss_roll;
    use basin_core::nn::{init_params, LossKind};

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = NetworkSpec::new(2, vec![5, 3], 2, LossKind::CrossEntropy);
        let params = init_params(&spec, 42).unwrap();
        let path = dir.path().join("model.ckpt");
        write_checkpoint(&path, &spec, 42, 7, 10, &params).unwrap();
        let (header, loaded) = read_checkpoint(&path).unwrap();
        assert_eq!(header.epoch, 10);
        assert_eq!(header.spec, spec);
        assert_eq!(loaded.values.len(), params.values.len());
        for (a, b) in loaded.values.iter().zip(&params.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn dataset_cache_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data = gen_swiss_roll(37, 0.1, 5).unwrap();
        let path = dir.path().join("data.txt");
        write_dataset_cache(&path, &data).unwrap();
        let loaded = read_dataset_cache(&path).unwrap();
        assert_eq!(loaded.labels, data.labels);
        assert_eq!(loaded.num_classes, data.num_classes);
        for (a, b) in loaded.features.iter().zip(data.features.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(loaded.meta.source, data.meta.source);
    }

    #[test]
    fn float_formatting_roundtrips_edge_values() {
        for &v in &[
            0.0,
            -0.0,
            1.0 / 3.0,
            f64::MIN_POSITIVE,
            f64::MAX,
            -1.2345678901234567e-300,
        ] {
            let s = format_f64(v);
            let back = parse_f64(&s).unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "{s}");
        }
        assert_eq!(parse_f64("inf").unwrap(), f64::INFINITY);
        assert_eq!(parse_f64("-inf").unwrap(), f64::NEG_INFINITY);
    }
}
