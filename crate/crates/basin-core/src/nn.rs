//! MLP networks over a flat parameter vector.
//!
//! A [`NetworkSpec`] fixes the architecture; parameters live in a
//! [`ParameterVector`], a flat `Vec<f64>` plus a [`Layout`] that maps every
//! index to its (layer, weight/bias) group. Keeping parameters flat is what
//! the basin measurements need: perturbation directions, filter norms and
//! layer rescalings are all element-wise operations on the same flat space.
//!
//! Loss reductions use an exactly rounded summation over per-sample terms,
//! so the mean loss is bit-identical under dataset duplication and
//! independent of sample order.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{derive_key, Stream};

/// Hidden-layer activation. Only ReLU is supported; the layer-pair rescaling
/// identity relies on its positive homogeneity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

/// Which loss the network is trained and measured with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax cross-entropy, mean over samples.
    CrossEntropy,
    /// Squared error against one-hot targets, mean over samples and output
    /// coordinates.
    MseOnehot,
}

/// Architecture description: dims, activation and loss.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub loss_kind: LossKind,
}

impl NetworkSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        output_dim: usize,
        loss_kind: LossKind,
    ) -> Self {
        NetworkSpec {
            input_dim,
            hidden_dims,
            output_dim,
            activation: Activation::Relu,
            loss_kind,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidSpec("dims must be >= 1".into()));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::InvalidSpec("hidden_dims must be non-empty".into()));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidSpec("hidden dims must be >= 1".into()));
        }
        Ok(())
    }

    /// All layer widths, input first, output last.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims
    }

    /// Number of linear layers (= hidden layers + output layer).
    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    /// Total parameter count: sum over layers of fan_in * fan_out + fan_out.
    pub fn param_count(&self) -> usize {
        let dims = self.layer_dims();
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Build the flat-index layout for this architecture.
    pub fn layout(&self) -> Layout {
        let dims = self.layer_dims();
        let mut groups = Vec::with_capacity(2 * self.num_layers());
        let mut offset = 0;
        for (layer, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            groups.push(ParamGroup {
                id: groups.len(),
                kind: GroupKind::Weight,
                layer,
                offset,
                rows: fan_in,
                cols: fan_out,
            });
            offset += fan_in * fan_out;
            groups.push(ParamGroup {
                id: groups.len(),
                kind: GroupKind::Bias,
                layer,
                offset,
                rows: 1,
                cols: fan_out,
            });
            offset += fan_out;
        }
        Layout { groups, len: offset }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Weight,
    Bias,
}

/// One contiguous parameter group (a layer's weight matrix or bias vector).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamGroup {
    pub id: usize,
    pub kind: GroupKind,
    pub layer: usize,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamGroup {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Index layout of a flat parameter vector: an exact partition of [0, len)
/// into weight and bias groups, one of each per layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub groups: Vec<ParamGroup>,
    pub len: usize,
}

/// Flat parameter vector plus its layout: the point in parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl ParameterVector {
    pub fn zeros(layout: Layout) -> Self {
        ParameterVector {
            values: vec![0.0; layout.len],
            layout,
        }
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len {
            return Err(Error::DimensionMismatch(format!(
                "layout expects {} values, got {}",
                layout.len,
                values.len()
            )));
        }
        Ok(ParameterVector { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn group_slice(&self, group: &ParamGroup) -> &[f64] {
        &self.values[group.range()]
    }

    /// View a weight group as a (fan_in, fan_out) matrix.
    fn weight_view(&self, group: &ParamGroup) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((group.rows, group.cols), self.group_slice(group))
            .expect("group shape matches slice length")
    }
}

/// Fan-in-scaled uniform initialization: weights uniform in
/// +/- sqrt(1/fan_in), biases zero. Deterministic in (spec, seed).
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<ParameterVector> {
    spec.validate()?;
    let layout = spec.layout();
    let mut values = vec![0.0; layout.len];
    let mut stream = Stream::new(derive_key(seed, 0x1217));
    for group in &layout.groups {
        if group.kind == GroupKind::Weight {
            let bound = (1.0 / group.rows as f64).sqrt();
            for v in &mut values[group.range()] {
                *v = stream.next_range(-bound, bound);
            }
        }
    }
    Ok(ParameterVector { values, layout })
}

/// Forward pass over a batch: rows of `inputs` are samples, output rows are
/// raw logits (no softmax).
pub fn forward(
    spec: &NetworkSpec,
    params: &ParameterVector,
    inputs: &Array2<f64>,
) -> Result<Array2<f64>> {
    forward_flat(spec, &params.layout, &params.values, inputs)
}

/// Forward pass over flat parameter values; the volume estimator calls this
/// directly on perturbation buffers without building a `ParameterVector`.
pub(crate) fn forward_flat(
    spec: &NetworkSpec,
    layout: &Layout,
    values: &[f64],
    inputs: &Array2<f64>,
) -> Result<Array2<f64>> {
    if inputs.ncols() != spec.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "input width {} != spec input_dim {}",
            inputs.ncols(),
            spec.input_dim
        )));
    }
    if values.len() != spec.param_count() {
        return Err(Error::DimensionMismatch(format!(
            "parameter vector length {} != spec count {}",
            values.len(),
            spec.param_count()
        )));
    }
    let num_layers = spec.num_layers();
    let mut h = inputs.to_owned();
    for layer in 0..num_layers {
        let w = &layout.groups[2 * layer];
        let b = &layout.groups[2 * layer + 1];
        let w_view = ArrayView2::from_shape((w.rows, w.cols), &values[w.range()])
            .expect("group shape matches slice length");
        let mut z = h.dot(&w_view);
        let bias = &values[b.range()];
        for mut row in z.rows_mut() {
            for (zj, bj) in row.iter_mut().zip(bias) {
                *zj += bj;
            }
        }
        if layer + 1 < num_layers {
            z.mapv_inplace(|v| v.max(0.0));
        }
        h = z;
    }
    Ok(h)
}

/// Exactly rounded sum of f64 terms (Shewchuk-style partials, as in
/// Python's `math.fsum`). Order-insensitive, which makes mean reductions
/// bit-stable under dataset duplication.
pub(crate) fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    partials.iter().sum()
}

fn per_sample_losses(
    spec: &NetworkSpec,
    outputs: &Array2<f64>,
    labels: &[u32],
) -> Vec<f64> {
    let classes = spec.output_dim;
    outputs
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &label)| match spec.loss_kind {
            LossKind::CrossEntropy => {
                // max-subtracted log-sum-exp; stays finite when logits
                // explode at large perturbation radii
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
                max + sum.ln() - row[label as usize]
            }
            LossKind::MseOnehot => {
                let mut sse = 0.0;
                for (j, &z) in row.iter().enumerate() {
                    let t = if j == label as usize { 1.0 } else { 0.0 };
                    let d = z - t;
                    sse += d * d;
                }
                sse / classes as f64
            }
        })
        .collect()
}

fn check_labels(dataset: &Dataset, classes: usize) -> Result<()> {
    for &label in &dataset.labels {
        if label as usize >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
    }
    Ok(())
}

/// Mean per-sample loss over the dataset.
pub fn loss_mean(spec: &NetworkSpec, params: &ParameterVector, dataset: &Dataset) -> Result<f64> {
    loss_mean_flat(spec, &params.layout, &params.values, dataset)
}

pub(crate) fn loss_mean_flat(
    spec: &NetworkSpec,
    layout: &Layout,
    values: &[f64],
    dataset: &Dataset,
) -> Result<f64> {
    if dataset.len() == 0 {
        return Err(Error::EmptyDataset);
    }
    check_labels(dataset, spec.output_dim)?;
    let outputs = forward_flat(spec, layout, values, &dataset.features)?;
    let losses = per_sample_losses(spec, &outputs, &dataset.labels);
    Ok(exact_sum(losses) / dataset.len() as f64)
}

/// Gradient of [`loss_mean`] over the batch, in the same layout as `params`.
pub fn grad(spec: &NetworkSpec, params: &ParameterVector, batch: &Dataset) -> Result<ParameterVector> {
    if batch.len() == 0 {
        return Err(Error::EmptyDataset);
    }
    check_labels(batch, spec.output_dim)?;
    let num_layers = spec.num_layers();
    let n = batch.len() as f64;

    // Forward, keeping pre-activations for the ReLU mask and activations for
    // the weight gradients.
    let mut activations: Vec<Array2<f64>> = Vec::with_capacity(num_layers + 1);
    activations.push(batch.features.to_owned());
    let mut pre_acts: Vec<Array2<f64>> = Vec::with_capacity(num_layers);
    for layer in 0..num_layers {
        let w = &params.layout.groups[2 * layer];
        let b = &params.layout.groups[2 * layer + 1];
        let mut z = activations[layer].dot(&params.weight_view(w));
        let bias = params.group_slice(b);
        for mut row in z.rows_mut() {
            for (zj, bj) in row.iter_mut().zip(bias) {
                *zj += bj;
            }
        }
        pre_acts.push(z.clone());
        if layer + 1 < num_layers {
            z.mapv_inplace(|v| v.max(0.0));
        }
        activations.push(z);
    }

    // dL/dz at the output.
    let outputs = &pre_acts[num_layers - 1];
    let mut dz = match spec.loss_kind {
        LossKind::CrossEntropy => {
            let mut dz = Array2::zeros(outputs.raw_dim());
            for (i, row) in outputs.rows().into_iter().enumerate() {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Array1<f64> = row.mapv(|z| (z - max).exp());
                let sum = exps.sum();
                let label = batch.labels[i] as usize;
                for (j, &e) in exps.iter().enumerate() {
                    let softmax = e / sum;
                    let t = if j == label { 1.0 } else { 0.0 };
                    dz[[i, j]] = (softmax - t) / n;
                }
            }
            dz
        }
        LossKind::MseOnehot => {
            let classes = spec.output_dim as f64;
            let mut dz = outputs.clone();
            for (i, mut row) in dz.rows_mut().into_iter().enumerate() {
                let label = batch.labels[i] as usize;
                for (j, v) in row.iter_mut().enumerate() {
                    let t = if j == label { 1.0 } else { 0.0 };
                    *v = 2.0 * (*v - t) / (n * classes);
                }
            }
            dz
        }
    };

    let mut grad_values = vec![0.0; params.len()];
    for layer in (0..num_layers).rev() {
        let w = &params.layout.groups[2 * layer];
        let b = &params.layout.groups[2 * layer + 1];
        let gw = activations[layer].t().dot(&dz);
        grad_values[w.range()].copy_from_slice(gw.as_slice().expect("contiguous"));
        let gb = dz.sum_axis(Axis(0));
        grad_values[b.range()].copy_from_slice(gb.as_slice().expect("contiguous"));
        if layer > 0 {
            let dh = dz.dot(&params.weight_view(w).t());
            let mask = &pre_acts[layer - 1];
            dz = dh;
            dz.zip_mut_with(mask, |d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
        }
    }
    ParameterVector::from_values(params.layout.clone(), grad_values)
}

/// Scale layer `layer_index` (weights and biases) by `alpha` and the next
/// layer's weights by `1/alpha`. With ReLU activations the network function
/// is unchanged.
pub fn rescale_layer_pair(
    params: &ParameterVector,
    layer_index: usize,
    alpha: f64,
) -> Result<ParameterVector> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "alpha must be a positive finite float, got {alpha}"
        )));
    }
    let num_layers = params.layout.groups.len() / 2;
    if layer_index + 1 >= num_layers {
        return Err(Error::InvalidArgument(format!(
            "layer_index {layer_index} has no following layer (network has {num_layers} layers)"
        )));
    }
    let mut out = params.clone();
    let w = params.layout.groups[2 * layer_index];
    let b = params.layout.groups[2 * layer_index + 1];
    let w_next = params.layout.groups[2 * (layer_index + 1)];
    for v in &mut out.values[w.range()] {
        *v *= alpha;
    }
    for v in &mut out.values[b.range()] {
        *v *= alpha;
    }
    for v in &mut out.values[w_next.range()] {
        *v *= 1.0 / alpha;
    }
    Ok(out)
}

/// Per-index filter norms: F[j] = Euclidean norm of the parameter group
/// containing j. Weight and bias groups each get their own norm; zero-norm
/// groups yield zeros.
pub fn filter_norms(params: &ParameterVector) -> ParameterVector {
    let mut values = vec![0.0; params.len()];
    for group in &params.layout.groups {
        let norm = params.group_slice(group)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        for v in &mut values[group.range()] {
            *v = norm;
        }
    }
    ParameterVector {
        values,
        layout: params.layout.clone(),
    }
}
