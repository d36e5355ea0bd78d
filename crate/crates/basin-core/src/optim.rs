//! Optimizers and the training loop.
//!
//! Training is deterministic: batch order comes from the counter-based RNG
//! keyed by (shuffle seed, epoch), and every update is a pure function of
//! the previous state, so a fixed (spec, data, seeds, config) reproduces a
//! [`TrainResult`] bit for bit.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, NetworkSpec, ParameterVector};
use crate::rng::{derive_key, Stream};

const TAG_SHUFFLE: u64 = 0x5348;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adamw,
    SamAdamw,
}

/// Optimizer hyperparameters. The Adam-family fields are ignored by plain
/// SGD; `rho` is the SAM neighborhood radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub rho: f64,
}

impl OptimizerConfig {
    /// AdamW defaults: lr 1e-3, betas (0.9, 0.999), eps 1e-8, wd 0.01.
    pub fn adamw() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adamw,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            rho: 0.0,
        }
    }

    /// Plain SGD, default lr 0.01.
    pub fn sgd() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate: 0.01,
            ..Self::adamw()
        }
    }

    /// SAM with an AdamW base step; default neighborhood rho 0.05.
    pub fn sam_adamw() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::SamAdamw,
            rho: 0.05,
            ..Self::adamw()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("betas must be in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(
                "epsilon must be > 0 and weight_decay >= 0".into(),
            ));
        }
        if self.kind == OptimizerKind::SamAdamw && !(self.rho > 0.0) {
            return Err(Error::InvalidArgument(
                "rho must be > 0 for sam_adamw".into(),
            ));
        }
        Ok(())
    }
}

/// Epoch budget, batching, checkpointing and early stop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    /// Epochs at which a parameter snapshot is kept (sorted, each <= epochs;
    /// 0 snapshots the initialization).
    pub checkpoint_epochs: Vec<usize>,
    /// Stop after the first epoch whose full-dataset train loss falls to or
    /// below this value.
    pub target_loss: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if self
            .checkpoint_epochs
            .windows(2)
            .any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidArgument(
                "checkpoint_epochs must be strictly increasing".into(),
            ));
        }
        if self.checkpoint_epochs.iter().any(|&e| e > self.epochs) {
            return Err(Error::InvalidArgument(
                "checkpoint epochs must not exceed the epoch budget".into(),
            ));
        }
        Ok(())
    }
}

/// Everything a training run produces. Curves are per completed epoch.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub final_params: ParameterVector,
    pub train_loss_curve: Vec<f64>,
    pub test_loss_curve: Vec<f64>,
    pub test_accuracy_curve: Vec<f64>,
    pub checkpoints: Vec<(usize, ParameterVector)>,
    /// Set when a target loss was configured: whether it was reached within
    /// the epoch budget.
    pub target_reached: Option<bool>,
}

impl TrainResult {
    pub fn completed_epochs(&self) -> usize {
        self.train_loss_curve.len()
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.train_loss_curve.last().copied()
    }
}

/// One SGD step: params - lr * grad.
pub fn step_sgd(params: &ParameterVector, grad: &ParameterVector, lr: f64) -> ParameterVector {
    let mut out = params.clone();
    for (p, g) in out.values.iter_mut().zip(&grad.values) {
        *p -= lr * g;
    }
    out
}

/// First/second moment state for the Adam family.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }
}

/// One AdamW step with bias correction; decoupled weight decay is applied
/// to the parameters before the Adam update. `t` is the 1-based step index.
pub fn step_adamw(
    state: &mut AdamState,
    params: &ParameterVector,
    grad: &ParameterVector,
    cfg: &OptimizerConfig,
    t: usize,
) -> ParameterVector {
    debug_assert!(t >= 1);
    let mut out = params.clone();
    let bias1 = 1.0 - cfg.beta1.powi(t as i32);
    let bias2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..out.values.len() {
        let g = grad.values[i];
        out.values[i] -= cfg.learning_rate * cfg.weight_decay * out.values[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        out.values[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    out
}

/// SAM ascent offset rho * g / ||g||, or None for a zero gradient (the step
/// then falls through to the base optimizer).
pub fn sam_ascent(grad: &ParameterVector, rho: f64) -> Option<Vec<f64>> {
    let norm = grad.values.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    Some(grad.values.iter().map(|g| rho * g / norm).collect())
}

/// One SAM step on a batch: gradient ascent to the worst nearby point, then
/// the base optimizer update applied at the original parameters using the
/// gradient from the perturbed point.
pub fn step_sam(
    spec: &NetworkSpec,
    params: &ParameterVector,
    batch: &Dataset,
    cfg: &OptimizerConfig,
    state: &mut AdamState,
    t: usize,
) -> Result<ParameterVector> {
    let g = nn::grad(spec, params, batch)?;
    let g_used = match sam_ascent(&g, cfg.rho) {
        None => g,
        Some(eps) => {
            let mut perturbed = params.clone();
            for (p, e) in perturbed.values.iter_mut().zip(&eps) {
                *p += e;
            }
            nn::grad(spec, &perturbed, batch)?
        }
    };
    Ok(step_adamw(state, params, &g_used, cfg, t))
}

/// Accuracy of argmax predictions; ties go to the lowest class index.
pub fn evaluate_accuracy(
    spec: &NetworkSpec,
    params: &ParameterVector,
    dataset: &Dataset,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let outputs = nn::forward(spec, params, &dataset.features)?;
    let mut correct = 0usize;
    for (row, &label) in outputs.rows().into_iter().zip(&dataset.labels) {
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == label as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Train for up to `tc.epochs` full shuffled passes, recording per-epoch
/// loss/accuracy curves and checkpoints, early-stopping once the
/// full-dataset train loss reaches `tc.target_loss`.
pub fn train(
    spec: &NetworkSpec,
    train_data: &Dataset,
    test_data: &Dataset,
    init: &ParameterVector,
    opt: &OptimizerConfig,
    tc: &TrainConfig,
) -> Result<TrainResult> {
    spec.validate()?;
    tc.validate()?;
    if train_data.feature_dim() != spec.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "train data width {} != spec input_dim {}",
            train_data.feature_dim(),
            spec.input_dim
        )));
    }
    if train_data.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut params = init.clone();
    let mut state = AdamState::new(params.len());
    let mut step_index = 0usize;
    let mut result = TrainResult {
        final_params: params.clone(),
        train_loss_curve: Vec::new(),
        test_loss_curve: Vec::new(),
        test_accuracy_curve: Vec::new(),
        checkpoints: Vec::new(),
        target_reached: tc.target_loss.map(|_| false),
    };
    if tc.checkpoint_epochs.first() == Some(&0) {
        result.checkpoints.push((0, params.clone()));
    }

    let n = train_data.len();
    for epoch in 1..=tc.epochs {
        let mut shuffle = Stream::new(derive_key(tc.shuffle_seed, TAG_SHUFFLE ^ epoch as u64));
        let perm = shuffle.permutation(n);
        for batch_indices in perm.chunks(tc.batch_size) {
            let batch = train_data.select(batch_indices);
            step_index += 1;
            params = match opt.kind {
                OptimizerKind::Sgd => {
                    let g = nn::grad(spec, &params, &batch)?;
                    step_sgd(&params, &g, opt.learning_rate)
                }
                OptimizerKind::Adamw => {
                    let g = nn::grad(spec, &params, &batch)?;
                    step_adamw(&mut state, &params, &g, opt, step_index)
                }
                OptimizerKind::SamAdamw => {
                    step_sam(spec, &params, &batch, opt, &mut state, step_index)?
                }
            };
        }

        let train_loss = nn::loss_mean(spec, &params, train_data)?;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let test_loss = nn::loss_mean(spec, &params, test_data)?;
        let test_acc = evaluate_accuracy(spec, &params, test_data)?;
        result.train_loss_curve.push(train_loss);
        result.test_loss_curve.push(test_loss);
        result.test_accuracy_curve.push(test_acc);
        if tc.checkpoint_epochs.binary_search(&epoch).is_ok() {
            result.checkpoints.push((epoch, params.clone()));
        }
        if let Some(target) = tc.target_loss {
            if train_loss <= target {
                result.target_reached = Some(true);
                break;
            }
        }
    }

    result.final_params = params;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_swiss_roll;
    use crate::nn::{init_params, LossKind};

    fn quadratic_spec() -> NetworkSpec {
        NetworkSpec::new(2, vec![4], 2, LossKind::CrossEntropy)
    }

    #[test]
    fn sgd_step_arithmetic() {
        let spec = quadratic_spec();
        let mut p = ParameterVector::zeros(spec.layout());
        let mut g = ParameterVector::zeros(spec.layout());
        p.values[0] = 1.0;
        g.values[0] = 0.5;
        let q = step_sgd(&p, &g, 0.1);
        assert!((q.values[0] - 0.95).abs() < 1e-15);
        // zero gradient and zero lr leave params untouched
        let zero = ParameterVector::zeros(spec.layout());
        assert_eq!(step_sgd(&p, &zero, 0.1).values, p.values);
        assert_eq!(step_sgd(&p, &g, 0.0).values, p.values);
    }

    #[test]
    fn adamw_first_step_matches_hand_computation() {
        let spec = quadratic_spec();
        let mut p = ParameterVector::zeros(spec.layout());
        let mut g = ParameterVector::zeros(spec.layout());
        p.values[0] = 1.0;
        g.values[0] = 1.0;
        let cfg = OptimizerConfig::adamw();
        let mut state = AdamState::new(p.len());
        let q = step_adamw(&mut state, &p, &g, &cfg, 1);
        // decay: 1 - 1e-3*0.01 = 0.99999; update ~ lr * 1 / (1 + 1e-8)
        let expected = 0.99999 - 1e-3 / (1.0 + 1e-8);
        assert!((q.values[0] - expected).abs() < 1e-12, "{}", q.values[0]);
        assert!((q.values[0] - 0.99899).abs() < 1e-5);
    }

    #[test]
    fn adamw_zero_grad_is_pure_decay() {
        let spec = quadratic_spec();
        let mut p = ParameterVector::zeros(spec.layout());
        p.values[0] = 2.0;
        let g = ParameterVector::zeros(spec.layout());
        let cfg = OptimizerConfig::adamw();
        let mut state = AdamState::new(p.len());
        let q = step_adamw(&mut state, &p, &g, &cfg, 1);
        assert!((q.values[0] - 2.0 * (1.0 - cfg.learning_rate * cfg.weight_decay)).abs() < 1e-15);
    }

    #[test]
    fn adamw_without_decay_matches_plain_adam_on_quadratic() {
        // adam with wd = 0 must follow the same trajectory as the analytic
        // adam recursion on a 1-d quadratic loss (w - 3)^2 / 2, grad = w - 3
        let spec = quadratic_spec();
        let mut cfg = OptimizerConfig::adamw();
        cfg.weight_decay = 0.0;
        let mut state = AdamState::new(spec.param_count());
        let mut p = ParameterVector::zeros(spec.layout());
        p.values[0] = 10.0;

        let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 10.0f64);
        for t in 1..=25 {
            let mut g = ParameterVector::zeros(spec.layout());
            g.values[0] = p.values[0] - 3.0;
            p = step_adamw(&mut state, &p, &g, &cfg, t);

            let gr = w - 3.0;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * gr;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * gr * gr;
            let mh = m / (1.0 - cfg.beta1.powi(t as i32));
            let vh = v / (1.0 - cfg.beta2.powi(t as i32));
            w -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
            assert_eq!(p.values[0].to_bits(), w.to_bits(), "step {t}");
        }
    }

    #[test]
    fn sam_ascent_composition_hand_example() {
        // 1-d loss w^2/2 at w = 1: g = 1, rho = 0.1 -> perturbed w = 1.1,
        // g' = 1.1, sgd base with lr 0.1 -> w = 1 - 0.11 = 0.89
        let spec = quadratic_spec();
        let mut p = ParameterVector::zeros(spec.layout());
        p.values[0] = 1.0;
        let mut g = ParameterVector::zeros(spec.layout());
        g.values[0] = p.values[0]; // grad of w^2/2
        let eps = sam_ascent(&g, 0.1).unwrap();
        assert!((eps[0] - 0.1).abs() < 1e-15);
        let mut perturbed = p.clone();
        for (w, e) in perturbed.values.iter_mut().zip(&eps) {
            *w += e;
        }
        let mut g2 = ParameterVector::zeros(spec.layout());
        g2.values[0] = perturbed.values[0];
        let q = step_sgd(&p, &g2, 0.1);
        assert!((q.values[0] - 0.89).abs() < 1e-15);
    }

    #[test]
    fn sam_zero_rho_matches_base_bitwise() {
        let spec = quadratic_spec();
        let data = gen_swiss_roll(32, 0.1, 5).unwrap();
        let p = init_params(&spec, 3).unwrap();
        let mut cfg = OptimizerConfig::sam_adamw();
        cfg.rho = 0.0;
        let mut s1 = AdamState::new(p.len());
        let sam = step_sam(&spec, &p, &data, &cfg, &mut s1, 1).unwrap();
        let mut s2 = AdamState::new(p.len());
        let g = nn::grad(&spec, &p, &data).unwrap();
        let base = step_adamw(&mut s2, &p, &g, &cfg, 1);
        assert_eq!(sam.values, base.values);
    }

    #[test]
    fn sam_zero_grad_falls_through_to_decay_only() {
        let spec = quadratic_spec();
        let g = ParameterVector::zeros(spec.layout());
        assert!(sam_ascent(&g, 0.1).is_none());
    }

    #[test]
    fn accuracy_tie_break_and_exact_hits() {
        let spec = NetworkSpec::new(1, vec![1], 2, LossKind::MseOnehot);
        // all-zero params emit constant equal outputs -> ties -> class 0
        let p = ParameterVector::zeros(spec.layout());
        let data = Dataset::from_parts(
            ndarray::array![[1.0], [2.0], [3.0], [4.0]],
            vec![0, 0, 1, 0],
            2,
            "test",
        );
        let acc = evaluate_accuracy(&spec, &p, &data).unwrap();
        assert_eq!(acc, 0.75); // frequency of class 0
    }

    #[test]
    fn zero_epochs_returns_init() {
        let spec = quadratic_spec();
        let data = gen_swiss_roll(16, 0.1, 1).unwrap();
        let init = init_params(&spec, 2).unwrap();
        let tc = TrainConfig {
            epochs: 0,
            batch_size: 8,
            shuffle_seed: 1,
            checkpoint_epochs: vec![],
            target_loss: None,
        };
        let r = train(&spec, &data, &data, &init, &OptimizerConfig::adamw(), &tc).unwrap();
        assert_eq!(r.final_params.values, init.values);
        assert!(r.train_loss_curve.is_empty());
        assert!(r.test_loss_curve.is_empty());
        assert!(r.test_accuracy_curve.is_empty());
    }

    #[test]
    fn training_is_bit_deterministic() {
        let spec = quadratic_spec();
        let data = gen_swiss_roll(48, 0.1, 7).unwrap();
        let init = init_params(&spec, 4).unwrap();
        let tc = TrainConfig {
            epochs: 5,
            batch_size: 16,
            shuffle_seed: 11,
            checkpoint_epochs: vec![2, 5],
            target_loss: None,
        };
        let r1 = train(&spec, &data, &data, &init, &OptimizerConfig::adamw(), &tc).unwrap();
        let r2 = train(&spec, &data, &data, &init, &OptimizerConfig::adamw(), &tc).unwrap();
        assert_eq!(r1.final_params.values, r2.final_params.values);
        assert_eq!(r1.train_loss_curve, r2.train_loss_curve);
        assert_eq!(r1.test_accuracy_curve, r2.test_accuracy_curve);
        assert_eq!(r1.checkpoints.len(), 2);
        for ((e1, p1), (e2, p2)) in r1.checkpoints.iter().zip(&r2.checkpoints) {
            assert_eq!(e1, e2);
            assert_eq!(p1.values, p2.values);
        }
    }

    #[test]
    fn early_stop_respects_target() {
        let spec = NetworkSpec::new(2, vec![16, 16], 2, LossKind::CrossEntropy);
        let data = gen_swiss_roll(64, 0.05, 3).unwrap();
        let init = init_params(&spec, 6).unwrap();
        let tc = TrainConfig {
            epochs: 500,
            batch_size: 16,
            shuffle_seed: 2,
            checkpoint_epochs: vec![],
            target_loss: Some(0.3),
        };
        let r = train(&spec, &data, &data, &init, &OptimizerConfig::adamw(), &tc).unwrap();
        assert_eq!(r.target_reached, Some(true));
        assert!(r.final_train_loss().unwrap() <= 0.3);
        assert!(r.completed_epochs() < 500);
        // curves share the early-stopped length
        assert_eq!(r.train_loss_curve.len(), r.test_loss_curve.len());
        assert_eq!(r.train_loss_curve.len(), r.test_accuracy_curve.len());
    }
}
