//! Angle signal network: descriptor in, bounded joint command out.
//!
//! Two hidden layers of `linear -> batch norm -> ReLU`, then a linear layer
//! to raw values that are squashed into the joint limits with
//! `q = sigmoid(raw) * (q_max - q_min) + q_min`. Training is
//! self-supervised: the NPR loss is taken between the input descriptor and
//! the descriptor of the robot pose the network commands, and gradients are
//! carried back through FK by hand.
//!
//! Batches are stored column-wise, one sample per column.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::descriptor::{PoseDescriptor, DESCRIPTOR_DIM};
use crate::error::{Error, Result};
use crate::ik_oracle::{sigmoid, squash_one};
use crate::io::write_atomic;
use crate::npr::{npr_grad, NprWeights};
use crate::robot::{JointCommand, RobotModel, NUM_COMMANDS};

pub const BN_EPS: f64 = 1e-5;
pub const PARAMS_MAGIC: &[u8; 4] = b"ASNP";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out x in`.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
    pub running_mean: DVector<f64>,
    pub running_var: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub l1: Linear,
    pub bn1: BatchNorm,
    pub l2: Linear,
    pub bn2: BatchNorm,
    pub out: Linear,
}

/// Gradients share the parameter layout; running statistics stay zero.
pub type MlpGrads = MlpParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, caches activations.
    Train,
    /// Running statistics only.
    Infer,
}

impl Linear {
    fn zeros(out: usize, inp: usize) -> Self {
        Linear {
            w: DMatrix::zeros(out, inp),
            b: DVector::zeros(out),
        }
    }

    fn uniform(out: usize, inp: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let bound = scale / (inp as f64).sqrt();
        let w = DMatrix::from_fn(out, inp, |_, _| rng.gen_range(-bound..=bound));
        let b = DVector::from_fn(out, |_, _| rng.gen_range(-bound..=bound));
        Linear { w, b }
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = &self.w * x;
        for mut col in z.column_iter_mut() {
            col += &self.b;
        }
        z
    }
}

impl BatchNorm {
    fn identity(n: usize) -> Self {
        BatchNorm {
            gamma: DVector::from_element(n, 1.0),
            beta: DVector::zeros(n),
            running_mean: DVector::zeros(n),
            running_var: DVector::from_element(n, 1.0),
        }
    }

    fn zeros(n: usize) -> Self {
        BatchNorm {
            gamma: DVector::zeros(n),
            beta: DVector::zeros(n),
            running_mean: DVector::zeros(n),
            running_var: DVector::zeros(n),
        }
    }
}

impl MlpParams {
    /// Fan-in uniform init with identity batch norm.
    pub fn init(hidden: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MlpParams {
            l1: Linear::uniform(hidden, DESCRIPTOR_DIM, scale, &mut rng),
            bn1: BatchNorm::identity(hidden),
            l2: Linear::uniform(hidden, hidden, scale, &mut rng),
            bn2: BatchNorm::identity(hidden),
            out: Linear::uniform(NUM_COMMANDS, hidden, scale, &mut rng),
        }
    }

    /// All weights and biases zero, batch norm at identity.
    pub fn zeros(hidden: usize) -> Self {
        MlpParams {
            l1: Linear::zeros(hidden, DESCRIPTOR_DIM),
            bn1: BatchNorm::identity(hidden),
            l2: Linear::zeros(hidden, hidden),
            bn2: BatchNorm::identity(hidden),
            out: Linear::zeros(NUM_COMMANDS, hidden),
        }
    }

    fn zero_grads(hidden: usize) -> MlpGrads {
        MlpParams {
            l1: Linear::zeros(hidden, DESCRIPTOR_DIM),
            bn1: BatchNorm::zeros(hidden),
            l2: Linear::zeros(hidden, hidden),
            bn2: BatchNorm::zeros(hidden),
            out: Linear::zeros(NUM_COMMANDS, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.l1.b.len()
    }

    /// Every array in file order. Matrices are column-major.
    pub fn tensors(&self) -> [&[f64]; 14] {
        [
            self.l1.w.as_slice(),
            self.l1.b.as_slice(),
            self.bn1.gamma.as_slice(),
            self.bn1.beta.as_slice(),
            self.bn1.running_mean.as_slice(),
            self.bn1.running_var.as_slice(),
            self.l2.w.as_slice(),
            self.l2.b.as_slice(),
            self.bn2.gamma.as_slice(),
            self.bn2.beta.as_slice(),
            self.bn2.running_mean.as_slice(),
            self.bn2.running_var.as_slice(),
            self.out.w.as_slice(),
            self.out.b.as_slice(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 14] {
        [
            self.l1.w.as_mut_slice(),
            self.l1.b.as_mut_slice(),
            self.bn1.gamma.as_mut_slice(),
            self.bn1.beta.as_mut_slice(),
            self.bn1.running_mean.as_mut_slice(),
            self.bn1.running_var.as_mut_slice(),
            self.l2.w.as_mut_slice(),
            self.l2.b.as_mut_slice(),
            self.bn2.gamma.as_mut_slice(),
            self.bn2.beta.as_mut_slice(),
            self.bn2.running_mean.as_mut_slice(),
            self.bn2.running_var.as_mut_slice(),
            self.out.w.as_mut_slice(),
            self.out.b.as_mut_slice(),
        ]
    }

    /// Indices into [`MlpParams::tensors`] that are learned by gradient.
    pub const TRAINABLE: [usize; 10] = [0, 1, 2, 3, 6, 7, 8, 9, 12, 13];

    pub fn validate(&self) -> Result<()> {
        if self.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric("network parameters contain non-finite values".into()));
        }
        for bn in [&self.bn1, &self.bn2] {
            if bn.running_var.iter().any(|&v| v < BN_EPS) {
                return Err(Error::Numeric(format!("running variance below {BN_EPS}")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the serialized parameters, hex encoded.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.body_bytes()))
    }

    fn body_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PARAMS_MAGIC);
        out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
        for d in [DESCRIPTOR_DIM, self.hidden(), NUM_COMMANDS] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for t in self.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

struct LayerCache {
    xhat: DMatrix<f64>,
    inv_std: DVector<f64>,
    pre_relu: DMatrix<f64>,
    act: DMatrix<f64>,
}

/// Activations kept from a train-mode forward pass.
pub struct ForwardCache {
    x: DMatrix<f64>,
    h1: LayerCache,
    h2: LayerCache,
    sig: DMatrix<f64>,
    batch_mean: [DVector<f64>; 2],
    batch_var: [DVector<f64>; 2],
}

fn check_finite(m: &DMatrix<f64>, layer: usize) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite activation in layer {layer}")));
    }
    Ok(())
}

fn hidden_layer(
    x: &DMatrix<f64>,
    lin: &Linear,
    bn: &BatchNorm,
    mode: Mode,
    layer: usize,
) -> Result<(LayerCache, DVector<f64>, DVector<f64>)> {
    let z = lin.apply(x);
    check_finite(&z, layer)?;
    let n = z.ncols() as f64;
    let (mean, var) = match mode {
        Mode::Train => {
            let mean = z.column_mean();
            let var = DVector::from_fn(z.nrows(), |i, _| {
                z.row(i).iter().map(|v| (v - mean[i]).powi(2)).sum::<f64>() / n
            });
            (mean, var)
        }
        Mode::Infer => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let inv_std = var.map(|v| 1.0 / (v + BN_EPS).sqrt());
    let mut xhat = z;
    for mut col in xhat.column_iter_mut() {
        col -= &mean;
        col.component_mul_assign(&inv_std);
    }
    let mut pre = xhat.clone();
    for mut col in pre.column_iter_mut() {
        col.component_mul_assign(&bn.gamma);
        col += &bn.beta;
    }
    let act = pre.map(|v| v.max(0.0));
    check_finite(&act, layer)?;
    Ok((
        LayerCache {
            xhat,
            inv_std,
            pre_relu: pre,
            act,
        },
        mean,
        var,
    ))
}

fn to_matrix(xs: &[[f64; DESCRIPTOR_DIM]]) -> DMatrix<f64> {
    DMatrix::from_fn(DESCRIPTOR_DIM, xs.len(), |i, j| xs[j][i])
}

/// Runs a batch through the network. Returns one command column per sample
/// and, in train mode, the cached activations.
pub fn forward_batch(
    xs: &[[f64; DESCRIPTOR_DIM]],
    p: &MlpParams,
    model: &RobotModel,
    mode: Mode,
) -> Result<(DMatrix<f64>, Option<ForwardCache>)> {
    if xs.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    if mode == Mode::Train && xs.len() < 2 {
        return Err(Error::Validation("train mode needs at least 2 samples".into()));
    }
    if xs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite network input".into()));
    }
    let x = to_matrix(xs);
    let (h1, m1, v1) = hidden_layer(&x, &p.l1, &p.bn1, mode, 1)?;
    let (h2, m2, v2) = hidden_layer(&h1.act, &p.l2, &p.bn2, mode, 2)?;
    let raw = p.out.apply(&h2.act);
    check_finite(&raw, 3)?;
    let sig = raw.map(sigmoid);
    let (lo, hi) = model.command_limits();
    let q = DMatrix::from_fn(raw.nrows(), raw.ncols(), |i, j| squash_one(raw[(i, j)], lo[i], hi[i]));
    let cache = (mode == Mode::Train).then_some(ForwardCache {
        x,
        h1,
        h2,
        sig,
        batch_mean: [m1, m2],
        batch_var: [v1, v2],
    });
    Ok((q, cache))
}

/// Single-descriptor inference with running statistics.
pub fn infer(target: &PoseDescriptor, p: &MlpParams, model: &RobotModel) -> Result<JointCommand> {
    let (q, _) = forward_batch(&[target.flatten()], p, model, Mode::Infer)?;
    Ok(JointCommand(q.column(0).iter().copied().collect()))
}

fn bn_backward(
    d_pre: &DMatrix<f64>,
    cache: &LayerCache,
    bn: &BatchNorm,
    g_bn: &mut BatchNorm,
) -> DMatrix<f64> {
    let n = d_pre.ncols() as f64;
    let mut dz = DMatrix::zeros(d_pre.nrows(), d_pre.ncols());
    for i in 0..d_pre.nrows() {
        let dy = d_pre.row(i);
        let xh = cache.xhat.row(i);
        g_bn.gamma[i] = dy.dot(&xh);
        g_bn.beta[i] = dy.sum();
        let s1 = g_bn.beta[i] * bn.gamma[i];
        let s2 = g_bn.gamma[i] * bn.gamma[i];
        let k = cache.inv_std[i] / n;
        for j in 0..d_pre.ncols() {
            dz[(i, j)] = k * (n * dy[j] * bn.gamma[i] - s1 - xh[j] * s2);
        }
    }
    dz
}

fn relu_backward(d_act: &DMatrix<f64>, cache: &LayerCache) -> DMatrix<f64> {
    d_act.zip_map(&cache.pre_relu, |g, y| if y > 0.0 { g } else { 0.0 })
}

/// Mean batch loss, per-sample losses and parameter gradients of the mean
/// loss, through batch statistics.
pub struct BatchGrad {
    pub loss: f64,
    pub sample_losses: Vec<f64>,
    pub grads: MlpGrads,
    batch_mean: [DVector<f64>; 2],
    batch_var: [DVector<f64>; 2],
}

pub fn backward(
    batch: &[PoseDescriptor],
    p: &MlpParams,
    model: &RobotModel,
    w: &NprWeights,
) -> Result<BatchGrad> {
    let xs: Vec<_> = batch.iter().map(|d| d.flatten()).collect();
    let (q, cache) = forward_batch(&xs, p, model, Mode::Train)?;
    let cache = cache.expect("train mode caches");
    let n = batch.len();
    let evals: Vec<Result<(f64, Vec<f64>)>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let cmd: Vec<f64> = q.column(j).iter().copied().collect();
            let e = npr_grad(&batch[j], &cmd, model, w)?;
            Ok((e.loss, e.grad))
        })
        .collect();
    let (lo, hi) = model.command_limits();
    let mut d_raw = DMatrix::zeros(NUM_COMMANDS, n);
    let mut sample_losses = Vec::with_capacity(n);
    for (j, e) in evals.into_iter().enumerate() {
        let (loss, g) = e?;
        sample_losses.push(loss);
        for i in 0..NUM_COMMANDS {
            let s = cache.sig[(i, j)];
            d_raw[(i, j)] = g[i] * s * (1.0 - s) * (hi[i] - lo[i]) / n as f64;
        }
    }
    let loss = sample_losses.iter().sum::<f64>() / n as f64;

    let mut g = MlpParams::zero_grads(p.hidden());
    g.out.w = &d_raw * cache.h2.act.transpose();
    g.out.b = d_raw.column_sum();
    let d_act2 = p.out.w.tr_mul(&d_raw);
    let d_pre2 = relu_backward(&d_act2, &cache.h2);
    let dz2 = bn_backward(&d_pre2, &cache.h2, &p.bn2, &mut g.bn2);
    g.l2.w = &dz2 * cache.h1.act.transpose();
    g.l2.b = dz2.column_sum();
    let d_act1 = p.l2.w.tr_mul(&dz2);
    let d_pre1 = relu_backward(&d_act1, &cache.h1);
    let dz1 = bn_backward(&d_pre1, &cache.h1, &p.bn1, &mut g.bn1);
    g.l1.w = &dz1 * cache.x.transpose();
    g.l1.b = dz1.column_sum();
    Ok(BatchGrad {
        loss,
        sample_losses,
        grads: g,
        batch_mean: cache.batch_mean,
        batch_var: cache.batch_var,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub bn_momentum: f64,
    pub hidden: usize,
    pub init_scale: f64,
    pub seed: u64,
    /// Fraction of the dataset held out for the validation curve.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            lr: 1e-3,
            momentum: 0.9,
            bn_momentum: 0.1,
            hidden: 128,
            init_scale: 1.0,
            seed: 0,
            val_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2 for batch norm, got {}",
                self.batch_size
            )));
        }
        let rates_ok = self.lr > 0.0
            && self.init_scale > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.bn_momentum > 0.0
            && self.bn_momentum <= 1.0
            && (0.0..1.0).contains(&self.val_fraction);
        if !rates_ok || self.epochs == 0 || self.hidden == 0 {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean train-mode loss of the untrained network over the train split.
    pub initial_loss: f64,
    pub train_loss: Vec<f64>,
    /// Infer-mode loss on the held-out split; NaN when there is none.
    pub val_loss: Vec<f64>,
    pub checksum: String,
}

/// Mean infer-mode NPR loss over `data`.
pub fn evaluate(
    data: &[PoseDescriptor],
    p: &MlpParams,
    model: &RobotModel,
    w: &NprWeights,
) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let xs: Vec<_> = data.iter().map(|d| d.flatten()).collect();
    let (q, _) = forward_batch(&xs, p, model, Mode::Infer)?;
    let losses: Vec<Result<f64>> = (0..data.len())
        .into_par_iter()
        .map(|j| {
            let cmd: Vec<f64> = q.column(j).iter().copied().collect();
            Ok(npr_grad(&data[j], &cmd, model, w)?.loss)
        })
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / data.len() as f64)
}

fn batches(n: usize, size: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    // a trailing batch of one sample cannot be normalized; it is dropped
    (0..n)
        .step_by(size)
        .map(move |s| s..(s + size).min(n))
        .filter(|r| r.len() >= 2)
}

/// Minibatch SGD with momentum, reshuffled every epoch from the seed.
pub fn train(
    dataset: &[PoseDescriptor],
    cfg: &TrainConfig,
    model: &RobotModel,
    w: &NprWeights,
) -> Result<(MlpParams, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::Validation("empty training set".into()));
    }
    cfg.validate()?;
    w.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (dataset.len() as f64 * cfg.val_fraction).floor() as usize;
    let val: Vec<PoseDescriptor> = order[..n_val].iter().map(|&i| dataset[i]).collect();
    let mut train_set: Vec<PoseDescriptor> =
        order[n_val..].iter().map(|&i| dataset[i]).collect();
    if train_set.len() < cfg.batch_size {
        return Err(Error::Validation(format!(
            "training split has {} samples, fewer than batch_size {}",
            train_set.len(),
            cfg.batch_size
        )));
    }

    let mut p = MlpParams::init(cfg.hidden, cfg.init_scale, rng.gen());
    let mut velocity = MlpParams::zero_grads(cfg.hidden);

    let mut initial = 0.0;
    let mut count = 0;
    for r in batches(train_set.len(), cfg.batch_size) {
        initial += backward(&train_set[r], &p, model, w)?.loss;
        count += 1;
    }
    let initial_loss = initial / count as f64;

    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut val_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        train_set.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0;
        for r in batches(train_set.len(), cfg.batch_size) {
            let bg = backward(&train_set[r], &p, model, w)?;
            sum += bg.loss;
            count += 1;
            {
                let grads = bg.grads.tensors();
                let vel = velocity.tensors_mut();
                let params = p.tensors_mut();
                for &t in &MlpParams::TRAINABLE {
                    for ((pv, vv), gv) in params[t].iter_mut().zip(vel[t].iter_mut()).zip(grads[t]) {
                        *vv = cfg.momentum * *vv + gv;
                        *pv -= cfg.lr * *vv;
                    }
                }
            }
            let m = cfg.bn_momentum;
            let nb = bg.sample_losses.len() as f64;
            for (bn, (mean, var)) in [&mut p.bn1, &mut p.bn2]
                .into_iter()
                .zip(bg.batch_mean.iter().zip(&bg.batch_var))
            {
                bn.running_mean = &bn.running_mean * (1.0 - m) + mean * m;
                let unbiased = var * (nb / (nb - 1.0));
                bn.running_var = (&bn.running_var * (1.0 - m) + unbiased * m).map(|v| v.max(BN_EPS));
            }
        }
        let mean = sum / count as f64;
        if !mean.is_finite() || mean > 1e6 {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        train_loss.push(mean);
        val_loss.push(evaluate(&val, &p, model, w)?);
    }
    let checksum = p.checksum();
    Ok((
        p,
        TrainReport {
            initial_loss,
            train_loss,
            val_loss,
            checksum,
        },
    ))
}

/// Binary layout, little endian:
///
/// | field | type |
/// |---|---|
/// | magic `ASNP` | 4 bytes |
/// | version | u32 |
/// | input, hidden, output dims | 3 x u32 |
/// | l1.w, l1.b, bn1 gamma/beta/mean/var, l2.w, l2.b, bn2 ..., out.w, out.b | f64 arrays, matrices column-major |
/// | SHA-256 of everything above | 32 bytes |
pub fn save_params(path: &Path, p: &MlpParams) -> Result<()> {
    let mut bytes = p.body_bytes();
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);
    write_atomic(path, &bytes)
}

pub fn load_params(path: &Path) -> Result<MlpParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    params_from_bytes(&bytes).map_err(|msg| Error::Load(format!("{}: {msg}", path.display())))
}

fn params_from_bytes(bytes: &[u8]) -> std::result::Result<MlpParams, String> {
    if bytes.len() < 20 + 32 {
        return Err(format!("file too short ({} bytes)", bytes.len()));
    }
    if &bytes[..4] != PARAMS_MAGIC {
        return Err("bad magic, not a parameter file".into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != PARAMS_VERSION {
        return Err(format!(
            "version mismatch: file has {version}, expected {PARAMS_VERSION}"
        ));
    }
    let (inp, hidden, out) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
    if inp != DESCRIPTOR_DIM || out != NUM_COMMANDS || hidden == 0 {
        return Err(format!("unsupported dims {inp} x {hidden} x {out}"));
    }
    let mut p = MlpParams::zeros(hidden);
    let floats: usize = p.tensors().iter().map(|t| t.len()).sum();
    let body_len = 20 + floats * 8;
    if bytes.len() != body_len + 32 {
        return Err(format!(
            "truncated or oversized: {} bytes, expected {}",
            bytes.len(),
            body_len + 32
        ));
    }
    if Sha256::digest(&bytes[..body_len])[..] != bytes[body_len..] {
        return Err("checksum mismatch".into());
    }
    let mut off = 20;
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            off += 8;
        }
    }
    p.validate().map_err(|e| e.to_string())?;
    Ok(p)
}

const BUNDLED_DATASET: &str = include_str!("../data/reachable_2000.txt");

/// The bundled training set: 2000 reachable descriptors drawn with
/// [`reachable_dataset`] from seed 2024.
pub fn bundled_dataset() -> Vec<PoseDescriptor> {
    crate::descriptor::parse_descriptors(BUNDLED_DATASET).expect("bundled dataset parses")
}

/// Random reachable descriptors: FK of uniform in-limit commands.
pub fn reachable_dataset(model: &RobotModel, n: usize, seed: u64) -> Result<Vec<PoseDescriptor>> {
    let (lo, hi) = model.command_limits();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let c: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| rng.gen_range(*a..*b)).collect();
            let q = crate::robot::expand_command(&JointCommand(c), model)?;
            crate::descriptor::robot_descriptor(&crate::robot::fk(&q, model)?, model)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (RobotModel, NprWeights) {
        let m = RobotModel::nao();
        let w = NprWeights::for_model(&m);
        (m, w)
    }

    #[test]
    fn outputs_inside_limits_for_extreme_params() {
        let (m, _) = setup();
        let mut p = MlpParams::init(16, 50.0, 3);
        p.out.b.fill(1e3);
        let data = reachable_dataset(&m, 4, 1).unwrap();
        let xs: Vec<_> = data.iter().map(|d| d.flatten()).collect();
        let (lo, hi) = m.command_limits();
        for mode in [Mode::Train, Mode::Infer] {
            let (q, _) = forward_batch(&xs, &p, &m, mode).unwrap();
            for j in 0..q.ncols() {
                for i in 0..NUM_COMMANDS {
                    assert!(q[(i, j)] >= lo[i] && q[(i, j)] <= hi[i]);
                }
            }
        }
    }

    #[test]
    fn zero_network_outputs_midpoints() {
        let (m, _) = setup();
        let p = MlpParams::zeros(8);
        let d = reachable_dataset(&m, 1, 2).unwrap();
        let q = infer(&d[0], &p, &m).unwrap();
        let (lo, hi) = m.command_limits();
        for i in 0..NUM_COMMANDS {
            assert!((q.0[i] - 0.5 * (lo[i] + hi[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn train_mode_needs_two_samples() {
        let (m, _) = setup();
        let p = MlpParams::init(8, 1.0, 0);
        let x = reachable_dataset(&m, 1, 0).unwrap()[0].flatten();
        assert!(matches!(forward_batch(&[x], &p, &m, Mode::Train), Err(Error::Validation(_))));
    }

    #[test]
    fn finite_differences_match_backward() {
        let (m, w) = setup();
        let p = MlpParams::init(12, 1.0, 7);
        let batch = reachable_dataset(&m, 6, 11).unwrap();
        let bg = backward(&batch, &p, &m, &w).unwrap();
        let h = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &t in &MlpParams::TRAINABLE {
            let len = p.tensors()[t].len();
            let picks: Vec<usize> = if len <= 12 {
                (0..len).collect()
            } else {
                (0..12).map(|_| rng.gen_range(0..len)).collect()
            };
            for k in picks {
                let mut pp = p.clone();
                pp.tensors_mut()[t][k] += h;
                let lp = backward(&batch, &pp, &m, &w).unwrap().loss;
                pp.tensors_mut()[t][k] -= 2.0 * h;
                let lm = backward(&batch, &pp, &m, &w).unwrap().loss;
                let fd = (lp - lm) / (2.0 * h);
                let an = bg.grads.tensors()[t][k];
                let scale = fd.abs().max(an.abs()).max(1e-6);
                assert!((fd - an).abs() / scale < 2e-3, "tensor {t}[{k}]: fd {fd} analytic {an}");
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_gradients() {
        let (m, _) = setup();
        let w = NprWeights {
            w_trans: 0.0,
            w_quat: 0.0,
            ..NprWeights::for_model(&m)
        };
        let p = MlpParams::init(8, 1.0, 1);
        let batch = reachable_dataset(&m, 4, 3).unwrap();
        let bg = backward(&batch, &p, &m, &w).unwrap();
        assert_eq!(bg.loss, 0.0);
        assert!(bg.grads.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn duplicated_samples_contribute_equally() {
        let (m, w) = setup();
        let p = MlpParams::init(8, 1.0, 1);
        let mut batch = reachable_dataset(&m, 3, 4).unwrap();
        batch.push(batch[0]);
        let bg = backward(&batch, &p, &m, &w).unwrap();
        assert_eq!(bg.sample_losses[0], bg.sample_losses[3]);
        // swapping the copies leaves every gradient unchanged
        batch.swap(0, 3);
        let bg2 = backward(&batch, &p, &m, &w).unwrap();
        assert_eq!(bg.grads, bg2.grads);
    }

    #[test]
    fn params_round_trip_and_errors() {
        let (m, _) = setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let mut p = MlpParams::init(8, 1.0, 9);
        p.bn1.running_mean[3] = 0.25;
        p.bn2.running_var[1] = 2.5;
        save_params(&path, &p).unwrap();
        let back = load_params(&path).unwrap();
        assert_eq!(back, p);
        let d = reachable_dataset(&m, 1, 0).unwrap();
        assert_eq!(infer(&d[0], &p, &m).unwrap(), infer(&d[0], &back, &m).unwrap());

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load_params(&path), Err(Error::Load(_))));

        let mut bad = bytes.clone();
        bad[4] = 9;
        fs::write(&path, &bad).unwrap();
        match load_params(&path) {
            Err(Error::Load(msg)) => assert!(msg.contains("file has 9, expected 1"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn train_is_deterministic_and_rejects_bad_config() {
        let (m, w) = setup();
        let data = reachable_dataset(&m, 40, 8).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            hidden: 16,
            val_fraction: 0.2,
            ..TrainConfig::default()
        };
        let (pa, ra) = train(&data, &cfg, &m, &w).unwrap();
        let (pb, rb) = train(&data, &cfg, &m, &w).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(ra, rb);
        assert_eq!(ra.train_loss.len(), ra.val_loss.len());
        let bad = TrainConfig {
            batch_size: 1,
            ..cfg.clone()
        };
        assert!(matches!(train(&data, &bad, &m, &w), Err(Error::Config(_))));
        assert!(matches!(train(&[], &cfg, &m, &w), Err(Error::Validation(_))));
    }

    #[test]
    fn infer_does_not_touch_running_stats() {
        let (m, _) = setup();
        let p = MlpParams::init(8, 1.0, 2);
        let before = p.clone();
        let d = reachable_dataset(&m, 3, 2).unwrap();
        let _ = infer(&d[0], &p, &m).unwrap();
        assert_eq!(p, before);
    }
}
