use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, AttentionCache, BnCache};
use super::tensor::Tensor;
use crate::error::{McdError, Result};

pub const CONV1_CHANNELS: usize = 16;
pub const CONV2_CHANNELS: usize = 32;
pub const CONV3_CHANNELS: usize = 64;
pub const HIDDEN: usize = 32;
pub const CLASSES: usize = 2;
pub const KERNEL: usize = 3;
pub const ATTENTION_KERNEL: usize = 7;
/// Index of the "cell" class in the output probabilities.
pub const CELL: usize = 1;

/// Input geometry of the classifier. Channel widths are fixed; only the
/// patch size varies, which changes the fan-in of the first dense layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub patch_w: usize,
    pub patch_h: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self { patch_w: 10, patch_h: 10 }
    }
}

impl Architecture {
    pub fn new(patch_w: usize, patch_h: usize) -> Result<Self> {
        let arch = Self { patch_w, patch_h };
        if arch.final_extent().0 == 0 || arch.final_extent().1 == 0 {
            return Err(McdError::InvalidArgument(format!(
                "patch {patch_w}x{patch_h} is too small for three 2x2 poolings (minimum 8x8)"
            )));
        }
        Ok(arch)
    }

    fn final_extent(&self) -> (usize, usize) {
        (self.patch_w / 8, self.patch_h / 8)
    }

    pub fn flat_features(&self) -> usize {
        let (w, h) = self.final_extent();
        CONV3_CHANNELS * w * h
    }

    fn shapes(&self) -> [Vec<usize>; PARAM_COUNT] {
        let c = |n: usize| vec![n];
        [
            vec![CONV1_CHANNELS, 1, KERNEL, KERNEL],
            c(CONV1_CHANNELS),
            c(CONV1_CHANNELS),
            c(CONV1_CHANNELS),
            c(CONV1_CHANNELS),
            c(CONV1_CHANNELS),
            vec![CONV2_CHANNELS, CONV1_CHANNELS, KERNEL, KERNEL],
            c(CONV2_CHANNELS),
            c(CONV2_CHANNELS),
            c(CONV2_CHANNELS),
            c(CONV2_CHANNELS),
            c(CONV2_CHANNELS),
            vec![1, 2, ATTENTION_KERNEL, ATTENTION_KERNEL],
            c(1),
            vec![CONV3_CHANNELS, CONV2_CHANNELS, KERNEL, KERNEL],
            c(CONV3_CHANNELS),
            c(CONV3_CHANNELS),
            c(CONV3_CHANNELS),
            c(CONV3_CHANNELS),
            c(CONV3_CHANNELS),
            vec![HIDDEN, self.flat_features()],
            c(HIDDEN),
            vec![CLASSES, HIDDEN],
            c(CLASSES),
        ]
    }
}

pub const PARAM_COUNT: usize = 24;

pub const PARAM_NAMES: [&str; PARAM_COUNT] = [
    "conv1.weight",
    "conv1.bias",
    "bn1.gamma",
    "bn1.beta",
    "bn1.running_mean",
    "bn1.running_var",
    "conv2.weight",
    "conv2.bias",
    "bn2.gamma",
    "bn2.beta",
    "bn2.running_mean",
    "bn2.running_var",
    "attention.weight",
    "attention.bias",
    "conv3.weight",
    "conv3.bias",
    "bn3.gamma",
    "bn3.beta",
    "bn3.running_mean",
    "bn3.running_var",
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
];

mod idx {
    pub const CONV1_W: usize = 0;
    pub const CONV1_B: usize = 1;
    pub const BN1: usize = 2;
    pub const CONV2_W: usize = 6;
    pub const CONV2_B: usize = 7;
    pub const BN2: usize = 8;
    pub const ATT_W: usize = 12;
    pub const ATT_B: usize = 13;
    pub const CONV3_W: usize = 14;
    pub const CONV3_B: usize = 15;
    pub const BN3: usize = 16;
    pub const FC1_W: usize = 20;
    pub const FC1_B: usize = 21;
    pub const FC2_W: usize = 22;
    pub const FC2_B: usize = 23;
}

/// Offsets within a batch-norm group: gamma, beta, running mean, running var.
const GAMMA: usize = 0;
const BETA: usize = 1;
const RUNNING_MEAN: usize = 2;
const RUNNING_VAR: usize = 3;

/// Whether gradient descent updates the tensor; running statistics are
/// buffers maintained by the forward pass instead.
pub fn is_learnable(index: usize) -> bool {
    !PARAM_NAMES[index].contains("running_")
}

/// All tensors of the classifier, in [`PARAM_NAMES`] order. Gradients use
/// the same container (running-statistic slots stay zero).
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    arch: Architecture,
    tensors: Vec<Tensor>,
}

impl NetworkParams {
    /// Every tensor zero except batch-norm scales and running variances,
    /// which are one.
    pub fn zeros(arch: Architecture) -> Self {
        let tensors = arch
            .shapes()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let one = PARAM_NAMES[i].ends_with(".gamma") || PARAM_NAMES[i].ends_with(".running_var");
                Tensor::filled(s, if one { 1.0 } else { 0.0 })
            })
            .collect();
        Self { arch, tensors }
    }

    /// Kaiming-uniform fan-in weights, zero biases, unit BN scales.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut p = Self::zeros(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..PARAM_COUNT {
            if !PARAM_NAMES[i].ends_with(".weight") {
                continue;
            }
            let t = &mut p.tensors[i];
            let fan_in: usize = t.shape()[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in t.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        p
    }

    /// Assembles parameters from named tensors; every name must appear
    /// exactly once with the shape the architecture prescribes.
    pub fn from_named(arch: Architecture, named: Vec<(String, Tensor)>) -> Result<Self> {
        let shapes = arch.shapes();
        let mut slots: Vec<Option<Tensor>> = vec![None; PARAM_COUNT];
        for (name, t) in named {
            let i = PARAM_NAMES
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| McdError::InvalidArgument(format!("unknown tensor {name:?}")))?;
            if t.shape() != shapes[i].as_slice() {
                return Err(McdError::InvalidArgument(format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    t.shape(),
                    shapes[i]
                )));
            }
            if !t.is_finite() {
                return Err(McdError::NonFinite(format!("tensor {name:?}")));
            }
            if slots[i].replace(t).is_some() {
                return Err(McdError::InvalidArgument(format!("duplicate tensor {name:?}")));
            }
        }
        let tensors = slots
            .into_iter()
            .enumerate()
            .map(|(i, t)| t.ok_or_else(|| McdError::InvalidArgument(format!("missing tensor {:?}", PARAM_NAMES[i]))))
            .collect::<Result<_>>()?;
        Ok(Self { arch, tensors })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        PARAM_NAMES.iter().position(|n| *n == name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        PARAM_NAMES.iter().copied().zip(&self.tensors)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    fn bn(&self, base: usize) -> (&Tensor, &Tensor, &Tensor, &Tensor) {
        (
            &self.tensors[base + GAMMA],
            &self.tensors[base + BETA],
            &self.tensors[base + RUNNING_MEAN],
            &self.tensors[base + RUNNING_VAR],
        )
    }

    /// Folds the batch statistics of a train-mode forward into the running
    /// estimates: r ← (1 − m)·r + m·batch, with the unbiased batch variance.
    pub fn update_running_stats(&mut self, cache: &ForwardCache, momentum: f64) {
        for (base, bn) in [(idx::BN1, &cache.bn1), (idx::BN2, &cache.bn2), (idx::BN3, &cache.bn3)] {
            let Some(bn) = bn else { continue };
            let m = bn.count as f64;
            let unbias = if bn.count > 1 { m / (m - 1.0) } else { 1.0 };
            let rm = self.tensors[base + RUNNING_MEAN].data_mut();
            for (r, &b) in rm.iter_mut().zip(&bn.mean) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
            let rv = self.tensors[base + RUNNING_VAR].data_mut();
            for (r, &b) in rv.iter_mut().zip(&bn.var) {
                *r = (1.0 - momentum) * *r + momentum * b * unbias;
            }
        }
    }
}

pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

pub enum Mode<'a> {
    /// Batch statistics; dropout when given.
    Train(Option<Dropout<'a>>),
    /// Running statistics, no dropout.
    Eval,
}

/// Which side of every non-smooth point the forward pass landed on: ReLU
/// activity, pooling winners and channel-max winners. Finite differences are
/// only meaningful while this stays fixed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationPattern {
    relu: Vec<bool>,
    argmax: Vec<usize>,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    train: bool,
    input: Tensor,
    bn1: Option<BnCache>,
    r1: Tensor,
    arg1: Vec<usize>,
    p1: Tensor,
    bn2: Option<BnCache>,
    r2: Tensor,
    arg2: Vec<usize>,
    p2: Tensor,
    att: AttentionCache,
    a: Tensor,
    bn3: Option<BnCache>,
    r3: Tensor,
    arg3: Vec<usize>,
    flat: Tensor,
    h1: Tensor,
    /// Per-unit dropout multiplier (0 or 1/(1−rate)); `None` without dropout.
    dropout_scale: Option<Vec<f64>>,
    d1: Tensor,
    pub probs: Tensor,
}

impl ForwardCache {
    pub fn activation_pattern(&self) -> ActivationPattern {
        let relu = [&self.r1, &self.r2, &self.r3, &self.h1]
            .iter()
            .flat_map(|t| t.data().iter().map(|&v| v > 0.0))
            .collect();
        let argmax = self
            .arg1
            .iter()
            .chain(&self.arg2)
            .chain(&self.arg3)
            .chain(&self.att.max_channel)
            .copied()
            .collect();
        ActivationPattern { relu, argmax }
    }
}

fn conv_block(
    x: &Tensor,
    p: &NetworkParams,
    w: usize,
    b: usize,
    bn: usize,
    train: bool,
) -> (Option<BnCache>, Tensor, Tensor, Vec<usize>) {
    let c = layers::conv2d_forward(x, &p.tensors[w], &p.tensors[b], KERNEL / 2);
    let (gamma, beta, rm, rv) = p.bn(bn);
    let (normed, cache) = if train {
        let (y, cache) = layers::batchnorm_train(&c, gamma, beta);
        (y, Some(cache))
    } else {
        (layers::batchnorm_eval(&c, gamma, beta, rm, rv), None)
    };
    let r = layers::relu(&normed);
    let (pooled, arg) = layers::maxpool2_forward(&r);
    (cache, r, pooled, arg)
}

/// Runs the classifier on a `[N, 1, patch_h, patch_w]` batch and returns
/// the `[N, 2]` class probabilities with the cache needed by [`backward`].
pub fn forward(params: &NetworkParams, batch: &Tensor, mode: Mode<'_>) -> Result<(Tensor, ForwardCache)> {
    let arch = params.arch;
    match batch.shape() {
        [n, 1, h, w] if *n > 0 && *h == arch.patch_h && *w == arch.patch_w => {}
        s => {
            return Err(McdError::InvalidArgument(format!(
                "batch shape {s:?} does not match [N, 1, {}, {}]",
                arch.patch_h, arch.patch_w
            )))
        }
    }
    if !batch.is_finite() {
        return Err(McdError::NonFinite("input batch".into()));
    }
    let n = batch.shape()[0];
    let (train, dropout) = match mode {
        Mode::Train(d) => (true, d),
        Mode::Eval => (false, None),
    };
    let (bn1, r1, p1, arg1) = conv_block(batch, params, idx::CONV1_W, idx::CONV1_B, idx::BN1, train);
    let (bn2, r2, p2, arg2) = conv_block(&p1, params, idx::CONV2_W, idx::CONV2_B, idx::BN2, train);
    let (a, att) = layers::spatial_attention_forward(&p2, &params.tensors[idx::ATT_W], &params.tensors[idx::ATT_B]);
    let (bn3, r3, p3, arg3) = conv_block(&a, params, idx::CONV3_W, idx::CONV3_B, idx::BN3, train);
    let flat = p3.reshaped(&[n, arch.flat_features()]);
    let h1 = layers::relu(&layers::linear_forward(&flat, &params.tensors[idx::FC1_W], &params.tensors[idx::FC1_B]));
    let (d1, dropout_scale) = match dropout {
        Some(Dropout { rate, rng }) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            let scale: Vec<f64> = (0..h1.len())
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect();
            let d = h1.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
            (Tensor::from_vec(h1.shape(), d)?, Some(scale))
        }
        _ => (h1.clone(), None),
    };
    let logits = layers::linear_forward(&d1, &params.tensors[idx::FC2_W], &params.tensors[idx::FC2_B]);
    let probs = layers::softmax(&logits);
    let cache = ForwardCache {
        train,
        input: batch.clone(),
        bn1,
        r1,
        arg1,
        p1,
        bn2,
        r2,
        arg2,
        p2,
        att,
        a,
        bn3,
        r3,
        arg3,
        flat,
        h1,
        dropout_scale,
        d1,
        probs: probs.clone(),
    };
    Ok((probs, cache))
}

/// Probabilities in eval mode, without keeping the cache.
pub fn predict(params: &NetworkParams, batch: &Tensor) -> Result<Tensor> {
    forward(params, batch, Mode::Eval).map(|(p, _)| p)
}

fn conv_block_backward(
    p: &NetworkParams,
    grads: &mut NetworkParams,
    input: &Tensor,
    relu_out: &Tensor,
    arg: &[usize],
    bn: &BnCache,
    dpooled: &Tensor,
    (w, b, bn_base): (usize, usize, usize),
) -> Tensor {
    let dr = layers::maxpool2_backward(relu_out.shape(), arg, dpooled);
    let dn = layers::relu_backward(relu_out, &dr);
    let (dc, dgamma, dbeta) = layers::batchnorm_backward(&dn, &p.tensors[bn_base + GAMMA], bn);
    let (dx, dw, db) = layers::conv2d_backward(input, &p.tensors[w], KERNEL / 2, &dc);
    grads.tensors[w] = dw;
    grads.tensors[b] = db;
    grads.tensors[bn_base + GAMMA] = dgamma;
    grads.tensors[bn_base + BETA] = dbeta;
    dx
}

/// Gradients of the mean cross-entropy with respect to every learnable
/// tensor, for the batch and labels (0 = background, 1 = cell) of a
/// train-mode forward.
pub fn backward(params: &NetworkParams, cache: &ForwardCache, labels: &[usize]) -> Result<NetworkParams> {
    if !cache.train {
        return Err(McdError::InvalidArgument("backward needs a train-mode forward cache".into()));
    }
    let n = cache.input.shape()[0];
    if labels.len() != n || labels.iter().any(|&y| y >= CLASSES) {
        return Err(McdError::InvalidArgument(format!(
            "expected {n} labels in 0..{CLASSES}, got {labels:?}"
        )));
    }
    let mut g = NetworkParams::zeros(params.arch);
    for i in 0..PARAM_COUNT {
        if !is_learnable(i) {
            g.tensors[i].data_mut().fill(0.0);
        }
    }
    let dz = layers::softmax_cross_entropy_logit_grad(&cache.probs, labels);
    let (dd1, dw, db) = layers::linear_backward(&cache.d1, &params.tensors[idx::FC2_W], &dz);
    g.tensors[idx::FC2_W] = dw;
    g.tensors[idx::FC2_B] = db;
    let dh1 = match &cache.dropout_scale {
        Some(scale) => Tensor::from_vec(dd1.shape(), dd1.data().iter().zip(scale).map(|(a, b)| a * b).collect())?,
        None => dd1,
    };
    let dh1 = layers::relu_backward(&cache.h1, &dh1);
    let (dflat, dw, db) = layers::linear_backward(&cache.flat, &params.tensors[idx::FC1_W], &dh1);
    g.tensors[idx::FC1_W] = dw;
    g.tensors[idx::FC1_B] = db;
    let r3 = &cache.r3;
    let [_, c3, h3, w3] = r3.dims4();
    let dp3 = dflat.reshaped(&[n, c3, h3 / 2, w3 / 2]);
    let da = conv_block_backward(
        params,
        &mut g,
        &cache.a,
        r3,
        &cache.arg3,
        cache.bn3.as_ref().expect("train cache"),
        &dp3,
        (idx::CONV3_W, idx::CONV3_B, idx::BN3),
    );
    let (dp2, dw, db) = layers::spatial_attention_backward(&cache.p2, &params.tensors[idx::ATT_W], &cache.att, &da);
    g.tensors[idx::ATT_W] = dw;
    g.tensors[idx::ATT_B] = db;
    let dp1 = conv_block_backward(
        params,
        &mut g,
        &cache.p1,
        &cache.r2,
        &cache.arg2,
        cache.bn2.as_ref().expect("train cache"),
        &dp2,
        (idx::CONV2_W, idx::CONV2_B, idx::BN2),
    );
    conv_block_backward(
        params,
        &mut g,
        &cache.input,
        &cache.r1,
        &cache.arg1,
        cache.bn1.as_ref().expect("train cache"),
        &dp1,
        (idx::CONV1_W, idx::CONV1_B, idx::BN1),
    );
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(&[n, 1, 10, 10], (0..n * 100).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn shapes_follow_architecture() {
        let p = NetworkParams::init(Architecture::default(), 0);
        assert_eq!(p.get("fc1.weight").unwrap().shape(), &[32, 64]);
        assert_eq!(p.get("attention.weight").unwrap().shape(), &[1, 2, 7, 7]);
        assert_eq!(p.get("conv2.weight").unwrap().shape(), &[32, 16, 3, 3]);
        assert!(Architecture::new(7, 10).is_err());
        assert_eq!(Architecture::new(16, 8).unwrap().flat_features(), 128);
    }

    #[test]
    fn kaiming_bounds_and_zero_biases() {
        let p = NetworkParams::init(Architecture::default(), 4);
        let bound = (6.0f64 / 9.0).sqrt();
        assert!(p.get("conv1.weight").unwrap().data().iter().all(|v| v.abs() <= bound));
        assert!(p.get("conv1.bias").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p.get("bn2.gamma").unwrap().data().iter().all(|&v| v == 1.0));
        assert_ne!(p, NetworkParams::init(Architecture::default(), 5));
    }

    #[test]
    fn rows_sum_to_one() {
        let p = NetworkParams::init(Architecture::default(), 1);
        for mode in [0, 1] {
            let m = if mode == 0 { Mode::Eval } else { Mode::Train(None) };
            let (probs, _) = forward(&p, &batch(5, 2), m).unwrap();
            for r in 0..5 {
                assert!((probs.data()[2 * r] + probs.data()[2 * r + 1] - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_network_is_uniform() {
        let p = NetworkParams::zeros(Architecture::default());
        let probs = predict(&p, &batch(3, 9)).unwrap();
        assert!(probs.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn eval_duplicates_agree_and_do_not_mutate() {
        let p = NetworkParams::init(Architecture::default(), 3);
        let one = batch(1, 1);
        let mut two = one.data().to_vec();
        two.extend_from_slice(one.data());
        let two = Tensor::from_vec(&[2, 1, 10, 10], two).unwrap();
        let before = p.clone();
        let probs = predict(&p, &two).unwrap();
        assert_eq!(probs.data()[..2], probs.data()[2..]);
        assert_eq!(p, before);
    }

    #[test]
    fn rejects_bad_input() {
        let p = NetworkParams::init(Architecture::default(), 3);
        let mut b = batch(2, 1);
        assert!(forward(&p, &Tensor::zeros(&[2, 1, 9, 10]), Mode::Eval).is_err());
        b.data_mut()[7] = f64::NAN;
        assert!(matches!(forward(&p, &b, Mode::Eval), Err(McdError::NonFinite(_))));
    }

    #[test]
    fn backward_requires_train_cache() {
        let p = NetworkParams::init(Architecture::default(), 3);
        let (_, cache) = forward(&p, &batch(2, 1), Mode::Eval).unwrap();
        assert!(backward(&p, &cache, &[0, 1]).is_err());
    }

    #[test]
    fn duplicated_batch_gives_equal_mean_gradients() {
        let p = NetworkParams::init(Architecture::default(), 8);
        let b = batch(2, 5);
        let mut d = b.data().to_vec();
        d.extend_from_slice(b.data());
        let bb = Tensor::from_vec(&[4, 1, 10, 10], d).unwrap();
        let (_, c1) = forward(&p, &b, Mode::Train(None)).unwrap();
        let (_, c2) = forward(&p, &bb, Mode::Train(None)).unwrap();
        let g1 = backward(&p, &c1, &[0, 1]).unwrap();
        let g2 = backward(&p, &c2, &[0, 1, 0, 1]).unwrap();
        for ((name, a), (_, b)) in g1.iter().zip(g2.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{name}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn confident_correct_predictions_have_no_signal() {
        let mut p = NetworkParams::init(Architecture::default(), 2);
        // A huge fc2 bias towards class 1 saturates the softmax.
        p.tensors_mut()[idx::FC2_B].data_mut().copy_from_slice(&[-40.0, 40.0]);
        let (_, cache) = forward(&p, &batch(4, 3), Mode::Train(None)).unwrap();
        let g = backward(&p, &cache, &[1, 1, 1, 1]).unwrap();
        assert!(g.tensors().iter().all(|t| t.norm() < 1e-12));
    }

    #[test]
    fn running_stats_move_towards_batch() {
        let mut p = NetworkParams::init(Architecture::default(), 2);
        let (_, cache) = forward(&p, &batch(4, 3), Mode::Train(None)).unwrap();
        p.update_running_stats(&cache, 0.1);
        let bn = cache.bn1.as_ref().unwrap();
        let rm = p.get("bn1.running_mean").unwrap().data()[0];
        assert!((rm - 0.1 * bn.mean[0]).abs() < 1e-15);
        let m = bn.count as f64;
        let rv = p.get("bn1.running_var").unwrap().data()[0];
        assert!((rv - (0.9 + 0.1 * bn.var[0] * m / (m - 1.0))).abs() < 1e-15);
    }
}
