//! Accuracy oracles: the analytic synthetic oracle (closed form, exhaustively
//! optimizable) and the toy quantization-aware-training oracle (a real, tiny,
//! bit-deterministic fine-tuning loop on a seeded Gaussian-blob dataset).

use cimforge_core::cost::{LayerDesc, LayerKind};
use cimforge_core::error::{CoreError, Result};
use cimforge_core::quant::{fake_quant_forward, MAX_BITS, MIN_BITS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::nn::{Cache, FinalInit, Grads, Head, Mlp};

/// Accuracy evaluator for a full per-layer bit configuration. Evaluation is a
/// pure function of the configuration (and the oracle's own seed), so results
/// can be cached or computed in parallel without affecting determinism.
pub trait AccuracyOracle: Sync {
    /// Number of quantizable layers a configuration must cover.
    fn num_layers(&self) -> usize;
    /// Accuracy (percent) of the uniform 8-bit configuration.
    fn acc_8b(&self) -> f64;
    /// Accuracy (percent) of the given configuration.
    fn evaluate(&self, bits: &[(u8, u8)]) -> Result<f64>;
}

fn check_config(bits: &[(u8, u8)], num_layers: usize) -> Result<()> {
    if bits.len() != num_layers {
        return Err(CoreError::validation(format!(
            "config covers {} layers but the oracle has {num_layers}",
            bits.len()
        )));
    }
    for (l, &(w, a)) in bits.iter().enumerate() {
        for b in [w, a] {
            if !(MIN_BITS..=MAX_BITS).contains(&b) {
                return Err(CoreError::validation(format!(
                    "layer {l}: bit-width {b} outside {MIN_BITS}..={MAX_BITS}"
                )));
            }
        }
    }
    Ok(())
}

/// Exponent of the per-layer sensitivity penalty.
pub const SENSITIVITY_EXPONENT: f64 = 1.5;

/// Closed-form accuracy model: each layer loses accuracy superlinearly as its
/// bit widths drop below 8, with per-layer sensitivity coefficients fixed by
/// seed. `acc_q = acc_8b − Σ_l (c_w·(8−w)^1.5 + c_a·(8−a)^1.5)`.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    acc_8b: f64,
    pub c_w: Vec<f64>,
    pub c_a: Vec<f64>,
}

impl SyntheticOracle {
    pub fn new(seed: u64, num_layers: usize) -> SyntheticOracle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |_: usize| rng.gen_range(0.05..0.5);
        SyntheticOracle {
            acc_8b: 90.0,
            c_w: (0..num_layers).map(&mut draw).collect(),
            c_a: (0..num_layers).map(&mut draw).collect(),
        }
    }

    /// Accuracy penalty contributed by one layer at `(w, a)` bits.
    pub fn penalty(&self, layer: usize, w: u8, a: u8) -> f64 {
        let term = |c: f64, b: u8| c * f64::from(8u8.saturating_sub(b)).powf(SENSITIVITY_EXPONENT);
        term(self.c_w[layer], w) + term(self.c_a[layer], a)
    }
}

impl AccuracyOracle for SyntheticOracle {
    fn num_layers(&self) -> usize {
        self.c_w.len()
    }

    fn acc_8b(&self) -> f64 {
        self.acc_8b
    }

    fn evaluate(&self, bits: &[(u8, u8)]) -> Result<f64> {
        check_config(bits, self.num_layers())?;
        let mut acc = self.acc_8b;
        for (l, &(w, a)) in bits.iter().enumerate() {
            acc -= self.penalty(l, w, a);
        }
        Ok(acc)
    }
}

/// Deterministic layer geometries to pair with a [`SyntheticOracle`] when a
/// search needs a cost model but no real compiled network.
pub fn synthetic_layers(num_layers: usize, seed: u64) -> Vec<LayerDesc> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    (0..num_layers)
        .map(|i| {
            let m = 1u64 << rng.gen_range(4..=9);
            let n = 1u64 << rng.gen_range(5..=10);
            let v = 1u64 << rng.gen_range(0..=8);
            LayerDesc::new(format!("syn{i}"), LayerKind::Dense, m, n, v)
        })
        .collect()
}

// Toy QAT oracle fixture dimensions.
const FEATURES: usize = 16;
const CLASSES: usize = 8;
const TRAIN_N: usize = 2048;
const VAL_N: usize = 512;
const HIDDEN: usize = 32;
const BLOB_SIGMA: f64 = 0.25;
/// Minimum pairwise distance between class means, so every seed yields a
/// separable dataset.
const MEAN_SEPARATION: f64 = 2.0;
/// Fine-tuning protocol: epochs per evaluation, SGD step, batch size.
pub const QAT_EPOCHS: usize = 3;
const QAT_LR: f64 = 0.05;
const QAT_BATCH: usize = 64;
const PRETRAIN_EPOCHS: usize = 30;

/// A real (if tiny) quantization-aware fine-tuning oracle: a float-pretrained
/// 16→32→32→8 classifier on seeded Gaussian blobs. Each evaluation clones the
/// float model, fake-quantizes weights and activations at the configured bit
/// widths, fine-tunes for [`QAT_EPOCHS`] epochs with straight-through
/// gradients, and reports validation accuracy. Every step is seeded and
/// sequential, so identical configurations give bit-identical accuracies.
pub struct ToyQatOracle {
    seed: u64,
    train_x: Vec<Vec<f64>>,
    train_y: Vec<usize>,
    val_x: Vec<Vec<f64>>,
    val_y: Vec<usize>,
    base: Mlp,
    acc_float: f64,
    acc_8b: f64,
}

impl ToyQatOracle {
    pub fn new(seed: u64) -> ToyQatOracle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means = class_means(&mut rng);
        let (train_x, train_y) = sample_blobs(&means, TRAIN_N, &mut rng);
        let (val_x, val_y) = sample_blobs(&means, VAL_N, &mut rng);

        let mut base = Mlp::new(
            &[FEATURES, HIDDEN, HIDDEN, CLASSES],
            Head::Linear,
            FinalInit::Uniform((6.0 / HIDDEN as f64).sqrt()),
            &mut rng,
        );
        let mut order: Vec<usize> = (0..TRAIN_N).collect();
        let mut grads = Grads::zeros_like(&base);
        for _ in 0..PRETRAIN_EPOCHS {
            shuffle(&mut order, &mut rng);
            for batch in order.chunks(QAT_BATCH) {
                grads.clear();
                for &i in batch {
                    let (logits, cache) = base.forward_cached(&train_x[i]);
                    let dout = softmax_grad(&logits, train_y[i], batch.len());
                    base.backward(&cache, &dout, &mut grads);
                }
                base.sgd_step(&grads, QAT_LR);
            }
        }
        let acc_float = accuracy(&base, &val_x, &val_y, None);

        let mut oracle = ToyQatOracle {
            seed,
            train_x,
            train_y,
            val_x,
            val_y,
            base,
            acc_float,
            acc_8b: 0.0,
        };
        oracle.acc_8b = oracle
            .evaluate(&[(8, 8); 3])
            .expect("uniform 8-bit evaluation cannot fail on a finite pretrained model");
        oracle
    }

    /// Validation accuracy of the float model before any quantization.
    pub fn acc_float(&self) -> f64 {
        self.acc_float
    }

    /// Cost-model descriptions of the classifier's three dense layers
    /// (matrix-vector products, so `V = 1`).
    pub fn layer_descs(&self) -> Vec<LayerDesc> {
        vec![
            LayerDesc::new("fc1", LayerKind::Dense, HIDDEN as u64, FEATURES as u64, 1),
            LayerDesc::new("fc2", LayerKind::Dense, HIDDEN as u64, HIDDEN as u64, 1),
            LayerDesc::new("fc3", LayerKind::Dense, CLASSES as u64, HIDDEN as u64, 1),
        ]
    }
}

impl AccuracyOracle for ToyQatOracle {
    fn num_layers(&self) -> usize {
        3
    }

    fn acc_8b(&self) -> f64 {
        self.acc_8b
    }

    fn evaluate(&self, bits: &[(u8, u8)]) -> Result<f64> {
        check_config(bits, 3)?;
        let mut model = self.base.clone();
        // The shuffle stream depends only on the oracle seed, never on the
        // configuration, so every evaluation sees the same batch sequence.
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x51e5_7ea1);
        let mut order: Vec<usize> = (0..TRAIN_N).collect();
        let mut grads = Grads::zeros_like(&model);
        for _ in 0..QAT_EPOCHS {
            shuffle(&mut order, &mut rng);
            for batch in order.chunks(QAT_BATCH) {
                let qmodel = quantize_weights(&model, bits)?;
                grads.clear();
                for &i in batch {
                    let (logits, cache) = qat_forward(&qmodel, &self.train_x[i], bits)?;
                    let dout = softmax_grad(&logits, self.train_y[i], batch.len());
                    qmodel.backward(&cache, &dout, &mut grads);
                }
                // Straight-through: gradients computed on the quantized
                // network update the float master weights.
                model.sgd_step(&grads, QAT_LR);
            }
        }
        Ok(accuracy(&model, &self.val_x, &self.val_y, Some(bits)))
    }
}

/// Draws class means uniformly in `[−1, 1]^16`, resampling until each is at
/// least [`MEAN_SEPARATION`] from all previous means.
fn class_means(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(CLASSES);
    while means.len() < CLASSES {
        let cand: Vec<f64> = (0..FEATURES).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ok = means.iter().all(|m| {
            let d2: f64 = m.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
            d2.sqrt() >= MEAN_SEPARATION
        });
        if ok {
            means.push(cand);
        }
    }
    means
}

fn sample_blobs(
    means: &[Vec<f64>],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % CLASSES;
        let x: Vec<f64> = means[c]
            .iter()
            .map(|&m| m + BLOB_SIGMA * rng.sample::<f64, _>(StandardNormal))
            .collect();
        xs.push(x);
        ys.push(c);
    }
    (xs, ys)
}

/// Fisher–Yates with the oracle's own RNG (avoids depending on shuffle
/// implementation details of the rand crate staying stable).
fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Gradient of mean-reduced softmax cross-entropy w.r.t. the logits.
fn softmax_grad(logits: &[f64], label: usize, batch: usize) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let inv = 1.0 / batch as f64;
    exps.iter()
        .enumerate()
        .map(|(i, &e)| (e / sum - if i == label { 1.0 } else { 0.0 }) * inv)
        .collect()
}

/// Clone of the model with each layer's weights fake-quantized at its
/// configured weight bit width (biases stay float).
fn quantize_weights(model: &Mlp, bits: &[(u8, u8)]) -> Result<Mlp> {
    let mut q = model.clone();
    for (layer, &(w_bit, _)) in q.layers.iter_mut().zip(bits) {
        layer.w = fake_quant_forward(&layer.w, w_bit, true)?;
    }
    Ok(q)
}

/// Forward pass with activation fake quantization at each layer input. The
/// first input is signed (raw features); later inputs follow ReLU and are
/// unsigned. Returns a [`Cache`] shaped exactly as [`Mlp::backward`] expects:
/// `acts[l]` is the (quantized) input to layer `l`, `zs[l]` its
/// pre-activation, so backprop through it implements the straight-through
/// estimator.
fn qat_forward(qmodel: &Mlp, x: &[f64], bits: &[(u8, u8)]) -> Result<(Vec<f64>, Cache)> {
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(qmodel.layers.len() + 1);
    let mut zs: Vec<Vec<f64>> = Vec::with_capacity(qmodel.layers.len());
    let mut cur = fake_quant_forward(x, bits[0].1, true)?;
    acts.push(cur.clone());
    let last = qmodel.layers.len() - 1;
    for (l, layer) in qmodel.layers.iter().enumerate() {
        let mut z = Vec::new();
        layer.apply(&cur, &mut z);
        zs.push(z.clone());
        if l < last {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            z = fake_quant_forward(&z, bits[l + 1].1, false)?;
        }
        acts.push(z.clone());
        cur = z;
    }
    Ok((cur, Cache { acts, zs }))
}

/// Validation accuracy in percent; with `bits` the network is evaluated in
/// quantized inference mode, otherwise in float.
fn accuracy(model: &Mlp, xs: &[Vec<f64>], ys: &[usize], bits: Option<&[(u8, u8)]>) -> f64 {
    let qmodel = bits.map(|b| quantize_weights(model, b).expect("weights are finite"));
    let mut correct = 0usize;
    for (x, &y) in xs.iter().zip(ys) {
        let logits = match (&qmodel, bits) {
            (Some(q), Some(b)) => qat_forward(q, x, b).expect("inputs are finite").0,
            _ => model.forward(x),
        };
        let pred = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if pred == y {
            correct += 1;
        }
    }
    100.0 * correct as f64 / xs.len() as f64
}
