//! Minimal dense networks in f64 with reverse-mode gradients, Adam, and soft
//! target updates. The actor, critic, and the QAT oracle's classifier are all
//! two-hidden-layer perceptrons with a few thousand parameters, so this keeps
//! every operation explicit and bit-deterministic rather than pulling in a
//! tensor library.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Output nonlinearity of the final layer. Hidden layers are always ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Linear,
    Sigmoid,
}

/// Initialization of the final layer: DDPG conventionally starts the actor
/// at a constant policy (zero weights, sigmoid(0) = 0.5) and the critic near
/// zero so early targets do not swamp the hidden layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FinalInit {
    Zero,
    Uniform(f64),
}

/// One dense layer, weights row-major `[rows × cols]` (output × input).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Linear {
    pub(crate) fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.b[r];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
}

/// A fully connected ReLU network with a configurable head.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub head: Head,
}

/// Per-layer activations retained by [`Mlp::forward_cached`] for backprop:
/// `acts[l]` is the input to layer `l` (so `acts[0]` is the network input)
/// and `acts[L]` is the head output; `zs[l]` is layer `l`'s pre-activation.
#[derive(Debug, Clone)]
pub struct Cache {
    pub acts: Vec<Vec<f64>>,
    pub zs: Vec<Vec<f64>>,
}

impl Cache {
    pub fn new() -> Cache {
        Cache { acts: Vec::new(), zs: Vec::new() }
    }

    /// Head output of the pass that filled this cache.
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache filled by a forward pass")
    }
}

impl Default for Cache {
    fn default() -> Cache {
        Cache::new()
    }
}

/// Gradient (or optimizer-moment) storage shaped like an [`Mlp`].
#[derive(Debug, Clone)]
pub struct Grads {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(mlp: &Mlp) -> Grads {
        Grads {
            w: mlp.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: mlp.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        for g in self.w.iter_mut().chain(self.b.iter_mut()) {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Squared L2 norm over all entries, used by the zero-gradient tests.
    pub fn norm_sq(&self) -> f64 {
        self.w
            .iter()
            .chain(self.b.iter())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Mlp {
    /// Builds an MLP with He-uniform hidden layers and the requested final
    /// layer initialization, drawing from `rng` in a fixed order.
    pub fn new(sizes: &[usize], head: Head, final_init: FinalInit, rng: &mut ChaCha8Rng) -> Mlp {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (l, pair) in sizes.windows(2).enumerate() {
            let (cols, rows) = (pair[0], pair[1]);
            let last = l == sizes.len() - 2;
            let bound = match (last, final_init) {
                (true, FinalInit::Zero) => 0.0,
                (true, FinalInit::Uniform(b)) => b,
                (false, _) => (6.0 / cols as f64).sqrt(),
            };
            let mut draw = |n: usize| -> Vec<f64> {
                (0..n)
                    .map(|_| if bound == 0.0 { 0.0 } else { rng.gen_range(-bound..=bound) })
                    .collect()
            };
            layers.push(Linear { w: draw(rows * cols), b: draw(rows), rows, cols });
        }
        Mlp { layers, head }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if l < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            } else if self.head == Head::Sigmoid {
                next.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Forward pass retaining everything backprop needs.
    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, Cache) {
        let mut cache = Cache { acts: Vec::new(), zs: Vec::new() };
        self.forward_into(x, &mut cache);
        (cache.output().to_vec(), cache)
    }

    /// [`Mlp::forward_cached`] writing into caller-owned storage, so hot
    /// loops (the DDPG update runs five passes per sample per step) do not
    /// reallocate the activation buffers every call.
    pub fn forward_into(&self, x: &[f64], cache: &mut Cache) {
        let levels = self.layers.len() + 1;
        cache.acts.resize_with(levels, Vec::new);
        cache.zs.resize_with(self.layers.len(), Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (lo, hi) = cache.acts.split_at_mut(l + 1);
            layer.apply(&lo[l], &mut cache.zs[l]);
            let act = &mut hi[0];
            act.clear();
            act.extend_from_slice(&cache.zs[l]);
            if l < last {
                act.iter_mut().for_each(|v| *v = v.max(0.0));
            } else if self.head == Head::Sigmoid {
                act.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
        }
    }

    /// Backpropagates `dout` (gradient w.r.t. the head output), accumulating
    /// parameter gradients into `grads` and returning the gradient w.r.t. the
    /// network input (the critic's input gradient drives the actor update).
    pub fn backward(&self, cache: &Cache, dout: &[f64], grads: &mut Grads) -> Vec<f64> {
        let mut dz = Vec::new();
        let mut dx = Vec::new();
        self.backward_into(cache, dout, grads, &mut dz, &mut dx);
        dx
    }

    /// [`Mlp::backward`] with caller-owned scratch: `dx` ends up holding the
    /// input gradient, `dz` is working storage.
    pub fn backward_into(
        &self,
        cache: &Cache,
        dout: &[f64],
        grads: &mut Grads,
        dz: &mut Vec<f64>,
        dx: &mut Vec<f64>,
    ) {
        let last = self.layers.len() - 1;
        dz.clear();
        match self.head {
            Head::Linear => dz.extend_from_slice(dout),
            Head::Sigmoid => {
                let y = &cache.acts[last + 1];
                dz.extend(dout.iter().zip(y).map(|(d, &y)| d * y * (1.0 - y)));
            }
        }
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.acts[l];
            for r in 0..layer.rows {
                let g = dz[r];
                grads.b[l][r] += g;
                let grow = &mut grads.w[l][r * layer.cols..(r + 1) * layer.cols];
                for (gw, xi) in grow.iter_mut().zip(input) {
                    *gw += g * xi;
                }
            }
            dx.clear();
            dx.resize(layer.cols, 0.0);
            for r in 0..layer.rows {
                let g = dz[r];
                let row = &layer.w[r * layer.cols..(r + 1) * layer.cols];
                for (dxi, wi) in dx.iter_mut().zip(row) {
                    *dxi += g * wi;
                }
            }
            if l > 0 {
                let z = &cache.zs[l - 1];
                dz.clear();
                dz.extend(dx.iter().zip(z).map(|(&d, &z)| if z > 0.0 { d } else { 0.0 }));
            }
        }
    }

    /// Plain SGD step: `p -= lr * g`. Used by the QAT oracle's fine-tuning.
    pub fn sgd_step(&mut self, grads: &Grads, lr: f64) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (p, g) in layer.w.iter_mut().zip(&grads.w[l]) {
                *p -= lr * g;
            }
            for (p, g) in layer.b.iter_mut().zip(&grads.b[l]) {
                *p -= lr * g;
            }
        }
    }
}

/// Adam with the standard bias correction (β₁=0.9, β₂=0.999, ε=1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Grads,
    v: Grads,
}

impl Adam {
    pub fn new(mlp: &Mlp, lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Grads::zeros_like(mlp),
            v: Grads::zeros_like(mlp),
        }
    }

    pub fn step(&mut self, mlp: &mut Mlp, grads: &Grads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        };
        for (l, layer) in mlp.layers.iter_mut().enumerate() {
            for i in 0..layer.w.len() {
                update(&mut layer.w[i], &mut self.m.w[l][i], &mut self.v.w[l][i], grads.w[l][i]);
            }
            for i in 0..layer.b.len() {
                update(&mut layer.b[i], &mut self.m.b[l][i], &mut self.v.b[l][i], grads.b[l][i]);
            }
        }
    }
}

/// Exponential moving average of the online parameters into the target:
/// `t = (1 − τ)·t + τ·o`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) {
    for (tl, ol) in target.layers.iter_mut().zip(&online.layers) {
        for (t, o) in tl.w.iter_mut().zip(&ol.w) {
            *t += tau * (o - *t);
        }
        for (t, o) in tl.b.iter_mut().zip(&ol.b) {
            *t += tau * (o - *t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_final_sigmoid_head_starts_at_one_half() {
        let mlp = Mlp::new(&[9, 64, 64, 2], Head::Sigmoid, FinalInit::Zero, &mut rng(3));
        for trial in 0..5 {
            let x: Vec<f64> = (0..9).map(|i| (i as f64 + trial as f64) / 10.0).collect();
            let y = mlp.forward(&x);
            assert_eq!(y, vec![0.5, 0.5]);
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let a = Mlp::new(&[4, 8, 3], Head::Linear, FinalInit::Uniform(3e-3), &mut rng(7));
        let b = Mlp::new(&[4, 8, 3], Head::Linear, FinalInit::Uniform(3e-3), &mut rng(7));
        assert_eq!(a, b);
    }

    #[test]
    fn sigmoid_outputs_stay_in_unit_interval() {
        let mlp = Mlp::new(&[3, 16, 2], Head::Sigmoid, FinalInit::Uniform(2.0), &mut rng(11));
        let mut r = rng(12);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| r.gen_range(-5.0..5.0)).collect();
            for y in mlp.forward(&x) {
                assert!((0.0..=1.0).contains(&y), "{y}");
            }
        }
    }

    /// Analytic gradients match central finite differences on a scalar loss
    /// over both heads, including the input gradient.
    #[test]
    fn backward_matches_finite_differences() {
        for head in [Head::Linear, Head::Sigmoid] {
            let mut mlp = Mlp::new(&[4, 6, 5, 2], head, FinalInit::Uniform(0.5), &mut rng(21));
            let x: Vec<f64> = (0..4).map(|i| 0.3 * (i as f64) - 0.4).collect();
            let tgt = [0.7, -0.2];
            let loss = |m: &Mlp, x: &[f64]| -> f64 {
                m.forward(x).iter().zip(tgt).map(|(y, t)| (y - t) * (y - t)).sum()
            };

            let (y, cache) = mlp.forward_cached(&x);
            let dout: Vec<f64> = y.iter().zip(tgt).map(|(y, t)| 2.0 * (y - t)).collect();
            let mut grads = Grads::zeros_like(&mlp);
            let dx = mlp.backward(&cache, &dout, &mut grads);

            let h = 1e-6;
            for l in 0..mlp.layers.len() {
                for i in 0..mlp.layers[l].w.len() {
                    let orig = mlp.layers[l].w[i];
                    mlp.layers[l].w[i] = orig + h;
                    let up = loss(&mlp, &x);
                    mlp.layers[l].w[i] = orig - h;
                    let dn = loss(&mlp, &x);
                    mlp.layers[l].w[i] = orig;
                    let fd = (up - dn) / (2.0 * h);
                    let an = grads.w[l][i];
                    assert!(
                        (an - fd).abs() <= 1e-4 * an.abs().max(fd.abs()).max(1e-6),
                        "layer {l} w[{i}]: analytic {an} vs fd {fd}"
                    );
                }
            }
            let mut xp = x.clone();
            for (i, dxi) in dx.iter().enumerate() {
                let orig = xp[i];
                xp[i] = orig + h;
                let up = loss(&mlp, &xp);
                xp[i] = orig - h;
                let dn = loss(&mlp, &xp);
                xp[i] = orig;
                let fd = (up - dn) / (2.0 * h);
                assert!(
                    (dxi - fd).abs() <= 1e-4 * dxi.abs().max(fd.abs()).max(1e-6),
                    "input grad [{i}]: analytic {dxi} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn adam_with_zero_gradients_leaves_parameters_unchanged() {
        let mut mlp = Mlp::new(&[3, 4, 1], Head::Linear, FinalInit::Uniform(0.1), &mut rng(31));
        let before = mlp.clone();
        let mut opt = Adam::new(&mlp, 1e-2);
        let grads = Grads::zeros_like(&mlp);
        for _ in 0..3 {
            opt.step(&mut mlp, &grads);
        }
        assert_eq!(mlp, before);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut mlp = Mlp::new(&[2, 8, 1], Head::Linear, FinalInit::Uniform(0.5), &mut rng(41));
        let mut opt = Adam::new(&mlp, 1e-2);
        let x = [0.5, -1.0];
        let loss_of = |m: &Mlp| {
            let y = m.forward(&x)[0];
            (y - 2.0) * (y - 2.0)
        };
        let start = loss_of(&mlp);
        let mut grads = Grads::zeros_like(&mlp);
        for _ in 0..500 {
            let (y, cache) = mlp.forward_cached(&x);
            grads.clear();
            mlp.backward(&cache, &[2.0 * (y[0] - 2.0)], &mut grads);
            opt.step(&mut mlp, &grads);
        }
        assert!(loss_of(&mlp) < 1e-4, "start {start}, end {}", loss_of(&mlp));
    }

    #[test]
    fn soft_update_converges_toward_online_network() {
        let online = Mlp::new(&[2, 3, 1], Head::Linear, FinalInit::Uniform(0.3), &mut rng(51));
        let mut target = Mlp::new(&[2, 3, 1], Head::Linear, FinalInit::Uniform(0.3), &mut rng(52));
        for _ in 0..2000 {
            soft_update(&mut target, &online, 0.01);
        }
        for (tl, ol) in target.layers.iter().zip(&online.layers) {
            for (t, o) in tl.w.iter().zip(&ol.w) {
                assert!((t - o).abs() < 1e-6);
            }
        }
    }
}
