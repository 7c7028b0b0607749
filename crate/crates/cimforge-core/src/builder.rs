//! Float model construction and calibration-based QDQ export.
//!
//! `qdq_from_float` turns a float graph into the fake-quantized (QDQ) form the
//! compiler passes consume: weights become integer constants with attached
//! scales, and every activation edge that crosses into a quantized op gets an
//! explicit Quantize/Dequantize pair whose scale comes from calibration
//! statistics (symmetric, `scale = max|x| / q_max`).
//!
//! The rest of the module is a small zoo of seeded float models (MLPs, a toy
//! CNN, larger CNN/attention-shaped graphs, and a randomized generator) used
//! by the test suites and the `gen-model` CLI command.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::graph::{ConstTensor, DType, Graph, IoTensor, Node, Op, Placement};
use crate::interp::{eval_graph, Value};
use crate::quant::{q_max, quantize_symmetric};

/// Per-tensor calibration statistics collected from float inference.
#[derive(Debug, Clone, Copy)]
struct TensorStats {
    amax: f64,
    min: f64,
}

/// Collect `max|x|` and `min x` for every float tensor over the calibration
/// sets.
fn collect_stats(
    graph: &Graph,
    calib: &[Vec<(String, Value)>],
) -> Result<BTreeMap<String, TensorStats>> {
    let mut stats: BTreeMap<String, TensorStats> = BTreeMap::new();
    for set in calib {
        let env = eval_graph(graph, set)?;
        for (name, value) in &env {
            if let Value::F64 { data, .. } = value {
                let entry = stats
                    .entry(name.clone())
                    .or_insert(TensorStats { amax: 0.0, min: 0.0 });
                for &x in data {
                    if !x.is_finite() {
                        return Err(CoreError::validation(format!(
                            "calibration produced a non-finite value in tensor {name:?}"
                        )));
                    }
                    entry.amax = entry.amax.max(x.abs());
                    entry.min = entry.min.min(x);
                }
            }
        }
    }
    Ok(stats)
}

/// Range statistic for a tensor, looking through scale-preserving ops.
/// MaxPool and Flatten outputs reuse their input's amax so that requantizing
/// across them is exact (the Quantize after the op cancels against the
/// Dequantize before it under the compiler's merge rule).
fn amax_for(graph: &Graph, stats: &BTreeMap<String, TensorStats>, tensor: &str) -> Result<f64> {
    let mut cur = tensor.to_string();
    loop {
        if let Some(idx) = graph.producer(&cur) {
            let node = &graph.nodes[idx];
            if matches!(node.op, Op::MaxPool { .. } | Op::Flatten { .. }) {
                cur = node.inputs[0].clone();
                continue;
            }
        }
        return match stats.get(&cur) {
            Some(s) => Ok(s.amax),
            None => Err(CoreError::validation(format!(
                "no calibration statistics for tensor {cur:?}"
            ))),
        };
    }
}

fn signed_for(stats: &BTreeMap<String, TensorStats>, tensor: &str) -> bool {
    stats.get(tensor).map(|s| s.min < 0.0).unwrap_or(true)
}

/// Smallest activation width any downstream CIM layer will stream this tensor
/// (or a value derived from it) at; 8 when nothing downstream is CIM-eligible.
/// Used to pick the width of Quantize nodes on CPU-side elementwise edges.
fn downstream_a_bit(graph: &Graph, tensor: &str, cim_bits: &BTreeMap<String, (u8, u8)>) -> u8 {
    let mut queue = vec![tensor.to_string()];
    let mut seen = std::collections::BTreeSet::new();
    let mut best: Option<u8> = None;
    while let Some(t) = queue.pop() {
        if !seen.insert(t.clone()) {
            continue;
        }
        for idx in graph.consumers(&t) {
            let node = &graph.nodes[idx];
            if node.op.is_matmul_family() {
                if let Some(&(_, a_bit)) = cim_bits.get(&node.id) {
                    best = Some(best.map_or(a_bit, |b| b.min(a_bit)));
                }
            } else {
                queue.push(node.output.clone());
            }
        }
    }
    best.unwrap_or(8)
}

/// State for inserting shared Quantize/Dequantize pairs into the QDQ graph.
struct QdqInserter {
    counter: usize,
    memo: BTreeMap<(String, u8, bool), String>,
}

impl QdqInserter {
    fn new() -> QdqInserter {
        QdqInserter { counter: 0, memo: BTreeMap::new() }
    }

    /// Return the name of a fake-quantized view of `tensor` at the given
    /// width/signedness, appending a Quantize/Dequantize pair on first use.
    fn qv(
        &mut self,
        out: &mut Graph,
        graph: &Graph,
        stats: &BTreeMap<String, TensorStats>,
        tensor: &str,
        bits: u8,
        signed: bool,
    ) -> Result<String> {
        let key = (tensor.to_string(), bits, signed);
        if let Some(name) = self.memo.get(&key) {
            return Ok(name.clone());
        }
        let amax = amax_for(graph, stats, tensor)?;
        let scale = if amax > 0.0 { amax / q_max(bits, signed) as f64 } else { 1.0 };
        let n = self.counter;
        self.counter += 1;
        let codes = format!("{tensor}__c{n}");
        let fq = format!("{tensor}__fq{n}");
        out.nodes.push(Node {
            id: format!("q{n}"),
            op: Op::Quantize { scale, bits, signed },
            inputs: vec![tensor.to_string()],
            output: codes.clone(),
            placement: Placement::Unassigned,
        });
        out.nodes.push(Node {
            id: format!("dq{n}"),
            op: Op::Dequantize { scale, bits, signed },
            inputs: vec![codes],
            output: fq.clone(),
            placement: Placement::Unassigned,
        });
        self.memo.insert(key, fq.clone());
        Ok(fq)
    }
}

/// Convert a float graph to fake-quantized (QDQ) form using calibration data.
///
/// `bits` gives `(w_bit, a_bit)` per CIM-eligible (Conv2D/Dense/MatMul) node
/// in topological order. Weights are quantized symmetrically in place (the
/// constant keeps its name but becomes an integer tensor with a scale);
/// activations get Quantize/Dequantize pairs scaled from the observed
/// `max|x|` over `calib`. Matmul/Dense/Conv followed immediately by their
/// exclusive BiasAdd/Relu consumers keep those epilogues inside the quantized
/// region (no QDQ between them), matching what the fusion pass expects.
///
/// With `quantize_output` set, each graph output is replaced by its 8-bit
/// integer codes (a trailing Quantize, no Dequantize); otherwise outputs stay
/// float behind a final QDQ pair, which the compiler turns into a single
/// trailing Dequantize.
pub fn qdq_from_float(
    float_graph: &Graph,
    bits: &[(u8, u8)],
    calib: &[Vec<(String, Value)>],
    quantize_output: bool,
) -> Result<Graph> {
    float_graph.validate()?;
    for node in &float_graph.nodes {
        let quantized = matches!(
            node.op,
            Op::Quantize { .. } | Op::Dequantize { .. } | Op::Requantize { .. }
        ) || node.op.is_integer() == Some(true);
        if quantized {
            return Err(CoreError::validation(format!(
                "node {:?}: input graph is already quantized",
                node.id
            )));
        }
    }
    if calib.is_empty() {
        return Err(CoreError::validation(
            "quantization calibration requires at least one input set",
        ));
    }

    let topo = float_graph.topo_order()?;
    let cim_ids: Vec<&str> = topo
        .iter()
        .filter(|&&i| float_graph.nodes[i].op.is_matmul_family())
        .map(|&i| float_graph.nodes[i].id.as_str())
        .collect();
    if cim_ids.len() != bits.len() {
        return Err(CoreError::validation(format!(
            "model has {} CIM-eligible layers but the config lists {}",
            cim_ids.len(),
            bits.len()
        )));
    }
    for &(w, a) in bits {
        if !(crate::quant::MIN_BITS..=crate::quant::MAX_BITS).contains(&w)
            || !(crate::quant::MIN_BITS..=crate::quant::MAX_BITS).contains(&a)
        {
            return Err(CoreError::validation(format!(
                "bit widths must lie in {}..={}, got ({w}, {a})",
                crate::quant::MIN_BITS,
                crate::quant::MAX_BITS
            )));
        }
    }
    let cim_bits: BTreeMap<String, (u8, u8)> = cim_ids
        .iter()
        .zip(bits)
        .map(|(id, &b)| (id.to_string(), b))
        .collect();

    let stats = collect_stats(float_graph, calib)?;

    // Matmul-family epilogues (an exclusive BiasAdd, then an exclusive Relu)
    // stay un-instrumented so the whole sandwich fuses into one integer
    // region.
    let mut interior = std::collections::BTreeSet::new();
    for &i in &topo {
        let node = &float_graph.nodes[i];
        if !node.op.is_matmul_family() {
            continue;
        }
        let mut tail = node.output.clone();
        let cons = float_graph.consumers(&tail);
        if let [ci] = cons[..] {
            let c = &float_graph.nodes[ci];
            if matches!(c.op, Op::BiasAdd { .. }) && c.inputs[0] == tail {
                interior.insert(c.id.clone());
                tail = c.output.clone();
            }
        }
        let cons = float_graph.consumers(&tail);
        if let [ci] = cons[..] {
            let c = &float_graph.nodes[ci];
            if matches!(c.op, Op::Relu { .. }) {
                interior.insert(c.id.clone());
            }
        }
    }

    let mut out = Graph::new(float_graph.name.clone());
    out.inputs = float_graph.inputs.clone();
    out.tensors = float_graph.tensors.clone();
    let mut ins = QdqInserter::new();

    for &i in &topo {
        let node = &float_graph.nodes[i];
        if interior.contains(&node.id) {
            out.nodes.push(node.clone());
            continue;
        }
        match &node.op {
            Op::Conv2D { .. } | Op::Dense { .. } => {
                let (w_bit, a_bit) = cim_bits[&node.id];
                let signed = signed_for(&stats, &node.inputs[0]);
                let xin = ins.qv(&mut out, float_graph, &stats, &node.inputs[0], a_bit, signed)?;
                let wname = &node.inputs[1];
                let (shape, data) = match float_graph.tensors.get(wname) {
                    Some(ConstTensor::F64 { shape, data }) => (shape.clone(), data.clone()),
                    _ => {
                        return Err(CoreError::validation(format!(
                            "node {:?}: weights must be a float constant tensor",
                            node.id
                        )))
                    }
                };
                let qt = quantize_symmetric(&data, &shape, w_bit, true)?;
                out.tensors.insert(
                    wname.clone(),
                    ConstTensor::I32 {
                        shape,
                        data: qt.data,
                        scale: qt.scale,
                        bits: w_bit,
                        signed: true,
                    },
                );
                let mut n = node.clone();
                n.inputs = vec![xin, wname.clone()];
                out.nodes.push(n);
            }
            Op::MatMul { .. } => {
                let (w_bit, a_bit) = cim_bits[&node.id];
                let signed = signed_for(&stats, &node.inputs[0]);
                let a_in = ins.qv(&mut out, float_graph, &stats, &node.inputs[0], a_bit, signed)?;
                // The stationary operand maps onto differential conductance
                // pairs, which encode signed values; always quantize it
                // signed.
                let b_in = ins.qv(&mut out, float_graph, &stats, &node.inputs[1], w_bit, true)?;
                let mut n = node.clone();
                n.inputs = vec![a_in, b_in];
                out.nodes.push(n);
            }
            Op::BiasAdd { .. }
            | Op::Relu { .. }
            | Op::Add { .. }
            | Op::MaxPool { .. }
            | Op::Flatten { .. } => {
                let b = downstream_a_bit(float_graph, &node.output, &cim_bits);
                let mut inputs = Vec::with_capacity(node.inputs.len());
                for t in &node.inputs {
                    if float_graph.tensors.contains_key(t) {
                        inputs.push(t.clone());
                    } else {
                        let signed = signed_for(&stats, t);
                        inputs.push(ins.qv(&mut out, float_graph, &stats, t, b, signed)?);
                    }
                }
                let mut n = node.clone();
                n.inputs = inputs;
                out.nodes.push(n);
            }
            Op::Quantize { .. } | Op::Dequantize { .. } | Op::Requantize { .. } => unreachable!(),
        }
    }

    for name in &float_graph.outputs {
        let signed = signed_for(&stats, name);
        if quantize_output {
            let amax = amax_for(float_graph, &stats, name)?;
            let scale = if amax > 0.0 { amax / q_max(8, signed) as f64 } else { 1.0 };
            let n = ins.counter;
            ins.counter += 1;
            let codes = format!("{name}__c{n}");
            out.nodes.push(Node {
                id: format!("q{n}"),
                op: Op::Quantize { scale, bits: 8, signed },
                inputs: vec![name.clone()],
                output: codes.clone(),
                placement: Placement::Unassigned,
            });
            out.outputs.push(codes);
        } else {
            let fq = ins.qv(&mut out, float_graph, &stats, name, 8, signed)?;
            out.outputs.push(fq);
        }
    }

    out.validate()?;
    Ok(out)
}

/// Number of CIM-eligible (Conv2D/Dense/MatMul) nodes, in topological order
/// the same way `qdq_from_float` counts them.
pub fn cim_layer_count(graph: &Graph) -> usize {
    graph.nodes.iter().filter(|n| n.op.is_matmul_family()).count()
}

// ---------------------------------------------------------------------------
// Seeded float model generators.
// ---------------------------------------------------------------------------

/// Incremental float graph builder with seeded weight initialization.
struct Fb {
    g: Graph,
    rng: ChaCha8Rng,
    n: usize,
    cur: String,
    /// Multiplier on the He-uniform weight bound. Deep unnormalized stacks
    /// (the attention-shaped model) need < 1 to keep activations finite.
    w_gain: f64,
}

impl Fb {
    fn new(name: &str, seed: u64) -> Fb {
        Fb {
            g: Graph::new(name),
            rng: ChaCha8Rng::seed_from_u64(seed),
            n: 0,
            cur: String::new(),
            w_gain: 1.0,
        }
    }

    fn fresh(&mut self, base: &str) -> String {
        self.n += 1;
        format!("{base}{}", self.n)
    }

    fn input(&mut self, name: &str, shape: Vec<usize>) -> String {
        self.g.inputs.push(IoTensor { name: name.to_string(), shape, dtype: DType::F64 });
        self.cur = name.to_string();
        name.to_string()
    }

    fn shape_of(&self, tensor: &str) -> Vec<usize> {
        self.g
            .infer_types()
            .expect("builder graph stays well-formed")
            .get(tensor)
            .expect("tensor exists")
            .shape
            .clone()
    }

    fn weights(&mut self, name: &str, shape: Vec<usize>, fan_in: usize) -> String {
        let bound = self.w_gain * (6.0 / fan_in as f64).sqrt();
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.g.tensors.insert(name.to_string(), ConstTensor::F64 { shape, data });
        name.to_string()
    }

    fn push(&mut self, id: String, op: Op, inputs: Vec<String>) -> String {
        let output = format!("{id}_out");
        self.g.nodes.push(Node {
            id,
            op,
            inputs,
            output: output.clone(),
            placement: Placement::Unassigned,
        });
        output
    }

    fn maybe_bias_relu(&mut self, mut t: String, bias: bool, relu: bool) -> String {
        if bias {
            let shape = self.shape_of(&t);
            // Bias broadcasts over the channel axis for CHW tensors and the
            // last axis otherwise.
            let m = if shape.len() == 3 { shape[0] } else { *shape.last().unwrap() };
            let id = self.fresh("bias");
            let bname = format!("{id}_b");
            let data: Vec<f64> = (0..m).map(|_| self.rng.gen_range(-0.2..0.2)).collect();
            self.g.tensors.insert(bname.clone(), ConstTensor::F64 { shape: vec![m], data });
            t = self.push(id, Op::BiasAdd { integer: false }, vec![t, bname]);
        }
        if relu {
            let id = self.fresh("relu");
            t = self.push(id, Op::Relu { integer: false }, vec![t]);
        }
        t
    }

    fn dense_from(&mut self, x: &str, m: usize, bias: bool, relu: bool) -> String {
        let in_shape = self.shape_of(x);
        let n = *in_shape.last().unwrap();
        let id = self.fresh("dense");
        let w = self.weights(&format!("{id}_w"), vec![n, m], n);
        let t = self.push(
            id,
            Op::Dense { r_repeat: 1, integer: false, quant: None },
            vec![x.to_string(), w],
        );
        self.maybe_bias_relu(t, bias, relu)
    }

    fn dense(&mut self, m: usize, bias: bool, relu: bool) -> String {
        let x = self.cur.clone();
        let t = self.dense_from(&x, m, bias, relu);
        self.cur = t.clone();
        t
    }

    fn conv(
        &mut self,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        relu: bool,
    ) -> String {
        let x = self.cur.clone();
        let c_in = self.shape_of(&x)[0];
        let id = self.fresh("conv");
        let w = self.weights(
            &format!("{id}_w"),
            vec![c_out, c_in, kernel, kernel],
            c_in * kernel * kernel,
        );
        let t = self.push(
            id,
            Op::Conv2D {
                stride: [stride, stride],
                padding: [padding, padding],
                r_repeat: 1,
                integer: false,
                quant: None,
            },
            vec![x, w],
        );
        let t = self.maybe_bias_relu(t, bias, relu);
        self.cur = t.clone();
        t
    }

    fn pool(&mut self, kernel: usize, stride: usize) -> String {
        let x = self.cur.clone();
        let id = self.fresh("pool");
        let t = self.push(
            id,
            Op::MaxPool { kernel: [kernel, kernel], stride: [stride, stride], integer: false },
            vec![x],
        );
        self.cur = t.clone();
        t
    }

    fn flatten(&mut self) -> String {
        let x = self.cur.clone();
        let id = self.fresh("flatten");
        let t = self.push(id, Op::Flatten { integer: false }, vec![x]);
        self.cur = t.clone();
        t
    }

    fn matmul_from(&mut self, a: &str, b: &str, transpose_b: bool) -> String {
        let id = self.fresh("matmul");
        self.push(
            id,
            Op::MatMul { transpose_b, r_repeat: 1, integer: false, quant: None },
            vec![a.to_string(), b.to_string()],
        )
    }

    fn add_from(&mut self, a: &str, b: &str) -> String {
        let id = self.fresh("add");
        self.push(id, Op::Add { quant: None }, vec![a.to_string(), b.to_string()])
    }

    fn relu_from(&mut self, x: &str) -> String {
        let id = self.fresh("relu");
        self.push(id, Op::Relu { integer: false }, vec![x.to_string()])
    }

    fn output(&mut self, tensor: &str) {
        self.g.outputs.push(tensor.to_string());
    }

    fn finish(self) -> Graph {
        self.g.validate().expect("generated graph is well-formed");
        self.g
    }
}

/// Fully-connected float model: `dims = [in, hidden..., out]`, ReLU between
/// layers (none after the last).
pub fn mlp_float(name: &str, seed: u64, dims: &[usize], bias: bool) -> Graph {
    assert!(dims.len() >= 2, "an MLP needs at least one layer");
    let mut b = Fb::new(name, seed);
    b.input("x", vec![dims[0]]);
    for (i, &m) in dims[1..].iter().enumerate() {
        let last = i == dims.len() - 2;
        b.dense(m, bias, !last);
    }
    let out = b.cur.clone();
    b.output(&out);
    b.finish()
}

/// Fully-connected float model over a batch: input `[batch, dims[0]]`, so
/// every Dense layer streams `batch` vectors through the crossbar (v_l =
/// batch in the cost model, the MVM-dominated regime).
pub fn mlp_batched_float(name: &str, seed: u64, batch: usize, dims: &[usize], bias: bool) -> Graph {
    assert!(dims.len() >= 2, "an MLP needs at least one layer");
    assert!(batch >= 1, "batch must be at least 1");
    let mut b = Fb::new(name, seed);
    b.input("x", vec![batch, dims[0]]);
    for (i, &m) in dims[1..].iter().enumerate() {
        let last = i == dims.len() - 2;
        b.dense(m, bias, !last);
    }
    let out = b.cur.clone();
    b.output(&out);
    b.finish()
}

/// Five independent Dense branches with strongly heterogeneous GEMM shapes
/// `(m, n, v)` — the bundled mixed-precision search benchmark. Parallel
/// branches (rather than a chain) let each layer take an arbitrary input
/// width and vector count, which spreads the per-layer latency shares over
/// two orders of magnitude; searches then face distinctly ranked layer
/// trade-offs instead of five near-identical ones.
pub fn search_bench_float(seed: u64) -> Graph {
    const SHAPES: [(usize, usize, usize); 5] =
        [(16, 1024, 8), (16, 32, 128), (64, 32, 128), (32, 512, 64), (64, 256, 2)];
    let mut b = Fb::new("search_bench", seed);
    for (i, &(m, n, v)) in SHAPES.iter().enumerate() {
        b.input(&format!("x{i}"), vec![v, n]);
        b.dense(m, true, true);
        let out = b.cur.clone();
        b.output(&out);
    }
    b.finish()
}

/// Two-layer MLP (16 -> 32 -> 8, no bias).
pub fn mlp2_float(seed: u64) -> Graph {
    mlp_float("mlp2", seed, &[16, 32, 8], false)
}

/// Four-layer MLP (16 -> 32 -> 32 -> 16 -> 8, with biases).
pub fn mlp4_float(seed: u64) -> Graph {
    mlp_float("mlp4", seed, &[16, 32, 32, 16, 8], true)
}

/// The two-layer MLP exported to QDQ form at 8/8 bits: the canonical small
/// fixture (2 Dense, 5 Quantize/Dequantize, 1 ReLU, integer outputs).
pub fn mlp2_qdq() -> Result<Graph> {
    let f = mlp2_float(7);
    let calib = calib_inputs(&f, 101, 8);
    qdq_from_float(&f, &[(8, 8), (8, 8)], &calib, true)
}

/// Six-CIM-layer toy CNN on `[3, 8, 8]` inputs: four convolutions with
/// pooling, then two dense layers.
pub fn toy_cnn_float(seed: u64) -> Graph {
    let mut b = Fb::new("toy_cnn", seed);
    b.input("image", vec![3, 8, 8]);
    b.conv(8, 3, 1, 1, true, true);
    b.pool(2, 2);
    b.conv(12, 3, 1, 1, true, true);
    b.conv(16, 3, 1, 1, false, true);
    b.pool(2, 2);
    b.conv(16, 1, 1, 0, true, true);
    b.flatten();
    b.dense(32, true, true);
    b.dense(10, true, false);
    let out = b.cur.clone();
    b.output(&out);
    b.finish()
}

/// ResNet-18-shaped layer stack scaled down to toy sizes: 20 convolutions and
/// one dense head (21 CIM-eligible layers), `[3, 8, 8]` inputs.
pub fn resnet18_shaped_float(seed: u64) -> Graph {
    let mut b = Fb::new("resnet18_shaped", seed);
    b.input("image", vec![3, 8, 8]);
    let channels = [4, 4, 4, 4, 6, 6, 6, 6, 8, 8, 8, 8, 10, 10, 10, 10, 12, 12, 12, 12];
    for (i, &c) in channels.iter().enumerate() {
        b.conv(c, 3, 1, 1, true, true);
        if i == 9 {
            b.pool(2, 2);
        }
    }
    b.flatten();
    b.dense(10, true, false);
    let out = b.cur.clone();
    b.output(&out);
    b.finish()
}

/// ViT-B/32-shaped layer stack scaled down to toy sizes: one patch-embedding
/// convolution, 12 attention blocks of 4 dense + 2 matmul layers each, and a
/// dense head: 1 Conv2D + 49 Dense + 24 MatMul = 74 CIM-eligible layers.
///
/// The patch embedding runs on an image input and is exposed as an auxiliary
/// output; the blocks run on a pre-embedded `[tokens, d]` input (the op set
/// has no reshape between CHW and token layouts). ReLU stands in for softmax
/// on the attention scores.
pub fn vit_shaped_float(seed: u64) -> Graph {
    let mut b = Fb::new("vit_shaped", seed);
    // The attention path multiplies three activations per block; damp the
    // weights so twelve unnormalized blocks stay numerically bounded.
    b.w_gain = 0.15;
    b.input("image", vec![3, 16, 16]);
    b.conv(8, 8, 8, 0, true, true);
    b.flatten();
    let aux = b.cur.clone();

    b.input("tokens", vec![4, 48]);
    let mut x = b.cur.clone();
    for _ in 0..12 {
        let t = b.dense_from(&x, 48, true, false);
        let scores = b.matmul_from(&t, &t, true);
        let attn = b.relu_from(&scores);
        let mixed = b.matmul_from(&attn, &t, false);
        let proj = b.dense_from(&mixed, 48, true, false);
        let x1 = b.add_from(&x, &proj);
        let f1 = b.dense_from(&x1, 64, true, true);
        let f2 = b.dense_from(&f1, 48, true, false);
        x = b.add_from(&x1, &f2);
    }
    let head = b.dense_from(&x, 10, true, false);
    b.output(&head);
    b.output(&aux);
    b.finish()
}

/// Randomized small float model plus a random per-layer `(w_bit, a_bit)`
/// assignment. Three families keyed on the seed: dense chains with optional
/// residual adds, conv/pool/flatten stacks, and attention-style matmul
/// graphs.
pub fn random_small_graph(seed: u64) -> (Graph, Vec<(u8, u8)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);
    let mut b = Fb::new(&format!("rand{seed}"), seed.wrapping_mul(31).wrapping_add(7));
    match seed % 3 {
        0 => {
            let n0 = rng.gen_range(3..=8);
            b.input("x", vec![n0]);
            let hidden = rng.gen_range(1..=3);
            for _ in 0..hidden {
                let m = rng.gen_range(3..=8);
                b.dense(m, rng.gen_bool(0.5), rng.gen_bool(0.7));
                if rng.gen_bool(0.35) {
                    let x = b.cur.clone();
                    let dim = b.shape_of(&x)[0];
                    let d = b.dense_from(&x, dim, false, false);
                    let s = b.add_from(&x, &d);
                    b.cur = s;
                }
            }
            b.dense(rng.gen_range(2..=6), rng.gen_bool(0.5), false);
        }
        1 => {
            let c = rng.gen_range(1..=3);
            let hw = rng.gen_range(5..=8);
            b.input("x", vec![c, hw, hw]);
            let convs = rng.gen_range(1..=2);
            for _ in 0..convs {
                let co = rng.gen_range(2..=4);
                b.conv(co, 3, 1, 1, rng.gen_bool(0.5), rng.gen_bool(0.7));
            }
            if rng.gen_bool(0.6) {
                b.pool(2, 2);
            }
            b.flatten();
            b.dense(rng.gen_range(2..=5), rng.gen_bool(0.5), false);
        }
        _ => {
            let v = rng.gen_range(2..=4);
            let k = rng.gen_range(3..=6);
            b.input("x", vec![v, k]);
            let t = b.cur.clone();
            let scores = b.matmul_from(&t, &t, true);
            let attn = b.relu_from(&scores);
            let mixed = b.matmul_from(&attn, &t, false);
            b.cur = mixed;
            b.dense(rng.gen_range(2..=5), rng.gen_bool(0.5), false);
        }
    }
    let out = b.cur.clone();
    b.output(&out);
    let g = b.finish();
    let bits = (0..cim_layer_count(&g))
        .map(|_| (rng.gen_range(2..=8u8), rng.gen_range(2..=8u8)))
        .collect();
    (g, bits)
}

/// One random input set for a graph: uniform values in `[-1, 1]` for every
/// declared float input.
pub fn sample_input(graph: &Graph, seed: u64) -> Vec<(String, Value)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    graph
        .inputs
        .iter()
        .map(|io| {
            let numel: usize = io.shape.iter().product();
            let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (io.name.clone(), Value::F64 { shape: io.shape.clone(), data })
        })
        .collect()
}

/// `n` random calibration input sets.
pub fn calib_inputs(graph: &Graph, seed: u64, n: usize) -> Vec<Vec<(String, Value)>> {
    (0..n as u64).map(|i| sample_input(graph, seed.wrapping_add(i))).collect()
}
