//! Compiler passes: fake-quant-to-integer conversion, QNN operator fusion,
//! and device partitioning.
//!
//! All passes are pure graph-to-graph functions. `fq2i_pass` and
//! `qnn_fuse_pass` share one normalization fixpoint with two rewrite rules:
//!
//! * convert: a float op whose activation inputs are all Dequantize outputs
//!   is replaced by its integer form operating on the codes, followed by a
//!   Dequantize of the result (accumulator scale `s_in * s_w` for the
//!   matmul family, the max input scale for Add, the unchanged input scale
//!   for ReLU/MaxPool/Flatten);
//! * merge: `Quantize(Dequantize(x))` collapses to `x` when the params are
//!   identical, otherwise to a single `Requantize`.
//!
//! `qnn_fuse_pass` additionally folds float bias constants into the integer
//! accumulator domain (`round(b / s_acc)`) and then requires that no float
//! compute survives; at most a final Dequantize per graph output may remain.

use std::collections::BTreeSet;

use crate::error::{CoreError, Result};
use crate::graph::{AddQuant, ConstTensor, Graph, MatmulQuant, Node, Op, Placement};
use crate::quant::round_half_away;

/// Producer-side view of a quantized tensor: the Dequantize node that turns
/// integer codes back into floats.
struct DqInfo {
    scale: f64,
    bits: u8,
    signed: bool,
    /// The integer tensor feeding the Dequantize.
    int_input: String,
}

fn dq_of(g: &Graph, tensor: &str) -> Option<DqInfo> {
    let idx = g.producer(tensor)?;
    let node = &g.nodes[idx];
    match node.op {
        Op::Dequantize { scale, bits, signed } => Some(DqInfo {
            scale,
            bits,
            signed,
            int_input: node.inputs[0].clone(),
        }),
        _ => None,
    }
}

fn weight_meta(g: &Graph, name: &str, node_id: &str) -> Result<(f64, u8)> {
    match g.tensors.get(name) {
        Some(ConstTensor::I32 { scale, bits, .. }) => Ok((*scale, *bits)),
        Some(ConstTensor::F64 { .. }) => Err(CoreError::validation(format!(
            "node {node_id:?}: weight tensor {name:?} is float; weights must be quantized constants"
        ))),
        None => Err(CoreError::validation(format!(
            "node {node_id:?}: weight tensor {name:?} must be a constant"
        ))),
    }
}

/// A tensor name not yet used by any input, constant, or node output.
fn fresh_tensor(g: &Graph, base: &str) -> String {
    let mut used: BTreeSet<&str> = g.tensors.keys().map(|s| s.as_str()).collect();
    for i in &g.inputs {
        used.insert(&i.name);
    }
    for n in &g.nodes {
        used.insert(&n.output);
    }
    if !used.contains(base) {
        return base.to_string();
    }
    let mut k = 1usize;
    loop {
        let candidate = format!("{base}_{k}");
        if !used.contains(candidate.as_str()) {
            return candidate;
        }
        k += 1;
    }
}

/// Applies one convert rewrite if possible. Returns whether the graph changed.
fn try_convert_one(g: &mut Graph) -> Result<bool> {
    for idx in 0..g.nodes.len() {
        let node = g.nodes[idx].clone();
        if node.op.is_integer() != Some(false) || matches!(node.op, Op::BiasAdd { .. }) {
            continue;
        }
        match &node.op {
            Op::Conv2D { stride, padding, r_repeat, .. } => {
                let Some(dq) = dq_of(g, &node.inputs[0]) else { continue };
                let (s_w, w_bit) = weight_meta(g, &node.inputs[1], &node.id)?;
                let quant = MatmulQuant {
                    s_in: dq.scale,
                    s_w,
                    a_bit: dq.bits,
                    w_bit,
                    signed_in: dq.signed,
                };
                let op = Op::Conv2D {
                    stride: *stride,
                    padding: *padding,
                    r_repeat: *r_repeat,
                    integer: true,
                    quant: Some(quant),
                };
                apply_matmul_convert(g, idx, op, vec![dq.int_input, node.inputs[1].clone()], quant);
                return Ok(true);
            }
            Op::Dense { r_repeat, .. } => {
                let Some(dq) = dq_of(g, &node.inputs[0]) else { continue };
                let (s_w, w_bit) = weight_meta(g, &node.inputs[1], &node.id)?;
                let quant = MatmulQuant {
                    s_in: dq.scale,
                    s_w,
                    a_bit: dq.bits,
                    w_bit,
                    signed_in: dq.signed,
                };
                let op = Op::Dense { r_repeat: *r_repeat, integer: true, quant: Some(quant) };
                apply_matmul_convert(g, idx, op, vec![dq.int_input, node.inputs[1].clone()], quant);
                return Ok(true);
            }
            Op::MatMul { transpose_b, r_repeat, .. } => {
                let Some(dq_a) = dq_of(g, &node.inputs[0]) else { continue };
                let Some(dq_b) = dq_of(g, &node.inputs[1]) else { continue };
                let quant = MatmulQuant {
                    s_in: dq_a.scale,
                    s_w: dq_b.scale,
                    a_bit: dq_a.bits,
                    w_bit: dq_b.bits,
                    signed_in: dq_a.signed,
                };
                let op = Op::MatMul {
                    transpose_b: *transpose_b,
                    r_repeat: *r_repeat,
                    integer: true,
                    quant: Some(quant),
                };
                apply_matmul_convert(g, idx, op, vec![dq_a.int_input, dq_b.int_input], quant);
                return Ok(true);
            }
            Op::Relu { .. } | Op::MaxPool { .. } | Op::Flatten { .. } => {
                let Some(dq) = dq_of(g, &node.inputs[0]) else { continue };
                let op = match &node.op {
                    Op::Relu { .. } => Op::Relu { integer: true },
                    Op::MaxPool { kernel, stride, .. } => {
                        Op::MaxPool { kernel: *kernel, stride: *stride, integer: true }
                    }
                    Op::Flatten { .. } => Op::Flatten { integer: true },
                    _ => unreachable!(),
                };
                // Same quant domain in and out: the trailing Dequantize copies
                // the input's params, so a following Quantize of equal params
                // cancels entirely.
                let dq_op = Op::Dequantize { scale: dq.scale, bits: dq.bits, signed: dq.signed };
                apply_unary_convert(g, idx, op, dq.int_input, dq_op);
                return Ok(true);
            }
            Op::Add { .. } => {
                let Some(dq_a) = dq_of(g, &node.inputs[0]) else { continue };
                let Some(dq_b) = dq_of(g, &node.inputs[1]) else { continue };
                let quant = AddQuant { s_a: dq_a.scale, s_b: dq_b.scale };
                let op = Op::Add { quant: Some(quant) };
                let dq_op =
                    Op::Dequantize { scale: quant.common_scale(), bits: 32, signed: true };
                let acc = fresh_tensor(g, &format!("{}__acc", node.output));
                let dq_id = g.fresh_id(&format!("{}__dq", node.id));
                let mut new_node = node.clone();
                new_node.op = op;
                new_node.inputs = vec![dq_a.int_input, dq_b.int_input];
                new_node.output = acc.clone();
                g.nodes[idx] = new_node;
                g.nodes.insert(
                    idx + 1,
                    Node {
                        id: dq_id,
                        op: dq_op,
                        inputs: vec![acc],
                        output: node.output.clone(),
                        placement: Placement::Unassigned,
                    },
                );
                return Ok(true);
            }
            _ => {}
        }
    }
    Ok(false)
}

fn apply_matmul_convert(g: &mut Graph, idx: usize, op: Op, inputs: Vec<String>, q: MatmulQuant) {
    let node = g.nodes[idx].clone();
    let acc = fresh_tensor(g, &format!("{}__acc", node.output));
    let dq_id = g.fresh_id(&format!("{}__dq", node.id));
    let mut new_node = node.clone();
    new_node.op = op;
    new_node.inputs = inputs;
    new_node.output = acc.clone();
    g.nodes[idx] = new_node;
    g.nodes.insert(
        idx + 1,
        Node {
            id: dq_id,
            op: Op::Dequantize { scale: q.s_in * q.s_w, bits: 32, signed: true },
            inputs: vec![acc],
            output: node.output,
            placement: Placement::Unassigned,
        },
    );
}

fn apply_unary_convert(g: &mut Graph, idx: usize, op: Op, int_input: String, dq_op: Op) {
    let node = g.nodes[idx].clone();
    let mid = fresh_tensor(g, &format!("{}__q", node.output));
    let dq_id = g.fresh_id(&format!("{}__dq", node.id));
    let mut new_node = node.clone();
    new_node.op = op;
    new_node.inputs = vec![int_input];
    new_node.output = mid.clone();
    g.nodes[idx] = new_node;
    g.nodes.insert(
        idx + 1,
        Node {
            id: dq_id,
            op: dq_op,
            inputs: vec![mid],
            output: node.output,
            placement: Placement::Unassigned,
        },
    );
}

/// Applies one `Quantize(Dequantize(x))` merge if possible.
fn try_merge_one(g: &mut Graph) -> Result<bool> {
    for idx in 0..g.nodes.len() {
        let (scale, bits, signed) = match g.nodes[idx].op {
            Op::Quantize { scale, bits, signed } => (scale, bits, signed),
            _ => continue,
        };
        let Some(dq) = dq_of(g, &g.nodes[idx].inputs[0]) else { continue };
        let out = g.nodes[idx].output.clone();
        if dq.scale == scale && dq.bits == bits && dq.signed == signed {
            // Identical params: the round-trip is the identity on in-range
            // codes, so drop the pair and rewire consumers to the codes.
            g.nodes.remove(idx);
            for n in &mut g.nodes {
                for input in &mut n.inputs {
                    if *input == out {
                        *input = dq.int_input.clone();
                    }
                }
            }
            for o in &mut g.outputs {
                if *o == out {
                    *o = dq.int_input.clone();
                }
            }
        } else {
            g.nodes[idx].op = Op::Requantize {
                s_in: dq.scale,
                s_w: 1.0,
                s_out: scale,
                bits,
                signed,
            };
            g.nodes[idx].inputs = vec![dq.int_input];
        }
        return Ok(true);
    }
    Ok(false)
}

/// Removes nodes whose outputs are never consumed and constants no node
/// references.
fn dce(g: &mut Graph) {
    loop {
        let mut live: BTreeSet<String> = g.outputs.iter().cloned().collect();
        for n in &g.nodes {
            for input in &n.inputs {
                live.insert(input.clone());
            }
        }
        let before = g.nodes.len();
        g.nodes.retain(|n| live.contains(&n.output));
        if g.nodes.len() == before {
            break;
        }
    }
    let mut referenced: BTreeSet<String> = BTreeSet::new();
    for n in &g.nodes {
        for input in &n.inputs {
            referenced.insert(input.clone());
        }
    }
    for o in &g.outputs {
        referenced.insert(o.clone());
    }
    g.tensors.retain(|name, _| referenced.contains(name));
}

fn normalize(g: &mut Graph) -> Result<()> {
    loop {
        if try_merge_one(g)? {
            continue;
        }
        if try_convert_one(g)? {
            continue;
        }
        break;
    }
    dce(g);
    Ok(())
}

/// A float op left behind with quantized operands it has no rule for is a
/// modeling error; report it instead of silently keeping a mixed graph.
fn check_no_mixed_inputs(g: &Graph) -> Result<()> {
    for node in &g.nodes {
        if node.op.is_integer() != Some(false) {
            continue;
        }
        match &node.op {
            // Weights are always quantized constants, so a float matmul whose
            // activation is not a Dequantize output has mixed inputs.
            Op::Conv2D { .. } | Op::Dense { .. } => {
                return Err(CoreError::validation(format!(
                    "node {:?}: float {} has quantized weights but a non-quantized activation \
                     input; no rewrite rule applies",
                    node.id,
                    node.op.name()
                )));
            }
            Op::MatMul { .. } | Op::Add { .. } => {
                let a = dq_of(g, &node.inputs[0]).is_some();
                let b = dq_of(g, &node.inputs[1]).is_some();
                if a != b {
                    return Err(CoreError::validation(format!(
                        "node {:?}: {} mixes a quantized and a float input; no rewrite rule \
                         applies",
                        node.id,
                        node.op.name()
                    )));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// Fake-quant to integer: converts every float op sandwiched between
/// Quantize/Dequantize pairs into its integer form and collapses redundant
/// Q/DQ chains. Float `BiasAdd` is left for `qnn_fuse_pass`.
pub fn fq2i_pass(graph: &Graph) -> Result<Graph> {
    graph.validate()?;
    let mut g = graph.clone();
    normalize(&mut g)?;
    check_no_mixed_inputs(&g)?;
    g.validate()?;
    Ok(g)
}

/// Folds one float BiasAdd riding on a Dequantize into the integer
/// accumulator domain.
fn try_fold_bias_one(g: &mut Graph) -> Result<bool> {
    for idx in 0..g.nodes.len() {
        let node = g.nodes[idx].clone();
        if !matches!(node.op, Op::BiasAdd { integer: false }) {
            continue;
        }
        let Some(dq) = dq_of(g, &node.inputs[0]) else { continue };
        let Some(ConstTensor::F64 { shape, data }) = g.tensors.get(&node.inputs[1]).cloned()
        else {
            continue;
        };
        let mut codes = Vec::with_capacity(data.len());
        for &b in &data {
            let code = round_half_away(b / dq.scale);
            if !(code >= i32::MIN as f64 && code <= i32::MAX as f64) {
                return Err(CoreError::validation(format!(
                    "node {:?}: folded bias value {b} does not fit the 32-bit accumulator at \
                     scale {}",
                    node.id, dq.scale
                )));
            }
            codes.push(code as i32);
        }
        let bias_name = fresh_tensor(g, &format!("{}__q", node.inputs[1]));
        g.tensors.insert(
            bias_name.clone(),
            ConstTensor::I32 { shape, data: codes, scale: dq.scale, bits: 32, signed: true },
        );
        let acc = fresh_tensor(g, &format!("{}__acc", node.output));
        let dq_id = g.fresh_id(&format!("{}__dq", node.id));
        let mut new_node = node.clone();
        new_node.op = Op::BiasAdd { integer: true };
        new_node.inputs = vec![dq.int_input.clone(), bias_name];
        new_node.output = acc.clone();
        g.nodes[idx] = new_node;
        g.nodes.insert(
            idx + 1,
            Node {
                id: dq_id,
                op: Op::Dequantize { scale: dq.scale, bits: dq.bits, signed: dq.signed },
                inputs: vec![acc],
                output: node.output.clone(),
                placement: Placement::Unassigned,
            },
        );
        return Ok(true);
    }
    Ok(false)
}

/// After fusion, only integer compute plus boundary Quantize nodes may
/// remain; a Dequantize is allowed only as the final node of an output.
fn check_integer_only(g: &Graph) -> Result<()> {
    for node in &g.nodes {
        if node.op.is_integer() == Some(false) {
            return Err(CoreError::validation(format!(
                "node {:?}: float {} remains after fusion and cannot run on the integer path",
                node.id,
                node.op.name()
            )));
        }
        if matches!(node.op, Op::Dequantize { .. }) && !g.consumers(&node.output).is_empty() {
            return Err(CoreError::validation(format!(
                "node {:?}: dequantize feeds further computation; only a final dequantize per \
                 output may remain",
                node.id
            )));
        }
    }
    Ok(())
}

/// QNN fusion: runs the conversion fixpoint, folds float biases into integer
/// accumulator constants, and verifies no float compute survives.
pub fn qnn_fuse_pass(graph: &Graph) -> Result<Graph> {
    graph.validate()?;
    let mut g = graph.clone();
    normalize(&mut g)?;
    while try_fold_bias_one(&mut g)? {
        normalize(&mut g)?;
    }
    check_integer_only(&g)?;
    g.validate()?;
    Ok(g)
}

/// Assigns integer matmul-family nodes to CIM and everything else to the CPU.
pub fn partition_pass(graph: &Graph) -> Result<Graph> {
    graph.validate()?;
    let mut g = graph.clone();
    for node in &mut g.nodes {
        if node.op.is_matmul_family() {
            if node.op.is_integer() != Some(true) {
                return Err(CoreError::validation(format!(
                    "node {:?}: float {} cannot be placed on CIM; run fq2i/qnn_fuse first",
                    node.id,
                    node.op.name()
                )));
            }
            node.placement = Placement::Cim;
        } else {
            node.placement = Placement::Cpu;
        }
    }
    Ok(g)
}

/// (cim, cpu) node counts after partitioning.
pub fn placement_counts(graph: &Graph) -> (usize, usize) {
    let cim = graph.nodes.iter().filter(|n| n.placement == Placement::Cim).count();
    let cpu = graph.nodes.iter().filter(|n| n.placement == Placement::Cpu).count();
    (cim, cpu)
}

/// Node indices of CIM-placed nodes in topological order.
pub fn cim_nodes(graph: &Graph) -> Result<Vec<usize>> {
    Ok(graph
        .topo_order()?
        .into_iter()
        .filter(|&i| graph.nodes[i].placement == Placement::Cim)
        .collect())
}
