//! Quantize/dequantize (QDQ) graph intermediate representation.
//!
//! Models are dataflow graphs over named tensors. Constant tensors (weights,
//! biases) live in the graph's tensor table; weights are stored pre-quantized
//! as integer codes with their scale attached, while activation quantization
//! is explicit through `Quantize`/`Dequantize` nodes. Compute ops exist in a
//! float form (operating on dequantized values) and an integer form (the
//! `integer` attr, produced by the compiler passes), so a graph can be
//! evaluated in either domain by the reference interpreter.
//!
//! The on-disk model format is this structure serialized as JSON with flat
//! data arrays; see `load_model`/`save_model`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Element type of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F64,
    I32,
}

/// Declared graph input or output tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
}

/// A constant tensor. Integer constants carry their quantization metadata
/// (scale/bits/signedness), which is how weight quantization is represented
/// without explicit per-weight Dequantize nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dtype", rename_all = "lowercase")]
pub enum ConstTensor {
    F64 { shape: Vec<usize>, data: Vec<f64> },
    I32 { shape: Vec<usize>, data: Vec<i32>, scale: f64, bits: u8, signed: bool },
}

impl ConstTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            ConstTensor::F64 { shape, .. } => shape,
            ConstTensor::I32 { shape, .. } => shape,
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            ConstTensor::F64 { .. } => DType::F64,
            ConstTensor::I32 { .. } => DType::I32,
        }
    }
}

/// Quantization record of an integer matmul-family op: scales and widths of
/// the streaming input and the stationary operand. The accumulator scale is
/// `s_in * s_w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatmulQuant {
    pub s_in: f64,
    pub s_w: f64,
    pub a_bit: u8,
    pub w_bit: u8,
    pub signed_in: bool,
}

/// Quantization record of an integer elementwise Add: input scales. The op
/// requantizes both sides to the common scale `max(s_a, s_b)` and adds in the
/// 32-bit accumulator domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AddQuant {
    pub s_a: f64,
    pub s_b: f64,
}

impl AddQuant {
    pub fn common_scale(&self) -> f64 {
        self.s_a.max(self.s_b)
    }
}

fn default_r_repeat() -> u64 {
    1
}

fn default_stride() -> [usize; 2] {
    [1, 1]
}

fn default_padding() -> [usize; 2] {
    [0, 0]
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_one(v: &u64) -> bool {
    *v == 1
}

/// Graph operation. Compute ops carry an `integer` flag distinguishing the
/// float (QDQ) form from the integer form produced by the compiler passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum Op {
    #[serde(rename = "quantize")]
    Quantize { scale: f64, bits: u8, signed: bool },
    #[serde(rename = "dequantize")]
    Dequantize { scale: f64, bits: u8, signed: bool },
    #[serde(rename = "requantize")]
    Requantize { s_in: f64, s_w: f64, s_out: f64, bits: u8, signed: bool },
    #[serde(rename = "conv2d")]
    Conv2D {
        #[serde(default = "default_stride")]
        stride: [usize; 2],
        #[serde(default = "default_padding")]
        padding: [usize; 2],
        #[serde(default = "default_r_repeat", skip_serializing_if = "is_one")]
        r_repeat: u64,
        #[serde(default, skip_serializing_if = "is_false")]
        integer: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        quant: Option<MatmulQuant>,
    },
    #[serde(rename = "dense")]
    Dense {
        #[serde(default = "default_r_repeat", skip_serializing_if = "is_one")]
        r_repeat: u64,
        #[serde(default, skip_serializing_if = "is_false")]
        integer: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        quant: Option<MatmulQuant>,
    },
    #[serde(rename = "matmul")]
    MatMul {
        #[serde(default, skip_serializing_if = "is_false")]
        transpose_b: bool,
        #[serde(default = "default_r_repeat", skip_serializing_if = "is_one")]
        r_repeat: u64,
        #[serde(default, skip_serializing_if = "is_false")]
        integer: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        quant: Option<MatmulQuant>,
    },
    #[serde(rename = "bias_add")]
    BiasAdd {
        #[serde(default, skip_serializing_if = "is_false")]
        integer: bool,
    },
    #[serde(rename = "relu")]
    Relu {
        #[serde(default, skip_serializing_if = "is_false")]
        integer: bool,
    },
    #[serde(rename = "add")]
    Add {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        quant: Option<AddQuant>,
    },
    #[serde(rename = "max_pool")]
    MaxPool {
        kernel: [usize; 2],
        stride: [usize; 2],
        #[serde(default, skip_serializing_if = "is_false")]
        integer: bool,
    },
    #[serde(rename = "flatten")]
    Flatten {
        #[serde(default, skip_serializing_if = "is_false")]
        integer: bool,
    },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Quantize { .. } => "quantize",
            Op::Dequantize { .. } => "dequantize",
            Op::Requantize { .. } => "requantize",
            Op::Conv2D { .. } => "conv2d",
            Op::Dense { .. } => "dense",
            Op::MatMul { .. } => "matmul",
            Op::BiasAdd { .. } => "bias_add",
            Op::Relu { .. } => "relu",
            Op::Add { .. } => "add",
            Op::MaxPool { .. } => "max_pool",
            Op::Flatten { .. } => "flatten",
        }
    }

    /// Conv2D/Dense/MatMul: the ops eligible for CIM offload.
    pub fn is_matmul_family(&self) -> bool {
        matches!(self, Op::Conv2D { .. } | Op::Dense { .. } | Op::MatMul { .. })
    }

    /// Whether the op computes on integer codes (vs. dequantized floats).
    /// Quantize/Dequantize/Requantize sit on the domain boundary and are not
    /// classified.
    pub fn is_integer(&self) -> Option<bool> {
        match self {
            Op::Conv2D { integer, .. }
            | Op::Dense { integer, .. }
            | Op::MatMul { integer, .. }
            | Op::BiasAdd { integer }
            | Op::Relu { integer }
            | Op::MaxPool { integer, .. }
            | Op::Flatten { integer } => Some(*integer),
            Op::Add { quant } => Some(quant.is_some()),
            _ => None,
        }
    }

    pub fn r_repeat(&self) -> u64 {
        match self {
            Op::Conv2D { r_repeat, .. } | Op::Dense { r_repeat, .. } | Op::MatMul { r_repeat, .. } => {
                *r_repeat
            }
            _ => 1,
        }
    }
}

/// Device placement decided by the partition pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    #[default]
    Unassigned,
    Cpu,
    Cim,
}

/// One graph node: an operation consuming named tensors and producing one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    #[serde(flatten)]
    pub op: Op,
    pub inputs: Vec<String>,
    pub output: String,
    #[serde(default)]
    pub placement: Placement,
}

/// Shape and dtype of a tensor, as computed by shape inference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub shape: Vec<usize>,
    pub dtype: DType,
}

impl TensorInfo {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// A dataflow graph over named tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub name: String,
    pub inputs: Vec<IoTensor>,
    pub outputs: Vec<String>,
    pub nodes: Vec<Node>,
    #[serde(default)]
    pub tensors: BTreeMap<String, ConstTensor>,
}

impl Graph {
    pub fn new(name: impl Into<String>) -> Graph {
        Graph {
            name: name.into(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            nodes: Vec::new(),
            tensors: BTreeMap::new(),
        }
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Index of the node producing `tensor`, if any.
    pub fn producer(&self, tensor: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.output == tensor)
    }

    /// Indices of nodes consuming `tensor`, in node-list order.
    pub fn consumers(&self, tensor: &str) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.inputs.iter().any(|i| i == tensor))
            .map(|(i, _)| i)
            .collect()
    }

    /// Generates a node id not yet present, derived from `base`.
    pub fn fresh_id(&self, base: &str) -> String {
        let used: BTreeSet<&str> = self.nodes.iter().map(|n| n.id.as_str()).collect();
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

    /// Topological order of node indices (Kahn's algorithm, stable with
    /// respect to the node list order). Fails on cycles.
    pub fn topo_order(&self) -> Result<Vec<usize>> {
        let mut ready_tensors: BTreeSet<&str> = BTreeSet::new();
        for input in &self.inputs {
            ready_tensors.insert(&input.name);
        }
        for name in self.tensors.keys() {
            ready_tensors.insert(name);
        }
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut emitted = vec![false; self.nodes.len()];
        loop {
            let mut progressed = false;
            for (i, node) in self.nodes.iter().enumerate() {
                if emitted[i] {
                    continue;
                }
                if node.inputs.iter().all(|t| ready_tensors.contains(t.as_str())) {
                    emitted[i] = true;
                    ready_tensors.insert(&node.output);
                    order.push(i);
                    progressed = true;
                }
            }
            if order.len() == self.nodes.len() {
                return Ok(order);
            }
            if !progressed {
                let stuck: Vec<&str> = self
                    .nodes
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !emitted[*i])
                    .map(|(_, n)| n.id.as_str())
                    .collect();
                return Err(CoreError::validation(format!(
                    "graph has a cycle or dangling edge involving nodes {stuck:?}"
                )));
            }
        }
    }

    /// Structural validation: unique ids and producers, resolvable inputs,
    /// declared outputs present, acyclic, and well-typed shapes.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for node in &self.nodes {
            if !ids.insert(node.id.as_str()) {
                return Err(CoreError::validation(format!("duplicate node id {:?}", node.id)));
            }
        }
        let mut defined: BTreeSet<&str> = BTreeSet::new();
        for input in &self.inputs {
            if !defined.insert(&input.name) {
                return Err(CoreError::validation(format!(
                    "duplicate graph input {:?}",
                    input.name
                )));
            }
        }
        for name in self.tensors.keys() {
            if !defined.insert(name) {
                return Err(CoreError::validation(format!(
                    "constant tensor {name:?} collides with another tensor"
                )));
            }
        }
        for node in &self.nodes {
            if !defined.insert(&node.output) {
                return Err(CoreError::validation(format!(
                    "tensor {:?} has more than one producer (node {:?})",
                    node.output, node.id
                )));
            }
        }
        for node in &self.nodes {
            for input in &node.inputs {
                if !defined.contains(input.as_str()) {
                    return Err(CoreError::validation(format!(
                        "node {:?} consumes undefined tensor {input:?} (dangling edge)",
                        node.id
                    )));
                }
            }
        }
        for output in &self.outputs {
            if !defined.contains(output.as_str()) {
                return Err(CoreError::validation(format!(
                    "declared graph output {output:?} is never produced"
                )));
            }
        }
        self.topo_order()?;
        self.infer_types()?;
        Ok(())
    }

    /// Shape and dtype inference for every tensor in the graph.
    pub fn infer_types(&self) -> Result<BTreeMap<String, TensorInfo>> {
        let mut info: BTreeMap<String, TensorInfo> = BTreeMap::new();
        for input in &self.inputs {
            info.insert(
                input.name.clone(),
                TensorInfo { shape: input.shape.clone(), dtype: input.dtype },
            );
        }
        for (name, t) in &self.tensors {
            info.insert(name.clone(), TensorInfo { shape: t.shape().to_vec(), dtype: t.dtype() });
        }
        for &i in &self.topo_order()? {
            let node = &self.nodes[i];
            let out = infer_node(node, &info)
                .map_err(|e| CoreError::validation(format!("node {:?}: {e}", node.id)))?;
            info.insert(node.output.clone(), out);
        }
        Ok(info)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialization")
    }

    pub fn from_json_str(text: &str) -> Result<Graph> {
        let graph: Graph = serde_json::from_str(text)
            .map_err(|e| CoreError::parse(format!("model file is not a valid graph: {e}")))?;
        graph.validate()?;
        Ok(graph)
    }
}

/// Loads and validates a model graph from a JSON file.
pub fn load_model(path: &Path) -> Result<Graph> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    Graph::from_json_str(&text).map_err(|e| CoreError::parse(format!("{}: {e}", path.display())))
}

/// Writes a model graph as JSON.
pub fn save_model(graph: &Graph, path: &Path) -> Result<()> {
    std::fs::write(path, graph.to_json_string() + "\n")
        .map_err(|e| CoreError::io(path.display().to_string(), e))
}

struct NodeCtx<'a> {
    node: &'a Node,
    info: &'a BTreeMap<String, TensorInfo>,
}

impl<'a> NodeCtx<'a> {
    fn input(&self, idx: usize) -> Result<&'a TensorInfo> {
        let name = self.node.inputs.get(idx).ok_or_else(|| {
            CoreError::validation(format!(
                "{} expects at least {} inputs, got {}",
                self.node.op.name(),
                idx + 1,
                self.node.inputs.len()
            ))
        })?;
        self.info.get(name).ok_or_else(|| {
            CoreError::validation(format!("input tensor {name:?} has no inferred type"))
        })
    }

    fn expect_arity(&self, n: usize) -> Result<()> {
        if self.node.inputs.len() != n {
            return Err(CoreError::validation(format!(
                "{} expects {n} inputs, got {}",
                self.node.op.name(),
                self.node.inputs.len()
            )));
        }
        Ok(())
    }

    fn expect_dtype(&self, idx: usize, dtype: DType) -> Result<&'a TensorInfo> {
        let t = self.input(idx)?;
        if t.dtype != dtype {
            return Err(CoreError::validation(format!(
                "input {} must be {dtype:?}, got {:?}",
                self.node.inputs[idx], t.dtype
            )));
        }
        Ok(t)
    }
}

fn conv_output_hw(
    h: usize,
    w: usize,
    kernel: [usize; 2],
    stride: [usize; 2],
    padding: [usize; 2],
) -> Result<(usize, usize)> {
    let [kh, kw] = kernel;
    let [sh, sw] = stride;
    let [ph, pw] = padding;
    if sh == 0 || sw == 0 {
        return Err(CoreError::validation("stride must be >= 1"));
    }
    if h + 2 * ph < kh || w + 2 * pw < kw {
        return Err(CoreError::validation(format!(
            "kernel {kernel:?} larger than padded input {}x{}",
            h + 2 * ph,
            w + 2 * pw
        )));
    }
    Ok(((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1))
}

fn infer_node(node: &Node, info: &BTreeMap<String, TensorInfo>) -> Result<TensorInfo> {
    let ctx = NodeCtx { node, info };
    let data_dtype = |integer: bool| if integer { DType::I32 } else { DType::F64 };
    match &node.op {
        Op::Quantize { scale, bits, signed: _ } => {
            ctx.expect_arity(1)?;
            check_scale("scale", *scale)?;
            check_attr_bits(*bits)?;
            let x = ctx.expect_dtype(0, DType::F64)?;
            Ok(TensorInfo { shape: x.shape.clone(), dtype: DType::I32 })
        }
        Op::Dequantize { scale, .. } => {
            ctx.expect_arity(1)?;
            check_scale("scale", *scale)?;
            let x = ctx.expect_dtype(0, DType::I32)?;
            Ok(TensorInfo { shape: x.shape.clone(), dtype: DType::F64 })
        }
        Op::Requantize { s_in, s_w, s_out, bits, .. } => {
            ctx.expect_arity(1)?;
            check_scale("s_in", *s_in)?;
            check_scale("s_w", *s_w)?;
            check_scale("s_out", *s_out)?;
            check_attr_bits(*bits)?;
            let x = ctx.expect_dtype(0, DType::I32)?;
            Ok(TensorInfo { shape: x.shape.clone(), dtype: DType::I32 })
        }
        Op::Conv2D { stride, padding, integer, .. } => {
            ctx.expect_arity(2)?;
            let x = ctx.expect_dtype(0, data_dtype(*integer))?;
            // QDQ and integer graphs store weights quantized (I32 + scale);
            // a pure float model may still carry float weights.
            let w = if *integer { ctx.expect_dtype(1, DType::I32)? } else { ctx.input(1)? };
            if x.shape.len() != 3 || w.shape.len() != 4 {
                return Err(CoreError::validation(format!(
                    "conv2d expects input [C,H,W] and weights [C_out,C_in,Kh,Kw], got {:?} and {:?}",
                    x.shape, w.shape
                )));
            }
            let (c_in, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
            let (c_out, wc_in, kh, kw) = (w.shape[0], w.shape[1], w.shape[2], w.shape[3]);
            if c_in != wc_in {
                return Err(CoreError::validation(format!(
                    "conv2d input channels {c_in} do not match weight channels {wc_in}"
                )));
            }
            let (ho, wo) = conv_output_hw(h, wd, [kh, kw], *stride, *padding)?;
            Ok(TensorInfo { shape: vec![c_out, ho, wo], dtype: data_dtype(*integer) })
        }
        Op::Dense { integer, .. } => {
            ctx.expect_arity(2)?;
            let x = ctx.expect_dtype(0, data_dtype(*integer))?;
            let w = if *integer { ctx.expect_dtype(1, DType::I32)? } else { ctx.input(1)? };
            if w.shape.len() != 2 {
                return Err(CoreError::validation(format!(
                    "dense weights must be [N,M], got {:?}",
                    w.shape
                )));
            }
            let (n, m) = (w.shape[0], w.shape[1]);
            match x.shape.as_slice() {
                [xn] if *xn == n => Ok(TensorInfo { shape: vec![m], dtype: data_dtype(*integer) }),
                [v, xn] if *xn == n => {
                    Ok(TensorInfo { shape: vec![*v, m], dtype: data_dtype(*integer) })
                }
                _ => Err(CoreError::validation(format!(
                    "dense input {:?} incompatible with weights [{n},{m}]",
                    x.shape
                ))),
            }
        }
        Op::MatMul { transpose_b, integer, .. } => {
            ctx.expect_arity(2)?;
            let a = ctx.expect_dtype(0, data_dtype(*integer))?;
            let b = ctx.expect_dtype(1, data_dtype(*integer))?;
            if a.shape.len() != 2 || b.shape.len() != 2 {
                return Err(CoreError::validation(format!(
                    "matmul expects rank-2 operands, got {:?} and {:?}",
                    a.shape, b.shape
                )));
            }
            let (v, k) = (a.shape[0], a.shape[1]);
            let (bk, m) =
                if *transpose_b { (b.shape[1], b.shape[0]) } else { (b.shape[0], b.shape[1]) };
            if k != bk {
                return Err(CoreError::validation(format!(
                    "matmul reduction mismatch: {:?} x {:?} (transpose_b={transpose_b})",
                    a.shape, b.shape
                )));
            }
            Ok(TensorInfo { shape: vec![v, m], dtype: data_dtype(*integer) })
        }
        Op::BiasAdd { integer } => {
            ctx.expect_arity(2)?;
            let x = ctx.expect_dtype(0, data_dtype(*integer))?;
            let b = ctx.expect_dtype(1, if *integer { DType::I32 } else { DType::F64 })?;
            if b.shape.len() != 1 {
                return Err(CoreError::validation(format!(
                    "bias must be rank 1, got {:?}",
                    b.shape
                )));
            }
            // Conv feature maps broadcast over the channel dim, vectors and
            // row-matrices over the last dim.
            let channels = if x.shape.len() == 3 { x.shape[0] } else { *x.shape.last().unwrap() };
            if b.shape[0] != channels {
                return Err(CoreError::validation(format!(
                    "bias length {} does not match channel dim of {:?}",
                    b.shape[0], x.shape
                )));
            }
            Ok(x.clone())
        }
        Op::Relu { integer } => {
            ctx.expect_arity(1)?;
            let x = ctx.expect_dtype(0, data_dtype(*integer))?;
            Ok(x.clone())
        }
        Op::Add { quant } => {
            ctx.expect_arity(2)?;
            let dtype = if quant.is_some() { DType::I32 } else { DType::F64 };
            let a = ctx.expect_dtype(0, dtype)?;
            let b = ctx.expect_dtype(1, dtype)?;
            if a.shape != b.shape {
                return Err(CoreError::validation(format!(
                    "add shape mismatch: {:?} vs {:?}",
                    a.shape, b.shape
                )));
            }
            Ok(a.clone())
        }
        Op::MaxPool { kernel, stride, integer } => {
            ctx.expect_arity(1)?;
            let x = ctx.expect_dtype(0, data_dtype(*integer))?;
            if x.shape.len() != 3 {
                return Err(CoreError::validation(format!(
                    "max_pool expects [C,H,W], got {:?}",
                    x.shape
                )));
            }
            let (ho, wo) = conv_output_hw(x.shape[1], x.shape[2], *kernel, *stride, [0, 0])?;
            Ok(TensorInfo { shape: vec![x.shape[0], ho, wo], dtype: data_dtype(*integer) })
        }
        Op::Flatten { integer } => {
            ctx.expect_arity(1)?;
            let x = ctx.expect_dtype(0, data_dtype(*integer))?;
            Ok(TensorInfo { shape: vec![x.numel()], dtype: data_dtype(*integer) })
        }
    }
}

fn check_scale(name: &str, scale: f64) -> Result<()> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(CoreError::validation(format!(
            "{name} must be positive and finite, got {scale}"
        )));
    }
    Ok(())
}

/// Quantize/Requantize output widths are narrow codes; Dequantize may also
/// describe the 32-bit accumulator domain.
fn check_attr_bits(bits: u8) -> Result<()> {
    if !(2..=8).contains(&bits) {
        return Err(CoreError::validation(format!("bits must be in 2..=8, got {bits}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_graph() -> Graph {
        let mut g = Graph::new("t");
        g.inputs.push(IoTensor { name: "x".into(), shape: vec![4], dtype: DType::F64 });
        g.outputs.push("y".into());
        g.tensors.insert(
            "w".into(),
            ConstTensor::I32 {
                shape: vec![4, 3],
                data: vec![1; 12],
                scale: 0.5,
                bits: 8,
                signed: true,
            },
        );
        g.nodes.push(Node {
            id: "q0".into(),
            op: Op::Quantize { scale: 0.1, bits: 8, signed: true },
            inputs: vec!["x".into()],
            output: "xq".into(),
            placement: Placement::Unassigned,
        });
        g.nodes.push(Node {
            id: "dq0".into(),
            op: Op::Dequantize { scale: 0.1, bits: 8, signed: true },
            inputs: vec!["xq".into()],
            output: "xf".into(),
            placement: Placement::Unassigned,
        });
        g.nodes.push(Node {
            id: "fc".into(),
            op: Op::Dense { r_repeat: 1, integer: false, quant: None },
            inputs: vec!["xf".into(), "w".into()],
            output: "y".into(),
            placement: Placement::Unassigned,
        });
        g
    }

    #[test]
    fn validates_and_infers_shapes() {
        let g = small_graph();
        g.validate().unwrap();
        let info = g.infer_types().unwrap();
        assert_eq!(info["y"], TensorInfo { shape: vec![3], dtype: DType::F64 });
        assert_eq!(info["xq"].dtype, DType::I32);
    }

    #[test]
    fn rejects_cycles() {
        let mut g = small_graph();
        // Make q0 consume the dense output: q0 -> dq0 -> fc -> q0.
        g.nodes[0].inputs = vec!["y".into()];
        let err = g.validate().unwrap_err().to_string();
        assert!(err.contains("cycle"), "{err}");
    }

    #[test]
    fn rejects_dangling_edges() {
        let mut g = small_graph();
        g.nodes[2].inputs[0] = "missing".into();
        let err = g.validate().unwrap_err().to_string();
        assert!(err.contains("missing"), "{err}");
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut g = small_graph();
        g.tensors.insert(
            "w".into(),
            ConstTensor::I32 {
                shape: vec![5, 3],
                data: vec![1; 15],
                scale: 0.5,
                bits: 8,
                signed: true,
            },
        );
        let err = g.validate().unwrap_err().to_string();
        assert!(err.contains("fc"), "error should name the node: {err}");
    }

    #[test]
    fn rejects_unknown_op_in_json() {
        let text = r#"{
            "name": "t", "inputs": [], "outputs": [],
            "nodes": [{"id": "n", "op": "softmax", "inputs": [], "output": "y"}],
            "tensors": {}
        }"#;
        let err = Graph::from_json_str(text).unwrap_err().to_string();
        assert!(err.contains("softmax") || err.contains("unknown variant"), "{err}");
    }

    #[test]
    fn json_round_trip() {
        let g = small_graph();
        let text = g.to_json_string();
        let g2 = Graph::from_json_str(&text).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn conv_shape_inference() {
        let mut g = Graph::new("c");
        g.inputs.push(IoTensor { name: "x".into(), shape: vec![3, 8, 8], dtype: DType::F64 });
        g.tensors.insert(
            "w".into(),
            ConstTensor::I32 {
                shape: vec![8, 3, 3, 3],
                data: vec![0; 8 * 27],
                scale: 1.0,
                bits: 8,
                signed: true,
            },
        );
        g.nodes.push(Node {
            id: "conv".into(),
            op: Op::Conv2D {
                stride: [1, 1],
                padding: [1, 1],
                r_repeat: 1,
                integer: false,
                quant: None,
            },
            inputs: vec!["x".into(), "w".into()],
            output: "y".into(),
            placement: Placement::Unassigned,
        });
        g.outputs.push("y".into());
        let info = g.infer_types().unwrap();
        assert_eq!(info["y"].shape, vec![8, 8, 8]);
    }
}
