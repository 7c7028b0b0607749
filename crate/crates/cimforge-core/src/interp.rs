//! Reference graph interpreter.
//!
//! Executes a graph node by node in plain host arithmetic. Float ops run in
//! f64 on dequantized values; integer ops run on i32 codes with i64
//! accumulation and checked narrowing, mirroring exactly the arithmetic the
//! crossbar runtime performs. The interpreter is the oracle the compiler
//! passes and the device trace are validated against, and it doubles as the
//! executor for CPU-placed nodes at runtime.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::graph::{ConstTensor, DType, Graph, Node, Op};
use crate::quant::{q_max, q_min, round_half_away};

/// Runtime tensor value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dtype", rename_all = "lowercase")]
pub enum Value {
    F64 { shape: Vec<usize>, data: Vec<f64> },
    I32 { shape: Vec<usize>, data: Vec<i32> },
}

impl Value {
    pub fn shape(&self) -> &[usize] {
        match self {
            Value::F64 { shape, .. } => shape,
            Value::I32 { shape, .. } => shape,
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            Value::F64 { .. } => DType::F64,
            Value::I32 { .. } => DType::I32,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn as_f64(&self) -> Result<&[f64]> {
        match self {
            Value::F64 { data, .. } => Ok(data),
            Value::I32 { .. } => Err(CoreError::runtime("expected f64 tensor, got i32")),
        }
    }

    pub fn as_i32(&self) -> Result<&[i32]> {
        match self {
            Value::I32 { data, .. } => Ok(data),
            Value::F64 { .. } => Err(CoreError::runtime("expected i32 tensor, got f64")),
        }
    }

    pub fn from_const(t: &ConstTensor) -> Value {
        match t {
            ConstTensor::F64 { shape, data } => {
                Value::F64 { shape: shape.clone(), data: data.clone() }
            }
            ConstTensor::I32 { shape, data, .. } => {
                Value::I32 { shape: shape.clone(), data: data.clone() }
            }
        }
    }
}

/// Tensor environment built up during evaluation.
pub type Env = BTreeMap<String, Value>;

/// Seeds an environment with the graph constants and the provided inputs,
/// validating input names, shapes, and dtypes.
pub fn init_env(graph: &Graph, inputs: &[(String, Value)]) -> Result<Env> {
    let mut env = Env::new();
    for (name, t) in &graph.tensors {
        env.insert(name.clone(), Value::from_const(t));
    }
    for (name, value) in inputs {
        let decl = graph.inputs.iter().find(|i| &i.name == name).ok_or_else(|| {
            CoreError::runtime(format!("{name:?} is not a declared graph input"))
        })?;
        if decl.shape != value.shape() || decl.dtype != value.dtype() {
            return Err(CoreError::runtime(format!(
                "input {name:?} expects shape {:?} {:?}, got {:?} {:?}",
                decl.shape,
                decl.dtype,
                value.shape(),
                value.dtype()
            )));
        }
        env.insert(name.clone(), value.clone());
    }
    for input in &graph.inputs {
        if !env.contains_key(&input.name) {
            return Err(CoreError::runtime(format!("missing graph input {:?}", input.name)));
        }
    }
    Ok(env)
}

/// Evaluates the whole graph, returning the full tensor environment
/// (including every intermediate), which calibration and the pass-equivalence
/// tests inspect.
pub fn eval_graph(graph: &Graph, inputs: &[(String, Value)]) -> Result<Env> {
    let mut env = init_env(graph, inputs)?;
    for &i in &graph.topo_order()? {
        let node = &graph.nodes[i];
        let out = exec_node(graph, node, &env)?;
        env.insert(node.output.clone(), out);
    }
    Ok(env)
}

/// Evaluates the graph and returns only the declared outputs, in order.
pub fn eval_outputs(graph: &Graph, inputs: &[(String, Value)]) -> Result<Vec<Value>> {
    let env = eval_graph(graph, inputs)?;
    graph
        .outputs
        .iter()
        .map(|name| {
            env.get(name)
                .cloned()
                .ok_or_else(|| CoreError::runtime(format!("output {name:?} was not produced")))
        })
        .collect()
}

fn fetch<'a>(env: &'a Env, name: &str, node: &Node) -> Result<&'a Value> {
    env.get(name).ok_or_else(|| {
        CoreError::runtime(format!("node {:?}: input tensor {name:?} not available", node.id))
    })
}

fn narrow_i32(v: i64, node_id: &str) -> Result<i32> {
    i32::try_from(v).map_err(|_| {
        CoreError::runtime(format!(
            "node {node_id:?}: 32-bit accumulator overflow (value {v})"
        ))
    })
}

/// Executes one node against an environment holding its inputs. This is the
/// single implementation of every op's semantics; the runtime reuses it for
/// CPU-placed nodes. The graph supplies constant-tensor metadata (float
/// conv/dense dequantize their weights with the constant's scale).
pub fn exec_node(graph: &Graph, node: &Node, env: &Env) -> Result<Value> {
    let a = fetch(env, &node.inputs[0], node)?;
    match &node.op {
        Op::Quantize { scale, bits, signed } => {
            let x = a.as_f64()?;
            let (lo, hi) = (q_min(*bits, *signed) as f64, q_max(*bits, *signed) as f64);
            let data = x
                .iter()
                .map(|&v| round_half_away(v / scale).clamp(lo, hi) as i32)
                .collect();
            Ok(Value::I32 { shape: a.shape().to_vec(), data })
        }
        Op::Dequantize { scale, .. } => {
            let x = a.as_i32()?;
            let data = x.iter().map(|&v| v as f64 * scale).collect();
            Ok(Value::F64 { shape: a.shape().to_vec(), data })
        }
        Op::Requantize { s_in, s_w, s_out, bits, signed } => {
            let x = a.as_i32()?;
            let multiplier = s_in * s_w / s_out;
            let (lo, hi) = (q_min(*bits, *signed) as f64, q_max(*bits, *signed) as f64);
            let data = x
                .iter()
                .map(|&v| round_half_away(v as f64 * multiplier).clamp(lo, hi) as i32)
                .collect();
            Ok(Value::I32 { shape: a.shape().to_vec(), data })
        }
        Op::Conv2D { stride, padding, integer, .. } => {
            let w = fetch(env, &node.inputs[1], node)?;
            conv2d(node, a, w, *stride, *padding, *integer, weight_scale(graph, node))
        }
        Op::Dense { integer, .. } => {
            let w = fetch(env, &node.inputs[1], node)?;
            dense(node, a, w, *integer, weight_scale(graph, node))
        }
        Op::MatMul { transpose_b, integer, .. } => {
            let b = fetch(env, &node.inputs[1], node)?;
            matmul(node, a, b, *transpose_b, *integer)
        }
        Op::BiasAdd { integer } => {
            let b = fetch(env, &node.inputs[1], node)?;
            bias_add(node, a, b, *integer)
        }
        Op::Relu { integer } => {
            if *integer {
                let x = a.as_i32()?;
                let data = x.iter().map(|&v| v.max(0)).collect();
                Ok(Value::I32 { shape: a.shape().to_vec(), data })
            } else {
                let x = a.as_f64()?;
                let data = x.iter().map(|&v| v.max(0.0)).collect();
                Ok(Value::F64 { shape: a.shape().to_vec(), data })
            }
        }
        Op::Add { quant } => {
            let b = fetch(env, &node.inputs[1], node)?;
            match quant {
                None => {
                    let (xa, xb) = (a.as_f64()?, b.as_f64()?);
                    let data = xa.iter().zip(xb).map(|(&u, &v)| u + v).collect();
                    Ok(Value::F64 { shape: a.shape().to_vec(), data })
                }
                Some(q) => {
                    // Align both sides to the common scale, then add in the
                    // 32-bit accumulator domain.
                    let s_c = q.common_scale();
                    let (xa, xb) = (a.as_i32()?, b.as_i32()?);
                    let mut data = Vec::with_capacity(xa.len());
                    for (&u, &v) in xa.iter().zip(xb) {
                        let ru = round_half_away(u as f64 * (q.s_a / s_c)) as i64;
                        let rv = round_half_away(v as f64 * (q.s_b / s_c)) as i64;
                        data.push(narrow_i32(ru + rv, &node.id)?);
                    }
                    Ok(Value::I32 { shape: a.shape().to_vec(), data })
                }
            }
        }
        Op::MaxPool { kernel, stride, integer } => max_pool(a, *kernel, *stride, *integer),
        Op::Flatten { .. } => {
            let shape = vec![a.numel()];
            Ok(match a {
                Value::F64 { data, .. } => Value::F64 { shape, data: data.clone() },
                Value::I32 { data, .. } => Value::I32 { shape, data: data.clone() },
            })
        }
    }
}

/// Scale of the (always quantized) weight constant of a conv/dense node. The
/// float forms dequantize weights on the fly with this scale. Taken from the
/// node's quant record when present (post-pass graphs), else from the weight
/// constant's metadata.
fn weight_scale(graph: &Graph, node: &Node) -> f64 {
    if let Op::Conv2D { quant: Some(q), .. }
    | Op::Dense { quant: Some(q), .. }
    | Op::MatMul { quant: Some(q), .. } = &node.op
    {
        return q.s_w;
    }
    match node.inputs.get(1).and_then(|name| graph.tensors.get(name)) {
        Some(ConstTensor::I32 { scale, .. }) => *scale,
        _ => 1.0,
    }
}

/// Weight constant of a conv node as an (n_l x m_l) row-major matrix with
/// row index (ic*Kh + kh)*Kw + kw and column index oc.
pub fn conv_weight_matrix(shape: &[usize], data: &[i32]) -> (usize, usize, Vec<i32>) {
    let (c_out, c_in, kh, kw) = (shape[0], shape[1], shape[2], shape[3]);
    let n_l = c_in * kh * kw;
    let mut mat = vec![0i32; n_l * c_out];
    for oc in 0..c_out {
        for ic in 0..c_in {
            for i in 0..kh {
                for j in 0..kw {
                    let row = (ic * kh + i) * kw + j;
                    mat[row * c_out + oc] = data[((oc * c_in + ic) * kh + i) * kw + j];
                }
            }
        }
    }
    (n_l, c_out, mat)
}

/// im2col: each output position becomes one row of length C_in*Kh*Kw, matching
/// the row ordering of `conv_weight_matrix`. Out-of-bounds (padding) taps are
/// zero.
pub fn im2col_i32(
    x: &[i32],
    c_in: usize,
    h: usize,
    w: usize,
    kernel: [usize; 2],
    stride: [usize; 2],
    padding: [usize; 2],
) -> (usize, usize, Vec<i32>) {
    let [kh, kw] = kernel;
    let [sh, sw] = stride;
    let [ph, pw] = padding;
    let ho = (h + 2 * ph - kh) / sh + 1;
    let wo = (w + 2 * pw - kw) / sw + 1;
    let n_l = c_in * kh * kw;
    let v_l = ho * wo;
    let mut rows = vec![0i32; v_l * n_l];
    for oh in 0..ho {
        for ow in 0..wo {
            let v = oh * wo + ow;
            for ic in 0..c_in {
                for i in 0..kh {
                    for j in 0..kw {
                        let ih = (oh * sh + i) as isize - ph as isize;
                        let iw = (ow * sw + j) as isize - pw as isize;
                        if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < w {
                            let col = (ic * kh + i) * kw + j;
                            rows[v * n_l + col] = x[(ic * h + ih as usize) * w + iw as usize];
                        }
                    }
                }
            }
        }
    }
    (v_l, n_l, rows)
}

fn conv2d(
    node: &Node,
    x: &Value,
    w: &Value,
    stride: [usize; 2],
    padding: [usize; 2],
    integer: bool,
    s_w: f64,
) -> Result<Value> {
    let wshape = w.shape().to_vec();
    let (c_out, kh, kw) = (wshape[0], wshape[2], wshape[3]);
    let xs = x.shape().to_vec();
    let (c_in, h, wd) = (xs[0], xs[1], xs[2]);
    let ho = (h + 2 * padding[0] - kh) / stride[0] + 1;
    let wo = (wd + 2 * padding[1] - kw) / stride[1] + 1;
    if integer {
        let wdata = w.as_i32()?;
        let (_, _, wmat) = conv_weight_matrix(&wshape, wdata);
        let xi = x.as_i32()?;
        let (v_l, n_l, rows) = im2col_i32(xi, c_in, h, wd, [kh, kw], stride, padding);
        let mut out = vec![0i32; c_out * v_l];
        for v in 0..v_l {
            for oc in 0..c_out {
                let mut acc = 0i64;
                for r in 0..n_l {
                    acc += rows[v * n_l + r] as i64 * wmat[r * c_out + oc] as i64;
                }
                let (oh, ow) = (v / wo, v % wo);
                out[(oc * ho + oh) * wo + ow] = narrow_i32(acc, &node.id)?;
            }
        }
        Ok(Value::I32 { shape: vec![c_out, ho, wo], data: out })
    } else {
        let xf = x.as_f64()?;
        // Same traversal in f64; quantized weights are dequantized on the
        // fly, float weights used as stored.
        let w_f = |oc: usize, ic: usize, i: usize, j: usize| -> f64 {
            let idx = ((oc * c_in + ic) * kh + i) * kw + j;
            match w {
                Value::I32 { data, .. } => data[idx] as f64 * s_w,
                Value::F64 { data, .. } => data[idx],
            }
        };
        let mut out = vec![0f64; c_out * ho * wo];
        for oh in 0..ho {
            for ow in 0..wo {
                for oc in 0..c_out {
                    let mut acc = 0f64;
                    for ic in 0..c_in {
                        for i in 0..kh {
                            for j in 0..kw {
                                let ih = (oh * stride[0] + i) as isize - padding[0] as isize;
                                let iw = (ow * stride[1] + j) as isize - padding[1] as isize;
                                if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < wd {
                                    acc += xf[(ic * h + ih as usize) * wd + iw as usize]
                                        * w_f(oc, ic, i, j);
                                }
                            }
                        }
                    }
                    out[(oc * ho + oh) * wo + ow] = acc;
                }
            }
        }
        Ok(Value::F64 { shape: vec![c_out, ho, wo], data: out })
    }
}

fn dense(node: &Node, x: &Value, w: &Value, integer: bool, s_w: f64) -> Result<Value> {
    let wshape = w.shape().to_vec();
    let (n, m) = (wshape[0], wshape[1]);
    let (v_l, out_shape) = match x.shape() {
        [_] => (1usize, vec![m]),
        [v, _] => (*v, vec![*v, m]),
        other => {
            return Err(CoreError::runtime(format!(
                "node {:?}: dense input rank {:?}",
                node.id, other
            )))
        }
    };
    if integer {
        let wdata = w.as_i32()?;
        let xi = x.as_i32()?;
        let mut out = vec![0i32; v_l * m];
        for v in 0..v_l {
            for c in 0..m {
                let mut acc = 0i64;
                for r in 0..n {
                    acc += xi[v * n + r] as i64 * wdata[r * m + c] as i64;
                }
                out[v * m + c] = narrow_i32(acc, &node.id)?;
            }
        }
        Ok(Value::I32 { shape: out_shape, data: out })
    } else {
        let xf = x.as_f64()?;
        let w_f = |r: usize, c: usize| -> f64 {
            match w {
                Value::I32 { data, .. } => data[r * m + c] as f64 * s_w,
                Value::F64 { data, .. } => data[r * m + c],
            }
        };
        let mut out = vec![0f64; v_l * m];
        for v in 0..v_l {
            for c in 0..m {
                let mut acc = 0f64;
                for r in 0..n {
                    acc += xf[v * n + r] * w_f(r, c);
                }
                out[v * m + c] = acc;
            }
        }
        Ok(Value::F64 { shape: out_shape, data: out })
    }
}

fn matmul(node: &Node, a: &Value, b: &Value, transpose_b: bool, integer: bool) -> Result<Value> {
    let (v_l, k) = (a.shape()[0], a.shape()[1]);
    let m = if transpose_b { b.shape()[0] } else { b.shape()[1] };
    let b_at = |r: usize, c: usize, data: &[i32]| -> i32 {
        if transpose_b {
            data[c * k + r]
        } else {
            data[r * m + c]
        }
    };
    if integer {
        let (xa, xb) = (a.as_i32()?, b.as_i32()?);
        let mut out = vec![0i32; v_l * m];
        for v in 0..v_l {
            for c in 0..m {
                let mut acc = 0i64;
                for r in 0..k {
                    acc += xa[v * k + r] as i64 * b_at(r, c, xb) as i64;
                }
                out[v * m + c] = narrow_i32(acc, &node.id)?;
            }
        }
        Ok(Value::I32 { shape: vec![v_l, m], data: out })
    } else {
        let (xa, xb) = (a.as_f64()?, b.as_f64()?);
        let b_at_f = |r: usize, c: usize| -> f64 {
            if transpose_b {
                xb[c * k + r]
            } else {
                xb[r * m + c]
            }
        };
        let mut out = vec![0f64; v_l * m];
        for v in 0..v_l {
            for c in 0..m {
                let mut acc = 0f64;
                for r in 0..k {
                    acc += xa[v * k + r] * b_at_f(r, c);
                }
                out[v * m + c] = acc;
            }
        }
        Ok(Value::F64 { shape: vec![v_l, m], data: out })
    }
}

fn bias_add(node: &Node, x: &Value, b: &Value, integer: bool) -> Result<Value> {
    let shape = x.shape().to_vec();
    // Channel dim: first for [C,H,W] feature maps, last otherwise.
    let (channels, group) = if shape.len() == 3 {
        (shape[0], shape[1] * shape[2])
    } else {
        (*shape.last().unwrap(), 1)
    };
    if integer {
        let (xi, bi) = (x.as_i32()?, b.as_i32()?);
        let mut out = Vec::with_capacity(xi.len());
        for (idx, &v) in xi.iter().enumerate() {
            let c = if shape.len() == 3 { idx / group } else { idx % channels };
            out.push(narrow_i32(v as i64 + bi[c] as i64, &node.id)?);
        }
        Ok(Value::I32 { shape, data: out })
    } else {
        let (xf, bf) = (x.as_f64()?, b.as_f64()?);
        let mut out = Vec::with_capacity(xf.len());
        for (idx, &v) in xf.iter().enumerate() {
            let c = if shape.len() == 3 { idx / group } else { idx % channels };
            out.push(v + bf[c]);
        }
        Ok(Value::F64 { shape, data: out })
    }
}

fn max_pool(x: &Value, kernel: [usize; 2], stride: [usize; 2], integer: bool) -> Result<Value> {
    let s = x.shape().to_vec();
    let (c, h, w) = (s[0], s[1], s[2]);
    let ho = (h - kernel[0]) / stride[0] + 1;
    let wo = (w - kernel[1]) / stride[1] + 1;
    macro_rules! pool {
        ($data:expr, $init:expr, $max:expr) => {{
            let data = $data;
            let mut out = Vec::with_capacity(c * ho * wo);
            for ch in 0..c {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut best = $init;
                        for i in 0..kernel[0] {
                            for j in 0..kernel[1] {
                                let v = data[(ch * h + oh * stride[0] + i) * w + ow * stride[1] + j];
                                best = $max(best, v);
                            }
                        }
                        out.push(best);
                    }
                }
            }
            out
        }};
    }
    if integer {
        let xi = x.as_i32()?;
        let out = pool!(xi, i32::MIN, |a: i32, b: i32| a.max(b));
        Ok(Value::I32 { shape: vec![c, ho, wo], data: out })
    } else {
        let xf = x.as_f64()?;
        let out = pool!(xf, f64::NEG_INFINITY, |a: f64, b: f64| a.max(b));
        Ok(Value::F64 { shape: vec![c, ho, wo], data: out })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{IoTensor, Placement};

    fn node(id: &str, op: Op, inputs: &[&str], output: &str) -> Node {
        Node {
            id: id.into(),
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            output: output.into(),
            placement: Placement::Unassigned,
        }
    }

    #[test]
    fn quantize_clamps_and_rounds() {
        let mut env = Env::new();
        env.insert(
            "x".into(),
            Value::F64 { shape: vec![4], data: vec![0.24, -0.26, 100.0, -100.0] },
        );
        let n = node("q", Op::Quantize { scale: 0.1, bits: 4, signed: true }, &["x"], "y");
        let out = exec_node(&Graph::new("t"), &n, &env).unwrap();
        // round(2.4)=2, round(-2.6)=-3, clamp to +/-7.
        assert_eq!(out.as_i32().unwrap(), &[2, -3, 7, -7]);
    }

    #[test]
    fn integer_dense_matches_hand_computation() {
        let mut env = Env::new();
        env.insert("x".into(), Value::I32 { shape: vec![2], data: vec![3, -2] });
        env.insert("w".into(), Value::I32 { shape: vec![2, 2], data: vec![1, 2, 3, 4] });
        let n = node("fc", Op::Dense { r_repeat: 1, integer: true, quant: None }, &["x", "w"], "y");
        let out = exec_node(&Graph::new("t"), &n, &env).unwrap();
        // [3,-2] . [[1,2],[3,4]] = [3-6, 6-8] = [-3, -2]
        assert_eq!(out.as_i32().unwrap(), &[-3, -2]);
    }

    #[test]
    fn integer_add_requantizes_to_common_scale() {
        let mut env = Env::new();
        env.insert("a".into(), Value::I32 { shape: vec![2], data: vec![10, -4] });
        env.insert("b".into(), Value::I32 { shape: vec![2], data: vec![3, 5] });
        let n = node(
            "add",
            Op::Add { quant: Some(crate::graph::AddQuant { s_a: 0.5, s_b: 1.0 }) },
            &["a", "b"],
            "y",
        );
        let out = exec_node(&Graph::new("t"), &n, &env).unwrap();
        // common scale 1.0: round(10*0.5)+3 = 8, round(-4*0.5)+5 = 3
        assert_eq!(out.as_i32().unwrap(), &[8, 3]);
    }

    #[test]
    fn overflow_is_reported_with_node_id() {
        let mut env = Env::new();
        // 50000^2 > i32::MAX: the i64 accumulator cannot narrow back.
        env.insert("x".into(), Value::I32 { shape: vec![1], data: vec![50000] });
        env.insert("w".into(), Value::I32 { shape: vec![1, 1], data: vec![50000] });
        let n = node("big", Op::Dense { r_repeat: 1, integer: true, quant: None }, &["x", "w"], "y");
        let err = exec_node(&Graph::new("t"), &n, &env).unwrap_err().to_string();
        assert!(err.contains("big") && err.contains("overflow"), "{err}");
    }

    #[test]
    fn conv_via_graph_matches_hand_result() {
        // 1x3x3 input, one 2x2 kernel, stride 1, no padding.
        let mut g = Graph::new("c");
        g.inputs.push(IoTensor { name: "x".into(), shape: vec![1, 3, 3], dtype: DType::I32 });
        g.tensors.insert(
            "w".into(),
            ConstTensor::I32 {
                shape: vec![1, 1, 2, 2],
                data: vec![1, 0, 0, -1],
                scale: 1.0,
                bits: 8,
                signed: true,
            },
        );
        g.nodes.push(node(
            "conv",
            Op::Conv2D {
                stride: [1, 1],
                padding: [0, 0],
                r_repeat: 1,
                integer: true,
                quant: None,
            },
            &["x", "w"],
            "y",
        ));
        g.outputs.push("y".into());
        let x = Value::I32 { shape: vec![1, 3, 3], data: (1..=9).collect() };
        let out = eval_outputs(&g, &[("x".into(), x)]).unwrap();
        // y[oh][ow] = x[oh][ow] - x[oh+1][ow+1]
        assert_eq!(out[0].as_i32().unwrap(), &[1 - 5, 2 - 6, 4 - 8, 5 - 9]);
    }

    #[test]
    fn max_pool_takes_window_maximum() {
        let mut env = Env::new();
        env.insert(
            "x".into(),
            Value::I32 { shape: vec![1, 2, 4], data: vec![1, 5, 2, 0, 3, -1, 7, 2] },
        );
        let n = node(
            "pool",
            Op::MaxPool { kernel: [2, 2], stride: [2, 2], integer: true },
            &["x"],
            "y",
        );
        let out = exec_node(&Graph::new("t"), &n, &env).unwrap();
        assert_eq!(out.as_i32().unwrap(), &[5, 7]);
    }

    #[test]
    fn bias_add_broadcasts_over_channels() {
        let mut env = Env::new();
        env.insert(
            "x".into(),
            Value::I32 { shape: vec![2, 1, 2], data: vec![1, 2, 3, 4] },
        );
        env.insert("b".into(), Value::I32 { shape: vec![2], data: vec![10, -10] });
        let n = node("bias", Op::BiasAdd { integer: true }, &["x", "b"], "y");
        let out = exec_node(&Graph::new("t"), &n, &env).unwrap();
        assert_eq!(out.as_i32().unwrap(), &[11, 12, -7, -6]);
    }
}
