//! Trace-driven runtime: executes a compiled model on the simulated
//! crossbar.
//!
//! CPU-placed nodes run through the reference interpreter. Each CIM layer
//! replays its trace span against one shared `CrossbarState`: the stationary
//! operand is sliced and packed into physical column groups, every
//! (column-group, row-tile) pair is programmed with one tile write, the
//! input vectors stream bit-serially through the DAC, and the host
//! recombines slice and plane partial currents by shift-add in 64-bit
//! arithmetic, narrowing the final accumulator to 32 bits (overflow is an
//! error, never a silent wrap). Every trace record is verified against the
//! computation as it executes; measured latency is accumulated from the
//! device counters as `r_repeat * (writes * t_write + mvms * t_mvm)` per
//! layer.

use serde::Serialize;

use crate::cost::LayerKind;
use crate::error::{CoreError, Result};
use crate::graph::Placement;
use crate::interp::{self, conv_weight_matrix, im2col_i32, Env, Value};
use crate::lower::CimLayerPlan;
use crate::quant::{q_max, q_min};
use crate::target::{CimTarget, Latency};
use crate::trace::{TraceFile, TraceRecord};
use crate::xbar::{map_weights, plane_coeffs, plane_digit, CrossbarState, DigitMatrix, SlicePair};

/// Device activity of one executed CIM layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerStats {
    pub node_id: String,
    /// Tile writes of one repetition.
    pub writes: u64,
    /// MVM cycles of one repetition.
    pub mvms: u64,
    pub r_repeat: u64,
    /// `r_repeat * (writes * t_write + mvms * t_mvm)`.
    pub latency: Latency,
}

/// Result of executing a compiled model.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    /// Declared graph outputs, in order.
    pub outputs: Vec<(String, Value)>,
    /// Total measured latency over all CIM layers.
    pub measured_latency: Latency,
    pub per_layer: Vec<LayerStats>,
}

struct Cursor<'a> {
    records: &'a [TraceRecord],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn next(&mut self, expected: &str) -> Result<&'a TraceRecord> {
        let rec = self.records.get(self.pos).ok_or_else(|| {
            CoreError::runtime(format!(
                "trace ended early at record {}: expected {expected}",
                self.pos
            ))
        })?;
        self.pos += 1;
        Ok(rec)
    }

    fn mismatch(&self, expected: String, found: &TraceRecord) -> CoreError {
        CoreError::runtime(format!(
            "trace does not match program at record {}: expected {expected}, found {found:?}",
            self.pos - 1
        ))
    }
}

fn code_range_check(codes: &[i32], bits: u8, signed: bool, node_id: &str) -> Result<()> {
    let (lo, hi) = (q_min(bits, signed), q_max(bits, signed));
    for &c in codes {
        if c < lo || c > hi {
            return Err(CoreError::runtime(format!(
                "node {node_id:?}: input code {c} outside the {bits}-bit {} range [{lo}, {hi}]",
                if signed { "signed" } else { "unsigned" }
            )));
        }
    }
    Ok(())
}

/// Streaming operand as a row-major V_l x N_l code matrix.
fn input_matrix(plan: &CimLayerPlan, value: &Value) -> Result<Vec<i32>> {
    let codes = value.as_i32()?;
    match (&plan.conv, value.shape().len()) {
        (Some(geo), _) => {
            let (v_l, n_l, rows) = im2col_i32(
                codes,
                geo.c_in,
                geo.h_in,
                geo.w_in,
                geo.kernel,
                geo.stride,
                geo.padding,
            );
            debug_assert_eq!((v_l as u64, n_l as u64), (plan.v_l, plan.n_l));
            Ok(rows)
        }
        (None, 1) => Ok(codes.to_vec()),
        (None, 2) => Ok(codes.to_vec()),
        (None, rank) => Err(CoreError::runtime(format!(
            "node {:?}: streaming operand has unsupported rank {rank}",
            plan.node_id
        ))),
    }
}

/// Stationary operand as a row-major N_l x M_l code matrix.
fn stationary_matrix(plan: &CimLayerPlan, value: &Value) -> Result<Vec<i32>> {
    let codes = value.as_i32()?;
    match plan.kind {
        LayerKind::Dense => Ok(codes.to_vec()),
        LayerKind::Conv2D => {
            let (_, _, mat) = conv_weight_matrix(value.shape(), codes);
            Ok(mat)
        }
        LayerKind::MatMul => {
            if plan.transpose_stationary {
                // Stored [M, K]; transpose to [K, M].
                let (m, k) = (plan.m_l as usize, plan.n_l as usize);
                let mut out = vec![0i32; k * m];
                for r in 0..k {
                    for c in 0..m {
                        out[r * m + c] = codes[c * k + r];
                    }
                }
                Ok(out)
            } else {
                Ok(codes.to_vec())
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_cim_layer(
    plan: &CimLayerPlan,
    env: &Env,
    device: &mut CrossbarState,
    cursor: &mut Cursor,
    target: &CimTarget,
) -> Result<(Value, LayerStats)> {
    let layer = &plan.node_id;
    let nest =
        crate::schedule::loop_nest(plan.m_l, plan.n_l, plan.v_l, plan.w_bit, plan.a_bit, target)?;
    for axis in &nest.axes {
        match cursor.next("label")? {
            TraceRecord::Label { layer: l, axis: a, extent }
                if l == layer && *a == axis.label && *extent == axis.extent => {}
            other => {
                return Err(cursor.mismatch(
                    format!("label {:?} extent {} for layer {layer:?}", axis.label, axis.extent),
                    other,
                ))
            }
        }
    }

    let x_value = env
        .get(&plan.input_tensor)
        .ok_or_else(|| CoreError::runtime(format!("missing tensor {:?}", plan.input_tensor)))?;
    let w_value = env.get(&plan.stationary_tensor).ok_or_else(|| {
        CoreError::runtime(format!("missing tensor {:?}", plan.stationary_tensor))
    })?;
    let x = input_matrix(plan, x_value)?;
    code_range_check(&x, plan.a_bit, plan.signed_input, layer)?;
    let wmat = stationary_matrix(plan, w_value)?;

    let (n_l, m_l, v_l) = (plan.n_l as usize, plan.m_l as usize, plan.v_l as usize);
    let sliced = map_weights(&wmat, n_l, m_l, plan.w_bit, target)
        .map_err(|e| CoreError::runtime(format!("node {layer:?}: {e}")))?;
    let coeffs = plane_coeffs(plan.a_bit, target.r_dac, plan.signed_input)?;
    let (rows_n, cols_m) = (target.rows_n, target.cols_m);
    let num_slices = plan.num_slices as usize;
    let total_units = 2 * m_l * num_slices;
    let writes_before = device.write_count;
    let mvms_before = device.mvm_count;

    // Unit column u packs (logical column, slice, polarity): u = c*2S + s*2 + pol.
    let decode = |u: usize| -> (usize, usize, usize) {
        let c = u / (2 * num_slices);
        let rem = u % (2 * num_slices);
        (c, rem / 2, rem % 2)
    };

    let mut acc = vec![0i64; v_l * m_l];
    for g in 0..plan.col_groups as usize {
        for rt in 0..plan.row_tiles as usize {
            let rows_here = (n_l - rt * rows_n).min(rows_n);
            let mut g_pos = DigitMatrix::zeros(rows_here, cols_m);
            let mut g_neg = DigitMatrix::zeros(rows_here, cols_m);
            for k in 0..cols_m {
                let u = g * cols_m + k;
                if u >= total_units {
                    break;
                }
                let (c, s, pol) = decode(u);
                let tile = sliced.tile(rt, c / cols_m);
                let pair = &tile.slices[s];
                let lc = c % cols_m;
                for r in 0..rows_here {
                    if pol == 0 {
                        g_pos.set(r, k, pair.g_pos.at(r, lc));
                    } else {
                        g_neg.set(r, k, pair.g_neg.at(r, lc));
                    }
                }
            }
            let expected_slice =
                crate::lower::group_first_slice(g as u64, plan.num_slices, cols_m as u64);
            match cursor.next("write_tile")? {
                TraceRecord::WriteTile { layer: l, tile_coords, slice_index }
                    if l == layer
                        && *tile_coords == [rt as u64, g as u64]
                        && *slice_index == expected_slice => {}
                other => {
                    return Err(cursor.mismatch(
                        format!("write_tile [{rt}, {g}] for layer {layer:?}"),
                        other,
                    ))
                }
            }
            device.write(&SlicePair { g_pos, g_neg })?;

            let mut vpad = vec![0u32; rows_n];
            for v in 0..v_l {
                for p in 0..plan.bit_planes as usize {
                    match cursor.next("mvm")? {
                        TraceRecord::Mvm { layer: l, vec_index, bit_plane }
                            if l == layer && *vec_index == v as u64 && *bit_plane == p as u64 => {}
                        other => {
                            return Err(cursor.mismatch(
                                format!("mvm vec {v} plane {p} for layer {layer:?}"),
                                other,
                            ))
                        }
                    }
                    for r in 0..rows_here {
                        vpad[r] = plane_digit(x[v * n_l + rt * rows_n + r], p, plan.a_bit, target.r_dac);
                    }
                    for item in vpad.iter_mut().skip(rows_here) {
                        *item = 0;
                    }
                    let currents = device.mvm(&vpad)?;
                    for (k, &i_k) in currents.iter().enumerate() {
                        let u = g * cols_m + k;
                        if u >= total_units {
                            break;
                        }
                        let (c, s, _) = decode(u);
                        acc[v * m_l + c] += sliced.slice_weights[s] * coeffs[p] * i_k as i64;
                    }
                }
            }
        }
    }

    match cursor.next("host_shift_add")? {
        TraceRecord::HostShiftAdd { layer: l, .. } if l == layer => {}
        other => return Err(cursor.mismatch(format!("host_shift_add for layer {layer:?}"), other)),
    }
    if let Some(multiplier) = plan.requant_multiplier {
        match cursor.next("host_requantize")? {
            TraceRecord::HostRequantize { layer: l, multiplier: m }
                if l == layer && *m == multiplier => {}
            other => {
                return Err(
                    cursor.mismatch(format!("host_requantize for layer {layer:?}"), other)
                )
            }
        }
    }

    let mut data = vec![0i32; v_l * m_l];
    for (idx, &a) in acc.iter().enumerate() {
        data[idx] = i32::try_from(a).map_err(|_| {
            CoreError::runtime(format!(
                "node {layer:?}: 32-bit accumulator overflow (value {a})"
            ))
        })?;
    }
    let out = match (&plan.conv, plan.kind) {
        (Some(geo), _) => {
            // acc is vector-major [v][c]; feature maps are channel-major.
            let (ho, wo) = (geo.h_out, geo.w_out);
            let mut chw = vec![0i32; m_l * ho * wo];
            for v in 0..v_l {
                for c in 0..m_l {
                    chw[c * ho * wo + v] = data[v * m_l + c];
                }
            }
            Value::I32 { shape: vec![m_l, ho, wo], data: chw }
        }
        (None, LayerKind::Dense) if plan.v_l == 1 && env[&plan.input_tensor].shape().len() == 1 => {
            Value::I32 { shape: vec![m_l], data }
        }
        _ => Value::I32 { shape: vec![v_l, m_l], data },
    };

    let writes = device.write_count - writes_before;
    let mvms = device.mvm_count - mvms_before;
    if writes != plan.writes() || mvms != plan.mvms() {
        return Err(CoreError::runtime(format!(
            "node {layer:?}: device counters ({writes} writes, {mvms} mvms) diverge from the \
             plan ({} writes, {} mvms)",
            plan.writes(),
            plan.mvms()
        )));
    }
    let latency = target.t_write.scale((writes * plan.r_repeat) as u128)
        + target.t_mvm.scale((mvms * plan.r_repeat) as u128);
    let stats = LayerStats {
        node_id: layer.clone(),
        writes,
        mvms,
        r_repeat: plan.r_repeat,
        latency,
    };
    Ok((out, stats))
}

/// Executes a compiled trace end to end.
pub fn run_inference(trace: &TraceFile, inputs: &[(String, Value)]) -> Result<RunResult> {
    let program = &trace.header.program;
    let graph = &program.graph;
    let target = &program.target;
    graph.validate()?;
    target.validate()?;
    let mut env = interp::init_env(graph, inputs)?;
    let mut device = CrossbarState::new(target);
    let mut cursor = Cursor { records: &trace.records, pos: 0 };
    let mut per_layer = Vec::new();
    for id in &program.order {
        let node = graph
            .node(id)
            .ok_or_else(|| CoreError::runtime(format!("program order names unknown node {id:?}")))?;
        let out = match node.placement {
            Placement::Cim => {
                let plan = program.plan(id).ok_or_else(|| {
                    CoreError::runtime(format!("CIM node {id:?} has no layer plan"))
                })?;
                let (value, stats) =
                    run_cim_layer(plan, &env, &mut device, &mut cursor, target)?;
                per_layer.push(stats);
                value
            }
            _ => interp::exec_node(graph, node, &env)?,
        };
        env.insert(node.output.clone(), out);
    }
    if cursor.pos != trace.records.len() {
        return Err(CoreError::runtime(format!(
            "trace has {} records beyond the end of the program",
            trace.records.len() - cursor.pos
        )));
    }
    let mut outputs = Vec::with_capacity(graph.outputs.len());
    for name in &graph.outputs {
        let value = env
            .get(name)
            .cloned()
            .ok_or_else(|| CoreError::runtime(format!("output {name:?} was not produced")))?;
        outputs.push((name.clone(), value));
    }
    let measured_latency = per_layer.iter().map(|s| s.latency).sum();
    Ok(RunResult { outputs, measured_latency, per_layer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ConstTensor, DType, Graph, IoTensor, Node, Op};
    use crate::lower::compile;

    fn node(id: &str, op: Op, inputs: &[&str], output: &str) -> Node {
        Node {
            id: id.into(),
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            output: output.into(),
            placement: Placement::Unassigned,
        }
    }

    /// x[4] -> Q -> DQ -> dense(4x3) -> BiasAdd -> Relu -> Q(out, unsigned).
    fn mlp_graph() -> Graph {
        let mut g = Graph::new("m");
        g.inputs.push(IoTensor { name: "x".into(), shape: vec![4], dtype: DType::F64 });
        g.tensors.insert(
            "w".into(),
            ConstTensor::I32 {
                shape: vec![4, 3],
                data: vec![3, -1, 2, 0, 4, -2, 1, 1, -3, 2, -4, 0],
                scale: 0.25,
                bits: 4,
                signed: true,
            },
        );
        g.tensors
            .insert("b".into(), ConstTensor::F64 { shape: vec![3], data: vec![0.5, -0.25, 0.125] });
        g.nodes.push(node("q0", Op::Quantize { scale: 0.05, bits: 6, signed: true }, &["x"], "xq"));
        g.nodes.push(node(
            "dq0",
            Op::Dequantize { scale: 0.05, bits: 6, signed: true },
            &["xq"],
            "xf",
        ));
        g.nodes.push(node(
            "fc",
            Op::Dense { r_repeat: 1, integer: false, quant: None },
            &["xf", "w"],
            "h",
        ));
        g.nodes.push(node("bias", Op::BiasAdd { integer: false }, &["h", "b"], "hb"));
        g.nodes.push(node("act", Op::Relu { integer: false }, &["hb"], "hr"));
        g.nodes
            .push(node("q1", Op::Quantize { scale: 0.1, bits: 8, signed: false }, &["hr"], "y"));
        g.outputs.push("y".into());
        g
    }

    fn input(data: Vec<f64>) -> Vec<(String, Value)> {
        let shape = vec![data.len()];
        vec![("x".into(), Value::F64 { shape, data })]
    }

    #[test]
    fn trace_execution_matches_interpreter_exactly() {
        let target = CimTarget::reference();
        let trace = compile(&mlp_graph(), &target).unwrap();
        let x = input(vec![0.93, -0.41, 0.27, -0.08]);
        let want = interp::eval_outputs(&trace.header.program.graph, &x).unwrap();
        let got = run_inference(&trace, &x).unwrap();
        assert_eq!(got.outputs[0].1, want[0]);
    }

    #[test]
    fn measured_latency_matches_cost_model() {
        let target = CimTarget::reference();
        let trace = compile(&mlp_graph(), &target).unwrap();
        let got = run_inference(&trace, &input(vec![0.1, 0.2, -0.3, 0.4])).unwrap();
        let (layers, config) = trace.header.program.layer_descs();
        let predicted = crate::cost::total_latency(&layers, &config, &target).unwrap();
        assert_eq!(got.measured_latency, predicted);
        assert_eq!(got.per_layer.len(), 1);
        assert_eq!(got.per_layer[0].writes, 1);
        // a_bit = 6, r_dac = 1, one vector: 6 MVM cycles.
        assert_eq!(got.per_layer[0].mvms, 6);
    }

    #[test]
    fn all_zero_input_yields_bias_only_logits() {
        let target = CimTarget::reference();
        let trace = compile(&mlp_graph(), &target).unwrap();
        let got = run_inference(&trace, &input(vec![0.0; 4])).unwrap();
        let want = interp::eval_outputs(&trace.header.program.graph, &input(vec![0.0; 4])).unwrap();
        assert_eq!(got.outputs[0].1, want[0]);
        // s_acc = 0.05 * 0.25 = 0.0125; bias codes are [40, -20, 10]; after
        // ReLU and requantize to 0.1: [5, 0, 1].
        assert_eq!(got.outputs[0].1.as_i32().unwrap(), &[5, 0, 1]);
    }

    #[test]
    fn matmul_layer_runs_on_the_device() {
        let mut g = Graph::new("mm");
        g.inputs.push(IoTensor { name: "a".into(), shape: vec![2, 3], dtype: DType::F64 });
        g.inputs.push(IoTensor { name: "b".into(), shape: vec![2, 3], dtype: DType::F64 });
        g.nodes.push(node("qa", Op::Quantize { scale: 0.1, bits: 5, signed: true }, &["a"], "aq"));
        g.nodes
            .push(node("dqa", Op::Dequantize { scale: 0.1, bits: 5, signed: true }, &["aq"], "af"));
        g.nodes.push(node("qb", Op::Quantize { scale: 0.2, bits: 4, signed: true }, &["b"], "bq"));
        g.nodes
            .push(node("dqb", Op::Dequantize { scale: 0.2, bits: 4, signed: true }, &["bq"], "bf"));
        g.nodes.push(node(
            "mm",
            Op::MatMul { transpose_b: true, r_repeat: 1, integer: false, quant: None },
            &["af", "bf"],
            "c",
        ));
        g.nodes.push(node("qc", Op::Quantize { scale: 0.4, bits: 8, signed: true }, &["c"], "y"));
        g.outputs.push("y".into());

        let target = CimTarget::reference();
        let trace = compile(&g, &target).unwrap();
        let inputs: Vec<(String, Value)> = vec![
            (
                "a".into(),
                Value::F64 { shape: vec![2, 3], data: vec![0.5, -0.3, 0.2, 0.1, 0.4, -0.6] },
            ),
            (
                "b".into(),
                Value::F64 { shape: vec![2, 3], data: vec![0.7, 0.2, -0.5, -0.1, 0.3, 0.6] },
            ),
        ];
        let want = interp::eval_outputs(&trace.header.program.graph, &inputs).unwrap();
        let got = run_inference(&trace, &inputs).unwrap();
        assert_eq!(got.outputs[0].1, want[0]);
        let plan = &trace.header.program.plans[0];
        assert_eq!((plan.m_l, plan.n_l, plan.v_l), (2, 3, 2));
        assert!(plan.transpose_stationary);
    }

    #[test]
    fn conv_layer_matches_interpreter() {
        let mut g = Graph::new("cv");
        g.inputs.push(IoTensor { name: "x".into(), shape: vec![2, 5, 5], dtype: DType::F64 });
        g.tensors.insert(
            "w".into(),
            ConstTensor::I32 {
                shape: vec![3, 2, 3, 3],
                data: (0..54).map(|i| ((i * 7) % 15) as i32 - 7).collect(),
                scale: 0.125,
                bits: 5,
                signed: true,
            },
        );
        g.nodes.push(node("q0", Op::Quantize { scale: 0.05, bits: 7, signed: true }, &["x"], "xq"));
        g.nodes.push(node(
            "dq0",
            Op::Dequantize { scale: 0.05, bits: 7, signed: true },
            &["xq"],
            "xf",
        ));
        g.nodes.push(node(
            "conv",
            Op::Conv2D {
                stride: [2, 2],
                padding: [1, 1],
                r_repeat: 1,
                integer: false,
                quant: None,
            },
            &["xf", "w"],
            "h",
        ));
        g.nodes.push(node("q1", Op::Quantize { scale: 0.3, bits: 8, signed: true }, &["h"], "y"));
        g.outputs.push("y".into());

        let target = CimTarget::reference();
        let trace = compile(&g, &target).unwrap();
        let data: Vec<f64> = (0..50).map(|i| ((i % 11) as f64 - 5.0) / 9.0).collect();
        let inputs = vec![("x".into(), Value::F64 { shape: vec![2, 5, 5], data })];
        let want = interp::eval_outputs(&trace.header.program.graph, &inputs).unwrap();
        let got = run_inference(&trace, &inputs).unwrap();
        assert_eq!(got.outputs[0].1, want[0]);
        let plan = &trace.header.program.plans[0];
        assert_eq!((plan.m_l, plan.n_l, plan.v_l), (3, 18, 9));
    }

    #[test]
    fn tampered_trace_is_rejected() {
        let target = CimTarget::reference();
        let mut trace = compile(&mlp_graph(), &target).unwrap();
        for rec in &mut trace.records {
            if let TraceRecord::Mvm { bit_plane, .. } = rec {
                *bit_plane += 1;
                break;
            }
        }
        let err = run_inference(&trace, &input(vec![0.1, 0.1, 0.1, 0.1]))
            .unwrap_err()
            .to_string();
        assert!(err.contains("trace does not match"), "{err}");
    }
}
