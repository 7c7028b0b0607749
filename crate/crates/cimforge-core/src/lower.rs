//! Lowering: turns a partitioned graph into a host program plus a device
//! trace.
//!
//! Each CIM-placed node becomes a `CimLayerPlan` describing its GeMM view,
//! bit-slicing, tiling, and staging buffers, and contributes a deterministic
//! record span to the trace: five loop-nest labels, then for every
//! (column-group, row-tile) one `WriteTile` followed by the full
//! `input_vec x input_bit` sweep of `Mvm` records, then the host epilogue
//! (`HostShiftAdd`, and `HostRequantize` when a requantize follows the
//! accumulator). Write records therefore count exactly
//! `⌈2·M_l·⌈w_bit/r_cell⌉/M⌉ · ⌈N_l/N⌉` per layer and MVM records
//! `V_l · N_write · ⌈a_bit/r_DAC⌉`, matching the cost model by construction.
//!
//! CPU-placed nodes are executed by the reference interpreter at run time;
//! the host program records their execution order.

use serde::{Deserialize, Serialize};

use crate::cost::{LayerDesc, LayerKind, QuantConfig};
use crate::error::{CoreError, Result};
use crate::graph::{Graph, Node, Op, Placement};
use crate::passes;
use crate::schedule;
use crate::target::CimTarget;
use crate::trace::{ShiftSpec, TraceFile, TraceHeader, TraceRecord, TRACE_VERSION};
use crate::xbar::plane_coeffs;

/// Per-layer staging buffer declarations (rows x cols): the weight tile
/// staged for programming, the input vector, and the output accumulator
/// row, all sized by the physical array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagingBuffers {
    pub weights: [u64; 2],
    pub input: [u64; 2],
    pub output: [u64; 2],
}

/// Convolution geometry needed to rebuild the im2col input stream at run
/// time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub padding: [usize; 2],
    pub h_out: usize,
    pub w_out: usize,
}

/// Everything the runtime needs to execute one CIM layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CimLayerPlan {
    pub node_id: String,
    pub kind: LayerKind,
    pub m_l: u64,
    pub n_l: u64,
    pub v_l: u64,
    pub r_repeat: u64,
    pub w_bit: u8,
    pub a_bit: u8,
    pub signed_input: bool,
    pub num_slices: u64,
    pub col_groups: u64,
    pub row_tiles: u64,
    pub bit_planes: u64,
    pub staging: StagingBuffers,
    /// Streaming operand (activation codes).
    pub input_tensor: String,
    /// Stationary operand programmed into the array (weight constant, or the
    /// second matmul operand).
    pub stationary_tensor: String,
    pub transpose_stationary: bool,
    /// Accumulator tensor the layer produces.
    pub output_tensor: String,
    /// Fused requantize multiplier applied by the host epilogue, when the
    /// accumulator's integer consumer chain ends in a requantize.
    pub requant_multiplier: Option<f64>,
    pub conv: Option<ConvGeometry>,
}

impl CimLayerPlan {
    /// Tile writes per repetition: col_groups * row_tiles.
    pub fn writes(&self) -> u64 {
        self.col_groups * self.row_tiles
    }

    /// MVM cycles per repetition.
    pub fn mvms(&self) -> u64 {
        self.writes() * self.v_l * self.bit_planes
    }
}

/// A compiled model: the placed graph, node execution order, per-layer CIM
/// plans, and the target it was lowered for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostProgram {
    pub graph: Graph,
    pub order: Vec<String>,
    pub plans: Vec<CimLayerPlan>,
    pub target: CimTarget,
}

impl HostProgram {
    pub fn plan(&self, node_id: &str) -> Option<&CimLayerPlan> {
        self.plans.iter().find(|p| p.node_id == node_id)
    }

    /// GeMM layer descriptors and realized bit-widths, in plan order; this is
    /// the cost-model view of the compiled program.
    pub fn layer_descs(&self) -> (Vec<LayerDesc>, QuantConfig) {
        let mut layers = Vec::with_capacity(self.plans.len());
        let mut bits = Vec::with_capacity(self.plans.len());
        for plan in &self.plans {
            let mut desc =
                LayerDesc::new(plan.node_id.clone(), plan.kind, plan.m_l, plan.n_l, plan.v_l);
            desc.r_repeat = plan.r_repeat;
            layers.push(desc);
            bits.push((plan.w_bit, plan.a_bit));
        }
        (layers, QuantConfig { bits, ..Default::default() })
    }
}

fn matmul_quant(node: &Node) -> Result<crate::graph::MatmulQuant> {
    match &node.op {
        Op::Conv2D { quant: Some(q), .. }
        | Op::Dense { quant: Some(q), .. }
        | Op::MatMul { quant: Some(q), .. } => Ok(*q),
        _ => Err(CoreError::validation(format!(
            "node {:?} has no quantization record; run qnn_fuse before lowering",
            node.id
        ))),
    }
}

/// Follows the accumulator through integer elementwise ops to the requantize
/// (if any) that closes the layer's host epilogue.
fn epilogue_multiplier(graph: &Graph, acc_tensor: &str) -> Option<f64> {
    let mut tensor = acc_tensor.to_string();
    loop {
        let consumers = graph.consumers(&tensor);
        let &idx = consumers.first()?;
        let node = &graph.nodes[idx];
        match &node.op {
            Op::Requantize { s_in, s_w, s_out, .. } => return Some(s_in * s_w / s_out),
            Op::BiasAdd { integer: true }
            | Op::Relu { integer: true }
            | Op::MaxPool { integer: true, .. }
            | Op::Flatten { integer: true } => {
                tensor = node.output.clone();
            }
            _ => return None,
        }
    }
}

fn build_plan(graph: &Graph, node: &Node, target: &CimTarget) -> Result<CimLayerPlan> {
    let info = graph.infer_types()?;
    let quant = matmul_quant(node)?;
    let (kind, m_l, n_l, v_l, transpose_stationary, stationary, conv) = match &node.op {
        Op::Conv2D { stride, padding, .. } => {
            let w = &info[&node.inputs[1]];
            let x = &info[&node.inputs[0]];
            let y = &info[&node.output];
            let (c_out, c_in, kh, kw) = (w.shape[0], w.shape[1], w.shape[2], w.shape[3]);
            let geometry = ConvGeometry {
                c_in,
                h_in: x.shape[1],
                w_in: x.shape[2],
                kernel: [kh, kw],
                stride: *stride,
                padding: *padding,
                h_out: y.shape[1],
                w_out: y.shape[2],
            };
            if graph.tensors.get(&node.inputs[1]).is_none() {
                return Err(CoreError::validation(format!(
                    "node {:?}: conv weights must be a constant tensor",
                    node.id
                )));
            }
            (
                LayerKind::Conv2D,
                c_out as u64,
                (c_in * kh * kw) as u64,
                (y.shape[1] * y.shape[2]) as u64,
                false,
                node.inputs[1].clone(),
                Some(geometry),
            )
        }
        Op::Dense { .. } => {
            let w = &info[&node.inputs[1]];
            let x = &info[&node.inputs[0]];
            if graph.tensors.get(&node.inputs[1]).is_none() {
                return Err(CoreError::validation(format!(
                    "node {:?}: dense weights must be a constant tensor",
                    node.id
                )));
            }
            let v_l = if x.shape.len() == 2 { x.shape[0] as u64 } else { 1 };
            (
                LayerKind::Dense,
                w.shape[1] as u64,
                w.shape[0] as u64,
                v_l,
                false,
                node.inputs[1].clone(),
                None,
            )
        }
        Op::MatMul { transpose_b, .. } => {
            let a = &info[&node.inputs[0]];
            let b = &info[&node.inputs[1]];
            let (k, m) =
                if *transpose_b { (b.shape[1], b.shape[0]) } else { (b.shape[0], b.shape[1]) };
            (
                LayerKind::MatMul,
                m as u64,
                k as u64,
                a.shape[0] as u64,
                *transpose_b,
                node.inputs[1].clone(),
                None,
            )
        }
        other => {
            return Err(CoreError::validation(format!(
                "node {:?}: op {} cannot be lowered to a CIM layer",
                node.id,
                other.name()
            )))
        }
    };

    // The stationary operand is mapped through the signed differential weight
    // path, so its codes must be signed. Conv/dense weights always are; for
    // matmul this is a compile-time contract on the producing quantizer.
    if kind == LayerKind::MatMul {
        let signed_stationary = match graph.producer(&stationary).map(|i| &graph.nodes[i].op) {
            Some(Op::Requantize { signed, .. }) | Some(Op::Quantize { signed, .. }) => *signed,
            _ => match graph.tensors.get(&stationary) {
                Some(crate::graph::ConstTensor::I32 { signed, .. }) => *signed,
                _ => true,
            },
        };
        if !signed_stationary {
            return Err(CoreError::validation(format!(
                "node {:?}: the stationary matmul operand must be signed-quantized for \
                 differential mapping",
                node.id
            )));
        }
    }

    // Fail at compile time if signed streaming cannot isolate the sign bit
    // on this DAC resolution.
    plane_coeffs(quant.a_bit, target.r_dac, quant.signed_in)
        .map_err(|e| CoreError::validation(format!("node {:?}: {e}", node.id)))?;

    let (col_groups, row_tiles) = schedule::tiling(m_l, n_l, quant.w_bit, target);
    Ok(CimLayerPlan {
        node_id: node.id.clone(),
        kind,
        m_l,
        n_l,
        v_l,
        r_repeat: node.op.r_repeat(),
        w_bit: quant.w_bit,
        a_bit: quant.a_bit,
        signed_input: quant.signed_in,
        num_slices: target.weight_slices(quant.w_bit),
        col_groups,
        row_tiles,
        bit_planes: target.input_planes(quant.a_bit),
        staging: StagingBuffers {
            weights: [target.cols_m as u64, target.rows_n as u64],
            input: [1, target.rows_n as u64],
            output: [1, target.cols_m as u64],
        },
        input_tensor: node.inputs[0].clone(),
        stationary_tensor: stationary,
        transpose_stationary,
        output_tensor: node.output.clone(),
        requant_multiplier: epilogue_multiplier(graph, &node.output),
        conv,
    })
}

/// Weight slice of the first unit column in column group `g`: unit columns
/// enumerate (logical column, slice, polarity) pairs in that order.
pub fn group_first_slice(g: u64, num_slices: u64, cols_m: u64) -> u64 {
    (g * cols_m % (2 * num_slices)) / 2
}

fn emit_layer_records(plan: &CimLayerPlan, target: &CimTarget, out: &mut Vec<TraceRecord>) {
    let layer = &plan.node_id;
    let nest = schedule::loop_nest(plan.m_l, plan.n_l, plan.v_l, plan.w_bit, plan.a_bit, target)
        .expect("plan dimensions already validated");
    for axis in &nest.axes {
        out.push(TraceRecord::Label {
            layer: layer.clone(),
            axis: axis.label,
            extent: axis.extent,
        });
    }
    for g in 0..plan.col_groups {
        for rt in 0..plan.row_tiles {
            out.push(TraceRecord::WriteTile {
                layer: layer.clone(),
                tile_coords: [rt, g],
                slice_index: group_first_slice(g, plan.num_slices, target.cols_m as u64),
            });
            for v in 0..plan.v_l {
                for p in 0..plan.bit_planes {
                    out.push(TraceRecord::Mvm {
                        layer: layer.clone(),
                        vec_index: v,
                        bit_plane: p,
                    });
                }
            }
        }
    }
    out.push(TraceRecord::HostShiftAdd {
        layer: layer.clone(),
        shifts: ShiftSpec {
            slice_shifts: (0..plan.num_slices as u32)
                .map(|s| s * target.r_cell as u32)
                .collect(),
            plane_shifts: (0..plan.bit_planes as u32)
                .map(|p| p * target.r_dac as u32)
                .collect(),
            msb_negative: plan.signed_input,
        },
    });
    if let Some(multiplier) = plan.requant_multiplier {
        out.push(TraceRecord::HostRequantize { layer: layer.clone(), multiplier });
    }
}

/// Lowers a partitioned graph into a host program and its device trace.
pub fn lower(graph: &Graph, target: &CimTarget) -> Result<TraceFile> {
    graph.validate()?;
    target.validate()?;
    let order: Vec<String> =
        graph.topo_order()?.into_iter().map(|i| graph.nodes[i].id.clone()).collect();
    let mut plans = Vec::new();
    let mut records = Vec::new();
    for id in &order {
        let node = graph.node(id).expect("ordered node exists");
        match node.placement {
            Placement::Cim => {
                let plan = build_plan(graph, node, target)?;
                emit_layer_records(&plan, target, &mut records);
                plans.push(plan);
            }
            Placement::Cpu => {}
            Placement::Unassigned => {
                if node.op.is_matmul_family() {
                    return Err(CoreError::validation(format!(
                        "node {:?} has no placement; run the partition pass before lowering",
                        node.id
                    )));
                }
            }
        }
    }
    Ok(TraceFile {
        header: TraceHeader {
            version: TRACE_VERSION,
            manifest: serde_json::Value::Null,
            program: HostProgram { graph: graph.clone(), order, plans, target: target.clone() },
        },
        records,
    })
}

/// Full compile pipeline: fq2i, qnn_fuse, partition, lower.
pub fn compile(graph: &Graph, target: &CimTarget) -> Result<TraceFile> {
    let g = passes::fq2i_pass(graph)?;
    let g = passes::qnn_fuse_pass(&g)?;
    let g = passes::partition_pass(&g)?;
    lower(&g, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost;
    use crate::graph::{ConstTensor, DType, IoTensor};

    fn placed_dense(v_l: usize, n: usize, m: usize, w_bit: u8, a_bit: u8) -> Graph {
        let mut g = Graph::new("d");
        let shape = if v_l == 1 { vec![n] } else { vec![v_l, n] };
        g.inputs.push(IoTensor { name: "x".into(), shape, dtype: DType::F64 });
        g.tensors.insert(
            "w".into(),
            ConstTensor::I32 {
                shape: vec![n, m],
                data: vec![1; n * m],
                scale: 0.5,
                bits: w_bit,
                signed: true,
            },
        );
        g.nodes.push(Node {
            id: "q0".into(),
            op: Op::Quantize { scale: 0.1, bits: a_bit, signed: true },
            inputs: vec!["x".into()],
            output: "xq".into(),
            placement: Placement::Unassigned,
        });
        g.nodes.push(Node {
            id: "dq0".into(),
            op: Op::Dequantize { scale: 0.1, bits: a_bit, signed: true },
            inputs: vec!["xq".into()],
            output: "xf".into(),
            placement: Placement::Unassigned,
        });
        g.nodes.push(Node {
            id: "fc".into(),
            op: Op::Dense { r_repeat: 1, integer: false, quant: None },
            inputs: vec!["xf".into(), "w".into()],
            output: "acc".into(),
            placement: Placement::Unassigned,
        });
        g.nodes.push(Node {
            id: "q1".into(),
            op: Op::Quantize { scale: 0.2, bits: 8, signed: true },
            inputs: vec!["acc".into()],
            output: "y".into(),
            placement: Placement::Unassigned,
        });
        g.outputs.push("y".into());
        g
    }

    #[test]
    fn lowered_counts_match_cost_model() {
        let target = CimTarget::reference();
        let trace = compile(&placed_dense(3, 300, 512, 6, 5), &target).unwrap();
        assert_eq!(trace.header.program.plans.len(), 1);
        let plan = &trace.header.program.plans[0];
        let desc = LayerDesc::new("fc", LayerKind::Dense, 512, 300, 3);
        assert_eq!(plan.writes(), cost::n_write(&desc, 6, &target));
        assert_eq!(plan.mvms(), cost::n_mvm(&desc, 6, 5, &target));
        let writes = trace
            .records
            .iter()
            .filter(|r| matches!(r, TraceRecord::WriteTile { .. }))
            .count() as u64;
        let mvms =
            trace.records.iter().filter(|r| matches!(r, TraceRecord::Mvm { .. })).count() as u64;
        assert_eq!(writes, plan.writes());
        assert_eq!(mvms, plan.mvms());
    }

    #[test]
    fn write_tiles_precede_their_mvms_and_labels_lead() {
        let target = CimTarget::reference();
        let trace = compile(&placed_dense(2, 64, 128, 8, 8), &target).unwrap();
        let mut seen_write = false;
        let mut labels = 0;
        for rec in &trace.records {
            match rec {
                TraceRecord::Label { .. } => {
                    assert!(!seen_write, "labels must precede device records");
                    labels += 1;
                }
                TraceRecord::WriteTile { .. } => seen_write = true,
                TraceRecord::Mvm { .. } => {
                    assert!(seen_write, "mvm before any write tile");
                }
                _ => {}
            }
        }
        assert_eq!(labels, 5);
    }

    #[test]
    fn requantize_epilogue_captured_in_plan() {
        let target = CimTarget::reference();
        let trace = compile(&placed_dense(1, 16, 8, 8, 8), &target).unwrap();
        let plan = &trace.header.program.plans[0];
        let mult = plan.requant_multiplier.expect("requantize follows the accumulator");
        assert!((mult - 0.1 * 0.5 / 0.2).abs() < 1e-15);
        assert!(trace
            .records
            .iter()
            .any(|r| matches!(r, TraceRecord::HostRequantize { .. })));
    }

    #[test]
    fn empty_graph_lowers_to_empty_trace() {
        let target = CimTarget::reference();
        let g = Graph::new("empty");
        let trace = lower(&g, &target).unwrap();
        assert!(trace.records.is_empty());
        assert!(trace.header.program.plans.is_empty());
    }

    #[test]
    fn unpartitioned_matmul_is_rejected() {
        let target = CimTarget::reference();
        let g = placed_dense(1, 4, 4, 8, 8);
        let err = lower(&g, &target).unwrap_err().to_string();
        assert!(err.contains("partition"), "{err}");
    }

    #[test]
    fn trace_serialization_round_trips() {
        let target = CimTarget::reference();
        let trace = compile(&placed_dense(2, 64, 128, 8, 4), &target).unwrap();
        let text = trace.to_jsonl_string();
        let back = TraceFile::from_jsonl_str(&text).unwrap();
        assert_eq!(trace, back);
        // Deterministic: a recompile is byte-identical.
        let again = compile(&placed_dense(2, 64, 128, 8, 4), &target).unwrap();
        assert_eq!(text, again.to_jsonl_string());
    }
}
