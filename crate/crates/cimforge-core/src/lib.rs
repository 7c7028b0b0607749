//! Core toolkit for compiling quantized neural networks onto RRAM crossbar
//! compute-in-memory (CIM) accelerators.
//!
//! The crate is organized around the offline toolchain of a CIM accelerator:
//!
//! * [`target`] — declarative description of the crossbar hardware (array
//!   dimensions, cell/DAC resolution, write and MVM timings).
//! * [`quant`] — symmetric linear quantization, requantization, and
//!   fake-quantization primitives shared by the compiler and the trainer.
//! * [`xbar`] — a bit-exact functional simulator of a differential crossbar
//!   tile, plus the weight-slicing/tiling decomposition of integer GEMMs.
//! * [`cost`] — the analytical latency model (write/MVM counts per layer) and
//!   the per-layer latency lookup table used by precision search.
//! * [`graph`] — the quantize/dequantize (QDQ) graph IR and model file format.
//! * [`passes`] — fake-quantization-to-integer conversion, bias/fusion
//!   cleanup, and device partitioning.
//! * [`schedule`] / [`lower`] — loop-nest construction and lowering of CIM
//!   layers into a device trace plus host program.
//! * [`trace`] — the device trace record set and its JSONL serialization.
//! * [`runtime`] — trace playback on the crossbar simulator, interleaved with
//!   host-side integer ops; reports bit-exact outputs and measured latency.
//! * [`interp`] — a direct reference interpreter for QDQ and integer graphs,
//!   independent of the crossbar path (used as a test oracle).
//! * [`builder`] — construction of QDQ model graphs from float models plus
//!   the bundled toy models used by tests and examples.

pub mod builder;
pub mod cost;
pub mod error;
pub mod graph;
pub mod interp;
pub mod lower;
pub mod passes;
pub mod quant;
pub mod runtime;
pub mod schedule;
pub mod target;
pub mod trace;
pub mod xbar;

pub use error::CoreError;
pub use target::{CimTarget, Latency};
