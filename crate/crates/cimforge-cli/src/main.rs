//! `cimforge`: command-line driver for the CIM quantization toolkit.
//!
//! Subcommands cover the full offline loop: generating target descriptions
//! and model fixtures, compiling QDQ models into device traces, replaying
//! traces on the crossbar simulator, dumping the latency model, and running
//! the mixed-precision search. Every command is deterministic given its
//! inputs and seed, and every artifact written embeds a [`RunManifest`]
//! recording how it was produced.
//!
//! Exit codes: 0 success, 1 usage, 2 validation/parse, 3 runtime/I/O.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value as Json};

use cim_aq::{SearchParams, SyntheticOracle, ToyQatOracle};
use cimforge_core::builder;
use cimforge_core::cost::{build_lut, total_latency, ConstraintMode, QuantConfig};
use cimforge_core::error::{CoreError, Result};
use cimforge_core::graph::{load_model, Graph};
use cimforge_core::interp::Value;
use cimforge_core::lower::compile;
use cimforge_core::runtime::run_inference;
use cimforge_core::target::{CimTarget, Latency};
use cimforge_core::trace::{read_trace, write_trace, TraceFile};

#[derive(Parser)]
#[command(name = "cimforge", version, about = "Quantization toolkit for crossbar CIM targets")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a crossbar target description as JSON.
    GenTarget(GenTargetArgs),
    /// Generate a fake-quantized model fixture as JSON.
    GenModel(GenModelArgs),
    /// Compile a QDQ model into a device trace plus a compile report.
    Compile(CompileArgs),
    /// Replay a compiled trace on the crossbar simulator.
    Run(RunArgs),
    /// Print the model's total 8-bit latency; optionally dump the LUT.
    Cost(CostArgs),
    /// Mixed-precision search over per-layer bit widths.
    Search(SearchArgs),
}

#[derive(Args)]
struct GenTargetArgs {
    /// Output path for the target JSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 256)]
    rows_n: usize,
    #[arg(long, default_value_t = 256)]
    cols_m: usize,
    #[arg(long, default_value_t = 4)]
    r_cell: u8,
    #[arg(long, default_value_t = 1)]
    r_dac: u8,
    /// Tile write latency in microseconds (decimal string, exact).
    #[arg(long, default_value = "56")]
    t_write_us: String,
    /// MVM cycle latency in microseconds (decimal string, exact).
    #[arg(long, default_value = "1.4")]
    t_mvm_us: String,
    #[arg(long, default_value_t = 2)]
    b_min: u8,
    #[arg(long, default_value_t = 8)]
    b_max: u8,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    /// 2-layer dense MLP.
    Mlp2,
    /// 4-layer dense MLP.
    Mlp4,
    /// 6-CIM-layer convolutional toy model.
    ToyCnn,
    /// ResNet-18-shaped fixture.
    Resnet18,
    /// ViT-shaped fixture.
    Vit,
    /// Five parallel dense layers with heterogeneous shapes (search benchmark).
    SearchBench,
    /// Dense MLP with explicit --dims.
    Mlp,
}

#[derive(Args)]
struct GenModelArgs {
    #[arg(long, value_enum)]
    kind: ModelKind,
    /// Output path for the model JSON.
    #[arg(long)]
    out: PathBuf,
    /// Seed for weights and calibration data (default: $CIMFORGE_SEED or 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Uniform weight bit width embedded in the QDQ model.
    #[arg(long, default_value_t = 8)]
    w_bit: u8,
    /// Uniform activation bit width embedded in the QDQ model.
    #[arg(long, default_value_t = 8)]
    a_bit: u8,
    /// Layer widths for --kind mlp, e.g. --dims 16,32,32,8.
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    /// Batch dimension for --kind mlp (0 = unbatched rank-1 input).
    #[arg(long, default_value_t = 0)]
    batch: usize,
}

#[derive(Args)]
struct CompileArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Output path for the JSONL device trace.
    #[arg(long)]
    out_trace: PathBuf,
    /// Output path for the compile report (default: <out-trace>.report.json).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Input tensor file (JSON list of {name, value}).
    #[arg(long, conflicts_with_all = ["input_seed", "zero_input"])]
    input: Option<PathBuf>,
    /// Generate the input deterministically from a seed instead.
    #[arg(long, conflicts_with = "zero_input")]
    input_seed: Option<u64>,
    /// Feed all-zero inputs instead.
    #[arg(long)]
    zero_input: bool,
    /// Output path for the run report (outputs + measured latency).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Also write the per-layer latency lookup table as CSV.
    #[arg(long)]
    lut: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConstraintsFlag {
    None,
    Io,
    Weight,
    Both,
}

impl From<ConstraintsFlag> for ConstraintMode {
    fn from(f: ConstraintsFlag) -> ConstraintMode {
        match f {
            ConstraintsFlag::None => ConstraintMode::None,
            ConstraintsFlag::Io => ConstraintMode::InputOutput,
            ConstraintsFlag::Weight => ConstraintMode::Weight,
            ConstraintsFlag::Both => ConstraintMode::Both,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleFlag {
    /// Closed-form per-layer sensitivity model; exhaustively optimizable.
    Synthetic,
    /// Tiny QAT-in-the-loop trainer on the bundled blob dataset (3 layers).
    Toy,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Output path for the search report JSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ConstraintsFlag::None)]
    constraints: ConstraintsFlag,
    #[arg(long, default_value_t = 600)]
    episodes: usize,
    /// Agent seed (default: $CIMFORGE_SEED or 0).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = OracleFlag::Synthetic)]
    oracle: OracleFlag,
    /// Seed for the oracle's fixture (sensitivity coefficients or dataset).
    #[arg(long, default_value_t = 30)]
    oracle_seed: u64,
    /// Tolerated accuracy drop below the 8-bit baseline, percentage points.
    #[arg(long, default_value_t = 5.0)]
    acc_loss: f64,
}

/// Provenance block embedded verbatim into every artifact a command writes.
#[derive(Debug, Clone, Serialize)]
struct RunManifest {
    command: String,
    inputs: Vec<String>,
    target: Option<String>,
    seed: Option<u64>,
    constraint_mode: Option<String>,
    outputs: Vec<String>,
    version: String,
}

impl RunManifest {
    fn new(command: &str) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            inputs: Vec::new(),
            target: None,
            seed: None,
            constraint_mode: None,
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.display().to_string());
        self
    }

    fn target_path(mut self, path: &Path) -> Self {
        self.target = Some(path.display().to_string());
        self
    }

    fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn constraint_mode(mut self, mode: ConstraintMode) -> Self {
        self.constraint_mode = Some(format!("{mode:?}"));
        self
    }

    fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    fn to_json(&self) -> Json {
        serde_json::to_value(self).expect("manifest serialization")
    }
}

/// `--seed` flag if given, else `$CIMFORGE_SEED`, else 0.
fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("CIMFORGE_SEED") {
        Ok(text) => text.trim().parse::<u64>().map_err(|_| {
            CoreError::validation(format!("CIMFORGE_SEED must be an unsigned integer, got {text:?}"))
        }),
        Err(_) => Ok(0),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CoreError::io(path.display().to_string(), e))
}

/// Inserts the manifest into a serialized JSON object (model/target files,
/// whose loaders tolerate the extra key).
fn inject_manifest(text: &str, manifest: &RunManifest) -> String {
    let mut value: Json = serde_json::from_str(text).expect("artifact is valid JSON");
    value
        .as_object_mut()
        .expect("artifact is a JSON object")
        .insert("manifest".into(), manifest.to_json());
    serde_json::to_string_pretty(&value).expect("artifact serialization") + "\n"
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                CoreError::Parse(_) | CoreError::Validation(_) => 2,
                CoreError::Runtime(_) | CoreError::Io { .. } => 3,
            };
            ExitCode::from(code)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenTarget(args) => cmd_gen_target(args),
        Cmd::GenModel(args) => cmd_gen_model(args),
        Cmd::Compile(args) => cmd_compile(args),
        Cmd::Run(args) => cmd_run(args),
        Cmd::Cost(args) => cmd_cost(args),
        Cmd::Search(args) => cmd_search(args),
    }
}

fn cmd_gen_target(args: GenTargetArgs) -> Result<()> {
    let target = CimTarget {
        rows_n: args.rows_n,
        cols_m: args.cols_m,
        r_cell: args.r_cell,
        r_dac: args.r_dac,
        t_write: Latency::from_us_str(&args.t_write_us)?,
        t_mvm: Latency::from_us_str(&args.t_mvm_us)?,
        b_min: args.b_min,
        b_max: args.b_max,
    };
    target.validate()?;
    let manifest = RunManifest::new("gen-target").output(&args.out);
    write_text(&args.out, &inject_manifest(&target.to_json_string(), &manifest))?;
    println!("wrote target {}", args.out.display());
    Ok(())
}

fn cmd_gen_model(args: GenModelArgs) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let float = match args.kind {
        ModelKind::Mlp2 => builder::mlp2_float(seed),
        ModelKind::Mlp4 => builder::mlp4_float(seed),
        ModelKind::ToyCnn => builder::toy_cnn_float(seed),
        ModelKind::Resnet18 => builder::resnet18_shaped_float(seed),
        ModelKind::Vit => builder::vit_shaped_float(seed),
        ModelKind::SearchBench => builder::search_bench_float(seed),
        ModelKind::Mlp => {
            if args.dims.len() < 2 {
                return Err(CoreError::validation(
                    "--kind mlp requires --dims with at least two comma-separated widths",
                ));
            }
            if args.batch > 0 {
                builder::mlp_batched_float("mlp", seed, args.batch, &args.dims, true)
            } else {
                builder::mlp_float("mlp", seed, &args.dims, true)
            }
        }
    };
    let num_layers = builder::cim_layer_count(&float);
    let bits = vec![(args.w_bit, args.a_bit); num_layers];
    let calib = builder::calib_inputs(&float, seed, 4);
    let qdq = builder::qdq_from_float(&float, &bits, &calib, true)?;
    let manifest = RunManifest::new("gen-model").seed(seed).output(&args.out);
    write_text(&args.out, &inject_manifest(&qdq.to_json_string(), &manifest))?;
    println!("wrote model {} ({num_layers} CIM layers)", args.out.display());
    Ok(())
}

/// Per-layer compile-report entry, mirroring the lowered plan.
#[derive(Serialize)]
struct LayerReport {
    node_id: String,
    kind: String,
    m_l: u64,
    n_l: u64,
    v_l: u64,
    w_bit: u8,
    a_bit: u8,
    n_write: u64,
    n_mvm: u64,
    latency_us: String,
}

fn compile_report(trace: &TraceFile) -> (Vec<LayerReport>, Latency) {
    let program = &trace.header.program;
    let (layers, config) = program.layer_descs();
    let target = &program.target;
    let mut rows = Vec::with_capacity(layers.len());
    for (plan, layer) in program.plans.iter().zip(&layers) {
        let latency = cimforge_core::cost::layer_latency(layer, plan.w_bit, plan.a_bit, target);
        rows.push(LayerReport {
            node_id: plan.node_id.clone(),
            kind: format!("{:?}", plan.kind),
            m_l: plan.m_l,
            n_l: plan.n_l,
            v_l: plan.v_l,
            w_bit: plan.w_bit,
            a_bit: plan.a_bit,
            n_write: plan.writes(),
            n_mvm: plan.mvms(),
            latency_us: latency.as_us_string(),
        });
    }
    let total = total_latency(&layers, &config, target).expect("lowered config is valid");
    (rows, total)
}

fn cmd_compile(args: CompileArgs) -> Result<()> {
    let graph = load_model(&args.model)?;
    let target = CimTarget::load(&args.target)?;
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| args.out_trace.with_extension("report.json"));
    let manifest = RunManifest::new("compile")
        .input(&args.model)
        .target_path(&args.target)
        .output(&args.out_trace)
        .output(&report_path);

    let mut trace = compile(&graph, &target)?;
    trace.header.manifest = manifest.to_json();
    write_trace(&trace, &args.out_trace)?;

    let (per_layer, predicted) = compile_report(&trace);
    let report = json!({
        "manifest": manifest.to_json(),
        "model": graph.name,
        "records": trace.records.len(),
        "per_layer": per_layer,
        "predicted_latency_us": predicted.as_us_string(),
    });
    write_text(&report_path, &(serde_json::to_string_pretty(&report).unwrap() + "\n"))?;
    println!(
        "compiled {} -> {} ({} records, predicted latency {} us)",
        graph.name,
        args.out_trace.display(),
        trace.records.len(),
        predicted.as_us_string()
    );
    Ok(())
}

fn load_inputs(args: &RunArgs, graph: &Graph) -> Result<Vec<(String, Value)>> {
    if let Some(path) = &args.input {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        #[derive(serde::Deserialize)]
        struct Entry {
            name: String,
            value: Value,
        }
        let entries: Vec<Entry> = serde_json::from_str(&text)
            .map_err(|e| CoreError::parse(format!("{}: invalid input file: {e}", path.display())))?;
        return Ok(entries.into_iter().map(|e| (e.name, e.value)).collect());
    }
    if let Some(seed) = args.input_seed {
        return Ok(builder::sample_input(graph, seed));
    }
    if args.zero_input {
        return Ok(graph
            .inputs
            .iter()
            .map(|io| {
                let numel: usize = io.shape.iter().product();
                (io.name.clone(), Value::F64 { shape: io.shape.clone(), data: vec![0.0; numel] })
            })
            .collect());
    }
    Err(CoreError::validation(
        "run requires one of --input, --input-seed, or --zero-input",
    ))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let trace = read_trace(&args.trace)?;
    let inputs = load_inputs(&args, &trace.header.program.graph)?;
    let result = run_inference(&trace, &inputs)?;
    let manifest = {
        let mut m = RunManifest::new("run").input(&args.trace);
        if let Some(path) = &args.input {
            m = m.input(path);
        }
        if let Some(seed) = args.input_seed {
            m = m.seed(seed);
        }
        m.output(&args.out)
    };
    let outputs: Vec<Json> = result
        .outputs
        .iter()
        .map(|(name, value)| json!({ "name": name, "value": value }))
        .collect();
    let per_layer: Vec<Json> = result
        .per_layer
        .iter()
        .map(|s| {
            json!({
                "node_id": s.node_id,
                "writes": s.writes,
                "mvms": s.mvms,
                "latency_us": s.latency.as_us_string(),
            })
        })
        .collect();
    let report = json!({
        "manifest": manifest.to_json(),
        "outputs": outputs,
        "measured_latency_us": result.measured_latency.as_us_string(),
        "per_layer": per_layer,
    });
    write_text(&args.out, &(serde_json::to_string_pretty(&report).unwrap() + "\n"))?;
    println!("measured latency {} us -> {}", result.measured_latency.as_us_string(), args.out.display());
    Ok(())
}

fn cmd_cost(args: CostArgs) -> Result<()> {
    let graph = load_model(&args.model)?;
    let target = CimTarget::load(&args.target)?;
    let trace = compile(&graph, &target)?;
    let (layers, _) = trace.header.program.layer_descs();
    let t_8b = total_latency(&layers, &QuantConfig::uniform(layers.len(), 8), &target)?;
    println!("total 8-bit latency: {} us", t_8b.as_us_string());
    if let Some(lut_path) = &args.lut {
        let manifest = RunManifest::new("cost")
            .input(&args.model)
            .target_path(&args.target)
            .output(lut_path);
        let lut = build_lut(&layers, &target);
        let comment = format!("manifest: {}", serde_json::to_string(&manifest.to_json()).unwrap());
        write_text(lut_path, &lut.to_csv(Some(&comment)))?;
        println!("wrote LUT {}", lut_path.display());
    }
    Ok(())
}

fn cmd_search(args: SearchArgs) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let graph = load_model(&args.model)?;
    let target = CimTarget::load(&args.target)?;
    let mode = ConstraintMode::from(args.constraints);
    let trace = compile(&graph, &target)?;
    let (layers, _) = trace.header.program.layer_descs();

    let oracle: Box<dyn cim_aq::AccuracyOracle> = match args.oracle {
        OracleFlag::Synthetic => Box::new(SyntheticOracle::new(args.oracle_seed, layers.len())),
        OracleFlag::Toy => Box::new(ToyQatOracle::new(args.oracle_seed)),
    };
    let params = SearchParams {
        episodes: args.episodes,
        seed,
        constraint_mode: mode,
        acc_loss: args.acc_loss,
    };
    let result = cim_aq::search(&layers, oracle.as_ref(), &target, &params)?;

    let manifest = RunManifest::new("search")
        .input(&args.model)
        .target_path(&args.target)
        .seed(seed)
        .constraint_mode(mode)
        .output(&args.out);
    let report = json!({
        "manifest": manifest.to_json(),
        "result": result,
    });
    write_text(&args.out, &(serde_json::to_string_pretty(&report).unwrap() + "\n"))?;
    println!(
        "best reward {:.3} at bits {:?} (speedup {:.3}x, S/AL {:.3}) -> {}",
        result.best_reward,
        result.best.bits,
        result.speedup,
        result.score,
        args.out.display()
    );
    Ok(())
}
