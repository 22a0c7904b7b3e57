use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use trim_core::dse::{self, OutputFormat, ReportRow, SweepSpec, VerifyOptions};
use trim_core::model::{self, AlphaModel, DataflowKind, Rational};
use trim_core::sim::{emit_trace, format_counters};
use trim_core::trim::ScheduleVariant;
use trim_core::{golden_conv, ConvShape, FeatureMap, Kernel};

#[derive(Parser)]
#[command(
    name = "trimsim",
    version,
    about = "TrIM / WS / RS systolic-array simulator and cost model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the analytical metrics of one point.
    Model(PointArgs),
    /// Simulate one point and print its counters.
    Sim(SimArgs),
    /// Print a cycle-by-cycle trace of one simulation.
    Trace(TraceArgs),
    /// Evaluate a (dataflow, K, I) grid.
    Sweep(SweepArgs),
    /// Run the identity and oracle suite.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Dataflow {
    Ws,
    Rs,
    Trim,
}

impl From<Dataflow> for DataflowKind {
    fn from(d: Dataflow) -> Self {
        match d {
            Dataflow::Ws => DataflowKind::Ws,
            Dataflow::Rs => DataflowKind::Rs,
            Dataflow::Trim => DataflowKind::Trim,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Data {
    /// Ifmap 1..=H*W and kernel 1..=K^2 in raster order.
    Raster,
    /// Seeded values in -8..=8.
    Random,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    out: Option<PathBuf>,
    /// Constant RS scratch-pad factor, e.g. 12.9.
    #[arg(long, value_parser = parse_decimal)]
    alpha: Option<Rational>,
}

#[derive(Args)]
struct PointArgs {
    #[arg(long, value_enum)]
    dataflow: Dataflow,
    #[arg(long)]
    k: usize,
    /// Square ifmap side.
    #[arg(long)]
    ifmap: usize,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    point: PointArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "random")]
    data: Data,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long, value_enum)]
    dataflow: Dataflow,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    ifmap: usize,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "raster")]
    data: Data,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Dataflows to include (default: all).
    #[arg(long, value_enum, value_delimiter = ',')]
    dataflow: Vec<Dataflow>,
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    ifmap: Vec<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip simulation and emit formula values only.
    #[arg(long)]
    no_sim: bool,
    /// Emit the per-point comparison ratios instead of the metric rows.
    #[arg(long)]
    ratios: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    ifmap: Vec<usize>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    cases: usize,
    #[arg(long, hide = true)]
    inject_fault: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Check(String),
}

type Outcome = Result<(String, bool), Failure>;

fn parse_decimal(s: &str) -> Result<Rational, String> {
    let bad = || format!("`{s}` is not a non-negative decimal");
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty()
        || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit())
        || frac.len() > 18
    {
        return Err(bad());
    }
    let digits: i128 = format!("{int}{frac}").parse().map_err(|_| bad())?;
    Ok(Rational::new(digits, 10i128.pow(frac.len() as u32)))
}

fn alpha_model(alpha: Option<Rational>) -> AlphaModel {
    alpha.map(AlphaModel::constant).unwrap_or_default()
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn shape_for(kind: DataflowKind, k: usize, ifmap: usize) -> Result<ConvShape, Failure> {
    let shape = ConvShape::square(ifmap, k).map_err(usage)?;
    if kind == DataflowKind::Trim {
        shape.require_trim().map_err(usage)?;
    }
    Ok(shape)
}

fn operands(shape: &ConvShape, data: Data, seed: u64) -> (FeatureMap, Kernel) {
    match data {
        Data::Raster => (
            FeatureMap::raster(shape.ifmap_height(), shape.ifmap_width()),
            Kernel::raster(shape.kernel_size()),
        ),
        Data::Random => dse::random_operands(shape, seed),
    }
}

fn table_format(format: Format) -> Result<OutputFormat, Failure> {
    match format {
        Format::Csv => Ok(OutputFormat::Csv),
        Format::Json => Ok(OutputFormat::Json),
        Format::Text => Err(Failure::Usage("sweep output must be csv or json".into())),
    }
}

fn point_row(m: &model::MetricSet, simulated: bool) -> ReportRow {
    ReportRow {
        dataflow: m.dataflow,
        kernel_size: m.kernel_size(),
        ifmap_side: m.ifmap_side(),
        ofmap_height: m.shape.ofmap_height(),
        ofmap_width: m.shape.ofmap_width(),
        memory_accesses: m.memory_accesses,
        overhead: m.overhead,
        latency: m.latency,
        throughput: m.throughput,
        tpe: m.tpe,
        registers: m.registers,
        normalized_energy: m.normalized_energy,
        simulated,
    }
}

fn render_row(row: &ReportRow, format: Format) -> String {
    match format {
        Format::Text => dse::row_to_text(row),
        Format::Csv => dse::rows_to_csv(std::slice::from_ref(row)),
        Format::Json => dse::rows_to_json(std::slice::from_ref(row)),
    }
}

fn cmd_model(a: PointArgs) -> Outcome {
    let kind = a.dataflow.into();
    let shape = shape_for(kind, a.k, a.ifmap)?;
    let m =
        model::metric_set_for_shape(kind, &shape, &alpha_model(a.common.alpha)).map_err(usage)?;
    Ok((render_row(&point_row(&m, false), a.format), true))
}

fn cmd_sim(a: SimArgs) -> Outcome {
    let p = a.point;
    let kind = p.dataflow.into();
    let shape = shape_for(kind, p.k, p.ifmap)?;
    let m =
        model::metric_set_for_shape(kind, &shape, &alpha_model(p.common.alpha)).map_err(usage)?;
    let (ifmap, kernel) = operands(&shape, a.data, a.seed);
    let golden = golden_conv(&ifmap, &kernel, &shape).map_err(usage)?;
    let result =
        dse::simulate(kind, &ifmap, &kernel, &shape).map_err(|e| Failure::Check(e.to_string()))?;
    dse::check_identities(&result, &m, &golden).map_err(|e| Failure::Check(e.to_string()))?;
    let out = match p.format {
        Format::Text => format!("# {kind} {shape}\n{}", format_counters(&result.counters)),
        f => render_row(&point_row(&m, true), f),
    };
    Ok((out, true))
}

fn cmd_trace(a: TraceArgs) -> Outcome {
    let kind = a.dataflow.into();
    let shape = shape_for(kind, a.k, a.ifmap)?;
    let (ifmap, kernel) = operands(&shape, a.data, a.seed);
    let result = match kind {
        DataflowKind::Ws => trim_core::reference::ws_simulate(&ifmap, &kernel, &shape),
        DataflowKind::Rs => trim_core::reference::rs_simulate(&ifmap, &kernel, &shape),
        DataflowKind::Trim => trim_core::trim::run(&ifmap, &kernel, &shape),
    }
    .map_err(|e| Failure::Check(e.to_string()))?;
    let format = match a.format {
        Format::Text => "text",
        Format::Csv => "csv",
        Format::Json => return Err(Failure::Usage("trace output must be text or csv".into())),
    };
    Ok((emit_trace(&result, format).map_err(usage)?, true))
}

fn grid(k: Vec<usize>, ifmap: Vec<usize>) -> SweepSpec {
    let mut spec = SweepSpec::default();
    if !k.is_empty() {
        spec.kernel_sizes = k;
    }
    if !ifmap.is_empty() {
        spec.ifmap_sizes = ifmap;
    }
    spec
}

fn cmd_sweep(a: SweepArgs) -> Outcome {
    let mut spec = grid(a.k, a.ifmap);
    if !a.dataflow.is_empty() {
        spec.dataflows = a.dataflow.into_iter().map(Into::into).collect();
    }
    spec.alpha = alpha_model(a.common.alpha);
    spec.format = table_format(a.format)?;
    spec.simulate = !a.no_sim;
    spec.seed = a.seed;
    spec.validate().map_err(usage)?;
    if a.ratios {
        let rows = dse::compare(&spec).map_err(usage)?;
        let text = match spec.format {
            OutputFormat::Csv => dse::comparisons_to_csv(&rows),
            OutputFormat::Json => dse::comparisons_to_json(&rows),
        };
        return Ok((text, true));
    }
    match dse::sweep(&spec) {
        Ok(rows) => Ok((dse::render_rows(&rows, spec.format), true)),
        Err(e @ dse::DseError::Identity { .. }) | Err(e @ dse::DseError::Sim(_)) => {
            Err(Failure::Check(e.to_string()))
        }
        Err(e) => Err(usage(e)),
    }
}

fn cmd_verify(a: VerifyArgs) -> Outcome {
    let spec = grid(a.k, a.ifmap);
    let opts = VerifyOptions {
        variant: if a.inject_fault {
            ScheduleVariant::ExtBeforeReuse
        } else {
            ScheduleVariant::Faithful
        },
        random_cases: a.cases,
        seed: a.seed,
    };
    let report = dse::verify_with(&spec, &opts).map_err(usage)?;
    let text = match a.format {
        Format::Json => report.to_json(),
        Format::Text => report.to_text(),
        Format::Csv => return Err(Failure::Usage("verify output must be text or json".into())),
    };
    Ok((text, report.passed()))
}

fn write_output(text: &str, out: Option<PathBuf>) -> io::Result<()> {
    match out {
        Some(path) => fs::write(path, text),
        None => io::stdout().lock().write_all(text.as_bytes()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (outcome, out) = match cli.command {
        Command::Model(a) => {
            let out = a.common.out.clone();
            (cmd_model(a), out)
        }
        Command::Sim(a) => {
            let out = a.point.common.out.clone();
            (cmd_sim(a), out)
        }
        Command::Trace(a) => {
            let out = a.out.clone();
            (cmd_trace(a), out)
        }
        Command::Sweep(a) => {
            let out = a.common.out.clone();
            (cmd_sweep(a), out)
        }
        Command::Verify(a) => {
            let out = a.out.clone();
            (cmd_verify(a), out)
        }
    };
    match outcome {
        Ok((text, passed)) => {
            if let Err(e) = write_output(&text, out) {
                eprintln!("trimsim: cannot write output: {e}");
                return ExitCode::from(2);
            }
            if passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(Failure::Check(msg)) => {
            eprintln!("trimsim: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("trimsim: {msg}");
            eprintln!("usage: trimsim <model|sim|trace|sweep|verify> [OPTIONS]; see --help");
            ExitCode::from(2)
        }
    }
}
