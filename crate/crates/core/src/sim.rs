//! Result types shared by the TrIM, WS and RS simulators, plus the
//! line-oriented trace renderer.

use std::fmt::{self, Write as _};

use serde::Serialize;
use thiserror::Error;

use crate::conv::{ConvShape, FeatureMap, ShapeError};
use crate::model::DataflowKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("schedule index out of range: t={t} PE({row},{col})")]
    OutOfRange { t: usize, row: usize, col: usize },
    #[error("t={t} PE({row},{col}) selects {selected} but has no such neighbour")]
    InvalidSource {
        t: usize,
        row: usize,
        col: usize,
        selected: &'static str,
    },
    #[error("t={t} PE({row},{col}) received operand {got:?}, expected ifmap{expected:?}")]
    OperandMismatch {
        t: usize,
        row: usize,
        col: usize,
        expected: (usize, usize),
        got: Option<(usize, usize)>,
    },
    #[error("output {index} was never produced")]
    MissingOutput { index: usize },
    #[error("arithmetic overflow at t={t} PE({row},{col})")]
    Overflow { t: usize, row: usize, col: usize },
    #[error("unsupported trace format `{0}` (expected text or csv)")]
    UnsupportedFormat(String),
}

/// Where a PE's operand came from in a given cycle, as printed in traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum TraceSource {
    /// External fetch from main memory.
    Ext,
    /// Right-to-left reuse.
    R,
    /// Diagonal reuse from an SRB or a lower PE.
    D,
    Idle,
    /// Delayed through an input FIFO (WS).
    Fifo,
    /// Read from a PE-local scratch pad (RS).
    Spad,
    /// Vertical psum accumulation only, no multiplication (RS).
    Acc,
}

impl TraceSource {
    pub fn label(&self) -> &'static str {
        match self {
            TraceSource::Ext => "Ext",
            TraceSource::R => "R",
            TraceSource::D => "D",
            TraceSource::Idle => "Idle",
            TraceSource::Fifo => "FIFO",
            TraceSource::Spad => "SPAD",
            TraceSource::Acc => "ACC",
        }
    }
}

impl fmt::Display for TraceSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A value moving through the array, tagged with the ifmap coordinate it was
/// fetched from. Untagged operands are empty or uninitialized registers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Operand {
    pub value: i64,
    pub origin: Option<(usize, usize)>,
}

impl Operand {
    pub const EMPTY: Operand = Operand {
        value: 0,
        origin: None,
    };

    pub fn fetched(ifmap: &FeatureMap, row: usize, col: usize) -> Self {
        Operand {
            value: ifmap.get(row, col),
            origin: Some((row, col)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PeRecord {
    pub row: usize,
    pub col: usize,
    pub source: TraceSource,
    /// `None` for idle PEs.
    pub input: Option<Operand>,
    pub weight: i64,
    pub psum_in: i64,
    pub psum_out: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BufferRecord {
    /// Array row the buffer is attached to.
    pub row: usize,
    /// Newest entry first.
    pub contents: Vec<Operand>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutputRecord {
    pub row: usize,
    pub col: usize,
    pub value: i64,
}

/// Everything observable in one compute cycle.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct CycleRecord {
    pub t: usize,
    pub pes: Vec<PeRecord>,
    pub buffers: Vec<BufferRecord>,
    pub outputs: Vec<OutputRecord>,
}

impl CycleRecord {
    pub fn new(t: usize) -> Self {
        Self {
            t,
            ..Default::default()
        }
    }

    pub fn pe(&self, row: usize, col: usize) -> Option<&PeRecord> {
        self.pes.iter().find(|p| p.row == row && p.col == col)
    }

    pub fn buffer(&self, row: usize) -> Option<&BufferRecord> {
        self.buffers.iter().find(|b| b.row == row)
    }
}

/// Hardware counters collected during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Counters {
    /// Input fetches from main memory.
    pub ext_fetches: u64,
    pub weight_loads: u64,
    pub compute_cycles: u64,
    pub preload_cycles: u64,
    pub register_count: u64,
    /// PE-local scratch-pad reads (RS only).
    pub scratch_reads: u64,
    /// Fetches of elements that had already been fetched before.
    pub refetched_inputs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimResult {
    pub dataflow: DataflowKind,
    pub shape: ConvShape,
    pub ofmap: FeatureMap,
    pub counters: Counters,
    /// Per-cycle records, present only when tracing was requested.
    pub trace: Option<Vec<CycleRecord>>,
    fetch_counts: Vec<u32>,
    use_counts: Vec<u32>,
}

impl SimResult {
    pub(crate) fn new(
        dataflow: DataflowKind,
        shape: ConvShape,
        ofmap: FeatureMap,
        counters: Counters,
        trace: Option<Vec<CycleRecord>>,
        fetch_counts: Vec<u32>,
        use_counts: Vec<u32>,
    ) -> Self {
        Self {
            dataflow,
            shape,
            ofmap,
            counters,
            trace,
            fetch_counts,
            use_counts,
        }
    }

    /// How many times ifmap element `(row, col)` was read from main memory.
    pub fn fetches_of(&self, row: usize, col: usize) -> u32 {
        self.fetch_counts[row * self.shape.ifmap_width() + col]
    }

    /// How many PE-cycles consumed ifmap element `(row, col)` as a MAC operand.
    pub fn uses_of(&self, row: usize, col: usize) -> u32 {
        self.use_counts[row * self.shape.ifmap_width() + col]
    }

    pub fn fetch_counts(&self) -> &[u32] {
        &self.fetch_counts
    }

    pub fn cycle(&self, t: usize) -> Option<&CycleRecord> {
        self.trace.as_ref()?.get(t)
    }
}

/// Tracks per-element fetch and use counts for an ifmap.
#[derive(Debug, Clone)]
pub(crate) struct Tally {
    width: usize,
    pub fetches: Vec<u32>,
    pub uses: Vec<u32>,
}

impl Tally {
    pub fn new(shape: &ConvShape) -> Self {
        Self {
            width: shape.ifmap_width(),
            fetches: vec![0; shape.inputs()],
            uses: vec![0; shape.inputs()],
        }
    }

    pub fn fetch(&mut self, (row, col): (usize, usize)) {
        self.fetches[row * self.width + col] += 1;
    }

    pub fn use_operand(&mut self, (row, col): (usize, usize)) {
        self.uses[row * self.width + col] += 1;
    }

    pub fn total_fetches(&self) -> u64 {
        self.fetches.iter().map(|&n| n as u64).sum()
    }

    pub fn refetched(&self) -> u64 {
        self.fetches
            .iter()
            .map(|&n| n.saturating_sub(1) as u64)
            .sum()
    }
}

pub(crate) fn mac(
    psum_in: i64,
    weight: i64,
    input: i64,
    t: usize,
    row: usize,
    col: usize,
) -> Result<i64, SimError> {
    weight
        .checked_mul(input)
        .and_then(|p| p.checked_add(psum_in))
        .ok_or(SimError::Overflow { t, row, col })
}

fn operand_text(op: &Option<Operand>) -> String {
    match op {
        Some(Operand {
            value,
            origin: Some(_),
        }) => value.to_string(),
        _ => "x".to_string(),
    }
}

/// Renders a run as text.
///
/// `text` prints one line per PE per cycle
/// (`t=<n> PE(i,j) src=<..> in=<v> w=<v> psum_in=<v> psum_out=<v>`), buffer
/// contents as `t=<n> SRB(i)=[..]`, adder-tree outputs as
/// `t=<n> OUT[r][c]=<v>`, and each cycle is preceded by a `# cycle <t+1>`
/// comment carrying the 1-based cycle number. `csv` prints the PE lines only
/// as a table. The counters block is always appended; when the run was not
/// traced only the counters are emitted.
pub fn emit_trace(result: &SimResult, format: &str) -> Result<String, SimError> {
    let mut out = String::new();
    match format {
        "text" => {
            writeln!(out, "# {} {} trace", result.dataflow, result.shape).unwrap();
            for cycle in result.trace.iter().flatten() {
                let t = cycle.t;
                writeln!(out, "# cycle {}", t + 1).unwrap();
                for pe in &cycle.pes {
                    writeln!(
                        out,
                        "t={t} PE({},{}) src={} in={} w={} psum_in={} psum_out={}",
                        pe.row,
                        pe.col,
                        pe.source,
                        operand_text(&pe.input),
                        pe.weight,
                        pe.psum_in,
                        pe.psum_out
                    )
                    .unwrap();
                }
                for buf in &cycle.buffers {
                    let items: Vec<String> = buf
                        .contents
                        .iter()
                        .map(|o| operand_text(&Some(*o)))
                        .collect();
                    writeln!(out, "t={t} SRB({})=[{}]", buf.row, items.join(",")).unwrap();
                }
                for o in &cycle.outputs {
                    writeln!(out, "t={t} OUT[{}][{}]={}", o.row, o.col, o.value).unwrap();
                }
            }
        }
        "csv" => {
            writeln!(out, "t,cycle,row,col,src,in,w,psum_in,psum_out").unwrap();
            for cycle in result.trace.iter().flatten() {
                for pe in &cycle.pes {
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{}",
                        cycle.t,
                        cycle.t + 1,
                        pe.row,
                        pe.col,
                        pe.source,
                        operand_text(&pe.input),
                        pe.weight,
                        pe.psum_in,
                        pe.psum_out
                    )
                    .unwrap();
                }
            }
            return Ok(out);
        }
        other => return Err(SimError::UnsupportedFormat(other.to_string())),
    }
    write_counters(&mut out, &result.counters);
    Ok(out)
}

pub(crate) fn write_counters(out: &mut String, c: &Counters) {
    writeln!(out, "# counters").unwrap();
    writeln!(out, "ext_fetches={}", c.ext_fetches).unwrap();
    writeln!(out, "weight_loads={}", c.weight_loads).unwrap();
    writeln!(out, "compute_cycles={}", c.compute_cycles).unwrap();
    writeln!(out, "preload_cycles={}", c.preload_cycles).unwrap();
    writeln!(out, "register_count={}", c.register_count).unwrap();
    writeln!(out, "scratch_reads={}", c.scratch_reads).unwrap();
    writeln!(out, "refetched_inputs={}", c.refetched_inputs).unwrap();
}

/// Counters only, in the same `key=value` layout as the trace footer.
pub fn format_counters(c: &Counters) -> String {
    let mut out = String::new();
    write_counters(&mut out, c);
    out
}
