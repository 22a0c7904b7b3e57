//! Design-space exploration: grid sweeps over `(dataflow, K, I)`, simulator
//! vs. formula identity checks and the full verification suite.

mod format;
mod verify;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::conv::{golden_conv, ConvShape, FeatureMap, Kernel, ShapeError};
use crate::model::{self, AlphaModel, DataflowKind, MetricSet, ModelError, Rational};
use crate::reference::{rs_simulate_with, ws_simulate_with};
use crate::sim::{SimError, SimResult};
use crate::trim::{self, RunOptions, ScheduleVariant};

pub use format::{
    comparisons_to_csv, comparisons_to_json, render_decimal, row_to_text, rows_to_csv,
    rows_to_json, PointComparison, ReportRow, COMPARISON_HEADER, CSV_HEADER,
};
pub use verify::{verify, verify_with, Check, VerifyOptions, VerifyReport};

/// Largest ifmap side simulated during a sweep.
pub const SIMULATION_LIMIT: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DseError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid sweep: {0}")]
    Spec(String),
    #[error("{dataflow} K={k} I={i}: {what} simulated {simulated} but formula gives {formula}")]
    Identity {
        dataflow: DataflowKind,
        k: usize,
        i: usize,
        what: &'static str,
        simulated: String,
        formula: String,
    },
}

impl From<ShapeError> for DseError {
    fn from(e: ShapeError) -> Self {
        DseError::Model(ModelError::Shape(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub kernel_sizes: Vec<usize>,
    pub ifmap_sizes: Vec<usize>,
    pub dataflows: Vec<DataflowKind>,
    pub alpha: AlphaModel,
    pub format: OutputFormat,
    /// Run the simulators and enforce counter == formula at every point up
    /// to [`SIMULATION_LIMIT`].
    pub simulate: bool,
    /// Seed for the randomized ifmaps and kernels fed to the simulators.
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            kernel_sizes: vec![3, 5, 7],
            ifmap_sizes: vec![16, 32, 64, 128, 256],
            dataflows: DataflowKind::ALL.to_vec(),
            alpha: AlphaModel::standard(),
            format: OutputFormat::Csv,
            simulate: true,
            seed: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), DseError> {
        if self.kernel_sizes.is_empty() || self.ifmap_sizes.is_empty() || self.dataflows.is_empty()
        {
            return Err(DseError::Spec(
                "K, I and dataflow lists must be non-empty".into(),
            ));
        }
        for (k, i) in self.points() {
            let shape = ConvShape::square(i, k)?;
            if self.dataflows.contains(&DataflowKind::Trim) {
                shape.require_trim()?;
            }
        }
        Ok(())
    }

    /// `(K, I)` pairs in emission order.
    pub fn points(&self) -> Vec<(usize, usize)> {
        let mut ks = self.kernel_sizes.clone();
        let mut is = self.ifmap_sizes.clone();
        ks.sort_unstable();
        ks.dedup();
        is.sort_unstable();
        is.dedup();
        ks.iter()
            .flat_map(|&k| is.iter().map(move |&i| (k, i)))
            .collect()
    }

    fn dataflows_sorted(&self) -> Vec<DataflowKind> {
        let mut d = self.dataflows.clone();
        d.sort();
        d.dedup();
        d
    }
}

/// Deterministic pseudo-random operands for one `(K, I)` point.
pub fn random_operands(shape: &ConvShape, seed: u64) -> (FeatureMap, Kernel) {
    let mix = seed
        ^ ((shape.kernel_size() as u64) << 48)
        ^ ((shape.ifmap_height() as u64) << 24)
        ^ shape.ifmap_width() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(mix);
    let ifmap = FeatureMap::from_fn(shape.ifmap_height(), shape.ifmap_width(), |_, _| {
        rng.gen_range(-8..=8)
    });
    let kernel = Kernel::from_fn(shape.kernel_size(), |_, _| rng.gen_range(-8..=8));
    (ifmap, kernel)
}

/// Runs the simulator for `kind` without tracing.
pub fn simulate(
    kind: DataflowKind,
    ifmap: &FeatureMap,
    kernel: &Kernel,
    shape: &ConvShape,
) -> Result<SimResult, SimError> {
    simulate_variant(kind, ifmap, kernel, shape, ScheduleVariant::Faithful)
}

pub(crate) fn simulate_variant(
    kind: DataflowKind,
    ifmap: &FeatureMap,
    kernel: &Kernel,
    shape: &ConvShape,
    variant: ScheduleVariant,
) -> Result<SimResult, SimError> {
    match kind {
        DataflowKind::Ws => ws_simulate_with(ifmap, kernel, shape, false),
        DataflowKind::Rs => rs_simulate_with(ifmap, kernel, shape, false),
        DataflowKind::Trim => trim::run_with(
            ifmap,
            kernel,
            shape,
            RunOptions {
                trace: false,
                variant,
            },
        ),
    }
}

/// Compares a simulation against the closed-form metrics of the same point,
/// returning the first mismatching identity.
pub fn check_identities(
    result: &SimResult,
    metrics: &MetricSet,
    golden: &FeatureMap,
) -> Result<(), DseError> {
    let shape = result.shape;
    let mismatch = |what, simulated: String, formula: String| DseError::Identity {
        dataflow: result.dataflow,
        k: shape.kernel_size(),
        i: shape.ifmap_width(),
        what,
        simulated,
        formula,
    };
    if &result.ofmap != golden {
        return Err(mismatch(
            "ofmap",
            "a different ofmap".into(),
            "golden_conv".into(),
        ));
    }
    let c = &result.counters;
    let expect = |what, simulated: u64, formula: u64| {
        if simulated == formula {
            Ok(())
        } else {
            Err(mismatch(what, simulated.to_string(), formula.to_string()))
        }
    };
    expect("compute cycles", c.compute_cycles, metrics.latency)?;
    expect("registers", c.register_count, metrics.registers)?;
    expect(
        "main-memory input fetches",
        c.ext_fetches,
        metrics.main_memory_reads,
    )?;
    expect("weight loads", c.weight_loads, metrics.weight_loads)?;
    if result.dataflow == DataflowKind::Trim {
        expect("repeat fetches", c.refetched_inputs, metrics.overhead)?;
    }
    Ok(())
}

fn evaluate_point(
    spec: &SweepSpec,
    kind: DataflowKind,
    k: usize,
    i: usize,
) -> Result<ReportRow, DseError> {
    let shape = ConvShape::square(i, k)?;
    let m = model::metric_set_for_shape(kind, &shape, &spec.alpha)?;
    let simulated = spec.simulate && i <= SIMULATION_LIMIT;
    if simulated {
        let (ifmap, kernel) = random_operands(&shape, spec.seed);
        let golden = golden_conv(&ifmap, &kernel, &shape)?;
        let result = simulate(kind, &ifmap, &kernel, &shape)?;
        check_identities(&result, &m, &golden)?;
    }
    Ok(ReportRow {
        dataflow: kind,
        kernel_size: k,
        ifmap_side: i,
        ofmap_height: shape.ofmap_height(),
        ofmap_width: shape.ofmap_width(),
        memory_accesses: m.memory_accesses,
        overhead: m.overhead,
        latency: m.latency,
        throughput: m.throughput,
        tpe: m.tpe,
        registers: m.registers,
        normalized_energy: m.normalized_energy,
        simulated,
    })
}

/// Evaluates every grid point, sorted by `(K, I, dataflow)`.
///
/// Points run in parallel. With simulation enabled, a point whose counters
/// disagree with the model aborts the sweep with [`DseError::Identity`].
pub fn sweep(spec: &SweepSpec) -> Result<Vec<ReportRow>, DseError> {
    spec.validate()?;
    let dataflows = spec.dataflows_sorted();
    let jobs: Vec<(usize, usize, DataflowKind)> = spec
        .points()
        .into_iter()
        .flat_map(|(k, i)| dataflows.iter().map(move |&d| (k, i, d)))
        .collect();
    let mut rows = jobs
        .par_iter()
        .map(|&(k, i, kind)| evaluate_point(spec, kind, k, i))
        .collect::<Result<Vec<_>, _>>()?;
    rows.sort_by_key(|r| (r.kernel_size, r.ifmap_side, r.dataflow));
    Ok(rows)
}

pub fn render_rows(rows: &[ReportRow], format: OutputFormat) -> String {
    match format {
        OutputFormat::Csv => rows_to_csv(rows),
        OutputFormat::Json => rows_to_json(rows),
    }
}

/// Formula-derived ratios between the three dataflows at one point.
pub fn compare_point(k: usize, i: usize, alpha: &AlphaModel) -> Result<PointComparison, DseError> {
    let shape = ConvShape::square(i, k)?;
    let int = |v: u64| Rational::from_integer(v as i128);
    let one = Rational::from_integer(1);
    let ma_trim = int(model::ma_trim(&shape)?);
    let reg_trim = int(model::reg_trim(&shape)?);
    let tpe_trim = model::tpe(DataflowKind::Trim, &shape);
    Ok(PointComparison {
        kernel_size: k,
        ifmap_side: i,
        ma_ws_over_trim: int(model::ma_ws(&shape)) / ma_trim,
        ma_trim_over_rs_main: ma_trim / int(model::ma_rs(&shape, alpha)?.main_memory),
        reg_rs_over_trim: int(model::reg_rs(&shape)) / reg_trim,
        reg_trim_over_ws: reg_trim / int(model::reg_ws(&shape)),
        tpe_gain_over_ws: tpe_trim / model::tpe(DataflowKind::Ws, &shape) - one,
        tpe_gain_over_rs: tpe_trim / model::tpe(DataflowKind::Rs, &shape) - one,
        rs_scratch_overhead: model::rs_scratch_overhead_ratio(&shape, alpha)?,
    })
}

pub fn compare(spec: &SweepSpec) -> Result<Vec<PointComparison>, DseError> {
    spec.points()
        .into_iter()
        .map(|(k, i)| compare_point(k, i, &spec.alpha))
        .collect()
}
