//! Deterministic rendering of sweep rows.
//!
//! Rational metrics are printed with one fixed rule:
//!
//! 1. integers print as integers;
//! 2. a terminating decimal with at most six significant digits prints
//!    exactly (`3558.4`, `13.9`);
//! 3. anything else is rounded half away from zero to six significant
//!    digits, or to the nearest integer when the integer part alone already
//!    has six or more digits. Trailing zeros are dropped and exponent
//!    notation is never used.
//!
//! CSV and JSON share the same rendered text for every numeric field, so a
//! value read back from either carries exactly the same decimal.

use std::fmt::Write as _;

use num_integer::Integer;
use num_traits::{Signed, Zero};
use serde_json::{Map, Number, Value};

use crate::model::{DataflowKind, Rational};

const SIGNIFICANT_DIGITS: u32 = 6;

pub const CSV_HEADER: [&str; 12] = [
    "dataflow",
    "K",
    "I",
    "H_O",
    "W_O",
    "MA",
    "OV",
    "latency",
    "throughput",
    "TPE",
    "registers",
    "norm_energy",
];

fn digits(mut n: i128) -> u32 {
    let mut d = 1;
    while n >= 10 {
        n /= 10;
        d += 1;
    }
    d
}

/// Fractional digits of the exact expansion, if it terminates.
fn terminating_scale(denom: i128) -> Option<u32> {
    let (mut d, mut twos, mut fives) = (denom, 0u32, 0u32);
    while d % 2 == 0 {
        d /= 2;
        twos += 1;
    }
    while d % 5 == 0 {
        d /= 5;
        fives += 1;
    }
    (d == 1).then_some(twos.max(fives))
}

fn place_point(mut scaled: i128, scale: u32, negative: bool) -> String {
    let mut scale = scale;
    while scale > 0 && scaled % 10 == 0 {
        scaled /= 10;
        scale -= 1;
    }
    let mut text = scaled.to_string();
    if scale > 0 {
        let scale = scale as usize;
        if text.len() <= scale {
            text = "0".repeat(scale - text.len() + 1) + &text;
        }
        text.insert(text.len() - scale, '.');
    }
    if negative && scaled != 0 {
        text.insert(0, '-');
    }
    text
}

/// Renders a rational using the module-level rule.
pub fn render_decimal(value: &Rational) -> String {
    if value.is_integer() {
        return value.numer().to_string();
    }
    let negative = value.is_negative();
    let abs = value.abs();
    let (num, den) = (*abs.numer(), *abs.denom());

    if let Some(scale) = terminating_scale(den) {
        let scaled = num * 10i128.pow(scale) / den;
        if digits(scaled) <= SIGNIFICANT_DIGITS {
            return place_point(scaled, scale, negative);
        }
    }

    // decimal exponent of the leading digit
    let int_part = num / den;
    let exponent: i32 = if !int_part.is_zero() {
        digits(int_part) as i32 - 1
    } else {
        let mut e = -1;
        let mut probe = num * 10;
        while probe < den {
            probe *= 10;
            e -= 1;
        }
        e
    };
    let scale = (SIGNIFICANT_DIGITS as i32 - 1 - exponent).max(0) as u32;
    let (q, r) = (num * 10i128.pow(scale)).div_rem(&den);
    let rounded = if 2 * r >= den { q + 1 } else { q };
    place_point(rounded, scale, negative)
}

/// One output row: a `(dataflow, K, I)` point of the sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportRow {
    pub dataflow: DataflowKind,
    pub kernel_size: usize,
    pub ifmap_side: usize,
    pub ofmap_height: usize,
    pub ofmap_width: usize,
    pub memory_accesses: Rational,
    pub overhead: u64,
    pub latency: u64,
    pub throughput: Rational,
    pub tpe: Rational,
    pub registers: u64,
    pub normalized_energy: Rational,
    /// Whether the point's counters were confirmed by simulation.
    pub simulated: bool,
}

impl ReportRow {
    /// Field texts in [`CSV_HEADER`] order.
    pub fn fields(&self) -> [String; 12] {
        [
            self.dataflow.to_string(),
            self.kernel_size.to_string(),
            self.ifmap_side.to_string(),
            self.ofmap_height.to_string(),
            self.ofmap_width.to_string(),
            render_decimal(&self.memory_accesses),
            self.overhead.to_string(),
            self.latency.to_string(),
            render_decimal(&self.throughput),
            render_decimal(&self.tpe),
            self.registers.to_string(),
            render_decimal(&self.normalized_energy),
        ]
    }
}

/// Per-`(K, I)` comparison ratios, all formula-derived.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointComparison {
    pub kernel_size: usize,
    pub ifmap_side: usize,
    pub ma_ws_over_trim: Rational,
    pub ma_trim_over_rs_main: Rational,
    pub reg_rs_over_trim: Rational,
    pub reg_trim_over_ws: Rational,
    /// `TPE_TrIM / TPE_WS - 1`
    pub tpe_gain_over_ws: Rational,
    /// `TPE_TrIM / TPE_RS - 1`
    pub tpe_gain_over_rs: Rational,
    /// `alpha / (MA_TrIM / I^2)`
    pub rs_scratch_overhead: Rational,
}

pub const COMPARISON_HEADER: [&str; 9] = [
    "K",
    "I",
    "MA_WS/MA_TrIM",
    "MA_TrIM/MA_RS_main",
    "Reg_RS/Reg_TrIM",
    "Reg_TrIM/Reg_WS",
    "TPE_TrIM/TPE_WS-1",
    "TPE_TrIM/TPE_RS-1",
    "alpha/(MA_TrIM/I^2)",
];

impl PointComparison {
    pub fn fields(&self) -> [String; 9] {
        [
            self.kernel_size.to_string(),
            self.ifmap_side.to_string(),
            render_decimal(&self.ma_ws_over_trim),
            render_decimal(&self.ma_trim_over_rs_main),
            render_decimal(&self.reg_rs_over_trim),
            render_decimal(&self.reg_trim_over_ws),
            render_decimal(&self.tpe_gain_over_ws),
            render_decimal(&self.tpe_gain_over_rs),
            render_decimal(&self.rs_scratch_overhead),
        ]
    }
}

fn csv_table<const N: usize>(
    header: &[&str; N],
    rows: impl Iterator<Item = [String; N]>,
) -> String {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer.write_record(header).expect("in-memory write");
    for row in rows {
        writer.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("flush")).expect("utf-8")
}

/// Text-valued columns; everything else is emitted as a JSON number.
fn is_text_column(name: &str) -> bool {
    name == "dataflow"
}

fn json_table<const N: usize>(
    header: &[&str; N],
    rows: impl Iterator<Item = [String; N]>,
) -> String {
    let array: Vec<Value> = rows
        .map(|fields| {
            let mut obj = Map::new();
            for (name, text) in header.iter().zip(fields) {
                let value = if is_text_column(name) {
                    Value::String(text)
                } else {
                    Value::Number(
                        text.parse::<Number>()
                            .expect("rendered decimals are valid JSON numbers"),
                    )
                };
                obj.insert((*name).to_string(), value);
            }
            Value::Object(obj)
        })
        .collect();
    let mut out = serde_json::to_string_pretty(&Value::Array(array)).expect("serializable");
    out.push('\n');
    out
}

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    csv_table(&CSV_HEADER, rows.iter().map(ReportRow::fields))
}

pub fn rows_to_json(rows: &[ReportRow]) -> String {
    json_table(&CSV_HEADER, rows.iter().map(ReportRow::fields))
}

pub fn comparisons_to_csv(rows: &[PointComparison]) -> String {
    csv_table(&COMPARISON_HEADER, rows.iter().map(PointComparison::fields))
}

pub fn comparisons_to_json(rows: &[PointComparison]) -> String {
    json_table(&COMPARISON_HEADER, rows.iter().map(PointComparison::fields))
}

/// Human-readable `key: value` listing of one row.
pub fn row_to_text(row: &ReportRow) -> String {
    let mut out = String::new();
    for (name, value) in CSV_HEADER.iter().zip(row.fields()) {
        writeln!(out, "{name}: {value}").unwrap();
    }
    out
}
