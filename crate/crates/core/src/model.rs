//! Closed-form cost model for the WS, RS and TrIM dataflows.
//!
//! Everything is evaluated for one single-channel convolution. Counts are
//! integers; throughput, TPE, RS accesses and normalized energy are exact
//! rationals. Weight loads (`K^2`) are never folded into memory accesses.

use std::fmt;
use std::str::FromStr;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::conv::{ConvShape, ShapeError};

/// Exact rational used for every non-integer metric.
pub type Rational = Ratio<i128>;

/// Real-valued view of a rational metric.
pub fn to_f64(value: &Rational) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}

fn int(value: u64) -> Rational {
    Rational::from_integer(value as i128)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("no alpha anchor defined for ifmap size {0} and interpolation is disabled")]
    AlphaUndefined(usize),
    #[error("invalid alpha table: {0}")]
    AlphaTable(String),
    #[error("inversion point needs K >= 2, got K = {0}")]
    InversionDomain(usize),
}

/// The three dataflows under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum DataflowKind {
    #[serde(rename = "WS")]
    Ws,
    #[serde(rename = "RS")]
    Rs,
    #[serde(rename = "TrIM")]
    Trim,
}

impl DataflowKind {
    pub const ALL: [DataflowKind; 3] = [DataflowKind::Ws, DataflowKind::Rs, DataflowKind::Trim];

    pub fn name(&self) -> &'static str {
        match self {
            DataflowKind::Ws => "WS",
            DataflowKind::Rs => "RS",
            DataflowKind::Trim => "TrIM",
        }
    }
}

impl fmt::Display for DataflowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DataflowKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ws" => Ok(DataflowKind::Ws),
            "rs" => Ok(DataflowKind::Rs),
            "trim" => Ok(DataflowKind::Trim),
            other => Err(format!(
                "unknown dataflow `{other}` (expected ws, rs or trim)"
            )),
        }
    }
}

/// Scratch-pad energy factor of the RS array as a function of ifmap size.
///
/// Anchors are `(I, alpha)` pairs. Between anchors the factor is linear in
/// `log2(I)`; outside the anchor range it is held at the nearest endpoint.
/// Interpolation is exact when `I` and both neighbouring anchors are powers of
/// two, otherwise it is rounded to six decimals.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaModel {
    anchors: Vec<(usize, Rational)>,
    interpolate: bool,
}

impl Default for AlphaModel {
    fn default() -> Self {
        Self::standard()
    }
}

impl AlphaModel {
    /// Anchors `{16: 12.9, 64: 14.7, 256: 16.5}`.
    pub fn standard() -> Self {
        Self {
            anchors: vec![
                (16, Rational::new(129, 10)),
                (64, Rational::new(147, 10)),
                (256, Rational::new(165, 10)),
            ],
            interpolate: true,
        }
    }

    /// The same factor for every ifmap size.
    pub fn constant(alpha: Rational) -> Self {
        Self {
            anchors: vec![(1, alpha)],
            interpolate: true,
        }
    }

    pub fn from_anchors(
        mut anchors: Vec<(usize, Rational)>,
        interpolate: bool,
    ) -> Result<Self, ModelError> {
        if anchors.is_empty() {
            return Err(ModelError::AlphaTable(
                "at least one anchor is required".into(),
            ));
        }
        anchors.sort_by_key(|(i, _)| *i);
        for pair in anchors.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(ModelError::AlphaTable(format!(
                    "duplicate anchor at I = {}",
                    pair[0].0
                )));
            }
        }
        if let Some((i, a)) = anchors
            .iter()
            .find(|(i, a)| *i == 0 || *a < Rational::zero())
        {
            return Err(ModelError::AlphaTable(format!(
                "anchor ({i}, {a}) must have I > 0 and alpha >= 0"
            )));
        }
        Ok(Self {
            anchors,
            interpolate,
        })
    }

    pub fn anchors(&self) -> &[(usize, Rational)] {
        &self.anchors
    }

    pub fn interpolates(&self) -> bool {
        self.interpolate
    }

    /// Alpha at a square ifmap of side `ifmap_side`.
    pub fn alpha(&self, ifmap_side: usize) -> Result<Rational, ModelError> {
        if let Some((_, a)) = self.anchors.iter().find(|(i, _)| *i == ifmap_side) {
            return Ok(*a);
        }
        if !self.interpolate || ifmap_side == 0 {
            return Err(ModelError::AlphaUndefined(ifmap_side));
        }
        let (first, last) = (self.anchors[0], self.anchors[self.anchors.len() - 1]);
        if ifmap_side <= first.0 {
            return Ok(first.1);
        }
        if ifmap_side >= last.0 {
            return Ok(last.1);
        }
        let upper = self
            .anchors
            .iter()
            .position(|(i, _)| *i > ifmap_side)
            .expect("bracketed");
        let (lo, hi) = (self.anchors[upper - 1], self.anchors[upper]);
        let frac = log2_fraction(ifmap_side, lo.0, hi.0);
        Ok(lo.1 + (hi.1 - lo.1) * frac)
    }

    /// Alpha for a possibly non-square shape, evaluated at the geometric mean
    /// side `sqrt(H_I * W_I)`.
    pub fn alpha_for(&self, shape: &ConvShape) -> Result<Rational, ModelError> {
        if shape.ifmap_height() == shape.ifmap_width() {
            return self.alpha(shape.ifmap_width());
        }
        if !self.interpolate {
            return Err(ModelError::AlphaUndefined(shape.ifmap_width()));
        }
        let side = ((shape.inputs() as f64).sqrt()).round() as usize;
        self.alpha(side)
    }
}

/// `(log2 x - log2 lo) / (log2 hi - log2 lo)`, exact for powers of two.
fn log2_fraction(x: usize, lo: usize, hi: usize) -> Rational {
    let pow2 = |v: usize| v.is_power_of_two().then(|| v.trailing_zeros() as i128);
    if let (Some(x), Some(lo), Some(hi)) = (pow2(x), pow2(lo), pow2(hi)) {
        return Rational::new(x - lo, hi - lo);
    }
    let f = ((x as f64).log2() - (lo as f64).log2()) / ((hi as f64).log2() - (lo as f64).log2());
    Rational::new((f * 1e6).round() as i128, 1_000_000)
}

fn k_of(shape: &ConvShape) -> u64 {
    shape.kernel_size() as u64
}

/// WS memory accesses: every Conv-to-GeMM element is fetched, `K^2 * H_O * W_O`.
pub fn ma_ws(shape: &ConvShape) -> u64 {
    let k = k_of(shape);
    k * k * shape.outputs() as u64
}

/// RS memory-access equivalents, split into the main-memory component and
/// the alpha-weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RsAccesses {
    pub alpha: Rational,
    /// `H_I * W_I`
    pub main_memory: u64,
    /// `(1 + alpha) * H_I * W_I`
    pub total: Rational,
}

pub fn ma_rs(shape: &ConvShape, alpha: &AlphaModel) -> Result<RsAccesses, ModelError> {
    let a = alpha.alpha_for(shape)?;
    let main = shape.inputs() as u64;
    Ok(RsAccesses {
        alpha: a,
        main_memory: main,
        total: (Rational::from_integer(1) + a) * int(main),
    })
}

/// `2 * K^2 * H_O * W_O`
pub fn ops_total(shape: &ConvShape) -> u64 {
    2 * ma_ws(shape)
}

/// `K^2 + H_O * W_O - 1`
pub fn latency_ws(shape: &ConvShape) -> u64 {
    let k = k_of(shape);
    k * k + shape.outputs() as u64 - 1
}

/// `W_O * (2K - 1)`
pub fn latency_rs(shape: &ConvShape) -> u64 {
    shape.ofmap_width() as u64 * (2 * k_of(shape) - 1)
}

/// `K + H_O * W_O`, weight preload excluded.
pub fn latency_trim(shape: &ConvShape) -> u64 {
    k_of(shape) + shape.outputs() as u64
}

pub fn latency(kind: DataflowKind, shape: &ConvShape) -> u64 {
    match kind {
        DataflowKind::Ws => latency_ws(shape),
        DataflowKind::Rs => latency_rs(shape),
        DataflowKind::Trim => latency_trim(shape),
    }
}

/// Number of PEs: `K^2` for WS and TrIM, `K * H_O` for RS.
pub fn pe_count(kind: DataflowKind, shape: &ConvShape) -> u64 {
    let k = k_of(shape);
    match kind {
        DataflowKind::Ws | DataflowKind::Trim => k * k,
        DataflowKind::Rs => k * shape.ofmap_height() as u64,
    }
}

/// Operations per cycle, `OPs / L`.
pub fn throughput(kind: DataflowKind, shape: &ConvShape) -> Rational {
    Rational::new(ops_total(shape) as i128, latency(kind, shape) as i128)
}

/// Operations per cycle per PE.
pub fn tpe(kind: DataflowKind, shape: &ConvShape) -> Rational {
    throughput(kind, shape) / int(pe_count(kind, shape))
}

/// `3K^2 + K^2 (K^2 - 1) / 2`
pub fn reg_ws(shape: &ConvShape) -> u64 {
    let k2 = k_of(shape).pow(2);
    3 * k2 + k2 * (k2 - 1) / 2
}

/// `(2K + 1) * K * H_O`
pub fn reg_rs(shape: &ConvShape) -> u64 {
    let k = k_of(shape);
    (2 * k + 1) * k * shape.ofmap_height() as u64
}

/// `4K^2 + (K - 1)(W_I - K - 1) + 1`
pub fn reg_trim(shape: &ConvShape) -> Result<u64, ModelError> {
    shape.require_trim()?;
    let k = k_of(shape);
    let srb_depth = shape.ifmap_width() as u64 - k - 1;
    Ok(4 * k * k + (k - 1) * srb_depth + 1)
}

/// Inputs TrIM must fetch a second time.
///
/// `(W_I-K-1)(K-1)(H_I-K)` when `W_I < 2K`, else `(K-1)^2 (H_I-K)`.
pub fn ov_trim(shape: &ConvShape) -> Result<u64, ModelError> {
    shape.require_trim()?;
    let (h, w, k) = (
        shape.ifmap_height() as i128,
        shape.ifmap_width() as i128,
        shape.kernel_size() as i128,
    );
    let ov = if w < 2 * k {
        (w - k - 1) * (k - 1) * (h - k)
    } else {
        (k - 1) * (k - 1) * (h - k)
    };
    Ok(ov.max(0) as u64)
}

/// `H_I * W_I + OV` (input accesses only).
pub fn ma_trim(shape: &ConvShape) -> Result<u64, ModelError> {
    Ok(shape.inputs() as u64 + ov_trim(shape)?)
}

/// Smallest square ifmap side at which TrIM needs at least as many registers
/// as WS: `ceil((K^4 - K^2 - 4) / (2(K - 1)))`.
pub fn inversion_point(kernel_size: usize) -> Result<u64, ModelError> {
    if kernel_size < 2 {
        return Err(ModelError::InversionDomain(kernel_size));
    }
    let k = kernel_size as i128;
    let num = k.pow(4) - k * k - 4;
    let den = 2 * (k - 1);
    Ok(Integer::div_ceil(&num, &den) as u64)
}

/// Energy normalized to one read of the whole ifmap.
pub fn normalized_energy(
    kind: DataflowKind,
    shape: &ConvShape,
    alpha: &AlphaModel,
) -> Result<Rational, ModelError> {
    let inputs = shape.inputs() as i128;
    Ok(match kind {
        DataflowKind::Ws => Rational::new(ma_ws(shape) as i128, inputs),
        DataflowKind::Trim => Rational::new(ma_trim(shape)? as i128, inputs),
        DataflowKind::Rs => Rational::from_integer(1) + alpha.alpha_for(shape)?,
    })
}

/// Scratch-pad overhead of RS relative to TrIM's normalized accesses,
/// `alpha / (MA_TrIM / (H_I W_I))`.
pub fn rs_scratch_overhead_ratio(
    shape: &ConvShape,
    alpha: &AlphaModel,
) -> Result<Rational, ModelError> {
    let a = alpha.alpha_for(shape)?;
    Ok(a / normalized_energy(DataflowKind::Trim, shape, alpha)?)
}

/// All model outputs for one `(dataflow, shape)` point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricSet {
    pub dataflow: DataflowKind,
    pub shape: ConvShape,
    /// Memory accesses. Fractional only for RS.
    pub memory_accesses: Rational,
    /// Accesses to main memory (equal to MA except for RS).
    pub main_memory_reads: u64,
    /// TrIM re-fetch overhead, zero for the other dataflows.
    pub overhead: u64,
    pub weight_loads: u64,
    pub operations: u64,
    pub latency: u64,
    pub throughput: Rational,
    pub tpe: Rational,
    pub pe_count: u64,
    pub registers: u64,
    pub normalized_energy: Rational,
}

impl MetricSet {
    pub fn kernel_size(&self) -> usize {
        self.shape.kernel_size()
    }

    pub fn ifmap_side(&self) -> usize {
        self.shape.ifmap_width()
    }
}

/// Metrics for a square `I x I` ifmap.
pub fn metric_set(
    kind: DataflowKind,
    kernel_size: usize,
    ifmap_side: usize,
    alpha: &AlphaModel,
) -> Result<MetricSet, ModelError> {
    let shape = ConvShape::square(ifmap_side, kernel_size)?;
    metric_set_for_shape(kind, &shape, alpha)
}

pub fn metric_set_for_shape(
    kind: DataflowKind,
    shape: &ConvShape,
    alpha: &AlphaModel,
) -> Result<MetricSet, ModelError> {
    let (memory_accesses, main_memory_reads, overhead, registers) = match kind {
        DataflowKind::Ws => {
            let ma = ma_ws(shape);
            (int(ma), ma, 0, reg_ws(shape))
        }
        DataflowKind::Rs => {
            let rs = ma_rs(shape, alpha)?;
            (rs.total, rs.main_memory, 0, reg_rs(shape))
        }
        DataflowKind::Trim => {
            let ma = ma_trim(shape)?;
            (int(ma), ma, ov_trim(shape)?, reg_trim(shape)?)
        }
    };
    let k = k_of(shape);
    Ok(MetricSet {
        dataflow: kind,
        shape: *shape,
        memory_accesses,
        main_memory_reads,
        overhead,
        weight_loads: k * k,
        operations: ops_total(shape),
        latency: latency(kind, shape),
        throughput: throughput(kind, shape),
        tpe: tpe(kind, shape),
        pe_count: pe_count(kind, shape),
        registers,
        normalized_energy: normalized_energy(kind, shape, alpha)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq(i: usize, k: usize) -> ConvShape {
        ConvShape::square(i, k).unwrap()
    }

    fn r(n: i128, d: i128) -> Rational {
        Rational::new(n, d)
    }

    #[test]
    fn ws_accesses() {
        assert_eq!(ma_ws(&sq(16, 3)), 1764);
        assert_eq!(ma_ws(&sq(9, 1)), 81);
        assert_eq!(ma_ws(&sq(256, 7)), 3_062_500);
    }

    #[test]
    fn rs_accesses() {
        let rs = ma_rs(&sq(16, 3), &AlphaModel::standard()).unwrap();
        assert_eq!(rs.total, r(35584, 10));
        assert_eq!(rs.main_memory, 256);
        let zero = ma_rs(&sq(16, 3), &AlphaModel::constant(Rational::zero())).unwrap();
        assert_eq!(zero.total, Rational::from_integer(256));
        let big = ma_rs(&sq(256, 3), &AlphaModel::standard()).unwrap();
        assert_eq!(big.total, r(175, 10) * Rational::from_integer(65536));
    }

    #[test]
    fn alpha_table_and_interpolation() {
        let a = AlphaModel::standard();
        assert_eq!(a.alpha(16).unwrap(), r(129, 10));
        assert_eq!(a.alpha(64).unwrap(), r(147, 10));
        assert_eq!(a.alpha(256).unwrap(), r(165, 10));
        assert_eq!(a.alpha(32).unwrap(), r(138, 10));
        assert_eq!(a.alpha(128).unwrap(), r(156, 10));
        assert_eq!(a.alpha(5).unwrap(), r(129, 10));
        assert_eq!(a.alpha(1024).unwrap(), r(165, 10));
        let mid = a.alpha(100).unwrap();
        assert!(mid > r(147, 10) && mid < r(165, 10));
        for i in 1..600 {
            let v = a.alpha(i).unwrap();
            assert!(v >= r(129, 10) && v <= r(165, 10), "alpha({i}) = {v}");
        }
    }

    #[test]
    fn alpha_without_interpolation() {
        let a = AlphaModel::from_anchors(vec![(64, r(147, 10)), (16, r(129, 10))], false).unwrap();
        assert_eq!(a.alpha(16).unwrap(), r(129, 10));
        assert_eq!(a.alpha(32), Err(ModelError::AlphaUndefined(32)));
        assert!(matches!(
            ma_rs(&sq(32, 3), &a),
            Err(ModelError::AlphaUndefined(32))
        ));
        assert!(AlphaModel::from_anchors(vec![], true).is_err());
        assert!(AlphaModel::from_anchors(vec![(4, r(1, 1)), (4, r(2, 1))], true).is_err());
        assert!(AlphaModel::from_anchors(vec![(4, r(-1, 1))], true).is_err());
    }

    #[test]
    fn ops_and_latency() {
        assert_eq!(ops_total(&sq(5, 3)), 162);
        assert_eq!(ops_total(&sq(1, 1)), 2);
        assert_eq!(ops_total(&sq(16, 3)), 3528);
        assert_eq!(latency_ws(&sq(5, 3)), 17);
        assert_eq!(latency_ws(&sq(1, 1)), 1);
        assert_eq!(latency_ws(&sq(16, 3)), 204);
        assert_eq!(latency_rs(&sq(5, 3)), 15);
        assert_eq!(latency_rs(&sq(12, 1)), 12);
        assert_eq!(latency_rs(&sq(256, 7)), 3250);
        assert_eq!(latency_trim(&sq(5, 3)), 12);
        assert_eq!(latency_trim(&sq(1, 1)), 2);
        assert_eq!(latency_trim(&sq(16, 3)), 199);
    }

    #[test]
    fn throughput_per_pe() {
        for i in [4, 16, 77, 256] {
            assert_eq!(tpe(DataflowKind::Rs, &sq(i, 3)), r(6, 5));
        }
        assert_eq!(tpe(DataflowKind::Ws, &sq(16, 3)), r(392, 204));
        assert!((to_f64(&tpe(DataflowKind::Ws, &sq(16, 3))) - 1.9216).abs() < 1e-4);
        let t = tpe(DataflowKind::Trim, &sq(256, 3));
        assert!(t <= Rational::from_integer(2) && to_f64(&t) > 1.999);
        assert_eq!(tpe(DataflowKind::Trim, &sq(5, 3)), r(18, 12));
        let s = sq(16, 5);
        assert_eq!(
            throughput(DataflowKind::Trim, &s),
            r(ops_total(&s) as i128, latency_trim(&s) as i128)
        );
    }

    #[test]
    fn registers() {
        assert_eq!(reg_ws(&sq(5, 3)), 63);
        assert_eq!(reg_ws(&sq(5, 1)), 3);
        assert_eq!(reg_ws(&sq(9, 7)), 1323);
        assert_eq!(reg_rs(&sq(5, 3)), 63);
        assert_eq!(reg_rs(&sq(256, 3)), 5334);
        assert_eq!(reg_rs(&sq(256, 7)), 26250);
        assert_eq!(reg_trim(&sq(5, 3)).unwrap(), 39);
        assert_eq!(reg_trim(&sq(256, 3)).unwrap(), 541);
        assert_eq!(reg_trim(&sq(256, 7)).unwrap(), 1685);
    }

    #[test]
    fn trim_overhead() {
        assert_eq!(ov_trim(&sq(5, 3)).unwrap(), 4);
        assert_eq!(ov_trim(&sq(16, 3)).unwrap(), 52);
        assert_eq!(ov_trim(&ConvShape::new(3, 9, 3).unwrap()).unwrap(), 0);
        assert_eq!(ov_trim(&ConvShape::new(7, 4, 3).unwrap()).unwrap(), 0);
        assert!(matches!(
            ov_trim(&ConvShape::new(5, 3, 3).unwrap()),
            Err(ModelError::Shape(ShapeError::TooNarrowForTrim { .. }))
        ));
        assert_eq!(ma_trim(&sq(5, 3)).unwrap(), 29);
        assert_eq!(ma_trim(&sq(256, 3)).unwrap(), 66548);
        assert_eq!(ma_trim(&sq(256, 7)).unwrap(), 74500);
    }

    #[test]
    fn inversion_points() {
        assert_eq!(inversion_point(3).unwrap(), 17);
        assert_eq!(inversion_point(5).unwrap(), 75);
        assert_eq!(inversion_point(7).unwrap(), 196);
        assert_eq!(inversion_point(1), Err(ModelError::InversionDomain(1)));
        assert_eq!(inversion_point(0), Err(ModelError::InversionDomain(0)));
    }

    #[test]
    fn energy_first_and_last_rows() {
        let a = AlphaModel::standard();
        let one_decimal = |v: Rational| (to_f64(&v) * 10.0).round() / 10.0;
        let e = |kind, i, k| one_decimal(normalized_energy(kind, &sq(i, k), &a).unwrap());
        assert_eq!(e(DataflowKind::Ws, 16, 3), 6.9);
        assert_eq!(e(DataflowKind::Trim, 16, 3), 1.2);
        assert_eq!(e(DataflowKind::Rs, 16, 3), 13.9);
        assert_eq!(e(DataflowKind::Ws, 256, 7), 46.7);
        assert_eq!(e(DataflowKind::Trim, 256, 7), 1.1);
        let unit = sq(8, 1);
        assert_eq!(
            normalized_energy(DataflowKind::Ws, &unit, &a).unwrap(),
            Rational::from_integer(1)
        );
        assert_eq!(
            normalized_energy(DataflowKind::Trim, &unit, &a).unwrap(),
            Rational::from_integer(1)
        );
    }

    #[test]
    fn overhead_ratio_exposes_both_operands() {
        let s = sq(16, 3);
        let a = AlphaModel::standard();
        let ratio = rs_scratch_overhead_ratio(&s, &a).unwrap();
        assert_eq!(ratio, r(129, 10) / r(308, 256));
    }

    #[test]
    fn metric_sets() {
        let a = AlphaModel::standard();
        let m = metric_set(DataflowKind::Trim, 3, 5, &a).unwrap();
        assert_eq!(m.memory_accesses, Rational::from_integer(29));
        assert_eq!(
            (m.overhead, m.latency, m.registers, m.weight_loads),
            (4, 12, 39, 9)
        );
        let m = metric_set(DataflowKind::Ws, 3, 16, &a).unwrap();
        assert_eq!(m.memory_accesses, Rational::from_integer(1764));
        assert_eq!((m.latency, m.registers, m.overhead), (204, 63, 0));
        let m = metric_set(DataflowKind::Rs, 3, 16, &a).unwrap();
        assert_eq!(m.memory_accesses, r(35584, 10));
        assert_eq!(
            (m.latency, m.registers, m.main_memory_reads),
            (70, 294, 256)
        );
        for kind in DataflowKind::ALL {
            let m = metric_set(kind, 5, 32, &a).unwrap();
            assert_eq!(m.throughput, r(m.operations as i128, m.latency as i128));
            assert_eq!(
                m.tpe,
                m.throughput / Rational::from_integer(m.pe_count as i128)
            );
        }
    }

    #[test]
    fn dataflow_names_round_trip() {
        for kind in DataflowKind::ALL {
            assert_eq!(kind.name().parse::<DataflowKind>().unwrap(), kind);
        }
        assert!("os".parse::<DataflowKind>().is_err());
    }
}
