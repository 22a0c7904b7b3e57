//! Convolution semantics shared by every simulator.
//!
//! Single channel, single filter, stride 1, no padding and no bias. The
//! golden convolution here is what all three dataflow simulators are checked
//! against, and the Conv-to-GeMM lowering is what the WS array consumes.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// Errors raised when tensor dimensions are inconsistent.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("kernel size must be at least 1")]
    ZeroKernel,
    #[error("ifmap {h_i}x{w_i} is smaller than the {k}x{k} kernel")]
    KernelTooLarge { h_i: usize, w_i: usize, k: usize },
    #[error("TrIM needs W_I >= K + 1, got W_I = {w_i} with K = {k}")]
    TooNarrowForTrim { w_i: usize, k: usize },
    #[error("feature map is {rows}x{cols} but {len} elements were supplied")]
    ElementCount {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("expected {expected_rows}x{expected_cols} {what}, got {rows}x{cols}")]
    Mismatch {
        what: &'static str,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("GeMM operands are malformed: {0}")]
    Gemm(&'static str),
    #[error("arithmetic overflow while accumulating")]
    Overflow,
}

/// Problem geometry for one single-channel convolution with stride 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct ConvShape {
    ifmap_height: usize,
    ifmap_width: usize,
    kernel_size: usize,
}

impl ConvShape {
    /// Accepts any `K >= 1` with `H_I >= K` and `W_I >= K`. TrIM-facing code
    /// additionally calls [`ConvShape::require_trim`].
    pub fn new(
        ifmap_height: usize,
        ifmap_width: usize,
        kernel_size: usize,
    ) -> Result<Self, ShapeError> {
        if kernel_size == 0 {
            return Err(ShapeError::ZeroKernel);
        }
        if ifmap_height < kernel_size || ifmap_width < kernel_size {
            return Err(ShapeError::KernelTooLarge {
                h_i: ifmap_height,
                w_i: ifmap_width,
                k: kernel_size,
            });
        }
        Ok(Self {
            ifmap_height,
            ifmap_width,
            kernel_size,
        })
    }

    /// Square `I x I` ifmap.
    pub fn square(ifmap_side: usize, kernel_size: usize) -> Result<Self, ShapeError> {
        Self::new(ifmap_side, ifmap_side, kernel_size)
    }

    /// Rejects shapes the TrIM array cannot process (`W_I = K`).
    pub fn require_trim(&self) -> Result<(), ShapeError> {
        if self.ifmap_width <= self.kernel_size {
            return Err(ShapeError::TooNarrowForTrim {
                w_i: self.ifmap_width,
                k: self.kernel_size,
            });
        }
        Ok(())
    }

    pub fn ifmap_height(&self) -> usize {
        self.ifmap_height
    }

    pub fn ifmap_width(&self) -> usize {
        self.ifmap_width
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn ofmap_height(&self) -> usize {
        self.ifmap_height - self.kernel_size + 1
    }

    pub fn ofmap_width(&self) -> usize {
        self.ifmap_width - self.kernel_size + 1
    }

    /// `H_O * W_O`.
    pub fn outputs(&self) -> usize {
        self.ofmap_height() * self.ofmap_width()
    }

    /// `H_I * W_I`.
    pub fn inputs(&self) -> usize {
        self.ifmap_height * self.ifmap_width
    }
}

impl fmt::Display for ConvShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{} ifmap, K={}",
            self.ifmap_height, self.ifmap_width, self.kernel_size
        )
    }
}

/// Row-major 2-D grid of signed integer activations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeatureMap {
    rows: usize,
    cols: usize,
    data: Vec<i64>,
}

impl FeatureMap {
    pub fn new(rows: usize, cols: usize, data: Vec<i64>) -> Result<Self, ShapeError> {
        if data.len() != rows * cols {
            return Err(ShapeError::ElementCount {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> i64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// `1, 2, ..., rows*cols` in raster order, the labelling used in the worked
    /// 5x5 example.
    pub fn raster(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |r, c| (r * cols + c + 1) as i64)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> i64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: i64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn as_slice(&self) -> &[i64] {
        &self.data
    }

    /// Element-wise sum. Panics if the dimensions differ.
    pub fn add(&self, other: &FeatureMap) -> FeatureMap {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        FeatureMap {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    fn expect_dims(&self, what: &'static str, rows: usize, cols: usize) -> Result<(), ShapeError> {
        if self.rows != rows || self.cols != cols {
            return Err(ShapeError::Mismatch {
                what,
                expected_rows: rows,
                expected_cols: cols,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(())
    }
}

impl fmt::Display for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|c| self.get(r, c).to_string()).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// Square `K x K` weight kernel, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Kernel {
    size: usize,
    weights: Vec<i64>,
}

impl Kernel {
    pub fn new(size: usize, weights: Vec<i64>) -> Result<Self, ShapeError> {
        if size == 0 {
            return Err(ShapeError::ZeroKernel);
        }
        if weights.len() != size * size {
            return Err(ShapeError::ElementCount {
                rows: size,
                cols: size,
                len: weights.len(),
            });
        }
        Ok(Self { size, weights })
    }

    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> i64) -> Self {
        let fm = FeatureMap::from_fn(size, size, &mut f);
        Self {
            size,
            weights: fm.data,
        }
    }

    pub fn ones(size: usize) -> Self {
        Self::from_fn(size, |_, _| 1)
    }

    /// `1, 2, ..., K*K` row-major (the `A..I` labelling of the 3x3 example).
    pub fn raster(size: usize) -> Self {
        Self::from_fn(size, |r, c| (r * size + c + 1) as i64)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, row: usize, col: usize) -> i64 {
        self.weights[row * self.size + col]
    }

    /// Row `row` of the kernel.
    pub fn row(&self, row: usize) -> &[i64] {
        &self.weights[row * self.size..(row + 1) * self.size]
    }

    pub fn as_slice(&self) -> &[i64] {
        &self.weights
    }

    fn expect_size(&self, k: usize) -> Result<(), ShapeError> {
        if self.size != k {
            return Err(ShapeError::Mismatch {
                what: "kernel",
                expected_rows: k,
                expected_cols: k,
                rows: self.size,
                cols: self.size,
            });
        }
        Ok(())
    }
}

/// Checks that `ifmap` and `kernel` agree with `shape`.
pub fn check_operands(
    ifmap: &FeatureMap,
    kernel: &Kernel,
    shape: &ConvShape,
) -> Result<(), ShapeError> {
    ifmap.expect_dims("ifmap", shape.ifmap_height(), shape.ifmap_width())?;
    kernel.expect_size(shape.kernel_size())
}

/// Direct evaluation of `O[h][w] = sum_{kh,kw} I[h+kh][w+kw] * W[kh][kw]`.
pub fn golden_conv(
    ifmap: &FeatureMap,
    kernel: &Kernel,
    shape: &ConvShape,
) -> Result<FeatureMap, ShapeError> {
    check_operands(ifmap, kernel, shape)?;
    let k = shape.kernel_size();
    let mut out = FeatureMap::zeros(shape.ofmap_height(), shape.ofmap_width());
    for ho in 0..shape.ofmap_height() {
        for wo in 0..shape.ofmap_width() {
            let mut acc: i64 = 0;
            for kh in 0..k {
                for kw in 0..k {
                    let prod = ifmap
                        .get(ho + kh, wo + kw)
                        .checked_mul(kernel.get(kh, kw))
                        .ok_or(ShapeError::Overflow)?;
                    acc = acc.checked_add(prod).ok_or(ShapeError::Overflow)?;
                }
            }
            out.set(ho, wo, acc);
        }
    }
    Ok(out)
}

/// The im2col view of a convolution: one row per output pixel, one column
/// per kernel tap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GemmOperands {
    shape: ConvShape,
    /// `(H_O*W_O) x K^2`, row-major.
    matrix: Vec<i64>,
    weights: Vec<i64>,
}

impl GemmOperands {
    pub fn shape(&self) -> &ConvShape {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.outputs()
    }

    pub fn cols(&self) -> usize {
        self.shape.kernel_size() * self.shape.kernel_size()
    }

    /// Flattened sliding window for output index `row` (raster order).
    pub fn row(&self, row: usize) -> &[i64] {
        let cols = self.cols();
        &self.matrix[row * cols..(row + 1) * cols]
    }

    pub fn get(&self, row: usize, col: usize) -> i64 {
        self.matrix[row * self.cols() + col]
    }

    pub fn matrix(&self) -> &[i64] {
        &self.matrix
    }

    pub fn weights(&self) -> &[i64] {
        &self.weights
    }

    /// Total number of materialized input elements (redundancy included).
    pub fn element_count(&self) -> usize {
        self.matrix.len()
    }
}

pub fn conv_to_gemm(
    ifmap: &FeatureMap,
    kernel: &Kernel,
    shape: &ConvShape,
) -> Result<GemmOperands, ShapeError> {
    check_operands(ifmap, kernel, shape)?;
    let k = shape.kernel_size();
    let mut matrix = Vec::with_capacity(shape.outputs() * k * k);
    for ho in 0..shape.ofmap_height() {
        for wo in 0..shape.ofmap_width() {
            for kh in 0..k {
                for kw in 0..k {
                    matrix.push(ifmap.get(ho + kh, wo + kw));
                }
            }
        }
    }
    Ok(GemmOperands {
        shape: *shape,
        matrix,
        weights: kernel.as_slice().to_vec(),
    })
}

/// Matrix-vector product of the lowered operands, reshaped to `H_O x W_O`.
pub fn gemm_reference(operands: &GemmOperands) -> Result<FeatureMap, ShapeError> {
    let cols = operands.cols();
    if operands.weights.len() != cols {
        return Err(ShapeError::Gemm("weight vector length differs from K^2"));
    }
    if operands.matrix.len() != operands.rows() * cols {
        return Err(ShapeError::Gemm("input matrix is not (H_O*W_O) x K^2"));
    }
    let mut data = Vec::with_capacity(operands.rows());
    for r in 0..operands.rows() {
        let mut acc: i64 = 0;
        for (x, w) in operands.row(r).iter().zip(&operands.weights) {
            let prod = x.checked_mul(*w).ok_or(ShapeError::Overflow)?;
            acc = acc.checked_add(prod).ok_or(ShapeError::Overflow)?;
        }
        data.push(acc);
    }
    FeatureMap::new(
        operands.shape.ofmap_height(),
        operands.shape.ofmap_width(),
        data,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape5() -> ConvShape {
        ConvShape::square(5, 3).unwrap()
    }

    #[test]
    fn shape_derivations() {
        let s = ConvShape::new(7, 9, 3).unwrap();
        assert_eq!((s.ofmap_height(), s.ofmap_width()), (5, 7));
        assert_eq!(s.outputs(), 35);
        assert_eq!(
            ConvShape::new(2, 5, 3),
            Err(ShapeError::KernelTooLarge {
                h_i: 2,
                w_i: 5,
                k: 3
            })
        );
        assert_eq!(ConvShape::new(5, 5, 0), Err(ShapeError::ZeroKernel));
    }

    #[test]
    fn single_column_output_is_accepted_but_not_for_trim() {
        let s = ConvShape::new(5, 3, 3).unwrap();
        assert_eq!(s.ofmap_width(), 1);
        assert_eq!(
            s.require_trim(),
            Err(ShapeError::TooNarrowForTrim { w_i: 3, k: 3 })
        );
        assert!(ConvShape::new(5, 4, 3).unwrap().require_trim().is_ok());
    }

    #[test]
    fn zero_ifmap_gives_zero_ofmap() {
        let out = golden_conv(&FeatureMap::zeros(5, 5), &Kernel::raster(3), &shape5()).unwrap();
        assert_eq!(out, FeatureMap::zeros(3, 3));
    }

    #[test]
    fn all_ones_kernel_sums_windows() {
        let out = golden_conv(&FeatureMap::raster(5, 5), &Kernel::ones(3), &shape5()).unwrap();
        assert_eq!(out.get(0, 0), 1 + 2 + 3 + 6 + 7 + 8 + 11 + 12 + 13);
        assert_eq!(out.as_slice(), &[63, 72, 81, 108, 117, 126, 153, 162, 171]);
    }

    #[test]
    fn raster_kernel_on_raster_ifmap() {
        let out = golden_conv(&FeatureMap::raster(5, 5), &Kernel::raster(3), &shape5()).unwrap();
        // hand check of the first window
        assert_eq!(
            out.get(0, 0),
            1 + 2 * 2 + 3 * 3 + 6 * 4 + 7 * 5 + 8 * 6 + 11 * 7 + 12 * 8 + 13 * 9
        );
        assert_eq!(
            out.as_slice(),
            &[411, 456, 501, 636, 681, 726, 861, 906, 951]
        );
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let err = golden_conv(&FeatureMap::zeros(4, 5), &Kernel::ones(3), &shape5()).unwrap_err();
        assert!(matches!(err, ShapeError::Mismatch { what: "ifmap", .. }));
        let err = conv_to_gemm(&FeatureMap::zeros(5, 5), &Kernel::ones(2), &shape5()).unwrap_err();
        assert!(matches!(err, ShapeError::Mismatch { what: "kernel", .. }));
        assert!(FeatureMap::new(2, 2, vec![1, 2, 3]).is_err());
    }

    #[test]
    fn gemm_lowering_of_5x5() {
        let g = conv_to_gemm(&FeatureMap::raster(5, 5), &Kernel::raster(3), &shape5()).unwrap();
        assert_eq!((g.rows(), g.cols()), (9, 9));
        assert_eq!(g.weights().len(), 9);
        assert_eq!(g.row(0), &[1, 2, 3, 6, 7, 8, 11, 12, 13]);
        assert_eq!(g.row(4), &[7, 8, 9, 12, 13, 14, 17, 18, 19]);
        assert_eq!(
            gemm_reference(&g).unwrap(),
            golden_conv(&FeatureMap::raster(5, 5), &Kernel::raster(3), &shape5()).unwrap()
        );
    }

    #[test]
    fn gemm_with_unit_kernel_has_no_redundancy() {
        let s = ConvShape::new(4, 6, 1).unwrap();
        let ifmap = FeatureMap::raster(4, 6);
        let g = conv_to_gemm(&ifmap, &Kernel::ones(1), &s).unwrap();
        assert_eq!((g.rows(), g.cols()), (24, 1));
        assert_eq!(g.matrix(), ifmap.as_slice());
    }

    #[test]
    fn gemm_element_count_16x16() {
        let s = ConvShape::square(16, 3).unwrap();
        let g = conv_to_gemm(&FeatureMap::zeros(16, 16), &Kernel::ones(3), &s).unwrap();
        assert_eq!((g.rows(), g.cols()), (196, 9));
        assert_eq!(g.element_count(), 1764);
    }

    #[test]
    fn gemm_reference_edge_cases() {
        let s = shape5();
        let g = conv_to_gemm(&FeatureMap::raster(5, 5), &Kernel::from_fn(3, |_, _| 0), &s).unwrap();
        assert_eq!(gemm_reference(&g).unwrap(), FeatureMap::zeros(3, 3));
        let g = conv_to_gemm(&FeatureMap::raster(5, 5), &Kernel::ones(3), &s).unwrap();
        assert_eq!(gemm_reference(&g).unwrap().get(0, 0), 63);
    }

    #[test]
    fn overflow_is_checked() {
        let s = ConvShape::square(2, 2).unwrap();
        let ifmap = FeatureMap::from_fn(2, 2, |_, _| i64::MAX / 2);
        assert_eq!(
            golden_conv(&ifmap, &Kernel::ones(2), &s),
            Err(ShapeError::Overflow)
        );
    }
}
