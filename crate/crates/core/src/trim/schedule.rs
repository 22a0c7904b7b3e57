//! Input-source orchestration of the TrIM array.
//!
//! Row 0 runs the branch cascade of the TrIM dataflow algorithm (first
//! matching branch wins), with the row-boundary counter `alpha` incremented
//! once per cycle. Middle rows replay row 0 delayed by their row index and the
//! bottom row follows its own fetch pattern.

use std::fmt;

use serde::Serialize;

use crate::conv::ConvShape;
use crate::sim::{SimError, TraceSource};

/// Multiplexer selection of one PE in one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum InputSource {
    /// Vertical injection from main memory.
    Ext,
    /// Right-to-left reuse from `PE(i, j+1)`.
    R,
    /// Diagonal reuse from the row below (its SRB or one of its PEs).
    D,
    Idle,
}

impl InputSource {
    pub fn label(&self) -> &'static str {
        match self {
            InputSource::Ext => "Ext",
            InputSource::R => "R",
            InputSource::D => "D",
            InputSource::Idle => "Idle",
        }
    }
}

impl fmt::Display for InputSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl From<InputSource> for TraceSource {
    fn from(s: InputSource) -> Self {
        match s {
            InputSource::Ext => TraceSource::Ext,
            InputSource::R => TraceSource::R,
            InputSource::D => TraceSource::D,
            InputSource::Idle => TraceSource::Idle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScheduleDecision {
    pub t: usize,
    pub row: usize,
    pub col: usize,
    pub source: InputSource,
}

/// Which branch ordering to use when building row 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleVariant {
    #[default]
    Faithful,
    /// Fault injection: in the general branch the external-fetch window is
    /// tested before the `j < K-1` reuse test, so whole rows are refetched.
    ExtBeforeReuse,
}

/// The full `(t, i, j) -> source` table for one shape.
#[derive(Debug, Clone)]
pub struct Schedule {
    shape: ConvShape,
    /// Row-0 decisions for every `t` in `0..=last_cycle`, `K` per cycle.
    row0: Vec<InputSource>,
}

impl Schedule {
    pub fn new(shape: &ConvShape) -> Result<Self, SimError> {
        Self::with_variant(shape, ScheduleVariant::Faithful)
    }

    pub fn with_variant(shape: &ConvShape, variant: ScheduleVariant) -> Result<Self, SimError> {
        shape.require_trim()?;
        let k = shape.kernel_size();
        let cycles = last_cycle(shape) + 1;
        let mut row0 = Vec::with_capacity(cycles * k);
        let mut alpha = 0usize;
        for t in 0..cycles {
            let boundary = t > 0 && t % shape.ofmap_width() == 0 && t >= shape.ofmap_width();
            if boundary {
                alpha += 1;
            }
            for j in 0..k {
                row0.push(row0_source(shape, t, j, alpha, variant));
            }
        }
        Ok(Self {
            shape: *shape,
            row0,
        })
    }

    pub fn shape(&self) -> &ConvShape {
        &self.shape
    }

    /// Last scheduled cycle, `H_O * W_O + K - 2`.
    pub fn last_cycle(&self) -> usize {
        last_cycle(&self.shape)
    }

    pub fn source(&self, t: usize, row: usize, col: usize) -> Result<InputSource, SimError> {
        let k = self.shape.kernel_size();
        if t > self.last_cycle() || row >= k || col >= k {
            return Err(SimError::OutOfRange { t, row, col });
        }
        Ok(if row == k - 1 {
            // also covers K = 1, where the single row has nothing below it
            bottom_row_source(&self.shape, t, col)
        } else if row == 0 {
            self.row0[t * k + col]
        } else if t < row {
            InputSource::Idle
        } else {
            self.row0[(t - row) * k + col]
        })
    }

    /// Every decision in `(t, i, j)` order.
    pub fn decisions(&self) -> impl Iterator<Item = ScheduleDecision> + '_ {
        let k = self.shape.kernel_size();
        (0..=self.last_cycle()).flat_map(move |t| {
            (0..k).flat_map(move |row| {
                (0..k).map(move |col| ScheduleDecision {
                    t,
                    row,
                    col,
                    source: self.source(t, row, col).expect("in range"),
                })
            })
        })
    }

    /// Number of `Ext` decisions, i.e. input memory accesses.
    pub fn external_fetches(&self) -> usize {
        self.decisions()
            .filter(|d| d.source == InputSource::Ext)
            .count()
    }
}

fn last_cycle(shape: &ConvShape) -> usize {
    shape.outputs() + shape.kernel_size() - 2
}

fn row0_source(
    shape: &ConvShape,
    t: usize,
    j: usize,
    alpha: usize,
    variant: ScheduleVariant,
) -> InputSource {
    use InputSource::*;
    let k = shape.kernel_size();
    let w_o = shape.ofmap_width();
    let last_col = j == k - 1;
    if t == 0 {
        Ext
    } else if t < w_o {
        if last_col {
            Ext
        } else {
            R
        }
    } else if t.is_multiple_of(w_o) {
        D
    } else if t == alpha * w_o + 1 {
        if last_col {
            D
        } else {
            R
        }
    } else if t >= shape.outputs() {
        Idle
    } else {
        let in_fetch_window =
            shape.ifmap_width() <= 2 * k || ((alpha + 1) * w_o - k < t && t < (alpha + 1) * w_o);
        match variant {
            ScheduleVariant::Faithful if !last_col => R,
            ScheduleVariant::ExtBeforeReuse if in_fetch_window => Ext,
            ScheduleVariant::ExtBeforeReuse if !last_col => R,
            _ if in_fetch_window => Ext,
            _ => D,
        }
    }
}

fn bottom_row_source(shape: &ConvShape, t: usize, j: usize) -> InputSource {
    let k = shape.kernel_size();
    if t < k - 1 {
        InputSource::Idle
    } else if (t - (k - 1)).is_multiple_of(shape.ofmap_width()) || j == k - 1 {
        InputSource::Ext
    } else {
        InputSource::R
    }
}

/// Source selected by `PE(row, col)` at compute cycle `t` (0-based).
pub fn schedule_source(
    t: usize,
    row: usize,
    col: usize,
    shape: &ConvShape,
) -> Result<InputSource, SimError> {
    Schedule::new(shape)?.source(t, row, col)
}

/// Ifmap coordinate `PE(row, col)` must multiply at cycle `t`, derived only
/// from output raster order: row `i` works on output `n = t - i`. `None` when
/// the PE has no useful work at `t`.
pub fn expected_operand(
    t: usize,
    row: usize,
    col: usize,
    shape: &ConvShape,
) -> Option<(usize, usize)> {
    let n = t.checked_sub(row)?;
    if n >= shape.outputs() || row >= shape.kernel_size() || col >= shape.kernel_size() {
        return None;
    }
    let w_o = shape.ofmap_width();
    Some((n / w_o + row, n % w_o + col))
}

#[cfg(test)]
mod tests {
    use super::*;
    use InputSource::*;

    fn shape5() -> ConvShape {
        ConvShape::square(5, 3).unwrap()
    }

    #[test]
    fn first_cycles_of_row0() {
        let s = shape5();
        for j in 0..3 {
            assert_eq!(schedule_source(0, 0, j, &s).unwrap(), Ext);
        }
        assert_eq!(schedule_source(1, 0, 0, &s).unwrap(), R);
        assert_eq!(schedule_source(1, 0, 2, &s).unwrap(), Ext);
    }

    #[test]
    fn worked_example_fetch_breakdown() {
        let sched = Schedule::new(&shape5()).unwrap();
        let per_row: Vec<usize> = (0..3)
            .map(|i| {
                sched
                    .decisions()
                    .filter(|d| d.row == i && d.source == Ext)
                    .count()
            })
            .collect();
        assert_eq!(per_row, vec![7, 7, 15]);
        assert_eq!(sched.external_fetches(), 29);
    }

    #[test]
    fn cycle_four_sources() {
        // 1-based cycle 4: row 0 all diagonal, rows 1 and 2 reuse two and fetch one
        let s = shape5();
        let row = |i| {
            (0..3)
                .map(|j| schedule_source(3, i, j, &s).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(row(0), vec![D, D, D]);
        assert_eq!(row(1), vec![R, R, Ext]);
        assert_eq!(row(2), vec![R, R, Ext]);
    }

    #[test]
    fn middle_rows_replay_row0() {
        let s = ConvShape::square(11, 5).unwrap();
        let sched = Schedule::new(&s).unwrap();
        for i in 1..4 {
            for t in 0..=sched.last_cycle() {
                for j in 0..5 {
                    let want = if t < i {
                        Idle
                    } else {
                        sched.source(t - i, 0, j).unwrap()
                    };
                    assert_eq!(sched.source(t, i, j).unwrap(), want);
                }
            }
        }
    }

    #[test]
    fn bottom_row_pattern() {
        let s = shape5();
        assert_eq!(schedule_source(0, 2, 0, &s).unwrap(), Idle);
        assert_eq!(schedule_source(1, 2, 2, &s).unwrap(), Idle);
        for j in 0..3 {
            assert_eq!(schedule_source(2, 2, j, &s).unwrap(), Ext);
            assert_eq!(schedule_source(5, 2, j, &s).unwrap(), Ext);
        }
        assert_eq!(schedule_source(4, 2, 1, &s).unwrap(), R);
    }

    #[test]
    fn wide_ifmap_uses_fetch_window() {
        // W_I > 2K: only the last K-1 positions of each later row fetch
        let s = ConvShape::square(9, 3).unwrap();
        let w_o = 7;
        let sched = Schedule::new(&s).unwrap();
        let ext: Vec<usize> = (w_o..2 * w_o)
            .filter(|&t| sched.source(t, 0, 2).unwrap() == Ext)
            .collect();
        assert_eq!(ext, vec![12, 13]);
    }

    #[test]
    fn out_of_range_is_rejected() {
        let s = shape5();
        assert!(matches!(
            schedule_source(11, 0, 0, &s),
            Err(SimError::OutOfRange { .. })
        ));
        assert!(matches!(
            schedule_source(0, 3, 0, &s),
            Err(SimError::OutOfRange { .. })
        ));
        assert!(schedule_source(0, 0, 0, &ConvShape::new(5, 3, 3).unwrap()).is_err());
    }

    #[test]
    fn expected_operands_of_worked_example() {
        let s = shape5();
        let ifmap = crate::conv::FeatureMap::raster(5, 5);
        let values = |t, i| -> Vec<i64> {
            (0..3)
                .map(|j| {
                    let (r, c) = expected_operand(t, i, j, &s).unwrap();
                    ifmap.get(r, c)
                })
                .collect()
        };
        assert_eq!(values(3, 0), vec![6, 7, 8]);
        assert_eq!(values(3, 1), vec![8, 9, 10]);
        assert_eq!(values(3, 2), vec![12, 13, 14]);
        assert_eq!(values(0, 0), vec![1, 2, 3]);
        assert_eq!(expected_operand(0, 1, 0, &s), None);
        assert_eq!(expected_operand(9, 0, 0, &s), None);
    }

    #[test]
    fn idle_never_where_work_is_expected() {
        for (h, w, k) in [(5, 5, 3), (9, 6, 3), (12, 12, 5), (8, 3, 2), (6, 9, 1)] {
            let s = ConvShape::new(h, w, k).unwrap();
            let sched = Schedule::new(&s).unwrap();
            for d in sched.decisions() {
                let expected = expected_operand(d.t, d.row, d.col, &s);
                if expected.is_some() {
                    assert_ne!(d.source, Idle, "{s} {d:?}");
                }
                if d.source == Ext {
                    assert!(expected.is_some(), "{s} {d:?}");
                }
            }
        }
    }

    #[test]
    fn faulty_variant_breaks_fetch_count() {
        let sched = Schedule::with_variant(&shape5(), ScheduleVariant::ExtBeforeReuse).unwrap();
        assert_ne!(sched.external_fetches(), 29);
    }
}
