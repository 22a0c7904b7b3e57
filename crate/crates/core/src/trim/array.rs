use std::collections::VecDeque;

use crate::conv::{check_operands, ConvShape, FeatureMap, Kernel, ShapeError};
use crate::model::DataflowKind;
use crate::sim::{
    mac, BufferRecord, Counters, CycleRecord, Operand, OutputRecord, PeRecord, SimError, SimResult,
    Tally,
};

use super::schedule::{expected_operand, InputSource, Schedule, ScheduleVariant};

/// Registers held by every PE: weight, current input, psum and the
/// left-going input link.
pub const REGISTERS_PER_PE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PeState {
    /// Stationary after preload.
    pub weight: i64,
    /// Operand multiplied in the current cycle.
    pub input: Operand,
    pub psum_out: i64,
    /// Copy of `input` presented to the left neighbour or the row's SRB.
    pub link: Operand,
}

/// Shift register buffer attached to the left edge of one array row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Srb {
    /// Newest entry at the front.
    slots: VecDeque<Operand>,
}

impl Srb {
    pub fn new(depth: usize) -> Self {
        Self {
            slots: std::iter::repeat_n(Operand::EMPTY, depth).collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.slots.len()
    }

    /// Entry `age` cycles old (0 = most recent).
    pub fn get(&self, age: usize) -> Option<Operand> {
        self.slots.get(age).copied()
    }

    pub fn shift(&mut self, incoming: Operand) {
        if self.slots.is_empty() {
            return;
        }
        self.slots.pop_back();
        self.slots.push_front(incoming);
    }

    pub fn contents(&self) -> Vec<Operand> {
        self.slots.iter().copied().collect()
    }
}

/// The PE grid, SRBs and adder-tree register.
#[derive(Debug, Clone)]
pub struct TrimArray {
    k: usize,
    pes: Vec<PeState>,
    /// `srbs[i - 1]` serves row `i`, for `i` in `1..K`.
    srbs: Vec<Srb>,
    adder: i64,
}

impl TrimArray {
    pub fn new(shape: &ConvShape) -> Result<Self, ShapeError> {
        shape.require_trim()?;
        let k = shape.kernel_size();
        let depth = shape.ifmap_width() - k - 1;
        Ok(Self {
            k,
            pes: vec![PeState::default(); k * k],
            srbs: (1..k).map(|_| Srb::new(depth)).collect(),
            adder: 0,
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.k
    }

    pub fn pe(&self, row: usize, col: usize) -> &PeState {
        &self.pes[row * self.k + col]
    }

    pub fn srb(&self, row: usize) -> Option<&Srb> {
        row.checked_sub(1).and_then(|i| self.srbs.get(i))
    }

    pub fn srb_depth(&self) -> usize {
        self.srbs.first().map_or(0, Srb::depth)
    }

    /// Registers instantiated by this array, counted from its structure.
    pub fn register_count(&self) -> u64 {
        let srb: usize = self.srbs.iter().map(Srb::depth).sum();
        REGISTERS_PER_PE * self.pes.len() as u64 + srb as u64 + 1
    }

    /// Loads the kernel through the vertical links, one row of `K` weights
    /// per cycle. Each cycle every row passes its weights to the row below and
    /// row 0 takes the next group, so the last kernel row goes in first.
    /// Returns the weight grid after each preload cycle.
    pub fn preload_weights(&mut self, kernel: &Kernel) -> Result<Vec<Vec<i64>>, ShapeError> {
        let k = self.k;
        if kernel.size() != k {
            return Err(ShapeError::Mismatch {
                what: "kernel",
                expected_rows: k,
                expected_cols: k,
                rows: kernel.size(),
                cols: kernel.size(),
            });
        }
        let mut snapshots = Vec::with_capacity(k);
        for cycle in 0..k {
            for i in (1..k).rev() {
                for j in 0..k {
                    self.pes[i * k + j].weight = self.pes[(i - 1) * k + j].weight;
                }
            }
            for (j, w) in kernel.row(k - 1 - cycle).iter().enumerate() {
                self.pes[j].weight = *w;
            }
            snapshots.push(self.pes.iter().map(|p| p.weight).collect());
        }
        Ok(snapshots)
    }

    /// Operand offered to `PE(row, col)` by the diagonal link, read from the
    /// row below. That row's PE inputs and SRB form one right-to-left chain;
    /// the leftmost `K` registers of the chain feed the row above.
    fn diagonal_tap(&self, row: usize, col: usize) -> Option<Operand> {
        let below = row + 1;
        if below >= self.k {
            return None;
        }
        let depth = self.srb_depth();
        if col < depth {
            self.srbs[below - 1].get(depth - 1 - col)
        } else {
            Some(self.pes[below * self.k + col - depth].link)
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Keep per-cycle records.
    pub trace: bool,
    pub variant: ScheduleVariant,
}

impl RunOptions {
    pub fn traced() -> Self {
        Self {
            trace: true,
            ..Self::default()
        }
    }
}

/// Runs one convolution through the array with tracing enabled.
pub fn run(ifmap: &FeatureMap, kernel: &Kernel, shape: &ConvShape) -> Result<SimResult, SimError> {
    run_with(ifmap, kernel, shape, RunOptions::traced())
}

pub fn run_with(
    ifmap: &FeatureMap,
    kernel: &Kernel,
    shape: &ConvShape,
    options: RunOptions,
) -> Result<SimResult, SimError> {
    check_operands(ifmap, kernel, shape)?;
    let schedule = Schedule::with_variant(shape, options.variant)?;
    let mut array = TrimArray::new(shape)?;
    let preload_cycles = array.preload_weights(kernel)?.len() as u64;

    let k = shape.kernel_size();
    let outputs = shape.outputs();
    let w_o = shape.ofmap_width();
    // one extra cycle drains the adder tree
    let total_cycles = outputs + k;

    let mut tally = Tally::new(shape);
    let mut ofmap = FeatureMap::zeros(shape.ofmap_height(), w_o);
    let mut produced = vec![false; outputs];
    let mut trace = options.trace.then(Vec::new);
    let mut next = array.pes.clone();

    for t in 0..total_cycles {
        let mut record = trace.as_ref().map(|_| CycleRecord::new(t));
        for i in 0..k {
            for j in 0..k {
                let source = if t <= schedule.last_cycle() {
                    schedule.source(t, i, j)?
                } else {
                    InputSource::Idle
                };
                let invalid = |selected| SimError::InvalidSource {
                    t,
                    row: i,
                    col: j,
                    selected,
                };
                let operand = match source {
                    InputSource::Ext => {
                        let at = expected_operand(t, i, j, shape).ok_or(invalid("Ext"))?;
                        tally.fetch(at);
                        Some(Operand::fetched(ifmap, at.0, at.1))
                    }
                    InputSource::R => {
                        if j + 1 >= k {
                            return Err(invalid("R"));
                        }
                        Some(array.pes[i * k + j + 1].link)
                    }
                    InputSource::D => Some(array.diagonal_tap(i, j).ok_or(invalid("D"))?),
                    InputSource::Idle => None,
                };

                let current = array.pes[i * k + j];
                let psum_in = if i == 0 {
                    0
                } else {
                    array.pes[(i - 1) * k + j].psum_out
                };
                let (input, psum_out) = match operand {
                    Some(op) => (op, mac(psum_in, current.weight, op.value, t, i, j)?),
                    None => (current.input, 0),
                };
                if let Some(at) = expected_operand(t, i, j, shape) {
                    let got = operand.and_then(|o| o.origin);
                    if got != Some(at) {
                        return Err(SimError::OperandMismatch {
                            t,
                            row: i,
                            col: j,
                            expected: at,
                            got,
                        });
                    }
                    tally.use_operand(at);
                }
                next[i * k + j] = PeState {
                    weight: current.weight,
                    input,
                    psum_out,
                    link: input,
                };
                if let Some(rec) = record.as_mut() {
                    rec.pes.push(PeRecord {
                        row: i,
                        col: j,
                        source: source.into(),
                        input: operand,
                        weight: current.weight,
                        psum_in,
                        psum_out,
                    });
                }
            }
        }

        // adder tree: registered sum of the previous cycle's bottom psums
        let mut sum: i64 = 0;
        for j in 0..k {
            sum = sum
                .checked_add(array.pes[(k - 1) * k + j].psum_out)
                .ok_or(SimError::Overflow { t, row: k, col: j })?;
        }
        array.adder = sum;
        if let Some(n) = t.checked_sub(k).filter(|&n| n < outputs) {
            ofmap.set(n / w_o, n % w_o, sum);
            produced[n] = true;
            if let Some(rec) = record.as_mut() {
                rec.outputs.push(OutputRecord {
                    row: n / w_o,
                    col: n % w_o,
                    value: sum,
                });
            }
        }

        for i in 1..k {
            let leaving = array.pes[i * k].link;
            array.srbs[i - 1].shift(leaving);
        }
        std::mem::swap(&mut array.pes, &mut next);

        if let (Some(rec), Some(trace)) = (record, trace.as_mut()) {
            let mut rec = rec;
            rec.buffers = (1..k)
                .filter(|&i| array.srbs[i - 1].depth() > 0)
                .map(|i| BufferRecord {
                    row: i,
                    contents: array.srbs[i - 1].contents(),
                })
                .collect();
            trace.push(rec);
        }
    }

    if let Some(index) = produced.iter().position(|p| !p) {
        return Err(SimError::MissingOutput { index });
    }

    let counters = Counters {
        ext_fetches: tally.total_fetches(),
        weight_loads: (k * k) as u64,
        compute_cycles: total_cycles as u64,
        preload_cycles,
        register_count: array.register_count(),
        scratch_reads: 0,
        refetched_inputs: tally.refetched(),
    };
    Ok(SimResult::new(
        DataflowKind::Trim,
        *shape,
        ofmap,
        counters,
        trace,
        tally.fetches,
        tally.uses,
    ))
}
