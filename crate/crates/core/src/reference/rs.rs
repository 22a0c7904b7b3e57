use std::collections::VecDeque;

use crate::conv::{check_operands, ConvShape, FeatureMap, Kernel};
use crate::model::DataflowKind;
use crate::sim::{
    mac, Counters, CycleRecord, Operand, OutputRecord, PeRecord, SimError, SimResult, Tally,
    TraceSource,
};

/// `K` rows by `H_O` columns. Each PE holds a `K`-entry input scratch pad, a
/// `K`-entry weight scratch pad and one psum register.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RsArrayConfig {
    pub rows: usize,
    pub cols: usize,
    pub scratch_depth: usize,
}

impl RsArrayConfig {
    pub fn for_shape(shape: &ConvShape) -> Self {
        Self {
            rows: shape.kernel_size(),
            cols: shape.ofmap_height(),
            scratch_depth: shape.kernel_size(),
        }
    }

    pub fn pe_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn register_count(&self) -> u64 {
        (self.pe_count() * (2 * self.scratch_depth + 1)) as u64
    }
}

#[derive(Debug, Clone)]
struct RsPe {
    inputs: VecDeque<Operand>,
    weights: Vec<i64>,
    psum: i64,
}

pub fn rs_simulate(
    ifmap: &FeatureMap,
    kernel: &Kernel,
    shape: &ConvShape,
) -> Result<SimResult, SimError> {
    rs_simulate_with(ifmap, kernel, shape, true)
}

/// PE `(i, c)` convolves weight row `i` with ifmap row `i + c`; column `c`
/// yields ofmap row `c`. For each output column the PEs spend `K` cycles on
/// MACs and the column then needs `K - 1` cycles to accumulate psums
/// downwards, so the output columns are processed back to back in
/// `2K - 1`-cycle slots.
pub fn rs_simulate_with(
    ifmap: &FeatureMap,
    kernel: &Kernel,
    shape: &ConvShape,
    trace: bool,
) -> Result<SimResult, SimError> {
    check_operands(ifmap, kernel, shape)?;
    let config = RsArrayConfig::for_shape(shape);
    let k = shape.kernel_size();
    let (h_o, w_o) = (shape.ofmap_height(), shape.ofmap_width());
    let slot = 2 * k - 1;

    // weight rows broadcast horizontally, loaded once
    let mut pes: Vec<RsPe> = (0..k * h_o)
        .map(|idx| RsPe {
            inputs: VecDeque::with_capacity(k),
            weights: kernel.row(idx / h_o).to_vec(),
            psum: 0,
        })
        .collect();
    let pe = |i: usize, c: usize| i * h_o + c;

    let mut tally = Tally::new(shape);
    let mut scratch_reads = 0u64;
    let mut ofmap = FeatureMap::zeros(h_o, w_o);
    let mut records = trace.then(Vec::new);

    for wo in 0..w_o {
        // new ifmap columns enter every PE on the diagonal sharing that row
        let new_cols = if wo == 0 { 0..k } else { wo + k - 1..wo + k };
        for r in 0..shape.ifmap_height() {
            for col in new_cols.clone() {
                let op = Operand::fetched(ifmap, r, col);
                tally.fetch((r, col));
                for i in 0..k {
                    let Some(c) = r.checked_sub(i).filter(|&c| c < h_o) else {
                        continue;
                    };
                    let spad = &mut pes[pe(i, c)].inputs;
                    if spad.len() == k {
                        spad.pop_front();
                    }
                    spad.push_back(op);
                }
            }
        }

        for step in 0..k {
            let t = wo * slot + step;
            let mut record = records.as_ref().map(|_| CycleRecord::new(t));
            for i in 0..k {
                for c in 0..h_o {
                    let p = &mut pes[pe(i, c)];
                    let operand = p.inputs[step];
                    let want = (i + c, wo + step);
                    if operand.origin != Some(want) {
                        return Err(SimError::OperandMismatch {
                            t,
                            row: i,
                            col: c,
                            expected: want,
                            got: operand.origin,
                        });
                    }
                    tally.use_operand(want);
                    scratch_reads += 2;
                    let psum_in = if step == 0 { 0 } else { p.psum };
                    let weight = p.weights[step];
                    p.psum = mac(psum_in, weight, operand.value, t, i, c)?;
                    if let Some(rec) = record.as_mut() {
                        rec.pes.push(PeRecord {
                            row: i,
                            col: c,
                            source: TraceSource::Spad,
                            input: Some(operand),
                            weight,
                            psum_in,
                            psum_out: p.psum,
                        });
                    }
                }
            }
            if let (Some(rec), Some(all)) = (record, records.as_mut()) {
                all.push(rec);
            }
        }

        for i in 1..k {
            let t = wo * slot + k - 1 + i;
            let mut record = records.as_ref().map(|_| CycleRecord::new(t));
            for c in 0..h_o {
                let above = pes[pe(i - 1, c)].psum;
                let p = &mut pes[pe(i, c)];
                let psum_in = p.psum;
                p.psum =
                    psum_in
                        .checked_add(above)
                        .ok_or(SimError::Overflow { t, row: i, col: c })?;
                if let Some(rec) = record.as_mut() {
                    rec.pes.push(PeRecord {
                        row: i,
                        col: c,
                        source: TraceSource::Acc,
                        input: None,
                        weight: p.weights[k - 1],
                        psum_in: above,
                        psum_out: p.psum,
                    });
                }
            }
            if i == k - 1 {
                if let Some(rec) = record.as_mut() {
                    rec.outputs = (0..h_o)
                        .map(|c| OutputRecord {
                            row: c,
                            col: wo,
                            value: pes[pe(k - 1, c)].psum,
                        })
                        .collect();
                }
            }
            if let (Some(rec), Some(all)) = (record, records.as_mut()) {
                all.push(rec);
            }
        }

        for c in 0..h_o {
            ofmap.set(c, wo, pes[pe(k - 1, c)].psum);
        }
    }

    let counters = Counters {
        ext_fetches: tally.total_fetches(),
        weight_loads: (k * k) as u64,
        compute_cycles: (w_o * slot) as u64,
        preload_cycles: 0,
        register_count: config.register_count(),
        scratch_reads,
        refetched_inputs: tally.refetched(),
    };
    Ok(SimResult::new(
        DataflowKind::Rs,
        *shape,
        ofmap,
        counters,
        records,
        tally.fetches,
        tally.uses,
    ))
}
