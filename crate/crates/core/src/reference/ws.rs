use std::collections::VecDeque;

use crate::conv::{check_operands, conv_to_gemm, ConvShape, FeatureMap, Kernel};
use crate::model::DataflowKind;
use crate::sim::{
    mac, Counters, CycleRecord, Operand, OutputRecord, PeRecord, SimError, SimResult, Tally,
    TraceSource,
};

/// One column of `K^2` PEs (weight, input and psum register each) with an
/// input FIFO of depth `k` in front of PE `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WsArrayConfig {
    pub rows: usize,
}

impl WsArrayConfig {
    pub const REGISTERS_PER_PE: u64 = 3;

    pub fn for_shape(shape: &ConvShape) -> Self {
        let k = shape.kernel_size();
        Self { rows: k * k }
    }

    /// Depth of the FIFO feeding PE `row`.
    pub fn fifo_depth(&self, row: usize) -> usize {
        row
    }

    pub fn fifo_registers(&self) -> u64 {
        (0..self.rows).map(|r| self.fifo_depth(r) as u64).sum()
    }

    pub fn register_count(&self) -> u64 {
        Self::REGISTERS_PER_PE * self.rows as u64 + self.fifo_registers()
    }
}

pub fn ws_simulate(
    ifmap: &FeatureMap,
    kernel: &Kernel,
    shape: &ConvShape,
) -> Result<SimResult, SimError> {
    ws_simulate_with(ifmap, kernel, shape, true)
}

pub fn ws_simulate_with(
    ifmap: &FeatureMap,
    kernel: &Kernel,
    shape: &ConvShape,
    trace: bool,
) -> Result<SimResult, SimError> {
    check_operands(ifmap, kernel, shape)?;
    let config = WsArrayConfig::for_shape(shape);
    let gemm = conv_to_gemm(ifmap, kernel, shape)?;
    let k = shape.kernel_size();
    let pes = config.rows;
    let stream_len = shape.outputs();
    let w_o = shape.ofmap_width();
    let total_cycles = stream_len + pes - 1;

    // GeMM element (r, c) is ifmap (r / W_O + c / K, r % W_O + c % K)
    let origin = |r: usize, c: usize| (r / w_o + c / k, r % w_o + c % k);

    let mut fifos: Vec<VecDeque<Operand>> = (0..pes)
        .map(|p| std::iter::repeat_n(Operand::EMPTY, config.fifo_depth(p)).collect())
        .collect();
    let mut psum = vec![0i64; pes];
    let mut next_psum = vec![0i64; pes];
    let mut tally = Tally::new(shape);
    let mut ofmap = FeatureMap::zeros(shape.ofmap_height(), w_o);
    let mut records = trace.then(Vec::new);

    for t in 0..total_cycles {
        let mut record = records.as_ref().map(|_| CycleRecord::new(t));
        for p in 0..pes {
            let incoming = if t < stream_len {
                let at = origin(t, p);
                tally.fetch(at);
                Operand {
                    value: gemm.get(t, p),
                    origin: Some(at),
                }
            } else {
                Operand::EMPTY
            };
            let fifo = &mut fifos[p];
            let operand = if fifo.is_empty() {
                incoming
            } else {
                fifo.push_front(incoming);
                fifo.pop_back().expect("non-empty")
            };

            let weight = gemm.weights()[p];
            let psum_in = if p == 0 { 0 } else { psum[p - 1] };
            let row = t.checked_sub(p).filter(|&r| r < stream_len);
            let psum_out = match row {
                Some(r) => {
                    let want = origin(r, p);
                    if operand.origin != Some(want) {
                        return Err(SimError::OperandMismatch {
                            t,
                            row: p,
                            col: 0,
                            expected: want,
                            got: operand.origin,
                        });
                    }
                    tally.use_operand(want);
                    mac(psum_in, weight, operand.value, t, p, 0)?
                }
                None => 0,
            };
            next_psum[p] = psum_out;
            if let Some(rec) = record.as_mut() {
                let source = match (row, p) {
                    (None, _) => TraceSource::Idle,
                    (Some(_), 0) => TraceSource::Ext,
                    (Some(_), _) => TraceSource::Fifo,
                };
                rec.pes.push(PeRecord {
                    row: p,
                    col: 0,
                    source,
                    input: row.map(|_| operand),
                    weight,
                    psum_in,
                    psum_out,
                });
            }
            if p == pes - 1 {
                if let Some(r) = row {
                    ofmap.set(r / w_o, r % w_o, psum_out);
                    if let Some(rec) = record.as_mut() {
                        rec.outputs.push(OutputRecord {
                            row: r / w_o,
                            col: r % w_o,
                            value: psum_out,
                        });
                    }
                }
            }
        }
        std::mem::swap(&mut psum, &mut next_psum);
        if let (Some(rec), Some(all)) = (record, records.as_mut()) {
            all.push(rec);
        }
    }

    let counters = Counters {
        ext_fetches: tally.total_fetches(),
        weight_loads: pes as u64,
        compute_cycles: total_cycles as u64,
        preload_cycles: pes as u64,
        register_count: config.register_count(),
        scratch_reads: 0,
        refetched_inputs: tally.refetched(),
    };
    Ok(SimResult::new(
        DataflowKind::Ws,
        *shape,
        ofmap,
        counters,
        records,
        tally.fetches,
        tally.uses,
    ))
}
