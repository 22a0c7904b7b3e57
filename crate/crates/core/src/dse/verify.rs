use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{check_identities, random_operands, simulate_variant, DseError, SweepSpec};
use crate::conv::{conv_to_gemm, gemm_reference, golden_conv, ConvShape, FeatureMap, Kernel};
use crate::model::{self, DataflowKind, MetricSet};
use crate::sim::SimResult;
use crate::trim::ScheduleVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOptions {
    /// Schedule variant driving every TrIM simulation.
    pub variant: ScheduleVariant,
    pub random_cases: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            variant: ScheduleVariant::Faithful,
            random_cases: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(out, "{tag} {}: {}", c.name, c.detail).unwrap();
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        writeln!(out, "{} checks, {failed} failed", self.checks.len()).unwrap();
        out
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("serializable");
        out.push('\n');
        out
    }
}

fn check(name: &'static str, outcome: Result<String, String>) -> Check {
    match outcome {
        Ok(detail) => Check {
            name,
            passed: true,
            detail,
        },
        Err(detail) => Check {
            name,
            passed: false,
            detail,
        },
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(
    kind: DataflowKind,
    ifmap: &FeatureMap,
    kernel: &Kernel,
    shape: &ConvShape,
    opts: &VerifyOptions,
) -> Result<SimResult, String> {
    simulate_variant(kind, ifmap, kernel, shape, opts.variant)
        .map_err(|e| format!("{kind} {shape:?}: {e}"))
}

fn worked_example(opts: &VerifyOptions) -> Result<String, String> {
    let shape = ConvShape::square(5, 3).map_err(|e| e.to_string())?;
    let ifmap = FeatureMap::raster(5, 5);
    let kernel = Kernel::raster(3);
    let res = run(DataflowKind::Trim, &ifmap, &kernel, &shape, opts)?;
    let c = &res.counters;
    let got = (
        c.ext_fetches,
        c.refetched_inputs,
        c.compute_cycles,
        c.register_count,
    );
    ensure(got == (29, 4, 12, 39), || {
        format!("fetches/repeats/cycles/registers = {got:?}, expected (29, 4, 12, 39)")
    })?;
    let golden = golden_conv(&ifmap, &kernel, &shape).map_err(|e| e.to_string())?;
    ensure(res.ofmap == golden, || {
        format!(
            "ofmap {:?} differs from {:?}",
            res.ofmap.as_slice(),
            golden.as_slice()
        )
    })?;
    Ok("5x5 ifmap, 3x3 kernel: 29 fetches of which 4 repeat, 12 cycles, 39 registers".into())
}

fn element_reuse(opts: &VerifyOptions) -> Result<String, String> {
    let shape = ConvShape::square(5, 3).map_err(|e| e.to_string())?;
    let res = run(
        DataflowKind::Trim,
        &FeatureMap::raster(5, 5),
        &Kernel::raster(3),
        &shape,
        opts,
    )?;
    let (f, u) = (res.fetches_of(2, 2), res.uses_of(2, 2));
    ensure((f, u) == (1, 9), || {
        format!("centre element fetched {f} times, used {u} times")
    })?;
    Ok("centre element fetched once and used 9 times".into())
}

fn grid_identities(spec: &SweepSpec, opts: &VerifyOptions) -> Result<String, String> {
    let mut failures = Vec::new();
    let mut points = 0;
    for (k, i) in spec.points() {
        let shape = ConvShape::square(i, k).map_err(|e| e.to_string())?;
        let (ifmap, kernel) = random_operands(&shape, spec.seed);
        let golden = golden_conv(&ifmap, &kernel, &shape).map_err(|e| e.to_string())?;
        for &kind in &spec.dataflows {
            points += 1;
            let m = model::metric_set_for_shape(kind, &shape, &spec.alpha)
                .map_err(|e| e.to_string())?;
            match run(kind, &ifmap, &kernel, &shape, opts) {
                Ok(res) => {
                    if let Err(e) = check_identities(&res, &m, &golden) {
                        failures.push(e.to_string());
                    }
                }
                Err(e) => failures.push(e),
            }
        }
    }
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok(format!("{points} grid points match the closed forms"))
}

fn oracle_case(
    shape: &ConvShape,
    rng: &mut ChaCha8Rng,
    opts: &VerifyOptions,
) -> Result<(), String> {
    let ifmap = FeatureMap::from_fn(shape.ifmap_height(), shape.ifmap_width(), |_, _| {
        rng.gen_range(-8..=8)
    });
    let kernel = Kernel::from_fn(shape.kernel_size(), |_, _| rng.gen_range(-8..=8));
    let golden = golden_conv(&ifmap, &kernel, shape).map_err(|e| e.to_string())?;
    let gemm = conv_to_gemm(&ifmap, &kernel, shape).map_err(|e| e.to_string())?;
    let via_gemm = gemm_reference(&gemm).map_err(|e| e.to_string())?;
    ensure(via_gemm == golden, || {
        format!("{shape:?}: Conv-to-GeMM result differs")
    })?;
    let alpha = model::AlphaModel::standard();
    for kind in DataflowKind::ALL {
        let res = run(kind, &ifmap, &kernel, shape, opts)?;
        let m: MetricSet =
            model::metric_set_for_shape(kind, shape, &alpha).map_err(|e| e.to_string())?;
        check_identities(&res, &m, &golden).map_err(|e| format!("{shape:?}: {e}"))?;
    }
    Ok(())
}

fn randomized_oracle(opts: &VerifyOptions) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for case in 0..opts.random_cases {
        let k = [2, 3, 5, 7][rng.gen_range(0..4)];
        let w = rng.gen_range(k + 1..=40);
        let h = rng.gen_range(k..=40);
        let shape = ConvShape::new(h, w, k).map_err(|e| e.to_string())?;
        oracle_case(&shape, &mut rng, opts).map_err(|e| format!("case {case}: {e}"))?;
    }
    Ok(format!(
        "{} random shapes agree with the direct convolution",
        opts.random_cases
    ))
}

fn overhead_continuity(opts: &VerifyOptions) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x2b);
    for k in 2..=7usize {
        let narrow = (k - 1) * (k - 1);
        let wide = (2 * k - k - 1) * (k - 1);
        ensure(narrow == wide, || {
            format!("K={k}: branches disagree at W_I=2K ({narrow} vs {wide})")
        })?;
        for w in [2 * k - 1, 2 * k, 2 * k + 1] {
            if w <= k {
                continue;
            }
            let shape = ConvShape::new(2 * k + 3, w, k).map_err(|e| e.to_string())?;
            oracle_case(&shape, &mut rng, opts)?;
        }
    }
    Ok("overhead branches meet at W_I = 2K and simulate correctly on both sides".into())
}

fn inversion_crossover() -> Result<String, String> {
    let mut found = Vec::new();
    for k in [3usize, 5, 7] {
        let ip = model::inversion_point(k).map_err(|e| e.to_string())? as usize;
        for i in k + 1..=300 {
            let s = ConvShape::square(i, k).map_err(|e| e.to_string())?;
            let (t, w) = (
                model::reg_trim(&s).map_err(|e| e.to_string())?,
                model::reg_ws(&s),
            );
            let ok = match i.cmp(&ip) {
                std::cmp::Ordering::Less => t < w,
                std::cmp::Ordering::Equal => t >= w,
                std::cmp::Ordering::Greater => t > w,
            };
            ensure(ok, || {
                format!("K={k} I={i}: TrIM {t} vs WS {w} registers, inversion at {ip}")
            })?;
        }
        found.push(format!("K={k}: {ip}"));
    }
    Ok(format!("register crossover at {}", found.join(", ")))
}

fn trim_beats_ws_accesses(spec: &SweepSpec) -> Result<String, String> {
    for (k, i) in spec.points() {
        let s = ConvShape::square(i, k).map_err(|e| e.to_string())?;
        let (t, w) = (
            model::ma_trim(&s).map_err(|e| e.to_string())?,
            model::ma_ws(&s),
        );
        ensure(t < w, || format!("K={k} I={i}: MA TrIM {t} >= WS {w}"))?;
    }
    Ok("TrIM needs fewer memory accesses than WS at every grid point".into())
}

fn tpe_bounds(spec: &SweepSpec) -> Result<String, String> {
    let two = model::Rational::from_integer(2);
    for (k, i) in spec.points() {
        let s = ConvShape::square(i, k).map_err(|e| e.to_string())?;
        let t = model::tpe(DataflowKind::Trim, &s);
        for kind in DataflowKind::ALL {
            let v = model::tpe(kind, &s);
            ensure(v > model::Rational::from_integer(0) && v <= two, || {
                format!("K={k} I={i}: {kind} TPE {v} outside (0, 2]")
            })?;
            ensure(kind == DataflowKind::Trim || v < t, || {
                format!("K={k} I={i}: {kind} TPE {v} not below TrIM {t}")
            })?;
        }
    }
    Ok("every TPE lies in (0, 2] with TrIM highest".into())
}

/// Runs the full verification suite on `spec`'s grid with default options.
pub fn verify(spec: &SweepSpec) -> Result<VerifyReport, DseError> {
    verify_with(spec, &VerifyOptions::default())
}

pub fn verify_with(spec: &SweepSpec, opts: &VerifyOptions) -> Result<VerifyReport, DseError> {
    spec.validate()?;
    let mut spec = spec.clone();
    spec.dataflows.sort();
    spec.dataflows.dedup();
    let checks = vec![
        check("worked_example", worked_example(opts)),
        check("element_reuse", element_reuse(opts)),
        check("grid_identities", grid_identities(&spec, opts)),
        check("randomized_oracle", randomized_oracle(opts)),
        check("overhead_continuity", overhead_continuity(opts)),
        check("register_inversion", inversion_crossover()),
        check("trim_fewer_accesses_than_ws", trim_beats_ws_accesses(&spec)),
        check("tpe_bounds", tpe_bounds(&spec)),
    ];
    Ok(VerifyReport { checks })
}
