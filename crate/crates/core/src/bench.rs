// SPDX-License-Identifier: Apache-2.0

//! Interrupt-latency benchmark.
//!
//! Mirrors an external latency probe: a GPIO interrupt is raised at a fixed
//! rate, a responder cell answers it by toggling a GPIO back, and the delay
//! between the two edges is recorded. Each scenario runs on a fresh
//! [`Hypervisor`] with its own RNG stream, so scenarios are independent and
//! can run in parallel.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cellconfig::{CellConfig, Workload};
use crate::hvcore::{CellId, HvError, Hypervisor};
use crate::irq::{rng_from_seed, stream_seed, IrqDelivery, IrqError, LatencyStats, Scenario, RNG_NAME};
use crate::machine::{MachinePlatform, MemRegion, PermSet, Resource, PAGE_SIZE};

/// Samples per scenario in a full run: four hours at the scenario's rate.
pub const FULL_RUN_SECONDS: u64 = 4 * 3600;

const CELL_MEM: u64 = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BenchError {
    #[error("no samples to summarize")]
    EmptySamples,
    #[error("platform cannot host the benchmark: {0}")]
    Platform(String),
    #[error("workload step violated isolation in cell {0}")]
    Violation(CellId),
    #[error(transparent)]
    Irq(#[from] IrqError),
    #[error(transparent)]
    Hv(#[from] HvError),
}

/// Mean, population standard deviation and maximum.
///
/// Sums are compensated (Neumaier), so the result does not drift with the
/// sample count.
pub fn summarize(samples: &[f64]) -> Result<LatencyStats, BenchError> {
    if samples.is_empty() {
        return Err(BenchError::EmptySamples);
    }
    let n = samples.len() as f64;
    let (min, max) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let mean = (neumaier(samples.iter().copied()) / n).clamp(min, max);
    let var = neumaier(samples.iter().map(|&x| (x - mean) * (x - mean))) / n;
    Ok(LatencyStats {
        mean_us: mean,
        sigma_us: var.sqrt(),
        max_us: max,
        n: samples.len() as u64,
    })
}

fn neumaier(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// A prepared machine for one scenario.
#[derive(Clone, Debug)]
pub struct Testbed {
    pub hv: Hypervisor,
    /// Cell answering the interrupt; the root cell when the hypervisor is off.
    pub responder: CellId,
    pub line: u32,
}

fn carve(platform: &MachinePlatform) -> Result<(MemRegion, MemRegion), BenchError> {
    let ram = platform
        .mem_regions()
        .filter(|m| m.flags.contains(PermSet::RW))
        .max_by_key(|m| m.size)
        .ok_or_else(|| BenchError::Platform("no writable memory".into()))?;
    let chunk = CELL_MEM.min(ram.size / 4 / PAGE_SIZE * PAGE_SIZE);
    if chunk == 0 {
        return Err(BenchError::Platform("memory too small".into()));
    }
    let top = ram.end() - chunk;
    Ok((
        MemRegion::new(top, chunk, PermSet::RW),
        MemRegion::new(top - chunk, chunk, PermSet::RW),
    ))
}

/// Builds the machine for a scenario: the root cell, a responder cell on
/// the last CPU owning the benchmark IRQ and the GPIO, and under stress a
/// loaded neighbour. With fewer than three CPUs the root cell itself
/// carries the load. With the hypervisor off nothing is partitioned.
pub fn testbed(platform: &MachinePlatform, vmm_on: bool, stress: bool) -> Result<Testbed, BenchError> {
    let line = platform
        .bench_irq()
        .or_else(|| platform.irq_lines().next())
        .ok_or_else(|| BenchError::Platform("no IRQ lines".into()))?;
    if !vmm_on {
        return Ok(Testbed {
            hv: Hypervisor::new(platform.clone()),
            responder: CellId::ROOT,
            line,
        });
    }
    let cpus: Vec<u32> = platform
        .resources()
        .iter()
        .filter_map(|r| match r {
            Resource::Cpu(c) => Some(*c),
            _ => None,
        })
        .collect();
    if cpus.len() < 2 {
        return Err(BenchError::Platform("need at least two CPUs".into()));
    }
    let (resp_mem, stress_mem) = carve(platform)?;

    let mut root = CellConfig::named("root");
    root.cpus = cpus.iter().copied().collect();
    root.mem = platform.mem_regions().copied().collect();
    let neighbour = stress && cpus.len() >= 3;
    if stress && !neighbour {
        root.workload = Workload::Stress;
    }
    let mut hv = crate::hvcore::enable(platform.clone(), root)?;

    let mut resp = CellConfig::named("responder");
    resp.cpus.insert(cpus[cpus.len() - 1]);
    resp.mem.push(resp_mem);
    resp.irqs.insert(line);
    if let Some(Resource::MmioDevice { name, base, size }) = platform.mmio("gpio") {
        resp.devices.push(Resource::MmioDevice {
            name: name.clone(),
            base: *base,
            size: *size,
        });
    }
    resp.workload = Workload::LatencyResponder;
    let responder = hv.create_cell(resp)?;
    hv.start_cell(responder)?;

    if neighbour {
        let mut load = CellConfig::named("stress");
        load.cpus.insert(cpus[cpus.len() - 2]);
        load.mem.push(stress_mem);
        load.workload = Workload::Stress;
        let id = hv.create_cell(load)?;
        hv.start_cell(id)?;
    }
    Ok(Testbed { hv, responder, line })
}

fn simulate(platform: &MachinePlatform, sc: &Scenario, keep: bool) -> Result<(Vec<f64>, Vec<IrqDelivery>), BenchError> {
    sc.validate()?;
    let Testbed { mut hv, line, .. } = testbed(platform, sc.vmm_on, sc.stress)?;
    let mut rng = rng_from_seed(sc.seed);
    let period = sc.period_ns();
    let mut samples = Vec::with_capacity(sc.n_samples as usize);
    let mut deliveries = Vec::new();
    for i in 0..sc.n_samples {
        let d = hv.raise_irq(line, i * period, &mut rng)?;
        if sc.vmm_on {
            let tally = hv.tick_all(i)?;
            if tally.violations > 0 {
                let failed = hv
                    .cells()
                    .find(|c| c.state() == crate::hvcore::CellState::Failed)
                    .map_or(CellId::ROOT, |c| c.id());
                return Err(BenchError::Violation(failed));
            }
        }
        samples.push(d.latency_us);
        if keep {
            deliveries.push(d);
        }
    }
    Ok((samples, deliveries))
}

/// Runs one scenario and returns its statistics and every delivery.
pub fn run_scenario(platform: &MachinePlatform, sc: &Scenario) -> Result<(LatencyStats, Vec<IrqDelivery>), BenchError> {
    let (samples, deliveries) = simulate(platform, sc, true)?;
    Ok((summarize(&samples)?, deliveries))
}

/// The six VMM/frequency/stress combinations of the reference table, in
/// table order. Scenario `i` is seeded with `stream_seed(seed, i)`.
/// `samples = None` runs the full four hours per scenario.
pub fn canonical_scenarios(samples: Option<u64>, seed: u64) -> Vec<Scenario> {
    let combos = [
        (false, 10.0, false),
        (false, 50.0, false),
        (true, 10.0, false),
        (true, 50.0, false),
        (true, 10.0, true),
        (true, 50.0, true),
    ];
    combos
        .iter()
        .enumerate()
        .map(|(i, &(vmm_on, freq_hz, stress))| Scenario {
            vmm_on,
            freq_hz,
            stress,
            n_samples: samples.unwrap_or(freq_hz as u64 * FULL_RUN_SECONDS),
            seed: stream_seed(seed, i as u64),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<(Scenario, LatencyStats)>,
    pub rng_info: String,
    pub platform_name: String,
}

/// Runs scenarios in parallel; rows keep the input order.
pub fn run_report(platform: &MachinePlatform, scenarios: &[Scenario], base_seed: u64) -> Result<BenchReport, BenchError> {
    let rows = scenarios
        .par_iter()
        .map(|sc| {
            let (samples, _) = simulate(platform, sc, false)?;
            Ok((*sc, summarize(&samples)?))
        })
        .collect::<Result<Vec<_>, BenchError>>()?;
    Ok(BenchReport {
        rows,
        rng_info: format!("{RNG_NAME}, base seed {base_seed}, scenario i uses seed ^ splitmix64(i)"),
        platform_name: platform.name().to_string(),
    })
}

fn freq_label(hz: f64) -> String {
    if hz.fract() == 0.0 {
        format!("{hz:.0}Hz")
    } else {
        format!("{hz}Hz")
    }
}

/// Fixed-width table in µs with two decimals.
pub fn render_table(report: &BenchReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<4} {:>6} {:<6} {:>6} {:>6} {:>6}", "VMM", "Freq", "Stress", "µ", "σ", "Max");
    for (sc, st) in &report.rows {
        let _ = writeln!(
            out,
            "{:<4} {:>6} {:<6} {:>6.2} {:>6.2} {:>6.2}",
            if sc.vmm_on { "on" } else { "off" },
            freq_label(sc.freq_hz),
            if sc.stress { "yes" } else { "no" },
            st.mean_us,
            st.sigma_us,
            st.max_us
        );
    }
    if !report.rows.is_empty() {
        let _ = writeln!(out, "\nplatform: {}", report.platform_name);
        let _ = writeln!(out, "σ is the population standard deviation");
        let _ = writeln!(out, "rng: {}", report.rng_info);
    }
    out
}

pub const CSV_HEADER: &str = "vmm,freq_hz,stress,mean_us,sigma_us,max_us,n,seed";

/// CSV with six-decimal floats and LF line endings.
pub fn export_csv(report: &BenchReport) -> Vec<u8> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (sc, st) in &report.rows {
        let _ = writeln!(
            out,
            "{},{:.6},{},{:.6},{:.6},{:.6},{},{}",
            if sc.vmm_on { "on" } else { "off" },
            sc.freq_hz,
            if sc.stress { "yes" } else { "no" },
            st.mean_us,
            st.sigma_us,
            st.max_us,
            st.n,
            sc.seed
        );
    }
    out.into_bytes()
}
