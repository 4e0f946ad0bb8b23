// SPDX-License-Identifier: Apache-2.0

//! Reproduces the interrupt-latency table on the Jetson TK1 preset.
//!
//! ```text
//! cargo run --release --example latency_table -- [samples] [seed]
//! ```
//!
//! Without arguments every scenario runs 100 000 samples with seed 7.

use cellsim::bench::{canonical_scenarios, render_table, run_report};
use cellsim::machine::{build_platform, PlatformSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let samples: u64 = args.next().map_or(Ok(100_000), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(7), |s| s.parse())?;

    let platform = build_platform(PlatformSpec::jetson_tk1())?;
    let scenarios = canonical_scenarios(Some(samples), seed);
    let start = std::time::Instant::now();
    let report = run_report(&platform, &scenarios, seed)?;
    print!("{}", render_table(&report));

    let mean = |i: usize| report.rows[i].1.mean_us;
    println!("hypervisor overhead at 10Hz: {:.0} ns", (mean(2) - mean(0)) * 1000.0);
    println!("elapsed: {:.2?}", start.elapsed());
    Ok(())
}
