// SPDX-License-Identifier: Apache-2.0

//! One access of each kind and the trap it causes, if any.

use cellsim::cellconfig::parse_config;
use cellsim::hvcore::{enable, Access};
use cellsim::irq::rng_from_seed;
use cellsim::machine::{build_platform, PlatformSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let platform = build_platform(PlatformSpec::jetson_tk1())?;
    let mut hv = enable(platform, parse_config(include_str!("../configs/root.cellcfg"))?)?;
    let rtos = hv.create_cell(parse_config(include_str!("../configs/rtos.cellcfg"))?)?;
    hv.start_cell(rtos)?;
    let mut rng = rng_from_seed(1);

    let probes = [
        ("own RAM", Access::mem_write(0x9000_0000, 8)),
        ("own GPIO", Access::mem_read(0x6000_d000, 4)),
        ("cpuid", Access::instr("cpuid")),
        ("GIC distributor", Access::mem_write(0x5004_1100, 4)),
    ];
    for (what, access) in probes {
        let before = hv.events().len();
        let outcome = hv.handle_access(rtos, access)?;
        let trap = hv.events()[before..].first().map_or("-", |e| e.cause.label());
        println!("{what:<16} {:<9} trap: {trap}", format!("{outcome:?}"));
    }

    hv.advance_clock(1_000);
    let d = hv.raise_irq(64, hv.clock(), &mut rng)?;
    println!("irq 64           {:?} after {} µs, trap: {}", d.path, d.latency_us, hv.events().last().unwrap().cause.label());

    let outcome = hv.handle_access(rtos, Access::mem_read(0x8000_0000, 8))?;
    println!("{:<16} {:<9} trap: {}", "Linux RAM", format!("{outcome:?}"), hv.events().last().unwrap().cause.label());
    println!("cell is now {}", hv.cell(rtos)?.state());
    Ok(())
}
