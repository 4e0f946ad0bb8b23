// SPDX-License-Identifier: Apache-2.0

//! Run the distributor-heavy guest script and count the emulations it
//! costs, next to a guest that only touches its own devices.

use cellsim::cellconfig::parse_config;
use cellsim::hvcore::enable;
use cellsim::hvcore::workload::parse_script;
use cellsim::machine::{build_platform, PlatformSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let platform = build_platform(PlatformSpec::jetson_tk1())?;
    let mut hv = enable(platform, parse_config(include_str!("../configs/root.cellcfg"))?)?;
    let rtos = hv.create_cell(parse_config(include_str!("../configs/rtos.cellcfg"))?)?;
    hv.start_cell(rtos)?;

    for (name, text) in [
        ("guest.script", include_str!("../configs/guest.script")),
        ("preempt-rt.script", include_str!("../configs/preempt-rt.script")),
    ] {
        let script = parse_script(text)?;
        let before = hv.events().len();
        let t = hv.run_script(rtos, &script)?;
        println!(
            "{name:<18} direct {:>5}  emulated {:>5}  violations {}  new events {}",
            t.direct,
            t.emulated,
            t.violations,
            hv.events().len() - before
        );
    }
    println!("distributor emulations so far: {}", hv.cell(rtos)?.dist_emulations());
    Ok(())
}
