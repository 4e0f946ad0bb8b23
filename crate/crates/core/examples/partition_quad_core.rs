// SPDX-License-Identifier: Apache-2.0

//! Lift Linux into the root cell, then split the quad core into a Linux
//! half and a real-time half.

use cellsim::cellconfig::parse_config;
use cellsim::hvcore::{enable, CellId};
use cellsim::machine::{build_platform, PlatformSpec, Resource};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let platform = build_platform(PlatformSpec::jetson_tk1())?;
    let root = parse_config(include_str!("../configs/root.cellcfg"))?;
    let mut hv = enable(platform, root)?;
    println!("after enable, root owns {} resources", hv.ledger().owned_by(CellId::ROOT).len());

    let rtos = hv.create_cell(parse_config(include_str!("../configs/rtos.cellcfg"))?)?;
    hv.start_cell(rtos)?;
    for id in [CellId::ROOT, rtos] {
        let cpus: Vec<u32> = hv
            .ledger()
            .owned_by(id)
            .iter()
            .filter_map(|r| match r {
                Resource::Cpu(n) => Some(*n),
                _ => None,
            })
            .collect();
        let cell = hv.cell(id)?;
        println!("cell {id} {:<6} {:<8} cpus {cpus:?}", cell.name(), cell.state());
    }

    match hv.create_cell(parse_config(include_str!("../configs/logger.cellcfg"))?) {
        Ok(_) => println!("logger unexpectedly accepted"),
        Err(e) => println!("logger rejected: {e}"),
    }

    hv.destroy_cell(rtos)?;
    println!("after destroy, root owns {} resources", hv.ledger().owned_by(CellId::ROOT).len());
    hv.check_invariants()?;
    Ok(())
}
