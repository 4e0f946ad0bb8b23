// SPDX-License-Identifier: Apache-2.0

//! Walk one cell through create, load, start, fail, relaunch, stop and
//! destroy, printing the management log.

use cellsim::cellconfig::parse_config;
use cellsim::hvcore::{enable, Access};
use cellsim::machine::{build_platform, PlatformSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let platform = build_platform(PlatformSpec::jetson_tk1())?;
    let mut hv = enable(platform, parse_config(include_str!("../configs/root.cellcfg"))?)?;
    let id = hv.create_cell(parse_config(include_str!("../configs/rtos.cellcfg"))?)?;
    hv.load_image(id, 0x9000_0000, b"\x00\x00\xa0\xe1 rtos image")?;
    hv.start_cell(id)?;
    println!("{} is {}", hv.cell(id)?.name(), hv.cell(id)?.state());

    // Poking the UART, which stays with Linux, is fatal.
    let outcome = hv.handle_access(id, Access::mem_write(0x7000_6000, 4))?;
    println!("uart write: {outcome:?}, cell is {}", hv.cell(id)?.state());

    hv.relaunch_cell(id)?;
    println!("relaunched, image wiped: {}", hv.cell(id)?.image_is_empty());
    hv.stop_cell(id)?;
    hv.destroy_cell(id)?;
    hv.disable()?;

    for e in hv.events() {
        println!("{:>6} ns  cell {}  {:<22} {}", e.time, e.cell, e.cause.label(), e.cause.detail());
    }
    Ok(())
}
