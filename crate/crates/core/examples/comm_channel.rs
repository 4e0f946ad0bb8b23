// SPDX-License-Identifier: Apache-2.0

//! Connect Linux and the RT cell through their declared shared-memory
//! channel, discover the virtual PCI device and exchange doorbells.

use cellsim::cellconfig::parse_config;
use cellsim::comm::{VIRT_DEVICE_ID, VIRT_VENDOR_ID};
use cellsim::hvcore::{enable, CellId};
use cellsim::irq::rng_from_seed;
use cellsim::machine::{build_platform, PlatformSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let platform = build_platform(PlatformSpec::jetson_tk1())?;
    let mut hv = enable(platform, parse_config(include_str!("../configs/root.cellcfg"))?)?;
    let rtos = hv.create_cell(parse_config(include_str!("../configs/rtos.cellcfg"))?)?;
    hv.start_cell(rtos)?;
    let ch = hv.connect_declared(CellId::ROOT, rtos)?;
    let region = hv.channel(ch)?.region();
    println!("channel {ch}: {:#x}+{:#x}", region.base, region.size);

    let bdf = hv.channel(ch)?.device_for(rtos).unwrap().bdf;
    let id = hv.pci_cfg_read(rtos, bdf, 0)?;
    println!(
        "rtos sees {:04x}:{:04x} at {bdf:#06x} (expected {VIRT_VENDOR_ID:04x}:{VIRT_DEVICE_ID:04x})",
        id & 0xffff,
        id >> 16
    );

    let mut rng = rng_from_seed(3);
    for (i, msg) in ["ping", "status?", "stop"].iter().enumerate() {
        hv.advance_clock(10_000);
        let d = hv.send(ch, CellId::ROOT, 0, msg.as_bytes(), (i % 2) as u16, &mut rng)?;
        let got = hv.read_shared(ch, rtos, 0, msg.len() as u64)?;
        println!(
            "linux -> rtos vector {} {:?}, doorbell after {} ns",
            d.vector,
            String::from_utf8_lossy(&got),
            d.delivered_at - d.sent_at
        );
    }
    println!("rtos polls {:?}", hv.poll(ch, rtos)?);
    print!("{}", hv.traffic_jsonl());
    Ok(())
}
