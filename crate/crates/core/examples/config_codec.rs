// SPDX-License-Identifier: Apache-2.0

//! Text config to binary and back, with a hex dump of the header.

use cellsim::cellconfig::{emit_binary, load_binary, parse_config};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = parse_config(include_str!("../configs/rtos.cellcfg"))?;
    let bytes = emit_binary(&cfg);
    println!("{} bytes", bytes.len());
    for (i, chunk) in bytes.chunks(16).take(4).enumerate() {
        let hex: Vec<String> = chunk.iter().map(|b| format!("{b:02x}")).collect();
        println!("{:04x}  {}", i * 16, hex.join(" "));
    }
    let back = load_binary(&bytes)?;
    assert_eq!(back, cfg);
    println!("decoded and re-rendered:\n{}", back.to_dsl());

    let mut broken = bytes.clone();
    broken.truncate(bytes.len() - 3);
    println!("truncated: {}", load_binary(&broken).unwrap_err());
    Ok(())
}
