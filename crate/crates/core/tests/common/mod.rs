// SPDX-License-Identifier: Apache-2.0

//! Random platforms, configs and independent oracles shared by the
//! integration tests and the acceptance run.

#![allow(dead_code)]

pub mod trials;

use std::collections::{BTreeMap, BTreeSet};

use cellsim::cellconfig::{CellConfig, CommDecl, Workload};
use cellsim::hvcore::{CellId, Hypervisor};
use cellsim::machine::{build_platform, MachinePlatform, MemRegion, PermSet, PlatformSpec, Resource, PAGE_SIZE};
use rand::seq::IteratorRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    cellsim::irq::rng_from_seed(seed)
}

pub fn random_platform(rng: &mut impl Rng) -> MachinePlatform {
    let mut resources: Vec<Resource> = (0..rng.random_range(2..=8)).map(Resource::Cpu).collect();
    for k in 0..rng.random_range(1..=3u64) {
        let flags = match rng.random_range(0..4) {
            0 => PermSet::RW,
            1 => PermSet::READ,
            _ => PermSet::ALL,
        };
        resources.push(Resource::MemRegion(MemRegion::new(
            0x8000_0000 + k * 0x1000_0000,
            rng.random_range(16..=256) * PAGE_SIZE,
            flags,
        )));
    }
    if rng.random_bool(0.8) {
        resources.push(Resource::MmioDevice {
            name: "gic-dist".into(),
            base: 0x5000_0000,
            size: 0x1000,
        });
    }
    for i in 0..rng.random_range(0..=4u64) {
        resources.push(Resource::MmioDevice {
            name: format!("dev{i}"),
            base: 0x6000_0000 + i * 0x1_0000,
            size: PAGE_SIZE * rng.random_range(1..=4),
        });
    }
    for i in 0..rng.random_range(0..=3u16) {
        resources.push(Resource::IoPortRange {
            base: 0x1000 * (i + 1),
            len: 8,
        });
    }
    for i in 0..rng.random_range(0..=3u16) {
        resources.push(Resource::PciDevice(i << 3));
    }
    let first = rng.random_range(16..=40);
    resources.extend((first..first + rng.random_range(4..=32)).map(Resource::IrqLine));
    build_platform(PlatformSpec {
        name: "random".into(),
        resources,
        has_pci: rng.random_bool(0.5),
        gic_version: cellsim::machine::GicVersion::GicV2,
        bus: Default::default(),
        bench_irq: None,
    })
    .expect("generated platform is valid")
}

/// Root config listing every platform resource.
pub fn full_root(platform: &MachinePlatform) -> CellConfig {
    let mut c = CellConfig::named("root");
    for r in platform.resources() {
        match r {
            Resource::Cpu(n) => {
                c.cpus.insert(*n);
            }
            Resource::MemRegion(m) => c.mem.push(*m),
            Resource::IrqLine(n) => {
                c.irqs.insert(*n);
            }
            Resource::MmioDevice { name, .. } if name == "gic-dist" => {}
            other => c.devices.push(other.clone()),
        }
    }
    c
}

fn assignable_devices(platform: &MachinePlatform) -> Vec<Resource> {
    platform
        .resources()
        .iter()
        .filter(|r| match r {
            Resource::MmioDevice { name, .. } => name != "gic-dist",
            Resource::PciDevice(_) | Resource::IoPortRange { .. } => true,
            _ => false,
        })
        .cloned()
        .collect()
}

/// A syntactically and semantically valid config drawn from platform
/// resources. It may still collide with cells that already exist.
pub fn random_config(rng: &mut impl Rng, platform: &MachinePlatform, name: &str) -> CellConfig {
    let mut c = CellConfig::named(name);
    let cpus: Vec<u32> = platform
        .resources()
        .iter()
        .filter_map(|r| match r {
            Resource::Cpu(n) => Some(*n),
            _ => None,
        })
        .collect();
    let k = rng.random_range(1..=2.min(cpus.len()));
    c.cpus = cpus.iter().copied().choose_multiple(rng, k).into_iter().collect();
    let regions: Vec<MemRegion> = platform.mem_regions().copied().collect();
    let region = regions[rng.random_range(0..regions.len())];
    let pages = region.size / PAGE_SIZE;
    let len = rng.random_range(1..=pages.min(8));
    let start = rng.random_range(0..=pages - len);
    let flags = match rng.random_range(0..3) {
        0 => region.flags,
        1 if region.flags.contains(PermSet::RW) => PermSet::RW,
        _ => PermSet::READ,
    };
    c.mem.push(MemRegion::new(region.base + start * PAGE_SIZE, len * PAGE_SIZE, flags));
    for d in assignable_devices(platform) {
        if rng.random_bool(0.3) {
            c.devices.push(d);
        }
    }
    let k = rng.random_range(0..=3);
    c.irqs = platform.irq_lines().choose_multiple(rng, k).into_iter().collect();
    c.canonical()
}

/// Any valid config, unconstrained by a platform.
pub fn arbitrary_config(rng: &mut impl Rng) -> CellConfig {
    loop {
        let c = arbitrary_config_once(rng);
        if c.validate().is_ok() {
            return c;
        }
    }
}

fn arbitrary_config_once(rng: &mut impl Rng) -> CellConfig {
    let name_len = rng.random_range(1..=31);
    let alphabet = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-";
    let name: String = (0..name_len)
        .map(|_| alphabet[rng.random_range(0..alphabet.len())] as char)
        .collect();
    let mut c = CellConfig::named(name);
    for _ in 0..rng.random_range(1..=6) {
        c.cpus.insert(rng.random_range(0..64));
    }
    let mut base = rng.random_range(0..0x1000u64) * PAGE_SIZE;
    for _ in 0..rng.random_range(1..=4) {
        let size = rng.random_range(1..=64u64) * PAGE_SIZE;
        let flags = PermSet::from_bits(rng.random_range(1..16)).unwrap();
        c.mem.push(MemRegion::new(base, size, flags));
        base += size + rng.random_range(0..16u64) * PAGE_SIZE;
    }
    let mut mmio_base = 0x4000_0000u64;
    for i in 0..rng.random_range(0..=4) {
        let size = rng.random_range(1..=4u64) * PAGE_SIZE;
        c.devices.push(Resource::MmioDevice {
            name: format!("d{i}-{}", rng.random_range(0..1000)),
            base: mmio_base,
            size,
        });
        mmio_base += size;
    }
    let pci: BTreeSet<u16> = (0..rng.random_range(0..=3)).map(|_| rng.random()).collect();
    c.devices.extend(pci.into_iter().map(Resource::PciDevice));
    let mut port = 0u16;
    for _ in 0..rng.random_range(0..=3) {
        let len = rng.random_range(1..=16);
        c.devices.push(Resource::IoPortRange { base: port, len });
        port += len + rng.random_range(0..64);
    }
    for _ in 0..rng.random_range(0..=10) {
        c.irqs.insert(rng.random_range(0..1024));
    }
    let peers: BTreeSet<String> = (0..rng.random_range(0..=2)).map(|i| format!("peer{i}")).collect();
    for p in peers {
        c.comm_regions.push(CommDecl {
            peer: p,
            size: rng.random_range(1..=16u64) * PAGE_SIZE,
            vectors: rng.random_range(1..=32),
        });
    }
    c.workload = match rng.random_range(0..4) {
        0 => Workload::Idle,
        1 => Workload::Stress,
        2 => Workload::LatencyResponder,
        _ => Workload::Script(format!("scripts/s{}.script", rng.random_range(0..100))),
    };
    c.canonical()
}

/// Independent check of conservation and exclusivity against a model of
/// which configs are live.
///
/// Indivisible resources must be owned by the unique live cell listing
/// them, or by the root. Memory fragments must tile every platform region
/// exactly, and a fragment owned by a non-root cell must lie inside one of
/// its configured regions, while root fragments overlap no live cell's
/// region.
pub fn check_ledger(hv: &Hypervisor, live: &BTreeMap<CellId, CellConfig>) -> Result<(), String> {
    let keys = hv.ledger().keys();
    let mut seen = BTreeSet::new();
    let mut frags: Vec<(MemRegion, CellId)> = Vec::new();
    for (r, owner) in &keys {
        match r {
            Resource::MemRegion(m) => frags.push((*m, *owner)),
            other => {
                if !seen.insert(other.clone()) {
                    return Err(format!("{other} has two owners"));
                }
                let listed: Vec<CellId> = live
                    .iter()
                    .filter(|(_, c)| c.resources().contains(other))
                    .map(|(id, _)| *id)
                    .collect();
                let expect = match listed.as_slice() {
                    [] => CellId::ROOT,
                    [one] => *one,
                    many => return Err(format!("{other} listed by {many:?}")),
                };
                if *owner != expect {
                    return Err(format!("{other} owned by {owner}, model says {expect}"));
                }
            }
        }
    }
    let platform_other: BTreeSet<Resource> = hv
        .platform()
        .resources()
        .iter()
        .filter(|r| !matches!(r, Resource::MemRegion(_)))
        .cloned()
        .collect();
    if seen != platform_other {
        return Err("indivisible resources not conserved".into());
    }
    frags.sort_by_key(|(m, _)| m.base);
    for region in hv.platform().mem_regions() {
        let mut cursor = region.base;
        for (m, owner) in frags.iter().filter(|(m, _)| region.contains_range(m.base, m.size)) {
            if m.base != cursor {
                return Err(format!("gap or overlap at {cursor:#x}"));
            }
            cursor = m.end();
            if owner.is_root() {
                let clash = live
                    .iter()
                    .any(|(id, c)| !id.is_root() && c.mem.iter().any(|cm| cm.base < m.end() && m.base < cm.end()));
                if clash {
                    return Err(format!("root holds {:#x}+{:#x} of a live cell", m.base, m.size));
                }
            } else {
                let cfg = live.get(owner).ok_or(format!("fragment owned by dead cell {owner}"))?;
                if !cfg.mem.iter().any(|cm| cm.contains_range(m.base, m.size)) {
                    return Err(format!("cell {owner} owns unlisted {:#x}", m.base));
                }
            }
        }
        if cursor != region.end() {
            return Err(format!("region {:#x} not fully covered", region.base));
        }
    }
    let total: u64 = frags.iter().map(|(m, _)| m.size).sum();
    let want: u64 = hv.platform().mem_regions().map(|m| m.size).sum();
    if total != want {
        return Err(format!("fragments cover {total:#x} of {want:#x} bytes"));
    }
    Ok(())
}

/// Naive two-pass mean and population standard deviation.
pub fn naive_stats(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, var.sqrt(), max)
}
