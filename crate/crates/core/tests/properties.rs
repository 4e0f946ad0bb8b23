// SPDX-License-Identifier: Apache-2.0

mod common;

use cellsim::cellconfig::{emit_binary, load_binary, parse_config, CellConfig, CommDecl, Workload};
use cellsim::machine::{MemRegion, PermSet, Resource, PAGE_SIZE};
use proptest::prelude::*;

use common::trials;

fn run(name: &str, seeds: std::ops::Range<u64>, f: impl Fn(u64) -> Result<(), String>) {
    for s in seeds {
        if let Err(e) = f(s) {
            panic!("{name}: {e}");
        }
    }
}

#[test]
fn lifecycle_conserves_ownership() {
    run("lifecycle", 0..300, |s| trials::lifecycle(s, 40));
}

#[test]
fn foreign_access_is_fatal() {
    run("violation", 0..300, trials::violation);
}

#[test]
fn owned_access_is_silent() {
    run("silence", 0..20, |s| trials::silence(s, 200));
}

#[test]
fn codec_round_trips() {
    run("codec", 0..300, trials::codec);
}

#[test]
fn doorbells_arrive_once_in_order() {
    run("comm", 0..100, |s| trials::comm(s, 200));
}

fn name() -> impl Strategy<Value = String> {
    "[A-Za-z0-9_-]{1,31}"
}

fn config() -> impl Strategy<Value = CellConfig> {
    (
        name(),
        prop::collection::btree_set(0u32..256, 1..8),
        prop::collection::vec((1u64..32, 0u64..8, 1u32..16), 1..5),
        prop::collection::btree_map("[a-z]{1,12}", 1u64..4, 0..4),
        prop::collection::btree_set(any::<u16>(), 0..4),
        prop::collection::btree_set(0u32..1020, 0..12),
        prop::option::of((1u64..16, 1u16..64)),
        0u8..4,
    )
        .prop_map(|(name, cpus, mem, mmio, pci, irqs, comm, wl)| {
            let mut c = CellConfig::named(name.clone());
            c.cpus = cpus;
            let mut base = 0x8000_0000u64;
            for (pages, gap, flags) in mem {
                c.mem.push(MemRegion::new(base, pages * PAGE_SIZE, PermSet::from_bits(flags).unwrap()));
                base += (pages + gap) * PAGE_SIZE;
            }
            let mut mmio_base = 0x4000_0000u64;
            for (dev, pages) in mmio {
                c.devices.push(Resource::MmioDevice {
                    name: dev,
                    base: mmio_base,
                    size: pages * PAGE_SIZE,
                });
                mmio_base += pages * PAGE_SIZE;
            }
            c.devices.extend(pci.into_iter().map(Resource::PciDevice));
            c.irqs = irqs;
            if let Some((pages, vectors)) = comm {
                c.comm_regions.push(CommDecl {
                    peer: format!("{name}-peer").chars().take(31).collect(),
                    size: pages * PAGE_SIZE,
                    vectors,
                });
            }
            c.workload = match wl {
                0 => Workload::Idle,
                1 => Workload::Stress,
                2 => Workload::LatencyResponder,
                _ => Workload::Script(format!("{name}.script")),
            };
            c.canonical()
        })
        .prop_filter("valid", |c| c.validate().is_ok())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn binary_and_text_round_trip(cfg in config(), rot in 0usize..8) {
        let bytes = emit_binary(&cfg);
        prop_assert_eq!(&load_binary(&bytes).unwrap(), &cfg);
        let mut turned = cfg.clone();
        let n = turned.devices.len().max(1);
        turned.devices.rotate_left(rot % n);
        turned.mem.reverse();
        prop_assert_eq!(emit_binary(&turned), bytes);
        prop_assert_eq!(parse_config(&cfg.to_dsl()).unwrap(), cfg);
    }

    #[test]
    fn truncation_never_panics(cfg in config(), cut in any::<prop::sample::Index>()) {
        let bytes = emit_binary(&cfg);
        let cut = cut.index(bytes.len());
        prop_assert!(load_binary(&bytes[..cut]).is_err());
    }
}
