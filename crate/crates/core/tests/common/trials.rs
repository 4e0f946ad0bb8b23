// SPDX-License-Identifier: Apache-2.0

//! Seeded randomized trials. Each returns `Err(reason)` on the first
//! property it finds broken.

use std::collections::{BTreeMap, HashMap, VecDeque};

use cellsim::cellconfig::{emit_binary, load_binary, parse_config, CellConfig, Workload};
use cellsim::comm::CommError;
use cellsim::hvcore::{enable, Access, AccessOutcome, Cause, CellId, CellState, Fault, HvError, Hypervisor};
use cellsim::machine::{build_platform, PermSet, PlatformSpec, Resource, GIC_DIST_NAME, PAGE_SIZE};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::{arbitrary_config, check_ledger, full_root, random_config, random_platform, rng};

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn non_root(hv: &Hypervisor) -> Vec<CellId> {
    hv.cells().map(|c| c.id()).filter(|id| !id.is_root()).collect()
}

fn check_all(hv: &Hypervisor, live: &BTreeMap<CellId, CellConfig>, want: &[Resource]) -> Result<(), String> {
    if !hv.is_enabled() {
        ensure!(hv.ledger().is_empty(), "disabled hypervisor kept ownership state");
        return Ok(());
    }
    hv.check_invariants().map_err(|e| e.to_string())?;
    ensure!(hv.ledger().coalesced_keys() == want, "ledger keys differ from platform resources");
    check_ledger(hv, live)
}

/// Random enable/create/load/start/stop/destroy/relaunch/channel/disable
/// sequence. Conservation and exclusivity are checked after every op, and
/// failed ops must leave the ledger untouched.
pub fn lifecycle(seed: u64, ops: usize) -> Result<(), String> {
    let mut rng = rng(seed);
    let platform = random_platform(&mut rng);
    let mut want = platform.resources().to_vec();
    want.sort();
    let root = full_root(&platform);
    let mut hv = Hypervisor::new(platform.clone());
    let mut live: BTreeMap<CellId, CellConfig> = BTreeMap::new();
    let mut serial = 0;
    for step in 0..ops {
        let ids = non_root(&hv);
        let target = ids.choose(&mut rng).copied().unwrap_or(CellId(u32::MAX));
        let before = hv.ledger().keys();
        let (what, ok) = if !hv.is_enabled() {
            ("enable", hv.enable(root.clone()).is_ok())
        } else {
            match rng.random_range(0..20) {
                0..=5 => {
                    serial += 1;
                    let cfg = random_config(&mut rng, &platform, &format!("c{serial}"));
                    match hv.create_cell(cfg) {
                        Ok(id) => {
                            live.insert(id, hv.cell(id).unwrap().config().clone());
                            ("create", true)
                        }
                        Err(_) => ("create", false),
                    }
                }
                6..=7 => {
                    let addr = live.get(&target).map_or(0, |c| c.mem[0].base);
                    ("load", hv.load_image(target, addr, &[0xa5; 16]).is_ok())
                }
                8..=10 => ("start", hv.start_cell(target).is_ok()),
                11..=12 => ("stop", hv.stop_cell(target).is_ok()),
                13..=14 => {
                    let ok = hv.destroy_cell(target).is_ok();
                    if ok {
                        live.remove(&target);
                    }
                    ("destroy", ok)
                }
                15 => ("relaunch", hv.relaunch_cell(target).is_ok()),
                16..=17 => {
                    let mut ends = ids.clone();
                    ends.push(CellId::ROOT);
                    let a = *ends.choose(&mut rng).unwrap();
                    let b = *ends.choose(&mut rng).unwrap();
                    let ok = hv.create_channel(a, b, PAGE_SIZE, rng.random_range(1..=4)).is_ok();
                    ("channel", ok)
                }
                18 => ("destroy-root", hv.destroy_cell(CellId::ROOT).is_ok()),
                _ => {
                    let ok = hv.disable().is_ok();
                    ensure!(ok == ids.is_empty(), "seed {seed} step {step}: disable with {} cells returned {ok}", ids.len());
                    if ok {
                        live.clear();
                    }
                    ("disable", ok)
                }
            }
        };
        if !ok && hv.is_enabled() {
            ensure!(hv.ledger().keys() == before, "seed {seed} step {step}: failed {what} changed the ledger");
        }
        check_all(&hv, &live, &want).map_err(|e| format!("seed {seed} step {step} after {what}: {e}"))?;
    }
    Ok(())
}

fn start_cells(hv: &mut Hypervisor, rng: &mut impl Rng, want: usize, tries: usize) -> Vec<CellId> {
    let platform = hv.platform().clone();
    let mut cells = Vec::new();
    for i in 0..tries {
        if cells.len() == want {
            break;
        }
        let mut cfg = random_config(rng, &platform, &format!("p{i}"));
        if i >= tries / 2 {
            cfg.devices.clear();
            cfg.irqs.clear();
        }
        if let Ok(id) = hv.create_cell(cfg) {
            hv.start_cell(id).expect("fresh cell starts");
            cells.push(id);
        }
    }
    cells
}

fn random_partition(seed: u64, cells: usize) -> (Hypervisor, Vec<CellId>, impl Rng) {
    let mut rng = rng(seed);
    let platform = random_platform(&mut rng);
    let root = full_root(&platform);
    let mut hv = enable(platform, root).expect("full root config is valid");
    let ids = start_cells(&mut hv, &mut rng, cells, 40);
    (hv, ids, rng)
}

/// One access by a running non-root cell to something another cell owns.
pub fn violation(seed: u64) -> Result<(), String> {
    let (mut hv, cells, mut rng) = random_partition(seed, 3);
    ensure!(!cells.is_empty(), "seed {seed}: no cell could be created");
    let x = *cells.choose(&mut rng).unwrap();
    let mut targets = Vec::new();
    for (r, owner) in hv.ledger().keys() {
        if owner == x {
            continue;
        }
        match r {
            Resource::MemRegion(m) => {
                let page = rng.random_range(0..m.size / PAGE_SIZE);
                let addr = m.base + page * PAGE_SIZE + 8 * rng.random_range(0..PAGE_SIZE / 8);
                targets.push(if rng.random_bool(0.5) {
                    Access::mem_read(addr, 8)
                } else {
                    Access::mem_write(addr, 8)
                });
            }
            Resource::MmioDevice { name, base, .. } if name != GIC_DIST_NAME => {
                targets.push(Access::mem_write(base, 4));
            }
            Resource::IoPortRange { base, .. } => targets.push(Access::io_read(base, 1)),
            _ => {}
        }
    }
    let access = targets.choose(&mut rng).cloned().ok_or(format!("seed {seed}: nothing foreign"))?;
    let states: Vec<(CellId, CellState)> = hv.cells().map(|c| (c.id(), c.state())).collect();
    let keys = hv.ledger().keys();
    let n = hv.events().len();
    let out = hv.handle_access(x, access.clone()).map_err(|e| e.to_string())?;
    ensure!(out == AccessOutcome::Violation, "seed {seed}: {access} by {x} gave {out:?}");
    ensure!(hv.cell(x).unwrap().state() == CellState::Failed, "seed {seed}: cell {x} not failed");
    ensure!(hv.events().len() == n + 1, "seed {seed}: {} events appended", hv.events().len() - n);
    let ev = hv.events().last().unwrap();
    ensure!(
        ev.cell == x && ev.cause == Cause::AccessViolation(Fault::Access(access)),
        "seed {seed}: wrong event {ev:?}"
    );
    for (id, st) in states {
        if id != x {
            ensure!(hv.cell(id).unwrap().state() == st, "seed {seed}: bystander {id} changed state");
        }
    }
    ensure!(hv.ledger().keys() == keys, "seed {seed}: violation changed ownership");
    Ok(())
}

/// Accesses a running cell may make without involving the hypervisor.
fn owned_accesses(hv: &Hypervisor, id: CellId) -> Vec<Access> {
    let mut out = Vec::new();
    for r in hv.ledger().owned_by(id) {
        match r {
            Resource::MemRegion(m) => {
                let flags = if id.is_root() {
                    m.flags
                } else {
                    let cfg = hv.cell(id).unwrap().config();
                    cfg.mem.iter().find(|c| c.contains_range(m.base, m.size)).unwrap().flags
                };
                let last = m.end() - 8;
                for addr in [m.base, last] {
                    if flags.contains(PermSet::READ) {
                        out.push(Access::mem_read(addr, 8));
                    }
                    if flags.contains(PermSet::WRITE) {
                        out.push(Access::mem_write(addr, 4));
                    }
                }
            }
            Resource::MmioDevice { name, base, size } if name != GIC_DIST_NAME => {
                out.push(Access::mem_read(base, 4));
                out.push(Access::mem_write(base + size - 4, 4));
            }
            Resource::IoPortRange { base, len } => {
                out.push(Access::io_write(base, 1));
                out.push(Access::io_read(base + len - 1, 1));
            }
            _ => {}
        }
    }
    out
}

/// `steps` rounds of built-in workloads plus one owned access per cell,
/// with no interrupts. Nothing may reach the event log.
pub fn silence(seed: u64, steps: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    let platform = random_platform(&mut rng);
    let mut hv = enable(platform.clone(), full_root(&platform)).expect("full root config is valid");
    for i in 0..4 {
        let mut cfg = random_config(&mut rng, &platform, &format!("s{i}"));
        cfg.workload = [Workload::Idle, Workload::Stress, Workload::LatencyResponder][i % 3].clone();
        if let Ok(id) = hv.create_cell(cfg) {
            hv.start_cell(id).unwrap();
        }
    }
    let menu: Vec<(CellId, Vec<Access>)> = hv.cells().map(|c| (c.id(), owned_accesses(&hv, c.id()))).collect();
    let mark = hv.events().len();
    for n in 0..steps {
        let tally = hv.tick_all(n).map_err(|e| e.to_string())?;
        ensure!(tally.emulated == 0 && tally.violations == 0, "seed {seed}: workload trapped at step {n}");
        for (id, accesses) in &menu {
            if let Some(a) = accesses.choose(&mut rng) {
                let out = hv.handle_access(*id, a.clone()).map_err(|e| e.to_string())?;
                ensure!(out == AccessOutcome::Direct, "seed {seed}: {a} by {id} gave {out:?}");
            }
        }
    }
    ensure!(hv.events().len() == mark, "seed {seed}: {} events in steady state", hv.events().len() - mark);
    Ok(())
}

/// Binary and text round trips of one arbitrary config, plus byte
/// identity of re-emission after shuffling list fields.
pub fn codec(seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    let cfg = arbitrary_config(&mut rng);
    let bytes = emit_binary(&cfg);
    let back = load_binary(&bytes).map_err(|e| format!("seed {seed}: {e}"))?;
    ensure!(back == cfg, "seed {seed}: binary round trip changed the config");
    ensure!(emit_binary(&back) == bytes, "seed {seed}: re-emission differs");
    let mut shuffled = cfg.clone();
    shuffled.mem.shuffle(&mut rng);
    shuffled.devices.shuffle(&mut rng);
    shuffled.comm_regions.shuffle(&mut rng);
    ensure!(emit_binary(&shuffled) == bytes, "seed {seed}: emission depends on list order");
    let text = parse_config(&cfg.to_dsl()).map_err(|e| format!("seed {seed}: {e}"))?;
    ensure!(text == cfg, "seed {seed}: text round trip changed the config");
    Ok(())
}

/// Random send/poll interleaving on one channel between two of three
/// running cells, with a shadow queue per receiver.
pub fn comm(seed: u64, ops: usize) -> Result<(), String> {
    let mut rng = rng(seed);
    let platform = build_platform(PlatformSpec::jetson_tk1()).unwrap();
    let mut hv = enable(platform.clone(), full_root(&platform)).unwrap();
    let mut cells = start_cells(&mut hv, &mut rng, 2, 60);
    cells.push(CellId::ROOT);
    ensure!(cells.len() == 3, "seed {seed}: could not build three cells");
    cells.shuffle(&mut rng);
    let vectors = rng.random_range(1..=8);
    let (a, b, third) = (cells[0], cells[1], cells[2]);
    let ch = match hv.create_channel(a, b, PAGE_SIZE, vectors) {
        Ok(ch) => ch,
        Err(CommError::NoSpace(_)) => hv.create_channel(b, a, PAGE_SIZE, vectors).map_err(|e| e.to_string())?,
        Err(e) => return Err(format!("seed {seed}: {e}")),
    };
    let region = hv.channel(ch).unwrap().region();
    let mut model: HashMap<CellId, VecDeque<u16>> = HashMap::new();
    let (mut sent, mut received) = (0u64, 0u64);
    for step in 0..ops {
        hv.advance_clock(rng.random_range(0..1000));
        let me = if rng.random_bool(0.5) { a } else { b };
        let peer = if me == a { b } else { a };
        match rng.random_range(0..10) {
            0..=4 => {
                let v = rng.random_range(0..vectors);
                let off = rng.random_range(0..PAGE_SIZE - 8);
                let payload: [u8; 8] = rng.random();
                let d = hv.send(ch, me, off, &payload, v, &mut rng).map_err(|e| format!("seed {seed} step {step}: {e}"))?;
                ensure!(d.delivered_at >= d.sent_at, "seed {seed}: doorbell went back in time");
                ensure!(
                    hv.read_shared(ch, peer, off, 8).unwrap() == payload,
                    "seed {seed} step {step}: peer does not see the payload"
                );
                model.entry(peer).or_default().push_back(v);
                sent += 1;
            }
            5..=7 => {
                let got = hv.poll(ch, me).map_err(|e| e.to_string())?;
                let want: Vec<u16> = model.entry(me).or_default().drain(..).collect();
                ensure!(got == want, "seed {seed} step {step}: poll gave {got:?}, expected {want:?}");
                received += got.len() as u64;
            }
            8 => {
                let err = hv.send(ch, third, 0, &[1], 0, &mut rng);
                ensure!(
                    err == Err(CommError::NotEndpoint { ch, cell: third }),
                    "seed {seed}: third party sent: {err:?}"
                );
                for id in [a, b] {
                    let out = hv.handle_access(id, Access::mem_read(region.base, 8)).unwrap();
                    ensure!(out == AccessOutcome::Direct, "seed {seed}: endpoint {id} denied its region");
                }
            }
            _ => {
                let addr = region.base + 8 * rng.random_range(0..region.size / 8);
                let n = hv.events().len();
                let out = hv.handle_access(third, Access::mem_write(addr, 8)).unwrap();
                ensure!(out == AccessOutcome::Violation, "seed {seed}: third party reached the region");
                ensure!(hv.events().len() == n + 1, "seed {seed}: violation not logged once");
                ensure!(hv.cell(third).unwrap().state() == CellState::Failed, "seed {seed}: third party survived");
                hv.relaunch_cell(third).map_err(|e: HvError| e.to_string())?;
            }
        }
    }
    for id in [a, b] {
        let got = hv.poll(ch, id).unwrap();
        let want: Vec<u16> = model.entry(id).or_default().drain(..).collect();
        ensure!(got == want, "seed {seed}: final poll mismatch");
        received += got.len() as u64;
    }
    ensure!(sent == received, "seed {seed}: {sent} doorbells sent, {received} received");
    ensure!(hv.traffic().len() as u64 == sent, "seed {seed}: traffic log holds {} records", hv.traffic().len());
    Ok(())
}
