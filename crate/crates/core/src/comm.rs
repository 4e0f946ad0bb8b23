// SPDX-License-Identifier: Apache-2.0

//! Inter-cell communication.
//!
//! A channel is a page-aligned region of the first cell's memory that both
//! endpoints may access, plus a set of doorbell vectors. Each endpoint sees
//! the channel as a virtual PCI device with an MSI-X capability; ringing a
//! doorbell queues the vector at the peer and costs one reinjected
//! interrupt.
//!
//! Payload bytes are written into the shared buffer directly and never
//! trap. Doorbells are recorded in a separate traffic log rather than the
//! trap-event log.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hvcore::{Cause, CellId, CellState, Grant, HvError, Hypervisor, MgmtOp};
use crate::irq::{lattice_ns, sample_latency};
use crate::machine::{bus_load, MemRegion, PermSet, Resource, PAGE_SIZE};

pub const VIRT_VENDOR_ID: u16 = 0x110A;
pub const VIRT_DEVICE_ID: u16 = 0x4106;
pub const MSIX_CAP_ID: u8 = 0x11;
const CAP_OFFSET: u16 = 0x40;

/// Virtual PCI function exposing a channel to one endpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtPciDevice {
    pub bdf: u16,
    pub vendor_id: u16,
    pub device_id: u16,
    pub msix_vectors: u16,
}

impl VirtPciDevice {
    fn new(bdf: u16, vectors: u16) -> Self {
        Self {
            bdf,
            vendor_id: VIRT_VENDOR_ID,
            device_id: VIRT_DEVICE_ID,
            msix_vectors: vectors,
        }
    }

    /// Dword of configuration space at a 4-byte aligned offset.
    pub fn config_dword(&self, offset: u16) -> u32 {
        let ids = u32::from(self.device_id) << 16 | u32::from(self.vendor_id);
        match offset {
            0x00 | 0x2c => ids,
            // status: capability list present
            0x04 => 0x0010 << 16,
            // class 0xff, subclass 0, prog-if 0, revision 0
            0x08 => 0xff00_0000,
            0x34 => u32::from(CAP_OFFSET),
            CAP_OFFSET => (u32::from(self.msix_vectors) - 1) << 16 | u32::from(MSIX_CAP_ID),
            _ => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    AtoB,
    BtoA,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::AtoB => "a->b",
            Direction::BtoA => "b->a",
        }
    }
}

/// One doorbell, as logged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficRecord {
    pub t: u64,
    pub ch: u32,
    pub dir: Direction,
    pub vector: u16,
    pub len: u64,
}

#[derive(Serialize)]
struct TrafficLine {
    t: u64,
    ch: u32,
    dir: &'static str,
    vector: u16,
    len: u64,
}

impl TrafficRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&TrafficLine {
            t: self.t,
            ch: self.ch,
            dir: self.dir.as_str(),
            vector: self.vector,
            len: self.len,
        })
        .expect("traffic serialization cannot fail")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    id: u32,
    a: CellId,
    b: CellId,
    region: MemRegion,
    vectors: u16,
    dev_a: VirtPciDevice,
    dev_b: VirtPciDevice,
    buffer: Vec<u8>,
    pending_a: VecDeque<u16>,
    pending_b: VecDeque<u16>,
}

impl Channel {
    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn endpoints(&self) -> (CellId, CellId) {
        (self.a, self.b)
    }

    pub fn region(&self) -> MemRegion {
        self.region
    }

    pub fn vectors(&self) -> u16 {
        self.vectors
    }

    pub fn device_for(&self, cell: CellId) -> Option<&VirtPciDevice> {
        if cell == self.a {
            Some(&self.dev_a)
        } else if cell == self.b {
            Some(&self.dev_b)
        } else {
            None
        }
    }

    /// Vectors waiting for `cell`, oldest first.
    pub fn pending(&self, cell: CellId) -> Option<&VecDeque<u16>> {
        if cell == self.a {
            Some(&self.pending_a)
        } else if cell == self.b {
            Some(&self.pending_b)
        } else {
            None
        }
    }
}

/// Timing of one doorbell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoorbellDelivery {
    pub vector: u16,
    pub sent_at: u64,
    pub delivered_at: u64,
    pub latency_us: f64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CommError {
    #[error("no cell {0}")]
    NoSuchCell(CellId),
    #[error("no channel {0}")]
    NoSuchChannel(u32),
    #[error("a channel needs two distinct cells")]
    SelfChannel,
    #[error("shared region size {0:#x} is not a non-zero multiple of the page size")]
    BadSize(u64),
    #[error("vector {vector} out of range (channel has {vectors})")]
    BadVector { vector: u16, vectors: u16 },
    #[error("cell {cell} is not an endpoint of channel {ch}")]
    NotEndpoint { ch: u32, cell: CellId },
    #[error("[{offset:#x}, +{len:#x}) exceeds the shared region")]
    OutOfRegion { offset: u64, len: u64 },
    #[error("config space offset {0:#x} is not dword aligned")]
    BadAlignment(u16),
    #[error("no room for a {0:#x}-byte shared region or a free device slot")]
    NoSpace(u64),
    #[error("cells `{a}` and `{b}` do not declare matching comm regions for each other")]
    NotDeclared { a: String, b: String },
    #[error(transparent)]
    Hv(#[from] HvError),
}

impl Hypervisor {
    pub fn channels(&self) -> impl Iterator<Item = &Channel> + '_ {
        self.channels.values()
    }

    pub fn channel(&self, ch: u32) -> Result<&Channel, CommError> {
        self.channels.get(&ch).ok_or(CommError::NoSuchChannel(ch))
    }

    pub fn traffic(&self) -> &[TrafficRecord] {
        &self.traffic
    }

    pub fn traffic_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.traffic {
            out.push_str(&r.to_json());
            out.push('\n');
        }
        out
    }

    fn require_cell(&self, id: CellId) -> Result<(), CommError> {
        match self.cell(id) {
            Ok(_) => Ok(()),
            Err(HvError::NoSuchCell(c)) => Err(CommError::NoSuchCell(c)),
            Err(e) => Err(e.into()),
        }
    }

    /// Opens a channel between `a` and `b`. The shared region is taken from
    /// the top of `a`'s writable memory, clear of existing channels; it
    /// stays owned by `a` and becomes accessible to `b`.
    pub fn create_channel(&mut self, a: CellId, b: CellId, size: u64, vectors: u16) -> Result<u32, CommError> {
        if !self.is_enabled() {
            return Err(HvError::NotEnabled.into());
        }
        self.require_cell(a)?;
        self.require_cell(b)?;
        if a == b {
            return Err(CommError::SelfChannel);
        }
        if size == 0 || !size.is_multiple_of(PAGE_SIZE) {
            return Err(CommError::BadSize(size));
        }
        if vectors == 0 {
            return Err(CommError::BadVector { vector: 0, vectors });
        }
        let region = self.allocate_shared(a, size).ok_or(CommError::NoSpace(size))?;
        let bdf_a = self.free_bdf(a).ok_or(CommError::NoSpace(size))?;
        let bdf_b = self.free_bdf(b).ok_or(CommError::NoSpace(size))?;
        let id = self.next_channel;
        self.next_channel += 1;
        self.ledger_mut().add_grant(id, Grant { region, owner: a, peer: b });
        self.channels.insert(
            id,
            Channel {
                id,
                a,
                b,
                region,
                vectors,
                dev_a: VirtPciDevice::new(bdf_a, vectors),
                dev_b: VirtPciDevice::new(bdf_b, vectors),
                buffer: vec![0; size as usize],
                pending_a: VecDeque::new(),
                pending_b: VecDeque::new(),
            },
        );
        self.log(a, Cause::Management(MgmtOp::CreateChannel { channel: id, peer: b }));
        Ok(id)
    }

    /// Opens the channel that `a` and `b` declare for each other in their
    /// configs. Both declarations must agree on size and vector count.
    pub fn connect_declared(&mut self, a: CellId, b: CellId) -> Result<u32, CommError> {
        self.require_cell(a)?;
        self.require_cell(b)?;
        let (ca, cb) = (self.cell(a)?.config(), self.cell(b)?.config());
        let da = ca.comm_regions.iter().find(|d| d.peer == cb.name);
        let db = cb.comm_regions.iter().find(|d| d.peer == ca.name);
        match (da, db) {
            (Some(x), Some(y)) if x.size == y.size && x.vectors == y.vectors => {
                let (size, vectors) = (x.size, x.vectors);
                self.create_channel(a, b, size, vectors)
            }
            _ => Err(CommError::NotDeclared {
                a: ca.name.clone(),
                b: cb.name.clone(),
            }),
        }
    }

    fn allocate_shared(&self, a: CellId, size: u64) -> Option<MemRegion> {
        let mut frags: Vec<MemRegion> = self
            .ledger()
            .owned_by(a)
            .into_iter()
            .filter_map(|r| match r {
                Resource::MemRegion(m) if m.flags.contains(PermSet::RW) => Some(m),
                _ => None,
            })
            .collect();
        frags.sort_by_key(|m| std::cmp::Reverse(m.base));
        for f in frags {
            let mut end = f.end();
            while end - f.base >= size {
                let base = end - size;
                match self.ledger().grant_overlapping(base, size) {
                    Some(ch) => {
                        let g = self.channels[&ch].region.base;
                        end = g - g % PAGE_SIZE;
                    }
                    None => return Some(MemRegion::new(base, size, PermSet::RW)),
                }
            }
        }
        None
    }

    fn free_bdf(&self, cell: CellId) -> Option<u16> {
        let mut used: Vec<u16> = self
            .channels
            .values()
            .filter_map(|c| c.device_for(cell).map(|d| d.bdf))
            .collect();
        used.extend(self.cell(cell).ok()?.config().devices.iter().filter_map(|d| match d {
            Resource::PciDevice(bdf) => Some(*bdf),
            _ => None,
        }));
        (0u16..32).map(|dev| dev << 3).find(|bdf| !used.contains(bdf))
    }

    fn endpoint(&self, ch: u32, cell: CellId) -> Result<&Channel, CommError> {
        let c = self.channel(ch)?;
        if c.device_for(cell).is_none() {
            return Err(CommError::NotEndpoint { ch, cell });
        }
        Ok(c)
    }

    /// Writes `payload` at `offset` in the shared region and rings doorbell
    /// `vector` at the peer. The delivery latency is that of a reinjected
    /// interrupt at the peer's current bus load.
    pub fn send(
        &mut self,
        ch: u32,
        from: CellId,
        offset: u64,
        payload: &[u8],
        vector: u16,
        rng: &mut impl Rng,
    ) -> Result<DoorbellDelivery, CommError> {
        let c = self.endpoint(ch, from)?;
        let len = payload.len() as u64;
        if offset.checked_add(len).is_none_or(|end| end > c.region.size) {
            return Err(CommError::OutOfRegion { offset, len });
        }
        if vector >= c.vectors {
            return Err(CommError::BadVector {
                vector,
                vectors: c.vectors,
            });
        }
        let state = self.cell(from)?.state();
        if state != CellState::Running {
            return Err(HvError::BadState {
                cell: from,
                state,
                op: "send on a channel",
            }
            .into());
        }
        let (dir, peer) = if from == c.a {
            (Direction::AtoB, c.b)
        } else {
            (Direction::BtoA, c.a)
        };
        let stressed = bus_load(self, peer).stressed;
        let latency_us = sample_latency(true, stressed, self.platform().bus(), rng);
        let t = self.clock();
        let c = self.channels.get_mut(&ch).expect("checked above");
        c.buffer[offset as usize..(offset + len) as usize].copy_from_slice(payload);
        match dir {
            Direction::AtoB => c.pending_b.push_back(vector),
            Direction::BtoA => c.pending_a.push_back(vector),
        }
        self.traffic.push(TrafficRecord {
            t,
            ch,
            dir,
            vector,
            len,
        });
        Ok(DoorbellDelivery {
            vector,
            sent_at: t,
            delivered_at: t + lattice_ns(latency_us),
            latency_us,
        })
    }

    /// Takes every vector pending for `cell`, oldest first.
    pub fn poll(&mut self, ch: u32, cell: CellId) -> Result<Vec<u16>, CommError> {
        self.endpoint(ch, cell)?;
        let c = self.channels.get_mut(&ch).expect("checked above");
        let q = if cell == c.a {
            &mut c.pending_a
        } else {
            &mut c.pending_b
        };
        Ok(q.drain(..).collect())
    }

    pub fn read_shared(&self, ch: u32, cell: CellId, offset: u64, len: u64) -> Result<Vec<u8>, CommError> {
        let c = self.endpoint(ch, cell)?;
        if offset.checked_add(len).is_none_or(|end| end > c.region.size) {
            return Err(CommError::OutOfRegion { offset, len });
        }
        Ok(c.buffer[offset as usize..(offset + len) as usize].to_vec())
    }

    /// Reads a configuration-space dword of the virtual device at `bdf` as
    /// seen by `cell`. Every read traps and is emulated. Functions the cell
    /// cannot see read as all ones. Only channel devices are modelled.
    pub fn pci_cfg_read(&mut self, cell: CellId, bdf: u16, offset: u16) -> Result<u32, CommError> {
        if !self.is_enabled() {
            return Err(HvError::NotEnabled.into());
        }
        self.require_cell(cell)?;
        let state = self.cell(cell)?.state();
        if state != CellState::Running {
            return Err(HvError::BadState {
                cell,
                state,
                op: "read PCI config space",
            }
            .into());
        }
        if !offset.is_multiple_of(4) {
            return Err(CommError::BadAlignment(offset));
        }
        self.log(
            cell,
            Cause::InstructionEmulation {
                name: "pci-cfg".into(),
            },
        );
        let dev = self
            .channels
            .values()
            .filter_map(|c| c.device_for(cell))
            .find(|d| d.bdf == bdf);
        Ok(dev.map_or(u32::MAX, |d| d.config_dword(offset)))
    }

    /// Tears down every channel `cell` takes part in.
    pub(crate) fn remove_channels_of(&mut self, cell: CellId) {
        let ids: Vec<u32> = self
            .channels
            .values()
            .filter(|c| c.a == cell || c.b == cell)
            .map(|c| c.id)
            .collect();
        for id in ids {
            self.channels.remove(&id);
            self.ledger_mut().remove_grant(id);
        }
    }
}
