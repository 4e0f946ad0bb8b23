// SPDX-License-Identifier: Apache-2.0

//! Exclusive resource-ownership ledger.
//!
//! Indivisible resources (CPUs, devices, port ranges, IRQ lines) map to one
//! owner each. Platform memory regions may be carved up: the ledger keeps
//! page-aligned fragments, each remembering the platform region it came
//! from, so that merging all fragments of a parent yields the parent again.
//! Shared channel pages are tracked as grants on top of ownership, never as
//! a second owner.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::CellId;
use crate::machine::{MachinePlatform, MemRegion, Resource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub size: u64,
    pub parent: MemRegion,
    pub owner: CellId,
}

/// Access grant for a shared channel region. `owner` holds the pages in
/// the ledger; `peer` may access them too.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grant {
    pub region: MemRegion,
    pub owner: CellId,
    pub peer: CellId,
}

impl Grant {
    pub fn admits(&self, cell: CellId) -> bool {
        cell == self.owner || cell == self.peer
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("resource not tracked by the ledger: {0}")]
    NoSuchResource(Resource),
    #[error("{0} is split between several owners")]
    MixedOwnership(Resource),
    #[error("conservation violated: {0}")]
    Conservation(String),
    #[error("exclusivity violated: {0}")]
    Exclusivity(String),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnershipLedger {
    owners: BTreeMap<Resource, CellId>,
    mem: BTreeMap<u64, Fragment>,
    grants: BTreeMap<u32, Grant>,
}

impl OwnershipLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.owners.is_empty() && self.mem.is_empty()
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }

    /// Hands every platform resource to `owner`.
    pub fn assign_all(&mut self, platform: &MachinePlatform, owner: CellId) {
        self.clear();
        for r in platform.resources() {
            match r {
                Resource::MemRegion(m) => {
                    self.mem.insert(
                        m.base,
                        Fragment {
                            size: m.size,
                            parent: *m,
                            owner,
                        },
                    );
                }
                other => {
                    self.owners.insert(other.clone(), owner);
                }
            }
        }
    }

    /// Number of raw ledger entries (memory fragments counted singly).
    pub fn len(&self) -> usize {
        self.owners.len() + self.mem.len()
    }

    /// The unique owner of `r`. Memory ranges must lie inside tracked
    /// fragments that all share one owner.
    pub fn owner_of(&self, r: &Resource) -> Result<CellId, LedgerError> {
        match r {
            Resource::MemRegion(m) => {
                let parts = self.mem_owners(m.base, m.size);
                let covered: u64 = parts.iter().map(|(b, e, _)| e - b).sum();
                if parts.is_empty() || covered != m.size {
                    return Err(LedgerError::NoSuchResource(r.clone()));
                }
                let owner = parts[0].2;
                if parts.iter().any(|p| p.2 != owner) {
                    return Err(LedgerError::MixedOwnership(r.clone()));
                }
                Ok(owner)
            }
            other => self
                .owners
                .get(other)
                .copied()
                .ok_or_else(|| LedgerError::NoSuchResource(other.clone())),
        }
    }

    /// Owned pieces of `[base, base + size)`, clipped to the range.
    pub fn mem_owners(&self, base: u64, size: u64) -> Vec<(u64, u64, CellId)> {
        let end = base.saturating_add(size);
        let start_key = self
            .mem
            .range(..=base)
            .next_back()
            .map(|(b, _)| *b)
            .unwrap_or(base);
        self.mem
            .range(start_key..end)
            .filter_map(|(&b, f)| {
                let (lo, hi) = (b.max(base), (b + f.size).min(end));
                (lo < hi).then_some((lo, hi, f.owner))
            })
            .collect()
    }

    /// The fragment containing `[addr, addr + len)` entirely, if any.
    pub fn fragment_at(&self, addr: u64, len: u64) -> Option<(u64, &Fragment)> {
        let (&b, f) = self.mem.range(..=addr).next_back()?;
        let end = addr.checked_add(len)?;
        (end <= b + f.size).then_some((b, f))
    }

    /// Owner of the indivisible resource matching `pred`, if one exists.
    pub fn find_device(&self, pred: impl Fn(&Resource) -> bool) -> Option<(&Resource, CellId)> {
        self.owners.iter().find(|(r, _)| pred(r)).map(|(r, o)| (r, *o))
    }

    /// Reassigns `r` to `to`. Memory ranges are split out of their
    /// fragments as needed.
    pub fn assign(&mut self, r: &Resource, to: CellId) -> Result<(), LedgerError> {
        match r {
            Resource::MemRegion(m) => {
                let parts = self.mem_owners(m.base, m.size);
                let covered: u64 = parts.iter().map(|(b, e, _)| e - b).sum();
                if covered != m.size {
                    return Err(LedgerError::NoSuchResource(r.clone()));
                }
                self.split_at(m.base);
                self.split_at(m.end());
                for (_, f) in self.mem.range_mut(m.base..m.end()) {
                    f.owner = to;
                }
                self.coalesce();
                Ok(())
            }
            other => match self.owners.get_mut(other) {
                Some(o) => {
                    *o = to;
                    Ok(())
                }
                None => Err(LedgerError::NoSuchResource(other.clone())),
            },
        }
    }

    /// Moves everything `from` owns to `to`.
    pub fn reassign_all(&mut self, from: CellId, to: CellId) {
        for o in self.owners.values_mut().filter(|o| **o == from) {
            *o = to;
        }
        for f in self.mem.values_mut().filter(|f| f.owner == from) {
            f.owner = to;
        }
        self.coalesce();
    }

    fn split_at(&mut self, at: u64) {
        let Some((&b, &f)) = self.mem.range(..at).next_back() else {
            return;
        };
        if at >= b + f.size {
            return;
        }
        self.mem.insert(
            b,
            Fragment {
                size: at - b,
                ..f
            },
        );
        self.mem.insert(
            at,
            Fragment {
                size: b + f.size - at,
                ..f
            },
        );
    }

    /// Merges adjacent fragments of the same parent and owner.
    fn coalesce(&mut self) {
        let mut merged: BTreeMap<u64, Fragment> = BTreeMap::new();
        let mut last: Option<(u64, Fragment)> = None;
        for (&b, &f) in &self.mem {
            match last {
                Some((lb, ref mut lf))
                    if lb + lf.size == b && lf.parent == f.parent && lf.owner == f.owner =>
                {
                    lf.size += f.size;
                }
                _ => {
                    if let Some((lb, lf)) = last.take() {
                        merged.insert(lb, lf);
                    }
                    last = Some((b, f));
                }
            }
        }
        if let Some((lb, lf)) = last {
            merged.insert(lb, lf);
        }
        self.mem = merged;
    }

    /// Raw keys: indivisible resources plus one region per fragment.
    pub fn keys(&self) -> Vec<(Resource, CellId)> {
        let mut out: Vec<(Resource, CellId)> =
            self.owners.iter().map(|(r, o)| (r.clone(), *o)).collect();
        out.extend(self.mem.iter().map(|(&b, f)| {
            (
                Resource::MemRegion(MemRegion::new(b, f.size, f.parent.flags)),
                f.owner,
            )
        }));
        out
    }

    /// Keys with memory fragments merged back into their parent regions,
    /// sorted. For a conserving ledger this equals the platform's resource
    /// list.
    pub fn coalesced_keys(&self) -> Vec<Resource> {
        let mut out: Vec<Resource> = self.owners.keys().cloned().collect();
        let mut current: Option<(u64, u64, MemRegion)> = None;
        for (&b, f) in &self.mem {
            match current {
                Some((cb, ce, p)) if ce == b && p == f.parent => {
                    current = Some((cb, b + f.size, p));
                }
                _ => {
                    if let Some((cb, ce, p)) = current.take() {
                        out.push(Resource::MemRegion(MemRegion::new(cb, ce - cb, p.flags)));
                    }
                    current = Some((b, b + f.size, f.parent));
                }
            }
        }
        if let Some((cb, ce, p)) = current {
            out.push(Resource::MemRegion(MemRegion::new(cb, ce - cb, p.flags)));
        }
        out.sort();
        out
    }

    /// Everything `cell` owns, with its memory fragments merged.
    pub fn owned_by(&self, cell: CellId) -> Vec<Resource> {
        let mut out: Vec<Resource> = self
            .owners
            .iter()
            .filter(|(_, o)| **o == cell)
            .map(|(r, _)| r.clone())
            .collect();
        out.extend(
            self.mem
                .iter()
                .filter(|(_, f)| f.owner == cell)
                .map(|(&b, f)| Resource::MemRegion(MemRegion::new(b, f.size, f.parent.flags))),
        );
        out
    }

    /// Checks that the ledger covers exactly the platform's resources, with
    /// every fragment inside its parent and no two fragments overlapping.
    pub fn check_conservation(&self, platform: &MachinePlatform) -> Result<(), LedgerError> {
        let mut prev_end = 0u64;
        for (i, (&b, f)) in self.mem.iter().enumerate() {
            if f.size == 0 {
                return Err(LedgerError::Exclusivity(format!("empty fragment at {b:#x}")));
            }
            if i > 0 && b < prev_end {
                return Err(LedgerError::Exclusivity(format!("fragments overlap at {b:#x}")));
            }
            if !f.parent.contains_range(b, f.size) {
                return Err(LedgerError::Conservation(format!(
                    "fragment {b:#x}+{:#x} escapes its parent",
                    f.size
                )));
            }
            prev_end = b + f.size;
        }
        let keys = self.coalesced_keys();
        if keys != platform.resources() {
            let missing: Vec<_> = platform
                .resources()
                .iter()
                .filter(|r| !keys.contains(r))
                .map(ToString::to_string)
                .collect();
            let extra: Vec<_> = keys
                .iter()
                .filter(|r| !platform.contains(r))
                .map(ToString::to_string)
                .collect();
            return Err(LedgerError::Conservation(format!(
                "missing {missing:?}, extra {extra:?}"
            )));
        }
        Ok(())
    }

    pub fn grants(&self) -> impl Iterator<Item = (u32, &Grant)> + '_ {
        self.grants.iter().map(|(id, g)| (*id, g))
    }

    pub(crate) fn add_grant(&mut self, channel: u32, grant: Grant) {
        self.grants.insert(channel, grant);
    }

    pub(crate) fn remove_grant(&mut self, channel: u32) -> Option<Grant> {
        self.grants.remove(&channel)
    }

    /// First channel whose shared region intersects `[base, base + size)`.
    pub fn grant_overlapping(&self, base: u64, size: u64) -> Option<u32> {
        let end = base.saturating_add(size);
        self.grants
            .iter()
            .find(|(_, g)| g.region.base < end && base < g.region.end())
            .map(|(id, _)| *id)
    }

    /// The grant fully containing `[addr, addr + len)`.
    pub fn grant_at(&self, addr: u64, len: u64) -> Option<(u32, &Grant)> {
        self.grants
            .iter()
            .find(|(_, g)| g.region.contains_range(addr, len))
            .map(|(id, g)| (*id, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{build_platform, PermSet, PlatformSpec};

    fn jetson() -> MachinePlatform {
        build_platform(PlatformSpec::jetson_tk1()).unwrap()
    }

    const ROOT: CellId = CellId::ROOT;

    #[test]
    fn assign_all_is_total() {
        let p = jetson();
        let mut l = OwnershipLedger::new();
        l.assign_all(&p, ROOT);
        assert_eq!(l.len(), p.resources().len());
        l.check_conservation(&p).unwrap();
        for r in p.resources() {
            assert_eq!(l.owner_of(r), Ok(ROOT));
        }
    }

    #[test]
    fn carving_and_returning_memory() {
        let p = jetson();
        let mut l = OwnershipLedger::new();
        l.assign_all(&p, ROOT);
        let snapshot = l.clone();
        let a = Resource::MemRegion(MemRegion::new(0x9000_0000, 0x10_0000, PermSet::RW));
        let b = Resource::MemRegion(MemRegion::new(0x9010_0000, 0x1000, PermSet::RW));
        l.assign(&a, CellId(1)).unwrap();
        l.assign(&b, CellId(2)).unwrap();
        assert_eq!(l.len(), p.resources().len() + 3);
        l.check_conservation(&p).unwrap();
        assert_eq!(l.owner_of(&a), Ok(CellId(1)));
        assert_eq!(l.owner_of(&b), Ok(CellId(2)));
        let both = Resource::MemRegion(MemRegion::new(0x9000_0000, 0x10_1000, PermSet::RW));
        assert_eq!(l.owner_of(&both), Err(LedgerError::MixedOwnership(both)));
        assert_eq!(
            l.mem_owners(0x900f_f000, 0x2000),
            vec![
                (0x900f_f000, 0x9010_0000, CellId(1)),
                (0x9010_0000, 0x9010_1000, CellId(2))
            ]
        );
        l.reassign_all(CellId(1), ROOT);
        l.reassign_all(CellId(2), ROOT);
        assert_eq!(l, snapshot);
    }

    #[test]
    fn outside_memory_is_not_tracked() {
        let p = jetson();
        let mut l = OwnershipLedger::new();
        l.assign_all(&p, ROOT);
        let r = Resource::MemRegion(MemRegion::new(0x1000, 0x1000, PermSet::RW));
        assert!(matches!(l.owner_of(&r), Err(LedgerError::NoSuchResource(_))));
        assert!(l.assign(&r, CellId(1)).is_err());
        assert!(l.assign(&Resource::Cpu(9), CellId(1)).is_err());
    }

    #[test]
    fn conservation_detects_loss() {
        let p = jetson();
        let mut l = OwnershipLedger::new();
        l.assign_all(&p, ROOT);
        l.owners.remove(&Resource::Cpu(3));
        assert!(matches!(l.check_conservation(&p), Err(LedgerError::Conservation(_))));
    }
}
