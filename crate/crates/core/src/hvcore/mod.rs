// SPDX-License-Identifier: Apache-2.0

//! Hypervisor state machine.
//!
//! Activation is deferred: [`Hypervisor::enable`] lifts an already running
//! root OS into cell 0 and hands it every platform resource. Non-root cells
//! are then carved out of the root cell with [`Hypervisor::create_cell`] and
//! their resources flow back to it on [`Hypervisor::destroy_cell`].
//!
//! Guest accesses go through [`Hypervisor::handle_access`]. Accesses to
//! owned resources complete directly and leave no trace; only interrupt
//! reinjection, emulated devices and instructions, violations and
//! management calls are recorded as [`TrapEvent`]s.

mod events;
mod ledger;
pub mod workload;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use events::{to_jsonl, Access, AccessKind, Cause, Fault, MgmtOp, TrapEvent};
pub use ledger::{Fragment, Grant, LedgerError, OwnershipLedger};

use crate::cellconfig::{validate_against, CellConfig, SemanticError, Violation};
use crate::comm::{Channel, TrafficRecord};
use crate::machine::{MachinePlatform, PermSet, Resource, PAGE_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId(pub u32);

impl CellId {
    pub const ROOT: CellId = CellId(0);

    pub fn is_root(self) -> bool {
        self == Self::ROOT
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HvState {
    Disabled,
    Enabled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellState {
    Created,
    Running,
    Stopped,
    Failed,
}

impl fmt::Display for CellState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            CellState::Created => "created",
            CellState::Running => "running",
            CellState::Stopped => "stopped",
            CellState::Failed => "failed",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessOutcome {
    /// Served by hardware; the hypervisor never ran.
    Direct,
    Emulated,
    /// The cell touched something it does not own and has been failed.
    Violation,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HvError {
    #[error("hypervisor is already enabled")]
    AlreadyEnabled,
    #[error("hypervisor is not enabled")]
    NotEnabled,
    #[error("root configuration does not match the platform: {}", join(.0))]
    ConfigMismatch(Vec<Violation>),
    #[error("invalid configuration: {0}")]
    InvalidConfig(#[from] SemanticError),
    #[error("configuration rejected: {}", join(.0))]
    ValidationFailed(Vec<Violation>),
    #[error("a cell named `{0}` already exists")]
    NameCollision(String),
    #[error("no cell {0}")]
    NoSuchCell(CellId),
    #[error("cell {cell} is {state}, cannot {op}")]
    BadState {
        cell: CellId,
        state: CellState,
        op: &'static str,
    },
    #[error("the root cell cannot be stopped or destroyed")]
    RootCellImmortal,
    #[error("{0} non-root cell(s) still exist")]
    CellsStillExist(usize),
    #[error("[{addr:#x}, +{len:#x}) is not inside a region of cell {cell}")]
    OutOfRegion { cell: CellId, addr: u64, len: u64 },
    #[error("malformed access {0}")]
    MalformedAccess(Access),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("clock cannot go back from {now} to {requested}")]
    ClockRegression { now: u64, requested: u64 },
    #[error("platform has no interrupt distributor window")]
    NoDistributor,
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    id: CellId,
    config: CellConfig,
    state: CellState,
    /// Sparse page-granular image, keyed by page base address.
    memory_image: BTreeMap<u64, Vec<u8>>,
    dist_emulations: u64,
}

impl Cell {
    fn new(id: CellId, config: CellConfig, state: CellState) -> Self {
        Self {
            id,
            config,
            state,
            memory_image: BTreeMap::new(),
            dist_emulations: 0,
        }
    }

    pub fn id(&self) -> CellId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn config(&self) -> &CellConfig {
        &self.config
    }

    pub fn state(&self) -> CellState {
        self.state
    }

    /// Number of emulated GIC distributor accesses made by this cell.
    pub fn dist_emulations(&self) -> u64 {
        self.dist_emulations
    }

    pub fn image_is_empty(&self) -> bool {
        self.memory_image.is_empty()
    }

    /// Reads back `len` bytes of the loaded image; unloaded bytes are zero.
    pub fn read_image(&self, addr: u64, len: usize) -> Vec<u8> {
        let mut out = vec![0u8; len];
        for (i, byte) in out.iter_mut().enumerate() {
            let a = addr + i as u64;
            let page = a - a % PAGE_SIZE;
            if let Some(p) = self.memory_image.get(&page) {
                *byte = p[(a - page) as usize];
            }
        }
        out
    }

    fn write_image(&mut self, addr: u64, data: &[u8]) {
        for (i, &byte) in data.iter().enumerate() {
            let a = addr + i as u64;
            let page = a - a % PAGE_SIZE;
            self.memory_image
                .entry(page)
                .or_insert_with(|| vec![0u8; PAGE_SIZE as usize])[(a - page) as usize] = byte;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypervisor {
    state: HvState,
    platform: MachinePlatform,
    cells: BTreeMap<CellId, Cell>,
    ledger: OwnershipLedger,
    events: Vec<TrapEvent>,
    clock: u64,
    next_cell: u32,
    emulated_instructions: BTreeSet<String>,
    pub(crate) channels: BTreeMap<u32, Channel>,
    pub(crate) traffic: Vec<TrafficRecord>,
    pub(crate) next_channel: u32,
}

/// Convenience for `Hypervisor::new(platform)` followed by `enable`.
pub fn enable(platform: MachinePlatform, root_cfg: CellConfig) -> Result<Hypervisor, HvError> {
    let mut hv = Hypervisor::new(platform);
    hv.enable(root_cfg)?;
    Ok(hv)
}

impl Hypervisor {
    /// A disabled hypervisor: the root OS runs on bare metal.
    pub fn new(platform: MachinePlatform) -> Self {
        Self {
            state: HvState::Disabled,
            platform,
            cells: BTreeMap::new(),
            ledger: OwnershipLedger::new(),
            events: Vec::new(),
            clock: 0,
            next_cell: 1,
            emulated_instructions: BTreeSet::from(["cpuid".to_string()]),
            channels: BTreeMap::new(),
            traffic: Vec::new(),
            next_channel: 0,
        }
    }

    pub fn state(&self) -> HvState {
        self.state
    }

    pub fn is_enabled(&self) -> bool {
        self.state == HvState::Enabled
    }

    pub fn platform(&self) -> &MachinePlatform {
        &self.platform
    }

    pub fn ledger(&self) -> &OwnershipLedger {
        &self.ledger
    }

    pub(crate) fn ledger_mut(&mut self) -> &mut OwnershipLedger {
        &mut self.ledger
    }

    pub fn events(&self) -> &[TrapEvent] {
        &self.events
    }

    pub fn events_jsonl(&self) -> String {
        to_jsonl(&self.events)
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn advance_clock(&mut self, ns: u64) {
        self.clock += ns;
    }

    pub fn set_clock(&mut self, t: u64) -> Result<(), HvError> {
        if t < self.clock {
            return Err(HvError::ClockRegression {
                now: self.clock,
                requested: t,
            });
        }
        self.clock = t;
        Ok(())
    }

    pub fn emulated_instructions(&self) -> &BTreeSet<String> {
        &self.emulated_instructions
    }

    /// Replaces the set of sensitive instructions that are emulated rather
    /// than treated as violations.
    pub fn set_emulated_instructions<I, S>(&mut self, names: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.emulated_instructions = names.into_iter().map(Into::into).collect();
    }

    pub fn cells(&self) -> impl Iterator<Item = &Cell> + '_ {
        self.cells.values()
    }

    pub fn cell(&self, id: CellId) -> Result<&Cell, HvError> {
        self.cells.get(&id).ok_or(HvError::NoSuchCell(id))
    }

    pub(crate) fn cell_mut(&mut self, id: CellId) -> Result<&mut Cell, HvError> {
        self.cells.get_mut(&id).ok_or(HvError::NoSuchCell(id))
    }

    pub fn cell_by_name(&self, name: &str) -> Option<&Cell> {
        self.cells.values().find(|c| c.name() == name)
    }

    pub(crate) fn log(&mut self, cell: CellId, cause: Cause) {
        self.events.push(TrapEvent {
            time: self.clock,
            cell,
            cause,
        });
    }

    pub(crate) fn log_at(&mut self, time: u64, cell: CellId, cause: Cause) {
        debug_assert!(time >= self.events.last().map_or(0, |e| e.time));
        self.events.push(TrapEvent { time, cell, cause });
    }

    fn require_enabled(&self) -> Result<(), HvError> {
        if self.is_enabled() {
            Ok(())
        } else {
            Err(HvError::NotEnabled)
        }
    }

    fn bad_state(&self, cell: CellId, op: &'static str) -> HvError {
        HvError::BadState {
            cell,
            state: self.cells[&cell].state,
            op,
        }
    }

    /// Lifts the running OS into the root cell, which initially owns every
    /// platform resource.
    pub fn enable(&mut self, root_cfg: CellConfig) -> Result<(), HvError> {
        if self.is_enabled() {
            return Err(HvError::AlreadyEnabled);
        }
        root_cfg.validate()?;
        let mut full = OwnershipLedger::new();
        full.assign_all(&self.platform, CellId::ROOT);
        let mismatches: Vec<Violation> = validate_against(&root_cfg, &self.platform, &full)
            .into_iter()
            .filter(|v| matches!(v, Violation::NoSuchResource(_) | Violation::PermissionExceeded { .. }))
            .collect();
        if !mismatches.is_empty() {
            return Err(HvError::ConfigMismatch(mismatches));
        }
        self.ledger = full;
        self.cells.clear();
        self.cells.insert(
            CellId::ROOT,
            Cell::new(CellId::ROOT, root_cfg, CellState::Running),
        );
        self.next_cell = 1;
        self.state = HvState::Enabled;
        self.log(CellId::ROOT, Cause::Management(MgmtOp::Enable));
        Ok(())
    }

    /// Hands the machine back to the root OS. All non-root cells must have
    /// been destroyed.
    pub fn disable(&mut self) -> Result<(), HvError> {
        self.require_enabled()?;
        let others = self.cells.len() - 1;
        if others > 0 {
            return Err(HvError::CellsStillExist(others));
        }
        self.log(CellId::ROOT, Cause::Management(MgmtOp::Disable));
        self.ledger.clear();
        self.cells.clear();
        self.channels.clear();
        self.state = HvState::Disabled;
        Ok(())
    }

    /// Moves the resources listed in `cfg` from the root cell into a new
    /// cell in the `Created` state.
    pub fn create_cell(&mut self, mut cfg: CellConfig) -> Result<CellId, HvError> {
        self.require_enabled()?;
        cfg.canonicalize();
        cfg.validate()?;
        if self.cell_by_name(&cfg.name).is_some() {
            return Err(HvError::NameCollision(cfg.name));
        }
        let violations = validate_against(&cfg, &self.platform, &self.ledger);
        if !violations.is_empty() {
            return Err(HvError::ValidationFailed(violations));
        }
        let id = CellId(self.next_cell);
        self.next_cell += 1;
        for r in cfg.resources() {
            self.ledger.assign(&r, id)?;
        }
        let name = cfg.name.clone();
        self.cells.insert(id, Cell::new(id, cfg, CellState::Created));
        self.log(id, Cause::Management(MgmtOp::Create { name }));
        Ok(id)
    }

    /// Preloads guest code or data into a stopped or freshly created cell.
    pub fn load_image(&mut self, id: CellId, addr: u64, data: &[u8]) -> Result<(), HvError> {
        self.require_enabled()?;
        let cell = self.cell(id)?;
        if !matches!(cell.state, CellState::Created | CellState::Stopped) {
            return Err(self.bad_state(id, "load an image into"));
        }
        let len = data.len() as u64;
        if !cell.config.mem.iter().any(|m| m.contains_range(addr, len)) {
            return Err(HvError::OutOfRegion { cell: id, addr, len });
        }
        self.cell_mut(id)?.write_image(addr, data);
        self.log(id, Cause::Management(MgmtOp::LoadImage { addr, len }));
        Ok(())
    }

    pub fn start_cell(&mut self, id: CellId) -> Result<(), HvError> {
        self.require_enabled()?;
        if !matches!(self.cell(id)?.state, CellState::Created | CellState::Stopped) {
            return Err(self.bad_state(id, "start"));
        }
        self.cell_mut(id)?.state = CellState::Running;
        self.log(id, Cause::Management(MgmtOp::Start));
        Ok(())
    }

    /// Stops a running or failed cell. Its resources stay assigned to it.
    pub fn stop_cell(&mut self, id: CellId) -> Result<(), HvError> {
        self.require_enabled()?;
        if id.is_root() {
            return Err(HvError::RootCellImmortal);
        }
        if !matches!(self.cell(id)?.state, CellState::Running | CellState::Failed) {
            return Err(self.bad_state(id, "stop"));
        }
        self.cell_mut(id)?.state = CellState::Stopped;
        self.log(id, Cause::Management(MgmtOp::Stop));
        Ok(())
    }

    /// Removes a cell in any state and returns all its resources to the
    /// root cell. Channels the cell took part in are torn down.
    pub fn destroy_cell(&mut self, id: CellId) -> Result<(), HvError> {
        self.require_enabled()?;
        if id.is_root() {
            return Err(HvError::RootCellImmortal);
        }
        self.cell(id)?;
        self.remove_channels_of(id);
        self.ledger.reassign_all(id, CellId::ROOT);
        self.cells.remove(&id);
        self.log(id, Cause::Management(MgmtOp::Destroy));
        Ok(())
    }

    /// Stop, wipe the loaded image, start again.
    pub fn relaunch_cell(&mut self, id: CellId) -> Result<(), HvError> {
        self.require_enabled()?;
        let cell = self.cell_mut(id)?;
        if !matches!(
            cell.state,
            CellState::Running | CellState::Stopped | CellState::Failed
        ) {
            return Err(self.bad_state(id, "relaunch"));
        }
        cell.memory_image.clear();
        cell.state = CellState::Running;
        self.log(id, Cause::Management(MgmtOp::Relaunch));
        Ok(())
    }

    pub fn owner_of(&self, r: &Resource) -> Result<CellId, HvError> {
        self.require_enabled()?;
        if let Resource::MemRegion(m) = r {
            if !self.platform.mem_regions().any(|p| p.contains_range(m.base, m.size)) {
                return Err(LedgerError::NoSuchResource(r.clone()).into());
            }
        } else if !self.platform.contains(r) {
            return Err(LedgerError::NoSuchResource(r.clone()).into());
        }
        Ok(self.ledger.owner_of(r)?)
    }

    /// Runs one guest access through the trap engine.
    pub fn handle_access(&mut self, id: CellId, access: Access) -> Result<AccessOutcome, HvError> {
        self.require_enabled()?;
        if self.cell(id)?.state != CellState::Running {
            return Err(self.bad_state(id, "access memory"));
        }
        if !access.is_well_formed() {
            return Err(HvError::MalformedAccess(access));
        }
        let len = u64::from(access.width);
        let outcome = match &access.kind {
            AccessKind::SensitiveInstr(name) => {
                if self.emulated_instructions.contains(name) {
                    let name = name.clone();
                    self.log(id, Cause::InstructionEmulation { name });
                    AccessOutcome::Emulated
                } else {
                    AccessOutcome::Violation
                }
            }
            AccessKind::MemRead | AccessKind::MemWrite => {
                let write = access.kind == AccessKind::MemWrite;
                if let Some((lo, hi)) = self.platform.gic_dist() {
                    if access.addr >= lo && access.addr + len <= hi {
                        let offset = (access.addr - lo) as u32;
                        self.cell_mut(id)?.dist_emulations += 1;
                        self.log(id, Cause::DistributorEmulation { offset });
                        return Ok(AccessOutcome::Emulated);
                    }
                }
                if self.mem_access_allowed(id, access.addr, len, write) {
                    AccessOutcome::Direct
                } else {
                    AccessOutcome::Violation
                }
            }
            AccessKind::IoRead | AccessKind::IoWrite => {
                let (port, end) = (access.addr, access.addr + len);
                let owned = self.ledger.find_device(|r| {
                    matches!(*r, Resource::IoPortRange { base, len: l }
                        if u64::from(base) <= port && end <= u64::from(base) + u64::from(l))
                });
                if owned.is_some_and(|(_, o)| o == id) {
                    AccessOutcome::Direct
                } else {
                    AccessOutcome::Violation
                }
            }
        };
        if outcome == AccessOutcome::Violation {
            self.cell_mut(id)?.state = CellState::Failed;
            self.log(id, Cause::AccessViolation(Fault::Access(access)));
        }
        Ok(outcome)
    }

    fn mem_access_allowed(&self, id: CellId, addr: u64, len: u64, write: bool) -> bool {
        let need = if write { PermSet::WRITE } else { PermSet::READ };
        if let Some((_, g)) = self.ledger.grant_at(addr, len) {
            return g.admits(id);
        }
        if let Some((_, frag)) = self.ledger.fragment_at(addr, len) {
            if frag.owner != id {
                return false;
            }
            let flags = if id.is_root() {
                frag.parent.flags
            } else {
                match self.cells[&id].config.mem.iter().find(|m| m.contains_range(addr, len)) {
                    Some(m) => m.flags,
                    None => return false,
                }
            };
            return flags.contains(need);
        }
        let device = self.ledger.find_device(|r| match r.addr_range() {
            Some((lo, hi)) => addr >= lo && addr + len <= hi,
            None => false,
        });
        device.is_some_and(|(_, o)| o == id)
    }

    /// Checks conservation, exclusivity, and that every non-root cell owns
    /// only what its config lists.
    pub fn check_invariants(&self) -> Result<(), HvError> {
        match self.state {
            HvState::Disabled => {
                if !self.ledger.is_empty() || !self.cells.is_empty() {
                    return Err(LedgerError::Conservation("disabled hypervisor holds state".into()).into());
                }
                Ok(())
            }
            HvState::Enabled => {
                if !self.cells.contains_key(&CellId::ROOT) {
                    return Err(HvError::NoSuchCell(CellId::ROOT));
                }
                self.ledger.check_conservation(&self.platform)?;
                for (r, owner) in self.ledger.keys() {
                    let Some(cell) = self.cells.get(&owner) else {
                        return Err(LedgerError::Exclusivity(format!("{r} owned by missing cell {owner}")).into());
                    };
                    if owner.is_root() {
                        continue;
                    }
                    let listed = match &r {
                        Resource::MemRegion(m) => {
                            cell.config.mem.iter().any(|c| c.contains_range(m.base, m.size))
                        }
                        other => cell.config.resources().contains(other),
                    };
                    if !listed {
                        return Err(LedgerError::Exclusivity(format!(
                            "cell {owner} owns unlisted {r}"
                        ))
                        .into());
                    }
                }
                Ok(())
            }
        }
    }
}
