// SPDX-License-Identifier: Apache-2.0

//! Classified hypervisor interventions.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::CellId;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessKind {
    MemRead,
    MemWrite,
    IoRead,
    IoWrite,
    SensitiveInstr(String),
}

/// One guest access as seen by the trap engine.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Access {
    pub kind: AccessKind,
    pub addr: u64,
    pub width: u8,
}

impl Access {
    pub fn mem_read(addr: u64, width: u8) -> Self {
        Self {
            kind: AccessKind::MemRead,
            addr,
            width,
        }
    }

    pub fn mem_write(addr: u64, width: u8) -> Self {
        Self {
            kind: AccessKind::MemWrite,
            addr,
            width,
        }
    }

    pub fn io_read(port: u16, width: u8) -> Self {
        Self {
            kind: AccessKind::IoRead,
            addr: u64::from(port),
            width,
        }
    }

    pub fn io_write(port: u16, width: u8) -> Self {
        Self {
            kind: AccessKind::IoWrite,
            addr: u64::from(port),
            width,
        }
    }

    pub fn instr(name: impl Into<String>) -> Self {
        Self {
            kind: AccessKind::SensitiveInstr(name.into()),
            addr: 0,
            width: 1,
        }
    }

    /// Width must be 1, 2, 4 or 8; memory accesses must be naturally
    /// aligned and I/O accesses must stay inside the 16-bit port space.
    pub fn is_well_formed(&self) -> bool {
        if !matches!(self.width, 1 | 2 | 4 | 8) {
            return false;
        }
        let w = u64::from(self.width);
        match self.kind {
            AccessKind::MemRead | AccessKind::MemWrite => {
                self.addr.is_multiple_of(w) && self.addr.checked_add(w).is_some()
            }
            AccessKind::IoRead | AccessKind::IoWrite => self.addr + w <= 0x1_0000,
            AccessKind::SensitiveInstr(_) => true,
        }
    }
}

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            AccessKind::MemRead => write!(f, "mem-read {:#x}/{}", self.addr, self.width),
            AccessKind::MemWrite => write!(f, "mem-write {:#x}/{}", self.addr, self.width),
            AccessKind::IoRead => write!(f, "io-read {:#x}/{}", self.addr, self.width),
            AccessKind::IoWrite => write!(f, "io-write {:#x}/{}", self.addr, self.width),
            AccessKind::SensitiveInstr(name) => write!(f, "instr {name}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fault {
    Access(Access),
    /// An interrupt whose owner is not running.
    SpuriousIrq { line: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MgmtOp {
    Enable,
    Disable,
    Create { name: String },
    LoadImage { addr: u64, len: u64 },
    Start,
    Stop,
    Destroy,
    Relaunch,
    CreateChannel { channel: u32, peer: CellId },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cause {
    IrqReinjection { line: u32 },
    DistributorEmulation { offset: u32 },
    InstructionEmulation { name: String },
    AccessViolation(Fault),
    Management(MgmtOp),
}

impl Cause {
    pub fn label(&self) -> &'static str {
        match self {
            Cause::IrqReinjection { .. } => "irq-reinjection",
            Cause::DistributorEmulation { .. } => "distributor-emulation",
            Cause::InstructionEmulation { .. } => "instruction-emulation",
            Cause::AccessViolation(_) => "access-violation",
            Cause::Management(_) => "management",
        }
    }

    pub fn detail(&self) -> String {
        match self {
            Cause::IrqReinjection { line } => format!("line={line}"),
            Cause::DistributorEmulation { offset } => format!("offset={offset:#x}"),
            Cause::InstructionEmulation { name } => name.clone(),
            Cause::AccessViolation(Fault::Access(a)) => a.to_string(),
            Cause::AccessViolation(Fault::SpuriousIrq { line }) => format!("spurious-irq line={line}"),
            Cause::Management(op) => match op {
                MgmtOp::Enable => "enable".into(),
                MgmtOp::Disable => "disable".into(),
                MgmtOp::Create { name } => format!("create {name}"),
                MgmtOp::LoadImage { addr, len } => format!("load {addr:#x}+{len:#x}"),
                MgmtOp::Start => "start".into(),
                MgmtOp::Stop => "stop".into(),
                MgmtOp::Destroy => "destroy".into(),
                MgmtOp::Relaunch => "relaunch".into(),
                MgmtOp::CreateChannel { channel, peer } => {
                    format!("channel {channel} peer={peer}")
                }
            },
        }
    }

    pub fn is_management(&self) -> bool {
        matches!(self, Cause::Management(_))
    }

    pub fn is_violation(&self) -> bool {
        matches!(self, Cause::AccessViolation(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrapEvent {
    /// Simulated time in nanoseconds.
    pub time: u64,
    pub cell: CellId,
    pub cause: Cause,
}

#[derive(Serialize)]
struct EventLine<'a> {
    t: u64,
    cell: u32,
    cause: &'static str,
    detail: &'a str,
}

impl TrapEvent {
    /// One JSON object `{t, cell, cause, detail}`, no trailing newline.
    pub fn to_json(&self) -> String {
        let detail = self.cause.detail();
        serde_json::to_string(&EventLine {
            t: self.time,
            cell: self.cell.0,
            cause: self.cause.label(),
            detail: &detail,
        })
        .expect("event serialization cannot fail")
    }
}

/// Renders events as JSON lines, each terminated by `\n`.
pub fn to_jsonl<'a>(events: impl IntoIterator<Item = &'a TrapEvent>) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_json());
        out.push('\n');
    }
    out
}
