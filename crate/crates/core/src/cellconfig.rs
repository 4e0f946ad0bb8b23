// SPDX-License-Identifier: Apache-2.0

//! Cell configurations: the declarative list of resources a partition is
//! given, its text form, and its binary form.
//!
//! Text form, one directive per line:
//!
//! ```text
//! cell "rtos"
//! cpu 2,3
//! mem 0x90000000 0x100000 rw
//! mmio gpio 0x6000d000 0x1000
//! pci 0x0100
//! ioport 0x3f8 0x8
//! irq 64
//! comm peer=root size=0x1000 vectors=2
//! run latency-responder
//! ```
//!
//! Binary form (little-endian): a 46-byte header
//! `{magic u32, version u16, cpu_count u16, mem_count u16, dev_count u16,
//! irq_count u16, comm_count u16, name [u8; 32]}`, then the cpu ids (u32),
//! memory records `{base u64, size u64, flags u32}`, device records
//! `{kind u8, name [u8; 16], a u64, b u64}`, irq numbers (u32), comm records
//! `{peer [u8; 32], size u64, vectors u16}` and finally the workload record
//! `{kind u8, path_len u16, path [u8; path_len]}`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, ByteReader, ByteWriter, DecodeError};
use crate::dsl::{self, SyntaxError};
use crate::hvcore::{CellId, OwnershipLedger};
use crate::machine::{
    self, MachinePlatform, MemRegion, PermSet, Resource, ResourceError, GIC_DIST_NAME, PAGE_SIZE,
};

pub const CONFIG_MAGIC: u32 = 0x4A48_4346;
pub const CONFIG_VERSION: u16 = 1;
pub const MAX_CELL_NAME: usize = 31;
const NAME_FIELD: usize = 32;
const DEVICE_NAME_FIELD: usize = 16;

const DEV_MMIO: u8 = 0;
const DEV_PCI: u8 = 1;
const DEV_IOPORT: u8 = 2;

/// What the cell's guest does when the simulator steps it.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Workload {
    #[default]
    Idle,
    Stress,
    LatencyResponder,
    /// Path to a workload script, see [`crate::hvcore::workload`].
    Script(String),
}

impl Workload {
    fn code(&self) -> u8 {
        match self {
            Workload::Idle => 0,
            Workload::Stress => 1,
            Workload::LatencyResponder => 2,
            Workload::Script(_) => 3,
        }
    }
}

/// Request for a shared-memory channel with `peer`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CommDecl {
    pub peer: String,
    pub size: u64,
    pub vectors: u16,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellConfig {
    pub name: String,
    pub cpus: BTreeSet<u32>,
    pub mem: Vec<MemRegion>,
    /// MMIO, PCI and I/O-port resources.
    pub devices: Vec<Resource>,
    pub irqs: BTreeSet<u32>,
    pub comm_regions: Vec<CommDecl>,
    pub workload: Workload,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SemanticError {
    #[error("missing `cell` directive")]
    MissingName,
    #[error("bad cell name `{0}` (1..={MAX_CELL_NAME} bytes of [A-Za-z0-9_-])")]
    BadName(String),
    #[error("cell has no CPUs")]
    NoCpus,
    #[error("cell has no memory")]
    NoMemory,
    #[error(transparent)]
    Resource(#[from] ResourceError),
    #[error("{0} overlaps {1}")]
    Overlap(Resource, Resource),
    #[error("duplicate {0}")]
    Duplicate(Resource),
    #[error("{0} is not a device resource")]
    NotADevice(Resource),
    #[error("comm with `{peer}`: {reason}")]
    BadComm { peer: String, reason: &'static str },
    #[error("duplicate `{0}` directive")]
    DuplicateDirective(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("syntax error at {0}")]
    Syntax(#[from] SyntaxError),
    #[error("invalid configuration: {0}")]
    Semantic(#[from] SemanticError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LoadError {
    #[error("bad magic 0x{0:08x}")]
    BadMagic(u32),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated record at offset {offset}")]
    TruncatedRecord { offset: usize },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

impl From<DecodeError> for LoadError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::BadMagic { found, .. } => LoadError::BadMagic(found),
            DecodeError::UnsupportedVersion(v) => LoadError::UnsupportedVersion(v),
            DecodeError::TruncatedRecord { offset, .. } => LoadError::TruncatedRecord { offset },
            DecodeError::TrailingBytes(n) => {
                LoadError::InvariantViolation(format!("{n} trailing bytes"))
            }
        }
    }
}

/// Why a configuration cannot be created on the current ledger.
#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    #[error("no such resource: {0}")]
    NoSuchResource(Resource),
    #[error("{resource} is owned by cell {owner}, not the root cell")]
    NotOwnedByRoot { resource: Resource, owner: CellId },
    #[error("{requested} exceeds platform permissions {allowed}", requested = Resource::MemRegion(*.requested))]
    PermissionExceeded { requested: MemRegion, allowed: PermSet },
    #[error("{0} cannot be assigned to a cell")]
    NotAssignable(Resource),
    #[error("{resource} overlaps shared channel {channel}")]
    SharedRegion { resource: Resource, channel: u32 },
}

impl CellConfig {
    /// A config with the given name and nothing else; fill in the rest
    /// before use.
    pub fn named(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            cpus: BTreeSet::new(),
            mem: Vec::new(),
            devices: Vec::new(),
            irqs: BTreeSet::new(),
            comm_regions: Vec::new(),
            workload: Workload::Idle,
        }
    }

    /// Every ledger-tracked resource this config asks for.
    pub fn resources(&self) -> Vec<Resource> {
        let mut out: Vec<Resource> = self.cpus.iter().copied().map(Resource::Cpu).collect();
        out.extend(self.mem.iter().copied().map(Resource::MemRegion));
        out.extend(self.devices.iter().cloned());
        out.extend(self.irqs.iter().copied().map(Resource::IrqLine));
        out
    }

    /// Sorts list fields into emission order: regions by base, devices by
    /// kind then address, comm declarations by peer.
    pub fn canonicalize(&mut self) {
        self.mem.sort();
        self.devices.sort();
        self.comm_regions.sort();
    }

    pub fn canonical(mut self) -> Self {
        self.canonicalize();
        self
    }

    pub fn validate(&self) -> Result<(), SemanticError> {
        if self.name.len() > MAX_CELL_NAME || !machine::valid_name_chars(&self.name) {
            return Err(SemanticError::BadName(self.name.clone()));
        }
        if self.cpus.is_empty() {
            return Err(SemanticError::NoCpus);
        }
        if self.mem.is_empty() {
            return Err(SemanticError::NoMemory);
        }
        for r in &self.mem {
            Resource::MemRegion(*r).validate()?;
        }
        for d in &self.devices {
            match d {
                Resource::MmioDevice { .. }
                | Resource::PciDevice(_)
                | Resource::IoPortRange { .. } => d.validate()?,
                _ => return Err(SemanticError::NotADevice(d.clone())),
            }
        }

        let mut windows: Vec<Resource> = self.mem.iter().copied().map(Resource::MemRegion).collect();
        windows.extend(
            self.devices
                .iter()
                .filter(|d| matches!(d, Resource::MmioDevice { .. }))
                .cloned(),
        );
        windows.sort_by_key(|r| r.addr_range());
        for w in windows.windows(2) {
            let (_, end) = w[0].addr_range().unwrap();
            let (base, _) = w[1].addr_range().unwrap();
            if base < end {
                return Err(SemanticError::Overlap(w[0].clone(), w[1].clone()));
            }
        }

        let mut ports: Vec<(u32, u32, &Resource)> = self
            .devices
            .iter()
            .filter_map(|d| match *d {
                Resource::IoPortRange { base, len } => {
                    Some((u32::from(base), u32::from(base) + u32::from(len), d))
                }
                _ => None,
            })
            .collect();
        ports.sort_by_key(|&(b, e, _)| (b, e));
        for w in ports.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(SemanticError::Overlap(w[0].2.clone(), w[1].2.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        for d in &self.devices {
            let key = match d {
                Resource::MmioDevice { name, .. } => format!("mmio:{name}"),
                Resource::PciDevice(bdf) => format!("pci:{bdf}"),
                _ => continue,
            };
            if !seen.insert(key) {
                return Err(SemanticError::Duplicate(d.clone()));
            }
        }

        for c in &self.comm_regions {
            let bad = |reason| SemanticError::BadComm {
                peer: c.peer.clone(),
                reason,
            };
            if c.peer.len() > MAX_CELL_NAME || !machine::valid_name_chars(&c.peer) {
                return Err(bad("bad peer name"));
            }
            if c.peer == self.name {
                return Err(bad("a cell cannot share with itself"));
            }
            if c.size == 0 || c.size % PAGE_SIZE != 0 {
                return Err(bad("size must be a non-zero multiple of 4096"));
            }
            if c.vectors == 0 {
                return Err(bad("at least one vector is required"));
            }
        }
        Ok(())
    }

    /// Canonical text form; [`parse_config`] reads it back to an equal
    /// config.
    pub fn to_dsl(&self) -> String {
        let c = self.clone().canonical();
        let mut s = String::new();
        let _ = writeln!(s, "cell {}", dsl::quote(&c.name));
        if !c.cpus.is_empty() {
            let _ = writeln!(s, "cpu {}", dsl::format_list(c.cpus.iter().copied()));
        }
        for m in &c.mem {
            let _ = writeln!(s, "mem {:#x} {:#x} {}", m.base, m.size, m.flags);
        }
        for d in &c.devices {
            let _ = match d {
                Resource::MmioDevice { name, base, size } => {
                    writeln!(s, "mmio {name} {base:#x} {size:#x}")
                }
                Resource::PciDevice(bdf) => writeln!(s, "pci {bdf:#06x}"),
                Resource::IoPortRange { base, len } => writeln!(s, "ioport {base:#x} {len:#x}"),
                _ => Ok(()),
            };
        }
        if !c.irqs.is_empty() {
            let _ = writeln!(s, "irq {}", dsl::format_list(c.irqs.iter().copied()));
        }
        for cm in &c.comm_regions {
            let _ = writeln!(
                s,
                "comm peer={} size={:#x} vectors={}",
                cm.peer, cm.size, cm.vectors
            );
        }
        let _ = match &c.workload {
            Workload::Idle => writeln!(s, "run idle"),
            Workload::Stress => writeln!(s, "run stress"),
            Workload::LatencyResponder => writeln!(s, "run latency-responder"),
            Workload::Script(p) => writeln!(s, "run script {}", dsl::quote(p)),
        };
        s
    }
}

pub fn parse_config(text: &str) -> Result<CellConfig, ConfigError> {
    let mut name: Option<String> = None;
    let mut cfg = CellConfig::named("");
    let mut workload = None;
    for d in dsl::tokenize(text)? {
        match d.name() {
            "cell" => {
                let a = d.arity(1)?;
                if name.is_some() {
                    return Err(SemanticError::DuplicateDirective("cell").into());
                }
                name = Some(a[0].quoted()?.to_string());
            }
            "cpu" => cfg.cpus.extend(d.arity(1)?[0].list()?),
            "irq" => cfg.irqs.extend(d.arity(1)?[0].list()?),
            "mem" => match machine::parse_resource(&d)? {
                Resource::MemRegion(m) => cfg.mem.push(m),
                _ => unreachable!(),
            },
            "mmio" | "pci" | "ioport" => cfg.devices.push(machine::parse_resource(&d)?),
            "comm" => {
                d.only_keys(&["peer", "size", "vectors"])?;
                let size_tok = d.kv("size")?.unwrap_or(&d.keyword);
                let size = dsl::parse_hex(d.require_kv("size")?)
                    .ok_or_else(|| size_tok.err("`size=` must be hexadecimal"))?;
                let vec_tok = d.kv("vectors")?.unwrap_or(&d.keyword);
                let vectors = d
                    .require_kv("vectors")?
                    .parse::<u16>()
                    .map_err(|_| vec_tok.err("`vectors=` must be a decimal u16"))?;
                cfg.comm_regions.push(CommDecl {
                    peer: d.require_kv("peer")?.to_string(),
                    size,
                    vectors,
                });
            }
            "run" => {
                if workload.is_some() {
                    return Err(SemanticError::DuplicateDirective("run").into());
                }
                let first = d.args.first().ok_or_else(|| d.keyword.err("`run` needs a workload"))?;
                workload = Some(match first.word()? {
                    "idle" => Workload::Idle,
                    "stress" => Workload::Stress,
                    "latency-responder" => Workload::LatencyResponder,
                    "script" => Workload::Script(d.arity(2)?[1].text()?.to_string()),
                    other => return Err(first.err(format!("unknown workload `{other}`")).into()),
                });
                if !matches!(workload, Some(Workload::Script(_))) {
                    d.arity(1)?;
                }
            }
            other => return Err(d.keyword.err(format!("unknown directive `{other}`")).into()),
        }
    }
    cfg.name = name.ok_or(SemanticError::MissingName)?;
    cfg.workload = workload.unwrap_or_default();
    cfg.canonicalize();
    cfg.validate()?;
    Ok(cfg)
}

/// Lists every requested resource that is absent from `platform` or not
/// currently held by the root cell. An empty result means the config can
/// be created.
pub fn validate_against(
    cfg: &CellConfig,
    platform: &MachinePlatform,
    ledger: &OwnershipLedger,
) -> Vec<Violation> {
    let mut out = Vec::new();
    for r in cfg.resources() {
        match &r {
            Resource::MemRegion(req) => {
                let Some(parent) = platform
                    .mem_regions()
                    .find(|p| p.contains_range(req.base, req.size))
                else {
                    out.push(Violation::NoSuchResource(r));
                    continue;
                };
                if !parent.flags.contains(req.flags) {
                    out.push(Violation::PermissionExceeded {
                        requested: *req,
                        allowed: parent.flags,
                    });
                    continue;
                }
                if let Some(owner) = ledger
                    .mem_owners(req.base, req.size)
                    .into_iter()
                    .map(|(_, _, o)| o)
                    .find(|o| !o.is_root())
                {
                    out.push(Violation::NotOwnedByRoot { resource: r, owner });
                    continue;
                }
                if let Some(ch) = ledger.grant_overlapping(req.base, req.size) {
                    out.push(Violation::SharedRegion {
                        resource: r,
                        channel: ch,
                    });
                }
            }
            _ => {
                if !platform.contains(&r) {
                    out.push(Violation::NoSuchResource(r));
                    continue;
                }
                if matches!(&r, Resource::MmioDevice { name, .. } if name == GIC_DIST_NAME) {
                    out.push(Violation::NotAssignable(r));
                    continue;
                }
                match ledger.owner_of(&r) {
                    Ok(owner) if owner.is_root() => {}
                    Ok(owner) => out.push(Violation::NotOwnedByRoot { resource: r, owner }),
                    Err(_) => out.push(Violation::NoSuchResource(r)),
                }
            }
        }
    }
    out
}

/// Serializes a valid config. Output is canonical: it does not depend on
/// the order of the config's list fields.
pub fn emit_binary(cfg: &CellConfig) -> Vec<u8> {
    let c = cfg.clone().canonical();
    let count = |n: usize| u16::try_from(n).expect("record count exceeds u16");
    let mut w = ByteWriter::new();
    codec::write_preamble(&mut w, CONFIG_MAGIC, CONFIG_VERSION);
    w.u16(count(c.cpus.len()))
        .u16(count(c.mem.len()))
        .u16(count(c.devices.len()))
        .u16(count(c.irqs.len()))
        .u16(count(c.comm_regions.len()))
        .fixed_str(&c.name, NAME_FIELD);
    for cpu in &c.cpus {
        w.u32(*cpu);
    }
    for m in &c.mem {
        w.u64(m.base).u64(m.size).u32(m.flags.bits());
    }
    for d in &c.devices {
        let (kind, name, a, b) = match d {
            Resource::MmioDevice { name, base, size } => (DEV_MMIO, name.as_str(), *base, *size),
            Resource::PciDevice(bdf) => (DEV_PCI, "", u64::from(*bdf), 0),
            Resource::IoPortRange { base, len } => (DEV_IOPORT, "", u64::from(*base), u64::from(*len)),
            other => panic!("{other} is not a device resource"),
        };
        w.u8(kind).fixed_str(name, DEVICE_NAME_FIELD).u64(a).u64(b);
    }
    for irq in &c.irqs {
        w.u32(*irq);
    }
    for cm in &c.comm_regions {
        w.fixed_str(&cm.peer, NAME_FIELD).u64(cm.size).u16(cm.vectors);
    }
    let path = match &c.workload {
        Workload::Script(p) => p.as_bytes(),
        _ => &[],
    };
    w.u8(c.workload.code())
        .u16(u16::try_from(path.len()).expect("script path exceeds u16"))
        .bytes(path);
    w.finish()
}

pub fn load_binary(bytes: &[u8]) -> Result<CellConfig, LoadError> {
    let mut r = ByteReader::new(bytes);
    let cfg = decode(&mut r)?;
    r.expect_end()?;
    cfg.validate()
        .map_err(|e| LoadError::InvariantViolation(e.to_string()))?;
    Ok(cfg)
}

pub(crate) fn decode(r: &mut ByteReader<'_>) -> Result<CellConfig, LoadError> {
    codec::read_preamble(r, CONFIG_MAGIC, CONFIG_VERSION)?;
    let cpu_count = r.u16()?;
    let mem_count = r.u16()?;
    let dev_count = r.u16()?;
    let irq_count = r.u16()?;
    let comm_count = r.u16()?;
    let mut cfg = CellConfig::named(utf8(r.fixed_str(NAME_FIELD)?)?);

    for _ in 0..cpu_count {
        cfg.cpus.insert(r.u32()?);
    }
    for _ in 0..mem_count {
        let (base, size, bits) = (r.u64()?, r.u64()?, r.u32()?);
        let flags = PermSet::from_bits(bits)
            .ok_or_else(|| LoadError::InvariantViolation(format!("bad flags {bits:#x}")))?;
        cfg.mem.push(MemRegion::new(base, size, flags));
    }
    for _ in 0..dev_count {
        let kind = r.u8()?;
        let name = utf8(r.fixed_str(DEVICE_NAME_FIELD)?)?;
        let (a, b) = (r.u64()?, r.u64()?);
        let narrow = |v: u64| {
            u16::try_from(v).map_err(|_| LoadError::InvariantViolation(format!("{v:#x} exceeds u16")))
        };
        cfg.devices.push(match kind {
            DEV_MMIO => Resource::MmioDevice { name, base: a, size: b },
            DEV_PCI => Resource::PciDevice(narrow(a)?),
            DEV_IOPORT => Resource::IoPortRange {
                base: narrow(a)?,
                len: narrow(b)?,
            },
            k => return Err(LoadError::InvariantViolation(format!("unknown device kind {k}"))),
        });
    }
    for _ in 0..irq_count {
        cfg.irqs.insert(r.u32()?);
    }
    for _ in 0..comm_count {
        let peer = utf8(r.fixed_str(NAME_FIELD)?)?;
        cfg.comm_regions.push(CommDecl {
            peer,
            size: r.u64()?,
            vectors: r.u16()?,
        });
    }
    let kind = r.u8()?;
    let len = r.u16()?;
    let path = utf8(r.take(usize::from(len))?)?;
    cfg.workload = match (kind, path.is_empty()) {
        (0, true) => Workload::Idle,
        (1, true) => Workload::Stress,
        (2, true) => Workload::LatencyResponder,
        (3, _) => Workload::Script(path),
        _ => return Err(LoadError::InvariantViolation(format!("bad workload record {kind}"))),
    };
    if cfg.cpus.len() != usize::from(cpu_count) || cfg.irqs.len() != usize::from(irq_count) {
        return Err(LoadError::InvariantViolation("duplicate cpu or irq entry".into()));
    }
    Ok(cfg)
}

fn utf8(b: &[u8]) -> Result<String, LoadError> {
    String::from_utf8(b.to_vec()).map_err(|_| LoadError::InvariantViolation("name is not UTF-8".into()))
}
