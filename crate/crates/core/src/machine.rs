// SPDX-License-Identifier: Apache-2.0

//! Physical platform model: the inventory of partitionable resources and
//! the shared-bus latency parameters.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{self, Directive, SyntaxError};
use crate::hvcore::{CellId, CellState, HvState, Hypervisor};
use crate::cellconfig::Workload;

/// Alignment unit for every address-space resource.
pub const PAGE_SIZE: u64 = 4096;

/// Longest MMIO device name; matches the fixed-width device record.
pub const MAX_DEVICE_NAME: usize = 16;

/// Name of the MMIO window whose accesses are always emulated.
pub const GIC_DIST_NAME: &str = "gic-dist";

#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PermSet(u32);

impl PermSet {
    pub const READ: PermSet = PermSet(1 << 0);
    pub const WRITE: PermSet = PermSet(1 << 1);
    pub const EXECUTE: PermSet = PermSet(1 << 2);
    pub const DMA: PermSet = PermSet(1 << 3);
    pub const NONE: PermSet = PermSet(0);
    pub const ALL: PermSet = PermSet(0xf);
    pub const RW: PermSet = PermSet(0x3);

    pub const fn bits(self) -> u32 {
        self.0
    }

    pub fn from_bits(bits: u32) -> Option<PermSet> {
        (bits & !Self::ALL.0 == 0).then_some(PermSet(bits))
    }

    pub const fn contains(self, other: PermSet) -> bool {
        self.0 & other.0 == other.0
    }

    pub const fn union(self, other: PermSet) -> PermSet {
        PermSet(self.0 | other.0)
    }

    /// Parses `rwxd`-style strings; `-` is a placeholder and ignored.
    pub fn parse(s: &str) -> Option<PermSet> {
        let mut set = PermSet::NONE;
        for c in s.chars() {
            let bit = match c {
                'r' => Self::READ,
                'w' => Self::WRITE,
                'x' => Self::EXECUTE,
                'd' => Self::DMA,
                '-' => continue,
                _ => return None,
            };
            if set.contains(bit) {
                return None;
            }
            set = set.union(bit);
        }
        Some(set)
    }
}

impl fmt::Display for PermSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == 0 {
            return f.write_str("-");
        }
        for (bit, c) in [
            (Self::READ, 'r'),
            (Self::WRITE, 'w'),
            (Self::EXECUTE, 'x'),
            (Self::DMA, 'd'),
        ] {
            if self.contains(bit) {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for PermSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PermSet({self})")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MemRegion {
    pub base: u64,
    pub size: u64,
    pub flags: PermSet,
}

impl MemRegion {
    pub const fn new(base: u64, size: u64, flags: PermSet) -> Self {
        Self { base, size, flags }
    }

    /// Exclusive end. Only meaningful for validated regions.
    pub fn end(&self) -> u64 {
        self.base + self.size
    }

    pub fn contains_range(&self, addr: u64, len: u64) -> bool {
        addr >= self.base && addr.checked_add(len).is_some_and(|e| e <= self.end())
    }
}

/// One exclusively assignable hardware unit.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Resource {
    Cpu(u32),
    MemRegion(MemRegion),
    MmioDevice { name: String, base: u64, size: u64 },
    PciDevice(u16),
    IoPortRange { base: u16, len: u16 },
    IrqLine(u32),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ResourceError {
    #[error("{0}: size must be non-zero")]
    ZeroSize(Resource),
    #[error("{0}: base and size must be multiples of {PAGE_SIZE:#x}")]
    Unaligned(Resource),
    #[error("{0}: range overflows the 64-bit address space")]
    Overflow(Resource),
    #[error("{0}: port range exceeds 0xffff")]
    PortOverflow(Resource),
    #[error("bad device name `{0}` (1..={MAX_DEVICE_NAME} bytes of [A-Za-z0-9_-])")]
    BadName(String),
}

impl Resource {
    /// Address interval `[base, end)` for memory-mapped resources.
    pub fn addr_range(&self) -> Option<(u64, u64)> {
        match *self {
            Resource::MemRegion(MemRegion { base, size, .. })
            | Resource::MmioDevice { base, size, .. } => Some((base, base.saturating_add(size))),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ResourceError> {
        let check_window = |base: u64, size: u64| {
            if size == 0 {
                Err(ResourceError::ZeroSize(self.clone()))
            } else if !base.is_multiple_of(PAGE_SIZE) || !size.is_multiple_of(PAGE_SIZE) {
                Err(ResourceError::Unaligned(self.clone()))
            } else if base.checked_add(size).is_none() {
                Err(ResourceError::Overflow(self.clone()))
            } else {
                Ok(())
            }
        };
        match self {
            Resource::MemRegion(r) => check_window(r.base, r.size),
            Resource::MmioDevice { name, base, size } => {
                if !valid_device_name(name) {
                    return Err(ResourceError::BadName(name.clone()));
                }
                check_window(*base, *size)
            }
            Resource::IoPortRange { base, len } => {
                if *len == 0 {
                    Err(ResourceError::ZeroSize(self.clone()))
                } else if u32::from(*base) + u32::from(*len) > 0x1_0000 {
                    Err(ResourceError::PortOverflow(self.clone()))
                } else {
                    Ok(())
                }
            }
            Resource::Cpu(_) | Resource::PciDevice(_) | Resource::IrqLine(_) => Ok(()),
        }
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resource::Cpu(i) => write!(f, "cpu {i}"),
            Resource::MemRegion(r) => write!(f, "mem {:#x}+{:#x} {}", r.base, r.size, r.flags),
            Resource::MmioDevice { name, base, size } => {
                write!(f, "mmio {name} {base:#x}+{size:#x}")
            }
            Resource::PciDevice(bdf) => write!(f, "pci {bdf:#06x}"),
            Resource::IoPortRange { base, len } => write!(f, "ioport {base:#x}+{len:#x}"),
            Resource::IrqLine(n) => write!(f, "irq {n}"),
        }
    }
}

pub(crate) fn valid_name_chars(s: &str) -> bool {
    !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

pub(crate) fn valid_device_name(s: &str) -> bool {
    s.len() <= MAX_DEVICE_NAME && valid_name_chars(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GicVersion {
    GicV2,
    GicV3,
}

/// Shape of a random latency term added on top of a fixed shift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Spread {
    /// Zero-width: the term is exactly the shift.
    Fixed,
    /// Log-normal with log-space location `mu` and scale `sigma`.
    LogNormal { mu: f64, sigma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistParams {
    pub shift_us: f64,
    pub spread: Spread,
}

impl DistParams {
    pub const fn fixed(shift_us: f64) -> Self {
        Self {
            shift_us,
            spread: Spread::Fixed,
        }
    }

    pub const fn lognormal(shift_us: f64, mu: f64, sigma: f64) -> Self {
        Self {
            shift_us,
            spread: Spread::LogNormal { mu, sigma },
        }
    }

    /// Log-normal parameterised by its arithmetic mean rather than `mu`.
    pub fn lognormal_with_mean(shift_us: f64, mean: f64, sigma: f64) -> Self {
        Self::lognormal(shift_us, mean.ln() - sigma * sigma / 2.0, sigma)
    }

    /// Expected value of the term.
    pub fn mean(&self) -> f64 {
        match self.spread {
            Spread::Fixed => self.shift_us,
            Spread::LogNormal { mu, sigma } => self.shift_us + (mu + sigma * sigma / 2.0).exp(),
        }
    }

    fn is_valid(&self) -> bool {
        self.shift_us.is_finite()
            && self.shift_us >= 0.0
            && match self.spread {
                Spread::Fixed => true,
                Spread::LogNormal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma >= 0.0,
            }
    }
}

/// Per-delivery latency model of the shared system bus.
///
/// Without the hypervisor a delivery costs `base_latency_us` plus a uniform
/// phase jitter of `±phase_jitter_us`. With it, the reinjection overhead
/// `hv_overhead` is added, and under neighbour stress a `contention` term
/// is added with probability `contention_prob`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BusModel {
    pub base_latency_us: f64,
    pub phase_jitter_us: f64,
    pub hv_overhead: DistParams,
    pub contention: DistParams,
    pub contention_prob: f64,
}

impl Default for BusModel {
    fn default() -> Self {
        Self {
            base_latency_us: 0.4475,
            phase_jitter_us: 0.031_25,
            hv_overhead: DistParams::lognormal(0.69, -2.3, 0.6),
            contention: DistParams::lognormal_with_mean(0.0, 1.0, 0.43),
            contention_prob: 0.10,
        }
    }
}

impl BusModel {
    /// A model with every random term switched off.
    pub fn deterministic(base_latency_us: f64, overhead_us: f64, contention_us: f64) -> Self {
        Self {
            base_latency_us,
            phase_jitter_us: 0.0,
            hv_overhead: DistParams::fixed(overhead_us),
            contention: DistParams::fixed(contention_us),
            contention_prob: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), PlatformError> {
        let ok = self.base_latency_us.is_finite()
            && self.base_latency_us > 0.0
            && self.phase_jitter_us.is_finite()
            && self.phase_jitter_us >= 0.0
            && self.hv_overhead.is_valid()
            && self.contention.is_valid()
            && (0.0..=1.0).contains(&self.contention_prob);
        if ok {
            Ok(())
        } else {
            Err(PlatformError::InvalidBus(*self))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadLevel {
    pub stressed: bool,
}

/// Unvalidated platform description, as read from a platform file or a
/// preset.
#[derive(Clone, Debug, PartialEq)]
pub struct PlatformSpec {
    pub name: String,
    pub resources: Vec<Resource>,
    pub has_pci: bool,
    pub gic_version: GicVersion,
    pub bus: BusModel,
    /// IRQ line wired to the benchmark GPIO, if any.
    pub bench_irq: Option<u32>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlatformError {
    #[error("syntax error at {0}")]
    Syntax(#[from] SyntaxError),
    #[error("{0} overlaps {1}")]
    Overlap(Resource, Resource),
    #[error("platform has no CPUs")]
    EmptyCpuSet,
    #[error("CPU indices must be unique and contiguous from 0, got {0:?}")]
    CpuNotContiguous(Vec<u32>),
    #[error("IRQ line {0} listed twice")]
    DuplicateIrq(u32),
    #[error("duplicate resource {0}")]
    Duplicate(Resource),
    #[error(transparent)]
    InvalidResource(#[from] ResourceError),
    #[error("invalid bus model {0:?}")]
    InvalidBus(BusModel),
    #[error("benchmark IRQ {0} is not a platform IRQ line")]
    BadBenchIrq(u32),
    #[error("missing `platform` directive")]
    MissingName,
}

/// A validated, immutable platform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachinePlatform {
    name: String,
    resources: Vec<Resource>,
    has_pci: bool,
    gic_version: GicVersion,
    bus: BusModel,
    bench_irq: Option<u32>,
}

impl MachinePlatform {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// All resources in canonical (sorted) order.
    pub fn resources(&self) -> &[Resource] {
        &self.resources
    }

    pub fn has_pci(&self) -> bool {
        self.has_pci
    }

    pub fn gic_version(&self) -> GicVersion {
        self.gic_version
    }

    pub fn bus(&self) -> &BusModel {
        &self.bus
    }

    pub fn bench_irq(&self) -> Option<u32> {
        self.bench_irq
    }

    pub fn cpu_count(&self) -> u32 {
        self.resources
            .iter()
            .filter(|r| matches!(r, Resource::Cpu(_)))
            .count() as u32
    }

    pub fn contains(&self, r: &Resource) -> bool {
        self.resources.binary_search(r).is_ok()
    }

    pub fn irq_lines(&self) -> impl Iterator<Item = u32> + '_ {
        self.resources.iter().filter_map(|r| match r {
            Resource::IrqLine(n) => Some(*n),
            _ => None,
        })
    }

    pub fn mem_regions(&self) -> impl Iterator<Item = &MemRegion> + '_ {
        self.resources.iter().filter_map(|r| match r {
            Resource::MemRegion(m) => Some(m),
            _ => None,
        })
    }

    pub fn mmio(&self, name: &str) -> Option<&Resource> {
        self.resources
            .iter()
            .find(|r| matches!(r, Resource::MmioDevice { name: n, .. } if n == name))
    }

    /// The emulated GIC distributor window, if the platform has one.
    pub fn gic_dist(&self) -> Option<(u64, u64)> {
        self.mmio(GIC_DIST_NAME).and_then(Resource::addr_range)
    }

    /// Returns a copy with a different bus model.
    pub fn with_bus(&self, bus: BusModel) -> Result<Self, PlatformError> {
        bus.validate()?;
        Ok(Self {
            bus,
            ..self.clone()
        })
    }
}

pub fn build_platform(spec: PlatformSpec) -> Result<MachinePlatform, PlatformError> {
    for r in &spec.resources {
        r.validate()?;
    }
    spec.bus.validate()?;

    let mut cpus: Vec<u32> = spec
        .resources
        .iter()
        .filter_map(|r| match r {
            Resource::Cpu(i) => Some(*i),
            _ => None,
        })
        .collect();
    if cpus.is_empty() {
        return Err(PlatformError::EmptyCpuSet);
    }
    cpus.sort_unstable();
    if cpus.iter().enumerate().any(|(i, &c)| c != i as u32) {
        return Err(PlatformError::CpuNotContiguous(cpus));
    }

    let mut irqs = BTreeSet::new();
    for r in &spec.resources {
        if let Resource::IrqLine(n) = r {
            if !irqs.insert(*n) {
                return Err(PlatformError::DuplicateIrq(*n));
            }
        }
    }

    check_address_overlap(&spec.resources)?;
    check_port_overlap(&spec.resources)?;

    let mut resources = spec.resources;
    resources.sort();
    if let Some(w) = resources.windows(2).find(|w| w[0] == w[1]) {
        return Err(PlatformError::Duplicate(w[0].clone()));
    }
    let mut names = BTreeSet::new();
    for r in &resources {
        if let Resource::MmioDevice { name, .. } = r {
            if !names.insert(name.as_str()) {
                return Err(PlatformError::Duplicate(r.clone()));
            }
        }
    }
    if let Some(line) = spec.bench_irq {
        if !irqs.contains(&line) {
            return Err(PlatformError::BadBenchIrq(line));
        }
    }

    Ok(MachinePlatform {
        name: spec.name,
        resources,
        has_pci: spec.has_pci,
        gic_version: spec.gic_version,
        bus: spec.bus,
        bench_irq: spec.bench_irq,
    })
}

/// Sort-and-scan over memory and MMIO windows.
fn check_address_overlap(resources: &[Resource]) -> Result<(), PlatformError> {
    let mut windows: Vec<(u64, u64, &Resource)> = resources
        .iter()
        .filter_map(|r| r.addr_range().map(|(b, e)| (b, e, r)))
        .collect();
    windows.sort_by_key(|&(b, e, _)| (b, e));
    let mut reach: Option<(u64, &Resource)> = None;
    for &(b, e, r) in &windows {
        if let Some((end, prev)) = reach {
            if b < end {
                return Err(PlatformError::Overlap(prev.clone(), r.clone()));
            }
        }
        if reach.is_none_or(|(end, _)| e > end) {
            reach = Some((e, r));
        }
    }
    Ok(())
}

fn check_port_overlap(resources: &[Resource]) -> Result<(), PlatformError> {
    let mut ranges: Vec<(u32, u32, &Resource)> = resources
        .iter()
        .filter_map(|r| match *r {
            Resource::IoPortRange { base, len } => {
                Some((u32::from(base), u32::from(base) + u32::from(len), r))
            }
            _ => None,
        })
        .collect();
    ranges.sort_by_key(|&(b, e, _)| (b, e));
    for w in ranges.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(PlatformError::Overlap(w[0].2.clone(), w[1].2.clone()));
        }
    }
    Ok(())
}

/// `stressed` is set iff a running cell other than `measured` declares a
/// stress workload.
pub fn bus_load(hv: &Hypervisor, measured: CellId) -> LoadLevel {
    if hv.state() != HvState::Enabled {
        return LoadLevel::default();
    }
    let stressed = hv.cells().any(|c| {
        c.id() != measured && c.state() == CellState::Running && c.config().workload == Workload::Stress
    });
    LoadLevel { stressed }
}

impl PlatformSpec {
    /// Representative memory map of a quad-core Cortex-A15 board.
    ///
    /// The addresses follow the Tegra K1 layout where known. They are not
    /// an authoritative board description.
    pub fn jetson_tk1() -> Self {
        let mmio = |name: &str, base: u64, size: u64| Resource::MmioDevice {
            name: name.into(),
            base,
            size,
        };
        let mut resources: Vec<Resource> = (0..4).map(Resource::Cpu).collect();
        resources.push(Resource::MemRegion(MemRegion::new(
            0x8000_0000,
            0x8000_0000,
            PermSet::ALL,
        )));
        resources.extend([
            mmio(GIC_DIST_NAME, 0x5004_1000, 0x1000),
            mmio("gic-cpu", 0x5004_2000, 0x2000),
            mmio("gpio", 0x6000_d000, 0x1000),
            mmio("uart-a", 0x7000_6000, 0x1000),
            mmio("i2c", 0x7000_c000, 0x1000),
            mmio("spi", 0x7000_d000, 0x1000),
        ]);
        resources.extend((32..160).map(Resource::IrqLine));
        PlatformSpec {
            name: "jetson-tk1".into(),
            resources,
            has_pci: false,
            gic_version: GicVersion::GicV2,
            bus: BusModel::default(),
            bench_irq: Some(64),
        }
    }

    /// Looks up a built-in preset by name.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "jetson-tk1" => Some(Self::jetson_tk1()),
            _ => None,
        }
    }

    /// Parses the line-oriented platform description.
    ///
    /// ```text
    /// platform "board"
    /// gic v2
    /// pci-bus no
    /// cpu 0-3
    /// mem 0x80000000 0x80000000 rwxd
    /// mmio gpio 0x6000d000 0x1000
    /// pci 0x0100
    /// ioport 0x3f8 0x8
    /// irq 32-159
    /// bench-irq 64
    /// bus base=0.4475 jitter=0.03125 contention-prob=0.1
    /// overhead shift=0.69 mu=-2.3 sigma=0.6
    /// contention shift=0 mean=1.0 sigma=0.43
    /// ```
    pub fn parse(text: &str) -> Result<Self, PlatformError> {
        let mut name = None;
        let mut spec = PlatformSpec {
            name: String::new(),
            resources: Vec::new(),
            has_pci: false,
            gic_version: GicVersion::GicV2,
            bus: BusModel::default(),
            bench_irq: None,
        };
        for d in dsl::tokenize(text)? {
            match d.name() {
                "platform" => {
                    let a = d.arity(1)?;
                    if name.is_some() {
                        return Err(d.keyword.err("duplicate `platform`").into());
                    }
                    name = Some(a[0].text()?.to_string());
                }
                "gic" => {
                    let a = d.arity(1)?;
                    spec.gic_version = match a[0].word()? {
                        "v2" => GicVersion::GicV2,
                        "v3" => GicVersion::GicV3,
                        _ => return Err(a[0].err("expected v2 or v3").into()),
                    };
                }
                "pci-bus" => spec.has_pci = parse_yes_no(&d.arity(1)?[0])?,
                "cpu" => {
                    let a = d.arity(1)?;
                    spec.resources
                        .extend(a[0].list()?.into_iter().map(Resource::Cpu));
                }
                "irq" => {
                    let a = d.arity(1)?;
                    spec.resources
                        .extend(a[0].list()?.into_iter().map(Resource::IrqLine));
                }
                "bench-irq" => spec.bench_irq = Some(dec_u32(&d.arity(1)?[0])?),
                "mem" | "mmio" | "pci" | "ioport" => spec.resources.push(parse_resource(&d)?),
                "bus" => {
                    d.only_keys(&["base", "jitter", "contention-prob"])?;
                    if let Some(t) = d.kv("base")? {
                        spec.bus.base_latency_us = float(t)?;
                    }
                    if let Some(t) = d.kv("jitter")? {
                        spec.bus.phase_jitter_us = float(t)?;
                    }
                    if let Some(t) = d.kv("contention-prob")? {
                        spec.bus.contention_prob = float(t)?;
                    }
                }
                "overhead" => spec.bus.hv_overhead = parse_dist(&d)?,
                "contention" => spec.bus.contention = parse_dist(&d)?,
                other => {
                    return Err(d.keyword.err(format!("unknown directive `{other}`")).into());
                }
            }
        }
        spec.name = name.ok_or(PlatformError::MissingName)?;
        Ok(spec)
    }
}

fn parse_yes_no(t: &dsl::Token) -> Result<bool, SyntaxError> {
    match t.word()? {
        "yes" => Ok(true),
        "no" => Ok(false),
        _ => Err(t.err("expected yes or no")),
    }
}

fn dec_u32(t: &dsl::Token) -> Result<u32, SyntaxError> {
    u32::try_from(t.dec()?).map_err(|_| t.err("value out of range"))
}

fn float(t: &dsl::Token) -> Result<f64, SyntaxError> {
    t.key_value()?
        .1
        .parse()
        .map_err(|_| t.err("expected a number"))
}

fn parse_dist(d: &Directive) -> Result<DistParams, SyntaxError> {
    d.only_keys(&["shift", "mu", "mean", "sigma"])?;
    let shift = d.kv("shift")?.map(float).transpose()?.unwrap_or(0.0);
    let mu = d.kv("mu")?.map(float).transpose()?;
    let mean = d.kv("mean")?.map(float).transpose()?;
    let sigma = d.kv("sigma")?.map(float).transpose()?;
    match (mu, mean, sigma) {
        (None, None, None) => Ok(DistParams::fixed(shift)),
        (Some(mu), None, Some(sigma)) => Ok(DistParams::lognormal(shift, mu, sigma)),
        (None, Some(mean), Some(sigma)) if mean > 0.0 => {
            Ok(DistParams::lognormal_with_mean(shift, mean, sigma))
        }
        _ => Err(d
            .keyword
            .err("expected `sigma=` with exactly one of `mu=` or a positive `mean=`")),
    }
}

/// Parses the address-space and device directives common to platform files
/// and cell configs: `mem`, `mmio`, `pci`, `ioport`.
pub(crate) fn parse_resource(d: &Directive) -> Result<Resource, SyntaxError> {
    match d.name() {
        "mem" => {
            let a = d.arity(3)?;
            let flags = PermSet::parse(a[2].word()?)
                .ok_or_else(|| a[2].err("bad permission string (subset of rwxd)"))?;
            Ok(Resource::MemRegion(MemRegion::new(a[0].hex()?, a[1].hex()?, flags)))
        }
        "mmio" => {
            let a = d.arity(3)?;
            Ok(Resource::MmioDevice {
                name: a[0].word()?.to_string(),
                base: a[1].hex()?,
                size: a[2].hex()?,
            })
        }
        "pci" => {
            let a = d.arity(1)?;
            let bdf = u16::try_from(a[0].hex()?).map_err(|_| a[0].err("bdf exceeds 16 bits"))?;
            Ok(Resource::PciDevice(bdf))
        }
        "ioport" => {
            let a = d.arity(2)?;
            let base = u16::try_from(a[0].hex()?).map_err(|_| a[0].err("port exceeds 16 bits"))?;
            let len = u16::try_from(a[1].hex()?).map_err(|_| a[1].err("length exceeds 16 bits"))?;
            Ok(Resource::IoPortRange { base, len })
        }
        other => Err(d.keyword.err(format!("`{other}` is not a resource directive"))),
    }
}
