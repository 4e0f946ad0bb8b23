// SPDX-License-Identifier: Apache-2.0

//! Turn-based guest workloads.
//!
//! Guests do not execute instructions; they issue a stream of [`Step`]s
//! that the trap engine classifies. Script files hold one step per line:
//!
//! ```text
//! # comments as in cell configs
//! read 0x90000000 4
//! write 0x90000008 8
//! ioread 0x3f8 1
//! iowrite 0x3f8 1
//! instr cpuid
//! dist 0x100            # GIC distributor register offset
//! repeat 10000 dist 0x180
//! ```

use thiserror::Error;

use super::{Access, AccessOutcome, CellId, CellState, HvError, Hypervisor};
use crate::cellconfig::Workload;
use crate::dsl::{self, SyntaxError};
use crate::machine::Resource;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Step {
    Access(Access),
    /// Write to the GIC distributor at a register offset.
    Distributor(u32),
}

/// A step with its repetition count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScriptLine {
    pub step: Step,
    pub repeat: u32,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("syntax error at {0}")]
    Syntax(#[from] SyntaxError),
    #[error("cannot read script `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Outcome tally of a batch of steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepTally {
    pub direct: u64,
    pub emulated: u64,
    pub violations: u64,
}

impl StepTally {
    fn add(&mut self, o: AccessOutcome) {
        match o {
            AccessOutcome::Direct => self.direct += 1,
            AccessOutcome::Emulated => self.emulated += 1,
            AccessOutcome::Violation => self.violations += 1,
        }
    }
}

pub fn parse_script(text: &str) -> Result<Vec<ScriptLine>, SyntaxError> {
    let mut out = Vec::new();
    for d in dsl::tokenize(text)? {
        let (repeat, keyword, args) = if d.name() == "repeat" {
            let count = d
                .args
                .first()
                .ok_or_else(|| d.keyword.err("`repeat` needs a count"))?;
            let n = u32::try_from(count.dec()?).map_err(|_| count.err("count out of range"))?;
            let kw = d
                .args
                .get(1)
                .ok_or_else(|| d.keyword.err("`repeat` needs a step"))?;
            (n, kw, &d.args[2..])
        } else {
            (1, &d.keyword, &d.args[..])
        };
        let want = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(keyword.err(format!("expected {n} argument(s)")))
            }
        };
        let width = |t: &dsl::Token| {
            u8::try_from(t.dec()?).map_err(|_| t.err("width out of range"))
        };
        let port = |t: &dsl::Token| {
            u16::try_from(t.hex()?).map_err(|_| t.err("port exceeds 16 bits"))
        };
        let step = match keyword.word()? {
            "read" => {
                want(2)?;
                Step::Access(Access::mem_read(args[0].hex()?, width(&args[1])?))
            }
            "write" => {
                want(2)?;
                Step::Access(Access::mem_write(args[0].hex()?, width(&args[1])?))
            }
            "ioread" => {
                want(2)?;
                Step::Access(Access::io_read(port(&args[0])?, width(&args[1])?))
            }
            "iowrite" => {
                want(2)?;
                Step::Access(Access::io_write(port(&args[0])?, width(&args[1])?))
            }
            "instr" => {
                want(1)?;
                Step::Access(Access::instr(args[0].word()?))
            }
            "dist" => {
                want(1)?;
                let off = u32::try_from(args[0].hex()?).map_err(|_| args[0].err("offset exceeds 32 bits"))?;
                Step::Distributor(off)
            }
            other => return Err(keyword.err(format!("unknown step `{other}`"))),
        };
        out.push(ScriptLine { step, repeat });
    }
    Ok(out)
}

pub fn load_script(path: &str) -> Result<Vec<ScriptLine>, ScriptError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
        path: path.to_string(),
        source,
    })?;
    Ok(parse_script(&text)?)
}

impl Hypervisor {
    pub fn step(&mut self, cell: CellId, step: &Step) -> Result<AccessOutcome, HvError> {
        match step {
            Step::Access(a) => self.handle_access(cell, a.clone()),
            Step::Distributor(off) => self.distributor_access(cell, *off),
        }
    }

    /// Runs script lines in order. Stops early if the cell fails.
    pub fn run_script(&mut self, cell: CellId, lines: &[ScriptLine]) -> Result<StepTally, HvError> {
        let mut tally = StepTally::default();
        for line in lines {
            for _ in 0..line.repeat {
                let o = self.step(cell, &line.step)?;
                tally.add(o);
                if o == AccessOutcome::Violation {
                    return Ok(tally);
                }
            }
        }
        Ok(tally)
    }

    /// Steps that a built-in workload issues on its `n`-th turn.
    ///
    /// `Stress` sweeps the cell's first memory region, `LatencyResponder`
    /// toggles its GPIO, `Idle` and `Script` issue nothing here.
    pub fn builtin_steps(&self, cell: CellId, n: u64) -> Result<Vec<Step>, HvError> {
        let c = self.cell(cell)?;
        let cfg = c.config();
        Ok(match &cfg.workload {
            Workload::Stress => {
                let region = cfg.mem[0];
                let slots = (region.size / 64).max(1);
                let addr = region.base + (n % slots) * 64;
                let mut steps = vec![Step::Access(Access::mem_read(addr, 8))];
                if region.flags.contains(crate::machine::PermSet::WRITE) {
                    steps.push(Step::Access(Access::mem_write(addr, 8)));
                }
                steps
            }
            Workload::LatencyResponder => responder_gpio(self, cell)
                .map(|base| vec![Step::Access(Access::mem_write(base, 4))])
                .unwrap_or_default(),
            Workload::Idle | Workload::Script(_) => Vec::new(),
        })
    }

    /// Advances every running cell's built-in workload by one turn.
    pub fn tick_all(&mut self, n: u64) -> Result<StepTally, HvError> {
        let running: Vec<CellId> = self
            .cells()
            .filter(|c| c.state() == CellState::Running)
            .map(|c| c.id())
            .collect();
        let mut tally = StepTally::default();
        for id in running {
            for s in self.builtin_steps(id, n)? {
                if self.cell(id)?.state() != CellState::Running {
                    break;
                }
                tally.add(self.step(id, &s)?);
            }
        }
        Ok(tally)
    }
}

/// Base of the GPIO window a responder cell toggles, if it owns one.
pub(crate) fn responder_gpio(hv: &Hypervisor, cell: CellId) -> Option<u64> {
    let cfg = hv.cell(cell).ok()?.config();
    cfg.devices.iter().find_map(|d| match d {
        Resource::MmioDevice { name, base, .. } if name == "gpio" => Some(*base),
        _ => None,
    })
}
