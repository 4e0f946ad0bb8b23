// SPDX-License-Identifier: Apache-2.0

//! Deterministic simulator of a static-partitioning hypervisor.
//!
//! A booted OS is lifted into the root cell ([`hvcore::enable`]) and the
//! machine ([`machine`]) is then split into isolated cells described by
//! [`cellconfig`] files. Guest accesses run through a trap engine that
//! only records reinjected interrupts, emulated registers and
//! instructions, violations and management calls. [`irq`] models
//! interrupt latency, [`comm`] shared-memory channels with doorbells, and
//! [`bench`](mod@bench) reproduces the interrupt-latency table.
//!
//! Runnable examples, one per capability:
//!
//! | example | shows |
//! |---|---|
//! | `partition_quad_core` | enable, carve a cell, a rejected overlap, destroy |
//! | `cell_lifecycle` | every lifecycle operation and the management log |
//! | `trap_taxonomy` | which accesses trap and how |
//! | `gic_distributor` | distributor emulation cost of a guest script |
//! | `comm_channel` | channel setup, PCI discovery, doorbells |
//! | `config_codec` | text and binary config round trip |
//! | `latency_table` | the six-scenario latency table |

pub mod bench;
pub mod cellconfig;
pub mod cli;
pub mod codec;
pub mod comm;
pub mod dsl;
pub mod hvcore;
pub mod irq;
pub mod machine;
pub mod snapshot;
