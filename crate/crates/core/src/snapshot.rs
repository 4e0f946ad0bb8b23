// SPDX-License-Identifier: Apache-2.0

//! Versioned binary snapshot of a hypervisor session.
//!
//! Layout: `{magic u32 = "JHSS", version u16, body_len u64, body}`, with the
//! same little-endian framing as binary cell configs. The body is the
//! bincode encoding of [`Hypervisor`].

use thiserror::Error;

use crate::codec::{self, ByteReader, ByteWriter, DecodeError};
use crate::hvcore::{HvError, Hypervisor};

pub const SNAPSHOT_MAGIC: u32 = 0x4A48_5353;
pub const SNAPSHOT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("corrupt snapshot body: {0}")]
    Body(#[from] bincode::Error),
    #[error("snapshot violates hypervisor invariants: {0}")]
    Invariant(#[from] HvError),
}

pub fn save(hv: &Hypervisor) -> Vec<u8> {
    let body = bincode::serialize(hv).expect("hypervisor state is always serializable");
    let mut w = ByteWriter::new();
    codec::write_preamble(&mut w, SNAPSHOT_MAGIC, SNAPSHOT_VERSION);
    w.u64(body.len() as u64).bytes(&body);
    w.finish()
}

pub fn load(bytes: &[u8]) -> Result<Hypervisor, SnapshotError> {
    let mut r = ByteReader::new(bytes);
    codec::read_preamble(&mut r, SNAPSHOT_MAGIC, SNAPSHOT_VERSION)?;
    let len = r.u64()?;
    let len = usize::try_from(len).unwrap_or(usize::MAX);
    let body = r.take(len)?;
    r.expect_end()?;
    let hv: Hypervisor = bincode::deserialize(body)?;
    hv.check_invariants()?;
    Ok(hv)
}
