//! Binary search checkpoints: an 8-byte magic, a little-endian `u32`
//! format version, then the CBOR-encoded search state.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::search::SearchState;
use crate::error::{bail, Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ADANASCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn to_bytes(state: &SearchState) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    ciborium::into_writer(state, &mut out).map_err(|e| Error::Data(format!("checkpoint encoding: {e}")))?;
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<SearchState> {
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        bail!(Data, "not a search checkpoint");
    }
    let version = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]);
    if version != CHECKPOINT_VERSION {
        bail!(Data, "checkpoint format version {} (expected {})", version, CHECKPOINT_VERSION);
    }
    ciborium::from_reader(&bytes[12..]).map_err(|e| Error::Data(format!("corrupt checkpoint: {e}")))
}

/// Writes through a temporary file so an interrupted save never leaves a
/// half-written checkpoint behind.
pub fn save(state: &SearchState, path: &Path) -> Result<()> {
    let bytes = to_bytes(state)?;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SearchState> {
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes)
}
