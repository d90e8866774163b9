//! Checkpoints are a JSON document `{ "version": N, "state": { ... } }`
//! holding the whole [`SimulationState`], scenario and random streams
//! included. Floats are written so that they read back bit-for-bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimulationState;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize)]
struct CheckpointRef<'a> {
    version: u32,
    state: &'a SimulationState,
}

#[derive(Deserialize)]
struct Checkpoint {
    version: u32,
    state: SimulationState,
}

pub fn save_checkpoint(state: &SimulationState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &CheckpointRef { version: CHECKPOINT_VERSION, state })
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SimulationState> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let cp: Checkpoint = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if cp.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            cp.version
        )));
    }
    cp.state.config.validate()?;
    Ok(cp.state)
}
