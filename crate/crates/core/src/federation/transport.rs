//! Slot-addressed message exchange between nodes.
//!
//! Each (round, study, fold) slot holds at most one frame. Writers never
//! overwrite; readers copy, so a broadcast can be read by every study.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::error::ProtocolError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Round1 { study: usize, fold: usize },
    Broadcast { fold: usize },
    Round2 { study: usize, fold: usize },
    OneShot { study: usize },
}

impl Slot {
    /// Path of the slot relative to a file-transport root.
    pub fn relative_path(&self) -> PathBuf {
        match *self {
            Slot::Round1 { study, fold } => PathBuf::from(format!("round1/dc{study}_k{fold}.bin")),
            Slot::Broadcast { fold } => PathBuf::from(format!("broadcast/k{fold}.bin")),
            Slot::Round2 { study, fold } => PathBuf::from(format!("round2/dc{study}_k{fold}.bin")),
            Slot::OneShot { study } => PathBuf::from(format!("oneshot/dc{study}.bin")),
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.relative_path().display())
    }
}

pub trait Transport: Send + Sync {
    fn put(&self, slot: Slot, frame: Vec<u8>) -> Result<(), ProtocolError>;
    fn get(&self, slot: Slot) -> Result<Vec<u8>, ProtocolError>;
    fn name(&self) -> &'static str;
}

#[derive(Debug, Default)]
pub struct MemoryTransport {
    slots: Mutex<BTreeMap<Slot, Vec<u8>>>,
}

impl MemoryTransport {
    pub fn new() -> Self {
        Self::default()
    }

    /// All frames in slot order.
    pub fn frames(&self) -> Vec<(Slot, Vec<u8>)> {
        let slots = self.slots.lock().unwrap();
        slots.iter().map(|(s, f)| (*s, f.clone())).collect()
    }
}

impl Transport for MemoryTransport {
    fn put(&self, slot: Slot, frame: Vec<u8>) -> Result<(), ProtocolError> {
        let mut slots = self.slots.lock().unwrap();
        if slots.contains_key(&slot) {
            return Err(ProtocolError::SlotOccupied(slot.to_string()));
        }
        slots.insert(slot, frame);
        Ok(())
    }

    fn get(&self, slot: Slot) -> Result<Vec<u8>, ProtocolError> {
        let slots = self.slots.lock().unwrap();
        slots.get(&slot).cloned().ok_or_else(|| ProtocolError::Missing(slot.to_string()))
    }

    fn name(&self) -> &'static str {
        "memory"
    }
}

/// Exchange through a shared directory, one file per slot.
#[derive(Debug)]
pub struct FileTransport {
    root: PathBuf,
}

impl FileTransport {
    pub fn new(root: impl AsRef<Path>) -> Result<Self, ProtocolError> {
        let root = root.as_ref().to_path_buf();
        for sub in ["round1", "broadcast", "round2", "oneshot"] {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(FileTransport { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl Transport for FileTransport {
    fn put(&self, slot: Slot, frame: Vec<u8>) -> Result<(), ProtocolError> {
        let path = self.root.join(slot.relative_path());
        // Write to a temporary name and rename, so readers never see a partial frame.
        let tmp = path.with_extension("tmp");
        let mut f = fs::OpenOptions::new().write(true).create_new(true).open(&tmp).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                ProtocolError::SlotOccupied(slot.to_string())
            } else {
                e.into()
            }
        })?;
        f.write_all(&frame)?;
        f.sync_all()?;
        drop(f);
        if path.exists() {
            fs::remove_file(&tmp)?;
            return Err(ProtocolError::SlotOccupied(slot.to_string()));
        }
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    fn get(&self, slot: Slot) -> Result<Vec<u8>, ProtocolError> {
        let path = self.root.join(slot.relative_path());
        fs::read(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                ProtocolError::Missing(slot.to_string())
            } else {
                e.into()
            }
        })
    }

    fn name(&self) -> &'static str {
        "files"
    }
}
