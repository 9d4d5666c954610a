//! Append-only record log.
//!
//! Layout: an 8-byte header (`TLLOG\0` + little-endian u16 format version)
//! followed by records of `len: u32 LE | crc32(payload): u32 LE | payload`.
//! A torn or corrupt tail is cut off at the last complete record on open.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const MAGIC: &[u8; 6] = b"TLLOG\0";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 8;
pub const RECORD_HEADER_LEN: usize = 8;
pub const MAX_RECORD_LEN: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("not a record log (bad magic)")]
    BadMagic,
    #[error("unsupported log format version {0}")]
    UnsupportedVersion(u16),
    #[error("log io error: {0}")]
    Io(#[from] std::io::Error),
}

pub fn header() -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..6].copy_from_slice(MAGIC);
    h[6..].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    h
}

pub fn encode_record(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(RECORD_HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

/// Result of scanning a log image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedLog<'a> {
    pub records: Vec<&'a [u8]>,
    /// End offset of each record, i.e. the valid prefix length after it.
    pub boundaries: Vec<usize>,
    /// Length of the valid prefix (header plus complete records).
    pub valid_len: usize,
    /// True when bytes after `valid_len` were ignored.
    pub torn_tail: bool,
}

/// Scans a complete log image. An empty image (or a torn header write) is
/// an empty log.
pub fn decode_log(bytes: &[u8]) -> Result<DecodedLog<'_>, LogError> {
    let expected = header();
    if bytes.len() < HEADER_LEN {
        if expected.starts_with(bytes) {
            return Ok(DecodedLog {
                records: Vec::new(),
                boundaries: Vec::new(),
                valid_len: 0,
                torn_tail: !bytes.is_empty(),
            });
        }
        return Err(LogError::BadMagic);
    }
    if &bytes[..6] != MAGIC {
        return Err(LogError::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[6], bytes[7]]);
    if version != FORMAT_VERSION {
        return Err(LogError::UnsupportedVersion(version));
    }
    let mut records = Vec::new();
    let mut boundaries = Vec::new();
    let mut pos = HEADER_LEN;
    while bytes.len() - pos >= RECORD_HEADER_LEN {
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap());
        let start = pos + RECORD_HEADER_LEN;
        if len > MAX_RECORD_LEN || bytes.len() - start < len {
            break;
        }
        let payload = &bytes[start..start + len];
        if crc32fast::hash(payload) != crc {
            break;
        }
        records.push(payload);
        pos = start + len;
        boundaries.push(pos);
    }
    Ok(DecodedLog {
        records,
        boundaries,
        valid_len: pos,
        torn_tail: pos != bytes.len(),
    })
}

/// An open log file positioned for appends.
#[derive(Debug)]
pub struct RecordLog {
    path: PathBuf,
    file: File,
    sync: bool,
}

impl RecordLog {
    /// Opens (creating if needed) and recovers the log, returning its records.
    pub fn open(path: &Path, sync: bool) -> Result<(Self, Vec<Vec<u8>>), LogError> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let decoded = decode_log(&bytes)?;
        let records = decoded.records.iter().map(|r| r.to_vec()).collect();
        if decoded.valid_len < HEADER_LEN {
            file.set_len(0)?;
            file.seek(SeekFrom::Start(0))?;
            file.write_all(&header())?;
        } else if decoded.torn_tail {
            tracing::warn!(
                path = %path.display(),
                dropped = bytes.len() - decoded.valid_len,
                "truncating torn log tail"
            );
            file.set_len(decoded.valid_len as u64)?;
        }
        file.seek(SeekFrom::End(0))?;
        if sync {
            file.sync_all()?;
        }
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                sync,
            },
            records,
        ))
    }

    pub fn append(&mut self, payload: &[u8]) -> Result<(), LogError> {
        self.file.write_all(&encode_record(payload))?;
        if self.sync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
