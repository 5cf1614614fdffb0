//! Warehouse snapshot files.
//!
//! A snapshot is a gzip stream whose decompressed body is:
//!
//! ```text
//! magic      "EDSN"
//! version    u8 (1)
//! warehouse  u32 count, then per entry: signature (str workload, str stage,
//!            32-byte digest) and result bytes
//! training   u32 count, then per entry: str file name, bytes record
//! crc32      u32, IEEE CRC-32 of every preceding body byte
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::codec::{CodecError, Reader, Writer};
use crate::demand::DemandSignature;

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"EDSN";
pub const SNAPSHOT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
}

impl From<CodecError> for SnapshotError {
    fn from(e: CodecError) -> Self {
        SnapshotError::Corrupt(e.to_string())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Snapshot {
    pub warehouse: Vec<(DemandSignature, Vec<u8>)>,
    /// Training-set file name → encoded training-set record.
    pub training_sets: Vec<(String, Vec<u8>)>,
}

impl Snapshot {
    pub fn encode_body(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(&SNAPSHOT_MAGIC).u8(SNAPSHOT_VERSION);
        w.u32(self.warehouse.len() as u32);
        for (sig, result) in &self.warehouse {
            sig.encode_into(&mut w);
            w.bytes(result);
        }
        w.u32(self.training_sets.len() as u32);
        for (name, rec) in &self.training_sets {
            w.str(name).bytes(rec);
        }
        let mut body = w.into_inner();
        let crc = crc32fast::hash(&body);
        body.extend_from_slice(&crc.to_be_bytes());
        body
    }

    pub fn decode_body(body: &[u8]) -> Result<Self, SnapshotError> {
        if body.len() < SNAPSHOT_MAGIC.len() + 1 + 4 {
            return Err(SnapshotError::Corrupt("file too short".into()));
        }
        if body[..4] != SNAPSHOT_MAGIC {
            return Err(SnapshotError::Corrupt("bad magic".into()));
        }
        if body[4] != SNAPSHOT_VERSION {
            return Err(SnapshotError::Corrupt(format!("unsupported version {}", body[4])));
        }
        let (content, crc) = body.split_at(body.len() - 4);
        if crc32fast::hash(content).to_be_bytes() != crc {
            return Err(SnapshotError::Corrupt("checksum mismatch".into()));
        }
        let mut r = Reader::new(&content[5..]);
        let n = r.u32()?;
        let mut warehouse = Vec::with_capacity(n.min(1 << 16) as usize);
        for _ in 0..n {
            let sig = DemandSignature::decode_from(&mut r)?;
            warehouse.push((sig, r.bytes()?.to_vec()));
        }
        let n = r.u32()?;
        let mut training_sets = Vec::new();
        for _ in 0..n {
            let name = r.string()?;
            training_sets.push((name, r.bytes()?.to_vec()));
        }
        r.finish()?;
        Ok(Snapshot {
            warehouse,
            training_sets,
        })
    }

    pub fn to_gzip(&self) -> Vec<u8> {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&self.encode_body()).expect("in-memory write");
        enc.finish().expect("in-memory write")
    }

    pub fn from_gzip(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let mut body = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut body)
            .map_err(|e| SnapshotError::Corrupt(format!("gzip: {e}")))?;
        Self::decode_body(&body)
    }
}

pub fn write_snapshot(path: &Path, snapshot: &Snapshot) -> Result<(), SnapshotError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&snapshot.to_gzip())?;
    out.flush()?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, SnapshotError> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    Snapshot::from_gzip(&buf)
}
