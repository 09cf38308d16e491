//! QRBD, the binary container for labeled binary-image datasets.
//!
//! ```text
//! offset  size  field
//! 0       4     ASCII "QRBD"
//! 4       2     format version (u16, little-endian), currently 1
//! 6       2     image side d (u16, little-endian)
//! 8       4     record count (u32, little-endian)
//! 12      1     noise strategy code
//! 13      3     reserved, zero
//! 16      ...   records
//! ```
//!
//! Each record is one label byte followed by `⌈d²/8⌉` bytes of cells in row-major
//! order, most significant bit first; unused trailing bits are zero. Generation
//! metadata lives in a JSON sidecar at `<path>.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BinaryImage, LabeledDataset, NoiseDescriptor, NoiseStrategy, Provenance};
use crate::error::{Error, Result};

pub const QRBD_MAGIC: [u8; 4] = *b"QRBD";
pub const QRBD_VERSION: u16 = 1;
pub const QRBD_HEADER_LEN: usize = 16;
pub const SIDECAR_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QrbdHeader {
    pub version: u16,
    pub d: u16,
    pub count: u32,
    pub strategy: NoiseStrategy,
}

/// Bytes per record for side `d`.
pub fn record_len(d: usize) -> usize {
    1 + (d * d).div_ceil(8)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub schema_version: u32,
    pub format_version: u16,
    pub d: usize,
    pub count: usize,
    pub provenance: Provenance,
    pub noise: NoiseDescriptor,
}

impl Sidecar {
    pub fn for_dataset(ds: &LabeledDataset, side: Option<usize>) -> Self {
        Sidecar {
            schema_version: SIDECAR_SCHEMA_VERSION,
            format_version: QRBD_VERSION,
            d: ds.side().or(side).unwrap_or(0),
            count: ds.len(),
            provenance: ds.provenance,
            noise: ds.noise.clone(),
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Serializes a dataset. Empty datasets need an explicit side.
pub fn encode_qrbd(ds: &LabeledDataset, side: Option<usize>) -> Result<Vec<u8>> {
    ds.validate()?;
    let d = ds
        .side()
        .or(side)
        .ok_or_else(|| Error::domain("the side of an empty dataset must be given"))?;
    let d16 = u16::try_from(d).map_err(|_| Error::domain(format!("side {d} does not fit QRBD")))?;
    let count = u32::try_from(ds.len()).map_err(|_| Error::domain("too many records for QRBD"))?;
    let rl = record_len(d);
    let mut out = Vec::with_capacity(QRBD_HEADER_LEN + ds.len() * rl);
    out.extend_from_slice(&QRBD_MAGIC);
    out.extend_from_slice(&QRBD_VERSION.to_le_bytes());
    out.extend_from_slice(&d16.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.push(ds.noise.strategy.code());
    out.extend_from_slice(&[0; 3]);
    for (img, &label) in ds.images.iter().zip(&ds.labels) {
        out.push(label);
        let start = out.len();
        out.resize(start + rl - 1, 0);
        for k in 0..img.len() {
            if img.get_index(k) != 0 {
                out[start + k / 8] |= 0x80 >> (k % 8);
            }
        }
    }
    Ok(out)
}

pub fn decode_header(bytes: &[u8]) -> Result<QrbdHeader> {
    if bytes.len() < QRBD_HEADER_LEN {
        return Err(Error::parse(bytes.len(), "file shorter than the 16-byte header"));
    }
    if bytes[..4] != QRBD_MAGIC {
        return Err(Error::parse(0, "missing QRBD tag"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != QRBD_VERSION {
        return Err(Error::parse(4, format!("unsupported QRBD version {version}")));
    }
    let d = u16::from_le_bytes([bytes[6], bytes[7]]);
    if d == 0 {
        return Err(Error::parse(6, "image side is zero"));
    }
    let count = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]);
    let strategy = NoiseStrategy::from_code(bytes[12])
        .ok_or_else(|| Error::parse(12, format!("unknown noise strategy code {}", bytes[12])))?;
    if bytes[13..16] != [0, 0, 0] {
        return Err(Error::parse(13, "reserved header bytes are not zero"));
    }
    Ok(QrbdHeader {
        version,
        d,
        count,
        strategy,
    })
}

/// Decodes header, images and labels.
pub fn decode_qrbd(bytes: &[u8]) -> Result<(QrbdHeader, Vec<BinaryImage>, Vec<u8>)> {
    let h = decode_header(bytes)?;
    let d = h.d as usize;
    let rl = record_len(d);
    let expected = QRBD_HEADER_LEN + h.count as usize * rl;
    if bytes.len() != expected {
        let at = bytes.len().min(expected);
        return Err(Error::parse(
            at,
            format!("{} bytes present, header declares {expected}", bytes.len()),
        ));
    }
    let cells = d * d;
    let mut images = Vec::with_capacity(h.count as usize);
    let mut labels = Vec::with_capacity(h.count as usize);
    for (r, rec) in bytes[QRBD_HEADER_LEN..].chunks_exact(rl).enumerate() {
        let base = QRBD_HEADER_LEN + r * rl;
        if rec[0] > 9 {
            return Err(Error::parse(base, format!("label {} outside 0..9", rec[0])));
        }
        labels.push(rec[0]);
        let packed = &rec[1..];
        let mut img = BinaryImage::zeros(d);
        for k in 0..cells {
            img.set_index(k, (packed[k / 8] >> (7 - k % 8)) & 1);
        }
        if !cells.is_multiple_of(8) && packed[rl - 2] & (0xff >> (cells % 8)) != 0 {
            return Err(Error::parse(base + rl - 1, "nonzero padding bits"));
        }
        images.push(img);
    }
    Ok((h, images, labels))
}

/// Writes the container and its sidecar.
pub fn write_qrbd(path: &Path, ds: &LabeledDataset, side: Option<usize>) -> Result<()> {
    let bytes = encode_qrbd(ds, side)?;
    let sidecar = Sidecar::for_dataset(ds, side);
    std::fs::write(path, bytes)?;
    std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

/// Sidecar of the container at `path`.
pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    Ok(serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?)
}

/// Reads a container. Provenance and noise metadata come from the sidecar when it is
/// present; otherwise the dataset is marked as a test set with the header's strategy.
pub fn read_qrbd(path: &Path) -> Result<LabeledDataset> {
    let (h, images, labels) = decode_qrbd(&std::fs::read(path)?)?;
    let (provenance, noise) = match read_sidecar(path) {
        Ok(s) => {
            if s.noise.strategy != h.strategy || s.count != h.count as usize {
                return Err(Error::domain("sidecar metadata disagrees with the container header"));
            }
            (s.provenance, s.noise)
        }
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => (
            Provenance::Test,
            NoiseDescriptor {
                strategy: h.strategy,
                parameters: serde_json::Value::Null,
                seed: None,
            },
        ),
        Err(e) => return Err(e),
    };
    let mut ds = LabeledDataset::new(images, labels, provenance)?;
    ds.noise = noise;
    Ok(ds)
}
