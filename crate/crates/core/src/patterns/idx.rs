//! IDX container parsing (the MNIST distribution format), raw or gzip-compressed.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{binarize, LabeledDataset, Provenance};
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != rows * cols {
            return Err(Error::domain(format!(
                "{}×{} image needs {} pixels, got {}",
                rows,
                cols,
                rows * cols,
                pixels.len()
            )));
        }
        Ok(GrayImage { rows, cols, pixels })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxData {
    Images { rows: usize, cols: usize, images: Vec<GrayImage> },
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::parse(bytes.len(), format!("header ends before byte {}", offset + 4)))
}

/// Parses an IDX file. Gzip input (leading `1f 8b`) is decompressed first, and byte
/// offsets in errors then refer to the decompressed stream.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut raw = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut raw)
            .map_err(|e| Error::parse(0, format!("gzip stream: {e}")))?;
        return parse_raw(&raw);
    }
    parse_raw(bytes)
}

fn parse_raw(bytes: &[u8]) -> Result<IdxData> {
    let magic = be_u32(bytes, 0)?;
    let count = be_u32(bytes, 4)? as usize;
    match magic {
        IDX_LABELS_MAGIC => {
            let body = &bytes[8..];
            check_len(bytes.len(), 8 + count)?;
            let labels = body[..count].to_vec();
            if let Some(pos) = labels.iter().position(|&l| l > 9) {
                return Err(Error::parse(8 + pos, format!("label {} outside 0..9", labels[pos])));
            }
            Ok(IdxData::Labels(labels))
        }
        IDX_IMAGES_MAGIC => {
            let rows = be_u32(bytes, 8)? as usize;
            let cols = be_u32(bytes, 12)? as usize;
            if rows == 0 || cols == 0 {
                return Err(Error::parse(8, format!("zero image dimension {rows}×{cols}")));
            }
            let size = rows * cols;
            check_len(bytes.len(), 16 + count * size)?;
            let images = bytes[16..16 + count * size]
                .chunks_exact(size)
                .map(|px| GrayImage {
                    rows,
                    cols,
                    pixels: px.to_vec(),
                })
                .collect();
            Ok(IdxData::Images { rows, cols, images })
        }
        other => Err(Error::parse(0, format!("unsupported IDX magic 0x{other:08x}"))),
    }
}

fn check_len(actual: usize, expected: usize) -> Result<()> {
    match actual.cmp(&expected) {
        std::cmp::Ordering::Less => Err(Error::parse(
            actual,
            format!("file ends at byte {actual}, header declares {expected} bytes"),
        )),
        std::cmp::Ordering::Greater => Err(Error::parse(
            expected,
            format!("{} trailing bytes after the declared payload", actual - expected),
        )),
        std::cmp::Ordering::Equal => Ok(()),
    }
}

pub fn read_idx_file(path: &Path) -> Result<IdxData> {
    parse_idx(&std::fs::read(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stems(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }

    fn provenance(self) -> Provenance {
        match self {
            Split::Train => Provenance::Train,
            Split::Test => Provenance::Test,
        }
    }
}

fn find(dir: &Path, stem: &str) -> Result<std::path::PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("{stem}[.gz] not found in {}", dir.display()),
    )))
}

/// Loads and binarizes one MNIST split from `dir`, accepting raw or `.gz` files.
pub fn load_mnist(dir: &Path, split: Split, threshold: u8) -> Result<LabeledDataset> {
    let (img_stem, lbl_stem) = split.stems();
    let images = match read_idx_file(&find(dir, img_stem)?)? {
        IdxData::Images { images, .. } => images,
        IdxData::Labels(_) => return Err(Error::parse(0, format!("{img_stem} holds labels"))),
    };
    let labels = match read_idx_file(&find(dir, lbl_stem)?)? {
        IdxData::Labels(l) => l,
        IdxData::Images { .. } => return Err(Error::parse(0, format!("{lbl_stem} holds images"))),
    };
    if images.len() != labels.len() {
        return Err(Error::domain(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let images = images
        .iter()
        .map(|g| binarize(g, threshold))
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(images, labels, split.provenance())
}
