//! FUNF / FUNL / FUNM binary formats. All integers are little-endian u32.
//!
//! ```text
//! FUNF: "FUNF" version n_images n_patches dim grid_h grid_w | f32 * (n_images*n_patches*dim)
//! FUNL: "FUNL" n_images                                     | u8 * n_images
//! FUNM: "FUNM" n_images h w                                 | u8 * (n_images*h*w)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::{DatasetManifest, FeatureTensor, ImageLabel, PixelMasks};
use crate::error::{FunadError, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"FUNF";
pub const LABEL_MAGIC: &[u8; 4] = b"FUNL";
pub const MASK_MAGIC: &[u8; 4] = b"FUNM";
pub const FORMAT_VERSION: u32 = 1;

/// `data.funf` -> `data.<ext>`.
pub fn sibling_path(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(FunadError::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(FunadError::Truncated {
                expected: (self.pos + n) as u64,
                found: self.buf.len() as u64,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    /// Payload of exactly `count` elements of `width` bytes must end the buffer.
    pub(crate) fn payload(&mut self, count: u64, width: u64) -> Result<&'a [u8]> {
        let bytes = count
            .checked_mul(width)
            .ok_or_else(|| FunadError::Format("declared payload size overflows".into()))?;
        let expected = self.pos as u64 + bytes;
        if expected != self.buf.len() as u64 {
            return Err(FunadError::Truncated {
                expected,
                found: self.buf.len() as u64,
            });
        }
        self.take(bytes as usize)
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| FunadError::arg(format!("{v} does not fit a u32 header field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn write_features(tensor: &FeatureTensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(28 + tensor.data().len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, tensor.n_images())?;
    put_u32(&mut out, tensor.n_patches())?;
    put_u32(&mut out, tensor.dim())?;
    let (gh, gw) = tensor.grid();
    put_u32(&mut out, gh)?;
    put_u32(&mut out, gw)?;
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_features(buf: &[u8]) -> Result<FeatureTensor> {
    let mut r = Reader::new(buf);
    r.magic(FEATURE_MAGIC)?;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(FunadError::Format(format!(
            "unsupported FUNF version {version}"
        )));
    }
    let n_images = r.u32()? as usize;
    let n_patches = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let grid_h = r.u32()? as usize;
    let grid_w = r.u32()? as usize;
    let count = (n_images as u64) * (n_patches as u64) * (dim as u64);
    let payload = r.payload(count, 4)?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    FeatureTensor::new(n_images, n_patches, dim, grid_h, grid_w, data)
}

pub fn write_labels(labels: &[ImageLabel]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(LABEL_MAGIC);
    put_u32(&mut out, labels.len())?;
    out.extend(labels.iter().map(|l| l.as_byte()));
    Ok(out)
}

pub fn read_labels(buf: &[u8]) -> Result<Vec<ImageLabel>> {
    let mut r = Reader::new(buf);
    r.magic(LABEL_MAGIC)?;
    let n = r.u32()? as u64;
    r.payload(n, 1)?
        .iter()
        .map(|&b| ImageLabel::from_byte(b))
        .collect()
}

pub fn write_masks(masks: &PixelMasks) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + masks.data.len());
    out.extend_from_slice(MASK_MAGIC);
    put_u32(&mut out, masks.n_images())?;
    put_u32(&mut out, masks.height)?;
    put_u32(&mut out, masks.width)?;
    out.extend_from_slice(&masks.data);
    Ok(out)
}

pub fn read_masks(buf: &[u8]) -> Result<PixelMasks> {
    let mut r = Reader::new(buf);
    r.magic(MASK_MAGIC)?;
    let n = r.u32()? as u64;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let data = r.payload(n * height as u64 * width as u64, 1)?.to_vec();
    if data.iter().any(|&b| b > 1) {
        return Err(FunadError::Data("mask bytes must be 0 or 1".into()));
    }
    Ok(PixelMasks {
        height,
        width,
        data,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| FunadError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| FunadError::io(path, e))
}

pub fn load_labels(path: &Path) -> Result<Vec<ImageLabel>> {
    read_labels(&read_file(path)?)
}

pub fn load_masks(path: &Path) -> Result<PixelMasks> {
    read_masks(&read_file(path)?)
}

/// Loads a FUNF file plus its `.funl` / `.funm` siblings when they exist.
pub fn load_features(path: &Path) -> Result<(FeatureTensor, DatasetManifest)> {
    let tensor = read_features(&read_file(path)?)?;
    let mut manifest = DatasetManifest::default();
    let labels_path = sibling_path(path, "funl");
    if labels_path.is_file() {
        manifest.image_labels = Some(load_labels(&labels_path)?);
    }
    let masks_path = sibling_path(path, "funm");
    if masks_path.is_file() {
        manifest.pixel_masks = Some(load_masks(&masks_path)?);
    }
    manifest.fill_geometry(tensor.n_patches());
    manifest.validate(&tensor)?;
    Ok((tensor, manifest))
}

/// Writes the FUNF file and, when present in the manifest, FUNL/FUNM siblings.
pub fn save_features(tensor: &FeatureTensor, manifest: &DatasetManifest, path: &Path) -> Result<()> {
    manifest.validate(tensor)?;
    write_file(path, &write_features(tensor)?)?;
    if let Some(labels) = &manifest.image_labels {
        write_file(&sibling_path(path, "funl"), &write_labels(labels)?)?;
    }
    if let Some(masks) = &manifest.pixel_masks {
        write_file(&sibling_path(path, "funm"), &write_masks(masks)?)?;
    }
    Ok(())
}
