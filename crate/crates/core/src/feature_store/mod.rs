//! Patch-feature datasets: the in-memory tensor, its on-disk formats,
//! synthetic Gaussian generation and contaminated training splits.

mod contaminate;
pub(crate) mod format;
mod synth;

pub use contaminate::{contaminate, ContaminatedSplit};
pub use format::{
    load_features, load_labels, load_masks, read_features, read_labels, read_masks,
    save_features, sibling_path, write_features, write_labels, write_masks, FEATURE_MAGIC,
    FORMAT_VERSION, LABEL_MAGIC, MASK_MAGIC,
};
pub use synth::{generate_synthetic, SyntheticGaussianConfig};

use serde::{Deserialize, Serialize};

use crate::error::{FunadError, Result};

/// Per-image ground truth class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageLabel {
    Normal,
    Anomaly,
}

impl ImageLabel {
    pub fn is_anomaly(self) -> bool {
        matches!(self, ImageLabel::Anomaly)
    }

    pub fn as_byte(self) -> u8 {
        match self {
            ImageLabel::Normal => 0,
            ImageLabel::Anomaly => 1,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(ImageLabel::Normal),
            1 => Ok(ImageLabel::Anomaly),
            other => Err(FunadError::Data(format!("label byte {other} is not 0 or 1"))),
        }
    }
}

/// `n_images` patch grids of `n_patches` vectors, each `dim` long.
///
/// Storage is image-major, then patch-major, then dim-minor, matching the
/// FUNF payload. Patches are laid out row-major on a `grid_h x grid_w` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    n_images: usize,
    n_patches: usize,
    dim: usize,
    grid_h: usize,
    grid_w: usize,
    data: Vec<f32>,
}

impl FeatureTensor {
    pub fn new(
        n_images: usize,
        n_patches: usize,
        dim: usize,
        grid_h: usize,
        grid_w: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if grid_h * grid_w != n_patches {
            return Err(FunadError::Data(format!(
                "grid {grid_h}x{grid_w} does not hold {n_patches} patches"
            )));
        }
        let expected = n_images
            .checked_mul(n_patches)
            .and_then(|v| v.checked_mul(dim))
            .ok_or_else(|| FunadError::Data("tensor size overflows".into()))?;
        if data.len() != expected {
            return Err(FunadError::Data(format!(
                "payload holds {} values, expected {expected}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(FunadError::Data(format!(
                "non-finite value {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Self {
            n_images,
            n_patches,
            dim,
            grid_h,
            grid_w,
            data,
        })
    }

    /// One patch per image on a 1x1 grid.
    pub fn from_vectors(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(FunadError::arg("dim must be positive"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(FunadError::Data(format!(
                "{} values do not split into vectors of {dim}",
                data.len()
            )));
        }
        Self::new(data.len() / dim, 1, dim, 1, 1, data)
    }

    pub fn n_images(&self) -> usize {
        self.n_images
    }

    pub fn n_patches(&self) -> usize {
        self.n_patches
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_h, self.grid_w)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn image_len(&self) -> usize {
        self.n_patches * self.dim
    }

    /// All patches of image `i`, `n_patches * dim` values.
    pub fn image(&self, i: usize) -> &[f32] {
        let len = self.image_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn patch(&self, i: usize, j: usize) -> &[f32] {
        let start = (i * self.n_patches + j) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// New tensor holding the listed images in the listed order.
    pub fn select_images(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            if i >= self.n_images {
                return Err(FunadError::arg(format!(
                    "image index {i} out of range for {} images",
                    self.n_images
                )));
            }
            data.extend_from_slice(self.image(i));
        }
        Self::new(
            indices.len(),
            self.n_patches,
            self.dim,
            self.grid_h,
            self.grid_w,
            data,
        )
    }
}

/// Binary ground-truth masks, `n_images` grids of `height x width` bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMasks {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl PixelMasks {
    pub fn n_images(&self) -> usize {
        if self.height * self.width == 0 {
            0
        } else {
            self.data.len() / (self.height * self.width)
        }
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let len = self.height * self.width;
        &self.data[i * len..(i + 1) * len]
    }
}

/// Optional ground truth and image geometry travelling with a tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub image_labels: Option<Vec<ImageLabel>>,
    pub pixel_masks: Option<PixelMasks>,
    pub image_h: Option<usize>,
    pub image_w: Option<usize>,
    pub patch_size: Option<usize>,
}

impl DatasetManifest {
    pub fn with_labels(labels: Vec<ImageLabel>) -> Self {
        Self {
            image_labels: Some(labels),
            ..Self::default()
        }
    }

    /// Checks the manifest against the tensor it describes.
    pub fn validate(&self, tensor: &FeatureTensor) -> Result<()> {
        if let Some(labels) = &self.image_labels {
            if labels.len() != tensor.n_images() {
                return Err(FunadError::Data(format!(
                    "{} labels for {} images",
                    labels.len(),
                    tensor.n_images()
                )));
            }
        }
        if let Some(masks) = &self.pixel_masks {
            if masks.n_images() != tensor.n_images() {
                return Err(FunadError::Data(format!(
                    "{} masks for {} images",
                    masks.n_images(),
                    tensor.n_images()
                )));
            }
            if self.image_h.is_some_and(|h| h != masks.height)
                || self.image_w.is_some_and(|w| w != masks.width)
            {
                return Err(FunadError::Data(format!(
                    "mask dims {}x{} disagree with image dims",
                    masks.height, masks.width
                )));
            }
            if masks.data.iter().any(|&b| b > 1) {
                return Err(FunadError::Data("mask bytes must be 0 or 1".into()));
            }
        }
        if let (Some(h), Some(w), Some(k)) = (self.image_h, self.image_w, self.patch_size) {
            if k == 0 || h * w != tensor.n_patches() * k * k {
                return Err(FunadError::Data(format!(
                    "{h}x{w} image with patch size {k} does not give {} patches",
                    tensor.n_patches()
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn fill_geometry(&mut self, n_patches: usize) {
        if let Some(masks) = &self.pixel_masks {
            self.image_h = Some(masks.height);
            self.image_w = Some(masks.width);
            let area = masks.height * masks.width;
            if n_patches > 0 && area % n_patches == 0 {
                let k2 = area / n_patches;
                let k = (k2 as f64).sqrt().round() as usize;
                if k * k == k2 {
                    self.patch_size = Some(k);
                }
            }
        }
    }
}
