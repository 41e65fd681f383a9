//! Image scores and pixel anomaly maps from a trained network.
//!
//! Patch scores are arranged row-major on the patch grid, resized
//! bilinearly with half-pixel centers (align-corners off), then smoothed
//! with a separable Gaussian truncated at 4 sigma using mirror padding
//! that does not repeat the edge sample.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{FunadError, Result};
use crate::feature_store::format::{put_u32, Reader};
use crate::feature_store::FeatureTensor;
use crate::localnet::{score_batch, LocalNetParams};

pub const MAP_MAGIC: &[u8; 4] = b"FUNA";
pub const DEFAULT_BLUR_SIGMA: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    pub height: usize,
    pub width: usize,
    /// Row-major.
    pub values: Vec<f64>,
}

impl AnomalyMap {
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

fn image_rows(image_features: &[f64], d_in: usize) -> Result<usize> {
    if d_in == 0 || !image_features.len().is_multiple_of(d_in) || image_features.is_empty() {
        return Err(FunadError::arg(format!(
            "image features of length {} do not split into patches of {d_in}",
            image_features.len()
        )));
    }
    Ok(image_features.len() / d_in)
}

pub fn patch_scores(params: &LocalNetParams, image_features: &[f64]) -> Result<Vec<f64>> {
    image_rows(image_features, params.d_in())?;
    score_batch(params, image_features)
}

/// Global max over the image's patch scores.
pub fn image_anomaly_score(params: &LocalNetParams, image_features: &[f64]) -> Result<f64> {
    Ok(patch_scores(params, image_features)?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Bilinear resize with half-pixel centers; source coordinates below zero
/// clamp to the first row/column.
pub fn bilinear_resize(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert_eq!(src.len(), h * w);
    let axis = |out: usize, n: usize| -> Vec<(usize, usize, f64)> {
        let scale = n as f64 / out as f64;
        (0..out)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let lo = (pos.floor() as usize).min(n - 1);
                let hi = (lo + 1).min(n - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    let mut out = vec![0.0; out_h * out_w];
    for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
            let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
            let bottom = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
            out[oy * out_w + ox] = top * (1.0 - wy) + bottom * wy;
        }
    }
    out
}

/// Normalized Gaussian taps over `[-ceil(4 sigma), ceil(4 sigma)]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Mirror index into `[0, n)`: -1 -> 1, n -> n - 2.
pub fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

pub fn gaussian_blur(values: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    assert_eq!(values.len(), h * w);
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &values[y * w..(y + 1) * w];
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, t)| t * row[reflect(x as i64 + k as i64 - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[reflect(y as i64 + k as i64 - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Resizes and smooths a `grid_h x grid_w` patch score grid.
pub fn render_map(
    grid_scores: &[f64],
    grid: (usize, usize),
    out: (usize, usize),
    blur_sigma: f64,
) -> Result<AnomalyMap> {
    let (gh, gw) = grid;
    let (oh, ow) = out;
    if gh * gw != grid_scores.len() || gh == 0 || gw == 0 {
        return Err(FunadError::arg(format!(
            "grid {gh}x{gw} does not hold {} patch scores",
            grid_scores.len()
        )));
    }
    if oh == 0 || ow == 0 {
        return Err(FunadError::arg("output map must be nonempty"));
    }
    let resized = bilinear_resize(grid_scores, gh, gw, oh, ow);
    Ok(AnomalyMap {
        height: oh,
        width: ow,
        values: gaussian_blur(&resized, oh, ow, blur_sigma),
    })
}

pub fn anomaly_map(
    params: &LocalNetParams,
    image_features: &[f64],
    grid: (usize, usize),
    out: (usize, usize),
    blur_sigma: f64,
) -> Result<AnomalyMap> {
    let scores = patch_scores(params, image_features)?;
    render_map(&scores, grid, out, blur_sigma)
}

/// Per-image scores and, when `map_size` is given, maps for a whole tensor.
pub fn infer_dataset(
    params: &LocalNetParams,
    features: &FeatureTensor,
    map_size: Option<(usize, usize)>,
    blur_sigma: f64,
) -> Result<(Vec<f64>, Option<Vec<AnomalyMap>>)> {
    if features.dim() != params.d_in() {
        return Err(FunadError::arg(format!(
            "features have dim {}, network expects {}",
            features.dim(),
            params.d_in()
        )));
    }
    let per_image: Vec<(f64, Option<AnomalyMap>)> = (0..features.n_images())
        .into_par_iter()
        .map(|i| {
            let f: Vec<f64> = features.image(i).iter().map(|&v| v as f64).collect();
            let scores = score_batch(params, &f)?;
            let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let map = match map_size {
                Some(size) => Some(render_map(&scores, features.grid(), size, blur_sigma)?),
                None => None,
            };
            Ok((top, map))
        })
        .collect::<Result<_>>()?;
    let scores = per_image.iter().map(|p| p.0).collect();
    let maps = map_size.map(|_| per_image.into_iter().map(|p| p.1.expect("map")).collect());
    Ok((scores, maps))
}

/// "FUNA" u32 n u32 h u32 w, then n*h*w little-endian f32.
pub fn write_maps(maps: &[AnomalyMap]) -> Result<Vec<u8>> {
    let (h, w) = maps.first().map_or((0, 0), |m| (m.height, m.width));
    if maps.iter().any(|m| m.height != h || m.width != w) {
        return Err(FunadError::arg("all maps in a FUNA file share one size"));
    }
    let mut out = Vec::with_capacity(16 + maps.len() * h * w * 4);
    out.extend_from_slice(MAP_MAGIC);
    put_u32(&mut out, maps.len())?;
    put_u32(&mut out, h)?;
    put_u32(&mut out, w)?;
    for m in maps {
        for v in &m.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_maps(buf: &[u8]) -> Result<Vec<AnomalyMap>> {
    let mut r = Reader::new(buf);
    r.magic(MAP_MAGIC)?;
    let n = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let payload = r.payload((n * h * w) as u64, 4)?;
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(FunadError::Data("non-finite map value".into()));
    }
    Ok(values
        .chunks(h * w.max(1))
        .take(n)
        .map(|c| AnomalyMap {
            height: h,
            width: w,
            values: c.to_vec(),
        })
        .collect())
}

pub fn save_maps(path: &Path, maps: &[AnomalyMap]) -> Result<()> {
    fs::write(path, write_maps(maps)?).map_err(|e| FunadError::io(path, e))
}

pub fn load_maps(path: &Path) -> Result<Vec<AnomalyMap>> {
    read_maps(&fs::read(path).map_err(|e| FunadError::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localnet::NetShape;

    #[test]
    fn zero_net_scores_half() {
        let p = LocalNetParams::zeros(NetShape::new(3, 4, 2));
        let f = vec![0.3; 12];
        assert_eq!(image_anomaly_score(&p, &f).unwrap(), 0.5);
    }

    #[test]
    fn max_of_patch_scores() {
        // Single-input net whose score is sigmoid(logit(x)): layer weights
        // chosen so positive inputs pass through unchanged.
        let mut p = LocalNetParams::zeros(NetShape::new(1, 1, 1));
        p.layer1.weights[0] = 1.0;
        p.layer2.weights[0] = 1.0;
        p.layer3.weights[0] = 1.0;
        let logit = |s: f64| (s / (1.0 - s)).ln();
        let f = [logit(0.1) + 10.0, logit(0.9) + 10.0, logit(0.3) + 10.0];
        p.layer3.bias[0] = -10.0;
        let s = image_anomaly_score(&p, &f).unwrap();
        assert!((s - 0.9).abs() < 1e-12);
    }

    #[test]
    fn kernel_is_normalized() {
        for sigma in [0.5, 1.0, 4.0, 7.3] {
            let k = gaussian_kernel(sigma);
            assert_eq!(k.len(), 2 * (4.0 * sigma).ceil() as usize + 1);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn constants_survive_resize_and_blur() {
        let m = render_map(&[0.37; 784], (28, 28), (224, 224), 4.0).unwrap();
        assert_eq!((m.height, m.width), (224, 224));
        assert!(m.values.iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn bilinear_half_pixel_centers() {
        // 2 -> 4 upsampling: positions -0.25, 0.25, 0.75, 1.25.
        let out = bilinear_resize(&[0.0, 1.0], 1, 2, 1, 4);
        assert_eq!(out, vec![0.0, 0.25, 0.75, 1.0]);
    }

    /// Direct 2D convolution against a full 2D kernel.
    fn reference_blur(v: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
        let k = gaussian_kernel(sigma);
        let r = (k.len() / 2) as i64;
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sy = reflect(y as i64 + dy, h);
                        let sx = reflect(x as i64 + dx, w);
                        acc += k[(dy + r) as usize] * k[(dx + r) as usize] * v[sy * w + sx];
                    }
                }
                out[y * w + x] = acc;
            }
        }
        out
    }

    #[test]
    fn hot_patch_peaks_inside_its_footprint() {
        let mut grid = vec![0.1; 28 * 28];
        let (hy, hx) = (9usize, 17usize);
        grid[hy * 28 + hx] = 0.95;
        let m = render_map(&grid, (28, 28), (224, 224), 4.0).unwrap();

        let resized = bilinear_resize(&grid, 28, 28, 224, 224);
        let reference = reference_blur(&resized, 224, 224, 4.0);
        for (a, b) in m.values.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-12);
        }

        let (arg, _) = m
            .values
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
        let (y, x) = (arg / 224, arg % 224);
        assert!((hy * 8..(hy + 1) * 8).contains(&y), "peak row {y}");
        assert!((hx * 8..(hx + 1) * 8).contains(&x), "peak col {x}");
        let lo = m.values.iter().copied().fold(f64::MAX, f64::min);
        let hi = m.values.iter().copied().fold(f64::MIN, f64::max);
        assert!(lo >= 0.1 - 1e-12 && hi <= 0.95 + 1e-12);
    }

    #[test]
    fn grid_mismatch_rejected() {
        assert!(render_map(&[0.0; 10], (3, 3), (8, 8), 1.0).is_err());
    }

    #[test]
    fn funa_round_trip() {
        let maps = vec![
            AnomalyMap {
                height: 2,
                width: 2,
                values: vec![0.0, 0.5, 0.25, 1.0],
            };
            3
        ];
        let bytes = write_maps(&maps).unwrap();
        assert_eq!(&bytes[..4], b"FUNA");
        assert_eq!(bytes.len(), 16 + 3 * 4 * 4);
        assert_eq!(read_maps(&bytes).unwrap(), maps);
    }
}
