//! Lesion cropping with a physical tissue margin, bicubic resampling to the
//! network input size, gray-to-RGB replication and per-network intensity
//! preprocessing. Also enumerates the (scan, margin, threshold) variants of
//! a lesion.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{LesionRecord, RoiMask};
use crate::error::{Error, Result};
use crate::reconstruct::{self, AmaxScope, BModeImage, CompressionConfig};

/// Catmull-Rom cubic convolution parameter.
pub const CATMULL_ROM_A: f64 = -0.5;

/// Slack subtracted before rounding mm→pixel margins up, so that e.g.
/// 5 mm / 0.02 mm does not become 251 through float noise.
const MARGIN_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessMode {
    /// `x / 127.5 - 1`
    ScaleSymmetric,
    /// `x - mean[c]`
    MeanSubtract,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelOrder {
    #[default]
    Rgb,
    Bgr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkPreprocessSpec {
    #[serde(default = "default_version")]
    pub version: u32,
    pub name: String,
    pub input_size: usize,
    pub mode: PreprocessMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_means: Option<[f64; 3]>,
    #[serde(default)]
    pub channel_order: ChannelOrder,
}

fn default_version() -> u32 {
    1
}

const BUILTIN_SPECS: [(&str, &str); 3] = [
    ("inception_v3", include_str!("../config/preprocess/inception_v3.json")),
    ("vgg19", include_str!("../config/preprocess/vgg19.json")),
    ("baseline", include_str!("../config/preprocess/baseline.json")),
];

impl NetworkPreprocessSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 {
            return Err(Error::Invalid(format!("preprocess spec {}: input_size must be > 0", self.name)));
        }
        if self.mode == PreprocessMode::MeanSubtract && self.channel_means.is_none() {
            return Err(Error::Invalid(format!("preprocess spec {}: mean_subtract requires channel_means", self.name)));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: NetworkPreprocessSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// One of the specs shipped with the crate: `inception_v3`, `vgg19`, `baseline`.
    pub fn builtin(name: &str) -> Result<Self> {
        BUILTIN_SPECS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Invalid(format!("no built-in preprocess spec named {name:?}")))
            .and_then(|(_, text)| Self::from_json(text))
    }

    pub fn baseline() -> Self {
        Self::builtin("baseline").expect("shipped spec is valid")
    }
}

/// Channel-major (`3 × size × size`) network input.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInput {
    pub size: usize,
    pub data: Vec<f64>,
}

impl NetworkInput {
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.size * self.size;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_array(&self, c: usize) -> Array2<f64> {
        Array2::from_shape_vec((self.size, self.size), self.channel(c).to_vec()).expect("square channel")
    }
}

fn margin_pixels(margin_mm: f64, spacing_mm: f64) -> usize {
    (margin_mm / spacing_mm - MARGIN_EPS).ceil().max(0.0) as usize
}

/// Crop the mask's bounding box grown by `margin_mm` of tissue on every side,
/// clamped to the image (no padding).
pub fn crop_with_margin(image: &BModeImage, mask: &RoiMask, margin_mm: f64) -> Result<Array2<u8>> {
    if !(margin_mm.is_finite() && margin_mm >= 0.0) {
        return Err(Error::Invalid(format!("margin must be >= 0 mm, got {margin_mm}")));
    }
    if mask.shape() != image.pixels.dim() {
        return Err(Error::Invalid(format!(
            "mask shape {:?} differs from image shape {:?}",
            mask.shape(),
            image.pixels.dim()
        )));
    }
    let (r0, c0, r1, c1) = mask.bounding_box().ok_or_else(|| Error::Degenerate("empty ROI mask".into()))?;
    let dr = margin_pixels(margin_mm, image.geometry.axial_mm_per_sample);
    let dc = margin_pixels(margin_mm, image.geometry.lateral_mm_per_line);
    let (rows, cols) = image.pixels.dim();
    let top = r0.saturating_sub(dr);
    let left = c0.saturating_sub(dc);
    let bottom = r1.saturating_add(dr).min(rows - 1);
    let right = c1.saturating_add(dc).min(cols - 1);
    Ok(image.pixels.slice(ndarray::s![top..=bottom, left..=right]).to_owned())
}

/// Cubic convolution kernel with parameter `a`.
pub fn cubic_kernel(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Four source taps and weights for each output index along one axis.
fn axis_taps(src_len: usize, dst_len: usize, a: f64) -> Vec<([usize; 4], [f64; 4])> {
    let scale = src_len as f64 / dst_len as f64;
    let last = src_len as isize - 1;
    (0..dst_len)
        .map(|o| {
            let x = (o as f64 + 0.5) * scale - 0.5;
            let base = x.floor();
            let t = x - base;
            let base = base as isize;
            let mut idx = [0usize; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                let offset = k as isize - 1;
                idx[k] = (base + offset).clamp(0, last) as usize;
                w[k] = cubic_kernel(t - offset as f64, a);
            }
            (idx, w)
        })
        .collect()
}

/// Separable bicubic resampling to `rows × cols` with half-pixel-centred
/// coordinates and edge-clamped taps. Output is clamped to `[0, 255]`.
pub fn bicubic_resize_to(patch: ArrayView2<'_, f64>, rows: usize, cols: usize, a: f64) -> Result<Array2<f64>> {
    let (src_rows, src_cols) = patch.dim();
    if src_rows < 2 || src_cols < 2 {
        return Err(Error::Degenerate(format!("patch {src_rows}x{src_cols} is smaller than 2x2")));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::Invalid("resize target must be > 0".into()));
    }
    let col_taps = axis_taps(src_cols, cols, a);
    let row_taps = axis_taps(src_rows, rows, a);
    let mut horizontal = Array2::<f64>::zeros((src_rows, cols));
    for r in 0..src_rows {
        for (c, (idx, w)) in col_taps.iter().enumerate() {
            horizontal[[r, c]] = (0..4).map(|k| w[k] * patch[[r, idx[k]]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((rows, cols));
    for (r, (idx, w)) in row_taps.iter().enumerate() {
        for c in 0..cols {
            let v: f64 = (0..4).map(|k| w[k] * horizontal[[idx[k], c]]).sum();
            out[[r, c]] = v.clamp(0.0, 255.0);
        }
    }
    Ok(out)
}

pub fn bicubic_resize(patch: ArrayView2<'_, f64>, target: usize) -> Result<Array2<f64>> {
    bicubic_resize_to(patch, target, target, CATMULL_ROM_A)
}

/// Replicate the gray image into three channels and apply the network's
/// intensity preprocessing.
pub fn to_network_input(resized: &Array2<f64>, spec: &NetworkPreprocessSpec) -> Result<NetworkInput> {
    spec.validate()?;
    let size = spec.input_size;
    if resized.dim() != (size, size) {
        return Err(Error::Invalid(format!(
            "image is {:?}, preprocess spec {} expects {size}x{size}",
            resized.dim(),
            spec.name
        )));
    }
    let n = size * size;
    let mut data = Vec::with_capacity(3 * n);
    for c in 0..3 {
        match spec.mode {
            PreprocessMode::ScaleSymmetric => data.extend(resized.iter().map(|&x| x / 127.5 - 1.0)),
            PreprocessMode::MeanSubtract => {
                let means = spec.channel_means.expect("validated");
                // means are listed R, G, B; a BGR network puts blue first
                let mean = match spec.channel_order {
                    ChannelOrder::Rgb => means[c],
                    ChannelOrder::Bgr => means[2 - c],
                };
                data.extend(resized.iter().map(|&x| x - mean));
            }
        }
    }
    Ok(NetworkInput { size, data })
}

/// Which reconstructions and crops make up a lesion's variant set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantPlan {
    pub thresholds_db: Vec<f64>,
    pub margins_mm: Vec<f64>,
    pub a_max_scope: AmaxScope,
    pub a_max_override: Option<f64>,
}

fn sorted_unique(values: &[f64], what: &str) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Invalid(format!("at least one {what} is required")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    Ok(v)
}

impl VariantPlan {
    pub fn new(thresholds_db: &[f64], margins_mm: &[f64]) -> Result<Self> {
        Ok(VariantPlan {
            thresholds_db: sorted_unique(thresholds_db, "threshold")?,
            margins_mm: sorted_unique(margins_mm, "margin")?,
            a_max_scope: AmaxScope::PerFrame,
            a_max_override: None,
        })
    }

    pub fn compression(&self, threshold_db: f64) -> CompressionConfig {
        CompressionConfig {
            threshold_db,
            a_max_scope: self.a_max_scope,
            a_max_override: self.a_max_override,
        }
    }

    pub fn variants_per_lesion(&self) -> usize {
        2 * self.thresholds_db.len() * self.margins_mm.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageVariant {
    pub lesion_id: String,
    pub scan_index: usize,
    pub threshold_db: f64,
    pub margin_mm: f64,
    pub input: NetworkInput,
}

/// All `scans × margins × thresholds` network inputs of a lesion, ordered by
/// scan, then margin ascending, then threshold ascending.
pub fn enumerate_variants(record: &LesionRecord, plan: &VariantPlan, spec: &NetworkPreprocessSpec) -> Result<Vec<ImageVariant>> {
    let plan = VariantPlan::new(&plan.thresholds_db, &plan.margins_mm).map(|p| VariantPlan {
        a_max_scope: plan.a_max_scope,
        a_max_override: plan.a_max_override,
        ..p
    })?;
    let mut out = Vec::with_capacity(plan.variants_per_lesion());
    for (scan_index, scan) in record.scans.iter().enumerate() {
        let envelope = reconstruct::envelope_frame(&scan.frame);
        let images = plan
            .thresholds_db
            .iter()
            .map(|&t| {
                let cfg = plan.compression(t);
                let a_max = reconstruct::resolve_amax(&envelope, &cfg)?;
                Ok(BModeImage {
                    pixels: reconstruct::compress_envelope(&envelope, a_max, t),
                    geometry: scan.frame.geometry,
                    threshold_db: t,
                    lesion_id: Some(record.lesion_id.clone()),
                    scan_id: scan.frame.scan_id.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for &margin_mm in &plan.margins_mm {
            for image in &images {
                let crop = crop_with_margin(image, &scan.mask, margin_mm)?;
                let resized = bicubic_resize(crop.mapv(f64::from).view(), spec.input_size)?;
                out.push(ImageVariant {
                    lesion_id: record.lesion_id.clone(),
                    scan_index,
                    threshold_db: image.threshold_db,
                    margin_mm,
                    input: to_network_input(&resized, spec)?,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PixelGeometry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(rows: usize, cols: usize, axial: f64, lateral: f64) -> BModeImage {
        let mut geometry = PixelGeometry::new(40e6, 1540.0, lateral).unwrap();
        geometry.axial_mm_per_sample = axial;
        BModeImage {
            pixels: Array2::from_shape_fn((rows, cols), |(r, c)| ((r * 7 + c) % 256) as u8),
            geometry,
            threshold_db: 40.0,
            lesion_id: None,
            scan_id: "s".into(),
        }
    }

    fn rect_mask(shape: (usize, usize), bbox: [usize; 4]) -> RoiMask {
        RoiMask::from_bbox(shape, bbox).unwrap()
    }

    #[test]
    fn margin_expands_by_ceil() {
        assert_eq!(margin_pixels(5.0, 0.02), 250);
        assert_eq!(margin_pixels(5.0, 0.03), 167);
        assert_eq!(margin_pixels(0.0, 0.02), 0);
        let img = image(1000, 200, 0.02, 0.1);
        let crop = crop_with_margin(&img, &rect_mask((1000, 200), [400, 80, 449, 119]), 5.0).unwrap();
        // 250 rows each way, 50 columns each way
        assert_eq!(crop.dim(), (50 + 500, 40 + 100));
    }

    #[test]
    fn crop_clamps_at_edges() {
        let img = image(100, 100, 0.1, 0.1);
        let crop = crop_with_margin(&img, &rect_mask((100, 100), [0, 40, 9, 59]), 2.0).unwrap();
        assert_eq!(crop.dim(), (10 + 20, 20 + 40));
        assert_eq!(crop[[0, 0]], img.pixels[[0, 20]]);
    }

    #[test]
    fn zero_margin_is_bbox() {
        let img = image(100, 100, 0.1, 0.1);
        let crop = crop_with_margin(&img, &rect_mask((100, 100), [10, 20, 29, 24]), 0.0).unwrap();
        assert_eq!(crop.dim(), (20, 5));
        assert_eq!(crop[[0, 0]], img.pixels[[10, 20]]);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let img = image(10, 10, 0.1, 0.1);
        let empty = RoiMask::new(Array2::from_elem((10, 10), false));
        assert!(matches!(crop_with_margin(&img, &empty, 2.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn kernel_partition_of_unity() {
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let s: f64 = (-1..=2).map(|k| cubic_kernel(t - k as f64, CATMULL_ROM_A)).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
        assert_eq!(cubic_kernel(1.0, CATMULL_ROM_A), 0.0);
        assert_eq!(cubic_kernel(0.0, CATMULL_ROM_A), 1.0);
    }

    #[test]
    fn resize_constant() {
        let patch = Array2::from_elem((13, 7), 77.0);
        for target in [1, 5, 16, 40] {
            let out = bicubic_resize(patch.view(), target).unwrap();
            assert!(out.iter().all(|&v| (v - 77.0).abs() <= 1e-9));
        }
    }

    /// Per-pixel 4×4 kernel sum with edge clamping.
    fn naive_resize(patch: &Array2<f64>, target: usize) -> Array2<f64> {
        let (sr, sc) = patch.dim();
        Array2::from_shape_fn((target, target), |(i, j)| {
            let y = (i as f64 + 0.5) * sr as f64 / target as f64 - 0.5;
            let x = (j as f64 + 0.5) * sc as f64 / target as f64 - 0.5;
            let (y0, x0) = (y.floor(), x.floor());
            let mut acc = 0.0;
            for m in -1..=2 {
                for n in -1..=2 {
                    let yy = (y0 as isize + m).clamp(0, sr as isize - 1) as usize;
                    let xx = (x0 as isize + n).clamp(0, sc as isize - 1) as usize;
                    acc += cubic_kernel(y - (y0 + m as f64), -0.5) * cubic_kernel(x - (x0 + n as f64), -0.5) * patch[[yy, xx]];
                }
            }
            acc.clamp(0.0, 255.0)
        })
    }

    #[test]
    fn resize_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let patch = Array2::from_shape_fn((16, 16), |_| rng.random_range(0.0..255.0));
        let got = bicubic_resize(patch.view(), 8).unwrap();
        let want = naive_resize(&patch, 8);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-9);
        }
    }

    #[test]
    fn resize_rejects_tiny_patch() {
        assert!(bicubic_resize(Array2::zeros((1, 5)).view(), 4).is_err());
    }

    #[test]
    fn network_input_modes() {
        let spec = NetworkPreprocessSpec {
            input_size: 2,
            ..NetworkPreprocessSpec::baseline()
        };
        let img = ndarray::array![[255.0, 0.0], [127.5, 255.0]];
        let input = to_network_input(&img, &spec).unwrap();
        for c in 0..3 {
            assert_eq!(input.channel(c), &[1.0, -1.0, 0.0, 1.0]);
        }

        let vgg = NetworkPreprocessSpec {
            input_size: 1,
            ..NetworkPreprocessSpec::builtin("vgg19").unwrap()
        };
        let input = to_network_input(&ndarray::array![[128.0]], &vgg).unwrap();
        assert_eq!(input.data, vec![128.0 - 123.68, 128.0 - 116.779, 128.0 - 103.939]);
        assert!(to_network_input(&ndarray::array![[1.0]], &spec).is_err());
    }

    #[test]
    fn shipped_specs() {
        let inc = NetworkPreprocessSpec::builtin("inception_v3").unwrap();
        assert_eq!((inc.input_size, inc.mode), (299, PreprocessMode::ScaleSymmetric));
        let vgg = NetworkPreprocessSpec::builtin("vgg19").unwrap();
        assert_eq!((vgg.input_size, vgg.mode), (224, PreprocessMode::MeanSubtract));
        assert!(NetworkPreprocessSpec::from_json(r#"{"name":"x","input_size":4,"mode":"mean_subtract"}"#).is_err());
    }
}
