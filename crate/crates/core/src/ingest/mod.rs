//! From raw band rasters to model-ready 3-channel images and scene labels.
//!
//! Radiometric scaling (see [`Radiometry`]):
//! - Sentinel-2: digital numbers / 10000, stretched so reflectance 0.3 maps to 1.
//! - Landsat-8: per-scene 2nd to 98th percentile stretch, percentiles taken
//!   over all three composite bands together so color balance is preserved.
//! - SAR backscatter: dB mapped linearly from [-25, 0] to [0, 1].
//!
//! Every composite is clamped to [0, 1].

pub mod manifest;
pub mod raster;
pub mod resample;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensorstore::{ArchiveError, TensorArchive};
pub use manifest::{load_manifest, DatasetKind, DatasetManifest, ManifestRecord, Split};
pub use raster::Raster;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("scene `{scene}` is missing band {band}")]
    MissingBand { scene: String, band: String },
    #[error("mask class {class} is not defined for {scheme:?} masks")]
    UnknownMaskClass { class: f32, scheme: MaskScheme },
    #[error("raster `{path}`: {reason}")]
    Raster { path: String, reason: String },
    #[error("manifest line {line}: {reason}")]
    ManifestParseError { line: usize, reason: String },
    #[error("scene `{0}` appears in more than one split")]
    DuplicateSceneAcrossSplits(String),
    #[error("scene `{0}` is listed twice")]
    DuplicateScene(String),
    #[error("unknown modality `{0}`")]
    UnknownModality(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sensor {
    Sentinel2,
    Landsat8,
    Sentinel1,
}

/// Scene-level ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SceneLabel {
    Cloudy,
    Clear,
    /// Unlabeled, only valid for filtering.
    Unknown,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub id: String,
    pub sensor: Sensor,
    pub bands: BTreeMap<String, Raster>,
    pub label: SceneLabel,
    pub cloud_fraction: Option<f32>,
}

impl Scene {
    fn band(&self, name: &str) -> Result<&Raster, IngestError> {
        self.bands.get(name).ok_or_else(|| IngestError::MissingBand {
            scene: self.id.clone(),
            band: name.to_string(),
        })
    }
}

/// Three-channel input representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "S2/RGB")]
    S2Rgb,
    #[serde(rename = "L8/RGB")]
    L8Rgb,
    #[serde(rename = "L8/B6-B4")]
    L8B6B5B4,
    #[serde(rename = "S1/SAR")]
    S1SarFc,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::S2Rgb, Modality::L8Rgb, Modality::L8B6B5B4, Modality::S1SarFc];

    pub fn tag(self) -> &'static str {
        match self {
            Modality::S2Rgb => "S2/RGB",
            Modality::L8Rgb => "L8/RGB",
            Modality::L8B6B5B4 => "L8/B6-B4",
            Modality::S1SarFc => "S1/SAR",
        }
    }

    /// Source bands in channel order.
    pub fn bands(self) -> [&'static str; 3] {
        match self {
            Modality::S2Rgb | Modality::L8Rgb => ["B4", "B3", "B2"],
            Modality::L8B6B5B4 => ["B6", "B5", "B4"],
            Modality::S1SarFc => ["VV", "VH", "VV+VH"],
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Modality {
    type Err = IngestError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace(['_', ' '], "/");
        Ok(match norm.as_str() {
            "S2/RGB" => Modality::S2Rgb,
            "L8/RGB" => Modality::L8Rgb,
            "L8/B6-B4" | "L8/B6B5B4" | "L8/B6-B5-B4" => Modality::L8B6B5B4,
            "S1/SAR" | "S1/SARFC" | "SAR" => Modality::S1SarFc,
            _ => return Err(IngestError::UnknownModality(s.to_string())),
        })
    }
}

/// Three channels of `height x width`, channel-major, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct BandComposite {
    pub modality: Modality,
    pub width: usize,
    pub height: usize,
    pub channels: Vec<f32>,
}

impl BandComposite {
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.channels[c * n..(c + 1) * n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Radiometry {
    pub s2_divisor: f32,
    pub s2_reflectance_cap: f32,
    pub l8_low_percentile: f32,
    pub l8_high_percentile: f32,
    pub sar_db_min: f32,
    pub sar_db_max: f32,
}

impl Default for Radiometry {
    fn default() -> Self {
        Self {
            s2_divisor: 10_000.0,
            s2_reflectance_cap: 0.3,
            l8_low_percentile: 2.0,
            l8_high_percentile: 98.0,
            sar_db_min: -25.0,
            sar_db_max: 0.0,
        }
    }
}

/// Linear-interpolated percentile of `values` (`pct` in 0..=100).
pub fn percentile(values: &[f32], pct: f32) -> f32 {
    let mut sorted: Vec<f32> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return 0.0;
    }
    sorted.sort_by(f32::total_cmp);
    let pos = (pct as f64 / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    (sorted[lo] as f64 + (sorted[hi] as f64 - sorted[lo] as f64) * frac) as f32
}

fn finite_or_zero(v: f32) -> f32 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// Stacks the modality's bands in order and scales them to [0, 1].
pub fn compose_bands(scene: &Scene, modality: Modality, radiometry: &Radiometry) -> Result<BandComposite, IngestError> {
    if modality == Modality::S1SarFc {
        return sar_composite(scene, radiometry);
    }
    let names = modality.bands();
    let bands = [scene.band(names[0])?, scene.band(names[1])?, scene.band(names[2])?];
    let (width, height) = (bands[0].width, bands[0].height);
    let mut channels = Vec::with_capacity(3 * width * height);
    match modality {
        Modality::S2Rgb => {
            let scale = radiometry.s2_divisor * radiometry.s2_reflectance_cap;
            for b in bands {
                channels.extend(b.data.iter().map(|&dn| (finite_or_zero(dn) / scale).clamp(0.0, 1.0)));
            }
        }
        Modality::L8Rgb | Modality::L8B6B5B4 => {
            let pooled: Vec<f32> = bands.iter().flat_map(|b| b.data.iter().copied()).collect();
            let lo = percentile(&pooled, radiometry.l8_low_percentile);
            let hi = percentile(&pooled, radiometry.l8_high_percentile);
            for b in bands {
                channels.extend(b.data.iter().map(|&v| {
                    let v = finite_or_zero(v);
                    if hi > lo {
                        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
                    } else {
                        v.clamp(0.0, 1.0)
                    }
                }));
            }
        }
        Modality::S1SarFc => unreachable!(),
    }
    Ok(BandComposite {
        modality,
        width,
        height,
        channels,
    })
}

/// VV, VH and their mean, each scaled from dB.
pub fn sar_composite(scene: &Scene, radiometry: &Radiometry) -> Result<BandComposite, IngestError> {
    let vv = scene.band("VV")?;
    let vh = scene.band("VH")?;
    let span = radiometry.sar_db_max - radiometry.sar_db_min;
    let scale = |db: f32| ((finite_or_zero(db) - radiometry.sar_db_min) / span).clamp(0.0, 1.0);
    let n = vv.width * vv.height;
    let mut channels = vec![0.0f32; 3 * n];
    for i in 0..n {
        let a = scale(vv.data[i]);
        let b = scale(vh.data[i]);
        channels[i] = a;
        channels[n + i] = b;
        channels[2 * n + i] = (a + b) * 0.5;
    }
    Ok(BandComposite {
        modality: Modality::S1SarFc,
        width: vv.width,
        height: vv.height,
        channels,
    })
}

/// Per-channel standardization constants shipped with the weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    pub fn from_archive(archive: &TensorArchive) -> Result<Self, IngestError> {
        let mean = archive.tensor_with_shape("preprocess.mean", &[3])?.data();
        let std = archive.tensor_with_shape("preprocess.std", &[3])?.data();
        Ok(Self {
            mean: [mean[0], mean[1], mean[2]],
            std: [std[0], std[1], std[2]],
        })
    }
}

/// Bicubic resize to `resolution x resolution`, clamp to [0, 1], then
/// standardize each channel.
pub fn preprocess_image(composite: &BandComposite, resolution: usize, norm: &Normalization) -> Vec<f32> {
    let n = resolution * resolution;
    let mut out = Vec::with_capacity(3 * n);
    for c in 0..3 {
        let plane = composite.channel(c);
        let resized = if composite.width == resolution && composite.height == resolution {
            plane.to_vec()
        } else {
            resample::resize_bicubic(plane, composite.width, composite.height, resolution, resolution)
        };
        let (m, s) = (norm.mean[c], norm.std[c]);
        out.extend(resized.into_iter().map(|v| (v.clamp(0.0, 1.0) - m) / s));
    }
    out
}

/// Mask class conventions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskScheme {
    /// 0 clear, 1 thick cloud, 2 thin cloud, 3 cloud shadow.
    CloudSen12,
    /// 0 shadow, 1 shadow over water, 2 water, 3 snow, 4 land, 5 cloud, 6 flooded.
    Sparcs,
    /// 0 clear, 1 cloud.
    Binary,
}

impl MaskScheme {
    fn classify(self, class: f32) -> Result<bool, IngestError> {
        let unknown = || IngestError::UnknownMaskClass { class, scheme: self };
        if class.fract() != 0.0 || !class.is_finite() {
            return Err(unknown());
        }
        let c = class as i64;
        match self {
            MaskScheme::CloudSen12 => match c {
                0 | 3 => Ok(false),
                1 | 2 => Ok(true),
                _ => Err(unknown()),
            },
            MaskScheme::Sparcs => match c {
                5 => Ok(true),
                0..=6 => Ok(false),
                _ => Err(unknown()),
            },
            MaskScheme::Binary => match c {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(unknown()),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelThresholds {
    pub clear_max: f32,
    pub cloudy_min: f32,
}

impl Default for LabelThresholds {
    fn default() -> Self {
        Self {
            clear_max: 0.0,
            cloudy_min: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DerivedLabel {
    Cloudy,
    Clear,
    /// Cloud fraction fell between the two thresholds.
    Excluded,
}

/// Fraction of cloud pixels in `mask` under `scheme`.
pub fn cloud_fraction(mask: &Raster, scheme: MaskScheme) -> Result<f32, IngestError> {
    if mask.data.is_empty() {
        return Ok(0.0);
    }
    let mut cloudy = 0usize;
    for &c in &mask.data {
        if scheme.classify(c)? {
            cloudy += 1;
        }
    }
    Ok((cloudy as f64 / mask.data.len() as f64) as f32)
}

pub fn label_from_fraction(fraction: f32, thresholds: &LabelThresholds) -> DerivedLabel {
    if fraction <= thresholds.clear_max {
        DerivedLabel::Clear
    } else if fraction >= thresholds.cloudy_min {
        DerivedLabel::Cloudy
    } else {
        DerivedLabel::Excluded
    }
}

pub fn derive_label(mask: &Raster, scheme: MaskScheme, thresholds: &LabelThresholds) -> Result<DerivedLabel, IngestError> {
    Ok(label_from_fraction(cloud_fraction(mask, scheme)?, thresholds))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(bands: &[(&str, f32)]) -> Scene {
        Scene {
            id: "s".into(),
            sensor: Sensor::Landsat8,
            bands: bands
                .iter()
                .map(|&(n, v)| (n.to_string(), Raster::filled(4, 4, v)))
                .collect(),
            label: SceneLabel::Unknown,
            cloud_fraction: None,
        }
    }

    #[test]
    fn s2_cap_maps_to_one() {
        let s = scene(&[("B4", 3000.0), ("B3", 3000.0), ("B2", 3000.0)]);
        let c = compose_bands(&s, Modality::S2Rgb, &Radiometry::default()).unwrap();
        assert!(c.channels.iter().all(|&v| v == 1.0));
        let s = scene(&[("B4", 9000.0), ("B3", -5.0), ("B2", 1500.0)]);
        let c = compose_bands(&s, Modality::S2Rgb, &Radiometry::default()).unwrap();
        assert_eq!((c.channel(0)[0], c.channel(1)[0], c.channel(2)[0]), (1.0, 0.0, 0.5));
    }

    #[test]
    fn missing_band() {
        let s = scene(&[("B4", 1.0), ("B3", 1.0)]);
        assert!(matches!(
            compose_bands(&s, Modality::S2Rgb, &Radiometry::default()),
            Err(IngestError::MissingBand { band, .. }) if band == "B2"
        ));
        let s = scene(&[("VV", -10.0)]);
        assert!(matches!(
            sar_composite(&s, &Radiometry::default()),
            Err(IngestError::MissingBand { band, .. }) if band == "VH"
        ));
    }

    #[test]
    fn sar_formula() {
        // -20 dB -> 0.2, -15 dB -> 0.4
        let s = scene(&[("VV", -20.0), ("VH", -15.0)]);
        let c = sar_composite(&s, &Radiometry::default()).unwrap();
        let px = (c.channel(0)[0], c.channel(1)[0], c.channel(2)[0]);
        assert!((px.0 - 0.2).abs() < 1e-6 && (px.1 - 0.4).abs() < 1e-6 && (px.2 - 0.3).abs() < 1e-6);
        let s = scene(&[("VV", 0.0), ("VH", 0.0)]);
        assert!(sar_composite(&s, &Radiometry::default()).unwrap().channels.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn percentile_matches_linear_interpolation() {
        let v: Vec<f32> = (0..=100).map(|i| i as f32).collect();
        assert_eq!(percentile(&v, 2.0), 2.0);
        assert_eq!(percentile(&v, 98.0), 98.0);
        assert_eq!(percentile(&[1.0, 3.0], 50.0), 2.0);
    }

    #[test]
    fn preprocess_identity_resize_and_mean_image() {
        let norm = Normalization {
            mean: [0.25, 0.5, 0.75],
            std: [0.5, 0.5, 0.5],
        };
        let mut channels = Vec::new();
        for m in norm.mean {
            channels.extend(std::iter::repeat_n(m, 8 * 8));
        }
        let comp = BandComposite {
            modality: Modality::S2Rgb,
            width: 8,
            height: 8,
            channels,
        };
        let px = preprocess_image(&comp, 8, &norm);
        assert_eq!(px.len(), 3 * 64);
        assert!(px.iter().all(|&v| v == 0.0));
        let up = preprocess_image(&comp, 16, &norm);
        assert_eq!(up.len(), 3 * 256);
        assert!(up.iter().all(|&v| v.abs() < 1e-5));
    }

    #[test]
    fn labels_from_masks() {
        let t = LabelThresholds::default();
        let clear = Raster::filled(10, 10, 0.0);
        assert_eq!(derive_label(&clear, MaskScheme::CloudSen12, &t).unwrap(), DerivedLabel::Clear);
        let mut half = Raster::filled(10, 10, 0.0);
        half.data[..50].fill(2.0);
        assert_eq!(derive_label(&half, MaskScheme::CloudSen12, &t).unwrap(), DerivedLabel::Cloudy);
        let mut two_pct = Raster::filled(10, 10, 4.0);
        two_pct.data[..2].fill(5.0);
        assert_eq!(derive_label(&two_pct, MaskScheme::Sparcs, &t).unwrap(), DerivedLabel::Excluded);
        let bad = Raster::filled(2, 2, 9.0);
        assert!(matches!(
            derive_label(&bad, MaskScheme::CloudSen12, &t),
            Err(IngestError::UnknownMaskClass { .. })
        ));
    }

    #[test]
    fn modality_parsing() {
        for m in Modality::ALL {
            assert_eq!(m.tag().parse::<Modality>().unwrap(), m);
        }
        assert_eq!("L8_B6B5B4".parse::<Modality>().unwrap(), Modality::L8B6B5B4);
        assert!("S2/NIR".parse::<Modality>().is_err());
    }
}
