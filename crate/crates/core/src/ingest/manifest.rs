//! JSON-lines dataset manifest.
//!
//! One object per line:
//!
//! ```json
//! {"id": "ROI_0001", "dataset": "cloudsen12", "split": "train", "label": "cloudy",
//!  "bands": {"B4": "s2/ROI_0001_B4.tif", "B3": "...", "B2": "...", "VV": "...", "VH": "..."},
//!  "mask": "masks/ROI_0001.tif"}
//! ```
//!
//! `label` is optional; without it the label is derived from `mask`, and
//! without either the scene is unlabeled. Relative paths resolve against the
//! manifest's directory. Blank lines are ignored.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    derive_label, label_from_fraction, cloud_fraction, raster::read_raster, DerivedLabel, IngestError,
    LabelThresholds, MaskScheme, Modality, Raster, Scene, SceneLabel, Sensor,
};
use crate::verdict::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    #[serde(alias = "CloudSEN12")]
    Cloudsen12,
    #[serde(alias = "SPARCS")]
    Sparcs,
    Custom,
}

impl DatasetKind {
    pub fn display_name(self) -> &'static str {
        match self {
            DatasetKind::Cloudsen12 => "CloudSEN12",
            DatasetKind::Sparcs => "SPARCS",
            DatasetKind::Custom => "custom",
        }
    }

    pub fn default_sensor(self) -> Sensor {
        match self {
            DatasetKind::Sparcs => Sensor::Landsat8,
            _ => Sensor::Sentinel2,
        }
    }

    pub fn mask_scheme(self) -> MaskScheme {
        match self {
            DatasetKind::Cloudsen12 => MaskScheme::CloudSen12,
            DatasetKind::Sparcs => MaskScheme::Sparcs,
            DatasetKind::Custom => MaskScheme::Binary,
        }
    }

    /// Modalities a scene of this dataset is expected to support.
    pub fn modalities(self) -> &'static [Modality] {
        match self {
            DatasetKind::Cloudsen12 => &[Modality::S2Rgb, Modality::S1SarFc],
            DatasetKind::Sparcs => &[Modality::L8Rgb, Modality::L8B6B5B4],
            DatasetKind::Custom => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub dataset: DatasetKind,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    pub bands: BTreeMap<String, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_scheme: Option<MaskScheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor: Option<Sensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, IngestError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| IngestError::ManifestParseError {
                line: i + 1,
                reason: e.to_string(),
            })?;
            if rec.id.is_empty() {
                return Err(IngestError::ManifestParseError {
                    line: i + 1,
                    reason: "empty scene id".into(),
                });
            }
            records.push(rec);
        }
        if records.is_empty() {
            return Err(IngestError::ManifestParseError {
                line: 0,
                reason: "manifest has no records".into(),
            });
        }
        let mut seen: HashMap<&str, Split> = HashMap::new();
        for r in &records {
            if let Some(prev) = seen.insert(&r.id, r.split) {
                return Err(if prev != r.split {
                    IngestError::DuplicateSceneAcrossSplits(r.id.clone())
                } else {
                    IngestError::DuplicateScene(r.id.clone())
                });
            }
        }
        Ok(Self {
            records,
            base_dir: base_dir.into(),
        })
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Reads every band of `record`, resampling them to the largest band size.
    pub fn load_scene(&self, record: &ManifestRecord, thresholds: &LabelThresholds) -> Result<LoadedScene, IngestError> {
        let mut bands = BTreeMap::new();
        for (name, path) in &record.bands {
            bands.insert(name.clone(), read_raster(&self.resolve(path))?);
        }
        let (w, h) = bands
            .values()
            .map(|r: &Raster| (r.width, r.height))
            .max_by_key(|&(w, h)| w * h)
            .unwrap_or((0, 0));
        for r in bands.values_mut() {
            if r.width != w || r.height != h {
                *r = r.resized(w, h);
            }
        }
        let scheme = record.mask_scheme.unwrap_or(record.dataset.mask_scheme());
        let fraction = match &record.mask {
            Some(p) => Some(cloud_fraction(&read_raster(&self.resolve(p))?, scheme)?),
            None => None,
        };
        let (label, excluded) = match (record.label, fraction) {
            (Some(Label::Cloudy), _) => (SceneLabel::Cloudy, false),
            (Some(Label::Clear), _) => (SceneLabel::Clear, false),
            (None, Some(f)) => match label_from_fraction(f, thresholds) {
                DerivedLabel::Cloudy => (SceneLabel::Cloudy, false),
                DerivedLabel::Clear => (SceneLabel::Clear, false),
                DerivedLabel::Excluded => (SceneLabel::Unknown, true),
            },
            (None, None) => (SceneLabel::Unknown, false),
        };
        Ok(LoadedScene {
            scene: Scene {
                id: record.id.clone(),
                sensor: record.sensor.unwrap_or(record.dataset.default_sensor()),
                bands,
                label,
                cloud_fraction: fraction,
            },
            excluded,
        })
    }

    /// Checks that every file opens and each scene carries the bands its
    /// dataset needs. Returns one message per problem.
    pub fn validate_files(&self, thresholds: &LabelThresholds) -> Vec<String> {
        let mut problems = Vec::new();
        for r in &self.records {
            for m in r.dataset.modalities() {
                for band in m.bands().iter().filter(|b| !b.contains('+')) {
                    if !r.bands.contains_key(*band) {
                        problems.push(format!("{}: missing band {band} needed for {m}", r.id));
                    }
                }
            }
            if let Err(e) = self.load_scene(r, thresholds) {
                problems.push(format!("{}: {e}", r.id));
            }
        }
        problems
    }
}

/// A scene plus whether its derived label fell in the exclusion band.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub scene: Scene,
    pub excluded: bool,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, IngestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    DatasetManifest::parse(&text, base)
}

/// Convenience used by tests and tools: derive a label directly from a mask file.
pub fn label_for_mask(path: &Path, scheme: MaskScheme, thresholds: &LabelThresholds) -> Result<DerivedLabel, IngestError> {
    derive_label(&read_raster(path)?, scheme, thresholds)
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: &str = r#"{"id":"a","dataset":"cloudsen12","split":"train","label":"cloudy","bands":{"B4":"a4.tif"}}"#;
    const B: &str = r#"{"id":"b","dataset":"sparcs","split":"test","bands":{"B4":"b4.tif"}}"#;

    #[test]
    fn two_records_distinct_splits() {
        let m = DatasetManifest::parse(&format!("{A}\n\n{B}\n"), "/data").unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.records[0].label, Some(Label::Cloudy));
        assert_eq!(m.split(Split::Test).count(), 1);
        assert_eq!(m.resolve(Path::new("x.tif")), PathBuf::from("/data/x.tif"));
    }

    #[test]
    fn same_id_across_splits() {
        let dup = A.replace("\"train\"", "\"test\"");
        assert!(matches!(
            DatasetManifest::parse(&format!("{A}\n{dup}"), "."),
            Err(IngestError::DuplicateSceneAcrossSplits(id)) if id == "a"
        ));
        assert!(matches!(
            DatasetManifest::parse(&format!("{A}\n{A}"), "."),
            Err(IngestError::DuplicateScene(_))
        ));
    }

    #[test]
    fn empty_and_malformed() {
        assert!(matches!(
            DatasetManifest::parse("", "."),
            Err(IngestError::ManifestParseError { .. })
        ));
        assert!(matches!(
            DatasetManifest::parse("{not json", "."),
            Err(IngestError::ManifestParseError { line: 1, .. })
        ));
        let extra = A.replace("\"id\"", "\"oops\":1,\"id\"");
        assert!(DatasetManifest::parse(&extra, ".").is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let m = DatasetManifest::parse(&format!("{A}\n{B}"), "/d").unwrap();
        assert_eq!(DatasetManifest::parse(&m.to_jsonl(), "/d").unwrap(), m);
    }
}
