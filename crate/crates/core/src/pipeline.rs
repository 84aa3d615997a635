//! Manifest scenes to image embeddings, and the on-disk embedding cache.

use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::encoder::{EncoderError, Embedding, ImageEncoder};
use crate::ingest::manifest::DatasetManifest;
use crate::ingest::{
    compose_bands, preprocess_image, IngestError, LabelThresholds, Modality, Normalization, Radiometry, Scene,
    SceneLabel, Split,
};
use crate::tensorstore::{ArchiveError, Tensor, TensorArchive};
use crate::verdict::Label;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "CLOUDGATE_THREADS";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("scene `{scene}`: {source}")]
    Scene {
        scene: String,
        #[source]
        source: Box<PipelineError>,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("invalid embedding cache: {0}")]
    InvalidCache(String),
    #[error("{THREADS_ENV}: {0}")]
    Threads(String),
}

/// Rayon pool sized by `CLOUDGATE_THREADS`, or rayon's default when unset.
pub fn thread_pool() -> Result<rayon::ThreadPool, PipelineError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| PipelineError::Threads(format!("`{v}` is not a worker count")))?;
        if n == 0 {
            return Err(PipelineError::Threads("must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| PipelineError::Threads(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedScene {
    pub id: String,
    pub split: Split,
    /// `None` for unlabeled scenes.
    pub label: Option<Label>,
    pub embedding: Embedding,
}

pub fn scene_label(label: SceneLabel) -> Option<Label> {
    match label {
        SceneLabel::Cloudy => Some(Label::Cloudy),
        SceneLabel::Clear => Some(Label::Clear),
        SceneLabel::Unknown => None,
    }
}

/// Frozen image tower plus the preprocessing shipped with it.
pub struct ScenePipeline<'a> {
    encoder: ImageEncoder<'a>,
    normalization: Normalization,
    pub radiometry: Radiometry,
    pub thresholds: LabelThresholds,
}

impl<'a> ScenePipeline<'a> {
    pub fn new(archive: &'a TensorArchive, radiometry: Radiometry, thresholds: LabelThresholds) -> Result<Self, PipelineError> {
        Ok(Self {
            encoder: ImageEncoder::new(archive)?,
            normalization: Normalization::from_archive(archive)?,
            radiometry,
            thresholds,
        })
    }

    pub fn embed_scene(&self, scene: &Scene, modality: Modality) -> Result<Embedding, PipelineError> {
        let composite = compose_bands(scene, modality, &self.radiometry)?;
        let pixels = preprocess_image(&composite, self.encoder.config().image_resolution, &self.normalization);
        Ok(self.encoder.encode(&pixels)?)
    }

    /// Embeds the scenes of `manifest` in manifest order. Scenes whose
    /// mask-derived label falls in the exclusion band are dropped when
    /// `skip_excluded` is set and kept unlabeled otherwise.
    pub fn embed_manifest(
        &self,
        manifest: &DatasetManifest,
        modality: Modality,
        skip_excluded: bool,
    ) -> Result<Vec<EmbeddedScene>, PipelineError> {
        let results: Vec<Result<Option<EmbeddedScene>, PipelineError>> = manifest
            .records
            .par_iter()
            .map(|record| {
                let wrap = |e: PipelineError| PipelineError::Scene {
                    scene: record.id.clone(),
                    source: Box::new(e),
                };
                let loaded = manifest
                    .load_scene(record, &self.thresholds)
                    .map_err(|e| wrap(e.into()))?;
                if loaded.excluded && skip_excluded {
                    return Ok(None);
                }
                let embedding = self.embed_scene(&loaded.scene, modality).map_err(wrap)?;
                Ok(Some(EmbeddedScene {
                    id: record.id.clone(),
                    split: record.split,
                    label: scene_label(loaded.scene.label),
                    embedding,
                }))
            })
            .collect();
        let mut out = Vec::with_capacity(results.len());
        for r in results {
            if let Some(s) = r? {
                out.push(s);
            }
        }
        Ok(out)
    }
}

/// Per-scene embeddings for one modality. Stored as a CGT1 archive with one
/// `[embed_dim]` tensor per scene id; split and label live in metadata under
/// `split.<id>` and `label.<id>`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCache {
    pub modality: Modality,
    pub model_id: String,
    pub scenes: Vec<EmbeddedScene>,
}

fn split_tag(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

impl EmbeddingCache {
    /// Scenes are kept sorted by id, the order they have on disk.
    pub fn new(modality: Modality, model_id: impl Into<String>, mut scenes: Vec<EmbeddedScene>) -> Self {
        scenes.sort_by(|a, b| a.id.cmp(&b.id));
        Self {
            modality,
            model_id: model_id.into(),
            scenes,
        }
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut a = TensorArchive::new();
        a.set_metadata("kind", "embedding-cache");
        a.set_metadata("modality", self.modality.tag());
        a.set_metadata("model_id", self.model_id.clone());
        for s in &self.scenes {
            a.insert(s.id.clone(), Tensor::from_vec(s.embedding.values().to_vec()));
            a.set_metadata(format!("split.{}", s.id), split_tag(s.split));
            let label = match s.label {
                Some(Label::Cloudy) => "cloudy",
                Some(Label::Clear) => "clear",
                None => "unknown",
            };
            a.set_metadata(format!("label.{}", s.id), label);
        }
        a
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self, PipelineError> {
        if a.meta("kind").ok() != Some("embedding-cache") {
            return Err(PipelineError::InvalidCache("missing kind=embedding-cache".into()));
        }
        let modality: Modality = a.meta("modality")?.parse()?;
        let mut scenes = Vec::with_capacity(a.entries().len());
        for (id, t) in a.entries() {
            let split = match a.meta(&format!("split.{id}"))? {
                "train" => Split::Train,
                "val" => Split::Val,
                "test" => Split::Test,
                other => return Err(PipelineError::InvalidCache(format!("scene `{id}` has split `{other}`"))),
            };
            let label = match a.meta(&format!("label.{id}"))? {
                "cloudy" => Some(Label::Cloudy),
                "clear" => Some(Label::Clear),
                "unknown" => None,
                other => return Err(PipelineError::InvalidCache(format!("scene `{id}` has label `{other}`"))),
            };
            let embedding = Embedding::new(t.data().to_vec());
            if !embedding.is_normalized() {
                return Err(PipelineError::InvalidCache(format!("scene `{id}` embedding is not unit-norm")));
            }
            scenes.push(EmbeddedScene {
                id: id.clone(),
                split,
                label,
                embedding,
            });
        }
        Ok(Self::new(modality, a.meta("model_id")?, scenes))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        Ok(self.to_archive().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        Self::from_archive(&TensorArchive::read(path)?)
    }
}

/// Labeled `(embedding, label)` pairs of one split, ordered by scene id so
/// training does not depend on manifest order.
pub fn labeled_pairs(scenes: &[EmbeddedScene], split: Split) -> Vec<(Vec<f32>, Label)> {
    let mut picked: Vec<&EmbeddedScene> = scenes.iter().filter(|s| s.split == split && s.label.is_some()).collect();
    picked.sort_by(|a, b| a.id.cmp(&b.id));
    picked
        .into_iter()
        .map(|s| (s.embedding.values().to_vec(), s.label.expect("filtered")))
        .collect()
}
