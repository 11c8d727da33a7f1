use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use dforge_core::annotation;
use dforge_core::datamodel::{
    load_manifest, read_models_dir, AnnotationRecord, ClusterModel, DatasetManifest, Label,
};
use dforge_core::heatmap::{compute_heatmap, sample_visualization_images, DEFAULT_SAMPLE_COUNT};
use dforge_core::{Error, Result};
use serde_json::Value;

use crate::error::{ApiError, FieldErrors};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub manifest: PathBuf,
    pub models_dir: PathBuf,
    pub annotations_dir: PathBuf,
    /// Directory served under `/static`, typically the UI bundle.
    pub static_dir: Option<PathBuf>,
    /// Seed of the per-class visualization sample.
    pub sample_seed: u64,
}

type HeatmapKey = (String, String, usize);

/// Everything the handlers share. Models and the manifest are read once;
/// annotations always come from disk so a restart loses nothing.
pub struct AppState {
    pub manifest: DatasetManifest,
    pub models: BTreeMap<String, ClusterModel>,
    pub annotations_dir: PathBuf,
    pub static_dir: Option<PathBuf>,
    pub sample_seed: u64,
    heatmaps: Mutex<HashMap<HeatmapKey, Arc<Vec<f64>>>>,
    write_locks: BTreeMap<String, tokio::sync::Mutex<()>>,
}

impl AppState {
    pub fn new(
        manifest: DatasetManifest,
        models: BTreeMap<String, ClusterModel>,
        annotations_dir: PathBuf,
        static_dir: Option<PathBuf>,
        sample_seed: u64,
    ) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::ConfigInvalid("no cluster models found".into()));
        }
        for class_id in models.keys() {
            manifest.require_class(class_id)?;
        }
        std::fs::create_dir_all(&annotations_dir).map_err(|e| Error::Io {
            path: annotations_dir.clone(),
            source: e,
        })?;
        let write_locks = models
            .keys()
            .map(|c| (c.clone(), tokio::sync::Mutex::new(())))
            .collect();
        Ok(AppState {
            manifest,
            models,
            annotations_dir,
            static_dir,
            sample_seed,
            heatmaps: Mutex::new(HashMap::new()),
            write_locks,
        })
    }

    pub fn load(cfg: &ServiceConfig) -> Result<Self> {
        let manifest = load_manifest(&cfg.manifest)?;
        let models = read_models_dir(&cfg.models_dir)?;
        AppState::new(
            manifest,
            models,
            cfg.annotations_dir.clone(),
            cfg.static_dir.clone(),
            cfg.sample_seed,
        )
    }

    pub fn model(&self, class_id: &str) -> Result<&ClusterModel, ApiError> {
        self.models
            .get(class_id)
            .ok_or_else(|| ApiError::NotFound(format!("unknown class {class_id}")))
    }

    pub fn sample_images(&self, class_id: &str) -> Result<Vec<String>> {
        sample_visualization_images(
            &self.manifest,
            class_id,
            DEFAULT_SAMPLE_COUNT,
            self.sample_seed,
        )
    }

    /// The stored record for a class, if any.
    pub fn annotation(&self, class_id: &str) -> Result<Option<AnnotationRecord>> {
        annotation::read_class(&self.annotations_dir, class_id)
    }

    /// Heatmap of cluster `i` on an image, computed once and cached.
    pub fn heatmap(
        &self,
        class_id: &str,
        image_id: &str,
        i: usize,
    ) -> Result<Arc<Vec<f64>>, ApiError> {
        let key = (class_id.to_string(), image_id.to_string(), i);
        if let Some(h) = self.heatmaps.lock().expect("cache lock").get(&key) {
            return Ok(h.clone());
        }
        let model = self.model(class_id)?;
        let entry = self
            .manifest
            .image(image_id)
            .ok_or_else(|| ApiError::NotFound(format!("unknown image {image_id}")))?;
        let fm = self.manifest.load_feature_map(entry)?;
        let values = Arc::new(compute_heatmap(&fm, model, i)?.values);
        self.heatmaps
            .lock()
            .expect("cache lock")
            .insert(key, values.clone());
        Ok(values)
    }

    pub(crate) fn write_lock(&self, class_id: &str) -> Option<&tokio::sync::Mutex<()>> {
        self.write_locks.get(class_id)
    }

    /// Stores a validated submission. The caller holds the class write lock.
    pub(crate) fn commit(
        &self,
        class_id: &str,
        sub: Submission,
    ) -> Result<AnnotationRecord, ApiError> {
        let current = self.annotation(class_id)?.map_or(0, |r| r.version);
        if let Some(sent) = sub.version {
            if sent != current {
                return Err(ApiError::Conflict { sent, current });
            }
        }
        let record = AnnotationRecord {
            class_id: class_id.to_string(),
            labels: sub.labels,
            annotator: sub.annotator,
            timestamp: chrono::Utc::now(),
            version: current + 1,
        };
        annotation::write_record(&self.annotations_dir, &record)?;
        Ok(record)
    }
}

/// A parsed and checked POST body.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Submission {
    pub labels: BTreeMap<usize, Label>,
    pub annotator: String,
    pub version: Option<u64>,
}

/// Checks a POST body against the class's model, collecting one message per
/// offending field.
pub(crate) fn validate_submission(body: &Value, model: &ClusterModel) -> Result<Submission, FieldErrors> {
    let mut errors = FieldErrors::new();
    let Some(obj) = body.as_object() else {
        errors.insert("body".into(), "expected a JSON object".into());
        return Err(errors);
    };
    for key in obj.keys() {
        if !matches!(key.as_str(), "labels" | "annotator" | "version") {
            errors.insert(key.clone(), "unknown field".into());
        }
    }

    let mut labels = BTreeMap::new();
    match obj.get("labels").and_then(Value::as_object) {
        None => {
            errors.insert(
                "labels".into(),
                "required: object mapping cluster index to \"object\" or \"distractor\"".into(),
            );
        }
        Some(map) => {
            for (key, value) in map {
                let field = format!("labels.{key}");
                let index = match key.parse::<usize>() {
                    Ok(i) if i.to_string() != *key => {
                        errors.insert(field, "not a cluster index".into());
                        continue;
                    }
                    Ok(i) if i < model.k => i,
                    Ok(_) => {
                        errors.insert(field, format!("no such cluster (k = {})", model.k));
                        continue;
                    }
                    Err(_) => {
                        errors.insert(field, "not a cluster index".into());
                        continue;
                    }
                };
                match value.as_str() {
                    Some("object") => {
                        labels.insert(index, Label::Object);
                    }
                    Some("distractor") => {
                        labels.insert(index, Label::Distractor);
                    }
                    _ => {
                        errors.insert(field, "expected \"object\" or \"distractor\"".into());
                    }
                }
            }
            for i in 0..model.k {
                let field = format!("labels.{i}");
                if !map.contains_key(&i.to_string()) && !errors.contains_key(&field) {
                    errors.insert(field, "missing label".into());
                }
            }
        }
    }

    let annotator = match obj.get("annotator").and_then(Value::as_str) {
        Some(a) if !a.trim().is_empty() => a.to_string(),
        _ => {
            errors.insert("annotator".into(), "required non-empty string".into());
            String::new()
        }
    };

    let version = match obj.get("version") {
        None | Some(Value::Null) => None,
        Some(v) => match v.as_u64() {
            Some(v) => Some(v),
            None => {
                errors.insert("version".into(), "expected a non-negative integer".into());
                None
            }
        },
    };

    if errors.is_empty() {
        Ok(Submission {
            labels,
            annotator,
            version,
        })
    } else {
        Err(errors)
    }
}

/// Resolves a manifest display-image path.
pub(crate) fn display_image(state: &AppState, image_id: &str) -> Option<PathBuf> {
    let entry = state.manifest.image(image_id)?;
    entry.image.as_deref().map(|p: &Path| state.manifest.resolve(p))
}
