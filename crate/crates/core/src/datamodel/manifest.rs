use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datamodel::formats;
use crate::datamodel::types::{BBox, FeatureMap, RegionGrid, ScoreMap};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub id: String,
    pub fmap: PathBuf,
    #[serde(default)]
    pub smaps: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub gt_boxes: BTreeMap<String, Vec<BBox>>,
}

impl ImageEntry {
    pub fn has_label(&self, class_id: &str) -> bool {
        self.labels.iter().any(|l| l == class_id)
    }
}

/// Ties images, features, score maps and ground truth together.
///
/// Paths in the document are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub grid: RegionGrid,
    pub images: Vec<ImageEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn has_class(&self, class_id: &str) -> bool {
        self.classes.iter().any(|c| c == class_id)
    }

    pub fn require_class(&self, class_id: &str) -> Result<()> {
        if self.has_class(class_id) {
            Ok(())
        } else {
            Err(Error::UnknownClass(class_id.to_string()))
        }
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageEntry> {
        self.images.iter().find(|e| e.id == image_id)
    }

    /// Images whose label set contains `class_id`, in manifest order.
    pub fn images_with_label<'a>(
        &'a self,
        class_id: &'a str,
    ) -> impl Iterator<Item = &'a ImageEntry> + 'a {
        self.images.iter().filter(move |e| e.has_label(class_id))
    }

    pub fn load_feature_map(&self, entry: &ImageEntry) -> Result<FeatureMap> {
        formats::read_feature_map(self.resolve(&entry.fmap))?.with_grid(self.grid)
    }

    pub fn score_map_path(&self, entry: &ImageEntry, class_id: &str) -> Option<PathBuf> {
        entry.smaps.get(class_id).map(|p| self.resolve(p))
    }

    pub fn load_score_map(&self, entry: &ImageEntry, class_id: &str) -> Result<ScoreMap> {
        let path = self.score_map_path(entry, class_id).ok_or_else(|| {
            Error::schema(
                format!("images[{}].smaps", entry.id),
                format!("no score map for class {class_id}"),
            )
        })?;
        formats::read_score_map(path, class_id)?.with_grid(self.grid)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let mut classes = HashSet::new();
        for c in &self.classes {
            if !classes.insert(c.as_str()) {
                return Err(Error::schema("classes", format!("duplicate class {c}")));
            }
        }
        let mut ids = HashSet::new();
        for (i, entry) in self.images.iter().enumerate() {
            if !ids.insert(entry.id.as_str()) {
                return Err(Error::DuplicateImageId(entry.id.clone()));
            }
            let field = |name: &str| format!("images[{i}].{name}");
            for l in &entry.labels {
                if !classes.contains(l.as_str()) {
                    return Err(Error::schema(field("labels"), format!("unknown class {l}")));
                }
            }
            for c in entry.smaps.keys() {
                if !classes.contains(c.as_str()) {
                    return Err(Error::schema(field("smaps"), format!("unknown class {c}")));
                }
            }
            for c in entry.gt_boxes.keys() {
                if !classes.contains(c.as_str()) {
                    return Err(Error::schema(
                        field("gt_boxes"),
                        format!("unknown class {c}"),
                    ));
                }
            }
            let mut files = vec![&entry.fmap];
            files.extend(entry.smaps.values());
            files.extend(entry.image.iter());
            for f in files {
                let path = self.resolve(f);
                if !path.is_file() {
                    return Err(Error::MissingFile(path));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

pub fn parse_manifest(text: &str, base_dir: impl Into<PathBuf>) -> Result<DatasetManifest> {
    let mut man: DatasetManifest = serde_json::from_str(text).map_err(|e| {
        Error::schema(
            schema_field(&e.to_string()),
            format!("{e}"),
        )
    })?;
    man.base_dir = base_dir.into();
    man.validate()?;
    Ok(man)
}

/// Best-effort extraction of the offending field name from a serde message.
fn schema_field(message: &str) -> String {
    for marker in ["missing field `", "unknown field `"] {
        if let Some(start) = message.find(marker) {
            let rest = &message[start + marker.len()..];
            if let Some(end) = rest.find('`') {
                return rest[..end].to_string();
            }
        }
    }
    "<document>".to_string()
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, base)
}
