//! JSON and directory helpers shared by the subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dforge_core::datamodel::BBox;
use dforge_core::localize::Predictions;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Boxes of one class: image → box or none.
pub type ClassBoxes = BTreeMap<String, Option<BBox>>;

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    write_text(path, &text)
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => dforge_core::Error::MissingFile(path.to_path_buf()).into(),
        _ => CliError::io(path, e),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads either a flat `{image: box|null}` file, which needs `class_id`, or
/// a nested `{image: {class: box|null}}` one, optionally filtered to
/// `class_id`.
pub fn read_boxes(path: &Path, class_id: Option<&str>) -> CliResult<Predictions> {
    let text = read_text(path)?;
    let bad = |e: serde_json::Error| CliError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    if let Ok(nested) = serde_json::from_str::<Predictions>(&text) {
        let Some(c) = class_id else {
            return Ok(nested);
        };
        return Ok(nested
            .into_iter()
            .filter_map(|(img, per_class)| {
                per_class
                    .get(c)
                    .map(|b| (img, BTreeMap::from([(c.to_string(), *b)])))
            })
            .collect());
    }
    let flat: ClassBoxes = serde_json::from_str(&text).map_err(bad)?;
    let c = class_id.ok_or_else(|| {
        CliError::Usage(format!(
            "{} maps images to boxes directly; pass --class",
            path.display()
        ))
    })?;
    Ok(flat
        .into_iter()
        .map(|(img, b)| (img, BTreeMap::from([(c.to_string(), b)])))
        .collect())
}
