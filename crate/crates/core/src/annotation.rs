//! Filesystem store of annotation records, one JSON document per class.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::datamodel::AnnotationRecord;
use crate::error::{Error, Result};

pub fn annotation_file_name(class_id: &str) -> String {
    format!("ann_{class_id}.json")
}

pub fn annotation_path(dir: &Path, class_id: &str) -> PathBuf {
    dir.join(annotation_file_name(class_id))
}

pub fn parse_record(text: &str) -> Result<AnnotationRecord> {
    serde_json::from_str(text).map_err(|e| Error::schema("annotation", e.to_string()))
}

pub fn read_record(path: &Path) -> Result<AnnotationRecord> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    parse_record(&text)
}

pub fn read_class(dir: &Path, class_id: &str) -> Result<Option<AnnotationRecord>> {
    let path = annotation_path(dir, class_id);
    if !path.exists() {
        return Ok(None);
    }
    let rec = read_record(&path)?;
    if rec.class_id != class_id {
        return Err(Error::ClassMismatch(rec.class_id, class_id.to_string()));
    }
    Ok(Some(rec))
}

/// Writes to a temporary sibling and renames it into place, so readers see
/// either the old record or the new one.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn write_record(dir: &Path, rec: &AnnotationRecord) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = annotation_path(dir, &rec.class_id);
    let mut text = serde_json::to_string_pretty(rec).expect("record serializes");
    text.push('\n');
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// Every record in `dir` keyed by class; files not named `ann_*.json` are ignored.
pub fn read_all(dir: &Path) -> Result<BTreeMap<String, AnnotationRecord>> {
    let mut out = BTreeMap::new();
    if !dir.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("ann_") && name.ends_with(".json") {
            let rec = read_record(&path)?;
            out.insert(rec.class_id.clone(), rec);
        }
    }
    Ok(out)
}
