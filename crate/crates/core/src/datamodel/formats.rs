//! Little-endian binary tensor files.
//!
//! | file  | magic  | header                                   | payload                                   |
//! |-------|--------|------------------------------------------|-------------------------------------------|
//! | .fmap | `MAFM` | version, rows, cols, feat_dim (u32)      | rows·cols·feat_dim f32                    |
//! | .smap | `MASM` | version, rows, cols (u32)                | rows·cols f32                             |
//! | pool  | `MAPL` | version, feat_dim (u32), n (u64)         | n × (id len u32, id utf-8, row, col, f32s)|
//! | .clus | `MACL` | version, feat_dim, k, M (u32), n (u64)   | M f64, k·feat_dim f32, k u64, n u32       |
//!
//! All payloads are row-major. Readers validate and report the byte offset
//! of the first offending value.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::datamodel::types::{
    ClusterModel, ClusterParams, FeatureMap, Pattern, PatternPool, RegionGrid, ScoreMap,
};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"MAFM";
pub const SCORE_MAGIC: [u8; 4] = *b"MASM";
pub const POOL_MAGIC: [u8; 4] = *b"MAPL";
pub const CLUSTER_MAGIC: [u8; 4] = *b"MACL";
pub const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.buf.len() - self.pos;
        if remaining < n {
            return Err(Error::TruncatedFile {
                offset: self.buf.len() as u64,
                needed: (n - remaining) as u64,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice length"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn header(&mut self, magic: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.array()?;
        if found != magic {
            return Err(Error::BadMagic {
                offset: 0,
                expected: magic,
                found,
            });
        }
        let offset = self.offset();
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::BadVersion {
                offset,
                found: version,
            });
        }
        Ok(())
    }

    /// Fails fast when the declared payload cannot fit in the file.
    fn expect_at_least(&self, bytes: u128) -> Result<()> {
        let remaining = (self.buf.len() - self.pos) as u128;
        if remaining < bytes {
            return Err(Error::TruncatedFile {
                offset: self.buf.len() as u64,
                needed: (bytes - remaining).min(u64::MAX as u128) as u64,
            });
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Malformed {
                offset: self.offset(),
                message: format!("{} trailing bytes", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn dim(v: u32, field: &str) -> Result<usize> {
    if v == 0 {
        return Err(Error::schema(field, "must be >= 1"));
    }
    Ok(v as usize)
}

pub fn decode_feature_map(bytes: &[u8]) -> Result<FeatureMap> {
    let mut r = Reader::new(bytes);
    r.header(FEATURE_MAGIC)?;
    let rows = dim(r.u32()?, "rows")?;
    let cols = dim(r.u32()?, "cols")?;
    let feat_dim = dim(r.u32()?, "feat_dim")?;
    let count = rows * cols * feat_dim;
    r.expect_at_least(count as u128 * 4)?;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        let offset = r.offset();
        let v = r.f32()?;
        if !v.is_finite() {
            return Err(Error::NonFiniteValue { offset });
        }
        if v < 0.0 {
            return Err(Error::NegativeValue { offset, value: v });
        }
        values.push(v);
    }
    r.finish()?;
    FeatureMap::new(RegionGrid::unit(rows, cols), feat_dim, values)
}

pub fn encode_feature_map(fm: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + fm.values().len() * 4);
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(fm.grid.rows as u32).to_le_bytes());
    out.extend_from_slice(&(fm.grid.cols as u32).to_le_bytes());
    out.extend_from_slice(&(fm.feat_dim as u32).to_le_bytes());
    for v in fm.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Reads a `.fmap` file. The grid carries unit cells; callers holding a
/// manifest attach the real geometry with [`FeatureMap::with_grid`].
pub fn read_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    decode_feature_map(&read_file(path.as_ref())?)
}

pub fn write_feature_map(fm: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_feature_map(fm))
}

pub fn decode_score_map(bytes: &[u8], class_id: &str) -> Result<ScoreMap> {
    let mut r = Reader::new(bytes);
    r.header(SCORE_MAGIC)?;
    let rows = dim(r.u32()?, "rows")?;
    let cols = dim(r.u32()?, "cols")?;
    let count = rows * cols;
    r.expect_at_least(count as u128 * 4)?;
    let mut scores = Vec::with_capacity(count);
    for _ in 0..count {
        let offset = r.offset();
        let v = r.f32()?;
        if v.is_nan() || v == f32::INFINITY {
            return Err(Error::NonFiniteValue { offset });
        }
        scores.push(v);
    }
    r.finish()?;
    ScoreMap::new(class_id, RegionGrid::unit(rows, cols), scores)
}

pub fn encode_score_map(sm: &ScoreMap) -> Vec<u8> {
    encode_score_values(sm.grid.rows, sm.grid.cols, sm.scores().iter().copied())
}

pub(crate) fn encode_score_values(
    rows: usize,
    cols: usize,
    values: impl Iterator<Item = f32>,
) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + rows * cols * 4);
    out.extend_from_slice(&SCORE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_score_map(path: impl AsRef<Path>, class_id: &str) -> Result<ScoreMap> {
    decode_score_map(&read_file(path.as_ref())?, class_id)
}

pub fn write_score_map(sm: &ScoreMap, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_score_map(sm))
}

/// Writes any rows×cols matrix in `.smap` layout, narrowing to f32.
pub fn write_matrix_as_score_map(
    rows: usize,
    cols: usize,
    values: &[f64],
    path: impl AsRef<Path>,
) -> Result<()> {
    let bytes = encode_score_values(rows, cols, values.iter().map(|&v| v as f32));
    write_file(path.as_ref(), &bytes)
}

pub fn encode_pool(pool: &PatternPool) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&POOL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(pool.feat_dim as u32).to_le_bytes());
    out.extend_from_slice(&(pool.patterns.len() as u64).to_le_bytes());
    for p in &pool.patterns {
        out.extend_from_slice(&(p.image_id.len() as u32).to_le_bytes());
        out.extend_from_slice(p.image_id.as_bytes());
        out.extend_from_slice(&(p.region.0 as u32).to_le_bytes());
        out.extend_from_slice(&(p.region.1 as u32).to_le_bytes());
        for v in &p.vec {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_pool(bytes: &[u8], class_id: &str, source: &str) -> Result<PatternPool> {
    let mut r = Reader::new(bytes);
    r.header(POOL_MAGIC)?;
    let feat_dim = dim(r.u32()?, "feat_dim")?;
    let n = r.u64()?;
    // each record holds at least its length prefix, row, col and vector
    r.expect_at_least(n as u128 * (12 + 4 * feat_dim as u128))?;
    let mut patterns = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let id_offset = r.offset();
        let len = r.u32()? as usize;
        let id = std::str::from_utf8(r.take(len)?).map_err(|e| Error::Malformed {
            offset: id_offset,
            message: format!("image id is not UTF-8: {e}"),
        })?;
        let row = r.u32()? as usize;
        let col = r.u32()? as usize;
        let mut vec = Vec::with_capacity(feat_dim);
        for _ in 0..feat_dim {
            let offset = r.offset();
            let v = r.f32()?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { offset });
            }
            if v < 0.0 {
                return Err(Error::NegativeValue { offset, value: v });
            }
            vec.push(v);
        }
        patterns.push(Pattern {
            vec,
            image_id: id.to_string(),
            region: (row, col),
        });
    }
    r.finish()?;
    let sorted = patterns.windows(2).all(|w| {
        (w[0].image_id.as_str(), w[0].region) <= (w[1].image_id.as_str(), w[1].region)
    });
    if !sorted {
        return Err(Error::Malformed {
            offset: 0,
            message: "pool records are not sorted by (image_id, row, col)".into(),
        });
    }
    PatternPool::new(class_id, feat_dim, patterns, source)
}

pub fn write_pool(pool: &PatternPool, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_pool(pool))
}

pub fn read_pool(path: impl AsRef<Path>, class_id: &str) -> Result<PatternPool> {
    let path = path.as_ref();
    decode_pool(&read_file(path)?, class_id, &path.display().to_string())
}

pub fn encode_cluster_model(model: &ClusterModel) -> Vec<u8> {
    let feat_dim = model.feat_dim();
    let mut out = Vec::new();
    out.extend_from_slice(&CLUSTER_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(feat_dim as u32).to_le_bytes());
    out.extend_from_slice(&(model.k as u32).to_le_bytes());
    out.extend_from_slice(&(model.eigenvalues.len() as u32).to_le_bytes());
    out.extend_from_slice(&(model.assignments.len() as u64).to_le_bytes());
    for v in &model.eigenvalues {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for c in &model.centroids {
        for v in c {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for s in &model.sizes {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for a in &model.assignments {
        out.extend_from_slice(&a.to_le_bytes());
    }
    out
}

/// Decodes a `.clus` payload. The format does not carry the class id or the
/// clustering parameters; `class_id` is supplied by the caller and the
/// parameters are the defaults with `max_k` taken from the file.
pub fn decode_cluster_model(bytes: &[u8], class_id: &str) -> Result<ClusterModel> {
    let mut r = Reader::new(bytes);
    r.header(CLUSTER_MAGIC)?;
    let feat_dim = dim(r.u32()?, "feat_dim")?;
    let k = dim(r.u32()?, "k")?;
    let max_k = dim(r.u32()?, "M")?;
    let n = r.u64()?;
    r.expect_at_least(
        max_k as u128 * 8 + (k * feat_dim) as u128 * 4 + k as u128 * 8 + n as u128 * 4,
    )?;
    let mut eigenvalues = Vec::with_capacity(max_k);
    for _ in 0..max_k {
        let offset = r.offset();
        let v = r.f64()?;
        if !v.is_finite() {
            return Err(Error::NonFiniteValue { offset });
        }
        eigenvalues.push(v);
    }
    let mut centroids = Vec::with_capacity(k);
    for _ in 0..k {
        let mut c = Vec::with_capacity(feat_dim);
        for _ in 0..feat_dim {
            let offset = r.offset();
            let v = r.f32()?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { offset });
            }
            c.push(v);
        }
        centroids.push(c);
    }
    let mut sizes = Vec::with_capacity(k);
    for _ in 0..k {
        sizes.push(r.u64()?);
    }
    let mut assignments = Vec::with_capacity(n as usize);
    for _ in 0..n {
        assignments.push(r.u32()?);
    }
    r.finish()?;
    let model = ClusterModel {
        class_id: class_id.to_string(),
        k,
        eigenvalues,
        centroids,
        sizes,
        assignments,
        params: ClusterParams {
            max_k,
            min_k: ClusterParams::default().min_k.min(max_k),
            ..ClusterParams::default()
        },
    };
    model.validate()?;
    Ok(model)
}

pub fn write_cluster_model(model: &ClusterModel, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_cluster_model(model))
}

pub fn read_cluster_model(path: impl AsRef<Path>, class_id: &str) -> Result<ClusterModel> {
    decode_cluster_model(&read_file(path.as_ref())?, class_id)
}

pub fn pool_file_name(class_id: &str) -> String {
    format!("pool_{class_id}.bin")
}

pub fn model_file_name(class_id: &str) -> String {
    format!("model_{class_id}.clus")
}

/// Every `model_<class>.clus` in `dir`, keyed by the class named in the file.
pub fn read_models_dir(dir: impl AsRef<Path>) -> Result<BTreeMap<String, ClusterModel>> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(class_id) = name
            .strip_prefix("model_")
            .and_then(|n| n.strip_suffix(".clus"))
            .filter(|c| !c.is_empty())
        {
            out.insert(class_id.to_string(), read_cluster_model(&path, class_id)?);
        }
    }
    Ok(out)
}
