use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Score assigned to suppressed regions. Every max over scores ignores it.
pub const NEG_INF: f32 = f32::NEG_INFINITY;

/// Fixed partition of an image into rectangular regions at feature-map resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegionGrid {
    pub rows: usize,
    pub cols: usize,
    pub cell_h: i64,
    pub cell_w: i64,
    #[serde(default)]
    pub origin_y: i64,
    #[serde(default)]
    pub origin_x: i64,
}

impl RegionGrid {
    pub fn new(rows: usize, cols: usize, cell_h: i64, cell_w: i64) -> Result<Self> {
        let grid = RegionGrid {
            rows,
            cols,
            cell_h,
            cell_w,
            origin_y: 0,
            origin_x: 0,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// A grid with 1×1 pixel cells, used when only the shape is known.
    pub fn unit(rows: usize, cols: usize) -> Self {
        RegionGrid {
            rows,
            cols,
            cell_h: 1,
            cell_w: 1,
            origin_y: 0,
            origin_x: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 {
            return Err(Error::schema("grid.rows", "must be >= 1"));
        }
        if self.cols == 0 {
            return Err(Error::schema("grid.cols", "must be >= 1"));
        }
        if self.cell_h < 1 {
            return Err(Error::schema("grid.cell_h", "must be >= 1"));
        }
        if self.cell_w < 1 {
            return Err(Error::schema("grid.cell_w", "must be >= 1"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &RegionGrid) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// Pixel rectangle of region `(row, col)`, half-open.
    pub fn cell_rect(&self, row: usize, col: usize) -> BBox {
        let y = self.origin_y + row as i64 * self.cell_h;
        let x = self.origin_x + col as i64 * self.cell_w;
        BBox {
            x_min: x,
            y_min: y,
            x_max: x + self.cell_w,
            y_max: y + self.cell_h,
        }
    }

    /// Pixel extent of the whole grid.
    pub fn extent(&self) -> BBox {
        BBox {
            x_min: self.origin_x,
            y_min: self.origin_y,
            x_max: self.origin_x + self.cols as i64 * self.cell_w,
            y_max: self.origin_y + self.rows as i64 * self.cell_h,
        }
    }
}

/// Per-image grid of raw nonnegative feature vectors, row-major `(row, col, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub grid: RegionGrid,
    pub feat_dim: usize,
    values: Vec<f32>,
}

impl FeatureMap {
    pub fn new(grid: RegionGrid, feat_dim: usize, values: Vec<f32>) -> Result<Self> {
        grid.validate()?;
        if feat_dim == 0 {
            return Err(Error::schema("feat_dim", "must be >= 1"));
        }
        let expected = grid.len() * feat_dim;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        for (i, &v) in values.iter().enumerate() {
            let offset = (i * 4) as u64;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { offset });
            }
            if v < 0.0 {
                return Err(Error::NegativeValue { offset, value: v });
            }
        }
        Ok(FeatureMap {
            grid,
            feat_dim,
            values,
        })
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.grid.cols + col) * self.feat_dim;
        &self.values[start..start + self.feat_dim]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Replaces the grid geometry; the shape must agree.
    pub fn with_grid(mut self, grid: RegionGrid) -> Result<Self> {
        if !self.grid.same_shape(&grid) {
            return Err(Error::GridMismatch);
        }
        self.grid = grid;
        Ok(self)
    }
}

/// L2-normalized nonnegative feature vector of one region.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub vec: Vec<f32>,
    pub image_id: String,
    pub region: (usize, usize),
}

/// Per-image, per-class localization scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub class_id: String,
    pub grid: RegionGrid,
    scores: Vec<f32>,
}

impl ScoreMap {
    pub fn new(class_id: impl Into<String>, grid: RegionGrid, scores: Vec<f32>) -> Result<Self> {
        grid.validate()?;
        if scores.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: scores.len(),
            });
        }
        for (i, &s) in scores.iter().enumerate() {
            if s.is_nan() || s == f32::INFINITY {
                return Err(Error::NonFiniteValue {
                    offset: (i * 4) as u64,
                });
            }
        }
        Ok(ScoreMap {
            class_id: class_id.into(),
            grid,
            scores,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.scores[row * self.grid.cols + col]
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub(crate) fn scores_mut(&mut self) -> &mut [f32] {
        &mut self.scores
    }

    /// Maximum over finite entries, `None` if every entry is suppressed.
    pub fn finite_max(&self) -> Option<f32> {
        self.scores
            .iter()
            .copied()
            .filter(|s| s.is_finite())
            .fold(None, |acc, s| Some(acc.map_or(s, |m: f32| m.max(s))))
    }

    pub fn with_grid(mut self, grid: RegionGrid) -> Result<Self> {
        if !self.grid.same_shape(&grid) {
            return Err(Error::GridMismatch);
        }
        self.grid = grid;
        Ok(self)
    }

    pub fn with_class(mut self, class_id: impl Into<String>) -> Self {
        self.class_id = class_id.into();
        self
    }
}

/// All patterns of predicted-foreground regions for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternPool {
    pub class_id: String,
    pub feat_dim: usize,
    pub patterns: Vec<Pattern>,
    pub source: String,
}

impl PatternPool {
    /// Builds a pool, sorting patterns by `(image_id, row, col)`.
    pub fn new(
        class_id: impl Into<String>,
        feat_dim: usize,
        mut patterns: Vec<Pattern>,
        source: impl Into<String>,
    ) -> Result<Self> {
        for p in &patterns {
            if p.vec.len() != feat_dim {
                return Err(Error::DimensionMismatch {
                    expected: feat_dim,
                    got: p.vec.len(),
                });
            }
        }
        patterns.sort_by(|a, b| {
            a.image_id
                .cmp(&b.image_id)
                .then(a.region.cmp(&b.region))
        });
        Ok(PatternPool {
            class_id: class_id.into(),
            feat_dim,
            patterns,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub rho: f64,
    pub min_k: usize,
    pub max_k: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub seed: u64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            rho: 0.7,
            min_k: 2,
            max_k: 4,
            kmeans_restarts: 10,
            kmeans_max_iter: 300,
            seed: 0,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 2.0) {
            return Err(Error::ConfigInvalid(format!(
                "rho must lie in (0, 2), got {}",
                self.rho
            )));
        }
        if self.min_k < 1 || self.min_k > self.max_k {
            return Err(Error::ConfigInvalid(format!(
                "cluster bounds must satisfy 1 <= m <= M, got m={} M={}",
                self.min_k, self.max_k
            )));
        }
        if self.kmeans_restarts == 0 || self.kmeans_max_iter == 0 {
            return Err(Error::ConfigInvalid(
                "k-means restarts and iteration cap must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Clustering result for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub class_id: String,
    pub k: usize,
    /// The smallest eigenvalues of the random-walk Laplacian, ascending.
    pub eigenvalues: Vec<f64>,
    /// Unnormalized mean pattern of each cluster.
    pub centroids: Vec<Vec<f32>>,
    pub sizes: Vec<u64>,
    pub assignments: Vec<u32>,
    pub params: ClusterParams,
}

impl ClusterModel {
    pub fn feat_dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn lambda2(&self) -> Option<f64> {
        self.eigenvalues.get(1).copied()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.centroids.len() != self.k || self.sizes.len() != self.k {
            return Err(Error::Malformed {
                offset: 0,
                message: format!(
                    "k={} but {} centroids and {} sizes",
                    self.k,
                    self.centroids.len(),
                    self.sizes.len()
                ),
            });
        }
        let dim = self.feat_dim();
        if self.centroids.iter().any(|c| c.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: 0,
            });
        }
        let total: u64 = self.sizes.iter().sum();
        if total != self.assignments.len() as u64 {
            return Err(Error::Malformed {
                offset: 0,
                message: format!(
                    "sizes sum to {total} but {} assignments",
                    self.assignments.len()
                ),
            });
        }
        if let Some(&a) = self.assignments.iter().find(|&&a| a as usize >= self.k) {
            return Err(Error::IndexOutOfRange {
                index: a as usize,
                k: self.k,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Object,
    Distractor,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Object => f.write_str("object"),
            Label::Distractor => f.write_str("distractor"),
        }
    }
}

/// Human object/distractor label for every cluster of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    #[serde(rename = "class")]
    pub class_id: String,
    pub labels: BTreeMap<usize, Label>,
    pub annotator: String,
    pub timestamp: DateTime<Utc>,
    /// Write counter used by the annotation service to detect races.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub version: u64,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

impl AnnotationRecord {
    /// Checks that the labels cover exactly the clusters of `model`.
    pub fn check_covers(&self, model: &ClusterModel) -> Result<()> {
        if self.class_id != model.class_id {
            return Err(Error::ClassMismatch(
                self.class_id.clone(),
                model.class_id.clone(),
            ));
        }
        let missing: Vec<usize> = (0..model.k)
            .filter(|i| !self.labels.contains_key(i))
            .collect();
        let extra: Vec<usize> = self
            .labels
            .keys()
            .copied()
            .filter(|&i| i >= model.k)
            .collect();
        if missing.is_empty() && extra.is_empty() {
            return Ok(());
        }
        let mut message = String::new();
        if !missing.is_empty() {
            message.push_str(&format!("missing labels for clusters {missing:?}"));
        }
        if !extra.is_empty() {
            if !message.is_empty() {
                message.push_str("; ");
            }
            message.push_str(&format!(
                "labels for nonexistent clusters {extra:?} (k = {})",
                model.k
            ));
        }
        Err(Error::IncompleteAnnotation {
            class: self.class_id.clone(),
            message,
        })
    }
}

/// Half-open pixel box `[x_min, x_max) × [y_min, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i64; 4]", into = "[i64; 4]")]
pub struct BBox {
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

impl BBox {
    pub fn new(x_min: i64, y_min: i64, x_max: i64, y_max: i64) -> Result<Self> {
        if x_max <= x_min || y_max <= y_min {
            return Err(Error::schema(
                "bbox",
                format!("degenerate box [{x_min}, {y_min}, {x_max}, {y_max}]"),
            ));
        }
        Ok(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> i64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> i64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> i64 {
        self.width() * self.height()
    }

    pub fn translate(&self, dx: i64, dy: i64) -> BBox {
        BBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }
}

impl TryFrom<[i64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [i64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [i64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_rects_tile_the_grid() {
        let grid = RegionGrid {
            rows: 3,
            cols: 5,
            cell_h: 7,
            cell_w: 4,
            origin_y: 2,
            origin_x: -3,
        };
        let total: i64 = (0..grid.rows)
            .flat_map(|r| (0..grid.cols).map(move |c| (r, c)))
            .map(|(r, c)| grid.cell_rect(r, c).area())
            .sum();
        assert_eq!(total, grid.extent().area());
        assert_eq!(grid.cell_rect(0, 1).x_min, grid.cell_rect(0, 0).x_max);
        assert_eq!(grid.cell_rect(1, 0).y_min, grid.cell_rect(0, 0).y_max);
    }

    #[test]
    fn feature_map_rejects_negative_and_nan() {
        let grid = RegionGrid::unit(1, 1);
        assert!(matches!(
            FeatureMap::new(grid, 2, vec![0.5, -0.5]),
            Err(Error::NegativeValue { offset: 4, .. })
        ));
        assert!(matches!(
            FeatureMap::new(grid, 2, vec![f32::NAN, 0.5]),
            Err(Error::NonFiniteValue { offset: 0 })
        ));
    }

    #[test]
    fn score_map_allows_neg_inf_only() {
        let grid = RegionGrid::unit(1, 2);
        assert!(ScoreMap::new("a", grid, vec![NEG_INF, 1.0]).is_ok());
        assert!(ScoreMap::new("a", grid, vec![f32::INFINITY, 1.0]).is_err());
        assert!(ScoreMap::new("a", grid, vec![f32::NAN, 1.0]).is_err());
    }

    #[test]
    fn bbox_json_is_a_four_array() {
        let b = BBox::new(1, 2, 3, 4).unwrap();
        assert_eq!(serde_json::to_string(&b).unwrap(), "[1,2,3,4]");
        assert!(serde_json::from_str::<BBox>("[3,2,1,4]").is_err());
    }

    #[test]
    fn annotation_labels_use_string_keys() {
        let rec = AnnotationRecord {
            class_id: "train".into(),
            labels: [(0, Label::Object), (1, Label::Distractor)].into(),
            annotator: "me".into(),
            timestamp: DateTime::<Utc>::UNIX_EPOCH,
            version: 0,
        };
        let json = serde_json::to_value(&rec).unwrap();
        assert_eq!(json["labels"]["1"], "distractor");
        assert_eq!(json["class"], "train");
        let back: AnnotationRecord = serde_json::from_value(json).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn default_cluster_params() {
        let p = ClusterParams::default();
        assert_eq!((p.rho, p.min_k, p.max_k), (0.7, 2, 4));
        p.validate().unwrap();
        assert!(ClusterParams { rho: 2.0, ..p }.validate().is_err());
        assert!(ClusterParams { min_k: 5, ..p }.validate().is_err());
    }
}
