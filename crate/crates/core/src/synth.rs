//! Deterministic synthetic datasets with planted object and distractor
//! structure.
//!
//! Every class owns an object direction; the first
//! `⌈distractor_fraction · num_classes⌉` classes also own a distractor
//! direction. Directions have disjoint coordinate support, and a shared
//! background direction takes the remaining coordinates. Each image holds
//! one object rectangle and, for distractor classes, a larger rectangle
//! touching it along one side. Score maps fire on both, so the baseline
//! largest component spans their union.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datamodel::formats::{write_feature_map, write_score_map};
use crate::datamodel::{
    AnnotationRecord, BBox, ClusterModel, DatasetManifest, FeatureMap, ImageEntry, Label,
    RegionGrid, ScoreMap,
};
use crate::error::{Error, Result};

pub const TRUTH_FILE: &str = "truth.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_CELL_PX: i64 = 16;
pub const ORACLE_ANNOTATOR: &str = "oracle";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub distractor_fraction: f64,
    pub images_per_class: usize,
    pub grid: RegionGrid,
    pub feat_dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.num_classes == 0 {
            return bad("num_classes must be >= 1".into());
        }
        if self.images_per_class == 0 {
            return bad("images_per_class must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.distractor_fraction) {
            return bad(format!(
                "distractor_fraction must lie in [0, 1], got {}",
                self.distractor_fraction
            ));
        }
        if self.feat_dim < 3 * self.num_classes {
            return bad(format!(
                "feat_dim {} is below 3 x num_classes = {}",
                self.feat_dim,
                3 * self.num_classes
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma < 0.3) {
            return bad(format!(
                "noise_sigma must lie in [0, 0.3), got {}",
                self.noise_sigma
            ));
        }
        self.grid.validate()?;
        if self.grid.rows < 6 || self.grid.cols < 6 {
            return bad("grid must be at least 6x6".into());
        }
        Ok(())
    }

    pub fn num_distractor_classes(&self) -> usize {
        (self.distractor_fraction * self.num_classes as f64 - 1e-9).ceil().max(0.0) as usize
    }

    pub fn class_id(y: usize) -> String {
        format!("c{y:02}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTruth {
    pub object: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distractor: Option<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTruth {
    pub p_obj: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_dist: Option<Vec<f64>>,
    pub p_bg: Vec<f64>,
    pub rects: BTreeMap<String, ImageTruth>,
}

/// Planted structure, keyed by class.
pub type Truth = BTreeMap<String, ClassTruth>;

/// Cells of a pixel rect that sits on the grid.
pub fn rect_cells(grid: &RegionGrid, rect: &BBox) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let cell = grid.cell_rect(r, c);
            if cell.x_min >= rect.x_min
                && cell.x_max <= rect.x_max
                && cell.y_min >= rect.y_min
                && cell.y_max <= rect.y_max
            {
                out.push((r, c));
            }
        }
    }
    out
}

fn direction(dim: usize, support: std::ops::Range<usize>) -> Vec<f64> {
    let w = 1.0 / (support.len() as f64).sqrt();
    let mut v = vec![0.0; dim];
    for i in support {
        v[i] = w;
    }
    v
}

/// Cell-aligned rectangle `[r0, r0+h) × [c0, c0+w)`.
#[derive(Debug, Clone, Copy)]
struct CellRect {
    r0: usize,
    c0: usize,
    h: usize,
    w: usize,
}

impl CellRect {
    fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.r0 && r < self.r0 + self.h && c >= self.c0 && c < self.c0 + self.w
    }

    fn to_bbox(self, grid: &RegionGrid) -> BBox {
        let a = grid.cell_rect(self.r0, self.c0);
        let b = grid.cell_rect(self.r0 + self.h - 1, self.c0 + self.w - 1);
        BBox {
            x_min: a.x_min,
            y_min: a.y_min,
            x_max: b.x_max,
            y_max: b.y_max,
        }
    }
}

fn place(rng: &mut ChaCha8Rng, grid: &RegionGrid, with_distractor: bool) -> (CellRect, Option<CellRect>) {
    let (rows, cols) = (grid.rows, grid.cols);
    let lo_h = (rows / 5).max(1);
    let hi_h = (rows / 3).max(lo_h);
    let lo_w = (cols / 5).max(1);
    let hi_w = (cols / 3).max(lo_w);
    let h = rng.random_range(lo_h..=hi_h);
    let w = rng.random_range(lo_w..=hi_w);
    if !with_distractor {
        let r0 = rng.random_range(0..=rows - h);
        let c0 = rng.random_range(0..=cols - w);
        return (CellRect { r0, c0, h, w }, None);
    }
    // the distractor shares a full side with the object and is strictly
    // longer across it, so the union box has IoU < 0.5 with the object
    let below = rng.random_bool(0.5);
    if below {
        let dh = (h + 1 + rng.random_range(0..=1usize)).min(rows - h);
        let r0 = rng.random_range(0..=rows - h - dh);
        let c0 = rng.random_range(0..=cols - w);
        let obj = CellRect { r0, c0, h, w };
        let dist = CellRect { r0: r0 + h, c0, h: dh, w };
        (obj, Some(dist))
    } else {
        let dw = (w + 1 + rng.random_range(0..=1usize)).min(cols - w);
        let r0 = rng.random_range(0..=rows - h);
        let c0 = rng.random_range(0..=cols - w - dw);
        let obj = CellRect { r0, c0, h, w };
        let dist = CellRect { r0, c0: c0 + w, h, w: dw };
        (obj, Some(dist))
    }
}

fn noisy_cell(
    rng: &mut ChaCha8Rng,
    noise: &Normal<f64>,
    base: &[f64],
    sigma: f64,
    out: &mut Vec<f32>,
) {
    let gain = rng.random_range(0.5..1.5);
    for &b in base {
        let e = if sigma > 0.0 { noise.sample(rng) } else { 0.0 };
        out.push((gain * (b + e)).max(0.0) as f32);
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes manifest, feature maps, score maps and the truth sidecar.
pub fn generate(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let dim = cfg.feat_dim;
    let nc = cfg.num_classes;
    let block = dim / (3 * nc);
    let n_dist = cfg.num_distractor_classes();
    let p_bg = direction(dim, 2 * nc * block..dim);

    for sub in ["features", "scores"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let grid = cfg.grid;
    let mut classes = Vec::with_capacity(nc);
    let mut images = Vec::new();
    let mut truth = Truth::new();

    for y in 0..nc {
        let class_id = SynthConfig::class_id(y);
        let p_obj = direction(dim, y * block..(y + 1) * block);
        let p_dist = (y < n_dist).then(|| direction(dim, (nc + y) * block..(nc + y + 1) * block));
        let mut rects = BTreeMap::new();

        for i in 0..cfg.images_per_class {
            let image_id = format!("{class_id}_{i:03}");
            let (obj, dist) = place(&mut rng, &grid, p_dist.is_some());

            let mut values = Vec::with_capacity(grid.len() * dim);
            let mut scores = Vec::with_capacity(grid.len());
            for r in 0..grid.rows {
                for c in 0..grid.cols {
                    let (base, fires) = if obj.contains(r, c) {
                        (&p_obj, true)
                    } else if let (Some(d), Some(pd)) = (dist, p_dist.as_ref()) {
                        if d.contains(r, c) {
                            (pd, true)
                        } else {
                            (&p_bg, false)
                        }
                    } else {
                        (&p_bg, false)
                    };
                    noisy_cell(&mut rng, &noise, base, cfg.noise_sigma, &mut values);
                    let s = if fires {
                        1.0 + rng.random_range(-0.05..0.05)
                    } else {
                        rng.random_range(0.0..0.05)
                    };
                    scores.push(s as f32);
                }
            }

            let fm = FeatureMap::new(grid, dim, values)?;
            let sm = ScoreMap::new(&class_id, grid, scores)?;
            let fmap_rel = PathBuf::from("features").join(format!("{image_id}.fmap"));
            let smap_rel = PathBuf::from("scores").join(format!("{image_id}__{class_id}.smap"));
            write_feature_map(&fm, out_dir.join(&fmap_rel))?;
            write_score_map(&sm, out_dir.join(&smap_rel))?;

            let obj_box = obj.to_bbox(&grid);
            rects.insert(
                image_id.clone(),
                ImageTruth {
                    object: obj_box,
                    distractor: dist.map(|d| d.to_bbox(&grid)),
                },
            );
            images.push(ImageEntry {
                id: image_id,
                fmap: fmap_rel,
                smaps: [(class_id.clone(), smap_rel)].into(),
                labels: vec![class_id.clone()],
                image: None,
                gt_boxes: [(class_id.clone(), vec![obj_box])].into(),
            });
        }
        truth.insert(
            class_id.clone(),
            ClassTruth {
                p_obj,
                p_dist,
                p_bg: p_bg.clone(),
                rects,
            },
        );
        classes.push(class_id);
    }

    let manifest = DatasetManifest {
        classes,
        grid,
        images,
        base_dir: out_dir.to_path_buf(),
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    write_json(&out_dir.join(TRUTH_FILE), &truth)?;
    Ok(manifest)
}

pub fn load_truth(path: &Path) -> Result<Truth> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::TruthFileMissing(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    serde_json::from_str(&text).map_err(|e| Error::schema("truth", e.to_string()))
}

fn inner(a: &[f64], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, &y)| x * y as f64).sum()
}

/// Labels a cluster OBJECT iff its centroid is closer (by inner product)
/// to the object direction than to the distractor and background ones.
pub fn oracle_labels(truth: &ClassTruth, model: &ClusterModel) -> BTreeMap<usize, Label> {
    model
        .centroids
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let obj = inner(&truth.p_obj, c);
            let mut other = inner(&truth.p_bg, c);
            if let Some(pd) = &truth.p_dist {
                other = other.max(inner(pd, c));
            }
            let label = if obj > other {
                Label::Object
            } else {
                Label::Distractor
            };
            (i, label)
        })
        .collect()
}

/// Simulated annotator. Reads the truth sidecar next to the manifest.
/// The record carries a fixed timestamp so repeated runs are identical.
pub fn oracle_annotation(man: &DatasetManifest, model: &ClusterModel) -> Result<AnnotationRecord> {
    let truth = load_truth(&man.base_dir.join(TRUTH_FILE))?;
    oracle_annotation_from(&truth, model)
}

pub fn oracle_annotation_from(truth: &Truth, model: &ClusterModel) -> Result<AnnotationRecord> {
    let ct = truth
        .get(&model.class_id)
        .ok_or_else(|| Error::UnknownClass(model.class_id.clone()))?;
    Ok(AnnotationRecord {
        class_id: model.class_id.clone(),
        labels: oracle_labels(ct, model),
        annotator: ORACLE_ANNOTATOR.to_string(),
        timestamp: DateTime::<Utc>::UNIX_EPOCH,
        version: 0,
    })
}
