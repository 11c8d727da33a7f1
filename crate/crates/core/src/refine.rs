//! Suppression of regions whose best-matching cluster is a distractor.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::datamodel::formats::write_score_map;
use crate::datamodel::{
    AnnotationRecord, ClusterModel, DatasetManifest, FeatureMap, Label, ScoreMap, NEG_INF,
};
use crate::error::{Error, Result};
use crate::heatmap::similarity;
use crate::pooling::{normalize_cell, threshold_regions, LocalizeParams};

/// Index of the most similar centroid, lowest index on ties; `None` for a
/// featureless cell.
pub fn best_cluster(cell: &[f32], model: &ClusterModel) -> Option<usize> {
    let unit = normalize_cell(cell)?;
    let mut best = (0, f64::NEG_INFINITY);
    for (i, c) in model.centroids.iter().enumerate() {
        let h = similarity(&unit, c);
        if h > best.1 {
            best = (i, h);
        }
    }
    Some(best.0)
}

pub fn suppress(
    s: &ScoreMap,
    fm: &FeatureMap,
    model: &ClusterModel,
    ann: &AnnotationRecord,
) -> Result<ScoreMap> {
    if !s.grid.same_shape(&fm.grid) {
        return Err(Error::GridMismatch);
    }
    if s.class_id != model.class_id {
        return Err(Error::ClassMismatch(s.class_id.clone(), model.class_id.clone()));
    }
    ann.check_covers(model)?;
    if fm.feat_dim != model.feat_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.feat_dim(),
            got: fm.feat_dim,
        });
    }
    let mut out = s.clone();
    let cols = s.grid.cols;
    for (idx, score) in out.scores_mut().iter_mut().enumerate() {
        let (r, c) = (idx / cols, idx % cols);
        if let Some(best) = best_cluster(fm.cell(r, c), model) {
            if ann.labels[&best] == Label::Distractor {
                *score = NEG_INF;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RefineSummary {
    pub images_processed: usize,
    /// Cells turned from a finite score into the sentinel.
    pub cells_suppressed: usize,
    /// Of those, cells that belonged to the thresholded foreground before
    /// refinement.
    pub foreground_cells_suppressed: usize,
}

/// Counts `(newly suppressed cells, of which foreground)` between two maps.
pub fn suppression_counts(before: &ScoreMap, after: &ScoreMap, p: &LocalizeParams) -> (usize, usize) {
    let fg = threshold_regions(before, p);
    let cols = before.grid.cols;
    let mut all = 0;
    let mut in_fg = 0;
    for (idx, (&b, &a)) in before.scores().iter().zip(after.scores()).enumerate() {
        if b.is_finite() && a == NEG_INF {
            all += 1;
            if fg.contains(idx / cols, idx % cols) {
                in_fg += 1;
            }
        }
    }
    (all, in_fg)
}

/// File name of a refined score map.
pub fn refined_file_name(image_id: &str) -> String {
    format!("{image_id}.smap")
}

/// Writes a refined `.smap` for every image labeled with the class.
pub fn refine_dataset(
    man: &DatasetManifest,
    class_id: &str,
    model: &ClusterModel,
    ann: &AnnotationRecord,
    params: &LocalizeParams,
    out_dir: &Path,
) -> Result<RefineSummary> {
    man.require_class(class_id)?;
    if model.class_id != class_id {
        return Err(Error::ClassMismatch(model.class_id.clone(), class_id.to_string()));
    }
    ann.check_covers(model)?;

    let mut refined = Vec::new();
    let mut summary = RefineSummary::default();
    for entry in man.images_with_label(class_id) {
        let fm = man.load_feature_map(entry)?;
        let sm = man.load_score_map(entry, class_id)?;
        let out = suppress(&sm, &fm, model, ann)?;
        let (all, fg) = suppression_counts(&sm, &out, params);
        summary.images_processed += 1;
        summary.cells_suppressed += all;
        summary.foreground_cells_suppressed += fg;
        refined.push((entry.id.clone(), out));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (id, sm) in &refined {
        write_score_map(sm, out_dir.join(refined_file_name(id)))?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{ClusterParams, RegionGrid};
    use chrono::{DateTime, Utc};

    fn model() -> ClusterModel {
        ClusterModel {
            class_id: "y".into(),
            k: 2,
            eigenvalues: vec![0.0, 0.1, 0.9, 1.0],
            centroids: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            sizes: vec![1, 1],
            assignments: vec![0, 1],
            params: ClusterParams::default(),
        }
    }

    fn ann(labels: [Label; 2]) -> AnnotationRecord {
        AnnotationRecord {
            class_id: "y".into(),
            labels: [(0, labels[0]), (1, labels[1])].into(),
            annotator: "t".into(),
            timestamp: DateTime::<Utc>::UNIX_EPOCH,
            version: 0,
        }
    }

    fn inputs() -> (ScoreMap, FeatureMap) {
        let grid = RegionGrid::unit(1, 4);
        let sm = ScoreMap::new("y", grid, vec![1.0, 0.9, 0.5, 0.1]).unwrap();
        let fm = FeatureMap::new(grid, 2, vec![2.0, 0.1, 0.1, 3.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        (sm, fm)
    }

    #[test]
    fn all_object_is_identity() {
        let (sm, fm) = inputs();
        let out = suppress(&sm, &fm, &model(), &ann([Label::Object; 2])).unwrap();
        assert_eq!(out, sm);
    }

    #[test]
    fn all_distractor_suppresses_every_feature_cell() {
        let (sm, fm) = inputs();
        let out = suppress(&sm, &fm, &model(), &ann([Label::Distractor; 2])).unwrap();
        assert_eq!(out.scores(), &[NEG_INF, NEG_INF, 0.5, NEG_INF]);
    }

    #[test]
    fn ties_go_to_lowest_cluster() {
        let (sm, fm) = inputs();
        // cell 3 is equidistant; cluster 0 wins
        let out = suppress(&sm, &fm, &model(), &ann([Label::Object, Label::Distractor])).unwrap();
        assert_eq!(out.scores(), &[1.0, NEG_INF, 0.5, 0.1]);
    }

    #[test]
    fn precondition_errors() {
        let (sm, fm) = inputs();
        let mut partial = ann([Label::Object; 2]);
        partial.labels.remove(&1);
        assert!(matches!(
            suppress(&sm, &fm, &model(), &partial),
            Err(Error::IncompleteAnnotation { .. })
        ));
        let other = sm.clone().with_class("z");
        assert!(matches!(
            suppress(&other, &fm, &model(), &ann([Label::Object; 2])),
            Err(Error::ClassMismatch(..))
        ));
        let fm2 = FeatureMap::new(RegionGrid::unit(2, 2), 2, vec![1.0; 8]).unwrap();
        assert!(matches!(
            suppress(&sm, &fm2, &model(), &ann([Label::Object; 2])),
            Err(Error::GridMismatch)
        ));
    }
}
