//! Boxes from the largest 4-connected component of the thresholded score
//! map, and IoU-based evaluation against ground truth.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::datamodel::{BBox, DatasetManifest, RegionGrid, ScoreMap};
use crate::error::{Error, Result};
use crate::pooling::{threshold_regions, LocalizeParams, RegionSet};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

pub type Component = BTreeSet<(usize, usize)>;

/// 4-connected components, ordered by their first cell in row-major scan.
pub fn connected_components(rs: &RegionSet) -> Vec<Component> {
    let mut seen: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut out = Vec::new();
    for &start in &rs.members {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = Component::new();
        let mut stack = vec![start];
        while let Some((r, c)) = stack.pop() {
            comp.insert((r, c));
            let mut neighbors = Vec::with_capacity(4);
            if r > 0 {
                neighbors.push((r - 1, c));
            }
            if c > 0 {
                neighbors.push((r, c - 1));
            }
            neighbors.push((r + 1, c));
            neighbors.push((r, c + 1));
            for nb in neighbors {
                if rs.members.contains(&nb) && seen.insert(nb) {
                    stack.push(nb);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Largest component; ties by larger finite score sum, then scan order.
pub fn largest_component<'a>(components: &'a [Component], s: &ScoreMap) -> Option<&'a Component> {
    let score_sum = |comp: &Component| -> f64 {
        comp.iter()
            .map(|&(r, c)| s.get(r, c))
            .filter(|v| v.is_finite())
            .map(|v| v as f64)
            .sum()
    };
    let mut best: Option<(&Component, f64)> = None;
    for comp in components {
        let sum = score_sum(comp);
        let better = match best {
            None => true,
            Some((b, bsum)) => comp.len() > b.len() || (comp.len() == b.len() && sum > bsum),
        };
        if better {
            best = Some((comp, sum));
        }
    }
    best.map(|(c, _)| c)
}

pub fn component_to_bbox(comp: &Component, grid: &RegionGrid) -> Result<BBox> {
    let mut cells = comp.iter();
    let &(r0, c0) = cells.next().ok_or(Error::EmptyComponent)?;
    let mut b = grid.cell_rect(r0, c0);
    for &(r, c) in cells {
        let rect = grid.cell_rect(r, c);
        b.x_min = b.x_min.min(rect.x_min);
        b.y_min = b.y_min.min(rect.y_min);
        b.x_max = b.x_max.max(rect.x_max);
        b.y_max = b.y_max.max(rect.y_max);
    }
    Ok(b)
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0);
    let inter = w * h;
    if inter == 0 {
        return 0.0;
    }
    inter as f64 / (a.area() + b.area() - inter) as f64
}

/// Box for a score map: threshold, take the largest component.
pub fn predict_box(s: &ScoreMap, p: &LocalizeParams) -> Option<BBox> {
    let comps = connected_components(&threshold_regions(s, p));
    largest_component(&comps, s).map(|c| component_to_bbox(c, &s.grid).expect("non-empty"))
}

/// image → class → box (or none).
pub type Predictions = BTreeMap<String, BTreeMap<String, Option<BBox>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub images: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Mean over images of the best IoU; a missing prediction counts as 0.
    pub mean_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub classes: BTreeMap<String, ClassReport>,
    pub overall_images: usize,
    pub overall_correct: usize,
    /// Pooled over all image-class pairs.
    pub overall_accuracy: f64,
    /// Unweighted mean of per-class accuracies.
    pub mean_class_accuracy: f64,
    pub mean_iou: f64,
}

pub fn evaluate(
    man: &DatasetManifest,
    predictions: &Predictions,
    iou_threshold: f64,
) -> Result<EvalReport> {
    let mut acc: BTreeMap<String, (usize, usize, f64)> = BTreeMap::new();
    for (image_id, per_class) in predictions {
        for (class_id, pred) in per_class {
            let missing = || Error::MissingGroundTruth {
                image: image_id.clone(),
                class: class_id.clone(),
            };
            let gt = man
                .image(image_id)
                .and_then(|e| e.gt_boxes.get(class_id))
                .filter(|boxes| !boxes.is_empty())
                .ok_or_else(missing)?;
            let best = pred.map_or(0.0, |p| gt.iter().map(|g| iou(&p, g)).fold(0.0, f64::max));
            let entry = acc.entry(class_id.clone()).or_default();
            entry.0 += 1;
            if pred.is_some() && best >= iou_threshold {
                entry.1 += 1;
            }
            entry.2 += best;
        }
    }
    let mut classes = BTreeMap::new();
    let (mut images, mut correct, mut iou_sum) = (0, 0, 0.0);
    for (class_id, (n, ok, s)) in acc {
        images += n;
        correct += ok;
        iou_sum += s;
        classes.insert(
            class_id,
            ClassReport {
                images: n,
                correct: ok,
                accuracy: ok as f64 / n as f64,
                mean_iou: s / n as f64,
            },
        );
    }
    let ratio = |a: f64, b: usize| if b == 0 { 0.0 } else { a / b as f64 };
    let mean_class_accuracy = ratio(classes.values().map(|c| c.accuracy).sum(), classes.len());
    Ok(EvalReport {
        iou_threshold,
        classes,
        overall_images: images,
        overall_correct: correct,
        overall_accuracy: ratio(correct as f64, images),
        mean_class_accuracy,
        mean_iou: ratio(iou_sum, images),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(a: i64, b: i64, c: i64, d: i64) -> BBox {
        BBox::new(a, b, c, d).unwrap()
    }

    #[test]
    fn components_by_four_connectivity() {
        let grid = RegionGrid::unit(3, 3);
        let rs = RegionSet::from_cells(grid, [(0, 0), (0, 1), (2, 2)]);
        let comps = connected_components(&rs);
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0], [(0, 0), (0, 1)].into());
        assert_eq!(comps[1], [(2, 2)].into());
        // diagonal neighbours are separate
        let diag = RegionSet::from_cells(grid, [(0, 0), (1, 1)]);
        assert_eq!(connected_components(&diag).len(), 2);
        assert!(connected_components(&RegionSet::empty(grid)).is_empty());
    }

    #[test]
    fn largest_component_ties() {
        let grid = RegionGrid::unit(2, 5);
        #[rustfmt::skip]
        let sm = ScoreMap::new("y", grid, vec![
            1.0, 1.0, 0.0, 0.5, 0.5,
            1.0, 0.1, 0.0, 0.5, 0.5,
        ]).unwrap();
        let a: Component = [(0, 0), (0, 1), (1, 0), (1, 1)].into();
        let b: Component = [(0, 3), (0, 4), (1, 3), (1, 4)].into();
        let comps = vec![b.clone(), a.clone()];
        // 3.1 vs 2.0
        assert_eq!(largest_component(&comps, &sm), Some(&a));
        let small: Component = [(0, 3)].into();
        assert_eq!(largest_component(&[small, b.clone()], &sm), Some(&b));
        assert_eq!(largest_component(&[], &sm), None);
    }

    #[test]
    fn bbox_from_cells() {
        let g16 = RegionGrid::new(4, 4, 16, 16).unwrap();
        assert_eq!(
            component_to_bbox(&[(2, 3)].into(), &g16).unwrap(),
            bb(48, 32, 64, 48)
        );
        let g10 = RegionGrid::new(2, 2, 10, 10).unwrap();
        assert_eq!(
            component_to_bbox(&[(0, 0), (1, 1)].into(), &g10).unwrap(),
            bb(0, 0, 20, 20)
        );
        assert!(matches!(
            component_to_bbox(&Component::new(), &g10),
            Err(Error::EmptyComponent)
        ));
    }

    #[test]
    fn iou_spot_values() {
        let a = bb(0, 0, 10, 10);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bb(20, 20, 30, 30)), 0.0);
        assert!((iou(&a, &bb(5, 0, 15, 10)) - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn translation_moves_the_box() {
        let grid = RegionGrid::new(5, 5, 8, 6).unwrap();
        let moved = RegionGrid {
            origin_x: 13,
            origin_y: -7,
            ..grid
        };
        let comp: Component = [(1, 1), (1, 2), (2, 2)].into();
        let a = component_to_bbox(&comp, &grid).unwrap();
        let b = component_to_bbox(&comp, &moved).unwrap();
        assert_eq!(a.translate(13, -7), b);
    }
}
