//! Randomized properties of suppression, components and heatmaps against
//! straightforward reference computations.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use chrono::DateTime;
use dforge_core::datamodel::{
    AnnotationRecord, ClusterModel, ClusterParams, DatasetManifest, FeatureMap, ImageEntry, Label,
    RegionGrid, ScoreMap, NEG_INF,
};
use dforge_core::heatmap::{compute_heatmap, sample_visualization_images};
use dforge_core::localize::{component_to_bbox, connected_components};
use dforge_core::pooling::RegionSet;
use dforge_core::refine::suppress;
use proptest::prelude::*;

fn model(k: usize, dim: usize, centroids: Vec<Vec<f32>>) -> ClusterModel {
    ClusterModel {
        class_id: "y".into(),
        k,
        eigenvalues: vec![0.0, 0.2, 0.9, 1.0],
        centroids: centroids.into_iter().map(|c| c[..dim].to_vec()).collect(),
        sizes: vec![1; k],
        assignments: (0..k as u32).collect(),
        params: ClusterParams::default(),
    }
}

fn record(labels: Vec<bool>) -> AnnotationRecord {
    AnnotationRecord {
        class_id: "y".into(),
        labels: labels
            .into_iter()
            .enumerate()
            .map(|(i, d)| (i, if d { Label::Distractor } else { Label::Object }))
            .collect(),
        annotator: "t".into(),
        timestamp: DateTime::UNIX_EPOCH,
        version: 0,
    }
}

/// Score map, feature map, model and annotation of matching shapes.
fn inputs() -> impl Strategy<Value = (ScoreMap, FeatureMap, ClusterModel, AnnotationRecord)> {
    (1usize..6, 1usize..6, 2usize..6, 2usize..5).prop_flat_map(|(rows, cols, dim, k)| {
        let cells = rows * cols;
        (
            prop::collection::vec(prop_oneof![Just(NEG_INF), -1.0f32..2.0], cells),
            prop::collection::vec(prop_oneof![Just(0.0f32), 0.0f32..1.0], cells * dim),
            prop::collection::vec(prop::collection::vec(0.01f32..1.0, 8), k),
            prop::collection::vec(any::<bool>(), k),
        )
            .prop_map(move |(scores, feats, centroids, labels)| {
                let grid = RegionGrid::unit(rows, cols);
                (
                    ScoreMap::new("y", grid, scores).unwrap(),
                    FeatureMap::new(grid, dim, feats).unwrap(),
                    model(k, dim, centroids),
                    record(labels),
                )
            })
    })
}

fn bits(s: &ScoreMap) -> Vec<u32> {
    s.scores().iter().map(|v| v.to_bits()).collect()
}

fn flood_fill(rows: usize, cols: usize, mask: &[bool]) -> Vec<BTreeSet<(usize, usize)>> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / cols, i % cols);
            comp.insert((r, c));
            let mut nbrs = Vec::new();
            if r > 0 {
                nbrs.push(i - cols);
            }
            if r + 1 < rows {
                nbrs.push(i + cols);
            }
            if c > 0 {
                nbrs.push(i - 1);
            }
            if c + 1 < cols {
                nbrs.push(i + 1);
            }
            for j in nbrs {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        out.push(comp);
    }
    out
}

proptest! {
    #[test]
    fn suppression_is_idempotent_and_monotone((s, fm, m, ann) in inputs()) {
        let once = suppress(&s, &fm, &m, &ann).unwrap();
        let twice = suppress(&once, &fm, &m, &ann).unwrap();
        prop_assert_eq!(bits(&once), bits(&twice));
        for (&a, &b) in s.scores().iter().zip(once.scores()) {
            prop_assert!(b.to_bits() == a.to_bits() || b == NEG_INF);
        }
    }

    #[test]
    fn all_object_annotation_changes_nothing((s, fm, m, _) in inputs()) {
        let ann = record(vec![false; m.k]);
        prop_assert_eq!(bits(&suppress(&s, &fm, &m, &ann).unwrap()), bits(&s));
    }

    #[test]
    fn suppression_commutes_with_cell_order((s, fm, m, ann) in inputs(), seed in any::<u64>()) {
        // reverse-and-rotate the cells of a single-row layout
        let n = s.grid.len();
        let shift = (seed as usize) % n;
        let perm: Vec<usize> = (0..n).map(|i| (n - 1 - i + shift) % n).collect();
        let grid = RegionGrid::unit(1, n);
        let flat_s = ScoreMap::new("y", grid, s.scores().to_vec()).unwrap();
        let flat_fm = FeatureMap::new(grid, fm.feat_dim, fm.values().to_vec()).unwrap();
        let perm_s = ScoreMap::new("y", grid, perm.iter().map(|&i| s.scores()[i]).collect()).unwrap();
        let perm_fm = FeatureMap::new(
            grid,
            fm.feat_dim,
            perm.iter().flat_map(|&i| flat_fm.cell(0, i).to_vec()).collect(),
        )
        .unwrap();
        let base = suppress(&flat_s, &flat_fm, &m, &ann).unwrap();
        let permuted = suppress(&perm_s, &perm_fm, &m, &ann).unwrap();
        let expected: Vec<u32> = perm.iter().map(|&i| base.scores()[i].to_bits()).collect();
        prop_assert_eq!(bits(&permuted), expected);
    }

    #[test]
    fn components_match_flood_fill(
        (rows, cols, mask) in (1usize..15, 1usize..15)
            .prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(any::<bool>(), r * c)))
    ) {
        let grid = RegionGrid::unit(rows, cols);
        let rs = RegionSet::from_cells(
            grid,
            (0..rows * cols).filter(|&i| mask[i]).map(|i| (i / cols, i % cols)),
        );
        let comps = connected_components(&rs);
        prop_assert_eq!(&comps, &flood_fill(rows, cols, &mask));
        let covered: usize = comps.iter().map(BTreeSet::len).sum();
        prop_assert_eq!(covered, rs.len());
        for comp in &comps {
            let b = component_to_bbox(comp, &grid).unwrap();
            for &(r, c) in comp {
                prop_assert!(b.x_min <= c as i64 && (c as i64) < b.x_max);
                prop_assert!(b.y_min <= r as i64 && (r as i64) < b.y_max);
            }
        }
    }

    #[test]
    fn heatmaps_scale_with_the_centroid(
        (fm, m) in inputs().prop_map(|(_, fm, m, _)| (fm, m)),
        alpha in 0.0f32..4.0,
    ) {
        let mut scaled = m.clone();
        for c in &mut scaled.centroids {
            c.iter_mut().for_each(|x| *x *= alpha);
        }
        let h = compute_heatmap(&fm, &m, 0).unwrap();
        let hs = compute_heatmap(&fm, &scaled, 0).unwrap();
        for (a, b) in h.values.iter().zip(&hs.values) {
            prop_assert!((b - alpha as f64 * a).abs() <= 1e-5 * (1.0 + a.abs()));
        }
    }
}

fn manifest(n: usize) -> DatasetManifest {
    DatasetManifest {
        classes: vec!["y".into(), "z".into()],
        grid: RegionGrid::unit(2, 2),
        images: (0..n)
            .map(|i| ImageEntry {
                id: format!("img{i:02}"),
                fmap: format!("f{i}.fmap").into(),
                smaps: BTreeMap::new(),
                labels: vec![if i % 3 == 0 { "z" } else { "y" }.into()],
                image: None,
                gt_boxes: BTreeMap::new(),
            })
            .collect(),
        base_dir: ".".into(),
    }
}

#[test]
fn visualization_sample_is_a_seeded_ordered_subset() {
    let man = manifest(30);
    let labeled: Vec<String> = man.images_with_label("y").map(|e| e.id.clone()).collect();
    let a = sample_visualization_images(&man, "y", 8, 4).unwrap();
    assert_eq!(a.len(), 8);
    assert_eq!(a, sample_visualization_images(&man, "y", 8, 4).unwrap());
    let positions: Vec<usize> = a.iter().map(|id| labeled.iter().position(|l| l == id).unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]));
    // a different seed draws a different sample
    assert_ne!(a, sample_visualization_images(&man, "y", 8, 5).unwrap());
    // too few images: all of them
    assert_eq!(sample_visualization_images(&man, "z", 50, 4).unwrap().len(), 10);
    assert!(sample_visualization_images(&man, "nope", 3, 0).is_err());
}
