//! Thresholding score maps into foreground regions and collecting the
//! normalized pattern pool of a class.

use std::collections::BTreeSet;

use crate::datamodel::{DatasetManifest, FeatureMap, Pattern, PatternPool, RegionGrid, ScoreMap};
use crate::error::{Error, Result};

/// Cells whose norm falls below this are treated as featureless.
pub const MIN_CELL_NORM: f64 = 1e-12;

/// Set of grid cells, iterated in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionSet {
    pub grid: RegionGrid,
    pub members: BTreeSet<(usize, usize)>,
}

impl RegionSet {
    pub fn empty(grid: RegionGrid) -> Self {
        RegionSet {
            grid,
            members: BTreeSet::new(),
        }
    }

    pub fn from_cells(grid: RegionGrid, cells: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let members: BTreeSet<_> = cells.into_iter().collect();
        assert!(
            members.iter().all(|&(r, c)| r < grid.rows && c < grid.cols),
            "region outside grid"
        );
        RegionSet { grid, members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.members.contains(&(row, col))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizeParams {
    /// Fraction of the maximum score a region must exceed.
    pub theta: f64,
}

impl Default for LocalizeParams {
    fn default() -> Self {
        LocalizeParams { theta: 0.2 }
    }
}

impl LocalizeParams {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::ConfigInvalid(format!(
                "theta must lie in (0, 1), got {theta}"
            )));
        }
        Ok(LocalizeParams { theta })
    }
}

/// `{u : s_u > theta · max s}` over finite scores; empty when the maximum
/// is missing or non-positive.
pub fn threshold_regions(s: &ScoreMap, p: &LocalizeParams) -> RegionSet {
    let mut out = RegionSet::empty(s.grid);
    let mx = match s.finite_max() {
        Some(mx) if mx > 0.0 => mx,
        _ => return out,
    };
    // scores are f32; cutting in f32 keeps exact ties excluded
    let cut = p.theta as f32 * mx;
    for r in 0..s.grid.rows {
        for c in 0..s.grid.cols {
            let v = s.get(r, c);
            if v.is_finite() && v > cut {
                out.members.insert((r, c));
            }
        }
    }
    out
}

/// L2-normalizes a feature cell in f64, `None` for a (near) zero cell.
pub fn normalize_cell(cell: &[f32]) -> Option<Vec<f64>> {
    let norm = cell
        .iter()
        .map(|&v| v as f64 * v as f64)
        .sum::<f64>()
        .sqrt();
    if norm < MIN_CELL_NORM {
        return None;
    }
    Some(cell.iter().map(|&v| v as f64 / norm).collect())
}

pub fn extract_patterns(fm: &FeatureMap, rs: &RegionSet, image_id: &str) -> Result<Vec<Pattern>> {
    if !fm.grid.same_shape(&rs.grid) {
        return Err(Error::GridMismatch);
    }
    Ok(rs
        .members
        .iter()
        .filter_map(|&(r, c)| {
            normalize_cell(fm.cell(r, c)).map(|v| Pattern {
                vec: v.into_iter().map(|x| x as f32).collect(),
                image_id: image_id.to_string(),
                region: (r, c),
            })
        })
        .collect())
}

pub fn build_pool(man: &DatasetManifest, class_id: &str, p: &LocalizeParams) -> Result<PatternPool> {
    man.require_class(class_id)?;
    let mut patterns = Vec::new();
    let mut feat_dim = None;
    for entry in man.images_with_label(class_id) {
        let fm = man.load_feature_map(entry)?;
        match feat_dim {
            None => feat_dim = Some(fm.feat_dim),
            Some(d) if d != fm.feat_dim => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: fm.feat_dim,
                })
            }
            _ => {}
        }
        let sm = man.load_score_map(entry, class_id)?;
        let regions = threshold_regions(&sm, p);
        patterns.extend(extract_patterns(&fm, &regions, &entry.id)?);
    }
    match feat_dim {
        Some(d) if !patterns.is_empty() => {
            PatternPool::new(class_id, d, patterns, man.base_dir.display().to_string())
        }
        _ => Err(Error::EmptyPool(class_id.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::NEG_INF;
    use proptest::prelude::*;

    fn row(scores: Vec<f32>) -> ScoreMap {
        ScoreMap::new("y", RegionGrid::unit(1, scores.len()), scores).unwrap()
    }

    fn cells(rs: &RegionSet) -> Vec<(usize, usize)> {
        rs.members.iter().copied().collect()
    }

    #[test]
    fn threshold_is_strict_and_relative() {
        let p = LocalizeParams::default();
        assert_eq!(cells(&threshold_regions(&row(vec![1.0, 0.3, 0.1]), &p)), [(0, 0), (0, 1)]);
        // exactly at the cut is excluded
        assert_eq!(cells(&threshold_regions(&row(vec![1.0, 0.2]), &p)), [(0, 0)]);
    }

    #[test]
    fn sentinel_is_ignored_in_the_max() {
        let p = LocalizeParams::default();
        assert!(threshold_regions(&row(vec![NEG_INF; 3]), &p).is_empty());
        assert_eq!(
            cells(&threshold_regions(&row(vec![NEG_INF, 0.5, 0.09]), &p)),
            [(0, 1)]
        );
    }

    #[test]
    fn non_positive_max_gives_empty_set() {
        let p = LocalizeParams::default();
        assert!(threshold_regions(&row(vec![0.0, 0.0]), &p).is_empty());
        assert!(threshold_regions(&row(vec![-1.0, -0.5]), &p).is_empty());
    }

    #[test]
    fn extraction_normalizes_and_skips_zero_cells() {
        let grid = RegionGrid::unit(1, 2);
        let fm = FeatureMap::new(grid, 2, vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        let all = RegionSet::from_cells(grid, [(0, 0), (0, 1)]);
        let pats = extract_patterns(&fm, &all, "img").unwrap();
        assert_eq!(pats.len(), 1);
        assert_eq!(pats[0].vec, vec![0.6, 0.8]);
        assert_eq!(pats[0].region, (0, 0));
        assert!(extract_patterns(&fm, &RegionSet::empty(grid), "img")
            .unwrap()
            .is_empty());
        let other = RegionSet::empty(RegionGrid::unit(2, 2));
        assert!(matches!(
            extract_patterns(&fm, &other, "img"),
            Err(Error::GridMismatch)
        ));
    }

    proptest! {
        #[test]
        fn threshold_scale_invariant(
            scores in prop::collection::vec(prop_oneof![Just(f32::NEG_INFINITY), -2.0f32..2.0], 1..30),
            exp in -20i32..20,
        ) {
            // power-of-two scales are exact, so the sets must agree exactly
            let p = LocalizeParams::default();
            let scale = 2f32.powi(exp);
            let scaled: Vec<f32> = scores.iter().map(|s| s * scale).collect();
            prop_assert_eq!(
                threshold_regions(&row(scores), &p),
                threshold_regions(&row(scaled), &p)
            );
        }

        #[test]
        fn patterns_are_unit_and_nonnegative(
            values in prop::collection::vec(0.0f32..10.0, 12),
        ) {
            let grid = RegionGrid::unit(2, 2);
            let fm = FeatureMap::new(grid, 3, values).unwrap();
            let all = RegionSet::from_cells(grid, [(0, 0), (0, 1), (1, 0), (1, 1)]);
            for p in extract_patterns(&fm, &all, "x").unwrap() {
                let n: f64 = p.vec.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
                prop_assert!((n - 1.0).abs() < 1e-6);
                prop_assert!(p.vec.iter().all(|&v| v >= 0.0));
            }
        }
    }
}
