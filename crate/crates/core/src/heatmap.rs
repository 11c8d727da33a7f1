//! Per-cluster similarity heatmaps.
//!
//! The average similarity of a region to the members of a cluster equals
//! the inner product with the cluster's mean pattern, so only the stored
//! centroid is needed.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{ClusterModel, DatasetManifest, FeatureMap, RegionGrid};
use crate::error::{Error, Result};
use crate::pooling::normalize_cell;

pub const DEFAULT_SAMPLE_COUNT: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    pub class_id: String,
    pub cluster_index: usize,
    pub grid: RegionGrid,
    /// Row-major `rows × cols`.
    pub values: Vec<f64>,
}

impl HeatmapGrid {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.grid.cols + col]
    }

    /// Rows of the matrix, for JSON payloads.
    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        self.values
            .chunks(self.grid.cols)
            .map(<[f64]>::to_vec)
            .collect()
    }
}

pub fn centroid_of(model: &ClusterModel, i: usize) -> Result<&[f32]> {
    model
        .centroids
        .get(i)
        .map(Vec::as_slice)
        .ok_or(Error::IndexOutOfRange {
            index: i,
            k: model.k,
        })
}

/// `⟨normalize(cell), centroid⟩`, or `None` for a featureless cell.
pub fn cell_similarity(cell: &[f32], centroid: &[f32]) -> Option<f64> {
    normalize_cell(cell).map(|u| similarity(&u, centroid))
}

pub(crate) fn similarity(unit: &[f64], centroid: &[f32]) -> f64 {
    unit.iter().zip(centroid).map(|(&x, &c)| x * c as f64).sum()
}

/// Heatmap of a raw centroid vector, zero on featureless cells.
pub fn heatmap_for_centroid(fm: &FeatureMap, centroid: &[f32]) -> Result<Vec<f64>> {
    if fm.feat_dim != centroid.len() {
        return Err(Error::DimensionMismatch {
            expected: centroid.len(),
            got: fm.feat_dim,
        });
    }
    let mut values = Vec::with_capacity(fm.grid.len());
    for r in 0..fm.grid.rows {
        for c in 0..fm.grid.cols {
            values.push(cell_similarity(fm.cell(r, c), centroid).unwrap_or(0.0));
        }
    }
    Ok(values)
}

pub fn compute_heatmap(fm: &FeatureMap, model: &ClusterModel, i: usize) -> Result<HeatmapGrid> {
    let centroid = centroid_of(model, i)?;
    Ok(HeatmapGrid {
        class_id: model.class_id.clone(),
        cluster_index: i,
        grid: fm.grid,
        values: heatmap_for_centroid(fm, centroid)?,
    })
}

/// Seeded uniform sample, without replacement, of images labeled with the
/// class. Returned in manifest order; all of them if there are too few.
pub fn sample_visualization_images(
    man: &DatasetManifest,
    class_id: &str,
    count: usize,
    seed: u64,
) -> Result<Vec<String>> {
    man.require_class(class_id)?;
    let labeled: Vec<&str> = man
        .images_with_label(class_id)
        .map(|e| e.id.as_str())
        .collect();
    if labeled.len() <= count {
        return Ok(labeled.into_iter().map(str::to_string).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, labeled.len(), count).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| labeled[i].to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::ClusterParams;

    fn model(centroids: Vec<Vec<f32>>) -> ClusterModel {
        let k = centroids.len();
        ClusterModel {
            class_id: "y".into(),
            k,
            eigenvalues: vec![0.0; 4],
            centroids,
            sizes: vec![1; k],
            assignments: (0..k as u32).collect(),
            params: ClusterParams::default(),
        }
    }

    #[test]
    fn centroid_lookup() {
        let m = model(vec![vec![0.5, 0.5, 0.0], vec![0.6, 0.8, 0.0]]);
        assert_eq!(centroid_of(&m, 0).unwrap(), &[0.5, 0.5, 0.0]);
        assert!(matches!(
            centroid_of(&m, 2),
            Err(Error::IndexOutOfRange { index: 2, k: 2 })
        ));
    }

    #[test]
    fn matching_and_orthogonal_cells() {
        let grid = RegionGrid::unit(1, 3);
        // cell 0 is 5·pattern, cell 1 is orthogonal, cell 2 is zero
        let fm = FeatureMap::new(grid, 3, vec![3.0, 4.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0]).unwrap();
        let m = model(vec![vec![0.6, 0.8, 0.0]]);
        let h = compute_heatmap(&fm, &m, 0).unwrap();
        assert!((h.get(0, 0) - 1.0).abs() < 1e-6);
        assert_eq!(h.get(0, 1), 0.0);
        assert_eq!(h.get(0, 2), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let fm = FeatureMap::new(RegionGrid::unit(1, 1), 2, vec![1.0, 0.0]).unwrap();
        let m = model(vec![vec![1.0, 0.0, 0.0]]);
        assert!(matches!(
            compute_heatmap(&fm, &m, 0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn heatmap_is_linear_in_the_centroid() {
        let grid = RegionGrid::unit(2, 2);
        let fm = FeatureMap::new(
            grid,
            2,
            vec![1.0, 2.0, 0.5, 0.0, 0.0, 3.0, 1.0, 1.0],
        )
        .unwrap();
        let a = [0.25f32, 0.75];
        let scaled = [0.625f32, 1.875]; // 2.5·a, exact in f32
        let h = heatmap_for_centroid(&fm, &a).unwrap();
        let hs = heatmap_for_centroid(&fm, &scaled).unwrap();
        for (x, y) in h.iter().zip(&hs) {
            assert!((2.5 * x - y).abs() < 1e-12);
        }
    }
}
