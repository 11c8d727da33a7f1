//! Spectral clustering of a pattern pool with an implicit inner-product
//! similarity.
//!
//! The generalized problem `L v = λ D v` is solved through the symmetric
//! `B = D^{-1/2} L D^{-1/2}`, whose eigenvalues coincide with it; vectors
//! map back as `v = D^{-1/2} w` and come out D-orthonormal. Nothing of size
//! `n × n` is ever built on the iterative path.

mod dense;
pub mod graph;
pub mod kmeans;
pub mod lanczos;

pub use dense::dense_eigenpairs;
pub use graph::{degree_vector, laplacian_matvec, NormalizedLaplacian, PatternMatrix};
pub use kmeans::{kmeans, KMeansResult};

use crate::datamodel::{ClusterModel, ClusterParams, PatternPool};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Generalized eigenvectors `v` with `vᵢᵀ D vⱼ = δᵢⱼ`.
    pub eigenvectors: Vec<Vec<f64>>,
    /// `‖B w − λ w‖` of each pair in the symmetric form.
    pub residuals: Vec<f64>,
}

impl EigenResult {
    /// Maps eigenvectors `w` of `B` back to `v = D^{-1/2} w` with a
    /// canonical sign: the first entry of significant magnitude is positive.
    pub(crate) fn from_normalized(
        eigenvalues: Vec<f64>,
        normalized: Vec<Vec<f64>>,
        residuals: Vec<f64>,
        inv_sqrt_d: &[f64],
    ) -> Self {
        let eigenvectors = normalized
            .into_iter()
            .map(|w| {
                let mut v: Vec<f64> = w.iter().zip(inv_sqrt_d).map(|(a, s)| a * s).collect();
                let big = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                if let Some(first) = v.iter().find(|x| x.abs() > 1e-3 * big) {
                    if *first < 0.0 {
                        v.iter_mut().for_each(|x| *x = -*x);
                    }
                }
                v
            })
            .collect();
        EigenResult {
            eigenvalues,
            eigenvectors,
            residuals,
        }
    }
}

/// The `params.max_k` smallest eigenpairs by Lanczos on the implicit operator.
pub fn smallest_eigenpairs(pool: &PatternPool, params: &ClusterParams) -> Result<EigenResult> {
    let n = pool.len();
    if n < params.max_k + 1 {
        return Err(Error::PoolTooSmall {
            n,
            required: params.max_k + 1,
        });
    }
    let mut op = NormalizedLaplacian::new(PatternMatrix::from_pool(pool)?)?;
    let out = lanczos::smallest(n, params.max_k, params.seed, |x, y| op.apply(x, y))?;
    log::debug!(
        "class={} n={} lanczos_matvecs={} max_residual={:.3e}",
        pool.class_id,
        n,
        out.matvecs,
        out.residuals.iter().fold(0.0f64, |m, &r| m.max(r))
    );
    Ok(EigenResult::from_normalized(
        out.values,
        out.vectors,
        out.residuals,
        op.inv_sqrt_degrees(),
    ))
}

/// `clamp(#{i : λᵢ < ρ}, m, M)`, with `M` capped by the eigenvalues available.
pub fn select_k(eig: &EigenResult, params: &ClusterParams) -> usize {
    let below = eig.eigenvalues.iter().filter(|&&l| l < params.rho).count();
    let upper = params.max_k.min(eig.eigenvalues.len());
    below.max(params.min_k).min(upper)
}

/// Rows `u_a` of `U = [v₁ | … | v_k]`, without row normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEmbedding {
    pub k: usize,
    /// Row-major `n × k`.
    pub data: Vec<f64>,
}

impl SpectralEmbedding {
    pub fn from_eigen(eig: &EigenResult, k: usize) -> Self {
        assert!(k >= 1 && k <= eig.eigenvectors.len());
        let n = eig.eigenvectors[0].len();
        let mut data = Vec::with_capacity(n * k);
        for a in 0..n {
            data.extend(eig.eigenvectors[..k].iter().map(|v| v[a]));
        }
        SpectralEmbedding { k, data }
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.k
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.k..(a + 1) * self.k]
    }
}

/// Feature-space mean of each cluster's patterns, narrowed to f32.
pub fn cluster_centroids(pool: &PatternPool, assignments: &[usize], k: usize) -> Vec<Vec<f32>> {
    let dim = pool.feat_dim;
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in pool.patterns.iter().zip(assignments) {
        counts[a] += 1;
        for (s, &x) in sums[a].iter_mut().zip(&p.vec) {
            *s += x as f64;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| s.into_iter().map(|x| (x / c.max(1) as f64) as f32).collect())
        .collect()
}

/// Spectral eigenproblem for `cluster`: Lanczos when the pool allows it,
/// the dense solve otherwise.
pub fn eigenpairs(pool: &PatternPool, params: &ClusterParams) -> Result<EigenResult> {
    if pool.len() > params.max_k {
        smallest_eigenpairs(pool, params)
    } else {
        dense_eigenpairs(pool, params)
    }
}

/// Assembles a model from a pool, its eigenpairs and the chosen `k`.
pub fn model_from_eigen(
    pool: &PatternPool,
    params: &ClusterParams,
    eig: &EigenResult,
) -> ClusterModel {
    let k = select_k(eig, params);
    let embedding = SpectralEmbedding::from_eigen(eig, k);
    let km = kmeans(
        &embedding.data,
        k,
        k,
        params.kmeans_restarts,
        params.kmeans_max_iter,
        params.seed,
    );
    let centroids = cluster_centroids(pool, &km.assignments, k);
    let mut sizes = vec![0u64; k];
    for &a in &km.assignments {
        sizes[a] += 1;
    }
    ClusterModel {
        class_id: pool.class_id.clone(),
        k,
        eigenvalues: eig.eigenvalues.clone(),
        centroids,
        sizes,
        assignments: km.assignments.iter().map(|&a| a as u32).collect(),
        params: *params,
    }
}

pub fn cluster(pool: &PatternPool, params: &ClusterParams) -> Result<ClusterModel> {
    params.validate()?;
    let required = 2 * params.min_k;
    if pool.len() < required {
        return Err(Error::PoolTooSmall {
            n: pool.len(),
            required,
        });
    }
    let eig = eigenpairs(pool, params)?;
    Ok(model_from_eigen(pool, params, &eig))
}
