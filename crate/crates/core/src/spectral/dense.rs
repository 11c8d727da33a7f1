//! Direct solve on the explicitly built normalized Laplacian, for pools too
//! small for the iterative path. Quadratic memory; small `n` only.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::datamodel::{ClusterParams, PatternPool};
use crate::error::Result;
use crate::spectral::graph::PatternMatrix;
use crate::spectral::EigenResult;

pub fn dense_eigenpairs(pool: &PatternPool, params: &ClusterParams) -> Result<EigenResult> {
    let phi = PatternMatrix::from_pool(pool)?;
    let n = phi.n();
    let d = phi.degrees();
    let s: Vec<f64> = d.iter().map(|&x| 1.0 / x.sqrt()).collect();
    let b = DMatrix::from_fn(n, n, |i, j| {
        let w: f64 = phi
            .row(i)
            .iter()
            .zip(phi.row(j))
            .map(|(&x, &y)| x as f64 * y as f64)
            .sum();
        let id = if i == j { 1.0 } else { 0.0 };
        id - s[i] * w * s[j]
    });
    let eig = SymmetricEigen::new(b.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[c])
            .then(a.cmp(&c))
    });
    let nev = params.max_k.min(n);
    let mut values = Vec::with_capacity(nev);
    let mut vectors = Vec::with_capacity(nev);
    let mut residuals = Vec::with_capacity(nev);
    for &i in order.iter().take(nev) {
        let lambda = eig.eigenvalues[i];
        let w = eig.eigenvectors.column(i).into_owned();
        residuals.push((&b * &w - &w * lambda).norm());
        values.push(lambda);
        vectors.push(w.iter().copied().collect());
    }
    Ok(EigenResult::from_normalized(values, vectors, residuals, &s))
}
