//! Inner-product similarity graph over a pattern pool, never materialized.
//!
//! With `Φ` the `feat_dim × n` matrix of patterns, `W = ΦᵀΦ`, so the
//! degrees are `d = Φᵀ(Φ 1)` and `L v = d ⊙ v − Φᵀ(Φ v)`. Both cost
//! `O(n · feat_dim)`.

use crate::datamodel::PatternPool;
use crate::error::{Error, Result};

/// Pool patterns, row-major `n × dim`. Kept in f32 to halve the memory
/// traffic of each product; arithmetic is carried out in f64.
#[derive(Debug, Clone)]
pub struct PatternMatrix {
    n: usize,
    dim: usize,
    data: Vec<f32>,
}

impl PatternMatrix {
    pub fn from_pool(pool: &PatternPool) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::EmptyPool(pool.class_id.clone()));
        }
        let dim = pool.feat_dim;
        let mut data = Vec::with_capacity(pool.len() * dim);
        for p in &pool.patterns {
            if p.vec.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.vec.len(),
                });
            }
            data.extend_from_slice(&p.vec);
        }
        Ok(PatternMatrix {
            n: pool.len(),
            dim,
            data,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, a: usize) -> &[f32] {
        &self.data[a * self.dim..(a + 1) * self.dim]
    }

    /// `Φ x = Σ_a x_a φ_a`.
    pub fn combine(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (row, &xa) in self.data.chunks_exact(self.dim).zip(x) {
            if xa != 0.0 {
                for (o, &r) in out.iter_mut().zip(row) {
                    *o += xa * r as f64;
                }
            }
        }
    }

    /// `(Φᵀ y)_a = ⟨φ_a, y⟩`.
    pub fn project(&self, y: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.dim)) {
            *o = dot_widened(row, y);
        }
    }

    pub fn degrees(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim];
        for row in self.data.chunks_exact(self.dim) {
            for (s, &r) in sum.iter_mut().zip(row) {
                *s += r as f64;
            }
        }
        let mut d = vec![0.0; self.n];
        self.project(&sum, &mut d);
        d
    }
}

const LANES: usize = 8;

/// Dot product over independent partial sums, so the loop vectorizes
/// instead of waiting on one serial accumulator.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; LANES];
    let (ac, bc) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

pub(crate) fn dot_widened(a: &[f32], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; LANES];
    let (ac, bc) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(&x, y)| x as f64 * y).sum();
    for (x, y) in ac.zip(bc) {
        for l in 0..LANES {
            acc[l] += x[l] as f64 * y[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

pub fn degree_vector(pool: &PatternPool) -> Result<Vec<f64>> {
    Ok(PatternMatrix::from_pool(pool)?.degrees())
}

pub fn laplacian_matvec(pool: &PatternPool, d: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let phi = PatternMatrix::from_pool(pool)?;
    if d.len() != phi.n() {
        return Err(Error::DimensionMismatch {
            expected: phi.n(),
            got: d.len(),
        });
    }
    if v.len() != phi.n() {
        return Err(Error::DimensionMismatch {
            expected: phi.n(),
            got: v.len(),
        });
    }
    let mut y = vec![0.0; phi.dim()];
    phi.combine(v, &mut y);
    let mut out = vec![0.0; phi.n()];
    phi.project(&y, &mut out);
    for ((o, &da), &va) in out.iter_mut().zip(d).zip(v) {
        *o = da * va - *o;
    }
    Ok(out)
}

/// `B = D^{-1/2} L D^{-1/2} = I − D^{-1/2} W D^{-1/2}`, applied implicitly.
pub struct NormalizedLaplacian {
    phi: PatternMatrix,
    inv_sqrt_d: Vec<f64>,
    scratch_n: Vec<f64>,
    scratch_dim: Vec<f64>,
}

impl NormalizedLaplacian {
    pub fn new(phi: PatternMatrix) -> Result<Self> {
        let d = phi.degrees();
        if let Some(a) = d.iter().position(|&da| !da.is_finite() || da <= 0.0) {
            return Err(Error::NoConvergence(format!(
                "pattern {a} has non-positive degree {}",
                d[a]
            )));
        }
        let inv_sqrt_d = d.iter().map(|&da| 1.0 / da.sqrt()).collect();
        let (n, dim) = (phi.n(), phi.dim());
        Ok(NormalizedLaplacian {
            phi,
            inv_sqrt_d,
            scratch_n: vec![0.0; n],
            scratch_dim: vec![0.0; dim],
        })
    }

    pub fn n(&self) -> usize {
        self.phi.n()
    }

    pub fn inv_sqrt_degrees(&self) -> &[f64] {
        &self.inv_sqrt_d
    }

    pub fn apply(&mut self, w: &[f64], out: &mut [f64]) {
        for ((x, &wa), &s) in self.scratch_n.iter_mut().zip(w).zip(&self.inv_sqrt_d) {
            *x = wa * s;
        }
        self.phi.combine(&self.scratch_n, &mut self.scratch_dim);
        self.phi.project(&self.scratch_dim, out);
        for ((o, &wa), &s) in out.iter_mut().zip(w).zip(&self.inv_sqrt_d) {
            *o = wa - s * *o;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::Pattern;

    pub(crate) fn pool_of(vecs: &[Vec<f32>]) -> PatternPool {
        let patterns = vecs
            .iter()
            .enumerate()
            .map(|(i, v)| Pattern {
                vec: v.clone(),
                image_id: format!("img{i:04}"),
                region: (0, 0),
            })
            .collect();
        PatternPool::new("y", vecs[0].len(), patterns, "test").unwrap()
    }

    #[test]
    fn identical_patterns_have_degree_n() {
        let pool = pool_of(&vec![vec![0.6, 0.8]; 7]);
        for d in degree_vector(&pool).unwrap() {
            assert!((d - 7.0).abs() < 1e-6);
        }
    }

    #[test]
    fn orthogonal_basis_has_unit_degrees() {
        let pool = pool_of(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(degree_vector(&pool).unwrap(), vec![1.0, 1.0]);
        let d = [1.0, 1.0];
        // W = I so L = 0
        assert_eq!(laplacian_matvec(&pool, &d, &[1.0, -1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn constants_are_annihilated() {
        let pool = pool_of(&[vec![0.6, 0.8, 0.0], vec![0.0, 0.6, 0.8], vec![1.0, 0.0, 0.0]]);
        let d = degree_vector(&pool).unwrap();
        for x in laplacian_matvec(&pool, &d, &[1.0; 3]).unwrap() {
            assert!(x.abs() < 1e-12);
        }
    }

    #[test]
    fn length_mismatch() {
        let pool = pool_of(&[vec![1.0], vec![1.0]]);
        assert!(matches!(
            laplacian_matvec(&pool, &[1.0, 1.0], &[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }
}
