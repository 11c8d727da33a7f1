//! Lanczos with full reorthogonalization for the smallest eigenpairs of a
//! symmetric operator given only through matrix-vector products.
//!
//! Breakdowns (an invariant Krylov subspace) are continued with a fresh
//! random vector orthogonal to everything seen so far, so repeated
//! eigenvalues are found with their multiplicity. Pairs whose true
//! residual meets the tolerance are locked; unconverged runs restart from
//! the unconverged Ritz vectors plus a seeded perturbation.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::spectral::graph::dot;

pub const MAX_ITERATIONS: usize = 300;
pub const MAX_RESTARTS: usize = 5;
pub const RESIDUAL_TOL: f64 = 1e-8;

const BREAKDOWN_TOL: f64 = 1e-10;
const CHECK_EVERY: usize = 5;

#[derive(Debug, Clone)]
pub struct LanczosOutput {
    pub values: Vec<f64>,
    /// Unit eigenvectors of the operator.
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub matvecs: usize,
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn orthogonalize(v: &mut [f64], against: &[&[f64]]) {
    // twice is enough
    for _ in 0..2 {
        for q in against {
            let c = dot(v, q);
            if c != 0.0 {
                for (x, &y) in v.iter_mut().zip(q.iter()) {
                    *x -= c * y;
                }
            }
        }
    }
}

fn random_unit_orthogonal(
    rng: &mut ChaCha8Rng,
    n: usize,
    against: &[&[f64]],
) -> Option<Vec<f64>> {
    for _ in 0..4 {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let before = norm(&v);
        orthogonalize(&mut v, against);
        let after = norm(&v);
        if after > 1e-6 * before {
            v.iter_mut().for_each(|x| *x /= after);
            return Some(v);
        }
    }
    None
}

struct Ritz {
    /// Columns are eigenvectors of the tridiagonal matrix.
    vectors: DMatrix<f64>,
    order: Vec<usize>,
}

fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> Ritz {
    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if j == i + 1 {
            beta[i]
        } else if i == j + 1 {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    Ritz {
        vectors: eig.eigenvectors,
        order,
    }
}

/// The `nev` smallest eigenpairs of the symmetric operator `apply` of size `n`.
pub fn smallest<F>(n: usize, nev: usize, seed: u64, mut apply: F) -> Result<LanczosOutput>
where
    F: FnMut(&[f64], &mut [f64]),
{
    assert!(nev >= 1 && nev <= n, "need 1 <= nev <= n");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut locked: Vec<(f64, Vec<f64>, f64)> = Vec::new();
    let mut restart_from: Option<Vec<f64>> = None;
    let mut matvecs = 0usize;
    let mut last_residual = f64::INFINITY;
    let mut w = vec![0.0; n];

    for _attempt in 0..=MAX_RESTARTS {
        let wanted = nev - locked.len();
        let cap = MAX_ITERATIONS.min(n - locked.len());
        let locked_refs: Vec<&[f64]> = locked.iter().map(|(_, v, _)| v.as_slice()).collect();

        let start = match restart_from.take() {
            Some(mut v) => {
                // perturb so a restart never replays an identical run
                for x in v.iter_mut() {
                    *x += 1e-3 * (rng.random::<f64>() - 0.5) / (n as f64).sqrt();
                }
                orthogonalize(&mut v, &locked_refs);
                let nv = norm(&v);
                if nv > 1e-8 {
                    v.iter_mut().for_each(|x| *x /= nv);
                    Some(v)
                } else {
                    None
                }
            }
            None => None,
        };
        let start = match start.or_else(|| random_unit_orthogonal(&mut rng, n, &locked_refs)) {
            Some(v) => v,
            None => break,
        };

        let mut basis: Vec<Vec<f64>> = vec![start];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let ritz = loop {
            let j = basis.len() - 1;
            apply(&basis[j], &mut w);
            matvecs += 1;
            let a = dot(&basis[j], &w);
            alpha.push(a);
            for (x, &q) in w.iter_mut().zip(&basis[j]) {
                *x -= a * q;
            }
            if j > 0 && beta[j - 1] != 0.0 {
                let b = beta[j - 1];
                for (x, &q) in w.iter_mut().zip(&basis[j - 1]) {
                    *x -= b * q;
                }
            }
            {
                let mut against: Vec<&[f64]> = basis.iter().map(Vec::as_slice).collect();
                against.extend(locked_refs.iter().copied());
                orthogonalize(&mut w, &against);
            }
            let last_beta = norm(&w);

            let full = basis.len() >= cap;
            let check = full || (basis.len() >= wanted && basis.len().is_multiple_of(CHECK_EVERY));
            if check {
                let r = tridiagonal_eigen(&alpha, &beta);
                let m = alpha.len();
                let converged = r.order.iter().take(wanted).all(|&i| {
                    (last_beta * r.vectors[(m - 1, i)]).abs() <= 0.1 * RESIDUAL_TOL
                });
                if full || converged {
                    break r;
                }
            }

            if last_beta < BREAKDOWN_TOL {
                let mut against: Vec<&[f64]> = basis.iter().map(Vec::as_slice).collect();
                against.extend(locked_refs.iter().copied());
                match random_unit_orthogonal(&mut rng, n, &against) {
                    Some(v) => {
                        beta.push(0.0);
                        basis.push(v);
                    }
                    None => break tridiagonal_eigen(&alpha, &beta),
                }
            } else {
                beta.push(last_beta);
                basis.push(w.iter().map(|x| x / last_beta).collect());
            }
        };

        let m = alpha.len();
        let mut unconverged: Vec<Vec<f64>> = Vec::new();
        let mut newly_locked = Vec::new();
        for &i in ritz.order.iter().take(wanted.min(m)) {
            let mut y = vec![0.0; n];
            for (jj, q) in basis.iter().take(m).enumerate() {
                let s = ritz.vectors[(jj, i)];
                for (x, &qq) in y.iter_mut().zip(q) {
                    *x += s * qq;
                }
            }
            orthogonalize(&mut y, &locked_refs);
            let ny = norm(&y);
            if ny < 1e-8 {
                continue;
            }
            y.iter_mut().for_each(|x| *x /= ny);
            apply(&y, &mut w);
            matvecs += 1;
            let theta = dot(&y, &w);
            let res = w
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - theta * b).powi(2))
                .sum::<f64>()
                .sqrt();
            if res <= RESIDUAL_TOL {
                newly_locked.push((theta, y, res));
            } else {
                last_residual = last_residual.min(res);
                unconverged.push(y);
            }
        }
        drop(locked_refs);
        locked.extend(newly_locked);

        if locked.len() >= nev {
            break;
        }
        if !unconverged.is_empty() {
            let mut sum = vec![0.0; n];
            for u in &unconverged {
                for (s, x) in sum.iter_mut().zip(u) {
                    *s += x;
                }
            }
            restart_from = Some(sum);
        }
    }

    if locked.len() < nev {
        return Err(Error::NoConvergence(format!(
            "{} of {nev} eigenpairs met residual {RESIDUAL_TOL:e} after {MAX_RESTARTS} restarts (best unconverged residual {last_residual:e})",
            locked.len()
        )));
    }
    locked.sort_by(|a, b| a.0.total_cmp(&b.0));
    locked.truncate(nev);
    let mut out = LanczosOutput {
        values: Vec::with_capacity(nev),
        vectors: Vec::with_capacity(nev),
        residuals: Vec::with_capacity(nev),
        matvecs,
    };
    for (v, y, r) in locked {
        out.values.push(v);
        out.vectors.push(y);
        out.residuals.push(r);
    }
    Ok(out)
}
