//! Spectral certification of `A/d`.
//!
//! For a connected d-regular graph the top eigenvector of the normalized
//! adjacency operator is the uniform vector with eigenvalue 1. The quantity of
//! interest is the largest absolute eigenvalue on its orthogonal complement.
//! [`estimate_lambda`] runs Lanczos with full reorthogonalization on that
//! complement (the uniform direction is deflated at every step) and stops once
//! both extreme Ritz values have residual below the tolerance.
//! [`dense_lambda`] is the independent full-spectrum route used as an oracle.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;

use crate::netgen::{GraphSnapshot, NetError};
use crate::rng::SimRng;

/// Lanczos iteration budget (Krylov dimension is additionally capped at `n - 1`).
pub const DEFAULT_MAX_ITER: usize = 400;

fn apply_normalized(g: &GraphSnapshot, x: &[f64], y: &mut [f64]) {
    let d = g.degree();
    let inv_d = 1.0 / d as f64;
    let adj = g.adjacency();
    for (u, yu) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for &v in &adj[u * d..(u + 1) * d] {
            acc += x[v as usize];
        }
        *yu = acc * inv_d;
    }
}

fn deflate_uniform(x: &mut [f64]) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `|λ₂|` of `A/d` to within `tol`.
pub fn estimate_lambda(g: &GraphSnapshot, tol: f64) -> Result<f64, NetError> {
    estimate_lambda_with(g, tol, DEFAULT_MAX_ITER)
}

pub fn estimate_lambda_with(g: &GraphSnapshot, tol: f64, max_iter: usize) -> Result<f64, NetError> {
    let n = g.n();
    if n < 2 {
        return Err(NetError::InvalidParams("spectral estimate needs n >= 2".into()));
    }
    let dim = n - 1;
    let budget = max_iter.min(dim).max(1);

    let mut rng = SimRng::seed_from_u64(0x1A9C_2057_u64 ^ n as u64);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    deflate_uniform(&mut v);
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];

    loop {
        let j = basis.len() - 1;
        apply_normalized(g, &basis[j], &mut w);
        deflate_uniform(&mut w);
        let alpha = dot(&w, &basis[j]);
        alphas.push(alpha);
        // Two passes of Gram-Schmidt against the whole basis.
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&w, q);
                w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
            }
            deflate_uniform(&mut w);
        }
        let beta = norm(&w);
        let k = alphas.len();
        let exhausted = beta < 1e-12 || k >= dim;
        let at_budget = k >= budget;

        if exhausted || at_budget || k % 10 == 0 {
            let (theta_max, res_max, theta_min, res_min) = extreme_ritz(&alphas, &betas, beta);
            let converged = exhausted || (res_max <= tol && res_min <= tol);
            if converged {
                return Ok(theta_max.abs().max(theta_min.abs()));
            }
            if at_budget {
                return Err(NetError::NotConverged {
                    iterations: k,
                    residual: res_max.max(res_min),
                });
            }
        }
        betas.push(beta);
        let next: Vec<f64> = w.iter().map(|x| x / beta).collect();
        basis.push(next);
    }
}

/// Largest and smallest Ritz values of the tridiagonal matrix with their
/// residual bounds `|β_k s_{k,i}|`.
fn extreme_ritz(alphas: &[f64], betas: &[f64], beta_last: f64) -> (f64, f64, f64, f64) {
    let k = alphas.len();
    let mut t = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alphas[i];
        if i + 1 < k {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut imax = 0;
    let mut imin = 0;
    for i in 0..k {
        if eig.eigenvalues[i] > eig.eigenvalues[imax] {
            imax = i;
        }
        if eig.eigenvalues[i] < eig.eigenvalues[imin] {
            imin = i;
        }
    }
    let res = |i: usize| (beta_last * eig.eigenvectors[(k - 1, i)]).abs();
    (eig.eigenvalues[imax], res(imax), eig.eigenvalues[imin], res(imin))
}

/// Full spectrum of `A/d` via dense symmetric eigendecomposition; returns the
/// largest absolute eigenvalue after removing the top one.
pub fn dense_lambda(g: &GraphSnapshot) -> f64 {
    let mut vals = dense_spectrum(g);
    vals.remove(0);
    vals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Eigenvalues of `A/d`, descending.
pub fn dense_spectrum(g: &GraphSnapshot) -> Vec<f64> {
    let n = g.n();
    let d = g.degree() as f64;
    let mut a = DMatrix::<f64>::zeros(n, n);
    for u in 0..n {
        for &v in g.slot_neighbors(u) {
            a[(u, v as usize)] += 1.0 / d;
        }
    }
    let mut vals: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
    vals.sort_by(|x, y| y.partial_cmp(x).unwrap());
    vals
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(n: u32) -> GraphSnapshot {
        let lists: Vec<Vec<u32>> = (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect();
        GraphSnapshot::from_neighbor_lists(0, &lists).unwrap()
    }

    fn cycle(n: u32) -> GraphSnapshot {
        let lists: Vec<Vec<u32>> = (0..n).map(|i| vec![(i + n - 1) % n, (i + 1) % n]).collect();
        GraphSnapshot::from_neighbor_lists(0, &lists).unwrap()
    }

    #[test]
    fn k4_has_lambda_one_third() {
        let lam = estimate_lambda(&complete(4), 1e-9).unwrap();
        assert!((lam - 1.0 / 3.0).abs() < 1e-9, "{lam}");
    }

    #[test]
    fn five_cycle_matches_cosine() {
        let lam = estimate_lambda(&cycle(5), 1e-9).unwrap();
        let expect = (std::f64::consts::PI / 5.0).cos();
        assert!((lam - expect).abs() < 1e-9, "{lam} vs {expect}");
    }

    #[test]
    fn even_cycle_reports_minus_one() {
        let lam = estimate_lambda(&cycle(8), 1e-9).unwrap();
        assert!((lam - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dense_route_agrees_on_small_cycles() {
        for n in [5u32, 7, 9, 12] {
            let g = cycle(n);
            let a = estimate_lambda(&g, 1e-10).unwrap();
            let b = dense_lambda(&g);
            assert!((a - b).abs() < 1e-9, "n={n}: {a} vs {b}");
        }
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let g = cycle(200);
        match estimate_lambda_with(&g, 1e-14, 10) {
            Err(NetError::NotConverged { iterations, .. }) => assert_eq!(iterations, 10),
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }
}
