//! Reference computations that do not go through `erank_core::spectral`.
//!
//! Used by the acceptance suite to check the core crate against something
//! it did not compute itself.

use nalgebra::DMatrix;

use erank_core::attention::{backward, forward, ModelParams, ModelSpec};
use erank_core::rng::{self, Rng};
use erank_core::{Matrix, Result};

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Singular values from nalgebra, descending.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let mut s: Vec<f64> = to_na(m).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Rank with the usual `max(rows, cols) · ε · σ₁` cutoff.
pub fn numerical_rank(m: &Matrix) -> usize {
    let s = singular_values(m);
    let top = s.first().copied().unwrap_or(0.0);
    let tol = m.rows().max(m.cols()) as f64 * f64::EPSILON * top;
    s.iter().filter(|&&x| x > tol).count()
}

pub fn nuclear_norm(m: &Matrix) -> f64 {
    singular_values(m).iter().sum()
}

fn unit_vector(n: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng::normal(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn outer(alpha: f64, u: &[f64], v: &[f64]) -> Matrix {
    let mut m = Matrix::zeros(u.len(), v.len());
    for (i, ui) in u.iter().enumerate() {
        for (j, vj) in v.iter().enumerate() {
            m.set(i, j, alpha * ui * vj);
        }
    }
    m
}

fn bilinear(z: &Matrix, u: &[f64], v: &[f64]) -> f64 {
    (0..z.rows())
        .map(|i| u[i] * z.row(i).iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

#[derive(Debug, Clone, Copy)]
pub struct BruteForce {
    /// Largest `⟨A, Z⟩` seen among the random samples.
    pub sampled_max: f64,
    /// After local refinement of the best rank-one sample.
    pub refined_max: f64,
}

/// Maximizes `⟨A, Z⟩` over `‖A‖_* ≤ alpha` by sampling.
///
/// Samples are rank-one points `alpha·u vᵀ` (the extreme points of the ball)
/// and random convex combinations of them shrunk toward zero, so every sample
/// is feasible by construction. The best rank-one sample is then polished by
/// random-perturbation hill climbing on the unit spheres.
pub fn trace_ball_brute_force(z: &Matrix, alpha: f64, samples: usize, seed: u64) -> BruteForce {
    let mut rng = rng::seeded(seed);
    let (r, c) = z.shape();
    let mut best = f64::NEG_INFINITY;
    let mut best_uv = (unit_vector(r, &mut rng), unit_vector(c, &mut rng));
    for k in 0..samples {
        if k % 4 == 3 {
            let parts = 2 + rng::below(&mut rng, 2);
            let mut w: Vec<f64> = (0..parts).map(|_| rng::uniform(&mut rng)).collect();
            let total: f64 = w.iter().sum();
            let shrink = rng::uniform(&mut rng);
            w.iter_mut().for_each(|x| *x *= shrink / total);
            let mut a = Matrix::zeros(r, c);
            for wi in w {
                let u = unit_vector(r, &mut rng);
                let v = unit_vector(c, &mut rng);
                a.axpy(1.0, &outer(alpha * wi, &u, &v)).expect("same shape");
            }
            best = best.max(a.inner(z).expect("same shape"));
        } else {
            let u = unit_vector(r, &mut rng);
            let v = unit_vector(c, &mut rng);
            let val = alpha * bilinear(z, &u, &v);
            if val > best {
                best = val;
                best_uv = (u, v);
            }
        }
    }
    let (mut u, mut v) = best_uv;
    let mut current = alpha * bilinear(z, &u, &v);
    let mut step = 0.1;
    let mut misses = 0;
    while step > 1e-9 {
        let perturb = |x: &[f64], rng: &mut Rng| {
            let y: Vec<f64> = x.iter().map(|a| a + step * rng::normal(rng)).collect();
            let n = y.iter().map(|a| a * a).sum::<f64>().sqrt();
            y.into_iter().map(|a| a / n).collect::<Vec<_>>()
        };
        let nu = perturb(&u, &mut rng);
        let nv = perturb(&v, &mut rng);
        let val = alpha * bilinear(z, &nu, &nv);
        if val > current {
            current = val;
            u = nu;
            v = nv;
            misses = 0;
        } else {
            misses += 1;
            if misses >= 40 {
                step *= 0.5;
                misses = 0;
            }
        }
    }
    BruteForce {
        sampled_max: best,
        refined_max: current.max(best),
    }
}

/// Worst relative error between backprop and central differences of
/// `⟨g, f(x)⟩` over every parameter entry. Errors are measured relative to
/// `max(|analytic|, |numeric|, floor)`.
pub fn gradient_check(
    params: &ModelParams,
    spec: &ModelSpec,
    x: &Matrix,
    g: &[f64],
    h: f64,
    floor: f64,
) -> Result<f64> {
    let objective = |p: &ModelParams| -> Result<f64> {
        let (y, _) = forward(p, spec, x)?;
        Ok(y.iter().zip(g).map(|(a, b)| a * b).sum())
    };
    let analytic = backward(params, spec, x, g)?.params;
    let analytic = analytic.tensors();
    let mut worst: f64 = 0.0;
    for (t, (_, grad)) in analytic.iter().enumerate() {
        for i in 0..grad.rows() {
            for j in 0..grad.cols() {
                let mut plus = params.clone();
                let mut minus = params.clone();
                {
                    let mut tp = plus.tensors_mut();
                    let v = tp[t].1.get(i, j);
                    tp[t].1.set(i, j, v + h);
                }
                {
                    let mut tm = minus.tensors_mut();
                    let v = tm[t].1.get(i, j);
                    tm[t].1.set(i, j, v - h);
                }
                let numeric = (objective(&plus)? - objective(&minus)?) / (2.0 * h);
                let a = grad.get(i, j);
                let scale = a.abs().max(numeric.abs()).max(floor);
                worst = worst.max((a - numeric).abs() / scale);
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_outer_products() {
        let mut rng = rng::seeded(3);
        let u = unit_vector(5, &mut rng);
        let v = unit_vector(4, &mut rng);
        assert_eq!(numerical_rank(&outer(2.0, &u, &v)), 1);
        assert_eq!(numerical_rank(&Matrix::identity(6)), 6);
        assert_eq!(numerical_rank(&Matrix::zeros(3, 3)), 0);
        assert!((nuclear_norm(&outer(2.0, &u, &v)) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn brute_force_on_diagonal() {
        let z = Matrix::diag(&[3.0, -1.0]);
        let b = trace_ball_brute_force(&z, 2.0, 2000, 1);
        assert!(b.sampled_max <= 6.0 + 1e-12);
        assert!((b.refined_max - 6.0).abs() < 1e-8);
    }
}
