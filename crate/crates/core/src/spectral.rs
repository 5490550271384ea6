//! Singular values, matrix norms and entropy-based effective rank.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration: columns of a working
//! copy are rotated pairwise until every pair is orthogonal to within the
//! configured tolerance. At attention scale (n ≤ a few dozen) this is accurate
//! to working precision and needs no external LAPACK.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// Singular values below `ZERO_CUTOFF · σ₁` are treated as exact zeros.
pub const ZERO_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvdConfig {
    /// Pair (p, q) counts as orthogonal when |⟨a_p, a_q⟩| ≤ tolerance · ‖a_p‖‖a_q‖.
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for SvdConfig {
    fn default() -> Self {
        SvdConfig {
            tolerance: 1e-12,
            max_sweeps: 100,
        }
    }
}

/// Thin SVD `M = U · diag(σ) · Vᵀ` with `r = min(rows, cols)` triplets,
/// σ sorted descending. Columns of `U` paired with a zero singular value are zero.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
    pub sweeps: usize,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        self.recompose(&self.singular_values)
    }

    /// `U · diag(values) · Vᵀ` with the given replacement spectrum.
    pub fn recompose(&self, values: &[f64]) -> Matrix {
        let (m, r) = self.u.shape();
        let n = self.v.rows();
        let mut out = vec![0.0; m * n];
        for k in 0..r {
            let s = values[k];
            if s == 0.0 {
                continue;
            }
            for i in 0..m {
                let us = self.u.get(i, k) * s;
                if us == 0.0 {
                    continue;
                }
                let row = &mut out[i * n..(i + 1) * n];
                for (j, o) in row.iter_mut().enumerate() {
                    *o += us * self.v.get(j, k);
                }
            }
        }
        Matrix::from_raw(m, n, out)
    }

    pub fn top_left(&self) -> Vec<f64> {
        (0..self.u.rows()).map(|i| self.u.get(i, 0)).collect()
    }

    pub fn top_right(&self) -> Vec<f64> {
        (0..self.v.rows()).map(|i| self.v.get(i, 0)).collect()
    }
}

pub fn svd(m: &Matrix) -> Result<Svd> {
    svd_with(m, &SvdConfig::default())
}

pub fn svd_with(m: &Matrix, cfg: &SvdConfig) -> Result<Svd> {
    if !m.is_finite() {
        return Err(Error::domain("SVD of a non-finite matrix"));
    }
    if m.rows() >= m.cols() {
        jacobi(m, cfg)
    } else {
        let t = jacobi(&m.transpose(), cfg)?;
        Ok(Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
            sweeps: t.sweeps,
        })
    }
}

/// One-sided Jacobi for `rows ≥ cols`.
fn jacobi(m: &Matrix, cfg: &SvdConfig) -> Result<Svd> {
    let (rows, cols) = m.shape();
    // Column-major working copies.
    let mut a: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..rows).map(|i| m.get(i, j)).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..cols).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    // Columns this small are rounding residue of a rank-deficient input; their
    // mutual angles are noise and would never pass the orthogonality test.
    let negligible = {
        let f = (rows.max(cols) as f64) * f64::EPSILON * m.frobenius_norm();
        f * f
    };
    let mut sweeps = 0;
    let mut converged = cols < 2;
    while !converged {
        if sweeps == cfg.max_sweeps {
            return Err(Error::NoConvergence { sweeps });
        }
        sweeps += 1;
        converged = true;
        for p in 0..cols - 1 {
            for q in p + 1..cols {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                if gamma.abs() <= cfg.tolerance * (alpha * beta).sqrt() {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
    }

    let mut triplets: Vec<(f64, usize)> = a
        .iter()
        .enumerate()
        .map(|(j, col)| (dot(col, col).sqrt(), j))
        .collect();
    triplets.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let mut u = Matrix::zeros(rows, cols);
    let mut vm = Matrix::zeros(cols, cols);
    let mut singular_values = Vec::with_capacity(cols);
    for (k, &(sigma, j)) in triplets.iter().enumerate() {
        singular_values.push(sigma);
        if sigma > 0.0 {
            for i in 0..rows {
                u.set(i, k, a[j][i] / sigma);
            }
        }
        for i in 0..cols {
            vm.set(i, k, v[j][i]);
        }
    }
    Ok(Svd {
        u,
        singular_values,
        v: vm,
        sweeps,
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    for (xp, xq) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (a, b) = (*xp, *xq);
        *xp = c * a - s * b;
        *xq = s * a + c * b;
    }
}

/// Full singular spectrum, descending, length `min(rows, cols)`.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    Ok(svd(m)?.singular_values)
}

/// Validates a spectrum and returns its entries with values below the relative
/// cutoff replaced by zero.
fn clean_spectrum(sigma: &[f64]) -> Result<Vec<f64>> {
    if sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::domain("singular values must be finite and nonnegative"));
    }
    let top = sigma.iter().fold(0.0f64, |m, &s| m.max(s));
    if top == 0.0 {
        return Err(Error::domain("spectrum is identically zero"));
    }
    let cutoff = ZERO_CUTOFF * top;
    Ok(sigma
        .iter()
        .map(|&s| if s < cutoff { 0.0 } else { s })
        .collect())
}

/// Shannon entropy (natural log) of `p_i = σ_i / Σσ_j`, with `0·ln 0 = 0`.
pub fn spectral_entropy(sigma: &[f64]) -> Result<f64> {
    let s = clean_spectrum(sigma)?;
    let total: f64 = s.iter().sum();
    let h = -s
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| {
            let p = x / total;
            p * p.ln()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

/// `exp(H(p))`.
pub fn effective_rank(sigma: &[f64]) -> Result<f64> {
    Ok(spectral_entropy(sigma)?.exp())
}

/// Order-2 Rényi rank `(Σσ)² / Σσ²`, equal to `‖M‖_*² / ‖M‖_F²`.
pub fn renyi2_rank(sigma: &[f64]) -> Result<f64> {
    let s = clean_spectrum(sigma)?;
    let l1: f64 = s.iter().sum();
    let l2: f64 = s.iter().map(|x| x * x).sum();
    Ok(l1 * l1 / l2)
}

/// Number of singular values above the relative zero cutoff.
pub fn numerical_rank(sigma: &[f64]) -> usize {
    let top = sigma.iter().fold(0.0f64, |m, &s| m.max(s));
    sigma
        .iter()
        .filter(|&&s| top > 0.0 && s >= ZERO_CUTOFF * top)
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub singular_values: Vec<f64>,
    pub effective_rank: f64,
    pub renyi2_rank: f64,
    pub nuclear_norm: f64,
    pub frobenius_norm: f64,
    pub operator_norm: f64,
    pub entropy: f64,
}

impl SpectralSummary {
    /// Builds the summary from a descending spectrum.
    ///
    /// A zero spectrum has no normalized distribution; its ranks are reported
    /// as 1 and entropy as 0 so that a zero matrix still has a summary.
    pub fn from_singular_values(singular_values: Vec<f64>) -> Result<Self> {
        let nuclear_norm: f64 = singular_values.iter().sum();
        let frobenius_norm = singular_values.iter().map(|s| s * s).sum::<f64>().sqrt();
        let operator_norm = singular_values.first().copied().unwrap_or(0.0);
        let (entropy, effective_rank, renyi2_rank) = if operator_norm == 0.0 {
            (0.0, 1.0, 1.0)
        } else {
            let h = spectral_entropy(&singular_values)?;
            (h, h.exp(), renyi2_rank(&singular_values)?)
        };
        Ok(SpectralSummary {
            singular_values,
            effective_rank,
            renyi2_rank,
            nuclear_norm,
            frobenius_norm,
            operator_norm,
            entropy,
        })
    }

    pub fn rank(&self) -> usize {
        numerical_rank(&self.singular_values)
    }
}

pub fn spectral_summary(m: &Matrix) -> Result<SpectralSummary> {
    SpectralSummary::from_singular_values(singular_values(m)?)
}

pub fn operator_norm(m: &Matrix) -> Result<f64> {
    Ok(singular_values(m)?.first().copied().unwrap_or(0.0))
}

pub fn nuclear_norm(m: &Matrix) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}
