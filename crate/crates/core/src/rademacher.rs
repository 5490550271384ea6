//! Empirical Rademacher complexity of trace-norm-limited attention classes.
//!
//! For sensitivities `Z₁…Z_m` (n × n) and an effective-rank cap `R`, row-stochastic
//! attention with `erank ≤ R` has `‖A‖_* ≤ α = √(R n)`. Three quantities are
//! reported:
//!
//! * **decoupled**: each example picks its own `A` from the trace ball, which
//!   collapses the sign expectation to `(α/m) Σ ‖Zᵢ‖_op` exactly;
//! * **coupled**: one shared `A` for all examples,
//!   `E_ε α ‖(1/m) Σ εᵢ Zᵢ‖_op`, estimated by Monte Carlo;
//! * **feasible lower**: the same shared-`A` objective evaluated at points that
//!   are actually row-stochastic with `erank ≤ R`.
//!
//! Per sign draw, feasible ≤ coupled ≤ decoupled holds deterministically, so
//! the three values bracket the looseness of the trace-ball relaxation.

use serde::{Deserialize, Serialize};

use crate::attention::{backward, ModelParams, ModelSpec};
use crate::error::{Error, Result};
use crate::experiments::powerlaw::fit_power_law;
use crate::matrix::Matrix;
use crate::par::{self, pairwise_sum, Execution};
use crate::rng;
use crate::spectral;

/// Sensitivity matrices `Z(xᵢ)`, all `n × n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySet {
    matrices: Vec<Matrix>,
}

impl SensitivitySet {
    pub fn new(matrices: Vec<Matrix>) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::InsufficientData("no sensitivity matrices".into()))?;
        if !first.is_square() {
            return Err(Error::shape(format!("sensitivity {:?} is not square", first.shape())));
        }
        if let Some(bad) = matrices.iter().find(|z| z.shape() != first.shape()) {
            return Err(Error::shape(format!(
                "mixed sensitivity shapes {:?} and {:?}",
                first.shape(),
                bad.shape()
            )));
        }
        Ok(SensitivitySet { matrices })
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.matrices
    }

    pub fn n(&self) -> usize {
        self.matrices[0].rows()
    }

    pub fn m(&self) -> usize {
        self.matrices.len()
    }

    pub fn scaled(&self, c: f64) -> SensitivitySet {
        SensitivitySet {
            matrices: self.matrices.iter().map(|z| z.scale(c)).collect(),
        }
    }
}

/// `α = √(R n)`.
pub fn trace_budget(rank_cap: f64, n: usize) -> f64 {
    (rank_cap * n as f64).sqrt()
}

/// Maximizer of `⟨A, Z⟩` over the nuclear-norm ball of radius α.
#[derive(Debug, Clone, PartialEq)]
pub struct DualCertificate {
    /// `α ‖Z‖_op`.
    pub value: f64,
    /// `α u₁ v₁ᵀ`.
    pub argmax: Matrix,
}

pub fn trace_ball_sup(z: &Matrix, alpha: f64) -> Result<DualCertificate> {
    if !(alpha > 0.0) {
        return Err(Error::domain("trace-norm radius must be positive"));
    }
    let d = spectral::svd(z)?;
    let top = d.singular_values.first().copied().unwrap_or(0.0);
    let (u, v) = if top > 0.0 {
        (d.top_left(), d.top_right())
    } else {
        let mut e1 = vec![0.0; z.rows()];
        e1[0] = 1.0;
        let mut f1 = vec![0.0; z.cols()];
        f1[0] = 1.0;
        (e1, f1)
    };
    let mut argmax = Matrix::zeros(z.rows(), z.cols());
    for (i, ui) in u.iter().enumerate() {
        for (j, vj) in v.iter().enumerate() {
            argmax.set(i, j, alpha * ui * vj);
        }
    }
    Ok(DualCertificate {
        value: alpha * top,
        argmax,
    })
}

/// `(√(R n)/m) Σᵢ ‖Zᵢ‖_op`.
pub fn decoupled_complexity(set: &SensitivitySet, rank_cap: f64) -> Result<f64> {
    if !(rank_cap >= 1.0) {
        return Err(Error::domain(format!("R = {rank_cap} must be at least 1")));
    }
    let norms = set
        .matrices
        .iter()
        .map(spectral::operator_norm)
        .collect::<Result<Vec<_>>>()?;
    Ok(trace_budget(rank_cap, set.n()) * (pairwise_sum(&norms) / set.m() as f64))
}

/// Euclidean projection of `v` onto the probability simplex (sort and threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

pub fn project_rows_to_simplex(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for i in 0..a.rows() {
        let p = project_simplex(a.row(i));
        out.row_mut(i).copy_from_slice(&p);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleProjection {
    pub matrix: Matrix,
    pub converged: bool,
    pub iterations: usize,
    pub effective_rank: f64,
}

/// Tolerance on `erank ≤ R` and on row sums for a projection to count as converged.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-6;
const MAX_POWER: f64 = 64.0;
const BISECTION_STEPS: usize = 60;

fn erank_of_power(sigma: &[f64], gamma: f64) -> f64 {
    let top = sigma[0];
    let s: Vec<f64> = sigma.iter().map(|&x| top * (x / top).powf(gamma)).collect();
    spectral::effective_rank(&s).unwrap_or(1.0)
}

/// Pulls `erank(a)` down to at most `target`: first by sharpening the spectrum
/// (`σᵢ ← σ₁ (σᵢ/σ₁)^γ`), and if a tie at the top makes that impossible, by
/// blending toward the uniform matrix.
fn shrink_spectrum(a: &Matrix, target: f64) -> Result<Matrix> {
    let d = spectral::svd(a)?;
    let sigma = &d.singular_values;
    if sigma[0] == 0.0 {
        return Ok(Matrix::uniform_stochastic(a.rows()));
    }
    if erank_of_power(sigma, MAX_POWER) <= target {
        let (mut lo, mut hi) = (1.0, MAX_POWER);
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if erank_of_power(sigma, mid) <= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let top = sigma[0];
        let s: Vec<f64> = sigma.iter().map(|&x| top * (x / top).powf(hi)).collect();
        return Ok(d.recompose(&s));
    }
    let base = project_rows_to_simplex(a);
    let uniform = Matrix::uniform_stochastic(a.rows());
    let blend = |t: f64| -> Matrix {
        let mut m = base.scale(1.0 - t);
        m.axpy(t, &uniform).expect("same shape");
        m
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let e = spectral::spectral_summary(&blend(mid))?.effective_rank;
        if e <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(blend(hi))
}

/// Alternates row-wise simplex projection with spectral sharpening until the
/// matrix is row-stochastic with `erank ≤ rank_cap` (within
/// [`FEASIBILITY_TOLERANCE`]), or `iters` rounds have run.
pub fn project_feasible(a: &Matrix, rank_cap: f64, iters: usize) -> Result<FeasibleProjection> {
    if !a.is_square() {
        return Err(Error::shape("feasible projection needs a square matrix"));
    }
    if !(rank_cap >= 1.0) || iters == 0 {
        return Err(Error::domain("need R >= 1 and at least one iteration"));
    }
    // Aim slightly inside the cap so the next row projection keeps us feasible.
    let target = (rank_cap * (1.0 - 1e-4)).max(1.0);
    let mut cur = a.clone();
    let mut erank = f64::INFINITY;
    for it in 1..=iters {
        cur = project_rows_to_simplex(&cur);
        erank = spectral::spectral_summary(&cur)?.effective_rank;
        if erank <= rank_cap + FEASIBILITY_TOLERANCE {
            return Ok(FeasibleProjection {
                matrix: cur,
                converged: true,
                iterations: it,
                effective_rank: erank,
            });
        }
        if it < iters {
            cur = shrink_spectrum(&cur, target)?;
        }
    }
    Ok(FeasibleProjection {
        matrix: cur,
        converged: false,
        iterations: iters,
        effective_rank: erank,
    })
}

/// Whether `a` lies in the attention class: row-stochastic (to rounding) with
/// `erank ≤ rank_cap` exactly.
fn is_member(a: &Matrix, rank_cap: f64) -> Result<bool> {
    Ok(a.is_row_stochastic(1e-12) && spectral::spectral_summary(a)?.effective_rank <= rank_cap)
}

/// Largest `⟨A, target⟩` found over a few projected candidates, all verified
/// members of the class. The uniform matrix is always a member.
fn best_feasible_value(target: &Matrix, rank_cap: f64, iters: usize, alpha: f64) -> Result<f64> {
    let n = target.rows();
    let uniform = Matrix::uniform_stochastic(n);
    let mut best = uniform.inner(target)?;
    let mut select = Matrix::zeros(n, n);
    for i in 0..n {
        let row = target.row(i);
        let j = (0..n).fold(0, |b, j| if row[j] > row[b] { j } else { b });
        select.set(i, j, 1.0);
    }
    let dual = trace_ball_sup(target, alpha)?.argmax;
    for cand in [select, dual] {
        let p = project_feasible(&cand, rank_cap, iters)?;
        if p.converged && is_member(&p.matrix, rank_cap)? {
            best = best.max(p.matrix.inner(target)?);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub rank_cap: f64,
    pub n: usize,
    pub m: usize,
    /// Trace-norm budget `√(R n)`.
    pub alpha: f64,
    pub decoupled_value: f64,
    pub coupled_mean: f64,
    pub coupled_stderr: f64,
    pub feasible_lower: f64,
    pub feasible_stderr: f64,
    pub trials: usize,
    pub seed: u64,
}

impl RademacherEstimate {
    pub const CSV_HEADER: &'static str = "R,n,m,alpha,decoupled,coupled_mean,coupled_stderr,feasible_lower,feasible_stderr,trials,seed";

    pub fn csv_row(&self) -> String {
        use crate::matrix::format_f64 as f;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            f(self.rank_cap),
            self.n,
            self.m,
            f(self.alpha),
            f(self.decoupled_value),
            f(self.coupled_mean),
            f(self.coupled_stderr),
            f(self.feasible_lower),
            f(self.feasible_stderr),
            self.trials,
            self.seed
        )
    }

    /// `feasible_lower ≤ coupled_mean (± 3 stderr) ≤ decoupled_value`.
    pub fn sandwich_holds(&self) -> bool {
        let slack = 3.0 * (self.coupled_stderr + self.feasible_stderr);
        self.feasible_lower <= self.decoupled_value + 1e-9
            && self.feasible_lower <= self.coupled_mean + slack + 1e-12
            && self.coupled_mean <= self.decoupled_value + 3.0 * self.coupled_stderr + 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub trials: usize,
    pub seed: u64,
    /// Alternation rounds for the feasible-point heuristic.
    pub project_iters: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            trials: 1000,
            seed: 0,
            project_iters: 30,
        }
    }
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = pairwise_sum(values) / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Monte-Carlo estimate of the shared-`A` complexity plus the closed-form
/// decoupled value. Trial `t` draws its signs from `rng::split(seed, t)`.
pub fn coupled_complexity_mc(
    set: &SensitivitySet,
    rank_cap: f64,
    cfg: &McConfig,
    exec: Execution,
) -> Result<RademacherEstimate> {
    if cfg.trials == 0 {
        return Err(Error::domain("at least one Monte-Carlo trial is required"));
    }
    let decoupled_value = decoupled_complexity(set, rank_cap)?;
    let n = set.n();
    let m = set.m();
    let alpha = trace_budget(rank_cap, n);
    let inv_m = 1.0 / m as f64;

    let per_trial = par::map_range(exec, cfg.trials, |t| -> Result<(f64, f64)> {
        let mut r = rng::seeded(rng::split(cfg.seed, t as u64));
        let mut sum = Matrix::zeros(n, n);
        for z in &set.matrices {
            sum.axpy(rng::sign(&mut r) * inv_m, z)?;
        }
        let coupled = alpha * spectral::operator_norm(&sum)?;
        let feasible = best_feasible_value(&sum, rank_cap, cfg.project_iters, alpha)?;
        Ok((coupled, feasible))
    });
    let mut coupled = Vec::with_capacity(cfg.trials);
    let mut feasible = Vec::with_capacity(cfg.trials);
    for r in per_trial {
        let (c, f) = r?;
        coupled.push(c);
        feasible.push(f);
    }
    let (coupled_mean, coupled_stderr) = mean_and_stderr(&coupled);
    let (feasible_lower, feasible_stderr) = mean_and_stderr(&feasible);
    Ok(RademacherEstimate {
        rank_cap,
        n,
        m,
        alpha,
        decoupled_value,
        coupled_mean,
        coupled_stderr,
        feasible_lower,
        feasible_stderr,
        trials: cfg.trials,
        seed: cfg.seed,
    })
}

/// Sensitivities `Z = ∂loss/∂A` of one attention block over a set of inputs,
/// given the loss gradient with respect to the model output for each input.
pub fn gather_sensitivities(
    params: &ModelParams,
    spec: &ModelSpec,
    inputs: &[Matrix],
    loss_grads: &[Vec<f64>],
    layer: usize,
    head: usize,
    exec: Execution,
) -> Result<SensitivitySet> {
    if inputs.len() != loss_grads.len() {
        return Err(Error::shape(format!(
            "{} inputs but {} loss gradients",
            inputs.len(),
            loss_grads.len()
        )));
    }
    if layer >= spec.num_layers || head >= spec.num_heads {
        return Err(Error::domain(format!(
            "no attention block at layer {layer}, head {head}"
        )));
    }
    let zs = par::map_range(exec, inputs.len(), |i| {
        let g = backward(params, spec, &inputs[i], &loss_grads[i])?;
        Ok(g.sensitivity[layer][head].clone())
    })
    .into_iter()
    .collect::<Result<Vec<Matrix>>>()?;
    SensitivitySet::new(zs)
}

/// Acceptance threshold on the fitted exponent of mean ‖Z‖_op versus n.
pub const Z_EXPONENT_THRESHOLD: f64 = -0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScalingPoint {
    pub n: usize,
    pub count: usize,
    pub mean_op_norm: f64,
    /// `B / √n`.
    pub bound: f64,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScalingReport {
    pub points: Vec<ZScalingPoint>,
    /// Fitted β in `mean‖Z‖_op ∝ n^β`; `None` when every mean is zero.
    pub exponent: Option<f64>,
    pub log_rmse: Option<f64>,
    /// `β ≤ -0.3`, or trivially true for identically zero sensitivities.
    pub consistent: bool,
    pub all_within_bound: bool,
}

/// Fits `mean ‖Z‖_op ∝ n^β` across sensitivity sets gathered at different `n`.
pub fn z_scaling_check(sets: &[SensitivitySet], sens_scale: f64) -> Result<ZScalingReport> {
    let mut ns: Vec<usize> = sets.iter().map(SensitivitySet::n).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 distinct n, got {}",
            ns.len()
        )));
    }
    let mut points = Vec::with_capacity(ns.len());
    for &n in &ns {
        let mut norms = Vec::new();
        for set in sets.iter().filter(|s| s.n() == n) {
            for z in set.matrices() {
                norms.push(spectral::operator_norm(z)?);
            }
        }
        let mean = pairwise_sum(&norms) / norms.len() as f64;
        let bound = sens_scale / (n as f64).sqrt();
        points.push(ZScalingPoint {
            n,
            count: norms.len(),
            mean_op_norm: mean,
            bound,
            within_bound: mean <= bound,
        });
    }
    let all_within_bound = points.iter().all(|p| p.within_bound);
    if points.iter().all(|p| p.mean_op_norm == 0.0) {
        return Ok(ZScalingReport {
            points,
            exponent: None,
            log_rmse: None,
            consistent: true,
            all_within_bound,
        });
    }
    let fit = fit_power_law(
        &points
            .iter()
            .map(|p| (p.n as f64, p.mean_op_norm))
            .collect::<Vec<_>>(),
    )?;
    // The fit reports decay as a positive exponent.
    let beta = -fit.exponent;
    Ok(ZScalingReport {
        points,
        exponent: Some(beta),
        log_rmse: Some(fit.residual),
        consistent: beta <= Z_EXPONENT_THRESHOLD,
        all_within_bound,
    })
}
