use serde::{Deserialize, Serialize};

use super::powerlaw::{fit_power_law, PowerLawFit};
use super::task::{make_task, TaskConfig, TaskData};
use super::train::{measure_gap, train, TrainConfig};
use crate::attention::{capacity, LipschitzBudget, ModelSpec};
use crate::bounds::{generalization_bound, BoundInputs};
use crate::error::{Error, Result};
use crate::matrix::format_f64;
use crate::par::{self, pairwise_sum, Execution};
use crate::rng;

/// Bound settings for a sweep; `R`, `m` and `L_S` come from each run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundSettings {
    pub delta: f64,
    #[serde(rename = "L_tot")]
    pub l_tot: f64,
    #[serde(rename = "B")]
    pub sens_op: f64,
    #[serde(rename = "C")]
    pub c_rc: f64,
    #[serde(rename = "c")]
    pub c_dev: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    /// Replace `L_tot` with the trained network's Lipschitz product.
    pub lipschitz_from_model: bool,
    /// Measure `R` on the test set instead of the training set.
    pub capacity_on_test: bool,
}

impl Default for BoundSettings {
    fn default() -> Self {
        let b = BoundInputs::default();
        BoundSettings {
            delta: b.delta,
            l_tot: b.l_tot,
            sens_op: b.sens_op,
            c_rc: b.c_rc,
            c_dev: b.c_dev,
            c2: b.c2,
            lipschitz_from_model: false,
            capacity_on_test: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub task: TaskConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub bound: BoundSettings,
    /// Independent replicates; replicate `s` derives its task and training
    /// seeds from the base seeds with `rng::split(base, s)`.
    pub replicates: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            task: TaskConfig::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            bound: BoundSettings::default(),
            replicates: 1,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.replicates == 0 {
            return Err(Error::domain("replicates must be positive"));
        }
        let (t, s) = (&self.task, &self.model);
        if (t.seq_len, t.d_model, t.label_dim) != (s.seq_len, s.d_model, s.output_dim) {
            return Err(Error::shape(format!(
                "task (seq_len {}, d_model {}, label_dim {}) does not match model (seq_len {}, d_model {}, output_dim {})",
                t.seq_len, t.d_model, t.label_dim, s.seq_len, s.d_model, s.output_dim
            )));
        }
        self.bound_inputs(1.0, 2, 0.0, 1.0).validate()
    }

    pub fn seeds(&self) -> Vec<SeedRecord> {
        (0..self.replicates as u64)
            .map(|s| SeedRecord {
                replicate: s,
                task_seed: rng::split(self.task.seed, s),
                train_seed: rng::split(self.train.seed, s),
            })
            .collect()
    }

    /// Number of (m, replicate) cells.
    pub fn cells(&self) -> usize {
        self.replicates * self.task.train_sizes.len()
    }

    fn bound_inputs(&self, rank_cap: f64, m: usize, empirical_loss: f64, l_tot: f64) -> BoundInputs {
        BoundInputs {
            rank_cap: rank_cap.max(1.0),
            m,
            delta: self.bound.delta,
            l_tot,
            sens_op: self.bound.sens_op,
            c_rc: self.bound.c_rc,
            c_dev: self.bound.c_dev,
            c2: self.bound.c2,
            empirical_loss,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub replicate: u64,
    pub task_seed: u64,
    pub train_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: usize,
    /// Replicate index.
    pub seed: u64,
    #[serde(rename = "L_S")]
    pub train_loss: f64,
    #[serde(rename = "L_D_hat")]
    pub test_loss: f64,
    pub gap: f64,
    #[serde(rename = "R_measured")]
    pub capacity: f64,
    pub bound: f64,
    /// `bound − L_D_hat`.
    pub slack: f64,
    pub rc_term: f64,
    pub deviation_term: f64,
    #[serde(rename = "L_tot")]
    pub l_tot: f64,
    pub initial_loss: f64,
    /// Standard error bound on `L_D_hat` from the finite test set.
    pub estimator_error: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "m,seed,L_S,L_D_hat,gap,R_measured,bound,slack";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.m,
            self.seed,
            format_f64(self.train_loss),
            format_f64(self.test_loss),
            format_f64(self.gap),
            format_f64(self.capacity),
            format_f64(self.bound),
            format_f64(self.slack)
        )
    }

    /// Whether the bound dominates the observed gap, `bound − L_S ≥ gap`.
    pub fn bound_covers_gap(&self) -> bool {
        self.bound - self.train_loss >= self.gap
    }
}

/// Means over replicates at one `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub m: usize,
    pub cells: usize,
    #[serde(rename = "L_S")]
    pub train_loss: f64,
    #[serde(rename = "L_D_hat")]
    pub test_loss: f64,
    pub gap: f64,
    /// Standard error of the mean gap across replicates.
    pub gap_stderr: f64,
    #[serde(rename = "R_measured")]
    pub capacity: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFits {
    pub gap: Option<PowerLawFit>,
    pub capacity: Option<PowerLawFit>,
    pub bound: Option<PowerLawFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SizeSummary>,
    pub seeds: Vec<SeedRecord>,
    /// Fraction of cells where the bound covers the gap.
    pub bound_coverage: f64,
    pub estimator_error: f64,
    pub fits: SweepFits,
}

fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Fit over positive points only; `None` if any mean is nonpositive or fewer than 3 sizes exist.
fn fit_positive(points: &[(f64, f64)]) -> Option<PowerLawFit> {
    if points.len() < 3 || points.iter().any(|p| !(p.1 > 0.0)) {
        return None;
    }
    fit_power_law(points).ok()
}

impl SweepResult {
    pub fn from_rows(cfg: &SweepConfig, mut rows: Vec<SweepRow>) -> Self {
        rows.sort_by_key(|r| (r.m, r.seed));
        let mut summary = Vec::new();
        for &m in &cfg.task.train_sizes {
            let at: Vec<&SweepRow> = rows.iter().filter(|r| r.m == m).collect();
            if at.is_empty() {
                continue;
            }
            let col = |f: fn(&SweepRow) -> f64| at.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let gaps = col(|r| r.gap);
            let g = mean(&gaps);
            let gap_stderr = if gaps.len() > 1 {
                let sq: Vec<f64> = gaps.iter().map(|x| (x - g) * (x - g)).collect();
                (pairwise_sum(&sq) / (gaps.len() as f64 - 1.0) / gaps.len() as f64).sqrt()
            } else {
                0.0
            };
            summary.push(SizeSummary {
                m,
                cells: at.len(),
                train_loss: mean(&col(|r| r.train_loss)),
                test_loss: mean(&col(|r| r.test_loss)),
                gap: g,
                gap_stderr,
                capacity: mean(&col(|r| r.capacity)),
                bound: mean(&col(|r| r.bound)),
            });
        }
        let pts = |f: fn(&SizeSummary) -> f64| summary.iter().map(|s| (s.m as f64, f(s))).collect::<Vec<_>>();
        let fits = SweepFits {
            gap: fit_positive(&pts(|s| s.gap)),
            capacity: fit_positive(&pts(|s| s.capacity)),
            bound: fit_positive(&pts(|s| s.bound)),
        };
        let covered = rows.iter().filter(|r| r.bound_covers_gap()).count();
        SweepResult {
            bound_coverage: if rows.is_empty() {
                0.0
            } else {
                covered as f64 / rows.len() as f64
            },
            rows,
            summary,
            seeds: cfg.seeds(),
            estimator_error: cfg.task.estimator_error(),
            fits,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(SweepRow::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

/// A cell that failed, with the rows completed before it.
#[derive(Debug)]
pub struct SweepFailure {
    pub m: usize,
    pub seed: u64,
    pub error: Error,
}

/// Every completed row plus the first failure per replicate, if any.
#[derive(Debug)]
pub struct SweepRun {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

/// Trains and measures one (m, replicate) cell.
pub fn run_cell(cfg: &SweepConfig, data: &TaskData, seed: &SeedRecord, m: usize) -> Result<SweepRow> {
    let train_set = data.train_set(m)?;
    let train_cfg = TrainConfig {
        seed: seed.train_seed,
        ..cfg.train.clone()
    };
    let outcome = train(&cfg.model, &train_set, &train_cfg)?;
    let gap = measure_gap(&outcome.params, &cfg.model, &train_set, &data.test, cfg.train.loss)?;
    let cap_inputs = if cfg.bound.capacity_on_test {
        &data.test.inputs
    } else {
        &train_set.inputs
    };
    let cap = capacity(&outcome.params, &cfg.model, cap_inputs, "", Execution::Sequential)?;
    let l_tot = if cfg.bound.lipschitz_from_model {
        LipschitzBudget::from_params(&outcome.params, &cfg.model)?.l_tot
    } else {
        cfg.bound.l_tot
    };
    let report = generalization_bound(&cfg.bound_inputs(cap.capacity, m, gap.train_loss, l_tot))?;
    Ok(SweepRow {
        m,
        seed: seed.replicate,
        train_loss: gap.train_loss,
        test_loss: gap.test_loss,
        gap: gap.gap,
        capacity: cap.capacity,
        bound: report.total_bound,
        slack: report.total_bound - gap.test_loss,
        rc_term: report.rc_term,
        deviation_term: report.deviation_term,
        l_tot,
        initial_loss: outcome.initial_loss,
        estimator_error: cfg.task.estimator_error(),
    })
}

/// Runs every cell. Replicates run concurrently under `Execution::Parallel`;
/// each replicate walks its sizes in order and stops at its first failure.
pub fn run_sweep(cfg: &SweepConfig, exec: Execution) -> Result<SweepRun> {
    cfg.validate()?;
    let seeds = cfg.seeds();
    let per_seed = par::map(exec, &seeds, |seed| {
        let task_cfg = TaskConfig {
            seed: seed.task_seed,
            ..cfg.task.clone()
        };
        let data = match make_task(&task_cfg) {
            Ok(d) => d,
            Err(error) => {
                let m = cfg.task.train_sizes[0];
                return (Vec::new(), Some(SweepFailure { m, seed: seed.replicate, error }));
            }
        };
        let mut rows = Vec::new();
        for &m in &cfg.task.train_sizes {
            match run_cell(cfg, &data, seed, m) {
                Ok(row) => rows.push(row),
                Err(error) => return (rows, Some(SweepFailure { m, seed: seed.replicate, error })),
            }
        }
        (rows, None)
    });
    let mut rows = Vec::with_capacity(cfg.cells());
    let mut failures = Vec::new();
    for (r, f) in per_seed {
        rows.extend(r);
        failures.extend(f);
    }
    rows.sort_by_key(|r| (r.m, r.seed));
    Ok(SweepRun { rows, failures })
}

/// Runs the sweep and fails on the first cell error.
pub fn sweep(cfg: &SweepConfig, exec: Execution) -> Result<SweepResult> {
    let run = run_sweep(cfg, exec)?;
    if let Some(f) = run.failures.into_iter().next() {
        return Err(f.error);
    }
    Ok(SweepResult::from_rows(cfg, run.rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SweepConfig {
        let mut cfg = SweepConfig::default();
        cfg.task.train_sizes = vec![16, 32, 64];
        cfg.task.test_size = 500;
        cfg.train.steps = 20;
        cfg.replicates = 2;
        cfg
    }

    #[test]
    fn rows_are_complete_and_consistent() {
        let cfg = tiny();
        let res = sweep(&cfg, Execution::Parallel).unwrap();
        assert_eq!(res.rows.len(), 6);
        assert_eq!(res.summary.len(), 3);
        for r in &res.rows {
            assert_eq!(r.gap, r.test_loss - r.train_loss);
            assert_eq!(r.slack, r.bound - r.test_loss);
            assert!(r.capacity >= 1.0 && r.capacity <= 8.0 + 1e-9);
            assert!(r.bound > 0.0);
        }
        let json = serde_json::to_string(&res).unwrap();
        assert!(json.find("\"rows\"").unwrap() < json.find("\"fits\"").unwrap());
        let csv = res.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "m,seed,L_S,L_D_hat,gap,R_measured,bound,slack");
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn deterministic_across_execution_modes() {
        let cfg = tiny();
        let a = serde_json::to_string(&sweep(&cfg, Execution::Sequential).unwrap()).unwrap();
        let b = serde_json::to_string(&sweep(&cfg, Execution::Parallel).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn untrained_single_size() {
        let mut cfg = tiny();
        cfg.task.train_sizes = vec![200];
        cfg.task.test_size = 4000;
        cfg.train.steps = 0;
        cfg.replicates = 1;
        let res = sweep(&cfg, Execution::Sequential).unwrap();
        let r = &res.rows[0];
        assert!(r.gap.abs() < 0.05, "{}", r.gap);
        assert!(r.bound > 0.0 && r.slack > 0.0);
        assert!(res.fits.gap.is_none());
    }

    #[test]
    fn bound_decreases_with_m_at_fixed_rank() {
        let cfg = SweepConfig::default();
        let mut prev = f64::INFINITY;
        for m in [3, 8, 64, 128, 256, 512, 1024, 100_000] {
            let b = generalization_bound(&cfg.bound_inputs(3.5, m, 0.1, 1.0)).unwrap().total_bound;
            assert!(b < prev);
            prev = b;
        }
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let mut cfg = tiny();
        cfg.model.seq_len = 6;
        assert!(matches!(cfg.validate(), Err(Error::Shape(_))));
        assert!(run_sweep(&cfg, Execution::Sequential).is_err());
    }

    #[test]
    fn divergence_keeps_earlier_rows() {
        let mut cfg = tiny();
        cfg.train.lr = 1e200;
        let run = run_sweep(&cfg, Execution::Sequential).unwrap();
        assert_eq!(run.failures.len(), 2);
        assert!(matches!(run.failures[0].error, Error::Divergence { .. }));
        assert!(matches!(sweep(&cfg, Execution::Sequential), Err(Error::Divergence { .. })));
    }
}
