//! Closed-form generalization bounds and the effective-rank → trace-norm
//! inequality chain, checked numerically matrix by matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{format_f64, Matrix};
use crate::par::{self, Execution};
use crate::spectral;

/// Slack below which an inequality counts as violated.
pub const SLACK_TOLERANCE: f64 = -1e-9;
/// Row-sum tolerance for treating a matrix as row-stochastic.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-9;

/// `C2 · L_tot · B · √(R ln m / m)`.
pub fn rademacher_bound(rank_cap: f64, m: usize, l_tot: f64, sens_op: f64, c2: f64) -> Result<f64> {
    if m < 2 {
        return Err(Error::domain(format!("sample count m = {m} must be at least 2")));
    }
    if !(rank_cap > 0.0) || !(l_tot > 0.0) || !(sens_op > 0.0) || !(c2 > 0.0) {
        return Err(Error::domain("R, L_tot, B and C2 must be positive"));
    }
    let m = m as f64;
    Ok(c2 * l_tot * sens_op * (rank_cap * m.ln() / m).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundInputs {
    /// Effective-rank cap R.
    #[serde(rename = "R")]
    pub rank_cap: f64,
    /// Sample count m.
    pub m: usize,
    pub delta: f64,
    #[serde(rename = "L_tot")]
    pub l_tot: f64,
    /// Sensitivity scale B.
    #[serde(rename = "B")]
    pub sens_op: f64,
    /// Constant C on the complexity term.
    #[serde(rename = "C")]
    pub c_rc: f64,
    /// Constant c on the deviation term.
    #[serde(rename = "c")]
    pub c_dev: f64,
    /// Entropy-refinement constant C2.
    #[serde(rename = "C2")]
    pub c2: f64,
    /// Empirical loss L_S.
    #[serde(rename = "L_S")]
    pub empirical_loss: f64,
}

impl Default for BoundInputs {
    fn default() -> Self {
        BoundInputs {
            rank_cap: 1.0,
            m: 1000,
            delta: 0.05,
            l_tot: 1.0,
            sens_op: 1.0,
            c_rc: 1.0,
            c_dev: 1.0,
            c2: 1.0,
            empirical_loss: 0.0,
        }
    }
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.rank_cap >= 1.0) {
            return Err(Error::domain(format!("R = {} must be at least 1", self.rank_cap)));
        }
        if self.m < 2 {
            return Err(Error::domain(format!("m = {} must be at least 2", self.m)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::domain(format!("delta = {} must lie in (0, 1)", self.delta)));
        }
        for (name, v) in [
            ("L_tot", self.l_tot),
            ("B", self.sens_op),
            ("C", self.c_rc),
            ("c", self.c_dev),
            ("C2", self.c2),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::domain(format!("{name} = {v} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.empirical_loss) {
            return Err(Error::domain(format!(
                "L_S = {} must lie in [0, 1]",
                self.empirical_loss
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    /// `C · L_tot · √(R ln m / m)`.
    pub rc_term: f64,
    /// `c · √(ln(1/δ) / m)`.
    pub deviation_term: f64,
    /// `L_S + rc_term + deviation_term`.
    pub total_bound: f64,
    /// Rademacher complexity bound `C2 · L_tot · B · √(R ln m / m)`.
    pub rademacher: f64,
}

impl BoundReport {
    pub const CSV_HEADER: &'static str =
        "R,m,delta,L_tot,B,C,c,C2,L_S,rc_term,deviation_term,total_bound,rademacher";

    pub fn csv_row(&self) -> String {
        let i = &self.inputs;
        [
            format_f64(i.rank_cap),
            i.m.to_string(),
            format_f64(i.delta),
            format_f64(i.l_tot),
            format_f64(i.sens_op),
            format_f64(i.c_rc),
            format_f64(i.c_dev),
            format_f64(i.c2),
            format_f64(i.empirical_loss),
            format_f64(self.rc_term),
            format_f64(self.deviation_term),
            format_f64(self.total_bound),
            format_f64(self.rademacher),
        ]
        .join(",")
    }
}

/// `L_S + C·L_tot·√(R ln m / m) + c·√(ln(1/δ)/m)`.
pub fn generalization_bound(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let m = inputs.m as f64;
    let rc_term = inputs.c_rc * inputs.l_tot * (inputs.rank_cap * m.ln() / m).sqrt();
    let deviation_term = inputs.c_dev * ((1.0 / inputs.delta).ln() / m).sqrt();
    let rademacher = rademacher_bound(
        inputs.rank_cap,
        inputs.m,
        inputs.l_tot,
        inputs.sens_op,
        inputs.c2,
    )?;
    Ok(BoundReport {
        inputs: inputs.clone(),
        rc_term,
        deviation_term,
        total_bound: inputs.empirical_loss + rc_term + deviation_term,
        rademacher,
    })
}

/// Slacks (right side minus left side) of the inequality chain for one matrix.
///
/// 1. `erank(A) ≥ ‖A‖_*² / ‖A‖_F²`
/// 2. `‖A‖_* ≤ √erank(A) · ‖A‖_F`
/// 3. `‖A‖_F ≤ √n` (row-stochastic only)
/// 4. `‖A‖_* ≤ √(erank(A) · n)` (row-stochastic only)
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub rows: usize,
    pub cols: usize,
    pub effective_rank: f64,
    pub renyi2_rank: f64,
    pub nuclear_norm: f64,
    pub frobenius_norm: f64,
    pub row_stochastic: bool,
    /// Max |row sum − 1|; `None` when an entry is negative.
    pub row_sum_defect: Option<f64>,
    pub erank_trace_slack: f64,
    pub trace_cap_slack: Option<f64>,
    pub frobenius_cap_slack: Option<f64>,
    pub trace_cap_n_slack: Option<f64>,
    pub error: Option<String>,
}

impl ChainRecord {
    pub fn slacks(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.erank_trace_slack).chain(
            [
                self.trace_cap_slack,
                self.frobenius_cap_slack,
                self.trace_cap_n_slack,
            ]
            .into_iter()
            .flatten(),
        )
    }

    pub fn passed(&self) -> bool {
        self.error.is_none() && self.slacks().all(|s| s >= SLACK_TOLERANCE)
    }

    pub const CSV_HEADER: &'static str = "rows,cols,effective_rank,renyi2_rank,nuclear_norm,frobenius_norm,row_stochastic,erank_trace_slack,trace_cap_slack,frobenius_cap_slack,trace_cap_n_slack,passed";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(format_f64).unwrap_or_default();
        [
            self.rows.to_string(),
            self.cols.to_string(),
            format_f64(self.effective_rank),
            format_f64(self.renyi2_rank),
            format_f64(self.nuclear_norm),
            format_f64(self.frobenius_norm),
            self.row_stochastic.to_string(),
            format_f64(self.erank_trace_slack),
            opt(self.trace_cap_slack),
            opt(self.frobenius_cap_slack),
            opt(self.trace_cap_n_slack),
            self.passed().to_string(),
        ]
        .join(",")
    }
}

pub fn verify_chain(a: &Matrix) -> ChainRecord {
    let row_sum_defect = a.stochastic_defect(STOCHASTIC_TOLERANCE);
    let row_stochastic =
        a.is_square() && row_sum_defect.is_some_and(|d| d <= STOCHASTIC_TOLERANCE);
    let mut record = ChainRecord {
        rows: a.rows(),
        cols: a.cols(),
        effective_rank: 0.0,
        renyi2_rank: 0.0,
        nuclear_norm: 0.0,
        frobenius_norm: 0.0,
        row_stochastic,
        row_sum_defect,
        erank_trace_slack: 0.0,
        trace_cap_slack: None,
        frobenius_cap_slack: None,
        trace_cap_n_slack: None,
        error: None,
    };
    let s = match spectral::spectral_summary(a) {
        Ok(s) => s,
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    record.effective_rank = s.effective_rank;
    record.renyi2_rank = s.renyi2_rank;
    record.nuclear_norm = s.nuclear_norm;
    record.frobenius_norm = s.frobenius_norm;
    record.erank_trace_slack = s.effective_rank - s.renyi2_rank;
    if row_stochastic {
        let n = a.rows() as f64;
        record.trace_cap_slack = Some(s.effective_rank.sqrt() * s.frobenius_norm - s.nuclear_norm);
        record.frobenius_cap_slack = Some(n.sqrt() - s.frobenius_norm);
        record.trace_cap_n_slack = Some((s.effective_rank * n).sqrt() - s.nuclear_norm);
    }
    record
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub records: Vec<ChainRecord>,
    pub violations: usize,
}

impl ChainReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn to_csv(&self, labels: &[String]) -> String {
        let mut out = format!("source,{}\n", ChainRecord::CSV_HEADER);
        for (i, r) in self.records.iter().enumerate() {
            let label = labels.get(i).cloned().unwrap_or_else(|| i.to_string());
            out.push_str(&format!("{label},{}\n", r.csv_row()));
        }
        out
    }
}

pub fn verify_all(matrices: &[Matrix], exec: Execution) -> ChainReport {
    let records = par::map(exec, matrices, verify_chain);
    let violations = records.iter().filter(|r| !r.passed()).count();
    ChainReport {
        records,
        violations,
    }
}

/// Check of `L_D − L_S ≤ 2·R̂ + c·√(ln(1/δ)/m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetrizationReport {
    pub gap: f64,
    pub allowance: f64,
    /// `allowance − gap`.
    pub slack: f64,
    pub satisfied: bool,
}

pub fn symmetrization_gap(
    population_loss: f64,
    empirical_loss: f64,
    rc_estimate: f64,
    delta: f64,
    m: usize,
    c: f64,
) -> SymmetrizationReport {
    let gap = population_loss - empirical_loss;
    let allowance = 2.0 * rc_estimate + c * ((1.0 / delta).ln() / m as f64).sqrt();
    let slack = allowance - gap;
    SymmetrizationReport {
        gap,
        allowance,
        slack,
        satisfied: slack >= SLACK_TOLERANCE,
    }
}
