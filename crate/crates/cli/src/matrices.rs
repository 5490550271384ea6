use std::path::PathBuf;

use serde::Serialize;

use erank_core::attention::softmax_rows;
use erank_core::bounds::{verify_all, ChainRecord, STOCHASTIC_TOLERANCE};
use erank_core::matrix::format_f64;
use erank_core::spectral::{spectral_summary, SpectralSummary};
use erank_core::{rng, Execution, Matrix};

use crate::error::{CliError, EXIT_OK, EXIT_VERIFY};
use crate::output::json_line;
use crate::Outcome;

const ANALYZE_HEADER: &str =
    "file,rows,cols,effective_rank,renyi2_rank,nuclear_norm,frobenius_norm,operator_norm,entropy,rank";

#[derive(Serialize)]
struct Analyzed {
    file: String,
    rows: usize,
    cols: usize,
    rank: usize,
    #[serde(flatten)]
    summary: SpectralSummary,
}

pub fn analyze(files: &[PathBuf], json: bool) -> Result<Outcome, CliError> {
    let mut rows = Vec::with_capacity(files.len());
    for f in files {
        let m = Matrix::read_csv(f)?;
        let summary = spectral_summary(&m)?;
        rows.push(Analyzed {
            file: f.display().to_string(),
            rows: m.rows(),
            cols: m.cols(),
            rank: summary.rank(),
            summary,
        });
    }
    if json {
        return Ok(Outcome::ok(json_line(&rows)));
    }
    let mut out = format!("{ANALYZE_HEADER}\n");
    for r in &rows {
        let s = &r.summary;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.file,
            r.rows,
            r.cols,
            format_f64(s.effective_rank),
            format_f64(s.renyi2_rank),
            format_f64(s.nuclear_norm),
            format_f64(s.frobenius_norm),
            format_f64(s.operator_norm),
            format_f64(s.entropy),
            r.rank
        ));
    }
    Ok(Outcome::ok(out))
}

/// Random softmax attention: Gaussian logits with a per-matrix scale in [0.1, 5].
pub fn random_attention(n: usize, count: usize, seed: u64) -> Vec<Matrix> {
    (0..count)
        .map(|i| {
            let mut r = rng::seeded(rng::split(seed, i as u64));
            let scale = 0.1 + 4.9 * rng::uniform(&mut r);
            let logits = Matrix::random_normal(n, n, scale, &mut r);
            softmax_rows(&logits, 1.0).expect("finite logits")
        })
        .collect()
}

fn stochastic_diagnostic(label: &str, m: &Matrix) -> Option<String> {
    if m.is_row_stochastic(STOCHASTIC_TOLERANCE) {
        return None;
    }
    if !m.is_square() {
        return Some(format!("{label}: {}x{} matrix is not square", m.rows(), m.cols()));
    }
    for i in 0..m.rows() {
        if let Some(j) = m.row(i).iter().position(|&v| v < -STOCHASTIC_TOLERANCE) {
            return Some(format!("{label}: entry ({i}, {j}) is negative: {}", m.get(i, j)));
        }
    }
    let sums = m.row_sums();
    let (i, s) = sums
        .iter()
        .enumerate()
        .max_by(|a, b| (a.1 - 1.0).abs().total_cmp(&(b.1 - 1.0).abs()))
        .expect("nonempty");
    Some(format!(
        "{label}: row {i} sums to {} (not row-stochastic; pass --allow-general to check anyway)",
        format_f64(*s)
    ))
}

#[derive(Serialize)]
struct Labeled<'a> {
    source: &'a str,
    passed: bool,
    #[serde(flatten)]
    record: &'a ChainRecord,
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    passed: bool,
    violations: usize,
    records: Vec<Labeled<'a>>,
}

pub fn verify(
    files: &[PathBuf],
    random: Option<&[u64]>,
    allow_general: bool,
    json: bool,
    exec: Execution,
) -> Result<Outcome, CliError> {
    let (labels, matrices): (Vec<String>, Vec<Matrix>) = match random {
        Some(&[n, count, seed]) => {
            if n == 0 || count == 0 {
                return Err(CliError::Input("--random needs positive N and COUNT".into()));
            }
            let ms = random_attention(n as usize, count as usize, seed);
            ((0..ms.len()).map(|i| format!("random{i}")).collect(), ms)
        }
        Some(_) => return Err(CliError::Input("--random takes N COUNT SEED".into())),
        None => {
            if files.is_empty() {
                return Err(CliError::Input("give matrix files or --random N COUNT SEED".into()));
            }
            let mut labels = Vec::new();
            let mut ms = Vec::new();
            for f in files {
                labels.push(f.display().to_string());
                ms.push(Matrix::read_csv(f)?);
            }
            (labels, ms)
        }
    };
    if !allow_general {
        if let Some(msg) = labels.iter().zip(&matrices).find_map(|(l, m)| stochastic_diagnostic(l, m)) {
            return Err(CliError::Input(msg));
        }
    }
    let report = verify_all(&matrices, exec);
    let code = if report.passed() { EXIT_OK } else { EXIT_VERIFY };
    if code != EXIT_OK {
        eprintln!("erank: {} of {} matrices violate the chain", report.violations, matrices.len());
    }
    let stdout = if json {
        json_line(&VerifyReport {
            passed: report.passed(),
            violations: report.violations,
            records: labels
                .iter()
                .zip(&report.records)
                .map(|(l, r)| Labeled {
                    source: l,
                    passed: r.passed(),
                    record: r,
                })
                .collect(),
        })
    } else {
        report.to_csv(&labels)
    };
    Ok(Outcome { stdout, code })
}
