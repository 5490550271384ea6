//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use cli::run_cli;
use serde_json::Value;

use erank_core::attention::{softmax_rows, ModelParams, ModelSpec};
use erank_core::bounds::{verify_all, SLACK_TOLERANCE};
use erank_core::rademacher::trace_ball_sup;
use erank_core::rng;
use erank_core::spectral::spectral_summary;
use erank_core::{Execution, Matrix};
use erank_validation::{gradient_check, nuclear_norm, numerical_rank, trace_ball_brute_force};

mod cli {
    use clap::Parser;
    use erank_cli::{run, Cli};

    /// Runs `erank <args>` in-process and returns (stdout, exit code).
    pub fn run_cli(args: &[&str]) -> (String, u8) {
        let cli = Cli::try_parse_from(std::iter::once("erank").chain(args.iter().copied()))
            .unwrap_or_else(|e| panic!("bad arguments {args:?}: {e}"));
        match run(&cli) {
            Ok(o) => (o.stdout, o.code),
            Err(e) => (format!("error: {e}"), e.exit_code()),
        }
    }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> String {
    root().join("configs").join(name).display().to_string()
}

/// Name, optional time limit in seconds, check.
type Criterion = (&'static str, Option<u64>, fn() -> Verdict);

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Verdict) -> Verdict {
    let start = Instant::now();
    let v = f();
    let took = start.elapsed();
    match limit {
        Some(l) => verdict(
            v.passed && took < l,
            format!("{}; {:.1}s (limit {}s)", v.detail, took.as_secs_f64(), l.as_secs()),
        ),
        None => verdict(v.passed, format!("{}; {:.1}s", v.detail, took.as_secs_f64())),
    }
}

fn spectral_identities() -> Verdict {
    let mut rng = rng::seeded(0x5eed_0001);
    let mut violations = 0;
    let mut worst_scale = 0.0f64;
    for _ in 0..1000 {
        let rows = 1 + rng::below(&mut rng, 32);
        let cols = 1 + rng::below(&mut rng, 32);
        let k = 1 + rng::below(&mut rng, rows.min(cols));
        let scale = (10.0f64).powf(-3.0 + 6.0 * rng::uniform(&mut rng));
        let a = Matrix::random_normal(rows, k, 1.0, &mut rng)
            .matmul(&Matrix::random_normal(k, cols, scale, &mut rng))
            .expect("shapes");
        let rank = numerical_rank(&a);
        let s = spectral_summary(&a).expect("summary");
        let c = (10.0f64).powf(-4.0 + 8.0 * rng::uniform(&mut rng));
        let scaled = spectral_summary(&a.scale(c)).expect("summary");
        let drift = (scaled.effective_rank - s.effective_rank).abs();
        worst_scale = worst_scale.max(drift);
        let tol = 1e-12 * s.effective_rank;
        if s.effective_rank < 1.0 - tol
            || s.effective_rank > rank as f64 + tol
            || drift > 1e-10
            || s.renyi2_rank > s.effective_rank + tol
        {
            violations += 1;
        }
    }
    verdict(
        violations == 0,
        format!("1000 matrices, {violations} violations, max scale drift {worst_scale:.1e}"),
    )
}

fn random_softmax(rng: &mut rng::Rng) -> Matrix {
    let n = 2 + rng::below(rng, 31);
    let spread = (10.0f64).powf(-1.0 + 2.0 * rng::uniform(rng));
    softmax_rows(&Matrix::random_normal(n, n, spread, rng), 1.0).expect("softmax")
}

fn proof_chain() -> Verdict {
    let mut rng = rng::seeded(0x5eed_0002);
    let mats: Vec<Matrix> = (0..1000).map(|_| random_softmax(&mut rng)).collect();
    let report = verify_all(&mats, Execution::Sequential);
    let complete = report.records.iter().all(|r| r.row_stochastic && r.slacks().count() == 4);
    let min_slack = report
        .records
        .iter()
        .flat_map(|r| r.slacks().collect::<Vec<_>>())
        .fold(f64::INFINITY, f64::min);
    verdict(
        report.violations == 0 && complete && min_slack >= SLACK_TOLERANCE,
        format!(
            "1000 matrices, {} violations, all four checks applied: {complete}, min slack {min_slack:.2e}",
            report.violations
        ),
    )
}

fn duality() -> Verdict {
    let mut rng = rng::seeded(0x5eed_0003);
    let mut worst_gap = 0.0f64;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_cert = 0.0f64;
    let mut cases = 0;
    for n in [2usize, 3] {
        for _ in 0..5 {
            let z = Matrix::random_normal(n, n, 0.2 + 3.0 * rng::uniform(&mut rng), &mut rng);
            let alpha = 0.5 + 2.5 * rng::uniform(&mut rng);
            let cert = trace_ball_sup(&z, alpha).expect("sup");
            let bf = trace_ball_brute_force(&z, alpha, 100_000, rng::split(0x5eed_0003, cases));
            worst_gap = worst_gap.max((bf.refined_max - cert.value).abs());
            worst_excess = worst_excess.max(bf.sampled_max - cert.value);
            let achieved = cert.argmax.inner(&z).expect("shape");
            let feasible_excess = (nuclear_norm(&cert.argmax) - alpha).max(0.0);
            worst_cert = worst_cert.max((achieved - cert.value).abs()).max(feasible_excess);
            cases += 1;
        }
    }
    verdict(
        worst_gap <= 1e-6 && worst_excess <= 1e-9 && worst_cert <= 1e-9,
        format!(
            "{cases} cases x 1e5 samples, |sup - brute force| {worst_gap:.1e}, \
             max sample above sup {worst_excess:.1e}, certificate error {worst_cert:.1e}"
        ),
    )
}

fn gradients() -> Verdict {
    let mut worst = 0.0f64;
    let mut cases = Vec::new();
    for (layers, heads, seed) in [(1, 1, 1u64), (1, 2, 2), (2, 1, 3), (2, 2, 4)] {
        let spec = ModelSpec {
            num_layers: layers,
            num_heads: heads,
            seq_len: 5,
            d_model: 6,
            d_k: 3,
            d_v: 3,
            mlp_hidden: 7,
            output_dim: 2,
            ..ModelSpec::default()
        };
        let mut r = rng::seeded(seed);
        let params = ModelParams::init(&spec, &mut r);
        for _ in 0..2 {
            let x = Matrix::random_normal(spec.seq_len, spec.d_model, 1.0, &mut r);
            let g: Vec<f64> = (0..spec.output_dim).map(|_| rng::normal(&mut r)).collect();
            let e = gradient_check(&params, &spec, &x, &g, 1e-5, 1e-6).expect("gradient check");
            worst = worst.max(e);
        }
        cases.push(format!("{layers}L{heads}H"));
    }
    verdict(
        worst <= 1e-4,
        format!("models {}, max relative error {worst:.2e}", cases.join(" ")),
    )
}

fn bound_arithmetic() -> Verdict {
    let (out, code) = run_cli(&["--json", "bound", "--R", "4", "--m", "10000", "--delta", "0.05"]);
    let doc: Value = serde_json::from_str(&out).expect("bound json");
    let total = doc["total_bound"].as_f64().expect("total_bound");
    let oracle = (4.0 * (1e4f64).ln() / 1e4).sqrt() + ((20.0f64).ln() / 1e4).sqrt();
    verdict(
        code == 0 && (total - 0.078005).abs() <= 1e-6 && (total - oracle).abs() <= 1e-12,
        format!("total {total:.9}, oracle {oracle:.9}, target 0.078005"),
    )
}

fn sandwich() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in [
        "rademacher_identity.json",
        "rademacher_gaussian.json",
        "rademacher_model.json",
        "rademacher_single.json",
    ] {
        let (out, code) = run_cli(&["--json", "rademacher", &config(name)]);
        let doc: Value = serde_json::from_str(&out).unwrap_or_else(|_| panic!("{name}: {out}"));
        let e = &doc["estimate"];
        let get = |k: &str| e[k].as_f64().unwrap_or(f64::NAN);
        let (lower, mean, se, upper) = (
            get("feasible_lower"),
            get("coupled_mean"),
            get("coupled_stderr"),
            get("decoupled_value"),
        );
        let holds = code == 0 && lower <= mean + 3.0 * se && mean - 3.0 * se <= upper;
        ok &= holds;
        let mut line = format!("{name}: {lower:.4} <= {mean:.4}±{se:.1e} <= {upper:.4}");
        if e["m"].as_u64() == Some(1) {
            let diff = (mean - upper).abs();
            ok &= diff <= 1e-12;
            line.push_str(&format!(" (m=1 |coupled - decoupled| {diff:.1e})"));
        }
        parts.push(line);
    }
    verdict(ok, parts.join("; "))
}

fn z_scaling() -> Verdict {
    let (out, code) = run_cli(&["--json", "zscaling", &config("zscaling.json")]);
    let doc: Value = serde_json::from_str(&out).expect("zscaling json");
    let beta = doc["report"]["exponent"].as_f64();
    let norms: Vec<String> = doc["report"]["points"]
        .as_array()
        .map(|ps| {
            ps.iter()
                .map(|p| format!("n={} {:.3}", p["n"], p["mean_op_norm"].as_f64().unwrap_or(f64::NAN)))
                .collect()
        })
        .unwrap_or_default();
    verdict(
        code == 0 && beta.is_some_and(|b| b <= -0.3),
        format!("beta {beta:?} (need <= -0.3); mean ||Z||_op: {}", norms.join(", ")),
    )
}

fn sweep() -> Verdict {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("reference");
    let out_s = out.display().to_string();
    let (_, code) = run_cli(&["--jobs", "1", "sweep", &config("sweep_reference.json"), "--out", &out_s]);
    let text = std::fs::read_to_string(out.join("results.json")).unwrap_or_default();
    let doc: Value = serde_json::from_str(&text).unwrap_or(Value::Null);
    let alpha = doc["fits"]["gap"]["exponent"].as_f64();
    let coverage = doc["bound_coverage"].as_f64().unwrap_or(0.0);
    let cells = doc["rows"].as_array().map_or(0, Vec::len);
    verdict(
        code == 0 && cells == 200 && alpha.is_some_and(|a| (0.2..=0.8).contains(&a)) && coverage >= 0.95,
        format!("{cells} cells, gap exponent {alpha:?} (need [0.2, 0.8]), bound coverage {coverage:.3}"),
    )
}

fn determinism() -> Verdict {
    let data = |f: &str| root().join("data").join(f).display().to_string();
    let id4 = data("identity4.csv");
    let u8_ = data("uniform8.csv");
    let p5 = data("permutation5.csv");
    let commands: Vec<Vec<String>> = [
        vec!["analyze", &id4, &u8_, &p5],
        vec!["verify", &id4, &u8_, &p5],
        vec!["verify", "--random", "8", "200", "7"],
        vec!["bound", "--R", "4", "--m", "10000"],
        vec!["rademacher", &config("rademacher_model.json")],
        vec!["rademacher", &config("rademacher_gaussian.json")],
        vec!["zscaling", &config("zscaling.json")],
        vec!["config", &config("sweep_reference.json")],
    ]
    .into_iter()
    .map(|c| c.into_iter().map(String::from).collect())
    .collect();
    let mut mismatches = Vec::new();
    let mut runs = 0;
    for cmd in &commands {
        for json in [false, true] {
            let mut args: Vec<&str> = Vec::new();
            if json {
                args.push("--json");
            }
            args.extend(cmd.iter().map(String::as_str));
            let first = run_cli(&args);
            for jobs in ["0", "1", "3"] {
                let mut with_jobs = vec!["--jobs", jobs];
                with_jobs.extend(&args);
                runs += 1;
                if run_cli(&with_jobs) != first {
                    mismatches.push(format!("{} --jobs {jobs}", args.join(" ")));
                }
            }
        }
    }
    let dir = tempfile::tempdir().expect("tempdir");
    let smoke = config("sweep_smoke.json");
    let mut outputs = Vec::new();
    for (i, jobs) in ["0", "1", "0"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let out_s = out.display().to_string();
        let (stdout, code) = run_cli(&["--json", "--jobs", jobs, "sweep", &smoke, "--out", &out_s]);
        let mut files = vec![stdout.replace(&out_s, ""), code.to_string()];
        for f in ["MANIFEST.json", "results.csv", "results.json", "gap_vs_m.csv", "rank_vs_m.csv", "bound_vs_m.csv"] {
            files.push(std::fs::read_to_string(out.join(f)).unwrap_or_default());
        }
        outputs.push(files);
        runs += 1;
    }
    if outputs.iter().any(|o| o != &outputs[0]) {
        mismatches.push("sweep output files".into());
    }
    verdict(
        mismatches.is_empty(),
        format!("{runs} repeated runs, mismatches: {mismatches:?}"),
    )
}

fn main() {
    let start = Instant::now();
    let criteria: Vec<Criterion> = vec![
        ("spectral identities", Some(10), spectral_identities),
        ("proof-chain verification", Some(30), proof_chain),
        ("duality oracle", Some(60), duality),
        ("gradient fidelity", Some(60), gradients),
        ("bound arithmetic", None, bound_arithmetic),
        ("rademacher sandwich", None, sandwich),
        ("z-scaling exponent", None, z_scaling),
        ("sweep behavior", None, sweep),
        ("determinism", None, determinism),
    ];
    let mut failed = 0;
    for (name, limit, f) in criteria {
        let v = timed(limit.map(Duration::from_secs), f);
        if !v.passed {
            failed += 1;
        }
        println!("{} {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
    }
    let total = start.elapsed();
    let in_budget = total < Duration::from_secs(600);
    if !in_budget {
        failed += 1;
    }
    println!(
        "{} suite runtime: {:.1}s (limit 600s)",
        if in_budget { "PASS" } else { "FAIL" },
        total.as_secs_f64()
    );
    println!("acceptance: {failed} failing");
    if failed > 0 {
        std::process::exit(1);
    }
}
