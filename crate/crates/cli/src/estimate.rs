use serde::Serialize;

use erank_core::attention::{checkpoint, forward, ModelParams};
use erank_core::bounds::{generalization_bound, BoundInputs};
use erank_core::experiments::{make_task, z_scaling_experiment, TaskConfig};
use erank_core::matrix::format_f64;
use erank_core::rademacher::{
    coupled_complexity_mc, gather_sensitivities, RademacherEstimate, SensitivitySet,
};
use erank_core::{rng, Execution, Matrix};

use crate::config::{Resolved, SensitivitySource};
use crate::error::CliError;
use crate::output::json_line;
use crate::Outcome;

pub fn bound(inputs: BoundInputs, json: bool) -> Result<Outcome, CliError> {
    let report = generalization_bound(&inputs)?;
    if json {
        return Ok(Outcome::ok(json_line(&report)));
    }
    let f = format_f64;
    let i = &report.inputs;
    let out = format!(
        "R                {}\n\
         m                {}\n\
         delta            {}\n\
         L_S              {}\n\
         complexity term  C*L_tot*sqrt(R ln m / m)     = {}\n\
         deviation term   c*sqrt(ln(1/delta) / m)      = {}\n\
         total bound      L_S + complexity + deviation = {}\n\
         rademacher       C2*L_tot*B*sqrt(R ln m / m)  = {}\n",
        f(i.rank_cap),
        i.m,
        f(i.delta),
        f(i.empirical_loss),
        f(report.rc_term),
        f(report.deviation_term),
        f(report.total_bound),
        f(report.rademacher),
    );
    Ok(Outcome::ok(out))
}

/// Builds the sensitivity set named by the config's `rademacher.source`.
pub fn sensitivities(r: &Resolved, exec: Execution) -> Result<SensitivitySet, CliError> {
    let cfg = &r.config;
    let settings = &cfg.rademacher;
    let set = match &settings.source {
        SensitivitySource::Identity { n, m } => {
            if *n == 0 || *m == 0 {
                return Err(CliError::Config("identity source needs positive n and m".into()));
            }
            SensitivitySet::new(vec![Matrix::identity(*n); *m])?
        }
        SensitivitySource::Gaussian { n, m, scale } => {
            if *n == 0 || *m == 0 || scale.is_nan() || *scale < 0.0 {
                return Err(CliError::Config("gaussian source needs positive n, m and scale".into()));
            }
            let base = rng::split(settings.mc.seed, u64::MAX);
            let zs = (0..*m)
                .map(|i| {
                    Matrix::random_normal(*n, *n, *scale, &mut rng::seeded(rng::split(base, i as u64)))
                })
                .collect();
            SensitivitySet::new(zs)?
        }
        SensitivitySource::RandomModel { m } => {
            let spec = &cfg.model;
            spec.validate()?;
            let task = TaskConfig {
                train_sizes: vec![*m],
                test_size: 1,
                ..cfg.task.clone()
            };
            let data = make_task(&task)?;
            let params = ModelParams::init(spec, &mut rng::seeded(rng::split(cfg.train.seed, 0)));
            let grads = data
                .train
                .inputs
                .iter()
                .zip(&data.train.targets)
                .map(|(x, y)| {
                    let (out, _) = forward(&params, spec, x)?;
                    Ok(cfg.train.loss.eval(&out, y)?.1)
                })
                .collect::<erank_core::Result<Vec<_>>>()?;
            gather_sensitivities(&params, spec, &data.train.inputs, &grads, settings.layer, settings.head, exec)?
        }
        SensitivitySource::Checkpoint { checkpoint: path, inputs } => {
            let (spec, params) = checkpoint::load(&r.path(path))?;
            let xs = inputs
                .iter()
                .map(|p| Matrix::read_csv(&r.path(p)))
                .collect::<erank_core::Result<Vec<_>>>()?;
            // Sensitivity of the summed outputs.
            let grads = vec![vec![1.0; spec.output_dim]; xs.len()];
            gather_sensitivities(&params, &spec, &xs, &grads, settings.layer, settings.head, exec)?
        }
    };
    Ok(set)
}

#[derive(Serialize)]
struct RademacherReport<'a> {
    config_hash: &'a str,
    source: &'a SensitivitySource,
    estimate: RademacherEstimate,
    sandwich_holds: bool,
}

pub fn rademacher(r: &Resolved, json: bool, exec: Execution) -> Result<Outcome, CliError> {
    let set = sensitivities(r, exec)?;
    let settings = &r.config.rademacher;
    let estimate = coupled_complexity_mc(&set, settings.rank_cap, &settings.mc, exec)?;
    let report = RademacherReport {
        config_hash: &r.hash,
        source: &settings.source,
        sandwich_holds: estimate.sandwich_holds(),
        estimate,
    };
    if json {
        return Ok(Outcome::ok(json_line(&report)));
    }
    Ok(Outcome::ok(format!(
        "{}\n{}\n",
        RademacherEstimate::CSV_HEADER,
        report.estimate.csv_row()
    )))
}

pub fn z_scaling(r: &Resolved, json: bool, exec: Execution) -> Result<Outcome, CliError> {
    let report = z_scaling_experiment(&r.config.z_scaling, exec)?;
    if json {
        let doc = serde_json::json!({ "config_hash": r.hash, "report": report });
        return Ok(Outcome::ok(json_line(&doc)));
    }
    let mut out = String::from("n,count,mean_op_norm,bound,within_bound\n");
    for p in &report.points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.n,
            p.count,
            format_f64(p.mean_op_norm),
            format_f64(p.bound),
            p.within_bound
        ));
    }
    match report.exponent {
        Some(b) => eprintln!("erank: fitted exponent {} (consistent: {})", format_f64(b), report.consistent),
        None => eprintln!("erank: all sensitivities are zero"),
    }
    Ok(Outcome::ok(out))
}
