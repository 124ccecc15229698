use apekit::datamodel::load_csv;
use apekit::diagnostics::{empirical_weights, moment_profile};
use apekit::error::ApeError;
use apekit::estimators::EstimatorSpec;
use apekit::inference::{bootstrap, BootstrapResult};
use apekit::nuisance::{crossfit_residualise, LearnerSpec, Target};
use apekit::simulation::{
    figure1_experiment, parse_grid_config, preset, Figure1Result, GridConfig,
};
use apekit::{ApeEstimate, ColumnRoles, Dataset};
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::cli::{DataArgs, DiagnoseArgs, EstimateArgs, Figure1Args, SimulateArgs};
use crate::config::render_run_file;

pub type CmdResult = Result<(), ApeError>;

/// `--seed`, else `APE_SEED`, else 1.
pub fn resolve_seed(flag: Option<u64>) -> Result<u64, ApeError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("APE_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| ApeError::Parameter(format!("APE_SEED `{v}` is not an unsigned integer"))),
        Err(_) => Ok(1),
    }
}

fn roles(d: &DataArgs) -> ColumnRoles {
    ColumnRoles {
        outcome: Some(d.outcome.clone()),
        treatment: Some(d.treatment.clone()),
        controls: d.controls.clone(),
        instrument: d.instrument.clone(),
        nu_known: d.nu_column.clone(),
    }
}

fn data_entries(d: &DataArgs) -> Vec<(&'static str, String)> {
    let mut v = vec![
        ("data", d.data.display().to_string()),
        ("outcome", d.outcome.clone()),
        ("treatment", d.treatment.clone()),
    ];
    if !d.controls.is_empty() {
        v.push(("controls", d.controls.join(",")));
    }
    if let Some(i) = &d.instrument {
        v.push(("instrument", i.clone()));
    }
    if let Some(n) = &d.nu_column {
        v.push(("nu_column", n.clone()));
    }
    v
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn write(path: PathBuf, body: &str) -> CmdResult {
    std::fs::write(&path, body).map_err(ApeError::Io)
}

fn comment(text: &str) -> String {
    text.lines().map(|l| format!("# {l}\n")).collect()
}

/// Seconds since the epoch; kept out of every byte-compared output.
fn generated_at() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_json(prefix: &Path, report: Value, config: &str) -> CmdResult {
    let v = json!({ "generated_at": generated_at(), "config": config, "report": report });
    write(
        with_ext(prefix, "json"),
        &format!("{}\n", serde_json::to_string_pretty(&v).expect("json")),
    )
}

fn parse_learner(s: Option<&String>) -> Result<LearnerSpec, ApeError> {
    match s {
        Some(s) => s.parse(),
        None => Ok(LearnerSpec::default_for("gbt").expect("built-in learner")),
    }
}

pub fn estimator_for(a: &EstimateArgs) -> Result<EstimatorSpec, ApeError> {
    Ok(match a.method.as_str() {
        "rols" | "rols_known" => {
            if a.data.nu_column.is_none() {
                return Err(ApeError::Parameter(
                    "rols needs --nu-column; use --method rols_ml to learn r(Z)".into(),
                ));
            }
            EstimatorSpec::RolsKnown
        }
        "rols_ml" => EstimatorSpec::RolsMl {
            learner: parse_learner(a.learner.as_ref())?,
            folds: a.folds,
            in_sample: a.in_sample,
        },
        "dml" => EstimatorSpec::Dml {
            learner_r: parse_learner(a.learner_r.as_ref().or(a.learner.as_ref()))?,
            learner_l: parse_learner(a.learner_l.as_ref().or(a.learner.as_ref()))?,
            folds: a.folds,
        },
        "simple_ols" => EstimatorSpec::SimpleOls,
        "interacted_ols" => EstimatorSpec::InteractedOls { degree: a.degree },
        "pl_spline" => EstimatorSpec::PlSpline {
            degree: a.degree,
            knots: a.knots,
        },
        "iv" => {
            if a.data.instrument.is_none() {
                return Err(ApeError::Parameter("iv needs --instrument".into()));
            }
            EstimatorSpec::Iv
        }
        other => return Err(ApeError::Parameter(format!("unknown method `{other}`"))),
    })
}

fn estimate_text(
    spec: &EstimatorSpec,
    e: &ApeEstimate,
    boot: Option<&BootstrapResult>,
    seed: u64,
    alpha: f64,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:12} {}", "method", e.method);
    let _ = writeln!(s, "{:12} {}", "estimator", spec);
    let _ = writeln!(s, "{:12} {}", "n", e.n_used);
    let _ = writeln!(s, "{:12} {}", "seed", seed);
    let _ = writeln!(s, "{:12} {:.6}", "point", e.point);
    if let Some(se) = e.std_error {
        let _ = writeln!(s, "{:12} {:.6}", "std_error", se);
    }
    if let Some((lo, hi)) = e.ci {
        let _ = writeln!(
            s,
            "{:12} [{:.6}, {:.6}]",
            format!("ci_{}", (100.0 * (1.0 - alpha)).round()),
            lo,
            hi
        );
    }
    if let Some(b) = boot {
        let _ = writeln!(
            s,
            "{:12} B={} se={:.6} {} ci=[{:.6}, {:.6}] skipped={}",
            "bootstrap",
            b.estimates.len() + b.skipped,
            b.se,
            b.method.as_str(),
            b.ci_low,
            b.ci_high,
            b.skipped
        );
    }
    if !e.diagnostics.is_empty() {
        s.push_str("diagnostics\n");
        for (k, v) in &e.diagnostics {
            let _ = writeln!(s, "  {k:24} {v:.6}");
        }
    }
    s
}

fn estimate_rows(
    spec: &EstimatorSpec,
    e: &ApeEstimate,
    boot: Option<&BootstrapResult>,
    seed: u64,
) -> Vec<(String, String)> {
    let mut r = vec![
        ("method".to_string(), e.method.to_string()),
        ("estimator".into(), spec.to_string()),
        ("n".into(), e.n_used.to_string()),
        ("seed".into(), seed.to_string()),
        ("point".into(), e.point.to_string()),
    ];
    if let Some(se) = e.std_error {
        r.push(("std_error".into(), se.to_string()));
    }
    if let Some((lo, hi)) = e.ci {
        r.push(("ci_low".into(), lo.to_string()));
        r.push(("ci_high".into(), hi.to_string()));
    }
    if let Some(b) = boot {
        r.push((
            "boot_reps".into(),
            (b.estimates.len() + b.skipped).to_string(),
        ));
        r.push(("boot_se".into(), b.se.to_string()));
        r.push(("boot_ci_low".into(), b.ci_low.to_string()));
        r.push(("boot_ci_high".into(), b.ci_high.to_string()));
        r.push(("boot_skipped".into(), b.skipped.to_string()));
    }
    for (k, v) in &e.diagnostics {
        r.push((format!("diag.{k}"), v.to_string()));
    }
    r
}

fn kv_csv(config: &str, rows: &[(String, String)]) -> String {
    let mut w = String::from("key,value\n");
    for (k, v) in rows {
        let _ = writeln!(w, "{},{}", csv_field(k), csv_field(v));
    }
    format!("{}{w}", comment(config))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn cmd_estimate(a: &EstimateArgs) -> CmdResult {
    let seed = resolve_seed(a.seed)?;
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(ApeError::Parameter(format!(
            "alpha must lie in (0, 1), got {}",
            a.alpha
        )));
    }
    let spec = estimator_for(a)?;
    let data = load_csv(&a.data.data, &roles(&a.data))?;
    let mut e = spec.run(&data, seed)?;
    e.set_normal_ci(a.alpha);
    let boot = if a.bootstrap > 0 {
        Some(bootstrap(&data, &spec, a.bootstrap, a.alpha, seed)?)
    } else {
        None
    };
    let text = estimate_text(&spec, &e, boot.as_ref(), seed, a.alpha);
    print!("{text}");
    let Some(prefix) = &a.out else { return Ok(()) };
    let mut entries = data_entries(&a.data);
    entries.push(("method", a.method.clone()));
    match &spec {
        EstimatorSpec::RolsMl { learner, .. } => entries.push(("learner", learner.to_string())),
        EstimatorSpec::Dml {
            learner_r,
            learner_l,
            ..
        } => {
            entries.push(("learner_r", learner_r.to_string()));
            entries.push(("learner_l", learner_l.to_string()));
        }
        _ => {}
    }
    entries.extend([
        ("folds", a.folds.to_string()),
        ("in_sample", a.in_sample.to_string()),
        ("degree", a.degree.to_string()),
        ("knots", a.knots.to_string()),
        ("bootstrap", a.bootstrap.to_string()),
        ("alpha", a.alpha.to_string()),
        ("seed", seed.to_string()),
        ("out", prefix.display().to_string()),
    ]);
    let cfg = render_run_file("estimate", &entries);
    let rows = estimate_rows(&spec, &e, boot.as_ref(), seed);
    write(with_ext(prefix, "cfg"), &cfg)?;
    write(with_ext(prefix, "txt"), &format!("{}{text}", comment(&cfg)))?;
    write(with_ext(prefix, "csv"), &kv_csv(&cfg, &rows))?;
    let report: serde_json::Map<String, Value> = rows
        .into_iter()
        .map(|(k, v)| (k, Value::String(v)))
        .collect();
    write_json(prefix, Value::Object(report), &cfg)
}

fn figure1_outputs(r: &Figure1Result, prefix: Option<&PathBuf>, cfg: &str) -> CmdResult {
    print!("{}", r.to_text());
    let Some(prefix) = prefix else { return Ok(()) };
    write(with_ext(prefix, "cfg"), cfg)?;
    write(
        with_ext(prefix, "csv"),
        &format!("{}{}", comment(cfg), r.to_csv()),
    )?;
    write(
        with_ext(prefix, "txt"),
        &format!("{}{}", comment(cfg), r.to_text()),
    )?;
    let slope = |s: &apekit::simulation::SlopeFit| json!({ "slope": s.slope, "se": s.se, "z": s.z, "intercept": s.intercept });
    write_json(
        prefix,
        json!({
            "true_ape": r.true_ape,
            "replications": r.records.len(),
            "skipped": r.skipped,
            "rols_slope": slope(&r.rols_slope),
            "dml_slope": slope(&r.dml_slope),
            "bias_formula_slope": slope(&r.bias_formula_slope),
        }),
        cfg,
    )
}

fn parse_epochs(s: &str) -> Result<(usize, usize), ApeError> {
    let bad = || ApeError::Parameter(format!("epochs must look like LO:HI, got `{s}`"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

pub fn cmd_figure1(a: &Figure1Args) -> CmdResult {
    let seed = resolve_seed(a.seed)?;
    let epochs = parse_epochs(&a.epochs)?;
    let r = figure1_experiment(a.reps, a.n, epochs, seed)?;
    let mut entries = vec![
        ("reps", a.reps.to_string()),
        ("n", a.n.to_string()),
        ("epochs", format!("{}:{}", epochs.0, epochs.1)),
        ("seed", seed.to_string()),
    ];
    if let Some(p) = &a.out {
        entries.push(("out", p.display().to_string()));
    }
    figure1_outputs(&r, a.out.as_ref(), &render_run_file("figure1", &entries))
}

fn apply_overrides(g: &mut GridConfig, a: &SimulateArgs, seed: Option<u64>) {
    if a.full_scale {
        g.reps = 10_000;
        g.n_values = vec![100, 500, 1000, 5000];
    }
    if let Some(r) = a.reps {
        g.reps = r;
    }
    if let Some(s) = seed {
        g.seed = s;
    }
    if !a.n.is_empty() {
        g.n_values = a.n.clone();
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> CmdResult {
    // a grid file carries its own seed; flags and APE_SEED override it
    let seed = match a.seed {
        Some(s) => Some(s),
        None if std::env::var("APE_SEED").is_ok() => Some(resolve_seed(None)?),
        None => None,
    };
    if a.preset.as_deref() == Some("figure1") {
        let args = Figure1Args {
            reps: a.reps.unwrap_or(200),
            n: a.n.first().copied().unwrap_or(1000),
            epochs: "50:200".into(),
            seed: Some(seed.unwrap_or(1)),
            out: a.out.clone(),
        };
        return cmd_figure1(&args);
    }
    let mut grids = match (&a.grid, &a.preset) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(ApeError::Io)?;
            parse_grid_config(&text)?
        }
        (None, Some(name)) => vec![preset(name)?],
        _ => {
            return Err(ApeError::Parameter(
                "simulate needs exactly one of --grid or --preset".into(),
            ))
        }
    };
    for g in grids.iter_mut() {
        apply_overrides(g, a, seed);
        g.specs()?;
    }
    let cfg: String = grids
        .iter()
        .map(|g| g.to_string())
        .collect::<Vec<_>>()
        .join("\n");
    let multi = grids.len() > 1;
    for (i, g) in grids.iter().enumerate() {
        let rep = g.run()?;
        let text = rep.to_text();
        print!("{text}");
        if let Some(prefix) = &a.out {
            let p = if multi {
                let tag = if g.name.is_empty() {
                    i.to_string()
                } else {
                    g.name.replace(char::is_whitespace, "_")
                };
                PathBuf::from(format!("{}_{tag}", prefix.display()))
            } else {
                prefix.clone()
            };
            write(with_ext(&p, "csv"), &rep.to_csv())?;
            write(with_ext(&p, "txt"), &text)?;
            let cells: Vec<Value> = rep
                .cells
                .iter()
                .map(|c| {
                    json!({
                        "y_family": c.y_family.to_string(), "x_family": c.x_family.to_string(),
                        "error": c.error_dist.to_string(), "M": c.m, "n": c.n, "estimator": c.estimator,
                        "true_ape": c.true_ape, "mean": c.mean, "sd": c.sd, "mse": c.mse,
                        "reps": c.reps, "failures": c.failures,
                    })
                })
                .collect();
            write_json(&p, json!({ "cells": cells }), &g.to_string())?;
        }
    }
    if let Some(prefix) = &a.out {
        write(with_ext(prefix, "cfg"), &cfg)?;
    }
    Ok(())
}

fn residuals_for(
    a: &DiagnoseArgs,
    data: &Dataset,
    seed: u64,
) -> Result<(Vec<f64>, String), ApeError> {
    if let Some(nu) = data.nu_known() {
        return Ok((
            nu.to_vec(),
            format!(
                "known column {}",
                a.data.nu_column.as_deref().unwrap_or("?")
            ),
        ));
    }
    let l: LearnerSpec = a.learner.as_ref().expect("checked by caller").parse()?;
    let cf = crossfit_residualise(data, Target::Treatment, &l, a.folds, seed)?;
    Ok((cf.residuals, format!("cross-fit {l}, {} folds", a.folds)))
}

pub fn cmd_diagnose(a: &DiagnoseArgs) -> CmdResult {
    let seed = resolve_seed(a.seed)?;
    if a.data.nu_column.is_none() && a.learner.is_none() {
        return Err(ApeError::Parameter(
            "diagnose needs a residual source: --nu-column or --learner".into(),
        ));
    }
    let data = load_csv(&a.data.data, &roles(&a.data))?;
    let (nu, source) = residuals_for(a, &data, seed)?;
    let prof = moment_profile(&nu, a.max_order, a.boot, seed)?;
    let weights = empirical_weights(&nu, a.max_order - 2)?;
    let mut text = format!(
        "residuals: {source}, n={}, bootstrap reps={}, seed={seed}\n",
        prof.n, a.boot
    );
    let _ = writeln!(
        text,
        "{:>3} {:>14} {:>14} {:>12} {:>5} {:>12}",
        "p", "E[nu^p]", "deviation", "boot se", "flag", "weight"
    );
    let mut rows = String::from("p,moment,deviation,se,flagged,weight\n");
    for p in 0..prof.deviations.len() {
        let w = weights[p].map_or("undefined".to_string(), |w| format!("{w:.6}"));
        let flag = if prof.flagged[p] { "*" } else { "" };
        let _ = writeln!(
            text,
            "{p:>3} {:>14.6} {:>14.6} {:>12.6} {flag:>5} {w:>12}",
            prof.moments[p], prof.deviations[p], prof.std_errors[p]
        );
        let wc = weights[p].map_or(String::new(), |w| w.to_string());
        let _ = writeln!(
            rows,
            "{p},{},{},{},{},{wc}",
            prof.moments[p], prof.deviations[p], prof.std_errors[p], prof.flagged[p]
        );
    }
    print!("{text}");
    let Some(prefix) = &a.out else { return Ok(()) };
    let mut entries = data_entries(&a.data);
    if let Some(l) = &a.learner {
        entries.push(("learner", l.clone()));
    }
    entries.extend([
        ("folds", a.folds.to_string()),
        ("max_order", a.max_order.to_string()),
        ("boot", a.boot.to_string()),
        ("seed", seed.to_string()),
        ("out", prefix.display().to_string()),
    ]);
    let cfg = render_run_file("diagnose", &entries);
    write(with_ext(prefix, "cfg"), &cfg)?;
    write(with_ext(prefix, "txt"), &format!("{}{text}", comment(&cfg)))?;
    write(with_ext(prefix, "csv"), &format!("{}{rows}", comment(&cfg)))?;
    write_json(
        prefix,
        json!({
            "source": source,
            "moments": prof.moments,
            "deviations": prof.deviations,
            "std_errors": prof.std_errors,
            "flagged": prof.flagged,
            "weights": weights,
        }),
        &cfg,
    )
}
