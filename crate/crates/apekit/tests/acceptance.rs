//! Acceptance run: one PASS/FAIL line per criterion, with the numbers behind
//! each verdict. Runs with `harness = false` so the report is always printed.
//!
//! A red criterion is reported, not hidden, and does not fail `cargo test`
//! unless `APEKIT_ACCEPTANCE_STRICT=1`. `APEKIT_ACCEPTANCE=3,5` runs a subset.

use apekit::diagnostics::{iv_moment_check, moment_profile, weight_decomposition};
use apekit::distributions::{
    analytic_moment, assumption2_deviation, kurtosis, mesokurtic_a, ErrorDistribution,
};
use apekit::estimators::{iv_ape_data, ols_fwl, rols, rols_known, EstimatorSpec};
use apekit::inference::bootstrap;
use apekit::nuisance::{crossfit_residualise, select_by_cv, LearnerSpec, Target};
use apekit::numkit::{sandwich_variance, solve_ls, DesignMatrix, Matrix};
use apekit::rng::rng_from;
use apekit::simulation::{
    draw, draw_iv, figure1_experiment, figure1_experiment_with, run_grid, DgpSpec, Family,
    Figure1Options, IvDgpSpec, IvOutcome, IvTreatment, SimCell, SimReport,
};
use apekit::Dataset;
use rand::Rng as _;
use rand_distr::StandardNormal;
use std::f64::consts::PI;
use std::time::Instant;

const SEED: u64 = 12345;
// pilot draws for learner selection stay clear of the replication seeds
const PILOT: u64 = SEED + 1_000_000;
const GMIX: ErrorDistribution = ErrorDistribution::GaussianMixture { mu: 0.9 };

type Outcome = apekit::Result<(bool, Vec<String>)>;

fn normal() -> ErrorDistribution {
    ErrorDistribution::standard_normal()
}

fn spec(y: Family, x: Family, m: usize, e: ErrorDistribution, n: usize) -> DgpSpec {
    DgpSpec::new(y, x, m, e, n).expect("valid design")
}

fn cell<'a>(r: &'a SimReport, e: &EstimatorSpec, y: Family, x: Family, m: usize) -> &'a SimCell {
    let name = e.to_string();
    r.cells
        .iter()
        .find(|c| c.estimator == name && c.y_family == y && c.x_family == x && c.m == m)
        .expect("cell")
}

fn describe(c: &SimCell) -> String {
    format!(
        "{}/{} M={} n={} {}: mean {:.4} sd {:.4} truth {:.4} bias {:+.4} ({} reps, {} failed)",
        c.y_family,
        c.x_family,
        c.m,
        c.n,
        c.estimator,
        c.mean,
        c.sd,
        c.true_ape,
        c.bias(),
        c.reps,
        c.failures
    )
}

fn gbt_grid() -> Vec<LearnerSpec> {
    let mut v = Vec::new();
    for trees in [300, 1000] {
        for depth in [2, 3, 4] {
            for lr in [0.03, 0.1] {
                for leaf in [5, 20] {
                    v.push(LearnerSpec::gbt(trees, depth, lr, leaf));
                }
            }
        }
    }
    v
}

fn cv_pick(
    s: &DgpSpec,
    cands: &[LearnerSpec],
    notes: &mut Vec<String>,
) -> apekit::Result<LearnerSpec> {
    let pilot = draw(s, PILOT)?;
    let sel = select_by_cv(&pilot.dataset, Target::Treatment, cands, 5, PILOT)?;
    let mse = sel
        .scores
        .iter()
        .find(|(l, _)| *l == sel.best)
        .map_or(f64::NAN, |p| p.1);
    notes.push(format!(
        "cv on a pilot draw of {}/{}: {} (cv mse {mse:.4}, {} candidates)",
        s.y_family,
        s.x_family,
        sel.best,
        cands.len()
    ));
    Ok(sel.best)
}

fn rols_ml(l: LearnerSpec) -> EstimatorSpec {
    EstimatorSpec::RolsMl {
        learner: l,
        folds: 5,
        in_sample: false,
    }
}

fn c1() -> Outcome {
    let t = Instant::now();
    let mut specs = Vec::new();
    for x in [Family::Additive, Family::Simple, Family::Complex] {
        specs.push(spec(Family::Additive, x, 1, normal(), 5000));
        for m in 1..=3 {
            specs.push(spec(Family::Complex, x, m, normal(), 5000));
        }
    }
    let r = run_grid(&specs, &[EstimatorSpec::RolsKnown], 500, SEED)?;
    let mut ok = true;
    let mut notes = Vec::new();
    let mut worst: f64 = 0.0;
    for c in &r.cells {
        let z = c.bias() / (c.sd / (c.reps as f64).sqrt());
        worst = worst.max(z.abs());
        if z.abs() > 2.0 {
            ok = false;
            notes.push(format!("outside 2 SE (z = {z:+.2}): {}", describe(c)));
        }
    }
    notes.push(format!(
        "{} designs, largest |mean - truth| / SE = {worst:.2}",
        r.cells.len()
    ));
    let headers = [
        (Family::Simple, [0.17, -0.14, -2.06]),
        (Family::Complex, [0.17, 0.21, 1.52]),
    ];
    for (x, vals) in headers {
        for (m, h) in (1..=3).zip(vals) {
            let c = cell(&r, &EstimatorSpec::RolsKnown, Family::Complex, x, m);
            let good = (c.true_ape - h).abs() <= 0.02;
            ok &= good;
            notes.push(format!(
                "oracle complex/{x} M={m}: {:.4} vs header {h} {}",
                c.true_ape,
                if good { "ok" } else { "MISMATCH" }
            ));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ok &= secs <= 300.0;
    notes.push(format!("runtime {secs:.1} s (limit 300 s)"));
    Ok((ok, notes))
}

fn c2() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    let mut cands: Vec<LearnerSpec> = (1..=3).map(|d| LearnerSpec::poly(d, 0.0)).collect();
    cands.extend(gbt_grid());
    for x in [Family::Additive, Family::Simple, Family::Complex] {
        let s = spec(Family::Additive, x, 1, normal(), 1000);
        let best = cv_pick(&s, &cands, &mut notes)?;
        let ests = [
            EstimatorSpec::SimpleOls,
            EstimatorSpec::InteractedOls { degree: 3 },
            EstimatorSpec::PlSpline {
                degree: 3,
                knots: 5,
            },
            rols_ml(best),
        ];
        let r = run_grid(&[s], &ests, 500, SEED)?;
        for c in &r.cells {
            let good = (c.mean - 1.0).abs() <= 0.03;
            ok &= good;
            notes.push(format!(
                "{} {}",
                if good { "ok  " } else { "MISS" },
                describe(c)
            ));
        }
    }
    Ok((ok, notes))
}

fn c3() -> Outcome {
    let mut notes = Vec::new();
    let s2 = spec(Family::Complex, Family::Simple, 2, normal(), 5000);
    let best = cv_pick(&s2, &gbt_grid(), &mut notes)?;
    let (so, pl, io, rm) = (
        EstimatorSpec::SimpleOls,
        EstimatorSpec::PlSpline {
            degree: 3,
            knots: 5,
        },
        EstimatorSpec::InteractedOls { degree: 3 },
        rols_ml(best),
    );
    let r = run_grid(
        &[s2],
        &[so.clone(), pl.clone(), io.clone(), rm.clone()],
        500,
        SEED,
    )?;
    let x = Family::Simple;
    let checks = [
        (cell(&r, &so, Family::Complex, x, 2), -1.2, -0.9),
        (cell(&r, &pl, Family::Complex, x, 2), -1.25, -0.95),
        (cell(&r, &io, Family::Complex, x, 2), -0.19, -0.09),
        (cell(&r, &rm, Family::Complex, x, 2), -0.19, -0.09),
    ];
    let mut ok = true;
    for (c, lo, hi) in checks {
        let good = c.mean >= lo && c.mean <= hi;
        ok &= good;
        notes.push(format!(
            "{} {} (target [{lo}, {hi}])",
            if good { "ok  " } else { "MISS" },
            describe(c)
        ));
    }
    let r1 = run_grid(
        &[spec(Family::Complex, Family::Simple, 1, normal(), 5000)],
        std::slice::from_ref(&so),
        500,
        SEED,
    )?;
    let c1 = cell(&r1, &so, Family::Complex, x, 1);
    let m2 = cell(&r, &so, Family::Complex, x, 2);
    let flip = c1.true_ape > 0.0 && c1.mean < 0.0 && m2.true_ape < 0.0 && m2.mean < 0.0;
    ok &= flip;
    notes.push(format!(
        "sign flip {}: M=1 truth {:.3} simple OLS {:.3}; M=2 truth {:.3} simple OLS {:.3}",
        if flip { "reproduced" } else { "NOT reproduced" },
        c1.true_ape,
        c1.mean,
        m2.true_ape,
        m2.mean
    ));
    Ok((ok, notes))
}

fn c4() -> Outcome {
    let specs: Vec<DgpSpec> = (1..=3)
        .map(|m| spec(Family::Complex, Family::Complex, m, GMIX, 5000))
        .collect();
    let (rk, so, pl) = (
        EstimatorSpec::RolsKnown,
        EstimatorSpec::SimpleOls,
        EstimatorSpec::PlSpline {
            degree: 3,
            knots: 5,
        },
    );
    let r = run_grid(&specs, &[rk.clone(), so.clone(), pl.clone()], 500, SEED)?;
    let x = Family::Complex;
    let mut ok = true;
    let mut notes = Vec::new();
    for m in 1..=2 {
        let c = cell(&r, &rk, Family::Complex, x, m);
        let good = c.bias().abs() <= 0.03;
        ok &= good;
        notes.push(format!(
            "{} {} (|bias| <= 0.03)",
            if good { "ok  " } else { "MISS" },
            describe(c)
        ));
    }
    let (c, o, p) = (
        cell(&r, &rk, Family::Complex, x, 3),
        cell(&r, &so, Family::Complex, x, 3),
        cell(&r, &pl, Family::Complex, x, 3),
    );
    let big = c.bias().abs() >= 0.1;
    let less = c.bias().abs() < o.bias().abs() && c.bias().abs() < p.bias().abs();
    ok &= big && less;
    notes.push(format!(
        "{} {} (|bias| >= 0.1)",
        if big { "ok  " } else { "MISS" },
        describe(c)
    ));
    notes.push(format!(
        "{} {}",
        if less { "ok  " } else { "MISS" },
        describe(o)
    ));
    notes.push(format!(
        "{} {}",
        if less { "ok  " } else { "MISS" },
        describe(p)
    ));
    Ok((ok, notes))
}

fn c5() -> Outcome {
    let r = figure1_experiment(200, 1000, (50, 200), SEED)?;
    let (d, s, b) = (r.dml_slope, r.rols_slope, r.bias_formula_slope);
    let dml_ok = d.z.abs() < 2.0;
    let rols_ok = s.z.abs() > 2.0;
    let dir_ok = s.slope.signum() == b.slope.signum();
    let notes = vec![
        format!(
            "{} replications ({} skipped), truth {:.4}",
            r.records.len(),
            r.skipped,
            r.true_ape
        ),
        format!(
            "{} DML slope {:+.4} (HC0 se {:.4}, z {:+.2}; need |z| < 2)",
            if dml_ok { "ok  " } else { "MISS" },
            d.slope,
            d.se,
            d.z
        ),
        format!(
            "{} R-OLS slope {:+.4} (HC0 se {:.4}, z {:+.2}; need |z| > 2)",
            if rols_ok { "ok  " } else { "MISS" },
            s.slope,
            s.se,
            s.z
        ),
        format!(
            "{} bias formula slope {:+.4} (z {:+.2}) has the sign of the R-OLS slope",
            if dir_ok { "ok  " } else { "MISS" },
            b.slope,
            b.z
        ),
    ];
    Ok((r.records.len() >= 200 && dml_ok && rols_ok && dir_ok, notes))
}

fn c6() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    let n = 1_000_000;
    for m in 1..=3 {
        let s = spec(Family::Simple, Family::Simple, m, normal(), 10);
        let t = weight_decomposition(&s, n, SEED)?;
        let rel = (t.reconstructed_beta - t.direct_beta).abs() / t.direct_beta.abs();
        let good = rel <= 0.01;
        ok &= good;
        notes.push(format!(
            "{} simple/simple M={m}: reconstructed {:.5} direct {:.5} relative gap {:.2}% (limit 1%)",
            if good { "ok  " } else { "MISS" },
            t.reconstructed_beta,
            t.direct_beta,
            100.0 * rel
        ));
        for w in &t.rows {
            if let Some(v) = w.weight {
                let good = (v - 1.0).abs() <= 0.02;
                ok &= good;
                notes.push(format!(
                    "{} weight m={} p={}: {v:.4}",
                    if good { "ok  " } else { "MISS" },
                    w.m,
                    w.p
                ));
            }
        }
        // noise floor of the gap on independent draws, for the record only
        let gaps: Vec<f64> = (1..=8)
            .map(|k| {
                weight_decomposition(&s, n, SEED + k)
                    .map(|t| (t.reconstructed_beta - t.direct_beta) / t.direct_beta)
            })
            .collect::<apekit::Result<_>>()?;
        let mean = gaps.iter().sum::<f64>() / 8.0;
        let sd = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / 7.0).sqrt();
        notes.push(format!(
            "     M={m}: relative gap over 8 further seeds has mean {:+.2}% and sd {:.2}%",
            100.0 * mean,
            100.0 * sd
        ));
    }
    let g = weight_decomposition(&spec(Family::Simple, Family::Simple, 3, GMIX, 10), n, SEED)?;
    let w2 = g.rows.iter().find(|r| r.p == 2).and_then(|r| r.weight);
    let good = w2.is_some_and(|w| (w - 0.563).abs() <= 0.02);
    ok &= good;
    notes.push(format!(
        "{} gaussian mixture p=2 weight {:?} (target 0.563 +- 0.02)",
        if good { "ok  " } else { "MISS" },
        w2
    ));
    Ok((ok, notes))
}

fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, intervals: usize) -> f64 {
    let h = (hi - lo) / intervals as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..intervals {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

fn pdf(x: f64, mu: f64, sd: f64) -> f64 {
    let u = (x - mu) / sd;
    (-0.5 * u * u).exp() / (sd * (2.0 * PI).sqrt())
}

fn c7() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut rel = |a: f64, b: f64| worst = worst.max((a - b).abs() / b.abs().max(1.0));
    for (mu, sd) in [(0.0, 1.0), (1.0, 1.0), (-0.7, 0.5), (0.3, 2.0)] {
        let d = ErrorDistribution::Normal { mean: mu, sd };
        for p in 0..=8 {
            rel(
                analytic_moment(&d, p),
                simpson(
                    |x| x.powi(p as i32) * pdf(x, mu, sd),
                    mu - 18.0 * sd,
                    mu + 18.0 * sd,
                    400_000,
                ),
            );
        }
    }
    let s = (1.0f64 - 0.81).sqrt();
    for p in 0..=8 {
        let q = simpson(
            |x| x.powi(p as i32) * 0.5 * (pdf(x, 0.9, s) + pdf(x, -0.9, s)),
            -12.0,
            12.0,
            400_000,
        );
        rel(analytic_moment(&GMIX, p), q);
    }
    let a = mesokurtic_a();
    for p in 0..=8usize {
        let closed = if p % 2 == 1 {
            0.0
        } else {
            0.5 * (1.0 + a.powi(p as i32)) / (p as f64 + 1.0)
        };
        rel(
            analytic_moment(&ErrorDistribution::UniformMixture { a }, p),
            closed,
        );
        let (lo, hi) = (-1.0f64, 2.0f64);
        rel(
            analytic_moment(&ErrorDistribution::Uniform { lo, hi }, p),
            (hi.powi(p as i32 + 1) - lo.powi(p as i32 + 1)) / ((p as f64 + 1.0) * (hi - lo)),
        );
    }
    let moments_ok = worst <= 1e-9;
    let mut ladder: f64 = 0.0;
    for sd in [0.5, 1.0, 2.0] {
        let d = ErrorDistribution::Normal { mean: 0.0, sd };
        for (p, v) in assumption2_deviation(&d, 7)?.iter().enumerate() {
            ladder = ladder.max(v.abs() / analytic_moment(&d, p).abs().max(1.0));
        }
    }
    let ladder_ok = ladder <= 1e-12;
    let g = assumption2_deviation(&GMIX, 7)?;
    let first = g.iter().position(|v| v.abs() > 1e-12);
    let flag_ok = first == Some(2);
    let k = kurtosis(&ErrorDistribution::UniformMixture { a });
    let kurt_ok = (k - 3.0).abs() <= 1e-9;
    let notes = vec![
        format!("{} worst relative moment error vs quadrature and closed forms, orders <= 8: {worst:.2e}", tick(moments_ok)),
        format!("{} normal ladder deviations through order 8: max {ladder:.2e}", tick(ladder_ok)),
        format!("{} gaussian mixture first nonzero deviation at p = {first:?} ({:+.4})", tick(flag_ok), g[2]),
        format!("{} uniform mixture kurtosis {k:.15}", tick(kurt_ok)),
    ];
    Ok((moments_ok && ladder_ok && flag_ok && kurt_ok, notes))
}

fn tick(b: bool) -> &'static str {
    if b {
        "ok  "
    } else {
        "MISS"
    }
}

// Gauss-Jordan inverse and a triple-loop HC0, independent of the QR path.
fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let q = a.len();
    let mut m = a.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..q)
        .map(|i| (0..q).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for c in 0..q {
        let p = (c..q)
            .max_by(|&i, &j| m[i][c].abs().partial_cmp(&m[j][c].abs()).unwrap())
            .unwrap();
        m.swap(c, p);
        inv.swap(c, p);
        let d = m[c][c];
        for j in 0..q {
            m[c][j] /= d;
            inv[c][j] /= d;
        }
        for r in 0..q {
            if r != c {
                let f = m[r][c];
                for j in 0..q {
                    m[r][j] -= f * m[c][j];
                    inv[r][j] -= f * inv[c][j];
                }
            }
        }
    }
    inv
}

fn naive_hc0(x: &[Vec<f64>], u: &[f64]) -> Vec<Vec<f64>> {
    let q = x[0].len();
    let mut xtx = vec![vec![0.0; q]; q];
    let mut meat = vec![vec![0.0; q]; q];
    for (row, e) in x.iter().zip(u) {
        for a in 0..q {
            for b in 0..q {
                xtx[a][b] += row[a] * row[b];
                meat[a][b] += row[a] * row[b] * e * e;
            }
        }
    }
    let b = invert(&xtx);
    let mul = |l: &[Vec<f64>], r: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..q)
            .map(|i| {
                (0..q)
                    .map(|j| (0..q).map(|k| l[i][k] * r[k][j]).sum())
                    .collect()
            })
            .collect()
    };
    mul(&mul(&b, &meat), &b)
}

fn c8() -> Outcome {
    let mut rng = rng_from(SEED);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(12..=50usize);
        let q = rng.random_range(1..=5usize);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..q)
                    .map(|j| {
                        if j == 0 {
                            1.0
                        } else {
                            rng.sample::<f64, _>(StandardNormal)
                        }
                    })
                    .collect()
            })
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| {
                r.iter().sum::<f64>()
                    + (1.0 + r[q - 1].abs()) * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let d = DesignMatrix::new(
            Matrix::from_rows(&rows)?,
            (0..q).map(|j| format!("c{j}")).collect(),
        )?;
        let fit = solve_ls(&d, &y)?;
        let v = sandwich_variance(&d, &fit)?;
        let o = naive_hc0(&rows, &fit.residuals);
        let scale = (0..q).map(|j| o[j][j].abs()).fold(0.0, f64::max);
        for a in 0..q {
            for b in 0..q {
                worst = worst.max((v.matrix.get(a, b) - o[a][b]).abs() / scale);
            }
        }
    }
    let hc0_ok = worst <= 1e-10;

    let s = spec(Family::Additive, Family::Additive, 1, normal(), 1000);
    let mut hits = 0;
    for rep in 0..1000u64 {
        let mut e = rols_known(&draw(&s, SEED + rep)?.dataset)?;
        e.set_normal_ci(0.05);
        let (lo, hi) = e.ci.expect("ci");
        hits += usize::from(lo <= 1.0 && 1.0 <= hi);
    }
    let cover = hits as f64 / 10.0;
    let cover_ok = (93.0..=97.0).contains(&cover);

    let d = draw(&DgpSpec::figure1(1000), SEED)?;
    let l = LearnerSpec::gbt(300, 3, 0.03, 5);
    let dml = EstimatorSpec::Dml {
        learner_r: l.clone(),
        learner_l: l,
        folds: 4,
    };
    let e = dml.run(&d.dataset, SEED)?;
    let b = bootstrap(&d.dataset, &dml, 200, 0.05, SEED)?;
    let inf_se = e.std_error.expect("dml se");
    let gap = (inf_se - b.se).abs() / b.se;
    let se_ok = gap <= 0.2;
    let notes = vec![
        format!("{} sandwich vs naive HC0 on 200 instances with n <= 50: worst relative error {worst:.2e}", tick(hc0_ok)),
        format!("{} known-nu R-OLS 95% interval coverage on the additive design: {cover:.1}% of 1000 (need 93 to 97)", tick(cover_ok)),
        format!(
            "{} DML on the imperfect-training design ({dml}): influence-function se {inf_se:.4}, bootstrap se {:.4} (B=200), gap {:.1}%",
            tick(se_ok),
            b.se,
            100.0 * gap
        ),
    ];
    Ok((hc0_ok && cover_ok && se_ok, notes))
}

fn random_instance(seed: u64) -> (Dataset, Vec<f64>) {
    let mut rng = rng_from(seed);
    let n = rng.random_range(20..300usize);
    let z1: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let z2: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0).collect();
    let r: Vec<f64> = (0..n).map(|i| z1[i] * z2[i] + z2[i].sin()).collect();
    let x: Vec<f64> = (0..n)
        .map(|i| r[i] + 0.8 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let y: Vec<f64> = (0..n)
        .map(|i| x[i] * z1[i] + 0.3 * x[i] * x[i] + rng.sample::<f64, _>(StandardNormal))
        .collect();
    (
        Dataset::new(
            y,
            x,
            Matrix::from_columns(n, &[z1, z2]).expect("controls"),
            None,
            None,
        )
        .expect("dataset"),
        r,
    )
}

fn c9() -> Outcome {
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let (data, r) = random_instance(SEED + k);
        let n = data.n();
        let fwl = ols_fwl(&data, &r)?.point;
        let d =
            DesignMatrix::from_named(n, vec![("r".into(), r.clone()), ("1".into(), vec![1.0; n])])?;
        let resid = solve_ls(&d, data.x())?.residuals;
        let direct = rols(&resid, data.y())?.point;
        worst = worst.max((fwl - direct).abs() / direct.abs().max(1.0));
    }
    let ok = worst <= 1e-10;
    Ok((
        ok,
        vec![format!(
            "{} worst relative FWL gap over 100 random instances: {worst:.2e}",
            tick(ok)
        )],
    ))
}

fn c10() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    let classical = IvDgpSpec::new(
        IvTreatment::Linear(1.0),
        IvOutcome::Constant,
        1,
        0.6,
        10_000,
    )?;
    let linear = IvDgpSpec::new(IvTreatment::Linear(1.0), IvOutcome::Complex, 1, 0.5, 10)?;
    let quad = IvDgpSpec::new(IvTreatment::Quadratic, IvOutcome::Complex, 2, 0.5, 10)?;
    for k in 0..3 {
        let seed = SEED + k;
        let e = iv_ape_data(&draw_iv(&classical, seed)?.dataset)?;
        let se = e.std_error.expect("iv se");
        let good = (e.point - 1.0).abs() <= 3.0 * se;
        let lin = iv_moment_check(&linear, 1, 20_000, 200, seed)?;
        let lin_ok = lin.mc1_pass && lin.mc2_pass;
        let q = iv_moment_check(&quad, 2, 20_000, 200, seed)?;
        let q_ok = !q.mc2_pass;
        ok &= good && lin_ok && q_ok;
        notes.push(format!(
            "{} seed {seed}: classical IV {:.4} (se {se:.4}, truth 1); linear r passes MC1 {} MC2 {}; r = W + W^2 fails MC2 {}",
            tick(good && lin_ok && q_ok),
            e.point,
            lin.mc1_pass,
            lin.mc2_pass,
            !q.mc2_pass
        ));
    }
    Ok((ok, notes))
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("pool")
        .install(f)
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn pipelines() -> Vec<(&'static str, String)> {
    let gbt = LearnerSpec::gbt(30, 2, 0.1, 10);
    let mlp = LearnerSpec::mlp(2, 16, 20, 0.01, 32);
    let specs = [
        spec(Family::Complex, Family::Simple, 1, normal(), 300),
        spec(Family::Complex, Family::Simple, 2, normal(), 300),
    ];
    let ests = [
        EstimatorSpec::SimpleOls,
        rols_ml(gbt.clone()),
        EstimatorSpec::Dml {
            learner_r: mlp.clone(),
            learner_l: gbt.clone(),
            folds: 3,
        },
        EstimatorSpec::RolsKnown,
    ];
    let grid = run_grid(&specs, &ests, 8, SEED).expect("grid").to_csv();
    let mut o = Figure1Options::new(20, 200, (5, 10), SEED);
    o.oracle_n = 1_000_000;
    let fig = figure1_experiment_with(&o).expect("figure").to_csv();
    let d = draw(&specs[0], SEED).expect("draw");
    let boot = bootstrap(&d.dataset, &rols_ml(gbt), 60, 0.05, SEED).expect("bootstrap");
    let cf = crossfit_residualise(&d.dataset, Target::Outcome, &mlp, 5, SEED).expect("crossfit");
    let prof = moment_profile(&d.nu_true, 5, 100, SEED).expect("profile");
    vec![
        ("grid", grid),
        ("figure", fig),
        ("bootstrap", join(&boot.estimates)),
        ("crossfit", join(&cf.residuals)),
        ("moment bootstrap", join(&prof.std_errors)),
    ]
}

fn c11() -> Outcome {
    let a = with_pool(1, pipelines);
    let b = with_pool(1, pipelines);
    let c = with_pool(4, pipelines);
    let mut ok = true;
    let mut notes = Vec::new();
    for ((name, x), ((_, y), (_, z))) in a.iter().zip(b.iter().zip(&c)) {
        let same = x == y && x == z;
        ok &= same;
        notes.push(format!(
            "{} {name}: {} bytes, rerun and 4-thread run identical: {same}",
            tick(same),
            x.len()
        ));
    }
    Ok((ok, notes))
}

type Criterion = (&'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 11] = [
    ("known-nu R-OLS matches the oracle APE on every design", c1),
    ("additive Y: all estimators recover 1", c2),
    ("complex Y, simple X, M=2: bias pattern and sign flip", c3),
    (
        "gaussian mixture errors: R-OLS exact to M=2, biased at M=3",
        c4,
    ),
    ("imperfect training: DML slope flat, R-OLS slope not", c5),
    ("weight decomposition and weight values", c6),
    ("moment machinery", c7),
    ("sandwich, coverage and DML standard errors", c8),
    ("FWL identity", c9),
    ("instrumental variables", c10),
    ("determinism across reruns and pool sizes", c11),
];

fn main() {
    // libtest flags such as --nocapture or a name filter are accepted and ignored
    let only: Option<Vec<usize>> = std::env::var("APEKIT_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let strict = std::env::var("APEKIT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    println!("acceptance run, seed {SEED}");
    let mut red = Vec::new();
    for (i, (title, f)) in CRITERIA.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let (pass, notes) = match f() {
            Ok(v) => v,
            Err(e) => (false, vec![format!("error: {e}")]),
        };
        println!(
            "criterion {id:>2} {} {title} ({:.1} s)",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
        for n in notes {
            println!("    {n}");
        }
        if !pass {
            red.push(id);
        }
    }
    if red.is_empty() {
        println!("all criteria pass");
    } else {
        println!("red criteria: {red:?}");
    }
    if strict && !red.is_empty() {
        std::process::exit(1);
    }
}
