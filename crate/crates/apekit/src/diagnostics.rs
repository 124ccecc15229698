//! Identification diagnostics: the moment ladder on (estimated) treatment
//! residuals, the weight/component decomposition of the residual regression,
//! OLS and Yitzhaki weights, and the IV moment conditions.

use crate::error::{ApeError, Result};
use crate::numkit::{mean, quantile_sorted, sorted_copy, std_dev, variance};
use crate::rng::{derive_seed, rng_from, tags};
use crate::simulation::{draw, draw_iv, DgpSpec, IvDgpSpec};
use rand::Rng as _;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

/// Raw moments `E[v^j]`, `j = 0..=max_order`.
fn raw_moments(v: &[f64], max_order: usize) -> Vec<f64> {
    let mut acc = vec![0.0; max_order + 1];
    for &x in v {
        let mut p = 1.0;
        for a in acc.iter_mut() {
            *a += p;
            p *= x;
        }
    }
    let n = v.len() as f64;
    acc.iter().map(|a| a / n).collect()
}

/// `E[v^{p+2}] / ((p+1) E[v^2]) - E[v^p]` for `p = 0..=max_order-2`.
fn ladder(m: &[f64]) -> Vec<f64> {
    (0..m.len() - 2)
        .map(|p| m[p + 2] / ((p + 1) as f64 * m[2]) - m[p])
        .collect()
}

fn resample_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from(seed);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentProfile {
    /// Raw sample moments, orders `0..=max_order`.
    pub moments: Vec<f64>,
    /// Ladder deviations at `p = 0..=max_order-2`.
    pub deviations: Vec<f64>,
    /// Bootstrap SEs of the deviations.
    pub std_errors: Vec<f64>,
    /// `|deviation| > 2 SE`.
    pub flagged: Vec<bool>,
    pub n: usize,
    pub boot_reps: usize,
}

/// Sample moment ladder of `nu_hat` with bootstrap SEs from `boot_reps`
/// row resamples.
pub fn moment_profile(
    nu_hat: &[f64],
    max_order: usize,
    boot_reps: usize,
    seed: u64,
) -> Result<MomentProfile> {
    if max_order < 3 {
        return Err(ApeError::Parameter(format!(
            "max_order must be >= 3, got {max_order}"
        )));
    }
    if nu_hat.len() < 30 {
        return Err(ApeError::Size(format!(
            "moment profile needs n >= 30, got {}",
            nu_hat.len()
        )));
    }
    if boot_reps < 2 {
        return Err(ApeError::Parameter(format!(
            "boot_reps must be >= 2, got {boot_reps}"
        )));
    }
    let moments = raw_moments(nu_hat, max_order);
    if !(population_var(&moments) > 0.0) || !moments.iter().all(|m| m.is_finite()) {
        return Err(ApeError::Degenerate("residuals have no variance".into()));
    }
    let deviations = ladder(&moments);
    let n = nu_hat.len();
    let boots: Vec<Vec<f64>> = (0..boot_reps)
        .into_par_iter()
        .map(|b| {
            let idx = resample_indices(n, derive_seed(seed, tags::DIAG_BOOT, b as u64));
            let v: Vec<f64> = idx.iter().map(|&i| nu_hat[i]).collect();
            ladder(&raw_moments(&v, max_order))
        })
        .collect();
    let std_errors: Vec<f64> = (0..deviations.len())
        .map(|j| {
            let col: Vec<f64> = boots
                .iter()
                .map(|d| d[j])
                .filter(|d| d.is_finite())
                .collect();
            if col.len() < 2 {
                f64::NAN
            } else {
                std_dev(&col)
            }
        })
        .collect();
    let flagged = deviations
        .iter()
        .zip(&std_errors)
        .map(|(d, s)| d.abs() > 2.0 * s)
        .collect();
    Ok(MomentProfile {
        moments,
        deviations,
        std_errors,
        flagged,
        n,
        boot_reps,
    })
}

/// An undefined entry has a lower moment indistinguishable from zero:
/// `|E_n[v^j]| <= 3 sd(v^j) / sqrt(n)`.
fn moment_is_zero(v: &[f64], j: usize, m_j: f64) -> bool {
    if j == 0 {
        return false;
    }
    let pow: Vec<f64> = v.iter().map(|x| x.powi(j as i32)).collect();
    m_j.abs() <= 3.0 * std_dev(&pow) / (v.len() as f64).sqrt()
}

/// `E[v^2] - E[v]^2`, set to zero when it is cancellation noise.
fn population_var(m: &[f64]) -> f64 {
    let v = m[2] - m[1] * m[1];
    if v > 1e-12 * m[2] {
        v
    } else {
        0.0
    }
}

/// Sample weights `(E[v^{p+2}] - E[v]E[v^{p+1}]) / ((p+1) Var(v) E[v^p])`
/// for `p = 0..=max_p`; `None` where `E[v^p]` is statistically zero.
pub fn empirical_weights(nu_hat: &[f64], max_p: usize) -> Result<Vec<Option<f64>>> {
    if nu_hat.len() < 2 {
        return Err(ApeError::Size("need at least two residuals".into()));
    }
    let m = raw_moments(nu_hat, max_p + 2);
    let var = population_var(&m);
    if !(var > 0.0) {
        return Err(ApeError::Degenerate("residuals have no variance".into()));
    }
    Ok((0..=max_p)
        .map(|p| {
            if moment_is_zero(nu_hat, p, m[p]) {
                None
            } else {
                Some((m[p + 2] - m[1] * m[p + 1]) / ((p + 1) as f64 * var * m[p]))
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow {
    pub m: usize,
    pub p: usize,
    /// `None` when `E[nu^p]` is statistically zero.
    pub weight: Option<f64>,
    /// `m E[r^{m-1-p} g_m] E[nu^p]`
    pub ape_component: f64,
    /// `C(m-1,p) * component * weight`, in a form that stays finite when
    /// the weight is undefined.
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub rows: Vec<WeightRow>,
    pub reconstructed_beta: f64,
    /// `Cov_n(nu, Y) / Var_n(nu)` on the same draw.
    pub direct_beta: f64,
    /// Sample mean of the APE integrand on the same draw.
    pub sample_ape: f64,
    pub n: usize,
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Decompose the residual-regression coefficient of one large draw into
/// per-`(m, p)` APE components and weights, using the true `nu`, `r(Z)` and
/// `g_m(Z)`. Components factor the `Z`-part and the `nu`-part, which is where
/// independence enters.
pub fn weight_decomposition(spec: &DgpSpec, n: usize, seed: u64) -> Result<WeightTable> {
    let d = draw(&spec.with_n(n), seed)?;
    let nu = &d.nu_true;
    let big_m = spec.m;
    let mom = raw_moments(nu, big_m + 2);
    let var = population_var(&mom);
    if !(var > 0.0) {
        return Err(ApeError::Degenerate(
            "treatment error has no variance".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut recon = 0.0;
    for m in 1..=big_m {
        let g = d.g_components.col(m);
        for p in 0..m {
            let e = (m - 1 - p) as i32;
            let zpart = d
                .r_of_z
                .iter()
                .zip(g)
                .map(|(r, gv)| r.powi(e) * gv)
                .sum::<f64>()
                / n as f64;
            let component = m as f64 * zpart * mom[p];
            let num = (mom[p + 2] - mom[1] * mom[p + 1]) / ((p + 1) as f64 * var);
            let weight = if moment_is_zero(nu, p, mom[p]) {
                None
            } else {
                Some(num / mom[p])
            };
            let contribution = binom(m - 1, p) * m as f64 * zpart * num;
            recon += contribution;
            rows.push(WeightRow {
                m,
                p,
                weight,
                ape_component: component,
                contribution,
            });
        }
    }
    let y = d.dataset.y();
    let (mn, my) = (mean(nu), mean(y));
    let cov = nu
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mn) * (b - my))
        .sum::<f64>()
        / n as f64;
    Ok(WeightTable {
        rows,
        reconstructed_beta: recon,
        direct_beta: cov / var,
        sample_ape: mean(&d.ape_contrib),
        n,
    })
}

/// Weights OLS of `Y` on `X` puts on the APE of each power `X^m`:
/// `(E[X^{m+1}] - E[X]E[X^m]) / (m Var(X) E[X^{m-1}])`, `m = 1..=max_m`.
pub fn ols_taylor_weights(x: &[f64], max_m: usize) -> Result<Vec<Option<f64>>> {
    if max_m == 0 {
        return Err(ApeError::Parameter("max_m must be >= 1".into()));
    }
    empirical_weights(x, max_m - 1)
}

/// Silverman's rule `0.9 min(sd, IQR/1.34) n^{-1/5}`.
fn silverman_bandwidth(sorted: &[f64]) -> f64 {
    let sd = std_dev(sorted);
    let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (sorted.len() as f64).powf(-0.2)
}

/// `omega(g) = (E[X|X>=g] - E[X|X<g]) P(X>=g) P(X<g) / f(g)` at each grid
/// point, with a Gaussian kernel density for `f`.
pub fn yitzhaki_weights(x: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 100 {
        return Err(ApeError::Size(format!(
            "Yitzhaki weights need n >= 100, got {n}"
        )));
    }
    let s = sorted_copy(x);
    let (lo, hi) = (s[0], s[n - 1]);
    if !(hi > lo) {
        return Err(ApeError::Degenerate("treatment has no variation".into()));
    }
    let h = silverman_bandwidth(&s);
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in &s {
        prefix.push(prefix.last().unwrap() + v);
    }
    let total = prefix[n];
    let norm = 1.0 / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&g| {
            if !(g > lo && g < hi) {
                return Err(ApeError::Range(format!(
                    "grid point {g} outside the open sample range ({lo}, {hi})"
                )));
            }
            let below = s.partition_point(|v| *v < g);
            let above = n - below;
            let mean_below = prefix[below] / below as f64;
            let mean_above = (total - prefix[below]) / above as f64;
            let (pb, pa) = (below as f64 / n as f64, above as f64 / n as f64);
            let f = norm
                * s.iter()
                    .map(|v| (-0.5 * ((g - v) / h).powi(2)).exp())
                    .sum::<f64>();
            Ok((mean_above - mean_below) * pa * pb / f)
        })
        .collect()
}

/// Sample covariance between Yitzhaki weights on `grid` and the partial
/// derivative evaluated there. Reported raw; there is no reference
/// distribution for it.
pub fn yitzhaki_derivative_covariance(x: &[f64], grid: &[f64], derivative: &[f64]) -> Result<f64> {
    if grid.len() != derivative.len() || grid.len() < 2 {
        return Err(ApeError::Shape(
            "grid and derivative must have equal length >= 2".into(),
        ));
    }
    let w = yitzhaki_weights(x, grid)?;
    let (mw, md) = (mean(&w), mean(derivative));
    let c = w
        .iter()
        .zip(derivative)
        .map(|(a, b)| (a - mw) * (b - md))
        .sum::<f64>()
        / (grid.len() as f64 - 1.0);
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IvCondition {
    /// `E[W zeta^m g_m(Z)] = 0`
    Mc1,
    /// `E[W r^{p+1}] / ((p+1) E[W r]) - E[r^p] = 0`
    Mc2,
}

impl IvCondition {
    pub fn as_str(&self) -> &'static str {
        match self {
            IvCondition::Mc1 => "IV_MC1",
            IvCondition::Mc2 => "IV_MC2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvCheck {
    pub condition: IvCondition,
    /// `m` for MC1 and `p` for MC2.
    pub order: usize,
    /// `all`, or a quartile cell such as `zeta:q2` or `z1:q4`.
    pub cell: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    /// `|z| > 2`
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvMomentReport {
    pub checks: Vec<IvCheck>,
    /// Bonferroni-adjusted critical value used for the family verdicts.
    pub mc1_critical: f64,
    pub mc2_critical: f64,
    pub mc1_pass: bool,
    pub mc2_pass: bool,
    pub n: usize,
    pub boot_reps: usize,
}

struct IvInputs<'a> {
    w: &'a [f64],
    r: &'a [f64],
    zeta: &'a [f64],
    g: Vec<&'a [f64]>,
    /// Quartile labels `0..4` per row for zeta and each control.
    cells: Vec<(String, Vec<u8>)>,
}

fn quartile_labels(v: &[f64]) -> Vec<u8> {
    let s = sorted_copy(v);
    let q = [
        quantile_sorted(&s, 0.25),
        quantile_sorted(&s, 0.5),
        quantile_sorted(&s, 0.75),
    ];
    v.iter()
        .map(|x| q.iter().filter(|c| x > c).count() as u8)
        .collect()
}

/// Every statistic in a fixed order over the rows `idx`.
fn iv_statistics(inp: &IvInputs, idx: &[usize], m_max: usize) -> Result<Vec<f64>> {
    let n = idx.len() as f64;
    let mut out = Vec::new();
    for m in 0..=m_max {
        let g = inp.g[m];
        out.push(
            idx.iter()
                .map(|&i| inp.w[i] * inp.zeta[i].powi(m as i32) * g[i])
                .sum::<f64>()
                / n,
        );
    }
    let ewr = idx.iter().map(|&i| inp.w[i] * inp.r[i]).sum::<f64>() / n;
    if !(ewr.abs() > 0.0) || !ewr.is_finite() {
        return Err(ApeError::Degenerate(
            "instrument is uncorrelated with the first stage".into(),
        ));
    }
    let stat = |rows: &mut dyn Iterator<Item = usize>, p: usize| {
        let (mut a, mut b, mut c) = (0.0, 0.0, 0usize);
        for i in rows {
            a += inp.w[i] * inp.r[i].powi(p as i32 + 1);
            b += inp.r[i].powi(p as i32);
            c += 1;
        }
        if c == 0 {
            f64::NAN
        } else {
            a / c as f64 / ((p + 1) as f64 * ewr) - b / c as f64
        }
    };
    for p in 0..m_max {
        out.push(stat(&mut idx.iter().copied(), p));
        for (_, lab) in &inp.cells {
            for q in 0..4u8 {
                out.push(stat(&mut idx.iter().copied().filter(|&i| lab[i] == q), p));
            }
        }
    }
    Ok(out)
}

fn bonferroni(k: usize) -> f64 {
    let z = Normal::standard().inverse_cdf(1.0 - 0.05 / (2.0 * k as f64));
    z.max(2.0)
}

/// Monte Carlo check of both IV moment families on one draw of `spec`, with
/// bootstrap SEs. MC2 is checked unconditionally and within quartiles of
/// `zeta` and of each control, always against the unconditional `E[W r]`.
pub fn iv_moment_check(
    spec: &IvDgpSpec,
    m_max: usize,
    n: usize,
    boot_reps: usize,
    seed: u64,
) -> Result<IvMomentReport> {
    if m_max == 0 {
        return Err(ApeError::Parameter("m_max must be >= 1".into()));
    }
    if boot_reps < 2 {
        return Err(ApeError::Parameter(format!(
            "boot_reps must be >= 2, got {boot_reps}"
        )));
    }
    if n < 100 {
        return Err(ApeError::Size(format!(
            "IV moment check needs n >= 100, got {n}"
        )));
    }
    let mut s = spec.clone();
    s.n = n;
    s.m = s.m.max(m_max);
    let d = draw_iv(&s, seed)?;
    let z = d.dataset.z();
    let mut cells = vec![("zeta".to_string(), quartile_labels(&d.zeta))];
    for j in 0..z.ncols() {
        cells.push((format!("z{}", j + 1), quartile_labels(z.col(j))));
    }
    let inp = IvInputs {
        w: &d.w,
        r: &d.r_of_w,
        zeta: &d.zeta,
        g: (0..=m_max).map(|m| d.g_components.col(m)).collect(),
        cells,
    };
    let all: Vec<usize> = (0..n).collect();
    let point = iv_statistics(&inp, &all, m_max)?;
    let boots: Vec<Vec<f64>> = (0..boot_reps)
        .into_par_iter()
        .map(|b| {
            let idx = resample_indices(n, derive_seed(seed, tags::DIAG_BOOT, b as u64));
            iv_statistics(&inp, &idx, m_max)
        })
        .collect::<Result<_>>()?;
    let mut labels: Vec<(IvCondition, usize, String)> = (0..=m_max)
        .map(|m| (IvCondition::Mc1, m, "all".to_string()))
        .collect();
    for p in 0..m_max {
        labels.push((IvCondition::Mc2, p, "all".into()));
        for (name, _) in &inp.cells {
            for q in 0..4 {
                labels.push((IvCondition::Mc2, p, format!("{name}:q{}", q + 1)));
            }
        }
    }
    let checks: Vec<IvCheck> = labels
        .into_iter()
        .enumerate()
        .map(|(j, (condition, order, cell))| {
            let col: Vec<f64> = boots
                .iter()
                .map(|b| b[j])
                .filter(|v| v.is_finite())
                .collect();
            let se = if col.len() < 2 {
                f64::NAN
            } else {
                variance(&col).sqrt()
            };
            let estimate = point[j];
            // an identically zero statistic (p = 0) has zero SE and passes
            let z = if se > 0.0 {
                estimate / se
            } else if estimate.abs() < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            IvCheck {
                condition,
                order,
                cell,
                estimate,
                se,
                z,
                flagged: z.abs() > 2.0,
            }
        })
        .collect();
    let count = |c: IvCondition| checks.iter().filter(|k| k.condition == c).count();
    let (mc1_critical, mc2_critical) = (
        bonferroni(count(IvCondition::Mc1)),
        bonferroni(count(IvCondition::Mc2)),
    );
    let pass = |c: IvCondition, crit: f64| {
        checks
            .iter()
            .filter(|k| k.condition == c)
            .all(|k| k.z.abs() <= crit)
    };
    Ok(IvMomentReport {
        mc1_pass: pass(IvCondition::Mc1, mc1_critical),
        mc2_pass: pass(IvCondition::Mc2, mc2_critical),
        checks,
        mc1_critical,
        mc2_critical,
        n,
        boot_reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_of_exact_normal_moments_is_zero() {
        let m = crate::distributions::normal_moments(0.0, 1.0, 8);
        for d in ladder(&m) {
            assert!(d.abs() < 1e-12);
        }
    }

    #[test]
    fn binomials() {
        assert_eq!(binom(2, 1), 2.0);
        assert_eq!(binom(4, 2), 6.0);
        assert_eq!(binom(0, 0), 1.0);
    }

    #[test]
    fn constant_residuals_are_degenerate() {
        let v = vec![0.0; 50];
        assert!(matches!(
            moment_profile(&v, 4, 10, 1),
            Err(ApeError::Degenerate(_))
        ));
        assert!(matches!(
            empirical_weights(&[2.0; 40], 2),
            Err(ApeError::Degenerate(_))
        ));
    }

    #[test]
    fn bonferroni_floor() {
        assert_eq!(bonferroni(1), 2.0);
        assert!(bonferroni(26) > 3.0);
    }
}
