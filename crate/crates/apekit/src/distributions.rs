//! Error distributions for the treatment noise, with exact moments.
//!
//! Normal moments follow the recursion
//! `E[X^{p+2}] = mu E[X^{p+1}] + sigma^2 (p+1) E[X^p]`; the mixtures reuse it
//! per component. Sampling draws the component label and the variate from one
//! ChaCha20 stream, so draws are identical on every platform.

use crate::error::{ApeError, Result};
use crate::rng::rng_from;
use rand_distr::StandardNormal;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorDistribution {
    Normal {
        mean: f64,
        sd: f64,
    },
    /// `0.5 N(mu, 1 - mu^2) + 0.5 N(-mu, 1 - mu^2)`: unit variance, thin tails.
    GaussianMixture {
        mu: f64,
    },
    /// `0.5 U(-1, 1) + 0.5 U(-a, a)`.
    UniformMixture {
        a: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
}

/// Half-width making the uniform mixture mesokurtic: `sqrt(5 + sqrt(24))`.
pub fn mesokurtic_a() -> f64 {
    (5.0 + 24f64.sqrt()).sqrt()
}

impl ErrorDistribution {
    pub fn standard_normal() -> Self {
        ErrorDistribution::Normal { mean: 0.0, sd: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ErrorDistribution::Normal { mean, sd } => {
                mean.is_finite() && sd.is_finite() && sd > 0.0
            }
            ErrorDistribution::GaussianMixture { mu } => mu > 0.0 && mu < 1.0,
            ErrorDistribution::UniformMixture { a } => a.is_finite() && a > 0.0,
            ErrorDistribution::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(ApeError::Parameter(format!(
                "invalid distribution parameters: {self}"
            )))
        }
    }

    /// Symmetric about zero, so odd moments vanish.
    pub fn is_symmetric(&self) -> bool {
        match *self {
            ErrorDistribution::Normal { mean, .. } => mean == 0.0,
            ErrorDistribution::GaussianMixture { .. }
            | ErrorDistribution::UniformMixture { .. } => true,
            ErrorDistribution::Uniform { lo, hi } => lo == -hi,
        }
    }

    pub fn draw_one(&self, rng: &mut impl rand::Rng) -> f64 {
        match *self {
            ErrorDistribution::Normal { mean, sd } => {
                mean + sd * rng.sample::<f64, _>(StandardNormal)
            }
            ErrorDistribution::GaussianMixture { mu } => {
                let s = (1.0 - mu * mu).sqrt();
                let c = if rng.random::<f64>() < 0.5 { mu } else { -mu };
                c + s * rng.sample::<f64, _>(StandardNormal)
            }
            ErrorDistribution::UniformMixture { a } => {
                let h = if rng.random::<f64>() < 0.5 { 1.0 } else { a };
                h * (2.0 * rng.random::<f64>() - 1.0)
            }
            ErrorDistribution::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

/// `n` draws, deterministic in `seed`.
pub fn sample(dist: &ErrorDistribution, n: usize, seed: u64) -> Result<Vec<f64>> {
    dist.validate()?;
    if n == 0 {
        return Err(ApeError::Parameter("sample size must be >= 1".into()));
    }
    let mut rng = rng_from(seed);
    Ok((0..n).map(|_| dist.draw_one(&mut rng)).collect())
}

/// Raw moments `E[X^0..=order]` of `N(mu, sigma^2)` via the two-term recursion.
pub fn normal_moments(mu: f64, sigma: f64, order: usize) -> Vec<f64> {
    let s2 = sigma * sigma;
    let mut m = vec![1.0, mu];
    for p in 0..order.saturating_sub(1) {
        let next = mu * m[p + 1] + s2 * (p + 1) as f64 * m[p];
        m.push(next);
    }
    m.truncate(order + 1);
    m
}

fn uniform_moment(lo: f64, hi: f64, p: usize) -> f64 {
    let k = (p + 1) as i32;
    (hi.powi(k) - lo.powi(k)) / ((p + 1) as f64 * (hi - lo))
}

/// Exact population moment `E[X^order]`.
pub fn analytic_moment(dist: &ErrorDistribution, order: usize) -> f64 {
    if order == 0 {
        return 1.0;
    }
    if order % 2 == 1 && dist.is_symmetric() {
        return 0.0;
    }
    match *dist {
        ErrorDistribution::Normal { mean, sd } => normal_moments(mean, sd, order)[order],
        ErrorDistribution::GaussianMixture { mu } => {
            let s = (1.0 - mu * mu).sqrt();
            0.5 * (normal_moments(mu, s, order)[order] + normal_moments(-mu, s, order)[order])
        }
        ErrorDistribution::UniformMixture { a } => {
            0.5 * (uniform_moment(-1.0, 1.0, order) + uniform_moment(-a, a, order))
        }
        ErrorDistribution::Uniform { lo, hi } => uniform_moment(lo, hi, order),
    }
}

/// `E[nu^{p+2}] / ((p+1) E[nu^2]) - E[nu^p]` for `p = 0..max_m`; all zero when
/// the moment ladder holds through order `max_m + 1`.
pub fn assumption2_deviation(dist: &ErrorDistribution, max_m: usize) -> Result<Vec<f64>> {
    if max_m == 0 {
        return Err(ApeError::Parameter("max_m must be >= 1".into()));
    }
    dist.validate()?;
    let m2 = analytic_moment(dist, 2);
    if m2 == 0.0 {
        return Err(ApeError::Degenerate("E[nu^2] = 0".into()));
    }
    Ok((0..max_m)
        .map(|p| analytic_moment(dist, p + 2) / ((p + 1) as f64 * m2) - analytic_moment(dist, p))
        .collect())
}

pub fn kurtosis(dist: &ErrorDistribution) -> f64 {
    let m1 = analytic_moment(dist, 1);
    let (m2, m3, m4) = (
        analytic_moment(dist, 2),
        analytic_moment(dist, 3),
        analytic_moment(dist, 4),
    );
    let var = m2 - m1 * m1;
    let c4 = m4 - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1.powi(4);
    c4 / (var * var)
}

impl fmt::Display for ErrorDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ErrorDistribution::Normal { mean, sd } => write!(f, "normal({mean},{sd})"),
            ErrorDistribution::GaussianMixture { mu } => write!(f, "gmix({mu})"),
            ErrorDistribution::UniformMixture { a } if a == mesokurtic_a() => {
                write!(f, "umix(auto)")
            }
            ErrorDistribution::UniformMixture { a } => write!(f, "umix({a})"),
            ErrorDistribution::Uniform { lo, hi } => write!(f, "uniform({lo},{hi})"),
        }
    }
}

/// Split `name(a,b,..)` into the name and its argument strings.
pub(crate) fn split_call(s: &str) -> Option<(&str, Vec<&str>)> {
    let s = s.trim();
    let open = s.find('(')?;
    if !s.ends_with(')') {
        return None;
    }
    let name = s[..open].trim();
    let inner = s[open + 1..s.len() - 1].trim();
    let args = if inner.is_empty() {
        Vec::new()
    } else {
        inner.split(',').map(str::trim).collect()
    };
    Some((name, args))
}

impl FromStr for ErrorDistribution {
    type Err = ApeError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || ApeError::Parameter(format!("cannot parse distribution `{s}`"));
        let (name, args) = split_call(s).ok_or_else(bad)?;
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad());
        let d = match (name.to_ascii_lowercase().as_str(), args.as_slice()) {
            ("normal", []) => ErrorDistribution::standard_normal(),
            ("normal", [m, s]) => ErrorDistribution::Normal {
                mean: num(m)?,
                sd: num(s)?,
            },
            ("gmix", [m]) => ErrorDistribution::GaussianMixture { mu: num(m)? },
            ("umix", ["auto"]) | ("umix", []) => {
                ErrorDistribution::UniformMixture { a: mesokurtic_a() }
            }
            ("umix", [a]) => ErrorDistribution::UniformMixture { a: num(a)? },
            ("uniform", [lo, hi]) => ErrorDistribution::Uniform {
                lo: num(lo)?,
                hi: num(hi)?,
            },
            _ => return Err(bad()),
        };
        d.validate()?;
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_moments() {
        let d = ErrorDistribution::standard_normal();
        assert_eq!(analytic_moment(&d, 4), 3.0);
        assert_eq!(analytic_moment(&d, 6), 15.0);
        assert_eq!(analytic_moment(&d, 8), 105.0);
    }

    #[test]
    fn noncentral_normal() {
        let m = normal_moments(1.0, 1.0, 4);
        assert_eq!(m, vec![1.0, 1.0, 2.0, 4.0, 10.0]);
    }

    #[test]
    fn umix_variance_closed_form() {
        let a = mesokurtic_a();
        let d = ErrorDistribution::UniformMixture { a };
        assert!((analytic_moment(&d, 2) - (1.0 + a * a) / 6.0).abs() < 1e-15);
        assert!((kurtosis(&d) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn gmix_odd_and_fourth() {
        let d = ErrorDistribution::GaussianMixture { mu: 0.9 };
        assert_eq!(analytic_moment(&d, 3), 0.0);
        let (m, s2) = (0.9f64, 0.19f64);
        let closed = m.powi(4) + 6.0 * m * m * s2 + 3.0 * s2 * s2;
        assert!((analytic_moment(&d, 4) - closed).abs() < 1e-12);
        assert!((closed - 1.6878).abs() < 1e-12);
    }

    #[test]
    fn ladder_deviations() {
        let dev =
            assumption2_deviation(&ErrorDistribution::Normal { mean: 0.0, sd: 1.7 }, 10).unwrap();
        assert!(dev.iter().all(|d| d.abs() < 1e-12), "{dev:?}");
        let g = assumption2_deviation(&ErrorDistribution::GaussianMixture { mu: 0.9 }, 3).unwrap();
        assert!(g[0].abs() < 1e-15 && g[1].abs() < 1e-15);
        assert!((g[2] - (1.6878 / 3.0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn parse_round_trip() {
        for s in [
            "normal(0,1)",
            "gmix(0.9)",
            "umix(auto)",
            "uniform(-1,2)",
            "umix(2.5)",
        ] {
            let d: ErrorDistribution = s.parse().unwrap();
            assert_eq!(d.to_string(), s);
        }
        assert!("gmix(1.2)".parse::<ErrorDistribution>().is_err());
        assert!("normal(0,-1)".parse::<ErrorDistribution>().is_err());
        assert!("cauchy(0,1)".parse::<ErrorDistribution>().is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let d = ErrorDistribution::GaussianMixture { mu: 0.9 };
        assert_eq!(sample(&d, 50, 3).unwrap(), sample(&d, 50, 3).unwrap());
        assert_ne!(sample(&d, 50, 3).unwrap(), sample(&d, 50, 4).unwrap());
    }
}
