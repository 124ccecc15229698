use apekit::distributions::{
    analytic_moment, assumption2_deviation, kurtosis, mesokurtic_a, sample, ErrorDistribution,
};
use std::f64::consts::PI;

fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, intervals: usize) -> f64 {
    let h = (hi - lo) / intervals as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..intervals {
        let x = lo + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

fn normal_pdf(x: f64, mu: f64, sd: f64) -> f64 {
    let u = (x - mu) / sd;
    (-0.5 * u * u).exp() / (sd * (2.0 * PI).sqrt())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
fn normal_moments_match_quadrature() {
    for &(mu, sd) in &[(0.0, 1.0), (1.0, 1.0), (-0.7, 0.5), (0.3, 2.0)] {
        let dist = ErrorDistribution::Normal { mean: mu, sd };
        let (lo, hi) = (mu - 18.0 * sd, mu + 18.0 * sd);
        for p in 0..=8 {
            let q = simpson(
                |x| x.powi(p as i32) * normal_pdf(x, mu, sd),
                lo,
                hi,
                400_000,
            );
            let a = analytic_moment(&dist, p);
            assert!(close(a, q, 1e-9), "N({mu},{sd}) order {p}: {a} vs {q}");
        }
    }
}

#[test]
fn mixture_moments_match_quadrature_and_closed_forms() {
    let mu: f64 = 0.9;
    let s = (1.0 - mu * mu).sqrt();
    let g = ErrorDistribution::GaussianMixture { mu };
    for p in 0..=8 {
        let q = simpson(
            |x| x.powi(p as i32) * 0.5 * (normal_pdf(x, mu, s) + normal_pdf(x, -mu, s)),
            -12.0,
            12.0,
            400_000,
        );
        assert!(close(analytic_moment(&g, p), q, 1e-9), "gmix order {p}");
    }
    let m4 = mu.powi(4) + 6.0 * mu * mu * s * s + 3.0 * s.powi(4);
    assert!((analytic_moment(&g, 4) - m4).abs() < 1e-12);
    assert!((m4 - 1.6878).abs() < 1e-4);
    assert_eq!(analytic_moment(&g, 3), 0.0);

    let a = mesokurtic_a();
    let u = ErrorDistribution::UniformMixture { a };
    for p in 0..=8usize {
        let closed = if p % 2 == 1 {
            0.0
        } else {
            0.5 * (1.0 + a.powi(p as i32)) / (p as f64 + 1.0)
        };
        assert!(
            close(analytic_moment(&u, p), closed, 1e-12),
            "umix order {p}"
        );
    }
    assert!((analytic_moment(&u, 2) - (1.0 + a * a) / 6.0).abs() < 1e-12);
    assert!((kurtosis(&u) - 3.0).abs() < 1e-9);
}

#[test]
fn lemma_one_values() {
    let z = ErrorDistribution::standard_normal();
    assert_eq!(analytic_moment(&z, 4), 3.0);
    assert_eq!(analytic_moment(&z, 6), 15.0);
    for p in (1..=9).step_by(2) {
        for d in [
            z,
            ErrorDistribution::GaussianMixture { mu: 0.4 },
            ErrorDistribution::UniformMixture { a: 2.5 },
        ] {
            assert_eq!(analytic_moment(&d, p), 0.0);
        }
    }
}

#[test]
fn ladder_deviation_examples() {
    for sd in [0.3, 1.0, 4.0] {
        let d = assumption2_deviation(&ErrorDistribution::Normal { mean: 0.0, sd }, 10).unwrap();
        assert!(
            d.iter().all(|v| v.abs() <= 1e-9 * sd.powi(12).max(1.0)),
            "sd {sd}: {d:?}"
        );
    }
    let g = assumption2_deviation(&ErrorDistribution::GaussianMixture { mu: 0.9 }, 3).unwrap();
    assert_eq!(&g[..2], &[0.0, 0.0]);
    assert!((g[2] - (1.6878 / 3.0 - 1.0)).abs() < 1e-3, "{}", g[2]);
    let u =
        assumption2_deviation(&ErrorDistribution::UniformMixture { a: mesokurtic_a() }, 3).unwrap();
    assert!(u.iter().all(|v| v.abs() < 1e-12), "{u:?}");
}

#[test]
fn sample_moments_are_consistent() {
    let n = 1_000_000;
    let dists = [
        ErrorDistribution::standard_normal(),
        ErrorDistribution::Normal { mean: 0.5, sd: 1.5 },
        ErrorDistribution::GaussianMixture { mu: 0.9 },
        ErrorDistribution::UniformMixture { a: mesokurtic_a() },
        ErrorDistribution::Uniform { lo: -1.0, hi: 2.0 },
    ];
    for (k, d) in dists.iter().enumerate() {
        let v = sample(d, n, 1000 + k as u64).unwrap();
        for p in 1..=8 {
            let pw: Vec<f64> = v.iter().map(|x| x.powi(p)).collect();
            let m = pw.iter().sum::<f64>() / n as f64;
            let sd = (pw.iter().map(|w| (w - m) * (w - m)).sum::<f64>() / (n - 1) as f64).sqrt();
            let a = analytic_moment(d, p as usize);
            assert!(
                (m - a).abs() <= 5.0 * sd / (n as f64).sqrt(),
                "{d} order {p}: sample {m}, analytic {a}"
            );
        }
    }
}

#[test]
fn large_sample_examples() {
    let n = 1_000_000;
    let z = sample(&ErrorDistribution::standard_normal(), n, 5).unwrap();
    assert!((z.iter().sum::<f64>() / n as f64).abs() <= 4.0 / (n as f64).sqrt());

    let g = sample(&ErrorDistribution::GaussianMixture { mu: 0.9 }, n, 6).unwrap();
    let m4 = g.iter().map(|x| x.powi(4)).sum::<f64>() / n as f64;
    assert!((m4 - 1.6878).abs() <= 0.02, "{m4}");

    let u = sample(
        &ErrorDistribution::UniformMixture { a: mesokurtic_a() },
        n,
        7,
    )
    .unwrap();
    let mean = u.iter().sum::<f64>() / n as f64;
    let c2 = u.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let c4 = u.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
    assert!((c4 / (c2 * c2) - 3.0).abs() <= 0.05);
}

#[test]
fn invalid_parameters_are_rejected() {
    for d in [
        ErrorDistribution::Normal { mean: 0.0, sd: 0.0 },
        ErrorDistribution::GaussianMixture { mu: 1.0 },
        ErrorDistribution::UniformMixture { a: -1.0 },
        ErrorDistribution::Uniform { lo: 1.0, hi: 1.0 },
    ] {
        assert!(sample(&d, 10, 1).is_err());
    }
}
