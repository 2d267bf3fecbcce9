use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::generator::GeneratorBundle;
use crate::parallel::Execution;
use crate::tensor::Tensor;

pub const KS_ALPHA: f64 = 0.01;
const MIN_REPORT_SAMPLES: usize = 1000;

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`: power series below
/// `a + 1`, Lentz continued fraction for the upper tail above it.
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    const EPS: f64 = 1e-15;
    const MAX_ITER: usize = 1000;
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                break;
            }
        }
        (sum.ln() + log_prefix).exp().min(1.0)
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                break;
            }
        }
        (1.0 - (log_prefix.exp() * h)).max(0.0)
    }
}

/// CDF of the chi-squared distribution with `k` degrees of freedom.
pub fn chi2_cdf(x: f64, k: usize) -> f64 {
    regularized_gamma_p(k as f64 / 2.0, x / 2.0)
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `samples` and
/// `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of a KS distance `d` at sample size `n`, using the
/// small-sample corrected argument `(sqrt(n) + 0.12 + 0.11 / sqrt(n)) d`.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = sign * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianizationReport {
    pub samples: usize,
    pub dim: usize,
    /// Mean and variance of `|F(w)|^2`.
    pub mean_sq_norm: f64,
    pub var_sq_norm: f64,
    pub raw_mean_sq_norm: f64,
    pub ks_stat_flowed: f64,
    pub ks_p_flowed: f64,
    pub ks_stat_raw: f64,
    pub ks_p_raw: f64,
    pub flowed_passes: bool,
    pub raw_fails: bool,
}

impl GaussianizationReport {
    pub fn pass(&self) -> bool {
        self.flowed_passes && self.raw_fails
    }
}

fn sq_norms(t: &Tensor) -> Vec<f64> {
    let d = t.shape()[1];
    t.data()
        .chunks(d)
        .map(|r| r.iter().map(|v| v * v).sum())
        .collect()
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var)
}

/// Squared-norm statistics of `w` rows against `chi2_d`, before and after
/// the flow.
pub fn squared_norm_report(w: &Tensor, flow: &FlowModel) -> Result<GaussianizationReport> {
    if w.rank() != 2 || w.shape()[1] != flow.latent_dim() {
        return Err(Error::ShapeMismatch {
            op: "squared_norm_report",
            left: w.shape().to_vec(),
            right: vec![0, flow.latent_dim()],
        });
    }
    let (n, d) = (w.shape()[0], w.shape()[1]);
    let (z, _) = flow.forward_batch(w)?;
    let flowed = sq_norms(&z);
    let raw = sq_norms(w);
    let (mean, var) = mean_var(&flowed);
    let (raw_mean, _) = mean_var(&raw);
    let cdf = |x: f64| chi2_cdf(x, d);
    let ks_f = ks_statistic(&flowed, cdf);
    let ks_r = ks_statistic(&raw, cdf);
    let (p_f, p_r) = (ks_pvalue(ks_f, n), ks_pvalue(ks_r, n));
    Ok(GaussianizationReport {
        samples: n,
        dim: d,
        mean_sq_norm: mean,
        var_sq_norm: var,
        raw_mean_sq_norm: raw_mean,
        ks_stat_flowed: ks_f,
        ks_p_flowed: p_f,
        ks_stat_raw: ks_r,
        ks_p_raw: p_r,
        flowed_passes: p_f > KS_ALPHA,
        raw_fails: p_r <= KS_ALPHA,
    })
}

/// Draw `w = G_m(z)` for `sample_count` seeded `z` and test `|F(w)|^2`
/// against `chi2_d`.
pub fn gaussianization_report(
    flow: &FlowModel,
    generator: &GeneratorBundle,
    sample_count: usize,
    seed: u64,
    exec: Execution,
) -> Result<GaussianizationReport> {
    if sample_count < MIN_REPORT_SAMPLES {
        return Err(Error::invalid(format!(
            "gaussianization report needs at least {MIN_REPORT_SAMPLES} samples"
        )));
    }
    let w = generator.sample_w(sample_count, seed, exec)?;
    squared_norm_report(&w, flow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand_distr::{Distribution, StandardNormal};

    fn chi2_pdf(x: f64, k: usize) -> f64 {
        let a = k as f64 / 2.0;
        if x <= 0.0 {
            return if k == 2 { 0.5 } else { 0.0 };
        }
        ((a - 1.0) * x.ln() - x / 2.0 - a * 2f64.ln() - ln_gamma(a)).exp()
    }

    fn simpson(f: impl Fn(f64) -> f64, hi: f64, steps: usize) -> f64 {
        let h = hi / steps as f64;
        let mut s = f(0.0) + f(hi);
        for i in 1..steps {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-13);
        assert!(ln_gamma(2.0).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
        assert!((ln_gamma(8.0) - 5040f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn chi2_cdf_matches_quadrature() {
        for k in [2usize, 16] {
            for g in 1..=20 {
                let x = g as f64 * (k as f64 / 6.0);
                let oracle = simpson(|t| chi2_pdf(t, k), x, 20_000);
                let got = chi2_cdf(x, k);
                assert!(
                    (got - oracle).abs() < 1e-6,
                    "k={k} x={x}: {got} vs {oracle}"
                );
            }
        }
        // Closed form at k = 2.
        assert!((chi2_cdf(3.0, 2) - (1.0 - (-1.5f64).exp())).abs() < 1e-14);
        assert_eq!(chi2_cdf(0.0, 4), 0.0);
    }

    #[test]
    fn ks_statistic_small_case() {
        // Uniform CDF on [0,1]; samples 0.1, 0.4, 0.9.
        let d = ks_statistic(&[0.9, 0.1, 0.4], |x| x.clamp(0.0, 1.0));
        // Gaps: max(0.1-0, 1/3-0.1, 0.4-1/3, 2/3-0.4, 0.9-2/3, 1-0.9) = 0.2667.
        assert!((d - (2.0 / 3.0 - 0.4)).abs() < 1e-12);
    }

    #[test]
    fn ks_pvalue_reference_points() {
        // Q_KS(1.0) = 0.26999967...; Q_KS(1.63) ~ 0.0098.
        let n = 1_000_000;
        let scale = (n as f64).sqrt() + 0.12 + 0.11 / (n as f64).sqrt();
        assert!((ks_pvalue(1.0 / scale, n) - 0.269_999_67).abs() < 1e-6);
        assert!(ks_pvalue(1.63 / scale, n) < 0.01);
        assert!(ks_pvalue(1.62 / scale, n) > 0.01);
        assert_eq!(ks_pvalue(0.0, 10), 1.0);
    }

    #[test]
    fn true_gaussians_under_identity_flow() {
        let (n, d) = (5000, 16);
        let mut rng = seed::rng(3);
        let data: Vec<f64> = (0..n * d)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let w = Tensor::new(vec![n, d], data).unwrap();
        let r = squared_norm_report(&w, &FlowModel::identity(d).unwrap()).unwrap();
        assert!((r.mean_sq_norm / d as f64 - 1.0).abs() < 0.05, "{r:?}");
        assert!((r.var_sq_norm / (2 * d) as f64 - 1.0).abs() < 0.15, "{r:?}");
        assert!(r.flowed_passes, "{r:?}");
        // Raw norms equal flowed norms here, so the raw test passes too.
        assert!(!r.raw_fails);
    }

    #[test]
    fn scaled_gaussians_fail() {
        let (n, d) = (2000, 4);
        let mut rng = seed::rng(4);
        let data: Vec<f64> = (0..n * d)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                1.3 * x
            })
            .collect();
        let w = Tensor::new(vec![n, d], data).unwrap();
        let r = squared_norm_report(&w, &FlowModel::identity(d).unwrap()).unwrap();
        assert!(!r.flowed_passes);
    }
}
