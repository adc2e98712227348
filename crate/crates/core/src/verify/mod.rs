//! Statistical and numerical machinery shared by tests, the acceptance
//! suite and the `verify` subcommand. Everything here is deterministic
//! given seeds; statistical bounds are moment bounds at a few standard
//! errors rather than full distribution tests.

pub mod criteria;
pub mod oracles;

pub use oracles::{central_diff_score, posterior_mean_quadrature};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::FieldRole;
use crate::rng::{self, normal_field};
use crate::samplers::{clean_sde_step, CleanState, EpsModel, TeacherEps};
use crate::schedule::{BetaSchedule, Schedule};
use crate::teacher::GaussianMixtureTeacher;

/// Sample-moment summary with the bounds it was checked against.
#[derive(Clone, Debug, Serialize)]
pub struct MomentReport {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
    pub mean_bound: f64,
    pub var_lo: f64,
    pub var_hi: f64,
    pub pass: bool,
}

/// Check `|mean| ≤ mean_bound` and `variance ∈ var_interval` on a sample.
pub fn moment_check(
    samples: &[f64],
    mean_bound: f64,
    var_interval: (f64, f64),
) -> Result<MomentReport> {
    if samples.len() < 100 {
        return Err(Error::TooFewSamples {
            need: 100,
            got: samples.len(),
        });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let variance = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (var_lo, var_hi) = var_interval;
    Ok(MomentReport {
        count: samples.len(),
        mean,
        variance,
        min,
        max,
        mean_bound,
        var_lo,
        var_hi,
        pass: mean.abs() <= mean_bound && variance >= var_lo && variance <= var_hi,
    })
}

/// Pearson correlation of two equal-length samples.
pub fn correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 100 {
        return Err(Error::TooFewSamples {
            need: 100,
            got: a.len().min(b.len()),
        });
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(cov / (va * vb).sqrt())
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let err = left + right - whole;
        if depth == 0 || err.abs() <= 15.0 * tol {
            return left + right + err / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, tol * 0.5, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, tol * 0.5, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(&f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Two-sided acceptance band of a χ² statistic with `df` degrees of
/// freedom at the given confidence, via the Wilson–Hilferty cube
/// approximation (accurate well below our tolerances for df ≥ 100).
pub fn chi2_band(df: usize, confidence: f64) -> (f64, f64) {
    assert!(df >= 100, "band approximation wants large df");
    let z = match confidence {
        c if (c - 0.99).abs() < 1e-12 => 2.575_829_303_548_901,
        c if (c - 0.95).abs() < 1e-12 => 1.959_963_984_540_054,
        _ => panic!("unsupported confidence level"),
    };
    let d = df as f64;
    let h = 2.0 / (9.0 * d);
    let lo = d * (1.0 - h - z * h.sqrt()).powi(3);
    let hi = d * (1.0 - h + z * h.sqrt()).powi(3);
    (lo, hi)
}

/// χ² statistic of observed bin counts against a uniform expectation.
pub fn chi2_uniform(counts: &[u64], total: u64) -> f64 {
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum()
}

/// Co-simulate the clean-flow SDE (production stepper, exact OU carry
/// update) and an Euler–Maruyama discretization of the same SDE in the
/// noisy variable, sharing the per-step Gaussian increments through
/// identically seeded streams. Returns the endpoint L2 gap of the
/// recovered noisy variable. Shrinks at first order in the step size.
pub fn pathwise_sde_gap(
    teacher: &GaussianMixtureTeacher,
    schedule: &Schedule,
    beta: &BetaSchedule,
    n_steps: usize,
    seed: u64,
) -> Result<f64> {
    if n_steps < 8 {
        return Err(Error::Domain {
            name: "n_steps",
            value: n_steps as f64,
            lo: 8.0,
            hi: f64::INFINITY,
        });
    }
    let shape = teacher.shape();
    let model = TeacherEps::plain(teacher, schedule, None);
    let ts = schedule.uniform_grid(n_steps);

    let mut init_rng = rng::derived(seed, 1);
    let eps0 = normal_field(shape, FieldRole::Noise, &mut init_rng);
    let (_, sigma_end) = schedule.alpha_sigma(schedule.t_end())?;

    // Clean side consumes one Gaussian field per positive-churn step; the
    // noisy side replays the identical stream from a clone.
    let mut clean_rng = rng::derived(seed, 2);
    let mut noisy_rng = clean_rng.clone();

    let mut clean = CleanState::reverse_init(eps0.clone(), schedule.t_end());
    let mut noisy = eps0.scaled(sigma_end);

    for w in ts.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        let r_t = schedule.snr_ratio(t)?;
        let dr = schedule.snr_ratio(t_next)? - r_t;
        let beta_t = beta.beta(schedule, t)?;
        let gamma = beta.gamma_between(schedule, t_next, t)?;

        let next_clean = clean_sde_step(&clean, t_next, &model, schedule, beta, &mut clean_rng)?;

        let zeta = normal_field(shape, FieldRole::Noise, &mut noisy_rng);
        let (alpha, _) = schedule.alpha_sigma(t)?;
        let (alpha_next, _) = schedule.alpha_sigma(t_next)?;
        let eps_hat = model.eps(&noisy, t)?;
        let drift = dr + r_t * beta_t * (t_next - t);
        let diffusion = (2.0 * beta_t).sqrt() * r_t * (t - t_next).sqrt();
        let mut x_over_alpha = noisy.scaled(1.0 / alpha);
        x_over_alpha.add_scaled(&eps_hat, drift)?;
        if gamma > 0.0 {
            x_over_alpha.add_scaled(&zeta, diffusion)?;
        }
        noisy = x_over_alpha.scaled(alpha_next);

        clean = next_clean;
    }

    let recovered = clean.recover_noisy(schedule)?;
    Ok(crate::field::sub(&recovered.x, &noisy)?.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldShape, ImageField};
    use crate::teacher::MixtureComponent;
    use std::collections::BTreeMap;

    fn single_teacher() -> GaussianMixtureTeacher {
        let shape = FieldShape::new(2, 2, 1);
        let mut r = rng::seeded(100);
        GaussianMixtureTeacher::single(
            normal_field(shape, FieldRole::Clean, &mut r),
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn moment_check_standard_normal_passes() {
        let mut r = rng::seeded(101);
        let xs: Vec<f64> = (0..100_000).map(|_| rng::normal(&mut r)).collect();
        let rep = moment_check(&xs, 0.02, (0.97, 1.03)).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn moment_check_rejects_constant_and_scaled() {
        let constant = vec![0.5; 1000];
        let rep = moment_check(&constant, 0.02, (0.97, 1.03)).unwrap();
        assert!(!rep.pass && rep.variance == 0.0);

        let mut r = rng::seeded(102);
        let xs: Vec<f64> = (0..10_000).map(|_| 2.0 * rng::normal(&mut r)).collect();
        let rep = moment_check(&xs, 0.1, (0.97, 1.03)).unwrap();
        assert!(!rep.pass && (rep.variance - 4.0).abs() < 0.3);

        assert!(moment_check(&[1.0; 10], 0.1, (0.9, 1.1)).is_err());
    }

    #[test]
    fn correlation_examples() {
        let mut r = rng::seeded(103);
        let a: Vec<f64> = (0..100_000).map(|_| rng::normal(&mut r)).collect();
        let b: Vec<f64> = (0..100_000).map(|_| rng::normal(&mut r)).collect();
        assert!((correlation(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((correlation(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(correlation(&a, &b).unwrap().abs() <= 0.02);
        assert!(correlation(&vec![1.0; 1000], &a[..1000]).is_err());
    }

    #[test]
    fn adaptive_simpson_known_integrals() {
        let got = adaptive_simpson(|x| x * x, 0.0, 3.0, 1e-12);
        assert!((got - 9.0).abs() < 1e-10);
        let got = adaptive_simpson(|x| x.exp(), 0.0, 1.0, 1e-12);
        assert!((got - (1f64.exp() - 1.0)).abs() < 1e-10);
    }

    #[test]
    fn chi2_band_brackets_the_mean() {
        let (lo, hi) = chi2_band(4095, 0.99);
        assert!(lo < 4095.0 && 4095.0 < hi);
        assert!((lo - 3866.0).abs() < 10.0, "lo = {lo}");
        assert!((hi - 4330.0).abs() < 10.0, "hi = {hi}");
    }

    #[test]
    fn pathwise_gap_deterministic_and_tiny_without_churn() {
        let teacher = single_teacher();
        let s = Schedule::vp_sd_like();
        let g1 = pathwise_sde_gap(&teacher, &s, &BetaSchedule::Zero, 2000, 5).unwrap();
        let g2 = pathwise_sde_gap(&teacher, &s, &BetaSchedule::Zero, 2000, 5).unwrap();
        assert_eq!(g1, g2);
        assert!(g1 <= 1e-9, "deterministic gap {g1}");
        assert!(pathwise_sde_gap(&teacher, &s, &BetaSchedule::Zero, 4, 5).is_err());
    }

    #[test]
    fn pathwise_gap_halves_with_step_count() {
        let teacher = single_teacher();
        let s = Schedule::edm(0.02, 3.0).unwrap();
        let beta = BetaSchedule::Constant(1.0);
        let mean_gap = |n: usize| -> f64 {
            (0..8)
                .map(|seed| pathwise_sde_gap(&teacher, &s, &beta, n, seed).unwrap())
                .sum::<f64>()
                / 8.0
        };
        let (g250, g500, g1000) = (mean_gap(250), mean_gap(500), mean_gap(1000));
        assert!(g250 / g500 >= 1.8, "{g250} / {g500}");
        assert!(g500 / g1000 >= 1.8, "{g500} / {g1000}");
    }

    #[test]
    fn quadrature_posterior_mean_matches_conjugate_formula() {
        // Single Gaussian component: the posterior mean has the conjugate
        // closed form (α s² x + σ² μ)/(α² s² + σ²).
        let (w, mu, s) = (1.0, 0.7, 0.5);
        let (alpha, sigma, x) = (0.8, 0.6, 1.9);
        let got = posterior_mean_quadrature(&[(w, mu, s)], x, alpha, sigma);
        let expected =
            (alpha * s * s * x + sigma * sigma * mu) / (alpha * alpha * s * s + sigma * sigma);
        assert!((got - expected).abs() < 1e-8, "{got} vs {expected}");
    }

    #[test]
    fn central_difference_matches_analytic_gradient() {
        let shape = FieldShape::new(1, 1, 2);
        let x = ImageField::from_vec(shape, vec![0.3, -1.2], FieldRole::Clean).unwrap();
        // f(x) = −(x₀² + 2 x₁²)/2, gradient (−x₀, −2 x₁).
        let f = |p: &ImageField| -(p.data()[0].powi(2) + 2.0 * p.data()[1].powi(2)) / 2.0;
        let g = central_diff_score(f, &x, 1e-5);
        assert!((g.data()[0] + 0.3).abs() < 1e-8);
        assert!((g.data()[1] - 2.4).abs() < 1e-8);
    }
}
