//! Independent reference implementations used to cross-check the
//! production samplers. These deliberately re-derive each update from
//! scratch instead of calling into `samplers`; a test that compares the
//! two routes is only as strong as their independence.

use crate::error::Result;
use crate::field::{lincomb, FieldRole, FieldShape, ImageField};
use crate::rng::{normal_field, SeedRng};
use crate::samplers::{Denoiser, EpsModel, TimeGrid};
use crate::schedule::Schedule;

/// One deterministic denoising-implicit update: predict the clean image,
/// then re-noise it at the next level.
pub fn ddim_step(
    x: &ImageField,
    t: f64,
    t_next: f64,
    model: &impl EpsModel,
    schedule: &Schedule,
) -> Result<ImageField> {
    let (alpha, sigma) = schedule.alpha_sigma(t)?;
    let (alpha_next, sigma_next) = schedule.alpha_sigma(t_next)?;
    let eps = model.eps(x, t)?;
    let mut x0_pred = x.clone();
    x0_pred.add_scaled(&eps, -sigma)?;
    x0_pred.scale_in_place(1.0 / alpha);
    lincomb(alpha_next, &x0_pred, sigma_next, &eps)
}

/// Heun integration of the clean-flow ODE on an α = 1, σ = t schedule
/// with fixed carried noise: dx/dt = (x − D(x + t·ε̃, t))/t. A final grid
/// time of zero gets a plain Euler step, since the slope is undefined
/// there.
pub fn heun_clean_edm(
    denoiser: &impl Denoiser,
    ts: &[f64],
    eps: &ImageField,
) -> Result<ImageField> {
    let slope = |x: &ImageField, t: f64| -> Result<ImageField> {
        let noisy = lincomb(1.0, x, t, eps)?;
        let denoised = denoiser.denoise(&noisy, t)?;
        let mut d = lincomb(1.0, x, -1.0, &denoised)?;
        d.scale_in_place(1.0 / t);
        Ok(d)
    };
    let mut x = ImageField::zeros(eps.shape(), FieldRole::Clean);
    for w in ts.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        let h = t_next - t;
        let k1 = slope(&x, t)?;
        let x_euler = lincomb(1.0, &x, h, &k1)?;
        if t_next == 0.0 {
            x = x_euler;
        } else {
            let k2 = slope(&x_euler, t_next)?;
            let avg = lincomb(0.5, &k1, 0.5, &k2)?;
            x = lincomb(1.0, &x, h, &avg)?;
        }
    }
    Ok(x)
}

/// Transliteration of the churned stochastic sampler in the noisy
/// variable: inflate the state with fresh noise to `t̂`, then take a Heun
/// step down. Consumes the rng in the same order as the clean-variable
/// sampler (initial carry field first, then one churn field per step), so
/// identically seeded runs are pathwise comparable.
pub fn edm_noisy_stochastic(
    denoiser: &impl Denoiser,
    grid: &TimeGrid,
    shape: FieldShape,
    rng: &mut SeedRng,
) -> Result<ImageField> {
    let eps0 = normal_field(shape, FieldRole::Noise, rng);
    let mut x = eps0.scaled(grid.ts[0]);
    for i in 0..grid.steps() {
        let (t, t_next) = (grid.ts[i], grid.ts[i + 1]);
        let churn = normal_field(shape, FieldRole::Noise, rng).scaled(grid.s_noise);
        let t_hat = t + grid.gammas[i] * t;
        let x_hat = lincomb(1.0, &x, (t_hat * t_hat - t * t).sqrt(), &churn)?;

        let denoised = denoiser.denoise(&x_hat, t_hat)?;
        let mut d = lincomb(1.0, &x_hat, -1.0, &denoised)?;
        d.scale_in_place(1.0 / t_hat);
        let x_euler = lincomb(1.0, &x_hat, t_next - t_hat, &d)?;
        if t_next == 0.0 {
            x = x_euler;
        } else {
            let denoised2 = denoiser.denoise(&x_euler, t_next)?;
            let mut d2 = lincomb(1.0, &x_euler, -1.0, &denoised2)?;
            d2.scale_in_place(1.0 / t_next);
            let avg = lincomb(0.5, &d, 0.5, &d2)?;
            x = lincomb(1.0, &x_hat, t_next - t_hat, &avg)?;
        }
    }
    Ok(x)
}

/// Central-difference gradient of a scalar function of an image.
pub fn central_diff_score(
    f: impl Fn(&ImageField) -> f64,
    x: &ImageField,
    h: f64,
) -> ImageField {
    let mut grad = ImageField::zeros(x.shape(), FieldRole::Gradient);
    let mut probe = x.clone();
    for i in 0..x.shape().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let hi = f(&probe);
        probe.data_mut()[i] = orig - h;
        let lo = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (hi - lo) / (2.0 * h);
    }
    grad
}

/// Brute-force posterior mean `E[x₀ | x_t]` for a one-pixel Gaussian
/// mixture, by quadrature over `x₀ p(x_t | x₀) p₀(x₀)`. Components are
/// `(weight, mean, std)` with positive std.
pub fn posterior_mean_quadrature(
    components: &[(f64, f64, f64)],
    x: f64,
    alpha: f64,
    sigma: f64,
) -> f64 {
    let density = |x0: f64| -> f64 {
        let lik = (-(x - alpha * x0).powi(2) / (2.0 * sigma * sigma)).exp();
        let prior: f64 = components
            .iter()
            .map(|&(w, mu, s)| {
                w / (s * (2.0 * std::f64::consts::PI).sqrt())
                    * (-(x0 - mu).powi(2) / (2.0 * s * s)).exp()
            })
            .sum();
        lik * prior
    };
    let spread = components
        .iter()
        .map(|&(_, _, s)| s)
        .fold(0.0f64, f64::max)
        .max(sigma / alpha);
    let lo = components
        .iter()
        .map(|&(_, mu, _)| mu)
        .fold(f64::INFINITY, f64::min)
        .min(x / alpha)
        - 15.0 * spread;
    let hi = components
        .iter()
        .map(|&(_, mu, _)| mu)
        .fold(f64::NEG_INFINITY, f64::max)
        .max(x / alpha)
        + 15.0 * spread;
    let norm = super::adaptive_simpson(density, lo, hi, 1e-12);
    let first = super::adaptive_simpson(|x0| x0 * density(x0), lo, hi, 1e-12);
    first / norm
}
