//! Diffusion sampling in both parameterizations.
//!
//! The noisy variable `x_t` follows the probability-flow ODE
//! `d(x/α) = d(σ/α)·ε̂`. The clean variable `x̂ᶜ = (x_t − σ_t ε̃)/α_t`
//! carries the Gaussian part separately in `ε̃` and follows
//! `dx̂ᶜ = d(σ/α)·(ε̂(α x̂ᶜ + σ ε̃) − ε̃)`; the stochastic variant adds a
//! churn drift and evolves `ε̃` by its exact Ornstein–Uhlenbeck
//! transition, so `ε̃` keeps unit variance at every time.
//!
//! All steppers are stateless; the only mutable input is the caller-owned
//! rng, so independent trajectories can run concurrently.

use crate::error::{Error, Result};
use crate::field::{lincomb, FieldRole, FieldShape, ImageField};
use crate::rng::{normal_field, SeedRng};
use crate::schedule::{BetaSchedule, Schedule, ScheduleKind};
use crate::teacher::{cfg_combine, GaussianMixtureTeacher};

/// Epsilon-prediction view of a model: `ε̂(x, t)`.
pub trait EpsModel {
    fn eps(&self, x: &ImageField, t: f64) -> Result<ImageField>;
}

impl<F> EpsModel for F
where
    F: Fn(&ImageField, f64) -> Result<ImageField>,
{
    fn eps(&self, x: &ImageField, t: f64) -> Result<ImageField> {
        self(x, t)
    }
}

/// Sample-prediction view of a model at explicit noise level σ (α = 1).
pub trait Denoiser {
    fn denoise(&self, x: &ImageField, sigma: f64) -> Result<ImageField>;
}

/// Teacher adapter implementing [`EpsModel`], optionally with
/// classifier-free guidance between two condition labels.
pub struct TeacherEps<'a> {
    pub teacher: &'a GaussianMixtureTeacher,
    pub schedule: &'a Schedule,
    pub cond: Option<&'a str>,
    pub uncond: Option<&'a str>,
    pub guidance_weight: f64,
}

impl<'a> TeacherEps<'a> {
    pub fn plain(
        teacher: &'a GaussianMixtureTeacher,
        schedule: &'a Schedule,
        cond: Option<&'a str>,
    ) -> Self {
        Self {
            teacher,
            schedule,
            cond,
            uncond: cond,
            guidance_weight: 1.0,
        }
    }

    pub fn guided(
        teacher: &'a GaussianMixtureTeacher,
        schedule: &'a Schedule,
        cond: Option<&'a str>,
        uncond: Option<&'a str>,
        guidance_weight: f64,
    ) -> Self {
        Self {
            teacher,
            schedule,
            cond,
            uncond,
            guidance_weight,
        }
    }
}

impl EpsModel for TeacherEps<'_> {
    fn eps(&self, x: &ImageField, t: f64) -> Result<ImageField> {
        let eps_cond = self.teacher.eps_pred(x, self.schedule, t, self.cond)?;
        if self.guidance_weight == 1.0 && self.cond == self.uncond {
            return Ok(eps_cond);
        }
        let eps_uncond = self.teacher.eps_pred(x, self.schedule, t, self.uncond)?;
        cfg_combine(&eps_cond, &eps_uncond, self.guidance_weight)
    }
}

/// Teacher adapter implementing [`Denoiser`] for α = 1, σ = t schedules.
pub struct TeacherDenoiser<'a> {
    pub teacher: &'a GaussianMixtureTeacher,
    pub cond: Option<&'a str>,
}

impl Denoiser for TeacherDenoiser<'_> {
    fn denoise(&self, x: &ImageField, sigma: f64) -> Result<ImageField> {
        self.teacher.sample_prediction_at(x, 1.0, sigma, self.cond)
    }
}

impl<F> Denoiser for F
where
    F: Fn(&ImageField, f64) -> Result<ImageField>,
{
    fn denoise(&self, x: &ImageField, sigma: f64) -> Result<ImageField> {
        self(x, sigma)
    }
}

#[derive(Clone, Debug)]
pub struct NoisyState {
    pub t: f64,
    pub x: ImageField,
}

/// Point on a clean-flow trajectory: the clean variable plus its carried
/// noise. `α_t·x_clean + σ_t·eps_carry` recovers the noisy variable
/// exactly by construction.
#[derive(Clone, Debug)]
pub struct CleanState {
    pub t: f64,
    pub x_clean: ImageField,
    pub eps_carry: ImageField,
}

impl CleanState {
    /// Reverse-time initialization: the clean variable starts at zero.
    pub fn reverse_init(eps: ImageField, t: f64) -> Self {
        let x_clean = ImageField::zeros(eps.shape(), FieldRole::Clean);
        Self {
            t,
            x_clean,
            eps_carry: eps,
        }
    }

    pub fn recover_noisy(&self, schedule: &Schedule) -> Result<NoisyState> {
        let (alpha, sigma) = schedule.alpha_sigma(self.t)?;
        Ok(NoisyState {
            t: self.t,
            x: lincomb(alpha, &self.x_clean, sigma, &self.eps_carry)?
                .with_role(FieldRole::Noisy),
        })
    }
}

/// Forward diffusion `x_t = α_t x_0 + σ_t ε`.
pub fn forward_diffuse(
    x0: &ImageField,
    eps: &ImageField,
    schedule: &Schedule,
    t: f64,
) -> Result<NoisyState> {
    let (alpha, sigma) = schedule.alpha_sigma(t)?;
    Ok(NoisyState {
        t,
        x: lincomb(alpha, x0, sigma, eps)?.with_role(FieldRole::Noisy),
    })
}

fn check_reverse_step(t: f64, t_next: f64) -> Result<()> {
    if t_next >= t {
        return Err(Error::Domain {
            name: "t_next",
            value: t_next,
            lo: f64::NEG_INFINITY,
            hi: t,
        });
    }
    Ok(())
}

/// One Euler step of the probability-flow ODE in the noisy variable.
pub fn pf_ode_step(
    state: &NoisyState,
    t_next: f64,
    model: &impl EpsModel,
    schedule: &Schedule,
) -> Result<NoisyState> {
    check_reverse_step(state.t, t_next)?;
    let (alpha, _) = schedule.alpha_sigma(state.t)?;
    let (alpha_next, _) = schedule.alpha_sigma(t_next)?;
    let dr = schedule.snr_ratio(t_next)? - schedule.snr_ratio(state.t)?;
    let eps = model.eps(&state.x, state.t)?;
    let mut x_over_alpha = state.x.scaled(1.0 / alpha);
    x_over_alpha.add_scaled(&eps, dr)?;
    Ok(NoisyState {
        t: t_next,
        x: x_over_alpha.scaled(alpha_next),
    })
}

/// One Euler step of the clean-flow ODE; the carried noise is constant.
pub fn clean_ode_step(
    state: &CleanState,
    t_next: f64,
    model: &impl EpsModel,
    schedule: &Schedule,
) -> Result<CleanState> {
    check_reverse_step(state.t, t_next)?;
    let dr = schedule.snr_ratio(t_next)? - schedule.snr_ratio(state.t)?;
    let noisy = state.recover_noisy(schedule)?;
    let eps_hat = model.eps(&noisy.x, state.t)?;
    let mut x_clean = state.x_clean.clone();
    x_clean.add_scaled(&eps_hat, dr)?;
    x_clean.add_scaled(&state.eps_carry, -dr)?;
    Ok(CleanState {
        t: t_next,
        x_clean,
        eps_carry: state.eps_carry.clone(),
    })
}

/// One step of the clean-flow SDE: churn-augmented drift on the clean
/// variable, exact OU transition on the carried noise. With a zero churn
/// schedule this reduces bit-exactly to [`clean_ode_step`].
pub fn clean_sde_step(
    state: &CleanState,
    t_next: f64,
    model: &impl EpsModel,
    schedule: &Schedule,
    beta: &BetaSchedule,
    rng: &mut SeedRng,
) -> Result<CleanState> {
    check_reverse_step(state.t, t_next)?;
    let r_t = schedule.snr_ratio(state.t)?;
    let dr = schedule.snr_ratio(t_next)? - r_t;
    let beta_t = beta.beta(schedule, state.t)?;
    let drift = dr + r_t * beta_t * (t_next - state.t);

    let noisy = state.recover_noisy(schedule)?;
    let eps_hat = model.eps(&noisy.x, state.t)?;
    let mut x_clean = state.x_clean.clone();
    x_clean.add_scaled(&eps_hat, drift)?;
    x_clean.add_scaled(&state.eps_carry, -drift)?;

    let gamma = beta.gamma_between(schedule, t_next, state.t)?;
    let eps_carry = if gamma > 0.0 {
        let fresh = normal_field(state.eps_carry.shape(), FieldRole::Noise, rng);
        lincomb((1.0 - gamma).sqrt(), &state.eps_carry, gamma.sqrt(), &fresh)?
    } else {
        state.eps_carry.clone()
    };

    Ok(CleanState {
        t: t_next,
        x_clean,
        eps_carry,
    })
}

/// `√(1−γ)·ε̃ + √γ·ε` with fresh standard normal ε. γ = 1 discards the
/// input entirely; the stochastic-sampler theory needs γ < 1, γ = 1 is
/// the fresh-noise ablation.
pub fn noise_refresh(eps: &ImageField, gamma: f64, rng: &mut SeedRng) -> Result<ImageField> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Domain {
            name: "gamma",
            value: gamma,
            lo: 0.0,
            hi: 1.0,
        });
    }
    if gamma == 0.0 {
        return Ok(eps.clone());
    }
    let fresh = normal_field(eps.shape(), FieldRole::Noise, rng);
    lincomb((1.0 - gamma).sqrt(), eps, gamma.sqrt(), &fresh)
}

/// Discretization grid for the stochastic sampler: times `t_0 > … > t_N`
/// (the last may be zero), per-step churn fractions and the churn noise
/// inflation factor.
#[derive(Clone, Debug)]
pub struct TimeGrid {
    pub ts: Vec<f64>,
    pub gammas: Vec<f64>,
    pub s_noise: f64,
}

impl TimeGrid {
    pub fn new(ts: Vec<f64>, gammas: Vec<f64>, s_noise: f64) -> Result<Self> {
        if ts.len() < 2 {
            return Err(Error::Config("time grid needs at least two points".into()));
        }
        if gammas.len() != ts.len() - 1 {
            return Err(Error::Config(format!(
                "expected {} churn entries, got {}",
                ts.len() - 1,
                gammas.len()
            )));
        }
        for w in ts.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::Config("grid times must strictly decrease".into()));
            }
        }
        if *ts.last().unwrap() < 0.0 {
            return Err(Error::Config("grid times must be non-negative".into()));
        }
        for &g in &gammas {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::Domain {
                    name: "gamma_i",
                    value: g,
                    lo: 0.0,
                    hi: 1.0,
                });
            }
        }
        Ok(Self {
            ts,
            gammas,
            s_noise,
        })
    }

    pub fn deterministic(ts: Vec<f64>) -> Result<Self> {
        let n = ts.len().saturating_sub(1);
        Self::new(ts, vec![0.0; n], 1.0)
    }

    pub fn churned(ts: Vec<f64>, gamma: f64, s_noise: f64) -> Result<Self> {
        let n = ts.len().saturating_sub(1);
        Self::new(ts, vec![gamma; n], s_noise)
    }

    pub fn steps(&self) -> usize {
        self.ts.len() - 1
    }
}

/// ρ-spaced noise levels from `t_max` down to `t_min`, with a final zero.
pub fn karras_grid(n: usize, t_min: f64, t_max: f64, rho: f64) -> Vec<f64> {
    assert!(n >= 2 && t_min > 0.0 && t_min < t_max);
    let inv = 1.0 / rho;
    let (a, b) = (t_max.powf(inv), t_min.powf(inv));
    let mut ts: Vec<f64> = (0..n)
        .map(|i| {
            let f = i as f64 / (n - 1) as f64;
            (a + f * (b - a)).powf(rho)
        })
        .collect();
    ts.push(0.0);
    ts
}

/// Churned stochastic sampler in the clean parameterization. Requires an
/// α = 1, σ = t schedule; returns the clean variable at the final grid
/// time. The per-step noise `ε_i` is drawn unconditionally so that runs
/// with different churn settings stay seed-comparable.
pub fn edm_stochastic_sample(
    denoiser: &impl Denoiser,
    schedule: &Schedule,
    grid: &TimeGrid,
    shape: FieldShape,
    rng: &mut SeedRng,
) -> Result<ImageField> {
    if schedule.kind() != ScheduleKind::Edm {
        return Err(Error::UnsupportedConfig(
            "the churned stochastic sampler needs an EDM (alpha = 1) schedule".into(),
        ));
    }
    let mut eps = normal_field(shape, FieldRole::Noise, rng);
    let mut x = ImageField::zeros(shape, FieldRole::Clean);
    for i in 0..grid.steps() {
        let (t_i, t_next) = (grid.ts[i], grid.ts[i + 1]);
        let churn = normal_field(shape, FieldRole::Noise, rng).scaled(grid.s_noise);
        let t_hat = t_i + grid.gammas[i] * t_i;
        let ratio = t_i / t_hat;
        eps = lincomb(ratio, &eps, (1.0 - ratio * ratio).sqrt(), &churn)?;

        let noisy = lincomb(1.0, &x, t_hat, &eps)?;
        let denoised = denoiser.denoise(&noisy, t_hat)?;
        let mut d = lincomb(1.0, &x, -1.0, &denoised)?;
        d.scale_in_place(1.0 / t_hat);
        let x_euler = lincomb(1.0, &x, t_next - t_hat, &d)?;

        if t_next != 0.0 {
            let noisy2 = lincomb(1.0, &x_euler, t_next, &eps)?;
            let denoised2 = denoiser.denoise(&noisy2, t_next)?;
            let mut d2 = lincomb(1.0, &x_euler, -1.0, &denoised2)?;
            d2.scale_in_place(1.0 / t_next);
            let avg = lincomb(0.5, &d, 0.5, &d2)?;
            x = lincomb(1.0, &x, t_next - t_hat, &avg)?;
        } else {
            x = x_euler;
        }
    }
    Ok(x)
}

/// One row of a trajectory dump.
#[derive(Clone, Copy, Debug)]
pub struct TrajectoryRow {
    pub step: usize,
    pub t: f64,
    pub clean_norm: f64,
    pub eps_norm: f64,
    pub recovered_norm: f64,
}

fn trajectory_row(step: usize, state: &CleanState, schedule: &Schedule) -> Result<TrajectoryRow> {
    Ok(TrajectoryRow {
        step,
        t: state.t,
        clean_norm: state.x_clean.norm(),
        eps_norm: state.eps_carry.norm(),
        recovered_norm: state.recover_noisy(schedule)?.x.norm(),
    })
}

pub fn integrate_clean_ode(
    model: &impl EpsModel,
    schedule: &Schedule,
    ts: &[f64],
    eps: ImageField,
) -> Result<(CleanState, Vec<TrajectoryRow>)> {
    let mut state = CleanState::reverse_init(eps, ts[0]);
    let mut rows = vec![trajectory_row(0, &state, schedule)?];
    for (i, &t_next) in ts[1..].iter().enumerate() {
        state = clean_ode_step(&state, t_next, model, schedule)?;
        rows.push(trajectory_row(i + 1, &state, schedule)?);
    }
    Ok((state, rows))
}

pub fn integrate_clean_sde(
    model: &impl EpsModel,
    schedule: &Schedule,
    beta: &BetaSchedule,
    ts: &[f64],
    eps: ImageField,
    rng: &mut SeedRng,
) -> Result<(CleanState, Vec<TrajectoryRow>)> {
    let mut state = CleanState::reverse_init(eps, ts[0]);
    let mut rows = vec![trajectory_row(0, &state, schedule)?];
    for (i, &t_next) in ts[1..].iter().enumerate() {
        state = clean_sde_step(&state, t_next, model, schedule, beta, rng)?;
        rows.push(trajectory_row(i + 1, &state, schedule)?);
    }
    Ok((state, rows))
}

pub fn integrate_pf_ode(
    model: &impl EpsModel,
    schedule: &Schedule,
    ts: &[f64],
    x0: NoisyState,
) -> Result<NoisyState> {
    let mut state = x0;
    for &t_next in &ts[1..] {
        state = pf_ode_step(&state, t_next, model, schedule)?;
    }
    Ok(state)
}
