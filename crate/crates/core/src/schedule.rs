//! Diffusion schedules, timestep annealing, and the closed-form noise
//! churn coefficients used by the stochastic samplers.
//!
//! Two schedule families are supported:
//!
//! - `Vp`: cosine interpolation `α_t = cos(ωt)`, `σ_t = sin(ωt)` with ω
//!   chosen so that `α` lands on a configurable floor at the end time.
//! - `Edm`: `α_t = 1`, `σ_t = t`.
//!
//! Both keep `σ_t/α_t` strictly increasing over `[t_start, t_end]`, which
//! every sampler step relies on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Terminal signal-to-noise ratio of a Stable-Diffusion-like discrete
/// schedule; used by [`Schedule::vp_sd_like`].
pub const SD_LIKE_TERMINAL_RATIO: f64 = 12.59;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Vp,
    Edm,
}

#[derive(Clone, Copy, Debug)]
pub struct Schedule {
    kind: ScheduleKind,
    t_start: f64,
    t_end: f64,
    /// VP only: α at `t_end`.
    alpha_end: f64,
    /// VP only: angular rate `arccos(alpha_end) / t_end`.
    omega: f64,
}

impl Schedule {
    /// Variance-preserving cosine schedule on `[t_start, t_end]` with
    /// `α(t_end) = alpha_end`.
    pub fn vp(t_start: f64, t_end: f64, alpha_end: f64) -> Result<Self> {
        if !(t_start > 0.0 && t_start < t_end) {
            return Err(Error::Domain {
                name: "schedule.t_start",
                value: t_start,
                lo: 0.0,
                hi: t_end,
            });
        }
        if !(alpha_end > 0.0 && alpha_end < 1.0) {
            return Err(Error::Domain {
                name: "schedule.alpha_end",
                value: alpha_end,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(Self {
            kind: ScheduleKind::Vp,
            t_start,
            t_end,
            alpha_end,
            omega: alpha_end.acos() / t_end,
        })
    }

    /// Default VP schedule: unit end time, `α_T` floored at 0.01, and a
    /// start time small enough that `σ(t_start) < 1e-3`.
    pub fn vp_default() -> Self {
        Self::vp(5e-4, 1.0, 0.01).expect("default VP parameters are valid")
    }

    /// VP schedule whose terminal ratio `σ_T/α_T` matches the
    /// Stable-Diffusion-like value 12.59.
    pub fn vp_sd_like() -> Self {
        let alpha_end = (1.0 + SD_LIKE_TERMINAL_RATIO * SD_LIKE_TERMINAL_RATIO)
            .sqrt()
            .recip();
        Self::vp(5e-4, 1.0, alpha_end).expect("sd-like VP parameters are valid")
    }

    pub fn edm(t_start: f64, t_end: f64) -> Result<Self> {
        if !(t_start > 0.0 && t_start < t_end) {
            return Err(Error::Domain {
                name: "schedule.t_start",
                value: t_start,
                lo: 0.0,
                hi: t_end,
            });
        }
        Ok(Self {
            kind: ScheduleKind::Edm,
            t_start,
            t_end,
            alpha_end: 1.0,
            omega: 0.0,
        })
    }

    pub fn edm_default() -> Self {
        Self::edm(0.002, 80.0).expect("default EDM parameters are valid")
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// VP only: the configured α floor at `t_end` (1 for EDM).
    pub fn alpha_end(&self) -> f64 {
        self.alpha_end
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        // Tiny slack absorbs rounding from grid construction.
        let eps = 1e-12 * self.t_end.max(1.0);
        if t < self.t_start - eps || t > self.t_end + eps {
            return Err(Error::Domain {
                name: "t",
                value: t,
                lo: self.t_start,
                hi: self.t_end,
            });
        }
        Ok(())
    }

    /// Schedule coefficients `(α_t, σ_t)`.
    pub fn alpha_sigma(&self, t: f64) -> Result<(f64, f64)> {
        self.check_domain(t)?;
        Ok(match self.kind {
            ScheduleKind::Edm => (1.0, t),
            ScheduleKind::Vp => ((self.omega * t).cos(), (self.omega * t).sin()),
        })
    }

    /// `σ_t/α_t`, the quantity every sampler step integrates.
    pub fn snr_ratio(&self, t: f64) -> Result<f64> {
        self.check_domain(t)?;
        Ok(match self.kind {
            ScheduleKind::Edm => t,
            ScheduleKind::Vp => (self.omega * t).tan(),
        })
    }

    /// `d(σ_t/α_t)/dt` in closed form.
    pub fn snr_ratio_derivative(&self, t: f64) -> Result<f64> {
        self.check_domain(t)?;
        Ok(match self.kind {
            ScheduleKind::Edm => 1.0,
            ScheduleKind::Vp => {
                let r = (self.omega * t).tan();
                self.omega * (1.0 + r * r)
            }
        })
    }

    /// `n+1` uniformly spaced times from `t_end` down to `t_start`.
    pub fn uniform_grid(&self, n: usize) -> Vec<f64> {
        assert!(n >= 1, "grid needs at least one step");
        let mut ts = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let f = i as f64 / n as f64;
            ts.push(self.t_end + f * (self.t_start - self.t_end));
        }
        ts[n] = self.t_start;
        ts
    }
}

/// Churn-rate schedule β_t for the stochastic samplers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BetaSchedule {
    Zero,
    Constant(f64),
    /// `β_t = (d(σ_t/α_t)/dt) / (σ_t/α_t)`, the choice matching ancestral
    /// DDPM sampling.
    Ddpm,
}

impl BetaSchedule {
    pub fn beta(&self, schedule: &Schedule, t: f64) -> Result<f64> {
        let b = match self {
            BetaSchedule::Zero => 0.0,
            BetaSchedule::Constant(b) => *b,
            BetaSchedule::Ddpm => {
                schedule.snr_ratio_derivative(t)? / schedule.snr_ratio(t)?
            }
        };
        if b < 0.0 {
            return Err(Error::Invariant(format!("beta = {b} is negative at t = {t}")));
        }
        Ok(b)
    }

    /// `∫_{t_lo}^{t_hi} β_s ds` in closed form.
    pub fn beta_integral(&self, schedule: &Schedule, t_lo: f64, t_hi: f64) -> Result<f64> {
        if t_lo > t_hi {
            return Err(Error::Domain {
                name: "t_lo",
                value: t_lo,
                lo: f64::NEG_INFINITY,
                hi: t_hi,
            });
        }
        let integral = match self {
            BetaSchedule::Zero => 0.0,
            BetaSchedule::Constant(b) => b * (t_hi - t_lo),
            BetaSchedule::Ddpm => {
                // ∫ r'/r = ln r(t_hi) − ln r(t_lo)
                (schedule.snr_ratio(t_hi)? / schedule.snr_ratio(t_lo)?).ln()
            }
        };
        if integral < 0.0 {
            return Err(Error::Invariant(format!(
                "negative churn integral {integral} over [{t_lo}, {t_hi}]"
            )));
        }
        Ok(integral)
    }

    /// Churn fraction `γ = 1 − exp(−2 ∫_{t_lo}^{t_hi} β_s ds)` for a
    /// reverse-time step from `t_hi` down to `t_lo`. Always in `[0, 1)`.
    pub fn gamma_between(&self, schedule: &Schedule, t_lo: f64, t_hi: f64) -> Result<f64> {
        let integral = self.beta_integral(schedule, t_lo, t_hi)?;
        Ok(-(-2.0 * integral).exp_m1())
    }
}

/// Per-step churn of a k-step discrete ancestral schedule with terminal
/// ratio `r_end`, evaluated at current ratio `r_t`:
/// `γ = 1 − (r_t/r_end)^(2/k)`.
pub fn ddpm_gamma_per_step(r_t: f64, r_end: f64, k: usize) -> Result<f64> {
    check_ratios(r_t, r_end, k)?;
    Ok(1.0 - (r_t / r_end).powf(2.0 / k as f64))
}

/// First-order approximation `2·ln(r_end/r_t)/k` of [`ddpm_gamma_per_step`].
pub fn ddpm_gamma_per_step_approx(r_t: f64, r_end: f64, k: usize) -> Result<f64> {
    check_ratios(r_t, r_end, k)?;
    Ok(2.0 * (r_end / r_t).ln() / k as f64)
}

fn check_ratios(r_t: f64, r_end: f64, k: usize) -> Result<()> {
    if !(r_t > 0.0 && r_t <= r_end) {
        return Err(Error::Domain {
            name: "r_t",
            value: r_t,
            lo: 0.0,
            hi: r_end,
        });
    }
    if k == 0 {
        return Err(Error::Domain {
            name: "k",
            value: 0.0,
            lo: 1.0,
            hi: f64::INFINITY,
        });
    }
    Ok(())
}

/// One linear segment of an annealing schedule: a fraction of the total
/// optimization steps spent moving from `t_from` down to `t_to`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AnnealStage {
    pub fraction: f64,
    pub t_from: f64,
    pub t_to: f64,
}

/// Monotone non-increasing map from optimization step to diffusion time.
#[derive(Clone, Debug)]
pub struct AnnealSpec {
    stages: Vec<AnnealStage>,
    /// Step index at which each stage starts; one extra entry = total.
    boundaries: Vec<usize>,
    total_steps: usize,
}

impl AnnealSpec {
    pub fn linear(t_max: f64, t_min: f64, total_steps: usize) -> Result<Self> {
        Self::staged(
            vec![AnnealStage {
                fraction: 1.0,
                t_from: t_max,
                t_to: t_min,
            }],
            total_steps,
        )
    }

    pub fn staged(stages: Vec<AnnealStage>, total_steps: usize) -> Result<Self> {
        if stages.is_empty() || total_steps == 0 {
            return Err(Error::Config(
                "annealing needs at least one stage and one step".into(),
            ));
        }
        let frac_sum: f64 = stages.iter().map(|s| s.fraction).sum();
        if (frac_sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "stage fractions sum to {frac_sum}, expected 1"
            )));
        }
        for (i, s) in stages.iter().enumerate() {
            if s.fraction <= 0.0 {
                return Err(Error::Config(format!("stage {i} has non-positive fraction")));
            }
            if s.t_from < s.t_to {
                return Err(Error::Config(format!(
                    "stage {i} increases t ({} -> {})",
                    s.t_from, s.t_to
                )));
            }
            if i > 0 && stages[i - 1].t_to < s.t_from {
                return Err(Error::Config(format!(
                    "stage {i} starts above the previous stage's end"
                )));
            }
        }
        let mut boundaries = Vec::with_capacity(stages.len() + 1);
        let mut acc = 0.0;
        boundaries.push(0);
        for s in &stages {
            acc += s.fraction;
            boundaries.push((acc * total_steps as f64).round() as usize);
        }
        *boundaries.last_mut().unwrap() = total_steps;
        for w in boundaries.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config(
                    "a stage rounds to zero steps; use fewer stages or more steps".into(),
                ));
            }
        }
        Ok(Self {
            stages,
            boundaries,
            total_steps,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn t_max(&self) -> f64 {
        self.stages[0].t_from
    }

    pub fn t_min(&self) -> f64 {
        self.stages[self.stages.len() - 1].t_to
    }

    /// Diffusion time for optimization step `step ∈ [0, total_steps]`.
    pub fn timestep(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::Domain {
                name: "step",
                value: step as f64,
                lo: 0.0,
                hi: self.total_steps as f64,
            });
        }
        if step == self.total_steps {
            return Ok(self.t_min());
        }
        let idx = match self.boundaries[1..].iter().position(|&b| step < b) {
            Some(i) => i,
            None => self.stages.len() - 1,
        };
        let lo = self.boundaries[idx];
        let hi = self.boundaries[idx + 1];
        let f = (step - lo) as f64 / (hi - lo) as f64;
        let s = &self.stages[idx];
        Ok(s.t_from + f * (s.t_to - s.t_from))
    }
}
