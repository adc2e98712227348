//! Analytic Gaussian-mixture score oracle.
//!
//! Components are whole images: the data distribution is a mixture of
//! isotropic Gaussians `N(μ_k, s_k² I)` over H×W×C images, so the diffused
//! density `p_t` and its score have closed forms. Conditioning selects a
//! named subset of components, which gives a genuine conditional /
//! unconditional pair for guidance without any learned network.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::field::{ensure_same_shape, FieldRole, FieldShape, ImageField};
use crate::schedule::Schedule;

#[derive(Clone, Debug)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: ImageField,
    pub std: f64,
}

#[derive(Clone, Debug)]
pub struct GaussianMixtureTeacher {
    components: Vec<MixtureComponent>,
    conditions: BTreeMap<String, Vec<usize>>,
    shape: FieldShape,
}

impl GaussianMixtureTeacher {
    pub fn new(
        components: Vec<MixtureComponent>,
        conditions: BTreeMap<String, Vec<usize>>,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("teacher needs at least one component".into()));
        }
        let shape = components[0].mean.shape();
        let weight_sum: f64 = components.iter().map(|c| c.weight).sum();
        if (weight_sum - 1.0).abs() > 1e-12 {
            return Err(Error::Invariant(format!(
                "component weights sum to {weight_sum}, expected 1"
            )));
        }
        for (i, c) in components.iter().enumerate() {
            if c.weight < 0.0 {
                return Err(Error::Invariant(format!("component {i} has negative weight")));
            }
            if c.std < 0.0 {
                return Err(Error::Invariant(format!("component {i} has negative std")));
            }
            if c.mean.shape() != shape {
                return Err(Error::ShapeMismatch {
                    expected: shape.as_tuple(),
                    got: c.mean.shape().as_tuple(),
                });
            }
            if !c.mean.is_finite() {
                return Err(Error::Invariant(format!("component {i} mean is not finite")));
            }
        }
        for (label, subset) in &conditions {
            if subset.is_empty() {
                return Err(Error::Config(format!("condition `{label}` selects nothing")));
            }
            if subset.iter().any(|&i| i >= components.len()) {
                return Err(Error::Config(format!(
                    "condition `{label}` references a missing component"
                )));
            }
        }
        Ok(Self {
            components,
            conditions,
            shape,
        })
    }

    pub fn single(mean: ImageField, std: f64) -> Result<Self> {
        Self::new(
            vec![MixtureComponent {
                weight: 1.0,
                mean,
                std,
            }],
            BTreeMap::new(),
        )
    }

    pub fn shape(&self) -> FieldShape {
        self.shape
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    fn subset(&self, cond: Option<&str>) -> Result<Vec<usize>> {
        match cond {
            None => Ok((0..self.components.len()).collect()),
            Some(label) => self
                .conditions
                .get(label)
                .cloned()
                .ok_or_else(|| Error::UnknownCondition(label.to_string())),
        }
    }

    /// Per-component log responsibilities (unnormalized) at diffused
    /// coefficients (α, σ). Zero-variance components contribute only at
    /// their exact mean, where the density is a point mass.
    fn log_terms(
        &self,
        x: &ImageField,
        alpha: f64,
        sigma: f64,
        subset: &[usize],
    ) -> Result<Vec<(usize, f64, f64)>> {
        const LN_2PI: f64 = 1.837_877_066_409_345_5;
        let dim = self.shape.len() as f64;
        let weight_norm: f64 = subset.iter().map(|&k| self.components[k].weight).sum();
        let mut terms = Vec::with_capacity(subset.len());
        for &k in subset {
            let comp = &self.components[k];
            if comp.weight == 0.0 {
                continue;
            }
            let var = sigma * sigma + alpha * alpha * comp.std * comp.std;
            let mut dist2 = 0.0;
            for (xv, mv) in x.data().iter().zip(comp.mean.data()) {
                let d = xv - alpha * mv;
                dist2 += d * d;
            }
            if var <= 0.0 {
                if dist2 == 0.0 {
                    return Err(Error::DegenerateDensity);
                }
                continue; // a point mass elsewhere carries no responsibility
            }
            let log_term = (comp.weight / weight_norm).ln()
                - 0.5 * dim * (LN_2PI + var.ln())
                - 0.5 * dist2 / var;
            terms.push((k, log_term, var));
        }
        if terms.is_empty() {
            return Err(Error::DegenerateDensity);
        }
        Ok(terms)
    }

    /// Log of the diffused mixture density at coefficients (α, σ).
    pub fn log_density_at(
        &self,
        x: &ImageField,
        alpha: f64,
        sigma: f64,
        cond: Option<&str>,
    ) -> Result<f64> {
        let subset = self.subset(cond)?;
        let terms = self.log_terms(x, alpha, sigma, &subset)?;
        Ok(log_sum_exp(terms.iter().map(|t| t.1)))
    }

    /// Score `∇_x log p_t(x | cond)` at coefficients (α, σ).
    pub fn score_at(
        &self,
        x: &ImageField,
        alpha: f64,
        sigma: f64,
        cond: Option<&str>,
    ) -> Result<ImageField> {
        let subset = self.subset(cond)?;
        let terms = self.log_terms(x, alpha, sigma, &subset)?;
        let log_norm = log_sum_exp(terms.iter().map(|t| t.1));
        let mut out = ImageField::zeros(self.shape, FieldRole::Gradient);
        for &(k, log_term, var) in &terms {
            let resp = (log_term - log_norm).exp();
            let mean = &self.components[k].mean;
            for ((o, xv), mv) in out.data_mut().iter_mut().zip(x.data()).zip(mean.data()) {
                *o += resp * (alpha * mv - xv) / var;
            }
        }
        Ok(out)
    }

    pub fn score(
        &self,
        x: &ImageField,
        schedule: &Schedule,
        t: f64,
        cond: Option<&str>,
    ) -> Result<ImageField> {
        let (alpha, sigma) = schedule.alpha_sigma(t)?;
        self.score_at(x, alpha, sigma, cond)
    }

    /// Epsilon prediction `−σ_t · score`; exact here rather than learned.
    pub fn eps_pred_at(
        &self,
        x: &ImageField,
        alpha: f64,
        sigma: f64,
        cond: Option<&str>,
    ) -> Result<ImageField> {
        Ok(self
            .score_at(x, alpha, sigma, cond)?
            .scaled(-sigma)
            .with_role(FieldRole::Noise))
    }

    pub fn eps_pred(
        &self,
        x: &ImageField,
        schedule: &Schedule,
        t: f64,
        cond: Option<&str>,
    ) -> Result<ImageField> {
        let (alpha, sigma) = schedule.alpha_sigma(t)?;
        self.eps_pred_at(x, alpha, sigma, cond)
    }

    /// Posterior mean `E[x_0 | x_t] = (x − σ ε̂)/α`.
    pub fn sample_prediction_at(
        &self,
        x: &ImageField,
        alpha: f64,
        sigma: f64,
        cond: Option<&str>,
    ) -> Result<ImageField> {
        let eps = self.eps_pred_at(x, alpha, sigma, cond)?;
        let mut out = x.clone().with_role(FieldRole::Clean);
        out.add_scaled(&eps, -sigma)?;
        out.scale_in_place(1.0 / alpha);
        Ok(out)
    }

    pub fn sample_prediction(
        &self,
        x: &ImageField,
        schedule: &Schedule,
        t: f64,
        cond: Option<&str>,
    ) -> Result<ImageField> {
        let (alpha, sigma) = schedule.alpha_sigma(t)?;
        self.sample_prediction_at(x, alpha, sigma, cond)
    }
}

/// Classifier-free-guidance combination
/// `eps_uncond + w·(eps_cond − eps_uncond)`.
pub fn cfg_combine(
    eps_cond: &ImageField,
    eps_uncond: &ImageField,
    weight: f64,
) -> Result<ImageField> {
    ensure_same_shape(eps_cond, eps_uncond)?;
    crate::field::lincomb(weight, eps_cond, 1.0 - weight, eps_uncond)
}

fn log_sum_exp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + vals.map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::sub;
    use crate::rng;
    use crate::verify::{central_diff_score, posterior_mean_quadrature};

    fn pixel(v: f64) -> ImageField {
        ImageField::constant(FieldShape::new(1, 1, 1), v, FieldRole::Clean)
    }

    fn two_component_pixel() -> GaussianMixtureTeacher {
        GaussianMixtureTeacher::new(
            vec![
                MixtureComponent {
                    weight: 0.3,
                    mean: pixel(-1.0),
                    std: 0.4,
                },
                MixtureComponent {
                    weight: 0.7,
                    mean: pixel(2.0),
                    std: 0.2,
                },
            ],
            BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn weights_must_sum_to_one() {
        let res = GaussianMixtureTeacher::new(
            vec![MixtureComponent {
                weight: 0.9,
                mean: pixel(0.0),
                std: 1.0,
            }],
            BTreeMap::new(),
        );
        assert!(matches!(res, Err(Error::Invariant(_))));
    }

    #[test]
    fn score_vanishes_at_scaled_mean() {
        let teacher = GaussianMixtureTeacher::single(pixel(1.5), 0.3).unwrap();
        let x = pixel(0.8 * 1.5);
        let s = teacher.score_at(&x, 0.8, 0.6, None).unwrap();
        assert!(s.norm() < 1e-14);
    }

    #[test]
    fn score_single_component_closed_form() {
        // s = 0, α = 1, σ = 1, μ = 0, x = 2 ⇒ score = −(x − αμ)/(σ²) = −2.
        let teacher = GaussianMixtureTeacher::single(pixel(0.0), 0.0).unwrap();
        let s = teacher.score_at(&pixel(2.0), 1.0, 1.0, None).unwrap();
        assert!((s.data()[0] + 2.0).abs() < 1e-14);
    }

    #[test]
    fn score_matches_central_difference_oracle() {
        let teacher = two_component_pixel();
        for &x in &[-2.0, -0.3, 0.5, 1.4, 3.0] {
            let xf = pixel(x);
            let (alpha, sigma) = (0.85, 0.5);
            let got = teacher.score_at(&xf, alpha, sigma, None).unwrap();
            let fd = central_diff_score(
                |probe| teacher.log_density_at(probe, alpha, sigma, None).unwrap(),
                &xf,
                1e-4,
            );
            assert!(
                got.max_abs_diff(&fd).unwrap() < 1e-6,
                "x = {x}: {} vs {}",
                got.data()[0],
                fd.data()[0]
            );
        }
    }

    #[test]
    fn score_matches_finite_differences_on_random_images() {
        let shape = FieldShape::new(2, 3, 1);
        let mut r = rng::seeded(11);
        let teacher = GaussianMixtureTeacher::new(
            vec![
                MixtureComponent {
                    weight: 0.5,
                    mean: rng::normal_field(shape, FieldRole::Clean, &mut r),
                    std: 0.5,
                },
                MixtureComponent {
                    weight: 0.5,
                    mean: rng::normal_field(shape, FieldRole::Clean, &mut r),
                    std: 0.8,
                },
            ],
            BTreeMap::new(),
        )
        .unwrap();
        for _ in 0..10 {
            let x = rng::normal_field(shape, FieldRole::Noisy, &mut r);
            let got = teacher.score_at(&x, 0.7, 0.71, None).unwrap();
            let fd = central_diff_score(
                |probe| teacher.log_density_at(probe, 0.7, 0.71, None).unwrap(),
                &x,
                1e-4,
            );
            let rel = sub(&got, &fd).unwrap().norm() / fd.norm().max(1e-12);
            assert!(rel <= 1e-5, "relative error {rel}");
        }
    }

    #[test]
    fn eps_pred_recovers_injected_noise_for_point_mass() {
        let shape = FieldShape::new(2, 2, 1);
        let mut r = rng::seeded(3);
        let mean = rng::normal_field(shape, FieldRole::Clean, &mut r);
        let teacher = GaussianMixtureTeacher::single(mean.clone(), 0.0).unwrap();
        let eps = rng::normal_field(shape, FieldRole::Noise, &mut r);
        let (alpha, sigma) = (0.6, 0.8);
        let mut x = mean.scaled(alpha);
        x.add_scaled(&eps, sigma).unwrap();
        let got = teacher.eps_pred_at(&x, alpha, sigma, None).unwrap();
        assert!(got.max_abs_diff(&eps).unwrap() < 1e-12);
    }

    #[test]
    fn eps_pred_is_minus_sigma_times_numerical_score() {
        let teacher = two_component_pixel();
        let x = pixel(0.9);
        let (alpha, sigma) = (0.92, 0.4);
        let eps = teacher.eps_pred_at(&x, alpha, sigma, None).unwrap();
        let fd = central_diff_score(
            |probe| teacher.log_density_at(probe, alpha, sigma, None).unwrap(),
            &x,
            1e-4,
        );
        assert!((eps.data()[0] + sigma * fd.data()[0]).abs() < 1e-6);
    }

    #[test]
    fn sample_prediction_point_mass_returns_mean() {
        let teacher = GaussianMixtureTeacher::single(pixel(1.3), 0.0).unwrap();
        for &x in &[-5.0, 0.0, 7.5] {
            let got = teacher
                .sample_prediction_at(&pixel(x), 0.5, 0.87, None)
                .unwrap();
            assert!((got.data()[0] - 1.3).abs() < 1e-9);
        }
    }

    #[test]
    fn sample_prediction_identity() {
        // α·sample_prediction + σ·eps_pred reassembles x exactly.
        let teacher = two_component_pixel();
        let x = pixel(0.77);
        let (alpha, sigma) = (0.75, 0.66);
        let sp = teacher.sample_prediction_at(&x, alpha, sigma, None).unwrap();
        let ep = teacher.eps_pred_at(&x, alpha, sigma, None).unwrap();
        let back = alpha * sp.data()[0] + sigma * ep.data()[0];
        assert!((back - x.data()[0]).abs() <= 1e-12);
    }

    #[test]
    fn sample_prediction_matches_quadrature_oracle() {
        let teacher = two_component_pixel();
        let (alpha, sigma) = (0.8, 0.6);
        for &x in &[-1.5, 0.2, 1.8] {
            let got = teacher
                .sample_prediction_at(&pixel(x), alpha, sigma, None)
                .unwrap()
                .data()[0];
            let comps: Vec<(f64, f64, f64)> = teacher
                .components()
                .iter()
                .map(|c| (c.weight, c.mean.data()[0], c.std))
                .collect();
            let oracle = posterior_mean_quadrature(&comps, x, alpha, sigma);
            assert!((got - oracle).abs() < 1e-5, "x = {x}: {got} vs {oracle}");
        }
    }

    #[test]
    fn sample_prediction_stays_in_mean_hull_for_point_masses() {
        // Zero-std mixture: the posterior mean is a convex combination of
        // component means, so each pixel stays inside the per-pixel range.
        let shape = FieldShape::new(2, 2, 1);
        let mut r = rng::seeded(5);
        let m1 = rng::normal_field(shape, FieldRole::Clean, &mut r);
        let m2 = rng::normal_field(shape, FieldRole::Clean, &mut r);
        let m3 = rng::normal_field(shape, FieldRole::Clean, &mut r);
        let teacher = GaussianMixtureTeacher::new(
            vec![
                MixtureComponent {
                    weight: 0.2,
                    mean: m1.clone(),
                    std: 0.0,
                },
                MixtureComponent {
                    weight: 0.5,
                    mean: m2.clone(),
                    std: 0.0,
                },
                MixtureComponent {
                    weight: 0.3,
                    mean: m3.clone(),
                    std: 0.0,
                },
            ],
            BTreeMap::new(),
        )
        .unwrap();
        for _ in 0..20 {
            let x = rng::normal_field(shape, FieldRole::Noisy, &mut r).scaled(1.5);
            let sp = teacher.sample_prediction_at(&x, 0.9, 0.44, None).unwrap();
            for i in 0..shape.len() {
                let lo = m1.data()[i].min(m2.data()[i]).min(m3.data()[i]);
                let hi = m1.data()[i].max(m2.data()[i]).max(m3.data()[i]);
                let v = sp.data()[i];
                assert!(v >= lo - 1e-9 && v <= hi + 1e-9, "{v} outside [{lo}, {hi}]");
            }
        }
    }

    #[test]
    fn conditioning_selects_subsets() {
        let mut conditions = BTreeMap::new();
        conditions.insert("low".to_string(), vec![0]);
        let teacher = GaussianMixtureTeacher::new(
            vec![
                MixtureComponent {
                    weight: 0.5,
                    mean: pixel(-1.0),
                    std: 0.0,
                },
                MixtureComponent {
                    weight: 0.5,
                    mean: pixel(1.0),
                    std: 0.0,
                },
            ],
            conditions,
        )
        .unwrap();
        let sp = teacher
            .sample_prediction_at(&pixel(0.4), 1.0, 0.5, Some("low"))
            .unwrap();
        assert!((sp.data()[0] + 1.0).abs() < 1e-12);
        assert!(matches!(
            teacher.score_at(&pixel(0.0), 1.0, 0.5, Some("missing")),
            Err(Error::UnknownCondition(_))
        ));
    }

    #[test]
    fn zero_variance_off_mean_is_degenerate() {
        let teacher = GaussianMixtureTeacher::single(pixel(1.0), 0.0).unwrap();
        assert!(matches!(
            teacher.score_at(&pixel(0.0), 1.0, 0.0, None),
            Err(Error::DegenerateDensity)
        ));
    }

    #[test]
    fn cfg_combine_examples() {
        let a = pixel(2.0);
        let b = pixel(1.0);
        assert_eq!(cfg_combine(&a, &b, 1.0).unwrap().data()[0], 2.0);
        assert_eq!(cfg_combine(&a, &b, 0.0).unwrap().data()[0], 1.0);
        assert_eq!(cfg_combine(&a, &b, 75.0).unwrap().data()[0], 76.0);
        let wide = ImageField::zeros(FieldShape::new(1, 2, 1), FieldRole::Noise);
        assert!(cfg_combine(&a, &wide, 1.0).is_err());
    }
}
