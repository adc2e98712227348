//! Differentiable rendering of a fixed unit sphere with a learnable
//! texture.
//!
//! The texture lives on the same equal-area reference square as the
//! noise grid, so one parameterization serves both. Rays are intersected
//! analytically; color is a texel lookup at the warped hit direction.
//! The lookup is linear in the texel values, which makes the renderer
//! piecewise linear in the parameters and its vector–Jacobian product
//! exact.

use crate::error::{Error, Result};
use crate::field::{ensure_same_shape, FieldRole, FieldShape, ImageField};
use crate::geom::{unit_sphere_hit, Camera};
use crate::noise_transport::{bilinear_taps, cell_of, sphere_map};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TextureFilter {
    Bilinear,
    /// One texel per lookup. Makes pixel→texel assignments disjoint and
    /// exactly invertible, which the single-view fidelity harness needs.
    Nearest,
}

/// Unit sphere with a T×T×C texel grid over `E_ref` and a constant
/// background color. The texel values are the learnable parameters.
#[derive(Clone, Debug)]
pub struct SphereScene {
    texture: ImageField,
    pub background: Vec<f64>,
    pub filter: TextureFilter,
}

impl SphereScene {
    pub fn new(texture: ImageField, background: Vec<f64>, filter: TextureFilter) -> Result<Self> {
        let shape = texture.shape();
        if shape.height != shape.width {
            return Err(Error::Config(format!(
                "texture must be square, got {}x{}",
                shape.height, shape.width
            )));
        }
        if background.len() != shape.channels {
            return Err(Error::Config(format!(
                "background has {} channels, texture has {}",
                background.len(),
                shape.channels
            )));
        }
        if !texture.is_finite() {
            return Err(Error::Invariant("texture contains non-finite texels".into()));
        }
        Ok(Self {
            texture,
            background,
            filter,
        })
    }

    pub fn uniform(
        res: usize,
        channels: usize,
        value: f64,
        background: Vec<f64>,
        filter: TextureFilter,
    ) -> Result<Self> {
        Self::new(
            ImageField::constant(FieldShape::new(res, res, channels), value, FieldRole::Clean),
            background,
            filter,
        )
    }

    pub fn texture(&self) -> &ImageField {
        &self.texture
    }

    pub fn texture_mut(&mut self) -> &mut ImageField {
        &mut self.texture
    }

    pub fn resolution(&self) -> usize {
        self.texture.shape().height
    }

    pub fn channels(&self) -> usize {
        self.texture.shape().channels
    }

    fn taps(&self, u: f64, v: f64) -> ([(usize, usize); 4], [f64; 4]) {
        match self.filter {
            TextureFilter::Bilinear => bilinear_taps(self.resolution(), u, v),
            TextureFilter::Nearest => {
                let ix = cell_of(self.resolution(), u);
                let iy = cell_of(self.resolution(), v);
                ([(ix, iy); 4], [1.0, 0.0, 0.0, 0.0])
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: ImageField,
    /// Ray length to the hit; +∞ where the ray misses.
    pub depth: ImageField,
    /// Binary analytic hit test.
    pub opacity: ImageField,
}

/// Render color, depth and opacity for a camera.
pub fn render(scene: &SphereScene, camera: &Camera) -> RenderOutput {
    let shape = FieldShape::new(camera.height, camera.width, scene.channels());
    let mask_shape = FieldShape::new(camera.height, camera.width, 1);
    let mut color = ImageField::zeros(shape, FieldRole::Clean);
    let mut depth = ImageField::constant(mask_shape, f64::INFINITY, FieldRole::Clean);
    let mut opacity = ImageField::zeros(mask_shape, FieldRole::Clean);

    for row in 0..camera.height {
        for col in 0..camera.width {
            let ray = camera.pixel_ray(row, col);
            match unit_sphere_hit(&ray) {
                Some(t) => {
                    let hit = ray.origin.add(ray.dir.scaled(t));
                    let (u, v) = sphere_map(hit).expect("hit point is never the origin");
                    let (taps, weights) = scene.taps(u, v);
                    for ch in 0..scene.channels() {
                        let mut acc = 0.0;
                        for (tap, w) in taps.iter().zip(weights) {
                            acc += w * scene.texture.at(tap.1, tap.0, ch);
                        }
                        color.set(row, col, ch, acc);
                    }
                    depth.set(row, col, 0, t);
                    opacity.set(row, col, 0, 1.0);
                }
                None => {
                    for ch in 0..scene.channels() {
                        color.set(row, col, ch, scene.background[ch]);
                    }
                }
            }
        }
    }
    RenderOutput {
        color,
        depth,
        opacity,
    }
}

/// Depth and opacity only; used by the noise rasterizer, which does not
/// care about color.
pub fn render_geometry(camera: &Camera) -> (ImageField, ImageField) {
    let mask_shape = FieldShape::new(camera.height, camera.width, 1);
    let mut depth = ImageField::constant(mask_shape, f64::INFINITY, FieldRole::Clean);
    let mut opacity = ImageField::zeros(mask_shape, FieldRole::Clean);
    for row in 0..camera.height {
        for col in 0..camera.width {
            if let Some(t) = unit_sphere_hit(&camera.pixel_ray(row, col)) {
                depth.set(row, col, 0, t);
                opacity.set(row, col, 0, 1.0);
            }
        }
    }
    (depth, opacity)
}

/// Exact adjoint of the texel lookup: push an image-space gradient back
/// onto the texture. At most four texels receive weight per pixel;
/// transparent pixels contribute nothing.
pub fn render_vjp(
    scene: &SphereScene,
    camera: &Camera,
    grad_image: &ImageField,
) -> Result<ImageField> {
    let expected = FieldShape::new(camera.height, camera.width, scene.channels());
    let probe = ImageField::zeros(expected, FieldRole::Gradient);
    ensure_same_shape(grad_image, &probe)?;

    let mut grad_tex = ImageField::zeros(scene.texture.shape(), FieldRole::Gradient);
    for row in 0..camera.height {
        for col in 0..camera.width {
            let ray = camera.pixel_ray(row, col);
            let Some(t) = unit_sphere_hit(&ray) else {
                continue;
            };
            let hit = ray.origin.add(ray.dir.scaled(t));
            let (u, v) = sphere_map(hit)?;
            let (taps, weights) = scene.taps(u, v);
            for ch in 0..scene.channels() {
                let g = grad_image.at(row, col, ch);
                if g == 0.0 {
                    continue;
                }
                for (tap, w) in taps.iter().zip(weights) {
                    if w != 0.0 {
                        let cur = grad_tex.at(tap.1, tap.0, ch);
                        grad_tex.set(tap.1, tap.0, ch, cur + w * g);
                    }
                }
            }
        }
    }
    Ok(grad_tex)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::sub;
    use crate::rng;

    fn camera() -> Camera {
        Camera::new(2.5, 0.2, 0.7, 40f64.to_radians(), 17, 17).unwrap()
    }

    #[test]
    fn misses_get_background_and_zero_opacity() {
        let scene =
            SphereScene::uniform(32, 2, 0.5, vec![0.1, 0.9], TextureFilter::Bilinear).unwrap();
        // Wide FOV so corners miss.
        let cam = Camera::new(4.0, 0.0, 0.0, 1.2, 11, 11).unwrap();
        let out = render(&scene, &cam);
        assert_eq!(out.opacity.at(0, 0, 0), 0.0);
        assert_eq!(out.color.at(0, 0, 0), 0.1);
        assert_eq!(out.color.at(0, 0, 1), 0.9);
        assert!(out.depth.at(0, 0, 0).is_infinite());
    }

    #[test]
    fn depth_is_finite_exactly_where_opaque() {
        let scene =
            SphereScene::uniform(16, 1, 0.0, vec![0.0], TextureFilter::Bilinear).unwrap();
        let cam = Camera::new(2.5, 0.4, 1.9, 1.0, 15, 15).unwrap();
        let out = render(&scene, &cam);
        for row in 0..15 {
            for col in 0..15 {
                let opaque = out.opacity.at(row, col, 0) == 1.0;
                assert_eq!(out.depth.at(row, col, 0).is_finite(), opaque);
            }
        }
    }

    #[test]
    fn center_pixel_depth_on_axis() {
        let scene =
            SphereScene::uniform(16, 1, 0.0, vec![0.0], TextureFilter::Bilinear).unwrap();
        let cam = Camera::new(2.5, 0.0, 0.0, 0.7, 9, 9).unwrap();
        let out = render(&scene, &cam);
        assert!((out.depth.at(4, 4, 0) - 1.5).abs() < 1e-9);
        assert_eq!(out.opacity.at(4, 4, 0), 1.0);
    }

    #[test]
    fn uniform_texture_renders_flat() {
        let scene =
            SphereScene::uniform(64, 3, 0.37, vec![0.0, 0.0, 0.0], TextureFilter::Bilinear)
                .unwrap();
        let out = render(&scene, &camera());
        for row in 0..17 {
            for col in 0..17 {
                if out.opacity.at(row, col, 0) == 1.0 {
                    for ch in 0..3 {
                        assert!((out.color.at(row, col, ch) - 0.37).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn sphere_fills_enough_pixels_for_distillation() {
        let scene =
            SphereScene::uniform(16, 1, 0.0, vec![0.0], TextureFilter::Bilinear).unwrap();
        let cam = Camera::new(2.5, 0.1, 0.0, 40f64.to_radians(), 32, 32).unwrap();
        let out = render(&scene, &cam);
        let covered: f64 = out.opacity.data().iter().sum();
        let frac = covered / (32.0 * 32.0);
        assert!(frac > 0.30, "coverage {frac}");
    }

    #[test]
    fn vjp_of_zero_gradient_is_zero() {
        let scene =
            SphereScene::uniform(32, 1, 0.0, vec![0.0], TextureFilter::Bilinear).unwrap();
        let cam = camera();
        let zero = ImageField::zeros(FieldShape::new(17, 17, 1), FieldRole::Gradient);
        let g = render_vjp(&scene, &cam, &zero).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn single_pixel_gradient_hits_at_most_four_texels() {
        let scene =
            SphereScene::uniform(64, 1, 0.0, vec![0.0], TextureFilter::Bilinear).unwrap();
        let cam = camera();
        let mut grad_img = ImageField::zeros(FieldShape::new(17, 17, 1), FieldRole::Gradient);
        grad_img.set(8, 8, 0, 2.5);
        let g = render_vjp(&scene, &cam, &grad_img).unwrap();
        let nonzero: Vec<f64> = g.data().iter().copied().filter(|v| *v != 0.0).collect();
        assert!(!nonzero.is_empty() && nonzero.len() <= 4, "{nonzero:?}");
        let total: f64 = nonzero.iter().sum();
        assert!((total - 2.5).abs() < 1e-12, "weights sum times gradient");
    }

    #[test]
    fn render_is_linear_in_texels() {
        // render(θ + δ) − render(θ) = Jδ exactly: geometry never depends
        // on texel values.
        let mut r = rng::seeded(31);
        let shape = FieldShape::new(24, 24, 1);
        let theta = rng::normal_field(shape, FieldRole::Clean, &mut r);
        let delta = rng::normal_field(shape, FieldRole::Clean, &mut r).scaled(0.1);
        let cam = camera();

        let scene_a = SphereScene::new(theta.clone(), vec![0.0], TextureFilter::Bilinear).unwrap();
        let mut bumped = theta.clone();
        bumped.add_scaled(&delta, 1.0).unwrap();
        let scene_b = SphereScene::new(bumped, vec![0.0], TextureFilter::Bilinear).unwrap();

        let diff = sub(&render(&scene_b, &cam).color, &render(&scene_a, &cam).color).unwrap();

        // ⟨v, Jδ⟩ must equal ⟨Jᵀv, δ⟩ for random v.
        let v = rng::normal_field(FieldShape::new(17, 17, 1), FieldRole::Gradient, &mut r);
        let lhs = v.dot(&diff).unwrap();
        let rhs = render_vjp(&scene_a, &cam, &v).unwrap().dot(&delta).unwrap();
        assert!(
            (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0),
            "{lhs} vs {rhs}"
        );
    }

    #[test]
    fn vjp_matches_central_differences() {
        let mut r = rng::seeded(32);
        let shape = FieldShape::new(16, 16, 1);
        let theta = rng::normal_field(shape, FieldRole::Clean, &mut r);
        let cam = Camera::new(2.5, 0.3, 1.1, 0.6, 11, 11).unwrap();
        let scene = SphereScene::new(theta.clone(), vec![0.0], TextureFilter::Bilinear).unwrap();

        for _ in 0..20 {
            let v = rng::normal_field(FieldShape::new(11, 11, 1), FieldRole::Gradient, &mut r);
            let delta = rng::normal_field(shape, FieldRole::Clean, &mut r);
            let h = 1e-3;

            let mut plus = theta.clone();
            plus.add_scaled(&delta, h).unwrap();
            let mut minus = theta.clone();
            minus.add_scaled(&delta, -h).unwrap();
            let scene_p = SphereScene::new(plus, vec![0.0], TextureFilter::Bilinear).unwrap();
            let scene_m = SphereScene::new(minus, vec![0.0], TextureFilter::Bilinear).unwrap();
            let fd = sub(&render(&scene_p, &cam).color, &render(&scene_m, &cam).color)
                .unwrap()
                .scaled(0.5 / h);

            let lhs = v.dot(&fd).unwrap();
            let rhs = render_vjp(&scene, &cam, &v).unwrap().dot(&delta).unwrap();
            let rel = (lhs - rhs).abs() / rhs.abs().max(1e-9);
            assert!(rel <= 1e-4, "relative error {rel}");
        }
    }

    #[test]
    fn nearest_filter_reads_single_texels() {
        let mut scene =
            SphereScene::uniform(128, 1, 0.0, vec![0.0], TextureFilter::Nearest).unwrap();
        let cam = Camera::new(2.5, 0.0, 0.0, 0.35, 9, 9).unwrap();

        // Find the texel the center pixel reads, paint it, re-render.
        let ray = cam.pixel_ray(4, 4);
        let t = unit_sphere_hit(&ray).unwrap();
        let hit = ray.origin.add(ray.dir.scaled(t));
        let (u, v) = sphere_map(hit).unwrap();
        let (ix, iy) = (cell_of(128, u), cell_of(128, v));
        scene.texture_mut().set(iy, ix, 0, 5.0);

        let out = render(&scene, &cam);
        assert_eq!(out.color.at(4, 4, 0), 5.0);
        let painted: usize = out
            .color
            .data()
            .iter()
            .filter(|v| **v == 5.0)
            .count();
        assert!(painted >= 1 && painted <= 4, "{painted} pixels painted");
    }
}
