//! Multi-view consistent Gaussian noise.
//!
//! A high-resolution grid of i.i.d. unit Gaussians lives on the reference
//! square `E_ref = [−1, 1]²`. Pixels of a camera view are triangulated at
//! their corners, projected onto the unit sphere, warped into `E_ref`
//! through an equal-area map, and each pixel's value is the sum of the
//! covered cells divided by the square root of the cell count. Summing n
//! i.i.d. unit Gaussians and dividing by √n keeps every pixel exactly
//! unit-variance, and two pixels (from any two cameras) correlate by
//! `|Ω₁∩Ω₂|/√(|Ω₁||Ω₂|)`, the cell-overlap fraction of their footprints.
//!
//! The sphere-to-square map sends a direction with polar angle θ and
//! azimuth φ ∈ [0, π/2) to `x = √(1−cos θ)`, `y = x·(4φ/π − 1)`, which has
//! area density (2/π)·sin θ — uniform on the sphere maps to uniform on the
//! wedge. The other three azimuth quadrants are 90° rotations of the base
//! wedge, and a final 1/√2 scaling lands the four wedges exactly on
//! [−1, 1]². The composite map is continuous everywhere except the south
//! pole, which blows up onto the square's outer boundary; triangles are
//! still split per quadrant before rasterization so a polar footprint
//! degrades into per-wedge pieces instead of one smeared triangle.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, SQRT_2};

use crate::error::{Error, Result};
use crate::field::{FieldRole, FieldShape, ImageField};
use crate::geom::{unit_sphere_hit, Camera, Vec3};
use crate::rng::{self, SeedRng};

pub const DEFAULT_REF_RES: usize = 512;
pub const DEFAULT_OPACITY_THRESHOLD: f64 = 0.5;

// ---------------------------------------------------------------------------
// Equal-area sphere map
// ---------------------------------------------------------------------------

/// Base map for one azimuth quadrant, unscaled: φ must lie in [0, π/2].
/// The image is the wedge {0 ≤ x ≤ √2, |y| ≤ x}.
pub fn wedge_map(theta: f64, phi: f64) -> (f64, f64) {
    let x = (1.0 - theta.cos()).sqrt();
    let y = x * (4.0 * phi / PI - 1.0);
    (x, y)
}

fn rotate_quadrant(x: f64, y: f64, k: usize) -> (f64, f64) {
    match k & 3 {
        0 => (x, y),
        1 => (-y, x),
        2 => (-x, -y),
        _ => (y, -x),
    }
}

/// Map a direction to `E_ref` using the chart of quadrant `k`. Directions
/// on the z-axis have no azimuth; they go to the wedge midline.
fn map_direction_in_wedge(v: Vec3, k: usize) -> (f64, f64) {
    let r = v.norm();
    let cos_theta = (v.z / r).clamp(-1.0, 1.0);
    let x_b = (1.0 - cos_theta).sqrt();

    let delta = if v.x == 0.0 && v.y == 0.0 {
        FRAC_PI_4
    } else {
        let mut phi = v.y.atan2(v.x);
        if phi < 0.0 {
            phi += 2.0 * PI;
        }
        let mut d = phi - k as f64 * FRAC_PI_2;
        if d > PI {
            d -= 2.0 * PI;
        } else if d < -PI {
            d += 2.0 * PI;
        }
        d.clamp(0.0, FRAC_PI_2)
    };

    let y_b = x_b * (4.0 * delta / PI - 1.0);
    let (x, y) = rotate_quadrant(x_b, y_b, k);
    (x / SQRT_2, y / SQRT_2)
}

fn quadrant_of(x: f64, y: f64) -> usize {
    let mut phi = y.atan2(x);
    if phi < 0.0 {
        phi += 2.0 * PI;
    }
    ((phi / FRAC_PI_2) as usize).min(3)
}

/// Equal-area map from a world-space direction to `E_ref = [−1, 1]²`.
pub fn sphere_map(p: Vec3) -> Result<(f64, f64)> {
    if p.norm() == 0.0 {
        return Err(Error::UndefinedDirection);
    }
    Ok(map_direction_in_wedge(p, quadrant_of(p.x, p.y)))
}

// ---------------------------------------------------------------------------
// Reference-space grid coordinates
// ---------------------------------------------------------------------------

#[inline]
pub fn cell_of(res: usize, u: f64) -> usize {
    let i = ((u + 1.0) * 0.5 * res as f64).floor();
    (i.max(0.0) as usize).min(res - 1)
}

#[inline]
pub fn cell_center(res: usize, i: usize) -> f64 {
    -1.0 + (i as f64 + 0.5) * 2.0 / res as f64
}

/// Bilinear taps over the cell-center grid: four (ix, iy) indices with
/// weights summing to one. Coordinates are clamped at the boundary.
pub fn bilinear_taps(res: usize, u: f64, v: f64) -> ([(usize, usize); 4], [f64; 4]) {
    let gx = (u + 1.0) * 0.5 * res as f64 - 0.5;
    let gy = (v + 1.0) * 0.5 * res as f64 - 0.5;
    let x0 = gx.floor();
    let y0 = gy.floor();
    let fx = gx - x0;
    let fy = gy - y0;
    let clamp = |i: f64| (i.max(0.0) as usize).min(res - 1);
    let (x0i, x1i) = (clamp(x0), clamp(x0 + 1.0));
    let (y0i, y1i) = (clamp(y0), clamp(y0 + 1.0));
    (
        [(x0i, y0i), (x1i, y0i), (x0i, y1i), (x1i, y1i)],
        [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ],
    )
}

// ---------------------------------------------------------------------------
// Reference noise
// ---------------------------------------------------------------------------

/// The reference noise state: an R×R×C grid of i.i.d. unit Gaussians on
/// `E_ref` plus a background noise image for pixels that miss the
/// surface. Everything is derived from one seed; replaying the seed and
/// the churn history reproduces the state bit-exactly.
#[derive(Clone, Debug)]
pub struct ReferenceNoise {
    res: usize,
    channels: usize,
    grid: Vec<f64>,
    bg: ImageField,
    seed: u64,
    gamma: f64,
    history: Vec<f64>,
    rng: SeedRng,
}

impl ReferenceNoise {
    pub fn new(res: usize, bg_shape: FieldShape, gamma: f64, seed: u64) -> Result<Self> {
        if res == 0 {
            return Err(Error::Config("reference resolution must be positive".into()));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Domain {
                name: "gamma",
                value: gamma,
                lo: 0.0,
                hi: 1.0,
            });
        }
        let mut rng = rng::seeded(seed);
        let channels = bg_shape.channels;
        let mut grid = vec![0.0; res * res * channels];
        for v in &mut grid {
            *v = rng::normal(&mut rng);
        }
        let bg = rng::normal_field(bg_shape, FieldRole::Noise, &mut rng);
        Ok(Self {
            res,
            channels,
            grid,
            bg,
            seed,
            gamma,
            history: Vec::new(),
            rng,
        })
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn bg(&self) -> &ImageField {
        &self.bg
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    #[inline]
    pub fn cell(&self, ix: usize, iy: usize, ch: usize) -> f64 {
        self.grid[(iy * self.res + ix) * self.channels + ch]
    }

    /// Churn both the grid and the background:
    /// `√(1−γ)·old + √γ·fresh`, recorded in the replay history.
    pub fn inject_with(&mut self, gamma: f64) -> Result<()> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Domain {
                name: "gamma",
                value: gamma,
                lo: 0.0,
                hi: 1.0,
            });
        }
        if gamma > 0.0 {
            let keep = (1.0 - gamma).sqrt();
            let mix = gamma.sqrt();
            for v in &mut self.grid {
                *v = keep * *v + mix * rng::normal(&mut self.rng);
            }
            for v in self.bg.data_mut() {
                *v = keep * *v + mix * rng::normal(&mut self.rng);
            }
        }
        self.history.push(gamma);
        Ok(())
    }

    /// Churn at the configured rate.
    pub fn inject(&mut self) -> Result<()> {
        self.inject_with(self.gamma)
    }

    /// Rebuild a state from its seed and churn history.
    pub fn replay(
        res: usize,
        bg_shape: FieldShape,
        gamma: f64,
        seed: u64,
        history: &[f64],
    ) -> Result<Self> {
        let mut out = Self::new(res, bg_shape, gamma, seed)?;
        for &g in history {
            out.inject_with(g)?;
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Pixel triangulation and projection
// ---------------------------------------------------------------------------

/// World-space corner triangles of one opaque pixel.
#[derive(Clone, Debug)]
pub struct PixelTriangles {
    pub pixel: (usize, usize),
    pub world: [[Vec3; 3]; 2],
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ProjectDiagnostics {
    /// Corners whose rays missed the surface and were clamped to a
    /// neighboring corner's hit.
    pub clamped_corners: usize,
}

fn corner_hit(camera: &Camera, row: usize, col: usize) -> Option<Vec3> {
    let ray = camera.corner_ray(row, col);
    unit_sphere_hit(&ray).map(|t| ray.origin.add(ray.dir.scaled(t)))
}

struct CornerGrid {
    hits: Vec<Option<Vec3>>,
    width: usize,
    height: usize,
    clamped: usize,
}

impl CornerGrid {
    fn build(camera: &Camera) -> Self {
        let (w, h) = (camera.width, camera.height);
        let mut hits = Vec::with_capacity((w + 1) * (h + 1));
        for row in 0..=h {
            for col in 0..=w {
                hits.push(corner_hit(camera, row, col));
            }
        }
        Self {
            hits,
            width: w,
            height: h,
            clamped: 0,
        }
    }

    fn get(&self, row: i64, col: i64) -> Option<Vec3> {
        if row < 0 || col < 0 || row > self.height as i64 || col > self.width as i64 {
            return None;
        }
        self.hits[row as usize * (self.width + 1) + col as usize]
    }

    /// Corner point for an opaque pixel; a missing corner is clamped to
    /// the nearest neighboring corner hit (deterministic ring scan), and
    /// as a last resort to the pixel's own center hit.
    fn resolve(&mut self, row: usize, col: usize, center_hit: Vec3) -> Vec3 {
        if let Some(p) = self.get(row as i64, col as i64) {
            return p;
        }
        self.clamped += 1;
        for radius in 1..=3i64 {
            for dr in -radius..=radius {
                for dc in -radius..=radius {
                    if dr.abs().max(dc.abs()) != radius {
                        continue;
                    }
                    if let Some(p) = self.get(row as i64 + dr, col as i64 + dc) {
                        return p;
                    }
                }
            }
        }
        center_hit
    }
}

/// Triangulate every opaque pixel into two corner triangles projected on
/// the unit sphere. `depth` and `opacity` are the renderer outputs for
/// the same camera; depth is used to sanity-check the opacity mask.
pub fn triangulate_and_project(
    camera: &Camera,
    depth: &ImageField,
    opacity: &ImageField,
    o_th: f64,
) -> Result<(Vec<PixelTriangles>, ProjectDiagnostics)> {
    let shape = opacity.shape();
    if shape.height != camera.height || shape.width != camera.width {
        return Err(Error::ShapeMismatch {
            expected: (camera.height, camera.width, 1),
            got: shape.as_tuple(),
        });
    }
    if depth.shape().height != shape.height || depth.shape().width != shape.width {
        return Err(Error::ShapeMismatch {
            expected: shape.as_tuple(),
            got: depth.shape().as_tuple(),
        });
    }

    let mut corners = CornerGrid::build(camera);
    let mut out = Vec::new();
    for row in 0..camera.height {
        for col in 0..camera.width {
            if opacity.at(row, col, 0) <= o_th {
                continue;
            }
            if !depth.at(row, col, 0).is_finite() {
                return Err(Error::Invariant(format!(
                    "pixel ({row}, {col}) is opaque but has non-finite depth"
                )));
            }
            let ray = camera.pixel_ray(row, col);
            let center = match unit_sphere_hit(&ray) {
                Some(t) => ray.origin.add(ray.dir.scaled(t)),
                None => {
                    return Err(Error::Invariant(format!(
                        "pixel ({row}, {col}) marked opaque but its center ray misses"
                    )))
                }
            };
            let c00 = corners.resolve(row, col, center);
            let c01 = corners.resolve(row, col + 1, center);
            let c10 = corners.resolve(row + 1, col, center);
            let c11 = corners.resolve(row + 1, col + 1, center);
            out.push(PixelTriangles {
                pixel: (row, col),
                world: [[c00, c01, c11], [c00, c11, c10]],
            });
        }
    }
    Ok((
        out,
        ProjectDiagnostics {
            clamped_corners: corners.clamped,
        },
    ))
}

// ---------------------------------------------------------------------------
// Warping and rasterization
// ---------------------------------------------------------------------------

type Tri2 = [(f64, f64); 3];

/// Clip a polygon against the half-space f ≥ 0 (Sutherland–Hodgman).
fn clip_halfspace(poly: &[Vec3], f: impl Fn(&Vec3) -> f64) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (fa, fb) = (f(&a), f(&b));
        if fa >= 0.0 {
            out.push(a);
        }
        if (fa > 0.0 && fb < 0.0) || (fa < 0.0 && fb > 0.0) {
            out.push(a.lerp(b, fa / (fa - fb)));
        }
    }
    out
}

fn signed_area(t: &Tri2) -> f64 {
    0.5 * ((t[1].0 - t[0].0) * (t[2].1 - t[0].1) - (t[1].1 - t[0].1) * (t[2].0 - t[0].0))
}

fn orient_ccw(mut t: Tri2) -> Tri2 {
    if signed_area(&t) < 0.0 {
        t.swap(1, 2);
    }
    t
}

/// Warp one world-space triangle to `E_ref`, splitting it across azimuth
/// quadrants so each piece maps through a single continuous chart.
fn warp_world_triangle(tri: &[Vec3; 3], out: &mut Vec<Tri2>) {
    // Fast path: all vertices share a closed quadrant.
    'wedges: for k in 0..4 {
        for v in tri {
            let (sx, sy) = quadrant_signs(k);
            if v.x * sx < 0.0 || v.y * sy < 0.0 {
                continue 'wedges;
            }
        }
        out.push(orient_ccw(tri.map(|v| map_direction_in_wedge(v, k))));
        return;
    }

    for k in 0..4 {
        let (sx, sy) = quadrant_signs(k);
        let poly = clip_halfspace(tri, |v| v.x * sx);
        if poly.len() < 3 {
            continue;
        }
        let poly = clip_halfspace(&poly, |v| v.y * sy);
        if poly.len() < 3 {
            continue;
        }
        let mapped: Vec<(f64, f64)> = poly
            .iter()
            .map(|v| map_direction_in_wedge(*v, k))
            .collect();
        for i in 1..mapped.len() - 1 {
            out.push(orient_ccw([mapped[0], mapped[i], mapped[i + 1]]));
        }
    }
}

fn quadrant_signs(k: usize) -> (f64, f64) {
    match k & 3 {
        0 => (1.0, 1.0),
        1 => (-1.0, 1.0),
        2 => (-1.0, -1.0),
        _ => (1.0, -1.0),
    }
}

#[inline]
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

fn point_in_ccw_triangle(p: (f64, f64), t: &Tri2) -> bool {
    edge(t[0], t[1], p) >= 0.0 && edge(t[1], t[2], p) >= 0.0 && edge(t[2], t[0], p) >= 0.0
}

/// The reference-space footprint of one pixel: its warped triangles and
/// the set of covered cells (cell-center-inside coverage, with a centroid
/// fallback so the set is never empty).
#[derive(Clone, Debug)]
pub struct PixelFootprint {
    pub pixel: (usize, usize),
    pub triangles: Vec<Tri2>,
    pub cells: Vec<(u32, u32)>,
}

impl PixelFootprint {
    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }
}

/// Build the footprint of one pixel from its world triangles.
pub fn warp_footprint(
    pixel: (usize, usize),
    world: &[[Vec3; 3]],
    ref_res: usize,
) -> PixelFootprint {
    let mut triangles = Vec::with_capacity(2);
    for tri in world {
        warp_world_triangle(tri, &mut triangles);
    }

    let mut cells = BTreeSet::new();
    for tri in &triangles {
        if signed_area(tri) <= 0.0 {
            continue; // degenerate sliver
        }
        let min_x = tri.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let max_x = tri.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let min_y = tri.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max_y = tri.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        for iy in cell_of(ref_res, min_y)..=cell_of(ref_res, max_y) {
            for ix in cell_of(ref_res, min_x)..=cell_of(ref_res, max_x) {
                let c = (cell_center(ref_res, ix), cell_center(ref_res, iy));
                if point_in_ccw_triangle(c, tri) {
                    cells.insert((ix as u32, iy as u32));
                }
            }
        }
    }

    if cells.is_empty() {
        // Sub-cell footprint: fall back to the cell holding the centroid.
        let mut cx = 0.0;
        let mut cy = 0.0;
        let mut n = 0.0;
        for tri in &triangles {
            for p in tri {
                cx += p.0;
                cy += p.1;
                n += 1.0;
            }
        }
        let (cx, cy) = if n > 0.0 { (cx / n, cy / n) } else { (0.0, 0.0) };
        cells.insert((cell_of(ref_res, cx) as u32, cell_of(ref_res, cy) as u32));
    }

    PixelFootprint {
        pixel,
        triangles,
        cells: cells.into_iter().collect(),
    }
}

/// Noise Transport aggregation: sum of covered cells over √count, one
/// scalar per channel.
pub fn rasterize_aggregate(fp: &PixelFootprint, noise: &ReferenceNoise) -> Vec<f64> {
    let scale = 1.0 / (fp.cells.len() as f64).sqrt();
    let mut out = vec![0.0; noise.channels()];
    for &(ix, iy) in &fp.cells {
        for (ch, acc) in out.iter_mut().enumerate() {
            *acc += noise.cell(ix as usize, iy as usize, ch);
        }
    }
    for acc in &mut out {
        *acc *= scale;
    }
    out
}

/// Predicted correlation of two footprints under reference reseeding:
/// shared cells over the geometric mean of the counts.
pub fn footprint_correlation(a: &PixelFootprint, b: &PixelFootprint) -> f64 {
    let mut shared = 0usize;
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.cells.len() && j < b.cells.len() {
        match a.cells[i].cmp(&b.cells[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                shared += 1;
                i += 1;
                j += 1;
            }
        }
    }
    shared as f64 / ((a.cells.len() * b.cells.len()) as f64).sqrt()
}

// ---------------------------------------------------------------------------
// Per-camera rasterizer
// ---------------------------------------------------------------------------

/// Footprint cache for one camera. Building it does all the geometry;
/// rendering against a (possibly churned) reference state is then a pure
/// read, so Monte Carlo reseeding studies reuse the same footprints.
pub struct NoiseRasterizer {
    camera: Camera,
    ref_res: usize,
    footprints: Vec<Option<PixelFootprint>>,
    pub diagnostics: ProjectDiagnostics,
}

impl NoiseRasterizer {
    pub fn for_camera(camera: &Camera, o_th: f64, ref_res: usize) -> Result<Self> {
        let (depth, opacity) = crate::renderer::render_geometry(camera);
        let (tris, diagnostics) = triangulate_and_project(camera, &depth, &opacity, o_th)?;
        let mut footprints = vec![None; camera.width * camera.height];
        for pt in &tris {
            let idx = pt.pixel.0 * camera.width + pt.pixel.1;
            footprints[idx] = Some(warp_footprint(pt.pixel, &pt.world, ref_res));
        }
        Ok(Self {
            camera: *camera,
            ref_res,
            footprints,
            diagnostics,
        })
    }

    pub fn footprint(&self, row: usize, col: usize) -> Option<&PixelFootprint> {
        self.footprints[row * self.camera.width + col].as_ref()
    }

    pub fn opaque_pixels(&self) -> impl Iterator<Item = &PixelFootprint> {
        self.footprints.iter().filter_map(|f| f.as_ref())
    }

    /// Rasterize the reference noise into this camera's view; transparent
    /// pixels copy the background noise.
    pub fn render(&self, noise: &ReferenceNoise) -> Result<ImageField> {
        let shape = noise.bg().shape();
        if shape.height != self.camera.height
            || shape.width != self.camera.width
            || noise.res() != self.ref_res
        {
            return Err(Error::ShapeMismatch {
                expected: (self.camera.height, self.camera.width, noise.channels()),
                got: shape.as_tuple(),
            });
        }
        let mut out = noise.bg().clone();
        for fp in self.opaque_pixels() {
            let vals = rasterize_aggregate(fp, noise);
            for (ch, v) in vals.iter().enumerate() {
                out.set(fp.pixel.0, fp.pixel.1, ch, *v);
            }
        }
        Ok(out)
    }
}

/// One-shot consistent noise for a camera view.
pub fn consistent_noise(
    camera: &Camera,
    noise: &ReferenceNoise,
    o_th: f64,
) -> Result<ImageField> {
    NoiseRasterizer::for_camera(camera, o_th, noise.res())?.render(noise)
}

/// Ablation: warp pixel centers only and bilinearly interpolate the four
/// nearest cells. Deliberately breaks the unit-variance property.
pub fn bilinear_noise(
    camera: &Camera,
    noise: &ReferenceNoise,
    o_th: f64,
) -> Result<ImageField> {
    let shape = noise.bg().shape();
    if shape.height != camera.height || shape.width != camera.width {
        return Err(Error::ShapeMismatch {
            expected: (camera.height, camera.width, noise.channels()),
            got: shape.as_tuple(),
        });
    }
    let mut out = noise.bg().clone();
    for row in 0..camera.height {
        for col in 0..camera.width {
            let ray = camera.pixel_ray(row, col);
            let Some(t) = unit_sphere_hit(&ray) else {
                continue;
            };
            // Binary opacity: a center hit means the pixel is opaque.
            if 1.0 <= o_th {
                continue;
            }
            let hit = ray.origin.add(ray.dir.scaled(t));
            let (u, v) = sphere_map(hit)?;
            let (taps, weights) = bilinear_taps(noise.res(), u, v);
            for ch in 0..noise.channels() {
                let mut acc = 0.0;
                for (tap, w) in taps.iter().zip(weights) {
                    acc += w * noise.cell(tap.0, tap.1, ch);
                }
                out.set(row, col, ch, acc);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::{chi2_band, chi2_uniform, correlation};

    #[test]
    fn sphere_map_poles_and_midline() {
        let (x, y) = sphere_map(Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert!(x.abs() < 1e-12 && y.abs() < 1e-12);

        // θ = π/2, φ = π/4: base wedge midline at x = 1, scaled by 1/√2.
        let v = Vec3::new(FRAC_PI_4.cos(), FRAC_PI_4.sin(), 0.0);
        let (x, y) = sphere_map(v).unwrap();
        assert!((x - 1.0 / SQRT_2).abs() < 1e-12, "x = {x}");
        assert!(y.abs() < 1e-12, "y = {y}");

        assert!(matches!(
            sphere_map(Vec3::ZERO),
            Err(Error::UndefinedDirection)
        ));
    }

    #[test]
    fn sphere_map_is_radius_invariant() {
        let v = Vec3::new(0.3, -0.8, 0.5);
        let a = sphere_map(v).unwrap();
        let b = sphere_map(v.scaled(7.3)).unwrap();
        assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
    }

    #[test]
    fn wedge_map_jacobian_matches_sine_density() {
        // |∂(x,y)/∂(θ,φ)| = (2/π)·sin θ for the unscaled base map.
        let h = 1e-5;
        for i in 1..20 {
            for j in 1..20 {
                let theta = 0.05 + (PI - 0.1) * i as f64 / 20.0;
                let phi = 0.05 + (FRAC_PI_2 - 0.1) * j as f64 / 20.0;
                let (x_tp, y_tp) = wedge_map(theta + h, phi);
                let (x_tm, y_tm) = wedge_map(theta - h, phi);
                let (x_pp, y_pp) = wedge_map(theta, phi + h);
                let (x_pm, y_pm) = wedge_map(theta, phi - h);
                let jac = ((x_tp - x_tm) * (y_pp - y_pm) - (x_pp - x_pm) * (y_tp - y_tm))
                    / (4.0 * h * h);
                let expected = 2.0 / PI * theta.sin();
                assert!(
                    (jac.abs() - expected).abs() < 1e-6,
                    "θ={theta} φ={phi}: {jac} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn map_is_continuous_across_quadrant_boundaries() {
        let eps = 1e-9;
        for &theta in &[0.4f64, 1.2, 2.0, 2.8] {
            for k in 0..4 {
                let phi = k as f64 * FRAC_PI_2;
                let lo = (phi - eps).rem_euclid(2.0 * PI);
                let hi = phi + eps;
                let va = Vec3::new(theta.sin() * lo.cos(), theta.sin() * lo.sin(), theta.cos());
                let vb = Vec3::new(theta.sin() * hi.cos(), theta.sin() * hi.sin(), theta.cos());
                let a = sphere_map(va).unwrap();
                let b = sphere_map(vb).unwrap();
                let d = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
                assert!(d < 1e-6, "θ={theta} k={k}: jump {d}");
            }
        }
    }

    #[test]
    fn mapped_uniform_sphere_points_stay_uniform() {
        // Smaller sibling of the acceptance check: 2e5 points, 32² bins.
        let mut r = rng::seeded(200);
        let n = 200_000usize;
        let bins = 32usize;
        let mut counts = vec![0u64; bins * bins];
        for _ in 0..n {
            let v = Vec3::new(
                rng::normal(&mut r),
                rng::normal(&mut r),
                rng::normal(&mut r),
            );
            if v.norm() < 1e-9 {
                continue;
            }
            let (x, y) = sphere_map(v).unwrap();
            counts[cell_of(bins, y) * bins + cell_of(bins, x)] += 1;
        }
        let stat = chi2_uniform(&counts, n as u64);
        let (lo, hi) = chi2_band(bins * bins - 1, 0.99);
        assert!(stat > lo && stat < hi, "chi2 {stat} outside [{lo}, {hi}]");
    }

    #[test]
    fn reference_noise_starts_standard_normal() {
        let noise =
            ReferenceNoise::new(512, FieldShape::new(8, 8, 1), 0.0, 77).unwrap();
        let n = noise.grid().len() as f64;
        let mean: f64 = noise.grid().iter().sum::<f64>() / n;
        let var: f64 = noise
            .grid()
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / (n - 1.0);
        assert!(mean.abs() <= 4.0 / 512.0, "mean {mean}");
        assert!((0.97..=1.03).contains(&var), "variance {var}");
    }

    #[test]
    fn inject_zero_is_identity_and_half_mixes() {
        let mut noise = ReferenceNoise::new(256, FieldShape::new(4, 4, 1), 0.0, 3).unwrap();
        let before = noise.grid().to_vec();
        noise.inject_with(0.0).unwrap();
        assert_eq!(noise.grid(), &before[..]);
        assert_eq!(noise.history(), &[0.0]);

        noise.inject_with(0.5).unwrap();
        let rho = correlation(&before, noise.grid()).unwrap();
        assert!((rho - 0.5f64.sqrt()).abs() <= 0.02, "correlation {rho}");
        assert!(noise.inject_with(1.0).is_err());
    }

    #[test]
    fn replay_reproduces_state_bit_exactly() {
        let shape = FieldShape::new(6, 5, 2);
        let mut a = ReferenceNoise::new(64, shape, 1e-3, 9).unwrap();
        for _ in 0..5 {
            a.inject().unwrap();
        }
        a.inject_with(0.25).unwrap();
        let b = ReferenceNoise::replay(64, shape, 1e-3, 9, a.history()).unwrap();
        assert_eq!(a.grid(), b.grid());
        assert_eq!(a.bg().data(), b.bg().data());
    }

    #[test]
    fn rasterize_aggregate_sums_and_normalizes() {
        let mut noise = ReferenceNoise::new(4, FieldShape::new(2, 2, 1), 0.0, 1).unwrap();
        let vals = [1.0, -1.0, 2.0, 0.0];
        let cells = [(0u32, 0u32), (1, 0), (0, 1), (1, 1)];
        for (&(ix, iy), &v) in cells.iter().zip(&vals) {
            noise.grid[(iy as usize * 4 + ix as usize) * 1] = v;
        }
        let fp = PixelFootprint {
            pixel: (0, 0),
            triangles: vec![],
            cells: cells.to_vec(),
        };
        let got = rasterize_aggregate(&fp, &noise);
        assert!((got[0] - 1.0).abs() < 1e-15, "sum/√4 = {}", got[0]);

        let single = PixelFootprint {
            pixel: (0, 0),
            triangles: vec![],
            cells: vec![(2, 3)],
        };
        noise.grid[(3 * 4 + 2) * 1] = -0.7;
        assert!((rasterize_aggregate(&single, &noise)[0] + 0.7).abs() < 1e-15);
    }

    #[test]
    fn shared_cells_give_predicted_correlation() {
        // Two footprints sharing 2 of their 4 cells: ρ = 2/√16 = 0.5.
        let fp_a = PixelFootprint {
            pixel: (0, 0),
            triangles: vec![],
            cells: vec![(0, 0), (0, 1), (1, 0), (1, 1)],
        };
        let fp_b = PixelFootprint {
            pixel: (0, 1),
            triangles: vec![],
            cells: vec![(1, 0), (1, 1), (2, 0), (2, 1)],
        };
        assert!((footprint_correlation(&fp_a, &fp_b) - 0.5).abs() < 1e-15);

        let shape = FieldShape::new(1, 1, 1);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for seed in 0..100_000u64 {
            let noise = ReferenceNoise::new(4, shape, 0.0, seed).unwrap();
            xs.push(rasterize_aggregate(&fp_a, &noise)[0]);
            ys.push(rasterize_aggregate(&fp_b, &noise)[0]);
        }
        let rho = correlation(&xs, &ys).unwrap();
        assert!((rho - 0.5).abs() <= 0.02, "measured {rho}");
    }

    #[test]
    fn triangulate_respects_opacity_and_surface() {
        let cam = Camera::new(2.5, 0.0, 0.0, 0.7, 9, 9).unwrap();
        let (depth, opacity) = crate::renderer::render_geometry(&cam);

        let none = ImageField::zeros(opacity.shape(), FieldRole::Clean);
        let (tris, _) = triangulate_and_project(&cam, &depth, &none, 0.5).unwrap();
        assert!(tris.is_empty());

        let (tris, diag) = triangulate_and_project(&cam, &depth, &opacity, 0.5).unwrap();
        assert!(!tris.is_empty());
        assert_eq!(diag.clamped_corners % 1, 0);
        for pt in &tris {
            for tri in &pt.world {
                for v in tri {
                    assert!((v.norm() - 1.0).abs() < 1e-6, "vertex off sphere");
                }
            }
        }
    }

    #[test]
    fn center_pixel_triangles_surround_front_point() {
        // Camera straight above the pole: the center pixel of an odd
        // resolution projects around (0, 0, 1) with depth r − 1.
        let cam = Camera::new(2.5, FRAC_PI_2, 0.0, 0.6, 9, 9).unwrap();
        let (depth, opacity) = crate::renderer::render_geometry(&cam);
        assert!((depth.at(4, 4, 0) - 1.5).abs() < 1e-9);
        let (tris, _) = triangulate_and_project(&cam, &depth, &opacity, 0.5).unwrap();
        let center = tris.iter().find(|t| t.pixel == (4, 4)).unwrap();
        for tri in &center.world {
            for v in tri {
                assert!(v.z > 0.99, "corner {v:?} should stay near the pole");
            }
        }
    }

    #[test]
    fn consistent_noise_is_background_when_nothing_is_opaque() {
        let cam = Camera::new(2.5, 0.3, 0.9, 0.7, 12, 12).unwrap();
        let noise = ReferenceNoise::new(128, FieldShape::new(12, 12, 1), 0.0, 5).unwrap();
        // Threshold above one: the binary opacity never exceeds it.
        let out = consistent_noise(&cam, &noise, 2.0).unwrap();
        assert_eq!(out.data(), noise.bg().data());
    }

    #[test]
    fn consistent_noise_is_deterministic() {
        let cam = Camera::new(2.5, 0.2, 0.4, 0.7, 16, 16).unwrap();
        let noise = ReferenceNoise::new(256, FieldShape::new(16, 16, 1), 0.0, 11).unwrap();
        let a = consistent_noise(&cam, &noise, 0.5).unwrap();
        let b = consistent_noise(&cam, &noise, 0.5).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn nearby_cameras_share_noise_on_the_surface() {
        let shape = FieldShape::new(16, 16, 1);
        let cam_a = Camera::new(2.5, 0.0, 0.0, 0.6, 16, 16).unwrap();
        let cam_b = Camera::new(2.5, 0.0, 10f64.to_radians(), 0.6, 16, 16).unwrap();
        let rast_a = NoiseRasterizer::for_camera(&cam_a, 0.5, 256).unwrap();
        let rast_b = NoiseRasterizer::for_camera(&cam_b, 0.5, 256).unwrap();

        // Correspondence by reprojection through the sphere.
        let mut pairs = Vec::new();
        for fp in rast_a.opaque_pixels() {
            let (row, col) = fp.pixel;
            let ray = cam_a.pixel_ray(row, col);
            let t = unit_sphere_hit(&ray).unwrap();
            let hit = ray.origin.add(ray.dir.scaled(t));
            // Only front-facing points are visible from camera B too.
            if hit.sub(cam_b.eye()).normalized().dot(hit) > -0.2 {
                continue;
            }
            let Some((fr, fc)) = cam_b.project(hit) else {
                continue;
            };
            let (r2, c2) = (fr.round() as i64, fc.round() as i64);
            if r2 < 0 || c2 < 0 || r2 >= 16 || c2 >= 16 {
                continue;
            }
            if let Some(fp_b) = rast_b.footprint(r2 as usize, c2 as usize) {
                pairs.push((fp.clone(), fp_b.clone()));
            }
        }
        assert!(pairs.len() > 20, "found only {} pairs", pairs.len());

        let best = pairs
            .iter()
            .map(|(a, b)| footprint_correlation(a, b))
            .fold(0.0f64, f64::max);
        assert!(best >= 0.8, "best geometric overlap {best}");

        // Monte Carlo over reseedings matches the overlap prediction.
        let subset: Vec<_> = pairs.iter().take(12).collect();
        let n_seeds = 3000u64;
        let mut samples: Vec<(Vec<f64>, Vec<f64>)> =
            vec![(Vec::new(), Vec::new()); subset.len()];
        for seed in 0..n_seeds {
            let noise = ReferenceNoise::new(256, shape, 0.0, 40_000 + seed).unwrap();
            for (k, (fa, fb)) in subset.iter().enumerate() {
                samples[k].0.push(rasterize_aggregate(fa, &noise)[0]);
                samples[k].1.push(rasterize_aggregate(fb, &noise)[0]);
            }
        }
        for (k, (fa, fb)) in subset.iter().enumerate() {
            let predicted = footprint_correlation(fa, fb);
            let measured = correlation(&samples[k].0, &samples[k].1).unwrap();
            assert!(
                (measured - predicted).abs() <= 0.08,
                "pair {k}: measured {measured} vs predicted {predicted}"
            );
        }
    }

    #[test]
    fn disjoint_patches_are_uncorrelated() {
        let shape = FieldShape::new(12, 12, 1);
        let cam_a = Camera::new(2.5, 0.0, 0.0, 0.5, 12, 12).unwrap();
        let cam_b = Camera::new(2.5, 0.0, PI, 0.5, 12, 12).unwrap();
        let rast_a = NoiseRasterizer::for_camera(&cam_a, 0.5, 256).unwrap();
        let rast_b = NoiseRasterizer::for_camera(&cam_b, 0.5, 256).unwrap();
        let fa = rast_a.footprint(6, 6).unwrap();
        let fb = rast_b.footprint(6, 6).unwrap();
        assert_eq!(footprint_correlation(fa, fb), 0.0);

        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for seed in 0..5000u64 {
            let noise = ReferenceNoise::new(256, shape, 0.0, 90_000 + seed).unwrap();
            xs.push(rasterize_aggregate(fa, &noise)[0]);
            ys.push(rasterize_aggregate(fb, &noise)[0]);
        }
        let rho = correlation(&xs, &ys).unwrap();
        assert!(rho.abs() <= 0.05, "correlation {rho}");
    }

    #[test]
    fn bilinear_taps_examples() {
        // Exactly at a cell center: one tap with weight 1.
        let res = 8;
        let u = cell_center(res, 3);
        let v = cell_center(res, 5);
        let (taps, w) = bilinear_taps(res, u, v);
        assert_eq!(taps[0], (3, 5));
        assert!((w[0] - 1.0).abs() < 1e-12 && w[1].abs() < 1e-12);

        // Exactly between four cells: all weights 1/4, variance 4·(1/4)².
        let mid_u = 0.5 * (cell_center(res, 3) + cell_center(res, 4));
        let mid_v = 0.5 * (cell_center(res, 5) + cell_center(res, 6));
        let (_, w) = bilinear_taps(res, mid_u, mid_v);
        for wi in w {
            assert!((wi - 0.25).abs() < 1e-12);
        }
        let var: f64 = w.iter().map(|wi| wi * wi).sum();
        assert!((var - 0.25).abs() < 1e-12);
    }

    #[test]
    fn bilinear_noise_loses_variance() {
        let shape = FieldShape::new(16, 16, 1);
        let cam = Camera::new(2.5, 0.1, 0.3, 0.6, 16, 16).unwrap();
        let mut opaque_vals = Vec::new();
        for seed in 0..2000u64 {
            let noise = ReferenceNoise::new(128, shape, 0.0, 60_000 + seed).unwrap();
            let img = bilinear_noise(&cam, &noise, 0.5).unwrap();
            // center pixel is opaque for this camera
            opaque_vals.push(img.at(8, 8, 0));
        }
        let n = opaque_vals.len() as f64;
        let mean = opaque_vals.iter().sum::<f64>() / n;
        let var = opaque_vals
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / (n - 1.0);
        assert!(var < 0.9, "bilinear variance {var} should drop below 0.9");
    }

    #[test]
    fn footprints_are_never_empty() {
        let cam = Camera::new(2.5, 0.25, 1.0, 0.7, 24, 24).unwrap();
        // Tiny reference grid: most pixel footprints are sub-cell and must
        // fall back to their centroid cell.
        let rast = NoiseRasterizer::for_camera(&cam, 0.5, 8).unwrap();
        for fp in rast.opaque_pixels() {
            assert!(fp.cell_count() >= 1);
        }
    }
}
