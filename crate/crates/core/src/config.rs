//! Experiment configuration: a JSON file plus dotted-key overrides, fully
//! resolved into typed settings. The resolved config echoes back out as
//! JSON so any run can be reproduced from its artifacts alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distill::{CameraOrbit, GuidanceSpec, NoiseMode, OptimizerKind};
use crate::error::{Error, Result};
use crate::field::{FieldRole, FieldShape, ImageField};
use crate::geom::Camera;
use crate::renderer::{SphereScene, TextureFilter};
use crate::schedule::{AnnealSpec, AnnealStage, BetaSchedule, Schedule};
use crate::teacher::{GaussianMixtureTeacher, MixtureComponent};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub beta: BetaConfig,
    #[serde(default)]
    pub anneal: AnnealConfig,
    #[serde(default)]
    pub teacher: TeacherConfig,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub cameras: Vec<CameraConfig>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub sample2d: Sample2dConfig,
    #[serde(default)]
    pub distill: DistillSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "default_schedule_kind")]
    pub kind: String,
    #[serde(default)]
    pub t_s: Option<f64>,
    #[serde(default, rename = "T")]
    pub t_end: Option<f64>,
    #[serde(default)]
    pub alpha_end: Option<f64>,
}

fn default_schedule_kind() -> String {
    "vp".into()
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: default_schedule_kind(),
            t_s: None,
            t_end: None,
            alpha_end: None,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<Schedule> {
        match self.kind.as_str() {
            "vp" => {
                let t_end = self.t_end.unwrap_or(1.0);
                Schedule::vp(
                    self.t_s.unwrap_or(5e-4 * t_end),
                    t_end,
                    self.alpha_end.unwrap_or(0.01),
                )
            }
            "vp_sd_like" => Ok(Schedule::vp_sd_like()),
            "edm" => Schedule::edm(self.t_s.unwrap_or(0.002), self.t_end.unwrap_or(80.0)),
            other => Err(Error::Config(format!("unknown schedule kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaConfig {
    #[serde(default = "default_beta_kind")]
    pub kind: String,
    #[serde(default)]
    pub b: Option<f64>,
}

fn default_beta_kind() -> String {
    "zero".into()
}

impl Default for BetaConfig {
    fn default() -> Self {
        Self {
            kind: default_beta_kind(),
            b: None,
        }
    }
}

impl BetaConfig {
    pub fn build(&self) -> Result<BetaSchedule> {
        match self.kind.as_str() {
            "zero" => Ok(BetaSchedule::Zero),
            "constant" => Ok(BetaSchedule::Constant(self.b.unwrap_or(1.0))),
            "ddpm" => Ok(BetaSchedule::Ddpm),
            other => Err(Error::Config(format!("unknown beta kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealConfig {
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default)]
    pub t_min: Option<f64>,
    #[serde(default)]
    pub steps: Option<usize>,
    /// Optional multi-stage spec: (fraction, from, to) per stage.
    #[serde(default)]
    pub stages: Option<Vec<(f64, f64, f64)>>,
}

impl AnnealConfig {
    pub fn build(&self, schedule: &Schedule, steps: usize) -> Result<AnnealSpec> {
        let total = self.steps.unwrap_or(steps).max(1);
        if let Some(stages) = &self.stages {
            let stages = stages
                .iter()
                .map(|&(fraction, t_from, t_to)| AnnealStage {
                    fraction,
                    t_from,
                    t_to,
                })
                .collect();
            return AnnealSpec::staged(stages, total);
        }
        let t_max = self.t_max.unwrap_or(0.98 * schedule.t_end());
        let t_min = self.t_min.unwrap_or_else(|| {
            (0.05 * schedule.t_end()).max(schedule.t_start())
        });
        AnnealSpec::linear(t_max, t_min, total)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeanSpec {
    Fill { fill: Vec<f64> },
    Path { path: String },
    Checker { checker: CheckerSpec },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckerSpec {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub cells: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub weight: f64,
    #[serde(default)]
    pub std: f64,
    pub mean: MeanSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    #[serde(default = "default_teacher_shape")]
    pub shape: (usize, usize, usize),
    #[serde(default = "default_components")]
    pub components: Vec<ComponentConfig>,
    #[serde(default)]
    pub conditions: BTreeMap<String, Vec<usize>>,
}

fn default_teacher_shape() -> (usize, usize, usize) {
    (32, 32, 1)
}

fn default_components() -> Vec<ComponentConfig> {
    // Two modes so the score is nonlinear and the noise actually steers
    // the trajectory; a single Gaussian cancels the noise exactly.
    vec![
        ComponentConfig {
            weight: 0.5,
            std: 0.0,
            mean: MeanSpec::Fill { fill: vec![0.25] },
        },
        ComponentConfig {
            weight: 0.5,
            std: 0.0,
            mean: MeanSpec::Fill { fill: vec![0.85] },
        },
    ]
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            shape: default_teacher_shape(),
            components: default_components(),
            conditions: BTreeMap::new(),
        }
    }
}

impl TeacherConfig {
    pub fn build(&self, base_dir: &Path) -> Result<GaussianMixtureTeacher> {
        let (h, w, c) = self.shape;
        let shape = FieldShape::new(h, w, c);
        let mut components = Vec::with_capacity(self.components.len());
        for comp in &self.components {
            let mean = match &comp.mean {
                MeanSpec::Fill { fill } => {
                    if fill.len() != c {
                        return Err(Error::Config(format!(
                            "fill has {} channels, teacher wants {c}",
                            fill.len()
                        )));
                    }
                    ImageField::from_fn(shape, FieldRole::Clean, |_, _, ch| fill[ch])
                }
                MeanSpec::Checker { checker } => {
                    if checker.a.len() != c || checker.b.len() != c {
                        return Err(Error::Config("checker colors must match channels".into()));
                    }
                    let cells = checker.cells.max(1);
                    ImageField::from_fn(shape, FieldRole::Clean, |y, x, ch| {
                        if (y / cells + x / cells) % 2 == 0 {
                            checker.a[ch]
                        } else {
                            checker.b[ch]
                        }
                    })
                }
                MeanSpec::Path { path } => {
                    let full = base_dir.join(path);
                    let img = crate::io::load_image(&full, c)?;
                    if img.shape() != shape {
                        return Err(Error::Config(format!(
                            "{} is {:?}, teacher wants {:?}",
                            full.display(),
                            img.shape().as_tuple(),
                            shape.as_tuple()
                        )));
                    }
                    img
                }
            };
            components.push(MixtureComponent {
                weight: comp.weight,
                mean,
                std: comp.std,
            });
        }
        GaussianMixtureTeacher::new(components, self.conditions.clone())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default = "default_texture_res")]
    pub texture_res: usize,
    #[serde(default)]
    pub background: Option<Vec<f64>>,
    #[serde(default)]
    pub init: f64,
    /// Start from a stored texture instead of a constant: a PNG (values
    /// scaled to [0, 1]) or a raw `.f32` dump matching `texture_res`.
    #[serde(default)]
    pub texture_path: Option<String>,
    #[serde(default = "default_filter")]
    pub filter: String,
}

fn default_texture_res() -> usize {
    128
}

fn default_filter() -> String {
    "bilinear".into()
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            texture_res: default_texture_res(),
            background: None,
            init: 0.0,
            texture_path: None,
            filter: default_filter(),
        }
    }
}

impl SceneConfig {
    pub fn build(&self, channels: usize, base_dir: &Path) -> Result<SphereScene> {
        let filter = match self.filter.as_str() {
            "bilinear" => TextureFilter::Bilinear,
            "nearest" => TextureFilter::Nearest,
            other => return Err(Error::Config(format!("unknown texture filter `{other}`"))),
        };
        let background = self
            .background
            .clone()
            .unwrap_or_else(|| vec![self.init; channels]);
        let Some(path) = &self.texture_path else {
            return SphereScene::uniform(self.texture_res, channels, self.init, background, filter);
        };
        let full = base_dir.join(path);
        let shape = FieldShape::new(self.texture_res, self.texture_res, channels);
        let texture = if path.ends_with(".f32") {
            crate::io::load_raw_f32(shape, FieldRole::Clean, &full)?
        } else {
            let img = crate::io::load_image(&full, channels)?;
            if img.shape() != shape {
                return Err(Error::Config(format!(
                    "{} is {:?}, scene wants {:?}",
                    full.display(),
                    img.shape().as_tuple(),
                    shape.as_tuple()
                )));
            }
            img
        };
        SphereScene::new(texture, background, filter)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default)]
    pub elevation_deg: f64,
    #[serde(default)]
    pub azimuth_deg: f64,
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
    #[serde(default = "default_view_res")]
    pub width: usize,
    #[serde(default = "default_view_res")]
    pub height: usize,
}

fn default_radius() -> f64 {
    2.5
}

fn default_fov() -> f64 {
    40.0
}

fn default_view_res() -> usize {
    32
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            radius: default_radius(),
            elevation_deg: 0.0,
            azimuth_deg: 0.0,
            fov_deg: default_fov(),
            width: default_view_res(),
            height: default_view_res(),
        }
    }
}

impl CameraConfig {
    pub fn build(&self) -> Result<Camera> {
        Camera::new(
            self.radius,
            self.elevation_deg.to_radians(),
            self.azimuth_deg.to_radians(),
            self.fov_deg.to_radians(),
            self.width,
            self.height,
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "default_ref_res")]
    pub ref_res: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_o_th")]
    pub opacity_threshold: f64,
    /// Reference reseedings for Monte Carlo reports.
    #[serde(default = "default_reseeds")]
    pub reseeds: usize,
}

fn default_ref_res() -> usize {
    crate::noise_transport::DEFAULT_REF_RES
}

fn default_gamma() -> f64 {
    1e-4
}

fn default_o_th() -> f64 {
    crate::noise_transport::DEFAULT_OPACITY_THRESHOLD
}

fn default_reseeds() -> usize {
    2000
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            ref_res: default_ref_res(),
            gamma: default_gamma(),
            opacity_threshold: default_o_th(),
            reseeds: default_reseeds(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample2dConfig {
    #[serde(default = "default_sample_steps")]
    pub steps: usize,
    /// Dump the clean variable as an image at these step indices.
    #[serde(default)]
    pub snapshot_steps: Vec<usize>,
}

fn default_sample_steps() -> usize {
    1000
}

impl Default for Sample2dConfig {
    fn default() -> Self {
        Self {
            steps: default_sample_steps(),
            snapshot_steps: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitConfig {
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_elevation_band")]
    pub elevation_deg: (f64, f64),
    #[serde(default)]
    pub azimuth_deg: Option<f64>,
    #[serde(default)]
    pub azimuth_count: Option<usize>,
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
    #[serde(default = "default_view_res")]
    pub width: usize,
    #[serde(default = "default_view_res")]
    pub height: usize,
}

fn default_elevation_band() -> (f64, f64) {
    (-25.0, 25.0)
}

impl Default for OrbitConfig {
    fn default() -> Self {
        Self {
            radius: default_radius(),
            elevation_deg: default_elevation_band(),
            azimuth_deg: None,
            azimuth_count: None,
            fov_deg: default_fov(),
            width: default_view_res(),
            height: default_view_res(),
        }
    }
}

impl OrbitConfig {
    pub fn build(&self) -> CameraOrbit {
        CameraOrbit {
            radius: self.radius,
            elevation: (
                self.elevation_deg.0.to_radians(),
                self.elevation_deg.1.to_radians(),
            ),
            azimuth: self.azimuth_deg.map(f64::to_radians),
            azimuth_count: self.azimuth_count,
            fov_y: self.fov_deg.to_radians(),
            width: self.width,
            height: self.height,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSection {
    #[serde(default = "default_distill_steps")]
    pub steps: usize,
    #[serde(default = "default_noise_mode")]
    pub noise_mode: NoiseMode,
    #[serde(default = "OptimizerKind::adam_default")]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub guidance: GuidanceSpec,
    #[serde(default)]
    pub orbit: OrbitConfig,
    #[serde(default)]
    pub snapshot_every: Option<usize>,
    /// Run these modes back to back and compare their variance metrics.
    #[serde(default)]
    pub compare_modes: Option<Vec<NoiseMode>>,
}

fn default_distill_steps() -> usize {
    2000
}

fn default_noise_mode() -> NoiseMode {
    NoiseMode::Consistent
}

impl Default for DistillSection {
    fn default() -> Self {
        Self {
            steps: default_distill_steps(),
            noise_mode: default_noise_mode(),
            optimizer: OptimizerKind::adam_default(),
            guidance: GuidanceSpec::default(),
            orbit: OrbitConfig::default(),
            snapshot_every: None,
            compare_modes: None,
        }
    }
}

impl ExperimentConfig {
    /// Load a JSON config, apply `key=value` overrides, and resolve.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = match path {
            Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
            None => serde_json::Value::Object(Default::default()),
        };
        for (key, raw) in overrides {
            apply_override(&mut value, key, raw)?;
        }
        Ok(serde_json::from_value(value)?)
    }
}

/// Set a dotted-path key in a JSON tree. Values parse as JSON when they
/// can and fall back to strings, so `--set schedule.kind=edm` and
/// `--set noise.gamma=0.001` both work.
pub fn apply_override(root: &mut serde_json::Value, key: &str, raw: &str) -> Result<()> {
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i == parts.len() - 1;
        if let Ok(idx) = part.parse::<usize>() {
            let arr = node
                .as_array_mut()
                .ok_or_else(|| Error::Config(format!("`{key}`: `{part}` indexes a non-array")))?;
            if idx >= arr.len() {
                return Err(Error::Config(format!("`{key}`: index {idx} out of range")));
            }
            if last {
                arr[idx] = parsed;
                return Ok(());
            }
            node = &mut arr[idx];
        } else {
            let obj = node.as_object_mut().ok_or_else(|| {
                Error::Config(format!("`{key}`: `{part}` indexes a non-object"))
            })?;
            if last {
                obj.insert(part.to_string(), parsed);
                return Ok(());
            }
            node = obj
                .entry(part.to_string())
                .or_insert(serde_json::Value::Object(Default::default()));
        }
    }
    Ok(())
}

/// Where a config file's relative paths resolve from.
pub fn base_dir(config_path: Option<&Path>) -> PathBuf {
    config_path
        .and_then(|p| p.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."))
}
