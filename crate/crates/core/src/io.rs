//! File export/import: PNG for looking at things, raw little-endian f32
//! for exactness, CSV for metrics.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::distill::RunRow;
use crate::error::{Error, Result};
use crate::field::{FieldRole, FieldShape, ImageField};
use crate::samplers::TrajectoryRow;

/// Write a field as an 8-bit PNG, mapping `[lo, hi]` to `[0, 255]`.
/// One channel becomes grayscale, three become RGB.
pub fn save_png(field: &ImageField, path: &Path, lo: f64, hi: f64) -> Result<()> {
    let shape = field.shape();
    let to_u8 = |v: f64| -> u8 { (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8 };
    let (w, h) = (shape.width as u32, shape.height as u32);
    match shape.channels {
        1 => {
            let buf: Vec<u8> = field.data().iter().map(|&v| to_u8(v)).collect();
            image::save_buffer(path, &buf, w, h, image::ColorType::L8)?;
        }
        3 => {
            let buf: Vec<u8> = field.data().iter().map(|&v| to_u8(v)).collect();
            image::save_buffer(path, &buf, w, h, image::ColorType::Rgb8)?;
        }
        c => {
            return Err(Error::Config(format!(
                "cannot encode a {c}-channel field as PNG"
            )))
        }
    }
    Ok(())
}

/// Load a PNG or PPM image as a field with values in [0, 1].
pub fn load_image(path: &Path, channels: usize) -> Result<ImageField> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let shape = FieldShape::new(h, w, channels);
    let data = match channels {
        1 => img
            .to_luma8()
            .into_raw()
            .iter()
            .map(|&v| v as f64 / 255.0)
            .collect(),
        3 => img
            .to_rgb8()
            .into_raw()
            .iter()
            .map(|&v| v as f64 / 255.0)
            .collect(),
        c => {
            return Err(Error::Config(format!(
                "cannot load an image into {c} channels"
            )))
        }
    };
    ImageField::from_vec(shape, data, FieldRole::Clean)
}

/// Exact dump: little-endian f32, row-major, channels innermost.
pub fn save_raw_f32(field: &ImageField, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for &v in field.data() {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_raw_f32(shape: FieldShape, role: FieldRole, path: &Path) -> Result<ImageField> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() != shape.len() * 4 {
        return Err(Error::Config(format!(
            "raw file holds {} bytes, shape wants {}",
            bytes.len(),
            shape.len() * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    ImageField::from_vec(shape, data, role)
}

pub fn write_trajectory_csv(rows: &[TrajectoryRow], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "step,t,clean_norm,eps_norm,recovered_norm")?;
    for r in rows {
        writeln!(
            out,
            "{},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.step, r.t, r.clean_norm, r.eps_norm, r.recovered_norm
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_metrics_csv(rows: &[RunRow], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "step,t,grad_norm,sigma_metric,noise_spatial_var")?;
    for r in rows {
        writeln!(
            out,
            "{},{:.17e},{:.17e},{},{}",
            r.step,
            r.t,
            r.grad_norm,
            r.sigma_metric.map_or(String::new(), |v| format!("{v:.17e}")),
            r.noise_spatial_var
                .map_or(String::new(), |v| format!("{v:.17e}")),
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json(value: &impl serde::Serialize, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn raw_roundtrip_is_f32_exact() {
        let dir = std::env::temp_dir().join("cleanflow_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.f32");
        let shape = FieldShape::new(3, 4, 2);
        let mut r = rng::seeded(1);
        let field = rng::normal_field(shape, FieldRole::Noise, &mut r);
        save_raw_f32(&field, &path).unwrap();
        let back = load_raw_f32(shape, FieldRole::Noise, &path).unwrap();
        for (a, b) in field.data().iter().zip(back.data()) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn png_roundtrip_preserves_quantized_values() {
        let dir = std::env::temp_dir().join("cleanflow_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.png");
        let shape = FieldShape::new(5, 7, 1);
        let field = ImageField::from_fn(shape, FieldRole::Clean, |y, x, _| {
            ((y * 7 + x) as f64 / 34.0).clamp(0.0, 1.0)
        });
        save_png(&field, &path, 0.0, 1.0).unwrap();
        let back = load_image(&path, 1).unwrap();
        assert!(field.max_abs_diff(&back).unwrap() <= 0.5 / 255.0 + 1e-9);
    }
}
