//! Dense H×W×C image fields, the common currency between the teacher,
//! the samplers, the renderer and the noise rasterizer.

use crate::error::{Error, Result};

/// What a field holds. Purely informational; arithmetic keeps the role of
/// the left operand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldRole {
    Clean,
    Noisy,
    Noise,
    Gradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FieldShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl FieldShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_tuple(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }
}

/// Row-major H×W×C array of f64 values.
#[derive(Clone, Debug)]
pub struct ImageField {
    shape: FieldShape,
    role: FieldRole,
    data: Vec<f64>,
}

impl ImageField {
    pub fn zeros(shape: FieldShape, role: FieldRole) -> Self {
        Self {
            shape,
            role,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn constant(shape: FieldShape, value: f64, role: FieldRole) -> Self {
        Self {
            shape,
            role,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: FieldShape, data: Vec<f64>, role: FieldRole) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Invariant(format!(
                "field data length {} does not match shape {:?}",
                data.len(),
                shape.as_tuple()
            )));
        }
        Ok(Self { shape, role, data })
    }

    pub fn from_fn(
        shape: FieldShape,
        role: FieldRole,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for y in 0..shape.height {
            for x in 0..shape.width {
                for c in 0..shape.channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { shape, role, data }
    }

    pub fn shape(&self) -> FieldShape {
        self.shape
    }

    pub fn role(&self) -> FieldRole {
        self.role
    }

    pub fn with_role(mut self, role: FieldRole) -> Self {
        self.role = role;
        self
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn idx(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.shape.width + x) * self.shape.channels + c
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.idx(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        let i = self.idx(y, x, c);
        self.data[i] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm over all entries.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        ensure_same_shape(self, other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        ensure_same_shape(self, other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= k;
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = f(*v);
        }
        out
    }

    /// `self += k * other`, shapes must match.
    pub fn add_scaled(&mut self, other: &Self, k: f64) -> Result<()> {
        ensure_same_shape(self, other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }
}

pub fn ensure_same_shape(a: &ImageField, b: &ImageField) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: a.shape().as_tuple(),
            got: b.shape().as_tuple(),
        });
    }
    Ok(())
}

/// `a*x + b*y` elementwise; the result takes `x`'s role.
pub fn lincomb(a: f64, x: &ImageField, b: f64, y: &ImageField) -> Result<ImageField> {
    ensure_same_shape(x, y)?;
    let mut out = x.clone();
    for (o, v) in out.data.iter_mut().zip(&y.data) {
        *o = a * *o + b * v;
    }
    Ok(out)
}

pub fn sub(x: &ImageField, y: &ImageField) -> Result<ImageField> {
    lincomb(1.0, x, -1.0, y)
}
