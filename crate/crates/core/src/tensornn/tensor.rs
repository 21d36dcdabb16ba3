use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{shape_err, Result};

/// Spatial extent plus channel count of an activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    /// Shape of a flat vector of `n` values.
    pub const fn flat(n: usize) -> Self {
        Self {
            height: 1,
            width: 1,
            channels: n,
        }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn is_flat(&self) -> bool {
        self.height == 1 && self.width == 1
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Row-major `height × width × channels` activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return shape_err(format!(
                "tensor {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return shape_err("tensor contains non-finite values");
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    /// Flat vector tensor (`1 × 1 × n`).
    pub fn from_vec(data: Vec<T>) -> Self {
        Self {
            shape: Shape::flat(data.len()),
            data,
        }
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.shape.width + x) * self.shape.channels + c]
    }

    /// Same data viewed as a flat vector.
    pub fn flattened(self) -> Self {
        Self {
            shape: Shape::flat(self.data.len()),
            data: self.data,
        }
    }

    pub fn reshaped(self, shape: Shape) -> Result<Self> {
        if shape.len() != self.data.len() {
            return shape_err(format!("cannot reshape {} into {shape}", self.shape));
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor3<U> {
        Tensor3 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}
