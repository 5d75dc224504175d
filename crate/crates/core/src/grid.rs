//! Dense per-pixel storage: scalar grids, masks and 2-vector fields.
//!
//! All fields in this crate live on the pixel grid of the source image,
//! row-major with `(x, y)` indexing. Two vector-field newtypes keep the
//! unit conventions apart: [`FlowField`] is valued in pixels per frame
//! interval, [`MotionField`] in normalized image coordinates per frame
//! interval. Converting between them multiplies or divides componentwise
//! by the focal lengths.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use nalgebra::Vector2;

use crate::geometry::CameraIntrinsics;

/// Row-major rectangular grid of `T`, indexed by `(x, y)` pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// `(width, height)`.
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<&T> {
        if x < self.width && y < self.height {
            Some(&self.data[y * self.width + x])
        } else {
            None
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Iterate `(x, y, &value)` in row-major order.
    pub fn enumerate(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let width = self.width;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, v)| (i % width, i / width, v))
    }

    pub fn iter(&self) -> core::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| f(v)).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl<T> Index<(usize, usize)> for Grid<T> {
    type Output = T;

    #[inline]
    fn index(&self, (x, y): (usize, usize)) -> &T {
        debug_assert!(x < self.width && y < self.height);
        &self.data[y * self.width + x]
    }
}

impl<T> IndexMut<(usize, usize)> for Grid<T> {
    #[inline]
    fn index_mut(&mut self, (x, y): (usize, usize)) -> &mut T {
        debug_assert!(x < self.width && y < self.height);
        &mut self.data[y * self.width + x]
    }
}

/// Per-pixel validity.
pub type Mask = Grid<bool>;

impl Mask {
    pub fn count_true(&self) -> usize {
        self.iter().filter(|&&v| v).count()
    }

    /// Pointwise conjunction. Panics on dimension mismatch.
    pub fn and(&self, other: &Mask) -> Mask {
        assert!(self.same_dims(other), "mask dimensions differ");
        Grid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }
}

/// Single-channel intensity image, values in `[0, 1]`.
pub type Image = Grid<f64>;

/// Per-pixel inverse depth `rho = 1/Z` with a validity mask.
///
/// Invalid pixels (no depth reading) carry `rho = 0` and `valid = false`;
/// they are excluded from every fit and loss downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseDepthMap {
    pub rho: Grid<f64>,
    pub valid: Mask,
}

impl InverseDepthMap {
    /// Build from per-pixel depth `Z`; non-positive or non-finite depths are
    /// marked invalid.
    pub fn from_depth(depth: &Grid<f64>) -> Self {
        let valid = depth.map(|&z| z > 0.0 && z.is_finite());
        let rho = depth.map(|&z| if z > 0.0 && z.is_finite() { 1.0 / z } else { 0.0 });
        Self { rho, valid }
    }

    pub fn uniform(width: usize, height: usize, rho: f64) -> Self {
        Self {
            rho: Grid::new(width, height, rho),
            valid: Grid::new(width, height, true),
        }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.rho.dims()
    }
}

/// Dense per-pixel 2-vector field with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub vectors: Grid<Vector2<f64>>,
    pub valid: Mask,
}

impl VectorField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            vectors: Grid::new(width, height, Vector2::zeros()),
            valid: Grid::new(width, height, true),
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> Option<Vector2<f64>>,
    ) -> Self {
        let mut vectors = Grid::new(width, height, Vector2::zeros());
        let mut valid = Grid::new(width, height, false);
        for y in 0..height {
            for x in 0..width {
                if let Some(v) = f(x, y) {
                    vectors[(x, y)] = v;
                    valid[(x, y)] = true;
                }
            }
        }
        Self { vectors, valid }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.vectors.dims()
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> Option<Vector2<f64>> {
        if self.valid[(x, y)] {
            Some(self.vectors[(x, y)])
        } else {
            None
        }
    }
}

/// Optical flow in pixel units per frame interval.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField(pub VectorField);

/// Rigid motion field in normalized coordinates per frame interval.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionField(pub VectorField);

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self(VectorField::zeros(width, height))
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    /// Divide componentwise by `(fx, fy)`.
    pub fn to_normalized(&self, intrinsics: &CameraIntrinsics) -> MotionField {
        let (fx, fy) = (intrinsics.fx, intrinsics.fy);
        MotionField(VectorField {
            vectors: self
                .0
                .vectors
                .map(|v| Vector2::new(v.x / fx, v.y / fy)),
            valid: self.0.valid.clone(),
        })
    }
}

impl MotionField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self(VectorField::zeros(width, height))
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    /// Multiply componentwise by `(fx, fy)`.
    pub fn to_pixel_flow(&self, intrinsics: &CameraIntrinsics) -> FlowField {
        let (fx, fy) = (intrinsics.fx, intrinsics.fy);
        FlowField(VectorField {
            vectors: self
                .0
                .vectors
                .map(|v| Vector2::new(v.x * fx, v.y * fy)),
            valid: self.0.valid.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_indexing() {
        let g = Grid::from_fn(3, 2, |x, y| 10 * y + x);
        assert_eq!(g[(0, 0)], 0);
        assert_eq!(g[(2, 0)], 2);
        assert_eq!(g[(0, 1)], 10);
        assert_eq!(g.as_slice(), &[0, 1, 2, 10, 11, 12]);
    }

    #[test]
    fn get_out_of_bounds_is_none() {
        let g = Grid::new(2, 2, 0u8);
        assert!(g.get(2, 0).is_none());
        assert!(g.get(0, 2).is_none());
        assert!(g.get(1, 1).is_some());
    }

    #[test]
    fn inverse_depth_rejects_nonpositive() {
        let depth = Grid::from_fn(2, 1, |x, _| if x == 0 { 2.0 } else { 0.0 });
        let idm = InverseDepthMap::from_depth(&depth);
        assert!(idm.valid[(0, 0)]);
        assert!(!idm.valid[(1, 0)]);
        assert_eq!(idm.rho[(0, 0)], 0.5);
        assert_eq!(idm.rho[(1, 0)], 0.0);
    }

    #[test]
    fn unit_conversion_round_trip() {
        let intr = CameraIntrinsics::new(500.0, 250.0, 320.0, 240.0, 640, 480).unwrap();
        let field = MotionField(VectorField::from_fn(4, 4, |x, y| {
            Some(Vector2::new(x as f64 * 0.01, y as f64 * -0.02))
        }));
        let back = field.to_pixel_flow(&intr).to_normalized(&intr);
        for ((_, _, a), (_, _, b)) in field.0.vectors.enumerate().zip(back.0.vectors.enumerate()) {
            assert!((a - b).norm() < 1e-15);
        }
    }
}
