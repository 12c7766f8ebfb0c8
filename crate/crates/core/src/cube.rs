//! Observation container: an `ny x nx` grid of length-`l` spectra.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use num_traits::Float;

/// Axis-aligned pixel rectangle `[y0, y0 + ny) x [x0, x0 + nx)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub y0: usize,
    pub x0: usize,
    pub ny: usize,
    pub nx: usize,
}

impl Rect {
    pub fn new(y0: usize, x0: usize, ny: usize, nx: usize) -> Self {
        Self { y0, x0, ny, nx }
    }

    pub fn full(ny: usize, nx: usize) -> Self {
        Self::new(0, 0, ny, nx)
    }

    /// Square of side `size` centred in an `ny x nx` grid (rounded down).
    pub fn centered(ny: usize, nx: usize, size: usize) -> Result<Self> {
        if size == 0 || size > ny || size > nx {
            return Err(Error::invalid(format!("a {size}-pixel square does not fit in {ny}x{nx}")));
        }
        Ok(Self::new((ny - size) / 2, (nx - size) / 2, size, size))
    }

    pub fn n_pixels(&self) -> usize {
        self.ny * self.nx
    }

    pub fn fits(&self, ny: usize, nx: usize) -> bool {
        self.ny > 0 && self.nx > 0 && self.y0 + self.ny <= ny && self.x0 + self.nx <= nx
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y0 + self.ny).contains(&y) && (self.x0..self.x0 + self.nx).contains(&x)
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.y0 >= self.y0
            && other.x0 >= self.x0
            && other.y0 + other.ny <= self.y0 + self.ny
            && other.x0 + other.nx <= self.x0 + self.nx
    }

    /// Row-major linear indices of the covered pixels in a grid `nx` wide.
    pub fn indices(&self, grid_nx: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_pixels());
        for y in self.y0..self.y0 + self.ny {
            for x in self.x0..self.x0 + self.nx {
                out.push(y * grid_nx + x);
            }
        }
        out
    }
}

/// Hyperspectral cube stored pixel-major, band-fastest:
/// voxel `(y, x, b)` lives at `(y * nx + x) * l + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cube<T> {
    ny: usize,
    nx: usize,
    l: usize,
    data: Vec<T>,
    variance: Option<Vec<T>>,
    /// Absolute wavelength index of band 0.
    pub band_origin: i64,
}

impl<T: Scalar> Cube<T> {
    pub fn new(ny: usize, nx: usize, l: usize, data: Vec<T>) -> Result<Self> {
        if ny == 0 || nx == 0 || l == 0 {
            return Err(Error::invalid("cube dimensions must be positive"));
        }
        if data.len() != ny * nx * l {
            return Err(Error::DimensionMismatch(format!(
                "expected {} voxels for {ny}x{nx}x{l}, got {}",
                ny * nx * l,
                data.len()
            )));
        }
        Ok(Self {
            ny,
            nx,
            l,
            data,
            variance: None,
            band_origin: 0,
        })
    }

    pub fn zeros(ny: usize, nx: usize, l: usize) -> Result<Self> {
        Self::new(ny, nx, l, vec![T::zero(); ny * nx * l])
    }

    /// Attach a variance cube. Entries must be strictly positive except on
    /// masked pixels, where they are ignored.
    pub fn with_variance(mut self, variance: Vec<T>) -> Result<Self> {
        if variance.len() != self.data.len() {
            return Err(Error::DimensionMismatch("variance cube shape differs from data".into()));
        }
        for p in 0..self.n_pixels() {
            let r = p * self.l..(p + 1) * self.l;
            let masked = self.data[r.clone()].iter().any(|v| v.to_f64_lossy().is_nan());
            if !masked && variance[r].iter().any(|v| !(*v > T::zero())) {
                return Err(Error::invalid(format!("non-positive variance at pixel {p}")));
            }
        }
        self.variance = Some(variance);
        Ok(self)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.ny, self.nx, self.l)
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn bands(&self) -> usize {
        self.l
    }

    pub fn n_pixels(&self) -> usize {
        self.ny * self.nx
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn variance(&self) -> Option<&[T]> {
        self.variance.as_deref()
    }

    pub fn take_variance(&mut self) -> Option<Vec<T>> {
        self.variance.take()
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, b: usize) -> usize {
        (y * self.nx + x) * self.l + b
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, b: usize) -> T {
        self.data[self.index(y, x, b)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, b: usize, v: T) {
        let i = self.index(y, x, b);
        self.data[i] = v;
    }

    /// Spectrum of pixel `p` (row-major pixel index).
    #[inline]
    pub fn spectrum(&self, p: usize) -> &[T] {
        &self.data[p * self.l..(p + 1) * self.l]
    }

    #[inline]
    pub fn spectrum_mut(&mut self, p: usize) -> &mut [T] {
        let l = self.l;
        &mut self.data[p * l..(p + 1) * l]
    }

    /// A pixel is masked when its spectrum contains a non-finite value.
    pub fn is_masked(&self, p: usize) -> bool {
        self.spectrum(p).iter().any(|v| !v.to_f64_lossy().is_finite())
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..self.n_pixels()).map(|p| self.is_masked(p)).collect()
    }

    /// Copy out the sub-volume starting at `(y0, x0, b0)`.
    pub fn subcube(&self, y0: usize, x0: usize, b0: usize, ny: usize, nx: usize, l: usize) -> Result<Self> {
        if y0 + ny > self.ny || x0 + nx > self.nx || b0 + l > self.l {
            return Err(Error::invalid(format!(
                "subcube [{y0}+{ny}, {x0}+{nx}, {b0}+{l}] exceeds cube {}x{}x{}",
                self.ny, self.nx, self.l
            )));
        }
        let copy = |src: &[T]| {
            let mut out = Vec::with_capacity(ny * nx * l);
            for y in y0..y0 + ny {
                for x in x0..x0 + nx {
                    let start = (y * self.nx + x) * self.l + b0;
                    out.extend_from_slice(&src[start..start + l]);
                }
            }
            out
        };
        let mut sub = Self::new(ny, nx, l, copy(&self.data))?;
        sub.variance = self.variance.as_deref().map(copy);
        sub.band_origin = self.band_origin + b0 as i64;
        Ok(sub)
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Cube<U> {
        Cube {
            ny: self.ny,
            nx: self.nx,
            l: self.l,
            data: self.data.iter().map(|v| f(*v)).collect(),
            variance: self.variance.as_ref().map(|v| v.iter().map(|x| f(*x)).collect()),
            band_origin: self.band_origin,
        }
    }

    /// Copy of band `b` as a row-major `ny x nx` image.
    pub fn band_image(&self, b: usize) -> Vec<T> {
        (0..self.n_pixels()).map(|p| self.data[p * self.l + b]).collect()
    }

    pub fn set_band_image(&mut self, b: usize, image: &[T]) {
        for (p, v) in image.iter().enumerate() {
            self.data[p * self.l + b] = *v;
        }
    }
}

impl<T: Scalar + Float> Cube<T> {
    pub fn neg(&self) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = -*v);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subcube_copies_the_right_voxels() {
        let data: Vec<f64> = (0..4 * 5 * 3).map(|v| v as f64).collect();
        let cube = Cube::new(4, 5, 3, data).unwrap();
        let sub = cube.subcube(1, 2, 1, 2, 2, 2).unwrap();
        assert_eq!(sub.dims(), (2, 2, 2));
        assert_eq!(sub.get(0, 0, 0), cube.get(1, 2, 1));
        assert_eq!(sub.get(1, 1, 1), cube.get(2, 3, 2));
        assert_eq!(sub.band_origin, 1);
        assert!(cube.subcube(3, 0, 0, 2, 1, 1).is_err());
    }

    #[test]
    fn variance_must_be_positive() {
        let cube = Cube::new(1, 2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(cube.clone().with_variance(vec![1.0, 1.0, 0.0, 1.0]).is_err());
        let masked = Cube::new(1, 2, 2, vec![0.0, 1.0, f64::NAN, f64::NAN]).unwrap();
        assert!(masked.with_variance(vec![1.0, 1.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn mismatched_buffer_is_rejected() {
        assert!(Cube::new(2, 2, 2, vec![0.0f64; 7]).is_err());
    }
}
