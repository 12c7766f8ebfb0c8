//! Small odd-sized 2-D kernels applied band by band.

use rayon::prelude::*;

use crate::cube::Cube;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Kernel2d {
    k: usize,
    weights: Vec<f64>,
}

impl Kernel2d {
    /// Row-major `k x k` weights, `k` odd.
    pub fn new(k: usize, weights: Vec<f64>) -> Result<Self> {
        if k % 2 == 0 || weights.len() != k * k {
            return Err(Error::invalid(format!("kernel must be k x k with k odd, got {} weights for k={k}", weights.len())));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("kernel weights must be finite"));
        }
        Ok(Self { k, weights })
    }

    pub fn delta() -> Self {
        Self {
            k: 1,
            weights: vec![1.0],
        }
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(k, vec![1.0; k * k])
    }

    /// Sampled isotropic Gaussian, `k` odd.
    pub fn gaussian(k: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::invalid("kernel sigma must be positive"));
        }
        let h = (k / 2) as f64;
        let w = (0..k * k)
            .map(|i| {
                let (y, x) = ((i / k) as f64 - h, (i % k) as f64 - h);
                (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        Self::new(k, w)
    }

    /// Parse `delta`, `uniform:<k>` or `gaussian:<k>:<sigma>`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let num = |v: &str| v.parse::<f64>().map_err(|_| Error::invalid(format!("bad kernel spec '{s}'")));
        match parts.as_slice() {
            ["delta"] | ["none"] => Ok(Self::delta()),
            ["uniform", k] => Self::uniform(num(k)? as usize),
            ["gaussian", k, sigma] => Self::gaussian(num(k)? as usize, num(sigma)?),
            _ => Err(Error::invalid(format!("bad kernel spec '{s}'"))),
        }
    }

    pub fn size(&self) -> usize {
        self.k
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn energy(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    /// Scaled to unit sum (preserves flux).
    pub fn unit_sum(&self) -> Result<Self> {
        let s = self.sum();
        if s.abs() < 1e-300 {
            return Err(Error::invalid("kernel sums to zero"));
        }
        Ok(self.scaled(1.0 / s))
    }

    /// Scaled to unit energy (preserves the variance of white noise).
    pub fn unit_energy(&self) -> Result<Self> {
        let e = self.energy();
        if e <= 0.0 {
            return Err(Error::invalid("kernel is identically zero"));
        }
        Ok(self.scaled(1.0 / e.sqrt()))
    }

    fn scaled(&self, c: f64) -> Self {
        Self {
            k: self.k,
            weights: self.weights.iter().map(|w| w * c).collect(),
        }
    }

    pub fn is_point_symmetric(&self, tol: f64) -> bool {
        let n = self.weights.len();
        (0..n).all(|i| (self.weights[i] - self.weights[n - 1 - i]).abs() <= tol)
    }

    /// Correlate one `ny x nx` image with the kernel, mirroring the border
    /// (`-1 -> 0`, `n -> n - 1`). NaN pixels contribute nothing and stay NaN.
    pub fn apply_image(&self, img: &[f64], ny: usize, nx: usize) -> Vec<f64> {
        let h = (self.k / 2) as isize;
        let mut out = vec![0.0; ny * nx];
        for y in 0..ny {
            for x in 0..nx {
                let c = img[y * nx + x];
                if c.is_nan() {
                    out[y * nx + x] = f64::NAN;
                    continue;
                }
                let mut acc = 0.0;
                for dy in -h..=h {
                    let yy = mirror(y as isize + dy, ny);
                    let row = &img[yy * nx..(yy + 1) * nx];
                    let wrow = &self.weights[((dy + h) as usize) * self.k..];
                    for dx in -h..=h {
                        let v = row[mirror(x as isize + dx, nx)];
                        if !v.is_nan() {
                            acc += wrow[(dx + h) as usize] * v;
                        }
                    }
                }
                out[y * nx + x] = acc;
            }
        }
        out
    }

    /// Interior part of the correlation of a `(ny + k - 1) x (nx + k - 1)`
    /// padded image: output `(y, x)` sees padded pixels `y..y + k`, `x..x + k`.
    pub fn apply_valid(&self, padded: &[f64], ny: usize, nx: usize) -> Vec<f64> {
        let k = self.k;
        let pnx = nx + k - 1;
        let mut out = vec![0.0; ny * nx];
        for y in 0..ny {
            for x in 0..nx {
                let mut acc = 0.0;
                for dy in 0..k {
                    let row = &padded[(y + dy) * pnx + x..(y + dy) * pnx + x + k];
                    acc += row.iter().zip(&self.weights[dy * k..(dy + 1) * k]).map(|(a, b)| a * b).sum::<f64>();
                }
                out[y * nx + x] = acc;
            }
        }
        out
    }

    /// `apply_valid` on every band of a padded cube.
    pub fn apply_valid_cube(&self, padded: &Cube<f64>) -> Result<Cube<f64>> {
        let (pny, pnx, l) = padded.dims();
        if pny < self.k || pnx < self.k {
            return Err(Error::invalid("padded cube smaller than the kernel"));
        }
        let (ny, nx) = (pny + 1 - self.k, pnx + 1 - self.k);
        let bands: Vec<Vec<f64>> = (0..l)
            .into_par_iter()
            .map(|b| self.apply_valid(&padded.band_image(b), ny, nx))
            .collect();
        let mut out = Cube::zeros(ny, nx, l)?;
        for (b, img) in bands.iter().enumerate() {
            out.set_band_image(b, img);
        }
        Ok(out)
    }

    /// Apply to every band of a cube.
    pub fn apply_cube(&self, cube: &Cube<f64>) -> Cube<f64> {
        let (ny, nx, l) = cube.dims();
        if self.k == 1 && self.weights[0] == 1.0 {
            return cube.clone();
        }
        let bands: Vec<Vec<f64>> = (0..l)
            .into_par_iter()
            .map(|b| self.apply_image(&cube.band_image(b), ny, nx))
            .collect();
        let mut out = cube.clone();
        for (b, img) in bands.iter().enumerate() {
            out.set_band_image(b, img);
        }
        out
    }
}

/// Symmetric boundary index, folding repeatedly for kernels wider than the image.
fn mirror(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_is_identity() {
        let img: Vec<f64> = (0..12).map(|v| v as f64 * 0.3 - 1.0).collect();
        assert_eq!(Kernel2d::delta().apply_image(&img, 3, 4), img);
    }

    #[test]
    fn uniform_on_constant_image_keeps_it_constant() {
        let k = Kernel2d::uniform(3).unwrap().unit_sum().unwrap();
        let out = k.apply_image(&[2.0; 20], 4, 5);
        assert!(out.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn mirror_boundary_values() {
        // 1-D check through a 1 x 3 image and a horizontal-only kernel
        let k = Kernel2d::new(3, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        // weight at dx = -1: out[x] = img[x-1], mirrored at the left edge
        assert_eq!(k.apply_image(&[1.0, 2.0, 3.0], 1, 3), vec![1.0, 1.0, 2.0]);
        assert_eq!(mirror(-2, 3), 1);
        assert_eq!(mirror(5, 3), 0);
        assert_eq!(mirror(-7, 2), 1);
    }

    #[test]
    fn normalizations() {
        let u = Kernel2d::uniform(3).unwrap();
        assert!((u.unit_sum().unwrap().sum() - 1.0).abs() < 1e-15);
        let e = u.unit_energy().unwrap();
        assert!((e.energy() - 1.0).abs() < 1e-15);
        assert!((e.weights()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!(Kernel2d::gaussian(5, 1.2).unwrap().is_point_symmetric(0.0));
    }

    #[test]
    fn valid_matches_mirrored_in_the_interior() {
        let k = Kernel2d::gaussian(3, 0.8).unwrap();
        let img: Vec<f64> = (0..7 * 6).map(|v| ((v * 37 % 11) as f64).sin()).collect();
        let full = k.apply_image(&img, 7, 6);
        let valid = k.apply_valid(&img, 5, 4);
        for y in 0..5 {
            for x in 0..4 {
                assert!((valid[y * 4 + x] - full[(y + 1) * 6 + x + 1]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn parse_specs() {
        assert_eq!(Kernel2d::parse("uniform:3").unwrap().size(), 3);
        assert_eq!(Kernel2d::parse("delta").unwrap(), Kernel2d::delta());
        assert!(Kernel2d::parse("uniform:4").is_err());
        assert!(Kernel2d::parse("box").is_err());
    }

    #[test]
    fn masked_pixels_stay_masked() {
        let mut img = vec![1.0; 9];
        img[4] = f64::NAN;
        let out = Kernel2d::uniform(3).unwrap().apply_image(&img, 3, 3);
        assert!(out[4].is_nan());
        assert_eq!(out[0], 8.0);
    }
}
