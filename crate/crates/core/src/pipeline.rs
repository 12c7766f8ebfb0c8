//! Real-data workflow: standardize a cube, estimate the reference line from
//! the brightest pixels, then fit the null on a wide region and run BH on the
//! central one.

use rayon::prelude::*;

use crate::cube::{Cube, Rect};
use crate::dictionary::{build_lss, Dictionary, ReferenceAtom, ShiftMode};
use crate::error::{Error, Result};
use crate::fdr::{detect_pvalues, resolve_pi0, DetectionResult, Pi0Method};
use crate::kernel::Kernel2d;
use crate::nullmodel::{empirical_pvalues, fit_null, NullModel};
use crate::similarity::SimilarityKind;
use crate::teststat::{compute_field, TestField};

/// Consistency constant turning a MAD into a Gaussian standard deviation.
pub const MAD_SCALE: f64 = 1.4826;

/// FDR levels of the nested contour maps.
pub const CONTOUR_LEVELS: [f64; 4] = [0.05, 0.1, 0.2, 0.4];

/// Field spread function: a unit-sum kernel symmetric under a half turn.
#[derive(Clone, Debug, PartialEq)]
pub struct FsfKernel(Kernel2d);

impl FsfKernel {
    pub fn new(kernel: Kernel2d) -> Result<Self> {
        let scale = kernel.weights().iter().fold(0.0f64, |a, w| a.max(w.abs()));
        if !kernel.is_point_symmetric(1e-12 * scale) {
            return Err(Error::invalid("FSF kernel must be symmetric under 180 degree rotation"));
        }
        Ok(Self(kernel.unit_sum()?))
    }

    pub fn delta() -> Self {
        Self(Kernel2d::delta())
    }

    pub fn kernel(&self) -> &Kernel2d {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessOptions {
    /// Moving-median continuum window in bands; `None` skips the step.
    pub baseline_window: Option<usize>,
    /// Divide by the square root of the variance cube, which must be present.
    pub use_variance: bool,
    pub fsf: Option<FsfKernel>,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            baseline_window: None,
            use_variance: true,
            fsf: None,
        }
    }
}

/// Median of a non-empty slice (reorders it). Even lengths average the two
/// middle values.
fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, hi, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    if n % 2 == 1 {
        return hi;
    }
    let lo = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    0.5 * (lo + hi)
}

/// Running median over a centred window truncated at the spectrum ends.
pub fn moving_median(spectrum: &[f64], window: usize) -> Vec<f64> {
    let h = window / 2;
    let n = spectrum.len();
    let mut buf = Vec::with_capacity(window.min(n));
    (0..n)
        .map(|i| {
            buf.clear();
            buf.extend_from_slice(&spectrum[i.saturating_sub(h)..(i + h + 1).min(n)]);
            median_in_place(&mut buf)
        })
        .collect()
}

/// Band-wise `(median, 1.4826 * MAD)` over unmasked pixels.
pub fn robust_band_stats(cube: &Cube<f64>) -> Result<Vec<(f64, f64)>> {
    let mask = cube.mask();
    if mask.iter().all(|m| *m) {
        return Err(Error::invalid("every pixel is masked"));
    }
    (0..cube.bands())
        .into_par_iter()
        .map(|b| {
            let mut v: Vec<f64> = (0..cube.n_pixels())
                .filter(|p| !mask[*p])
                .map(|p| cube.spectrum(p)[b])
                .collect();
            let med = median_in_place(&mut v);
            v.iter_mut().for_each(|x| *x = (*x - med).abs());
            let scale = MAD_SCALE * median_in_place(&mut v);
            if scale > 0.0 {
                Ok((med, scale))
            } else {
                Err(Error::DegenerateBand { band: b })
            }
        })
        .collect()
}

/// Baseline removal, variance whitening, per-band robust standardization
/// and FSF convolution, in that order. Masked pixels come out fully NaN and
/// the variance cube is dropped.
pub fn preprocess(cube: &Cube<f64>, opts: &PreprocessOptions) -> Result<Cube<f64>> {
    if opts.use_variance && cube.variance().is_none() {
        return Err(Error::invalid("variance reduction requested but the cube has no variance"));
    }
    if let Some(w) = opts.baseline_window {
        if w == 0 || w % 2 == 0 {
            return Err(Error::invalid("baseline window must be a positive odd number of bands"));
        }
    }
    let (ny, nx, l) = cube.dims();
    let mask = cube.mask();
    let mut data = cube.data().to_vec();
    let variance = if opts.use_variance { cube.variance() } else { None };
    data.par_chunks_mut(l).enumerate().for_each(|(p, s)| {
        if mask[p] {
            s.iter_mut().for_each(|v| *v = f64::NAN);
            return;
        }
        if let Some(w) = opts.baseline_window {
            let base = moving_median(s, w);
            s.iter_mut().zip(base).for_each(|(v, b)| *v -= b);
        }
        if let Some(var) = variance {
            s.iter_mut().zip(&var[p * l..(p + 1) * l]).for_each(|(v, s2)| *v /= s2.sqrt());
        }
    });
    let mut out = Cube::new(ny, nx, l, data)?;
    out.band_origin = cube.band_origin;

    let stats = robust_band_stats(&out)?;
    out.data_mut().par_chunks_mut(l).enumerate().for_each(|(p, s)| {
        if !mask[p] {
            s.iter_mut().zip(&stats).for_each(|(v, (m, sc))| *v = (*v - m) / sc);
        }
    });

    Ok(match &opts.fsf {
        Some(f) => f.kernel().apply_cube(&out),
        None => out,
    })
}

/// Where to look: a test square inside a wider null-fit square, both centred
/// on one pixel, and a spectral window centred on one band.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegionSpec {
    pub center_y: usize,
    pub center_x: usize,
    /// Absolute band index (the cube's `band_origin` is subtracted).
    pub center_band: i64,
    pub half_width: usize,
    pub half_bands: usize,
    pub fit_half_width: usize,
}

impl RegionSpec {
    /// 50 x 50 test square, 30 bands, 200 x 200 fit square.
    pub fn new(center_y: usize, center_x: usize, center_band: i64) -> Self {
        Self {
            center_y,
            center_x,
            center_band,
            half_width: 25,
            half_bands: 15,
            fit_half_width: 100,
        }
    }

    fn square(&self, half: usize) -> Result<Rect> {
        if half == 0 {
            return Err(Error::invalid("region half width must be positive"));
        }
        let y0 = self.center_y.checked_sub(half);
        let x0 = self.center_x.checked_sub(half);
        match (y0, x0) {
            (Some(y0), Some(x0)) => Ok(Rect::new(y0, x0, 2 * half, 2 * half)),
            _ => Err(Error::invalid(format!(
                "a square of half width {half} around ({}, {}) leaves the cube",
                self.center_y, self.center_x
            ))),
        }
    }

    pub fn test_rect(&self) -> Result<Rect> {
        self.square(self.half_width)
    }

    pub fn fit_rect(&self) -> Result<Rect> {
        self.square(self.fit_half_width)
    }

    /// First band (relative to the cube) and length of the spectral window.
    pub fn band_window(&self, cube: &Cube<f64>) -> Result<(usize, usize)> {
        let len = 2 * self.half_bands;
        let start = self.center_band - cube.band_origin - self.half_bands as i64;
        if self.half_bands == 0 || start < 0 || start as usize + len > cube.bands() {
            return Err(Error::invalid(format!(
                "spectral window of {len} bands around band {} is outside the cube",
                self.center_band
            )));
        }
        Ok((start as usize, len))
    }

    /// Check test region within fit region within the cube.
    pub fn validate(&self, cube: &Cube<f64>) -> Result<(Rect, Rect, usize, usize)> {
        let test = self.test_rect()?;
        let fit = self.fit_rect()?;
        if !fit.contains_rect(&test) {
            return Err(Error::invalid("test region must lie inside the fit region"));
        }
        if !fit.fits(cube.ny(), cube.nx()) {
            return Err(Error::invalid(format!(
                "fit region {}x{} at ({}, {}) exceeds the {}x{} cube",
                fit.ny,
                fit.nx,
                fit.y0,
                fit.x0,
                cube.ny(),
                cube.nx()
            )));
        }
        let (b0, len) = self.band_window(cube)?;
        Ok((test, fit, b0, len))
    }
}

/// Reference line and the pixels it was averaged from.
#[derive(Clone, Debug)]
pub struct ReferenceEstimate {
    pub reference: ReferenceAtom<f64>,
    /// Absolute `(y, x)` of the contributing pixels, brightest first.
    pub pixels: Vec<(usize, usize)>,
}

/// Average of the `n_center_pixels` brightest spectra (summed flux over the
/// spectral window) of the test region. Ties go to the earlier pixel in
/// row-major order. Negative entries of the average are clipped before
/// normalization.
pub fn estimate_reference(cube: &Cube<f64>, region: &RegionSpec, n_center_pixels: usize) -> Result<ReferenceEstimate> {
    if n_center_pixels == 0 {
        return Err(Error::invalid("need at least one reference pixel"));
    }
    let test = region.test_rect()?;
    if !test.fits(cube.ny(), cube.nx()) {
        return Err(Error::invalid("test region exceeds the cube"));
    }
    let (b0, len) = region.band_window(cube)?;
    let mut flux: Vec<(usize, f64)> = test
        .indices(cube.nx())
        .into_iter()
        .filter(|p| !cube.is_masked(*p))
        .map(|p| (p, cube.spectrum(p)[b0..b0 + len].iter().sum()))
        .collect();
    if flux.len() < n_center_pixels {
        return Err(Error::invalid(format!(
            "only {} unmasked pixels for {n_center_pixels} reference pixels",
            flux.len()
        )));
    }
    flux.sort_by(|a, b| b.1.total_cmp(&a.1));
    let chosen = &flux[..n_center_pixels];
    let mut mean = vec![0.0; len];
    for (p, _) in chosen {
        for (m, v) in mean.iter_mut().zip(&cube.spectrum(*p)[b0..b0 + len]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m = (*m / n_center_pixels as f64).max(0.0));
    let reference = ReferenceAtom::new(mean, region.half_bands)?;
    Ok(ReferenceEstimate {
        reference,
        pixels: chosen.iter().map(|(p, _)| (p / cube.nx(), p % cube.nx())).collect(),
    })
}

/// Dictionary settings for a detection run.
#[derive(Clone, Debug)]
pub struct DictParams {
    pub m: usize,
    pub tau: f64,
    pub n_center_pixels: usize,
    /// Use this reference instead of estimating one; its length must match
    /// the spectral window.
    pub reference: Option<ReferenceAtom<f64>>,
    pub mode: ShiftMode,
}

impl Default for DictParams {
    fn default() -> Self {
        Self {
            m: 15,
            tau: 7.0,
            n_center_pixels: 5,
            reference: None,
            mode: ShiftMode::IntegerBand,
        }
    }
}

/// Everything a detection run produces. Maps cover the test region.
#[derive(Clone, Debug)]
pub struct DetectionMaps {
    pub test_rect: Rect,
    pub fit_rect: Rect,
    pub dictionary: Dictionary<f64>,
    pub reference_pixels: Vec<(usize, usize)>,
    pub null: NullModel<f64>,
    pub field: TestField<f64>,
    pub result: DetectionResult<f64>,
    /// Detections at each of `CONTOUR_LEVELS`.
    pub contours: Vec<(f64, Vec<bool>)>,
}

impl DetectionMaps {
    /// True for test-region pixels that were used to build the reference.
    pub fn reference_mask(&self) -> Vec<bool> {
        let r = &self.test_rect;
        let mut m = vec![false; r.n_pixels()];
        for &(y, x) in &self.reference_pixels {
            if r.contains(y, x) {
                m[(y - r.y0) * r.nx + x - r.x0] = true;
            }
        }
        m
    }
}

pub fn run_detection(
    cube: &Cube<f64>,
    region: &RegionSpec,
    params: &DictParams,
    q: f64,
    kind: SimilarityKind,
) -> Result<DetectionMaps> {
    run_detection_with(cube, region, params, q, kind, Pi0Method::Empirical)
}

/// Fit the null on the fit region, then BH at `q` on the test region.
pub fn run_detection_with(
    cube: &Cube<f64>,
    region: &RegionSpec,
    params: &DictParams,
    q: f64,
    kind: SimilarityKind,
    pi0_method: Pi0Method,
) -> Result<DetectionMaps> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid("q must lie in [0, 1]"));
    }
    let (test, fit, b0, len) = region.validate(cube)?;
    let (reference, reference_pixels) = match &params.reference {
        Some(r) => {
            if r.len() != len {
                return Err(Error::DimensionMismatch(format!(
                    "reference has {} bands, the window has {len}",
                    r.len()
                )));
            }
            (r.clone(), Vec::new())
        }
        None => {
            let e = estimate_reference(cube, region, params.n_center_pixels)?;
            (e.reference, e.pixels)
        }
    };
    let dictionary = build_lss(&reference, params.m, params.tau, &params.mode)?;
    let sub = cube.subcube(fit.y0, fit.x0, b0, fit.ny, fit.nx, len)?;
    let full = compute_field(&sub, &dictionary, kind)?;
    let null = fit_null(&full)?;
    let inner = Rect::new(test.y0 - fit.y0, test.x0 - fit.x0, test.ny, test.nx);
    let field = full.subfield(&inner)?;
    let p = empirical_pvalues(&null, &field);
    let tested_p: Vec<f64> = p.iter().zip(&field.tested).filter(|(_, t)| **t).map(|(v, _)| *v).collect();
    let pi0 = resolve_pi0(pi0_method, &null, &tested_p);
    let result = detect_pvalues(&p, &field.tested, q, pi0);
    let contours = CONTOUR_LEVELS
        .iter()
        .map(|&a| (a, detect_pvalues(&p, &field.tested, a, pi0).detected))
        .collect();
    Ok(DetectionMaps {
        test_rect: test,
        fit_rect: fit,
        dictionary,
        reference_pixels,
        null,
        field,
        result,
        contours,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::GaussianLine;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise_cube(ny: usize, nx: usize, l: usize, seed: u64) -> Cube<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..ny * nx * l).map(|_| StandardNormal.sample(&mut rng)).collect();
        Cube::new(ny, nx, l, data).unwrap()
    }

    fn no_variance() -> PreprocessOptions {
        PreprocessOptions {
            use_variance: false,
            ..Default::default()
        }
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median_in_place(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median_in_place(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(moving_median(&[1.0, 9.0, 2.0, 8.0, 3.0], 3), vec![5.0, 2.0, 8.0, 3.0, 5.5]);
    }

    #[test]
    fn standardizes_unit_noise() {
        let c = noise_cube(40, 40, 6, 1);
        let out = preprocess(&c, &no_variance()).unwrap();
        for (m, s) in robust_band_stats(&out).unwrap() {
            assert!(m.abs() < 1e-12);
            assert!((s - 1.0).abs() < 1e-12);
        }
        let raw = robust_band_stats(&c).unwrap();
        assert!(raw.iter().all(|(_, s)| (s - 1.0).abs() < 0.05));
    }

    #[test]
    fn delta_fsf_is_identity() {
        let c = noise_cube(10, 12, 4, 2);
        let a = preprocess(&c, &no_variance()).unwrap();
        let b = preprocess(
            &c,
            &PreprocessOptions {
                fsf: Some(FsfKernel::delta()),
                ..no_variance()
            },
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_fsf_divides_variance_by_nine() {
        let c = noise_cube(60, 60, 3, 3);
        let fsf = FsfKernel::new(Kernel2d::uniform(3).unwrap()).unwrap();
        let out = preprocess(
            &c,
            &PreprocessOptions {
                fsf: Some(fsf),
                ..no_variance()
            },
        )
        .unwrap();
        let inner = Rect::new(1, 1, 58, 58).indices(60);
        for b in 0..3 {
            let v: f64 = inner.iter().map(|p| out.spectrum(*p)[b].powi(2)).sum::<f64>() / inner.len() as f64;
            assert!((v * 9.0 - 1.0).abs() < 0.1, "{v}");
        }
    }

    #[test]
    fn variance_division_and_degenerate_band() {
        let c = noise_cube(20, 20, 3, 4);
        let scaled = c.map(|v| 3.0 * v).with_variance(vec![9.0; 1200]).unwrap();
        let a = preprocess(&scaled, &PreprocessOptions::default()).unwrap();
        let b = preprocess(&c, &no_variance()).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(preprocess(&c, &PreprocessOptions::default()).is_err());
        let mut flat = c.clone();
        for p in 0..400 {
            flat.spectrum_mut(p)[1] = 2.0;
        }
        assert!(matches!(preprocess(&flat, &no_variance()), Err(Error::DegenerateBand { band: 1 })));
    }

    #[test]
    fn masked_pixels_survive_preprocessing() {
        let mut c = noise_cube(8, 8, 5, 5);
        c.spectrum_mut(9)[2] = f64::NAN;
        let fsf = FsfKernel::new(Kernel2d::uniform(3).unwrap()).unwrap();
        let out = preprocess(
            &c,
            &PreprocessOptions {
                fsf: Some(fsf),
                ..no_variance()
            },
        )
        .unwrap();
        assert!(out.spectrum(9).iter().all(|v| v.is_nan()));
        assert_eq!(out.mask().iter().filter(|m| **m).count(), 1);
    }

    #[test]
    fn asymmetric_fsf_rejected() {
        let k = Kernel2d::new(3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(FsfKernel::new(k).is_err());
    }

    #[test]
    fn reference_from_noiseless_source_is_exact() {
        let l = 12;
        let line = GaussianLine::from_fwhm(6.0, 3.0, None);
        let spec: Vec<f64> = (0..l).map(|j| 4.0 * crate::dictionary::LineProfile::eval(&line, j as f64)).collect();
        let mut c = Cube::<f64>::zeros(9, 9, l).unwrap();
        c.spectrum_mut(4 * 9 + 4).copy_from_slice(&spec);
        let mut r = RegionSpec::new(4, 4, 6);
        r.half_width = 2;
        r.half_bands = 6;
        let e = estimate_reference(&c, &r, 1).unwrap();
        assert_eq!(e.pixels, vec![(4, 4)]);
        let n = spec.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (a, b) in e.reference.values().iter().zip(&spec) {
            assert!((a - b / n).abs() < 1e-15);
        }
    }

    #[test]
    fn reference_ties_break_row_major() {
        let c = Cube::new(6, 6, 4, vec![1.0; 144]).unwrap();
        let mut r = RegionSpec::new(3, 3, 2);
        r.half_width = 2;
        r.half_bands = 2;
        let e = estimate_reference(&c, &r, 5).unwrap();
        assert_eq!(e.pixels, vec![(1, 1), (1, 2), (1, 3), (1, 4), (2, 1)]);
        let mut out_of_band = r;
        out_of_band.center_band = 3;
        assert!(estimate_reference(&c, &out_of_band, 5).is_err());
    }

    #[test]
    fn region_nesting_enforced() {
        let c = Cube::<f64>::zeros(30, 30, 10).unwrap();
        let mut r = RegionSpec::new(15, 15, 5);
        r.half_width = 5;
        r.half_bands = 5;
        r.fit_half_width = 15;
        assert!(r.validate(&c).is_ok());
        r.fit_half_width = 4;
        assert!(r.validate(&c).is_err());
        r.fit_half_width = 16;
        assert!(r.validate(&c).is_err());
    }

    #[test]
    fn contour_levels_nest() {
        let l = 20;
        let mut c = noise_cube(40, 40, l, 6);
        let line = GaussianLine::from_fwhm(10.0, 4.0, None);
        for y in 15..25 {
            for x in 15..25 {
                let a = 1.5 - 0.1 * ((y as f64 - 20.0).abs() + (x as f64 - 20.0).abs());
                for (b, v) in c.spectrum_mut(y * 40 + x).iter_mut().enumerate() {
                    *v += a * 3.0 * crate::dictionary::LineProfile::eval(&line, b as f64);
                }
            }
        }
        let mut r = RegionSpec::new(20, 20, 10);
        r.half_width = 10;
        r.half_bands = 10;
        r.fit_half_width = 20;
        let params = DictParams {
            m: 7,
            tau: 3.0,
            ..Default::default()
        };
        let maps = run_detection(&c, &r, &params, 0.2, SimilarityKind::SpectralAngle).unwrap();
        for w in maps.contours.windows(2) {
            assert!(w[0].1.iter().zip(&w[1].1).all(|(a, b)| !*a || *b));
        }
        assert_eq!(maps.contours[2].1, maps.result.detected);
        assert!(maps.result.n_detected() > 0);
        assert_eq!(maps.reference_mask().iter().filter(|m| **m).count(), 5);
    }
}
