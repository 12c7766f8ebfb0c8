//! Gaussian GLR baseline with a 1-sparse non-negative coefficient and a
//! diagonal covariance, calibrated by Monte-Carlo under Gaussian noise.
//!
//! `T(y) = max_j d_j' S^-1 y / sqrt(d_j' S^-1 d_j)`. When every atom's
//! coefficient estimate is non-positive the maximum is still taken, so the
//! statistic is the least negative standardized score.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::cube::Cube;
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};

/// Whitened, standardized atoms `S^-1 d_j / sqrt(d_j' S^-1 d_j)`.
#[derive(Clone, Debug)]
pub struct GlrFilter {
    l: usize,
    rows: Vec<f64>,
    /// `sqrt(d_j' S^-1 d_j)` per atom.
    scales: Vec<f64>,
}

impl GlrFilter {
    pub fn new(dict: &Dictionary<f64>, sigma_diag: &[f64]) -> Result<Self> {
        let l = dict.atom_len();
        if sigma_diag.len() != l {
            return Err(Error::DimensionMismatch(format!(
                "{} variances for {l}-band atoms",
                sigma_diag.len()
            )));
        }
        if sigma_diag.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("band variances must be positive"));
        }
        let mut rows = Vec::with_capacity(dict.m() * l);
        let mut scales = Vec::with_capacity(dict.m());
        for d in dict.atoms() {
            let w: Vec<f64> = d.iter().zip(sigma_diag).map(|(a, s)| a / s).collect();
            let q: f64 = w.iter().zip(d).map(|(a, b)| a * b).sum();
            let s = q.sqrt();
            rows.extend(w.iter().map(|v| v / s));
            scales.push(s);
        }
        Ok(Self { l, rows, scales })
    }

    pub fn statistic(&self, y: &[f64]) -> f64 {
        self.best(y).1
    }

    /// Maximizing atom and its score.
    fn best(&self, y: &[f64]) -> (usize, f64) {
        self.rows
            .chunks_exact(self.l)
            .map(|r| r.iter().zip(y).map(|(a, b)| a * b).sum::<f64>())
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, t)| if t > acc.1 { (j, t) } else { acc })
    }
}

pub fn glr_statistic(y: &[f64], dict: &Dictionary<f64>, sigma_diag: &[f64]) -> Result<f64> {
    if y.len() != dict.atom_len() {
        return Err(Error::DimensionMismatch(format!(
            "observation has {} bands, atoms have {}",
            y.len(),
            dict.atom_len()
        )));
    }
    Ok(GlrFilter::new(dict, sigma_diag)?.statistic(y))
}

/// GLR statistic per pixel; masked pixels get NaN.
pub fn glr_field(cube: &Cube<f64>, dict: &Dictionary<f64>, sigma_diag: &[f64]) -> Result<Vec<f64>> {
    if cube.bands() != dict.atom_len() {
        return Err(Error::DimensionMismatch("cube and dictionary band counts differ".into()));
    }
    let f = GlrFilter::new(dict, sigma_diag)?;
    Ok((0..cube.n_pixels())
        .into_par_iter()
        .map(|p| if cube.is_masked(p) { f64::NAN } else { f.statistic(cube.spectrum(p)) })
        .collect())
}

/// Per-band noise variance estimated as the mean square over unmasked
/// pixels (the noise is centred).
pub fn estimate_band_variance(cube: &Cube<f64>) -> Result<Vec<f64>> {
    let l = cube.bands();
    let mut acc = vec![Vec::new(); l];
    for p in (0..cube.n_pixels()).filter(|p| !cube.is_masked(*p)) {
        for (b, v) in cube.spectrum(p).iter().enumerate() {
            acc[b].push(v * v);
        }
    }
    acc.into_iter()
        .enumerate()
        .map(|(b, sq)| {
            if sq.is_empty() {
                return Err(Error::invalid("every pixel is masked"));
            }
            let v = crate::scalar::compensated_sum(sq.iter().copied()) / sq.len() as f64;
            if v > 0.0 {
                Ok(v)
            } else {
                Err(Error::DegenerateBand { band: b })
            }
        })
        .collect()
}

/// Per-band variance of the residuals `y - a d_j` of the 1-sparse fit.
///
/// Starting from the plain mean square, pixels whose GLR score exceeds the
/// Bonferroni-corrected Gaussian level `0.05 / (n m)` have their fitted
/// component removed and the variance is re-estimated; three passes.
/// Other pixels enter unchanged, so pure noise is not shrunk by the fit.
pub fn estimate_residual_variance(cube: &Cube<f64>, dict: &Dictionary<f64>) -> Result<Vec<f64>> {
    if cube.bands() != dict.atom_len() {
        return Err(Error::DimensionMismatch("cube and dictionary band counts differ".into()));
    }
    let mut var = estimate_band_variance(cube)?;
    let live: Vec<usize> = (0..cube.n_pixels()).filter(|p| !cube.is_masked(*p)).collect();
    let cut = crate::pfabound::norm_quantile(1.0 - 0.05 / (live.len() * dict.m()) as f64);
    for _ in 0..3 {
        let f = GlrFilter::new(dict, &var)?;
        let sums = live
            .par_iter()
            .fold(
                || vec![0.0; cube.bands()],
                |mut acc, &p| {
                    let y = cube.spectrum(p);
                    let (j, t) = f.best(y);
                    let a = if t > cut { t / f.scales[j] } else { 0.0 };
                    for ((s, v), d) in acc.iter_mut().zip(y).zip(dict.atom(j)) {
                        let r = v - a * d;
                        *s += r * r;
                    }
                    acc
                },
            )
            .reduce(
                || vec![0.0; cube.bands()],
                |mut a, b| {
                    a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                    a
                },
            );
        var = sums
            .into_iter()
            .enumerate()
            .map(|(b, s)| {
                let v = s / live.len() as f64;
                if v > 0.0 {
                    Ok(v)
                } else {
                    Err(Error::DegenerateBand { band: b })
                }
            })
            .collect::<Result<_>>()?;
    }
    Ok(var)
}

/// Null sample of the GLR statistic under `N(0, diag(sigma))`.
#[derive(Clone, Debug)]
pub struct GlrCalibration {
    filter: GlrFilter,
    null: Vec<f64>,
}

impl GlrCalibration {
    pub fn new(dict: &Dictionary<f64>, sigma_diag: &[f64], runs: usize, rng: &mut impl Rng) -> Result<Self> {
        if runs == 0 {
            return Err(Error::invalid("calibration needs at least one run"));
        }
        let filter = GlrFilter::new(dict, sigma_diag)?;
        let sd: Vec<f64> = sigma_diag.iter().map(|s| s.sqrt()).collect();
        let mut y = vec![0.0; sd.len()];
        let mut null: Vec<f64> = (0..runs)
            .map(|_| {
                for (v, s) in y.iter_mut().zip(&sd) {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = s * z;
                }
                filter.statistic(&y)
            })
            .collect();
        null.sort_by(f64::total_cmp);
        Ok(Self { filter, null })
    }

    pub fn null_sample(&self) -> &[f64] {
        &self.null
    }

    pub fn statistic(&self, y: &[f64]) -> f64 {
        self.filter.statistic(y)
    }

    /// Empirical survival `#{null >= t} / N`.
    pub fn pvalue(&self, t: f64) -> f64 {
        let below = self.null.partition_point(|v| *v < t);
        (self.null.len() - below) as f64 / self.null.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{build_lss, GaussianLine, ReferenceAtom, ShiftMode};
    use crate::similarity::SimilarityKind;
    use crate::teststat::compute_field;
    use rand::SeedableRng;

    fn dict() -> Dictionary<f64> {
        let p = GaussianLine::from_fwhm(9.0, 4.0, None);
        let r = ReferenceAtom::sampled(&p, 20, 9).unwrap();
        build_lss(&r, 7, 4.0, &ShiftMode::continuous(p)).unwrap()
    }

    #[test]
    fn atom_multiple_gives_its_amplitude() {
        let d = dict();
        let y: Vec<f64> = d.atom(2).iter().map(|v| 2.5 * v).collect();
        let t = glr_statistic(&y, &d, &vec![1.0; 20]).unwrap();
        assert!((t - 2.5).abs() < 1e-12);
    }

    #[test]
    fn identity_covariance_matches_matched_filter_max() {
        let d = dict();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..6 * 20).map(|_| rng.random_range(-0.5..2.0)).collect();
        let cube = Cube::new(2, 3, 20, data).unwrap();
        let g = glr_field(&cube, &d, &vec![1.0; 20]).unwrap();
        let f = compute_field(&cube, &d, SimilarityKind::MatchedFilter).unwrap();
        for p in 0..6 {
            assert!((g[p] - f.tmax[p]).abs() < 1e-12);
        }
    }

    #[test]
    fn all_negative_scores_give_least_negative() {
        let d = dict();
        let y: Vec<f64> = d.atom(3).iter().map(|v| -v).collect();
        let t = glr_statistic(&y, &d, &vec![1.0; 20]).unwrap();
        let expect = d.atoms().map(|a| -a.iter().zip(d.atom(3)).map(|(x, y)| x * y).sum::<f64>());
        assert!((t - expect.fold(f64::NEG_INFINITY, f64::max)).abs() < 1e-12);
        assert!(t < 0.0);
    }

    #[test]
    fn residual_variance_ignores_bright_sources() {
        let d = dict();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let n = 900;
        let mut data: Vec<f64> = (0..n * 20).map(|_| StandardNormal.sample(&mut rng)).collect();
        for p in (0..n).step_by(20) {
            for (v, a) in data[p * 20..(p + 1) * 20].iter_mut().zip(d.atom(3)) {
                *v += 12.0 * a;
            }
        }
        let cube = Cube::new(30, 30, 20, data).unwrap();
        let raw = estimate_band_variance(&cube).unwrap();
        let res = estimate_residual_variance(&cube, &d).unwrap();
        assert!(raw.iter().cloned().fold(0.0, f64::max) > 1.5);
        for v in &res {
            assert!((v - 1.0).abs() < 0.15, "{res:?}");
        }
    }

    #[test]
    fn calibration_survival() {
        let d = dict();
        let c = GlrCalibration::new(&d, &vec![2.0; 20], 2000, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(c.pvalue(f64::NEG_INFINITY), 1.0);
        assert_eq!(c.pvalue(f64::INFINITY), 0.0);
        let med = c.null_sample()[1000];
        assert!((c.pvalue(med) - 0.5).abs() < 0.01);
        assert!(glr_statistic(&[1.0; 3], &d, &vec![1.0; 20]).is_err());
        assert!(GlrFilter::new(&d, &vec![0.0; 20]).is_err());
    }
}
