//! Per-pixel max and min statistics over a dictionary.

use rayon::prelude::*;

use crate::cube::{Cube, Rect};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::scalar::{norm, Real, Scalar};
use crate::similarity::SimilarityKind;

/// Max/min similarity per pixel. Pixels with `tested == false` (masked
/// spectra) carry placeholder statistics and are ignored downstream.
#[derive(Clone, Debug, PartialEq)]
pub struct TestField<T> {
    pub ny: usize,
    pub nx: usize,
    pub tmax: Vec<T>,
    pub tmin: Vec<T>,
    pub argmax_atom: Vec<usize>,
    pub tested: Vec<bool>,
}

impl<T: Scalar> TestField<T> {
    /// Field from raw statistics, all pixels tested, laid out as one row.
    pub fn from_stats(tmax: Vec<T>, tmin: Vec<T>) -> Result<Self> {
        if tmax.len() != tmin.len() {
            return Err(Error::DimensionMismatch("tmax and tmin lengths differ".into()));
        }
        let n = tmax.len();
        if tmax.iter().zip(&tmin).any(|(a, b)| b > a) {
            return Err(Error::invalid("tmin exceeds tmax"));
        }
        Ok(Self {
            ny: 1,
            nx: n,
            tmax,
            tmin,
            argmax_atom: vec![0; n],
            tested: vec![true; n],
        })
    }

    pub fn n(&self) -> usize {
        self.tmax.len()
    }

    pub fn n_tested(&self) -> usize {
        self.tested.iter().filter(|t| **t).count()
    }

    /// Field computed on the sign-flipped data, derived without recomputing.
    pub fn negated(&self) -> Self {
        Self {
            tmax: self.tmin.iter().map(|v| -*v).collect(),
            tmin: self.tmax.iter().map(|v| -*v).collect(),
            ..self.clone()
        }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> TestField<U> {
        TestField {
            ny: self.ny,
            nx: self.nx,
            tmax: self.tmax.iter().map(|v| f(*v)).collect(),
            tmin: self.tmin.iter().map(|v| f(*v)).collect(),
            argmax_atom: self.argmax_atom.clone(),
            tested: self.tested.clone(),
        }
    }

    /// Statistics of the pixels inside `rect`.
    pub fn subfield(&self, rect: &Rect) -> Result<Self> {
        if !rect.fits(self.ny, self.nx) {
            return Err(Error::invalid("region exceeds the test field"));
        }
        let idx = rect.indices(self.nx);
        Ok(Self {
            ny: rect.ny,
            nx: rect.nx,
            tmax: idx.iter().map(|&i| self.tmax[i]).collect(),
            tmin: idx.iter().map(|&i| self.tmin[i]).collect(),
            argmax_atom: idx.iter().map(|&i| self.argmax_atom[i]).collect(),
            tested: idx.iter().map(|&i| self.tested[i]).collect(),
        })
    }

    /// Pixel-permuted copy: output pixel `i` is input pixel `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            ny: 1,
            nx: perm.len(),
            tmax: perm.iter().map(|&i| self.tmax[i]).collect(),
            tmin: perm.iter().map(|&i| self.tmin[i]).collect(),
            argmax_atom: perm.iter().map(|&i| self.argmax_atom[i]).collect(),
            tested: perm.iter().map(|&i| self.tested[i]).collect(),
        }
    }
}

/// Max, min and argmax of one spectrum against all atoms. Ties in the max
/// go to the lowest atom index.
#[inline]
pub fn pixel_stats<T: Real>(y: &[T], dict: &Dictionary<T>, atom_norms: &[T], kind: SimilarityKind) -> (T, T, usize) {
    let y_norm = norm(y);
    let mut best = T::neg_infinity();
    let mut worst = T::infinity();
    let mut arg = 0;
    for (k, (d, dn)) in dict.atoms().zip(atom_norms).enumerate() {
        let s = kind.score(y, y_norm, d, *dn);
        if s > best {
            best = s;
            arg = k;
        }
        if s < worst {
            worst = s;
        }
    }
    (best, worst, arg)
}

pub fn compute_field<T: Real>(cube: &Cube<T>, dict: &Dictionary<T>, kind: SimilarityKind) -> Result<TestField<T>> {
    if cube.bands() != dict.atom_len() {
        return Err(Error::DimensionMismatch(format!(
            "cube has {} bands, atoms have {}",
            cube.bands(),
            dict.atom_len()
        )));
    }
    let atom_norms: Vec<T> = dict.atoms().map(norm).collect();
    let n = cube.n_pixels();
    let stats: Vec<(T, T, usize, bool)> = (0..n)
        .into_par_iter()
        .map(|p| {
            if cube.is_masked(p) {
                (T::nan(), T::nan(), 0, false)
            } else {
                let (a, b, k) = pixel_stats(cube.spectrum(p), dict, &atom_norms, kind);
                (a, b, k, true)
            }
        })
        .collect();
    let mut field = TestField {
        ny: cube.ny(),
        nx: cube.nx(),
        tmax: Vec::with_capacity(n),
        tmin: Vec::with_capacity(n),
        argmax_atom: Vec::with_capacity(n),
        tested: Vec::with_capacity(n),
    };
    for (a, b, k, t) in stats {
        field.tmax.push(a);
        field.tmin.push(b);
        field.argmax_atom.push(k);
        field.tested.push(t);
    }
    Ok(field)
}

/// Recompute the statistics of selected pixels in place, e.g. after the
/// cube changed only there.
pub fn recompute_pixels<T: Real>(
    field: &mut TestField<T>,
    cube: &Cube<T>,
    dict: &Dictionary<T>,
    kind: SimilarityKind,
    pixels: &[usize],
) -> Result<()> {
    if cube.bands() != dict.atom_len() || cube.n_pixels() != field.n() {
        return Err(Error::DimensionMismatch("cube, dictionary and field disagree".into()));
    }
    let atom_norms: Vec<T> = dict.atoms().map(norm).collect();
    let stats: Vec<(T, T, usize, bool)> = pixels
        .par_iter()
        .map(|&p| {
            if cube.is_masked(p) {
                (T::nan(), T::nan(), 0, false)
            } else {
                let (a, b, k) = pixel_stats(cube.spectrum(p), dict, &atom_norms, kind);
                (a, b, k, true)
            }
        })
        .collect();
    for (&p, (a, b, k, t)) in pixels.iter().zip(stats) {
        field.tmax[p] = a;
        field.tmin[p] = b;
        field.argmax_atom[p] = k;
        field.tested[p] = t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{build_lss, GaussianLine, ReferenceAtom, ShiftMode};
    use crate::similarity::similarity;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dict(m: usize) -> Dictionary<f64> {
        let r = ReferenceAtom::sampled(&GaussianLine::from_fwhm(10.0, 4.0, Some(5.0)), 20, 10).unwrap();
        build_lss(&r, m, if m == 1 { 0.0 } else { 4.0 }, &ShiftMode::IntegerBand).unwrap()
    }

    fn random_cube(seed: u64) -> Cube<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..6 * 7 * 20).map(|_| rng.random_range(-2.0..2.0)).collect();
        Cube::new(6, 7, 20, data).unwrap()
    }

    #[test]
    fn matches_naive_double_loop() {
        let cube = random_cube(1);
        let d = dict(7);
        for kind in [SimilarityKind::MatchedFilter, SimilarityKind::SpectralAngle] {
            let f = compute_field(&cube, &d, kind).unwrap();
            for p in 0..cube.n_pixels() {
                let scores: Vec<f64> = d.atoms().map(|a| similarity(kind, cube.spectrum(p), a).unwrap()).collect();
                let mut best = 0;
                for k in 1..scores.len() {
                    if scores[k] > scores[best] {
                        best = k;
                    }
                }
                let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
                assert_eq!(f.tmax[p], scores[best]);
                assert_eq!(f.tmin[p], min);
                assert_eq!(f.argmax_atom[p], best);
            }
        }
    }

    #[test]
    fn single_atom_gives_equal_max_and_min() {
        let cube = random_cube(2);
        let f = compute_field(&cube, &dict(1), SimilarityKind::MatchedFilter).unwrap();
        assert_eq!(f.tmax, f.tmin);
    }

    #[test]
    fn atom_multiple_peaks_at_that_atom() {
        let d = dict(5);
        let mut data = Vec::new();
        for k in 0..5 {
            data.extend(d.atom(k).iter().map(|v| 3.0 * v));
        }
        let cube = Cube::new(1, 5, 20, data).unwrap();
        let f = compute_field(&cube, &d, SimilarityKind::SpectralAngle).unwrap();
        for k in 0..5 {
            assert!((f.tmax[k] - 1.0).abs() < 1e-12);
            assert_eq!(f.argmax_atom[k], k);
        }
    }

    #[test]
    fn sign_flip_duality_is_exact() {
        let cube = random_cube(3);
        let d = dict(9);
        for kind in [SimilarityKind::MatchedFilter, SimilarityKind::SpectralAngle] {
            let f = compute_field(&cube, &d, kind).unwrap();
            let g = compute_field(&cube.neg(), &d, kind).unwrap();
            let fneg = f.negated();
            assert_eq!(g.tmax, fneg.tmax);
            assert_eq!(g.tmin, fneg.tmin);
        }
    }

    #[test]
    fn masked_pixels_are_not_tested() {
        let mut cube = random_cube(4);
        for b in 0..20 {
            cube.set(2, 3, b, f64::NAN);
        }
        let f = compute_field(&cube, &dict(3), SimilarityKind::SpectralAngle).unwrap();
        assert!(!f.tested[2 * 7 + 3]);
        assert_eq!(f.n_tested(), 41);
    }

    #[test]
    fn partial_recompute_matches_full() {
        let mut cube = random_cube(5);
        let d = dict(5);
        let mut f = compute_field(&cube, &d, SimilarityKind::SpectralAngle).unwrap();
        for b in 0..20 {
            cube.set(1, 1, b, 0.7 * b as f64);
            cube.set(4, 6, b, -0.2);
        }
        recompute_pixels(&mut f, &cube, &d, SimilarityKind::SpectralAngle, &[8, 34]).unwrap();
        assert_eq!(f, compute_field(&cube, &d, SimilarityKind::SpectralAngle).unwrap());
        let sub = f.subfield(&Rect::new(1, 1, 2, 3)).unwrap();
        assert_eq!(sub.tmax[0], f.tmax[8]);
        assert_eq!(sub.n(), 6);
    }

    #[test]
    fn band_mismatch_is_an_error() {
        let cube = Cube::<f64>::zeros(2, 2, 19).unwrap();
        assert!(compute_field(&cube, &dict(3), SimilarityKind::MatchedFilter).is_err());
    }
}
