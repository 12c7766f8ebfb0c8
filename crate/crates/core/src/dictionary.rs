//! Linearly-spaced-shift (LSS) dictionaries built from one reference line.
//!
//! Atom `k` of an `m`-atom dictionary is the reference shifted by
//! `tau_k = -tau + 2 tau k / (m - 1)` bands and renormalized to unit length.
//! Parts of the line pushed past either end of the band range are dropped
//! before renormalization.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quad::{gauss_legendre, integrate_fixed};
use crate::scalar::{dot, norm, Real};

/// Continuous line model `f(x)` sampled at band positions.
pub trait LineProfile: Send + Sync + fmt::Debug {
    fn eval(&self, x: f64) -> f64;
}

/// Gaussian line centred on `center`, optionally truncated to
/// `|x - center| <= half_support`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLine {
    pub center: f64,
    pub sigma: f64,
    pub half_support: Option<f64>,
}

impl GaussianLine {
    pub fn from_fwhm(center: f64, fwhm: f64, half_support: Option<f64>) -> Self {
        Self {
            center,
            sigma: fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt()),
            half_support,
        }
    }
}

impl LineProfile for GaussianLine {
    fn eval(&self, x: f64) -> f64 {
        let u = x - self.center;
        match self.half_support {
            Some(h) if u.abs() > h => 0.0,
            _ => (-0.5 * (u / self.sigma).powi(2)).exp(),
        }
    }
}

/// How shifted atoms are produced.
#[derive(Clone, Debug)]
pub enum ShiftMode {
    /// Pure index shift at the band resolution, no interpolation. Grid shifts
    /// that are not whole bands are rounded to the nearest band.
    IntegerBand,
    /// Resample a continuous model at `j - shift`.
    Continuous(Arc<dyn LineProfile>),
}

impl ShiftMode {
    pub fn continuous(profile: impl LineProfile + 'static) -> Self {
        ShiftMode::Continuous(Arc::new(profile))
    }
}

/// Unit-norm reference line `d*`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceAtom<T> {
    values: Vec<T>,
    center_band: usize,
    relaxed: bool,
}

impl<T: Real> ReferenceAtom<T> {
    /// Non-negative reference; normalized on construction.
    pub fn new(values: Vec<T>, center_band: usize) -> Result<Self> {
        if values.iter().any(|v| *v < T::zero()) {
            return Err(Error::invalid(
                "reference has negative entries; use ReferenceAtom::relaxed",
            ));
        }
        Self::build(values, center_band, false)
    }

    /// Reference allowed to carry negative entries. Dictionaries built from
    /// it must still have pairwise non-negative atom inner products.
    pub fn relaxed(values: Vec<T>, center_band: usize) -> Result<Self> {
        Self::build(values, center_band, true)
    }

    /// Sample a continuous profile at bands `0..l`.
    pub fn sampled(profile: &dyn LineProfile, l: usize, center_band: usize) -> Result<Self> {
        let values = (0..l).map(|j| T::lit(profile.eval(j as f64))).collect();
        Self::new(values, center_band)
    }

    fn build(mut values: Vec<T>, center_band: usize, relaxed: bool) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid("reference needs at least two bands"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("reference has non-finite entries"));
        }
        if center_band >= values.len() {
            return Err(Error::invalid("reference centre band outside the spectrum"));
        }
        let n = norm(&values);
        if n <= T::zero() {
            return Err(Error::invalid("reference is identically zero"));
        }
        values.iter_mut().for_each(|v| *v = *v / n);
        Ok(Self {
            values,
            center_band,
            relaxed,
        })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn center_band(&self) -> usize {
        self.center_band
    }

    pub fn is_relaxed(&self) -> bool {
        self.relaxed
    }
}

/// Everything needed to rebuild the LSS family at another size.
#[derive(Clone, Debug)]
pub struct LssGenerator<T> {
    pub reference: ReferenceAtom<T>,
    pub mode: ShiftMode,
    pub tau: f64,
}

impl<T: Real> LssGenerator<T> {
    pub fn build(&self, m: usize) -> Result<Dictionary<T>> {
        build_lss(&self.reference, m, self.tau, &self.mode)
    }
}

/// A set of `m` unit-norm atoms of length `l`, stored atom-major.
#[derive(Clone, Debug)]
pub struct Dictionary<T> {
    l: usize,
    atoms: Vec<T>,
    shifts: Vec<f64>,
    tau: f64,
    coherence: T,
    generator: Option<LssGenerator<T>>,
}

impl<T: Real> Dictionary<T> {
    /// Dictionary from explicit atoms; each is renormalized.
    pub fn from_atoms(atoms: Vec<Vec<T>>, shifts: Vec<f64>) -> Result<Self> {
        Self::assemble(atoms, shifts, false)
    }

    /// Dictionary from atoms that are already unit-norm (within 1e-12),
    /// kept exactly as given.
    pub fn from_unit_atoms(atoms: Vec<Vec<T>>, shifts: Vec<f64>) -> Result<Self> {
        Self::assemble(atoms, shifts, true)
    }

    fn assemble(atoms: Vec<Vec<T>>, shifts: Vec<f64>, keep: bool) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::invalid("dictionary needs at least one atom"));
        }
        if shifts.len() != atoms.len() {
            return Err(Error::DimensionMismatch("one shift per atom required".into()));
        }
        let l = atoms[0].len();
        let mut flat = Vec::with_capacity(l * atoms.len());
        for (atom, shift) in atoms.into_iter().zip(&shifts) {
            if atom.len() != l {
                return Err(Error::DimensionMismatch("atoms differ in length".into()));
            }
            if keep {
                let n = norm(&atom).to_f64_lossy();
                if !((n - 1.0).abs() <= 1e-12) {
                    return Err(Error::invalid(format!("atom at shift {shift} has norm {n}, expected 1")));
                }
                flat.extend(atom);
            } else {
                flat.extend(normalized(atom, *shift)?);
            }
        }
        let tau = shifts.iter().fold(0.0f64, |a, s| a.max(s.abs()));
        let mut dict = Self {
            l,
            atoms: flat,
            shifts,
            tau,
            coherence: T::zero(),
            generator: None,
        };
        dict.coherence = dict.compute_coherence();
        Ok(dict)
    }

    pub fn m(&self) -> usize {
        self.shifts.len()
    }

    pub fn atom_len(&self) -> usize {
        self.l
    }

    pub fn atom(&self, k: usize) -> &[T] {
        &self.atoms[k * self.l..(k + 1) * self.l]
    }

    pub fn atoms(&self) -> impl Iterator<Item = &[T]> {
        self.atoms.chunks_exact(self.l)
    }

    pub fn shifts(&self) -> &[f64] {
        &self.shifts
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn coherence(&self) -> T {
        self.coherence
    }

    pub fn generator(&self) -> Option<&LssGenerator<T>> {
        self.generator.as_ref()
    }

    /// Gram matrix entry `<d_i, d_j>`.
    pub fn gram(&self, i: usize, j: usize) -> T {
        dot(self.atom(i), self.atom(j))
    }

    fn compute_coherence(&self) -> T {
        let mut mu = T::zero();
        for i in 0..self.m() {
            for j in i + 1..self.m() {
                mu = mu.max(self.gram(i, j).abs());
            }
        }
        mu
    }
}

/// Nominal LSS grid `tau_k = -tau + 2 tau k / (m - 1)`; a single atom sits at 0.
pub fn lss_shifts(m: usize, tau: f64) -> Vec<f64> {
    if m == 1 {
        return vec![0.0];
    }
    (0..m)
        .map(|k| -tau + 2.0 * tau * k as f64 / (m - 1) as f64)
        .collect()
}

/// Unnormalized shifted copy of the reference.
fn shifted_raw<T: Real>(reference: &ReferenceAtom<T>, shift: f64, mode: &ShiftMode) -> Vec<T> {
    let l = reference.len();
    match mode {
        ShiftMode::IntegerBand => {
            let s = shift.round() as i64;
            (0..l as i64)
                .map(|j| {
                    let src = j - s;
                    if (0..l as i64).contains(&src) {
                        reference.values[src as usize]
                    } else {
                        T::zero()
                    }
                })
                .collect()
        }
        ShiftMode::Continuous(profile) => (0..l)
            .map(|j| T::lit(profile.eval(j as f64 - shift)))
            .collect(),
    }
}

fn normalized<T: Real>(mut v: Vec<T>, shift: f64) -> Result<Vec<T>> {
    let n = norm(&v);
    if !(n > T::zero()) {
        return Err(Error::AtomVanished { shift });
    }
    v.iter_mut().for_each(|x| *x = *x / n);
    Ok(v)
}

/// Shifted and renormalized reference `d*^u`.
pub fn shifted_atom<T: Real>(reference: &ReferenceAtom<T>, shift: f64, mode: &ShiftMode) -> Result<Vec<T>> {
    normalized(shifted_raw(reference, shift, mode), shift)
}

/// Build the `m`-atom LSS dictionary over `[-tau, tau]`.
pub fn build_lss<T: Real>(
    reference: &ReferenceAtom<T>,
    m: usize,
    tau: f64,
    mode: &ShiftMode,
) -> Result<Dictionary<T>> {
    if m == 0 {
        return Err(Error::invalid("dictionary size must be at least 1"));
    }
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::invalid("maximal shift must be finite and non-negative"));
    }
    if m == 1 && tau > 0.0 {
        return Err(Error::invalid("a single atom cannot span a non-zero shift range"));
    }
    let shifts = lss_shifts(m, tau);
    let l = reference.len();
    let mut atoms = Vec::with_capacity(m * l);
    for &s in &shifts {
        atoms.extend(shifted_atom(reference, s, mode)?);
    }
    let mut dict = Dictionary {
        l,
        atoms,
        shifts,
        tau,
        coherence: T::zero(),
        generator: Some(LssGenerator {
            reference: reference.clone(),
            mode: mode.clone(),
            tau,
        }),
    };
    let has_negative = dict.atoms.iter().any(|v| *v < T::zero());
    if has_negative {
        for i in 0..m {
            for j in i + 1..m {
                if dict.gram(i, j) < T::zero() {
                    return Err(Error::AssumptionViolated(format!(
                        "atoms {i} and {j} have a negative inner product"
                    )));
                }
            }
        }
    }
    dict.coherence = dict.compute_coherence();
    Ok(dict)
}

/// Autocorrelation `Gamma(u) = <d*, d*^u>`; zero once the shift pushes the
/// line entirely off the band range.
pub fn autocorrelation<T: Real>(reference: &ReferenceAtom<T>, shift: f64, mode: &ShiftMode) -> T {
    let base = match mode {
        ShiftMode::IntegerBand => reference.values.clone(),
        ShiftMode::Continuous(_) => match shifted_atom(reference, 0.0, mode) {
            Ok(v) => v,
            Err(_) => return T::zero(),
        },
    };
    match shifted_atom(reference, shift, mode) {
        Ok(v) => dot(&base, &v),
        Err(_) => T::zero(),
    }
}

/// Approximate expected max-test statistic under the alternative,
/// `a E[Gamma(e)]` with `e ~ U[0, tau / (m - 1)]`, by deterministic quadrature.
pub fn expected_max_gain<T: Real>(
    reference: &ReferenceAtom<T>,
    m: usize,
    tau: f64,
    amplitude: f64,
    mode: &ShiftMode,
) -> Result<f64> {
    if m < 2 {
        return Err(Error::invalid("expected gain needs at least two atoms"));
    }
    if amplitude == 0.0 {
        return Ok(0.0);
    }
    let h = tau / (m - 1) as f64;
    if h == 0.0 {
        return Ok(amplitude * autocorrelation(reference, 0.0, mode).to_f64_lossy());
    }
    let gamma = |e: f64| autocorrelation(reference, e, mode).to_f64_lossy();
    // Panels break at half-band multiples: integer shifts are piecewise
    // constant there, and truncated sampled profiles jump there.
    let mut breaks = vec![0.0];
    let mut b = 0.5;
    while b < h {
        breaks.push(b);
        b += 0.5;
    }
    breaks.push(h);
    let integral = match mode {
        ShiftMode::IntegerBand => breaks
            .windows(2)
            .map(|w| (w[1] - w[0]) * gamma(0.5 * (w[0] + w[1])))
            .sum::<f64>(),
        ShiftMode::Continuous(_) => {
            let rule = gauss_legendre(16);
            breaks
                .windows(2)
                .map(|w| integrate_fixed(gamma, w[0], w[1], &rule))
                .sum::<f64>()
        }
    };
    Ok(amplitude * integral / h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_profile() -> GaussianLine {
        GaussianLine::from_fwhm(14.0, 5.0, Some(6.0))
    }

    fn line_reference() -> ReferenceAtom<f64> {
        ReferenceAtom::sampled(&line_profile(), 30, 14).unwrap()
    }

    #[test]
    fn single_atom_has_zero_coherence() {
        let d = build_lss(&line_reference(), 1, 0.0, &ShiftMode::IntegerBand).unwrap();
        assert_eq!(d.m(), 1);
        assert_eq!(d.coherence(), 0.0);
        for (a, b) in d.atom(0).iter().zip(line_reference().values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_atom_with_shift_range_is_rejected() {
        assert!(build_lss(&line_reference(), 1, 2.0, &ShiftMode::IntegerBand).is_err());
    }

    #[test]
    fn disjoint_atoms_are_orthogonal() {
        let mut v = vec![0.0; 10];
        v[5] = 1.0;
        let r = ReferenceAtom::new(v, 5).unwrap();
        let d = build_lss(&r, 3, 2.0, &ShiftMode::IntegerBand).unwrap();
        assert_eq!(d.coherence(), 0.0);
    }

    #[test]
    fn vanished_atom_is_an_error() {
        let mut v = vec![0.0; 6];
        v[0] = 1.0;
        let r = ReferenceAtom::new(v, 0).unwrap();
        let err = build_lss(&r, 2, 7.0, &ShiftMode::IntegerBand).unwrap_err();
        assert!(matches!(err, Error::AtomVanished { .. }));
    }

    #[test]
    fn shifts_follow_the_linear_grid() {
        let d = build_lss(&line_reference(), 5, 8.0, &ShiftMode::IntegerBand).unwrap();
        assert_eq!(d.shifts(), &[-8.0, -4.0, 0.0, 4.0, 8.0]);
    }

    // Frozen from a numpy evaluation of the same reference; the figure
    // caption quotes 0.2 / 0.5 as rough values.
    #[test]
    fn reference_coherences() {
        let r = line_reference();
        let d3 = build_lss(&r, 3, 8.0, &ShiftMode::IntegerBand).unwrap();
        let d5 = build_lss(&r, 5, 8.0, &ShiftMode::IntegerBand).unwrap();
        assert!((d3.coherence() - 0.026_175_620_895_397_194).abs() < 1e-12);
        assert!((d5.coherence() - 0.410_866_142_104_411_5).abs() < 1e-12);
        // consecutive atoms realise the coherence
        assert!((d5.gram(1, 2) - d5.coherence()).abs() < 1e-15);
    }

    #[test]
    fn autocorrelation_basics() {
        let r = line_reference();
        let mode = ShiftMode::IntegerBand;
        assert!((autocorrelation(&r, 0.0, &mode) - 1.0).abs() < 1e-12);
        assert_eq!(autocorrelation(&r, 29.0, &mode), 0.0);
        assert_eq!(autocorrelation(&r, 100.0, &mode), 0.0);
        let cont = ShiftMode::continuous(line_profile());
        let grid: Vec<f64> = (0..40).map(|k| autocorrelation(&r, k as f64 * 0.25, &cont)).collect();
        assert!(grid.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        let neg: Vec<f64> = (0..40).map(|k| autocorrelation(&r, -(k as f64) * 0.25, &cont)).collect();
        assert!(neg.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn expected_gain_limits() {
        let r = line_reference();
        let cont = ShiftMode::continuous(line_profile());
        assert_eq!(expected_max_gain(&r, 5, 8.0, 0.0, &cont).unwrap(), 0.0);
        let big = expected_max_gain(&r, 4001, 8.0, 2.7, &cont).unwrap();
        assert!((big - 2.7).abs() < 1e-3, "{big}");
        let curve: Vec<f64> = (2..=20)
            .map(|m| expected_max_gain(&r, m, 8.0, 2.7, &cont).unwrap())
            .collect();
        assert!(curve.windows(2).all(|w| w[1] > w[0]));
        assert!(curve.iter().all(|g| *g < 2.7));
        assert!(expected_max_gain(&r, 1, 8.0, 1.0, &cont).is_err());
    }

    #[test]
    fn relaxed_reference_rejects_negative_gram() {
        // alternating signs make shifted copies anti-correlated
        let v: Vec<f64> = (0..12).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!(ReferenceAtom::new(v.clone(), 6).is_err());
        let r = ReferenceAtom::relaxed(v, 6).unwrap();
        assert!(matches!(
            build_lss(&r, 3, 1.0, &ShiftMode::IntegerBand),
            Err(Error::AssumptionViolated(_))
        ));
    }

    #[test]
    fn generic_over_f32() {
        let r = ReferenceAtom::<f32>::sampled(&line_profile(), 30, 14).unwrap();
        let d = build_lss(&r, 15, 7.0, &ShiftMode::IntegerBand).unwrap();
        for a in d.atoms() {
            assert!((norm(a) - 1.0).abs() < 1e-6);
        }
    }
}
