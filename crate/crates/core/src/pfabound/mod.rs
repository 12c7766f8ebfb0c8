//! False-alarm analysis of the max-test under i.i.d. standard Gaussian noise
//! and the matched filter, where `z = D^T y` is Gaussian with the atom Gram
//! matrix as correlation.
//!
//! For orthogonal atoms the PFA is exact, `1 - Phi(eta)^m`. For a coherent
//! LSS family the probability `P(max z <= t)` is bounded below by the
//! recursion
//!
//! ```text
//! M_2(t)     = P(z1 <= t, z2 <= t)                       (2-atom family)
//! M_{k+1}(t) = P(z1 <= t | z2 <= t, z3 <= t) * M_k(t)     ((k+1)-atom family)
//! ```
//!
//! where `z1` is the first atom of the `(k+1)`-atom family and `z2`, `z3` are
//! its two nearest neighbours on the grid. `1 - M_m(eta)` then bounds the PFA
//! from above.

pub mod mvn;

pub use mvn::{norm_cdf, norm_quantile, normal_cdf_2d, normal_cdf_3d};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Correlation matrix of `z = D^T eps` under the null.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCorrModel {
    m: usize,
    corr: Vec<f64>,
}

impl GaussianCorrModel {
    pub fn from_dictionary<T: Real>(dict: &Dictionary<T>) -> Result<Self> {
        let m = dict.m();
        let mut corr = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                corr[i * m + j] = if i == j { 1.0 } else { dict.gram(i, j).to_f64_lossy() };
            }
        }
        let model = Self { m, corr };
        model.validate()?;
        Ok(model)
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.corr[i * self.m + j]
    }

    fn validate(&self) -> Result<()> {
        for i in 0..self.m {
            for j in 0..self.m {
                let v = self.get(i, j);
                if (v - self.get(j, i)).abs() > 1e-12 {
                    return Err(Error::AssumptionViolated("correlation matrix is not symmetric".into()));
                }
                if v < -1e-12 {
                    return Err(Error::AssumptionViolated(format!(
                        "negative correlation {v:.3e} between atoms {i} and {j}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Lower Cholesky factor (with a tiny jitter for semidefinite Gram
    /// matrices), used to draw `z` directly in Monte-Carlo checks.
    pub fn cholesky(&self) -> Result<Vec<f64>> {
        let m = self.m;
        let mut l = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..=i {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * m + k] * l[j * m + k];
                }
                if i == j {
                    let d = s + 1e-12;
                    if d <= 0.0 {
                        return Err(Error::NotPsd);
                    }
                    l[i * m + i] = d.sqrt();
                } else {
                    l[i * m + j] = s / l[j * m + j];
                }
            }
        }
        Ok(l)
    }
}

/// Exact PFA `1 - Phi(eta)^m` for orthogonal atoms.
pub fn pfa_exact_orthogonal(m: usize, eta: f64) -> f64 {
    let phi = norm_cdf(eta);
    if phi <= 0.0 {
        return 1.0;
    }
    -((m as f64) * phi.ln()).exp_m1()
}

/// Neighbour correlations used by one recursion step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepCorrelations {
    /// `<d0, d1>` of the family.
    pub r12: f64,
    /// `<d0, d2>`.
    pub r13: f64,
    /// `<d1, d2>`.
    pub r23: f64,
}

/// Precomputed recursion ingredients for an LSS family of size `m`.
#[derive(Clone, Debug)]
pub struct PfaBound {
    m: usize,
    /// `<d0, d1>` of the 2-atom family (unused when `m == 1`).
    base: f64,
    /// Steps for family sizes `3..=m`.
    steps: Vec<StepCorrelations>,
}

impl PfaBound {
    /// Rebuild the `k`-atom families, `k = 2..=m`, from the dictionary's
    /// generator and read off the correlations the recursion needs.
    pub fn new<T: Real>(dict: &Dictionary<T>) -> Result<Self> {
        let m = dict.m();
        if m == 1 {
            return Ok(Self {
                m,
                base: 0.0,
                steps: Vec::new(),
            });
        }
        let gen = dict.generator().ok_or_else(|| {
            Error::invalid("PFA bound needs an LSS dictionary (built by build_lss, not loaded from atoms)")
        })?;
        GaussianCorrModel::from_dictionary(dict)?;
        let c = |d: &Dictionary<T>, i: usize, j: usize| d.gram(i, j).to_f64_lossy();
        let base = c(&gen.build(2)?, 0, 1);
        let mut steps = Vec::with_capacity(m.saturating_sub(2));
        let mut prev_neighbour = base;
        for k in 3..=m {
            let d = gen.build(k)?;
            let s = StepCorrelations {
                r12: c(&d, 0, 1),
                r13: c(&d, 0, 2),
                r23: c(&d, 1, 2),
            };
            // Sampled profiles truncated at the band edges perturb equal
            // correlations at the 1e-9 level.
            const TOL: f64 = 1e-8;
            if s.r12 < -TOL || s.r13 < -TOL || s.r23 < -TOL {
                return Err(Error::AssumptionViolated(format!("negative correlation in the {k}-atom family")));
            }
            if s.r13 > s.r12 + TOL || s.r13 > s.r23 + TOL {
                return Err(Error::AssumptionViolated(format!(
                    "autocorrelation increases with shift in the {k}-atom family"
                )));
            }
            // Denser families must be at least as correlated (Slepian step).
            if s.r23 + TOL < prev_neighbour {
                return Err(Error::AssumptionViolated(format!(
                    "neighbour correlation drops from {prev_neighbour:.6} to {:.6} at size {k}",
                    s.r23
                )));
            }
            prev_neighbour = s.r23.min(s.r12);
            steps.push(s);
        }
        Ok(Self { m, base, steps })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn steps(&self) -> &[StepCorrelations] {
        &self.steps
    }

    /// Conditional `P(z1 <= t | z2 <= t, z3 <= t)` for one step.
    pub fn step_factor(s: &StepCorrelations, t: f64) -> Result<f64> {
        let joint = normal_cdf_3d(t, t, t, s.r12, s.r13, s.r23)?;
        let cond = normal_cdf_2d(t, t, s.r23)?;
        if cond <= 0.0 {
            return Ok(0.0);
        }
        Ok((joint / cond).clamp(0.0, 1.0))
    }

    /// Lower bound `M_m(t)` on `P(max z <= t)`.
    pub fn lower_cdf(&self, t: f64) -> Result<f64> {
        if self.m == 1 {
            return Ok(norm_cdf(t));
        }
        let mut acc = normal_cdf_2d(t, t, self.base)?;
        for s in &self.steps {
            acc *= Self::step_factor(s, t)?;
        }
        Ok(acc)
    }

    /// Upper bound `1 - M_m(eta)` on the PFA.
    pub fn pfa(&self, eta: f64) -> Result<f64> {
        if self.m == 1 {
            return Ok(pfa_exact_orthogonal(1, eta));
        }
        Ok(1.0 - self.lower_cdf(eta)?)
    }

    /// Threshold `eta` with `M_m(eta) = 1 - alpha`, by bisection to 1e-8.
    pub fn threshold(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1)"));
        }
        if self.m == 1 {
            return Ok(norm_quantile(1.0 - alpha));
        }
        let target = 1.0 - alpha;
        // M_m(t) <= Phi(t), and every factor is at least Phi(t), so the root
        // lies between the single-atom and orthogonal thresholds.
        let mut lo = norm_quantile(target) - 1e-6;
        let mut hi = norm_quantile(target.powf(1.0 / self.m as f64)) + 1e-6;
        let f_lo = self.lower_cdf(lo)? - target;
        let f_hi = self.lower_cdf(hi)? - target;
        if !(f_lo <= 0.0 && f_hi >= 0.0) {
            return Err(Error::Numeric(format!(
                "threshold not bracketed in [{lo:.6}, {hi:.6}] (residuals {f_lo:.3e}, {f_hi:.3e})"
            )));
        }
        let grid: Vec<f64> = (0..=8).map(|i| lo + (hi - lo) * i as f64 / 8.0).collect();
        let vals = grid.iter().map(|t| self.lower_cdf(*t)).collect::<Result<Vec<_>>>()?;
        if vals.windows(2).any(|w| w[1] < w[0] - 1e-12) {
            return Err(Error::Numeric("M_m(t) is not monotone on the bracket".into()));
        }
        while hi - lo > 1e-9 {
            let mid = 0.5 * (lo + hi);
            if self.lower_cdf(mid)? < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Upper bound on the max-test PFA of an LSS dictionary at threshold `eta`.
pub fn pfa_bound<T: Real>(dict: &Dictionary<T>, eta: f64) -> Result<f64> {
    if dict.m() == 1 {
        return Ok(pfa_exact_orthogonal(1, eta));
    }
    PfaBound::new(dict)?.pfa(eta)
}

/// Threshold `eta_m` with bounded PFA at most `alpha`.
pub fn threshold_for_pfa<T: Real>(dict: &Dictionary<T>, alpha: f64) -> Result<f64> {
    PfaBound::new(dict)?.threshold(alpha)
}

/// Threshold for `m` orthogonal atoms, `Phi^{-1}((1 - alpha)^{1/m})`.
pub fn threshold_orthogonal(m: usize, alpha: f64) -> f64 {
    norm_quantile((1.0 - alpha).powf(1.0 / m as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{build_lss, GaussianLine, ReferenceAtom, ShiftMode};

    fn delta_reference(l: usize) -> ReferenceAtom<f64> {
        let mut v = vec![0.0; l];
        v[l / 2] = 1.0;
        ReferenceAtom::new(v, l / 2).unwrap()
    }

    #[test]
    fn orthogonal_pfa_values() {
        let eta = norm_quantile(0.95);
        assert!((pfa_exact_orthogonal(1, eta) - 0.05).abs() < 1e-12);
        assert!((pfa_exact_orthogonal(2, 0.0) - 0.75).abs() < 1e-15);
        let v = pfa_exact_orthogonal(15, 2.0);
        assert!((v - (1.0 - norm_cdf(2.0).powi(15))).abs() < 1e-14);
    }

    #[test]
    fn bound_is_sharp_for_disjoint_atoms() {
        // a one-band line shifted by whole bands never overlaps itself
        let r = delta_reference(41);
        let mode = ShiftMode::IntegerBand;
        for m in [2, 3, 5, 11] {
            let d = build_lss(&r, m, (m - 1) as f64, &mode).unwrap();
            for eta in [0.5, 1.5, 2.5] {
                let b = pfa_bound(&d, eta).unwrap();
                assert!((b - pfa_exact_orthogonal(m, eta)).abs() < 1e-7, "m {m} eta {eta}");
            }
            let t = threshold_for_pfa(&d, 0.05).unwrap();
            assert!((t - threshold_orthogonal(m, 0.05)).abs() < 1e-6);
        }
    }

    #[test]
    fn single_atom_threshold() {
        let d = build_lss(&delta_reference(5), 1, 0.0, &ShiftMode::IntegerBand).unwrap();
        assert!((threshold_for_pfa(&d, 0.05).unwrap() - norm_quantile(0.95)).abs() < 1e-12);
        assert!((pfa_bound(&d, 1.0).unwrap() - (1.0 - norm_cdf(1.0))).abs() < 1e-15);
    }

    #[test]
    fn lower_cdf_is_non_increasing_in_m() {
        let prof = GaussianLine::from_fwhm(14.0, 5.0, Some(6.0));
        let r = ReferenceAtom::<f64>::sampled(&prof, 30, 14).unwrap();
        let mode = ShiftMode::continuous(prof);
        let d = build_lss(&r, 12, 8.0, &mode).unwrap();
        let b = PfaBound::new(&d).unwrap();
        for t in [1.0, 2.0, 3.0] {
            let mut acc = normal_cdf_2d(t, t, b.base).unwrap();
            for s in b.steps() {
                let next = acc * PfaBound::step_factor(s, t).unwrap();
                assert!(next <= acc);
                acc = next;
            }
        }
    }

    #[test]
    fn loaded_dictionary_without_generator_is_rejected() {
        let d = Dictionary::from_atoms(vec![vec![1.0, 0.0], vec![0.6, 0.8]], vec![-1.0, 1.0]).unwrap();
        assert!(pfa_bound(&d, 2.0).is_err());
    }

    #[test]
    fn cholesky_reproduces_the_gram_matrix() {
        let prof = GaussianLine::from_fwhm(14.0, 5.0, Some(6.0));
        let r = ReferenceAtom::<f64>::sampled(&prof, 30, 14).unwrap();
        let d = build_lss(&r, 6, 8.0, &ShiftMode::continuous(prof)).unwrap();
        let g = GaussianCorrModel::from_dictionary(&d).unwrap();
        let l = g.cholesky().unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let v: f64 = (0..6).map(|k| l[i * 6 + k] * l[j * 6 + k]).sum();
                assert!((v - g.get(i, j)).abs() < 1e-9);
            }
        }
    }
}
