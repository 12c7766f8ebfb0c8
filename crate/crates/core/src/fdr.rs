//! False discovery rate control: Benjamini-Hochberg step-up, null
//! proportion estimators and q-values.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nullmodel::{empirical_pvalues, NullModel};
use crate::scalar::{cmp_scalar, Scalar};
use crate::teststat::TestField;

/// Outcome of a BH run over a (possibly masked) pixel field.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionResult<T> {
    pub pvalues: Vec<T>,
    pub qvalues: Vec<T>,
    pub detected: Vec<bool>,
    /// Pixels that took part in the test; the rest have p = q = 1.
    pub tested: Vec<bool>,
    pub k_hat: usize,
    /// Level handed to the step-up rule (after any pi0 correction).
    pub nominal_q: T,
    /// Null proportion used for the correction and the q-values.
    pub pi0: T,
}

impl<T: Scalar> DetectionResult<T> {
    pub fn n_detected(&self) -> usize {
        self.detected.iter().filter(|d| **d).count()
    }
}

/// Which null-proportion estimate scales the BH level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pi0Method {
    /// `min(2 n0 / n, 1)` from the fitted null model.
    Empirical,
    /// Storey's estimator at the given `zeta`.
    Storey(f64),
    /// Plain BH.
    One,
}

impl FromStr for Pi0Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empirical" => Ok(Self::Empirical),
            "one" => Ok(Self::One),
            _ => {
                let zeta = s
                    .strip_prefix("storey:")
                    .ok_or_else(|| Error::invalid(format!("unknown pi0 method '{s}'")))?;
                let zeta: f64 = zeta
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad Storey zeta '{zeta}'")))?;
                if !(0.0..1.0).contains(&zeta) {
                    return Err(Error::invalid("Storey zeta must lie in [0, 1)"));
                }
                Ok(Self::Storey(zeta))
            }
        }
    }
}

impl fmt::Display for Pi0Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Empirical => f.write_str("empirical"),
            Self::Storey(z) => write!(f, "storey:{z}"),
            Self::One => f.write_str("one"),
        }
    }
}

fn sorted_order<T: Scalar>(p: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|a, b| cmp_scalar(&p[*a], &p[*b]));
    idx
}

/// Step-up rank `k_hat = max{k : p_(k) <= q k / n}` (0 if none).
pub fn bh_rank<T: Scalar>(sorted: &[T], q: T) -> usize {
    let n = T::from_count(sorted.len());
    (1..=sorted.len())
        .rev()
        .find(|&k| sorted[k - 1] <= q * T::from_count(k) / n)
        .unwrap_or(0)
}

/// BH step-up at level `q`. q-values use `pi0 = 1`.
pub fn bh_reject<T: Scalar>(pvalues: &[T], q: T) -> DetectionResult<T> {
    bh_masked(pvalues, &vec![true; pvalues.len()], q, T::one())
}

/// BH over the tested subset, with q-values scaled by `pi0`.
fn bh_masked<T: Scalar>(pvalues: &[T], tested: &[bool], level: T, pi0: T) -> DetectionResult<T> {
    let idx: Vec<usize> = (0..pvalues.len()).filter(|i| tested[*i]).collect();
    let sub: Vec<T> = idx.iter().map(|i| pvalues[*i]).collect();
    let order = sorted_order(&sub);
    let sorted: Vec<T> = order.iter().map(|i| sub[*i]).collect();
    let k_hat = bh_rank(&sorted, level);

    let mut detected = vec![false; pvalues.len()];
    // Ties at the cut-off are rejected together: everything <= p_(k_hat).
    if k_hat > 0 {
        let cut = sorted[k_hat - 1];
        for (j, i) in idx.iter().enumerate() {
            detected[*i] = sub[j] <= cut;
        }
    }
    let q_sub = qvalues(&sub, pi0);
    let mut q_all = vec![T::one(); pvalues.len()];
    let mut p_all = vec![T::one(); pvalues.len()];
    for (j, i) in idx.iter().enumerate() {
        q_all[*i] = q_sub[j];
        p_all[*i] = sub[j];
    }
    DetectionResult {
        pvalues: p_all,
        qvalues: q_all,
        detected,
        tested: tested.to_vec(),
        k_hat,
        nominal_q: level,
        pi0,
    }
}

/// Storey's `min{(1 + #{p > zeta}) / ((1 - zeta) n), 1}`.
pub fn storey_pi0<T: Scalar>(pvalues: &[T], zeta: T) -> T {
    let n = pvalues.len();
    let above = pvalues.iter().filter(|p| **p > zeta).count();
    let est = T::from_count(1 + above) / ((T::one() - zeta) * T::from_count(n));
    est.min_of(T::one())
}

/// q-values via the right-to-left cumulative minimum of `pi0 p_(k) n / k`,
/// capped at 1.
pub fn qvalues<T: Scalar>(pvalues: &[T], pi0: T) -> Vec<T> {
    let n = pvalues.len();
    let order = sorted_order(pvalues);
    let mut out = vec![T::one(); n];
    let mut running = T::one();
    let nn = T::from_count(n);
    for k in (1..=n).rev() {
        let i = order[k - 1];
        let raw = pi0 * pvalues[i] * nn / T::from_count(k);
        running = running.min_of(raw);
        out[i] = running;
    }
    out
}

/// Resolve a pi0 estimate for a set of p-values.
pub fn resolve_pi0<T: Scalar>(method: Pi0Method, model: &NullModel<T>, pvalues: &[T]) -> T {
    match method {
        Pi0Method::Empirical => model.pi0_hat,
        Pi0Method::Storey(z) => storey_pi0(pvalues, T::lit(z)),
        Pi0Method::One => T::one(),
    }
}

/// Empirical p-values, then BH at level `q / pi0_hat` (capped at 1).
pub fn detect<T: Scalar>(model: &NullModel<T>, field: &TestField<T>, q: T) -> DetectionResult<T> {
    detect_with(model, field, q, Pi0Method::Empirical)
}

pub fn detect_with<T: Scalar>(
    model: &NullModel<T>,
    field: &TestField<T>,
    q: T,
    method: Pi0Method,
) -> DetectionResult<T> {
    let p = empirical_pvalues(model, field);
    let tested_p: Vec<T> = p
        .iter()
        .zip(&field.tested)
        .filter(|(_, t)| **t)
        .map(|(v, _)| *v)
        .collect();
    let pi0 = resolve_pi0(method, model, &tested_p);
    detect_pvalues(&p, &field.tested, q, pi0)
}

/// BH at `q / pi0` over precomputed p-values.
pub fn detect_pvalues<T: Scalar>(pvalues: &[T], tested: &[bool], q: T, pi0: T) -> DetectionResult<T> {
    let level = (q / pi0).min_of(T::one());
    let mut r = bh_masked(pvalues, tested, level, pi0);
    // a zero level is an explicit request to detect nothing, even p = 0
    if !(q > T::zero()) {
        r.k_hat = 0;
        r.detected.iter_mut().for_each(|d| *d = false);
    }
    r
}
