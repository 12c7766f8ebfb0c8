//! Empirical null distribution of the max statistic, learned from the
//! pooled max / negated-min sample under noise symmetry.
//!
//! With `t = (tmax_1..tmax_n, -tmin_1..-tmin_n)` sorted, the null median is
//! the pooled sample median. Max statistics at or below it (`s0`) and
//! negated mins above it (`g0`) are, under the zero assumptions, pure-null
//! draws from either side of the median; their union is the null sample.

use crate::error::{Error, Result};
use crate::scalar::{cmp_scalar, Scalar};
use crate::teststat::TestField;

#[derive(Clone, Debug, PartialEq)]
pub struct NullModel<T> {
    /// Estimated null median.
    pub mu0_hat: T,
    /// Estimated null proportion, `min(2 n0 / n, 1)`.
    pub pi0_hat: T,
    /// `|s0|`.
    pub n0: usize,
    /// Number of tested pixels the model was fitted on.
    pub n: usize,
    /// `s0 ∪ g0`, sorted ascending.
    samples: Vec<T>,
}

impl<T: Scalar> NullModel<T> {
    /// Rebuild a model from stored parts (e.g. a CSV written by a previous fit).
    pub fn from_parts(mu0_hat: T, pi0_hat: T, n0: usize, n: usize, mut samples: Vec<T>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("null model has no samples"));
        }
        if n0 == 0 || n0 > samples.len() {
            return Err(Error::invalid("inconsistent null sample size"));
        }
        if !(pi0_hat > T::zero() && pi0_hat <= T::one()) {
            return Err(Error::invalid("pi0 must lie in (0, 1]"));
        }
        samples.sort_by(cmp_scalar);
        Ok(Self {
            mu0_hat,
            pi0_hat,
            n0,
            n,
            samples,
        })
    }

    /// Pooled truncated null sample, ascending.
    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    /// `F0_hat(t)`: right-continuous step CDF of the pooled null sample.
    pub fn cdf(&self, t: T) -> T {
        T::from_count(self.count_le(t)) / T::from_count(self.samples.len())
    }

    /// Empirical p-value `1 - F0_hat(t)`, computed from the exceedance count.
    pub fn pvalue(&self, t: T) -> T {
        let total = self.samples.len();
        T::from_count(total - self.count_le(t)) / T::from_count(total)
    }

    fn count_le(&self, t: T) -> usize {
        self.samples.partition_point(|s| *s <= t)
    }
}

pub fn fit_null<T: Scalar>(field: &TestField<T>) -> Result<NullModel<T>> {
    let maxes: Vec<T> = field
        .tmax
        .iter()
        .zip(&field.tested)
        .filter(|(_, t)| **t)
        .map(|(v, _)| *v)
        .collect();
    let neg_mins: Vec<T> = field
        .tmin
        .iter()
        .zip(&field.tested)
        .filter(|(_, t)| **t)
        .map(|(v, _)| -*v)
        .collect();
    let n = maxes.len();
    if n < 2 {
        return Err(Error::invalid("null fitting needs at least two tested pixels"));
    }
    let mut pooled: Vec<T> = maxes.iter().chain(&neg_mins).copied().collect();
    pooled.sort_by(cmp_scalar);
    if pooled[0] == pooled[2 * n - 1] {
        return Err(Error::DegenerateField);
    }
    let two = T::one() + T::one();
    let mu0 = (pooled[n - 1] + pooled[n]) / two;

    let mut samples: Vec<T> = maxes.iter().copied().filter(|v| *v <= mu0).collect();
    let n0 = samples.len();
    samples.extend(neg_mins.iter().copied().filter(|v| *v > mu0));
    if n0 == 0 {
        return Err(Error::Numeric("no max statistic falls below the null median".into()));
    }
    samples.sort_by(cmp_scalar);

    let pi0 = (T::from_count(2 * n0) / T::from_count(n)).min_of(T::one());
    Ok(NullModel {
        mu0_hat: mu0,
        pi0_hat: pi0,
        n0,
        n,
        samples,
    })
}

pub fn null_cdf<T: Scalar>(model: &NullModel<T>, t: T) -> T {
    model.cdf(t)
}

/// Per-pixel `p = 1 - F0_hat(tmax)`. Untested pixels get `p = 1`.
pub fn empirical_pvalues<T: Scalar>(model: &NullModel<T>, field: &TestField<T>) -> Vec<T> {
    field
        .tmax
        .iter()
        .zip(&field.tested)
        .map(|(t, ok)| if *ok { model.pvalue(*t) } else { T::one() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use proptest::prelude::*;

    #[test]
    fn hand_example() {
        let f = TestField::from_stats(vec![1.0, 2.0, 3.0], vec![-3.0, -2.0, -1.0]).unwrap();
        let m = fit_null(&f).unwrap();
        assert_eq!(m.mu0_hat, 2.0);
        assert_eq!(m.n0, 2);
        assert_eq!(m.pi0_hat, 1.0);
        // the median is tied, so only one negated min lies strictly above it
        assert_eq!(m.samples(), &[1.0, 2.0, 3.0]);
        assert_eq!(m.cdf(2.0), 2.0 / 3.0);
    }

    #[test]
    fn symmetric_field_has_unit_pi0() {
        let tmax: Vec<f64> = (0..101).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let tmin: Vec<f64> = tmax.iter().map(|v| -v).collect();
        let m = fit_null(&TestField::from_stats(tmax, tmin).unwrap()).unwrap();
        assert_eq!(m.pi0_hat, 1.0);
    }

    #[test]
    fn degenerate_field_is_rejected() {
        let f = TestField::from_stats(vec![0.5; 4], vec![-0.5; 4]).unwrap();
        assert!(matches!(fit_null(&f), Err(Error::DegenerateField)));
        let one = TestField::from_stats(vec![0.5], vec![-0.5]).unwrap();
        assert!(fit_null(&one).is_err());
    }

    #[test]
    fn cdf_edges_and_pvalues() {
        let f = TestField::from_stats(vec![1.0, 2.0, 3.0, 0.5], vec![-3.0, -2.5, -1.0, -0.2]).unwrap();
        let m = fit_null(&f).unwrap();
        assert_eq!(m.cdf(-10.0), 0.0);
        assert_eq!(m.cdf(10.0), 1.0);
        assert!(m.cdf(m.mu0_hat) >= 0.5);
        assert_eq!(m.pvalue(-10.0), 1.0);
        assert_eq!(m.pvalue(10.0), 0.0);
    }

    #[test]
    fn untested_pixels_get_unit_pvalue() {
        let mut f = TestField::from_stats(vec![1.0, 2.0, 3.0, 9.0], vec![-3.0, -2.0, -1.0, -8.0]).unwrap();
        f.tested[3] = false;
        let m = fit_null(&f).unwrap();
        assert_eq!(m.n, 3);
        assert_eq!(empirical_pvalues(&m, &f)[3], 1.0);
    }

    #[test]
    fn works_with_exact_rationals() {
        let r = |a: i64| Ratio::new(a, 4);
        let f = TestField::from_stats(vec![r(1), r(6), r(3), r(9)], vec![r(-5), r(-2), r(-7), r(-1)]).unwrap();
        let m = fit_null(&f).unwrap();
        // pooled: 1,6,3,9,5,2,7,1 (quarters) sorted 1,1,2,3,5,6,7,9 -> median (3+5)/8
        assert_eq!(m.mu0_hat, Ratio::new(1, 1));
        assert_eq!(m.n0, 2);
        assert_eq!(m.pi0_hat, Ratio::new(1, 1));
    }

    fn field() -> impl Strategy<Value = TestField<f64>> {
        prop::collection::vec((-3.0f64..3.0, 0.0f64..2.0, 0.0f64..1.5), 2..300).prop_map(|rows| {
            let tmax = rows.iter().map(|(c, up, _)| c + up).collect();
            let tmin = rows.iter().map(|(c, _, down)| c - down).collect();
            TestField::from_stats(tmax, tmin).unwrap()
        })
    }

    proptest! {
        #[test]
        fn crossing_equation_holds(f in field()) {
            let mut pooled: Vec<f64> = f.tmax.iter().copied().chain(f.tmin.iter().map(|v| -v)).collect();
            pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = f.n();
            // the lemma assumes continuous statistics: no tie at the median
            prop_assume!(pooled[n - 1] < pooled[n]);
            prop_assume!(fit_null(&f).is_ok());
            let m = fit_null(&f).unwrap();
            let below = f.tmax.iter().filter(|v| **v <= m.mu0_hat).count();
            let above = f.tmin.iter().filter(|v| -**v > m.mu0_hat).count();
            prop_assert_eq!(below, above);
            prop_assert_eq!(m.samples().len(), 2 * m.n0);
            prop_assert_eq!(m.pi0_hat, (2.0 * m.n0 as f64 / f.n() as f64).min(1.0));
        }

        #[test]
        fn cdf_is_a_step_distribution(f in field(), probes in prop::collection::vec(-6.0f64..6.0, 1..50)) {
            prop_assume!(fit_null(&f).is_ok());
            let m = fit_null(&f).unwrap();
            let mut probes = probes;
            probes.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let vals: Vec<f64> = probes.iter().map(|t| m.cdf(*t)).collect();
            prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn pvalues_decrease_with_the_statistic(f in field()) {
            prop_assume!(fit_null(&f).is_ok());
            let m = fit_null(&f).unwrap();
            let p = empirical_pvalues(&m, &f);
            let mut idx: Vec<usize> = (0..f.n()).collect();
            idx.sort_by(|a, b| f.tmax[*a].partial_cmp(&f.tmax[*b]).unwrap());
            prop_assert!(idx.windows(2).all(|w| p[w[0]] >= p[w[1]]));
        }

        #[test]
        fn invariant_under_pixel_permutation(f in field(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut perm: Vec<usize> = (0..f.n()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assume!(fit_null(&f).is_ok());
            let a = fit_null(&f).unwrap();
            let b = fit_null(&f.permuted(&perm)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
