//! Univariate, bivariate and trivariate standard normal CDFs.
//!
//! The bivariate CDF follows the Drezner-Wesolowsky single-integral form
//! with Genz's refinements for |rho| near one. The trivariate CDF conditions
//! on one coordinate and integrates bivariate CDFs of the other two
//! adaptively.

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::quad::{gauss_legendre, integrate_adaptive};

const TWO_PI: f64 = 2.0 * PI;

fn gl20() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(20))
}

/// Standard normal CDF.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (TWO_PI).sqrt()
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    Normal::standard().inverse_cdf(p)
}

/// `P(X > h, Y > k)` for standard normals with correlation `r`.
fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    if r < -0.925 {
        // X > h, Y > k  <=>  X > h minus  X > h, -Y > -k, and corr(X, -Y) = -r.
        return (norm_cdf(-h) - bvn_upper(h, -k, -r)).max(0.0);
    }
    let (nodes, weights) = gl20();
    let hk = h * k;
    if r.abs() <= 0.925 {
        let mut bvn = 0.0;
        if r != 0.0 {
            let hs = 0.5 * (h * h + k * k);
            let asr = r.asin();
            for (x, w) in nodes.iter().zip(weights) {
                let sn = (0.5 * asr * (x + 1.0)).sin();
                bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
            bvn *= asr / (2.0 * TWO_PI);
        }
        return bvn + norm_cdf(-h) * norm_cdf(-k);
    }
    // 0.925 < r <= 1
    let mut bvn = 0.0;
    if r < 1.0 {
        let a_s = (1.0 - r) * (1.0 + r);
        let mut a = a_s.sqrt();
        let b_s = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        let asr = -0.5 * (b_s / a_s + hk);
        if asr > -100.0 {
            bvn = a * asr.exp() * (1.0 - c * (b_s - a_s) * (1.0 - d * b_s / 5.0) / 3.0 + c * d * a_s * a_s / 5.0);
        }
        if hk > -100.0 {
            let b = b_s.sqrt();
            bvn -= (-0.5 * hk).exp()
                * TWO_PI.sqrt()
                * norm_cdf(-b / a)
                * b
                * (1.0 - c * b_s * (1.0 - d * b_s / 5.0) / 3.0);
        }
        a *= 0.5;
        for (x, w) in nodes.iter().zip(weights) {
            let xn = a * (x + 1.0);
            let xs = xn * xn;
            let rs = (1.0 - xs).sqrt();
            let asr = -0.5 * (b_s / xs + hk);
            if asr > -100.0 {
                bvn += a
                    * w
                    * asr.exp()
                    * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs - (1.0 + c * xs * (1.0 + d * xs)));
            }
        }
        bvn = -bvn / TWO_PI;
    }
    (bvn + norm_cdf(-h.max(k))).clamp(0.0, 1.0)
}

/// `P(X <= h, Y <= k)` for standard normals with correlation `rho`.
pub fn normal_cdf_2d(h: f64, k: f64, rho: f64) -> Result<f64> {
    if !(rho.abs() <= 1.0) {
        return Err(Error::NotPsd);
    }
    if h.is_nan() || k.is_nan() {
        return Err(Error::invalid("NaN integration limit"));
    }
    if h == f64::NEG_INFINITY || k == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if h == f64::INFINITY {
        return Ok(norm_cdf(k));
    }
    if k == f64::INFINITY {
        return Ok(norm_cdf(h));
    }
    Ok(bvn_upper(-h, -k, rho).clamp(0.0, 1.0))
}

const DEGENERATE: f64 = 1.0 - 1e-12;

/// `P(X1 <= h1, X2 <= h2, X3 <= h3)` for a standard trivariate normal with
/// correlations `r12, r13, r23`.
pub fn normal_cdf_3d(h1: f64, h2: f64, h3: f64, r12: f64, r13: f64, r23: f64) -> Result<f64> {
    let r = [r12, r13, r23];
    if r.iter().any(|v| !(v.abs() <= 1.0)) {
        return Err(Error::NotPsd);
    }
    let det = 1.0 - r12 * r12 - r13 * r13 - r23 * r23 + 2.0 * r12 * r13 * r23;
    if det < -1e-10 {
        return Err(Error::NotPsd);
    }
    let h = [h1, h2, h3];
    if h.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN integration limit"));
    }
    if h.iter().any(|v| *v == f64::NEG_INFINITY) {
        return Ok(0.0);
    }
    // corr[i][j]
    let c = [[1.0, r12, r13], [r12, 1.0, r23], [r13, r23, 1.0]];
    for i in 0..3 {
        if h[i] == f64::INFINITY {
            let (a, b) = others(i);
            return normal_cdf_2d(h[a], h[b], c[a][b]);
        }
    }
    // Perfectly (anti)correlated pairs collapse to two dimensions.
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let rab = c[a][b];
        if rab.abs() >= DEGENERATE {
            let o = 3 - a - b;
            if rab > 0.0 {
                return normal_cdf_2d(h[a].min(h[b]), h[o], c[a][o]);
            }
            // X_b = -X_a: -h_b <= X_a <= h_a
            if h[a] <= -h[b] {
                return Ok(0.0);
            }
            let hi = normal_cdf_2d(h[a], h[o], c[a][o])?;
            let lo = normal_cdf_2d(-h[b], h[o], c[a][o])?;
            return Ok((hi - lo).max(0.0));
        }
    }
    // Condition on the coordinate least correlated with the other two.
    let i = (0..3)
        .min_by(|x, y| {
            let mx = |v: usize| {
                let (a, b) = others(v);
                c[v][a].abs().max(c[v][b].abs())
            };
            mx(*x).partial_cmp(&mx(*y)).unwrap()
        })
        .unwrap();
    let (a, b) = others(i);
    let (ra, rb) = (c[i][a], c[i][b]);
    let sa = ((1.0 - ra) * (1.0 + ra)).sqrt();
    let sb = ((1.0 - rb) * (1.0 + rb)).sqrt();
    let rab = ((c[a][b] - ra * rb) / (sa * sb)).clamp(-1.0, 1.0);
    let (ha, hb) = (h[a], h[b]);
    const CUT: f64 = 9.0;
    let upper = h[i].min(CUT);
    if upper <= -CUT {
        return Ok(0.0);
    }
    let integrand = |x: f64| {
        norm_pdf(x) * normal_cdf_2d((ha - ra * x) / sa, (hb - rb * x) / sb, rab).unwrap_or(0.0)
    };
    // Split where either conditional limit changes fastest.
    let mut breaks = vec![-CUT, upper];
    for (hh, rr) in [(ha, ra), (hb, rb)] {
        if rr.abs() > 1e-3 {
            let x0 = hh / rr;
            if x0 > -CUT && x0 < upper {
                breaks.push(x0);
            }
        }
    }
    breaks.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let total: f64 = breaks
        .windows(2)
        .map(|w| integrate_adaptive(integrand, w[0], w[1], 1e-14))
        .sum();
    Ok(total.clamp(0.0, 1.0))
}

fn others(i: usize) -> (usize, usize) {
    match i {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-8;

    #[test]
    fn univariate_reference_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((norm_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-15);
        assert!((norm_quantile(0.95) - 1.644_853_626_951_472_2).abs() < 1e-12);
    }

    #[test]
    fn bivariate_closed_forms() {
        for &(h, k) in &[(0.0, 0.0), (1.3, -0.4), (-2.0, 2.5), (3.0, 3.0)] {
            let indep = normal_cdf_2d(h, k, 0.0).unwrap();
            assert!((indep - norm_cdf(h) * norm_cdf(k)).abs() < TOL);
            let como = normal_cdf_2d(h, k, 1.0).unwrap();
            assert!((como - norm_cdf(f64::min(h, k))).abs() < TOL);
            let anti = normal_cdf_2d(h, k, -1.0).unwrap();
            assert!((anti - (norm_cdf(h) - norm_cdf(-k)).max(0.0)).abs() < TOL);
        }
        for &r in &[-0.99, -0.95, -0.5, 0.3, 0.5, 0.93, 0.999] {
            let v = normal_cdf_2d(0.0, 0.0, r).unwrap();
            let exact = 0.25 + r.asin() / TWO_PI;
            assert!((v - exact).abs() < 1e-12, "rho {r}: {v} vs {exact}");
        }
    }

    #[test]
    fn bivariate_is_symmetric_and_consistent_across_branches() {
        // continuity across the |rho| = 0.925 switch
        let a = normal_cdf_2d(0.7, -0.3, 0.924_999_999).unwrap();
        let b = normal_cdf_2d(0.7, -0.3, 0.925_000_001).unwrap();
        assert!((a - b).abs() < 1e-9);
        let a = normal_cdf_2d(0.7, 1.3, -0.924_999_999).unwrap();
        let b = normal_cdf_2d(0.7, 1.3, -0.925_000_001).unwrap();
        assert!((a - b).abs() < 1e-9);
        assert_eq!(normal_cdf_2d(0.2, 1.1, 0.6).unwrap(), normal_cdf_2d(1.1, 0.2, 0.6).unwrap());
    }

    #[test]
    fn trivariate_closed_forms() {
        let orth = |a: f64, b: f64, c: f64| 0.125 + (a.asin() + b.asin() + c.asin()) / (4.0 * PI);
        for &(a, b, c) in &[(0.5, 0.5, 0.5), (0.9, 0.8, 0.75), (0.2, -0.3, 0.1), (0.97, 0.9, 0.95)] {
            let v = normal_cdf_3d(0.0, 0.0, 0.0, a, b, c).unwrap();
            assert!((v - orth(a, b, c)).abs() < TOL, "{v} vs {}", orth(a, b, c));
        }
        let v = normal_cdf_3d(0.4, -1.0, 1.5, 0.0, 0.0, 0.0).unwrap();
        assert!((v - norm_cdf(0.4) * norm_cdf(-1.0) * norm_cdf(1.5)).abs() < TOL);
        let v = normal_cdf_3d(0.4, -1.0, 1.5, 0.6, 0.0, 0.0).unwrap();
        let exact = normal_cdf_2d(0.4, -1.0, 0.6).unwrap() * norm_cdf(1.5);
        assert!((v - exact).abs() < TOL);
        // comonotone pair
        let v = normal_cdf_3d(0.4, -0.2, 1.0, 1.0, 0.3, 0.3).unwrap();
        assert!((v - normal_cdf_2d(-0.2, 1.0, 0.3).unwrap()).abs() < TOL);
        // anti-monotone pair: -0.3 <= X1 <= 0.5 with X3 free
        let v = normal_cdf_3d(0.5, 0.3, 9.0, -1.0, 0.0, 0.0).unwrap();
        assert!((v - (norm_cdf(0.5) - norm_cdf(-0.3))).abs() < TOL);
    }

    #[test]
    fn trivariate_rejects_non_psd() {
        assert!(matches!(normal_cdf_3d(0.0, 0.0, 0.0, 0.9, 0.9, -0.9), Err(Error::NotPsd)));
        assert!(matches!(normal_cdf_2d(0.0, 0.0, 1.5), Err(Error::NotPsd)));
    }

    #[test]
    fn trivariate_infinite_limits() {
        let v = normal_cdf_3d(f64::INFINITY, 0.3, -0.2, 0.5, 0.5, 0.4).unwrap();
        assert!((v - normal_cdf_2d(0.3, -0.2, 0.4).unwrap()).abs() < 1e-15);
        assert_eq!(normal_cdf_3d(f64::NEG_INFINITY, 0.3, -0.2, 0.5, 0.5, 0.4).unwrap(), 0.0);
    }
}
