//! Monte-Carlo harnesses: null-estimator fidelity, FDR versus SNR, the
//! PFA/FDR comparison on source fields, and the GLR comparison.
//!
//! Replicate `r` draws from `replicate_rng(seed, r)`, so results do not
//! depend on scheduling; averages use compensated summation.

use rayon::prelude::*;

use super::{generate_scene, monte_carlo_null, pfa_threshold_detect, replicate_rng, score, Metrics, SimConfig};
use super::glr::{estimate_residual_variance, glr_field, GlrCalibration};
use crate::cube::Rect;
use crate::error::{Error, Result};
use crate::fdr::{bh_reject, detect_pvalues};
use crate::nullmodel::{empirical_pvalues, fit_null, NullModel};
use crate::scalar::compensated_sum;
use crate::similarity::SimilarityKind;
use crate::teststat::{compute_field, recompute_pixels, TestField};

/// Stream reserved for Monte-Carlo oracles, far from replicate indices.
const ORACLE_STREAM: u64 = 1 << 48;

fn mean(v: impl IntoIterator<Item = f64>) -> (f64, f64, usize) {
    let v: Vec<f64> = v.into_iter().collect();
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let m = compensated_sum(v.iter().copied()) / n as f64;
    let se = if n > 1 {
        (compensated_sum(v.iter().map(|x| (x - m) * (x - m))) / (n - 1) as f64 / n as f64).sqrt()
    } else {
        f64::NAN
    };
    (m, se, n)
}

/// Inverse empirical CDF, `min{x : F(x) >= p}`, of a sorted sample.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let k = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Kolmogorov distance between the empirical CDFs of two sorted samples.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let cdf = |s: &[f64], t: f64| s.partition_point(|v| *v <= t) as f64 / s.len() as f64;
    a.iter()
        .chain(b)
        .map(|&t| (cdf(a, t) - cdf(b, t)).abs())
        .fold(0.0, f64::max)
}

/// Largest quantile gap between two sorted samples over probabilities
/// `lo..=hi` on a grid of `points`.
pub fn qq_max_deviation(a: &[f64], b: &[f64], lo: f64, hi: f64, points: usize) -> f64 {
    (0..points)
        .map(|i| {
            let p = lo + (hi - lo) * i as f64 / (points - 1).max(1) as f64;
            (quantile(a, p) - quantile(b, p)).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct NullFidelityConfig {
    pub sim: SimConfig,
    pub kind: SimilarityKind,
    pub replicates: usize,
    pub mc_runs: usize,
}

#[derive(Clone, Debug)]
pub struct NullFidelityReport {
    pub pi0_hat: Vec<f64>,
    pub mean_pi0: f64,
    /// Per replicate, max quantile gap to the Monte-Carlo null over the
    /// central 99% of probabilities.
    pub qq_max_dev: Vec<f64>,
    pub ks: Vec<f64>,
    /// Per replicate, mean of Tmax minus mean of -Tmin.
    pub tail_excess: Vec<f64>,
}

/// Fit the null on independent replicates and compare it with a
/// Monte-Carlo sample of the true null of Tmax.
pub fn null_fidelity(cfg: &NullFidelityConfig) -> Result<NullFidelityReport> {
    if cfg.sim.spatial_kernel.is_some() {
        return Err(Error::invalid("the null-fidelity oracle assumes spatially independent pixels"));
    }
    let dict = cfg.sim.dict.build(cfg.sim.l)?;
    let oracle = monte_carlo_null(
        cfg.sim.noise,
        &dict,
        cfg.kind,
        cfg.mc_runs,
        &mut replicate_rng(cfg.sim.seed, ORACLE_STREAM),
    );
    let per: Vec<(f64, f64, f64, f64)> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let scene = generate_scene(&cfg.sim, &mut replicate_rng(cfg.sim.seed, r as u64))?;
            let cube = scene.observation(1.0);
            let field = compute_field(&cube, &dict, cfg.kind)?;
            let model = fit_null(&field)?;
            let qq = qq_max_deviation(model.samples(), &oracle, 0.005, 0.995, 199);
            let ks = ks_distance(model.samples(), &oracle);
            let n = field.n() as f64;
            let excess = field.tmax.iter().sum::<f64>() / n + field.tmin.iter().sum::<f64>() / n;
            Ok((model.pi0_hat, qq, ks, excess))
        })
        .collect::<Result<_>>()?;
    let pi0_hat: Vec<f64> = per.iter().map(|v| v.0).collect();
    Ok(NullFidelityReport {
        mean_pi0: mean(pi0_hat.iter().copied()).0,
        pi0_hat,
        qq_max_dev: per.iter().map(|v| v.1).collect(),
        ks: per.iter().map(|v| v.2).collect(),
        tail_excess: per.iter().map(|v| v.3).collect(),
    })
}

#[derive(Clone, Debug)]
pub struct FdrSweepConfig {
    /// Full simulated field; the null is fitted on all of it and
    /// `sim.region` is tested.
    pub sim: SimConfig,
    pub kind: SimilarityKind,
    pub snr_db: Vec<f64>,
    pub q: Vec<f64>,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub method: &'static str,
    pub snr_db: f64,
    pub q: f64,
    pub pi0_hat: f64,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRecord {
    pub method: &'static str,
    pub snr_db: f64,
    pub q: f64,
    pub runs: usize,
    pub fdr: f64,
    pub fdr_se: f64,
    pub power: f64,
    pub mean_detections: f64,
    pub mean_pi0_hat: f64,
}

/// Average run records per (method, SNR, q), in first-seen order.
pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRecord> {
    let mut keys: Vec<(&'static str, f64, f64)> = Vec::new();
    for r in records {
        let k = (r.method, r.snr_db, r.q);
        if !keys.iter().any(|x| x.0 == k.0 && x.1.to_bits() == k.1.to_bits() && x.2.to_bits() == k.2.to_bits()) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, snr, q)| {
            let sel: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.method == method && r.snr_db.to_bits() == snr.to_bits() && r.q.to_bits() == q.to_bits())
                .collect();
            let (fdr, fdr_se, runs) = mean(sel.iter().map(|r| r.metrics.fdp));
            AggregateRecord {
                method,
                snr_db: snr,
                q,
                runs,
                fdr,
                fdr_se,
                power: mean(sel.iter().map(|r| r.metrics.power)).0,
                mean_detections: mean(sel.iter().map(|r| r.metrics.detections as f64)).0,
                mean_pi0_hat: mean(sel.iter().map(|r| r.pi0_hat)).0,
            }
        })
        .collect()
}

fn region_test(field: &TestField<f64>, model: &NullModel<f64>, region: &Rect) -> Result<(Vec<f64>, Vec<bool>)> {
    let test = field.subfield(region)?;
    Ok((empirical_pvalues(model, &test), test.tested))
}

/// Empirical FDR of the proposed procedure versus SNR. Each run draws one
/// noise field and one source configuration and reuses them at every SNR.
pub fn fdr_sweep(cfg: &FdrSweepConfig) -> Result<Vec<RunRecord>> {
    let sim = &cfg.sim;
    let region = sim.test_region();
    let dict = sim.dict.build(sim.l)?;
    let runs: Vec<Vec<RunRecord>> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| -> Result<Vec<RunRecord>> {
            let scene = generate_scene(sim, &mut replicate_rng(sim.seed, run as u64))?;
            let h1 = scene.truth.region_mask(&region);
            let mut cube = scene.noise.clone();
            let mut field = compute_field(&cube, &dict, cfg.kind)?;
            let mut out = Vec::new();
            for &snr in &cfg.snr_db {
                scene.add_signal(&mut cube, scene.scale_for_snr(sim, snr)?);
                recompute_pixels(&mut field, &cube, &dict, cfg.kind, &scene.support)?;
                let model = fit_null(&field)?;
                let (p, tested) = region_test(&field, &model, &region)?;
                for &q in &cfg.q {
                    let res = detect_pvalues(&p, &tested, q, model.pi0_hat);
                    out.push(RunRecord {
                        run,
                        method: "proposed",
                        snr_db: snr,
                        q,
                        pi0_hat: model.pi0_hat,
                        metrics: score(&res.detected, &h1)?,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(runs.into_iter().flatten().collect())
}

#[derive(Clone, Debug)]
pub struct Table1Config {
    /// Full field with the source in `sim.region`; the null is fitted on
    /// the whole field and the region is tested.
    pub sim: SimConfig,
    pub kind: SimilarityKind,
    pub regions: usize,
    pub pfa: Vec<f64>,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table1Row {
    /// `noise-only` or `source`.
    pub field: &'static str,
    /// `pfa` or `fdr`.
    pub detector: &'static str,
    pub level: f64,
    pub false_detections: f64,
    pub true_detections: f64,
    /// Mean per-region false discovery proportion.
    pub fdp: f64,
    pub power: f64,
    pub per_region: Vec<Metrics>,
}

/// Per-pixel PFA thresholds against FDR control, on a noise-only and a
/// source field per region. Both fields of a region share the noise draw.
pub fn table1(cfg: &Table1Config) -> Result<Vec<Table1Row>> {
    let sim = &cfg.sim;
    let region = sim.test_region();
    let dict = sim.dict.build(sim.l)?;
    let per: Vec<Vec<Metrics>> = (0..cfg.regions)
        .into_par_iter()
        .map(|r| -> Result<Vec<Metrics>> {
            let scene = generate_scene(sim, &mut replicate_rng(sim.seed, r as u64))?;
            let mut out = Vec::new();
            for (scale, h1) in [
                (0.0, vec![false; region.n_pixels()]),
                (1.0, scene.truth.region_mask(&region)),
            ] {
                let cube = scene.observation(scale);
                let field = compute_field(&cube, &dict, cfg.kind)?;
                let model = fit_null(&field)?;
                let test = field.subfield(&region)?;
                for &eta in &cfg.pfa {
                    out.push(score(&pfa_threshold_detect(&test, &model, eta)?, &h1)?);
                }
                let (p, tested) = region_test(&field, &model, &region)?;
                out.push(score(&detect_pvalues(&p, &tested, cfg.q, model.pi0_hat).detected, &h1)?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let per_field = cfg.pfa.len() + 1;
    let mut rows = Vec::new();
    for (fi, field) in ["noise-only", "source"].into_iter().enumerate() {
        for d in 0..per_field {
            let col = fi * per_field + d;
            let m: Vec<Metrics> = per.iter().map(|v| v[col]).collect();
            let (detector, level) = if d < cfg.pfa.len() { ("pfa", cfg.pfa[d]) } else { ("fdr", cfg.q) };
            rows.push(Table1Row {
                field,
                detector,
                level,
                false_detections: mean(m.iter().map(|x| x.false_detections as f64)).0,
                true_detections: mean(m.iter().map(|x| x.true_detections as f64)).0,
                fdp: mean(m.iter().map(|x| x.fdp)).0,
                power: mean(m.iter().map(|x| x.power)).0,
                per_region: m,
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct GlrCompareConfig {
    pub sim: SimConfig,
    pub q: Vec<f64>,
    pub runs: usize,
    pub calibration_runs: usize,
}

/// Realized FDR and power of the proposed procedure (matched filter,
/// empirical null) and of BH on Gaussian-calibrated GLR p-values, on the
/// same cubes. The GLR covariance is estimated from the residuals of each
/// cube.
pub fn glr_compare(cfg: &GlrCompareConfig) -> Result<Vec<RunRecord>> {
    let sim = &cfg.sim;
    let region = sim.test_region();
    let dict = sim.dict.build(sim.l)?;
    let kind = SimilarityKind::MatchedFilter;
    let runs: Vec<Vec<RunRecord>> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| -> Result<Vec<RunRecord>> {
            let mut rng = replicate_rng(sim.seed, run as u64);
            let scene = generate_scene(sim, &mut rng)?;
            let cube = scene.observation(1.0);
            let h1 = scene.truth.region_mask(&region);
            let snr = sim.snr(scene.signal_energy);

            let field = compute_field(&cube, &dict, kind)?;
            let model = fit_null(&field)?;
            let (p, tested) = region_test(&field, &model, &region)?;

            let var = estimate_residual_variance(&cube, &dict)?;
            let cal = GlrCalibration::new(&dict, &var, cfg.calibration_runs, &mut rng)?;
            let glr = glr_field(&cube, &dict, &var)?;
            let glr_p: Vec<f64> = region
                .indices(sim.nx)
                .into_iter()
                .map(|i| if glr[i].is_nan() { 1.0 } else { cal.pvalue(glr[i]) })
                .collect();

            let mut out = Vec::new();
            for &q in &cfg.q {
                let ours = detect_pvalues(&p, &tested, q, model.pi0_hat);
                out.push(RunRecord {
                    run,
                    method: "proposed",
                    snr_db: snr,
                    q,
                    pi0_hat: model.pi0_hat,
                    metrics: score(&ours.detected, &h1)?,
                });
                out.push(RunRecord {
                    run,
                    method: "glr",
                    snr_db: snr,
                    q,
                    pi0_hat: 1.0,
                    metrics: score(&bh_reject(&glr_p, q).detected, &h1)?,
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    // SNR varies slightly between runs here; aggregate on (method, q).
    let mut flat: Vec<RunRecord> = runs.into_iter().flatten().collect();
    for r in &mut flat {
        r.snr_db = f64::NAN;
    }
    Ok(flat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_and_distances() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&a, 0.25), 1.0);
        assert_eq!(quantile(&a, 0.26), 2.0);
        assert_eq!(quantile(&a, 1.0), 4.0);
        assert_eq!(quantile(&a, 0.0), 1.0);
        assert_eq!(ks_distance(&a, &a), 0.0);
        assert_eq!(ks_distance(&[0.0], &[1.0]), 1.0);
        assert_eq!(qq_max_deviation(&a, &[2.0, 3.0, 4.0, 5.0], 0.1, 0.9, 5), 1.0);
    }

    #[test]
    fn aggregate_groups_and_averages() {
        let rec = |run, fdp| RunRecord {
            run,
            method: "proposed",
            snr_db: -10.0,
            q: 0.1,
            pi0_hat: 1.0,
            metrics: Metrics {
                fdp,
                ..Metrics::default()
            },
        };
        let agg = aggregate(&[rec(0, 0.2), rec(1, 0.0)]);
        assert_eq!(agg.len(), 1);
        assert!((agg[0].fdr - 0.1).abs() < 1e-15);
        assert_eq!(agg[0].runs, 2);
    }

    #[test]
    fn tiny_sweep_runs_and_is_deterministic() {
        let cfg = FdrSweepConfig {
            sim: SimConfig {
                ny: 30,
                nx: 30,
                region: Some(Rect::new(10, 10, 10, 10)),
                spatial_kernel: Some(crate::kernel::Kernel2d::uniform(3).unwrap()),
                layout: super::super::Layout::Blob,
                seed: 5,
                ..SimConfig::default()
            },
            kind: SimilarityKind::SpectralAngle,
            snr_db: vec![-15.0, -5.0],
            q: vec![0.1, 0.2],
            runs: 3,
        };
        let a = fdr_sweep(&cfg).unwrap();
        assert_eq!(a.len(), 3 * 2 * 2);
        assert_eq!(a, fdr_sweep(&cfg).unwrap());
        let agg = aggregate(&a);
        assert_eq!(agg.len(), 4);
        // stronger signal, more power
        assert!(agg[3].power >= agg[1].power);
    }
}
