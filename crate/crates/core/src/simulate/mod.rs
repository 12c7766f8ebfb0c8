//! Synthetic cubes with known ground truth, baseline detectors and scoring.
//!
//! A scene is kept as two convolved parts, noise and unit-scale signal, so
//! that the same noise can be re-used at several signal-to-noise ratios: the
//! spatial kernel is linear, so `K(noise + c s) = K noise + c K s`.

pub mod experiments;
pub mod glr;

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use crate::config::Config;
use crate::cube::{Cube, Rect};
use crate::dictionary::{build_lss, shifted_atom, Dictionary, GaussianLine, ReferenceAtom, ShiftMode};
use crate::error::{Error, Result};
use crate::fdr::DetectionResult;
use crate::kernel::Kernel2d;
use crate::nullmodel::{empirical_pvalues, NullModel};
use crate::similarity::SimilarityKind;
use crate::teststat::TestField;

pub use glr::{estimate_band_variance, estimate_residual_variance, glr_field, glr_statistic, GlrCalibration};

/// Random stream for replicate `index` of an experiment seeded with `seed`.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseModel {
    Gaussian { sigma: f64 },
    /// Unit-scale Student t with `nu` degrees of freedom.
    Student { nu: f64 },
}

impl NoiseModel {
    /// Marginal variance of one noise entry.
    pub fn variance(&self) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma } => sigma * sigma,
            NoiseModel::Student { nu } => nu / (nu - 2.0),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Gaussian { sigma } if !(sigma > 0.0) => Err(Error::invalid("noise sigma must be positive")),
            NoiseModel::Student { nu } if !(nu > 2.0) => {
                Err(Error::invalid("Student noise needs nu > 2 for a finite variance"))
            }
            _ => Ok(()),
        }
    }

    pub fn fill(&self, rng: &mut impl Rng, out: &mut [f64]) {
        match *self {
            NoiseModel::Gaussian { sigma } => {
                for v in out {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = sigma * z;
                }
            }
            NoiseModel::Student { nu } => {
                let t = StudentT::new(nu).expect("validated degrees of freedom");
                for v in out {
                    *v = t.sample(rng);
                }
            }
        }
    }
}

impl FromStr for NoiseModel {
    type Err = Error;

    /// `gaussian[:sigma]` or `student:<nu>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let num = |a: Option<&str>, default: Option<f64>| -> Result<f64> {
            match a {
                Some(v) => v.parse().map_err(|_| Error::invalid(format!("bad noise parameter '{v}'"))),
                None => default.ok_or_else(|| Error::invalid(format!("noise '{s}' needs a parameter"))),
            }
        };
        let model = match kind {
            "gaussian" | "normal" => NoiseModel::Gaussian { sigma: num(arg, Some(1.0))? },
            "student" => NoiseModel::Student { nu: num(arg, None)? },
            _ => return Err(Error::invalid(format!("unknown noise model '{s}'"))),
        };
        model.validate()?;
        Ok(model)
    }
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseModel::Gaussian { sigma } => write!(f, "gaussian:{sigma}"),
            NoiseModel::Student { nu } => write!(f, "student:{nu}"),
        }
    }
}

/// Gaussian emission line and the LSS grid built from it.
#[derive(Clone, Debug, PartialEq)]
pub struct DictSpec {
    pub fwhm: f64,
    pub half_support: Option<f64>,
    pub m: usize,
    pub tau: f64,
    pub continuous: bool,
}

impl Default for DictSpec {
    fn default() -> Self {
        Self {
            fwhm: 5.0,
            half_support: Some(6.0),
            m: 15,
            tau: 7.0,
            continuous: true,
        }
    }
}

impl DictSpec {
    fn profile(&self, l: usize) -> GaussianLine {
        GaussianLine::from_fwhm(((l - 1) / 2) as f64, self.fwhm, self.half_support)
    }

    fn mode(&self, l: usize) -> ShiftMode {
        if self.continuous {
            ShiftMode::continuous(self.profile(l))
        } else {
            ShiftMode::IntegerBand
        }
    }

    pub fn reference(&self, l: usize) -> Result<ReferenceAtom<f64>> {
        ReferenceAtom::sampled(&self.profile(l), l, (l - 1) / 2)
    }

    pub fn build(&self, l: usize) -> Result<Dictionary<f64>> {
        let tau = if self.m == 1 { 0.0 } else { self.tau };
        build_lss(&self.reference(l)?, self.m, tau, &self.mode(l))
    }
}

/// Which line shift an alternative pixel receives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShiftDraw {
    /// Always dictionary atom `k`.
    Fixed(usize),
    /// A dictionary atom drawn uniformly.
    UniformAtom,
    /// A shift drawn uniformly in `[-tau, tau]`, generally off the grid.
    UniformContinuous,
}

impl FromStr for ShiftDraw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "atom" => Ok(ShiftDraw::UniformAtom),
            "uniform" => Ok(ShiftDraw::UniformContinuous),
            "center" => Ok(ShiftDraw::Fixed(usize::MAX)),
            other => match other.strip_prefix("fixed:") {
                Some(k) => k
                    .parse()
                    .map(ShiftDraw::Fixed)
                    .map_err(|_| Error::invalid(format!("bad shift draw '{other}'"))),
                None => Err(Error::invalid(format!("unknown shift draw '{other}'"))),
            },
        }
    }
}

/// Spatial arrangement of the alternative pixels inside the source region.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Distinct pixels drawn uniformly at random.
    Scattered,
    /// The pixels closest to the region centre (row-major tie-break).
    Blob,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "scattered" => Ok(Layout::Scattered),
            "blob" => Ok(Layout::Blob),
            other => Err(Error::invalid(format!("unknown layout '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub ny: usize,
    pub nx: usize,
    pub l: usize,
    pub noise: NoiseModel,
    /// Spatial kernel, rescaled to unit energy before use.
    pub spatial_kernel: Option<Kernel2d>,
    /// Null proportion inside `region`.
    pub pi0: f64,
    /// Overrides the count derived from `pi0`.
    pub n_sources: Option<usize>,
    pub amplitude_range: (f64, f64),
    pub dict: DictSpec,
    pub shift: ShiftDraw,
    pub layout: Layout,
    /// Where sources live and which pixels are tested; whole grid if `None`.
    pub region: Option<Rect>,
    pub seed: u64,
}

impl Default for SimConfig {
    /// The 2500-pixel Student-noise setting used to study the null estimators.
    fn default() -> Self {
        Self {
            ny: 50,
            nx: 50,
            l: 30,
            noise: NoiseModel::Student { nu: 5.0 },
            spatial_kernel: None,
            pi0: 0.81,
            n_sources: None,
            amplitude_range: (0.1, 3.0),
            dict: DictSpec::default(),
            shift: ShiftDraw::Fixed(usize::MAX),
            layout: Layout::Scattered,
            region: None,
            seed: 0,
        }
    }
}

pub const SIM_CONFIG_KEYS: &[&str] = &[
    "ny", "nx", "l", "noise", "kernel", "pi0", "n_sources", "amp_min", "amp_max", "m", "tau", "fwhm",
    "half_support", "shift_mode", "shift", "layout", "region", "seed",
];

impl SimConfig {
    /// Read the simulation keys of a flat config; missing keys keep defaults.
    pub fn from_config(c: &Config) -> Result<Self> {
        let d = SimConfig::default();
        let mut cfg = SimConfig {
            ny: c.get_or("ny", d.ny)?,
            nx: c.get_or("nx", d.nx)?,
            l: c.get_or("l", d.l)?,
            noise: c.get_or("noise", d.noise)?,
            spatial_kernel: match c.raw("kernel") {
                None => None,
                Some(k) => Some(Kernel2d::parse(k)?),
            },
            pi0: c.get_or("pi0", d.pi0)?,
            n_sources: c.get("n_sources")?,
            amplitude_range: (c.get_or("amp_min", d.amplitude_range.0)?, c.get_or("amp_max", d.amplitude_range.1)?),
            dict: DictSpec {
                fwhm: c.get_or("fwhm", d.dict.fwhm)?,
                half_support: match c.raw("half_support") {
                    Some("none") => None,
                    Some(_) => c.get("half_support")?,
                    None => d.dict.half_support,
                },
                m: c.get_or("m", d.dict.m)?,
                tau: c.get_or("tau", d.dict.tau)?,
                continuous: match c.raw("shift_mode") {
                    None | Some("continuous") => true,
                    Some("integer") => false,
                    Some(o) => return Err(Error::invalid(format!("unknown shift_mode '{o}'"))),
                },
            },
            shift: c.get_or("shift", d.shift)?,
            layout: c.get_or("layout", d.layout)?,
            region: None,
            seed: c.get_or("seed", d.seed)?,
        };
        if let Some(r) = c.raw("region") {
            cfg.region = Some(parse_region(r, cfg.ny, cfg.nx)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ny == 0 || self.nx == 0 || self.l < 2 {
            return Err(Error::invalid("simulation grid must be non-empty with at least two bands"));
        }
        self.noise.validate()?;
        if !(self.pi0 > 0.0 && self.pi0 <= 1.0) {
            return Err(Error::invalid("pi0 must lie in (0, 1]"));
        }
        let (a, b) = self.amplitude_range;
        if !(a.is_finite() && b.is_finite() && a <= b) {
            return Err(Error::invalid("amplitude range must be finite with min <= max"));
        }
        if let Some(r) = &self.region {
            if !r.fits(self.ny, self.nx) {
                return Err(Error::invalid("source region exceeds the grid"));
            }
        }
        if let Some(n) = self.n_sources {
            if n > self.test_region().n_pixels() {
                return Err(Error::invalid("more sources than pixels in the region"));
            }
        }
        if let ShiftDraw::Fixed(k) = self.shift {
            if k != usize::MAX && k >= self.dict.m {
                return Err(Error::invalid("fixed atom index out of range"));
            }
        }
        Ok(())
    }

    pub fn test_region(&self) -> Rect {
        self.region.unwrap_or(Rect::full(self.ny, self.nx))
    }

    /// Number of alternative pixels placed before convolution.
    pub fn source_count(&self) -> usize {
        self.n_sources
            .unwrap_or_else(|| ((1.0 - self.pi0) * self.test_region().n_pixels() as f64).round() as usize)
    }

    /// Signal-to-noise ratio of a signal of energy `energy` over the tested pixels.
    pub fn snr(&self, energy: f64) -> f64 {
        snr_db(energy, self.test_region().n_pixels(), self.l, self.noise.variance())
    }

    /// Energy giving `snr` decibels.
    pub fn energy_for_snr(&self, snr: f64) -> f64 {
        (self.test_region().n_pixels() * self.l) as f64 * self.noise.variance() * 10f64.powf(snr / 10.0)
    }
}

/// `size` or `y0,x0,ny,nx`; a bare size is a centred square.
pub fn parse_region(s: &str, ny: usize, nx: usize) -> Result<Rect> {
    let nums: Vec<usize> = s
        .split(',')
        .map(|v| v.trim().parse().map_err(|_| Error::invalid(format!("bad region '{s}'"))))
        .collect::<Result<_>>()?;
    let r = match nums.as_slice() {
        [size] => Rect::centered(ny, nx, *size)?,
        [y0, x0, h, w] => Rect::new(*y0, *x0, *h, *w),
        _ => return Err(Error::invalid(format!("bad region '{s}'"))),
    };
    if !r.fits(ny, nx) {
        return Err(Error::invalid(format!("region '{s}' exceeds {ny}x{nx}")));
    }
    Ok(r)
}

/// `10 log10(A / (n l sigma^2))`.
pub fn snr_db(energy: f64, n: usize, l: usize, variance: f64) -> f64 {
    10.0 * (energy / (n as f64 * l as f64 * variance)).log10()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub ny: usize,
    pub nx: usize,
    /// Pixels carrying signal after spatial convolution.
    pub h1_mask: Vec<bool>,
    /// Pixels where a source was injected (before convolution).
    pub sources: Vec<bool>,
    /// Injected amplitude per pixel, 0 off-source.
    pub amplitudes: Vec<f64>,
    /// Injected line shift per pixel, NaN off-source.
    pub true_shifts: Vec<f64>,
}

impl GroundTruth {
    pub fn n_h1(&self) -> usize {
        self.h1_mask.iter().filter(|v| **v).count()
    }

    pub fn region_mask(&self, rect: &Rect) -> Vec<bool> {
        rect.indices(self.nx).into_iter().map(|i| self.h1_mask[i]).collect()
    }
}

/// Convolved noise and unit-scale convolved signal of one replicate.
#[derive(Clone, Debug)]
pub struct Scene {
    pub noise: Cube<f64>,
    pub signal: Cube<f64>,
    pub truth: GroundTruth,
    /// `||signal||^2`.
    pub signal_energy: f64,
    /// Pixels with non-zero signal, ascending.
    pub support: Vec<usize>,
}

impl Scene {
    /// `noise + scale * signal`.
    pub fn observation(&self, scale: f64) -> Cube<f64> {
        let mut out = self.noise.clone();
        self.add_signal(&mut out, scale);
        out
    }

    /// Overwrite the support pixels of `cube` with `noise + scale * signal`.
    pub fn add_signal(&self, cube: &mut Cube<f64>, scale: f64) {
        for &p in &self.support {
            let n = self.noise.spectrum(p);
            let s = self.signal.spectrum(p);
            for ((o, a), b) in cube.spectrum_mut(p).iter_mut().zip(n).zip(s) {
                *o = a + scale * b;
            }
        }
    }

    /// Scale that gives the signal `snr` decibels under `cfg`.
    pub fn scale_for_snr(&self, cfg: &SimConfig, snr: f64) -> Result<f64> {
        if !(self.signal_energy > 0.0) {
            return Err(Error::invalid("scene has no signal to scale"));
        }
        Ok((cfg.energy_for_snr(snr) / self.signal_energy).sqrt())
    }
}

fn source_pixels(cfg: &SimConfig, rng: &mut impl Rng) -> Vec<usize> {
    let region = cfg.test_region();
    let cells = region.indices(cfg.nx);
    let count = cfg.source_count();
    match cfg.layout {
        Layout::Scattered => {
            let mut picked: Vec<usize> = sample(rng, cells.len(), count).into_iter().map(|i| cells[i]).collect();
            picked.sort_unstable();
            picked
        }
        Layout::Blob => {
            let cy = region.y0 as f64 + (region.ny as f64 - 1.0) / 2.0;
            let cx = region.x0 as f64 + (region.nx as f64 - 1.0) / 2.0;
            let mut order: Vec<(f64, usize)> = cells
                .iter()
                .map(|&p| {
                    let (y, x) = ((p / cfg.nx) as f64, (p % cfg.nx) as f64);
                    ((y - cy).powi(2) + (x - cx).powi(2), p)
                })
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut picked: Vec<usize> = order.into_iter().take(count).map(|(_, p)| p).collect();
            picked.sort_unstable();
            picked
        }
    }
}

/// Draw one replicate. Identical configs and generators give identical scenes.
pub fn generate_scene(cfg: &SimConfig, rng: &mut impl Rng) -> Result<Scene> {
    cfg.validate()?;
    let (ny, nx, l) = (cfg.ny, cfg.nx, cfg.l);
    let n = ny * nx;
    let dict = cfg.dict.build(l)?;
    let reference = cfg.dict.reference(l)?;
    let mode = cfg.dict.mode(l);

    let sources = source_pixels(cfg, rng);
    let mut truth = GroundTruth {
        ny,
        nx,
        h1_mask: vec![false; n],
        sources: vec![false; n],
        amplitudes: vec![0.0; n],
        true_shifts: vec![f64::NAN; n],
    };
    // Both parts live on a grid padded by the kernel half-width; a valid
    // convolution then gives stationary noise up to the border.
    let kernel = match &cfg.spatial_kernel {
        Some(k) => Some(k.unit_energy()?),
        None => None,
    };
    let h = kernel.as_ref().map_or(0, |k| k.size() / 2);
    let (pny, pnx) = (ny + 2 * h, nx + 2 * h);
    let mut signal = Cube::zeros(pny, pnx, l)?;
    let (a_lo, a_hi) = cfg.amplitude_range;
    for &p in &sources {
        let a = if a_hi > a_lo { rng.random_range(a_lo..=a_hi) } else { a_lo };
        let (shift, atom): (f64, Vec<f64>) = match cfg.shift {
            ShiftDraw::Fixed(k) => {
                let k = if k == usize::MAX { dict.m() / 2 } else { k };
                (dict.shifts()[k], dict.atom(k).to_vec())
            }
            ShiftDraw::UniformAtom => {
                let k = rng.random_range(0..dict.m());
                (dict.shifts()[k], dict.atom(k).to_vec())
            }
            ShiftDraw::UniformContinuous => {
                let u = if dict.tau() > 0.0 { rng.random_range(-dict.tau()..=dict.tau()) } else { 0.0 };
                (u, shifted_atom(&reference, u, &mode)?)
            }
        };
        truth.sources[p] = true;
        truth.amplitudes[p] = a;
        truth.true_shifts[p] = shift;
        let pp = (p / nx + h) * pnx + p % nx + h;
        for (o, v) in signal.spectrum_mut(pp).iter_mut().zip(&atom) {
            *o = a * v;
        }
    }

    let mut noise = Cube::zeros(pny, pnx, l)?;
    cfg.noise.fill(rng, noise.data_mut());

    if let Some(k) = &kernel {
        noise = k.apply_valid_cube(&noise)?;
        signal = k.apply_valid_cube(&signal)?;
    }
    let support: Vec<usize> = (0..n).filter(|&p| signal.spectrum(p).iter().any(|v| *v != 0.0)).collect();
    for &p in &support {
        truth.h1_mask[p] = true;
    }
    let signal_energy = crate::scalar::compensated_sum(signal.data().iter().map(|v| v * v));
    Ok(Scene {
        noise,
        signal,
        truth,
        signal_energy,
        support,
    })
}

/// Cube and truth for `cfg`, seeded from `cfg.seed`.
pub fn generate(cfg: &SimConfig) -> Result<(Cube<f64>, GroundTruth)> {
    let scene = generate_scene(cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    Ok((scene.observation(1.0), scene.truth))
}

/// Per-pixel `p < eta` with no multiplicity correction; `eta >= 1` keeps
/// every tested pixel.
pub fn pfa_threshold_detect(field: &TestField<f64>, model: &NullModel<f64>, eta: f64) -> Result<Vec<bool>> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::invalid("PFA level must lie in (0, 1]"));
    }
    let p = empirical_pvalues(model, field);
    Ok(p
        .iter()
        .zip(&field.tested)
        .map(|(p, t)| *t && (*p < eta || eta >= 1.0))
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub detections: usize,
    pub false_detections: usize,
    pub true_detections: usize,
    /// `U / max(R, 1)`.
    pub fdp: f64,
    /// True detections over alternative pixels (0 when there are none).
    pub power: f64,
}

/// Score a detection map against the alternative mask of the same pixels.
pub fn score(detected: &[bool], h1: &[bool]) -> Result<Metrics> {
    if detected.len() != h1.len() {
        return Err(Error::DimensionMismatch("detection map and truth differ in size".into()));
    }
    let r = detected.iter().filter(|d| **d).count();
    let tp = detected.iter().zip(h1).filter(|(d, h)| **d && **h).count();
    let n1 = h1.iter().filter(|h| **h).count();
    let u = r - tp;
    Ok(Metrics {
        detections: r,
        false_detections: u,
        true_detections: tp,
        fdp: u as f64 / r.max(1) as f64,
        power: if n1 == 0 { 0.0 } else { tp as f64 / n1 as f64 },
    })
}

pub fn score_result(result: &DetectionResult<f64>, h1: &[bool]) -> Result<Metrics> {
    score(&result.detected, h1)
}

/// Tmax of `runs` pure-noise spectra: a Monte-Carlo sample of the null
/// distribution of the max statistic, sorted ascending.
pub fn monte_carlo_null(
    noise: NoiseModel,
    dict: &Dictionary<f64>,
    kind: SimilarityKind,
    runs: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let l = dict.atom_len();
    let norms: Vec<f64> = dict.atoms().map(crate::scalar::norm).collect();
    let mut y = vec![0.0; l];
    let mut out: Vec<f64> = (0..runs)
        .map(|_| {
            noise.fill(rng, &mut y);
            crate::teststat::pixel_stats(&y, dict, &norms, kind).0
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SimConfig {
        SimConfig {
            ny: 12,
            nx: 10,
            seed,
            ..SimConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, ta) = generate(&small(7)).unwrap();
        let (b, tb) = generate(&small(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.h1_mask, tb.h1_mask);
        assert_eq!(ta.amplitudes, tb.amplitudes);
        assert_eq!(format!("{:?}", ta.true_shifts), format!("{:?}", tb.true_shifts));
        let (c, _) = generate(&small(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn source_count_follows_pi0() {
        let cfg = small(1);
        let (_, t) = generate(&cfg).unwrap();
        assert_eq!(t.n_h1(), (0.19f64 * 120.0).round() as usize);
        assert!(t.amplitudes.iter().all(|a| *a == 0.0 || (0.1..=3.0).contains(a)));
    }

    #[test]
    fn pure_noise_has_centred_bands() {
        let cfg = SimConfig {
            ny: 60,
            nx: 60,
            pi0: 1.0,
            noise: NoiseModel::Gaussian { sigma: 2.0 },
            ..SimConfig::default()
        };
        let (cube, truth) = generate(&cfg).unwrap();
        assert_eq!(truth.n_h1(), 0);
        let n = 3600.0;
        for b in 0..cfg.l {
            let mean: f64 = cube.band_image(b).iter().sum::<f64>() / n;
            assert!(mean.abs() < 4.0 * 2.0 / n.sqrt());
        }
    }

    #[test]
    fn kernel_preserves_noise_variance_and_spreads_support() {
        let cfg = SimConfig {
            ny: 80,
            nx: 80,
            l: 30,
            pi0: 1.0,
            noise: NoiseModel::Gaussian { sigma: 1.0 },
            spatial_kernel: Some(Kernel2d::uniform(3).unwrap()),
            ..SimConfig::default()
        };
        let (cube, _) = generate(&cfg).unwrap();
        let var = cube.data().iter().map(|v| v * v).sum::<f64>() / cube.data().len() as f64;
        assert!((var - 1.0).abs() < 0.01, "{var}");
        let edge = cube.spectrum(0).iter().chain(cube.spectrum(79)).map(|v| v * v).sum::<f64>() / 60.0;
        assert!(edge < 2.0);

        let one = SimConfig {
            ny: 9,
            nx: 9,
            n_sources: Some(1),
            layout: Layout::Blob,
            spatial_kernel: Some(Kernel2d::uniform(3).unwrap()),
            ..SimConfig::default()
        };
        let (_, t) = generate(&one).unwrap();
        assert_eq!(t.sources.iter().filter(|s| **s).count(), 1);
        assert!(t.sources[4 * 9 + 4]);
        assert_eq!(t.n_h1(), 9);
    }

    #[test]
    fn snr_formula() {
        assert_eq!(snr_db(30.0 * 100.0 * 2.0, 100, 30, 2.0), 0.0);
        assert!((snr_db(2.0, 1, 1, 1.0) - 10.0 * 2f64.log10()).abs() < 1e-15);
        let cfg = SimConfig::default();
        let e = cfg.energy_for_snr(-13.0);
        assert!((cfg.snr(e) + 13.0).abs() < 1e-12);
    }

    #[test]
    fn scores() {
        let h1 = [true, true, false, false];
        let perfect = score(&h1, &h1).unwrap();
        assert_eq!((perfect.fdp, perfect.power), (0.0, 1.0));
        let none = score(&[false; 4], &h1).unwrap();
        assert_eq!((none.fdp, none.power), (0.0, 0.0));
        let m = score(&[true, false, true, true], &h1).unwrap();
        assert_eq!(m.false_detections, 2);
        assert!((m.fdp - 2.0 / 3.0).abs() < 1e-15);
        assert!(score(&[true], &h1).is_err());
    }

    #[test]
    fn pfa_detector_edges() {
        let f = TestField::from_stats(vec![1.0, 2.0, 3.0, 4.0], vec![-4.0, -3.0, -2.0, -1.0]).unwrap();
        let m = crate::nullmodel::fit_null(&f).unwrap();
        assert!(pfa_threshold_detect(&f, &m, 1.0).unwrap().iter().all(|d| *d));
        assert!(pfa_threshold_detect(&f, &m, 0.0).is_err());
    }

    #[test]
    fn config_round_trip_from_keys() {
        let c = Config::parse("ny=20\nnx=30\nnoise=gaussian:2\nkernel=uniform:3\nregion=10\nlayout=blob\nshift=fixed:3\n")
            .unwrap();
        let s = SimConfig::from_config(&c).unwrap();
        assert_eq!(s.region, Some(Rect::new(5, 10, 10, 10)));
        assert_eq!(s.noise, NoiseModel::Gaussian { sigma: 2.0 });
        assert_eq!(s.shift, ShiftDraw::Fixed(3));
        assert!("student:2".parse::<NoiseModel>().is_err());
    }
}
