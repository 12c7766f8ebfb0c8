use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use halo_core::config::Config;
use halo_core::dictionary::{build_lss, GaussianLine, ReferenceAtom, ShiftMode};
use halo_core::fdr::detect_with;
use halo_core::io::{self, CubeFormat};
use halo_core::kernel::Kernel2d;
use halo_core::pipeline::{self, DetectionMaps, DictParams, FsfKernel, PreprocessOptions, RegionSpec};
use halo_core::simulate::experiments::{aggregate, fdr_sweep, glr_compare, FdrSweepConfig, GlrCompareConfig, RunRecord};
use halo_core::simulate::{SimConfig, SIM_CONFIG_KEYS};
use halo_core::{
    compute_field, expected_max_gain, fit_null, threshold_for_pfa, threshold_orthogonal, Cube, DetectionResult,
    Pi0Method, Rect,
};

use crate::{Cli, Command, DetectArgs, GlrCompareArgs, NullFitArgs, PfaBoundArgs, PreprocessArgs, RegionArgs, SimulateArgs};

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => Config::default(),
    };
    match &cli.command {
        Command::Ingest(a) => {
            let cube = load(&a.input)?;
            let format = if a.csv { CubeFormat::CsvDir } else { CubeFormat::Binary };
            io::save_cube(&cube, &a.output, format)?;
            let (ny, nx, l) = cube.dims();
            let masked = cube.mask().iter().filter(|m| **m).count();
            println!(
                "{ny}x{nx}x{l} cube, {masked} masked pixels, variance {}, band origin {}",
                if cube.variance().is_some() { "present" } else { "absent" },
                cube.band_origin
            );
            Ok(())
        }
        Command::Preprocess(a) => preprocess(a, &cfg),
        Command::NullFit(a) => null_fit(cli, a, &cfg),
        Command::Detect(a) => detect(cli, a, &cfg),
        Command::Simulate(a) => simulate(cli, a, &cfg),
        Command::PfaBound(a) => pfa_bound(a),
        Command::GlrCompare(a) => glr(cli, a, &cfg),
    }
}

fn load(path: &Path) -> Result<Cube<f64>> {
    io::load_cube(path, CubeFormat::detect(path)).with_context(|| format!("loading {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Flag value, else config key, else default.
fn pick<T: std::str::FromStr>(flag: Option<T>, cfg: &Config, key: &str, default: T) -> Result<T> {
    match flag {
        Some(v) => Ok(v),
        None => Ok(cfg.get_or(key, default)?),
    }
}

fn preprocess(a: &PreprocessArgs, cfg: &Config) -> Result<()> {
    let cube = load(&a.input)?;
    let use_variance = match a.variance.as_str() {
        "auto" => cube.variance().is_some(),
        "on" => true,
        "off" => false,
        o => bail!(halo_core::Error::InvalidInput(format!("--variance must be auto, on or off, not '{o}'"))),
    };
    let fsf = match a.fsf.clone().or_else(|| cfg.raw("fsf").map(str::to_string)) {
        Some(s) => Some(FsfKernel::new(Kernel2d::parse(&s)?)?),
        None => None,
    };
    let opts = PreprocessOptions {
        baseline_window: match a.baseline {
            Some(w) => Some(w),
            None => cfg.get("baseline")?,
        },
        use_variance,
        fsf,
    };
    let out = pipeline::preprocess(&cube, &opts)?;
    io::save_cube(&out, &a.output, CubeFormat::Binary)?;
    Ok(())
}

fn region_spec(r: &RegionArgs, cube: &Cube<f64>, cfg: &Config) -> Result<RegionSpec> {
    let center = r.center.clone().or_else(|| cfg.raw("center").map(str::to_string));
    let (y, x, b) = match center {
        Some(s) => {
            let parts: Vec<&str> = s.split(',').map(str::trim).collect();
            let bad = || halo_core::Error::InvalidInput(format!("--center expects y,x,band, got '{s}'"));
            if parts.len() != 3 {
                bail!(bad());
            }
            (
                parts[0].parse::<usize>().map_err(|_| bad())?,
                parts[1].parse::<usize>().map_err(|_| bad())?,
                parts[2].parse::<i64>().map_err(|_| bad())?,
            )
        }
        None => (cube.ny() / 2, cube.nx() / 2, cube.band_origin + (cube.bands() / 2) as i64),
    };
    let d = RegionSpec::new(y, x, b);
    Ok(RegionSpec {
        half_width: pick(r.half_width, cfg, "half_width", d.half_width)?,
        half_bands: pick(r.half_bands, cfg, "half_bands", d.half_bands)?,
        fit_half_width: pick(r.fit_half_width, cfg, "fit_half_width", d.fit_half_width)?,
        ..d
    })
}

fn dict_params(r: &RegionArgs, cfg: &Config) -> Result<DictParams> {
    let d = DictParams::default();
    let reference = match &r.reference {
        Some(p) => {
            let v = io::read_reference_values(p)?;
            let centre = v.len() / 2;
            Some(ReferenceAtom::new(v, centre)?)
        }
        None => None,
    };
    Ok(DictParams {
        m: pick(r.m, cfg, "m", d.m)?,
        tau: pick(r.tau, cfg, "tau", d.tau)?,
        n_center_pixels: pick(r.n_center, cfg, "n_center", d.n_center_pixels)?,
        reference,
        mode: d.mode,
    })
}

fn null_fit(cli: &Cli, a: &NullFitArgs, cfg: &Config) -> Result<()> {
    let cube = load(&a.input)?;
    let region = region_spec(&a.region, &cube, cfg)?;
    let params = dict_params(&a.region, cfg)?;
    let (test, fit, b0, len) = region.validate(&cube)?;
    let (reference, pixels) = match &params.reference {
        Some(r) => (r.clone(), Vec::new()),
        None => {
            let e = pipeline::estimate_reference(&cube, &region, params.n_center_pixels)?;
            (e.reference, e.pixels)
        }
    };
    let dict = build_lss(&reference, params.m, params.tau, &params.mode)?;
    let sub = cube.subcube(fit.y0, fit.x0, b0, fit.ny, fit.nx, len)?;
    let field = compute_field(&sub, &dict, cli.similarity)?;
    let model = fit_null(&field)?;
    let inner = Rect::new(test.y0 - fit.y0, test.x0 - fit.x0, test.ny, test.nx);
    create_dir(&a.out)?;
    io::write_null_model(&model, &a.out.join("null_model.csv"))?;
    io::write_test_field(&field.subfield(&inner)?, &a.out.join("field.csv"))?;
    io::write_dictionary(&dict, &a.out.join("dictionary.csv"))?;
    io::write_reference_values(&a.out.join("reference.csv"), reference.values())?;
    write_reference_pixels(&a.out.join("reference_pixels.csv"), &pixels, &test)?;
    println!(
        "mu0_hat={} pi0_hat={} n0={} n={} similarity={}",
        model.mu0_hat, model.pi0_hat, model.n0, model.n, cli.similarity
    );
    Ok(())
}

fn write_reference_pixels(path: &Path, pixels: &[(usize, usize)], test: &Rect) -> Result<()> {
    let mut w = fs::File::create(path)?;
    writeln!(w, "row,col,in_test_region")?;
    for &(y, x) in pixels {
        writeln!(w, "{y},{x},{}", u8::from(test.contains(y, x)))?;
    }
    Ok(())
}

fn write_map(dir: &Path, name: &str, ny: usize, nx: usize, values: &[f64]) -> Result<()> {
    io::write_grid(&dir.join(format!("{name}.csv")), ny, nx, values)?;
    io::write_pgm(&dir.join(format!("{name}.pgm")), ny, nx, values)?;
    Ok(())
}

fn write_mask(dir: &Path, name: &str, ny: usize, nx: usize, mask: &[bool]) -> Result<()> {
    let v: Vec<f64> = mask.iter().map(|b| f64::from(u8::from(*b))).collect();
    write_map(dir, name, ny, nx, &v)
}

fn write_result(dir: &Path, ny: usize, nx: usize, r: &DetectionResult<f64>) -> Result<()> {
    let untested = |v: &[f64]| -> Vec<f64> {
        v.iter().zip(&r.tested).map(|(x, t)| if *t { *x } else { f64::NAN }).collect()
    };
    write_map(dir, "pvalues", ny, nx, &untested(&r.pvalues))?;
    write_map(dir, "qvalues", ny, nx, &untested(&r.qvalues))?;
    write_mask(dir, "detected", ny, nx, &r.detected)?;
    write_mask(dir, "tested", ny, nx, &r.tested)?;
    Ok(())
}

fn detect(cli: &Cli, a: &DetectArgs, cfg: &Config) -> Result<()> {
    let q: f64 = pick(a.q, cfg, "q", 0.2)?;
    let pi0: Pi0Method = match a.pi0.clone().or_else(|| cfg.raw("pi0").map(str::to_string)) {
        Some(s) => s.parse()?,
        None => Pi0Method::Empirical,
    };
    create_dir(&a.out)?;
    let mut summary = vec![format!("q={q}"), format!("pi0_method={pi0}")];
    if let (Some(fp), Some(np)) = (&a.field, &a.null_model) {
        let field = io::read_test_field(fp)?;
        let model = io::read_null_model(np)?;
        if !(0.0..=1.0).contains(&q) {
            bail!(halo_core::Error::InvalidInput("q must lie in [0, 1]".into()));
        }
        let r = detect_with(&model, &field, q, pi0);
        write_result(&a.out, field.ny, field.nx, &r)?;
        summary.extend(result_summary(&r));
    } else {
        let Some(input) = &a.input else {
            bail!(halo_core::Error::InvalidInput("detect needs --input or --field with --null-model".into()));
        };
        let cube = load(input)?;
        let region = region_spec(&a.region, &cube, cfg)?;
        let params = dict_params(&a.region, cfg)?;
        let maps = pipeline::run_detection_with(&cube, &region, &params, q, cli.similarity, pi0)?;
        write_maps(&a.out, &maps)?;
        summary.push(format!("similarity={}", cli.similarity));
        summary.push(format!(
            "test_region={},{},{},{}",
            maps.test_rect.y0, maps.test_rect.x0, maps.test_rect.ny, maps.test_rect.nx
        ));
        summary.push(format!(
            "fit_region={},{},{},{}",
            maps.fit_rect.y0, maps.fit_rect.x0, maps.fit_rect.ny, maps.fit_rect.nx
        ));
        summary.push(format!("mu0_hat={}", maps.null.mu0_hat));
        summary.push(format!("pi0_hat={}", maps.null.pi0_hat));
        summary.push(format!(
            "reference_pixels_tested={}",
            maps.reference_mask().iter().filter(|m| **m).count()
        ));
        summary.extend(result_summary(&maps.result));
    }
    let text = summary.join("\n") + "\n";
    fs::write(a.out.join("summary.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn result_summary(r: &DetectionResult<f64>) -> Vec<String> {
    vec![
        format!("pi0={}", r.pi0),
        format!("level={}", r.nominal_q),
        format!("tested={}", r.tested.iter().filter(|t| **t).count()),
        format!("detections={}", r.n_detected()),
    ]
}

fn write_maps(dir: &Path, maps: &DetectionMaps) -> Result<()> {
    let (ny, nx) = (maps.test_rect.ny, maps.test_rect.nx);
    write_result(dir, ny, nx, &maps.result)?;
    for (level, mask) in &maps.contours {
        write_mask(dir, &format!("contour_q{level}"), ny, nx, mask)?;
    }
    write_mask(dir, "reference_pixels", ny, nx, &maps.reference_mask())?;
    let tmax: Vec<f64> = maps
        .field
        .tmax
        .iter()
        .zip(&maps.field.tested)
        .map(|(v, t)| if *t { *v } else { f64::NAN })
        .collect();
    write_map(dir, "tmax", ny, nx, &tmax)?;
    io::write_null_model(&maps.null, &dir.join("null_model.csv"))?;
    io::write_dictionary(&maps.dictionary, &dir.join("dictionary.csv"))?;
    write_reference_pixels(&dir.join("reference_pixels.csv"), &maps.reference_pixels, &maps.test_rect)?;
    Ok(())
}

const EXPERIMENT_KEYS: &[&str] = &["snr_db", "q", "runs", "calibration_runs"];

fn sim_config(cli: &Cli, cfg: &Config) -> Result<SimConfig> {
    let known: Vec<&str> = SIM_CONFIG_KEYS.iter().chain(EXPERIMENT_KEYS).copied().collect();
    cfg.check_known(&known)?;
    let mut sim = SimConfig::from_config(cfg)?;
    if let Some(s) = cli.seed {
        sim.seed = s;
    }
    Ok(sim)
}

fn write_runs(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "run,method,snr_db,q,pi0_hat,detections,false_detections,true_detections,fdp,power")?;
    for r in records {
        let m = &r.metrics;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.run, r.method, r.snr_db, r.q, r.pi0_hat, m.detections, m.false_detections, m.true_detections, m.fdp, m.power
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_aggregate(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "method,q,snr_db,runs,empirical_fdr,fdr_se,power,mean_detections,mean_pi0_hat")?;
    for a in aggregate(records) {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            a.method, a.q, a.snr_db, a.runs, a.fdr, a.fdr_se, a.power, a.mean_detections, a.mean_pi0_hat
        )?;
    }
    w.flush()?;
    Ok(())
}

fn simulate(cli: &Cli, a: &SimulateArgs, cfg: &Config) -> Result<()> {
    let sim = sim_config(cli, cfg)?;
    let sweep = FdrSweepConfig {
        kind: cli.similarity,
        snr_db: cfg.list("snr_db")?.unwrap_or_else(|| vec![-20.0, -15.0, -10.0, -5.0]),
        q: cfg.list("q")?.unwrap_or_else(|| vec![0.02, 0.05, 0.1, 0.2]),
        runs: pick(a.runs, cfg, "runs", 100)?,
        sim,
    };
    if sweep.runs == 0 {
        bail!(halo_core::Error::InvalidInput("--runs must be positive".into()));
    }
    let records = fdr_sweep(&sweep)?;
    create_dir(&a.out)?;
    write_runs(&a.out.join("runs.csv"), &records)?;
    write_aggregate(&a.out.join("aggregate.csv"), &records)?;
    println!("{} runs, {} records written to {}", sweep.runs, records.len(), a.out.display());
    Ok(())
}

fn glr(cli: &Cli, a: &GlrCompareArgs, cfg: &Config) -> Result<()> {
    let sim = sim_config(cli, cfg)?;
    let c = GlrCompareConfig {
        q: cfg.list("q")?.unwrap_or_else(|| vec![0.05, 0.1, 0.2, 0.3, 0.4]),
        runs: pick(a.runs, cfg, "runs", 200)?,
        calibration_runs: pick(a.calibration_runs, cfg, "calibration_runs", 10_000)?,
        sim,
    };
    if c.runs == 0 {
        bail!(halo_core::Error::InvalidInput("--runs must be positive".into()));
    }
    let records = glr_compare(&c)?;
    create_dir(&a.out)?;
    write_runs(&a.out.join("runs.csv"), &records)?;
    write_aggregate(&a.out.join("aggregate.csv"), &records)?;
    println!("{} runs written to {}", c.runs, a.out.display());
    Ok(())
}

fn parse_m_range(s: &str) -> Result<(usize, usize)> {
    let bad = || halo_core::Error::InvalidInput(format!("--m-range expects a..b, got '{s}'"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
    if a < 1 || b < a {
        bail!(bad());
    }
    Ok((a, b))
}

fn pfa_bound(a: &PfaBoundArgs) -> Result<()> {
    let (lo, hi) = parse_m_range(&a.m_range)?;
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        bail!(halo_core::Error::InvalidInput("--alpha must lie in (0, 1)".into()));
    }
    let (reference, mode) = match (&a.reference, &a.gaussian) {
        (Some(p), _) => {
            let v = io::read_reference_values(p)?;
            let c = v.len() / 2;
            (ReferenceAtom::new(v, c)?, ShiftMode::IntegerBand)
        }
        (None, Some(g)) => {
            let parts: Vec<f64> = g
                .split(':')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| halo_core::Error::InvalidInput(format!("bad --gaussian '{g}'")))?;
            let (l, fwhm, hs) = match parts.as_slice() {
                [l, f] => (*l as usize, *f, None),
                [l, f, h] => (*l as usize, *f, Some(*h)),
                _ => bail!(halo_core::Error::InvalidInput(format!("bad --gaussian '{g}'"))),
            };
            let line = GaussianLine::from_fwhm(((l.max(1) - 1) / 2) as f64, fwhm, hs);
            (ReferenceAtom::sampled(&line, l, (l.max(1) - 1) / 2)?, ShiftMode::continuous(line))
        }
        (None, None) => bail!(halo_core::Error::InvalidInput("need --reference or --gaussian".into())),
    };
    let mut out = String::from("m,eta_bound,eta_orthogonal,expected_gain\n");
    for m in lo.max(2)..=hi {
        let dict = build_lss(&reference, m, a.tau, &mode)?;
        let eta = threshold_for_pfa(&dict, a.alpha)?;
        let gain = expected_max_gain(&reference, m, a.tau, a.amplitude, &mode)?;
        out.push_str(&format!("{m},{eta},{},{gain}\n", threshold_orthogonal(m, a.alpha)));
    }
    if lo == 1 {
        let eta = threshold_orthogonal(1, a.alpha);
        out.insert_str(out.find('\n').unwrap() + 1, &format!("1,{eta},{eta},{}\n", a.amplitude));
    }
    match &a.out {
        Some(p) => fs::write(p, out)?,
        None => print!("{out}"),
    }
    Ok(())
}
