//! `halo`: command-line front end for halo-core.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use halo_core::SimilarityKind;

#[derive(Parser, Debug)]
#[command(name = "halo", version, about = "Detect faint shifted emission lines in hyperspectral cubes")]
pub struct Cli {
    /// Seed for every random draw (overrides a `seed` config key).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Similarity measure: mf (matched filter) or sad (spectral angle).
    #[arg(long, global = true, default_value = "sad", value_parser = parse_kind)]
    pub similarity: SimilarityKind,
    /// Flat key=value file supplying defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_kind(s: &str) -> Result<SimilarityKind, String> {
    s.parse().map_err(|e: halo_core::Error| e.to_string())
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a cube (binary or CSV directory) and store it as binary.
    Ingest(IngestArgs),
    /// Whiten, robustly standardize and optionally convolve a cube.
    Preprocess(PreprocessArgs),
    /// Compute the test field and fit the empirical null.
    NullFit(NullFitArgs),
    /// Run the FDR procedure and write maps.
    Detect(DetectArgs),
    /// Monte-Carlo FDR and power study on synthetic cubes.
    Simulate(SimulateArgs),
    /// Thresholds from the PFA lower bound over a range of dictionary sizes.
    PfaBound(PfaBoundArgs),
    /// Proposed procedure versus a Gaussian-calibrated GLR on synthetic cubes.
    GlrCompare(GlrCompareArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Write a CSV directory instead of a binary file.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// FSF kernel: delta, uniform:<k> or gaussian:<k>:<sigma>.
    #[arg(long)]
    pub fsf: Option<String>,
    /// Moving-median baseline window in bands (odd).
    #[arg(long)]
    pub baseline: Option<usize>,
    /// Variance whitening: auto (when present), on or off.
    #[arg(long, default_value = "auto")]
    pub variance: String,
}

#[derive(Args, Debug, Clone)]
pub struct RegionArgs {
    /// Centre of the regions as `y,x,band` (band is absolute).
    #[arg(long)]
    pub center: Option<String>,
    #[arg(long)]
    pub half_width: Option<usize>,
    #[arg(long)]
    pub half_bands: Option<usize>,
    #[arg(long)]
    pub fit_half_width: Option<usize>,
    /// Atoms in the shift dictionary.
    #[arg(long)]
    pub m: Option<usize>,
    /// Largest shift in bands.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Pixels averaged into the estimated reference.
    #[arg(long)]
    pub n_center: Option<usize>,
    /// Reference spectrum CSV (last column); skips estimation.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct NullFitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub region: RegionArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// Preprocessed cube; the null is fitted on the fit region.
    #[arg(long, conflicts_with_all = ["field", "null_model"])]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub region: RegionArgs,
    /// Test field written by `null-fit`.
    #[arg(long, requires = "null_model")]
    pub field: Option<PathBuf>,
    /// Null model written by `null-fit`.
    #[arg(long, requires = "field")]
    pub null_model: Option<PathBuf>,
    /// Target false discovery rate.
    #[arg(long)]
    pub q: Option<f64>,
    /// Null proportion: empirical, storey:<zeta> or one.
    #[arg(long)]
    pub pi0: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PfaBoundArgs {
    /// Reference spectrum CSV; atoms are shifted by whole bands.
    #[arg(long, required_unless_present = "gaussian")]
    pub reference: Option<PathBuf>,
    /// Gaussian line `<bands>:<fwhm>[:<half_support>]`, shifted continuously.
    #[arg(long, conflicts_with = "reference")]
    pub gaussian: Option<String>,
    #[arg(long)]
    pub tau: f64,
    /// Dictionary sizes as `a..b` (inclusive).
    #[arg(long, default_value = "2..20")]
    pub m_range: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Line amplitude for the expected gain column.
    #[arg(long, default_value_t = 2.7)]
    pub amplitude: f64,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GlrCompareArgs {
    #[arg(long)]
    pub runs: Option<usize>,
    /// Null draws for the GLR calibration.
    #[arg(long)]
    pub calibration_runs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<halo_core::Error>().map_or(2, |e| e.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
