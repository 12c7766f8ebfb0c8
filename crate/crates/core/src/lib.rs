//! Detection of faint, spectrally shifting emitters in hyperspectral cubes.
//!
//! Each pixel spectrum is compared against a dictionary of shifted copies of
//! a reference line; the maximum similarity is the test statistic. Its null
//! distribution is learned from the data itself by pooling maxima with
//! negated minima, and detections are selected with Benjamini-Hochberg at a
//! target false discovery rate.

pub mod config;
pub mod cube;
pub mod dictionary;
pub mod error;
pub mod fdr;
pub mod io;
pub mod kernel;
pub mod nullmodel;
pub mod pfabound;
pub mod pipeline;
pub mod quad;
pub mod scalar;
pub mod similarity;
pub mod simulate;
pub mod teststat;

pub use cube::{Cube, Rect};
pub use dictionary::{
    autocorrelation, build_lss, expected_max_gain, lss_shifts, Dictionary, GaussianLine, LineProfile, LssGenerator,
    ReferenceAtom, ShiftMode,
};
pub use error::{Error, Result};
pub use fdr::{bh_reject, detect, detect_pvalues, detect_with, qvalues, storey_pi0, DetectionResult, Pi0Method};
pub use nullmodel::{empirical_pvalues, fit_null, null_cdf, NullModel};
pub use pfabound::{pfa_bound, pfa_exact_orthogonal, threshold_for_pfa, threshold_orthogonal, PfaBound};
pub use pipeline::{
    estimate_reference, preprocess, run_detection, DetectionMaps, DictParams, FsfKernel, PreprocessOptions, RegionSpec,
};
pub use scalar::{Real, Scalar};
pub use similarity::{similarity, SimilarityKind};
pub use teststat::{compute_field, TestField};

/// Exact rational scalar for bit-exact checks of the counting identities.
pub type Rational = num_rational::Ratio<i64>;

pub type Cube64 = Cube<f64>;
pub type Cube32 = Cube<f32>;
pub type Dictionary64 = Dictionary<f64>;
pub type Dictionary32 = Dictionary<f32>;
pub type TestField64 = TestField<f64>;
pub type TestField32 = TestField<f32>;
pub type NullModel64 = NullModel<f64>;
pub type NullModel32 = NullModel<f32>;
pub type DetectionResult64 = DetectionResult<f64>;
