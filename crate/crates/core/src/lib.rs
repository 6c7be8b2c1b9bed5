//! Uncertainty-aware disparity readout from stereo cost volumes.
//!
//! A cost volume is turned into per-pixel probabilities by a temperature-scaled
//! softmax; the expected index is the sub-pixel disparity. Three uncertainty
//! metrics (MSM, entropy, PER) score how multimodal each distribution is, and
//! their mean serves as an unsupervised loss on unlabeled data. The crate also
//! holds the analytic gradients of those losses, a toy optimizer that follows
//! them, pseudo-label filtering, sparsification curves, a block matcher for
//! synthetic stereograms, and file codecs.
//!
//! ```
//! use dispsharp::{readout, CostVolume, Temperature};
//!
//! let vol = CostVolume::from_vector(&[2.0, 0.1, 0.3, 2.5]).unwrap();
//! let (_, disparity) = readout(&vol, Temperature::new(16.0).unwrap());
//! assert!((disparity.values()[0] - 1.0).abs() < 0.1);
//! ```

pub mod adapt_sim;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod matcher;
pub mod objective;
pub mod pseudo_label;
pub mod storage;
pub mod toy;
pub mod uncertainty;
pub mod volume;

pub use error::{Error, Result};
pub use eval::{error_stats, roc_sparsification, ErrorStats, RocCurve, RocPoint};
pub use matcher::{generate_stereogram, MatcherKind, SceneSpec, StereoPair, Stereogram};
pub use objective::{LossConfig, DEFAULT_TEMPERATURE};
pub use pseudo_label::{make_pseudo_label, PseudoLabel};
pub use storage::FileFormat;
pub use uncertainty::{uncertainty_map, UncertaintyMap, UncertaintyMetric};
pub use volume::{
    anisotropic_softmax, hard_argmin, readout, soft_argmin, CostVolume, DisparityMap,
    ProbabilityVolume, Shaped, Temperature, ValidityMask,
};
