//! Scanpath similarity (ScanMatch, MultiMatch), classification quality
//! (AUROC, AUPRC) and the per-image evaluation protocols.

pub mod classification;
pub mod protocol;
pub mod similarity;

pub use classification::{auprc, auroc, improvement_pct, macro_average, ClassMetric, MacroResult};
pub use protocol::{
    evaluate_subset, group_by_image, mean_against, radiologist_benchmark, ProtocolResult, References, ScanpathMetric,
    Subset,
};
pub use similarity::{multimatch, needleman_wunsch, scanmatch, scanmatch_keys, MultiMatchResult, ScanMatchConfig};
