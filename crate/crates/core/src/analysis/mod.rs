//! Static complexity analysis of generator graphs and inspection of learned
//! modulation maps.
//!
//! Convolution cost is `k²·C_in·C_out` parameters and `k²·C_in·C_out·H·W`
//! FLOPs. A SPADE site costs `k_m²·(N_c·C_m + 2·C_m·C_out)` of each (times
//! `H·W` for FLOPs); a CLADE site `2·N_c·C_out` parameters and `C_out·H·W`
//! FLOPs, so its FLOP ratio to a `k×k` convolution is `1/(k²·C_in)`.

mod cost;
mod maps;
mod report;

pub use cost::{count_bn, count_clade, count_conv, count_linear, count_spade, Cost};
pub use maps::{modulation_maps, ClassSpread, SiteMaps};
pub use report::{analyze, AnalyzeOptions, ComplexityReport, Convention, RatioSummary, ReportRow, CSV_HEADER};
