//! Analytical FLOPs and parameter accounting for the decoder variants.

mod flops;
mod registry;
mod report;

pub use flops::{
    connector_params, flops_closed_form_himix, flops_closed_form_vanilla, flops_full_accounting,
    flops_with_options, params_count, scaling_exponent, CostOptions, FlopsReport, LayerFlops,
};
pub use registry::{NamedConfigRegistry, RegistryEntry, DEFAULT_N_VISION};
pub use report::{emit_report, parse_report, ReportFormat, REPORT_COLUMNS};

/// The five vision:language length pairs of the standard efficiency grid.
pub const GRID_RATIOS: [(u64, u64); 5] =
    [(728, 32), (728, 64), (728, 200), (728, 728), (728, 1000)];

/// Parses `"728:64"`.
pub fn parse_ratio(s: &str) -> crate::Result<(u64, u64)> {
    let bad = || crate::Error::InvalidArgument(format!("expected N:M, got {s:?}"));
    let (n, m) = s.split_once(':').ok_or_else(bad)?;
    let n = n.trim().parse().map_err(|_| bad())?;
    let m: u64 = m.trim().parse().map_err(|_| bad())?;
    if m == 0 {
        return Err(crate::Error::InvalidArgument(
            "language length M must be at least 1".into(),
        ));
    }
    Ok((n, m))
}
