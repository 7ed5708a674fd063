use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared by every module of the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A physical parameter is outside its admissible domain.
    #[error("parameter out of domain: {name} = {value} (requires {constraint})")]
    ParamDomain {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    /// A calibration target cannot be reached; the message names the bound.
    #[error("{what}: target {target:.4} {unit} unachievable, bound is {bound:.4} {unit}")]
    Infeasible {
        what: &'static str,
        target: f64,
        bound: f64,
        unit: &'static str,
    },

    /// A frequency grid violates its contract (empty, non-positive, not increasing).
    #[error("invalid frequency grid: {0}")]
    BadGrid(&'static str),

    /// Two spectra that must share a grid do not.
    #[error("frequency grids do not match")]
    GridMismatch,

    /// Requested analysis band does not lie inside the PSD grid.
    #[error("analysis band [{lo} Hz, {hi} Hz] outside the PSD grid")]
    BandOutsideGrid { lo: f64, hi: f64 },

    /// Welch segmentation or filter-length constraints violated.
    #[error("invalid segmentation: {0}")]
    BadSegmentation(String),

    /// A quadrature spectrum does not cover the band a synthesis run needs.
    #[error("spectrum covers up to {covered} Hz but {needed} Hz is required")]
    SpectrumCoverage { needed: f64, covered: f64 },

    /// atan2 of (0, 0) has no defined phase.
    #[error("phase undefined: I and Q are both zero")]
    UndefinedPhase,

    /// Sampling-rate / demodulation-frequency constraints violated.
    #[error("configuration error: {0}")]
    Config(String),

    /// A scenario routine was handed a config built for a different mode.
    #[error("scenario mode mismatch: expected {expected}, got {got}")]
    ModeMismatch {
        expected: &'static str,
        got: &'static str,
    },
}
