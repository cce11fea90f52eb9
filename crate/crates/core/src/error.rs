use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("wavelength {wavelength_nm:.4} nm at {temperature_c:.2} °C lies outside the transmission band (normalized detuning {detuning:.4})")]
    OutOfBand {
        wavelength_nm: f64,
        temperature_c: f64,
        detuning: f64,
    },
    #[error("no feasible calibration: {0}")]
    NoFeasibleFit(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("pulse width {width:e} s is not resolved by grid step {dt:e} s (need width > 3·dt)")]
    GridTooCoarse { width: f64, dt: f64 },
    #[error("time grid too small: {0}")]
    GridTooSmall(String),
    #[error("transfer function has {got} samples, pulse grid has {expected}")]
    GridMismatch { expected: usize, got: usize },
    #[error("pulse has zero energy")]
    ZeroEnergy,

    #[error("mean photon number must be positive in both arms")]
    ZeroMean,
    #[error("target g2 {target} is not reachable (achievable range {min}..{max})")]
    Infeasible { target: f64, min: f64, max: f64 },

    #[error("interferometer delay {arm_delay:e} s is not an integer multiple of slot interval {slot_interval:e} s")]
    NonIntegerShift { arm_delay: f64, slot_interval: f64 },
    #[error("visibility {0} outside [0, 1]")]
    InvalidVisibility(f64),

    #[error("time stamps are not sorted")]
    UnsortedInput,

    #[error("no interior peak in fit window")]
    NoPeak,
    #[error("fit covariance is singular")]
    SingularFit,
    #[error("side peaks contain no counts")]
    EmptySidePeaks,
    #[error("measured width {sigma_main:.3e} s is below the resolution floor {floor:.3e} s")]
    NonPhysical { sigma_main: f64, floor: f64 },
    #[error("fringe data span insufficient: {0}")]
    InsufficientSpan(String),
    #[error("fringe fit degenerate: {0}")]
    DegenerateFit(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 2 config, 3 physics, 4 fit failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Json(_) | Error::InvalidParams(_) => 2,
            Error::OutOfBand { .. }
            | Error::NonPhysical { .. }
            | Error::NoFeasibleFit(_)
            | Error::Infeasible { .. }
            | Error::ZeroMean
            | Error::NonIntegerShift { .. }
            | Error::InvalidVisibility(_)
            | Error::GridTooCoarse { .. }
            | Error::GridTooSmall(_)
            | Error::GridMismatch { .. }
            | Error::ZeroEnergy => 3,
            Error::NoPeak
            | Error::SingularFit
            | Error::EmptySidePeaks
            | Error::InsufficientSpan(_)
            | Error::DegenerateFit(_) => 4,
            Error::UnsortedInput | Error::Io(_) => 1,
        }
    }
}
