use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("index {index} out of range for {len} blocks")]
    OutOfRange { index: usize, len: usize },
    #[error("noncentrality {0} exceeds the series guard")]
    Overflow(f64),
    #[error("rank-deficient observation matrix, dependent columns {columns:?}")]
    RankDeficient { columns: Vec<usize> },
    #[error("user {ue} receives no useful signal from its relaxed covariance")]
    DegenerateExtraction { ue: usize },
    #[error("cannot place {n} elements {min_sep} apart in a {width} x {height} region")]
    PackingInfeasible { n: usize, width: f64, height: f64, min_sep: f64 },
    #[error("conic solver: {0}")]
    Conic(#[from] conic::ConicError),
    #[error("solver failed: {0}")]
    SolverFailed(String),
    #[error("no convention matches the target false-alarm rate (paper {paper:.5}, half {half:.5})")]
    CalibrationFailed { paper: f64, half: f64 },
}
