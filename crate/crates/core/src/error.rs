use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("density must be non-negative, got {0}")]
    NegativeDensity(f64),
    #[error("pressure derivative undefined at rho={rho} (domain is ({low}, {high}))")]
    PressureDerivativeDomain { rho: f64, low: f64, high: f64 },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("road length and cell width must be positive (length={length}, dx={dx})")]
    NonPositive { length: f64, dx: f64 },
    #[error("length {length} is not an integer multiple of dx {dx}")]
    NonIntegral { length: f64, dx: f64 },
    #[error("ring needs at least 4 cells, got {0}")]
    TooFewCells(usize),
    #[error("field has {got} cells but the grid has {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("look-ahead window of {window} cells exceeds ring of {n_cells} cells")]
    WindowTooLarge { window: usize, n_cells: usize },
    #[error("invalid look-ahead weights: {0}")]
    InvalidWeights(String),
}

/// Fatal conditions raised while advancing the solution.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("Courant number {courant:.4} exceeds limit {limit}")]
    Cfl { courant: f64, limit: f64 },
    #[error("non-finite state in cell {cell}")]
    NonFinite { cell: usize },
    #[error("velocity {velocity:.4} m/s in cell {cell} exceeds blow-up bound {bound} m/s")]
    VelocityBlowUp { cell: usize, velocity: f64, bound: f64 },
    #[error("total density {rho:.4} veh/km in cell {cell} reached jam density")]
    JamOverflow { cell: usize, rho: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("step {step} (t = {time:.2} s): {source}")]
    AtStep {
        step: usize,
        time: f64,
        #[source]
        source: Box<SolverError>,
    },
    #[error("invalid run request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error("invalid perturbation query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("at grid point (rho0={rho0}, k={k}, lookahead={lookahead}): {source}")]
    AtPoint {
        rho0: f64,
        k: f64,
        lookahead: f64,
        #[source]
        source: Box<StabilityError>,
    },
}
