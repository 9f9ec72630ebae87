use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension must be at least 2, got {0}")]
    InvalidDimension(usize),
    #[error("radius {r} outside the validity range ({lo}, {hi})")]
    Domain { r: f64, lo: f64, hi: f64 },
    #[error("warp function vanishes at r = {0}")]
    Pole(f64),
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("quadrature did not reach tolerance on [{lo}, {hi}]")]
    Quadrature { lo: f64, hi: f64 },
    #[error("warp table: {0}")]
    WarpTable(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("exponent p must exceed 1, got {0}")]
    InvalidExponent(f64),
    #[error("grid needs at least {min} cells, got {got}")]
    InvalidCellCount { min: usize, got: usize },
    #[error("brute force search supports at most 6 cells, got {0}")]
    BruteForceTooLarge(usize),
    #[error("function has zero mass")]
    ZeroMass,
    #[error("inner convex solve failed: {0}")]
    InnerSolve(String),
    #[error("radius list must be non-empty and strictly increasing")]
    InvalidRadii,
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("r = {0} is a breakpoint of the field")]
    Breakpoint(f64),
    #[error("field is defined on balls only")]
    NotABall,
    #[error("young parameters need A >= 0 and B > 0, got A = {a}, B = {b}")]
    InvalidYoung { a: f64, b: f64 },
    #[error("function changes sign or vanishes at cell {0}")]
    SignChange(usize),
    #[error("grid of {0} cells is too coarse for a trusted eigenfunction window")]
    EmptyWindow(usize),
    #[error("field family: {0}")]
    InvalidFamily(String),
    #[error("lower bound {bound} exceeds the computed tone {tone}")]
    SandwichViolation { bound: f64, tone: f64 },
}
