//! Fundamental tone of the p-Laplacian on rotationally symmetric model
//! manifolds, with vector-field lower bounds and volume-growth upper bounds.

pub mod error;
pub mod fields;
pub mod geometry;
pub mod growth;
pub mod interp;
pub mod quadrature;
pub mod tone;

pub use error::{FieldError, GeometryError, SolverError};
pub use fields::{BoundMethod, BoundReport, DomainSampler, RadialField};
pub use geometry::{CustomWarp, RadialDomain, Warp, WarpedModel};
pub use growth::{CheegerEstimate, EssentialToneEstimate, GrowthEstimate, OrderingReport};
pub use tone::{
    Boundary, RadialFunction, RadialGrid, SolverOptions, SpectralParams, ToneEstimate, ToneKind,
};
