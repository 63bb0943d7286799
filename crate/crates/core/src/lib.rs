pub mod alm;
pub mod analysis;
pub mod convex;
pub mod error;
pub mod instances;
pub mod linalg;
pub mod manifold;
pub mod problem;

pub use error::{Error, Result};
pub use linalg::Mat;
pub use manifold::{Manifold, Point, SphereRetraction};
