//! Computational tools for homoclinic tangencies of complex Hénon maps and
//! synthetic saddle germs.

pub mod bidisk;
pub mod germ;
pub mod henon;
pub mod linalg;
pub mod param;
pub mod poly;
pub mod ring;
pub mod saddle;
pub mod scan;
pub mod series;
pub mod stats;
pub mod tol;

pub use henon::{LocalGerm, ParametricFamily, PlaneMap, PolynomialAutomorphism};
pub use ring::{Dual, Ring, C64};
pub use series::{solve_homological, AnySeries, SeriesError, TruncatedSeries1, TruncatedSeries2};
