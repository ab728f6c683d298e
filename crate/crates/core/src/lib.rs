//! Tour construction for planar TSP by transporting cities onto a circle with
//! a learned velocity field.

pub mod canon;
pub mod coupling;
pub mod decode;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod instances;
pub mod model;
pub mod optim;
pub mod oracle;

pub use error::{CycflowError, Result};
pub use geometry::Point;
pub use instances::{Dataset, Instance, Provenance, Record, Tour};
