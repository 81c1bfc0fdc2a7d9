pub mod curve;
pub mod error;
pub mod experiments;
pub mod lattice;
pub mod lerw;
pub mod metric;
pub mod rng;
pub mod stats;
pub mod tree;
pub mod wilson;

pub use error::{Error, Result};
pub use lattice::{LatticePoint, PointIndex, Region, RegionKind};
pub use lerw::{DomainSpec, LatticePath};
pub use rng::RngStream;
pub use curve::{Curve, TransientCurve};
pub use wilson::{LocalUst, ParameterizedTree, SpanningTree};
pub use tree::{Resistance, StopRule, TreeMetricView, WellBehavedScaleCheck};
