//! Robust optimal-transport and L2 estimation of smooth transfer functions
//! between point clouds, with colour transfer and point-set registration
//! front ends.

pub mod cost;
pub mod density;
pub mod error;
pub mod kernel;
pub mod oracle;
pub mod pipeline;
pub mod solver;
pub mod transform;

pub use cost::{CostBreakdown, CostConfig, DataTerm};
pub use density::{CorrespondenceSet, JointModel, KdeModel, PointCloud};
pub use error::{Error, Result};
pub use kernel::{IsoGaussian, LossKind, RobustCostParams};
pub use solver::{SolveReport, SolverConfig};

pub use transform::{PenaltyParams, RadialKernel, TpsTransform};
