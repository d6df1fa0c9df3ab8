//! Synthesis and checking of neural time-varying control barrier functions
//! for systems constrained by signal temporal logic specifications.

pub mod certify;
pub mod dynamics;
pub mod linalg;
pub mod neural;
pub mod safeset;
pub mod sim;
pub mod stl;
pub mod training;

pub use certify::{BoundsEstimate, Certificate, Verdict};
pub use dynamics::{BoxSet, DynamicsBounds, SystemModel};
pub use neural::{Activation, Architecture, CertNet, Coupling, InputJacobian, Role};
pub use safeset::{AugPoint, Label, LabeledDataset, SampleGrid};
pub use sim::{SimOptions, Trajectory};
pub use stl::{ActiveSchedule, IntervalPolicy, Specification};
pub use training::{LossReport, TrainConfig, TrainOutcome};
