//! Receding-horizon quadrotor navigation with moving-target interception and
//! Poisson likelihood-ratio radiation detection, simulated deterministically
//! at desk scale.
//!
//! The pipeline mirrors an airborne stack running at 15 Hz: a synthetic depth
//! sensor produces a point cloud, the field of view is discretized into
//! candidate endpoints, a closed-form minimum-snap trajectory with free
//! terminal time is solved to each endpoint, candidates are pruned and costed
//! against a KD-tree of the cloud, and the cheapest one becomes the reference
//! for an SE(3) geometric tracking controller stepping at 1 kHz. A
//! constant-acceleration Kalman filter supplies moving-target estimates, and
//! a Neyman-Pearson likelihood-ratio test over the recorded sensor-target
//! distance decides whether the target carries a radiation source.
//!
//! Modules map onto the pipeline stages:
//!
//! - [`trajgen`]: minimum-snap segments, free terminal time, yaw planning,
//!   actuation feasibility.
//! - [`fov`]: pyramidal field-of-view discretization.
//! - [`collision`]: KD-tree index, pruning, and proximity costs.
//! - [`planner`]: one receding-horizon cycle plus emergency stops.
//! - [`vehicle`]: rigid-body dynamics on SE(3) and the tracking controller.
//! - [`target`]: target motion models, measurements, Kalman filtering.
//! - [`radiation`]: Poisson count simulation and the detection pipeline.
//! - [`sim`]: world generation, closed-loop trials, Monte Carlo campaigns.
//! - [`cli`]: the `radnav` command-line front end.

pub mod cli;
pub mod collision;
pub mod error;
pub mod fov;
pub mod planner;
pub mod radiation;
pub mod sim;
pub mod target;
pub mod trajgen;
pub mod vehicle;

pub use error::{Error, Result};
