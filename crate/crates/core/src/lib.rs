//! Distributed NMPC collision avoidance for aerial swarms.
//!
//! Every agent solves a single-shooting NMPC problem with an augmented
//! Lagrangian method whose inner problems are handled by PANOC, broadcasts
//! its plan, and treats a prioritized subset of the other agents' predicted
//! tracks as moving spherical obstacles.
//!
//! The numerical core is generic over [`Real`] (`f32`/`f64`); the `*64`
//! aliases below fix the double-precision types the simulator uses.

pub mod controller;
pub mod error;
pub mod metrics;
pub mod model;
pub mod priority;
pub mod scalar;
pub mod scenario;
pub mod solver;
pub mod swarm;

pub use error::ValidationError;
pub use scalar::Real;

pub type State64 = model::State<f64>;
pub type Input64 = model::Input<f64>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type AlmSettings64 = solver::AlmSettings<f64>;
pub type ControllerConfig64 = controller::ControllerConfig<f64>;
pub type Controller64 = controller::Controller<f64>;
pub type PriorityParams64 = priority::PriorityParams<f64>;
pub type SimSettings64 = swarm::SimSettings<f64>;
pub type RunLog64 = swarm::RunLog<f64>;
