//! Neural kinematic basis fluids.
//!
//! A small MLP maps a point and an obstacle layout to `b` velocity fields that
//! are near divergence-free and tangent to the boundary. Sketched guide curves
//! are least-squares fitted in that basis, and a semi-Lagrangian stepper
//! advances the coefficients through time, with moving obstacles.

pub mod basis;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod nn;
pub mod real;
pub mod seed;
pub mod sim;
pub mod sketch;
pub mod training;

pub use basis::{AnalyticBasis, BasisProvider, NeuralBasis};
pub use error::{Error, Result};
pub use geometry::{Circle, DomainSpec, SamplePoint};
pub use losses::{LossReport, LossWeights, OrthoForm};
pub use nn::{AnyMlp, ForwardBundle, Mlp, MlpConfig};
pub use real::Real;
pub use sim::{DomainTimeline, FrameRecord, Keyframe, SimConfig, SimState, Simulator};
pub use sketch::{FitProblem, FitResult, GuideCurve, SketchScene};
pub use training::{DomainSampleSet, MetricsRecord, Precision, TrainConfig};
