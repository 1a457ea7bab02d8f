//! Iterative stereo matching whose context encoder selectively absorbs
//! knowledge from several frozen feature teachers.

pub mod autograd;
pub mod checks;
pub mod config;
pub mod data;
pub mod dlskt;
pub mod error;
pub mod ftc;
pub mod imgproc;
pub mod metrics;
pub mod model;
pub mod net;
pub mod params;
pub mod sample;
pub mod teachers;
pub mod trainer;

pub use autograd::{Element, Graph, Tensor, Var};
pub use config::{Ablation, RunConfig};
pub use error::{Error, Result};
pub use model::StereoModel;
pub use params::ParamStore;
pub use sample::StereoSample;
pub use teachers::{TeacherFeatures, TeacherKind, TeacherProvider};
