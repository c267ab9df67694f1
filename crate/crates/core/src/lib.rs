//! Self-learning scene-specific object detector.
//!
//! A generative online fern classifier proposes object windows; ambiguous
//! responses in a shrinking margin band around the decision boundary are
//! resolved by a HOG + linear SVM and fed back as pseudo-labels, gradually
//! specializing the detector to one scene without further annotation.

pub mod config;
pub mod detect;
pub mod error;
pub mod eval;
pub mod fern;
pub mod files;
pub mod gdm;
pub mod hog;
pub mod imaging;
pub mod model;
pub mod num;
pub mod svm;
pub mod synthscene;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use num::Real;

// Real-valued components are generic over the scalar; these are the two
// concrete instantiations. The CLI and model file use the f64 variants.
pub type OsfClassifierF32 = fern::OsfClassifier<f32>;
pub type OsfClassifierF64 = fern::OsfClassifier<f64>;
pub type LinearSvmModelF32 = svm::LinearSvmModel<f32>;
pub type LinearSvmModelF64 = svm::LinearSvmModel<f64>;
pub type GdmModelF32 = gdm::GdmModel<f32>;
pub type GdmModelF64 = gdm::GdmModel<f64>;
pub type LearnerF32 = gdm::Learner<f32>;
pub type LearnerF64 = gdm::Learner<f64>;
