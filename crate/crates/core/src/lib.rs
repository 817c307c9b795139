//! Video-native self-supervised pretraining at desk scale: motion-guided
//! latent masked prediction with an EMA teacher, affinity self-distillation,
//! and a variance hinge against representation collapse.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine
//! ([`tape`]), a raw clip format plus synthetic corpora ([`video`]), tube
//! masking and motion saliency ([`tubes`]), the transformer pair and probe
//! ([`model`]), the training objectives ([`losses`]), and a deterministic
//! trainer ([`trainer`]).

pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod probe;
pub mod tape;
pub mod tensor;
pub mod trainer;
pub mod tubes;
pub mod verify;
pub mod video;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
