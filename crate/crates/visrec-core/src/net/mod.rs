//! Multi-path convolutional embedding network trained with the triplet
//! hinge ranking loss.
//!
//! One deep path and two parallel shallow paths share the input image; their
//! outputs are concatenated, optionally projected to a reduced dimension, and
//! L2-normalized. All arithmetic is f64 internally; emitted embeddings and
//! the model file store f32.

mod config;
mod layers;
mod model_io;
mod network;
mod train;

pub use config::{LayerSpec, NetConfig};
pub use layers::LayerKind;
pub use model_io::{load_model, save_model, MODEL_MAGIC};
pub use network::{BlockInfo, Gradient, Network, ProjectionInit};
pub use train::{train, train_projection, Hyper, ImageSource, TrainReport, TripletIds};
