//! Convolutional classifier: layer kit, the three image-size architectures,
//! SGD-with-momentum training and model files.

pub mod layers;
pub mod model_io;
pub mod network;
pub mod spec;
pub mod tensor;
pub mod train;

pub use layers::{Layer, Param};
pub use model_io::{load_model, load_model_for, save_model, ModelHeader};
pub use network::{cross_entropy, load_batch, Mode, Network, PREICTAL_CLASS};
pub use spec::{build_arch, LayerSpec, NetworkSpec, Shape};
pub use tensor::{Real, Tensor};
pub use train::{train, train_with, EpochStats, Sgd, TrainConfig, TrainHistory};
