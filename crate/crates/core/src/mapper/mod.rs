//! Deterministic MLP engine and the short-to-long i-vector mapping schemes.

mod adam;
mod gradcheck;
mod layers;
mod network;
mod phoneme;
mod train;

pub use adam::AdamState;
pub use gradcheck::{check_gradients, GradCheckReport};
pub use layers::{xavier_init, BatchNorm, Layer, LayerKind, LayerSpec, Mode};
pub use network::{
    map_ivector, Batch, EncoderDepth, ForwardOutput, Losses, MapperConfig, MapperMethod, MapperNetwork,
    TrainingMeta,
};
pub use phoneme::{build_phoneme_vector, PhonemeVector};
pub use train::{
    fit, regression_mse, train_dnn1, train_dnn2, write_training_curve, MapperTraining, TrainingPair,
};

#[cfg(test)]
mod tests;
