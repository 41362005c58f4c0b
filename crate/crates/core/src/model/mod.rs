//! EEG-window → position-map network, its loss and its training loop.

mod config;
mod gradcheck;
mod loss;
mod net;
mod train;

pub use config::{DecoderConfig, EncoderConfig, LossWeights, TrainConfig};
pub use gradcheck::{gradient_suite, model_gradient_check, GradientSuite, SuiteEntry, MODEL_GRAD_FLOOR};
pub use loss::{masked_laplacian, position_map_loss, row_norms, LossParts};
pub use net::{decoder_forward, encoder_forward, Model};
pub use train::{
    batch_windows, evaluate, loss_csv, make_splits, predict_maps, LossRecord, PairMeta, PairSource, Splits, Trainer,
};
