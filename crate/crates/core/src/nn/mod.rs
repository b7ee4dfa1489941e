//! Layers with hand-written backward passes, the feature extractor and the
//! bias-free softmax classifier head.

mod checkpoint;
mod extractor;
mod head;
mod layer;

pub use checkpoint::{HeadRecord, ModelCheckpoint, Network, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use extractor::{desk_backbone_specs, FeatureExtractor, ForwardMode};
pub use head::{ClassifierHead, InitMode};
pub use layer::{Layer, LayerSpec, RunningStats, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM};
