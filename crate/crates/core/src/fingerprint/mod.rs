//! RSSI fingerprints: normalization, image encoding, datasets and metrics.

mod dataset;
mod image;
mod metrics;
mod native;
mod synth;
mod ujindoorloc;

pub use dataset::{split, LabeledDataset, Sample, SplitTag, WapIndex};
pub use image::{encode_image, normalize_rssi, FingerprintImage, MAX_DBM, MISSING_DBM};
pub use metrics::{mean_localization_error, top1_accuracy};
pub use native::{load_native, write_native};
pub use synth::{synth_generate, SynthParams};
pub use ujindoorloc::{load_ujindoorloc, uji_class, UJI_CLASSES, UJI_FLOORS_PER_BUILDING};
