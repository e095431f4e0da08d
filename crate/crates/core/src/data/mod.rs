//! Dataset ingestion, splitting, resizing, augmentation and batching.

pub mod augment;
pub mod batch;
pub mod manifest;
pub mod sample;
pub mod synth;

pub use augment::{augment, AugmentDraw, AugmentPolicy};
pub use batch::{batch_count, Batch, BatchStream, Dataset};
pub use manifest::{scan_dataset, split, ManifestEntry, SampleManifest, ScanReport, Split};
pub use sample::{load_sample, save_mask_png, Sample};
pub use synth::SynthSpec;
