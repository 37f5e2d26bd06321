//! Datasets: vocabularies, manifests, frame blobs, preprocessing, batching and
//! the synthetic corpus generator.

mod blob;
mod loader;
mod manifest;
mod preprocess;
mod synth;
mod vocab;

pub use blob::FrameBlob;
pub use loader::{epoch_batches, Dataset, RawSample, VideoBatch};
pub use manifest::{Manifest, ManifestEntry};
pub use preprocess::{kept_frames, preprocess, random_offset, resize_plane, DatasetKind, Frames, PreprocessConfig};
pub use synth::{synth_generate, SynthCorpus, SynthSample, SynthSpec};
pub use vocab::GlossVocabulary;
