//! Clip ingestion and storage, synthetic corpora, manifests, and the
//! specialty/dataset-balanced sampler.

pub mod clip;
pub mod extract;
pub mod manifest;
pub mod sampler;
pub mod synth;

pub use clip::{read_clip, write_clip, VideoClip};
pub use extract::extract_training_clip;
pub use manifest::{read_manifest, resolve_clip_path, write_manifest, ManifestRecord};
pub use sampler::{build_weight_table, sample_batch, SampleWeightTable};
pub use synth::{gen_synthetic_corpus, read_sidecar, CorpusEntry, CorpusSpec, GeneratorKind};
