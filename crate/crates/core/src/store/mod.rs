//! Persistence and ingestion: the `FVTB` tensor container for trained
//! models, corpus manifests and JSONL patch annotations.

pub mod container;
pub mod corpus;
pub mod models;

pub use container::{config_hash, Container, Dtype, Tensor, VERSION};
pub use corpus::{
    load_annotations, load_corpus, Annotation, CorpusManifest, ManifestEntry, ManifestSource,
};
pub use models::{from_container, load_model, save_model, to_container, Persist};
