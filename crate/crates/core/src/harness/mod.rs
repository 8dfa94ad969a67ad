//! Manifests, configuration, token caching, synthetic data and the experiment runner.

mod cache;
mod config;
mod manifest;
mod run;
pub mod synth;

pub use cache::{content_key, TokenCache};
pub use config::{
    CodecSpec, DatasetSpec, EmbeddingChoice, IdsensSection, PplSection, ProbeSection, ReconSection,
    RunConfig,
};
pub use manifest::{Crop, Domain, Manifest, ManifestEntry, Split};
pub use run::{run, CodecInstance, RunOutput};
pub use synth::{make_synthetic_dataset, SynthDataset, SynthKind};
