//! Volumes, manifests, datasets, and synthetic cohorts.

pub mod dataset;
pub mod manifest;
pub mod synth;
pub mod volume;

pub use dataset::{Dataset, Label, Provenance, Sample, Site, Task, VolumeSource};
pub use manifest::{load_manifest, render_manifest, write_dataset};
pub use synth::{synth_age_dataset, synth_hie_dataset, Dims, SiteShift};
pub use volume::{load_volume, save_volume};
