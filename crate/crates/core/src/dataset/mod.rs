//! Synthetic spatiotemporal datasets and their on-disk container.

mod ns;
mod sequence;
mod store;
mod wave;

pub use ns::{ns_step, simulate_sequence, NsConfig, NsSolver};
pub use sequence::{ForecastTask, SpatioTemporalSequence};
pub use store::{
    generate_ns_dataset, generate_wave_dataset, load_dataset, save_dataset, BlobInfo, Dataset,
    DatasetLayout, DatasetManifest, GeneratorConfig, Split, SplitCounts, MANIFEST_FILE,
};
pub use wave::{WaveConfig, WaveMode};
