//! From-scratch experiments: generators with known structure, free
//! embeddings trained jointly with probes, dimension scans, and stability of
//! readouts across supports.

pub mod free;
pub mod generators;
pub mod stability;

pub use free::{min_dim_scan, train_free_embeddings, LabConfig, LabRun, MinDimTable, ScanConfig};
pub use generators::{
    generate_dominant_noise, generate_factorized, generate_lrh_grid, generate_separable_nonfactorized,
    generate_unstable_binary, SeparableLayout,
};
pub use stability::{stability_experiment, Readout, StabilityReport};
