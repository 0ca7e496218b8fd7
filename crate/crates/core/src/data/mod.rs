//! Slice files, synthetic phantoms, datasets, normalization, and export.

pub mod dataset;
pub mod export;
pub mod normalize;
pub mod phantom;
pub mod slice_file;

pub use dataset::{
    assign_splits, build_dataset, split_counts, Dataset, DatasetConfig, DatasetManifest,
    ManifestEntry, Sample, Split, SplitCounts,
};
pub use export::{export_pgm, export_png};
pub use normalize::normalize_pair;
pub use phantom::phantom_generate;
pub use slice_file::{decode_slice, encode_slice, read_slice, write_slice, SliceData};
