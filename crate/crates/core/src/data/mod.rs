//! Datasets and client partitioning.

pub mod dataset;
pub mod idx;
pub mod partition;

pub use dataset::{make_blobs, BlobSpec, LabeledDataset, Sample};
pub use idx::{load_idx, parse_idx};
pub use partition::{dirichlet_partition, iid_partition, label_entropy, PartitionSpec};
