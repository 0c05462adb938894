//! Datasets, loaders and the client partitioner.

pub mod cifar;
mod dataset;
mod partition;
pub mod stl;
pub mod synthetic;

pub use cifar::load_cifar10;
pub use dataset::{even_and_split, Dataset, Pixels, CANONICAL_CLASSES};
pub use partition::{assign_groups, make_label_sets, partition, GroupLayout, PartitionPlan, Shard};
pub use stl::load_stl10;
pub use synthetic::{generate_synthetic, generate_synthetic_with, GratingStyle};
