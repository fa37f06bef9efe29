//! Dataset loading, splitting and partitioning.

mod dataset;
pub mod idx;
mod knowledge;
mod partition;
pub mod synthetic;
mod tabular;

pub use dataset::{Dataset, Labels};
pub use idx::load_mnist_idx;
pub use knowledge::{knowledge_indices, knowledge_slice, KnowledgeMode};
pub use partition::{
    partition_by_label, partition_iid, partition_iid_sized, subsample_split, Partition,
};
pub use tabular::{load_tabular_csv, zscore_in_place};
