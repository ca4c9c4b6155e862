//! Dataset ingestion, voxel filtering, task sampling and synthetic tasks.

mod dataset;
pub mod synth;
mod task;
pub mod text;
pub mod vxed;

pub use dataset::{filter_voxels, parse_index_list, split_stimuli, standardize_betas, RoiLabels, VoxelDataset};
pub use synth::{draw_task, synth_dataset, synth_tasks, NoiseLevel, SynthConfig, SynthDataset, SynthTask};
pub use task::{
    query_from_indices, sample_indices, sample_task, support_from_indices, QuerySet, SupportSet, Task,
    TaskBatch,
};
pub use vxed::{load_dataset, write_dataset};
