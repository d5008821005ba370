//! Configuration, data plumbing, training, evaluation, checkpoints,
//! exports and the deterministic baseline.

pub mod baseline;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod export;
pub mod mesh;
pub mod train;

pub use baseline::{BaselineConfig, BaselineConvnet, BaselineTrainer};
pub use commands::{complete_cmd, gen_data, render_mesh_cmd, CompletionReport};
pub use config::{AugmentConfig, DataSource, DatasetConfig, Profile, RunConfig, Target};
pub use data::{axis_view, build_split, make_batch, Batch, Split};
pub use export::{sample_cmd, volume_montage, write_montage, SampleRequest};
pub use mesh::{MeshFitConfig, MeshFitStats, MeshFitter};
pub use train::{
    eval_benchmark, load_model, mean_stderr, stream_rng, EvalReport, LoadedModel, StepStats,
    Trainer,
};
