//! Network topology, parameter counting and forward pass.

mod config;
mod csn;

pub use config::{BranchKind, BranchSpec, EscMode, ModelConfig, StageSpec, Variant};
pub use csn::{
    depth, merge_and_run, param_count, BlockLayout, BranchLayout, ConvIds, ConvSpec, CsnModel, Layout,
    StageLayout,
};
