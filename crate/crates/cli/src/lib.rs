//! IO, training harness and batch CLI companion for `structfuse-core`:
//! dataset folders, checkpoint archives, run directories with loss logs
//! and manifests, and metric report files.

pub mod checkpoint;
pub mod commands;
pub mod dataset;
pub mod manifest;
pub mod report;
pub mod trainer;
