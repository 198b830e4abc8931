//! Dataset ingestion, image codecs, checkpoints and exports.

pub mod camera_path;
pub mod checkpoint;
pub mod colmap;
pub mod dataset;
pub mod image;
pub mod ply;
