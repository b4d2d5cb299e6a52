//! File formats: PFM depth/point maps, TUM trajectories, named-tensor
//! files and flat key=value configuration.

pub mod kv;
pub mod pfm;
pub mod tensor_file;
pub mod tum;

pub use kv::KvDoc;
pub use pfm::{
    read_pfm, read_pfm_image, read_pfm_points, write_pfm, write_pfm_image, write_pfm_points,
};
pub use tensor_file::{read_tensors, write_tensors};
pub use tum::{format_tum, parse_tum, read_tum, write_tum};
