//! File formats: gyro logs, frame indices, flow files, correspondences,
//! homography arrays, fusion maps, images, configuration and visualization.

pub mod arrays;
pub mod color;
pub mod config;
pub mod flo;
pub mod frames;
pub mod gyro_log;
pub mod points;
pub mod raster;
pub(crate) mod text;

pub use arrays::{read_fusion_map, read_homography_array, write_fusion_map, write_homography_array};
pub use color::{flow_to_color, heatmap_to_image, superimpose};
pub use config::{read_config, read_config_with_overrides, write_config, ProjectConfig, CONFIG_ENV};
pub use flo::{read_flo, write_flo, write_flo_masked, FloFile};
pub use frames::{parse_frame_index, write_frame_index, FrameEntry, FrameIndex};
pub use gyro_log::{parse_gyro_log, write_gyro_log, GyroLog};
pub use points::{read_correspondences, write_correspondences};
pub use raster::{decode_png, encode_png, load_image, save_image};
