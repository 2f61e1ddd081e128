//! On-disk formats and scene generators.

pub mod checkpoint;
pub mod config;
pub mod raster;
pub mod scenes;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use config::{format_config, parse_config, read_config, write_config, ExperimentConfig};
pub use raster::{export_text_grid, read_raster, write_raster, Raster, RasterKind};
pub use scenes::{make_scene, resolve_scene, SceneSpec, SCENE_NAMES};
