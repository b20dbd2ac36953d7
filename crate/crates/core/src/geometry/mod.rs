//! Geometric conditioning: visible-point extraction, normalization, outlier
//! filtering, voxelization and the structure encoder that yields geometry tokens.

mod cloud;
mod encoder;
mod ply;
mod stereo;
mod voxel;

pub use cloud::{
    extract_visible_points, filter_outliers, normalize_cloud, OutlierFilter, PartialObjectCloud, SpatialHash,
    StereoCloud,
};
pub use encoder::{
    cell_positional_features, patch_layout, patchify, patchify_and_project, pooled_occupancy, toy_structure_encoder,
    unpatchify, FeatureVolume, GeoTokens, StructureEncoderParams, LATTICE_SIDE, POOL_FACTOR, POS_FEATURES,
};
pub use ply::{from_ply, load_ply, save_ply, to_ply};
pub use stereo::{back_project_depth, extent, synth_stereo, DEFAULT_NOISE_SIGMA};
pub use voxel::{voxel_coord, voxelize, voxelize_clamped, voxelize_solid, VoxelGrid, GRID_RESOLUTION, VOXEL_MAGIC};
