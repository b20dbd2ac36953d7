//! Occlusion data engine: procedural meshes, 3D-consistent occlusion
//! labeling, cameras, rasterization, occluder-mask synthesis, view features
//! and corpus assembly.

pub mod camera;
pub mod corpus;
pub mod features;
pub mod mesh;
pub mod morph;
pub mod occlusion;
pub mod raster;

pub use camera::{eval_ring, sample_cameras, CameraSampling, PinholeCamera};
pub use corpus::{
    build_corpus, procedural_meshes, Corpus, CorpusConfig, LoadedObject, LoadedView, Manifest, MeshSource, Split,
};
pub use features::{complete_view, toy_view_encoder, view_features, CompletedView};
pub use mesh::{procedural_shape, ShapeClass, TriMesh};
pub use morph::{erode, synth_occlusion_mask, OcclusionMaskConfig};
pub use occlusion::{grow_occlusion, is_connected, OcclusionLabeling};
pub use raster::{filter_views, occlusion_rate, rasterize, render, RasterView, Render};
