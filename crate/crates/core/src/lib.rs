//! Crop-loss mapping from before/after multiband satellite rasters.
//!
//! The pipeline computes NDVI on both dates, differences them, thresholds
//! the drop into a three-class mask, tiles rasters into fixed-size training
//! chips with a district-split manifest, and scores predicted masks with
//! IoU and F1.
//!
//! Numeric code is generic over the sample type (`u8`, `f32`) and over the
//! index precision (`f32`, `f64`). The aliases below fix the common choices.

pub mod bands;
pub mod dataset;
pub mod error;
pub mod groundtruth;
pub mod metrics;
pub mod raster;
pub mod sample;
pub mod synth;

pub use bands::{
    compose, compute_ndvi, temporal_difference, BandAssignment, CompositeKind, ContrastWindow,
    INDEX_NODATA,
};
pub use dataset::{
    build_manifest, read_manifest, write_manifest, ManifestEntry, Role, SplitPolicy,
};
pub use error::{Error, Result};
pub use groundtruth::{
    load_classmap, load_mask, parse_mask, render_mask, threshold_classify, ClassMap, ClassMask,
};
pub use metrics::{ConfusionMatrix, EvalPair, GroupBy};
pub use raster::{read_geotiff, write_geotiff, GeoRaster, GeoTransform, TileSet};
pub use sample::{Sample, SampleKind};
pub use synth::{generate_scene, SceneSpec};

/// Floating-point index raster (NDVI, NDVI difference).
pub type IndexRaster = GeoRaster<f32>;
/// Double-precision index raster.
pub type IndexRaster64 = GeoRaster<f64>;
/// 8-bit raster: composites and rendered masks.
pub type ByteRaster = GeoRaster<u8>;
/// Multiband reflectance stack as exported (digital numbers stored as `f32`).
pub type ReflectanceRaster = GeoRaster<f32>;
pub type MetricReport = metrics::MetricReport<f64>;
pub type ByteTileSet = TileSet<u8>;
pub type IndexTileSet = TileSet<f32>;
