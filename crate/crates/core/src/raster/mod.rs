//! Georeferenced raster model, GeoTIFF I/O and tiling.

mod geotiff;
mod tiling;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::Sample;

pub use geotiff::{read_geotiff, read_geotiff_header, write_geotiff, GeoTiffHeader};
pub use tiling::{
    merge_tiles, pad_to_multiple, parse_tile_name, read_tile_dir, split_tiles, tile_file_name,
    tile_raster, write_tiles, TileGrid, TileSet,
};

/// Affine pixel-to-map transform in GDAL order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub pixel_width: f64,
    pub row_rotation: f64,
    pub origin_y: f64,
    pub col_rotation: f64,
    pub pixel_height: f64,
}

impl GeoTransform {
    /// North-up transform with square-or-not pixels and no rotation.
    pub fn north_up(origin_x: f64, origin_y: f64, pixel_width: f64, pixel_height: f64) -> Self {
        Self {
            origin_x,
            pixel_width,
            row_rotation: 0.0,
            origin_y,
            col_rotation: 0.0,
            pixel_height,
        }
    }

    pub fn from_gdal(t: [f64; 6]) -> Self {
        Self {
            origin_x: t[0],
            pixel_width: t[1],
            row_rotation: t[2],
            origin_y: t[3],
            col_rotation: t[4],
            pixel_height: t[5],
        }
    }

    pub fn to_gdal(&self) -> [f64; 6] {
        [
            self.origin_x,
            self.pixel_width,
            self.row_rotation,
            self.origin_y,
            self.col_rotation,
            self.pixel_height,
        ]
    }

    /// Map coordinates of the upper-left corner of pixel `(col, row)`.
    pub fn pixel_to_world(&self, col: usize, row: usize) -> (f64, f64) {
        let (c, r) = (col as f64, row as f64);
        (
            self.origin_x + c * self.pixel_width + r * self.row_rotation,
            self.origin_y + c * self.col_rotation + r * self.pixel_height,
        )
    }

    /// Transform of the sub-grid whose upper-left pixel is `(col, row)` of this one.
    pub fn offset(&self, col: usize, row: usize) -> Self {
        let (x, y) = self.pixel_to_world(col, row);
        Self {
            origin_x: x,
            origin_y: y,
            ..*self
        }
    }

    pub fn check_north_up(&self) -> Result<()> {
        if self.row_rotation != 0.0 || self.col_rotation != 0.0 {
            return Err(Error::RotatedGeotransform(
                self.row_rotation,
                self.col_rotation,
            ));
        }
        if !(self.pixel_width > 0.0 && self.pixel_height < 0.0) {
            return Err(Error::InvalidRaster(format!(
                "expected pixel width > 0 and pixel height < 0, got {} and {}",
                self.pixel_width, self.pixel_height
            )));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::InvalidRaster(
                "non-finite geotransform origin".into(),
            ));
        }
        Ok(())
    }
}

impl Default for GeoTransform {
    fn default() -> Self {
        Self::north_up(0.0, 0.0, 1.0, -1.0)
    }
}

/// Georeferenced multiband image.
///
/// Pixels are stored band-major as `(band, row, col)`. The raster is
/// immutable once built; operations produce new rasters.
#[derive(Debug, Clone)]
pub struct GeoRaster<T> {
    data: Array3<T>,
    geotransform: GeoTransform,
    crs: String,
    nodata: Option<f64>,
}

impl<T: Copy> GeoRaster<T> {
    pub fn new(
        data: Array3<T>,
        geotransform: GeoTransform,
        crs: impl Into<String>,
        nodata: Option<f64>,
    ) -> Result<Self> {
        let (bands, height, width) = data.dim();
        if bands == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidRaster(format!(
                "empty raster: {bands} band(s), {width}x{height}"
            )));
        }
        geotransform.check_north_up()?;
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
            geotransform,
            crs: crs.into(),
            nodata,
        })
    }

    /// Stacks equally sized single-band arrays.
    pub fn from_bands(
        bands: Vec<Array2<T>>,
        geotransform: GeoTransform,
        crs: impl Into<String>,
        nodata: Option<f64>,
    ) -> Result<Self> {
        let first = bands
            .first()
            .ok_or_else(|| Error::InvalidRaster("no bands".into()))?
            .dim();
        if bands.iter().any(|b| b.dim() != first) {
            return Err(Error::InvalidRaster("bands differ in size".into()));
        }
        let views: Vec<_> = bands.iter().map(|b| b.view()).collect();
        let data =
            ndarray::stack(Axis(0), &views).map_err(|e| Error::InvalidRaster(e.to_string()))?;
        Self::new(data, geotransform, crs, nodata)
    }

    pub fn filled(
        width: usize,
        height: usize,
        bands: usize,
        value: T,
        geotransform: GeoTransform,
        crs: impl Into<String>,
    ) -> Result<Self> {
        Self::new(
            Array3::from_elem((bands, height, width), value),
            geotransform,
            crs,
            None,
        )
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn bands(&self) -> usize {
        self.data.dim().0
    }

    pub fn data(&self) -> &Array3<T> {
        &self.data
    }

    pub fn band(&self, index: usize) -> Result<ArrayView2<'_, T>> {
        if index >= self.bands() {
            return Err(Error::BandOutOfRange {
                index,
                bands: self.bands(),
            });
        }
        Ok(self.data.index_axis(Axis(0), index))
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> T {
        self.data[[band, row, col]]
    }

    pub fn geotransform(&self) -> &GeoTransform {
        &self.geotransform
    }

    pub fn crs(&self) -> &str {
        &self.crs
    }

    pub fn nodata(&self) -> Option<f64> {
        self.nodata
    }

    pub fn into_data(self) -> Array3<T> {
        self.data
    }

    /// New raster with the same georeference and the given pixels and nodata.
    pub fn with_data<U: Copy>(&self, data: Array3<U>, nodata: Option<f64>) -> Result<GeoRaster<U>> {
        GeoRaster::new(data, self.geotransform, self.crs.clone(), nodata)
    }

    pub fn with_nodata(mut self, nodata: Option<f64>) -> Self {
        self.nodata = nodata;
        self
    }

    /// Same dimensions, geotransform and CRS (band count and nodata may differ).
    pub fn same_grid<U: Copy>(&self, other: &GeoRaster<U>) -> bool {
        self.width() == other.width()
            && self.height() == other.height()
            && self.geotransform == other.geotransform
            && self.crs == other.crs
    }

    pub(crate) fn check_same_grid<U: Copy>(&self, other: &GeoRaster<U>) -> Result<()> {
        if self.width() != other.width() || self.height() != other.height() {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.width(),
                self.height(),
                other.width(),
                other.height()
            )));
        }
        if self.geotransform != other.geotransform || self.crs != other.crs {
            return Err(Error::GeoreferenceMismatch(format!(
                "{:?} ({}) vs {:?} ({})",
                self.geotransform.to_gdal(),
                self.crs,
                other.geotransform.to_gdal(),
                other.crs
            )));
        }
        Ok(())
    }

    /// Keeps only the first `bands` bands.
    pub fn truncate_bands(&self, bands: usize) -> Result<Self> {
        if bands == 0 || bands > self.bands() {
            return Err(Error::BandOutOfRange {
                index: bands,
                bands: self.bands(),
            });
        }
        let data = self.data.slice(ndarray::s![..bands, .., ..]).to_owned();
        self.with_data(data, self.nodata)
    }
}

impl<T: Sample> GeoRaster<T> {
    /// The nodata value in this sample type, if one is set and representable.
    pub fn nodata_sample(&self) -> Option<T> {
        self.nodata.and_then(T::from_nodata)
    }

    pub fn is_nodata(&self, value: T) -> bool {
        self.nodata_sample().is_some_and(|nd| nd.same(value))
    }
}

impl<T: Sample> PartialEq for GeoRaster<T> {
    fn eq(&self, other: &Self) -> bool {
        let nodata_eq = match (self.nodata, other.nodata) {
            (None, None) => true,
            (Some(a), Some(b)) => a == b || (a.is_nan() && b.is_nan()),
            _ => false,
        };
        nodata_eq
            && self.data.dim() == other.data.dim()
            && self.geotransform == other.geotransform
            && self.crs == other.crs
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.same(*b))
    }
}
