use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{s, Array3};
use num_traits::Zero;
use rayon::prelude::*;

use super::{read_geotiff, write_geotiff, GeoRaster, GeoTransform};
use crate::error::{Error, Result};
use crate::sample::Sample;

/// Grid geometry of a square tiling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileGrid {
    pub tile_size: usize,
    pub cols: usize,
    pub rows: usize,
}

impl TileGrid {
    pub fn for_dims(width: usize, height: usize, tile_size: usize) -> Self {
        assert!(tile_size >= 1, "tile size must be at least 1");
        Self {
            tile_size,
            cols: width.div_ceil(tile_size),
            rows: height.div_ceil(tile_size),
        }
    }

    pub fn padded_dims(&self) -> (usize, usize) {
        (self.cols * self.tile_size, self.rows * self.tile_size)
    }

    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A raster cut into equal square tiles, stored row-major.
#[derive(Debug, Clone)]
pub struct TileSet<T> {
    grid: TileGrid,
    tiles: Vec<GeoRaster<T>>,
    source_width: usize,
    source_height: usize,
    geotransform: GeoTransform,
    crs: String,
}

impl<T: Copy> TileSet<T> {
    /// Assembles a tile set, checking tile sizes, band counts and placement.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        tile_size: usize,
        grid_cols: usize,
        grid_rows: usize,
        tiles: Vec<GeoRaster<T>>,
        source_width: usize,
        source_height: usize,
        geotransform: GeoTransform,
        crs: impl Into<String>,
    ) -> Result<Self> {
        let crs = crs.into();
        let grid = TileGrid::for_dims(source_width, source_height, tile_size);
        if grid.cols != grid_cols || grid.rows != grid_rows {
            return Err(Error::InvalidRaster(format!(
                "grid {grid_cols}x{grid_rows} does not cover {source_width}x{source_height} with tile size {tile_size}"
            )));
        }
        if tiles.len() != grid.len() {
            let row = tiles.len() / grid_cols.max(1);
            return Err(Error::MissingTile {
                row,
                col: tiles.len() % grid_cols.max(1),
            });
        }
        let bands = tiles.first().map(|t| t.bands()).unwrap_or(0);
        let tol_x = geotransform.pixel_width.abs() * 1e-6;
        let tol_y = geotransform.pixel_height.abs() * 1e-6;
        for (i, tile) in tiles.iter().enumerate() {
            let (row, col) = (i / grid_cols, i % grid_cols);
            let bad = |reason: String| Error::InconsistentTile { row, col, reason };
            if tile.width() != tile_size || tile.height() != tile_size {
                return Err(bad(format!(
                    "size {}x{}, expected {tile_size}x{tile_size}",
                    tile.width(),
                    tile.height()
                )));
            }
            if tile.bands() != bands {
                return Err(bad(format!("{} bands, expected {bands}", tile.bands())));
            }
            if tile.crs() != crs {
                return Err(bad(format!("crs {:?}, expected {crs:?}", tile.crs())));
            }
            let expected = geotransform.offset(col * tile_size, row * tile_size);
            let got = tile.geotransform();
            if (got.origin_x - expected.origin_x).abs() > tol_x
                || (got.origin_y - expected.origin_y).abs() > tol_y
                || got.pixel_width != expected.pixel_width
                || got.pixel_height != expected.pixel_height
            {
                return Err(bad(format!(
                    "origin ({}, {}), expected ({}, {})",
                    got.origin_x, got.origin_y, expected.origin_x, expected.origin_y
                )));
            }
        }
        Ok(Self {
            grid,
            tiles,
            source_width,
            source_height,
            geotransform,
            crs,
        })
    }

    pub fn grid(&self) -> TileGrid {
        self.grid
    }

    pub fn tile_size(&self) -> usize {
        self.grid.tile_size
    }

    pub fn grid_cols(&self) -> usize {
        self.grid.cols
    }

    pub fn grid_rows(&self) -> usize {
        self.grid.rows
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn tiles(&self) -> &[GeoRaster<T>] {
        &self.tiles
    }

    pub fn tile(&self, row: usize, col: usize) -> Option<&GeoRaster<T>> {
        if row < self.grid.rows && col < self.grid.cols {
            self.tiles.get(row * self.grid.cols + col)
        } else {
            None
        }
    }

    /// Replaces one tile; the replacement must share the original's georeference.
    pub fn replace_tile(&mut self, row: usize, col: usize, tile: GeoRaster<T>) -> Result<()> {
        let current = self.tile(row, col).ok_or(Error::MissingTile { row, col })?;
        if !current.same_grid(&tile) || current.bands() != tile.bands() {
            return Err(Error::InconsistentTile {
                row,
                col,
                reason: "replacement differs in size, bands or georeference".into(),
            });
        }
        self.tiles[row * self.grid.cols + col] = tile;
        Ok(())
    }

    /// Iterates `(row, col, tile)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &GeoRaster<T>)> {
        let cols = self.grid.cols;
        self.tiles
            .iter()
            .enumerate()
            .map(move |(i, t)| (i / cols, i % cols, t))
    }

    pub fn source_dims(&self) -> (usize, usize) {
        (self.source_width, self.source_height)
    }

    /// Sets the pre-padding extent used by a cropping merge. The grid must be
    /// exactly the one that extent would produce.
    pub fn set_source_dims(&mut self, width: usize, height: usize) -> Result<()> {
        let grid = TileGrid::for_dims(width, height, self.grid.tile_size);
        if grid != self.grid {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height} does not tile into a {}x{} grid of {} px tiles",
                self.grid.cols, self.grid.rows, self.grid.tile_size
            )));
        }
        self.source_width = width;
        self.source_height = height;
        Ok(())
    }

    pub fn geotransform(&self) -> &GeoTransform {
        &self.geotransform
    }

    pub fn crs(&self) -> &str {
        &self.crs
    }
}

/// Zero-pads on the right and bottom up to the next multiple of `tile_size`.
pub fn pad_to_multiple<T: Copy + Zero>(raster: &GeoRaster<T>, tile_size: usize) -> GeoRaster<T> {
    let grid = TileGrid::for_dims(raster.width(), raster.height(), tile_size);
    let (w, h) = grid.padded_dims();
    if (w, h) == (raster.width(), raster.height()) {
        return raster.clone();
    }
    let mut data = Array3::zeros((raster.bands(), h, w));
    data.slice_mut(s![.., ..raster.height(), ..raster.width()])
        .assign(raster.data());
    raster
        .with_data(data, raster.nodata())
        .expect("padding preserves raster invariants")
}

/// Splits a raster whose dimensions are multiples of `tile_size`.
pub fn split_tiles<T: Copy + Zero + Send + Sync>(
    raster: &GeoRaster<T>,
    tile_size: usize,
) -> Result<TileSet<T>> {
    if tile_size == 0
        || !raster.width().is_multiple_of(tile_size)
        || !raster.height().is_multiple_of(tile_size)
    {
        return Err(Error::NotTileMultiple {
            width: raster.width(),
            height: raster.height(),
            tile_size,
        });
    }
    cut_tiles(raster, tile_size)
}

/// Splits with zero padding on the right and bottom, recording the
/// pre-padding dimensions. Same tiles as [`pad_to_multiple`] then
/// [`split_tiles`], without materialising the padded raster.
pub fn tile_raster<T: Copy + Zero + Send + Sync>(
    raster: &GeoRaster<T>,
    tile_size: usize,
) -> Result<TileSet<T>> {
    if tile_size == 0 {
        return Err(Error::NotTileMultiple {
            width: raster.width(),
            height: raster.height(),
            tile_size,
        });
    }
    cut_tiles(raster, tile_size)
}

fn cut_tiles<T: Copy + Zero + Send + Sync>(
    raster: &GeoRaster<T>,
    tile_size: usize,
) -> Result<TileSet<T>> {
    let (source_width, source_height) = (raster.width(), raster.height());
    let TileGrid { cols, rows, .. } = TileGrid::for_dims(source_width, source_height, tile_size);
    let gt = *raster.geotransform();
    let tiles = (0..rows * cols)
        .into_par_iter()
        .map(|i| {
            let (row, col) = (i / cols, i % cols);
            let (y, x) = (row * tile_size, col * tile_size);
            let (y1, x1) = (
                (y + tile_size).min(source_height),
                (x + tile_size).min(source_width),
            );
            let window = raster.data().slice(s![.., y..y1, x..x1]);
            let data = if (y1 - y, x1 - x) == (tile_size, tile_size) {
                window.to_owned()
            } else {
                let mut data = Array3::zeros((raster.bands(), tile_size, tile_size));
                data.slice_mut(s![.., ..y1 - y, ..x1 - x]).assign(&window);
                data
            };
            GeoRaster::new(data, gt.offset(x, y), raster.crs(), raster.nodata())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TileSet {
        grid: TileGrid {
            tile_size,
            cols,
            rows,
        },
        tiles,
        source_width,
        source_height,
        geotransform: gt,
        crs: raster.crs().to_string(),
    })
}

/// Reassembles tiles into one raster with the source georeference.
///
/// The output has the padded dimensions unless `crop` is set, in which case
/// it is cut back to the recorded source width and height.
pub fn merge_tiles<T: Copy + Zero>(tiles: &TileSet<T>, crop: bool) -> Result<GeoRaster<T>> {
    let ts = tiles.tile_size();
    let (w, h) = tiles.grid.padded_dims();
    let first = tiles
        .tiles
        .first()
        .ok_or(Error::MissingTile { row: 0, col: 0 })?;
    let mut data = Array3::zeros((first.bands(), h, w));
    for (row, col, tile) in tiles.iter() {
        data.slice_mut(s![.., row * ts..(row + 1) * ts, col * ts..(col + 1) * ts])
            .assign(tile.data());
    }
    if crop {
        data = data
            .slice(s![.., ..tiles.source_height, ..tiles.source_width])
            .to_owned();
    }
    GeoRaster::new(data, tiles.geotransform, tiles.crs.clone(), first.nodata())
}

pub fn tile_file_name(stem: &str, row: usize, col: usize) -> String {
    format!("{stem}_r{row:03}_c{col:03}.tif")
}

/// Splits `{stem}_r{row}_c{col}.tif` into its parts.
pub fn parse_tile_name(name: &str) -> Option<(&str, usize, usize)> {
    let base = name.strip_suffix(".tif")?;
    let (rest, col) = base.rsplit_once("_c")?;
    let (stem, row) = rest.rsplit_once("_r")?;
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(row) || !digits(col) {
        return None;
    }
    Some((stem, row.parse().ok()?, col.parse().ok()?))
}

/// Writes each tile as `{stem}_r{row:03}_c{col:03}.tif` under `dir`.
pub fn write_tiles<T: Sample>(
    tiles: &TileSet<T>,
    dir: impl AsRef<Path>,
    stem: &str,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let cols = tiles.grid_cols();
    tiles
        .tiles
        .par_iter()
        .enumerate()
        .map(|(i, tile)| {
            let path = dir.join(tile_file_name(stem, i / cols, i % cols));
            write_geotiff(tile, &path)?;
            Ok(path)
        })
        .collect()
}

/// Loads every tile file in `dir` into a [`TileSet`].
///
/// All tiles must share one stem. The source dimensions are taken to be the
/// padded dimensions since the original size is not recorded in tile files.
pub fn read_tile_dir<T: Sample>(dir: impl AsRef<Path>) -> Result<TileSet<T>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found: BTreeMap<(usize, usize), PathBuf> = BTreeMap::new();
    let mut stem: Option<String> = None;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some((s, row, col)) = parse_tile_name(name) else {
            continue;
        };
        match &stem {
            None => stem = Some(s.to_string()),
            Some(existing) if existing != s => {
                return Err(Error::InvalidRaster(format!(
                    "{}: mixed tile stems {existing:?} and {s:?}",
                    dir.display()
                )))
            }
            _ => {}
        }
        found.insert((row, col), entry.path());
    }
    if found.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no tile files in {}",
            dir.display()
        )));
    }
    let rows = found.keys().map(|k| k.0).max().unwrap_or(0) + 1;
    let cols = found.keys().map(|k| k.1).max().unwrap_or(0) + 1;
    let mut paths = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            paths.push(
                found
                    .remove(&(row, col))
                    .ok_or(Error::MissingTile { row, col })?,
            );
        }
    }
    let tiles = paths
        .par_iter()
        .map(read_geotiff::<T>)
        .collect::<Result<Vec<_>>>()?;
    let ts = tiles[0].width();
    let gt = *tiles[0].geotransform();
    let crs = tiles[0].crs().to_string();
    TileSet::new(ts, cols, rows, tiles, cols * ts, rows * ts, gt, crs)
}
