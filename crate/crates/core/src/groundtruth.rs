//! Three-class ground-truth masks from NDVI differences, and their
//! colour rendering.

use std::collections::HashMap;
use std::path::Path;

use log::warn;
use ndarray::parallel::prelude::*;
use ndarray::{Array2, Array3, Axis, Zip};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{read_geotiff, GeoRaster, GeoTransform};

pub const BACKGROUND: u8 = 0;
pub const LOSS: u8 = 1;
pub const OK: u8 = 2;

/// Default NDVI-difference threshold at or above which a pixel is crop loss.
pub const DEFAULT_THRESHOLD: f64 = 0.33;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub name: String,
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl ClassEntry {
    pub fn new(name: impl Into<String>, [r, g, b]: [u8; 3]) -> Self {
        Self {
            name: name.into(),
            r,
            g,
            b,
        }
    }

    pub fn color(&self) -> [u8; 3] {
        [self.r, self.g, self.b]
    }
}

/// Ordered classes; index 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    classes: Vec<ClassEntry>,
}

impl Default for ClassMap {
    fn default() -> Self {
        Self {
            classes: vec![
                ClassEntry::new("background", [0, 0, 0]),
                ClassEntry::new("crop compromised", [222, 33, 0]),
                ClassEntry::new("rest of areas", [222, 225, 45]),
            ],
        }
    }
}

impl ClassMap {
    pub fn new(classes: Vec<ClassEntry>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::ClassMap("no classes".into()));
        }
        if classes.len() > 256 {
            return Err(Error::ClassMap(format!(
                "{} classes, at most 256",
                classes.len()
            )));
        }
        for (i, a) in classes.iter().enumerate() {
            if let Some(b) = classes[i + 1..].iter().find(|b| b.color() == a.color()) {
                return Err(Error::ClassMap(format!(
                    "duplicate color {:?} for {:?} and {:?}",
                    a.color(),
                    a.name,
                    b.name
                )));
            }
        }
        Ok(Self { classes })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassEntry] {
        &self.classes
    }

    pub fn names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn color(&self, index: u8) -> Option<[u8; 3]> {
        self.classes.get(index as usize).map(ClassEntry::color)
    }

    /// Index of the class whose colour equals `rgb` exactly.
    pub fn exact(&self, rgb: [u8; 3]) -> Option<u8> {
        self.classes
            .iter()
            .position(|c| c.color() == rgb)
            .map(|i| i as u8)
    }

    /// Class with the nearest colour in RGB space; ties go to the lower index.
    pub fn nearest(&self, rgb: [u8; 3]) -> u8 {
        let dist = |c: [u8; 3]| -> u32 {
            c.iter()
                .zip(rgb)
                .map(|(&a, b)| (a as i32 - b as i32).pow(2) as u32)
                .sum()
        };
        self.classes
            .iter()
            .enumerate()
            .min_by_key(|(i, c)| (dist(c.color()), *i))
            .map(|(i, _)| i as u8)
            .unwrap_or(BACKGROUND)
    }
}

#[derive(Debug, Deserialize)]
struct ClassRow {
    name: String,
    r: i64,
    g: i64,
    b: i64,
}

/// Reads a class map CSV with header `name,r,g,b`, one class per row.
pub fn load_classmap(path: impl AsRef<Path>) -> Result<ClassMap> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["name", "r", "g", "b"] {
        return Err(Error::ClassMap(format!(
            "{}: expected header name,r,g,b, found {}",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut classes = Vec::new();
    for row in reader.deserialize::<ClassRow>() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let mut rgb = [0u8; 3];
        for (slot, v) in rgb.iter_mut().zip([row.r, row.g, row.b]) {
            *slot = u8::try_from(v).map_err(|_| {
                Error::ClassMap(format!(
                    "{}: color component {v} of {:?} is outside 0..=255",
                    path.display(),
                    row.name
                ))
            })?;
        }
        classes.push(ClassEntry::new(row.name, rgb));
    }
    ClassMap::new(classes)
}

pub fn write_classmap(classes: &ClassMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for c in classes.classes() {
        writer.serialize(c).map_err(|e| Error::csv(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Single-band 8-bit raster of class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMask(GeoRaster<u8>);

impl ClassMask {
    pub fn new(raster: GeoRaster<u8>) -> Result<Self> {
        if raster.bands() != 1 {
            return Err(Error::InvalidRaster(format!(
                "class mask must have 1 band, found {}",
                raster.bands()
            )));
        }
        Ok(Self(raster.with_nodata(None)))
    }

    pub fn from_indices(
        indices: Array2<u8>,
        geotransform: GeoTransform,
        crs: impl Into<String>,
    ) -> Result<Self> {
        let data = indices.insert_axis(Axis(0));
        Self::new(GeoRaster::new(data, geotransform, crs, None)?)
    }

    pub fn raster(&self) -> &GeoRaster<u8> {
        &self.0
    }

    pub fn into_raster(self) -> GeoRaster<u8> {
        self.0
    }

    pub fn indices(&self) -> ndarray::ArrayView2<'_, u8> {
        self.0.data().index_axis(Axis(0), 0)
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self.indices().iter().find(|&&v| v as usize >= classes) {
            Some(&index) => Err(Error::ClassIndexOutOfRange { index, classes }),
            None => Ok(()),
        }
    }

    /// Pixel count per class index, `classes` entries long.
    pub fn histogram(&self, classes: usize) -> Vec<u64> {
        let mut h = vec![0u64; classes.max(256)];
        for &v in self.indices() {
            h[v as usize] += 1;
        }
        h.truncate(classes);
        h
    }
}

/// Labels each pixel: `>= threshold` is [`LOSS`], below is [`OK`], nodata
/// (or NaN) is [`BACKGROUND`]. Only the first band is used.
pub fn threshold_classify<F>(diff: &GeoRaster<F>, threshold: F) -> Result<ClassMask>
where
    F: Float + Send + Sync,
{
    let nodata = diff.nodata().and_then(F::from);
    let band = diff.band(0)?;
    let mut out = Array2::<u8>::zeros((diff.height(), diff.width()));
    Zip::from(&mut out).and(&band).par_for_each(|o, &v| {
        *o = if v.is_nan() || nodata == Some(v) {
            BACKGROUND
        } else if v >= threshold {
            LOSS
        } else {
            OK
        };
    });
    ClassMask::from_indices(out, *diff.geotransform(), diff.crs())
}

/// Paints every pixel with its class colour.
pub fn render_mask(mask: &ClassMask, classes: &ClassMap) -> Result<GeoRaster<u8>> {
    mask.check_classes(classes.len())?;
    let mut out = Array3::<u8>::zeros((3, mask.height(), mask.width()));
    let indices = mask.indices();
    Zip::from(out.lanes_mut(Axis(0)))
        .and(&indices)
        .par_for_each(|mut px, &i| {
            let c = classes.color(i).expect("checked above");
            px.iter_mut().zip(c).for_each(|(o, v)| *o = v);
        });
    mask.raster().with_data(out, None)
}

#[derive(Debug, Clone)]
pub struct ParsedMask {
    pub mask: ClassMask,
    /// Pixels whose colour matched no class exactly and were snapped to the nearest.
    pub unmatched: u64,
}

/// Maps a rendered raster back to class indices.
///
/// The first three bands are read as RGB; any further band (such as alpha)
/// is ignored. Colours that match no class are assigned the nearest class
/// colour and counted in [`ParsedMask::unmatched`].
pub fn parse_mask(rendered: &GeoRaster<u8>, classes: &ClassMap) -> Result<ParsedMask> {
    if rendered.bands() < 3 {
        return Err(Error::InvalidRaster(format!(
            "rendered mask needs 3 bands, found {}",
            rendered.bands()
        )));
    }
    let lookup: HashMap<[u8; 3], u8> = classes
        .classes()
        .iter()
        .enumerate()
        .map(|(i, c)| (c.color(), i as u8))
        .collect();
    let rgb = rendered.data().slice(ndarray::s![..3, .., ..]);
    let mut out = Array2::<u8>::zeros((rendered.height(), rendered.width()));
    let unmatched: u64 = out
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .map(|(row, mut line)| {
            let mut misses = 0;
            for (col, o) in line.iter_mut().enumerate() {
                let px = [rgb[[0, row, col]], rgb[[1, row, col]], rgb[[2, row, col]]];
                *o = match lookup.get(&px) {
                    Some(&i) => i,
                    None => {
                        misses += 1;
                        classes.nearest(px)
                    }
                };
            }
            misses
        })
        .sum();
    let mask = ClassMask::from_indices(out, *rendered.geotransform(), rendered.crs())?;
    Ok(ParsedMask { mask, unmatched })
}

/// Loads a mask file that is either single-band class indices or an RGB(A)
/// rendering.
pub fn load_mask(path: impl AsRef<Path>, classes: &ClassMap) -> Result<ClassMask> {
    let path = path.as_ref();
    let raster = read_geotiff::<u8>(path)?;
    match raster.bands() {
        1 => {
            let mask = ClassMask::new(raster)?;
            mask.check_classes(classes.len())?;
            Ok(mask)
        }
        3 | 4 => {
            let parsed = parse_mask(&raster, classes)?;
            if parsed.unmatched > 0 {
                warn!(
                    "{}: {} pixel(s) matched no class color exactly",
                    path.display(),
                    parsed.unmatched
                );
            }
            Ok(parsed.mask)
        }
        n => Err(Error::InvalidRaster(format!(
            "{}: mask must have 1, 3 or 4 bands, found {n}",
            path.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diff(values: &[f32]) -> GeoRaster<f32> {
        let data = Array3::from_shape_vec((1, 1, values.len()), values.to_vec()).unwrap();
        GeoRaster::new(data, GeoTransform::default(), "EPSG:32646", Some(-9999.0)).unwrap()
    }

    #[test]
    fn threshold_boundary_is_inclusive() {
        let d = diff(&[0.33, 0.3299, -9999.0, f32::NAN, 1.2, -0.5]);
        let m = threshold_classify(&d, 0.33f32).unwrap();
        assert_eq!(
            m.indices().iter().copied().collect::<Vec<_>>(),
            [LOSS, OK, BACKGROUND, BACKGROUND, LOSS, OK]
        );
    }

    #[test]
    fn render_default_colors() {
        let m = ClassMask::from_indices(
            Array2::from_shape_vec((1, 3), vec![LOSS, OK, BACKGROUND]).unwrap(),
            GeoTransform::default(),
            "",
        )
        .unwrap();
        let r = render_mask(&m, &ClassMap::default()).unwrap();
        let px = |c| [r.get(0, 0, c), r.get(1, 0, c), r.get(2, 0, c)];
        assert_eq!(px(0), [222, 33, 0]);
        assert_eq!(px(1), [222, 225, 45]);
        assert_eq!(px(2), [0, 0, 0]);
        let back = parse_mask(&r, &ClassMap::default()).unwrap();
        assert_eq!(back.mask, m);
        assert_eq!(back.unmatched, 0);
    }

    #[test]
    fn render_rejects_bad_index() {
        let m =
            ClassMask::from_indices(Array2::from_elem((1, 1), 3u8), GeoTransform::default(), "")
                .unwrap();
        assert!(matches!(
            render_mask(&m, &ClassMap::default()),
            Err(Error::ClassIndexOutOfRange {
                index: 3,
                classes: 3
            })
        ));
    }

    #[test]
    fn parse_nearest_color() {
        let data =
            Array3::from_shape_vec((3, 1, 3), vec![0, 222, 220, 0, 33, 30, 0, 0, 2]).unwrap();
        let r = GeoRaster::new(data, GeoTransform::default(), "", None).unwrap();
        let parsed = parse_mask(&r, &ClassMap::default()).unwrap();
        assert_eq!(
            parsed.mask.indices().iter().copied().collect::<Vec<_>>(),
            [BACKGROUND, LOSS, LOSS]
        );
        assert_eq!(parsed.unmatched, 1);
    }

    #[test]
    fn classmap_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("classes.csv");
        write_classmap(&ClassMap::default(), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("name,r,g,b\n"));
        assert_eq!(load_classmap(&p).unwrap(), ClassMap::default());

        std::fs::write(&p, "name,r,g,b\nbackground,0,0,0\nloss,0,0,0\n").unwrap();
        assert!(matches!(load_classmap(&p), Err(Error::ClassMap(_))));

        std::fs::write(&p, "name,r,g,b\nbackground,0,0,0\nloss,256,0,0\n").unwrap();
        assert!(matches!(load_classmap(&p), Err(Error::ClassMap(_))));

        std::fs::write(&p, "name,r,g,b\nbackground,0,0\n").unwrap();
        assert!(matches!(load_classmap(&p), Err(Error::Csv { .. })));

        std::fs::write(&p, "label,r,g,b\nbackground,0,0,0\n").unwrap();
        assert!(matches!(load_classmap(&p), Err(Error::ClassMap(_))));

        std::fs::write(&p, "name,r,g,b\nbackground,0,0,0\nfield,255,255,255\n").unwrap();
        let two = load_classmap(&p).unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(two.names(), ["background", "field"]);
    }

    #[test]
    fn histogram_counts() {
        let m = ClassMask::from_indices(
            Array2::from_shape_vec((2, 2), vec![0, 1, 1, 2]).unwrap(),
            GeoTransform::default(),
            "",
        )
        .unwrap();
        assert_eq!(m.histogram(3), [1, 2, 1]);
    }
}
