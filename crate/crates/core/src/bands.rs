//! Band composites, NDVI and before/after differencing.

use ndarray::{Array3, Axis, Zip};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::GeoRaster;
use crate::sample::Sample;

/// Nodata marker written into index rasters (NDVI and NDVI differences).
pub const INDEX_NODATA: f64 = -9999.0;

/// Which source bands hold Sentinel-2 B8, B04, B03 and B02, and how stored
/// samples convert to reflectance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandAssignment {
    pub nir: usize,
    pub red: usize,
    pub green: usize,
    pub blue: usize,
    pub reflectance_scale: f64,
}

impl Default for BandAssignment {
    /// Stack exported as `[B02, B03, B04, B08]` in digital numbers.
    fn default() -> Self {
        Self {
            blue: 0,
            green: 1,
            red: 2,
            nir: 3,
            reflectance_scale: 10_000.0,
        }
    }
}

impl BandAssignment {
    pub fn validate(&self, band_count: usize) -> Result<()> {
        let idx = [self.nir, self.red, self.green, self.blue];
        if let Some(&index) = idx.iter().find(|&&i| i >= band_count) {
            return Err(Error::BandOutOfRange {
                index,
                bands: band_count,
            });
        }
        for (i, a) in idx.iter().enumerate() {
            if idx[i + 1..].contains(a) {
                return Err(Error::InvalidBands(format!("band {a} assigned twice")));
            }
        }
        if !(self.reflectance_scale.is_finite() && self.reflectance_scale > 0.0) {
            return Err(Error::InvalidBands(format!(
                "reflectance scale must be positive, got {}",
                self.reflectance_scale
            )));
        }
        Ok(())
    }

    fn check_index(index: usize, band_count: usize) -> Result<()> {
        if index >= band_count {
            Err(Error::BandOutOfRange {
                index,
                bands: band_count,
            })
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositeKind {
    /// True colour: (red, green, blue).
    Rgb,
    /// False colour infrared: (nir, red, green).
    Fci,
}

impl CompositeKind {
    fn source_bands(self, bands: &BandAssignment) -> [usize; 3] {
        match self {
            CompositeKind::Rgb => [bands.red, bands.green, bands.blue],
            CompositeKind::Fci => [bands.nir, bands.red, bands.green],
        }
    }
}

impl std::str::FromStr for CompositeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(CompositeKind::Rgb),
            "fci" => Ok(CompositeKind::Fci),
            other => Err(format!(
                "unknown composite kind {other:?} (expected rgb or fci)"
            )),
        }
    }
}

/// Reflectance range stretched onto 0..=255 in composites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastWindow {
    pub min: f64,
    pub max: f64,
}

impl Default for ContrastWindow {
    fn default() -> Self {
        Self { min: 0.0, max: 0.3 }
    }
}

impl ContrastWindow {
    pub fn validate(&self) -> Result<()> {
        if self.min.is_finite() && self.max.is_finite() && self.max > self.min {
            Ok(())
        } else {
            Err(Error::InvalidBands(format!(
                "contrast window [{}, {}] is empty",
                self.min, self.max
            )))
        }
    }

    fn stretch(&self, reflectance: f64) -> u8 {
        let v = (reflectance - self.min) / (self.max - self.min) * 255.0;
        v.round().clamp(0.0, 255.0) as u8
    }
}

fn float_missing<F: Float>(v: F, nodata: Option<F>) -> bool {
    v.is_nan() || nodata.is_some_and(|nd| v == nd)
}

/// Per-pixel NDVI, `(nir - red) / (nir + red)` on reflectance.
///
/// Pixels where either band is nodata (or NaN), or where `nir + red == 0`,
/// are set to [`INDEX_NODATA`].
pub fn compute_ndvi<T, F>(raster: &GeoRaster<T>, bands: &BandAssignment) -> Result<GeoRaster<F>>
where
    T: Sample,
    F: Float + Send + Sync,
{
    BandAssignment::check_index(bands.nir, raster.bands())?;
    BandAssignment::check_index(bands.red, raster.bands())?;
    let nir = raster.band(bands.nir)?;
    let red = raster.band(bands.red)?;
    let nodata_in = raster.nodata_sample();
    let scale = F::from(bands.reflectance_scale).ok_or_else(|| {
        Error::InvalidBands(format!("bad reflectance scale {}", bands.reflectance_scale))
    })?;
    let nodata_out = F::from(INDEX_NODATA).expect("index nodata is representable");
    let is_missing = |v: T| nodata_in.is_some_and(|nd| nd.same(v)) || v.partial_cmp(&v).is_none();

    let mut out = Array3::from_elem((1, raster.height(), raster.width()), nodata_out);
    Zip::from(out.index_axis_mut(Axis(0), 0))
        .and(&nir)
        .and(&red)
        .par_for_each(|o, &n, &r| {
            if is_missing(n) || is_missing(r) {
                return;
            }
            let (Some(n), Some(r)) = (F::from(n), F::from(r)) else {
                return;
            };
            let (n, r) = (n / scale, r / scale);
            let sum = n + r;
            if sum != F::zero() {
                *o = (n - r) / sum;
            }
        });
    raster.with_data(out, Some(INDEX_NODATA))
}

/// Three-band 8-bit composite with each band stretched over `window`.
///
/// If the source has a nodata value, pixels missing in any chosen band become
/// `(0, 0, 0)` and the output's nodata is 0.
pub fn compose<T: Sample>(
    raster: &GeoRaster<T>,
    kind: CompositeKind,
    bands: &BandAssignment,
    window: &ContrastWindow,
) -> Result<GeoRaster<u8>> {
    window.validate()?;
    let source = kind.source_bands(bands);
    for &b in &source {
        BandAssignment::check_index(b, raster.bands())?;
    }
    let scale = bands.reflectance_scale;
    let nodata_in = raster.nodata_sample();
    let (h, w) = (raster.height(), raster.width());
    let mut out = Array3::<u8>::zeros((3, h, w));
    let data = raster.data();
    Zip::indexed(out.lanes_mut(Axis(0))).par_for_each(|(row, col), mut px| {
        let vals = source.map(|b| data[[b, row, col]]);
        if vals
            .iter()
            .any(|&v| nodata_in.is_some_and(|nd| nd.same(v)) || v.partial_cmp(&v).is_none())
        {
            return;
        }
        for (o, v) in px.iter_mut().zip(vals) {
            *o = window.stretch(v.to_f64().unwrap_or(0.0) / scale);
        }
    });
    let nodata_out = nodata_in.map(|_| 0.0);
    raster.with_data(out, nodata_out)
}

/// Sample types that support before-minus-after differencing.
pub trait Differencing: Copy + Send + Sync {
    /// Difference of two valid samples.
    fn difference(before: Self, after: Self) -> Self;

    fn is_missing(v: Self, nodata: Option<f64>) -> bool;

    /// Value written where either input is missing.
    fn missing_value(nodata: Option<f64>) -> Self;

    /// Nodata recorded on the output given the inputs' nodata values.
    fn output_nodata(before: Option<f64>, after: Option<f64>) -> Option<f64>;
}

macro_rules! float_differencing {
    ($t:ty) => {
        impl Differencing for $t {
            fn difference(before: Self, after: Self) -> Self {
                before - after
            }

            fn is_missing(v: Self, nodata: Option<f64>) -> bool {
                float_missing(v, nodata.map(|n| n as $t))
            }

            fn missing_value(nodata: Option<f64>) -> Self {
                nodata.unwrap_or(INDEX_NODATA) as $t
            }

            fn output_nodata(before: Option<f64>, after: Option<f64>) -> Option<f64> {
                Some(before.or(after).unwrap_or(INDEX_NODATA))
            }
        }
    };
}

float_differencing!(f32);
float_differencing!(f64);

/// 8-bit composites are offset-encoded: `floor((before - after) / 2) + 128`,
/// so no change maps to 128 and the full ±255 range fits in a byte.
impl Differencing for u8 {
    fn difference(before: Self, after: Self) -> Self {
        let d = (before as i16 - after as i16).div_euclid(2) + 128;
        d.clamp(0, 255) as u8
    }

    fn is_missing(v: Self, nodata: Option<f64>) -> bool {
        nodata.and_then(u8::from_nodata).is_some_and(|nd| nd == v)
    }

    fn missing_value(nodata: Option<f64>) -> Self {
        nodata.and_then(u8::from_nodata).unwrap_or(0)
    }

    fn output_nodata(before: Option<f64>, after: Option<f64>) -> Option<f64> {
        before.or(after)
    }
}

/// Per-pixel, per-band `before - after`.
///
/// Both rasters must share dimensions, band count, geotransform and CRS. A
/// pixel missing in either input is missing in the output.
pub fn temporal_difference<T: Differencing>(
    before: &GeoRaster<T>,
    after: &GeoRaster<T>,
) -> Result<GeoRaster<T>> {
    before.check_same_grid(after)?;
    if before.bands() != after.bands() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} bands",
            before.bands(),
            after.bands()
        )));
    }
    let (nd_b, nd_a) = (before.nodata(), after.nodata());
    let nodata = T::output_nodata(nd_b, nd_a);
    let missing = T::missing_value(nodata);
    let mut out = before.data().clone();
    Zip::from(&mut out).and(after.data()).par_for_each(|b, &a| {
        *b = if T::is_missing(*b, nd_b) || T::is_missing(a, nd_a) {
            missing
        } else {
            T::difference(*b, a)
        };
    });
    before.with_data(out, nodata)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;

    fn stack(values: &[[f32; 4]]) -> GeoRaster<f32> {
        let data = Array3::from_shape_fn((4, 1, values.len()), |(b, _, c)| values[c][b]);
        GeoRaster::new(
            data,
            GeoTransform::default(),
            "EPSG:32646",
            Some(INDEX_NODATA),
        )
        .unwrap()
    }

    #[test]
    fn ndvi_examples() {
        // [blue, green, red, nir] in DN
        let r = stack(&[
            [500.0, 800.0, 2000.0, 6000.0],
            [500.0, 800.0, 3000.0, 3000.0],
            [500.0, 800.0, 0.0, 0.0],
            [500.0, 800.0, INDEX_NODATA as f32, 4000.0],
        ]);
        let ndvi: GeoRaster<f64> = compute_ndvi(&r, &BandAssignment::default()).unwrap();
        assert!((ndvi.get(0, 0, 0) - 0.5).abs() < 1e-12);
        assert_eq!(ndvi.get(0, 0, 1), 0.0);
        assert_eq!(ndvi.get(0, 0, 2), INDEX_NODATA);
        assert_eq!(ndvi.get(0, 0, 3), INDEX_NODATA);
        assert_eq!(ndvi.nodata(), Some(INDEX_NODATA));
    }

    #[test]
    fn ndvi_band_out_of_range() {
        let r = stack(&[[1.0; 4]]);
        let bands = BandAssignment {
            nir: 7,
            ..Default::default()
        };
        assert!(matches!(
            compute_ndvi::<f32, f32>(&r, &bands),
            Err(Error::BandOutOfRange { index: 7, bands: 4 })
        ));
    }

    #[test]
    fn assignment_validation() {
        let dup = BandAssignment {
            nir: 2,
            ..Default::default()
        };
        assert!(dup.validate(4).is_err());
        let zero = BandAssignment {
            reflectance_scale: 0.0,
            ..Default::default()
        };
        assert!(zero.validate(4).is_err());
        assert!(BandAssignment::default().validate(4).is_ok());
        assert!(BandAssignment::default().validate(3).is_err());
    }

    #[test]
    fn compose_window() {
        let r = stack(&[[3000.0; 4], [0.0; 4], [1500.0; 4]]);
        for kind in [CompositeKind::Rgb, CompositeKind::Fci] {
            let c = compose(
                &r,
                kind,
                &BandAssignment::default(),
                &ContrastWindow::default(),
            )
            .unwrap();
            assert_eq!(c.bands(), 3);
            for b in 0..3 {
                assert_eq!(c.get(b, 0, 0), 255);
                assert_eq!(c.get(b, 0, 1), 0);
                assert!((c.get(b, 0, 2) as i32 - 128).abs() <= 1);
            }
        }
    }

    #[test]
    fn compose_band_order() {
        let r = stack(&[[300.0, 600.0, 900.0, 1200.0]]);
        let window = ContrastWindow {
            min: 0.0,
            max: 0.255,
        };
        let rgb = compose(&r, CompositeKind::Rgb, &BandAssignment::default(), &window).unwrap();
        let px: Vec<u8> = (0..3).map(|b| rgb.get(b, 0, 0)).collect();
        assert_eq!(px, [90, 60, 30]);
        let fci = compose(&r, CompositeKind::Fci, &BandAssignment::default(), &window).unwrap();
        let px: Vec<u8> = (0..3).map(|b| fci.get(b, 0, 0)).collect();
        assert_eq!(px, [120, 90, 60]);
    }

    #[test]
    fn float_difference() {
        let mk = |v: &[f32]| {
            let data = Array3::from_shape_vec((1, 1, v.len()), v.to_vec()).unwrap();
            GeoRaster::new(data, GeoTransform::default(), "", Some(INDEX_NODATA)).unwrap()
        };
        let before = mk(&[0.7, INDEX_NODATA as f32, 0.1]);
        let after = mk(&[0.2, 0.4, f32::NAN]);
        let d = temporal_difference(&before, &after).unwrap();
        assert!((d.get(0, 0, 0) - 0.5).abs() < 1e-6);
        assert_eq!(d.get(0, 0, 1), INDEX_NODATA as f32);
        assert_eq!(d.get(0, 0, 2), INDEX_NODATA as f32);
        let zero = temporal_difference(&before, &before).unwrap();
        assert_eq!(zero.get(0, 0, 0), 0.0);
    }

    #[test]
    fn byte_difference_offset() {
        assert_eq!(u8::difference(200, 200), 128);
        assert_eq!(u8::difference(255, 0), 255);
        assert_eq!(u8::difference(0, 255), 0);
        assert_eq!(u8::difference(10, 20), 123);
    }

    #[test]
    fn difference_mismatch() {
        let a = GeoRaster::<f32>::filled(2, 2, 1, 0.0, GeoTransform::default(), "").unwrap();
        let b = GeoRaster::<f32>::filled(3, 2, 1, 0.0, GeoTransform::default(), "").unwrap();
        assert!(matches!(
            temporal_difference(&a, &b),
            Err(Error::ShapeMismatch(_))
        ));
        let c = GeoRaster::<f32>::filled(
            2,
            2,
            1,
            0.0,
            GeoTransform::north_up(5.0, 0.0, 1.0, -1.0),
            "",
        )
        .unwrap();
        assert!(matches!(
            temporal_difference(&a, &c),
            Err(Error::GeoreferenceMismatch(_))
        ));
    }
}
