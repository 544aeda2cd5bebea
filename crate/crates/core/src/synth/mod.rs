//! Synthetic before/after scenes with planted loss regions.
//!
//! A scene is a uniform field of healthy vegetation. Inside each loss region
//! the "after" NIR band is lowered so that NDVI falls by the region's drop.
//! The expected mask is known exactly, which lets the whole pipeline be
//! checked end to end.

mod oracle;

use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groundtruth::{ClassMask, BACKGROUND, DEFAULT_THRESHOLD, LOSS, OK};
use crate::raster::{GeoRaster, GeoTransform};

pub use oracle::brute_force_metrics;

/// Planted drops closer than this to the threshold are pushed out to it, so
/// floating-point rounding in the pipeline cannot flip a pixel's class.
pub const THRESHOLD_GUARD: f64 = 1e-3;

/// Nodata value of generated rasters.
pub const SCENE_NODATA: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reflectance {
    pub nir: f64,
    pub red: f64,
    pub green: f64,
    pub blue: f64,
}

impl Default for Reflectance {
    fn default() -> Self {
        Self {
            nir: 0.60,
            red: 0.10,
            green: 0.08,
            blue: 0.05,
        }
    }
}

impl Reflectance {
    pub fn ndvi(&self) -> f64 {
        (self.nir - self.red) / (self.nir + self.red)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    /// Pixel rectangle `[x, x + width) x [y, y + height)`.
    Rect {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    /// Ellipse in pixel coordinates, tested at pixel centres.
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
}

impl Shape {
    /// Normalised distance from the centre, `<= 1` inside the shape.
    fn distance(&self, row: usize, col: usize) -> Option<f64> {
        let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
        let d = match *self {
            Shape::Rect {
                x: x0,
                y: y0,
                width,
                height,
            } => {
                if col < x0 || col >= x0 + width || row < y0 || row >= y0 + height {
                    return None;
                }
                let (hw, hh) = (width as f64 / 2.0, height as f64 / 2.0);
                let dx = (x - (x0 as f64 + hw)).abs() / hw;
                let dy = (y - (y0 as f64 + hh)).abs() / hh;
                dx.max(dy)
            }
            Shape::Ellipse { cx, cy, rx, ry } => {
                let d = (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt();
                if d > 1.0 {
                    return None;
                }
                d
            }
        };
        Some(d.min(1.0))
    }

    fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        let inside = match *self {
            Shape::Rect {
                x,
                y,
                width: w,
                height: h,
            } => w > 0 && h > 0 && x + w <= width && y + h <= height,
            Shape::Ellipse { cx, cy, rx, ry } => {
                rx > 0.0
                    && ry > 0.0
                    && cx - rx >= 0.0
                    && cy - ry >= 0.0
                    && cx + rx <= width as f64
                    && cy + ry <= height as f64
            }
        };
        if inside {
            Ok(())
        } else {
            Err(Error::InvalidScene(format!(
                "region {self:?} is empty or outside the {width}x{height} raster"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Uniform drop over the whole region.
    #[default]
    Hailstorm,
    /// Drop fades linearly from the centre value to `edge_drop` at the rim.
    Heatwave,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRegion {
    #[serde(flatten)]
    pub shape: Shape,
    /// NDVI drop at the region centre.
    pub drop: f64,
    #[serde(default)]
    pub profile: Profile,
    /// Rim drop for the heatwave profile; defaults to a tenth of `drop`.
    #[serde(default)]
    pub edge_drop: Option<f64>,
}

impl LossRegion {
    fn drop_at(&self, row: usize, col: usize) -> Option<f64> {
        let d = self.shape.distance(row, col)?;
        Some(match self.profile {
            Profile::Hailstorm => self.drop,
            Profile::Heatwave => {
                let edge = self.edge_drop.unwrap_or(self.drop / 10.0);
                self.drop + (edge - self.drop) * d
            }
        })
    }
}

fn default_district() -> String {
    "synthetic".into()
}

fn default_name() -> String {
    "scene".into()
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_crs() -> String {
    "EPSG:32646".into()
}

fn default_geotransform() -> GeoTransform {
    GeoTransform::north_up(600_000.0, 2_750_000.0, 10.0, -10.0)
}

fn default_scale() -> f64 {
    10_000.0
}

/// Scene description, usually loaded from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_district")]
    pub district: String,
    #[serde(default)]
    pub base: Reflectance,
    #[serde(default)]
    pub regions: Vec<LossRegion>,
    /// Uniform noise amplitude in reflectance units, drawn per band and date.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub nodata_border: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_crs")]
    pub crs: String,
    #[serde(default = "default_geotransform")]
    pub geotransform: GeoTransform,
    #[serde(default = "default_scale")]
    pub reflectance_scale: f64,
}

impl SceneSpec {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            name: default_name(),
            width,
            height,
            district: default_district(),
            base: Reflectance::default(),
            regions: Vec::new(),
            noise: 0.0,
            nodata_border: 0,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            crs: default_crs(),
            geotransform: default_geotransform(),
            reflectance_scale: default_scale(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScene(msg));
        if self.width == 0 || self.height == 0 {
            return bad(format!("empty raster {}x{}", self.width, self.height));
        }
        let b = self.base;
        if [b.nir, b.red, b.green, b.blue]
            .iter()
            .any(|v| !(v.is_finite() && *v > 0.0 && *v <= 1.0))
        {
            return bad(format!("base reflectance must lie in (0, 1]: {b:?}"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!("noise must be non-negative, got {}", self.noise));
        }
        if !(self.reflectance_scale.is_finite() && self.reflectance_scale > 0.0) {
            return bad(format!("bad reflectance scale {}", self.reflectance_scale));
        }
        if !self.threshold.is_finite() {
            return bad("threshold must be finite".into());
        }
        // the after NDVI must stay at or above -1
        let max_drop = b.ndvi() + 1.0;
        for r in &self.regions {
            r.shape.check_bounds(self.width, self.height)?;
            let edge = r.edge_drop.unwrap_or(r.drop / 10.0);
            for d in [r.drop, edge] {
                if !(d.is_finite() && d > 0.0 && d <= max_drop) {
                    return bad(format!("drop {d} must lie in (0, {max_drop:.4}]"));
                }
            }
        }
        self.geotransform.check_north_up()
    }
}

pub fn load_scene_specs(path: impl AsRef<Path>) -> Result<Vec<SceneSpec>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(Box<SceneSpec>),
        Many(Vec<SceneSpec>),
    }
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed: OneOrMany = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let specs = match parsed {
        OneOrMany::One(s) => vec![*s],
        OneOrMany::Many(v) => v,
    };
    if specs.is_empty() {
        return Err(Error::EmptyInput(format!("{}: no scenes", path.display())));
    }
    specs.iter().try_for_each(SceneSpec::validate)?;
    Ok(specs)
}

#[derive(Debug, Clone)]
pub struct Scene {
    /// `[blue, green, red, nir]` digital numbers.
    pub before: GeoRaster<f32>,
    pub after: GeoRaster<f32>,
    pub expected: ClassMask,
}

fn snap(drop: f64, threshold: f64) -> f64 {
    if (drop - threshold).abs() >= THRESHOLD_GUARD {
        drop
    } else if drop >= threshold {
        threshold + THRESHOLD_GUARD
    } else {
        threshold - THRESHOLD_GUARD
    }
}

/// NIR reflectance giving `ndvi` with the given red reflectance.
fn nir_for(ndvi: f64, red: f64) -> f64 {
    (red * (1.0 + ndvi) / (1.0 - ndvi)).max(0.0)
}

/// Builds the before/after rasters and the expected class mask.
///
/// Where regions overlap the largest drop wins. Output is a pure function of
/// the spec.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let base = spec.base;
    let base_ndvi = base.ndvi();
    let scale = spec.reflectance_scale;
    let border = spec.nodata_border;
    let in_border = |row: usize, col: usize| {
        row < border || col < border || row + border >= h || col + border >= w
    };

    let mut drops = Array2::<f64>::zeros((h, w));
    let mut expected = Array2::<u8>::from_elem((h, w), OK);
    for ((row, col), px) in expected.indexed_iter_mut() {
        if in_border(row, col) {
            *px = BACKGROUND;
            continue;
        }
        let planted = spec
            .regions
            .iter()
            .filter_map(|r| r.drop_at(row, col))
            .fold(None, |acc: Option<f64>, d| {
                Some(acc.map_or(d, |a| a.max(d)))
            });
        if let Some(d) = planted {
            let d = snap(d, spec.threshold);
            drops[[row, col]] = d;
            if d >= spec.threshold {
                *px = LOSS;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut noisy = |v: f64| -> f32 {
        let v = if spec.noise > 0.0 {
            v + rng.random_range(-spec.noise..=spec.noise)
        } else {
            v
        };
        // keep valid pixels away from the nodata value
        ((v * scale).max(1.0)) as f32
    };
    let mut before = Array3::<f32>::zeros((4, h, w));
    let mut after = Array3::<f32>::zeros((4, h, w));
    for row in 0..h {
        for col in 0..w {
            if in_border(row, col) {
                continue;
            }
            let nir_after = match drops[[row, col]] {
                d if d > 0.0 => nir_for(base_ndvi - d, base.red),
                _ => base.nir,
            };
            let b = [base.blue, base.green, base.red, base.nir];
            let a = [base.blue, base.green, base.red, nir_after];
            for band in 0..4 {
                before[[band, row, col]] = noisy(b[band]);
                after[[band, row, col]] = noisy(a[band]);
            }
        }
    }

    let nodata = Some(SCENE_NODATA);
    let before = GeoRaster::new(before, spec.geotransform, spec.crs.clone(), nodata)?;
    let after = GeoRaster::new(after, spec.geotransform, spec.crs.clone(), nodata)?;
    let expected = ClassMask::from_indices(expected, spec.geotransform, spec.crs.clone())?;
    Ok(Scene {
        before,
        after,
        expected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bands::{compute_ndvi, temporal_difference, BandAssignment};
    use crate::groundtruth::threshold_classify;

    fn spec_with(regions: Vec<LossRegion>) -> SceneSpec {
        let mut s = SceneSpec::new(64, 48);
        s.regions = regions;
        s.nodata_border = 2;
        s
    }

    fn rect(x: usize, y: usize, w: usize, h: usize, drop: f64) -> LossRegion {
        LossRegion {
            shape: Shape::Rect {
                x,
                y,
                width: w,
                height: h,
            },
            drop,
            profile: Profile::Hailstorm,
            edge_drop: None,
        }
    }

    fn pipeline(scene: &Scene, threshold: f32) -> ClassMask {
        let bands = BandAssignment::default();
        let nb = compute_ndvi::<f32, f32>(&scene.before, &bands).unwrap();
        let na = compute_ndvi::<f32, f32>(&scene.after, &bands).unwrap();
        threshold_classify(&temporal_difference(&nb, &na).unwrap(), threshold).unwrap()
    }

    #[test]
    fn healthy_base_ndvi() {
        assert!((Reflectance::default().ndvi() - 0.7143).abs() < 5e-5);
    }

    #[test]
    fn planted_classes() {
        let spec = spec_with(vec![rect(10, 10, 8, 8, 0.5), rect(30, 10, 8, 8, 0.30)]);
        let scene = generate_scene(&spec).unwrap();
        let m = scene.expected.indices();
        assert_eq!(m[[12, 12]], LOSS);
        assert_eq!(m[[12, 32]], OK);
        assert_eq!(m[[0, 0]], BACKGROUND);
        assert_eq!(m[[47, 63]], BACKGROUND);
        assert_eq!(m[[40, 40]], OK);
        assert_eq!(pipeline(&scene, 0.33).indices(), m);
        assert_eq!(scene.before.get(0, 0, 0), 0.0);
        assert_eq!(scene.before.get(3, 40, 40), scene.after.get(3, 40, 40));
    }

    #[test]
    fn near_threshold_drops_survive_rounding() {
        let spec = spec_with(vec![
            rect(4, 4, 6, 6, 0.33),
            rect(12, 4, 6, 6, 0.33 - 1e-9),
            rect(20, 4, 6, 6, 0.3305),
        ]);
        let scene = generate_scene(&spec).unwrap();
        let m = scene.expected.indices();
        assert_eq!((m[[5, 5]], m[[5, 13]], m[[5, 21]]), (LOSS, OK, LOSS));
        assert_eq!(pipeline(&scene, 0.33).indices(), m);
    }

    #[test]
    fn heatwave_straddles_threshold() {
        let region = LossRegion {
            shape: Shape::Ellipse {
                cx: 32.0,
                cy: 24.0,
                rx: 16.0,
                ry: 12.0,
            },
            drop: 0.6,
            profile: Profile::Heatwave,
            edge_drop: Some(0.05),
        };
        let scene = generate_scene(&spec_with(vec![region])).unwrap();
        let h = scene.expected.histogram(3);
        assert!(h[LOSS as usize] > 0);
        let m = scene.expected.indices();
        assert_eq!(m[[24, 32]], LOSS);
        assert_eq!(m[[24, 17]], OK);
        assert_eq!(pipeline(&scene, 0.33).indices(), m);
    }

    #[test]
    fn deterministic_with_noise() {
        let mut spec = spec_with(vec![rect(10, 10, 8, 8, 0.5)]);
        spec.noise = 0.01;
        spec.seed = 42;
        let a = generate_scene(&spec).unwrap();
        let b = generate_scene(&spec).unwrap();
        assert_eq!(a.before, b.before);
        assert_eq!(a.after, b.after);
        spec.seed = 43;
        assert_ne!(generate_scene(&spec).unwrap().before, a.before);
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_scene(&spec_with(vec![rect(60, 0, 8, 8, 0.5)])).is_err());
        assert!(generate_scene(&spec_with(vec![rect(0, 0, 8, 8, -0.1)])).is_err());
        assert!(generate_scene(&spec_with(vec![rect(0, 0, 8, 8, 1.8)])).is_err());
        let mut s = SceneSpec::new(0, 4);
        assert!(s.validate().is_err());
        s.width = 4;
        s.noise = -1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn json_specs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        std::fs::write(
            &p,
            r#"{"width": 32, "height": 32, "seed": 3, "regions": [
                {"shape": "rect", "x": 2, "y": 2, "width": 4, "height": 4, "drop": 0.5},
                {"shape": "ellipse", "cx": 16, "cy": 16, "rx": 5, "ry": 4, "drop": 0.45,
                 "profile": "heatwave", "edge_drop": 0.2}]}"#,
        )
        .unwrap();
        let specs = load_scene_specs(&p).unwrap();
        assert_eq!(specs.len(), 1);
        assert_eq!(specs[0].regions[1].profile, Profile::Heatwave);
        assert_eq!(specs[0].threshold, DEFAULT_THRESHOLD);

        std::fs::write(&p, "[]").unwrap();
        assert!(matches!(load_scene_specs(&p), Err(Error::EmptyInput(_))));
        std::fs::write(&p, r#"{"width": 8}"#).unwrap();
        assert!(matches!(load_scene_specs(&p), Err(Error::Json { .. })));
    }
}
