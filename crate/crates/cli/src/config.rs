use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cropsight::bands::{BandAssignment, ContrastWindow};
use cropsight::groundtruth::{load_classmap, ClassMap, DEFAULT_THRESHOLD};
use serde::{Deserialize, Serialize};

pub const DEFAULT_TILE_SIZE: usize = 256;
pub const MIN_TILE_SIZE: usize = 16;

/// Pipeline settings. Values come from defaults, then the config file, then
/// command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub bands: BandAssignment,
    pub threshold: f64,
    pub tile_size: usize,
    pub class_map: Option<PathBuf>,
    pub contrast: ContrastWindow,
    /// Base directory for relative output paths.
    pub output_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            bands: BandAssignment::default(),
            threshold: DEFAULT_THRESHOLD,
            tile_size: DEFAULT_TILE_SIZE,
            class_map: None,
            contrast: ContrastWindow::default(),
            output_dir: None,
        }
    }
}

/// Flag values that override the config file when given.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// NDVI drop at or above which a pixel is crop loss [default: 0.33]
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub threshold: Option<f64>,
    /// Tile edge in pixels [default: 256]
    #[arg(long, global = true)]
    pub tile_size: Option<usize>,
    /// Class colour table, CSV with header `name,r,g,b`
    #[arg(long, global = true, value_name = "CSV")]
    pub class_map: Option<PathBuf>,
    /// Reflectance mapped to 0 in composites [default: 0]
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub contrast_min: Option<f64>,
    /// Reflectance mapped to 255 in composites [default: 0.3]
    #[arg(long, global = true)]
    pub contrast_max: Option<f64>,
    /// Zero-based band holding near infrared (B8) [default: 3]
    #[arg(long, global = true)]
    pub nir: Option<usize>,
    /// Band holding red (B4) [default: 2]
    #[arg(long, global = true)]
    pub red: Option<usize>,
    /// Band holding green (B3) [default: 1]
    #[arg(long, global = true)]
    pub green: Option<usize>,
    /// Band holding blue (B2) [default: 0]
    #[arg(long, global = true)]
    pub blue: Option<usize>,
    /// Stored value per unit reflectance [default: 10000]
    #[arg(long, global = true)]
    pub reflectance_scale: Option<f64>,
    /// Directory that relative output paths are written under
    #[arg(long, global = true, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
}

impl PipelineConfig {
    /// Reads a TOML file. Relative paths inside it resolve against its directory.
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("config: {}", path.display()))?;
        let mut cfg: Self =
            toml::from_str(&text).with_context(|| format!("config: {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.class_map, &mut cfg.output_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> anyhow::Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, o: &Overrides) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        set(&mut self.threshold, &o.threshold);
        set(&mut self.tile_size, &o.tile_size);
        set(&mut self.contrast.min, &o.contrast_min);
        set(&mut self.contrast.max, &o.contrast_max);
        set(&mut self.bands.nir, &o.nir);
        set(&mut self.bands.red, &o.red);
        set(&mut self.bands.green, &o.green);
        set(&mut self.bands.blue, &o.blue);
        set(&mut self.bands.reflectance_scale, &o.reflectance_scale);
        if o.class_map.is_some() {
            self.class_map = o.class_map.clone();
        }
        if o.output_dir.is_some() {
            self.output_dir = o.output_dir.clone();
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.threshold > -2.0 && self.threshold < 2.0) {
            bail!("threshold {} must lie in (-2, 2)", self.threshold);
        }
        if self.tile_size < MIN_TILE_SIZE {
            bail!(
                "tile size {} is below the minimum of {MIN_TILE_SIZE}",
                self.tile_size
            );
        }
        self.contrast.validate()?;
        // band indices are checked against each raster when it is read
        self.bands.validate(usize::MAX)?;
        Ok(())
    }

    pub fn class_map(&self) -> anyhow::Result<ClassMap> {
        match &self.class_map {
            Some(p) => Ok(load_classmap(p)?),
            None => Ok(ClassMap::default()),
        }
    }

    pub fn output(&self, path: &Path) -> PathBuf {
        match &self.output_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(
            &p,
            "threshold = 0.4\ntile_size = 128\nclass_map = \"classes.csv\"\n[bands]\nnir = 7\n",
        )
        .unwrap();
        let cfg = PipelineConfig::resolve(Some(&p), &Overrides::default()).unwrap();
        assert_eq!(cfg.threshold, 0.4);
        assert_eq!(cfg.tile_size, 128);
        assert_eq!(cfg.bands.nir, 7);
        assert_eq!(cfg.bands.red, 2);
        assert_eq!(cfg.class_map, Some(dir.path().join("classes.csv")));

        let o = Overrides {
            threshold: Some(0.2),
            ..Default::default()
        };
        let cfg = PipelineConfig::resolve(Some(&p), &o).unwrap();
        assert_eq!((cfg.threshold, cfg.tile_size), (0.2, 128));

        let cfg = PipelineConfig::resolve(None, &Overrides::default()).unwrap();
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn invariants() {
        for o in [
            Overrides {
                threshold: Some(2.0),
                ..Default::default()
            },
            Overrides {
                tile_size: Some(8),
                ..Default::default()
            },
            Overrides {
                contrast_max: Some(-1.0),
                ..Default::default()
            },
            Overrides {
                nir: Some(2),
                ..Default::default()
            },
        ] {
            assert!(PipelineConfig::resolve(None, &o).is_err(), "{o:?}");
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "treshold = 0.4\n").unwrap();
        assert!(PipelineConfig::resolve(Some(&p), &Overrides::default()).is_err());
    }
}
