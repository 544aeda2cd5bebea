//! Tile-level dataset manifest.
//!
//! Tiles live under `{root}/{district}/{year}/` and follow the
//! `{stem}_r{row:03}_c{col:03}.tif` naming used by the tiler. Input tiles and
//! mask tiles are paired on `(district, year, row, col)`, and every pair gets
//! the role its district has in the [`SplitPolicy`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{parse_tile_name, read_geotiff_header};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Validation,
    Test,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Train, Role::Validation, Role::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Validation => "validation",
            Role::Test => "test",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Role::Train),
            "validation" | "val" => Ok(Role::Validation),
            "test" => Ok(Role::Test),
            other => Err(Error::Policy(format!("unknown role {other:?}"))),
        }
    }
}

/// District to role mapping.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SplitPolicy {
    districts: BTreeMap<String, Role>,
}

impl SplitPolicy {
    pub fn new(pairs: impl IntoIterator<Item = (String, Role)>) -> Result<Self> {
        let mut districts = BTreeMap::new();
        for (district, role) in pairs {
            if districts.insert(district.clone(), role).is_some() {
                return Err(Error::Policy(format!("district {district:?} listed twice")));
            }
        }
        Ok(Self { districts })
    }

    pub fn role(&self, district: &str) -> Option<Role> {
        self.districts.get(district).copied()
    }

    pub fn districts(&self) -> impl Iterator<Item = (&str, Role)> {
        self.districts.iter().map(|(d, r)| (d.as_str(), *r))
    }

    /// Training needs at least one district in every role.
    pub fn check_for_training(&self) -> Result<()> {
        for role in Role::ALL {
            if !self.districts.values().any(|&r| r == role) {
                return Err(Error::Policy(format!("no district assigned to {role}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub input: PathBuf,
    pub mask: PathBuf,
    pub district: String,
    pub year: i32,
    pub row: usize,
    pub col: usize,
    pub role: Role,
}

type TileKey = (String, i32, usize, usize);

fn scan_tiles(root: &Path) -> Result<BTreeMap<TileKey, PathBuf>> {
    let mut out = BTreeMap::new();
    let read = |p: &Path| std::fs::read_dir(p).map_err(|e| Error::io(p, e));
    for district in read(root)? {
        let district = district.map_err(|e| Error::io(root, e))?;
        if !district.path().is_dir() {
            continue;
        }
        let district_name = district.file_name().to_string_lossy().into_owned();
        for year_dir in read(&district.path())? {
            let year_dir = year_dir.map_err(|e| Error::io(district.path(), e))?;
            let Ok(year) = year_dir.file_name().to_string_lossy().parse::<i32>() else {
                continue;
            };
            if !year_dir.path().is_dir() {
                continue;
            }
            for tile in read(&year_dir.path())? {
                let tile = tile.map_err(|e| Error::io(year_dir.path(), e))?;
                let name = tile.file_name();
                let Some((_, row, col)) = name.to_str().and_then(parse_tile_name) else {
                    continue;
                };
                let key = (district_name.clone(), year, row, col);
                if let Some(prev) = out.insert(key, tile.path()) {
                    return Err(Error::Manifest(format!(
                        "two tiles at the same grid position: {} and {}",
                        prev.display(),
                        tile.path().display()
                    )));
                }
            }
        }
    }
    Ok(out)
}

/// Pairs every input tile with its mask tile and assigns roles.
///
/// Entries come back sorted by district, year, row and column.
pub fn build_manifest(
    input_root: impl AsRef<Path>,
    mask_root: impl AsRef<Path>,
    policy: &SplitPolicy,
) -> Result<Vec<ManifestEntry>> {
    let inputs = scan_tiles(input_root.as_ref())?;
    let mut masks = scan_tiles(mask_root.as_ref())?;
    let mut entries = Vec::with_capacity(inputs.len());
    for ((district, year, row, col), input) in inputs {
        let key = (district, year, row, col);
        let mask = masks
            .remove(&key)
            .ok_or_else(|| Error::UnpairedTile(input.clone()))?;
        let (district, year, row, col) = key;
        let role = policy.role(&district).ok_or_else(|| {
            Error::Policy(format!(
                "district {district:?} has no role in the split policy"
            ))
        })?;
        entries.push(ManifestEntry {
            input,
            mask,
            district,
            year,
            row,
            col,
            role,
        });
    }
    if let Some(orphan) = masks.into_values().next() {
        return Err(Error::UnpairedTile(orphan));
    }
    entries.par_iter().try_for_each(check_pair)?;
    Ok(entries)
}

fn check_pair(entry: &ManifestEntry) -> Result<()> {
    let a = read_geotiff_header(&entry.input)?;
    let b = read_geotiff_header(&entry.mask)?;
    if a.width != b.width || a.height != b.height {
        return Err(Error::ShapeMismatch(format!(
            "{} is {}x{} but {} is {}x{}",
            entry.input.display(),
            a.width,
            a.height,
            entry.mask.display(),
            b.width,
            b.height
        )));
    }
    if a.geotransform != b.geotransform || a.crs != b.crs {
        return Err(Error::GeoreferenceMismatch(format!(
            "{} and {}",
            entry.input.display(),
            entry.mask.display()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoleShare {
    pub role: Role,
    pub tiles: usize,
    pub percent: f64,
}

/// Per-role tile counts and percentages of the whole manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestSummary {
    pub total: usize,
    pub roles: Vec<RoleShare>,
}

impl ManifestSummary {
    pub fn from_entries(entries: &[ManifestEntry]) -> Self {
        Self::from_roles(entries.iter().map(|e| e.role))
    }

    pub fn from_roles(roles: impl IntoIterator<Item = Role>) -> Self {
        let mut counts: BTreeMap<Role, usize> = BTreeMap::new();
        for role in roles {
            *counts.entry(role).or_default() += 1;
        }
        let total: usize = counts.values().sum();
        let roles = Role::ALL
            .iter()
            .map(|&role| {
                let tiles = counts.get(&role).copied().unwrap_or(0);
                let percent = if total == 0 {
                    0.0
                } else {
                    tiles as f64 * 100.0 / total as f64
                };
                RoleShare {
                    role,
                    tiles,
                    percent,
                }
            })
            .collect();
        Self { total, roles }
    }

    pub fn share(&self, role: Role) -> &RoleShare {
        self.roles
            .iter()
            .find(|s| s.role == role)
            .expect("every role is listed")
    }
}

impl fmt::Display for ManifestSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "total tiles: {}", self.total)?;
        for s in &self.roles {
            writeln!(
                f,
                "{:<10} {:>7} {:>7.2}%",
                s.role.as_str(),
                s.tiles,
                s.percent
            )?;
        }
        Ok(())
    }
}

const MANIFEST_HEADER: [&str; 7] = ["input", "mask", "district", "year", "row", "col", "role"];

/// Writes `input,mask,district,year,row,col,role`; an empty manifest is just the header.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    w.write_record(MANIFEST_HEADER)
        .map_err(|e| Error::csv(path, e))?;
    for e in entries {
        w.serialize(e).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            Error::MissingFile(path.to_path_buf())
        }
        _ => Error::csv(path, e),
    })?;
    let header = r.headers().map_err(|e| Error::csv(path, e))?;
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::Manifest(format!(
            "{}: expected header {}",
            path.display(),
            MANIFEST_HEADER.join(",")
        )));
    }
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Manifest(format!("{}: malformed row: {e}", path.display())))
        })
        .collect()
}
