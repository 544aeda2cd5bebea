//! GeoTIFF encoding on top of the `tiff` crate's directory-level API.
//!
//! Files are written uncompressed, chunky (pixel-interleaved), in strips.
//! Georeferencing uses ModelTiepoint + ModelPixelScale, the CRS text goes into
//! the GeoKey citation (plus an EPSG code key when the text is `EPSG:<code>`),
//! and nodata uses the GDAL_NODATA ascii tag.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, Write};
use std::path::Path;

use ndarray::Array3;
use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{DirectoryEncoder, TiffEncoder, TiffKind};
use tiff::tags::{PhotometricInterpretation, PlanarConfiguration, Tag};

use super::{GeoRaster, GeoTransform};
use crate::error::{Error, Result};
use crate::sample::{Sample, SampleKind};

const GT_MODEL_TYPE: u16 = 1024;
const GT_RASTER_TYPE: u16 = 1025;
const GT_CITATION: u16 = 1026;
const GEOGRAPHIC_TYPE: u16 = 2048;
const PROJECTED_CS_TYPE: u16 = 3072;
const MODEL_TYPE_PROJECTED: u16 = 1;
const MODEL_TYPE_GEOGRAPHIC: u16 = 2;
const RASTER_PIXEL_IS_AREA: u16 = 1;
const USER_DEFINED: u16 = 32767;

const STRIP_TARGET_BYTES: usize = 1 << 16;
// Leave headroom below 4 GiB for the directory and tag payloads.
const CLASSIC_TIFF_LIMIT: usize = u32::MAX as usize - (1 << 24);

/// Everything about a GeoTIFF except its pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoTiffHeader {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub kind: SampleKind,
    pub geotransform: GeoTransform,
    pub crs: String,
    pub nodata: Option<f64>,
    planar: bool,
}

pub fn write_geotiff<T: Sample>(raster: &GeoRaster<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    let payload = raster.data().len() * (T::KIND.bits() as usize / 8);
    let tiff_err = |source| Error::Tiff {
        path: path.to_path_buf(),
        source,
    };
    if payload > CLASSIC_TIFF_LIMIT {
        let mut enc = TiffEncoder::new_big(&mut writer).map_err(tiff_err)?;
        encode(&mut enc, raster, true).map_err(tiff_err)?;
    } else {
        let mut enc = TiffEncoder::new(&mut writer).map_err(tiff_err)?;
        encode(&mut enc, raster, false).map_err(tiff_err)?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn encode<W: Write + Seek, K: TiffKind, T: Sample>(
    enc: &mut TiffEncoder<W, K>,
    raster: &GeoRaster<T>,
    big: bool,
) -> tiff::TiffResult<()> {
    let (width, height, bands) = (raster.width(), raster.height(), raster.bands());
    let bytes_per_sample = T::KIND.bits() as usize / 8;
    let row_bytes = width * bands * bytes_per_sample;
    let rows_per_strip = (STRIP_TARGET_BYTES / row_bytes).clamp(1, height);

    let mut dir = enc.image_directory()?;
    let mut offsets = Vec::new();
    let mut counts = Vec::new();
    let data = raster.data();
    let mut strip = Vec::with_capacity(rows_per_strip * width * bands);
    let mut bytes = Vec::with_capacity(rows_per_strip * row_bytes);
    for row0 in (0..height).step_by(rows_per_strip) {
        let row1 = (row0 + rows_per_strip).min(height);
        strip.clear();
        for row in row0..row1 {
            for col in 0..width {
                for band in 0..bands {
                    strip.push(data[[band, row, col]]);
                }
            }
        }
        bytes.clear();
        T::extend_ne_bytes(&strip, &mut bytes);
        offsets.push(dir.write_data(&bytes[..])?);
        counts.push(bytes.len() as u64);
    }

    dir.write_tag(Tag::ImageWidth, width as u32)?;
    dir.write_tag(Tag::ImageLength, height as u32)?;
    dir.write_tag(Tag::BitsPerSample, &vec![T::KIND.bits(); bands][..])?;
    dir.write_tag(Tag::Compression, 1u16)?;
    let rgb = T::KIND == SampleKind::U8 && bands == 3;
    let photometric = if rgb {
        PhotometricInterpretation::RGB
    } else {
        PhotometricInterpretation::BlackIsZero
    };
    dir.write_tag(Tag::PhotometricInterpretation, photometric.to_u16())?;
    dir.write_tag(Tag::SamplesPerPixel, bands as u16)?;
    let extra = bands - if rgb { 3 } else { 1 };
    if extra > 0 {
        // 0 = unspecified data
        dir.write_tag(Tag::ExtraSamples, &vec![0u16; extra][..])?;
    }
    dir.write_tag(Tag::RowsPerStrip, rows_per_strip as u32)?;
    write_offsets(&mut dir, Tag::StripOffsets, &offsets, big)?;
    write_offsets(&mut dir, Tag::StripByteCounts, &counts, big)?;
    dir.write_tag(
        Tag::PlanarConfiguration,
        PlanarConfiguration::Chunky.to_u16(),
    )?;
    let format: u16 = match T::KIND {
        SampleKind::U8 => 1,
        SampleKind::F32 => 3,
    };
    dir.write_tag(Tag::SampleFormat, &vec![format; bands][..])?;

    let gt = raster.geotransform();
    dir.write_tag(
        Tag::ModelPixelScaleTag,
        &[gt.pixel_width, -gt.pixel_height, 0.0][..],
    )?;
    dir.write_tag(
        Tag::ModelTiepointTag,
        &[0.0, 0.0, 0.0, gt.origin_x, gt.origin_y, 0.0][..],
    )?;
    let (keys, ascii) = geokeys(raster.crs());
    dir.write_tag(Tag::GeoKeyDirectoryTag, &keys[..])?;
    if let Some(ascii) = ascii {
        dir.write_tag(Tag::GeoAsciiParamsTag, ascii.as_str())?;
    }
    if let Some(nodata) = raster.nodata() {
        dir.write_tag(Tag::GdalNodata, format_nodata(nodata).as_str())?;
    }
    dir.finish()
}

fn write_offsets<W: Write + Seek, K: TiffKind>(
    dir: &mut DirectoryEncoder<'_, W, K>,
    tag: Tag,
    values: &[u64],
    big: bool,
) -> tiff::TiffResult<()> {
    if big {
        dir.write_tag(tag, values)
    } else {
        let narrow: Vec<u32> = values.iter().map(|&v| v as u32).collect();
        dir.write_tag(tag, &narrow[..])
    }
}

fn epsg_code(crs: &str) -> Option<u16> {
    let code = crs.strip_prefix("EPSG:")?;
    code.parse::<u16>().ok().filter(|&c| c != USER_DEFINED)
}

fn geokeys(crs: &str) -> (Vec<u16>, Option<String>) {
    let mut entries: Vec<[u16; 4]> = vec![[GT_RASTER_TYPE, 0, 1, RASTER_PIXEL_IS_AREA]];
    let mut ascii = None;
    if !crs.is_empty() {
        let code = epsg_code(crs);
        // EPSG geographic 2D CRS codes live in 4000..5000.
        let geographic = code.is_some_and(|c| (4000..5000).contains(&c));
        let model = if geographic {
            MODEL_TYPE_GEOGRAPHIC
        } else {
            MODEL_TYPE_PROJECTED
        };
        entries.push([GT_MODEL_TYPE, 0, 1, model]);
        let text = format!("{crs}|");
        entries.push([
            GT_CITATION,
            Tag::GeoAsciiParamsTag.to_u16(),
            text.len() as u16,
            0,
        ]);
        ascii = Some(text);
        if let Some(code) = code {
            let key = if geographic {
                GEOGRAPHIC_TYPE
            } else {
                PROJECTED_CS_TYPE
            };
            entries.push([key, 0, 1, code]);
        }
    }
    entries.sort_by_key(|e| e[0]);
    let mut keys = vec![1, 1, 0, entries.len() as u16];
    keys.extend(entries.iter().flatten());
    (keys, ascii)
}

fn format_nodata(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        // Display for f64 is the shortest string that parses back to the same value.
        format!("{v}")
    }
}

fn open(path: &Path) -> Result<Decoder<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Decoder::new(BufReader::new(file))
        .map(|d| d.with_limits(Limits::unlimited()))
        .map_err(|source| Error::Tiff {
            path: path.to_path_buf(),
            source,
        })
}

fn read_header_from<R: Read + Seek>(dec: &mut Decoder<R>, path: &Path) -> Result<GeoTiffHeader> {
    let tiff_err = |source| Error::Tiff {
        path: path.to_path_buf(),
        source,
    };
    let (width, height) = dec.dimensions().map_err(tiff_err)?;
    let bands = dec
        .find_tag_unsigned::<u16>(Tag::SamplesPerPixel)
        .map_err(tiff_err)?
        .unwrap_or(1) as usize;
    let bits = dec
        .find_tag_unsigned_vec::<u16>(Tag::BitsPerSample)
        .map_err(tiff_err)?
        .unwrap_or_else(|| vec![1]);
    let format = dec
        .find_tag_unsigned_vec::<u16>(Tag::SampleFormat)
        .map_err(tiff_err)?
        .unwrap_or_else(|| vec![1]);
    let kind = match (bits.first(), format.first()) {
        (Some(8), Some(1)) if bits.iter().all(|&b| b == 8) => SampleKind::U8,
        (Some(32), Some(3)) if bits.iter().all(|&b| b == 32) => SampleKind::F32,
        (b, f) => {
            return Err(Error::UnsupportedSampleType {
                path: path.to_path_buf(),
                found: format!("bits {b:?}, format {f:?}"),
            })
        }
    };
    let planar = dec
        .find_tag_unsigned::<u16>(Tag::PlanarConfiguration)
        .map_err(tiff_err)?
        == Some(2);

    let geotransform = read_geotransform(dec, path)?;
    geotransform.check_north_up()?;
    let crs = read_crs(dec).map_err(tiff_err)?;
    let nodata = match dec.find_tag(Tag::GdalNodata).map_err(tiff_err)? {
        Some(v) => {
            let text = v.into_string().map_err(tiff_err)?;
            let text = text.trim_matches(|c: char| c == '\0' || c.is_whitespace());
            Some(text.parse::<f64>().map_err(|e| {
                Error::InvalidRaster(format!("{}: bad GDAL_NODATA {text:?}: {e}", path.display()))
            })?)
        }
        None => None,
    };
    Ok(GeoTiffHeader {
        width: width as usize,
        height: height as usize,
        bands,
        kind,
        geotransform,
        crs,
        nodata,
        planar,
    })
}

fn read_geotransform<R: Read + Seek>(dec: &mut Decoder<R>, path: &Path) -> Result<GeoTransform> {
    let tiff_err = |source| Error::Tiff {
        path: path.to_path_buf(),
        source,
    };
    if let Some(m) = dec
        .find_tag(Tag::ModelTransformationTag)
        .map_err(tiff_err)?
    {
        let m = m.into_f64_vec().map_err(tiff_err)?;
        if m.len() < 8 {
            return Err(Error::MissingGeotransform(path.to_path_buf()));
        }
        return Ok(GeoTransform::from_gdal([
            m[3], m[0], m[1], m[7], m[4], m[5],
        ]));
    }
    let scale = dec.find_tag(Tag::ModelPixelScaleTag).map_err(tiff_err)?;
    let tie = dec.find_tag(Tag::ModelTiepointTag).map_err(tiff_err)?;
    match (scale, tie) {
        (Some(scale), Some(tie)) => {
            let scale = scale.into_f64_vec().map_err(tiff_err)?;
            let tie = tie.into_f64_vec().map_err(tiff_err)?;
            if scale.len() < 2 || tie.len() < 6 {
                return Err(Error::MissingGeotransform(path.to_path_buf()));
            }
            // Tiepoint maps raster (i, j) to (x, y); shift back to pixel (0, 0).
            let (i, j) = (tie[0], tie[1]);
            let origin_x = if i == 0.0 {
                tie[3]
            } else {
                tie[3] - i * scale[0]
            };
            let origin_y = if j == 0.0 {
                tie[4]
            } else {
                tie[4] + j * scale[1]
            };
            Ok(GeoTransform::north_up(
                origin_x, origin_y, scale[0], -scale[1],
            ))
        }
        _ => Err(Error::MissingGeotransform(path.to_path_buf())),
    }
}

fn read_crs<R: Read + Seek>(dec: &mut Decoder<R>) -> tiff::TiffResult<String> {
    let Some(keys) = dec.find_tag_unsigned_vec::<u16>(Tag::GeoKeyDirectoryTag)? else {
        return Ok(String::new());
    };
    let ascii = match dec.find_tag(Tag::GeoAsciiParamsTag)? {
        Some(v) => v.into_string()?,
        None => String::new(),
    };
    let mut citation = None;
    let mut code = None;
    for entry in keys.get(4..).unwrap_or(&[]).chunks_exact(4) {
        let (id, location, count, value) =
            (entry[0], entry[1], entry[2] as usize, entry[3] as usize);
        match id {
            GT_CITATION if location == Tag::GeoAsciiParamsTag.to_u16() => {
                citation = ascii
                    .get(value..value + count)
                    .map(|s| s.trim_end_matches(['|', '\0']).to_string());
            }
            GEOGRAPHIC_TYPE | PROJECTED_CS_TYPE
                if location == 0 && value as u16 != USER_DEFINED =>
            {
                code = Some(value);
            }
            _ => {}
        }
    }
    Ok(match (citation, code) {
        (Some(c), _) if !c.is_empty() => c,
        (_, Some(code)) => format!("EPSG:{code}"),
        _ => String::new(),
    })
}

/// Reads only the metadata of a GeoTIFF.
pub fn read_geotiff_header(path: impl AsRef<Path>) -> Result<GeoTiffHeader> {
    let path = path.as_ref();
    let mut dec = open(path)?;
    read_header_from(&mut dec, path)
}

/// Reads a GeoTIFF whose samples are of type `T`.
pub fn read_geotiff<T: Sample>(path: impl AsRef<Path>) -> Result<GeoRaster<T>> {
    let path = path.as_ref();
    let mut dec = open(path)?;
    let header = read_header_from(&mut dec, path)?;
    if header.kind != T::KIND {
        return Err(Error::UnsupportedSampleType {
            path: path.to_path_buf(),
            found: format!("{:?} (expected {:?})", header.kind, T::KIND),
        });
    }
    let mut result = DecodingResult::U8(Vec::new());
    dec.read_image_to_buffer(&mut result)
        .map_err(|source| Error::Tiff {
            path: path.to_path_buf(),
            source,
        })?;
    let samples = T::from_decoded(result).map_err(|_| Error::UnsupportedSampleType {
        path: path.to_path_buf(),
        found: "decoder returned a different sample type".into(),
    })?;
    let (w, h, b) = (header.width, header.height, header.bands);
    if samples.len() != w * h * b {
        return Err(Error::InvalidRaster(format!(
            "{}: decoded {} samples, expected {}",
            path.display(),
            samples.len(),
            w * h * b
        )));
    }
    let data = if header.planar {
        Array3::from_shape_vec((b, h, w), samples)
    } else {
        Array3::from_shape_vec((h, w, b), samples).map(|a| a.permuted_axes([2, 0, 1]))
    }
    .map_err(|e| Error::InvalidRaster(e.to_string()))?;
    GeoRaster::new(data, header.geotransform, header.crs, header.nodata)
}
