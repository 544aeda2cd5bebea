//! Pixel sample types.
//!
//! Rasters are generic over their sample type. Only the two storage types the
//! pipeline produces can be written to and read from GeoTIFF: 32-bit float
//! (index rasters, reflectance stacks) and 8-bit unsigned (composites, masks).
//! Arithmetic that needs a float type is generic over [`num_traits::Float`]
//! so callers can pick `f32` or `f64` precision.

use std::fmt::Debug;

use num_traits::{Bounded, NumCast, ToPrimitive, Zero};
use tiff::decoder::DecodingResult;

/// On-disk sample encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    U8,
    F32,
}

impl SampleKind {
    pub fn bits(self) -> u16 {
        match self {
            SampleKind::U8 => 8,
            SampleKind::F32 => 32,
        }
    }
}

/// A pixel value that can live in a [`GeoRaster`](crate::GeoRaster) and be
/// stored in a GeoTIFF.
pub trait Sample:
    Copy
    + Debug
    + PartialEq
    + PartialOrd
    + Zero
    + NumCast
    + ToPrimitive
    + Bounded
    + Send
    + Sync
    + 'static
{
    const KIND: SampleKind;

    /// Interprets a nodata value carried as `f64` in this sample type.
    fn from_nodata(value: f64) -> Option<Self>;

    /// Sample equality that treats NaN as equal to NaN, so a NaN nodata value matches itself.
    fn same(self, other: Self) -> bool;

    #[doc(hidden)]
    fn extend_ne_bytes(values: &[Self], out: &mut Vec<u8>);

    #[doc(hidden)]
    fn from_decoded(result: DecodingResult) -> Result<Vec<Self>, DecodingResult>;
}

impl Sample for u8 {
    const KIND: SampleKind = SampleKind::U8;

    fn from_nodata(value: f64) -> Option<Self> {
        if value.fract() == 0.0 && (0.0..=255.0).contains(&value) {
            Some(value as u8)
        } else {
            None
        }
    }

    fn same(self, other: Self) -> bool {
        self == other
    }

    fn extend_ne_bytes(values: &[Self], out: &mut Vec<u8>) {
        out.extend_from_slice(values);
    }

    fn from_decoded(result: DecodingResult) -> Result<Vec<Self>, DecodingResult> {
        match result {
            DecodingResult::U8(v) => Ok(v),
            other => Err(other),
        }
    }
}

impl Sample for f32 {
    const KIND: SampleKind = SampleKind::F32;

    fn from_nodata(value: f64) -> Option<Self> {
        Some(value as f32)
    }

    fn same(self, other: Self) -> bool {
        self == other || (self.is_nan() && other.is_nan())
    }

    fn extend_ne_bytes(values: &[Self], out: &mut Vec<u8>) {
        out.reserve(values.len() * 4);
        for v in values {
            out.extend_from_slice(&v.to_ne_bytes());
        }
    }

    fn from_decoded(result: DecodingResult) -> Result<Vec<Self>, DecodingResult> {
        match result {
            DecodingResult::F32(v) => Ok(v),
            other => Err(other),
        }
    }
}
