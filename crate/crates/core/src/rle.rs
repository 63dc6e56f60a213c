//! Row-major run-length encoding of binary masks.
//!
//! Runs alternate between unset and set pixels and always start with the
//! count of leading unset pixels, which may be zero.
//!
//! Container layout (`OVRL`, little-endian):
//!
//! ```text
//! magic "OVRL" | width u32 | height u32 | run count u32 | runs u32 * count
//! ```

use crate::codec::{put_u32, ByteReader};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;

pub const RLE_MAGIC: &[u8; 4] = b"OVRL";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RleMask {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

impl RleMask {
    /// Validates run structure: runs sum to `width * height` and only the
    /// first run may be zero.
    pub fn new(width: u32, height: u32, runs: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation(
                "rle",
                format!("dimensions must be positive, got {width}x{height}"),
            ));
        }
        let expected = width as u64 * height as u64;
        let actual: u64 = runs.iter().map(|&r| r as u64).sum();
        if actual != expected {
            return Err(Error::validation(
                "rle",
                format!("runs cover {actual} pixels, expected {expected} ({width}x{height})"),
            ));
        }
        if let Some(i) = runs.iter().skip(1).position(|&r| r == 0) {
            return Err(Error::validation(
                "rle",
                format!("zero-length run at interior position {}", i + 1),
            ));
        }
        Ok(RleMask {
            width,
            height,
            runs,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    /// Number of set pixels (sum of odd-indexed runs).
    pub fn area(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).map(|&r| r as u64).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.runs.len());
        out.extend_from_slice(RLE_MAGIC);
        put_u32(&mut out, self.width);
        put_u32(&mut out, self.height);
        put_u32(&mut out, self.runs.len() as u32);
        for &r in &self.runs {
            put_u32(&mut out, r);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = ByteReader::new(bytes);
        rd.expect_magic(RLE_MAGIC)?;
        let width = rd.u32()?;
        let height = rd.u32()?;
        let count = rd.u32()?;
        let at = rd.offset();
        rd.require(count as u64, 4, "run table")?;
        let runs = (0..count).map(|_| rd.u32()).collect::<Result<Vec<_>>>()?;
        rd.finish()?;
        RleMask::new(width, height, runs).map_err(|e| Error::format(at, e.to_string()))
    }
}

pub fn rle_encode(mask: &BinaryMask) -> RleMask {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &bit in mask.bits() {
        if bit != current {
            runs.push(len);
            len = 0;
            current = bit;
        }
        len += 1;
    }
    runs.push(len);
    RleMask {
        width: mask.width(),
        height: mask.height(),
        runs,
    }
}

/// Decodes runs into a mask. Unlike [`RleMask::new`], this accepts a raw run
/// list so callers holding unvalidated data get the pixel-count error.
pub fn rle_decode(rle: &RleMask) -> Result<BinaryMask> {
    decode_runs(rle.width, rle.height, &rle.runs)
}

pub fn decode_runs(width: u32, height: u32, runs: &[u32]) -> Result<BinaryMask> {
    let expected = width as u64 * height as u64;
    let actual: u64 = runs.iter().map(|&r| r as u64).sum();
    if actual != expected {
        return Err(Error::format(
            0,
            format!("run lengths sum to {actual} pixels, expected {expected}"),
        ));
    }
    let mut bits = Vec::with_capacity(expected as usize);
    for (i, &r) in runs.iter().enumerate() {
        bits.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
    }
    BinaryMask::new(width, height, bits)
}
