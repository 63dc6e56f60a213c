//! Binary and soft raster masks.

use crate::error::{Error, Result};

/// Row-major boolean raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

fn check_dims(width: u32, height: u32) -> Result<usize> {
    if width == 0 || height == 0 {
        return Err(Error::validation(
            "mask",
            format!("dimensions must be positive, got {width}x{height}"),
        ));
    }
    Ok(width as usize * height as usize)
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        let n = check_dims(width, height)?;
        if bits.len() != n {
            return Err(Error::validation(
                "mask",
                format!("{}x{} mask needs {} bits, got {}", width, height, n, bits.len()),
            ));
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Result<Self> {
        let n = check_dims(width, height)?;
        Ok(BinaryMask {
            width,
            height,
            bits: vec![false; n],
        })
    }

    /// Builds a mask from a per-pixel predicate `f(x, y)`.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Result<Self> {
        check_dims(width, height)?;
        let bits = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Nearest-neighbour resampling to `width` x `height`. Each target pixel
    /// samples the source pixel under its centre.
    pub fn resample_nearest(&self, width: u32, height: u32) -> Result<BinaryMask> {
        if (width, height) == self.dims() {
            return Ok(self.clone());
        }
        let (sw, sh) = (self.width as u64, self.height as u64);
        BinaryMask::from_fn(width, height, |x, y| {
            let sx = ((2 * x as u64 + 1) * sw / (2 * width as u64)).min(sw - 1);
            let sy = ((2 * y as u64 + 1) * sh / (2 * height as u64)).min(sh - 1);
            self.bits[(sy * sw + sx) as usize]
        })
    }

    /// Morphological erosion with a square structuring element of the given
    /// radius. Pixels outside the raster count as unset.
    pub fn erode(&self, radius: u32) -> BinaryMask {
        self.morph(radius, true)
    }

    /// Morphological dilation with a square structuring element.
    pub fn dilate(&self, radius: u32) -> BinaryMask {
        self.morph(radius, false)
    }

    fn morph(&self, radius: u32, erode: bool) -> BinaryMask {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = (self.width as i64, self.height as i64);
        let r = radius as i64;
        let bits = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| {
                let mut window = (y - r..=y + r).flat_map(|ny| (x - r..=x + r).map(move |nx| (nx, ny)));
                let inside = |(nx, ny): (i64, i64)| {
                    nx >= 0 && ny >= 0 && nx < w && ny < h && self.bits[(ny * w + nx) as usize]
                };
                if erode {
                    window.all(inside)
                } else {
                    window.any(inside)
                }
            })
            .collect();
        BinaryMask {
            width: self.width,
            height: self.height,
            bits,
        }
    }

    pub(crate) fn check_same_dims(&self, other: &BinaryMask) -> Result<()> {
        same_dims(self.dims(), other.dims())
    }
}

pub(crate) fn same_dims(a: (u32, u32), b: (u32, u32)) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            left_width: a.0,
            left_height: a.1,
            right_width: b.0,
            right_height: b.1,
        });
    }
    Ok(())
}

/// Row-major raster of probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl SoftMask {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self> {
        let n = check_dims(width, height)?;
        if values.len() != n {
            return Err(Error::validation(
                "soft mask",
                format!("{}x{} mask needs {} values, got {}", width, height, n, values.len()),
            ));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation(
                "soft mask",
                format!("value {} at index {} outside [0, 1]", values[i], i),
            ));
        }
        Ok(SoftMask {
            width,
            height,
            values,
        })
    }

    /// Indicator of a binary mask: 1 on set pixels, 0 elsewhere.
    pub fn indicator(mask: &BinaryMask) -> SoftMask {
        SoftMask {
            width: mask.width,
            height: mask.height,
            values: mask.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Sets every pixel whose value is at least `threshold`.
    pub fn binarize(&self, threshold: f32) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.values.iter().map(|&v| v >= threshold).collect(),
        }
    }

    /// 8-bit quantization: `round(v * 255)`.
    pub fn quantize(&self) -> Vec<u8> {
        self.values.iter().map(|&v| (v * 255.0).round() as u8).collect()
    }

    pub fn dequantize(width: u32, height: u32, bytes: &[u8]) -> Result<SoftMask> {
        let values = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        SoftMask::new(width, height, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dimensions() {
        assert!(BinaryMask::new(0, 2, vec![]).is_err());
        assert!(BinaryMask::new(2, 2, vec![true; 3]).is_err());
        assert!(SoftMask::new(1, 1, vec![1.5]).is_err());
        assert!(SoftMask::new(1, 1, vec![f32::NAN]).is_err());
    }

    #[test]
    fn resample_identity_and_downsample() {
        let m = BinaryMask::from_fn(4, 4, |x, y| x < 2 && y < 2).unwrap();
        assert_eq!(m.resample_nearest(4, 4).unwrap(), m);
        let small = m.resample_nearest(2, 2).unwrap();
        assert_eq!(small.bits(), &[true, false, false, false]);
        let up = small.resample_nearest(4, 4).unwrap();
        assert_eq!(up, m);
    }

    #[test]
    fn erode_and_dilate_square() {
        let m = BinaryMask::from_fn(5, 5, |x, y| (1..4).contains(&x) && (1..4).contains(&y)).unwrap();
        assert_eq!(m.erode(1).area(), 1);
        assert_eq!(m.dilate(1).area(), 25);
        assert_eq!(m.erode(0), m);
    }

    #[test]
    fn quantization_error_bounded() {
        let vals: Vec<f32> = (0..=100).map(|i| i as f32 / 100.0).collect();
        let s = SoftMask::new(101, 1, vals.clone()).unwrap();
        let d = SoftMask::dequantize(101, 1, &s.quantize()).unwrap();
        for (a, b) in vals.iter().zip(d.values()) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }
}
