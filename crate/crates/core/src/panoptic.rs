//! Panoptic maps: a segment-id raster plus a segment table.
//!
//! Container layout (`OVPM`, little-endian):
//!
//! ```text
//! magic "OVPM" | version u16 | width u32 | height u32
//! ids u32 * (width * height), row-major
//! segment count u32 | (segment_id u32, class_id u32) * count
//! ```

use std::collections::{BTreeMap, BTreeSet};

use crate::codec::{put_u16, put_u32, ByteReader};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::taxonomy::Taxonomy;

pub const PANOPTIC_MAGIC: &[u8; 4] = b"OVPM";
pub const PANOPTIC_VERSION: u16 = 1;

/// Raster id reserved for unlabeled pixels.
pub const VOID_ID: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Segment {
    pub id: u32,
    pub class_id: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanopticMap {
    width: u32,
    height: u32,
    ids: Vec<u32>,
    segments: Vec<Segment>,
}

impl PanopticMap {
    /// Builds a map and checks raster/table consistency: every nonzero raster
    /// id has a table entry, every table entry owns at least one pixel, and
    /// segment ids are unique and positive.
    pub fn new(width: u32, height: u32, ids: Vec<u32>, segments: Vec<Segment>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation(
                "panoptic map",
                format!("dimensions must be positive, got {width}x{height}"),
            ));
        }
        let n = width as usize * height as usize;
        if ids.len() != n {
            return Err(Error::validation(
                "panoptic map",
                format!("{width}x{height} raster needs {n} ids, got {}", ids.len()),
            ));
        }
        let mut table = BTreeSet::new();
        for s in &segments {
            if s.id == VOID_ID {
                return Err(Error::validation("panoptic map", "segment id 0 is reserved for void"));
            }
            if !table.insert(s.id) {
                return Err(Error::validation(
                    "panoptic map",
                    format!("duplicate segment id {}", s.id),
                ));
            }
        }
        let present: BTreeSet<u32> = ids.iter().copied().filter(|&i| i != VOID_ID).collect();
        let orphans: Vec<u32> = present.difference(&table).copied().collect();
        if !orphans.is_empty() {
            return Err(Error::validation(
                "panoptic map",
                format!("raster ids missing from segment table: {orphans:?}"),
            ));
        }
        let unused: Vec<u32> = table.difference(&present).copied().collect();
        if !unused.is_empty() {
            return Err(Error::validation(
                "panoptic map",
                format!("segment table ids with no pixels: {unused:?}"),
            ));
        }
        Ok(PanopticMap {
            width,
            height,
            ids,
            segments,
        })
    }

    /// A map with every pixel void.
    pub fn void(width: u32, height: u32) -> Result<Self> {
        PanopticMap::new(width, height, vec![VOID_ID; width as usize * height as usize], Vec::new())
    }

    /// Assembles a map from disjoint masks; segment ids are assigned 1, 2, …
    /// in input order. Empty masks are skipped.
    pub fn from_masks(width: u32, height: u32, masks: &[(BinaryMask, u32)]) -> Result<Self> {
        let mut ids = vec![VOID_ID; width as usize * height as usize];
        let mut segments = Vec::new();
        for (mask, class_id) in masks {
            if mask.dims() != (width, height) {
                crate::mask::same_dims((width, height), mask.dims())?;
            }
            if mask.is_empty() {
                continue;
            }
            let id = segments.len() as u32 + 1;
            for (slot, &bit) in ids.iter_mut().zip(mask.bits()) {
                if bit {
                    if *slot != VOID_ID {
                        return Err(Error::validation("panoptic map", "overlapping masks"));
                    }
                    *slot = id;
                }
            }
            segments.push(Segment {
                id,
                class_id: *class_id,
            });
        }
        PanopticMap::new(width, height, ids, segments)
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

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn class_of(&self, segment_id: u32) -> Option<u32> {
        self.segments.iter().find(|s| s.id == segment_id).map(|s| s.class_id)
    }

    /// Pixel count per segment id.
    pub fn areas(&self) -> BTreeMap<u32, u64> {
        let mut areas = BTreeMap::new();
        for &id in &self.ids {
            if id != VOID_ID {
                *areas.entry(id).or_insert(0) += 1;
            }
        }
        areas
    }

    pub fn void_mask(&self) -> BinaryMask {
        BinaryMask::new(self.width, self.height, self.ids.iter().map(|&i| i == VOID_ID).collect())
            .expect("dimensions already validated")
    }

    pub fn segment_mask(&self, segment_id: u32) -> BinaryMask {
        BinaryMask::new(
            self.width,
            self.height,
            self.ids.iter().map(|&i| i == segment_id).collect(),
        )
        .expect("dimensions already validated")
    }

    /// Nearest-neighbour resampling of the id raster (same sampling rule as
    /// [`BinaryMask::resample_nearest`]). Segments left without pixels are
    /// removed from the table.
    pub fn resample_nearest(&self, width: u32, height: u32) -> Result<PanopticMap> {
        if (width, height) == self.dims() {
            return Ok(self.clone());
        }
        if width == 0 || height == 0 {
            return Err(Error::validation("panoptic map", "target size must be positive"));
        }
        let (sw, sh) = (self.width as u64, self.height as u64);
        let mut ids = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height as u64 {
            let sy = ((2 * y + 1) * sh / (2 * height as u64)).min(sh - 1);
            for x in 0..width as u64 {
                let sx = ((2 * x + 1) * sw / (2 * width as u64)).min(sw - 1);
                ids.push(self.ids[(sy * sw + sx) as usize]);
            }
        }
        let present: std::collections::BTreeSet<u32> = ids.iter().copied().collect();
        let segments = self.segments.iter().filter(|s| present.contains(&s.id)).copied().collect();
        PanopticMap::new(width, height, ids, segments)
    }

    /// Same raster with segment classes replaced through `f(segment) -> class`.
    pub fn with_classes(&self, mut f: impl FnMut(&Segment) -> u32) -> PanopticMap {
        let segments = self
            .segments
            .iter()
            .map(|s| Segment {
                id: s.id,
                class_id: f(s),
            })
            .collect();
        PanopticMap {
            width: self.width,
            height: self.height,
            ids: self.ids.clone(),
            segments,
        }
    }

    /// Checks that every class id indexes into `taxonomy`.
    pub fn check_taxonomy(&self, taxonomy: &Taxonomy) -> Result<()> {
        if let Some(s) = self.segments.iter().find(|s| s.class_id as usize >= taxonomy.len()) {
            return Err(Error::validation(
                "panoptic map",
                format!(
                    "segment {} has class {} but taxonomy has {} classes",
                    s.id,
                    s.class_id,
                    taxonomy.len()
                ),
            ));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + 4 * self.ids.len() + 4 + 8 * self.segments.len());
        out.extend_from_slice(PANOPTIC_MAGIC);
        put_u16(&mut out, PANOPTIC_VERSION);
        put_u32(&mut out, self.width);
        put_u32(&mut out, self.height);
        for &id in &self.ids {
            put_u32(&mut out, id);
        }
        put_u32(&mut out, self.segments.len() as u32);
        for s in &self.segments {
            put_u32(&mut out, s.id);
            put_u32(&mut out, s.class_id);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = ByteReader::new(bytes);
        rd.expect_magic(PANOPTIC_MAGIC)?;
        let at = rd.offset();
        let version = rd.u16()?;
        if version != PANOPTIC_VERSION {
            return Err(Error::format(at, format!("unsupported version {version}")));
        }
        let width = rd.u32()?;
        let height = rd.u32()?;
        let n = width as u64 * height as u64;
        rd.require(n, 4, "id raster")?;
        let ids = (0..n).map(|_| rd.u32()).collect::<Result<Vec<_>>>()?;
        let count = rd.u32()?;
        let table_at = rd.offset();
        rd.require(count as u64, 8, "segment table")?;
        let segments = (0..count)
            .map(|_| {
                Ok(Segment {
                    id: rd.u32()?,
                    class_id: rd.u32()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rd.finish()?;
        PanopticMap::new(width, height, ids, segments).map_err(|e| Error::format(table_at, e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = crate::codec::read_file(path)?;
        PanopticMap::from_bytes(&bytes).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::codec::write_file(path, &self.to_bytes())
    }
}

/// Splits a panoptic map into one `(mask, class_id)` per segment, in
/// segment-table order.
pub fn panoptic_to_masks(map: &PanopticMap) -> Vec<(BinaryMask, u32)> {
    map.segments
        .iter()
        .map(|s| (map.segment_mask(s.id), s.class_id))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resampling_agrees_with_mask_resampling() {
        let map = PanopticMap::new(
            4,
            2,
            vec![1, 1, 2, 0, 1, 3, 2, 2],
            vec![
                Segment { id: 1, class_id: 0 },
                Segment { id: 2, class_id: 1 },
                Segment { id: 3, class_id: 0 },
            ],
        )
        .unwrap();
        let up = map.resample_nearest(8, 6).unwrap();
        for s in up.segments() {
            assert_eq!(up.segment_mask(s.id), map.segment_mask(s.id).resample_nearest(8, 6).unwrap());
        }
        let down = map.resample_nearest(2, 1).unwrap();
        assert_eq!(down.ids(), &[3, 2]);
        assert_eq!(down.segments().len(), 2);
    }

    #[test]
    fn full_and_void_maps() {
        let full = PanopticMap::new(2, 2, vec![7; 4], vec![Segment { id: 7, class_id: 3 }]).unwrap();
        let masks = panoptic_to_masks(&full);
        assert_eq!(masks.len(), 1);
        assert_eq!(masks[0].1, 3);
        assert_eq!(masks[0].0.area(), 4);

        let void = PanopticMap::void(3, 2).unwrap();
        assert!(panoptic_to_masks(&void).is_empty());
    }

    #[test]
    fn checkerboard_masks_disjoint_and_covering() {
        let ids = (0..16).map(|i| if (i % 4 + i / 4) % 2 == 0 { 1 } else { 2 }).collect();
        let map = PanopticMap::new(
            4,
            4,
            ids,
            vec![Segment { id: 1, class_id: 0 }, Segment { id: 2, class_id: 1 }],
        )
        .unwrap();
        let masks = panoptic_to_masks(&map);
        assert_eq!(masks.len(), 2);
        for p in 0..16 {
            let hits = masks.iter().filter(|(m, _)| m.bits()[p]).count();
            assert_eq!(hits, 1, "pixel {p}");
        }
    }

    #[test]
    fn orphan_ids_are_listed() {
        let err = PanopticMap::new(2, 1, vec![1, 5], vec![Segment { id: 1, class_id: 0 }])
            .unwrap_err()
            .to_string();
        assert!(err.contains("[5]"), "{err}");
        assert!(PanopticMap::new(1, 1, vec![1], vec![Segment { id: 1, class_id: 0 }, Segment { id: 2, class_id: 0 }]).is_err());
        assert!(PanopticMap::new(1, 1, vec![1], vec![Segment { id: 1, class_id: 0 }, Segment { id: 1, class_id: 1 }]).is_err());
    }

    #[test]
    fn container_round_trip() {
        let map = PanopticMap::new(3, 1, vec![0, 4, 9], vec![Segment { id: 9, class_id: 1 }, Segment { id: 4, class_id: 0 }]).unwrap();
        let bytes = map.to_bytes();
        assert_eq!(PanopticMap::from_bytes(&bytes).unwrap(), map);
        let err = PanopticMap::from_bytes(&bytes[..20]).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }
}
