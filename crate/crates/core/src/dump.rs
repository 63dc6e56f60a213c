//! Prediction dumps: a directory holding `manifest.json` and one binary
//! candidate record per image.
//!
//! Candidate record (`OVCD`, little-endian):
//!
//! ```text
//! magic "OVCD" | version u16 | N u32 | C u32 | width u32 | height u32 | flags u32
//! per candidate:
//!     sigma   u8 * (width * height)   quantized as round(v * 255)
//!     posterior f32 * (C + 1)         last entry is no-object
//!     [zero-shot posterior f32 * C]   present iff flags bit 0 is set
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{put_f32, put_u16, put_u32, read_file, write_file, ByteReader};
use crate::error::{Error, Result};
use crate::mask::SoftMask;
use crate::proposals::{check_distribution, Candidate, CandidateSet, POSTERIOR_TOLERANCE};

pub const CANDIDATE_MAGIC: &[u8; 4] = b"OVCD";
pub const CANDIDATE_VERSION: u16 = 1;
pub const FLAG_CLIP: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DUMP_FORMAT: &str = "ovseg-dump";
/// Posterior sums further than this from 1 are rejected on load.
pub const LOAD_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    /// Candidate record, relative to the dump directory.
    pub candidates: String,
    /// Optional dense feature grid, relative to the dump directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpManifest {
    pub format: String,
    pub version: u32,
    /// Name or path of the taxonomy the posteriors index into.
    pub taxonomy: String,
    pub num_classes: usize,
    /// Free-form metadata such as input resolution or model name.
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub images: Vec<ImageEntry>,
}

impl DumpManifest {
    pub fn new(taxonomy: impl Into<String>, num_classes: usize) -> Self {
        DumpManifest {
            format: DUMP_FORMAT.to_string(),
            version: 1,
            taxonomy: taxonomy.into(),
            num_classes,
            metadata: BTreeMap::new(),
            images: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: DumpManifest =
            serde_json::from_str(text).map_err(|e| Error::validation("manifest", format!("malformed JSON: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != DUMP_FORMAT {
            return Err(Error::validation("manifest", format!("unknown format {:?}", self.format)));
        }
        if self.version != 1 {
            return Err(Error::validation("manifest", format!("unsupported version {}", self.version)));
        }
        let mut ids = BTreeSet::new();
        for img in &self.images {
            if img.id.is_empty() {
                return Err(Error::validation("manifest", "empty image id"));
            }
            if !ids.insert(img.id.as_str()) {
                return Err(Error::validation("manifest", format!("duplicate image id {:?}", img.id)));
            }
            for rel in std::iter::once(&img.candidates).chain(img.features.as_ref()) {
                let p = Path::new(rel);
                if p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
                    return Err(Error::validation(
                        "manifest",
                        format!("image {:?}: path {rel:?} must stay inside the dump directory", img.id),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        DumpManifest::from_json(&text).map_err(|e| Error::Parse {
            path,
            message: e.to_string(),
        })
    }

    /// Image entries sorted by id; processing order for every command.
    pub fn sorted_images(&self) -> Vec<&ImageEntry> {
        let mut v: Vec<&ImageEntry> = self.images.iter().collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }
}

/// Encodes a candidate set that still carries its no-object entry.
pub fn encode_candidates(set: &CandidateSet) -> Result<Vec<u8>> {
    if !set.has_no_object() {
        return Err(Error::validation(
            "candidate set",
            "dump records store raw posteriors including the no-object entry",
        ));
    }
    let (w, h) = set.dims();
    let c = set.num_classes();
    let mut out = Vec::new();
    out.extend_from_slice(CANDIDATE_MAGIC);
    put_u16(&mut out, CANDIDATE_VERSION);
    put_u32(&mut out, set.len() as u32);
    put_u32(&mut out, c as u32);
    put_u32(&mut out, w);
    put_u32(&mut out, h);
    put_u32(&mut out, if set.has_clip() { FLAG_CLIP } else { 0 });
    for cand in set.candidates() {
        out.extend_from_slice(&cand.sigma.quantize());
        for &p in &cand.posterior {
            put_f32(&mut out, p);
        }
        if let Some(clip) = &cand.clip_posterior {
            for &p in clip {
                put_f32(&mut out, p);
            }
        }
    }
    Ok(out)
}

fn read_distribution(rd: &mut ByteReader<'_>, len: usize, index: u32, what: &str) -> Result<Vec<f32>> {
    let at = rd.offset();
    let mut p = (0..len).map(|_| rd.f32()).collect::<Result<Vec<_>>>()?;
    check_distribution(&p, len, LOAD_TOLERANCE)
        .map_err(|m| Error::format(at, format!("candidate {index} {what}: {m}")))?;
    let sum: f64 = p.iter().map(|&v| v as f64).sum();
    if (sum - 1.0).abs() > POSTERIOR_TOLERANCE {
        p.iter_mut().for_each(|v| *v = (*v as f64 / sum) as f32);
    }
    Ok(p)
}

/// Decodes and validates a candidate record.
pub fn decode_candidates(bytes: &[u8]) -> Result<CandidateSet> {
    let mut rd = ByteReader::new(bytes);
    rd.expect_magic(CANDIDATE_MAGIC)?;
    let at = rd.offset();
    let version = rd.u16()?;
    if version != CANDIDATE_VERSION {
        return Err(Error::format(at, format!("unsupported version {version}")));
    }
    let n = rd.u32()?;
    let c = rd.u32()?;
    let width = rd.u32()?;
    let height = rd.u32()?;
    let flags_at = rd.offset();
    let flags = rd.u32()?;
    if flags & !FLAG_CLIP != 0 {
        return Err(Error::format(flags_at, format!("unknown flags {flags:#x}")));
    }
    if c == 0 || width == 0 || height == 0 {
        return Err(Error::format(at, "class count and dimensions must be positive"));
    }
    let with_clip = flags & FLAG_CLIP != 0;
    let pixels = width as u64 * height as u64;
    let per_candidate = pixels
        .checked_add(4 * (c as u64 + 1))
        .and_then(|s| s.checked_add(if with_clip { 4 * c as u64 } else { 0 }))
        .ok_or_else(|| Error::format(at, "record size overflows"))?;
    rd.require(n as u64, per_candidate, "candidate payload")?;

    let mut candidates = Vec::with_capacity(n as usize);
    for i in 0..n {
        let sigma = SoftMask::dequantize(width, height, rd.take(pixels as usize)?)?;
        let posterior = read_distribution(&mut rd, c as usize + 1, i, "posterior")?;
        let clip = if with_clip {
            Some(read_distribution(&mut rd, c as usize, i, "zero-shot posterior")?)
        } else {
            None
        };
        candidates.push(Candidate {
            sigma,
            posterior,
            clip_posterior: clip,
            degenerate: false,
        });
    }
    rd.finish()?;
    CandidateSet::new(width, height, c as usize, true, candidates)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DumpImage {
    pub id: String,
    pub candidates: CandidateSet,
    pub features: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDump {
    pub root: PathBuf,
    pub manifest: DumpManifest,
    pub images: Vec<DumpImage>,
}

/// Loads one image's candidates. Errors carry the image id.
pub fn load_image(dir: &Path, manifest: &DumpManifest, entry: &ImageEntry) -> Result<DumpImage> {
    let load = || -> Result<DumpImage> {
        let path = dir.join(&entry.candidates);
        let set = decode_candidates(&read_file(&path)?).map_err(|e| Error::Parse {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if set.num_classes() != manifest.num_classes {
            return Err(Error::validation(
                "candidate record",
                format!("{} classes, manifest declares {}", set.num_classes(), manifest.num_classes),
            ));
        }
        Ok(DumpImage {
            id: entry.id.clone(),
            candidates: set,
            features: entry.features.as_ref().map(|f| dir.join(f)),
        })
    };
    load().map_err(|e| e.in_image(&entry.id))
}

/// Loads and validates every image listed in the manifest.
pub fn load_dump(dir: &Path) -> Result<PredictionDump> {
    let manifest = DumpManifest::load(dir)?;
    let images = manifest
        .sorted_images()
        .into_iter()
        .map(|e| load_image(dir, &manifest, e))
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionDump {
        root: dir.to_path_buf(),
        manifest,
        images,
    })
}

/// Writes a dump directory. Candidate files are named `<id>.ovcd`; the
/// manifest's image list is replaced by the written entries.
pub fn save_dump(dir: &Path, manifest: &DumpManifest, images: &[(String, &CandidateSet, Option<String>)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = manifest.clone();
    manifest.images = images
        .iter()
        .map(|(id, _, features)| ImageEntry {
            id: id.clone(),
            candidates: format!("{id}.ovcd"),
            features: features.clone(),
        })
        .collect();
    manifest.validate()?;
    for ((id, set, _), entry) in images.iter().zip(&manifest.images) {
        write_file(&dir.join(&entry.candidates), &encode_candidates(set).map_err(|e| e.in_image(id))?)?;
    }
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join(MANIFEST_FILE), text.as_bytes())
}
