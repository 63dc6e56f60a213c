//! Mask-pooled zero-shot classification and the segmentation-oracle
//! pipeline that classifies ground-truth masks from dense features.
//!
//! Feature dump (`OVFT`): magic, version u16, fh u32, fw u32, dim u32, then
//! `fh * fw * dim` little-endian f32, row-major and channel-last.
//! Text embeddings (`OVTE`): magic, rows u32, dim u32, then `rows * dim` f32.

use std::path::Path;

use crate::codec::{put_f32, put_u16, put_u32, read_file, write_file, ByteReader};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::metrics::{evaluate_pair, MatchReport, PqStats};
use crate::panoptic::{PanopticMap, VOID_ID};
use crate::taxonomy::Taxonomy;

pub const FEATURE_MAGIC: &[u8; 4] = b"OVFT";
pub const FEATURE_VERSION: u16 = 1;
pub const TEXT_MAGIC: &[u8; 4] = b"OVTE";
pub const DEFAULT_TAU: f64 = 0.01;

/// Dense `fh x fw x dim` feature grid, row-major and channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFeatureGrid {
    fh: u32,
    fw: u32,
    dim: u32,
    values: Vec<f32>,
}

impl DenseFeatureGrid {
    pub fn new(fh: u32, fw: u32, dim: u32, values: Vec<f32>) -> Result<Self> {
        if fh == 0 || fw == 0 || dim == 0 {
            return Err(Error::validation(
                "feature grid",
                format!("dimensions must be positive, got {fh}x{fw}x{dim}"),
            ));
        }
        let n = fh as u64 * fw as u64 * dim as u64;
        if values.len() as u64 != n {
            return Err(Error::validation(
                "feature grid",
                format!("{fh}x{fw}x{dim} grid needs {n} values, got {}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("feature grid", "non-finite feature value"));
        }
        Ok(DenseFeatureGrid { fh, fw, dim, values })
    }

    pub fn height(&self) -> u32 {
        self.fh
    }

    pub fn width(&self) -> u32 {
        self.fw
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Feature vector at grid cell (x, y).
    pub fn at(&self, x: u32, y: u32) -> &[f32] {
        let d = self.dim as usize;
        let start = (y as usize * self.fw as usize + x as usize) * d;
        &self.values[start..start + d]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + 4 * self.values.len());
        out.extend_from_slice(FEATURE_MAGIC);
        put_u16(&mut out, FEATURE_VERSION);
        put_u32(&mut out, self.fh);
        put_u32(&mut out, self.fw);
        put_u32(&mut out, self.dim);
        for &v in &self.values {
            put_f32(&mut out, v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = ByteReader::new(bytes);
        rd.expect_magic(FEATURE_MAGIC)?;
        let at = rd.offset();
        let version = rd.u16()?;
        if version != FEATURE_VERSION {
            return Err(Error::format(at, format!("unsupported version {version}")));
        }
        let fh = rd.u32()?;
        let fw = rd.u32()?;
        let dim = rd.u32()?;
        let body = rd.offset();
        let n = fh as u64 * fw as u64 * dim as u64;
        rd.require(n, 4, "feature values")?;
        let values = (0..n).map(|_| rd.f32()).collect::<Result<Vec<_>>>()?;
        rd.finish()?;
        DenseFeatureGrid::new(fh, fw, dim, values).map_err(|e| Error::format(body, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        DenseFeatureGrid::from_bytes(&read_file(path)?).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }
}

/// `rows x dim` text embedding matrix; row `c` embeds taxonomy class `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddings {
    rows: u32,
    dim: u32,
    values: Vec<f32>,
}

impl TextEmbeddings {
    pub fn new(rows: u32, dim: u32, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::validation(
                "text embeddings",
                format!("dimensions must be positive, got {rows}x{dim}"),
            ));
        }
        if values.len() as u64 != rows as u64 * dim as u64 {
            return Err(Error::validation(
                "text embeddings",
                format!("{rows}x{dim} matrix needs {} values, got {}", rows as u64 * dim as u64, values.len()),
            ));
        }
        let t = TextEmbeddings { rows, dim, values };
        for r in 0..rows {
            let row = t.row(r as usize);
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation("text embeddings", format!("row {r} is not finite")));
            }
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::validation("text embeddings", format!("row {r} is all zeros")));
            }
        }
        Ok(t)
    }

    pub fn rows(&self) -> usize {
        self.rows as usize
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let d = self.dim as usize;
        &self.values[r * d..(r + 1) * d]
    }

    pub fn check_taxonomy(&self, taxonomy: &Taxonomy) -> Result<()> {
        if self.rows() != taxonomy.len() {
            return Err(Error::validation(
                "text embeddings",
                format!("{} rows but taxonomy has {} classes", self.rows, taxonomy.len()),
            ));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.values.len());
        out.extend_from_slice(TEXT_MAGIC);
        put_u32(&mut out, self.rows);
        put_u32(&mut out, self.dim);
        for &v in &self.values {
            put_f32(&mut out, v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = ByteReader::new(bytes);
        rd.expect_magic(TEXT_MAGIC)?;
        let rows = rd.u32()?;
        let dim = rd.u32()?;
        let body = rd.offset();
        let n = rows as u64 * dim as u64;
        rd.require(n, 4, "embedding values")?;
        let values = (0..n).map(|_| rd.f32()).collect::<Result<Vec<_>>>()?;
        rd.finish()?;
        TextEmbeddings::new(rows, dim, values).map_err(|e| Error::format(body, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        TextEmbeddings::from_bytes(&read_file(path)?).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }
}

/// Mean feature vector over the mask's pixels. The mask is first resampled
/// (nearest neighbour) to the feature grid resolution.
pub fn mask_pool(features: &DenseFeatureGrid, mask: &BinaryMask) -> Result<Vec<f64>> {
    let mask = mask.resample_nearest(features.fw, features.fh)?;
    let mut sum = vec![0.0f64; features.dim as usize];
    let mut count = 0u64;
    for y in 0..features.fh {
        for x in 0..features.fw {
            if mask.get(x, y) {
                count += 1;
                for (acc, &v) in sum.iter_mut().zip(features.at(x, y)) {
                    *acc += v as f64;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask(format!(
            "mask has no pixels at feature resolution {}x{}",
            features.fw, features.fh
        )));
    }
    Ok(sum.into_iter().map(|s| s / count as f64).collect())
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity between `embed` and each text row.
pub fn cosine_logits(embed: &[f64], texts: &TextEmbeddings) -> Result<Vec<f64>> {
    if embed.len() != texts.dim as usize {
        return Err(Error::parameter(
            "embedding",
            format!("dimension {} vs text dimension {}", embed.len(), texts.dim),
        ));
    }
    let e_norm = norm(embed.iter().copied());
    if !(e_norm > 0.0 && e_norm.is_finite()) {
        return Err(Error::parameter("embedding", "visual embedding has zero norm"));
    }
    (0..texts.rows())
        .map(|r| {
            let row = texts.row(r);
            let t_norm = norm(row.iter().map(|&v| v as f64));
            if !(t_norm > 0.0) {
                return Err(Error::parameter("embedding", format!("text row {r} has zero norm")));
            }
            let dot: f64 = embed.iter().zip(row).map(|(&a, &b)| a * b as f64).sum();
            Ok((dot / (e_norm * t_norm)).clamp(-1.0, 1.0))
        })
        .collect()
}

/// `softmax(logits / tau)`.
pub fn softmax_temperature(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::parameter("tau", format!("temperature must be positive, got {tau}")));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::parameter("logits", "non-finite logit"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| ((l - max) / tau).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

fn argmax_f64(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Result of classifying one image's ground-truth segments.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleImage {
    /// Ground-truth boundaries with predicted classes; skipped segments are void.
    pub prediction: PanopticMap,
    pub report: MatchReport,
    /// Segments too thin to cover any feature cell.
    pub empty_mask_skips: usize,
}

/// Classifies each ground-truth segment by pooling features inside it and
/// picking the most similar text embedding, then scores the result.
pub fn segmentation_oracle_image(
    features: &DenseFeatureGrid,
    gt: &PanopticMap,
    texts: &TextEmbeddings,
    tau: f64,
    taxonomy: &Taxonomy,
) -> Result<OracleImage> {
    texts.check_taxonomy(taxonomy)?;
    if features.dim != texts.dim {
        return Err(Error::validation(
            "feature grid",
            format!("feature dimension {} vs text dimension {}", features.dim, texts.dim),
        ));
    }
    let mut classes = std::collections::BTreeMap::new();
    let mut skipped = Vec::new();
    for seg in gt.segments() {
        match mask_pool(features, &gt.segment_mask(seg.id)) {
            Ok(embed) => {
                let probs = softmax_temperature(&cosine_logits(&embed, texts)?, tau)?;
                classes.insert(seg.id, argmax_f64(&probs) as u32);
            }
            Err(Error::EmptyMask(_)) => skipped.push(seg.id),
            Err(e) => return Err(e),
        }
    }
    let ids: Vec<u32> = gt
        .ids()
        .iter()
        .map(|&i| if skipped.contains(&i) { VOID_ID } else { i })
        .collect();
    let segments = gt
        .segments()
        .iter()
        .filter(|s| !skipped.contains(&s.id))
        .map(|s| crate::panoptic::Segment {
            id: s.id,
            class_id: classes[&s.id],
        })
        .collect();
    let prediction = PanopticMap::new(gt.width(), gt.height(), ids, segments)?;
    let report = evaluate_pair(&prediction, gt, taxonomy, crate::metrics::DEFAULT_VOID_OVERLAP)?;
    Ok(OracleImage {
        prediction,
        report,
        empty_mask_skips: skipped.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OracleSummary {
    pub stats: PqStats,
    pub reports: Vec<MatchReport>,
    pub empty_mask_skips: usize,
}

/// Runs [`segmentation_oracle_image`] over every image, accumulating in
/// input order.
pub fn segmentation_oracle_eval<'a>(
    images: impl IntoIterator<Item = (&'a DenseFeatureGrid, &'a PanopticMap)>,
    texts: &TextEmbeddings,
    tau: f64,
    taxonomy: &Taxonomy,
) -> Result<OracleSummary> {
    let mut summary = OracleSummary::default();
    for (features, gt) in images {
        let img = segmentation_oracle_image(features, gt, texts, tau, taxonomy)?;
        summary.stats.add_report(&img.report);
        summary.empty_mask_skips += img.empty_mask_skips;
        summary.reports.push(img.report);
    }
    Ok(summary)
}
