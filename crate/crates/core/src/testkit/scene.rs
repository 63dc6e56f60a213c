use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, SoftMask};
use crate::metrics::iou;
use crate::panoptic::{PanopticMap, Segment, VOID_ID};
use crate::proposals::{Candidate, CandidateSet};
use crate::taxonomy::{ClassEntry, Taxonomy};
use crate::zeroshot::{DenseFeatureGrid, TextEmbeddings};

/// Parameters of a synthetic scene and its corrupted candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub min_segments: usize,
    pub max_segments: usize,
    pub num_classes: usize,
    /// Largest erosion radius drawn per candidate (0 disables).
    pub erosion_radius: u32,
    /// Largest dilation radius drawn per candidate (0 disables).
    pub dilation_radius: u32,
    /// Probability that a candidate's top class is a wrong one.
    pub class_flip: f64,
    /// Probability that a candidate's argmax is the no-object class.
    pub no_object_flip: f64,
    /// Extra candidates not derived from any segment.
    pub spurious: usize,
    /// Sigma values are pulled up to this far from 0/1 (must stay below 0.5).
    pub sigma_jitter: f32,
    /// Probability of adding one void region.
    pub void_probability: f64,
    pub with_clip: bool,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 24,
            height: 24,
            min_segments: 2,
            max_segments: 6,
            num_classes: 8,
            erosion_radius: 0,
            dilation_radius: 0,
            class_flip: 0.0,
            no_object_flip: 0.0,
            spurious: 0,
            sigma_jitter: 0.0,
            void_probability: 0.0,
            with_clip: false,
            seed: 0,
        }
    }
}

/// Where a generated candidate came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateOrigin {
    /// Source ground-truth segment; `None` for spurious candidates.
    pub gt_segment_id: Option<u32>,
    pub class_flipped: bool,
    pub no_object_flipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub gt: PanopticMap,
    pub candidates: CandidateSet,
    pub origins: Vec<CandidateOrigin>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, m: &str| Err(Error::parameter(name, m));
        if self.width == 0 || self.height == 0 {
            return bad("width/height", "must be positive");
        }
        if self.min_segments == 0 || self.min_segments > self.max_segments {
            return bad("segments", "need 1 <= min_segments <= max_segments");
        }
        if self.max_segments + 1 > self.width as usize * self.height as usize {
            return bad("segments", "more regions than pixels");
        }
        if self.num_classes < 3 {
            return bad("num_classes", "at least 3 classes required");
        }
        for (name, p) in [
            ("class_flip", self.class_flip),
            ("no_object_flip", self.no_object_flip),
            ("void_probability", self.void_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(name, "probability must lie in [0, 1]");
            }
        }
        if !(0.0..0.5).contains(&self.sigma_jitter) {
            return bad("sigma_jitter", "must lie in [0, 0.5)");
        }
        Ok(())
    }

    /// Classes `class_0 ..`; even indices are things, the first half seen.
    pub fn taxonomy(&self) -> Taxonomy {
        synthetic_taxonomy(self.num_classes)
    }
}

/// Random noisy spec within the brute-force ranges: at most 32x32, at most
/// 6 segments, at most 8 classes. Every kind of corruption is switched on.
pub fn random_spec(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let max_segments = rng.random_range(1..=6);
    SceneSpec {
        width: rng.random_range(4..=32),
        height: rng.random_range(4..=32),
        min_segments: rng.random_range(1..=max_segments),
        max_segments,
        num_classes: rng.random_range(3..=8),
        erosion_radius: rng.random_range(0..=3),
        dilation_radius: rng.random_range(0..=2),
        class_flip: rng.random_range(0.0..0.5),
        no_object_flip: rng.random_range(0.0..0.3),
        spurious: rng.random_range(0..=3),
        sigma_jitter: rng.random_range(0.0..0.45),
        void_probability: 0.5,
        with_clip: false,
        seed,
    }
}

pub fn synthetic_taxonomy(num_classes: usize) -> Taxonomy {
    let classes = (0..num_classes)
        .map(|i| ClassEntry::new(format!("class_{i}"), i % 2 == 0))
        .collect();
    let seen: Vec<usize> = (0..num_classes.div_ceil(2)).collect();
    Taxonomy::new(classes)
        .and_then(|t| t.with_seen(&seen))
        .expect("synthetic names are distinct")
}

/// A distribution over `len` entries with `peak` mass on `top` and the rest
/// spread randomly over the others.
fn peaked(rng: &mut ChaCha8Rng, len: usize, top: usize, peak: f64) -> Vec<f32> {
    let mut rest: Vec<f64> = (0..len).map(|_| rng.random_range(0.01..1.0)).collect();
    rest[top] = 0.0;
    let total: f64 = rest.iter().sum();
    let mut p: Vec<f64> = rest.iter().map(|r| r / total * (1.0 - peak)).collect();
    p[top] = peak;
    normalized_f32(&p)
}

fn normalized_f32(p: &[f64]) -> Vec<f32> {
    let sum: f64 = p.iter().sum();
    p.iter().map(|v| (v / sum) as f32).collect()
}

fn soft_from(mask: &BinaryMask, jitter: f32, rng: &mut ChaCha8Rng) -> SoftMask {
    let values = mask
        .bits()
        .iter()
        .map(|&b| {
            let j = if jitter > 0.0 { rng.random_range(0.0..jitter) } else { 0.0 };
            if b {
                1.0 - j
            } else {
                j
            }
        })
        .collect();
    SoftMask::new(mask.width(), mask.height(), values).expect("values in [0, 1]")
}

/// Erodes or dilates `mask` by a random radius, shrinking the radius until
/// the result is nonempty and keeps IoU > 0.5 with the source.
fn corrupt_shape(mask: &BinaryMask, spec: &SceneSpec, rng: &mut ChaCha8Rng) -> BinaryMask {
    let mut ops: Vec<(bool, u32)> = Vec::new();
    if spec.erosion_radius > 0 {
        ops.push((false, spec.erosion_radius));
    }
    if spec.dilation_radius > 0 {
        ops.push((true, spec.dilation_radius));
    }
    let Some(&(dilate, max_r)) = ops.get(rng.random_range(0..ops.len().max(1))) else {
        return mask.clone();
    };
    let mut r = rng.random_range(0..=max_r);
    while r > 0 {
        let out = if dilate { mask.dilate(r) } else { mask.erode(r) };
        if !out.is_empty() && iou(&out, mask).expect("same size") > 0.5 {
            return out;
        }
        r -= 1;
    }
    mask.clone()
}

fn random_rect(w: u32, h: u32, rng: &mut ChaCha8Rng) -> BinaryMask {
    let x0 = rng.random_range(0..w);
    let y0 = rng.random_range(0..h);
    let x1 = rng.random_range(x0..w);
    let y1 = rng.random_range(y0..h);
    BinaryMask::from_fn(w, h, |x, y| (x0..=x1).contains(&x) && (y0..=y1).contains(&y)).expect("positive size")
}

/// Generates a ground-truth map from seeded Voronoi regions and a candidate
/// set derived from it: one candidate per segment in segment order (with the
/// configured corruptions), then the spurious candidates.
pub fn gen_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let n_pixels = w as usize * h as usize;
    let taxonomy = spec.taxonomy();

    let k = rng.random_range(spec.min_segments..=spec.max_segments);
    let with_void = rng.random_bool(spec.void_probability);
    let sites_n = k + with_void as usize;
    let mut pixels: Vec<usize> = (0..n_pixels).collect();
    pixels.shuffle(&mut rng);
    let sites: Vec<(i64, i64)> = pixels[..sites_n]
        .iter()
        .map(|&p| ((p % w as usize) as i64, (p / w as usize) as i64))
        .collect();

    let mut ids_pool: BTreeSet<u32> = BTreeSet::new();
    while ids_pool.len() < k {
        ids_pool.insert(rng.random_range(1..=60_000));
    }
    let mut seg_ids: Vec<u32> = ids_pool.into_iter().collect();
    seg_ids.shuffle(&mut rng);

    let mut used_stuff = BTreeSet::new();
    let segments: Vec<Segment> = seg_ids
        .iter()
        .map(|&id| {
            let choices: Vec<u32> = (0..spec.num_classes as u32)
                .filter(|c| taxonomy.is_thing(*c) || !used_stuff.contains(c))
                .collect();
            let class_id = choices[rng.random_range(0..choices.len())];
            if !taxonomy.is_thing(class_id) {
                used_stuff.insert(class_id);
            }
            Segment { id, class_id }
        })
        .collect();

    // The last site, when present, is the void region.
    let ids: Vec<u32> = (0..n_pixels)
        .map(|p| {
            let (x, y) = ((p % w as usize) as i64, (p / w as usize) as i64);
            let nearest = (0..sites_n)
                .min_by_key(|&s| {
                    let (sx, sy) = sites[s];
                    (sx - x).pow(2) + (sy - y).pow(2)
                })
                .expect("at least one site");
            if nearest < k {
                seg_ids[nearest]
            } else {
                VOID_ID
            }
        })
        .collect();
    let gt = PanopticMap::new(w, h, ids, segments.clone())?;

    let c = spec.num_classes;
    let mut candidates = Vec::new();
    let mut origins = Vec::new();
    // A wrong label must not merge with another segment in fusion, so flips
    // avoid stuff classes already predicted in this image.
    let mut stuff_labels: BTreeSet<usize> = used_stuff.iter().map(|&c| c as usize).collect();
    for seg in &segments {
        let shape = corrupt_shape(&gt.segment_mask(seg.id), spec, &mut rng);
        let sigma = soft_from(&shape, spec.sigma_jitter, &mut rng);
        let truth = seg.class_id as usize;
        let no_object_flipped = rng.random_bool(spec.no_object_flip);
        let class_flipped = !no_object_flipped && rng.random_bool(spec.class_flip);
        let label = if class_flipped {
            let others: Vec<usize> = (0..c)
                .filter(|&x| x != truth && (taxonomy.is_thing(x as u32) || !stuff_labels.contains(&x)))
                .collect();
            let label = others[rng.random_range(0..others.len())];
            if !taxonomy.is_thing(label as u32) {
                stuff_labels.insert(label);
            }
            label
        } else {
            truth
        };
        let posterior = if no_object_flipped {
            // The class keeps 90% of the residual mass, so stripping the
            // no-object entry leaves a confident prediction.
            let no_object = rng.random_range(0.6..0.7);
            let class_part = peaked(&mut rng, c, truth, 0.9);
            let mut p: Vec<f64> = class_part.iter().map(|&v| v as f64 * (1.0 - no_object)).collect();
            p.push(no_object);
            normalized_f32(&p)
        } else {
            let peak = rng.random_range(0.9..0.98);
            let mut p: Vec<f64> = peaked(&mut rng, c + 1, label, peak).iter().map(|&v| v as f64).collect();
            p[c] = p[c].min(0.02);
            normalized_f32(&p)
        };
        let mut cand = Candidate::new(sigma, posterior);
        if spec.with_clip {
            let peak = rng.random_range(0.7..0.9);
            cand = cand.with_clip(peaked(&mut rng, c, label, peak));
        }
        candidates.push(cand);
        origins.push(CandidateOrigin {
            gt_segment_id: Some(seg.id),
            class_flipped,
            no_object_flipped,
        });
    }
    for _ in 0..spec.spurious {
        let shape = random_rect(w, h, &mut rng);
        let sigma = soft_from(&shape, spec.sigma_jitter, &mut rng);
        let label = rng.random_range(0..c);
        let mut p: Vec<f64> = peaked(&mut rng, c, label, 0.6).iter().map(|&v| v as f64).collect();
        let no_object = rng.random_range(0.85..0.95);
        p.iter_mut().for_each(|v| *v *= 1.0 - no_object);
        p.push(no_object);
        let mut cand = Candidate::new(sigma, normalized_f32(&p));
        if spec.with_clip {
            cand = cand.with_clip(peaked(&mut rng, c, label, 0.5));
        }
        candidates.push(cand);
        origins.push(CandidateOrigin {
            gt_segment_id: None,
            class_flipped: false,
            no_object_flipped: false,
        });
    }
    let candidates = CandidateSet::new(w, h, c, true, candidates)?;
    Ok(Scene { gt, candidates, origins })
}

/// Features and text embeddings under which every ground-truth segment
/// pools exactly onto its class embedding: text rows are one-hot axes and
/// each labelled pixel carries its class axis. Void pixels get random
/// features.
pub fn aligned_features(gt: &PanopticMap, num_classes: usize, dim: u32, seed: u64) -> Result<(DenseFeatureGrid, TextEmbeddings)> {
    if (dim as usize) < num_classes {
        return Err(Error::parameter("dim", "must be at least the class count"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dim as usize;
    let mut texts = vec![0.0f32; num_classes * d];
    for class in 0..num_classes {
        texts[class * d + class] = 1.0;
    }
    let mut values = Vec::with_capacity(gt.ids().len() * d);
    for &id in gt.ids() {
        match gt.class_of(id) {
            Some(class) => {
                let mut v = vec![0.0f32; d];
                v[class as usize] = rng.random_range(0.5..2.0);
                values.extend(v);
            }
            None => values.extend((0..d).map(|_| rng.random_range(-1.0f32..1.0))),
        }
    }
    Ok((
        DenseFeatureGrid::new(gt.height(), gt.width(), dim, values)?,
        TextEmbeddings::new(num_classes as u32, dim, texts)?,
    ))
}
