//! Test-time handling of mask-decoder candidates: no-object filtering,
//! in/out-vocabulary ensembling and panoptic fusion.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mask::{same_dims, BinaryMask, SoftMask};
use crate::panoptic::{PanopticMap, Segment, VOID_ID};
use crate::taxonomy::Taxonomy;

/// Tolerance on posterior sums for in-memory candidate sets.
pub const POSTERIOR_TOLERANCE: f64 = 1e-5;

/// One decoder output: a localization map and class posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub sigma: SoftMask,
    /// Distribution over C classes, plus a trailing no-object entry when the
    /// owning set carries one.
    pub posterior: Vec<f32>,
    /// Optional zero-shot distribution over the C classes.
    pub clip_posterior: Option<Vec<f32>>,
    /// Set when the class mass was zero and a uniform fallback was used.
    pub degenerate: bool,
}

impl Candidate {
    pub fn new(sigma: SoftMask, posterior: Vec<f32>) -> Self {
        Candidate {
            sigma,
            posterior,
            clip_posterior: None,
            degenerate: false,
        }
    }

    pub fn with_clip(mut self, clip: Vec<f32>) -> Self {
        self.clip_posterior = Some(clip);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    width: u32,
    height: u32,
    num_classes: usize,
    with_no_object: bool,
    candidates: Vec<Candidate>,
}

pub(crate) fn check_distribution(p: &[f32], len: usize, tolerance: f64) -> std::result::Result<(), String> {
    if p.len() != len {
        return Err(format!("expected {len} probabilities, got {}", p.len()));
    }
    if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(format!("probability {v} is negative or not finite"));
    }
    let sum: f64 = p.iter().map(|&v| v as f64).sum();
    if (sum - 1.0).abs() > tolerance {
        return Err(format!("probabilities sum to {sum}, not 1"));
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn renormalize(p: &[f32]) -> Option<Vec<f32>> {
    let mass: f64 = p.iter().map(|&v| v as f64).sum();
    (mass > 0.0).then(|| p.iter().map(|&v| (v as f64 / mass) as f32).collect())
}

impl CandidateSet {
    /// Validates shared sigma dimensions and every posterior (length, sign,
    /// sum within [`POSTERIOR_TOLERANCE`]). Zero-shot posteriors must be
    /// present on all candidates or on none.
    pub fn new(
        width: u32,
        height: u32,
        num_classes: usize,
        with_no_object: bool,
        candidates: Vec<Candidate>,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::validation("candidate set", "at least one class required"));
        }
        let expected = num_classes + with_no_object as usize;
        let with_clip = candidates.first().is_some_and(|c| c.clip_posterior.is_some());
        for (i, c) in candidates.iter().enumerate() {
            same_dims((width, height), c.sigma.dims())?;
            check_distribution(&c.posterior, expected, POSTERIOR_TOLERANCE)
                .map_err(|m| Error::validation("candidate set", format!("candidate {i} posterior: {m}")))?;
            match (&c.clip_posterior, with_clip) {
                (Some(p), true) => check_distribution(p, num_classes, POSTERIOR_TOLERANCE).map_err(|m| {
                    Error::validation("candidate set", format!("candidate {i} zero-shot posterior: {m}"))
                })?,
                (None, false) => {}
                _ => {
                    return Err(Error::validation(
                        "candidate set",
                        "zero-shot posteriors must be present on all candidates or none",
                    ))
                }
            }
        }
        Ok(CandidateSet {
            width,
            height,
            num_classes,
            with_no_object,
            candidates,
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

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn has_no_object(&self) -> bool {
        self.with_no_object
    }

    pub fn has_clip(&self) -> bool {
        self.candidates.first().is_some_and(|c| c.clip_posterior.is_some())
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn into_candidates(self) -> Vec<Candidate> {
        self.candidates
    }

    /// Keeps the candidates at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> CandidateSet {
        CandidateSet {
            candidates: indices.iter().map(|&i| self.candidates[i].clone()).collect(),
            ..self.shell()
        }
    }

    /// Rebuilds the set with replaced candidates, revalidating them.
    pub fn with_candidates(&self, candidates: Vec<Candidate>, with_no_object: bool) -> Result<CandidateSet> {
        CandidateSet::new(self.width, self.height, self.num_classes, with_no_object, candidates)
    }

    fn shell(&self) -> CandidateSet {
        CandidateSet {
            width: self.width,
            height: self.height,
            num_classes: self.num_classes,
            with_no_object: self.with_no_object,
            candidates: Vec::new(),
        }
    }

    /// Whether candidate `i` would be discarded as no-object.
    pub fn is_no_object(&self, i: usize) -> bool {
        self.with_no_object && argmax(&self.candidates[i].posterior) == self.num_classes
    }
}

/// Bit set iff the value is at least `threshold`.
pub fn binarize(sigma: &SoftMask, threshold: f32) -> BinaryMask {
    sigma.binarize(threshold)
}

/// Indices of candidates whose argmax over C+1 is a real class.
pub fn retained_indices(cands: &CandidateSet) -> Vec<usize> {
    (0..cands.len()).filter(|&i| !cands.is_no_object(i)).collect()
}

/// Discards candidates classified as no-object and renormalizes the
/// survivors over the C real classes. Sets without a no-object entry pass
/// through unchanged.
pub fn drop_no_object(cands: &CandidateSet) -> CandidateSet {
    if !cands.with_no_object {
        return cands.clone();
    }
    let c = cands.num_classes;
    let candidates = retained_indices(cands)
        .into_iter()
        .map(|i| {
            let cand = &cands.candidates[i];
            Candidate {
                posterior: renormalize(&cand.posterior[..c]).expect("argmax on a real class implies positive mass"),
                ..cand.clone()
            }
        })
        .collect();
    CandidateSet {
        with_no_object: false,
        candidates,
        ..cands.shell()
    }
}

/// Removes the no-object entry from every posterior while keeping every
/// candidate. A candidate with no class mass left gets a uniform
/// distribution and its `degenerate` flag set.
pub fn strip_no_object_logit(cands: &CandidateSet) -> CandidateSet {
    if !cands.with_no_object {
        return cands.clone();
    }
    let c = cands.num_classes;
    let candidates = cands
        .candidates
        .iter()
        .map(|cand| match renormalize(&cand.posterior[..c]) {
            Some(p) => Candidate {
                posterior: p,
                ..cand.clone()
            },
            None => Candidate {
                posterior: vec![1.0 / c as f32; c],
                degenerate: true,
                ..cand.clone()
            },
        })
        .collect();
    CandidateSet {
        with_no_object: false,
        candidates,
        ..cands.shell()
    }
}

/// Exponent applied to the zero-shot distribution for seen (`alpha`) and
/// unseen (`beta`) classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        EnsembleParams { alpha: 0.4, beta: 0.8 }
    }
}

const ENSEMBLE_FLOOR: f64 = 1e-12;

/// Geometric ensemble: class `c` scores `p_in^(1-a) * p_clip^a` with
/// `a = alpha` for seen classes and `beta` otherwise, then renormalized.
/// Probabilities are clamped to `[1e-12, 1]` before powering.
pub fn geometric_ensemble(p_in: &[f32], p_clip: &[f32], seen: &[bool], params: EnsembleParams) -> Result<Vec<f64>> {
    let EnsembleParams { alpha, beta } = params;
    if !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&beta) {
        return Err(Error::parameter("alpha/beta", "ensemble exponents must lie in [0, 1]"));
    }
    if p_in.len() != p_clip.len() || p_in.len() != seen.len() || p_in.is_empty() {
        return Err(Error::parameter(
            "ensemble inputs",
            format!("length mismatch: {} / {} / {}", p_in.len(), p_clip.len(), seen.len()),
        ));
    }
    let scores: Vec<f64> = p_in
        .iter()
        .zip(p_clip)
        .zip(seen)
        .map(|((&a, &b), &is_seen)| {
            let w = if is_seen { alpha } else { beta };
            let a = (a as f64).clamp(ENSEMBLE_FLOOR, 1.0);
            let b = (b as f64).clamp(ENSEMBLE_FLOOR, 1.0);
            a.powf(1.0 - w) * b.powf(w)
        })
        .collect();
    let total: f64 = scores.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::parameter("ensemble inputs", "zero total mass after ensembling"));
    }
    Ok(scores.into_iter().map(|s| s / total).collect())
}

/// Replaces each posterior with its ensemble with the candidate's zero-shot
/// posterior. Candidates without one are left as they are; if ensembling
/// fails the zero-shot posterior is used.
pub fn apply_ensemble(cands: &CandidateSet, seen: &[bool], params: EnsembleParams) -> Result<CandidateSet> {
    if cands.with_no_object {
        return Err(Error::validation(
            "candidate set",
            "apply a no-object policy before ensembling",
        ));
    }
    let candidates = cands
        .candidates
        .iter()
        .map(|cand| match &cand.clip_posterior {
            Some(clip) => {
                let posterior = match geometric_ensemble(&cand.posterior, clip, seen, params) {
                    Ok(p) => p.into_iter().map(|v| v as f32).collect(),
                    Err(_) => clip.clone(),
                };
                Candidate {
                    posterior,
                    ..cand.clone()
                }
            }
            None => cand.clone(),
        })
        .collect();
    Ok(CandidateSet {
        candidates,
        ..cands.shell()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    /// Candidates whose top class probability is below this are skipped.
    pub object_score_threshold: f32,
    /// A candidate is dropped when its final region keeps less than this
    /// fraction of its binarized area.
    pub overlap_keep_ratio: f32,
    pub sigma_threshold: f32,
    /// Merge stuff segments of the same class into one segment.
    pub merge_stuff: bool,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            object_score_threshold: 0.8,
            overlap_keep_ratio: 0.8,
            sigma_threshold: 0.5,
            merge_stuff: true,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("object_score_threshold", self.object_score_threshold),
            ("overlap_keep_ratio", self.overlap_keep_ratio),
            ("sigma_threshold", self.sigma_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::parameter(name, format!("{v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Fuses candidates into a panoptic map.
///
/// Every pixel goes to the surviving candidate maximizing
/// `confidence * sigma` (lowest index on ties), where confidence is the top
/// class probability. A candidate's segment is the part of its claimed
/// region where its own sigma passes `sigma_threshold`.
pub fn panoptic_fusion(cands: &CandidateSet, taxonomy: &Taxonomy, params: &FusionParams) -> Result<PanopticMap> {
    params.validate()?;
    if cands.with_no_object {
        return Err(Error::validation(
            "candidate set",
            "posteriors still carry a no-object entry; drop or strip it before fusion",
        ));
    }
    if cands.num_classes != taxonomy.len() {
        return Err(Error::validation(
            "candidate set",
            format!("{} classes vs taxonomy of {}", cands.num_classes, taxonomy.len()),
        ));
    }
    let (width, height) = cands.dims();
    let n_pixels = width as usize * height as usize;

    let kept: Vec<(usize, u32, f64)> = cands
        .candidates
        .iter()
        .enumerate()
        .filter_map(|(i, c)| {
            let class = argmax(&c.posterior);
            let conf = c.posterior[class];
            (conf >= params.object_score_threshold).then_some((i, class as u32, conf as f64))
        })
        .collect();
    if kept.is_empty() {
        return PanopticMap::void(width, height);
    }

    let mut owner = vec![0usize; n_pixels];
    for (p, slot) in owner.iter_mut().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for (k, &(i, _, conf)) in kept.iter().enumerate() {
            let score = conf * cands.candidates[i].sigma.values()[p] as f64;
            if score > best {
                best = score;
                *slot = k;
            }
        }
    }

    let mut ids = vec![VOID_ID; n_pixels];
    let mut segments = Vec::new();
    let mut stuff_ids: BTreeMap<u32, u32> = BTreeMap::new();
    for (k, &(i, class, _)) in kept.iter().enumerate() {
        let sigma = cands.candidates[i].sigma.values();
        let binarized = sigma.iter().filter(|&&v| v >= params.sigma_threshold).count();
        let region: Vec<usize> = (0..n_pixels)
            .filter(|&p| owner[p] == k && sigma[p] >= params.sigma_threshold)
            .collect();
        if binarized == 0 || region.is_empty() {
            continue;
        }
        if (region.len() as f64) < params.overlap_keep_ratio as f64 * binarized as f64 {
            continue;
        }
        let merge = params.merge_stuff && !taxonomy.is_thing(class);
        let id = match stuff_ids.get(&class) {
            Some(&id) if merge => id,
            _ => {
                let id = segments.len() as u32 + 1;
                segments.push(Segment { id, class_id: class });
                if merge {
                    stuff_ids.insert(class, id);
                }
                id
            }
        };
        for p in region {
            ids[p] = id;
        }
    }
    PanopticMap::new(width, height, ids, segments)
        .map_err(|e| Error::Invariant(format!("fusion produced an invalid map: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::ClassEntry;

    fn soft(w: u32, h: u32, f: impl Fn(u32, u32) -> f32) -> SoftMask {
        let values = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        SoftMask::new(w, h, values).unwrap()
    }

    fn taxonomy(things: &[bool]) -> Taxonomy {
        Taxonomy::new(
            things
                .iter()
                .enumerate()
                .map(|(i, &t)| ClassEntry::new(format!("c{i}"), t))
                .collect(),
        )
        .unwrap()
    }

    fn set(posteriors: &[&[f32]], with_no_object: bool) -> CandidateSet {
        let c = posteriors[0].len() - with_no_object as usize;
        let cands = posteriors
            .iter()
            .map(|p| Candidate::new(soft(2, 1, |_, _| 1.0), p.to_vec()))
            .collect();
        CandidateSet::new(2, 1, c, with_no_object, cands).unwrap()
    }

    #[test]
    fn binarize_examples() {
        assert!(binarize(&soft(2, 2, |_, _| 0.6), 0.5).bits().iter().all(|&b| b));
        assert!(binarize(&soft(2, 2, |_, _| 0.4), 0.5).is_empty());
        assert!(binarize(&soft(1, 1, |_, _| 0.5), 0.5).bits()[0]);
    }

    #[test]
    fn invalid_posteriors_rejected() {
        let s = soft(2, 1, |_, _| 1.0);
        assert!(CandidateSet::new(2, 1, 2, true, vec![Candidate::new(s.clone(), vec![0.5, 0.4, 0.3])]).is_err());
        assert!(CandidateSet::new(2, 1, 2, true, vec![Candidate::new(s.clone(), vec![0.5, 0.5])]).is_err());
        assert!(CandidateSet::new(2, 1, 2, false, vec![Candidate::new(s, vec![1.5, -0.5])]).is_err());
    }

    #[test]
    fn drop_no_object_examples() {
        let s = set(&[&[0.05, 0.05, 0.9], &[0.6, 0.1, 0.3], &[0.3, 0.3, 0.4]], true);
        let kept = drop_no_object(&s);
        assert_eq!(kept.len(), 1);
        assert!(!kept.has_no_object());
        let p = &kept.candidates()[0].posterior;
        assert!((p[0] - 0.6 / 0.7).abs() < 1e-6 && (p[1] - 0.1 / 0.7).abs() < 1e-6);
    }

    #[test]
    fn strip_examples() {
        let s = set(&[&[0.3, 0.3, 0.4], &[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]], true);
        let out = strip_no_object_logit(&s);
        assert_eq!(out.len(), 3);
        let c = out.candidates();
        assert!((c[0].posterior[0] - 0.5).abs() < 1e-7 && (c[0].posterior[1] - 0.5).abs() < 1e-7);
        assert_eq!(c[1].posterior, vec![1.0, 0.0]);
        assert_eq!(c[2].posterior, vec![0.5, 0.5]);
        assert!(c[2].degenerate && !c[0].degenerate);
    }

    #[test]
    fn ensemble_examples() {
        let seen = [true, true];
        let p_in = [0.7f32, 0.3];
        let p_clip = [0.2f32, 0.8];
        let id = geometric_ensemble(&p_in, &p_clip, &seen, EnsembleParams { alpha: 0.0, beta: 0.0 }).unwrap();
        assert!((id[0] - 0.7).abs() < 1e-7);
        let clip = geometric_ensemble(&p_in, &p_clip, &seen, EnsembleParams { alpha: 1.0, beta: 1.0 }).unwrap();
        assert!((clip[1] - 0.8).abs() < 1e-7);
        let half = geometric_ensemble(&[0.8, 0.2], &[0.2, 0.8], &seen, EnsembleParams { alpha: 0.5, beta: 0.5 }).unwrap();
        assert!((half[0] - 0.5).abs() < 1e-12 && (half[1] - 0.5).abs() < 1e-12);
        assert!(geometric_ensemble(&p_in, &p_clip, &seen, EnsembleParams { alpha: 1.5, beta: 0.0 }).is_err());
        // Zero entries are clamped, not propagated.
        let z = geometric_ensemble(&[1.0, 0.0], &[0.0, 1.0], &[true, false], EnsembleParams::default()).unwrap();
        assert!(z.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn fusion_single_and_disjoint() {
        let tax = taxonomy(&[true, true]);
        let full = CandidateSet::new(4, 2, 2, false, vec![Candidate::new(soft(4, 2, |_, _| 0.9), vec![0.95, 0.05])]).unwrap();
        let map = panoptic_fusion(&full, &tax, &FusionParams::default()).unwrap();
        assert_eq!(map.segments(), &[Segment { id: 1, class_id: 0 }]);
        assert!(map.ids().iter().all(|&i| i == 1));

        let left = soft(4, 2, |x, _| if x < 2 { 0.9 } else { 0.1 });
        let right = soft(4, 2, |x, _| if x >= 2 { 0.8 } else { 0.05 });
        let two = CandidateSet::new(
            4,
            2,
            2,
            false,
            vec![Candidate::new(left, vec![0.9, 0.1]), Candidate::new(right, vec![0.1, 0.9])],
        )
        .unwrap();
        let map = panoptic_fusion(&two, &tax, &FusionParams::default()).unwrap();
        assert_eq!(map.ids(), &[1, 1, 2, 2, 1, 1, 2, 2]);
        assert_eq!(map.class_of(2), Some(1));
    }

    #[test]
    fn fusion_merges_stuff() {
        let tax = taxonomy(&[false, true]);
        let left = soft(4, 1, |x, _| if x < 2 { 1.0 } else { 0.0 });
        let right = soft(4, 1, |x, _| if x >= 2 { 1.0 } else { 0.0 });
        let cands = CandidateSet::new(
            4,
            1,
            2,
            false,
            vec![Candidate::new(left, vec![1.0, 0.0]), Candidate::new(right, vec![0.9, 0.1])],
        )
        .unwrap();
        let map = panoptic_fusion(&cands, &tax, &FusionParams::default()).unwrap();
        assert_eq!(map.segments().len(), 1);
        assert!(map.ids().iter().all(|&i| i == 1));
        let split = panoptic_fusion(&cands, &tax, &FusionParams { merge_stuff: false, ..Default::default() }).unwrap();
        assert_eq!(split.segments().len(), 2);
    }

    #[test]
    fn fusion_threshold_and_overlap_rules() {
        let tax = taxonomy(&[true, true]);
        let params = FusionParams::default();
        let low = CandidateSet::new(2, 1, 2, false, vec![Candidate::new(soft(2, 1, |_, _| 1.0), vec![0.7, 0.3])]).unwrap();
        assert!(panoptic_fusion(&low, &tax, &params).unwrap().segments().is_empty());

        // The second candidate is mostly eclipsed by the first and is dropped.
        let big = soft(4, 1, |_, _| 1.0);
        let small = soft(4, 1, |x, _| if x < 2 { 0.9 } else { 0.0 });
        let eclipsed = CandidateSet::new(
            4,
            1,
            2,
            false,
            vec![Candidate::new(big, vec![1.0, 0.0]), Candidate::new(small, vec![0.0, 1.0])],
        )
        .unwrap();
        let map = panoptic_fusion(&eclipsed, &tax, &params).unwrap();
        assert_eq!(map.segments().len(), 1);

        let with_no_object = set(&[&[0.9, 0.05, 0.05]], true);
        assert!(panoptic_fusion(&with_no_object, &tax, &params).is_err());
    }

    #[test]
    fn empty_fusion_is_void() {
        let tax = taxonomy(&[true]);
        let cands = CandidateSet::new(3, 3, 1, false, vec![]).unwrap();
        let map = panoptic_fusion(&cands, &tax, &FusionParams::default()).unwrap();
        assert!(map.segments().is_empty());
    }
}
