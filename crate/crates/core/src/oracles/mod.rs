//! Ground-truth-informed interventions used to bound pipeline components:
//! the classification oracle on final panoptic maps, the Hungarian
//! mask-selection oracle on raw candidates, and segmentation/classification
//! oracles stacked on top of a selection.

mod cost;
mod hungarian;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cost::{bce_dice_cost, AssignmentCostParams};
pub use hungarian::{hungarian, Assignment};

use crate::error::{Error, Result};
use crate::mask::SoftMask;
use crate::metrics::strong_overlaps;
use crate::panoptic::{panoptic_to_masks, PanopticMap};
use crate::proposals::{strip_no_object_logit, Candidate, CandidateSet};

/// What happens to the no-object entry of selected candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoObjectPolicy {
    /// Keep it; the regular no-object drop runs downstream.
    #[default]
    Keep,
    /// Remove it so every selected candidate reaches fusion.
    Strip,
}

impl FromStr for NoObjectPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "keep" => Ok(NoObjectPolicy::Keep),
            "strip" => Ok(NoObjectPolicy::Strip),
            other => Err(format!("unknown no-object policy {other:?} (expected keep or strip)")),
        }
    }
}

impl fmt::Display for NoObjectPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoObjectPolicy::Keep => "keep",
            NoObjectPolicy::Strip => "strip",
        })
    }
}

/// One Hungarian pair between a ground-truth segment and a candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedMatch {
    /// Index into the original (unselected) candidate set.
    pub candidate_index: usize,
    pub gt_segment_id: u32,
    pub gt_class: u32,
    pub cost: f64,
    /// The candidate's argmax was the no-object class before any policy.
    pub argmax_no_object: bool,
}

/// Candidates kept by the selection oracle. `matches[k]` describes
/// `candidates.candidates()[k]`; both are ordered by original index.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub candidates: CandidateSet,
    pub matches: Vec<SelectedMatch>,
    pub assignment: Assignment,
    pub policy: NoObjectPolicy,
    /// Ground-truth segments left without a candidate; guaranteed misses.
    pub shortfall: usize,
}

impl Selection {
    pub fn with_candidates(&self, candidates: CandidateSet) -> Selection {
        Selection {
            candidates,
            ..self.clone()
        }
    }
}

/// Builds the ground-truth x candidate cost matrix at sigma resolution.
pub fn selection_costs(cands: &CandidateSet, gt: &PanopticMap, params: &AssignmentCostParams) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    let (w, h) = cands.dims();
    panoptic_to_masks(gt)
        .into_iter()
        .map(|(mask, _)| {
            let mask = mask.resample_nearest(w, h)?;
            cands
                .candidates()
                .iter()
                .map(|c| bce_dice_cost(&c.sigma, &mask, params))
                .collect()
        })
        .collect()
}

/// Hungarian mask selection: matches every ground-truth segment to a
/// candidate from the full set and discards the unmatched candidates.
pub fn selection_oracle(
    cands: &CandidateSet,
    gt: &PanopticMap,
    params: &AssignmentCostParams,
    policy: NoObjectPolicy,
) -> Result<Selection> {
    if gt.segments().is_empty() {
        return Err(Error::validation("selection oracle", "ground truth has no segments"));
    }
    let costs = selection_costs(cands, gt, params)?;
    let assignment = hungarian(&costs)?;
    let mut pairs = assignment.pairs.clone();
    pairs.sort_by_key(|&(_, c)| c);
    let matches: Vec<SelectedMatch> = pairs
        .iter()
        .map(|&(g, c)| {
            let seg = gt.segments()[g];
            SelectedMatch {
                candidate_index: c,
                gt_segment_id: seg.id,
                gt_class: seg.class_id,
                cost: costs[g][c],
                argmax_no_object: cands.is_no_object(c),
            }
        })
        .collect();
    let indices: Vec<usize> = matches.iter().map(|m| m.candidate_index).collect();
    let selected = cands.select(&indices);
    let candidates = match policy {
        NoObjectPolicy::Keep => selected,
        NoObjectPolicy::Strip => strip_no_object_logit(&selected),
    };
    Ok(Selection {
        shortfall: gt.segments().len() - matches.len(),
        candidates,
        matches,
        assignment,
        policy,
    })
}

/// Replaces each selected candidate's sigma with the indicator of its
/// matched ground-truth segment. Posteriors are untouched.
pub fn segmentation_oracle_on_selection(selection: &Selection, gt: &PanopticMap) -> Result<CandidateSet> {
    let (w, h) = selection.candidates.dims();
    let candidates = selection
        .candidates
        .candidates()
        .iter()
        .zip(&selection.matches)
        .map(|(cand, m)| {
            let mask = gt.segment_mask(m.gt_segment_id).resample_nearest(w, h)?;
            Ok(Candidate {
                sigma: SoftMask::indicator(&mask),
                ..cand.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let set = &selection.candidates;
    set.with_candidates(candidates, set.has_no_object())
}

/// Replaces each selected candidate's posterior (and zero-shot posterior,
/// when present) with a one-hot vector at its matched ground-truth class.
pub fn classification_oracle_on_selection(selection: &Selection) -> Result<CandidateSet> {
    let set = &selection.candidates;
    let c = set.num_classes();
    let one_hot = |class: u32, len: usize| {
        let mut v = vec![0.0f32; len];
        v[class as usize] = 1.0;
        v
    };
    let candidates = set
        .candidates()
        .iter()
        .zip(&selection.matches)
        .map(|(cand, m)| {
            if m.gt_class as usize >= c {
                return Err(Error::validation(
                    "selection",
                    format!("gt class {} outside {c} classes", m.gt_class),
                ));
            }
            Ok(Candidate {
                sigma: cand.sigma.clone(),
                posterior: one_hot(m.gt_class, c + set.has_no_object() as usize),
                clip_posterior: cand.clip_posterior.as_ref().map(|_| one_hot(m.gt_class, c)),
                degenerate: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    set.with_candidates(candidates, set.has_no_object())
}

/// Relabels every predicted segment that overlaps a ground-truth segment
/// with class-agnostic IoU > 0.5 to that segment's class. Boundaries are
/// unchanged.
pub fn classification_oracle(pred: &PanopticMap, gt: &PanopticMap) -> Result<PanopticMap> {
    crate::mask::same_dims(pred.dims(), gt.dims())?;
    let corrections: std::collections::BTreeMap<u32, u32> = strong_overlaps(pred, gt)
        .into_iter()
        .map(|(p, g, _)| (p, gt.class_of(g).expect("validated map")))
        .collect();
    Ok(pred.with_classes(|s| corrections.get(&s.id).copied().unwrap_or(s.class_id)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BinaryMask;
    use crate::metrics::{evaluate_pair, pq_scores, PqStats, DEFAULT_VOID_OVERLAP};
    use crate::panoptic::Segment;
    use crate::proposals::{drop_no_object, panoptic_fusion, FusionParams};
    use crate::taxonomy::{ClassEntry, Taxonomy};

    fn taxonomy(n: usize) -> Taxonomy {
        Taxonomy::new((0..n).map(|i| ClassEntry::new(format!("c{i}"), true)).collect()).unwrap()
    }

    fn strip_gt() -> PanopticMap {
        // Two segments: columns 0..4 (class 0) and 4..8 (class 1) of an 8x2 image.
        PanopticMap::from_masks(
            8,
            2,
            &[
                (BinaryMask::from_fn(8, 2, |x, _| x < 4).unwrap(), 0),
                (BinaryMask::from_fn(8, 2, |x, _| x >= 4).unwrap(), 1),
            ],
        )
        .unwrap()
    }

    fn cand(mask: impl Fn(u32, u32) -> bool, posterior: &[f32]) -> Candidate {
        Candidate::new(
            SoftMask::indicator(&BinaryMask::from_fn(8, 2, mask).unwrap()),
            posterior.to_vec(),
        )
    }

    #[test]
    fn diagonal_selection_is_identity() {
        let gt = strip_gt();
        let cands = CandidateSet::new(
            8,
            2,
            2,
            true,
            vec![
                cand(|x, _| x < 4, &[0.9, 0.05, 0.05]),
                cand(|x, _| x >= 4, &[0.05, 0.9, 0.05]),
                cand(|_, y| y == 0, &[0.1, 0.1, 0.8]),
            ],
        )
        .unwrap();
        let sel = selection_oracle(&cands, &gt, &AssignmentCostParams::default(), NoObjectPolicy::Keep).unwrap();
        let idx: Vec<usize> = sel.matches.iter().map(|m| m.candidate_index).collect();
        assert_eq!(idx, vec![0, 1]);
        assert_eq!(sel.shortfall, 0);
        assert!(sel.matches.iter().all(|m| m.cost < 1e-5));
    }

    #[test]
    fn one_gt_two_candidates_keeps_cheaper() {
        let gt = PanopticMap::from_masks(2, 1, &[(BinaryMask::new(2, 1, vec![true, true]).unwrap(), 0)]).unwrap();
        let soft = |v: f32| SoftMask::new(2, 1, vec![v, v]).unwrap();
        let cands = CandidateSet::new(
            2,
            1,
            1,
            false,
            vec![Candidate::new(soft(0.8), vec![1.0]), Candidate::new(soft(0.3), vec![1.0])],
        )
        .unwrap();
        let sel = selection_oracle(&cands, &gt, &AssignmentCostParams::default(), NoObjectPolicy::Keep).unwrap();
        assert_eq!(sel.matches.len(), 1);
        assert_eq!(sel.matches[0].candidate_index, 0);
        assert_eq!(sel.candidates.len(), 1);
    }

    #[test]
    fn keep_drops_and_strip_recovers_no_object_matches() {
        let gt = strip_gt();
        let tax = taxonomy(2);
        let cands = CandidateSet::new(
            8,
            2,
            2,
            true,
            vec![cand(|x, _| x < 4, &[0.9, 0.05, 0.05]), cand(|x, _| x >= 4, &[0.02, 0.38, 0.6])],
        )
        .unwrap();
        let params = AssignmentCostParams::default();
        let fuse = |set: &CandidateSet| panoptic_fusion(&drop_no_object(set), &tax, &FusionParams::default()).unwrap();

        let keep = selection_oracle(&cands, &gt, &params, NoObjectPolicy::Keep).unwrap();
        assert!(keep.matches[1].argmax_no_object);
        assert_eq!(fuse(&keep.candidates).segments().len(), 1);

        let strip = selection_oracle(&cands, &gt, &params, NoObjectPolicy::Strip).unwrap();
        assert!(!strip.candidates.has_no_object());
        assert_eq!(fuse(&strip.candidates).segments().len(), 2);
    }

    #[test]
    fn shortfall_reported() {
        let gt = strip_gt();
        let cands = CandidateSet::new(8, 2, 2, false, vec![cand(|x, _| x < 4, &[1.0, 0.0])]).unwrap();
        let sel = selection_oracle(&cands, &gt, &AssignmentCostParams::default(), NoObjectPolicy::Keep).unwrap();
        assert_eq!(sel.shortfall, 1);
        assert_eq!(sel.candidates.len(), 1);
        let void = PanopticMap::void(8, 2).unwrap();
        assert!(selection_oracle(&cands, &void, &AssignmentCostParams::default(), NoObjectPolicy::Keep).is_err());
    }

    #[test]
    fn stacked_oracles_reach_perfect_pq() {
        let gt = strip_gt();
        let tax = taxonomy(2);
        // Sloppy masks with swapped classes and a no-object argmax.
        let cands = CandidateSet::new(
            8,
            2,
            2,
            true,
            vec![
                cand(|x, y| x < 3 || (x == 3 && y == 0), &[0.1, 0.6, 0.3]),
                cand(|x, _| x >= 5, &[0.2, 0.1, 0.7]),
            ],
        )
        .unwrap();
        let sel = selection_oracle(&cands, &gt, &AssignmentCostParams::default(), NoObjectPolicy::Keep).unwrap();

        let seg = segmentation_oracle_on_selection(&sel, &gt).unwrap();
        for (before, after) in sel.candidates.candidates().iter().zip(seg.candidates()) {
            assert_eq!(before.posterior, after.posterior);
        }
        let seg_sel = sel.with_candidates(seg);
        let both = classification_oracle_on_selection(&seg_sel).unwrap();
        assert!((0..both.len()).all(|i| !both.is_no_object(i)));
        let pred = panoptic_fusion(&drop_no_object(&both), &tax, &FusionParams::default()).unwrap();
        let r = evaluate_pair(&pred, &gt, &tax, DEFAULT_VOID_OVERLAP).unwrap();
        assert_eq!(pq_scores(&PqStats::from_reports([&r]), &tax).unwrap().pq_all, 1.0);
    }

    #[test]
    fn classification_oracle_examples() {
        let tax = taxonomy(2);
        let gt = PanopticMap::from_masks(10, 1, &[(BinaryMask::from_fn(10, 1, |_, _| true).unwrap(), 0)]).unwrap();
        let wrong = PanopticMap::from_masks(10, 1, &[(BinaryMask::from_fn(10, 1, |x, _| x < 7).unwrap(), 1)]).unwrap();
        let fixed = classification_oracle(&wrong, &gt).unwrap();
        assert_eq!(fixed.segments(), &[Segment { id: 1, class_id: 0 }]);
        let pq_of = |pred: &PanopticMap| {
            let r = evaluate_pair(pred, &gt, &tax, DEFAULT_VOID_OVERLAP).unwrap();
            pq_scores(&PqStats::from_reports([&r]), &tax).unwrap().per_class[&0].pq
        };
        assert_eq!(pq_of(&wrong), 0.0);
        assert!((pq_of(&fixed) - 0.7).abs() < 1e-12);

        assert_eq!(classification_oracle(&gt, &gt).unwrap(), gt);

        let weak = PanopticMap::from_masks(10, 1, &[(BinaryMask::from_fn(10, 1, |x, _| x < 4).unwrap(), 1)]).unwrap();
        assert_eq!(classification_oracle(&weak, &gt).unwrap(), weak);
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("strip".parse::<NoObjectPolicy>().unwrap(), NoObjectPolicy::Strip);
        assert!("drop".parse::<NoObjectPolicy>().is_err());
        assert_eq!(NoObjectPolicy::Keep.to_string(), "keep");
    }
}
