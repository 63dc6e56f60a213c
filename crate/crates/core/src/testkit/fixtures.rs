use crate::mask::{BinaryMask, SoftMask};
use crate::panoptic::{PanopticMap, Segment};
use crate::proposals::{Candidate, CandidateSet};
use crate::taxonomy::{ClassEntry, Taxonomy};

/// A single-image case: taxonomy, ground truth and raw candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub taxonomy: Taxonomy,
    pub gt: PanopticMap,
    pub candidates: CandidateSet,
}

/// 8x4 image, left half class 0, right half class 1. The exact masks for
/// both segments are argmax no-object; a slightly shrunk copy of the left
/// segment is a confident class-0 prediction.
///
/// Plain inference keeps only the shrunk copy (PQ 0.375). The selection
/// oracle prefers the exact masks; kept as they are they are dropped
/// (PQ 0), with the no-object entry stripped they are both correct (PQ 1).
pub fn no_object_regression() -> Fixture {
    let (w, h) = (8, 4);
    let taxonomy = Taxonomy::new(vec![ClassEntry::new("cup", true), ClassEntry::new("table", true)])
        .expect("distinct names");
    let left = BinaryMask::from_fn(w, h, |x, _| x < 4).expect("size");
    let right = BinaryMask::from_fn(w, h, |x, _| x >= 4).expect("size");
    let shrunk = BinaryMask::from_fn(w, h, |x, _| x < 3).expect("size");
    let gt = PanopticMap::from_masks(w, h, &[(left.clone(), 0), (right.clone(), 1)]).expect("disjoint");
    let candidates = vec![
        Candidate::new(SoftMask::indicator(&left), vec![0.35, 0.05, 0.6]),
        Candidate::new(SoftMask::indicator(&shrunk), vec![0.9, 0.05, 0.05]),
        Candidate::new(SoftMask::indicator(&right), vec![0.02, 0.38, 0.6]),
    ];
    Fixture {
        taxonomy,
        gt,
        candidates: CandidateSet::new(w, h, 2, true, candidates).expect("valid posteriors"),
    }
}

/// Three vertical stripes of distinct thing classes with exact candidates;
/// the middle candidate predicts the wrong class.
pub fn one_wrong_class() -> Fixture {
    let (w, h) = (9, 3);
    let taxonomy = Taxonomy::new(
        ["person", "car", "dog", "tree"]
            .iter()
            .map(|n| ClassEntry::new(*n, *n != "tree"))
            .collect(),
    )
    .expect("distinct names");
    let stripe = |k: u32| BinaryMask::from_fn(w, h, move |x, _| x / 3 == k).expect("size");
    let segments = [(stripe(0), 0), (stripe(1), 1), (stripe(2), 2)];
    let gt = PanopticMap::from_masks(w, h, &segments).expect("disjoint");
    let predicted = [0usize, 3, 2];
    let candidates = segments
        .iter()
        .zip(predicted)
        .map(|((m, _), label)| {
            let mut p = vec![0.01f32; 5];
            p[label] = 0.96;
            Candidate::new(SoftMask::indicator(m), p)
        })
        .collect();
    Fixture {
        taxonomy,
        gt,
        candidates: CandidateSet::new(w, h, 4, true, candidates).expect("valid posteriors"),
    }
}

/// Segment table renumbering helper for fixtures that need explicit ids.
pub fn relabel(map: &PanopticMap, f: impl Fn(u32) -> u32) -> PanopticMap {
    let ids = map.ids().iter().map(|&id| if id == 0 { 0 } else { f(id) }).collect();
    let segments = map
        .segments()
        .iter()
        .map(|s| Segment {
            id: f(s.id),
            class_id: s.class_id,
        })
        .collect();
    PanopticMap::new(map.width(), map.height(), ids, segments).expect("relabeling must be injective and nonzero")
}
