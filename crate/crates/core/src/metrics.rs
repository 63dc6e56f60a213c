//! IoU, panoptic quality (PQ = SQ x RQ) and false-negative stratification.
//!
//! A predicted segment matches a ground-truth segment when both carry the
//! same class and their IoU is strictly greater than 0.5. Because segments
//! within one panoptic map are disjoint, a ground-truth segment can have at
//! most one such partner, so greedy matching is already optimal.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mask::{same_dims, BinaryMask};
use crate::panoptic::{PanopticMap, VOID_ID};
use crate::taxonomy::Taxonomy;

pub const MATCH_IOU: f64 = 0.5;
pub const DEFAULT_VOID_OVERLAP: f64 = 0.5;

/// `|a ∩ b| / |a ∪ b|`, defined as 0 when both masks are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_same_dims(b)?;
    let (mut inter, mut union) = (0u64, 0u64);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x && y) as u64;
        union += (x || y) as u64;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentMatch {
    pub pred_segment_id: u32,
    pub gt_segment_id: u32,
    pub iou: f64,
}

/// A ground-truth segment missed because an overlapping prediction carried
/// the wrong class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassificationMiss {
    pub gt_segment_id: u32,
    pub pred_segment_id: u32,
}

/// Per-class match counts. `iou_sum` accumulates the IoU of true positives.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_seg: u64,
    pub fn_cls: u64,
    pub iou_sum: f64,
}

impl ClassCounts {
    pub fn false_negatives(&self) -> u64 {
        self.fn_seg + self.fn_cls
    }

    /// Whether the class occurred in ground truth or (non-ignored) predictions.
    pub fn is_evaluated(&self) -> bool {
        self.tp + self.fp + self.false_negatives() > 0
    }

    pub fn sq(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.iou_sum / self.tp as f64
        }
    }

    pub fn rq(&self) -> f64 {
        let denom = self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.false_negatives() as f64;
        if denom == 0.0 {
            0.0
        } else {
            self.tp as f64 / denom
        }
    }

    pub fn pq(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.sq() * self.rq()
        }
    }

    pub fn recall(&self) -> f64 {
        let denom = self.tp + self.false_negatives();
        if denom == 0 {
            0.0
        } else {
            self.tp as f64 / denom as f64
        }
    }

    pub fn merge(&mut self, other: &ClassCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_seg += other.fn_seg;
        self.fn_cls += other.fn_cls;
        self.iou_sum += other.iou_sum;
    }
}

/// Outcome of matching one predicted panoptic map against ground truth.
///
/// Until [`stratify_false_negatives`] runs, every false negative sits in
/// `fn_seg`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchReport {
    pub tp: Vec<SegmentMatch>,
    pub fp: Vec<u32>,
    pub fn_seg: Vec<u32>,
    pub fn_cls: Vec<ClassificationMiss>,
    /// Unmatched predictions exempted from FP because they lie mostly on void.
    pub void_ignored: Vec<u32>,
    pub per_class: BTreeMap<u32, ClassCounts>,
}

/// Pixel-overlap table between two maps of equal size.
struct Overlaps {
    /// (pred id, gt id) -> intersecting pixels; either id may be void.
    pairs: BTreeMap<(u32, u32), u64>,
    pred_area: BTreeMap<u32, u64>,
    gt_area: BTreeMap<u32, u64>,
}

impl Overlaps {
    fn new(pred: &PanopticMap, gt: &PanopticMap) -> Self {
        let mut pairs = BTreeMap::new();
        for (&p, &g) in pred.ids().iter().zip(gt.ids()) {
            *pairs.entry((p, g)).or_insert(0u64) += 1;
        }
        Overlaps {
            pairs,
            pred_area: pred.areas(),
            gt_area: gt.areas(),
        }
    }

    fn iou(&self, p: u32, g: u32, inter: u64) -> f64 {
        let union = self.pred_area[&p] + self.gt_area[&g] - inter;
        inter as f64 / union as f64
    }

    /// Nonvoid pairs with IoU strictly above the match threshold.
    fn strong_pairs(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.pairs
            .iter()
            .filter(|((p, g), _)| *p != VOID_ID && *g != VOID_ID)
            .map(|(&(p, g), &inter)| (p, g, self.iou(p, g, inter)))
            .filter(|&(_, _, iou)| iou > MATCH_IOU)
    }
}

/// `(pred id, gt id, iou)` for every class-agnostic pair above the match
/// threshold. Maps must have equal size.
pub(crate) fn strong_overlaps(pred: &PanopticMap, gt: &PanopticMap) -> Vec<(u32, u32, f64)> {
    Overlaps::new(pred, gt).strong_pairs().collect()
}

fn check_pair(pred: &PanopticMap, gt: &PanopticMap, taxonomy: &Taxonomy) -> Result<()> {
    same_dims(pred.dims(), gt.dims())?;
    pred.check_taxonomy(taxonomy)?;
    gt.check_taxonomy(taxonomy)
}

/// Matches predicted segments to ground-truth segments of the same class.
///
/// Unmatched predictions whose overlap with ground-truth void exceeds
/// `void_overlap_threshold` of their own area are ignored rather than
/// counted as false positives.
pub fn pq_match(
    pred: &PanopticMap,
    gt: &PanopticMap,
    taxonomy: &Taxonomy,
    void_overlap_threshold: f64,
) -> Result<MatchReport> {
    check_pair(pred, gt, taxonomy)?;
    if !(0.0..=1.0).contains(&void_overlap_threshold) {
        return Err(Error::parameter("void_overlap_threshold", "must lie in [0, 1]"));
    }
    let overlaps = Overlaps::new(pred, gt);

    let mut tp: Vec<SegmentMatch> = overlaps
        .strong_pairs()
        .filter(|&(p, g, _)| pred.class_of(p) == gt.class_of(g))
        .map(|(p, g, iou)| SegmentMatch {
            pred_segment_id: p,
            gt_segment_id: g,
            iou,
        })
        .collect();
    tp.sort_by_key(|m| m.gt_segment_id);

    let matched_pred: std::collections::BTreeSet<u32> = tp.iter().map(|m| m.pred_segment_id).collect();
    let matched_gt: std::collections::BTreeSet<u32> = tp.iter().map(|m| m.gt_segment_id).collect();

    let mut report = MatchReport::default();
    for seg in gt.segments() {
        report.per_class.entry(seg.class_id).or_default();
    }
    let mut ious_by_class: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for m in &tp {
        let class = gt.class_of(m.gt_segment_id).expect("validated map");
        report.per_class.entry(class).or_default().tp += 1;
        ious_by_class.entry(class).or_default().push(m.iou);
    }
    // Summing in sorted order keeps the result independent of segment ids.
    for (class, mut ious) in ious_by_class {
        ious.sort_by(f64::total_cmp);
        report.per_class.get_mut(&class).expect("inserted above").iou_sum = ious.iter().sum();
    }

    let mut fp = Vec::new();
    let mut void_ignored = Vec::new();
    for seg in pred.segments() {
        if matched_pred.contains(&seg.id) {
            continue;
        }
        let on_void = overlaps.pairs.get(&(seg.id, VOID_ID)).copied().unwrap_or(0);
        let area = overlaps.pred_area[&seg.id];
        if on_void as f64 > void_overlap_threshold * area as f64 {
            void_ignored.push(seg.id);
        } else {
            fp.push(seg.id);
            report.per_class.entry(seg.class_id).or_default().fp += 1;
        }
    }
    let mut fn_seg = Vec::new();
    for seg in gt.segments() {
        if !matched_gt.contains(&seg.id) {
            fn_seg.push(seg.id);
            report.per_class.entry(seg.class_id).or_default().fn_seg += 1;
        }
    }
    fp.sort_unstable();
    void_ignored.sort_unstable();
    fn_seg.sort_unstable();
    report.per_class.retain(|_, c| c.is_evaluated());
    report.tp = tp;
    report.fp = fp;
    report.fn_seg = fn_seg;
    report.void_ignored = void_ignored;
    Ok(report)
}

/// Splits false negatives into segmentation misses (no prediction overlaps
/// with IoU > 0.5) and classification misses (an overlapping prediction
/// exists but carries another class).
pub fn stratify_false_negatives(report: &MatchReport, pred: &PanopticMap, gt: &PanopticMap) -> Result<MatchReport> {
    same_dims(pred.dims(), gt.dims())?;
    let overlaps = Overlaps::new(pred, gt);
    let strong: BTreeMap<u32, u32> = overlaps.strong_pairs().map(|(p, g, _)| (g, p)).collect();

    let mut out = report.clone();
    let pending: Vec<u32> = out.fn_seg.drain(..).collect();
    for g in pending {
        let class = gt
            .class_of(g)
            .ok_or_else(|| Error::validation("match report", format!("unknown gt segment {g}")))?;
        let counts = out.per_class.entry(class).or_default();
        match strong.get(&g) {
            Some(&p) => {
                counts.fn_seg -= 1;
                counts.fn_cls += 1;
                out.fn_cls.push(ClassificationMiss {
                    gt_segment_id: g,
                    pred_segment_id: p,
                });
            }
            None => out.fn_seg.push(g),
        }
    }
    Ok(out)
}

/// [`pq_match`] followed by [`stratify_false_negatives`].
pub fn evaluate_pair(
    pred: &PanopticMap,
    gt: &PanopticMap,
    taxonomy: &Taxonomy,
    void_overlap_threshold: f64,
) -> Result<MatchReport> {
    let report = pq_match(pred, gt, taxonomy, void_overlap_threshold)?;
    stratify_false_negatives(&report, pred, gt)
}

/// Class counts accumulated over any number of images.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PqStats {
    pub per_class: BTreeMap<u32, ClassCounts>,
}

impl PqStats {
    pub fn add_report(&mut self, report: &MatchReport) {
        for (class, counts) in &report.per_class {
            self.per_class.entry(*class).or_default().merge(counts);
        }
    }

    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a MatchReport>) -> Self {
        let mut stats = PqStats::default();
        for r in reports {
            stats.add_report(r);
        }
        stats
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScore {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub counts: ClassCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PqScores {
    pub per_class: BTreeMap<u32, ClassScore>,
    pub pq_all: f64,
    pub sq_all: f64,
    pub rq_all: f64,
    /// Mean PQ over evaluated seen classes; `None` without a split or when
    /// no seen class was evaluated.
    pub pq_seen: Option<f64>,
    pub pq_unseen: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-class PQ/SQ/RQ and unweighted class means. Classes that never occur
/// in ground truth or predictions are left out of the means.
pub fn pq_scores(stats: &PqStats, taxonomy: &Taxonomy) -> Result<PqScores> {
    let per_class: BTreeMap<u32, ClassScore> = stats
        .per_class
        .iter()
        .filter(|(_, c)| c.is_evaluated())
        .map(|(&class, c)| {
            if class as usize >= taxonomy.len() {
                return Err(Error::validation(
                    "match report",
                    format!("class {class} outside taxonomy of {} classes", taxonomy.len()),
                ));
            }
            Ok((
                class,
                ClassScore {
                    pq: c.pq(),
                    sq: c.sq(),
                    rq: c.rq(),
                    counts: *c,
                },
            ))
        })
        .collect::<Result<_>>()?;
    if per_class.is_empty() {
        return Err(Error::NoClassesEvaluated);
    }
    let pq_all = mean(per_class.values().map(|s| s.pq)).expect("nonempty");
    let sq_all = mean(per_class.values().map(|s| s.sq)).expect("nonempty");
    let rq_all = mean(per_class.values().map(|s| s.rq)).expect("nonempty");
    let subset = |want_seen: bool| {
        taxonomy.seen().and_then(|seen| {
            mean(
                per_class
                    .iter()
                    .filter(|(&c, _)| seen[c as usize] == want_seen)
                    .map(|(_, s)| s.pq),
            )
        })
    };
    Ok(PqScores {
        pq_seen: subset(true),
        pq_unseen: subset(false),
        per_class,
        pq_all,
        sq_all,
        rq_all,
    })
}
