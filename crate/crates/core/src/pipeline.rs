//! Candidate set to panoptic map, with or without oracle interventions.

use serde::Serialize;

use crate::error::Result;
use crate::oracles::{
    classification_oracle_on_selection, segmentation_oracle_on_selection, selection_oracle, AssignmentCostParams,
    NoObjectPolicy, Selection,
};
use crate::panoptic::PanopticMap;
use crate::proposals::{apply_ensemble, drop_no_object, panoptic_fusion, CandidateSet, EnsembleParams, FusionParams};
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InferenceParams {
    pub fusion: FusionParams,
    /// Geometric ensembling with the zero-shot posteriors, when present.
    pub ensemble: Option<EnsembleParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SelectionParams {
    pub cost: AssignmentCostParams,
    pub policy: NoObjectPolicy,
    /// Replace selected sigmas with their matched ground-truth masks.
    pub segmentation_oracle: bool,
    /// Replace selected posteriors with their matched ground-truth classes.
    pub classification_oracle: bool,
}

/// Per-image record of what the selection oracle did.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionAudit {
    pub candidates: usize,
    pub selected: Vec<usize>,
    /// Selected candidates whose argmax was the no-object class.
    pub no_object_selected: usize,
    pub degenerate: usize,
    pub shortfall: usize,
}

/// Standard inference: drop no-object candidates, ensemble if configured
/// and zero-shot posteriors exist, fuse.
pub fn infer(cands: &CandidateSet, taxonomy: &Taxonomy, params: &InferenceParams) -> Result<PanopticMap> {
    let mut set = drop_no_object(cands);
    if let (Some(ens), true) = (params.ensemble, set.has_clip()) {
        let all_seen = vec![true; taxonomy.len()];
        let seen = taxonomy.seen().unwrap_or(&all_seen);
        set = apply_ensemble(&set, seen, ens)?;
    }
    panoptic_fusion(&set, taxonomy, &params.fusion)
}

/// Selection oracle, optional stacked oracles, then standard inference on
/// the selected candidates.
pub fn infer_with_selection(
    cands: &CandidateSet,
    gt: &PanopticMap,
    taxonomy: &Taxonomy,
    inference: &InferenceParams,
    selection: &SelectionParams,
) -> Result<(PanopticMap, SelectionAudit)> {
    let mut sel: Selection = selection_oracle(cands, gt, &selection.cost, selection.policy)?;
    if selection.segmentation_oracle {
        let set = segmentation_oracle_on_selection(&sel, gt)?;
        sel = sel.with_candidates(set);
    }
    if selection.classification_oracle {
        let set = classification_oracle_on_selection(&sel)?;
        sel = sel.with_candidates(set);
    }
    let audit = SelectionAudit {
        candidates: cands.len(),
        selected: sel.matches.iter().map(|m| m.candidate_index).collect(),
        no_object_selected: sel.matches.iter().filter(|m| m.argmax_no_object).count(),
        degenerate: sel.candidates.candidates().iter().filter(|c| c.degenerate).count(),
        shortfall: sel.shortfall,
    };
    Ok((infer(&sel.candidates, taxonomy, inference)?, audit))
}
