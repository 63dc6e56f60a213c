mod common;

use ovseg_core::metrics::{evaluate_pair, pq_scores, PqScores, PqStats, DEFAULT_VOID_OVERLAP};
use ovseg_core::oracles::{classification_oracle, NoObjectPolicy};
use ovseg_core::pipeline::{infer, infer_with_selection, InferenceParams, SelectionParams};
use ovseg_core::testkit::{gen_scene, no_object_regression, one_wrong_class, SceneSpec};
use ovseg_core::{PanopticMap, Taxonomy};

fn score(pred: &PanopticMap, gt: &PanopticMap, tax: &Taxonomy) -> PqScores {
    let report = evaluate_pair(pred, gt, tax, DEFAULT_VOID_OVERLAP).unwrap();
    pq_scores(&PqStats::from_reports([&report]), tax).unwrap()
}

fn selection(policy: NoObjectPolicy, seg: bool, cls: bool) -> SelectionParams {
    SelectionParams {
        policy,
        segmentation_oracle: seg,
        classification_oracle: cls,
        ..SelectionParams::default()
    }
}

#[test]
fn no_object_regression_orders_keep_baseline_strip() {
    let f = no_object_regression();
    let params = InferenceParams::default();
    let baseline = score(&infer(&f.candidates, &f.taxonomy, &params).unwrap(), &f.gt, &f.taxonomy).pq_all;
    let run = |policy| {
        let (map, _) =
            infer_with_selection(&f.candidates, &f.gt, &f.taxonomy, &params, &selection(policy, false, false)).unwrap();
        score(&map, &f.gt, &f.taxonomy).pq_all
    };
    let (keep, strip) = (run(NoObjectPolicy::Keep), run(NoObjectPolicy::Strip));
    assert_eq!((keep, baseline, strip), (0.0, 0.375, 1.0));
}

#[test]
fn wrong_class_fixture_and_classification_oracle() {
    let f = one_wrong_class();
    let pred = infer(&f.candidates, &f.taxonomy, &InferenceParams::default()).unwrap();
    let report = evaluate_pair(&pred, &f.gt, &f.taxonomy, DEFAULT_VOID_OVERLAP).unwrap();
    assert_eq!(report.fn_cls.len(), 1);
    assert!(report.fn_seg.is_empty());
    let before = score(&pred, &f.gt, &f.taxonomy).pq_all;
    let after = score(&classification_oracle(&pred, &f.gt).unwrap(), &f.gt, &f.taxonomy).pq_all;
    assert!(after > before);
    assert_eq!(after, 1.0);
}

#[test]
fn zero_noise_scene_scores_one() {
    for seed in 0..50 {
        let spec = SceneSpec {
            seed,
            spurious: 2,
            void_probability: 0.5,
            ..SceneSpec::default()
        };
        let scene = gen_scene(&spec).unwrap();
        let tax = spec.taxonomy();
        let pred = infer(&scene.candidates, &tax, &InferenceParams::default()).unwrap();
        assert_eq!(score(&pred, &scene.gt, &tax).pq_all, 1.0, "seed {seed}");
    }
}

#[test]
fn class_flip_everywhere_gives_one_fn_cls_per_segment() {
    for seed in 0..50 {
        let spec = SceneSpec {
            seed,
            class_flip: 1.0,
            ..SceneSpec::default()
        };
        let scene = gen_scene(&spec).unwrap();
        let tax = spec.taxonomy();
        let pred = infer(&scene.candidates, &tax, &InferenceParams::default()).unwrap();
        let report = evaluate_pair(&pred, &scene.gt, &tax, DEFAULT_VOID_OVERLAP).unwrap();
        assert!(report.tp.is_empty(), "seed {seed}");
        assert_eq!(report.fn_cls.len(), scene.gt.segments().len(), "seed {seed}");
    }
}

#[test]
fn no_object_flip_everywhere_is_recovered_by_strip() {
    for seed in 0..50 {
        let spec = SceneSpec {
            seed,
            no_object_flip: 1.0,
            spurious: 2,
            ..SceneSpec::default()
        };
        let scene = gen_scene(&spec).unwrap();
        let tax = spec.taxonomy();
        let params = InferenceParams::default();
        let baseline = infer(&scene.candidates, &tax, &params).unwrap();
        assert!(baseline.segments().is_empty(), "seed {seed}");
        let (strip, _) = infer_with_selection(
            &scene.candidates,
            &scene.gt,
            &tax,
            &params,
            &selection(NoObjectPolicy::Strip, false, false),
        )
        .unwrap();
        assert_eq!(score(&strip, &scene.gt, &tax).pq_all, 1.0, "seed {seed}");
    }
}

/// Erosion-only noise: shrunken masks never steal pixels from neighbours.
fn dominance_spec(seed: u64) -> SceneSpec {
    SceneSpec {
        dilation_radius: 0,
        erosion_radius: 2,
        with_clip: false,
        ..common::random_spec(seed)
    }
}

#[test]
fn strip_dominates_keep_on_random_scenes() {
    for seed in 0..200 {
        let spec = dominance_spec(seed);
        let scene = gen_scene(&spec).unwrap();
        let tax = spec.taxonomy();
        let params = InferenceParams::default();
        let run = |policy| {
            let (map, _) =
                infer_with_selection(&scene.candidates, &scene.gt, &tax, &params, &selection(policy, false, false))
                    .unwrap();
            score(&map, &scene.gt, &tax).pq_all
        };
        let (keep, strip) = (run(NoObjectPolicy::Keep), run(NoObjectPolicy::Strip));
        assert!(strip >= keep, "seed {seed}: strip {strip} < keep {keep}");
    }
}

#[test]
fn stacked_oracles_reach_the_ceiling() {
    for seed in 0..100 {
        let spec = SceneSpec {
            sigma_jitter: 0.0,
            erosion_radius: 0,
            dilation_radius: 0,
            ..common::random_spec(seed)
        };
        let scene = gen_scene(&spec).unwrap();
        let tax = spec.taxonomy();
        let params = InferenceParams::default();
        let run = |seg, cls| {
            let (map, _) = infer_with_selection(
                &scene.candidates,
                &scene.gt,
                &tax,
                &params,
                &selection(NoObjectPolicy::Strip, seg, cls),
            )
            .unwrap();
            score(&map, &scene.gt, &tax)
        };
        assert_eq!(run(false, true).pq_all, 1.0, "seed {seed}");
        assert_eq!(run(true, true).pq_all, 1.0, "seed {seed}");
        let seg = run(true, false);
        assert!(seg.per_class.values().all(|s| s.counts.tp == 0 || s.sq == 1.0), "seed {seed}");
    }
}

#[test]
fn oracles_never_hurt_with_corrupted_sigmas() {
    for seed in 0..200 {
        let spec = dominance_spec(seed);
        let scene = gen_scene(&spec).unwrap();
        let tax = spec.taxonomy();
        let params = InferenceParams::default();
        let run = |seg, cls| {
            let (map, _) = infer_with_selection(
                &scene.candidates,
                &scene.gt,
                &tax,
                &params,
                &selection(NoObjectPolicy::Strip, seg, cls),
            )
            .unwrap();
            score(&map, &scene.gt, &tax).pq_all
        };
        let sel = run(false, false);
        assert!(run(true, false) >= sel, "seed {seed}: seg oracle");
        assert!(run(false, true) >= sel, "seed {seed}: cls oracle");
    }
}

#[test]
fn classification_oracle_never_lowers_class_pq() {
    for seed in 0..200 {
        let (spec, scene, pred) = common::scene_and_prediction(seed);
        let tax = spec.taxonomy();
        let before = score(&pred, &scene.gt, &tax);
        let after = score(&classification_oracle(&pred, &scene.gt).unwrap(), &scene.gt, &tax);
        for (class, s) in &before.per_class {
            let a = after.per_class.get(class).map_or(0.0, |s| s.pq);
            assert!(a >= s.pq, "seed {seed} class {class}: {a} < {}", s.pq);
        }
    }
}
