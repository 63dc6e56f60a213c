//! Regenerates the committed fixtures and the fuzz corpus seeds.
//!
//! cargo run -p ovseg-core --example write_fixtures -- <repo root>

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ovseg_core::dump::{encode_candidates, save_dump, DumpManifest};
use ovseg_core::metrics::{evaluate_pair, pq_scores, PqStats, DEFAULT_VOID_OVERLAP};
use ovseg_core::pipeline::{infer, InferenceParams};
use ovseg_core::report::RunReport;
use ovseg_core::rle::rle_encode;
use ovseg_core::testkit::{aligned_features, gen_scene, no_object_regression, one_wrong_class, Fixture, SceneSpec};

fn write(path: &Path, bytes: &[u8]) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, bytes).unwrap();
}

fn write_fixture(dir: &Path, f: &Fixture) {
    write(&dir.join("taxonomy.json"), f.taxonomy.to_json().as_bytes());
    write(&dir.join("gt/scene.ovpm"), &f.gt.to_bytes());
    let manifest = DumpManifest::new("taxonomy.json", f.taxonomy.len());
    save_dump(&dir.join("dump"), &manifest, &[("scene".to_string(), &f.candidates, None)]).unwrap();
}

fn main() {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    let fixtures = root.join("crates/core/fixtures");
    let regression = no_object_regression();
    write_fixture(&fixtures.join("no_object_regression"), &regression);
    write_fixture(&fixtures.join("one_wrong_class"), &one_wrong_class());

    let corpus = root.join("fuzz/corpus");
    let spec = SceneSpec { seed: 3, with_clip: true, spurious: 2, ..SceneSpec::default() };
    let scene = gen_scene(&spec).unwrap();
    let (grid, texts) = aligned_features(&scene.gt, spec.num_classes, 8, 3).unwrap();
    let seeds: Vec<(&str, &str, Vec<u8>)> = vec![
        ("rle_container", "segment", rle_encode(&scene.gt.segment_mask(scene.gt.segments()[0].id)).to_bytes()),
        ("rle_container", "empty", rle_encode(&ovseg_core::BinaryMask::zeros(3, 2).unwrap()).to_bytes()),
        ("panoptic_map", "scene", scene.gt.to_bytes()),
        ("panoptic_map", "fixture", regression.gt.to_bytes()),
        ("feature_grid", "aligned", grid.to_bytes()),
        ("text_embeddings", "axes", texts.to_bytes()),
        ("candidate_record", "clip", encode_candidates(&scene.candidates).unwrap()),
        ("candidate_record", "fixture", encode_candidates(&regression.candidates).unwrap()),
        ("taxonomy_json", "split", spec.taxonomy().to_json().into_bytes()),
        ("taxonomy_json", "plain", regression.taxonomy.to_json().into_bytes()),
    ];
    let manifest = fs::read(fixtures.join("no_object_regression/dump/manifest.json")).unwrap();
    let pred = infer(&regression.candidates, &regression.taxonomy, &InferenceParams::default()).unwrap();
    let report = evaluate_pair(&pred, &regression.gt, &regression.taxonomy, DEFAULT_VOID_OVERLAP).unwrap();
    let scores = pq_scores(&PqStats::from_reports([&report]), &regression.taxonomy).unwrap();
    let run = RunReport::from_scores(&scores, &regression.taxonomy, serde_json::json!({"command": "evaluate"}), BTreeMap::new());
    for (target, name, bytes) in seeds
        .into_iter()
        .chain([
            ("dump_manifest", "fixture", manifest),
            ("report_json", "fixture", run.to_json().into_bytes()),
            ("report_csv", "fixture", run.to_csv().into_bytes()),
        ])
    {
        write(&corpus.join(target).join(name), &bytes);
    }
}
