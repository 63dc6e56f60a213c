#![allow(dead_code)]

use ovseg_core::pipeline::{infer, InferenceParams};
pub use ovseg_core::testkit::random_spec;
use ovseg_core::testkit::{gen_scene, Scene, SceneSpec};
use ovseg_core::PanopticMap;

/// A scene plus a prediction for it. Odd seeds predict through the normal
/// inference pipeline; even seeds use an unrelated Voronoi map of the same
/// size, which exercises partial overlaps and void handling.
pub fn scene_and_prediction(seed: u64) -> (SceneSpec, Scene, PanopticMap) {
    let spec = random_spec(seed);
    let scene = gen_scene(&spec).unwrap();
    let pred = if seed % 2 == 1 {
        infer(&scene.candidates, &spec.taxonomy(), &InferenceParams::default()).unwrap()
    } else {
        let other = SceneSpec {
            seed: seed.wrapping_mul(31).wrapping_add(7),
            void_probability: 0.3,
            ..spec.clone()
        };
        gen_scene(&other).unwrap().gt
    };
    (spec, scene, pred)
}
