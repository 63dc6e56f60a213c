//! Synthetic scenes, constructed fixtures and brute-force reference
//! implementations used to check the metric and assignment code.

mod brute;
mod fixtures;
mod scene;

pub use brute::{brute_assignment, brute_pq, brute_pq_all, BruteScore};
pub use fixtures::{no_object_regression, one_wrong_class, relabel, Fixture};
pub use scene::{aligned_features, gen_scene, random_spec, synthetic_taxonomy, CandidateOrigin, Scene, SceneSpec};
