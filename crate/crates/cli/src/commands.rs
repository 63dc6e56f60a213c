//! Subcommand implementations. Per-image work runs on a rayon pool; results
//! are gathered and reduced in sorted image-id order so reports do not
//! depend on the worker count.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use ovseg_core::dump::{load_image, save_dump, DumpManifest, ImageEntry};
use ovseg_core::metrics::{evaluate_pair, pq_scores, MatchReport, PqStats};
use ovseg_core::oracles::classification_oracle;
use ovseg_core::pipeline::{infer, infer_with_selection, SelectionAudit};
use ovseg_core::report::{canonical_json, hard_class_diff, hard_class_table, read_report, write_report, ReportFormat, RunReport};
use ovseg_core::taxonomy::{taxonomy_split, Taxonomy};
use ovseg_core::testkit::{aligned_features, gen_scene, SceneSpec};
use ovseg_core::zeroshot::{segmentation_oracle_image, DenseFeatureGrid, TextEmbeddings};
use ovseg_core::{Error, PanopticMap};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::settings::{DiffConfig, EvalConfig, SynthConfig, ZeroshotConfig};
use crate::CliError;

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))
}

/// Maps `f` over `items` on `jobs` workers; the first error in item order
/// wins.
fn par_map<T: Sync, R: Send>(
    jobs: usize,
    items: &[T],
    f: impl Fn(&T) -> Result<R, CliError> + Sync + Send,
) -> Result<Vec<R>, CliError> {
    let results: Vec<Result<R, CliError>> = pool(jobs)?.install(|| items.par_iter().map(&f).collect());
    results.into_iter().collect()
}

/// Evaluation taxonomy, with the seen/unseen split applied when a training
/// taxonomy is given.
fn load_taxonomy(path: &Path, train: Option<&Path>) -> Result<Taxonomy, CliError> {
    let taxonomy = Taxonomy::load(path)?;
    Ok(match train {
        Some(t) => {
            let train = Taxonomy::load(t)?;
            let split = taxonomy_split(&train, &taxonomy);
            taxonomy.with_split(&split)?
        }
        None => taxonomy,
    })
}

fn load_gt(dir: &Path, id: &str, taxonomy: &Taxonomy) -> Result<PanopticMap, Error> {
    let gt = PanopticMap::load(&dir.join(format!("{id}.ovpm")))?;
    gt.check_taxonomy(taxonomy)?;
    Ok(gt)
}

fn emit(report: &RunReport, format: ReportFormat, out: Option<&Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
    match out {
        Some(path) => Ok(write_report(report, format, path)?),
        None => {
            let text = match format {
                ReportFormat::Json => report.to_json(),
                ReportFormat::Csv => report.to_csv(),
            };
            write_stdout(stdout, &text)
        }
    }
}

fn write_stdout(stdout: &mut dyn Write, text: &str) -> Result<(), CliError> {
    stdout.write_all(text.as_bytes()).map_err(|e| {
        CliError::Core(Error::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        })
    })
}

fn match_totals(reports: &[&MatchReport]) -> BTreeMap<String, Value> {
    let sum = |f: &dyn Fn(&MatchReport) -> usize| reports.iter().map(|r| f(r)).sum::<usize>();
    BTreeMap::from([
        ("images".to_string(), json!(reports.len())),
        ("true_positives".to_string(), json!(sum(&|r| r.tp.len()))),
        ("false_positives".to_string(), json!(sum(&|r| r.fp.len()))),
        ("fn_seg".to_string(), json!(sum(&|r| r.fn_seg.len()))),
        ("fn_cls".to_string(), json!(sum(&|r| r.fn_cls.len()))),
        ("void_ignored".to_string(), json!(sum(&|r| r.void_ignored.len()))),
        (
            "class_aggregation".to_string(),
            json!("unweighted mean over classes with tp + fp + fn > 0"),
        ),
    ])
}

struct EvalImage {
    report: MatchReport,
    audit: Option<SelectionAudit>,
}

#[derive(Serialize)]
struct AuditEntry<'a> {
    image_id: &'a str,
    #[serde(flatten)]
    audit: &'a SelectionAudit,
}

fn evaluate_image(
    config: &EvalConfig,
    manifest: &DumpManifest,
    entry: &ImageEntry,
    taxonomy: &Taxonomy,
) -> Result<EvalImage, Error> {
    let image = load_image(&config.dump, manifest, entry)?;
    let run = || -> Result<EvalImage, Error> {
        let gt = load_gt(&config.gt, &image.id, taxonomy)?;
        let cands = &image.candidates;
        if config.inference.ensemble.is_some() && !cands.has_clip() {
            return Err(Error::Validation {
                what: "dump",
                message: "--ensemble needs zero-shot posteriors in the candidate records; \
                          regenerate the dump with them or drop --ensemble"
                    .into(),
            });
        }
        let (pred, audit) = match &config.selection {
            Some(sel) => {
                let gt_at_sigma = if gt.dims() == cands.dims() {
                    gt.clone()
                } else {
                    gt.resample_nearest(cands.width(), cands.height())?
                };
                let (pred, audit) = infer_with_selection(cands, &gt_at_sigma, taxonomy, &config.inference, sel)?;
                (pred, Some(audit))
            }
            None => (infer(cands, taxonomy, &config.inference)?, None),
        };
        let mut pred = if pred.dims() == gt.dims() {
            pred
        } else {
            pred.resample_nearest(gt.width(), gt.height())?
        };
        if config.oracle_cls {
            pred = classification_oracle(&pred, &gt)?;
        }
        let report = evaluate_pair(&pred, &gt, taxonomy, config.void_overlap)?;
        Ok(EvalImage { report, audit })
    };
    run().map_err(|e| e.in_image(&image.id))
}

/// `evaluate` and `oracle-select`.
pub fn evaluate(config: &EvalConfig, command: &str, jobs: usize, stdout: &mut dyn Write) -> Result<(), CliError> {
    let taxonomy = load_taxonomy(&config.taxonomy, config.train_taxonomy.as_deref())?;
    let manifest = DumpManifest::load(&config.dump)?;
    if manifest.num_classes != taxonomy.len() {
        return Err(CliError::Config(format!(
            "dump has {} classes but the taxonomy has {}; pass the taxonomy the dump was produced with",
            manifest.num_classes,
            taxonomy.len()
        )));
    }
    let entries = manifest.sorted_images();
    let images = par_map(jobs, &entries, |entry| {
        Ok(evaluate_image(config, &manifest, entry, &taxonomy)?)
    })?;

    let reports: Vec<&MatchReport> = images.iter().map(|i| &i.report).collect();
    let stats = PqStats::from_reports(reports.iter().copied());
    let scores = pq_scores(&stats, &taxonomy)?;
    let mut metadata = match_totals(&reports);
    if config.selection.is_some() {
        let audits: Vec<&SelectionAudit> = images.iter().filter_map(|i| i.audit.as_ref()).collect();
        let sum = |f: &dyn Fn(&SelectionAudit) -> usize| audits.iter().map(|a| f(a)).sum::<usize>();
        metadata.insert("selected".into(), json!(sum(&|a| a.selected.len())));
        metadata.insert("no_object_selected".into(), json!(sum(&|a| a.no_object_selected)));
        metadata.insert("degenerate".into(), json!(sum(&|a| a.degenerate)));
        metadata.insert("selection_shortfall".into(), json!(sum(&|a| a.shortfall)));
        if let Some(path) = &config.audit {
            let rows: Vec<AuditEntry> = entries
                .iter()
                .zip(&images)
                .filter_map(|(e, i)| {
                    i.audit.as_ref().map(|audit| AuditEntry {
                        image_id: &e.id,
                        audit,
                    })
                })
                .collect();
            let text = canonical_json(&serde_json::to_value(rows).expect("audit serializes"));
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| Error::Io {
                    path: parent.to_path_buf(),
                    source: e,
                })?;
            }
            std::fs::write(path, text).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
        }
    }
    let report = RunReport::from_scores(&scores, &taxonomy, config.snapshot(command), metadata);
    emit(&report, config.format, config.out.as_deref(), stdout)
}

/// `zeroshot`: ground-truth masks classified from pooled features.
pub fn zeroshot(config: &ZeroshotConfig, jobs: usize, stdout: &mut dyn Write) -> Result<(), CliError> {
    let taxonomy = load_taxonomy(&config.taxonomy, config.train_taxonomy.as_deref())?;
    let texts = TextEmbeddings::load(&config.texts)?;
    texts.check_taxonomy(&taxonomy)?;
    let manifest = DumpManifest::load(&config.dump)?;
    let entries = manifest.sorted_images();
    let images = par_map(jobs, &entries, |entry| {
        let run = || -> Result<_, Error> {
            let rel = entry.features.as_ref().ok_or_else(|| Error::Validation {
                what: "manifest",
                message: "no feature grid listed; zeroshot needs a \"features\" path for every image".into(),
            })?;
            let features = DenseFeatureGrid::load(&config.dump.join(rel))?;
            let gt = load_gt(&config.gt, &entry.id, &taxonomy)?;
            let img = segmentation_oracle_image(&features, &gt, &texts, config.tau, &taxonomy)?;
            // The per-image report is scored at the default void share;
            // rescore when a different one is configured.
            let report = if config.void_overlap == ovseg_core::metrics::DEFAULT_VOID_OVERLAP {
                img.report
            } else {
                evaluate_pair(&img.prediction, &gt, &taxonomy, config.void_overlap)?
            };
            Ok((report, img.empty_mask_skips))
        };
        run().map_err(|e| CliError::Core(e.in_image(&entry.id)))
    })?;

    let reports: Vec<&MatchReport> = images.iter().map(|(r, _)| r).collect();
    let stats = PqStats::from_reports(reports.iter().copied());
    let scores = pq_scores(&stats, &taxonomy)?;
    let mut metadata = match_totals(&reports);
    metadata.insert(
        "empty_mask_skips".into(),
        json!(images.iter().map(|(_, s)| s).sum::<usize>()),
    );
    let report = RunReport::from_scores(&scores, &taxonomy, config.snapshot(), metadata);
    emit(&report, config.format, config.out.as_deref(), stdout)
}

/// `diff`: hard-class table between an open-vocabulary run and a reference.
pub fn diff(config: &DiffConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    let open = read_report(&config.open)?;
    let reference = read_report(&config.reference)?;
    let rows = hard_class_diff(&open, &reference, config.recall_threshold)?;
    let text = hard_class_table(&rows, config.format);
    match &config.out {
        Some(path) => std::fs::write(path, text).map_err(|e| {
            CliError::Core(Error::Io {
                path: path.clone(),
                source: e,
            })
        }),
        None => write_stdout(stdout, &text),
    }
}

/// Seed of the `index`-th synthetic image.
pub fn image_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn image_id(index: usize) -> String {
    format!("img_{index:05}")
}

/// `synth`: `<out>/dump`, `<out>/gt`, `<out>/taxonomy.json`, and with
/// features enabled `<out>/dump/<id>.ovft` plus `<out>/texts.ovte`.
pub fn synth(config: &SynthConfig, jobs: usize) -> Result<(), CliError> {
    let out = &config.out;
    let indices: Vec<usize> = (0..config.images).collect();
    let scenes = par_map(jobs, &indices, |&i| {
        let spec = SceneSpec {
            seed: image_seed(config.scene.seed, i),
            ..config.scene.clone()
        };
        let scene = gen_scene(&spec)?;
        let features = if config.features {
            Some(aligned_features(&scene.gt, spec.num_classes, config.feature_dim, spec.seed)?)
        } else {
            None
        };
        Ok((scene, features))
    })?;

    let taxonomy = config.scene.taxonomy();
    let io = |path: &Path, e| CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    });
    std::fs::create_dir_all(out.join("gt")).map_err(|e| io(&out.join("gt"), e))?;
    taxonomy.save(&out.join("taxonomy.json"))?;

    let dump_dir = out.join("dump");
    let mut manifest = DumpManifest::new("../taxonomy.json", taxonomy.len());
    manifest.metadata.insert("generator".into(), json!("ovseg synth"));
    manifest.metadata.insert("seed".into(), json!(config.scene.seed));
    let mut images = Vec::with_capacity(scenes.len());
    for (i, (scene, _)) in scenes.iter().enumerate() {
        let id = image_id(i);
        scene.gt.save(&out.join("gt").join(format!("{id}.ovpm")))?;
        let features = config.features.then(|| format!("{id}.ovft"));
        images.push((id, &scene.candidates, features));
    }
    save_dump(&dump_dir, &manifest, &images)?;
    for (i, (_, features)) in scenes.iter().enumerate() {
        if let Some((grid, _)) = features {
            grid.save(&dump_dir.join(format!("{}.ovft", image_id(i))))?;
        }
    }
    if let Some((_, texts)) = scenes.first().and_then(|(_, f)| f.as_ref()) {
        texts.save(&out.join("texts.ovte"))?;
    }
    Ok(())
}
