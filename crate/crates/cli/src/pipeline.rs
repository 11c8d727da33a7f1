//! End-to-end run over a dataset.
//!
//! Output tree:
//!
//! ```text
//! RUN/
//!   pools/pool_<class>.bin
//!   models/model_<class>.clus
//!   refined/<class>/<image>.smap
//!   boxes_baseline.json   boxes_refined.json     image → class → box
//!   report_baseline.json  report_refined.json
//!   improvements.json     class → refined − baseline accuracy
//!   curve.csv
//!   summary.json
//! ```
//!
//! Classes without an annotation, or whose pool is too small to cluster,
//! keep their baseline maps and are flagged in the summary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dforge_core::annotation;
use dforge_core::datamodel::{
    load_manifest, model_file_name, pool_file_name, read_score_map, write_cluster_model,
    write_pool, ClusterModel, DatasetManifest, ScoreMap,
};
use dforge_core::localize::{evaluate, predict_box, EvalReport, Predictions};
use dforge_core::pooling::{build_pool, LocalizeParams};
use dforge_core::prioritize::{curve_to_csv, rank_classes, tradeoff_curve, CurvePoint};
use dforge_core::refine::{refine_dataset, refined_file_name, RefineSummary};
use dforge_core::{spectral, Error};
use rayon::prelude::*;
use serde::Serialize;

use crate::commands::cluster_params;
use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, write_json, write_text, ClassBoxes};
use crate::PipelineArgs;

#[derive(Debug, Clone, Copy)]
pub enum ScoreSource<'a> {
    Manifest,
    /// Directory of `<image>.smap` files.
    Dir(&'a Path),
}

fn load_scores(
    man: &DatasetManifest,
    class_id: &str,
    image_id: &str,
    source: ScoreSource<'_>,
) -> CliResult<ScoreMap> {
    let entry = man.image(image_id).expect("image from manifest");
    Ok(match source {
        ScoreSource::Manifest => man.load_score_map(entry, class_id)?,
        ScoreSource::Dir(dir) => {
            read_score_map(dir.join(refined_file_name(image_id)), class_id)?.with_grid(man.grid)?
        }
    })
}

/// One box per image labeled with the class. With `gt_only`, images lacking
/// ground truth for the class are left out.
pub fn predict_class(
    man: &DatasetManifest,
    class_id: &str,
    source: ScoreSource<'_>,
    p: &LocalizeParams,
    gt_only: bool,
) -> CliResult<ClassBoxes> {
    let mut out = ClassBoxes::new();
    for entry in man.images_with_label(class_id) {
        if gt_only && entry.gt_boxes.get(class_id).is_none_or(|b| b.is_empty()) {
            continue;
        }
        let sm = load_scores(man, class_id, &entry.id, source)?;
        out.insert(entry.id.clone(), predict_box(&sm, p));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassStatus {
    Refined,
    Unannotated,
    /// Too few patterns to cluster; treated as all-object.
    Unclusterable,
    /// No foreground patterns at all.
    EmptyPool,
}

impl ClassStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassStatus::Refined => "refined",
            ClassStatus::Unannotated => "unannotated",
            ClassStatus::Unclusterable => "unclusterable",
            ClassStatus::EmptyPool => "empty_pool",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassSummary {
    pub class: String,
    pub status: ClassStatus,
    pub patterns: usize,
    pub k: Option<usize>,
    pub lambda2: Option<f64>,
    pub images_refined: usize,
    pub cells_suppressed: usize,
    pub foreground_cells_suppressed: usize,
    pub baseline_accuracy: Option<f64>,
    pub refined_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub classes: Vec<ClassSummary>,
    pub refined: Vec<String>,
    pub unannotated: Vec<String>,
    pub unclusterable: Vec<String>,
    pub baseline_accuracy: f64,
    pub refined_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub summary: RunSummary,
    pub models: BTreeMap<String, ClusterModel>,
    pub baseline: EvalReport,
    pub refined: EvalReport,
    pub improvements: BTreeMap<String, f64>,
    pub curve: Vec<CurvePoint>,
}

struct ClassRun {
    summary: ClassSummary,
    model: Option<ClusterModel>,
    baseline: ClassBoxes,
    refined: ClassBoxes,
}

struct Ctx<'a> {
    man: &'a DatasetManifest,
    annotations: &'a Path,
    out: &'a Path,
    localize: LocalizeParams,
    params: dforge_core::datamodel::ClusterParams,
}

fn process_class(ctx: &Ctx<'_>, class_id: &str) -> CliResult<ClassRun> {
    let mut summary = ClassSummary {
        class: class_id.to_string(),
        status: ClassStatus::EmptyPool,
        patterns: 0,
        k: None,
        lambda2: None,
        images_refined: 0,
        cells_suppressed: 0,
        foreground_cells_suppressed: 0,
        baseline_accuracy: None,
        refined_accuracy: None,
    };
    let baseline = predict_class(ctx.man, class_id, ScoreSource::Manifest, &ctx.localize, true)?;
    let mut refined = baseline.clone();
    let mut model = None;

    match build_pool(ctx.man, class_id, &ctx.localize) {
        Err(Error::EmptyPool(_)) => {}
        Err(e) => return Err(e.into()),
        Ok(pool) => {
            summary.patterns = pool.len();
            write_pool(&pool, ctx.out.join("pools").join(pool_file_name(class_id)))?;
            match spectral::cluster(&pool, &ctx.params) {
                Err(Error::PoolTooSmall { .. }) => summary.status = ClassStatus::Unclusterable,
                Err(e) => return Err(e.into()),
                Ok(m) => {
                    write_cluster_model(&m, ctx.out.join("models").join(model_file_name(class_id)))?;
                    summary.k = Some(m.k);
                    summary.lambda2 = m.lambda2();
                    match annotation::read_class(ctx.annotations, class_id)? {
                        None => summary.status = ClassStatus::Unannotated,
                        Some(ann) => {
                            let dir = refined_dir(ctx.out, class_id);
                            let r: RefineSummary =
                                refine_dataset(ctx.man, class_id, &m, &ann, &ctx.localize, &dir)?;
                            summary.status = ClassStatus::Refined;
                            summary.images_refined = r.images_processed;
                            summary.cells_suppressed = r.cells_suppressed;
                            summary.foreground_cells_suppressed = r.foreground_cells_suppressed;
                            refined = predict_class(
                                ctx.man,
                                class_id,
                                ScoreSource::Dir(&dir),
                                &ctx.localize,
                                true,
                            )?;
                        }
                    }
                    model = Some(m);
                }
            }
        }
    }
    log::info!(
        "stage=pipeline class={} status={} patterns={} k={} lambda2={} cells_suppressed={}",
        class_id,
        summary.status.as_str(),
        summary.patterns,
        summary.k.map_or("-".into(), |k| k.to_string()),
        summary.lambda2.map_or("-".into(), |l| format!("{l:.6}")),
        summary.cells_suppressed
    );
    Ok(ClassRun {
        summary,
        model,
        baseline,
        refined,
    })
}

fn nest(per_class: &BTreeMap<String, ClassBoxes>) -> Predictions {
    let mut out = Predictions::new();
    for (class_id, boxes) in per_class {
        for (image_id, b) in boxes {
            out.entry(image_id.clone())
                .or_default()
                .insert(class_id.clone(), *b);
        }
    }
    out
}

pub fn run_pipeline(a: &PipelineArgs) -> CliResult<PipelineOutput> {
    if a.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let man = load_manifest(&a.manifest)?;
    let ctx = Ctx {
        man: &man,
        annotations: &a.annotations,
        out: &a.out,
        localize: LocalizeParams::new(a.theta)?,
        params: cluster_params(&a.cluster)?,
    };
    for sub in ["pools", "models", "refined"] {
        ensure_dir(&a.out.join(sub))?;
    }

    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", a.jobs)))?;
    let runs: Vec<CliResult<ClassRun>> = threads.install(|| {
        man.classes
            .par_iter()
            .map(|c| process_class(&ctx, c))
            .collect()
    });
    let runs = runs.into_iter().collect::<CliResult<Vec<_>>>()?;

    let mut models = BTreeMap::new();
    let mut baseline_boxes = BTreeMap::new();
    let mut refined_boxes = BTreeMap::new();
    let mut classes = Vec::new();
    for run in runs {
        if let Some(m) = run.model {
            models.insert(run.summary.class.clone(), m);
        }
        baseline_boxes.insert(run.summary.class.clone(), run.baseline);
        refined_boxes.insert(run.summary.class.clone(), run.refined);
        classes.push(run.summary);
    }
    let baseline_pred = nest(&baseline_boxes);
    let refined_pred = nest(&refined_boxes);
    write_json(&a.out.join("boxes_baseline.json"), &baseline_pred)?;
    write_json(&a.out.join("boxes_refined.json"), &refined_pred)?;

    let baseline = evaluate(&man, &baseline_pred, a.iou)?;
    let refined = evaluate(&man, &refined_pred, a.iou)?;
    write_json(&a.out.join("report_baseline.json"), &baseline)?;
    write_json(&a.out.join("report_refined.json"), &refined)?;

    let accuracy = |r: &EvalReport, c: &str| r.classes.get(c).map(|x| x.accuracy);
    for s in &mut classes {
        s.baseline_accuracy = accuracy(&baseline, &s.class);
        s.refined_accuracy = accuracy(&refined, &s.class);
    }
    let improvements: BTreeMap<String, f64> = models
        .keys()
        .map(|c| {
            let delta = accuracy(&refined, c).unwrap_or(0.0) - accuracy(&baseline, c).unwrap_or(0.0);
            (c.clone(), delta)
        })
        .collect();
    write_json(&a.out.join("improvements.json"), &improvements)?;

    let ranked = rank_classes(models.values());
    let curve = tradeoff_curve(&ranked, &improvements)?;
    write_text(&a.out.join("curve.csv"), &curve_to_csv(&curve))?;

    let with = |st: ClassStatus| -> Vec<String> {
        classes
            .iter()
            .filter(|c| c.status == st || (st == ClassStatus::Unclusterable && c.status == ClassStatus::EmptyPool))
            .map(|c| c.class.clone())
            .collect()
    };
    let summary = RunSummary {
        refined: with(ClassStatus::Refined),
        unannotated: with(ClassStatus::Unannotated),
        unclusterable: with(ClassStatus::Unclusterable),
        baseline_accuracy: baseline.overall_accuracy,
        refined_accuracy: refined.overall_accuracy,
        classes,
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    log::info!(
        "stage=pipeline refined={} unannotated={} unclusterable={} baseline_accuracy={:.4} refined_accuracy={:.4}",
        summary.refined.len(),
        summary.unannotated.len(),
        summary.unclusterable.len(),
        summary.baseline_accuracy,
        summary.refined_accuracy
    );
    Ok(PipelineOutput {
        summary,
        models,
        baseline,
        refined,
        improvements,
        curve,
    })
}

/// Directory the pipeline writes refined maps of a class to.
pub fn refined_dir(run: &Path, class_id: &str) -> PathBuf {
    run.join("refined").join(class_id)
}
