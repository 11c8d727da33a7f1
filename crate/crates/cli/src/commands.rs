use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;

use dforge_core::annotation;
use dforge_core::datamodel::{
    load_manifest, model_file_name, read_cluster_model, read_models_dir, read_pool,
    write_cluster_model, write_pool, ClusterParams,
};
use dforge_core::datamodel::formats::write_matrix_as_score_map;
use dforge_core::heatmap::compute_heatmap;
use dforge_core::localize::evaluate;
use dforge_core::pooling::{build_pool, LocalizeParams};
use dforge_core::prioritize::{curve_to_csv, rank_classes, tradeoff_curve};
use dforge_core::refine::refine_dataset;
use dforge_core::spectral;
use dforge_core::synth::{self, SynthConfig};
use dforge_service::{AppState, ServiceConfig};

use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, ensure_parent, read_boxes, read_json, write_json, write_text};
use crate::pipeline::{predict_class, ScoreSource};
use crate::{
    resolve_seed, synth_grid, ApplyArgs, BboxArgs, ClusterArgs, ClusterOpts, EvalArgs,
    HeatmapArgs, OracleArgs, PoolArgs, PrioritizeArgs, ServeArgs, SynthArgs,
};

pub(crate) fn cluster_params(opts: &ClusterOpts) -> CliResult<ClusterParams> {
    let params = ClusterParams {
        rho: opts.rho,
        min_k: opts.min_k,
        max_k: opts.max_k,
        kmeans_restarts: opts.restarts,
        kmeans_max_iter: opts.max_iter,
        seed: resolve_seed(opts.seed)?,
    };
    params.validate()?;
    Ok(params)
}

pub(crate) fn synth(a: &SynthArgs) -> CliResult<()> {
    let cfg = SynthConfig {
        num_classes: a.num_classes,
        distractor_fraction: a.distractor_fraction,
        images_per_class: a.images_per_class,
        grid: synth_grid(a)?,
        feat_dim: a.feat_dim,
        noise_sigma: a.noise_sigma,
        seed: resolve_seed(a.seed)?,
    };
    let man = synth::generate(&cfg, &a.out)?;
    for class_id in &man.classes {
        log::info!(
            "stage=synth class={} images={}",
            class_id,
            man.images_with_label(class_id).count()
        );
    }
    Ok(())
}

pub(crate) fn pool(a: &PoolArgs) -> CliResult<()> {
    let man = load_manifest(&a.manifest)?;
    let pool = build_pool(&man, &a.class_id, &LocalizeParams::new(a.theta)?)?;
    ensure_parent(&a.out)?;
    write_pool(&pool, &a.out)?;
    log::info!(
        "stage=pool class={} patterns={} feat_dim={}",
        a.class_id,
        pool.len(),
        pool.feat_dim
    );
    Ok(())
}

fn class_from_pool_name(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    name.strip_prefix("pool_")?
        .strip_suffix(".bin")
        .filter(|c| !c.is_empty())
        .map(str::to_string)
}

pub(crate) fn cluster(a: &ClusterArgs) -> CliResult<()> {
    let class_id = match &a.class_id {
        Some(c) => c.clone(),
        None => class_from_pool_name(&a.pool).ok_or_else(|| {
            CliError::Usage(format!(
                "cannot tell the class of {}; pass --class",
                a.pool.display()
            ))
        })?,
    };
    let params = cluster_params(&a.opts)?;
    let pool = read_pool(&a.pool, &class_id)?;
    let model = spectral::cluster(&pool, &params)?;
    ensure_parent(&a.out)?;
    write_cluster_model(&model, &a.out)?;
    log::info!(
        "stage=cluster class={} patterns={} k={} lambda2={:.6}",
        class_id,
        pool.len(),
        model.k,
        model.lambda2().unwrap_or(f64::NAN)
    );
    Ok(())
}

pub(crate) fn heatmap(a: &HeatmapArgs) -> CliResult<()> {
    let man = load_manifest(&a.manifest)?;
    man.require_class(&a.class_id)?;
    let model = read_cluster_model(&a.model, &a.class_id)?;
    let entry = man.image(&a.image_id).ok_or_else(|| {
        CliError::Usage(format!("image {} is not in the manifest", a.image_id))
    })?;
    let fm = man.load_feature_map(entry)?;
    ensure_dir(&a.out)?;
    for i in 0..model.k {
        let h = compute_heatmap(&fm, &model, i)?;
        let name = format!("hm_{}_{}_c{}.smap", a.class_id, a.image_id, i);
        write_matrix_as_score_map(h.grid.rows, h.grid.cols, &h.values, a.out.join(name))?;
    }
    log::info!(
        "stage=heatmap class={} image={} clusters={}",
        a.class_id,
        a.image_id,
        model.k
    );
    Ok(())
}

pub(crate) fn apply(a: &ApplyArgs) -> CliResult<()> {
    let man = load_manifest(&a.manifest)?;
    let model = read_cluster_model(&a.model, &a.class_id)?;
    let ann = annotation::read_record(&a.annotation)?;
    let summary = refine_dataset(
        &man,
        &a.class_id,
        &model,
        &ann,
        &LocalizeParams::new(a.theta)?,
        &a.out,
    )?;
    log::info!(
        "stage=apply class={} images={} cells_suppressed={} foreground_cells_suppressed={}",
        a.class_id,
        summary.images_processed,
        summary.cells_suppressed,
        summary.foreground_cells_suppressed
    );
    Ok(())
}

pub(crate) fn bbox(a: &BboxArgs) -> CliResult<()> {
    let man = load_manifest(&a.manifest)?;
    man.require_class(&a.class_id)?;
    let source = match &a.scores {
        Some(dir) => ScoreSource::Dir(dir),
        None => ScoreSource::Manifest,
    };
    let boxes = predict_class(
        &man,
        &a.class_id,
        source,
        &LocalizeParams::new(a.theta)?,
        false,
    )?;
    write_json(&a.out, &boxes)?;
    log::info!(
        "stage=bbox class={} images={} boxes={}",
        a.class_id,
        boxes.len(),
        boxes.values().filter(|b| b.is_some()).count()
    );
    Ok(())
}

pub(crate) fn eval(a: &EvalArgs) -> CliResult<()> {
    let man = load_manifest(&a.manifest)?;
    let predictions = read_boxes(&a.boxes, a.class_id.as_deref())?;
    let report = evaluate(&man, &predictions, a.iou)?;
    write_json(&a.out, &report)?;
    for (class_id, r) in &report.classes {
        log::info!(
            "stage=eval class={} images={} correct={} accuracy={:.4} mean_iou={:.4}",
            class_id,
            r.images,
            r.correct,
            r.accuracy,
            r.mean_iou
        );
    }
    Ok(())
}

pub(crate) fn prioritize(a: &PrioritizeArgs) -> CliResult<()> {
    let models = read_models_dir(&a.models)?;
    let improvements: BTreeMap<String, f64> = read_json(&a.improvements)?;
    let ranked = rank_classes(models.values());
    let curve = tradeoff_curve(&ranked, &improvements)?;
    write_text(&a.out, &curve_to_csv(&curve))?;
    for (rank, r) in ranked.iter().enumerate() {
        log::info!(
            "stage=prioritize class={} rank={} lambda2={:.6}",
            r.class_id,
            rank,
            r.lambda2
        );
    }
    Ok(())
}

pub(crate) fn serve(a: &ServeArgs) -> CliResult<()> {
    let cfg = ServiceConfig {
        manifest: a.manifest.clone(),
        models_dir: a.models.clone(),
        annotations_dir: a.annotations.clone(),
        static_dir: a.static_dir.clone(),
        sample_seed: resolve_seed(a.seed)?,
    };
    let state = AppState::load(&cfg)?;
    for (class_id, m) in &state.models {
        log::info!("stage=serve class={} k={}", class_id, m.k);
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::io("tokio runtime", e))?;
    let addr = SocketAddr::new(a.host, a.port);
    runtime
        .block_on(dforge_service::serve(state, addr))
        .map_err(|e| CliError::io(format!("{addr}"), e))
}

pub(crate) fn oracle(a: &OracleArgs) -> CliResult<()> {
    let man = load_manifest(&a.manifest)?;
    let models = match &a.class_id {
        Some(c) => {
            let path = a.models.join(model_file_name(c));
            BTreeMap::from([(c.clone(), read_cluster_model(&path, c)?)])
        }
        None => read_models_dir(&a.models)?,
    };
    for (class_id, model) in &models {
        let rec = synth::oracle_annotation(&man, model)?;
        annotation::write_record(&a.out, &rec)?;
        let distractors = rec
            .labels
            .values()
            .filter(|l| **l == dforge_core::datamodel::Label::Distractor)
            .count();
        log::info!(
            "stage=oracle class={} k={} distractor_clusters={}",
            class_id,
            model.k,
            distractors
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_is_read_from_pool_file_names() {
        assert_eq!(class_from_pool_name(Path::new("x/pool_c03.bin")), Some("c03".into()));
        assert_eq!(class_from_pool_name(Path::new("pool_.bin")), None);
        assert_eq!(class_from_pool_name(Path::new("other.bin")), None);
    }
}
