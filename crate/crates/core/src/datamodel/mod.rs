//! Shared domain types, binary tensor formats and the dataset manifest.

pub mod formats;
pub mod manifest;
pub mod types;

pub use formats::{
    model_file_name, pool_file_name, read_cluster_model, read_feature_map, read_models_dir,
    read_pool, read_score_map, write_cluster_model, write_feature_map, write_pool,
    write_score_map,
};
pub use manifest::{load_manifest, parse_manifest, DatasetManifest, ImageEntry};
pub use types::{
    AnnotationRecord, BBox, ClusterModel, ClusterParams, FeatureMap, Label, Pattern, PatternPool,
    RegionGrid, ScoreMap, NEG_INF,
};
