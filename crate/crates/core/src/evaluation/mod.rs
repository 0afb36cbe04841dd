//! Reconstruction, classification and segmentation metrics, and mesh
//! extraction.

mod marching_cubes;
#[rustfmt::skip]
mod mc_tables;
mod mesh;
mod metrics;
mod predictor;
mod report;

pub use marching_cubes::{marching_cubes, Grid};
pub use mesh::{read_labels, write_labels, Mesh};
pub use metrics::{
    chamfer_l1, chamfer_l1_points, cls_accuracy, extract_mesh, part_iou, part_miou, sample_interior,
    segment_mesh, shape_part_iou, volumetric_iou, ExtractedMesh, PartMiou,
};
pub use predictor::{NetworkModel, NetworkPredictor, OracleModel, Predictor, ShapeModel, ShapeOracle};
pub use report::{evaluate, EvalConfig, Metric, MetricSet, MetricsReport, ShapeRecord};
