use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::metrics::{chamfer_l1_points, extract_mesh, shape_part_iou, volumetric_iou};
use super::predictor::ShapeModel;
use crate::geometry::{input_cloud, LabeledShape};
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Iou,
    Chamfer,
    Acc,
    Miou,
}

/// Requested metrics, written `iou,chamfer,acc,miou`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MetricSet {
    pub iou: bool,
    pub chamfer: bool,
    pub acc: bool,
    pub miou: bool,
}

impl MetricSet {
    pub const ALL: MetricSet = MetricSet {
        iou: true,
        chamfer: true,
        acc: true,
        miou: true,
    };

    pub fn contains(&self, m: Metric) -> bool {
        match m {
            Metric::Iou => self.iou,
            Metric::Chamfer => self.chamfer,
            Metric::Acc => self.acc,
            Metric::Miou => self.miou,
        }
    }
}

impl FromStr for MetricSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut set = MetricSet::default();
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            let slot = match name {
                "iou" => &mut set.iou,
                "chamfer" => &mut set.chamfer,
                "acc" => &mut set.acc,
                "miou" => &mut set.miou,
                _ => {
                    return Err(Error::Config(format!(
                        "unknown metric `{name}` (expected iou, chamfer, acc, miou)"
                    )))
                }
            };
            *slot = true;
        }
        if set == MetricSet::default() {
            return Err(Error::Config("no metrics given".into()));
        }
        Ok(set)
    }
}

impl fmt::Display for MetricSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (self.iou, "iou"),
            (self.chamfer, "chamfer"),
            (self.acc, "acc"),
            (self.miou, "miou"),
        ]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect();
        f.write_str(&names.join(","))
    }
}

impl Serialize for MetricSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MetricSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub metrics: MetricSet,
    pub seed: u64,
    /// Noise on the input clouds.
    pub noise_sigma: f64,
    /// Evaluation-domain padding as a fraction of the bbox diagonal.
    pub pad_fraction: f64,
    pub iou_samples: usize,
    pub chamfer_samples: usize,
    pub miou_points: usize,
    /// Grid resolution of the meshes scored by Chamfer-L1.
    pub resolution: usize,
    pub tau: f64,
    pub mesh_tau: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            metrics: MetricSet::ALL,
            seed: 0,
            noise_sigma: 0.05,
            pad_fraction: 0.1,
            iou_samples: 100_000,
            chamfer_samples: 10_000,
            miou_points: 10_000,
            resolution: 32,
            tau: 0.5,
            mesh_tau: 0.2,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iou_samples == 0 || self.chamfer_samples == 0 || self.miou_points == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        if self.resolution < 8 {
            return Err(Error::Config("mesh resolution must be at least 8".into()));
        }
        if !(0.0..1.0).contains(&self.tau) || !(0.0..1.0).contains(&self.mesh_tau) {
            return Err(Error::Config("thresholds must lie in [0, 1)".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.pad_fraction >= 0.0) {
            return Err(Error::Config("noise_sigma and pad_fraction must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeRecord {
    pub id: String,
    pub class_label: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chamfer_l1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Warnings {
    /// Shapes left out of the mIOU because no interior point was drawn.
    pub skipped_miou_shapes: usize,
    /// Shapes left out of the Chamfer-L1 because the predicted mesh was empty.
    pub empty_meshes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chamfer_l1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cls_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub miou: Option<f64>,
    /// Keyed by class label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class_miou: Option<BTreeMap<u16, f64>>,
    pub shapes: Vec<ShapeRecord>,
    pub warnings: Warnings,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Score `model` on `shapes`. Shape `i` gets its input cloud and all its
/// sample points from `cfg.seed` and `i`, so reports are reproducible.
pub fn evaluate(model: &dyn ShapeModel, shapes: &[LabeledShape], ids: &[String], cfg: &EvalConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    if ids.len() != shapes.len() {
        return Err(Error::invalid("evaluate", "one id per shape is required"));
    }
    let m = cfg.metrics;
    let mut warnings = Warnings::default();
    let mut records = Vec::with_capacity(shapes.len());
    for (i, (shape, id)) in shapes.iter().zip(ids).enumerate() {
        let seed = derive_seed(cfg.seed, &[i as u64]);
        let cloud = input_cloud(shape, cfg.noise_sigma, seed);
        let mut rec = ShapeRecord {
            id: id.clone(),
            class_label: shape.class_label(),
            iou: None,
            chamfer_l1: None,
            predicted_class: None,
            part_iou: None,
        };
        if m.acc {
            rec.predicted_class = Some(model.predict_class(shape, &cloud)?);
        }
        if m.iou || m.chamfer || m.miou {
            let predictor = model.predictor(shape, &cloud)?;
            let domain = shape.bbox().padded(cfg.pad_fraction * shape.bbox().diagonal());
            if m.iou {
                rec.iou = Some(volumetric_iou(predictor.as_ref(), shape, domain, cfg.iou_samples, cfg.tau, seed)?);
            }
            if m.chamfer {
                let extracted = extract_mesh(predictor.as_ref(), domain, cfg.resolution, cfg.mesh_tau)?;
                if extracted.mesh.is_empty() {
                    warnings.empty_meshes += 1;
                } else {
                    let pred = extracted
                        .mesh
                        .sample_surface(cfg.chamfer_samples, &mut stream(seed, &[0xC4A1]))?;
                    let gt: Vec<_> = shape
                        .sample_surface(cfg.chamfer_samples, &mut stream(seed, &[0xC4A2]))
                        .into_iter()
                        .map(|v| v.point)
                        .collect();
                    rec.chamfer_l1 = Some(chamfer_l1_points(&pred, &gt)?);
                }
            }
            if m.miou {
                rec.part_iou = shape_part_iou(predictor.as_ref(), shape, cfg.miou_points, seed)?;
                warnings.skipped_miou_shapes += rec.part_iou.is_none() as usize;
            }
        }
        records.push(rec);
    }

    let mut per_class: BTreeMap<u16, Vec<f64>> = BTreeMap::new();
    for r in &records {
        if let Some(v) = r.part_iou {
            per_class.entry(r.class_label).or_default().push(v);
        }
    }
    Ok(MetricsReport {
        iou: m.iou.then(|| mean(records.iter().filter_map(|r| r.iou))).flatten(),
        chamfer_l1: m.chamfer.then(|| mean(records.iter().filter_map(|r| r.chamfer_l1))).flatten(),
        cls_accuracy: m
            .acc
            .then(|| {
                mean(records.iter().map(|r| (r.predicted_class == Some(r.class_label as usize)) as u8 as f64))
            })
            .flatten(),
        miou: m.miou.then(|| mean(records.iter().filter_map(|r| r.part_iou))).flatten(),
        per_class_miou: m.miou.then(|| {
            per_class
                .into_iter()
                .map(|(c, v)| (c, mean(v.into_iter()).expect("nonempty")))
                .collect()
        }),
        shapes: records,
        warnings,
    })
}
