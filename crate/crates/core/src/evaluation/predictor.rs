use crate::autodiff::Tensor;
use crate::geometry::{sigmoid, to_f32, LabeledShape, Point};
use crate::models::Network;
use crate::{Error, Result};

/// Per-shape occupancy and part predictions.
pub trait Predictor {
    /// Probability that each point is inside.
    fn occupancy_probability(&self, points: &[Point]) -> Result<Vec<f64>>;
    /// Predicted part label of each point.
    fn part_labels(&self, points: &[Point]) -> Result<Vec<u16>>;
}

/// Something that can be evaluated shape by shape from input clouds.
pub trait ShapeModel {
    fn predictor<'a>(&'a self, shape: &'a LabeledShape, cloud: &[[f32; 3]]) -> Result<Box<dyn Predictor + 'a>>;
    fn predict_class(&self, shape: &LabeledShape, cloud: &[[f32; 3]]) -> Result<usize>;
}

/// Ground truth of one shape: occupancy `sigmoid(-sharpness * sdf)` and
/// nearest-vertex part labels.
#[derive(Debug, Clone, Copy)]
pub struct ShapeOracle<'a> {
    pub shape: &'a LabeledShape,
    pub sharpness: f64,
}

impl<'a> ShapeOracle<'a> {
    pub fn new(shape: &'a LabeledShape) -> Self {
        ShapeOracle { shape, sharpness: 1.0 }
    }
}

impl Predictor for ShapeOracle<'_> {
    fn occupancy_probability(&self, points: &[Point]) -> Result<Vec<f64>> {
        Ok(points.iter().map(|&p| sigmoid(-self.sharpness * self.shape.sdf(p))).collect())
    }

    fn part_labels(&self, points: &[Point]) -> Result<Vec<u16>> {
        points.iter().map(|&p| self.shape.nearest_vertex_label(p)).collect()
    }
}

/// Answers every question from the ground truth; used to validate the
/// evaluation pipeline itself.
#[derive(Debug, Clone, Copy)]
pub struct OracleModel {
    pub sharpness: f64,
}

impl Default for OracleModel {
    fn default() -> Self {
        OracleModel { sharpness: 1.0 }
    }
}

impl ShapeModel for OracleModel {
    fn predictor<'a>(&'a self, shape: &'a LabeledShape, _cloud: &[[f32; 3]]) -> Result<Box<dyn Predictor + 'a>> {
        Ok(Box::new(ShapeOracle {
            shape,
            sharpness: self.sharpness,
        }))
    }

    fn predict_class(&self, shape: &LabeledShape, _cloud: &[[f32; 3]]) -> Result<usize> {
        Ok(shape.class_label() as usize)
    }
}

/// Eval-mode network inference.
#[derive(Debug, Clone, Copy)]
pub struct NetworkModel<'n> {
    pub network: &'n Network<f32>,
    /// Query points per decoder pass.
    pub chunk: usize,
}

impl<'n> NetworkModel<'n> {
    pub fn new(network: &'n Network<f32>) -> Self {
        NetworkModel { network, chunk: 4096 }
    }
}

/// Network conditioned on one shape's latent code.
#[derive(Debug, Clone)]
pub struct NetworkPredictor<'n> {
    network: &'n Network<f32>,
    latent: Tensor<f32>,
    chunk: usize,
}

impl<'n> NetworkPredictor<'n> {
    pub fn new(network: &'n Network<f32>, cloud: &[[f32; 3]], chunk: usize) -> Result<Self> {
        Ok(NetworkPredictor {
            network,
            latent: network.infer_latent(cloud)?,
            chunk,
        })
    }

    fn query(points: &[Point]) -> Vec<[f32; 3]> {
        points.iter().map(|&p| to_f32(p)).collect()
    }
}

impl Predictor for NetworkPredictor<'_> {
    fn occupancy_probability(&self, points: &[Point]) -> Result<Vec<f64>> {
        if points.is_empty() {
            return Ok(Vec::new());
        }
        let (logits, _) = self
            .network
            .infer_points(&self.latent, &Self::query(points), true, false, self.chunk)?;
        Ok(logits.into_iter().map(sigmoid).collect())
    }

    /// Argmax over all part channels; ties go to the lower label.
    fn part_labels(&self, points: &[Point]) -> Result<Vec<u16>> {
        if points.is_empty() {
            return Ok(Vec::new());
        }
        let parts = self.network.config().n_parts;
        let (_, logits) = self
            .network
            .infer_points(&self.latent, &Self::query(points), false, true, self.chunk)?;
        Ok(logits
            .chunks(parts)
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best as u16
            })
            .collect())
    }
}

impl ShapeModel for NetworkModel<'_> {
    fn predictor<'a>(&'a self, _shape: &'a LabeledShape, cloud: &[[f32; 3]]) -> Result<Box<dyn Predictor + 'a>> {
        Ok(Box::new(NetworkPredictor::new(self.network, cloud, self.chunk)?))
    }

    fn predict_class(&self, _shape: &LabeledShape, cloud: &[[f32; 3]]) -> Result<usize> {
        let logits = self.network.infer_class_logits(cloud)?;
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        if logits.is_empty() {
            return Err(Error::invalid("predict_class", "network has no classes"));
        }
        Ok(best)
    }
}
