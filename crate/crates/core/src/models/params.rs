use rand::Rng;

use crate::autodiff::{Scalar, Tensor};

pub type ParamId = usize;

/// Which sub-network a parameter belongs to, by name prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    OccupancyDecoder,
    SegmentationDecoder,
    JointDecoder,
    Classifier,
}

impl ParamGroup {
    pub fn prefix(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder.",
            ParamGroup::OccupancyDecoder => "occupancy_decoder.",
            ParamGroup::SegmentationDecoder => "segmentation_decoder.",
            ParamGroup::JointDecoder => "joint_decoder.",
            ParamGroup::Classifier => "classifier.",
        }
    }

    pub fn of(name: &str) -> Option<ParamGroup> {
        [
            ParamGroup::Encoder,
            ParamGroup::OccupancyDecoder,
            ParamGroup::SegmentationDecoder,
            ParamGroup::JointDecoder,
            ParamGroup::Classifier,
        ]
        .into_iter()
        .find(|g| name.starts_with(g.prefix()))
    }
}

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (i, n.as_str(), t))
    }

    pub fn group(&self, id: ParamId) -> Option<ParamGroup> {
        ParamGroup::of(&self.names[id])
    }

    pub(crate) fn push(&mut self, name: String, t: Tensor<T>) -> ParamId {
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    /// `fan_in x fan_out` weight, uniform in `±gain * sqrt(6 / (fan_in + fan_out))`.
    pub(crate) fn push_glorot<R: Rng + ?Sized>(
        &mut self,
        name: String,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut R,
    ) -> ParamId {
        let bound = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::of(rng.random_range(-bound..=bound)))
            .collect();
        self.push(name, Tensor::new(vec![fan_in, fan_out], data).expect("sized"))
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }
}
