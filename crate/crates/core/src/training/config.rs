use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::adam::AdamConfig;
use super::loss::LossWeights;
use crate::models::Topology;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Rec,
    Cls,
    Seg,
}

/// Subset of tasks trained together, written `rec,cls,seg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TaskSet {
    pub rec: bool,
    pub cls: bool,
    pub seg: bool,
}

impl TaskSet {
    pub const ALL: TaskSet = TaskSet {
        rec: true,
        cls: true,
        seg: true,
    };

    pub fn only(task: Task) -> Self {
        let mut s = TaskSet::default();
        s.insert(task);
        s
    }

    pub fn insert(&mut self, task: Task) {
        match task {
            Task::Rec => self.rec = true,
            Task::Cls => self.cls = true,
            Task::Seg => self.seg = true,
        }
    }

    pub fn contains(&self, task: Task) -> bool {
        match task {
            Task::Rec => self.rec,
            Task::Cls => self.cls,
            Task::Seg => self.seg,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.rec || self.cls || self.seg)
    }
}

impl FromStr for TaskSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut set = TaskSet::default();
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            let task = match name {
                "rec" => Task::Rec,
                "cls" => Task::Cls,
                "seg" => Task::Seg,
                _ => return Err(Error::Config(format!("unknown task `{name}` (expected rec, cls, seg)"))),
            };
            if set.contains(task) {
                return Err(Error::Config(format!("task `{name}` listed twice")));
            }
            set.insert(task);
        }
        if set.is_empty() {
            return Err(Error::Config("no tasks given".into()));
        }
        Ok(set)
    }
}

impl fmt::Display for TaskSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.rec, "rec"), (self.cls, "cls"), (self.seg, "seg")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        f.write_str(&names.join(","))
    }
}

impl Serialize for TaskSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TaskSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub tasks: TaskSet,
    pub topology: Topology,
    pub freeze_encoder: bool,
    pub adam: AdamConfig,
    /// Step from which the learning rate is multiplied by `lr_drop_factor`.
    pub lr_drop_at: Option<usize>,
    pub lr_drop_factor: f64,
    pub batch_size: usize,
    /// Query points per shape per step.
    pub n_query: usize,
    pub steps: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    /// Query-domain padding as a fraction of the bbox diagonal.
    pub pad_fraction: f64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tasks: TaskSet::ALL,
            topology: Topology::Parallel,
            freeze_encoder: false,
            adam: AdamConfig::default(),
            lr_drop_at: None,
            lr_drop_factor: 0.1,
            batch_size: 16,
            n_query: 1024,
            steps: 10_000,
            seed: 0,
            noise_sigma: 0.05,
            pad_fraction: 0.1,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    /// Checks that do not depend on the starting network.
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config("no tasks selected".into()));
        }
        if self.topology == Topology::Joint && !(self.tasks.rec && self.tasks.seg) {
            return Err(Error::Config("joint topology needs both rec and seg tasks".into()));
        }
        if self.batch_size == 0 || self.n_query == 0 {
            return Err(Error::Config("batch_size and n_query must be positive".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor.is_finite()) {
            return Err(Error::Config("lr_drop_factor must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.pad_fraction >= 0.0) {
            return Err(Error::Config("noise_sigma and pad_fraction must be non-negative".into()));
        }
        self.weights.validate()
    }
}
