use serde::{Deserialize, Serialize};

use crate::data::segment::SegmentationPolicy;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Supervision target: a class index, or a continuous value in regression mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Class(usize),
    Value(f64),
}

impl Target {
    pub fn class(&self) -> Option<usize> {
        match self {
            Target::Class(c) => Some(*c),
            Target::Value(_) => None,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Target::Class(_) => None,
            Target::Value(v) => Some(*v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Classification,
    Regression,
}

/// One `(series, text, label)` instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiModalSample {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<i64>,
    /// `N` channels of `T` steps each.
    pub series: Vec<Vec<f64>>,
    pub segments: Vec<String>,
    pub label: Target,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// `d_s × L` segment embeddings, filled by the embedding provider.
    #[serde(skip)]
    pub embeddings: Option<Tensor>,
}

impl MultiModalSample {
    pub fn series_tensor(&self) -> Result<Tensor> {
        Tensor::from_rows(&self.series)
    }

    pub fn embeddings(&self) -> Result<&Tensor> {
        self.embeddings.as_ref().ok_or_else(|| {
            Error::Contract(format!("sample `{}` has no text embeddings", self.id))
        })
    }

    pub fn class(&self) -> Result<usize> {
        self.label.class().ok_or_else(|| {
            Error::Contract(format!("sample `{}` carries a continuous target", self.id))
        })
    }

    /// Replaces the text; cached embeddings become stale and are dropped.
    pub fn set_segments(&mut self, segments: Vec<String>) {
        if segments != self.segments {
            self.segments = segments;
            self.embeddings = None;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidConfig(format!("split ratios out of range: {parts:?}")));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("split ratios sum to {total}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub label_names: Vec<String>,
    pub channels: usize,
    pub time_steps: usize,
    #[serde(default)]
    pub task: Task,
    pub segmentation: SegmentationPolicy,
    #[serde(default)]
    pub split_ratios: SplitRatios,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormalizationStats>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        match self.task {
            Task::Classification => self.label_names.len(),
            Task::Regression => 1,
        }
    }
}

/// Samples partitioned by split tag.
#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<MultiModalSample>,
    pub val: Vec<MultiModalSample>,
    pub test: Vec<MultiModalSample>,
}

impl Splits {
    pub fn from_tagged(samples: Vec<MultiModalSample>) -> Result<Self> {
        let mut out = Splits::default();
        for s in samples {
            match s.split {
                Some(Split::Train) => out.train.push(s),
                Some(Split::Val) => out.val.push(s),
                Some(Split::Test) => out.test.push(s),
                None => {
                    return Err(Error::Contract(format!("sample `{}` has no split tag", s.id)))
                }
            }
        }
        Ok(out)
    }

    pub fn all_mut(&mut self) -> impl Iterator<Item = &mut MultiModalSample> {
        self.train
            .iter_mut()
            .chain(self.val.iter_mut())
            .chain(self.test.iter_mut())
    }
}
