//! Classification datasets: synthetic Gaussian blobs, Dirichlet label-skew
//! partitioning across clients, and CSV ingestion.

mod csv_source;
mod partition;
mod synthetic;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use csv_source::{load_csv, CsvSplits, DEFAULT_SPLIT_FRACTIONS};
pub use partition::{dirichlet_partition, entropy, js_divergence, label_distribution, PartitionPlan, MAX_PARTITION_ATTEMPTS};
pub use synthetic::make_synthetic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Pretrain,
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Pretrain => "pretrain",
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Features `x` (`N x d`) with labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Data(format!("{} feature rows but {} labels", x.rows(), y.len())));
        }
        if let Some(bad) = y.iter().find(|&&c| c >= classes) {
            return Err(Error::Data(format!("label {bad} outside [0, {classes})")));
        }
        if !x.is_finite() {
            return Err(Error::Data("non-finite feature".into()));
        }
        Ok(Self { x, y, classes, split })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, idx: &[usize], split: Split) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            classes: self.classes,
            split,
        }
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &c in &self.y {
            counts[c] += 1;
        }
        counts
    }
}
