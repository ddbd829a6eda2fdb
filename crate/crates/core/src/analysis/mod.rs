//! Measurement instruments: information-plane recording, linear probes,
//! variational bounds, and the rank-collapse toy experiment.

mod bounds;
mod info_plane;
mod probe;
mod toy_collapse;

pub use bounds::{
    hsic_yz_exact_form, snn_hsic_bound_check, variational_mi_lower_bound, BoundCheck,
};
pub use info_plane::record_info_plane;
pub use probe::{extract_features, linear_probe, probe_network, suggest_retrain_boundary, ProbeConfig, ProbeResult};
pub use toy_collapse::{toy_rank_collapse_experiment, ToyConfig, ToySnapshot, ToyTrajectory};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hsic::VariableKernels;

/// Which split the recording subset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EvalSet {
    TrainSubset,
    TestSubset,
}

impl std::fmt::Display for EvalSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalSet::TrainSubset => write!(f, "train"),
            EvalSet::TestSubset => write!(f, "test"),
        }
    }
}

/// One information-plane sample: a layer's normalized dependence with the
/// input and with the labels at a given epoch.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct InfoPlanePoint {
    pub epoch: usize,
    pub layer: usize,
    pub nhsic_xz: f64,
    pub nhsic_yz: f64,
    pub eval_set: EvalSet,
}

/// Kernel and regularizer choices used for recording.
#[derive(Debug, Clone, Copy)]
pub struct InfoPlaneSettings {
    pub kernels: VariableKernels,
    pub epsilon: f64,
}

impl Default for InfoPlaneSettings {
    fn default() -> Self {
        Self {
            kernels: VariableKernels::default(),
            epsilon: crate::hsic::DEFAULT_NHSIC_EPSILON,
        }
    }
}

/// Ordered information-plane points with their recording metadata.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub points: Vec<InfoPlanePoint>,
    pub settings: InfoPlaneSettings,
    pub eval_subset: usize,
    pub seed: u64,
}

impl Trajectory {
    pub fn new(settings: InfoPlaneSettings, eval_subset: usize, seed: u64) -> Self {
        Self { points: Vec::new(), settings, eval_subset, seed }
    }

    /// Appends a batch of points, enforcing strictly increasing epochs per
    /// layer.
    pub fn extend(&mut self, points: Vec<InfoPlanePoint>) -> Result<()> {
        for p in points {
            if !p.nhsic_xz.is_finite() || !p.nhsic_yz.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite info-plane point at epoch {} layer {}",
                    p.epoch, p.layer
                )));
            }
            if let Some(last) = self
                .points
                .iter()
                .rev()
                .find(|q| q.layer == p.layer)
            {
                if last.epoch >= p.epoch {
                    return Err(Error::State(format!(
                        "epochs must increase per layer: layer {} got {} after {}",
                        p.layer, p.epoch, last.epoch
                    )));
                }
            }
            self.points.push(p);
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.points.iter().map(|p| p.layer + 1).max().unwrap_or(0)
    }

    /// Points of one layer in epoch order.
    pub fn layer_points(&self, layer: usize) -> Vec<&InfoPlanePoint> {
        self.points.iter().filter(|p| p.layer == layer).collect()
    }

    /// Writes `epoch,layer,nhsic_xz,nhsic_yz,eval_set` rows.
    pub fn to_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "epoch,layer,nhsic_xz,nhsic_yz,eval_set")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{},{}",
                p.epoch, p.layer, p.nhsic_xz, p.nhsic_yz, p.eval_set
            )?;
        }
        Ok(())
    }
}
