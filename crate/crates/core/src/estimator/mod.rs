//! Factor-graph state estimation.
//!
//! Every DVL sample creates a pose node. Consecutive nodes are linked by an
//! odometry factor built from the DVL velocity and the change in AHRS
//! orientation; orientation, depth and (at the surface) GPS samples are
//! queued and attached to the nearest node in time.

pub mod association;
pub mod factor;
pub mod graph;
pub mod smoother;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use association::{Assignment, AssociationStats, MeasurementQueue, NodeWindow};
pub use factor::{Factor, FactorKind};
pub use graph::{BatchOptions, FactorGraph, FactorId, GraphError, OptimizeReport, PoseNode};
pub use smoother::{IncrementalSmoother, SmootherOptions, UpdateReport};

use crate::geometry::{wrap_angle, Pose6};
use crate::sensors::{Measurement, Payload, SensorConfig, SensorKind};

/// Lower bound applied to every factor sigma so zero-noise sensors still
/// give a well-conditioned problem.
pub const SIGMA_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// Association tolerance (s). Defaults to half the DVL period.
    pub match_tolerance: Option<f64>,
    pub prior_sigma: [f64; 6],
    /// Factor sigmas; each defaults to the generating sensor's noise.
    pub odom_sigma: Option<[f64; 6]>,
    pub imu_sigma: Option<[f64; 3]>,
    pub depth_sigma: Option<f64>,
    pub gps_sigma: Option<[f64; 2]>,
    pub use_gps: bool,
    pub relin_position: f64,
    pub relin_angle: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        let s = SmootherOptions::default();
        Self {
            match_tolerance: None,
            prior_sigma: [0.01, 0.01, 0.01, 0.005, 0.005, 0.005],
            odom_sigma: None,
            imu_sigma: None,
            depth_sigma: None,
            gps_sigma: None,
            use_gps: true,
            relin_position: s.relin_position,
            relin_angle: s.relin_angle,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if let Some(t) = self.match_tolerance {
            if !positive(t) {
                return Err("estimator.match_tolerance must be positive".into());
            }
        }
        let mut sigmas: Vec<f64> = self.prior_sigma.to_vec();
        sigmas.extend(self.odom_sigma.iter().flatten());
        sigmas.extend(self.imu_sigma.iter().flatten());
        sigmas.extend(self.depth_sigma);
        sigmas.extend(self.gps_sigma.iter().flatten());
        if !sigmas.into_iter().all(positive) {
            return Err("estimator sigmas must be positive".into());
        }
        if !positive(self.relin_position) || !positive(self.relin_angle) {
            return Err("estimator relinearization thresholds must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("DVL sample at {t} s is not after the last node at {last} s")]
    OutOfOrder { t: f64, last: f64 },
    #[error("expected a DVL sample, got {0:?}")]
    NotDvl(SensorKind),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Sigmas {
    prior: [f64; 6],
    odom_translation_rate: [f64; 3],
    odom_rotation: [f64; 3],
    imu: [f64; 3],
    depth: f64,
    gps: [f64; 2],
    odom_override: Option<[f64; 6]>,
}

fn floor<const N: usize>(s: [f64; N]) -> [f64; N] {
    s.map(|v| v.max(SIGMA_FLOOR))
}

/// Result of feeding one DVL sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeUpdate {
    pub node: usize,
    pub t: f64,
    pub estimate: Pose6,
    pub assignments: Vec<Assignment>,
    pub report: UpdateReport,
}

#[derive(Debug, Clone)]
pub struct Estimator {
    smoother: IncrementalSmoother,
    queue: MeasurementQueue,
    sigmas: Sigmas,
    initial: Pose6,
    use_gps: bool,
    latest_imu: Option<[f64; 3]>,
    imu_at_last_node: Option<[f64; 3]>,
    slots: Vec<BTreeMap<SensorKind, (FactorId, f64)>>,
    rejected: u64,
    degraded: bool,
}

impl Estimator {
    pub fn new(cfg: &EstimatorConfig, sensors: &SensorConfig, initial: Pose6) -> Self {
        let tolerance = cfg.match_tolerance.unwrap_or(0.5 / sensors.dvl.rate);
        let imu = cfg.imu_sigma.unwrap_or(sensors.imu.sigma);
        let sigmas = Sigmas {
            prior: floor(cfg.prior_sigma),
            odom_translation_rate: sensors.dvl.sigma,
            // Difference of two independent orientation samples.
            odom_rotation: sensors.imu.sigma.map(|s| s * std::f64::consts::SQRT_2),
            imu: floor(imu),
            depth: cfg.depth_sigma.unwrap_or(sensors.depth.sigma).max(SIGMA_FLOOR),
            gps: floor(cfg.gps_sigma.unwrap_or(sensors.gps.sigma)),
            odom_override: cfg.odom_sigma.map(floor),
        };
        Self {
            smoother: IncrementalSmoother::new(SmootherOptions {
                relin_position: cfg.relin_position,
                relin_angle: cfg.relin_angle,
                ..SmootherOptions::default()
            }),
            queue: MeasurementQueue::new(tolerance),
            sigmas,
            initial,
            use_gps: cfg.use_gps,
            latest_imu: None,
            imu_at_last_node: None,
            slots: Vec::new(),
            rejected: 0,
            degraded: false,
        }
    }

    /// Feeds the measurements sampled in one step. Unary samples are queued
    /// before any DVL sample so the node sees orientation taken at its own time.
    pub fn ingest(&mut self, batch: &[Measurement]) -> Vec<Result<NodeUpdate, EstimatorError>> {
        for m in batch.iter().filter(|m| m.kind() != SensorKind::Dvl) {
            self.on_measurement(*m);
        }
        batch
            .iter()
            .filter(|m| m.kind() == SensorKind::Dvl)
            .map(|m| self.on_dvl(m))
            .collect()
    }

    /// Queues an IMU, depth or GPS sample.
    pub fn on_measurement(&mut self, m: Measurement) {
        match m.payload {
            Payload::Dvl { .. } => {}
            Payload::Imu { orientation } => {
                self.latest_imu = Some(orientation);
                self.queue.push(m);
            }
            Payload::Gps { .. } if !self.use_gps => self.queue.reject(),
            _ => self.queue.push(m),
        }
    }

    /// Creates a node at the DVL sample time, links it to its predecessor,
    /// associates queued samples and updates the smoother.
    pub fn on_dvl(&mut self, m: &Measurement) -> Result<NodeUpdate, EstimatorError> {
        let Payload::Dvl { velocity } = m.payload else {
            return Err(EstimatorError::NotDvl(m.kind()));
        };
        let n = self.smoother.len();
        let node = if n == 0 {
            let i = self.smoother.add_node(m.t, self.initial)?;
            self.smoother.add_factor(Factor::Prior {
                node: i,
                mean: self.initial,
                sigma: self.sigmas.prior,
            })?;
            i
        } else {
            let prev = self.smoother.graph().nodes()[n - 1];
            if m.t.partial_cmp(&prev.t) != Some(std::cmp::Ordering::Greater) {
                self.rejected += 1;
                return Err(EstimatorError::OutOfOrder { t: m.t, last: prev.t });
            }
            let dt = m.t - prev.t;
            let translation = velocity.map(|v| v * dt);
            let rotation = match (self.latest_imu, self.imu_at_last_node) {
                (Some(a), Some(b)) => [0, 1, 2].map(|k| wrap_angle(a[k] - b[k])),
                _ => [0.0; 3],
            };
            let sigma = self.sigmas.odom_override.unwrap_or_else(|| {
                let t = self.sigmas.odom_translation_rate;
                let r = self.sigmas.odom_rotation;
                floor([t[0] * dt, t[1] * dt, t[2] * dt, r[0], r[1], r[2]])
            });
            let last = self.smoother.estimate(n - 1);
            let step = last.rotation() * nalgebra::Vector3::from(translation);
            let guess = Pose6::new(
                last.x + step.x,
                last.y + step.y,
                last.z + step.z,
                wrap_angle(last.roll + rotation[0]),
                wrap_angle(last.pitch + rotation[1]),
                wrap_angle(last.yaw + rotation[2]),
            );
            let i = self.smoother.add_node(m.t, guess)?;
            self.smoother.add_factor(Factor::DvlOdom {
                from: i - 1,
                to: i,
                translation,
                rotation,
                sigma,
            })?;
            i
        };
        self.imu_at_last_node = self.latest_imu;
        self.slots.push(BTreeMap::new());

        let nodes = self.smoother.graph().nodes();
        let window = NodeWindow {
            previous: node.checked_sub(1).map(|p| (p, nodes[p].t)),
            current: (node, m.t),
        };
        let assignments = self.queue.associate(window);
        let mut kept = Vec::with_capacity(assignments.len());
        for a in assignments {
            if self.attach(&a)? {
                kept.push(a);
            }
        }
        let report = self.smoother.update()?;
        self.degraded |= report.degraded;
        Ok(NodeUpdate {
            node,
            t: m.t,
            estimate: self.smoother.estimate(node),
            assignments: kept,
            report,
        })
    }

    /// Adds the factor for one assignment unless its node already holds a
    /// closer sample of the same kind. Returns whether it was kept.
    fn attach(&mut self, a: &Assignment) -> Result<bool, EstimatorError> {
        let kind = a.measurement.kind();
        let dist = a.offset.abs();
        if let Some(&(old, old_dist)) = self.slots[a.node].get(&kind) {
            if old_dist <= dist {
                self.queue.demote();
                return Ok(false);
            }
            self.smoother.remove_factor(old);
            self.queue.demote();
        }
        let s = &self.sigmas;
        let factor = match a.measurement.payload {
            Payload::Imu { orientation } => Factor::ImuOri {
                node: a.node,
                orientation,
                sigma: s.imu,
            },
            Payload::Depth { z } => Factor::Depth {
                node: a.node,
                z,
                sigma: s.depth,
            },
            Payload::Gps { x, y } => Factor::Gps {
                node: a.node,
                x,
                y,
                sigma: s.gps,
            },
            Payload::Dvl { .. } => unreachable!("DVL samples are never queued"),
        };
        let id = self.smoother.add_factor(factor)?;
        self.slots[a.node].insert(kind, (id, dist));
        Ok(true)
    }

    /// Latest node's smoothed pose and timestamp.
    pub fn current_estimate(&self) -> Option<(Pose6, f64)> {
        let n = self.smoother.len();
        (n > 0).then(|| (self.smoother.estimate(n - 1), self.smoother.graph().nodes()[n - 1].t))
    }

    /// Smoothed estimate of every node.
    pub fn trajectory(&self) -> Vec<PoseNode> {
        self.smoother
            .graph()
            .nodes()
            .iter()
            .map(|n| PoseNode {
                value: self.smoother.estimate(n.index),
                ..*n
            })
            .collect()
    }

    pub fn graph(&self) -> &FactorGraph {
        self.smoother.graph()
    }

    pub fn stats(&self) -> AssociationStats {
        self.queue.stats()
    }

    pub fn rejected_dvl(&self) -> u64 {
        self.rejected
    }

    /// Set once any update ran out of relinearization passes.
    pub fn degraded(&self) -> bool {
        self.degraded
    }

    /// Number of GPS factors currently in the graph.
    pub fn gps_factor_count(&self) -> usize {
        self.smoother.graph().factors().filter(|(_, f)| f.kind() == FactorKind::Gps).count()
    }
}
