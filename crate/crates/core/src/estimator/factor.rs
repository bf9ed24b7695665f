//! Factor types and their whitened linearizations.
//!
//! Node values are packed as `[x, y, z, roll, pitch, yaw]`. Angle residuals
//! are wrapped to `(-π, π]`.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::geometry::{rotation_rpy, rotation_rpy_partials, wrap_angle, Pose6};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Prior,
    DvlOdom,
    ImuOri,
    Depth,
    Gps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Factor {
    /// Full-pose prior.
    Prior { node: usize, mean: Pose6, sigma: [f64; 6] },
    /// Relative motion between consecutive nodes. `translation` is expressed
    /// in the body frame of `from`; `rotation` is the roll/pitch/yaw change.
    DvlOdom {
        from: usize,
        to: usize,
        translation: [f64; 3],
        rotation: [f64; 3],
        sigma: [f64; 6],
    },
    ImuOri { node: usize, orientation: [f64; 3], sigma: [f64; 3] },
    Depth { node: usize, z: f64, sigma: f64 },
    /// Horizontal position fix.
    Gps { node: usize, x: f64, y: f64, sigma: [f64; 2] },
}

/// Whitened residual and Jacobians. Rows past `dim` are zero.
#[derive(Debug, Clone, Copy)]
pub struct Linearization {
    pub dim: usize,
    pub residual: Vector6<f64>,
    /// Jacobian with respect to the first (or only) node.
    pub j_first: Matrix6<f64>,
    /// Jacobian with respect to the second node of a binary factor.
    pub j_second: Matrix6<f64>,
}

impl Factor {
    pub fn kind(&self) -> FactorKind {
        match self {
            Factor::Prior { .. } => FactorKind::Prior,
            Factor::DvlOdom { .. } => FactorKind::DvlOdom,
            Factor::ImuOri { .. } => FactorKind::ImuOri,
            Factor::Depth { .. } => FactorKind::Depth,
            Factor::Gps { .. } => FactorKind::Gps,
        }
    }

    /// `(first, second)` connected nodes; `second` only for odometry.
    pub fn nodes(&self) -> (usize, Option<usize>) {
        match *self {
            Factor::Prior { node, .. }
            | Factor::ImuOri { node, .. }
            | Factor::Depth { node, .. }
            | Factor::Gps { node, .. } => (node, None),
            Factor::DvlOdom { from, to, .. } => (from, Some(to)),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Factor::Prior { .. } | Factor::DvlOdom { .. } => 6,
            Factor::ImuOri { .. } => 3,
            Factor::Depth { .. } => 1,
            Factor::Gps { .. } => 2,
        }
    }

    pub fn sigmas(&self) -> Vec<f64> {
        match self {
            Factor::Prior { sigma, .. } | Factor::DvlOdom { sigma, .. } => sigma.to_vec(),
            Factor::ImuOri { sigma, .. } => sigma.to_vec(),
            Factor::Depth { sigma, .. } => vec![*sigma],
            Factor::Gps { sigma, .. } => sigma.to_vec(),
        }
    }

    /// Linearizes at `first` (and `second` for odometry).
    pub fn linearize(&self, first: &Vector6<f64>, second: Option<&Vector6<f64>>) -> Linearization {
        let mut r = Vector6::zeros();
        let mut ja = Matrix6::zeros();
        let mut jb = Matrix6::zeros();
        let dim = self.dim();
        match self {
            Factor::Prior { mean, .. } => {
                let m = mean.to_vector();
                for k in 0..3 {
                    r[k] = first[k] - m[k];
                    r[k + 3] = wrap_angle(first[k + 3] - m[k + 3]);
                }
                ja = Matrix6::identity();
            }
            Factor::DvlOdom { translation, rotation, .. } => {
                let to = second.expect("odometry factor needs both nodes");
                let rot = rotation_rpy(first[3], first[4], first[5]);
                let dp = Vector3::new(to[0] - first[0], to[1] - first[1], to[2] - first[2]);
                let rt = rot.transpose();
                let pred = rt * dp;
                for k in 0..3 {
                    r[k] = pred[k] - translation[k];
                    r[k + 3] = wrap_angle(to[k + 3] - first[k + 3] - rotation[k]);
                }
                let partials = rotation_rpy_partials(first[3], first[4], first[5]);
                let mut d_angles = Matrix3::zeros();
                for (c, p) in partials.iter().enumerate() {
                    d_angles.set_column(c, &(p.transpose() * dp));
                }
                ja.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-rt));
                ja.fixed_view_mut::<3, 3>(0, 3).copy_from(&d_angles);
                ja.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-Matrix3::identity()));
                jb.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
                jb.fixed_view_mut::<3, 3>(3, 3).copy_from(&Matrix3::identity());
            }
            Factor::ImuOri { orientation, .. } => {
                for k in 0..3 {
                    r[k] = wrap_angle(first[k + 3] - orientation[k]);
                    ja[(k, k + 3)] = 1.0;
                }
            }
            Factor::Depth { z, .. } => {
                r[0] = first[2] - z;
                ja[(0, 2)] = 1.0;
            }
            Factor::Gps { x, y, .. } => {
                r[0] = first[0] - x;
                r[1] = first[1] - y;
                ja[(0, 0)] = 1.0;
                ja[(1, 1)] = 1.0;
            }
        }
        for (row, s) in self.sigmas().into_iter().enumerate() {
            let w = 1.0 / s;
            r[row] *= w;
            for c in 0..6 {
                ja[(row, c)] *= w;
                jb[(row, c)] *= w;
            }
        }
        Linearization {
            dim,
            residual: r,
            j_first: ja,
            j_second: jb,
        }
    }

    /// Sum of squared whitened residuals of this factor.
    pub fn error(&self, first: &Vector6<f64>, second: Option<&Vector6<f64>>) -> f64 {
        self.linearize(first, second).residual.norm_squared()
    }
}
