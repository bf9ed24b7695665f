//! Pose chain factor graph and its batch Gauss-Newton solver.
//!
//! Odometry only links consecutive nodes, so the normal equations are block
//! tridiagonal with 6×6 blocks. They are solved by block forward
//! elimination followed by back substitution, which is linear in the number
//! of nodes. The incremental smoother reuses the same primitives.

use nalgebra::{Cholesky, Matrix6, Vector6, U6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::factor::{Factor, FactorKind};
use crate::geometry::{wrap_angle, Pose6};

pub type FactorId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node timestamp {t} is not after the previous node at {last}")]
    NonIncreasingTimestamp { t: f64, last: f64 },
    #[error("factor references unknown node {0}")]
    UnknownNode(usize),
    #[error("odometry must connect consecutive nodes, got ({from}, {to})")]
    NonConsecutiveOdometry { from: usize, to: usize },
    #[error("node {0} already has an incoming odometry factor")]
    DuplicateOdometry(usize),
    #[error("graph has no prior factor")]
    MissingPrior,
    #[error("information matrix is not positive definite at node {0}")]
    Singular(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseNode {
    pub index: usize,
    pub t: f64,
    pub value: Pose6,
}

#[derive(Debug, Clone, Default)]
pub struct FactorGraph {
    nodes: Vec<PoseNode>,
    factors: Vec<Option<Factor>>,
    unary: Vec<Vec<FactorId>>,
    odom_into: Vec<Option<FactorId>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchOptions {
    pub max_iterations: usize,
    /// Converged once the largest step component falls below this.
    pub step_tolerance: f64,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            step_tolerance: 1e-11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeReport {
    pub iterations: usize,
    /// Total squared whitened residual before the first and after each iteration.
    pub error_history: Vec<f64>,
    pub converged: bool,
    /// Set when the iteration budget ran out; the best iterate is kept.
    pub degraded: bool,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[PoseNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> Option<&PoseNode> {
        self.nodes.get(i)
    }

    pub fn add_node(&mut self, t: f64, value: Pose6) -> Result<usize, GraphError> {
        if let Some(last) = self.nodes.last() {
            if t.partial_cmp(&last.t) != Some(std::cmp::Ordering::Greater) {
                return Err(GraphError::NonIncreasingTimestamp { t, last: last.t });
            }
        }
        let index = self.nodes.len();
        self.nodes.push(PoseNode { index, t, value });
        self.unary.push(Vec::new());
        self.odom_into.push(None);
        Ok(index)
    }

    pub fn add_factor(&mut self, factor: Factor) -> Result<FactorId, GraphError> {
        let id = self.factors.len();
        match factor.nodes() {
            (from, Some(to)) => {
                if to >= self.nodes.len() {
                    return Err(GraphError::UnknownNode(to));
                }
                if to == 0 || from + 1 != to {
                    return Err(GraphError::NonConsecutiveOdometry { from, to });
                }
                if self.odom_into[to].is_some() {
                    return Err(GraphError::DuplicateOdometry(to));
                }
                self.odom_into[to] = Some(id);
            }
            (node, None) => {
                if node >= self.nodes.len() {
                    return Err(GraphError::UnknownNode(node));
                }
                self.unary[node].push(id);
            }
        }
        self.factors.push(Some(factor));
        Ok(id)
    }

    /// Removes a unary factor. Odometry factors are structural and stay.
    pub fn remove_factor(&mut self, id: FactorId) -> Option<Factor> {
        let (node, second) = self.factors.get(id)?.as_ref()?.nodes();
        if second.is_some() {
            return None;
        }
        self.unary[node].retain(|&f| f != id);
        self.factors[id].take()
    }

    pub fn factor(&self, id: FactorId) -> Option<&Factor> {
        self.factors.get(id).and_then(Option::as_ref)
    }

    pub fn factors(&self) -> impl Iterator<Item = (FactorId, &Factor)> {
        self.factors.iter().enumerate().filter_map(|(i, f)| f.as_ref().map(|f| (i, f)))
    }

    pub fn unary_factors(&self, node: usize) -> impl Iterator<Item = &Factor> {
        self.unary[node].iter().filter_map(|&id| self.factor(id))
    }

    pub fn odometry_into(&self, node: usize) -> Option<&Factor> {
        self.odom_into.get(node).copied().flatten().and_then(|id| self.factor(id))
    }

    pub fn has_prior(&self) -> bool {
        self.factors().any(|(_, f)| f.kind() == FactorKind::Prior)
    }

    pub fn values(&self) -> Vec<Vector6<f64>> {
        self.nodes.iter().map(|n| n.value.to_vector()).collect()
    }

    pub(crate) fn set_value(&mut self, i: usize, v: &Vector6<f64>) {
        self.nodes[i].value = Pose6::from_vector(v);
    }

    /// Sum of squared whitened residuals over every live factor.
    pub fn total_error(&self, values: &[Vector6<f64>]) -> f64 {
        self.factors()
            .map(|(_, f)| {
                let (a, b) = f.nodes();
                f.error(&values[a], b.map(|b| &values[b]))
            })
            .sum()
    }

    /// Adds the contributions of every factor touching nodes `>= from` into
    /// `blocks`, which must already be cleared from `from` onward.
    pub(crate) fn accumulate_from(&self, values: &[Vector6<f64>], from: usize, blocks: &mut LinearBlocks) {
        for i in from..self.nodes.len() {
            for f in self.unary_factors(i) {
                let lin = f.linearize(&values[i], None);
                let ja = lin.j_first;
                blocks.d[i] += ja.transpose() * ja;
                blocks.g[i] += ja.transpose() * lin.residual;
            }
            if let Some(f) = self.odometry_into(i) {
                let lin = f.linearize(&values[i - 1], Some(&values[i]));
                let (ja, jb) = (lin.j_first, lin.j_second);
                if i > from {
                    blocks.d[i - 1] += ja.transpose() * ja;
                    blocks.g[i - 1] += ja.transpose() * lin.residual;
                }
                blocks.d[i] += jb.transpose() * jb;
                blocks.g[i] += jb.transpose() * lin.residual;
                blocks.o[i] = ja.transpose() * jb;
            }
        }
    }

    /// Batch Gauss-Newton over the whole graph, starting from the stored node
    /// values. Steps are halved when they would increase the error.
    pub fn optimize(&mut self, opts: &BatchOptions) -> Result<OptimizeReport, GraphError> {
        if !self.has_prior() {
            return Err(GraphError::MissingPrior);
        }
        let n = self.nodes.len();
        let mut values = self.values();
        let mut error = self.total_error(&values);
        let mut report = OptimizeReport {
            iterations: 0,
            error_history: vec![error],
            converged: false,
            degraded: false,
        };
        let mut blocks = LinearBlocks::default();
        let mut elim = Elimination::default();
        while report.iterations < opts.max_iterations {
            blocks.reset(n, 0);
            self.accumulate_from(&values, 0, &mut blocks);
            elim.eliminate_from(&blocks, 0)?;
            let mut delta = vec![Vector6::zeros(); n];
            elim.back_substitute(&blocks, &mut delta, 0, 0.0);
            report.iterations += 1;

            let step_max = delta.iter().map(|d| d.amax()).fold(0.0, f64::max);
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..30 {
                let trial: Vec<_> = values.iter().zip(&delta).map(|(v, d)| retract(v, &(d * alpha))).collect();
                let e = self.total_error(&trial);
                if e <= error {
                    accepted = Some((trial, e));
                    break;
                }
                alpha *= 0.5;
            }
            match accepted {
                Some((trial, e)) => {
                    values = trial;
                    error = e;
                    report.error_history.push(e);
                }
                None => {
                    // No descent left along the GN direction: at the optimum
                    // up to round-off.
                    report.error_history.push(error);
                    report.converged = true;
                    break;
                }
            }
            if step_max * alpha < opts.step_tolerance {
                report.converged = true;
                break;
            }
        }
        report.degraded = !report.converged;
        for (i, v) in values.iter().enumerate() {
            self.set_value(i, v);
        }
        Ok(report)
    }
}

/// Applies a step to a packed pose, wrapping the angles.
pub(crate) fn retract(v: &Vector6<f64>, d: &Vector6<f64>) -> Vector6<f64> {
    let mut out = v + d;
    for k in 3..6 {
        out[k] = wrap_angle(out[k]);
    }
    out
}

/// Block tridiagonal normal equations: `d[i]` diagonal blocks, `o[i]` the
/// coupling `H[i-1, i]` (zero for node 0), `g[i]` the gradient.
#[derive(Debug, Clone, Default)]
pub(crate) struct LinearBlocks {
    pub d: Vec<Matrix6<f64>>,
    pub o: Vec<Matrix6<f64>>,
    pub g: Vec<Vector6<f64>>,
}

impl LinearBlocks {
    /// Resizes to `n` nodes and zeroes every block from `from` onward.
    pub fn reset(&mut self, n: usize, from: usize) {
        self.d.resize(n, Matrix6::zeros());
        self.o.resize(n, Matrix6::zeros());
        self.g.resize(n, Vector6::zeros());
        for i in from..n {
            self.d[i] = Matrix6::zeros();
            self.o[i] = Matrix6::zeros();
            self.g[i] = Vector6::zeros();
        }
    }
}

/// Forward-eliminated chain: Cholesky factors of the Schur complements and
/// the reduced right-hand sides.
#[derive(Debug, Clone, Default)]
pub(crate) struct Elimination {
    chol: Vec<Cholesky<f64, U6>>,
    c: Vec<Vector6<f64>>,
}

impl Elimination {
    pub fn eliminate_from(&mut self, blocks: &LinearBlocks, from: usize) -> Result<(), GraphError> {
        let n = blocks.d.len();
        self.chol.truncate(from);
        self.c.truncate(from);
        for i in from..n {
            let mut s = blocks.d[i];
            let mut c = -blocks.g[i];
            if i > 0 {
                let x = self.chol[i - 1].solve(&blocks.o[i]);
                s -= blocks.o[i].transpose() * x;
                c -= x.transpose() * self.c[i - 1];
            }
            let s = 0.5 * (s + s.transpose());
            let chol = Cholesky::new(s).ok_or(GraphError::Singular(i))?;
            self.chol.push(chol);
            self.c.push(c);
        }
        Ok(())
    }

    /// Back substitution into `delta`. Below `dirty_from` the sweep stops once
    /// a node's solution moves by less than `stop_below`; returns the lowest
    /// node written.
    pub fn back_substitute(
        &self,
        blocks: &LinearBlocks,
        delta: &mut [Vector6<f64>],
        dirty_from: usize,
        stop_below: f64,
    ) -> usize {
        let n = self.c.len();
        if n == 0 {
            return 0;
        }
        delta[n - 1] = self.chol[n - 1].solve(&self.c[n - 1]);
        let mut lowest = n - 1;
        for i in (0..n - 1).rev() {
            let rhs = self.c[i] - blocks.o[i + 1] * delta[i + 1];
            let next = self.chol[i].solve(&rhs);
            let change = (next - delta[i]).amax();
            delta[i] = next;
            lowest = i;
            if i < dirty_from && change < stop_below {
                break;
            }
        }
        lowest
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior(node: usize, mean: Pose6) -> Factor {
        Factor::Prior {
            node,
            mean,
            sigma: [0.1; 6],
        }
    }

    #[test]
    fn prior_only_returns_prior() {
        let mut g = FactorGraph::new();
        let mean = Pose6::new(1.0, 2.0, 3.0, 0.1, 0.2, 0.3);
        g.add_node(0.0, Pose6::default()).unwrap();
        g.add_factor(prior(0, mean)).unwrap();
        let rep = g.optimize(&BatchOptions::default()).unwrap();
        assert!(rep.converged);
        assert!((g.nodes()[0].value.to_vector() - mean.to_vector()).amax() < 1e-12);
        assert!(*rep.error_history.last().unwrap() < 1e-20);
    }

    #[test]
    fn single_odometry_composes_exactly() {
        let mut g = FactorGraph::new();
        let start = Pose6::new(1.0, 1.0, 0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2);
        g.add_node(0.0, start).unwrap();
        g.add_node(0.25, Pose6::default()).unwrap();
        g.add_factor(prior(0, start)).unwrap();
        g.add_factor(Factor::DvlOdom {
            from: 0,
            to: 1,
            translation: [0.5, 0.0, 0.0],
            rotation: [0.0, 0.0, 0.1],
            sigma: [0.01; 6],
        })
        .unwrap();
        let rep = g.optimize(&BatchOptions::default()).unwrap();
        let v = g.nodes()[1].value;
        assert!((v.x - 1.0).abs() < 1e-9 && (v.y - 1.5).abs() < 1e-9, "{v:?}");
        assert!((v.yaw - (std::f64::consts::FRAC_PI_2 + 0.1)).abs() < 1e-9);
        assert!(*rep.error_history.last().unwrap() < 1e-16);
    }

    #[test]
    fn structural_invariants_enforced() {
        let mut g = FactorGraph::new();
        g.add_node(1.0, Pose6::default()).unwrap();
        assert!(matches!(g.add_node(1.0, Pose6::default()), Err(GraphError::NonIncreasingTimestamp { .. })));
        g.add_node(2.0, Pose6::default()).unwrap();
        g.add_node(3.0, Pose6::default()).unwrap();
        let odo = |from, to| Factor::DvlOdom {
            from,
            to,
            translation: [0.0; 3],
            rotation: [0.0; 3],
            sigma: [1.0; 6],
        };
        assert_eq!(g.add_factor(odo(0, 2)), Err(GraphError::NonConsecutiveOdometry { from: 0, to: 2 }));
        g.add_factor(odo(0, 1)).unwrap();
        assert_eq!(g.add_factor(odo(0, 1)), Err(GraphError::DuplicateOdometry(1)));
        assert_eq!(
            g.add_factor(Factor::Depth { node: 9, z: 0.0, sigma: 1.0 }),
            Err(GraphError::UnknownNode(9))
        );
        assert_eq!(g.optimize(&BatchOptions::default()), Err(GraphError::MissingPrior));
    }

    #[test]
    fn depth_and_prior_give_weighted_mean() {
        let mut g = FactorGraph::new();
        g.add_node(0.0, Pose6::default()).unwrap();
        g.add_factor(Factor::Prior {
            node: 0,
            mean: Pose6::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0),
            sigma: [0.1, 0.1, 0.2, 0.1, 0.1, 0.1],
        })
        .unwrap();
        g.add_factor(Factor::Depth { node: 0, z: 2.0, sigma: 0.1 }).unwrap();
        g.optimize(&BatchOptions::default()).unwrap();
        // (1/0.04 * 1 + 1/0.01 * 2) / (1/0.04 + 1/0.01) = 1.8
        assert!((g.nodes()[0].value.z - 1.8).abs() < 1e-12);
    }

    #[test]
    fn removed_factor_no_longer_counts() {
        let mut g = FactorGraph::new();
        g.add_node(0.0, Pose6::default()).unwrap();
        g.add_factor(prior(0, Pose6::default())).unwrap();
        let id = g.add_factor(Factor::Depth { node: 0, z: 2.0, sigma: 0.1 }).unwrap();
        assert!(g.remove_factor(id).is_some());
        assert!(g.remove_factor(id).is_none());
        g.optimize(&BatchOptions::default()).unwrap();
        assert!(g.nodes()[0].value.z.abs() < 1e-12);
    }
}
