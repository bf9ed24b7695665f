//! Incremental smoother over the pose chain.
//!
//! Each node keeps a linearization point and a pending correction. New
//! factors only invalidate the elimination from the oldest node they touch,
//! so an update re-eliminates a suffix of the chain and back-substitutes
//! until corrections stop changing. Nodes whose correction grows past a
//! threshold are relinearized, which invalidates the suffix from their
//! predecessor; the loop repeats until no node needs relinearization.

use nalgebra::Vector6;
use serde::Serialize;

use super::factor::Factor;
use super::graph::{retract, Elimination, FactorGraph, FactorId, GraphError, LinearBlocks};
use crate::geometry::Pose6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherOptions {
    /// Relinearize a node once its pending position correction exceeds this (m).
    pub relin_position: f64,
    /// Same for orientation (rad).
    pub relin_angle: f64,
    /// Back substitution below the invalidated suffix stops once corrections
    /// change by less than this.
    pub wildfire: f64,
    /// Relinearization passes per update before the result is flagged degraded.
    pub max_iterations: usize,
}

impl Default for SmootherOptions {
    fn default() -> Self {
        Self {
            relin_position: 1e-5,
            relin_angle: 1e-6,
            wildfire: 1e-12,
            max_iterations: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct UpdateReport {
    pub iterations: usize,
    pub relinearized: usize,
    /// Lowest node whose estimate changed.
    pub touched_from: usize,
    pub degraded: bool,
}

#[derive(Debug, Clone, Default)]
pub struct IncrementalSmoother {
    graph: FactorGraph,
    lin: Vec<Vector6<f64>>,
    delta: Vec<Vector6<f64>>,
    blocks: LinearBlocks,
    elim: Elimination,
    dirty_from: Option<usize>,
    opts: SmootherOptions,
}

impl IncrementalSmoother {
    pub fn new(opts: SmootherOptions) -> Self {
        Self {
            opts,
            ..Self::default()
        }
    }

    pub fn graph(&self) -> &FactorGraph {
        &self.graph
    }

    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }

    fn mark(&mut self, node: usize) {
        self.dirty_from = Some(self.dirty_from.map_or(node, |d| d.min(node)));
    }

    pub fn add_node(&mut self, t: f64, initial: Pose6) -> Result<usize, GraphError> {
        let i = self.graph.add_node(t, initial)?;
        self.lin.push(initial.to_vector());
        self.delta.push(Vector6::zeros());
        self.mark(i);
        Ok(i)
    }

    pub fn add_factor(&mut self, factor: Factor) -> Result<FactorId, GraphError> {
        let first = factor.nodes().0;
        let id = self.graph.add_factor(factor)?;
        self.mark(first);
        Ok(id)
    }

    pub fn remove_factor(&mut self, id: FactorId) -> Option<Factor> {
        let f = self.graph.remove_factor(id)?;
        self.mark(f.nodes().0);
        Some(f)
    }

    /// Current estimate of node `i`.
    pub fn estimate(&self, i: usize) -> Pose6 {
        Pose6::from_vector(&retract(&self.lin[i], &self.delta[i]))
    }

    pub fn estimates(&self) -> Vec<Pose6> {
        (0..self.len()).map(|i| self.estimate(i)).collect()
    }

    /// Brings the estimate up to date with every factor added so far.
    pub fn update(&mut self) -> Result<UpdateReport, GraphError> {
        let n = self.graph.len();
        let mut report = UpdateReport {
            touched_from: n,
            ..UpdateReport::default()
        };
        if !self.graph.has_prior() {
            return Err(GraphError::MissingPrior);
        }
        while let Some(from) = self.dirty_from {
            if report.iterations == self.opts.max_iterations {
                report.degraded = true;
                break;
            }
            self.dirty_from = None;
            report.iterations += 1;

            self.blocks.reset(n, from);
            self.graph.accumulate_from(&self.lin, from, &mut self.blocks);
            // The right-hand side of the correction system is the gradient at
            // the linearization point, so corrections stay relative to it.
            self.elim.eliminate_from(&self.blocks, from)?;
            let lowest = self.elim.back_substitute(&self.blocks, &mut self.delta, from, self.opts.wildfire);
            report.touched_from = report.touched_from.min(lowest);

            for i in lowest..n {
                let d = &self.delta[i];
                let pos = d.fixed_rows::<3>(0).amax();
                let ang = d.fixed_rows::<3>(3).amax();
                if pos > self.opts.relin_position || ang > self.opts.relin_angle {
                    self.lin[i] = retract(&self.lin[i], d);
                    self.delta[i] = Vector6::zeros();
                    report.relinearized += 1;
                    self.mark(i.saturating_sub(1));
                }
            }
        }
        for i in report.touched_from..n {
            let v = retract(&self.lin[i], &self.delta[i]);
            self.graph.set_value(i, &v);
        }
        Ok(report)
    }
}
