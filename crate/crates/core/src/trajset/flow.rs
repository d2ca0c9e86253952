//! Flow decomposition on the time-unrolled state graph of a policy.

use super::{c4_compress, WeightedTrajectory, WeightedTrajectorySet};
use crate::momdp::{trajectory_return, Momdp, Policy, Trajectory};
use crate::Scalar;

/// Edge flows at or below this are treated as exhausted.
pub const FLOW_ZERO: f64 = 1e-12;

/// Layers `0..=H` of reachable states plus a sink behind layer `H`.
///
/// `edges[t][s]` lists `(s', flow)` for the edges from `x^t_s` to `x^{t+1}_{s'}`
/// (ascending `s'`); `sink[s]` is the flow on the edge from `x^H_s` to the sink.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGraph<T> {
    source: usize,
    /// Action taken at `(t, s)`; only meaningful for vertices in layer `t`.
    actions: Vec<Vec<usize>>,
    edges: Vec<Vec<Vec<(usize, T)>>>,
    sink: Vec<T>,
}

/// Builds the layer graph and the unit flow induced by `policy`, by forward
/// propagation of state occupancy.
pub fn build_layer_graph<T: Scalar>(mdp: &Momdp<T>, policy: &Policy) -> LayerGraph<T> {
    let n = mdp.num_states();
    let horizon = mdp.horizon();
    let source = mdp.initial_state();
    let mut mass = vec![T::zero(); n];
    mass[source] = T::one();
    let mut edges = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut layer = vec![Vec::new(); n];
        let mut next_mass = vec![T::zero(); n];
        for s in 0..n {
            if mass[s] <= T::zero() {
                continue;
            }
            let o = mdp.outcome(s, policy.action(t, s)).expect("policy action is available");
            for &(t2, p) in &o.next {
                let f = p * mass[s];
                layer[s].push((t2, f));
                next_mass[t2] = next_mass[t2] + f;
            }
        }
        edges.push(layer);
        mass = next_mass;
    }
    LayerGraph { source, actions: policy.assignment().to_vec(), edges, sink: mass }
}

impl<T: Scalar> LayerGraph<T> {
    pub fn horizon(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().flatten().map(Vec::len).sum::<usize>() + self.sink.iter().filter(|f| **f > T::zero()).count()
    }

    /// States in layer `t` (vertices with positive inflow, or the source at `t = 0`).
    pub fn layer(&self, t: usize) -> Vec<usize> {
        (0..self.sink.len()).filter(|&s| self.inflow(t, s) > T::zero() || (t == 0 && s == self.source)).collect()
    }

    fn inflow(&self, t: usize, s: usize) -> T {
        if t == 0 {
            return if s == self.source { self.source_outflow() } else { T::zero() };
        }
        self.edges[t - 1].iter().flatten().filter(|(to, _)| *to == s).map(|&(_, f)| f).sum()
    }

    fn outflow(&self, t: usize, s: usize) -> T {
        if t == self.horizon() {
            self.sink[s]
        } else {
            self.edges[t][s].iter().map(|&(_, f)| f).sum()
        }
    }

    pub fn source_outflow(&self) -> T {
        self.outflow(0, self.source)
    }

    /// Largest `|inflow - outflow|` over internal vertices (layers `1..=H`).
    pub fn conservation_residual(&self) -> T {
        let mut worst = T::zero();
        for t in 1..=self.horizon() {
            for s in 0..self.sink.len() {
                worst = worst.max((self.inflow(t, s) - self.outflow(t, s)).abs());
            }
        }
        worst
    }

    /// Largest remaining flow on any edge.
    pub fn max_flow(&self) -> T {
        self.edges.iter().flatten().flatten().map(|&(_, f)| f).chain(self.sink.iter().copied()).fold(T::zero(), T::max)
    }

    /// Greedy successor: lowest index above the zero threshold, otherwise the
    /// largest positive flow (guards against rounding dead ends).
    fn pick(candidates: &[(usize, T)], zero: T) -> Option<usize> {
        if let Some(i) = candidates.iter().position(|&(_, f)| f > zero) {
            return Some(i);
        }
        let mut best: Option<(usize, T)> = None;
        for (i, &(_, f)) in candidates.iter().enumerate() {
            if f > T::zero() && best.is_none_or(|(_, b)| f > b) {
                best = Some((i, f));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Extracts one source-to-sink path and subtracts its bottleneck flow.
    fn extract_path(&mut self, zero: T) -> Option<(Trajectory, T)> {
        let horizon = self.horizon();
        let mut states = vec![self.source];
        let mut picks = Vec::with_capacity(horizon);
        let mut bottleneck = T::infinity();
        for t in 0..horizon {
            let s = *states.last().expect("path has a start");
            let i = Self::pick(&self.edges[t][s], zero)?;
            let (next, f) = self.edges[t][s][i];
            bottleneck = bottleneck.min(f);
            picks.push(i);
            states.push(next);
        }
        let last = *states.last().expect("path has an end");
        if self.sink[last] <= T::zero() {
            return None;
        }
        bottleneck = bottleneck.min(self.sink[last]);
        for (t, &i) in picks.iter().enumerate() {
            let e = &mut self.edges[t][states[t]][i].1;
            *e = if *e == bottleneck { T::zero() } else { (*e - bottleneck).max(T::zero()) };
        }
        let e = &mut self.sink[last];
        *e = if *e == bottleneck { T::zero() } else { (*e - bottleneck).max(T::zero()) };
        let actions = (0..horizon).map(|t| self.actions[t][states[t]]).collect();
        Some((Trajectory::new(states, actions), bottleneck))
    }

    /// Repeatedly extracts paths until the source has no flow left above
    /// [`FLOW_ZERO`]. Consumes the flow.
    pub fn decompose(&mut self) -> Vec<(Trajectory, T)> {
        let zero = T::tol(FLOW_ZERO);
        let mut paths = Vec::new();
        while self.edges.first().is_some_and(|l| l[self.source].iter().any(|&(_, f)| f > zero)) {
            match self.extract_path(zero) {
                Some(p) => paths.push(p),
                None => break,
            }
        }
        paths
    }
}

/// Weighted trajectory set from the path decomposition of the policy's flow,
/// optionally compressed to at most `k + 1` items.
///
/// Path weights are renormalized to sum to one, absorbing flow dropped below
/// [`FLOW_ZERO`].
pub fn flow_decompose<T: Scalar>(mdp: &Momdp<T>, policy: &Policy, compress: bool) -> WeightedTrajectorySet<T> {
    let mut graph = build_layer_graph(mdp, policy);
    let paths = graph.decompose();
    let total: T = paths.iter().map(|(_, f)| *f).sum();
    let mut items: Vec<WeightedTrajectory<T>> = paths
        .into_iter()
        .map(|(trajectory, f)| {
            let ret = trajectory_return(mdp, &trajectory).expect("extracted path is a valid trajectory");
            WeightedTrajectory { weight: f / total, trajectory, ret }
        })
        .collect();
    if compress {
        let points: Vec<Vec<T>> = items.iter().map(|i| i.ret.0.clone()).collect();
        let weights: Vec<T> = items.iter().map(|i| i.weight).collect();
        let (kept, new_weights) = c4_compress(&points, &weights).expect("path weights form a simplex");
        items = kept
            .into_iter()
            .zip(new_weights)
            .map(|(i, weight)| WeightedTrajectory { weight, ..items[i].clone() })
            .collect();
    }
    WeightedTrajectorySet { items, policy_digest: policy.digest() }
}
