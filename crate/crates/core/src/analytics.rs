//! Structure of configurations and trajectories: agreement and disagreement
//! clusters, traces, threshold pairs, spin chains, triple points and audits.
//!
//! Cluster analyses take an optional mask. With a mask (typically the
//! certified-fixated vertices) only masked vertices and the edges between
//! them are examined; without one the report is flagged as pre-fixation.

use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use crate::domain::Domain;
use crate::engine::{
    run_discrete_lockstep, run_in, BoundaryCondition, DiscreteField, DiscreteFlip, DiscreteTrajectory, FlipRecord,
    Landscape, Mode, RunSpec, Trajectory,
};
use crate::error::{Error, Result};
use crate::estimators::{MeanEstimate, MIN_REPLICAS};
use crate::exactness::Backward;
use crate::randomness::{initial_uniform, tie_break, SeedManifest};
use crate::scalar::Scalar;
use crate::topology::{Ball, VertexId};

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub members: Vec<VertexId>,
    /// Members adjacent to the outer layer of the window.
    pub boundary_contacts: usize,
    /// Largest number of cluster edges at one member.
    pub max_degree: usize,
    /// Whether the cluster is a simple path. Subgraphs of a tree are
    /// acyclic, so this is `max_degree <= 2`.
    pub is_simple_path: bool,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ClusterReport {
    pub clusters: Vec<Cluster>,
    /// True when computed on a raw snapshot rather than a certified-fixated set.
    pub pre_fixation: bool,
}

impl ClusterReport {
    pub const CSV_HEADER: &'static str = "cluster,size,boundary_contacts,max_degree,is_simple_path,first_member";

    pub fn csv_rows(&self) -> Vec<String> {
        self.clusters
            .iter()
            .enumerate()
            .map(|(k, c)| {
                format!(
                    "{},{},{},{},{},{}",
                    k,
                    c.size(),
                    c.boundary_contacts,
                    c.max_degree,
                    c.is_simple_path,
                    c.members.first().map(|v| v.to_string()).unwrap_or_default()
                )
            })
            .collect()
    }

    /// Number of clusters with size in `[2^j, 2^{j+1})`, for `j = 0, 1, ...`.
    pub fn dyadic_histogram(&self) -> Vec<usize> {
        let mut h = Vec::new();
        for c in &self.clusters {
            let j = usize::BITS as usize - 1 - c.size().leading_zeros() as usize;
            if h.len() <= j {
                h.resize(j + 1, 0);
            }
            h[j] += 1;
        }
        h
    }

    /// Empirical size quantile (`0 <= q <= 1`).
    pub fn size_quantile(&self, q: f64) -> Option<usize> {
        let mut sizes: Vec<usize> = self.clusters.iter().map(Cluster::size).collect();
        if sizes.is_empty() {
            return None;
        }
        sizes.sort_unstable();
        let k = ((q * sizes.len() as f64).ceil() as usize).clamp(1, sizes.len());
        Some(sizes[k - 1])
    }

    pub fn simple_path_fraction(&self) -> Option<f64> {
        (!self.clusters.is_empty())
            .then(|| self.clusters.iter().filter(|c| c.is_simple_path).count() as f64 / self.clusters.len() as f64)
    }
}

/// Components of the graph on included inner vertices whose edges satisfy
/// `linked`. With `edges_only`, vertices without any edge are skipped.
fn components<I, L>(domain: &Domain, include: I, linked: L, edges_only: bool) -> Vec<Cluster>
where
    I: Fn(u32) -> bool,
    L: Fn(u32, u32) -> bool,
{
    let n = domain.inner_len() as u32;
    let mut seen = vec![false; n as usize];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if seen[start as usize] || !include(start) {
            continue;
        }
        seen[start as usize] = true;
        queue.push_back(start);
        let mut members = Vec::new();
        let mut contacts = 0;
        let mut max_degree = 0;
        while let Some(v) = queue.pop_front() {
            members.push(domain.id(v));
            if domain.is_boundary(v) {
                contacts += 1;
            }
            let mut degree = 0;
            for w in domain.neighbors(v) {
                if w < n && include(w) && linked(v, w) {
                    degree += 1;
                    if !seen[w as usize] {
                        seen[w as usize] = true;
                        queue.push_back(w);
                    }
                }
            }
            max_degree = max_degree.max(degree);
        }
        if edges_only && max_degree == 0 {
            continue;
        }
        out.push(Cluster { members, boundary_contacts: contacts, max_degree, is_simple_path: max_degree <= 2 });
    }
    out
}

fn masked(mask: Option<&[bool]>) -> impl Fn(u32) -> bool + '_ {
    move |i| mask.map_or(true, |m| m[i as usize])
}

/// Maximal connected sets of equal-origin spins.
pub fn agreement_clusters(domain: &Domain, state: &[u32], mask: Option<&[bool]>) -> ClusterReport {
    let clusters = components(domain, masked(mask), |a, b| state[a as usize] == state[b as usize], false);
    ClusterReport { clusters, pre_fixation: mask.is_none() }
}

/// Same as [`agreement_clusters`], comparing values instead of origins.
pub fn agreement_clusters_by_value<S: Scalar>(land: &Landscape<S>, state: &[u32], mask: Option<&[bool]>) -> ClusterReport {
    let clusters = components(
        &land.domain,
        masked(mask),
        |a, b| land.value(state[a as usize]) == land.value(state[b as usize]),
        false,
    );
    ClusterReport { clusters, pre_fixation: mask.is_none() }
}

/// Components of the disagreement graph (edges joining different spins).
/// Vertices with no disagreement edge are left out.
pub fn disagreement_components(domain: &Domain, state: &[u32], mask: Option<&[bool]>) -> ClusterReport {
    let clusters = components(domain, masked(mask), |a, b| state[a as usize] != state[b as usize], true);
    ClusterReport { clusters, pre_fixation: mask.is_none() }
}

/// Among included vertices whose three neighbors are included too, the
/// number checked and the number sharing their spin with some neighbor.
pub fn neighbor_agreement(domain: &Domain, state: &[u32], mask: Option<&[bool]>) -> (usize, usize) {
    let include = masked(mask);
    let n = domain.inner_len() as u32;
    let mut checked = 0;
    let mut agreeing = 0;
    for v in 0..n {
        let nb = domain.neighbors(v);
        if !include(v) || nb.iter().any(|&w| w >= n || !include(w)) {
            continue;
        }
        checked += 1;
        if nb.iter().any(|&w| state[w as usize] == state[v as usize]) {
            agreeing += 1;
        }
    }
    (checked, agreeing)
}

/// Vertices that carried the initial value of `source` at some time.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceSet {
    pub source: VertexId,
    pub horizon: f64,
    pub members: BTreeSet<VertexId>,
    /// The trace reached a vertex next to the outer layer, so the window may
    /// be too small for it.
    pub touches_boundary: bool,
}

/// Trace of `x` read off a median-mode flip log.
pub fn trace<S: Scalar>(traj: &Trajectory<S>, x: &VertexId) -> Result<TraceSet> {
    if !traj.flips_recorded {
        return Err(Error::InvalidArgument("trace needs a flip log".into()));
    }
    let d = traj.domain();
    let h = d
        .index_of(x)
        .filter(|&i| d.is_inner(i))
        .ok_or_else(|| Error::InvalidArgument(format!("{x} is not inside the window")))?;
    let mut idx: BTreeSet<u32> = BTreeSet::new();
    if traj.initial[h as usize] == h {
        idx.insert(h);
    }
    idx.extend(traj.flips.iter().filter(|f| f.new == h).map(|f| f.vertex));
    Ok(TraceSet {
        source: *x,
        horizon: traj.horizon.to_f64_lossy(),
        touches_boundary: idx.iter().any(|&i| d.is_boundary(i)),
        members: idx.into_iter().map(|i| d.id(i)).collect(),
    })
}

/// Two discrete runs under identical clocks and their pathwise symmetric
/// difference: the set of vertices where they differ at some time.
#[derive(Clone, Debug)]
pub struct CoupledPair<S> {
    pub first: DiscreteTrajectory<S>,
    pub second: DiscreteTrajectory<S>,
    pub difference: BTreeSet<VertexId>,
    pub touches_boundary: bool,
}

fn coupled_pair<S: Scalar>(
    clocks: &SeedManifest,
    domain: Arc<Domain>,
    a: &[i8],
    b: &[i8],
    horizon: S,
) -> Result<CoupledPair<S>> {
    let bc = BoundaryCondition::FrozenInitial;
    let mut fields = [DiscreteField::new(&domain, bc, a)?, DiscreteField::new(&domain, bc, b)?];
    let init = [fields[0].state().to_vec(), fields[1].state().to_vec()];
    let mut diff: BTreeSet<u32> = (0..domain.inner_len() as u32).filter(|&i| init[0][i as usize] != init[1][i as usize]).collect();
    let mut flips: [Vec<DiscreteFlip<S>>; 2] = [Vec::new(), Vec::new()];
    let events = run_discrete_lockstep(clocks, &domain, &mut fields, horizon, &[], |t, v, changes, f| {
        for k in 0..2 {
            if let Some((old, new, neighbors)) = changes[k] {
                flips[k].push(DiscreteFlip { vertex: v, time: t, old, new, neighbors });
            }
        }
        if f[0].state()[v as usize] != f[1].state()[v as usize] {
            diff.insert(v);
        }
    });
    let [fa, fb] = flips;
    let [f0, f1] = fields;
    let [i0, i1] = init;
    let make = |initial: Vec<i8>, field: DiscreteField, flips: Vec<DiscreteFlip<S>>| DiscreteTrajectory {
        domain: domain.clone(),
        p: S::nan(),
        horizon,
        initial,
        final_config: field.state().to_vec(),
        flips,
        flips_recorded: true,
        events,
    };
    Ok(CoupledPair {
        first: make(i0, f0, fa),
        second: make(i1, f1, fb),
        touches_boundary: diff.iter().any(|&i| domain.is_boundary(i)),
        difference: diff.into_iter().map(|i| domain.id(i)).collect(),
    })
}

/// Majority dynamics from the projections of the initial uniforms at level
/// `U_o(0)` with `<=` (first) and `<` (second), under shared clocks. Their
/// symmetric difference is compared with the trace of the root.
pub fn threshold_pair<S: Scalar>(manifest: &SeedManifest, ball: &Ball, horizon: S) -> Result<CoupledPair<S>> {
    let domain = Arc::new(Domain::from_ball(ball));
    let level: S = initial_uniform(manifest, &ball.center);
    let values: Vec<S> = domain.ids().iter().map(|v| initial_uniform(manifest, v)).collect();
    let plus: Vec<i8> = values.iter().map(|&u| if u <= level { 1 } else { -1 }).collect();
    let minus: Vec<i8> = values.iter().map(|&u| if u < level { 1 } else { -1 }).collect();
    coupled_pair(manifest, domain, &plus, &minus, horizon)
}

/// Median run on `ball` and the trace of its center.
pub fn center_trace<S: Scalar>(manifest: &SeedManifest, ball: &Ball, horizon: S) -> Result<TraceSet> {
    let land = Arc::new(Landscape::new(manifest, Arc::new(Domain::from_ball(ball))));
    let traj = run_in(manifest, land, &RunSpec::new(BoundaryCondition::FrozenInitial, Mode::Median, horizon))?;
    trace(&traj, &ball.center)
}

/// Two discrete runs at density `p` that differ only in the initial spin of
/// `target` (set to `spins.0` and `spins.1`). With `clock_generation`, the
/// target's clock is resampled in both runs.
pub fn resampling_difference<S: Scalar>(
    manifest: &SeedManifest,
    ball: &Ball,
    p: S,
    horizon: S,
    target: &VertexId,
    spins: (i8, i8),
    clock_generation: Option<u32>,
) -> Result<CoupledPair<S>> {
    if ![spins.0, spins.1].iter().all(|s| *s == 1 || *s == -1) {
        return Err(Error::InvalidArgument("forced spins must be +1 or -1".into()));
    }
    let domain = Arc::new(Domain::from_ball(ball));
    let t = domain
        .index_of(target)
        .filter(|&i| domain.is_inner(i))
        .ok_or_else(|| Error::InvalidArgument(format!("{target} is not inside the window")))?;
    let land: Landscape<S> = Landscape::new(manifest, domain.clone());
    let base: Vec<i8> = (0..domain.total_len() as u32).map(|h| land.project(h, p)).collect();
    let (mut a, mut b) = (base.clone(), base);
    a[t as usize] = spins.0;
    b[t as usize] = spins.1;
    let clocks = match clock_generation {
        Some(g) => manifest.with_clock_resampled(*target, g),
        None => manifest.clone(),
    };
    coupled_pair(&clocks, domain, &a, &b, horizon)
}

/// Whether inner vertex `v` lies on a monochromatic simple path whose two
/// ends are at distance at least `depth` from `v`. `config` covers the
/// inner vertices; nothing beyond them is assumed.
pub fn chain_membership(domain: &Domain, config: &[i8], v: u32, depth: usize) -> bool {
    if depth == 0 {
        return true;
    }
    let s = config[v as usize];
    let n = domain.inner_len() as u32;
    let mut long_branches = 0;
    for w in domain.neighbors(v) {
        if w < n && config[w as usize] == s && reach(domain, config, w, v, depth - 1) {
            long_branches += 1;
            if long_branches == 2 {
                return true;
            }
        }
    }
    false
}

/// Whether a monochromatic path of `need` more edges leaves `v` away from `from`.
fn reach(domain: &Domain, config: &[i8], v: u32, from: u32, need: usize) -> bool {
    if need == 0 {
        return true;
    }
    let n = domain.inner_len() as u32;
    let s = config[v as usize];
    domain
        .neighbors(v)
        .into_iter()
        .any(|w| w != from && w < n && config[w as usize] == s && reach(domain, config, w, v, need - 1))
}

/// Per-cluster end statistics of the `sign` clusters of a discrete configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SignCluster {
    pub size: usize,
    pub contains_center: bool,
    pub reaches_boundary: bool,
    /// Members whose removal leaves at least three boundary-reaching pieces.
    pub triple_points: Vec<u32>,
}

/// Clusters of `sign` spins with their triple points, where "infinite" is
/// read as "reaches a vertex next to the outer layer".
pub fn sign_clusters(domain: &Domain, config: &[i8], sign: i8) -> Vec<SignCluster> {
    const NONE: u32 = u32::MAX;
    let n = domain.inner_len() as u32;
    let mut seen = vec![false; n as usize];
    let mut parent = vec![NONE; n as usize];
    // down[v]: the part of the cluster below v (v included) touches the boundary
    let mut down = vec![false; n as usize];
    // up[v]: the part of the cluster outside v's subtree touches the boundary
    let mut up = vec![false; n as usize];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start as usize] || config[start as usize] != sign {
            continue;
        }
        let mut order = vec![start];
        seen[start as usize] = true;
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            head += 1;
            for w in domain.neighbors(v) {
                if w < n && !seen[w as usize] && config[w as usize] == sign {
                    seen[w as usize] = true;
                    parent[w as usize] = v;
                    order.push(w);
                }
            }
        }
        for &v in &order {
            down[v as usize] = domain.is_boundary(v);
        }
        for &v in order.iter().rev() {
            let p = parent[v as usize];
            if p != NONE && down[v as usize] {
                down[p as usize] = true;
            }
        }
        let parent = &parent;
        let children = |v: u32| domain.neighbors(v).into_iter().filter(move |&w| w < n && parent[w as usize] == v);
        up[start as usize] = false;
        for &v in &order {
            for c in children(v) {
                let sibling = children(v).any(|o| o != c && down[o as usize]);
                up[c as usize] = up[v as usize] || domain.is_boundary(v) || sibling;
            }
        }
        let mut triple = Vec::new();
        for &v in &order {
            let mut pieces = children(v).filter(|&c| down[c as usize]).count();
            if v != start && up[v as usize] {
                pieces += 1;
            }
            if pieces >= 3 {
                triple.push(v);
            }
        }
        out.push(SignCluster {
            size: order.len(),
            contains_center: start == 0,
            reaches_boundary: down[start as usize],
            triple_points: triple,
        });
    }
    out
}

/// Triple points of the `sign` clusters.
pub fn triple_points(domain: &Domain, config: &[i8], sign: i8) -> Vec<VertexId> {
    sign_clusters(domain, config, sign)
        .into_iter()
        .flat_map(|c| c.triple_points)
        .map(|i| domain.id(i))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EnergyAudit {
    pub flips: u64,
    pub violations: u64,
}

impl EnergyAudit {
    pub fn merge(self, other: EnergyAudit) -> EnergyAudit {
        EnergyAudit { flips: self.flips + other.flips, violations: self.violations + other.violations }
    }
}

/// Flips after which the flipping vertex disagrees with more neighbors than
/// before.
pub fn energy_audit<S>(flips: &[FlipRecord<S>]) -> EnergyAudit {
    let violations = flips
        .iter()
        .filter(|f| {
            let before = f.neighbors.iter().filter(|&&n| n != f.old).count();
            let after = f.neighbors.iter().filter(|&&n| n != f.new).count();
            after > before
        })
        .count() as u64;
    EnergyAudit { flips: flips.len() as u64, violations }
}

/// Labels a transport rule may read: initial uniforms, tie-break uniforms
/// and exact median-process values at one fixed time.
pub struct Labels<'a> {
    manifest: &'a SeedManifest,
    backward: Backward<'a, f64>,
    time: f64,
}

impl<'a> Labels<'a> {
    pub fn new(manifest: &'a SeedManifest, time: f64, budget: usize) -> Self {
        Labels { manifest, backward: Backward::new(manifest, time, budget), time }
    }

    pub fn initial(&self, v: &VertexId) -> f64 {
        initial_uniform(self.manifest, v)
    }

    pub fn tie_break(&self, v: &VertexId) -> f64 {
        tie_break(self.manifest, v)
    }

    /// `U_v(t)` at the labels' time, exact.
    pub fn value(&mut self, v: &VertexId) -> Result<f64> {
        let o = self.backward.origin_at(*v, self.time)?;
        Ok(initial_uniform(self.manifest, &o))
    }
}

/// A mass transport `m(x, ·)` computed from labels within distance `window`
/// of `x`. `None` means the rule is undecided within the window.
pub trait TransportRule {
    fn name(&self) -> &str;
    fn send(&self, x: &VertexId, window: usize, labels: &mut Labels) -> Result<Option<Vec<(VertexId, f64)>>>;
}

/// `m(x, y) = 1{x = y}`.
pub struct Identity;

impl TransportRule for Identity {
    fn name(&self) -> &str {
        "identity"
    }

    fn send(&self, x: &VertexId, _: usize, _: &mut Labels) -> Result<Option<Vec<(VertexId, f64)>>> {
        Ok(Some(vec![(*x, 1.0)]))
    }
}

/// Unit mass to every neighbor with a larger initial uniform.
pub struct LargerNeighbors;

impl TransportRule for LargerNeighbors {
    fn name(&self) -> &str {
        "larger-neighbors"
    }

    fn send(&self, x: &VertexId, window: usize, labels: &mut Labels) -> Result<Option<Vec<(VertexId, f64)>>> {
        if window < 1 {
            return Ok(None);
        }
        let ux = labels.initial(x);
        Ok(Some(x.neighbors().into_iter().filter(|y| labels.initial(y) > ux).map(|y| (y, 1.0)).collect()))
    }
}

/// Unit mass to the closest vertex whose value at the labels' time is at
/// most `level`, ties broken by the largest tie-break uniform.
pub struct NearestAtMost {
    pub level: f64,
}

impl TransportRule for NearestAtMost {
    fn name(&self) -> &str {
        "nearest-at-most"
    }

    fn send(&self, x: &VertexId, window: usize, labels: &mut Labels) -> Result<Option<Vec<(VertexId, f64)>>> {
        let mut shell = vec![*x];
        let mut prev: Vec<VertexId> = Vec::new();
        for d in 0..=window {
            let mut best: Option<(f64, VertexId)> = None;
            for y in &shell {
                if labels.value(y)? <= self.level {
                    let xi = labels.tie_break(y);
                    if best.map_or(true, |(b, _)| xi > b) {
                        best = Some((xi, *y));
                    }
                }
            }
            if let Some((_, y)) = best {
                return Ok(Some(vec![(y, 1.0)]));
            }
            if d == window {
                break;
            }
            let next: Vec<VertexId> = shell
                .iter()
                .flat_map(|v| v.neighbors())
                .filter(|w| !prev.contains(w) && !shell.contains(w))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            prev = std::mem::replace(&mut shell, next);
        }
        Ok(None)
    }
}

/// A rule given by a closure.
pub struct FnRule<F> {
    pub name: String,
    pub f: F,
}

impl<F> TransportRule for FnRule<F>
where
    F: Fn(&VertexId, usize, &mut Labels) -> Result<Option<Vec<(VertexId, f64)>>>,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn send(&self, x: &VertexId, window: usize, labels: &mut Labels) -> Result<Option<Vec<(VertexId, f64)>>> {
        (self.f)(x, window, labels)
    }
}

#[derive(Clone, Debug)]
pub struct TransportAudit {
    pub rule: String,
    pub window: usize,
    pub mass_out: MeanEstimate,
    pub mass_in: MeanEstimate,
    /// Fraction of replicas where some needed decision was undecided.
    pub miss_rate: f64,
}

impl TransportAudit {
    /// Mass-out and mass-in intervals at three standard errors overlap.
    pub fn balanced(&self) -> bool {
        let (a, b) = (&self.mass_out, &self.mass_in);
        (a.mean - b.mean).abs() <= 3.0 * (a.std_error() + b.std_error())
    }
}

/// Monte Carlo check of `E sum_y m(o, y) = E sum_x m(x, o)` for a rule whose
/// targets lie within distance `window` of the sender.
pub fn mass_transport_audit(
    rule: &dyn TransportRule,
    window: usize,
    replicas: usize,
    manifest: &SeedManifest,
    time: f64,
    miss_limit: f64,
) -> Result<TransportAudit> {
    if replicas < MIN_REPLICAS {
        return Err(Error::TooFewReplicas { got: replicas, min: MIN_REPLICAS });
    }
    let o = VertexId::root();
    let senders = Ball::around_root(window).vertices();
    let mut outs = Vec::with_capacity(replicas);
    let mut ins = Vec::with_capacity(replicas);
    let mut missed = 0;
    for i in 0..replicas as u64 {
        let m = manifest.replica(i);
        let mut labels = Labels::new(&m, time, crate::exactness::DEFAULT_BUDGET);
        let mut miss = false;
        let out: f64 = match rule.send(&o, window, &mut labels)? {
            Some(targets) => targets.iter().map(|t| t.1).sum(),
            None => {
                miss = true;
                0.0
            }
        };
        let mut inflow = 0.0;
        for x in &senders {
            match rule.send(x, window, &mut labels)? {
                Some(targets) => inflow += targets.iter().filter(|t| t.0 == o).map(|t| t.1).sum::<f64>(),
                None => miss = true,
            }
        }
        if miss {
            missed += 1;
        }
        outs.push(out);
        ins.push(inflow);
    }
    let miss_rate = missed as f64 / replicas as f64;
    if miss_rate > miss_limit {
        return Err(Error::TransportUndecided { fraction: miss_rate, limit: miss_limit });
    }
    Ok(TransportAudit {
        rule: rule.name().to_string(),
        window,
        mass_out: MeanEstimate::from_samples(&outs),
        mass_in: MeanEstimate::from_samples(&ins),
        miss_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run;

    fn id(s: &str) -> VertexId {
        s.parse().unwrap()
    }

    #[test]
    fn no_flips_gives_singletons() {
        let d = Domain::from_ball(&Ball::around_root(3));
        let state: Vec<u32> = (0..d.inner_len() as u32).collect();
        let r = agreement_clusters(&d, &state, None);
        assert_eq!(r.clusters.len(), d.inner_len());
        assert!(r.clusters.iter().all(|c| c.size() == 1));
        assert!(r.pre_fixation);
        assert!(disagreement_components(&d, &state, None).clusters.len() == 1);
    }

    #[test]
    fn copied_value_joins_cluster() {
        let d = Domain::from_ball(&Ball::around_root(2));
        let mut state: Vec<u32> = (0..d.inner_len() as u32).collect();
        let v = d.index_of(&id("1")).unwrap();
        let w = d.index_of(&id("10")).unwrap();
        state[v as usize] = w;
        let r = agreement_clusters(&d, &state, None);
        let big: Vec<&Cluster> = r.clusters.iter().filter(|c| c.size() > 1).collect();
        assert_eq!(big.len(), 1);
        let mut m = big[0].members.clone();
        m.sort();
        assert_eq!(m, vec![id("1"), id("10")]);
    }

    #[test]
    fn uniform_state_has_no_disagreement() {
        let d = Domain::from_ball(&Ball::around_root(3));
        let state = vec![7u32; d.inner_len()];
        assert!(disagreement_components(&d, &state, None).clusters.is_empty());
    }

    #[test]
    fn disagreement_path_verdicts() {
        // a single vertex differing from all three neighbors: degree 3
        let d = Domain::from_ball(&Ball::around_root(2));
        let mut state = vec![1u32; d.inner_len()];
        state[0] = 2;
        let r = disagreement_components(&d, &state, None);
        assert_eq!(r.clusters.len(), 1);
        assert_eq!(r.clusters[0].max_degree, 3);
        assert!(!r.clusters[0].is_simple_path);
        // a leaf-ward vertex differing from its parent only: an edge
        let mut state = vec![1u32; d.inner_len()];
        state[d.index_of(&id("10")).unwrap() as usize] = 2;
        let r = disagreement_components(&d, &state, None);
        assert_eq!(r.clusters[0].size(), 2);
        assert!(r.clusters[0].is_simple_path);
    }

    #[test]
    fn clusters_by_origin_match_clusters_by_value() {
        let m = SeedManifest::new(3);
        let t = run::<f64>(&m, &Ball::around_root(7), BoundaryCondition::FrozenInitial, Mode::Median, 6.0).unwrap();
        let a = agreement_clusters(t.domain(), &t.final_state, None);
        let b = agreement_clusters_by_value(&t.land, &t.final_state, None);
        assert_eq!(a.clusters, b.clusters);
    }

    #[test]
    fn dyadic_bins() {
        let c = |n: usize| Cluster { members: vec![VertexId::root(); n], boundary_contacts: 0, max_degree: 0, is_simple_path: true };
        let r = ClusterReport { clusters: vec![c(1), c(1), c(2), c(3), c(4), c(9)], pre_fixation: true };
        assert_eq!(r.dyadic_histogram(), vec![2, 2, 1, 1]);
        assert_eq!(r.size_quantile(0.5), Some(2));
    }

    #[test]
    fn quiet_source_has_trivial_trace() {
        let m = SeedManifest::new(1);
        let t = run::<f64>(&m, &Ball::around_root(3), BoundaryCondition::FrozenInitial, Mode::Median, 0.0).unwrap();
        let tr = trace(&t, &VertexId::root()).unwrap();
        assert_eq!(tr.members.into_iter().collect::<Vec<_>>(), vec![VertexId::root()]);
    }

    #[test]
    fn trace_equals_threshold_difference() {
        for seed in 0..10 {
            let m = SeedManifest::new(seed);
            let ball = Ball::around_root(7);
            let tr = center_trace::<f64>(&m, &ball, 6.0).unwrap();
            let pair = threshold_pair::<f64>(&m, &ball, 6.0).unwrap();
            assert_eq!(tr.members, pair.difference, "seed {seed}");
            assert!(pair.difference.contains(&VertexId::root()));
        }
    }

    #[test]
    fn equal_forced_spins_never_differ() {
        let m = SeedManifest::new(2);
        let o = VertexId::root();
        let r = resampling_difference::<f64>(&m, &Ball::around_root(6), 0.5, 8.0, &o, (1, 1), None).unwrap();
        assert!(r.difference.is_empty());
        let r = resampling_difference::<f64>(&m, &Ball::around_root(6), 0.5, 0.0, &o, (1, -1), None).unwrap();
        assert_eq!(r.difference.into_iter().collect::<Vec<_>>(), vec![o]);
    }

    #[test]
    fn chain_examples() {
        let d = Domain::from_ball(&Ball::around_root(5));
        let plus = vec![1i8; d.inner_len()];
        for depth in 0..=5 {
            assert!(chain_membership(&d, &plus, 0, depth));
        }
        assert!(!chain_membership(&d, &plus, 0, 6));
        let mut lone = vec![-1i8; d.inner_len()];
        lone[0] = 1;
        assert!(!chain_membership(&d, &lone, 0, 1));
        assert!(chain_membership(&d, &lone, 0, 0));
    }

    #[test]
    fn triple_point_examples() {
        let d = Domain::from_ball(&Ball::around_root(3));
        // a bare path from leaf 000 through the root to leaf 100
        let mut cfg = vec![-1i8; d.inner_len()];
        for a in ["000", "00", "0", "", "1", "10", "100"] {
            cfg[d.index_of(&id(a)).unwrap() as usize] = 1;
        }
        assert!(triple_points(&d, &cfg, 1).is_empty());
        // add the branch to 200: the root splits it into three boundary pieces
        for a in ["2", "20", "200"] {
            cfg[d.index_of(&id(a)).unwrap() as usize] = 1;
        }
        assert_eq!(triple_points(&d, &cfg, 1), vec![VertexId::root()]);
        let mut single = vec![-1i8; d.inner_len()];
        single[0] = 1;
        assert!(triple_points(&d, &single, 1).is_empty());
        let all = vec![1i8; d.inner_len()];
        assert_eq!(triple_points(&d, &all, 1).len(), 1 + 3 + 6);
    }

    #[test]
    fn energy_audit_examples() {
        let f = |old: u32, new: u32, nb: [u32; 3]| FlipRecord { vertex: 0, time: 1.0f64, old, new, neighbors: nb };
        assert_eq!(energy_audit(&[f(9, 1, [1, 1, 1])]).violations, 0);
        assert_eq!(energy_audit(&[f(9, 2, [1, 2, 3])]).violations, 0);
        // a move from a neighbor-shared value to a fresh one is a violation
        assert_eq!(energy_audit(&[f(1, 9, [1, 1, 2])]).violations, 1);
    }

    #[test]
    fn energy_never_increases_in_runs() {
        let mut total = EnergyAudit::default();
        for seed in 0..5 {
            let m = SeedManifest::new(seed);
            let t = run::<f64>(&m, &Ball::around_root(8), BoundaryCondition::FrozenInitial, Mode::Median, 8.0).unwrap();
            total = total.merge(energy_audit(&t.flips));
        }
        assert!(total.flips > 1000);
        assert_eq!(total.violations, 0);
    }

    #[test]
    fn identity_transport_is_exact() {
        let a = mass_transport_audit(&Identity, 2, 1000, &SeedManifest::new(1), 1.0, 0.0).unwrap();
        assert_eq!(a.mass_out.mean, 1.0);
        assert_eq!(a.mass_in.mean, 1.0);
        assert_eq!(a.miss_rate, 0.0);
    }

    #[test]
    fn nearest_rule_picks_self_when_low() {
        let m = SeedManifest::new(1);
        let mut labels = Labels::new(&m, 1.0, 10_000);
        for s in ["", "0", "01", "2"] {
            let x = id(s);
            let got = NearestAtMost { level: 0.5 }.send(&x, 3, &mut labels).unwrap().unwrap();
            if labels.value(&x).unwrap() <= 0.5 {
                assert_eq!(got, vec![(x, 1.0)]);
            } else {
                assert!(x.distance(&got[0].0) >= 1);
            }
        }
    }
}
