//! Exact values of the median process on the infinite tree.
//!
//! Two routes. [`backward_state`] walks chronological paths backwards from a
//! target ring and is exact but exponential in the horizon. Sandwich runs
//! bracket the infinite-tree state between a run whose outside is frozen at
//! the low sentinel and one frozen at the high sentinel; by attractiveness
//! every vertex where the two agree carries its exact infinite-tree value.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use crate::domain::Domain;
use crate::engine::{BoundaryCondition, Coupled, Landscape, Spin, HIGH, LOW};
use crate::error::{Error, Result};
use crate::randomness::{initial_uniform, rings, SeedManifest};
use crate::scalar::Scalar;
use crate::topology::{Ball, VertexId};

/// Default cap on memo entries for the backward recursion.
pub const DEFAULT_BUDGET: usize = 20_000_000;

/// Backward evaluator with memo on `(vertex, rings so far)`.
pub struct Backward<'a, S> {
    manifest: &'a SeedManifest,
    horizon: S,
    budget: usize,
    rings: HashMap<VertexId, Vec<S>>,
    memo: HashMap<(VertexId, u32), VertexId>,
}

impl<'a, S: Scalar> Backward<'a, S> {
    pub fn new(manifest: &'a SeedManifest, horizon: S, budget: usize) -> Self {
        Backward { manifest, horizon, budget, rings: HashMap::new(), memo: HashMap::new() }
    }

    fn rings_of(&mut self, v: VertexId) -> &[S] {
        let (m, h) = (self.manifest, self.horizon);
        self.rings.entry(v).or_insert_with(|| rings(m, &v, h))
    }

    fn less(&self, a: VertexId, b: VertexId) -> bool {
        let (ua, ub): (S, S) = (initial_uniform(self.manifest, &a), initial_uniform(self.manifest, &b));
        if ua != ub {
            ua < ub
        } else {
            a < b
        }
    }

    fn median(&self, a: VertexId, b: VertexId, c: VertexId) -> VertexId {
        if a == b || a == c {
            return a;
        }
        if b == c {
            return b;
        }
        let (ab, bc, ac) = (self.less(a, b), self.less(b, c), self.less(a, c));
        if ab {
            if bc {
                b
            } else if ac {
                c
            } else {
                a
            }
        } else if ac {
            a
        } else if bc {
            c
        } else {
            b
        }
    }

    /// Origin of `v`'s value after its first `k` rings.
    fn after_rings(&mut self, v: VertexId, k: u32) -> Result<VertexId> {
        if k == 0 {
            return Ok(v);
        }
        if let Some(&o) = self.memo.get(&(v, k)) {
            return Ok(o);
        }
        let s = self.rings_of(v)[k as usize - 1];
        let mut got = [v; 3];
        for (slot, w) in v.neighbors().into_iter().enumerate() {
            // events are ordered by (time, address)
            let j = self.rings_of(w).partition_point(|&r| r < s || (r == s && w < v)) as u32;
            got[slot] = self.after_rings(w, j)?;
        }
        let o = self.median(got[0], got[1], got[2]);
        if self.memo.len() >= self.budget {
            return Err(Error::RecursionBudgetExceeded { budget: self.budget });
        }
        self.memo.insert((v, k), o);
        Ok(o)
    }

    /// Origin of `v`'s value at time `t <= horizon`.
    pub fn origin_at(&mut self, v: VertexId, t: S) -> Result<VertexId> {
        let k = self.rings_of(v).partition_point(|&r| r <= t) as u32;
        self.after_rings(v, k)
    }

    /// Vertices whose state was read so far.
    pub fn visited(&self) -> HashSet<VertexId> {
        self.rings.keys().copied().collect()
    }

    pub fn memo_len(&self) -> usize {
        self.memo.len()
    }
}

/// Exact infinite-tree value `U_v(t)`.
pub fn backward_state<S: Scalar>(manifest: &SeedManifest, v: &VertexId, t: S, budget: usize) -> Result<Spin<S>> {
    if !(t >= S::zero()) {
        return Err(Error::InvalidArgument("time must be nonnegative".into()));
    }
    let mut b = Backward::new(manifest, t, budget);
    let o = b.origin_at(*v, t)?;
    Ok(Spin::initial(manifest, o))
}

/// Vertices reached by the backward recursion for `U_v(T)`.
#[derive(Clone, Debug)]
pub struct InfluenceSet {
    pub target: VertexId,
    pub horizon: f64,
    pub members: HashSet<VertexId>,
    pub max_depth: usize,
}

impl InfluenceSet {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

pub fn influence_set<S: Scalar>(manifest: &SeedManifest, v: &VertexId, t: S, budget: usize) -> Result<InfluenceSet> {
    let mut b = Backward::new(manifest, t, budget);
    b.origin_at(*v, t)?;
    let members = b.visited();
    let max_depth = members.iter().map(|w| w.distance(v)).max().unwrap_or(0);
    Ok(InfluenceSet { target: *v, horizon: t.to_f64_lossy(), members, max_depth })
}

/// Set of vertices with a ring that starts a chronological path for `[0, t]`
/// ending at `v`, together with the vertices read at time zero. A forward run
/// on any window containing this set reproduces `U_v(t)` exactly.
pub fn backward_cone<S: Scalar>(manifest: &SeedManifest, v: &VertexId, t: S, budget: usize) -> Result<HashSet<VertexId>> {
    // (vertex, latest ring index that matters)
    let mut best: HashMap<VertexId, usize> = HashMap::new();
    let mut clocks: HashMap<VertexId, Vec<S>> = HashMap::new();
    let first = clock_of(manifest, t, *v, &mut clocks).partition_point(|&r| r <= t);
    let mut stack = vec![(*v, first)];
    best.insert(*v, first);
    while let Some((w, k)) = stack.pop() {
        if k == 0 {
            continue;
        }
        let s = clocks[&w][k - 1];
        for n in w.neighbors() {
            let j = clock_of(manifest, t, n, &mut clocks).partition_point(|&r| r < s || (r == s && n < w));
            let seen = best.get(&n).copied();
            if seen.map_or(true, |b| j > b) {
                best.insert(n, j);
                if best.len() > budget {
                    return Err(Error::RecursionBudgetExceeded { budget });
                }
                stack.push((n, j));
            }
        }
    }
    Ok(best.into_keys().collect())
}

fn clock_of<'c, S: Scalar>(m: &SeedManifest, t: S, w: VertexId, clocks: &'c mut HashMap<VertexId, Vec<S>>) -> &'c [S] {
    clocks.entry(w).or_insert_with(|| rings(m, &w, t))
}

/// `(5 e^{4T} / 4) (4/5)^k`: bound on the probability of a chronological path
/// with at least `k` vertices starting from or ending at a fixed vertex.
pub fn chronological_bound(t: f64, k: usize) -> f64 {
    1.25 * (4.0 * t).exp() * 0.8f64.powi(k as i32)
}

/// Longest chronological walks through `o` in one clock realization.
pub struct WalkLengths {
    /// Most vertices in a chronological walk for `[0, T]` ending at the target.
    pub ending: usize,
    /// Most vertices in one starting at the target.
    pub starting: usize,
}

/// Longest chronological walks (vertices may repeat) ending at and starting
/// from `v` within `[0, t]`.
pub fn longest_chronological<S: Scalar>(manifest: &SeedManifest, v: &VertexId, t: S) -> WalkLengths {
    let mut clocks: HashMap<VertexId, Vec<S>> = HashMap::new();
    let mut memo_end: HashMap<(VertexId, usize), usize> = HashMap::new();
    let mut memo_start: HashMap<(VertexId, usize), usize> = HashMap::new();

    // longest walk ending at w whose last ring is ring number k (1-based)
    fn end<S: Scalar>(
        m: &SeedManifest,
        t: S,
        w: VertexId,
        k: usize,
        clocks: &mut HashMap<VertexId, Vec<S>>,
        memo: &mut HashMap<(VertexId, usize), usize>,
    ) -> usize {
        if k == 0 {
            return 0;
        }
        if let Some(&l) = memo.get(&(w, k)) {
            return l;
        }
        let s = clocks.entry(w).or_insert_with(|| rings(m, &w, t))[k - 1];
        let mut best = 0;
        for n in w.neighbors() {
            let j = clocks.entry(n).or_insert_with(|| rings(m, &n, t)).partition_point(|&r| r < s);
            best = best.max(end(m, t, n, j, clocks, memo));
        }
        memo.insert((w, k), best + 1);
        best + 1
    }

    // longest walk starting at w whose first ring is ring number k (1-based)
    fn start<S: Scalar>(
        m: &SeedManifest,
        t: S,
        w: VertexId,
        k: usize,
        clocks: &mut HashMap<VertexId, Vec<S>>,
        memo: &mut HashMap<(VertexId, usize), usize>,
    ) -> usize {
        let len = clocks.entry(w).or_insert_with(|| rings(m, &w, t)).len();
        if k == 0 || k > len {
            return 0;
        }
        if let Some(&l) = memo.get(&(w, k)) {
            return l;
        }
        let s = clocks[&w][k - 1];
        let mut best = 0;
        for n in w.neighbors() {
            let rs = clocks.entry(n).or_insert_with(|| rings(m, &n, t));
            let j = rs.partition_point(|&r| r <= s) + 1;
            best = best.max(start(m, t, n, j, clocks, memo));
        }
        memo.insert((w, k), best + 1);
        best + 1
    }

    let k_end = clocks.entry(*v).or_insert_with(|| rings(manifest, v, t)).len();
    let ending = end(manifest, t, *v, k_end, &mut clocks, &mut memo_end);
    let starting = start(manifest, t, *v, 1, &mut clocks, &mut memo_start);
    WalkLengths { ending, starting }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailCheck {
    pub t: f64,
    pub k: usize,
    pub replicas: usize,
    pub hits: usize,
    pub empirical: f64,
    pub bound: f64,
    pub vacuous: bool,
}

impl TailCheck {
    pub fn sigma(&self) -> f64 {
        (self.empirical * (1.0 - self.empirical) / self.replicas as f64).sqrt()
    }

    /// Empirical frequency at most the bound plus three standard errors.
    pub fn passes(&self) -> bool {
        self.vacuous || self.empirical <= self.bound + 3.0 * self.sigma()
    }
}

/// Monte Carlo frequency of a chronological path with `>= k` vertices
/// starting from or ending at the root during `[0, t]`.
pub fn tail_check(manifest: &SeedManifest, t: f64, k: usize, replicas: usize) -> TailCheck {
    let bound = chronological_bound(t, k);
    let root = VertexId::root();
    let hits = (0..replicas as u64)
        .filter(|&i| {
            let w = longest_chronological::<f64>(&manifest.replica(i), &root, t);
            w.ending.max(w.starting) >= k
        })
        .count();
    TailCheck {
        t,
        k,
        replicas,
        hits,
        empirical: hits as f64 / replicas.max(1) as f64,
        bound,
        vacuous: bound >= 1.0,
    }
}

/// Low and high bracketing configurations on one window.
pub struct Bracket<S> {
    pub land: Arc<Landscape<S>>,
    pub time: S,
    pub low: Vec<u32>,
    pub high: Vec<u32>,
}

impl<S: Scalar> Bracket<S> {
    /// Exact infinite-tree spin at inner vertex `i`, if the bracket has closed there.
    #[inline]
    pub fn certified(&self, i: u32) -> Option<u32> {
        let (l, h) = (self.low[i as usize], self.high[i as usize]);
        (l == h && l != LOW && l != HIGH).then_some(l)
    }

    /// Number of vertices within distance `r` of the center where the bracket is open.
    pub fn gap_within(&self, r: usize) -> usize {
        let d = &self.land.domain;
        (0..d.inner_len() as u32)
            .filter(|&i| d.depth(i) <= r && self.low[i as usize] != self.high[i as usize])
            .count()
    }
}

/// Run the low and high sentinel runs with shared randomness and call
/// `visit` with the bracket at each checkpoint (ascending).
pub fn sandwich_run<S, F>(
    manifest: &SeedManifest,
    land: Arc<Landscape<S>>,
    checkpoints: &[S],
    max_events: u64,
    mut visit: F,
) -> Result<u64>
where
    S: Scalar,
    F: FnMut(&Bracket<S>),
{
    let n = land.domain.inner_len() as u32;
    let init: Vec<u32> = (0..n).collect();
    let mut sim = Coupled::new(
        manifest,
        land.clone(),
        S::zero(),
        vec![(BoundaryCondition::FrozenLow, init.clone()), (BoundaryCondition::FrozenHigh, init)],
        &[],
    );
    for &t in checkpoints {
        sim.advance(t, max_events, |_, _, _| {})?;
        let bracket = Bracket {
            land: land.clone(),
            time: t,
            low: sim.fields[0].state().to_vec(),
            high: sim.fields[1].state().to_vec(),
        };
        visit(&bracket);
    }
    Ok(sim.events)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict<S> {
    Certified(Spin<S>),
    Undetermined,
}

#[derive(Clone, Debug)]
pub struct Certificate<S> {
    pub vertex: VertexId,
    pub horizon: S,
    /// Largest radius tried; the certifying one when certified.
    pub radius: usize,
    pub verdict: Verdict<S>,
    /// Open-bracket vertices within the first radius of the schedule.
    pub bracket_gap: usize,
}

impl<S: Scalar> Certificate<S> {
    pub fn spin(&self) -> Option<Spin<S>> {
        match &self.verdict {
            Verdict::Certified(s) => Some(*s),
            Verdict::Undetermined => None,
        }
    }

    pub const CSV_HEADER: &'static str = "vertex,T,R_used,verdict,spin_origin,spin_value,bracket_gap";

    pub fn csv_row(&self) -> String {
        let (verdict, origin, value) = match &self.verdict {
            Verdict::Certified(s) => (
                "certified",
                s.origin_vertex().map(|v| v.to_string()).unwrap_or_default(),
                format!("{:.17}", s.value.to_f64_lossy()),
            ),
            Verdict::Undetermined => ("undetermined", String::new(), String::new()),
        };
        format!(
            "{},{:.9},{},{},{},{},{}",
            self.vertex,
            self.horizon.to_f64_lossy(),
            self.radius,
            verdict,
            origin,
            value,
            self.bracket_gap
        )
    }
}

impl<S: Scalar> fmt::Display for Certificate<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.csv_row())
    }
}

/// Try radii in increasing order until the low and high runs agree at `v`
/// at time `t`.
pub fn sandwich_certify<S: Scalar>(manifest: &SeedManifest, v: &VertexId, t: S, radii: &[usize]) -> Result<Certificate<S>> {
    if radii.is_empty() || radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("radius schedule must be nonempty and increasing".into()));
    }
    let mut cert = Certificate { vertex: *v, horizon: t, radius: radii[0], verdict: Verdict::Undetermined, bracket_gap: 0 };
    for &r in radii {
        let land = Arc::new(Landscape::new(manifest, Arc::new(Domain::from_ball(&Ball::new(*v, r)))));
        let mut found = None;
        let mut gap = 0;
        sandwich_run(manifest, land.clone(), &[t], u64::MAX, |b| {
            found = b.certified(0);
            gap = b.gap_within(radii[0]);
        })?;
        cert.radius = r;
        cert.bracket_gap = gap;
        if let Some(h) = found {
            cert.verdict = Verdict::Certified(land.spin(h));
            return Ok(cert);
        }
    }
    Ok(cert)
}

/// Count ordering violations `low <= initial <= high` over every event of a
/// three-way coupled run on `ball`.
pub fn bracketing_violations<S: Scalar>(manifest: &SeedManifest, ball: &Ball, t: S) -> Result<u64> {
    let land = Arc::new(Landscape::new(manifest, Arc::new(Domain::from_ball(ball))));
    let n = land.domain.inner_len() as u32;
    let init: Vec<u32> = (0..n).collect();
    let mut sim = Coupled::new(
        manifest,
        land.clone(),
        S::zero(),
        vec![
            (BoundaryCondition::FrozenLow, init.clone()),
            (BoundaryCondition::FrozenInitial, init.clone()),
            (BoundaryCondition::FrozenHigh, init),
        ],
        &[],
    );
    let mut violations = 0;
    sim.advance(t, u64::MAX, |ev, _, fields| {
        // only the ringing vertex can change
        let i = ev.vertex as usize;
        let (l, m, h) = (fields[0].state()[i], fields[1].state()[i], fields[2].state()[i]);
        if !(land.le(l, m) && land.le(m, h)) {
            violations += 1;
        }
    })?;
    Ok(violations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, Mode};

    #[test]
    fn no_rings_gives_initial_value() {
        let m = SeedManifest::new(1);
        let v = VertexId::root();
        let first = rings::<f64>(&m, &v, 10.0)[0];
        let s = backward_state(&m, &v, first * 0.5, 1000).unwrap();
        assert_eq!(s.origin_vertex(), Some(v));
        assert_eq!(s.value, initial_uniform::<f64>(&m, &v));
    }

    #[test]
    fn lone_ring_takes_median_of_neighbor_initials() {
        // find a seed where the root rings before every neighbor
        for seed in 0..200 {
            let m = SeedManifest::new(seed);
            let o = VertexId::root();
            let s = rings::<f64>(&m, &o, 10.0)[0];
            let quiet = o.neighbors().iter().all(|w| rings::<f64>(&m, w, 10.0)[0] > s);
            if !quiet {
                continue;
            }
            let got = backward_state(&m, &o, s, 1000).unwrap();
            let mut nb: Vec<Spin<f64>> = o.neighbors().iter().map(|w| Spin::initial(&m, *w)).collect();
            nb.sort();
            assert_eq!(got, nb[1]);
            return;
        }
        panic!("no suitable seed");
    }

    #[test]
    fn influence_set_of_time_zero_is_target() {
        let m = SeedManifest::new(5);
        let v: VertexId = "10".parse().unwrap();
        let s = influence_set::<f64>(&m, &v, 0.0, 100).unwrap();
        assert_eq!(s.size(), 1);
        assert!(s.members.contains(&v));
    }

    #[test]
    fn backward_matches_forward_on_large_ball() {
        for seed in 0..10 {
            let m = SeedManifest::new(seed);
            let t = run::<f64>(&m, &Ball::around_root(12), BoundaryCondition::FrozenInitial, Mode::Median, 1.5).unwrap();
            let fwd = t.final_spin(&VertexId::root()).unwrap();
            let bwd = backward_state(&m, &VertexId::root(), 1.5, DEFAULT_BUDGET).unwrap();
            assert_eq!(fwd, bwd, "seed {seed}");
        }
    }

    #[test]
    fn cone_restricted_run_matches_full_run() {
        for seed in 0..10 {
            let m = SeedManifest::new(100 + seed);
            let o = VertexId::root();
            let full = run::<f64>(&m, &Ball::around_root(10), BoundaryCondition::FrozenInitial, Mode::Median, 1.5).unwrap();
            let cone = backward_cone::<f64>(&m, &o, 1.5, DEFAULT_BUDGET).unwrap();
            let d = Arc::new(Domain::from_set(o, &cone));
            let spec = crate::engine::RunSpec::new(BoundaryCondition::FrozenInitial, Mode::Median, 1.5);
            let part = crate::engine::run_on(&m, d, &spec).unwrap();
            assert_eq!(full.final_spin(&o), part.final_spin(&o), "seed {seed}");
        }
    }

    #[test]
    fn bound_values() {
        assert!((chronological_bound(1.0, 20) - 0.786842).abs() < 1e-5);
        assert!((chronological_bound(0.5, 15) - 0.324974).abs() < 1e-5);
        assert!(chronological_bound(1.0, 5) > 1.0);
    }

    #[test]
    fn vacuous_bound_is_reported() {
        let c = tail_check(&SeedManifest::new(1), 1.0, 5, 10);
        assert!(c.vacuous && c.passes());
    }

    #[test]
    fn longest_walk_without_rings_is_empty() {
        let w = longest_chronological::<f64>(&SeedManifest::new(3), &VertexId::root(), 0.0);
        assert_eq!((w.ending, w.starting), (0, 0));
    }

    #[test]
    fn zero_horizon_certifies_initial_value() {
        let m = SeedManifest::new(4);
        let v = VertexId::root();
        let c = sandwich_certify::<f64>(&m, &v, 0.0, &[2, 4]).unwrap();
        assert_eq!(c.radius, 2);
        assert_eq!(c.spin(), Some(Spin::initial(&m, v)));
    }

    #[test]
    fn certification_agrees_with_oracle() {
        let mut certified = 0;
        for seed in 0..20 {
            let m = SeedManifest::new(seed);
            let o = VertexId::root();
            let c = sandwich_certify::<f64>(&m, &o, 2.0, &[2, 4, 6, 8]).unwrap();
            if let Some(s) = c.spin() {
                certified += 1;
                assert_eq!(s, backward_state(&m, &o, 2.0, DEFAULT_BUDGET).unwrap(), "seed {seed}");
            }
        }
        assert!(certified > 10);
    }

    #[test]
    fn gap_closes_with_radius() {
        let m = SeedManifest::new(8);
        let v = VertexId::root();
        let mut last = usize::MAX;
        for r in [3, 5, 7, 9] {
            let land = Arc::new(Landscape::<f64>::new(&m, Arc::new(Domain::from_ball(&Ball::new(v, r)))));
            let mut gap = 0;
            sandwich_run(&m, land, &[4.0], u64::MAX, |b| gap = b.gap_within(3)).unwrap();
            assert!(gap <= last);
            last = gap;
        }
    }

    #[test]
    fn bracketing_holds() {
        for seed in 0..5 {
            assert_eq!(bracketing_violations::<f64>(&SeedManifest::new(seed), &Ball::around_root(6), 8.0).unwrap(), 0);
        }
    }
}
