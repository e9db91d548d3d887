//! Event-driven simulation of the median process and of majority dynamics on
//! a finite window of the tree.
//!
//! The median process is the primary code path. A configuration is stored as
//! one origin handle per inner vertex: the index of the vertex whose initial
//! uniform the current value is a copy of, or one of two sentinels that sit
//! strictly below / above every uniform. Because updates only ever copy a
//! neighbor's value, spin equality is origin equality and never needs a float
//! comparison.
//!
//! Majority dynamics at density `p` is obtained by projecting the median
//! process (`+1` where the value is `<= p`). [`run_discrete_direct`] evolves
//! `±1` spins with the energy rule instead and exists to cross-check the
//! projection.

use std::cmp::Ordering;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::randomness::{initial_uniform, ScalarClock, SeedManifest};
use crate::scalar::Scalar;
use crate::topology::{Ball, VertexId};

/// Handle of the sentinel below every uniform (projects to `+1` at every `p`).
pub const LOW: u32 = u32::MAX - 1;
/// Handle of the sentinel above every uniform (projects to `-1` at every `p`).
pub const HIGH: u32 = u32::MAX;

/// Where a continuous spin value came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpinOrigin {
    Low,
    Vertex(VertexId),
    High,
}

impl Ord for SpinOrigin {
    fn cmp(&self, other: &Self) -> Ordering {
        use SpinOrigin::*;
        match (self, other) {
            (Vertex(a), Vertex(b)) => a.cmp(b),
            (Low, Low) | (High, High) => Ordering::Equal,
            (Low, _) | (_, High) => Ordering::Less,
            (_, Low) | (High, _) => Ordering::Greater,
        }
    }
}

impl PartialOrd for SpinOrigin {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A continuous spin: a value tagged with the vertex it was copied from.
///
/// Equality is origin equality. Ordering is by value, ties broken by origin
/// address; sentinels compare below / above everything.
#[derive(Clone, Copy, Debug)]
pub struct Spin<S> {
    pub value: S,
    pub origin: SpinOrigin,
}

impl<S: Scalar> Spin<S> {
    pub fn new(value: S, origin: VertexId) -> Self {
        Spin { value, origin: SpinOrigin::Vertex(origin) }
    }

    pub fn low() -> Self {
        Spin { value: -S::one(), origin: SpinOrigin::Low }
    }

    pub fn high() -> Self {
        Spin { value: S::one() + S::one(), origin: SpinOrigin::High }
    }

    /// Initial spin of `v`.
    pub fn initial(manifest: &SeedManifest, v: VertexId) -> Self {
        Spin::new(initial_uniform(manifest, &v), v)
    }

    pub fn origin_vertex(&self) -> Option<VertexId> {
        match self.origin {
            SpinOrigin::Vertex(v) => Some(v),
            _ => None,
        }
    }

    /// `+1` if the value is at most `p`, else `-1`.
    pub fn project(&self, p: S) -> i8 {
        match self.origin {
            SpinOrigin::Low => 1,
            SpinOrigin::High => -1,
            SpinOrigin::Vertex(_) => {
                if self.value <= p {
                    1
                } else {
                    -1
                }
            }
        }
    }
}

impl<S> PartialEq for Spin<S> {
    fn eq(&self, other: &Self) -> bool {
        self.origin == other.origin
    }
}

impl<S> Eq for Spin<S> {}

impl<S: Scalar> Ord for Spin<S> {
    fn cmp(&self, other: &Self) -> Ordering {
        if self.origin == other.origin {
            return Ordering::Equal;
        }
        match (self.origin, other.origin) {
            (SpinOrigin::Vertex(_), SpinOrigin::Vertex(_)) => self
                .value
                .partial_cmp(&other.value)
                .unwrap_or(Ordering::Equal)
                .then(self.origin.cmp(&other.origin)),
            _ => self.origin.cmp(&other.origin),
        }
    }
}

impl<S: Scalar> PartialOrd for Spin<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Middle of three ordered elements.
fn middle_of<T: Ord + Copy>(a: T, b: T, c: T) -> T {
    if a <= b {
        if b <= c {
            b
        } else if a <= c {
            c
        } else {
            a
        }
    } else if a <= c {
        a
    } else if b <= c {
        c
    } else {
        b
    }
}

/// Median update: the middle of the three neighbor spins. The current spin
/// does not enter the rule.
pub fn median_update<S: Scalar>(_current: Spin<S>, n1: Spin<S>, n2: Spin<S>, n3: Spin<S>) -> Spin<S> {
    middle_of(n1, n2, n3)
}

/// Zero-temperature Glauber update: flip iff the local energy
/// `-s * (n1 + n2 + n3)` is positive.
pub fn discrete_update(current: i8, n1: i8, n2: i8, n3: i8) -> i8 {
    let energy = -i32::from(current) * (i32::from(n1) + i32::from(n2) + i32::from(n3));
    if energy > 0 {
        -current
    } else {
        current
    }
}

/// `+1` where the value is at most `p`, `-1` elsewhere.
pub fn project<S: Scalar>(config: &[Spin<S>], p: S) -> Vec<i8> {
    config.iter().map(|s| s.project(p)).collect()
}

/// Treatment of the vertices just outside the simulated window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryCondition {
    /// Outside neighbors are ignored: a boundary vertex with one in-window
    /// neighbor copies it; with two it takes the median of those two and its
    /// own spin.
    Free,
    /// Outside vertices keep their initial spins forever.
    FrozenInitial,
    /// Outside vertices hold the low sentinel (below every uniform).
    FrozenLow,
    /// Outside vertices hold the high sentinel (above every uniform).
    FrozenHigh,
    /// Outside vertices hold the given `±1` spin (discrete runs only).
    FrozenDiscrete(i8),
}

impl BoundaryCondition {
    fn outer_handle(self, index: u32) -> Option<u32> {
        match self {
            BoundaryCondition::Free => None,
            BoundaryCondition::FrozenInitial => Some(index),
            BoundaryCondition::FrozenLow | BoundaryCondition::FrozenDiscrete(1) => Some(LOW),
            BoundaryCondition::FrozenHigh | BoundaryCondition::FrozenDiscrete(_) => Some(HIGH),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Mode<S> {
    Median,
    /// Majority dynamics with initial density `p` of `+1` spins.
    Discrete(S),
}

/// Value held permanently by a pinned vertex.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pin {
    /// Below every uniform: `+1` under every projection.
    Low,
    /// Above every uniform: `-1` under every projection.
    High,
}

impl Pin {
    fn handle(self) -> u32 {
        match self {
            Pin::Low => LOW,
            Pin::High => HIGH,
        }
    }

    fn sign(self) -> i8 {
        match self {
            Pin::Low => 1,
            Pin::High => -1,
        }
    }
}

/// Everything about a run except the randomness and the window.
#[derive(Clone, Debug)]
pub struct RunSpec<S> {
    pub bc: BoundaryCondition,
    pub mode: Mode<S>,
    pub horizon: S,
    pub max_events: u64,
    pub record_flips: bool,
    pub pins: Vec<(VertexId, Pin)>,
}

impl<S: Scalar> RunSpec<S> {
    pub fn new(bc: BoundaryCondition, mode: Mode<S>, horizon: S) -> Self {
        RunSpec { bc, mode, horizon, max_events: u64::MAX, record_flips: true, pins: Vec::new() }
    }

    pub fn without_flip_log(mut self) -> Self {
        self.record_flips = false;
        self
    }

    pub fn with_max_events(mut self, max_events: u64) -> Self {
        self.max_events = max_events;
        self
    }

    pub fn with_pin(mut self, v: VertexId, pin: Pin) -> Self {
        self.pins.push((v, pin));
        self
    }
}

/// One update that changed a spin. Spins are origin handles (see [`Trajectory::spin`]).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlipRecord<S> {
    pub vertex: u32,
    pub time: S,
    pub old: u32,
    pub new: u32,
    pub neighbors: [u32; 3],
}

/// Initial uniforms of every window vertex, indexed like the domain.
#[derive(Clone, Debug)]
pub struct Landscape<S> {
    pub domain: Arc<Domain>,
    pub values: Vec<S>,
    // position of each handle in (value, address) order, starting at 1
    order: Vec<u32>,
}

impl<S: Scalar> Landscape<S> {
    pub fn new(manifest: &SeedManifest, domain: Arc<Domain>) -> Self {
        let values: Vec<S> = domain.ids().iter().map(|v| initial_uniform(manifest, v)).collect();
        let mut sorted: Vec<u32> = (0..values.len() as u32).collect();
        sorted.sort_unstable_by(|&a, &b| {
            let (va, vb) = (values[a as usize], values[b as usize]);
            va.partial_cmp(&vb)
                .unwrap_or(Ordering::Equal)
                .then_with(|| domain.id(a).cmp(&domain.id(b)))
        });
        let mut order = vec![0u32; values.len()];
        for (r, &h) in sorted.iter().enumerate() {
            order[h as usize] = r as u32 + 1;
        }
        Landscape { domain, values, order }
    }

    #[inline(always)]
    fn key(&self, h: u32) -> u32 {
        match h {
            LOW => 0,
            HIGH => u32::MAX,
            _ => self.order[h as usize],
        }
    }

    #[inline]
    pub fn value(&self, h: u32) -> S {
        match h {
            LOW => -S::one(),
            HIGH => S::one() + S::one(),
            _ => self.values[h as usize],
        }
    }

    /// Strict order on handles: value, then origin address.
    #[inline]
    pub fn less(&self, a: u32, b: u32) -> bool {
        self.key(a) < self.key(b)
    }

    #[inline]
    pub fn le(&self, a: u32, b: u32) -> bool {
        a == b || self.less(a, b)
    }

    #[inline]
    pub fn median(&self, a: u32, b: u32, c: u32) -> u32 {
        if a == b || a == c {
            return a;
        }
        if b == c {
            return b;
        }
        let (ka, kb, kc) = (self.key(a), self.key(b), self.key(c));
        if ka < kb {
            if kb < kc {
                b
            } else if ka < kc {
                c
            } else {
                a
            }
        } else if ka < kc {
            a
        } else if kb < kc {
            c
        } else {
            b
        }
    }

    /// `+1` if the handle's value is at most `p`.
    #[inline]
    pub fn project(&self, h: u32, p: S) -> i8 {
        match h {
            LOW => 1,
            HIGH => -1,
            _ => {
                if self.values[h as usize] <= p {
                    1
                } else {
                    -1
                }
            }
        }
    }

    pub fn spin(&self, h: u32) -> Spin<S> {
        match h {
            LOW => Spin::low(),
            HIGH => Spin::high(),
            _ => Spin::new(self.values[h as usize], self.domain.id(h)),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Ring<S> {
    time: S,
    rank: u32,
    vertex: u32,
}

impl<S: Scalar> Ring<S> {
    #[inline(always)]
    fn before(&self, other: &Self) -> bool {
        self.time < other.time || (self.time == other.time && self.rank < other.rank)
    }
}

/// Sort rings with times in `(start, end]`: distribute into buckets by time,
/// then insertion-sort each bucket. Ring times are close to uniform inside a
/// slab, so buckets hold a handful of rings.
fn bucket_sort<S: Scalar>(batch: &mut Vec<Ring<S>>, scratch: &mut Vec<Ring<S>>, start: S, end: S) {
    let n = batch.len();
    if n < 2 {
        return;
    }
    let buckets = (n / 2).max(1);
    let scale = S::from_f64_lossy(buckets as f64) / (end - start);
    let index = |r: &Ring<S>| -> usize { ((r.time - start) * scale).to_usize().unwrap_or(0).min(buckets - 1) };
    let mut offsets = vec![0u32; buckets + 1];
    for r in batch.iter() {
        offsets[index(r) + 1] += 1;
    }
    for b in 0..buckets {
        offsets[b + 1] += offsets[b];
    }
    scratch.clear();
    scratch.resize(n, batch[0]);
    let mut fill = offsets.clone();
    for r in batch.iter() {
        let b = index(r);
        scratch[fill[b] as usize] = *r;
        fill[b] += 1;
    }
    for b in 0..buckets {
        let (lo, hi) = (offsets[b] as usize, offsets[b + 1] as usize);
        for k in lo + 1..hi {
            let item = scratch[k];
            let mut j = k;
            while j > lo && item.before(&scratch[j - 1]) {
                scratch[j] = scratch[j - 1];
                j -= 1;
            }
            scratch[j] = item;
        }
    }
    std::mem::swap(batch, scratch);
}

/// Width of the time slabs in which rings are batched and sorted.
const SLAB: f64 = 1.0;

/// Global time-ordered stream of the rings of all active inner vertices.
/// Simultaneous rings are ordered by lexicographic vertex address.
///
/// Rings are produced one time slab at a time: every clock contributes its
/// rings inside the slab, and the batch is sorted.
pub struct RingSchedule<S> {
    active: Vec<u32>,
    ranks: Vec<u32>,
    clocks: Vec<ScalarClock<S>>,
    // first ring of each clock not yet batched
    pending: Vec<S>,
    batch: Vec<Ring<S>>,
    scratch: Vec<Ring<S>>,
    pos: usize,
    covered: S,
}

impl<S: Scalar> RingSchedule<S> {
    /// Rings strictly after `start` of every inner vertex not listed in `skip`.
    pub fn new(manifest: &SeedManifest, domain: &Domain, start: S, skip: &[u32]) -> Self {
        let n = domain.inner_len();
        let mut clocks = Vec::with_capacity(n);
        let mut pending = Vec::with_capacity(n);
        let mut active = Vec::with_capacity(n);
        for i in 0..n as u32 {
            let mut clock = ScalarClock::for_vertex(manifest, &domain.id(i));
            let mut t = clock.next_ring();
            while t <= start {
                t = clock.next_ring();
            }
            if !skip.contains(&i) {
                active.push(i);
            }
            clocks.push(clock);
            pending.push(t);
        }
        RingSchedule {
            active,
            ranks: (0..n as u32).map(|i| domain.rank(i)).collect(),
            clocks,
            pending,
            batch: Vec::new(),
            scratch: Vec::new(),
            pos: 0,
            covered: start,
        }
    }

    fn fill(&mut self, end: S) {
        self.batch.clear();
        self.pos = 0;
        for &v in &self.active {
            let i = v as usize;
            while self.pending[i] <= end {
                self.batch.push(Ring { time: self.pending[i], rank: self.ranks[i], vertex: v });
                self.pending[i] = self.clocks[i].next_ring();
            }
        }
        bucket_sort(&mut self.batch, &mut self.scratch, self.covered, end);
        self.covered = end;
    }

    /// Next ring at or before `horizon`.
    #[inline]
    pub fn pop_until(&mut self, horizon: S) -> Option<(S, u32)> {
        loop {
            if let Some(r) = self.batch.get(self.pos) {
                if r.time > horizon {
                    return None;
                }
                self.pos += 1;
                return Some((r.time, r.vertex));
            }
            if self.covered >= horizon {
                return None;
            }
            let step = self.covered + S::from_f64_lossy(SLAB);
            self.fill(if step < horizon { step } else { horizon });
        }
    }
}

/// One configuration of the median process on a window, with the outer
/// layer materialized after the inner vertices.
#[derive(Clone, Debug)]
pub struct Field {
    full: Vec<u32>,
    inner: usize,
    bc: BoundaryCondition,
}

impl Field {
    fn new(domain: &Domain, bc: BoundaryCondition, init: Vec<u32>) -> Self {
        debug_assert_eq!(init.len(), domain.inner_len());
        let inner = init.len();
        let mut full = init;
        full.extend((inner as u32..domain.total_len() as u32).map(|n| bc.outer_handle(n).unwrap_or(n)));
        Field { full, inner, bc }
    }

    /// Current handles of the inner vertices.
    #[inline]
    pub fn state(&self) -> &[u32] {
        &self.full[..self.inner]
    }

    /// Effective neighbor spins of `v` under the boundary condition.
    #[inline]
    fn neighbor_spins(&self, domain: &Domain, v: u32) -> [u32; 3] {
        let nb = domain.neighbors(v);
        if self.bc != BoundaryCondition::Free {
            return nb.map(|n| self.full[n as usize]);
        }
        let inner = self.inner as u32;
        let got = nb.map(|n| (n < inner).then(|| self.full[n as usize]));
        if got.iter().all(Option::is_some) {
            return got.map(Option::unwrap);
        }
        // first missing neighbor copies the first present one, the rest
        // copy the vertex itself
        let own = self.full[v as usize];
        let present = got.iter().flatten().next().copied();
        let mut copied = false;
        got.map(|h| match h {
            Some(h) => h,
            None if !copied && present.is_some() => {
                copied = true;
                present.unwrap()
            }
            None => own,
        })
    }

    /// Apply a ring at `v`. Returns `(old, new, neighbors)` when the spin changes.
    #[inline]
    fn ring<S: Scalar>(&mut self, land: &Landscape<S>, v: u32) -> Option<(u32, u32, [u32; 3])> {
        let nb = self.neighbor_spins(&land.domain, v);
        let new = land.median(nb[0], nb[1], nb[2]);
        let old = self.full[v as usize];
        if new != old {
            self.full[v as usize] = new;
            Some((old, new, nb))
        } else {
            None
        }
    }
}

/// Several median-process configurations driven by one set of clocks.
///
/// Every configuration sees exactly the same ring sequence, which is what
/// coupling arguments (projection, attractiveness, sandwiching) need.
pub struct Coupled<S> {
    pub land: Arc<Landscape<S>>,
    pub fields: Vec<Field>,
    schedule: RingSchedule<S>,
    pub time: S,
    pub events: u64,
}

/// An update seen by [`Coupled::advance`]: ring time and vertex.
#[derive(Clone, Copy, Debug)]
pub struct RingEvent<S> {
    pub time: S,
    pub vertex: u32,
}

impl<S: Scalar> Coupled<S> {
    /// `initial[k]` is the starting configuration of field `k` under `bcs[k]`.
    pub fn new(
        manifest: &SeedManifest,
        land: Arc<Landscape<S>>,
        start: S,
        configs: Vec<(BoundaryCondition, Vec<u32>)>,
        pinned: &[u32],
    ) -> Self {
        let schedule = RingSchedule::new(manifest, &land.domain, start, pinned);
        let fields = configs.into_iter().map(|(bc, init)| Field::new(&land.domain, bc, init)).collect();
        Coupled { land, fields, schedule, time: start, events: 0 }
    }

    /// Process all rings up to `horizon`. `on_event` is called after every
    /// ring with the per-field changes (`None` where the spin did not change).
    pub fn advance<F>(&mut self, horizon: S, max_events: u64, mut on_event: F) -> Result<()>
    where
        F: FnMut(RingEvent<S>, &[Option<(u32, u32, [u32; 3])>], &[Field]),
    {
        let mut changes = vec![None; self.fields.len()];
        while let Some((t, v)) = self.schedule.pop_until(horizon) {
            if self.events >= max_events {
                return Err(Error::EventBudgetExceeded { budget: max_events });
            }
            self.events += 1;
            for (k, f) in self.fields.iter_mut().enumerate() {
                changes[k] = f.ring(&self.land, v);
            }
            on_event(RingEvent { time: t, vertex: v }, &changes, &self.fields);
        }
        self.time = horizon;
        Ok(())
    }
}

/// Initial handles of the inner vertices: every vertex carries its own value,
/// pinned vertices carry their pin.
fn initial_handles(domain: &Domain, pins: &[(u32, Pin)]) -> Vec<u32> {
    let mut h: Vec<u32> = (0..domain.inner_len() as u32).collect();
    for &(i, pin) in pins {
        h[i as usize] = pin.handle();
    }
    h
}

fn resolve_pins(domain: &Domain, pins: &[(VertexId, Pin)]) -> Result<Vec<(u32, Pin)>> {
    pins.iter()
        .map(|(v, pin)| match domain.index_of(v) {
            Some(i) if domain.is_inner(i) => Ok((i, *pin)),
            _ => Err(Error::InvalidArgument(format!("pinned vertex {v:?} is not inside the window"))),
        })
        .collect()
}

/// Full record of one run on one window with one boundary condition.
#[derive(Clone, Debug)]
pub struct Trajectory<S> {
    pub manifest: SeedManifest,
    pub land: Arc<Landscape<S>>,
    pub bc: BoundaryCondition,
    pub mode: Mode<S>,
    pub horizon: S,
    pub pins: Vec<(u32, Pin)>,
    pub initial: Vec<u32>,
    pub final_state: Vec<u32>,
    pub flips: Vec<FlipRecord<S>>,
    pub flips_recorded: bool,
    pub events: u64,
}

/// Run the median process (or its projection) on `ball` up to `horizon`.
pub fn run<S: Scalar>(
    manifest: &SeedManifest,
    ball: &Ball,
    bc: BoundaryCondition,
    mode: Mode<S>,
    horizon: S,
) -> Result<Trajectory<S>> {
    let domain = Arc::new(Domain::from_ball(ball));
    run_on(manifest, domain, &RunSpec::new(bc, mode, horizon))
}

/// Run on an arbitrary window.
pub fn run_on<S: Scalar>(manifest: &SeedManifest, domain: Arc<Domain>, spec: &RunSpec<S>) -> Result<Trajectory<S>> {
    let land = Arc::new(Landscape::new(manifest, domain));
    run_in(manifest, land, spec)
}

/// Run with precomputed initial uniforms.
pub fn run_in<S: Scalar>(manifest: &SeedManifest, land: Arc<Landscape<S>>, spec: &RunSpec<S>) -> Result<Trajectory<S>> {
    validate(spec)?;
    let pins = resolve_pins(&land.domain, &spec.pins)?;
    let initial = initial_handles(&land.domain, &pins);
    let traj = Trajectory {
        manifest: manifest.clone(),
        land,
        bc: spec.bc,
        mode: spec.mode,
        horizon: S::zero(),
        pins,
        final_state: initial.clone(),
        initial,
        flips: Vec::new(),
        flips_recorded: spec.record_flips,
        events: 0,
    };
    traj.continue_to(spec.horizon, spec.max_events)
}

fn validate<S: Scalar>(spec: &RunSpec<S>) -> Result<()> {
    if !(spec.horizon >= S::zero()) {
        return Err(Error::InvalidArgument("horizon must be nonnegative".into()));
    }
    match (spec.bc, spec.mode) {
        (BoundaryCondition::FrozenDiscrete(s), _) if s != 1 && s != -1 => {
            Err(Error::InvalidArgument(format!("discrete boundary spin must be +1 or -1, got {s}")))
        }
        (BoundaryCondition::FrozenDiscrete(_), Mode::Median) => Err(Error::InvalidArgument(
            "a discrete boundary condition needs a discrete run".into(),
        )),
        (_, Mode::Discrete(p)) if !(p >= S::zero() && p <= S::one()) => {
            Err(Error::InvalidArgument("density p must lie in [0, 1]".into()))
        }
        _ => Ok(()),
    }
}

impl<S: Scalar> Trajectory<S> {
    pub fn domain(&self) -> &Domain {
        &self.land.domain
    }

    /// Resolve a handle to a spin.
    pub fn spin(&self, h: u32) -> Spin<S> {
        self.land.spin(h)
    }

    /// Continue the run from its final configuration up to `horizon`.
    pub fn continue_to(self, horizon: S, max_events: u64) -> Result<Trajectory<S>> {
        if horizon < self.horizon {
            return Err(Error::InvalidArgument("cannot continue to an earlier horizon".into()));
        }
        let pinned: Vec<u32> = self.pins.iter().map(|p| p.0).collect();
        let mut sim = Coupled::new(
            &self.manifest,
            self.land.clone(),
            self.horizon,
            vec![(self.bc, self.final_state.clone())],
            &pinned,
        );
        let mut flips = self.flips;
        let record = self.flips_recorded;
        let budget = max_events.saturating_sub(self.events);
        sim.advance(horizon, budget, |ev, changes, _| {
            if record {
                if let Some((old, new, nb)) = changes[0] {
                    flips.push(FlipRecord { vertex: ev.vertex, time: ev.time, old, new, neighbors: nb });
                }
            }
        })
        .map_err(|_| Error::EventBudgetExceeded { budget: max_events })?;
        let Coupled { mut fields, events, .. } = sim;
        Ok(Trajectory {
            final_state: fields.swap_remove(0).state().to_vec(),
            flips,
            horizon,
            events: self.events + events,
            ..self
        })
    }

    /// Final spin at an inner vertex.
    pub fn final_spin(&self, v: &VertexId) -> Option<Spin<S>> {
        let i = self.domain().index_of(v)?;
        self.domain().is_inner(i).then(|| self.spin(self.final_state[i as usize]))
    }

    /// Final configuration as spins, indexed like the domain's inner vertices.
    pub fn final_configuration(&self) -> Vec<Spin<S>> {
        self.final_state.iter().map(|&h| self.spin(h)).collect()
    }

    pub fn initial_configuration(&self) -> Vec<Spin<S>> {
        self.initial.iter().map(|&h| self.spin(h)).collect()
    }

    /// Configuration (handles) at time `t <= horizon`, replayed from the flip log.
    pub fn state_at(&self, t: S) -> Vec<u32> {
        assert!(self.flips_recorded, "replay needs a flip log");
        let mut state = self.initial.clone();
        for f in &self.flips {
            if f.time > t {
                break;
            }
            state[f.vertex as usize] = f.new;
        }
        state
    }

    /// The projected (majority-dynamics) view. Uses the mode's `p`, or the
    /// given one for median runs.
    pub fn project(&self, p: S) -> DiscreteTrajectory<S> {
        let land = &self.land;
        let initial: Vec<i8> = self.initial.iter().map(|&h| land.project(h, p)).collect();
        let final_config: Vec<i8> = self.final_state.iter().map(|&h| land.project(h, p)).collect();
        let flips = self
            .flips
            .iter()
            .filter_map(|f| {
                let old = land.project(f.old, p);
                let new = land.project(f.new, p);
                (old != new).then(|| DiscreteFlip {
                    vertex: f.vertex,
                    time: f.time,
                    old,
                    new,
                    neighbors: f.neighbors.map(|h| land.project(h, p)),
                })
            })
            .collect();
        DiscreteTrajectory {
            domain: land.domain.clone(),
            p,
            horizon: self.horizon,
            initial,
            final_config,
            flips,
            flips_recorded: self.flips_recorded,
            events: self.events,
        }
    }

    /// The majority-dynamics trajectory of a `Discrete(p)` run.
    pub fn discrete(&self) -> Option<DiscreteTrajectory<S>> {
        match self.mode {
            Mode::Discrete(p) => Some(self.project(p)),
            Mode::Median => None,
        }
    }

    /// Flip times of one inner vertex.
    pub fn flip_times(&self, i: u32) -> Vec<S> {
        self.flips.iter().filter(|f| f.vertex == i).map(|f| f.time).collect()
    }
}

/// A `±1` flip.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscreteFlip<S> {
    pub vertex: u32,
    pub time: S,
    pub old: i8,
    pub new: i8,
    pub neighbors: [i8; 3],
}

#[derive(Clone, Debug)]
pub struct DiscreteTrajectory<S> {
    pub domain: Arc<Domain>,
    pub p: S,
    pub horizon: S,
    pub initial: Vec<i8>,
    pub final_config: Vec<i8>,
    pub flips: Vec<DiscreteFlip<S>>,
    pub flips_recorded: bool,
    pub events: u64,
}

impl<S: Scalar> DiscreteTrajectory<S> {
    pub fn final_spin(&self, v: &VertexId) -> Option<i8> {
        let i = self.domain.index_of(v)?;
        self.domain.is_inner(i).then(|| self.final_config[i as usize])
    }

    /// Configuration at time `t`, replayed from the flip log.
    pub fn config_at(&self, t: S) -> Vec<i8> {
        let mut c = self.initial.clone();
        for f in &self.flips {
            if f.time > t {
                break;
            }
            c[f.vertex as usize] = f.new;
        }
        c
    }
}

/// A `±1` configuration on a window with the outer layer materialized.
#[derive(Clone, Debug)]
pub struct DiscreteField {
    full: Vec<i8>,
    inner: usize,
    bc: BoundaryCondition,
}

impl DiscreteField {
    /// `initial` covers inner vertices and the outer layer.
    pub fn new(domain: &Domain, bc: BoundaryCondition, initial: &[i8]) -> Result<Self> {
        if initial.len() != domain.total_len() {
            return Err(Error::InvalidArgument("initial configuration must cover the outer layer".into()));
        }
        let inner = domain.inner_len();
        let mut full = initial.to_vec();
        for s in &mut full[inner..] {
            *s = match bc {
                BoundaryCondition::Free | BoundaryCondition::FrozenInitial => *s,
                BoundaryCondition::FrozenLow => 1,
                BoundaryCondition::FrozenHigh => -1,
                BoundaryCondition::FrozenDiscrete(v) => v,
            };
        }
        Ok(DiscreteField { full, inner, bc })
    }

    #[inline]
    pub fn state(&self) -> &[i8] {
        &self.full[..self.inner]
    }

    fn set(&mut self, i: u32, s: i8) {
        self.full[i as usize] = s;
    }

    #[inline]
    fn neighbor_spins(&self, domain: &Domain, v: u32) -> [i8; 3] {
        let nb = domain.neighbors(v);
        if self.bc != BoundaryCondition::Free {
            return nb.map(|n| self.full[n as usize]);
        }
        let inner = self.inner as u32;
        let got = nb.map(|n| (n < inner).then(|| self.full[n as usize]));
        let own = self.full[v as usize];
        let present = got.iter().flatten().next().copied();
        let mut copied = false;
        got.map(|s| match s {
            Some(s) => s,
            None if !copied && present.is_some() => {
                copied = true;
                present.unwrap()
            }
            None => own,
        })
    }

    /// Apply a ring at `v`; returns `(old, new, neighbor spins)` on a flip.
    #[inline]
    pub fn ring(&mut self, domain: &Domain, v: u32) -> Option<(i8, i8, [i8; 3])> {
        let nb = self.neighbor_spins(domain, v);
        let own = self.full[v as usize];
        let new = discrete_update(own, nb[0], nb[1], nb[2]);
        (new != own).then(|| {
            self.full[v as usize] = new;
            (own, new, nb)
        })
    }
}

/// Evolve several `±1` configurations with the energy rule under one set of
/// clocks. `on_event(time, vertex, fields)` runs after every ring.
pub fn run_discrete_lockstep<S, F>(
    clocks: &SeedManifest,
    domain: &Domain,
    fields: &mut [DiscreteField],
    horizon: S,
    pins: &[(u32, Pin)],
    mut on_event: F,
) -> u64
where
    S: Scalar,
    F: FnMut(S, u32, &[Option<(i8, i8, [i8; 3])>], &[DiscreteField]),
{
    for f in fields.iter_mut() {
        for &(i, pin) in pins {
            f.set(i, pin.sign());
        }
    }
    let pinned: Vec<u32> = pins.iter().map(|p| p.0).collect();
    let mut schedule = RingSchedule::new(clocks, domain, S::zero(), &pinned);
    let mut changes = vec![None; fields.len()];
    let mut events = 0;
    while let Some((t, v)) = schedule.pop_until(horizon) {
        events += 1;
        for (k, f) in fields.iter_mut().enumerate() {
            changes[k] = f.ring(domain, v);
        }
        on_event(t, v, &changes, fields);
    }
    events
}

/// Majority dynamics evolved directly with the energy rule, from an explicit
/// `±1` configuration over all window vertices (inner and outer layer).
pub fn run_discrete_direct<S: Scalar>(
    clocks: &SeedManifest,
    domain: Arc<Domain>,
    bc: BoundaryCondition,
    initial: &[i8],
    horizon: S,
    pins: &[(VertexId, Pin)],
) -> Result<DiscreteTrajectory<S>> {
    let pins = resolve_pins(&domain, pins)?;
    let mut fields = [DiscreteField::new(&domain, bc, initial)?];
    for &(i, pin) in &pins {
        fields[0].set(i, pin.sign());
    }
    let start = fields[0].state().to_vec();
    let mut flips = Vec::new();
    let events = run_discrete_lockstep(clocks, &domain, &mut fields, horizon, &pins, |t, v, changes, _| {
        if let Some((old, new, neighbors)) = changes[0] {
            flips.push(DiscreteFlip { vertex: v, time: t, old, new, neighbors });
        }
    });
    let [field] = fields;
    Ok(DiscreteTrajectory {
        domain,
        p: S::nan(),
        horizon,
        initial: start,
        final_config: field.state().to_vec(),
        flips,
        flips_recorded: true,
        events,
    })
}

/// First point where two discrete trajectories differ.
#[derive(Clone, Debug, PartialEq)]
pub struct Discrepancy<S> {
    pub vertex: VertexId,
    pub time: Option<S>,
    pub what: String,
}

/// Compare two discrete trajectories event for event.
pub fn first_discrepancy<S: Scalar>(a: &DiscreteTrajectory<S>, b: &DiscreteTrajectory<S>) -> Option<Discrepancy<S>> {
    let d = &a.domain;
    for (i, (x, y)) in a.initial.iter().zip(&b.initial).enumerate() {
        if x != y {
            return Some(Discrepancy { vertex: d.id(i as u32), time: None, what: "initial spin".into() });
        }
    }
    for (fa, fb) in a.flips.iter().zip(&b.flips) {
        if fa.vertex != fb.vertex || fa.time != fb.time || fa.new != fb.new {
            let (first, t) = if fa.time <= fb.time { (fa.vertex, fa.time) } else { (fb.vertex, fb.time) };
            return Some(Discrepancy { vertex: d.id(first), time: Some(t), what: "flip".into() });
        }
    }
    if a.flips.len() != b.flips.len() {
        let extra = if a.flips.len() > b.flips.len() { &a.flips[b.flips.len()] } else { &b.flips[a.flips.len()] };
        return Some(Discrepancy { vertex: d.id(extra.vertex), time: Some(extra.time), what: "extra flip".into() });
    }
    None
}

/// Outcome of a projection-commutation check.
#[derive(Clone, Debug)]
pub struct CommutationReport<S> {
    pub holds: bool,
    pub discrepancy: Option<Discrepancy<S>>,
    pub median_flips: usize,
    pub discrete_flips: usize,
}

/// Project the median run at `p` and compare it with majority dynamics
/// started from the projected initial configuration, event for event.
/// `clocks` drives the direct discrete run (normally the same manifest).
pub fn check_commutation_with<S: Scalar>(
    manifest: &SeedManifest,
    clocks: &SeedManifest,
    ball: &Ball,
    p: S,
    horizon: S,
) -> Result<CommutationReport<S>> {
    let domain = Arc::new(Domain::from_ball(ball));
    let land = Arc::new(Landscape::new(manifest, domain.clone()));
    let median = run_in(manifest, land.clone(), &RunSpec::new(BoundaryCondition::FrozenInitial, Mode::Median, horizon))?;
    let projected = median.project(p);
    let start: Vec<i8> = (0..domain.total_len() as u32).map(|h| land.project(h, p)).collect();
    let direct = run_discrete_direct(clocks, domain, BoundaryCondition::FrozenInitial, &start, horizon, &[])?;
    let discrepancy = first_discrepancy(&projected, &direct).or_else(|| {
        projected.final_config.iter().zip(&direct.final_config).position(|(a, b)| a != b).map(|i| Discrepancy {
            vertex: projected.domain.id(i as u32),
            time: None,
            what: "final spin".into(),
        })
    });
    Ok(CommutationReport {
        holds: discrepancy.is_none(),
        discrepancy,
        median_flips: projected.flips.len(),
        discrete_flips: direct.flips.len(),
    })
}

pub fn check_commutation<S: Scalar>(manifest: &SeedManifest, ball: &Ball, p: S, horizon: S) -> Result<CommutationReport<S>> {
    check_commutation_with(manifest, manifest, ball, p, horizon)
}

/// Run two ordered `±1` configurations with the same clocks and check that
/// the order holds after every ring. Configurations cover inner and outer
/// vertices of the ball's window.
pub fn check_attractiveness<S: Scalar>(
    manifest: &SeedManifest,
    ball: &Ball,
    bc: BoundaryCondition,
    lower: &[i8],
    upper: &[i8],
    horizon: S,
) -> Result<bool> {
    let domain = Arc::new(Domain::from_ball(ball));
    if lower.len() != domain.total_len() || upper.len() != domain.total_len() {
        return Err(Error::InvalidArgument("configurations must cover the window and its outer layer".into()));
    }
    if lower.iter().zip(upper).any(|(a, b)| a > b) {
        return Err(Error::InvalidArgument("initial configurations are not ordered".into()));
    }
    let mut fields = [DiscreteField::new(&domain, bc, lower)?, DiscreteField::new(&domain, bc, upper)?];
    let mut ordered = true;
    run_discrete_lockstep(manifest, &domain, &mut fields, horizon, &[], |_, v, _, f| {
        ordered &= f[0].state()[v as usize] <= f[1].state()[v as usize];
    });
    Ok(ordered)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spin(v: f64, o: &str) -> Spin<f64> {
        Spin::new(v, o.parse().unwrap())
    }

    #[test]
    fn median_of_three_values() {
        let (a, b, c) = (spin(0.2, "0"), spin(0.7, "1"), spin(0.4, "2"));
        let m = median_update(spin(0.9, ""), a, b, c);
        assert_eq!(m, c);
        assert_eq!(m.origin_vertex(), Some("2".parse().unwrap()));
    }

    #[test]
    fn duplicated_value_is_the_median() {
        let a = spin(0.2, "0");
        for third in [spin(0.1, "1"), spin(0.9, "1"), Spin::low(), Spin::high()] {
            assert_eq!(median_update(spin(0.5, ""), a, a, third), a);
            assert_eq!(median_update(spin(0.5, ""), third, a, a), a);
        }
    }

    #[test]
    fn equal_values_break_ties_by_origin() {
        let a = spin(0.5, "0");
        let b = spin(0.5, "1");
        assert!(a < b);
        assert_ne!(a, b);
        assert_eq!(median_update(a, b, a, spin(0.5, "2")), b);
    }

    #[test]
    fn discrete_update_follows_energy_rule() {
        assert_eq!(discrete_update(1, 1, -1, -1), -1);
        assert_eq!(discrete_update(-1, -1, -1, 1), -1);
        assert_eq!(discrete_update(-1, 1, 1, 1), 1);
        assert_eq!(discrete_update(1, 1, 1, 1), 1);
    }

    #[test]
    fn discrete_update_is_projected_median() {
        // every sign pattern, realized with values on either side of p = 0.5
        for bits in 0..16u8 {
            let s: Vec<i8> = (0..4).map(|k| if bits >> k & 1 == 1 { 1 } else { -1 }).collect();
            let val = |k: usize| if s[k] == 1 { 0.1 + 0.1 * k as f64 } else { 0.6 + 0.1 * k as f64 };
            let names = ["", "0", "1", "2"];
            let sp: Vec<Spin<f64>> = (0..4).map(|k| spin(val(k), names[k])).collect();
            let m = median_update(sp[0], sp[1], sp[2], sp[3]);
            assert_eq!(m.project(0.5), discrete_update(s[0], s[1], s[2], s[3]), "pattern {s:?}");
        }
    }

    #[test]
    fn projection_thresholds() {
        let c = [spin(0.3, "0"), spin(0.6, "1")];
        assert_eq!(project(&c, 0.5), vec![1, -1]);
        assert_eq!(project(&c, 1.0), vec![1, 1]);
        assert_eq!(project(&c, 0.0), vec![-1, -1]);
    }

    #[test]
    fn sentinels_bracket_every_value() {
        let x = spin(1e-300, "0");
        let y = spin(1.0 - 1e-16, "1");
        assert!(Spin::low() < x && y < Spin::high());
        assert_eq!(Spin::<f64>::low().project(0.0), 1);
        assert_eq!(Spin::<f64>::high().project(1.0), -1);
    }

    #[test]
    fn zero_horizon_keeps_initial_configuration() {
        let m = SeedManifest::new(1);
        let t = run::<f64>(&m, &Ball::around_root(3), BoundaryCondition::FrozenInitial, Mode::Median, 0.0).unwrap();
        assert!(t.flips.is_empty());
        assert_eq!(t.final_state, t.initial);
        assert_eq!(t.events, 0);
    }

    #[test]
    fn negative_horizon_rejected() {
        let m = SeedManifest::new(1);
        let r = run::<f64>(&m, &Ball::around_root(1), BoundaryCondition::FrozenInitial, Mode::Median, -1.0);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn discrete_boundary_needs_discrete_mode() {
        let m = SeedManifest::new(1);
        let r = run::<f64>(&m, &Ball::around_root(1), BoundaryCondition::FrozenDiscrete(1), Mode::Median, 1.0);
        assert!(r.is_err());
        let ok = run::<f64>(&m, &Ball::around_root(1), BoundaryCondition::FrozenDiscrete(-1), Mode::Discrete(0.5), 1.0);
        assert!(ok.is_ok());
    }

    #[test]
    fn flips_happen_at_rings_and_follow_the_median() {
        let m = SeedManifest::new(17);
        let t = run::<f64>(&m, &Ball::around_root(5), BoundaryCondition::FrozenInitial, Mode::Median, 6.0).unwrap();
        assert!(!t.flips.is_empty());
        let d = t.domain();
        for f in &t.flips {
            let rings = crate::randomness::rings::<f64>(&m, &d.id(f.vertex), 6.0);
            assert!(rings.contains(&f.time));
            assert_eq!(f.new, t.land.median(f.neighbors[0], f.neighbors[1], f.neighbors[2]));
        }
        assert!(t.flips.windows(2).all(|w| w[0].time <= w[1].time));
    }

    #[test]
    fn restart_from_log_matches_direct_run() {
        let m = SeedManifest::new(23);
        let ball = Ball::around_root(6);
        let direct = run::<f64>(&m, &ball, BoundaryCondition::FrozenInitial, Mode::Median, 10.0).unwrap();
        let half = run::<f64>(&m, &ball, BoundaryCondition::FrozenInitial, Mode::Median, 5.0).unwrap();
        let resumed = half.continue_to(10.0, u64::MAX).unwrap();
        assert_eq!(resumed.final_state, direct.final_state);
        assert_eq!(resumed.flips, direct.flips);
        assert_eq!(resumed.events, direct.events);
    }

    #[test]
    fn replay_from_log_reconstructs_final_state() {
        let m = SeedManifest::new(3);
        let t = run::<f64>(&m, &Ball::around_root(4), BoundaryCondition::FrozenHigh, Mode::Median, 4.0).unwrap();
        assert_eq!(t.state_at(4.0), t.final_state);
        assert_eq!(t.state_at(0.0), t.initial);
    }

    #[test]
    fn commutation_holds_and_negative_control_fails() {
        let m = SeedManifest::new(5);
        let ball = Ball::around_root(6);
        for p in [0.0, 0.3, 0.5, 0.8] {
            let rep = check_commutation(&m, &ball, p, 4.0).unwrap();
            assert!(rep.holds, "p={p}: {:?}", rep.discrepancy);
        }
        let other = SeedManifest::new(6);
        let rep = check_commutation_with(&m, &other, &ball, 0.5, 4.0).unwrap();
        assert!(!rep.holds);
        assert!(rep.discrepancy.is_some());
    }

    #[test]
    fn p_zero_evolution_is_all_minus() {
        let m = SeedManifest::new(9);
        let t = run::<f64>(&m, &Ball::around_root(4), BoundaryCondition::FrozenInitial, Mode::Discrete(0.0), 3.0).unwrap();
        let d = t.discrete().unwrap();
        assert!(d.final_config.iter().all(|&s| s == -1));
        assert!(d.flips.is_empty());
    }

    #[test]
    fn attractiveness_examples() {
        let m = SeedManifest::new(31);
        let ball = Ball::around_root(5);
        let n = Ball::around_root(6).size();
        let land: Landscape<f64> = Landscape::new(&m, Arc::new(Domain::from_ball(&ball)));
        let cfg: Vec<i8> = (0..n as u32).map(|h| land.project(h, 0.5)).collect();
        assert!(check_attractiveness::<f64>(&m, &ball, BoundaryCondition::FrozenInitial, &cfg, &cfg, 5.0).unwrap());
        let minus = vec![-1i8; n];
        assert!(check_attractiveness::<f64>(&m, &ball, BoundaryCondition::FrozenInitial, &minus, &cfg, 5.0).unwrap());
        let mut lowered = cfg.clone();
        if let Some(k) = lowered.iter().position(|&s| s == 1) {
            lowered[k] = -1;
        }
        assert!(check_attractiveness::<f64>(&m, &ball, BoundaryCondition::FrozenInitial, &lowered, &cfg, 5.0).unwrap());
        assert!(check_attractiveness::<f64>(&m, &ball, BoundaryCondition::FrozenInitial, &cfg, &lowered, 5.0).is_err());
    }

    #[test]
    fn all_minus_is_absorbing() {
        let m = SeedManifest::new(2);
        let ball = Ball::around_root(4);
        let domain = Arc::new(Domain::from_ball(&ball));
        let minus = vec![-1i8; domain.total_len()];
        let t = run_discrete_direct::<f64>(&m, domain, BoundaryCondition::FrozenInitial, &minus, 10.0, &[]).unwrap();
        assert!(t.flips.is_empty());
    }

    #[test]
    fn event_budget_is_enforced() {
        let m = SeedManifest::new(2);
        let domain = Arc::new(Domain::from_ball(&Ball::around_root(4)));
        let spec = RunSpec::new(BoundaryCondition::FrozenInitial, Mode::<f64>::Median, 10.0).with_max_events(10);
        assert!(matches!(run_on(&m, domain, &spec), Err(Error::EventBudgetExceeded { .. })));
    }

    #[test]
    fn single_precision_runs_too() {
        let m = SeedManifest::new(12);
        let t = run::<f32>(&m, &Ball::around_root(4), BoundaryCondition::FrozenInitial, Mode::Median, 3.0).unwrap();
        for f in &t.flips {
            assert_eq!(f.new, t.land.median(f.neighbors[0], f.neighbors[1], f.neighbors[2]));
        }
    }

    #[test]
    fn pinned_vertex_never_changes() {
        let m = SeedManifest::new(4);
        let x: VertexId = "0".parse().unwrap();
        let domain = Arc::new(Domain::from_ball(&Ball::around_root(4)));
        let spec = RunSpec::new(BoundaryCondition::FrozenInitial, Mode::Discrete(0.5), 8.0).with_pin(x, Pin::High);
        let t = run_on(&m, domain, &spec).unwrap();
        let d = t.discrete().unwrap();
        assert_eq!(d.final_spin(&x), Some(-1));
        let i = t.domain().index_of(&x).unwrap();
        assert!(t.flips.iter().all(|f| f.vertex != i));
    }

    #[test]
    fn free_boundary_leaves_copy_their_parent() {
        let m = SeedManifest::new(8);
        let t = run::<f64>(&m, &Ball::around_root(3), BoundaryCondition::Free, Mode::Median, 5.0).unwrap();
        let d = t.domain();
        for f in &t.flips {
            if d.depth(f.vertex) == 3 {
                assert_eq!(f.neighbors[0], f.neighbors[1]);
                assert_eq!(f.new, f.neighbors[0]);
            }
        }
    }
}
