//! Monte Carlo estimators with normal-approximation confidence intervals.
//!
//! Replicas are indexed by [`SeedManifest::replica`] and processed in index
//! order, so every estimate is a deterministic function of the manifest.

use std::collections::HashSet;
use std::sync::Arc;

use serde::Serialize;

use crate::analytics::{chain_membership, sign_clusters};
use crate::domain::Domain;
use crate::engine::{
    run_discrete_lockstep, run_in, BoundaryCondition, DiscreteField, Landscape, Mode, Pin, RunSpec, HIGH, LOW,
};
use crate::error::{Error, Result};
use crate::exactness::sandwich_run;
use crate::randomness::{initial_uniform, SeedManifest};
use crate::scalar::Scalar;
use crate::topology::{Ball, VertexId};

/// Batches smaller than this refuse to report.
pub const MIN_REPLICAS: usize = 1000;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// Default p grid: 0.02, 0.04, ..., 0.98.
pub fn default_grid() -> Vec<f64> {
    (1..=49).map(|k| k as f64 / 50.0).collect()
}

/// A Bernoulli estimate with its interval and diagnostic flags.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EstimateWithCI {
    /// Success frequency among the replicas whose outcome was determined.
    pub estimate: f64,
    pub replicas: usize,
    /// `1.96 sqrt(p(1-p)/n)` over the determined replicas.
    pub halfwidth: f64,
    /// Fraction of replicas whose outcome was not determined.
    pub undetermined: f64,
    /// Fraction of replicas whose analysis touched the window boundary.
    pub boundary_contact: f64,
    /// Frequency with undetermined replicas counted as failures.
    pub lower: f64,
    /// Frequency with undetermined replicas counted as successes.
    pub upper: f64,
}

impl EstimateWithCI {
    pub fn bernoulli(successes: usize, undetermined: usize, boundary_contacts: usize, replicas: usize) -> Result<Self> {
        if replicas < MIN_REPLICAS {
            return Err(Error::TooFewReplicas { got: replicas, min: MIN_REPLICAS });
        }
        if successes + undetermined > replicas {
            return Err(Error::InvalidArgument("more outcomes than replicas".into()));
        }
        let determined = replicas - undetermined;
        if determined == 0 {
            return Err(Error::TooManyUndetermined { fraction: 1.0, limit: 1.0 });
        }
        let p = successes as f64 / determined as f64;
        let n = replicas as f64;
        Ok(EstimateWithCI {
            estimate: p,
            replicas,
            halfwidth: Z95 * (p * (1.0 - p) / determined as f64).sqrt(),
            undetermined: undetermined as f64 / n,
            boundary_contact: boundary_contacts as f64 / n,
            lower: successes as f64 / n,
            upper: (successes + undetermined) as f64 / n,
        })
    }

    /// Standard error (`halfwidth / 1.96`).
    pub fn sigma(&self) -> f64 {
        self.halfwidth / Z95
    }

    /// `|a - b|` is within the combined 95% interval.
    pub fn overlaps(&self, other: &EstimateWithCI) -> bool {
        (self.estimate - other.estimate).abs() <= (self.halfwidth.powi(2) + other.halfwidth.powi(2)).sqrt()
    }

    pub const CSV_HEADER: &'static str = "estimate,ci_halfwidth,replicas,undetermined,boundary_contact,lower,upper";

    pub fn csv_fields(&self) -> String {
        format!(
            "{:.6},{:.6},{},{:.6},{:.6},{:.6},{:.6}",
            self.estimate, self.halfwidth, self.replicas, self.undetermined, self.boundary_contact, self.lower, self.upper
        )
    }
}

/// Sample mean with standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return MeanEstimate { mean: f64::NAN, sd: f64::NAN, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        MeanEstimate { mean, sd: var.sqrt(), n }
    }

    pub fn std_error(&self) -> f64 {
        self.sd / (self.n as f64).sqrt()
    }

    pub fn halfwidth(&self) -> f64 {
        Z95 * self.std_error()
    }

    pub fn covers(&self, x: f64) -> bool {
        (self.mean - x).abs() <= self.halfwidth()
    }
}

/// How root values are sampled.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum SamplerPolicy {
    /// Low/high sentinel bracket on balls of increasing radius; the first
    /// radius that closes the bracket at the root is used.
    Certified { radii: Vec<usize> },
    /// One run on a ball with the initial values frozen outside. Not exact.
    Window { radius: usize },
}

impl SamplerPolicy {
    pub fn is_certified(&self) -> bool {
        matches!(self, SamplerPolicy::Certified { .. })
    }

    pub fn label(&self) -> String {
        match self {
            SamplerPolicy::Certified { radii } => {
                format!("certified:{}", radii.iter().map(|r| r.to_string()).collect::<Vec<_>>().join("/"))
            }
            SamplerPolicy::Window { radius } => format!("window:{radius}"),
        }
    }
}

/// The root value of one replica, known to lie in `[low, high]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RootSample {
    pub low: f64,
    pub high: f64,
    /// Radius of the window that produced the sample.
    pub radius: usize,
    /// The value at twice the horizon is known to equal the one at the horizon.
    pub settled: bool,
}

impl RootSample {
    pub fn determined(&self) -> bool {
        self.low == self.high
    }
}

fn clamp_handle<S: Scalar>(land: &Landscape<S>, h: u32) -> f64 {
    match h {
        LOW => 0.0,
        HIGH => 1.0,
        _ => land.value(h).to_f64_lossy(),
    }
}

/// Root value at `horizon` for one replica, with a fixation check at `2 horizon`.
pub fn sample_root<S: Scalar>(manifest: &SeedManifest, horizon: S, policy: &SamplerPolicy) -> Result<RootSample> {
    let o = VertexId::root();
    let later = horizon + horizon;
    match policy {
        SamplerPolicy::Certified { radii } => {
            if radii.is_empty() || radii.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument("radius schedule must be nonempty and increasing".into()));
            }
            let mut sample = RootSample { low: 0.0, high: 1.0, radius: radii[0], settled: false };
            for &r in radii {
                let land = Arc::new(Landscape::new(manifest, Arc::new(Domain::from_ball(&Ball::new(o, r)))));
                let mut at = [(0u32, 0u32); 2];
                let mut k = 0;
                sandwich_run(manifest, land.clone(), &[horizon, later], u64::MAX, |b| {
                    at[k] = (b.low[0], b.high[0]);
                    k += 1;
                })?;
                let (l, h) = at[0];
                sample = RootSample {
                    low: clamp_handle(&land, l),
                    high: clamp_handle(&land, h),
                    radius: r,
                    settled: l == h && at[1] == (l, h),
                };
                if l == h {
                    break;
                }
            }
            Ok(sample)
        }
        SamplerPolicy::Window { radius } => {
            let land = Arc::new(Landscape::new(manifest, Arc::new(Domain::from_ball(&Ball::new(o, *radius)))));
            let spec = RunSpec::new(BoundaryCondition::FrozenInitial, Mode::Median, horizon).without_flip_log();
            let first = run_in(manifest, land.clone(), &spec)?;
            let at = first.final_state[0];
            let second = first.continue_to(later, u64::MAX)?;
            let u = clamp_handle(&land, at);
            Ok(RootSample { low: u, high: u, radius: *radius, settled: second.final_state[0] == at })
        }
    }
}

/// Empirical distribution of the root value, one sample per replica.
#[derive(Clone, Debug, Serialize)]
pub struct ThetaCurve {
    pub horizon: f64,
    pub policy: SamplerPolicy,
    pub replicas: usize,
    /// Lower ends of the sample intervals, sorted.
    lows: Vec<f64>,
    /// Upper ends of the sample intervals, sorted.
    highs: Vec<f64>,
    /// Replicas whose interval did not close.
    pub undetermined: usize,
    /// Replicas not known to hold the same value at twice the horizon.
    pub unsettled: usize,
}

impl ThetaCurve {
    pub fn from_samples(horizon: f64, policy: SamplerPolicy, samples: &[RootSample]) -> Self {
        let mut lows: Vec<f64> = samples.iter().map(|s| s.low).collect();
        let mut highs: Vec<f64> = samples.iter().map(|s| s.high).collect();
        lows.sort_by(f64::total_cmp);
        highs.sort_by(f64::total_cmp);
        ThetaCurve {
            horizon,
            policy,
            replicas: samples.len(),
            lows,
            highs,
            undetermined: samples.iter().filter(|s| !s.determined()).count(),
            unsettled: samples.iter().filter(|s| !s.settled).count(),
        }
    }

    /// Synthetic curve from exact values (for tests and controls).
    pub fn from_values(values: &[f64]) -> Self {
        let samples: Vec<RootSample> =
            values.iter().map(|&u| RootSample { low: u, high: u, radius: 0, settled: true }).collect();
        ThetaCurve::from_samples(f64::INFINITY, SamplerPolicy::Window { radius: 0 }, &samples)
    }

    fn count_le(sorted: &[f64], p: f64) -> usize {
        sorted.partition_point(|&u| u <= p)
    }

    /// Replicas certainly at most `p` and possibly at most `p`.
    pub fn counts(&self, p: f64) -> (usize, usize) {
        if p <= 0.0 {
            return (0, 0);
        }
        if p >= 1.0 {
            return (self.replicas, self.replicas);
        }
        (Self::count_le(&self.highs, p), Self::count_le(&self.lows, p))
    }

    /// `theta(p)` estimate. A replica whose interval straddles `p` is undetermined at `p`.
    pub fn theta(&self, p: f64) -> Result<EstimateWithCI> {
        let (sure, maybe) = self.counts(p);
        EstimateWithCI::bernoulli(sure, maybe - sure, 0, self.replicas)
    }

    /// Point value of the empirical CDF among replicas determined at `p`.
    pub fn cdf(&self, p: f64) -> f64 {
        let (sure, maybe) = self.counts(p);
        let determined = self.replicas - (maybe - sure);
        if determined == 0 {
            f64::NAN
        } else {
            sure as f64 / determined as f64
        }
    }

    /// Largest fraction of replicas undetermined at any `p` of `grid`.
    pub fn worst_undetermined(&self, grid: &[f64]) -> f64 {
        grid.iter()
            .map(|&p| {
                let (s, m) = self.counts(p);
                (m - s) as f64 / self.replicas.max(1) as f64
            })
            .fold(0.0, f64::max)
    }

    /// Fraction of replicas whose value is certainly in `[0, a) ∪ (1 - a, 1]`.
    pub fn mass_outside(&self, a: f64) -> f64 {
        let below = self.highs.partition_point(|&u| u < a);
        let above = self.lows.len() - self.lows.partition_point(|&u| u <= 1.0 - a);
        (below + above) as f64 / self.replicas.max(1) as f64
    }

    pub fn unsettled_fraction(&self) -> f64 {
        self.unsettled as f64 / self.replicas.max(1) as f64
    }
}

/// Sample the root value for `replicas` replicas. The batch fails as soon
/// as the undetermined fraction at some grid point must exceed `limit`.
pub fn theta_curve<S: Scalar>(
    manifest: &SeedManifest,
    replicas: usize,
    horizon: S,
    policy: &SamplerPolicy,
    grid: &[f64],
    limit: f64,
) -> Result<ThetaCurve> {
    if replicas < MIN_REPLICAS {
        return Err(Error::TooFewReplicas { got: replicas, min: MIN_REPLICAS });
    }
    let allowed = (limit * replicas as f64).floor() as usize;
    let mut undetermined_at = vec![0usize; grid.len()];
    let mut samples = Vec::with_capacity(replicas);
    for i in 0..replicas as u64 {
        let s = sample_root(&manifest.replica(i), horizon, policy)?;
        for (k, &p) in grid.iter().enumerate() {
            if s.low <= p && s.high > p {
                undetermined_at[k] += 1;
                if undetermined_at[k] > allowed {
                    return Err(Error::TooManyUndetermined {
                        fraction: undetermined_at[k] as f64 / (i + 1) as f64,
                        limit,
                    });
                }
            }
        }
        samples.push(s);
    }
    Ok(ThetaCurve::from_samples(horizon.to_f64_lossy(), policy.clone(), &samples))
}

/// `(lower, upper)`: the largest `p` where `theta` is surely at most `eps`
/// and the smallest `p` where it is surely at least `2 eps`, on a grid of
/// step `1e-3`.
pub fn pc_bracket(curve: &ThetaCurve, eps: f64) -> Result<(f64, f64)> {
    if curve.replicas == 0 {
        return Err(Error::DegenerateCurve("no samples".into()));
    }
    let n = curve.replicas as f64;
    let steps = 1000;
    let mut lower = 0.0;
    let mut upper = None;
    for k in 0..=steps {
        let p = k as f64 / steps as f64;
        let (sure, maybe) = curve.counts(p);
        if maybe as f64 / n <= eps {
            lower = p;
        }
        if upper.is_none() && sure as f64 / n >= 2.0 * eps {
            upper = Some(p);
        }
    }
    match upper {
        Some(u) if u < 1.0 => Ok((lower, u)),
        _ => Err(Error::DegenerateCurve(format!("theta never reaches {} below p = 1", 2.0 * eps))),
    }
}

/// Largest increment of the empirical CDF over consecutive grid points of step `h`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Continuity {
    pub h: f64,
    pub max_increment: f64,
    /// Left end of the step with the largest increment.
    pub at: f64,
}

pub fn continuity_check(curve: &ThetaCurve, h: f64) -> Result<Continuity> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::InvalidArgument(format!("grid step {h} outside (0, 1]")));
    }
    let steps = (1.0 / h).round() as usize;
    let mut best = Continuity { h, max_increment: 0.0, at: 0.0 };
    let mut prev = 0.0;
    for k in 1..=steps {
        let p = (k as f64 * h).min(1.0);
        let c = curve.cdf(p);
        if c.is_nan() {
            return Err(Error::TooManyUndetermined { fraction: 1.0, limit: 1.0 });
        }
        if c - prev > best.max_increment {
            best.max_increment = c - prev;
            best.at = p - h;
        }
        prev = c;
    }
    Ok(best)
}

/// Spins at two vertices in one replica; `None` marks an undetermined spin.
pub type SpinPair = (Option<i8>, Option<i8>);

/// Window shape used for two-point spin observations.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum PairWindow {
    /// Union of the balls of radius `margin` around the path between the two vertices.
    Tube { margin: usize },
    /// Ball of the given radius around the first vertex.
    Ball { radius: usize },
}

fn pair_domain(a: &VertexId, b: &VertexId, window: &PairWindow) -> Domain {
    match window {
        PairWindow::Ball { radius } => Domain::from_ball(&Ball::new(*a, *radius)),
        PairWindow::Tube { margin } => {
            let mut set = HashSet::new();
            for v in a.path_to(b) {
                set.extend(Ball::new(v, *margin).vertices());
            }
            Domain::from_set(*a, &set)
        }
    }
}

/// Spins at `a` and `b` at time `horizon` under density `p`. With
/// `certified`, the spins come from the sentinel bracket and are `None`
/// where the bracket straddles `p`; otherwise from a frozen-initial run.
pub fn spin_pair<S: Scalar>(
    manifest: &SeedManifest,
    a: &VertexId,
    b: &VertexId,
    p: S,
    horizon: S,
    window: &PairWindow,
    certified: bool,
) -> Result<SpinPair> {
    let domain = Arc::new(pair_domain(a, b, window));
    let (ia, ib) = match (domain.index_of(a), domain.index_of(b)) {
        (Some(x), Some(y)) if domain.is_inner(x) && domain.is_inner(y) => (x, y),
        _ => return Err(Error::InvalidArgument("window must contain both vertices".into())),
    };
    let land = Arc::new(Landscape::new(manifest, domain));
    if certified {
        let mut out = (None, None);
        sandwich_run(manifest, land.clone(), &[horizon], u64::MAX, |br| {
            let sign = |i: u32| {
                let (l, h) = (land.project(br.low[i as usize], p), land.project(br.high[i as usize], p));
                (l == h).then_some(l)
            };
            out = (sign(ia), sign(ib));
        })?;
        Ok(out)
    } else {
        let t = run_in(manifest, land.clone(), &RunSpec::new(BoundaryCondition::FrozenInitial, Mode::Median, horizon).without_flip_log())?;
        Ok((Some(land.project(t.final_state[ia as usize], p)), Some(land.project(t.final_state[ib as usize], p))))
    }
}

/// `|P(A and B) - P(A) P(B)|` with a delta-method interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AlphaEstimate {
    pub distance: usize,
    pub p_a: f64,
    pub p_b: f64,
    pub p_ab: f64,
    /// `|p_ab - p_a p_b|`.
    pub alpha: f64,
    pub halfwidth: f64,
    pub replicas: usize,
    /// Replicas dropped because a spin was undetermined.
    pub undetermined: f64,
}

impl AlphaEstimate {
    pub fn from_outcomes(distance: usize, outcomes: &[(bool, bool)], undetermined: usize) -> Result<Self> {
        let total = outcomes.len() + undetermined;
        if total < MIN_REPLICAS {
            return Err(Error::TooFewReplicas { got: total, min: MIN_REPLICAS });
        }
        let n = outcomes.len();
        if n == 0 {
            return Err(Error::TooManyUndetermined { fraction: 1.0, limit: 1.0 });
        }
        let nf = n as f64;
        let p_a = outcomes.iter().filter(|o| o.0).count() as f64 / nf;
        let p_b = outcomes.iter().filter(|o| o.1).count() as f64 / nf;
        let p_ab = outcomes.iter().filter(|o| o.0 && o.1).count() as f64 / nf;
        let cov = p_ab - p_a * p_b;
        // influence function of the covariance functional
        let psi = |(a, b): &(bool, bool)| {
            let (a, b) = (*a as u8 as f64, *b as u8 as f64);
            (a - p_a) * (b - p_b) - cov
        };
        let var = outcomes.iter().map(|o| psi(o).powi(2)).sum::<f64>() / nf;
        Ok(AlphaEstimate {
            distance,
            p_a,
            p_b,
            p_ab,
            alpha: cov.abs(),
            halfwidth: Z95 * (var / nf).sqrt(),
            replicas: total,
            undetermined: undetermined as f64 / total as f64,
        })
    }

    /// Upper end of the interval for `alpha`.
    pub fn upper(&self) -> f64 {
        self.alpha + self.halfwidth
    }

    /// Lower end of the interval for `alpha`, clipped at 0.
    pub fn lower(&self) -> f64 {
        (self.alpha - self.halfwidth).max(0.0)
    }
}

/// The vertex `0 0 ... 0` at distance `r` from the root.
pub fn ray_vertex(r: usize) -> VertexId {
    let s: String = std::iter::repeat('0').take(r).collect();
    s.parse().expect("a run of zeros is a valid address")
}

/// Mixing coefficient for `A = {spin at o is +1}`, `B = {spin at x is +1}`
/// with `x` at distance `distance` along a fixed ray.
#[allow(clippy::too_many_arguments)]
pub fn alpha_estimate<S: Scalar>(
    manifest: &SeedManifest,
    p: S,
    distance: usize,
    replicas: usize,
    horizon: S,
    window: &PairWindow,
    certified: bool,
    limit: f64,
) -> Result<AlphaEstimate> {
    if replicas < MIN_REPLICAS {
        return Err(Error::TooFewReplicas { got: replicas, min: MIN_REPLICAS });
    }
    let o = VertexId::root();
    let x = ray_vertex(distance);
    let mut outcomes = Vec::with_capacity(replicas);
    let mut undetermined = 0;
    for i in 0..replicas as u64 {
        match spin_pair(&manifest.replica(i), &o, &x, p, horizon, window, certified)? {
            (Some(a), Some(b)) => outcomes.push((a == 1, b == 1)),
            _ => {
                undetermined += 1;
                if undetermined as f64 > limit * replicas as f64 {
                    return Err(Error::TooManyUndetermined { fraction: undetermined as f64 / (i + 1) as f64, limit });
                }
            }
        }
    }
    AlphaEstimate::from_outcomes(distance, &outcomes, undetermined)
}

/// Fraction of replicas in which the root has joined a depth-`depth` spin
/// chain by each time of `grid`, from majority dynamics at density `p` on a
/// ball of radius `radius` with frozen initial spins outside.
pub fn chain_time_cdf<S: Scalar>(
    manifest: &SeedManifest,
    p: S,
    depth: usize,
    grid: &[S],
    replicas: usize,
    radius: usize,
) -> Result<Vec<(S, EstimateWithCI)>> {
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("time grid must be nondecreasing".into()));
    }
    if radius < depth {
        return Err(Error::InvalidArgument(format!("radius {radius} is smaller than chain depth {depth}")));
    }
    let domain = Arc::new(Domain::from_ball(&Ball::around_root(radius)));
    let mut hits = vec![0usize; grid.len()];
    for i in 0..replicas as u64 {
        let m = manifest.replica(i);
        let land: Landscape<S> = Landscape::new(&m, domain.clone());
        let initial: Vec<i8> = (0..domain.total_len() as u32).map(|h| land.project(h, p)).collect();
        let mut fields = [DiscreteField::new(&domain, BoundaryCondition::FrozenInitial, &initial)?];
        let mut joined: Option<usize> = None;
        let mut next = 0;
        // check at each grid time: before the first event past it
        let check = |fields: &[DiscreteField], upto: usize, joined: &mut Option<usize>, next: &mut usize| {
            while *next < upto {
                if joined.is_none() && chain_membership(&domain, fields[0].state(), 0, depth) {
                    *joined = Some(*next);
                }
                *next += 1;
            }
        };
        let horizon = grid.last().copied().unwrap_or_else(S::zero);
        run_discrete_lockstep(&m, &domain, &mut fields, horizon, &[], |t, _, _, f| {
            let upto = grid.partition_point(|&g| g < t);
            check(f, upto, &mut joined, &mut next);
        });
        check(&fields, grid.len(), &mut joined, &mut next);
        if let Some(first) = joined {
            for h in &mut hits[first..] {
                *h += 1;
            }
        }
    }
    grid.iter()
        .zip(hits)
        .map(|(&t, h)| Ok((t, EstimateWithCI::bernoulli(h, 0, 0, replicas)?)))
        .collect()
}

/// Probability that the root starts at `+1` and keeps it through each
/// horizon while its neighbor `0` is held at `-1`, at density `q`.
///
/// Three runs share the randomness: outside spins frozen at their initial
/// values (the point estimate), and outside spins all `-1` or all `+1`,
/// which by monotonicity bound the infinite-tree event from below and
/// above.
pub fn never_flip_probability<S: Scalar>(
    manifest: &SeedManifest,
    q: S,
    horizons: &[S],
    replicas: usize,
    radius: usize,
) -> Result<Vec<(S, EstimateWithCI)>> {
    if replicas < MIN_REPLICAS {
        return Err(Error::TooFewReplicas { got: replicas, min: MIN_REPLICAS });
    }
    if radius == 0 {
        return Err(Error::InvalidArgument("radius must be at least 1".into()));
    }
    let domain = Arc::new(Domain::from_ball(&Ball::around_root(radius)));
    let pin = domain.index_of(&"0".parse()?).expect("radius >= 1");
    let horizon = horizons.iter().copied().fold(S::zero(), S::max);
    // per horizon: [point, surely, possibly]
    let mut counts = vec![[0usize; 3]; horizons.len()];
    for i in 0..replicas as u64 {
        let m = manifest.replica(i);
        if initial_uniform::<S>(&m, &VertexId::root()) > q {
            continue;
        }
        let land: Landscape<S> = Landscape::new(&m, domain.clone());
        let initial: Vec<i8> = (0..domain.total_len() as u32).map(|h| land.project(h, q)).collect();
        let mut fields = [
            DiscreteField::new(&domain, BoundaryCondition::FrozenInitial, &initial)?,
            DiscreteField::new(&domain, BoundaryCondition::FrozenDiscrete(-1), &initial)?,
            DiscreteField::new(&domain, BoundaryCondition::FrozenDiscrete(1), &initial)?,
        ];
        let mut first_flip: [Option<S>; 3] = [None; 3];
        run_discrete_lockstep(&m, &domain, &mut fields, horizon, &[(pin, Pin::High)], |t, v, changes, _| {
            if v == 0 {
                for k in 0..3 {
                    if changes[k].is_some() && first_flip[k].is_none() {
                        first_flip[k] = Some(t);
                    }
                }
            }
        });
        for (c, &t) in counts.iter_mut().zip(horizons) {
            for k in 0..3 {
                if first_flip[k].map_or(true, |f| f > t) {
                    c[k] += 1;
                }
            }
        }
    }
    horizons
        .iter()
        .zip(counts)
        .map(|(&t, [point, surely, possibly])| {
            let mut e = EstimateWithCI::bernoulli(point, 0, 0, replicas)?;
            e.lower = surely as f64 / replicas as f64;
            e.upper = possibly as f64 / replicas as f64;
            e.undetermined = (possibly - surely) as f64 / replicas as f64;
            Ok((t, e))
        })
        .collect()
}

/// Triple-point statistics of the `+1` cluster of the root.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EndsReport {
    pub radius: usize,
    pub replicas: usize,
    /// Replicas whose root `+1` cluster reaches the window boundary.
    pub spanning: usize,
    /// Among those, replicas whose cluster has a triple point.
    pub with_triple_point: usize,
}

impl EndsReport {
    pub fn fraction(&self) -> Option<f64> {
        (self.spanning > 0).then(|| self.with_triple_point as f64 / self.spanning as f64)
    }
}

/// Majority dynamics at density `p` on a ball with frozen initial spins
/// outside, run to `horizon`; counts root clusters that reach the boundary
/// and those among them with a triple point.
pub fn ends_statistics<S: Scalar>(
    manifest: &SeedManifest,
    p: S,
    radius: usize,
    horizon: S,
    replicas: usize,
) -> Result<EndsReport> {
    let domain = Arc::new(Domain::from_ball(&Ball::around_root(radius)));
    let mut report = EndsReport { radius, replicas, spanning: 0, with_triple_point: 0 };
    for i in 0..replicas as u64 {
        let m = manifest.replica(i);
        let land = Arc::new(Landscape::new(&m, domain.clone()));
        let spec = RunSpec::new(BoundaryCondition::FrozenInitial, Mode::Median, horizon).without_flip_log();
        let t = run_in(&m, land.clone(), &spec)?;
        let config: Vec<i8> = t.final_state.iter().map(|&h| land.project(h, p)).collect();
        if let Some(c) = sign_clusters(&domain, &config, 1).into_iter().find(|c| c.contains_center) {
            if c.reaches_boundary {
                report.spanning += 1;
                if !c.triple_points.is_empty() {
                    report.with_triple_point += 1;
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_interval() {
        let e = EstimateWithCI::bernoulli(500, 0, 0, 1000).unwrap();
        assert_eq!(e.estimate, 0.5);
        assert!((e.halfwidth - 1.96 * (0.25f64 / 1000.0).sqrt()).abs() < 1e-4);
        assert!(matches!(EstimateWithCI::bernoulli(5, 0, 0, 999), Err(Error::TooFewReplicas { .. })));
        let e = EstimateWithCI::bernoulli(400, 100, 0, 1000).unwrap();
        assert_eq!((e.lower, e.upper), (0.4, 0.5));
        assert!((e.estimate - 400.0 / 900.0).abs() < 1e-12);
    }

    #[test]
    fn halfwidth_shrinks_as_root_n() {
        let a = EstimateWithCI::bernoulli(300, 0, 0, 1000).unwrap();
        let b = EstimateWithCI::bernoulli(1200, 0, 0, 4000).unwrap();
        assert!((a.halfwidth / b.halfwidth - 2.0).abs() < 1e-9);
    }

    #[test]
    fn curve_endpoints_and_intervals() {
        let samples = [
            RootSample { low: 0.2, high: 0.2, radius: 1, settled: true },
            RootSample { low: 0.0, high: 1.0, radius: 1, settled: false },
            RootSample { low: 0.4, high: 0.6, radius: 1, settled: false },
        ];
        let c = ThetaCurve::from_samples(1.0, SamplerPolicy::Window { radius: 1 }, &samples);
        assert_eq!(c.counts(0.0), (0, 0));
        assert_eq!(c.counts(1.0), (3, 3));
        assert_eq!(c.counts(0.3), (1, 2));
        assert_eq!(c.counts(0.5), (1, 3));
        assert_eq!(c.counts(0.7), (2, 3));
        assert_eq!(c.undetermined, 2);
        assert_eq!(c.cdf(0.3), 0.5);
    }

    #[test]
    fn point_mass_is_flagged_by_continuity() {
        let c = ThetaCurve::from_values(&vec![0.5; 1000]);
        let r = continuity_check(&c, 0.02).unwrap();
        assert_eq!(r.max_increment, 1.0);
        assert!((r.at - 0.48).abs() < 1e-9);
    }

    #[test]
    fn uniform_curve_increments_match_step() {
        let vals: Vec<f64> = (0..10_000).map(|k| (k as f64 + 0.5) / 10_000.0).collect();
        let c = ThetaCurve::from_values(&vals);
        assert!((continuity_check(&c, 0.02).unwrap().max_increment - 0.02).abs() < 1e-3);
        let (lo, hi) = pc_bracket(&c, 0.01).unwrap();
        assert!((lo - 0.01).abs() < 2e-3 && (hi - 0.02).abs() < 2e-3, "{lo} {hi}");
    }

    #[test]
    fn constant_curve_is_degenerate() {
        let c = ThetaCurve::from_values(&vec![1.0; 1000]);
        assert!(matches!(pc_bracket(&c, 0.01), Err(Error::DegenerateCurve(_))));
    }

    #[test]
    fn alpha_of_independent_and_identical() {
        let indep: Vec<(bool, bool)> = (0..4000).map(|k| (k % 2 == 0, (k / 2) % 2 == 0)).collect();
        let a = AlphaEstimate::from_outcomes(1, &indep, 0).unwrap();
        assert!(a.alpha < 1e-12);
        let same: Vec<(bool, bool)> = (0..4000).map(|k| (k % 2 == 0, k % 2 == 0)).collect();
        let a = AlphaEstimate::from_outcomes(1, &same, 0).unwrap();
        assert!((a.alpha - 0.25).abs() < 1e-12);
        let ones = vec![(true, true); 1000];
        assert_eq!(AlphaEstimate::from_outcomes(1, &ones, 0).unwrap().alpha, 0.0);
    }

    #[test]
    fn alpha_at_time_zero_vanishes() {
        let a = alpha_estimate::<f64>(&SeedManifest::new(4), 0.3, 2, 2000, 0.0, &PairWindow::Tube { margin: 1 }, false, 0.0)
            .unwrap();
        assert!(a.lower() == 0.0, "{a:?}");
        let a = alpha_estimate::<f64>(&SeedManifest::new(4), 1.0, 2, 1000, 2.0, &PairWindow::Tube { margin: 2 }, false, 0.0)
            .unwrap();
        assert_eq!(a.alpha, 0.0);
    }

    #[test]
    fn certified_sample_matches_oracle() {
        use crate::exactness::backward_state;
        for i in 0..20 {
            let m = SeedManifest::new(9).replica(i);
            let s = sample_root::<f64>(&m, 1.0, &SamplerPolicy::Certified { radii: vec![4, 8] }).unwrap();
            assert!(s.determined());
            let exact = backward_state::<f64>(&m, &VertexId::root(), 1.0, 1_000_000).unwrap();
            assert_eq!(s.low, exact.value);
        }
    }

    #[test]
    fn never_flip_endpoints() {
        let m = SeedManifest::new(5);
        let r = never_flip_probability::<f64>(&m, 0.0, &[4.0], 1000, 4).unwrap();
        assert_eq!(r[0].1.estimate, 0.0);
        assert_eq!(r[0].1.upper, 0.0);
        let r = never_flip_probability::<f64>(&m, 1.0, &[4.0], 1000, 4).unwrap();
        assert_eq!(r[0].1.estimate, 1.0);
    }

    #[test]
    fn chain_cdf_at_full_density() {
        let r = chain_time_cdf::<f64>(&SeedManifest::new(1), 1.0, 3, &[0.0, 1.0], 1000, 3).unwrap();
        assert!(r.iter().all(|(_, e)| e.estimate == 1.0));
    }
}
