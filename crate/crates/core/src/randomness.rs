//! Counter-based randomness keyed by vertex.
//!
//! Every random quantity is a pure function of `(master_seed, vertex, stream
//! label, index)`, so no part of the infinite tree has to be generated up
//! front and reruns with partially modified randomness (one vertex resampled,
//! everything else identical) are exact.
//!
//! The pseudo-random function is the SplitMix64 finalizer applied to an
//! absorbed key, with the draw index as the SplitMix64 counter.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::topology::VertexId;

/// Identifies the generator in output manifests.
pub const GENERATOR_VERSION: &str = "splitmix64-prf/1";

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn absorb(h: u64, x: u64) -> u64 {
    mix(h ^ mix(x.wrapping_add(GOLDEN)))
}

/// Which independent stream of a vertex is being read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StreamLabel {
    InitialSpin,
    Clock,
    TieBreak,
    ResampleSpin(u32),
    ResampleClock(u32),
}

impl StreamLabel {
    fn code(self) -> u64 {
        match self {
            StreamLabel::InitialSpin => 1,
            StreamLabel::Clock => 2,
            StreamLabel::TieBreak => 3,
            StreamLabel::ResampleSpin(k) => (4 << 32) | u64::from(k),
            StreamLabel::ResampleClock(k) => (5 << 32) | u64::from(k),
        }
    }
}

/// Resample generations for one vertex; generation 0 is the original draw.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resample {
    pub spin: u32,
    pub clock: u32,
}

/// Complete description of the randomness of one experiment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedManifest {
    pub master_seed: u64,
    pub generator: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub resampled: BTreeMap<VertexId, Resample>,
}

impl SeedManifest {
    pub fn new(master_seed: u64) -> Self {
        SeedManifest {
            master_seed,
            generator: GENERATOR_VERSION.to_string(),
            resampled: BTreeMap::new(),
        }
    }

    /// Manifest of replica `index` of a batch seeded with `self.master_seed`.
    pub fn replica(&self, index: u64) -> Self {
        SeedManifest::new(self.master_seed.wrapping_add(index))
    }

    /// Same randomness except the initial spin of `v` comes from resample
    /// generation `generation`.
    pub fn with_spin_resampled(&self, v: VertexId, generation: u32) -> Self {
        let mut m = self.clone();
        m.resampled.entry(v).or_default().spin = generation;
        m
    }

    /// Same randomness except the clock of `v` comes from resample generation
    /// `generation`.
    pub fn with_clock_resampled(&self, v: VertexId, generation: u32) -> Self {
        let mut m = self.clone();
        m.resampled.entry(v).or_default().clock = generation;
        m
    }

    fn spin_label(&self, v: &VertexId) -> StreamLabel {
        match self.resampled.get(v) {
            Some(r) if r.spin > 0 => StreamLabel::ResampleSpin(r.spin),
            _ => StreamLabel::InitialSpin,
        }
    }

    fn clock_label(&self, v: &VertexId) -> StreamLabel {
        match self.resampled.get(v) {
            Some(r) if r.clock > 0 => StreamLabel::ResampleClock(r.clock),
            _ => StreamLabel::Clock,
        }
    }

    /// Key of the stream `label` at `v`; draws are `stream_unit(key, i)`.
    pub fn stream_key(&self, v: &VertexId, label: StreamLabel) -> u64 {
        let (a, b) = v.key();
        let h = absorb(mix(self.master_seed ^ 0x6a09_e667_f3bc_c908), a);
        absorb(absorb(h, b), label.code())
    }

    pub fn clock_key(&self, v: &VertexId) -> u64 {
        self.stream_key(v, self.clock_label(v))
    }
}

/// Raw 64-bit draw `index` of the stream with key `key`.
#[inline]
pub fn stream_u64(key: u64, index: u64) -> u64 {
    mix(key.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Draw in the open interval `(0, 1)` with 53 bits of precision.
#[inline]
pub fn stream_unit(key: u64, index: u64) -> f64 {
    ((stream_u64(key, index) >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// `U_v(0)`: the initial uniform of `v` (honours spin resampling).
pub fn initial_uniform<S: Scalar>(manifest: &SeedManifest, v: &VertexId) -> S {
    let key = manifest.stream_key(v, manifest.spin_label(v));
    S::from_f64_lossy(stream_unit(key, 0))
}

/// Uniform used only for invariant tie-breaking.
pub fn tie_break<S: Scalar>(manifest: &SeedManifest, v: &VertexId) -> S {
    let key = manifest.stream_key(v, StreamLabel::TieBreak);
    S::from_f64_lossy(stream_unit(key, 0))
}

/// Lazily generated ring times of one rate-1 Poisson clock.
///
/// Ring `k` is the sum of the first `k + 1` exponential increments drawn from
/// the stream, so extending the horizon never changes earlier rings.
#[derive(Clone, Debug)]
pub struct ClockCursor {
    key: u64,
    index: u64,
    time: f64,
}

impl ClockCursor {
    pub fn new(key: u64) -> Self {
        ClockCursor { key, index: 0, time: 0.0 }
    }

    pub fn for_vertex(manifest: &SeedManifest, v: &VertexId) -> Self {
        Self::new(manifest.clock_key(v))
    }

    /// Next ring time (in `f64`).
    #[inline]
    pub fn next_ring(&mut self) -> f64 {
        self.time += -stream_unit(self.key, self.index).ln();
        self.index += 1;
        self.time
    }

    /// Number of rings produced so far.
    pub fn produced(&self) -> u64 {
        self.index
    }
}

/// Clock producing ring times already narrowed to the scalar type.
///
/// Narrowing can collapse two nearby rings onto the same short float; the
/// later one is then nudged up by one relative epsilon so rings stay strictly
/// increasing.
#[derive(Clone, Debug)]
pub struct ScalarClock<S> {
    cursor: ClockCursor,
    last: S,
}

impl<S: Scalar> ScalarClock<S> {
    pub fn new(key: u64) -> Self {
        ScalarClock { cursor: ClockCursor::new(key), last: S::zero() }
    }

    pub fn for_vertex(manifest: &SeedManifest, v: &VertexId) -> Self {
        Self::new(manifest.clock_key(v))
    }

    #[inline]
    pub fn next_ring(&mut self) -> S {
        let mut t = S::from_f64_lossy(self.cursor.next_ring());
        if t <= self.last {
            t = self.last + self.last * S::epsilon();
        }
        self.last = t;
        t
    }
}

/// Ring times of a vertex stored up to a horizon.
#[derive(Clone, Debug)]
pub struct ClockStream<S> {
    pub vertex: VertexId,
    clock: ScalarClock<S>,
    rings: Vec<S>,
    // first ring beyond the covered horizon, already drawn
    pending: S,
    horizon: S,
}

impl<S: Scalar> ClockStream<S> {
    pub fn new(manifest: &SeedManifest, vertex: VertexId) -> Self {
        let mut clock = ScalarClock::for_vertex(manifest, &vertex);
        let pending = clock.next_ring();
        ClockStream { vertex, clock, rings: Vec::new(), pending, horizon: S::zero() }
    }

    /// Make sure every ring in `[0, horizon]` has been generated.
    pub fn extend_to(&mut self, horizon: S) {
        if horizon <= self.horizon {
            return;
        }
        while self.pending <= horizon {
            self.rings.push(self.pending);
            self.pending = self.clock.next_ring();
        }
        self.horizon = horizon;
    }

    /// Ring times in `[0, horizon]`.
    pub fn rings_until(&mut self, horizon: S) -> &[S] {
        self.extend_to(horizon);
        let n = self.rings.partition_point(|t| *t <= horizon);
        &self.rings[..n]
    }

    /// All rings generated so far (covering at least the last requested horizon).
    pub fn generated(&self) -> &[S] {
        &self.rings
    }
}

/// Ring times of the clock of `v` in `[0, horizon]`.
pub fn rings<S: Scalar>(manifest: &SeedManifest, v: &VertexId, horizon: S) -> Vec<S> {
    ClockStream::new(manifest, *v).rings_until(horizon).to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Ball;

    #[test]
    fn initial_uniform_is_deterministic() {
        let m = SeedManifest::new(7);
        let v: VertexId = "0110".parse().unwrap();
        let a: f64 = initial_uniform(&m, &v);
        let b: f64 = initial_uniform(&m, &v);
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn uniform_mean_over_many_vertices() {
        let m = SeedManifest::new(2024);
        let verts = Ball::around_root(16).vertices();
        let n = 100_000;
        let mean: f64 = verts[..n].iter().map(|v| initial_uniform::<f64>(&m, v)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn chi_square_uniformity() {
        let m = SeedManifest::new(99);
        let verts = Ball::around_root(16).vertices();
        let n = 100_000;
        let bins = 100;
        let mut counts = vec![0f64; bins];
        for v in &verts[..n] {
            let u: f64 = initial_uniform(&m, v);
            counts[(u * bins as f64) as usize] += 1.0;
        }
        let expected = n as f64 / bins as f64;
        let stat: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        // 0.999 quantile of chi-square with 99 degrees of freedom
        assert!(stat < 148.23, "chi-square statistic {stat}");
    }

    #[test]
    fn exponential_increments_pass_ks() {
        let m = SeedManifest::new(5);
        let verts = Ball::around_root(10).vertices();
        let mut inc = Vec::new();
        for v in &verts {
            let mut c = ClockCursor::for_vertex(&m, v);
            let mut prev = 0.0;
            for _ in 0..5 {
                let t = c.next_ring();
                inc.push(t - prev);
                prev = t;
            }
        }
        inc.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = inc.len() as f64;
        let d = inc
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let f = 1.0 - (-x).exp();
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // 0.999 quantile of the Kolmogorov distribution
        assert!(d * n.sqrt() < 1.9495, "KS statistic {}", d * n.sqrt());
    }

    #[test]
    fn resampled_spin_differs_and_leaves_others_alone() {
        let m = SeedManifest::new(11);
        let o = VertexId::root();
        let x: VertexId = "1".parse().unwrap();
        let r = m.with_spin_resampled(o, 1);
        assert_ne!(initial_uniform::<f64>(&m, &o), initial_uniform::<f64>(&r, &o));
        assert_eq!(initial_uniform::<f64>(&m, &x), initial_uniform::<f64>(&r, &x));
        assert_eq!(rings::<f64>(&m, &o, 5.0), rings::<f64>(&r, &o, 5.0));
        let c = m.with_clock_resampled(o, 1);
        assert_ne!(rings::<f64>(&m, &o, 5.0), rings::<f64>(&c, &o, 5.0));
        assert_eq!(rings::<f64>(&m, &x, 5.0), rings::<f64>(&c, &x, 5.0));
    }

    #[test]
    fn rings_at_zero_horizon_are_empty() {
        let m = SeedManifest::new(1);
        assert!(rings::<f64>(&m, &VertexId::root(), 0.0).is_empty());
    }

    #[test]
    fn ring_prefix_consistency() {
        let m = SeedManifest::new(3);
        for v in Ball::around_root(3).vertices() {
            let short = rings::<f64>(&m, &v, 5.0);
            let long = rings::<f64>(&m, &v, 10.0);
            assert_eq!(&long[..short.len()], &short[..]);
            assert!(long.windows(2).all(|w| w[0] < w[1]));
            assert!(long.iter().all(|t| *t > 0.0 && *t <= 10.0));
        }
    }

    #[test]
    fn poisson_mean_count() {
        let base = SeedManifest::new(77);
        let o = VertexId::root();
        let n = 10_000;
        let total: usize = (0..n).map(|i| rings::<f64>(&base.replica(i), &o, 10.0).len()).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 10.0).abs() < 0.1, "mean ring count {mean}");
    }

    #[test]
    fn tie_break_is_an_independent_stream() {
        let m = SeedManifest::new(8);
        let verts = Ball::around_root(1).vertices();
        for v in &verts {
            assert_eq!(tie_break::<f64>(&m, v), tie_break::<f64>(&m, v));
            assert_ne!(tie_break::<f64>(&m, v), initial_uniform::<f64>(&m, v));
        }
        let argmax = |m: &SeedManifest| {
            verts[1..]
                .iter()
                .max_by(|a, b| tie_break::<f64>(m, a).partial_cmp(&tie_break::<f64>(m, b)).unwrap())
                .copied()
        };
        assert_eq!(argmax(&m), argmax(&m));
    }

    #[test]
    fn short_floats_stay_strictly_increasing() {
        let m = SeedManifest::new(21);
        let r = rings::<f32>(&m, &VertexId::root(), 200.0);
        assert!(r.windows(2).all(|w| w[0] < w[1]));
    }
}
