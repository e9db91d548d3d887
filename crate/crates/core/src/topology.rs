//! Addressing, distances, paths and balls on the infinite 3-regular tree.
//!
//! A vertex is addressed by the word that leads to it from the root `o`: the
//! empty word is the root, the first letter (`0`, `1` or `2`) picks one of the
//! root's three subtrees and every further letter (`0` or `1`) picks a child
//! inside a binary subtree. The neighbors of a non-root vertex are its parent
//! (drop the last letter) and its two children (append `0` or `1`).

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Deepest address that can be represented.
pub const MAX_DEPTH: usize = 64;

/// Canonical address of a vertex of the 3-regular tree.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct VertexId {
    depth: u8,
    head: u8,
    // Letters after the head, most significant first, `depth - 1` bits.
    tail: u64,
}

impl VertexId {
    pub const ROOT: VertexId = VertexId { depth: 0, head: 0, tail: 0 };

    pub fn root() -> Self {
        Self::ROOT
    }

    /// Build an address from its letters.
    pub fn from_letters(letters: &[u8]) -> Result<Self, Error> {
        if letters.len() > MAX_DEPTH {
            return Err(Error::MalformedAddress(format!(
                "address longer than {MAX_DEPTH} letters"
            )));
        }
        let Some((&head, rest)) = letters.split_first() else {
            return Ok(Self::ROOT);
        };
        if head > 2 {
            return Err(Error::MalformedAddress(format!(
                "first letter must be 0, 1 or 2, got {head}"
            )));
        }
        let mut tail = 0u64;
        for &b in rest {
            if b > 1 {
                return Err(Error::MalformedAddress(format!(
                    "letters after the first must be 0 or 1, got {b}"
                )));
            }
            tail = (tail << 1) | u64::from(b);
        }
        Ok(VertexId { depth: letters.len() as u8, head, tail })
    }

    /// Distance from the root.
    #[inline]
    pub fn depth(&self) -> usize {
        self.depth as usize
    }

    #[inline]
    pub fn is_root(&self) -> bool {
        self.depth == 0
    }

    /// Letter at position `i` (`i < depth`).
    pub fn letter(&self, i: usize) -> u8 {
        assert!(i < self.depth(), "letter index out of range");
        if i == 0 {
            self.head
        } else {
            ((self.tail >> (self.depth() - 1 - i)) & 1) as u8
        }
    }

    pub fn letters(&self) -> Vec<u8> {
        (0..self.depth()).map(|i| self.letter(i)).collect()
    }

    pub fn parent(&self) -> Option<VertexId> {
        match self.depth {
            0 => None,
            1 => Some(Self::ROOT),
            d => Some(VertexId { depth: d - 1, head: self.head, tail: self.tail >> 1 }),
        }
    }

    /// The two children of a non-root vertex, or the three subtree heads of the root.
    pub fn children(&self) -> ChildIter {
        ChildIter { parent: *self, next: 0 }
    }

    fn child(&self, letter: u8) -> VertexId {
        if self.depth == 0 {
            return VertexId { depth: 1, head: letter, tail: 0 };
        }
        assert!(self.depth() < MAX_DEPTH, "address exceeds the maximum depth {MAX_DEPTH}");
        VertexId {
            depth: self.depth + 1,
            head: self.head,
            tail: (self.tail << 1) | u64::from(letter),
        }
    }

    /// The three neighbors, in canonical order: parent first (if any), then
    /// children by letter.
    pub fn neighbors(&self) -> [VertexId; 3] {
        match self.parent() {
            None => [self.child(0), self.child(1), self.child(2)],
            Some(p) => [p, self.child(0), self.child(1)],
        }
    }

    /// Length of the longest common prefix of two addresses.
    pub fn common_prefix_len(&self, other: &VertexId) -> usize {
        let m = self.depth().min(other.depth());
        if m == 0 || self.head != other.head {
            return 0;
        }
        let a = self.tail >> (self.depth() - m);
        let b = other.tail >> (other.depth() - m);
        let x = a ^ b;
        if x == 0 {
            m
        } else {
            let highest = 63 - x.leading_zeros() as usize;
            m - 1 - highest
        }
    }

    /// Ancestor at the given depth (`depth <= self.depth()`).
    pub fn ancestor(&self, depth: usize) -> VertexId {
        assert!(depth <= self.depth());
        match depth {
            0 => Self::ROOT,
            d => VertexId {
                depth: d as u8,
                head: self.head,
                tail: self.tail >> (self.depth() - d),
            },
        }
    }

    /// Graph distance.
    pub fn distance(&self, other: &VertexId) -> usize {
        self.depth() + other.depth() - 2 * self.common_prefix_len(other)
    }

    /// The unique self-avoiding path from `self` to `other`, endpoints included.
    pub fn path_to(&self, other: &VertexId) -> Vec<VertexId> {
        let lca = self.common_prefix_len(other);
        let mut path = Vec::with_capacity(self.distance(other) + 1);
        let mut cur = *self;
        while cur.depth() > lca {
            path.push(cur);
            cur = cur.parent().expect("non-root vertex has a parent");
        }
        path.push(cur);
        for d in lca + 1..=other.depth() {
            path.push(other.ancestor(d));
        }
        path
    }

    /// Injective 128-bit encoding, used for hashing into random streams.
    pub(crate) fn key(&self) -> (u64, u64) {
        (u64::from(self.depth) | (u64::from(self.head) << 8), self.tail)
    }
}

/// Iterator over the children of a vertex.
pub struct ChildIter {
    parent: VertexId,
    next: u8,
}

impl Iterator for ChildIter {
    type Item = VertexId;

    fn next(&mut self) -> Option<VertexId> {
        let limit = if self.parent.is_root() { 3 } else { 2 };
        if self.next >= limit {
            return None;
        }
        let c = self.parent.child(self.next);
        self.next += 1;
        Some(c)
    }
}

pub fn neighbors(v: &VertexId) -> [VertexId; 3] {
    v.neighbors()
}

pub fn distance(u: &VertexId, v: &VertexId) -> usize {
    u.distance(v)
}

pub fn path_between(u: &VertexId, v: &VertexId) -> Vec<VertexId> {
    u.path_to(v)
}

impl Ord for VertexId {
    /// Lexicographic order on address words (a proper prefix sorts first).
    fn cmp(&self, other: &Self) -> Ordering {
        let m = self.depth().min(other.depth());
        if m == 0 {
            return self.depth.cmp(&other.depth);
        }
        if self.head != other.head {
            return self.head.cmp(&other.head);
        }
        let a = self.tail >> (self.depth() - m);
        let b = other.tail >> (other.depth() - m);
        a.cmp(&b).then(self.depth.cmp(&other.depth))
    }
}

impl PartialOrd for VertexId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.depth() {
            write!(f, "{}", self.letter(i))?;
        }
        Ok(())
    }
}

impl fmt::Debug for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "\"{self}\"")
    }
}

impl FromStr for VertexId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let letters = s
            .bytes()
            .map(|b| match b {
                b'0'..=b'9' => Ok(b - b'0'),
                _ => Err(Error::MalformedAddress(format!("unexpected character in {s:?}"))),
            })
            .collect::<Result<Vec<u8>, Error>>()?;
        VertexId::from_letters(&letters)
    }
}

impl Serialize for VertexId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for VertexId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Closed ball `{v : dist(center, v) <= radius}`.
///
/// Balls are implicit: membership is a distance test and vertices are
/// enumerated in breadth-first order. The enumeration order defines a
/// bijection between the ball and `0..size()`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ball {
    pub center: VertexId,
    pub radius: usize,
}

impl Ball {
    pub fn new(center: VertexId, radius: usize) -> Self {
        Ball { center, radius }
    }

    pub fn around_root(radius: usize) -> Self {
        Ball { center: VertexId::ROOT, radius }
    }

    /// `3 * 2^R - 2` for `R >= 1`, `1` for `R = 0`.
    pub fn size(&self) -> usize {
        sphere_offset(self.radius + 1)
    }

    pub fn contains(&self, v: &VertexId) -> bool {
        self.center.distance(v) <= self.radius
    }

    /// Vertices at distance exactly `radius`.
    pub fn is_boundary(&self, v: &VertexId) -> bool {
        self.center.distance(v) == self.radius
    }

    /// Position of `v` in the breadth-first enumeration, if inside the ball.
    pub fn index_of(&self, v: &VertexId) -> Option<usize> {
        let d = self.center.distance(v);
        if d > self.radius {
            return None;
        }
        if d == 0 {
            return Some(0);
        }
        // Relative word: which neighbor of the center, then which of the two
        // forward neighbors at each step.
        let path = self.center.path_to(v);
        let first = self
            .center
            .neighbors()
            .iter()
            .position(|n| *n == path[1])
            .expect("path starts at a neighbor");
        let mut bits = 0usize;
        for w in path.windows(3) {
            let forward = forward_neighbors(&w[1], &w[0]);
            let b = if forward[0] == w[2] { 0 } else { 1 };
            bits = (bits << 1) | b;
        }
        Some(sphere_offset(d) + (first << (d - 1)) + bits)
    }

    /// Inverse of [`Ball::index_of`].
    pub fn vertex_at(&self, index: usize) -> Option<VertexId> {
        if index >= self.size() {
            return None;
        }
        if index == 0 {
            return Some(self.center);
        }
        let mut d = 1;
        while sphere_offset(d + 1) <= index {
            d += 1;
        }
        let within = index - sphere_offset(d);
        let first = within >> (d - 1);
        let bits = within & ((1 << (d - 1)) - 1);
        let mut prev = self.center;
        let mut cur = self.center.neighbors()[first];
        for k in (0..d - 1).rev() {
            let fwd = forward_neighbors(&cur, &prev);
            prev = cur;
            cur = fwd[(bits >> k) & 1];
        }
        Some(cur)
    }

    /// All vertices in breadth-first order (matches `index_of`).
    pub fn vertices(&self) -> Vec<VertexId> {
        let mut out = Vec::with_capacity(self.size());
        out.push(self.center);
        if self.radius == 0 {
            return out;
        }
        // (vertex, came-from) frontier
        let mut frontier: Vec<(VertexId, VertexId)> = Vec::with_capacity(3);
        for n in self.center.neighbors() {
            out.push(n);
            frontier.push((n, self.center));
        }
        for _ in 1..self.radius {
            let mut next = Vec::with_capacity(frontier.len() * 2);
            for (v, from) in frontier {
                for w in forward_neighbors(&v, &from) {
                    out.push(w);
                    next.push((w, v));
                }
            }
            frontier = next;
        }
        out
    }
}

/// Number of vertices at distance `< d` from any vertex.
fn sphere_offset(d: usize) -> usize {
    if d == 0 {
        0
    } else {
        3 * (1usize << (d - 1)) - 2
    }
}

/// The two neighbors of `v` other than `from`, in canonical order.
pub fn forward_neighbors(v: &VertexId, from: &VertexId) -> [VertexId; 2] {
    let mut out = [VertexId::ROOT; 2];
    let mut k = 0;
    for n in v.neighbors() {
        if n != *from {
            out[k] = n;
            k += 1;
        }
    }
    debug_assert_eq!(k, 2, "`from` must be a neighbor of `v`");
    out
}
