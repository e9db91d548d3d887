//! Finite simulation windows with flat, index-addressed storage.
//!
//! A [`Domain`] is a connected finite vertex set (usually a ball) together
//! with its outer layer: the vertices outside the set that are adjacent to it.
//! Inner vertices occupy indices `0..inner_len()`, the outer layer follows.

use std::collections::{HashMap, HashSet};

use crate::topology::{forward_neighbors, Ball, VertexId};

#[derive(Clone, Debug)]
enum Lookup {
    Ball(Ball),
    Map(HashMap<VertexId, u32>),
}

#[derive(Clone, Debug)]
pub struct Domain {
    center: VertexId,
    ids: Vec<VertexId>,
    inner: usize,
    nbrs: Vec<[u32; 3]>,
    dist: Vec<u16>,
    // position of each inner vertex in lexicographic address order
    rank: Vec<u32>,
    lookup: Lookup,
    radius: Option<usize>,
}

impl Domain {
    /// The ball plus the sphere at distance `radius + 1` as outer layer.
    pub fn from_ball(ball: &Ball) -> Self {
        let outer_ball = Ball::new(ball.center, ball.radius + 1);
        let inner = ball.size();
        let total = outer_ball.size();
        let mut ids = Vec::with_capacity(total);
        let mut dist = Vec::with_capacity(total);
        let mut nbrs = vec![[0u32; 3]; inner];
        // breadth-first with known parent indices so neighbor tables need no lookups
        ids.push(ball.center);
        dist.push(0u16);
        let mut frontier: Vec<(u32, u32)> = Vec::new(); // (index, parent index)
        {
            let c = ball.center;
            for (k, n) in c.neighbors().into_iter().enumerate() {
                let idx = ids.len() as u32;
                ids.push(n);
                dist.push(1);
                nbrs[0][k] = idx;
                frontier.push((idx, 0));
            }
        }
        for d in 1..=ball.radius {
            let mut next = Vec::with_capacity(frontier.len() * 2);
            for &(i, p) in &frontier {
                let v = ids[i as usize];
                let from = ids[p as usize];
                let fwd = forward_neighbors(&v, &from);
                let mut children = [0u32; 2];
                for (k, w) in fwd.into_iter().enumerate() {
                    let idx = ids.len() as u32;
                    ids.push(w);
                    dist.push((d + 1) as u16);
                    children[k] = idx;
                    next.push((idx, i));
                }
                let mut slot = [0u32; 3];
                let mut c = 0;
                for (k, n) in v.neighbors().into_iter().enumerate() {
                    if n == from {
                        slot[k] = p;
                    } else {
                        slot[k] = children[c];
                        c += 1;
                    }
                }
                nbrs[i as usize] = slot;
            }
            frontier = next;
        }
        debug_assert_eq!(ids.len(), total);
        let rank = lex_rank(&ids[..inner]);
        Domain {
            center: ball.center,
            ids,
            inner,
            nbrs,
            dist,
            rank,
            lookup: Lookup::Ball(outer_ball),
            radius: Some(ball.radius),
        }
    }

    /// Arbitrary connected vertex set containing `center`.
    pub fn from_set(center: VertexId, members: &HashSet<VertexId>) -> Self {
        assert!(members.contains(&center), "domain must contain its center");
        let mut index: HashMap<VertexId, u32> = HashMap::with_capacity(members.len() * 2);
        let mut ids = vec![center];
        let mut dist = vec![0u16];
        index.insert(center, 0);
        let mut head = 0;
        while head < ids.len() {
            let v = ids[head];
            for n in v.neighbors() {
                if members.contains(&n) && !index.contains_key(&n) {
                    index.insert(n, ids.len() as u32);
                    ids.push(n);
                    dist.push(dist[head] + 1);
                }
            }
            head += 1;
        }
        assert_eq!(ids.len(), members.len(), "domain vertex set must be connected");
        let inner = ids.len();
        let mut nbrs = vec![[0u32; 3]; inner];
        for i in 0..inner {
            let v = ids[i];
            for (k, n) in v.neighbors().into_iter().enumerate() {
                let idx = match index.get(&n) {
                    Some(&j) => j,
                    None => {
                        let j = ids.len() as u32;
                        index.insert(n, j);
                        ids.push(n);
                        dist.push(dist[i] + 1);
                        j
                    }
                };
                nbrs[i][k] = idx;
            }
        }
        let rank = lex_rank(&ids[..inner]);
        Domain { center, ids, inner, nbrs, dist, rank, lookup: Lookup::Map(index), radius: None }
    }

    pub fn center(&self) -> VertexId {
        self.center
    }

    /// Radius when the domain is a ball.
    pub fn radius(&self) -> Option<usize> {
        self.radius
    }

    pub fn inner_len(&self) -> usize {
        self.inner
    }

    pub fn total_len(&self) -> usize {
        self.ids.len()
    }

    #[inline]
    pub fn id(&self, i: u32) -> VertexId {
        self.ids[i as usize]
    }

    pub fn ids(&self) -> &[VertexId] {
        &self.ids
    }

    pub fn inner_ids(&self) -> &[VertexId] {
        &self.ids[..self.inner]
    }

    #[inline]
    pub fn is_inner(&self, i: u32) -> bool {
        (i as usize) < self.inner
    }

    /// Neighbor indices of an inner vertex, in canonical neighbor order.
    #[inline]
    pub fn neighbors(&self, i: u32) -> [u32; 3] {
        self.nbrs[i as usize]
    }

    /// Distance from the center (breadth-first depth).
    #[inline]
    pub fn depth(&self, i: u32) -> usize {
        self.dist[i as usize] as usize
    }

    #[inline]
    pub(crate) fn rank(&self, i: u32) -> u32 {
        self.rank[i as usize]
    }

    /// Inner vertices with at least one neighbor in the outer layer.
    pub fn is_boundary(&self, i: u32) -> bool {
        self.is_inner(i) && self.nbrs[i as usize].iter().any(|&n| !self.is_inner(n))
    }

    pub fn index_of(&self, v: &VertexId) -> Option<u32> {
        match &self.lookup {
            Lookup::Ball(b) => b.index_of(v).map(|i| i as u32),
            Lookup::Map(m) => m.get(v).copied(),
        }
    }

    pub fn contains_inner(&self, v: &VertexId) -> bool {
        self.index_of(v).is_some_and(|i| self.is_inner(i))
    }
}

fn lex_rank(ids: &[VertexId]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..ids.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| ids[a as usize].cmp(&ids[b as usize]));
    let mut rank = vec![0u32; ids.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i as usize] = r as u32;
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_domain_layout_matches_enumeration() {
        for (center, r) in [(VertexId::root(), 0), (VertexId::root(), 4), ("011".parse().unwrap(), 3)] {
            let ball = Ball::new(center, r);
            let d = Domain::from_ball(&ball);
            assert_eq!(d.inner_len(), ball.size());
            assert_eq!(d.total_len(), Ball::new(center, r + 1).size());
            for i in 0..d.inner_len() as u32 {
                let v = d.id(i);
                assert_eq!(d.index_of(&v), Some(i));
                let expect = v.neighbors();
                for (k, n) in d.neighbors(i).into_iter().enumerate() {
                    assert_eq!(d.id(n), expect[k]);
                }
                assert_eq!(d.depth(i), center.distance(&v));
                assert_eq!(d.is_boundary(i), d.depth(i) == r);
            }
        }
    }

    #[test]
    fn set_domain_matches_ball_domain() {
        let ball = Ball::around_root(3);
        let set: HashSet<VertexId> = ball.vertices().into_iter().collect();
        let a = Domain::from_set(VertexId::root(), &set);
        let b = Domain::from_ball(&ball);
        assert_eq!(a.inner_len(), b.inner_len());
        assert_eq!(a.total_len(), b.total_len());
        for v in ball.vertices() {
            let ia = a.index_of(&v).unwrap();
            let ib = b.index_of(&v).unwrap();
            let na: Vec<VertexId> = a.neighbors(ia).iter().map(|&n| a.id(n)).collect();
            let nb: Vec<VertexId> = b.neighbors(ib).iter().map(|&n| b.id(n)).collect();
            assert_eq!(na, nb);
            assert_eq!(a.rank(ia), b.rank(ib));
        }
    }
}
