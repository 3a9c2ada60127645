//! Vehicle state, identities and the time-varying connectivity graph.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scalar::{wrap_angle, Real};

/// Opaque vehicle identity, stable for the lifetime of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Number of components of [`VehicleState`].
pub const STATE_DIM: usize = 6;
/// Index of the heading component in the state vector.
pub const HEADING: usize = 2;

/// Kinematic state `(x, y, h, u, a, ω)` of one vehicle.
///
/// Positions in metres, heading in radians counter-clockwise from +x,
/// tangent speed in m/s, tangent acceleration in m/s², turn rate in rad/s.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleState<T> {
    pub x: T,
    pub y: T,
    pub h: T,
    pub u: T,
    pub a: T,
    pub omega: T,
}

impl<T: Real> VehicleState<T> {
    pub fn new(x: T, y: T, h: T, u: T, a: T, omega: T) -> Self {
        VehicleState { x, y, h: wrap_angle(h), u, a, omega }
    }

    pub fn at(x: T, y: T) -> Self {
        Self::new(x, y, T::zero(), T::zero(), T::zero(), T::zero())
    }

    pub fn to_array(&self) -> [T; STATE_DIM] {
        [self.x, self.y, self.h, self.u, self.a, self.omega]
    }

    /// Builds a state from a raw vector, normalising the heading.
    pub fn from_array(v: [T; STATE_DIM]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn position(&self) -> (T, T) {
        (self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Checks the domain invariants: finite, `u ≥ 0`, heading in `(-π, π]`.
    pub fn is_valid(&self) -> bool {
        self.is_finite() && self.u >= T::zero() && self.h > -T::PI() && self.h <= T::PI()
    }

    pub fn cast<U: Real>(&self) -> VehicleState<U> {
        let c = |v: T| U::lit(v.as_f64());
        VehicleState {
            x: c(self.x),
            y: c(self.y),
            h: c(self.h),
            u: c(self.u),
            a: c(self.a),
            omega: c(self.omega),
        }
    }
}

/// Planar distance between the positions of two states; other fields ignored.
pub fn distance<T: Real>(s1: &VehicleState<T>, s2: &VehicleState<T>) -> T {
    (s1.x - s2.x).hypot(s1.y - s2.y)
}

/// Undirected range graph over vehicle positions: an edge joins two distinct
/// vehicles iff their distance is strictly below the range.
#[derive(Clone, Debug)]
pub struct EuclideanGraph<T> {
    range: T,
    ids: Vec<VehicleId>,
    positions: Vec<(T, T)>,
    index: BTreeMap<VehicleId, usize>,
    adjacency: Vec<Vec<usize>>,
    in_range: Vec<bool>,
}

impl<T: Real> EuclideanGraph<T> {
    pub fn range(&self) -> T {
        self.range
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Vehicle ids in ascending order.
    pub fn ids(&self) -> &[VehicleId] {
        &self.ids
    }

    pub fn index_of(&self, id: VehicleId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn contains(&self, id: VehicleId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn position(&self, id: VehicleId) -> Option<(T, T)> {
        self.index_of(id).map(|i| self.positions[i])
    }

    /// Neighbor set `N_i(t)` as dense node indices.
    pub fn neighbor_indices(&self, idx: usize) -> &[usize] {
        &self.adjacency[idx]
    }

    /// Neighbor set `N_i(t)`; empty for unknown ids.
    pub fn neighbors(&self, id: VehicleId) -> Vec<VehicleId> {
        match self.index_of(id) {
            Some(i) => self.adjacency[i].iter().map(|&j| self.ids[j]).collect(),
            None => Vec::new(),
        }
    }

    /// Edge test on dense indices.
    #[inline]
    pub fn linked(&self, a: usize, b: usize) -> bool {
        self.in_range[a * self.ids.len() + b]
    }

    pub fn are_neighbors(&self, a: VehicleId, b: VehicleId) -> bool {
        match (self.index_of(a), self.index_of(b)) {
            (Some(i), Some(j)) => self.linked(i, j),
            _ => false,
        }
    }

    /// All edges as ordered pairs `(a, b)` with `a < b`.
    pub fn edges(&self) -> Vec<(VehicleId, VehicleId)> {
        let mut out = Vec::new();
        for (i, adj) in self.adjacency.iter().enumerate() {
            for &j in adj {
                if i < j {
                    out.push((self.ids[i], self.ids[j]));
                }
            }
        }
        out
    }
}

/// Builds the range graph for the given vehicle states. O(n²).
pub fn build_graph<T: Real>(
    states: &BTreeMap<VehicleId, VehicleState<T>>,
    range: T,
) -> EuclideanGraph<T> {
    let ids: Vec<VehicleId> = states.keys().copied().collect();
    let positions: Vec<(T, T)> = states.values().map(|s| s.position()).collect();
    let n = ids.len();
    let index = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut adjacency = vec![Vec::new(); n];
    let mut in_range = vec![false; n * n];
    let r2 = range * range;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = positions[i].0 - positions[j].0;
            let dy = positions[i].1 - positions[j].1;
            // compare squared distances, falling back to the exact hypot near the boundary
            let d2 = dx * dx + dy * dy;
            let linked = if (d2 - r2).abs() <= r2 * T::epsilon() * T::lit(8.0) {
                dx.hypot(dy) < range
            } else {
                d2 < r2
            };
            if linked {
                adjacency[i].push(j);
                adjacency[j].push(i);
                in_range[i * n + j] = true;
                in_range[j * n + i] = true;
            }
        }
    }
    EuclideanGraph { range, ids, positions, index, adjacency, in_range }
}
