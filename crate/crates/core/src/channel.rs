//! Slotted broadcast channel: subcarriers, idealised 1-persistent CSMA/CA
//! among in-range contenders, hidden-terminal collisions and a fixed
//! delivery delay.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::filter::StateEstimate;
use crate::model::{EuclideanGraph, VehicleId};
use crate::scalar::Real;

/// Subcarrier of a vehicle, fixed for the whole run.
///
/// Vehicle ids are dense indices, so the residue spreads any id population
/// evenly and gives every vehicle its own subcarrier once `n_sc ≥ |V|`.
pub fn assign_subcarrier(id: VehicleId, n_sc: usize) -> usize {
    assert!(n_sc >= 1, "at least one subcarrier");
    (id.0 as usize) % n_sc
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Packet<T: Real> {
    pub sender: VehicleId,
    pub payload: StateEstimate<T>,
    /// Slot the payload estimate refers to (when the packet was queued).
    pub created_slot: u64,
    pub subcarrier: usize,
}

/// Per-subcarrier backlog of vehicles waiting for the channel.
#[derive(Clone, Debug)]
pub struct AccessQueue {
    queues: Vec<Vec<VehicleId>>,
}

impl AccessQueue {
    pub fn new(n_sc: usize) -> Self {
        AccessQueue { queues: vec![Vec::new(); n_sc.max(1)] }
    }

    pub fn n_sc(&self) -> usize {
        self.queues.len()
    }

    /// Adds the vehicle to its subcarrier's backlog; `false` if already queued.
    pub fn enqueue(&mut self, id: VehicleId) -> bool {
        let sc = assign_subcarrier(id, self.n_sc());
        let q = &mut self.queues[sc];
        if q.contains(&id) {
            false
        } else {
            q.push(id);
            true
        }
    }

    pub fn contains(&self, id: VehicleId) -> bool {
        self.queues[assign_subcarrier(id, self.n_sc())].contains(&id)
    }

    pub fn remove(&mut self, id: VehicleId) {
        let sc = assign_subcarrier(id, self.n_sc());
        self.queues[sc].retain(|&v| v != id);
    }

    /// Backlog size `x_t` of one subcarrier.
    pub fn len(&self, subcarrier: usize) -> usize {
        self.queues[subcarrier].len()
    }

    pub fn total(&self) -> usize {
        self.queues.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn members(&self, subcarrier: usize) -> &[VehicleId] {
        &self.queues[subcarrier]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReceptionOutcome {
    Delivered,
    HiddenCollision,
}

impl ReceptionOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReceptionOutcome::Delivered => "delivered",
            ReceptionOutcome::HiddenCollision => "hidden_collision",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Reception {
    pub sender: VehicleId,
    pub receiver: VehicleId,
    pub subcarrier: usize,
    pub outcome: ReceptionOutcome,
}

#[derive(Clone, Debug, Default)]
pub struct SlotOutcome {
    /// Granted transmitters per subcarrier, in grant order.
    pub granted: Vec<Vec<VehicleId>>,
    /// One entry per (transmitter, in-range receiver) pair.
    pub receptions: Vec<Reception>,
    /// Busy flag per graph node index (own subcarrier sensed busy).
    pub busy: Vec<bool>,
}

impl SlotOutcome {
    pub fn granted_all(&self) -> impl Iterator<Item = VehicleId> + '_ {
        self.granted.iter().flatten().copied()
    }

    pub fn collisions(&self) -> usize {
        self.receptions.iter().filter(|r| r.outcome == ReceptionOutcome::HiddenCollision).count()
    }
}

/// Arbitrates one slot.
///
/// Contenders of each subcarrier are visited in uniformly random order and a
/// contender is granted iff no already-granted transmitter of the same
/// subcarrier is within range. Granted vehicles leave the backlog, the rest
/// keep waiting. A receiver in range of a granted sender collides when
/// another granted same-subcarrier transmitter, out of the sender's range,
/// also reaches it.
pub fn resolve_slot<T: Real, R: Rng + ?Sized>(
    graph: &EuclideanGraph<T>,
    queues: &mut AccessQueue,
    rng: &mut R,
) -> SlotOutcome {
    let n_sc = queues.n_sc();
    let mut out = SlotOutcome {
        granted: vec![Vec::new(); n_sc],
        receptions: Vec::new(),
        busy: vec![false; graph.len()],
    };
    for sc in 0..n_sc {
        if queues.queues[sc].is_empty() {
            continue;
        }
        let mut order: Vec<VehicleId> = queues.queues[sc].clone();
        order.shuffle(rng);
        let mut granted_idx: Vec<usize> = Vec::new();
        for id in order {
            let Some(i) = graph.index_of(id) else { continue };
            if granted_idx.iter().all(|&g| !graph.linked(g, i)) {
                granted_idx.push(i);
                out.granted[sc].push(id);
            }
        }
        queues.queues[sc].retain(|v| !out.granted[sc].contains(v));

        for &a in &granted_idx {
            out.busy[a] = true;
            for &b in graph.neighbor_indices(a) {
                let hidden = granted_idx
                    .iter()
                    .any(|&c| c != a && c != b && graph.linked(c, b) && !graph.linked(c, a));
                out.receptions.push(Reception {
                    sender: graph.ids()[a],
                    receiver: graph.ids()[b],
                    subcarrier: sc,
                    outcome: if hidden { ReceptionOutcome::HiddenCollision } else { ReceptionOutcome::Delivered },
                });
                if assign_subcarrier(graph.ids()[b], n_sc) == sc {
                    out.busy[b] = true;
                }
            }
        }
    }
    out
}

/// Packets on the air, waiting for their delivery slot.
#[derive(Clone, Debug)]
pub struct InFlight<T: Real> {
    delay_slots: u64,
    pending: VecDeque<(u64, VehicleId, Packet<T>)>,
}

impl<T: Real> InFlight<T> {
    pub fn new(delay_slots: u64) -> Self {
        InFlight { delay_slots: delay_slots.max(1), pending: VecDeque::new() }
    }

    pub fn delay_slots(&self) -> u64 {
        self.delay_slots
    }

    /// Schedules the delivered (non-collided) receptions of the slot `now`
    /// for delivery `delay_slots` later. Receivers are frozen at `now`.
    pub fn schedule(
        &mut self,
        outcome: &SlotOutcome,
        now: u64,
        mut packet_of: impl FnMut(VehicleId, usize) -> Packet<T>,
    ) {
        let mut cache: Vec<(VehicleId, Packet<T>)> = Vec::new();
        for r in &outcome.receptions {
            if r.outcome != ReceptionOutcome::Delivered {
                continue;
            }
            let pkt = match cache.iter().find(|(s, _)| *s == r.sender) {
                Some((_, p)) => *p,
                None => {
                    let p = packet_of(r.sender, r.subcarrier);
                    cache.push((r.sender, p));
                    p
                }
            };
            self.pending.push_back((now + self.delay_slots, r.receiver, pkt));
        }
    }

    /// Pops every packet due at `now`, in transmission order.
    pub fn deliver_due(&mut self, now: u64) -> Vec<(VehicleId, Packet<T>)> {
        let mut due = Vec::new();
        let mut keep = VecDeque::with_capacity(self.pending.len());
        for (slot, rx, pkt) in self.pending.drain(..) {
            if slot == now {
                due.push((rx, pkt));
            } else if slot > now {
                keep.push_back((slot, rx, pkt));
            }
        }
        self.pending = keep;
        due
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::Cov6;
    use crate::model::{build_graph, VehicleState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn graph(pts: &[(f64, f64)]) -> EuclideanGraph<f64> {
        let states: BTreeMap<_, _> = pts
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| (VehicleId(i as u32), VehicleState::at(x, y)))
            .collect();
        build_graph(&states, 140.0)
    }

    fn pkt(sender: VehicleId, slot: u64) -> Packet<f64> {
        Packet {
            sender,
            payload: StateEstimate::new(VehicleState::at(0.0, 0.0), Cov6::identity()),
            created_slot: slot,
            subcarrier: 0,
        }
    }

    #[test]
    fn subcarrier_assignment() {
        assert!((0..100).all(|i| assign_subcarrier(VehicleId(i), 1) == 0));
        assert_eq!(assign_subcarrier(VehicleId(17), 8), assign_subcarrier(VehicleId(17), 8));
    }

    #[test]
    fn subcarrier_balance_over_random_id_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let mut bins = [0usize; 8];
            for _ in 0..62 {
                bins[assign_subcarrier(VehicleId(rng.random()), 8)] += 1;
            }
            let mean = 62.0 / 8.0;
            assert!(*bins.iter().max().unwrap() as f64 <= 2.0 * mean + 1e-9, "{bins:?}");
        }
    }

    #[test]
    fn in_range_contenders_share_one_grant() {
        let g = graph(&[(0.0, 0.0), (50.0, 0.0)]);
        let mut q = AccessQueue::new(1);
        q.enqueue(VehicleId(0));
        q.enqueue(VehicleId(1));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = resolve_slot(&g, &mut q, &mut rng);
        assert_eq!(out.granted[0].len(), 1);
        assert_eq!(q.len(0), 1);
        assert!(!q.contains(out.granted[0][0]));
        assert_eq!(out.collisions(), 0);
        assert!(out.busy.iter().all(|&b| b));
    }

    #[test]
    fn hidden_terminal_chain() {
        // A and C out of range of each other, B in the middle
        let g = graph(&[(0.0, 0.0), (100.0, 0.0), (200.0, 0.0)]);
        let mut q = AccessQueue::new(1);
        q.enqueue(VehicleId(0));
        q.enqueue(VehicleId(2));
        let out = resolve_slot(&g, &mut q, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out.granted[0].len(), 2);
        let at_b: Vec<_> = out.receptions.iter().filter(|r| r.receiver == VehicleId(1)).collect();
        assert_eq!(at_b.len(), 2);
        assert!(at_b.iter().all(|r| r.outcome == ReceptionOutcome::HiddenCollision));
        assert_eq!(out.collisions(), 2);
    }

    #[test]
    fn different_subcarriers_do_not_interfere() {
        let g = graph(&[(0.0, 0.0), (100.0, 0.0), (200.0, 0.0)]);
        let mut q = AccessQueue::new(3);
        q.enqueue(VehicleId(0));
        q.enqueue(VehicleId(2));
        let out = resolve_slot(&g, &mut q, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out.collisions(), 0);
        // B listens on its own subcarrier only
        assert!(!out.busy[1]);
    }

    #[test]
    fn uncontended_broadcast_reaches_neighbors_next_slot() {
        let g = graph(&[(0.0, 0.0), (100.0, 0.0), (0.0, 100.0), (500.0, 500.0)]);
        let mut q = AccessQueue::new(1);
        q.enqueue(VehicleId(0));
        let out = resolve_slot(&g, &mut q, &mut ChaCha8Rng::seed_from_u64(0));
        let mut air = InFlight::new(1);
        air.schedule(&out, 7, |s, _| pkt(s, 5));
        assert!(air.deliver_due(7).is_empty());
        let got = air.deliver_due(8);
        let mut rx: Vec<_> = got.iter().map(|(r, _)| *r).collect();
        rx.sort();
        assert_eq!(rx, vec![VehicleId(1), VehicleId(2)]);
        assert!(air.is_empty());
    }

    #[test]
    fn collided_pairs_are_never_delivered() {
        let g = graph(&[(0.0, 0.0), (100.0, 0.0), (200.0, 0.0)]);
        let mut q = AccessQueue::new(1);
        q.enqueue(VehicleId(0));
        q.enqueue(VehicleId(2));
        let out = resolve_slot(&g, &mut q, &mut ChaCha8Rng::seed_from_u64(0));
        let mut air = InFlight::new(1);
        air.schedule(&out, 0, |s, _| pkt(s, 0));
        let got = air.deliver_due(1);
        assert!(got.iter().all(|(r, _)| *r != VehicleId(1)));
        assert!(air.deliver_due(2).is_empty());
    }

    #[test]
    fn queue_membership_is_unique() {
        let mut q = AccessQueue::new(2);
        assert!(q.enqueue(VehicleId(4)));
        assert!(!q.enqueue(VehicleId(4)));
        assert_eq!(q.total(), 1);
        q.remove(VehicleId(4));
        assert!(q.is_empty());
    }
}
