//! Evaluation metrics: distance-weighted positioning error, neighbor
//! detection error, collision rate and measured transmission interval.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::model::{distance, VehicleId, VehicleState};
use crate::scalar::Real;

/// Generalized logistic weighting curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RichardsParams<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
    pub e: T,
    pub nu: T,
    pub d0: T,
}

impl Default for RichardsParams<f64> {
    fn default() -> Self {
        RichardsParams { a: 1.0, b: 0.05, c: 1.0, d: 1.0, e: 0.0, nu: 0.2, d0: 42.0 }
    }
}

impl RichardsParams<f64> {
    pub fn from_config(cfg: &SimConfig) -> Self {
        RichardsParams {
            a: cfg.a_lambda,
            b: cfg.b_lambda,
            c: cfg.c_lambda,
            d: cfg.d_lambda,
            e: cfg.e_lambda,
            nu: cfg.nu_lambda,
            d0: cfg.d0,
        }
    }
}

/// `A + (E − A) / (C + D·e^{−B(d − d₀)})^{1/ν}`
pub fn richards_weight<T: Real>(d: T, p: &RichardsParams<T>) -> T {
    p.a + (p.e - p.a) / (p.c + p.d * (-p.b * (d - p.d0)).exp()).powf(T::one() / p.nu)
}

/// Weighted positioning error of one ego vehicle.
///
/// `tracks` yields the ego's current estimate of each tracked neighbor.
/// Targets without ground truth (vehicles that left the scenario) are left
/// out of both the sum and the normalization.
pub fn ego_error<'a, T: Real + 'a>(
    ego: VehicleId,
    self_estimate: &VehicleState<T>,
    tracks: impl IntoIterator<Item = (VehicleId, &'a VehicleState<T>)>,
    truth: &BTreeMap<VehicleId, VehicleState<T>>,
    p: &RichardsParams<T>,
) -> T {
    let me = &truth[&ego];
    let mut sum = richards_weight(T::zero(), p) * distance(self_estimate, me);
    let mut count = 1usize;
    for (target, est) in tracks {
        if target == ego {
            continue;
        }
        if let Some(real) = truth.get(&target) {
            sum += richards_weight(distance(me, real), p) * distance(est, real);
            count += 1;
        }
    }
    sum / T::from_count(count)
}

/// Mean over the vehicles present in the slot.
pub fn network_error<T: Real>(per_ego: &[T]) -> T {
    assert!(!per_ego.is_empty(), "network error of an empty network");
    per_ego.iter().fold(T::zero(), |s, &e| s + e) / T::from_count(per_ego.len())
}

/// Neighbor-set disagreement of one ego in one slot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Detection {
    /// In range but not tracked.
    pub missed: usize,
    /// Tracked but not in range (including vanished vehicles).
    pub false_detections: usize,
    /// `|N ∪ N̂|`.
    pub union: usize,
}

impl Detection {
    pub fn misdetection_rate(&self) -> f64 {
        if self.union == 0 {
            0.0
        } else {
            self.missed as f64 / self.union as f64
        }
    }

    pub fn false_detection_rate(&self) -> f64 {
        if self.union == 0 {
            0.0
        } else {
            self.false_detections as f64 / self.union as f64
        }
    }
}

/// Both inputs sorted and free of duplicates.
pub fn detection_error(actual: &[VehicleId], believed: &[VehicleId]) -> Detection {
    let (mut i, mut j) = (0, 0);
    let mut d = Detection::default();
    while i < actual.len() || j < believed.len() {
        match (actual.get(i), believed.get(j)) {
            (Some(a), Some(b)) if a == b => {
                i += 1;
                j += 1;
            }
            (Some(a), Some(b)) if a < b => {
                d.missed += 1;
                i += 1;
            }
            (Some(_), None) => {
                d.missed += 1;
                i += 1;
            }
            _ => {
                d.false_detections += 1;
                j += 1;
            }
        }
        d.union += 1;
    }
    d
}

/// Nearest-rank percentile, `q` in (0, 100].
pub fn percentile_nearest_rank(samples: &[f64], q: f64) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
    Some(s[rank.min(s.len()) - 1])
}

/// Aggregates of one run; counts only slots after the warm-up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mean_error: f64,
    pub p95_error: f64,
    pub misdetection: f64,
    pub false_detection: f64,
    pub detection_error: f64,
    /// Hidden-terminal collisions per vehicle per second.
    pub collision_rate: f64,
    /// Mean gap between channel grants, seconds; `None` when no vehicle
    /// was granted twice.
    pub mean_tx_interval: Option<f64>,
    pub transmissions: u64,
    pub collisions: u64,
    pub measured_slots: u64,
    #[serde(skip)]
    pub series: Vec<SlotSample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotSample {
    pub slot: u64,
    pub time: f64,
    pub vehicles: usize,
    pub network_error: f64,
    pub detection_error: f64,
    pub collisions: u64,
}

pub const SERIES_HEADER: &str = "# dynmap slot-series v1";

impl RunMetrics {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn write_series_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{SERIES_HEADER}").map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for s in &self.series {
            w.serialize(s).map_err(|e| Error::format(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Streaming collector fed once per slot by the engine.
#[derive(Clone, Debug)]
pub struct MetricsAccumulator {
    slot_seconds: f64,
    warmup_slots: u64,
    errors: Vec<f64>,
    miss_sum: f64,
    false_sum: f64,
    detection_samples: u64,
    collisions: u64,
    transmissions: u64,
    vehicle_seconds: f64,
    grants: BTreeMap<VehicleId, (u64, u64, u64)>,
    series: Vec<SlotSample>,
}

impl MetricsAccumulator {
    pub fn new(slot_seconds: f64, warmup_slots: u64) -> Self {
        MetricsAccumulator {
            slot_seconds,
            warmup_slots,
            errors: Vec::new(),
            miss_sum: 0.0,
            false_sum: 0.0,
            detection_samples: 0,
            collisions: 0,
            transmissions: 0,
            vehicle_seconds: 0.0,
            grants: BTreeMap::new(),
            series: Vec::new(),
        }
    }

    pub fn measuring(&self, slot: u64) -> bool {
        slot >= self.warmup_slots
    }

    /// Records one slot. `ego_errors` and `detections` hold one entry per
    /// vehicle present.
    pub fn record_slot(
        &mut self,
        slot: u64,
        ego_errors: &[f64],
        detections: &[Detection],
        collisions: u64,
        granted: impl IntoIterator<Item = VehicleId>,
    ) {
        let measuring = self.measuring(slot);
        for v in granted {
            let e = self.grants.entry(v).or_insert((u64::MAX, 0, 0));
            if measuring && e.0 != u64::MAX {
                e.1 += slot - e.0;
                e.2 += 1;
            }
            e.0 = slot;
            if measuring {
                self.transmissions += 1;
            }
        }
        if !measuring {
            return;
        }
        self.errors.extend_from_slice(ego_errors);
        let mut det_sum = 0.0;
        for d in detections {
            self.miss_sum += d.misdetection_rate();
            self.false_sum += d.false_detection_rate();
            det_sum += d.misdetection_rate() + d.false_detection_rate();
        }
        self.detection_samples += detections.len() as u64;
        self.collisions += collisions;
        self.vehicle_seconds += ego_errors.len() as f64 * self.slot_seconds;
        self.series.push(SlotSample {
            slot,
            time: slot as f64 * self.slot_seconds,
            vehicles: ego_errors.len(),
            network_error: if ego_errors.is_empty() { 0.0 } else { network_error(ego_errors) },
            detection_error: if detections.is_empty() { 0.0 } else { det_sum / detections.len() as f64 },
            collisions,
        });
    }

    pub fn finish(self) -> RunMetrics {
        let n = self.errors.len();
        let mean_error = if n == 0 { 0.0 } else { self.errors.iter().sum::<f64>() / n as f64 };
        let p95_error = percentile_nearest_rank(&self.errors, 95.0).unwrap_or(0.0);
        let det_n = self.detection_samples.max(1) as f64;
        let gaps: Vec<f64> = self
            .grants
            .values()
            .filter(|g| g.2 > 0)
            .map(|g| g.1 as f64 / g.2 as f64 * self.slot_seconds)
            .collect();
        RunMetrics {
            mean_error,
            p95_error,
            misdetection: self.miss_sum / det_n,
            false_detection: self.false_sum / det_n,
            detection_error: (self.miss_sum + self.false_sum) / det_n,
            collision_rate: if self.vehicle_seconds > 0.0 { self.collisions as f64 / self.vehicle_seconds } else { 0.0 },
            mean_tx_interval: if gaps.is_empty() { None } else { Some(gaps.iter().sum::<f64>() / gaps.len() as f64) },
            transmissions: self.transmissions,
            collisions: self.collisions,
            measured_slots: self.series.len() as u64,
            series: self.series,
        }
    }
}
