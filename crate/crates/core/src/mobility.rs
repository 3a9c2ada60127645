//! Ground-truth trajectories: SUMO floating-car-data import, a CSV trace
//! format, and a synthetic random-trip generator on a Manhattan grid.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{VehicleId, VehicleState};
use crate::scalar::wrap_angle;

type State = VehicleState<f64>;

/// Contiguous per-slot states of one vehicle.
#[derive(Clone, Debug, PartialEq)]
pub struct VehicleTrace {
    pub first_slot: u64,
    pub states: Vec<State>,
}

impl VehicleTrace {
    pub fn last_slot(&self) -> u64 {
        self.first_slot + self.states.len() as u64 - 1
    }

    pub fn state_at(&self, slot: u64) -> Option<&State> {
        slot.checked_sub(self.first_slot).and_then(|k| self.states.get(k as usize))
    }
}

/// Immutable ground truth for a whole run.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceSet {
    /// Slot duration in seconds.
    pub slot: f64,
    /// Area of the region the vehicles move in, km².
    pub area_km2: f64,
    pub vehicles: BTreeMap<VehicleId, VehicleTrace>,
    /// Original identifiers for imported traces.
    pub names: BTreeMap<VehicleId, String>,
}

pub const TRACE_HEADER: &str = "# dynmap trace v1";

impl TraceSet {
    /// Number of slots covered (last slot with data + 1).
    pub fn n_slots(&self) -> u64 {
        self.vehicles.values().map(|v| v.last_slot() + 1).max().unwrap_or(0)
    }

    pub fn snapshot(&self, slot: u64) -> BTreeMap<VehicleId, State> {
        self.vehicles
            .iter()
            .filter_map(|(id, tr)| tr.state_at(slot).map(|s| (*id, *s)))
            .collect()
    }

    pub fn active_count(&self, slot: u64) -> usize {
        self.vehicles.values().filter(|tr| tr.state_at(slot).is_some()).count()
    }

    /// Largest speed implied by consecutive positions.
    pub fn max_step_speed(&self) -> f64 {
        self.vehicles
            .values()
            .flat_map(|tr| tr.states.windows(2))
            .map(|w| ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt() / self.slot)
            .fold(0.0, f64::max)
    }

    /// Mean number of vehicles per km² over the covered slots.
    pub fn mean_density(&self) -> f64 {
        let n = self.n_slots();
        if n == 0 || self.area_km2 <= 0.0 {
            return 0.0;
        }
        let total: usize = (0..n).map(|s| self.active_count(s)).sum();
        total as f64 / n as f64 / self.area_km2
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{TRACE_HEADER} slot={} area_km2={}", self.slot, self.area_km2)
            .map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let fmt = |e: csv::Error| Error::format(path, e);
        w.write_record(["slot", "id", "x", "y", "h", "u", "a", "omega"]).map_err(fmt)?;
        for (id, tr) in &self.vehicles {
            for (k, s) in tr.states.iter().enumerate() {
                let slot = tr.first_slot + k as u64;
                w.write_record([
                    slot.to_string(),
                    id.0.to_string(),
                    s.x.to_string(),
                    s.y.to_string(),
                    s.h.to_string(),
                    s.u.to_string(),
                    s.a.to_string(),
                    s.omega.to_string(),
                ])
                .map_err(fmt)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a `slot,id,x,y,h,u,a,omega` trace. Slot duration and area come
    /// from the version line when present, else from the arguments.
    pub fn read_csv(path: impl AsRef<Path>, slot: f64) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut slot = slot;
        let mut area = None;
        if let Some(rest) = text.lines().next().and_then(|l| l.strip_prefix(TRACE_HEADER)) {
            for kv in rest.split_whitespace() {
                match kv.split_once('=') {
                    Some(("slot", v)) => slot = v.parse().map_err(|_| Error::format(path, "bad slot in header"))?,
                    Some(("area_km2", v)) => {
                        area = Some(v.parse().map_err(|_| Error::format(path, "bad area in header"))?)
                    }
                    _ => {}
                }
            }
        }
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = r.headers().map_err(|e| Error::format(path, e))?.clone();
        let expected = ["slot", "id", "x", "y", "h", "u", "a", "omega"];
        if headers.iter().ne(expected.iter().copied()) {
            return Err(Error::format(path, format!("expected header `{}`", expected.join(","))));
        }
        let mut rows: BTreeMap<VehicleId, Vec<(u64, State)>> = BTreeMap::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::format(path, e))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let f = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| Error::format(path, format!("line {line}: bad `{}` value", expected[i])))
            };
            let slot_idx: u64 =
                rec[0].parse().map_err(|_| Error::format(path, format!("line {line}: bad slot index")))?;
            let id: u32 = rec[1].parse().map_err(|_| Error::format(path, format!("line {line}: bad vehicle id")))?;
            let s = State::new(f(2)?, f(3)?, f(4)?, f(5)?, f(6)?, f(7)?);
            rows.entry(VehicleId(id)).or_default().push((slot_idx, s));
        }
        let mut vehicles = BTreeMap::new();
        for (id, mut samples) in rows {
            samples.sort_by_key(|(k, _)| *k);
            check_contiguous(id, samples.iter().map(|(k, _)| *k))?;
            let first_slot = samples[0].0;
            vehicles.insert(id, VehicleTrace { first_slot, states: samples.into_iter().map(|(_, s)| s).collect() });
        }
        let mut set = TraceSet { slot, area_km2: 0.0, vehicles, names: BTreeMap::new() };
        set.area_km2 = area.unwrap_or_else(|| set.bounding_area_km2());
        Ok(set)
    }

    /// Area of the axis-aligned bounding box of all positions, km².
    pub fn bounding_area_km2(&self) -> f64 {
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for s in self.vehicles.values().flat_map(|t| &t.states) {
            lo = (lo.0.min(s.x), lo.1.min(s.y));
            hi = (hi.0.max(s.x), hi.1.max(s.y));
        }
        if lo.0 > hi.0 {
            0.0
        } else {
            (hi.0 - lo.0) * (hi.1 - lo.1) / 1e6
        }
    }
}

fn check_contiguous(id: VehicleId, slots: impl Iterator<Item = u64>) -> Result<()> {
    let mut prev: Option<u64> = None;
    for k in slots {
        if let Some(p) = prev {
            if k != p + 1 {
                return Err(Error::Resampling(format!(
                    "vehicle {id} is not present on consecutive slots ({p} then {k})"
                )));
            }
        }
        prev = Some(k);
    }
    Ok(())
}

/// SUMO heading (degrees clockwise from north) to radians counter-clockwise
/// from +x.
pub fn sumo_angle_to_heading(deg: f64) -> f64 {
    wrap_angle((90.0 - deg).to_radians())
}

struct FcdSample {
    step: usize,
    x: f64,
    y: f64,
    h: f64,
    u: f64,
}

/// Loads a SUMO floating-car-data export and aligns it to slots of
/// `slot` seconds.
pub fn load_fcd_trace(path: impl AsRef<Path>, slot: f64) -> Result<TraceSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fcd(&text, path, slot)
}

/// Same as [`load_fcd_trace`] on an in-memory document; `path` is only used
/// in error messages.
pub fn parse_fcd(text: &str, path: &Path, slot: f64) -> Result<TraceSet> {
    let doc = roxmltree::Document::parse(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.pos().row,
        message: e.to_string(),
    })?;
    let line_of = |n: roxmltree::Node| doc.text_pos_at(n.range().start).row;
    let attr = |n: roxmltree::Node, name: &str| -> Result<f64> {
        let raw = n.attribute(name).ok_or_else(|| Error::Schema {
            path: path.to_path_buf(),
            element: n.tag_name().name().to_string(),
            attribute: name.to_string(),
            line: line_of(n),
        })?;
        raw.trim().parse().map_err(|_| {
            Error::format(path, format!("line {}: attribute `{name}` is not a number: `{raw}`", line_of(n)))
        })
    };

    let mut times = Vec::new();
    let mut by_name: BTreeMap<String, Vec<FcdSample>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (step, ts) in doc.root_element().children().filter(|n| n.has_tag_name("timestep")).enumerate() {
        times.push(attr(ts, "time")?);
        for v in ts.children().filter(|n| n.has_tag_name("vehicle")) {
            let name = v
                .attribute("id")
                .ok_or_else(|| Error::Schema {
                    path: path.to_path_buf(),
                    element: "vehicle".into(),
                    attribute: "id".into(),
                    line: line_of(v),
                })?
                .to_string();
            let sample = FcdSample {
                step,
                x: attr(v, "x")?,
                y: attr(v, "y")?,
                h: sumo_angle_to_heading(attr(v, "angle")?),
                u: attr(v, "speed")?,
            };
            let entry = by_name.entry(name.clone()).or_default();
            if entry.is_empty() {
                order.push(name);
            }
            entry.push(sample);
        }
    }

    let step_dt = if times.len() >= 2 { times[1] - times[0] } else { slot };
    let tol = 1e-6 * step_dt.abs().max(1.0);
    if step_dt <= 0.0 || times.windows(2).any(|w| ((w[1] - w[0]) - step_dt).abs() > tol) {
        return Err(Error::Resampling(format!("{}: timesteps are not uniformly spaced", path.display())));
    }
    let up = step_dt / slot;
    let down = slot / step_dt;
    let near_int = |r: f64| (r - r.round()).abs() < 1e-6 && r.round() >= 1.0;
    let (upsample, keep_every) = if near_int(up) {
        (up.round() as usize, 1)
    } else if near_int(down) {
        (1, down.round() as usize)
    } else {
        return Err(Error::Resampling(format!(
            "{}: timestep {step_dt} s cannot be aligned to slots of {slot} s",
            path.display()
        )));
    };

    let mut vehicles = BTreeMap::new();
    let mut names = BTreeMap::new();
    for (idx, name) in order.into_iter().enumerate() {
        let id = VehicleId(idx as u32);
        let samples: Vec<&FcdSample> = by_name[&name].iter().filter(|s| s.step % keep_every == 0).collect();
        if samples.is_empty() {
            continue;
        }
        check_contiguous(id, samples.iter().map(|s| (s.step / keep_every) as u64))
            .map_err(|_| Error::Resampling(format!("vehicle `{name}` disappears and reappears")))?;
        let first_slot = (samples[0].step / keep_every * upsample) as u64;
        let mut pts: Vec<(f64, f64, f64, f64)> = Vec::new();
        for w in samples.windows(2) {
            let (p, q) = (w[0], w[1]);
            let dh = wrap_angle(q.h - p.h);
            for k in 0..upsample {
                let t = k as f64 / upsample as f64;
                pts.push((p.x + t * (q.x - p.x), p.y + t * (q.y - p.y), wrap_angle(p.h + t * dh), p.u + t * (q.u - p.u)));
            }
        }
        let last = samples[samples.len() - 1];
        pts.push((last.x, last.y, last.h, last.u));
        vehicles.insert(id, VehicleTrace { first_slot, states: complete_kinematics(&pts, slot) });
        names.insert(id, name);
    }
    let mut set = TraceSet { slot, area_km2: 0.0, vehicles, names };
    set.area_km2 = set.bounding_area_km2();
    Ok(set)
}

/// Fills `a` and `ω` by finite differences of given `(x, y, h, u)` samples.
fn complete_kinematics(pts: &[(f64, f64, f64, f64)], dt: f64) -> Vec<State> {
    let n = pts.len();
    (0..n)
        .map(|k| {
            let (x, y, h, u) = pts[k];
            if n < 2 {
                return State::new(x, y, h, u, 0.0, 0.0);
            }
            let (lo, hi) = (k.saturating_sub(1), (k + 1).min(n - 1));
            let span = (hi - lo) as f64 * dt;
            let a = (pts[hi].3 - pts[lo].3) / span;
            let omega = wrap_angle(pts[hi].2 - pts[lo].2) / span;
            State::new(x, y, h, u.max(0.0), a, omega)
        })
        .collect()
}

const STATIONARY: f64 = 1e-9;

/// Reconstructs full states from positions sampled every `dt` seconds.
pub fn derive_state(positions: &[(f64, f64)], dt: f64) -> Result<Vec<State>> {
    let n = positions.len();
    if n < 3 {
        return Err(Error::Precondition(format!("state derivation needs at least 3 samples, got {n}")));
    }
    let span = |k: usize| {
        let (lo, hi) = (k.saturating_sub(1), (k + 1).min(n - 1));
        (lo, hi, (hi - lo) as f64 * dt)
    };
    // central differences inside, second-order one-sided at the ends
    let one_sided = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| {
        ((-3.0 * a.0 + 4.0 * b.0 - c.0) / (2.0 * dt), (-3.0 * a.1 + 4.0 * b.1 - c.1) / (2.0 * dt))
    };
    let vel: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            if k == 0 {
                return one_sided(positions[0], positions[1], positions[2]);
            }
            if k == n - 1 {
                let v = one_sided(positions[n - 1], positions[n - 2], positions[n - 3]);
                return (-v.0, -v.1);
            }
            let (lo, hi, t) = span(k);
            ((positions[hi].0 - positions[lo].0) / t, (positions[hi].1 - positions[lo].1) / t)
        })
        .collect();
    let speed: Vec<f64> = vel.iter().map(|v| v.0.hypot(v.1)).collect();
    let moving: Vec<bool> = speed.iter().map(|&u| u > STATIONARY).collect();

    let mut heading = vec![0.0; n];
    let mut last = vel.iter().zip(&moving).find(|(_, &m)| m).map(|(v, _)| v.1.atan2(v.0)).unwrap_or(0.0);
    for k in 0..n {
        if moving[k] {
            last = vel[k].1.atan2(vel[k].0);
        }
        heading[k] = last;
    }
    Ok((0..n)
        .map(|k| {
            let (lo, hi, t) = span(k);
            let a = (speed[hi] - speed[lo]) / t;
            let omega = if moving[k] { wrap_angle(heading[hi] - heading[lo]) / t } else { 0.0 };
            State::new(positions[k].0, positions[k].1, heading[k], speed[k], a, omega)
        })
        .collect())
}

/// Manhattan street grid for the synthetic trip generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridMapSpec {
    /// Street spacing, m.
    pub block: f64,
    /// Number of blocks along x and y; 0 rows gives a single street.
    pub cols: usize,
    pub rows: usize,
    /// Speed limit, m/s.
    pub v_max: f64,
    pub accel: f64,
    pub decel: f64,
    /// Speed cap while turning, m/s.
    pub turn_speed: f64,
    pub turn_radius: f64,
    pub p_straight: f64,
    pub p_left: f64,
    pub p_right: f64,
}

impl Default for GridMapSpec {
    /// 8×8 blocks covering 0.5168 km².
    fn default() -> Self {
        GridMapSpec {
            block: 89.86,
            cols: 8,
            rows: 8,
            v_max: 13.89,
            accel: 2.0,
            decel: 3.0,
            turn_speed: 5.0,
            turn_radius: 10.0,
            p_straight: 0.5,
            p_left: 0.25,
            p_right: 0.25,
        }
    }
}

impl GridMapSpec {
    /// Square grid of `cols × cols` blocks covering `area_km2`.
    pub fn square(area_km2: f64, cols: usize, v_max: f64) -> Self {
        GridMapSpec { block: (area_km2 * 1e6).sqrt() / cols as f64, cols, rows: cols, v_max, ..Self::default() }
    }

    pub fn area_km2(&self) -> f64 {
        (self.cols.max(1) as f64 * self.block) * (self.rows.max(1) as f64 * self.block) / 1e6
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("grid map: {m}")));
        if !(self.block > 0.0) {
            return bad("block size must be positive");
        }
        if self.cols == 0 && self.rows == 0 {
            return bad("needs at least one street segment");
        }
        if !(self.turn_radius > 0.0 && 2.0 * self.turn_radius < self.block) {
            return bad("turn radius must be positive and below half the block size");
        }
        if !(self.v_max > 0.0 && self.accel > 0.0 && self.decel > 0.0 && self.turn_speed > 0.0) {
            return bad("speeds and acceleration limits must be positive");
        }
        let probs = [self.p_straight, self.p_left, self.p_right];
        if probs.iter().any(|p| *p < 0.0) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("turn probabilities must be non-negative and sum to 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
enum Piece {
    Line { start: (f64, f64), dir: (f64, f64), len: f64 },
    Arc { center: (f64, f64), radius: f64, start_angle: f64, sweep: f64 },
}

impl Piece {
    fn len(&self) -> f64 {
        match *self {
            Piece::Line { len, .. } => len,
            Piece::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    /// Position, heading and signed curvature at arc length `s`.
    fn pose(&self, s: f64) -> ((f64, f64), f64, f64) {
        match *self {
            Piece::Line { start, dir, .. } => ((start.0 + s * dir.0, start.1 + s * dir.1), dir.1.atan2(dir.0), 0.0),
            Piece::Arc { center, radius, start_angle, sweep } => {
                let sign = sweep.signum();
                let theta = start_angle + sign * s / radius;
                let pos = (center.0 + radius * theta.cos(), center.1 + radius * theta.sin());
                (pos, wrap_angle(theta + sign * FRAC_PI_2), sign / radius)
            }
        }
    }
}

struct Mover {
    pieces: VecDeque<Piece>,
    s: f64,
    u: f64,
    /// Node the planned route currently ends at, and the heading leaving it.
    node: (i64, i64),
    dir: (i64, i64),
    /// Point where the next leg starts.
    leg_start: (f64, f64),
    offset: (f64, f64),
}

fn left_of(d: (i64, i64)) -> (i64, i64) {
    (-d.1, d.0)
}

fn right_of(d: (i64, i64)) -> (i64, i64) {
    (d.1, -d.0)
}

impl Mover {
    fn node_pos(&self, map: &GridMapSpec, n: (i64, i64)) -> (f64, f64) {
        (n.0 as f64 * map.block + self.offset.0, n.1 as f64 * map.block + self.offset.1)
    }

    /// Appends the leg from `leg_start` to the next node along `dir`, with
    /// the maneuver chosen at that node.
    fn plan_leg(&mut self, map: &GridMapSpec, rng: &mut ChaCha8Rng) {
        let d = self.dir;
        let target = (self.node.0 + d.0, self.node.1 + d.1);
        let inside = |n: (i64, i64)| n.0 >= 0 && n.1 >= 0 && n.0 <= map.cols as i64 && n.1 <= map.rows as i64;
        let options: Vec<((i64, i64), f64)> = [(d, map.p_straight), (left_of(d), map.p_left), (right_of(d), map.p_right)]
            .into_iter()
            .filter(|(nd, _)| inside((target.0 + nd.0, target.1 + nd.1)))
            .collect();
        let total: f64 = options.iter().map(|o| o.1).sum();
        let next_dir = if options.is_empty() {
            (-d.0, -d.1)
        } else if total <= 0.0 {
            options[rng.random_range(0..options.len())].0
        } else {
            let mut pick = rng.random::<f64>() * total;
            let mut chosen = options[options.len() - 1].0;
            for (nd, p) in &options {
                if pick < *p {
                    chosen = *nd;
                    break;
                }
                pick -= p;
            }
            chosen
        };

        let df = (d.0 as f64, d.1 as f64);
        let np = self.node_pos(map, target);
        let r = map.turn_radius;
        let start = self.leg_start;
        if next_dir == d {
            let len = ((np.0 - start.0).powi(2) + (np.1 - start.1).powi(2)).sqrt();
            self.pieces.push_back(Piece::Line { start, dir: df, len });
            self.leg_start = np;
        } else if next_dir == (-d.0, -d.1) {
            let len = ((np.0 - start.0).powi(2) + (np.1 - start.1).powi(2)).sqrt();
            self.pieces.push_back(Piece::Line { start, dir: df, len });
            let l = left_of(d);
            let lf = (l.0 as f64, l.1 as f64);
            let center = (np.0 + r * lf.0, np.1 + r * lf.1);
            self.pieces.push_back(Piece::Arc { center, radius: r, start_angle: (-lf.1).atan2(-lf.0), sweep: PI });
            self.offset = (self.offset.0 + 2.0 * r * lf.0, self.offset.1 + 2.0 * r * lf.1);
            self.leg_start = (np.0 + 2.0 * r * lf.0, np.1 + 2.0 * r * lf.1);
        } else {
            let nf = (next_dir.0 as f64, next_dir.1 as f64);
            let entry = (np.0 - r * df.0, np.1 - r * df.1);
            let len = ((entry.0 - start.0).powi(2) + (entry.1 - start.1).powi(2)).sqrt();
            self.pieces.push_back(Piece::Line { start, dir: df, len });
            let center = (entry.0 + r * nf.0, entry.1 + r * nf.1);
            let sweep = if next_dir == left_of(d) { FRAC_PI_2 } else { -FRAC_PI_2 };
            self.pieces.push_back(Piece::Arc { center, radius: r, start_angle: (-nf.1).atan2(-nf.0), sweep });
            self.leg_start = (np.0 + r * nf.0, np.1 + r * nf.1);
        }
        self.node = target;
        self.dir = next_dir;
    }

    fn ensure_planned(&mut self, map: &GridMapSpec, rng: &mut ChaCha8Rng) {
        while self.pieces.len() < 4 {
            self.plan_leg(map, rng);
        }
    }

    /// Longitudinal acceleration for the coming slot.
    fn control(&self, map: &GridMapSpec, dt: f64) -> f64 {
        let vt = map.turn_speed;
        let a = match self.pieces[0] {
            Piece::Arc { .. } => {
                if self.u > vt {
                    (vt - self.u) / dt
                } else {
                    0.0
                }
            }
            Piece::Line { len, .. } => {
                // distance to the start of the next arc, if one is planned
                let arc = self.pieces.iter().position(|p| matches!(p, Piece::Arc { .. }));
                let to_turn = arc.map(|k| len - self.s + self.pieces.range(1..k).map(Piece::len).sum::<f64>());
                let brake = to_turn.is_some_and(|rem| {
                    self.u > vt && rem <= (self.u * self.u - vt * vt) / (2.0 * map.decel) + self.u * dt
                });
                if brake {
                    (vt - self.u) / dt
                } else {
                    (map.v_max - self.u) / dt
                }
            }
        };
        a.max(-map.decel).min(map.accel)
    }

    fn state(&self, a: f64) -> State {
        let (pos, h, curvature) = self.pieces[0].pose(self.s);
        State::new(pos.0, pos.1, h, self.u, a, self.u * curvature)
    }

    fn advance(&mut self, a: f64, dt: f64, map: &GridMapSpec, rng: &mut ChaCha8Rng) {
        let u_next = (self.u + a * dt).max(0.0).min(map.v_max);
        self.s += 0.5 * (self.u + u_next) * dt;
        self.u = u_next;
        while self.s >= self.pieces[0].len() {
            self.s -= self.pieces[0].len();
            self.pieces.pop_front();
            self.ensure_planned(map, rng);
        }
    }
}

/// Random trips on the grid: every vehicle drives along the streets,
/// picks a maneuver at each intersection, slows to the turn speed before
/// turning and turns on a circular arc. Deterministic in `seed`.
pub fn synth_trips(map: &GridMapSpec, n_vehicles: usize, duration: u64, slot: f64, seed: u64) -> Result<TraceSet> {
    map.validate()?;
    if n_vehicles == 0 {
        return Err(Error::Precondition("at least one vehicle is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs = [(1i64, 0i64), (0, 1), (-1, 0), (0, -1)];
    let inside = |n: (i64, i64)| n.0 >= 0 && n.1 >= 0 && n.0 <= map.cols as i64 && n.1 <= map.rows as i64;
    let mut movers = Vec::with_capacity(n_vehicles);
    for _ in 0..n_vehicles {
        let (node, dir) = loop {
            let node = (rng.random_range(0..=map.cols as i64), rng.random_range(0..=map.rows as i64));
            let dir = dirs[rng.random_range(0..4)];
            if inside((node.0 + dir.0, node.1 + dir.1)) {
                break (node, dir);
            }
        };
        let along = rng.random::<f64>() * (map.block - 2.0 * map.turn_radius);
        let base = (node.0 as f64 * map.block, node.1 as f64 * map.block);
        let mut m = Mover {
            pieces: VecDeque::new(),
            s: 0.0,
            u: rng.random::<f64>() * map.v_max,
            node,
            dir,
            leg_start: (base.0 + along * dir.0 as f64, base.1 + along * dir.1 as f64),
            offset: (0.0, 0.0),
        };
        m.ensure_planned(map, &mut rng);
        movers.push(m);
    }

    let mut states: Vec<Vec<State>> = vec![Vec::with_capacity(duration as usize); n_vehicles];
    for _ in 0..duration {
        for (m, out) in movers.iter_mut().zip(states.iter_mut()) {
            let a = m.control(map, slot);
            out.push(m.state(a));
            m.advance(a, slot, map, &mut rng);
        }
    }
    let vehicles = states
        .into_iter()
        .enumerate()
        .map(|(i, s)| (VehicleId(i as u32), VehicleTrace { first_slot: 0, states: s }))
        .collect();
    Ok(TraceSet { slot, area_km2: map.area_km2(), vehicles, names: BTreeMap::new() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sumo_angle_convention() {
        assert_abs_diff_eq!(sumo_angle_to_heading(90.0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sumo_angle_to_heading(0.0), FRAC_PI_2, epsilon = 1e-12);
        assert_abs_diff_eq!(sumo_angle_to_heading(180.0), -FRAC_PI_2, epsilon = 1e-12);
        assert_abs_diff_eq!(sumo_angle_to_heading(270.0), PI, epsilon = 1e-12);
    }

    #[test]
    fn derive_needs_three_samples() {
        assert!(matches!(derive_state(&[(0.0, 0.0), (1.0, 0.0)], 0.1), Err(Error::Precondition(_))));
    }

    #[test]
    fn rectilinear_samples_are_exact() {
        let pts: Vec<(f64, f64)> = (0..10).map(|k| (2.0 * k as f64, -(k as f64))).collect();
        let s = derive_state(&pts, 0.5).unwrap();
        for st in &s {
            assert_eq!(st.a, 0.0);
            assert_eq!(st.omega, 0.0);
        }
        assert_abs_diff_eq!(s[4].u, 5f64.sqrt() * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn stationary_segment_holds_heading() {
        let pts = [(0.0, 0.0), (0.0, 1.0), (0.0, 2.0), (0.0, 2.0), (0.0, 2.0), (0.0, 2.0)];
        let s = derive_state(&pts, 1.0).unwrap();
        assert_abs_diff_eq!(s[4].h, FRAC_PI_2, epsilon = 1e-12);
        assert_eq!(s[4].u, 0.0);
        assert_eq!(s[4].omega, 0.0);
    }

    #[test]
    fn grid_spec_validation() {
        assert!(GridMapSpec::default().validate().is_ok());
        assert!(GridMapSpec { block: 0.0, ..GridMapSpec::default() }.validate().is_err());
        assert!(GridMapSpec { p_left: 0.5, ..GridMapSpec::default() }.validate().is_err());
        assert_abs_diff_eq!(GridMapSpec::default().area_km2(), 0.5168, epsilon = 1e-3);
    }

    #[test]
    fn arc_pose_is_tangent() {
        let p = Piece::Arc { center: (0.0, 10.0), radius: 10.0, start_angle: -FRAC_PI_2, sweep: FRAC_PI_2 };
        let (pos, h, k) = p.pose(0.0);
        assert_abs_diff_eq!(pos.0, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pos.1, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(k, 0.1, epsilon = 1e-12);
        let (end, h_end, _) = p.pose(p.len());
        assert_abs_diff_eq!(end.0, 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(end.1, 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(h_end, FRAC_PI_2, epsilon = 1e-12);
    }
}
