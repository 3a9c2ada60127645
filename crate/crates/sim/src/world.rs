//! The slot loop.
//!
//! One slot runs these sub-steps in order:
//!
//! 1. read the true states of the vehicles present,
//! 2. rebuild the range graph,
//! 3. deliver packets due this slot into the receivers' trackers,
//! 4. drop tracks that timed out,
//! 5. self-localise every vehicle, advance shadow filters and tracks,
//! 6. refresh congestion control and the strategy knob,
//! 7. take the broadcast decisions and queue packets,
//! 8. arbitrate the channel and put granted packets on the air,
//! 9. record metrics.

use std::collections::BTreeMap;

use dynmap_core::channel::{resolve_slot, AccessQueue, InFlight, Packet, SlotOutcome};
use dynmap_core::congestion::{
    apply_congestion, limeric_step, CongestionState, ErrorPeriodMap, LimericParams, NaccTable,
};
use dynmap_core::filter::{
    fuse_remote, ingest_remote, shadow_predict, shadow_reset, ukf_predict, RemoteMessage, SelfFilter, SigmaParams,
};
use dynmap_core::metrics::{detection_error, ego_error, Detection, MetricsAccumulator, RichardsParams, RunMetrics};
use dynmap_core::mobility::TraceSet;
use dynmap_core::strategy::StrategyState;
use dynmap_core::{
    build_graph, distance, CongestionKind, Error, Estimate, Noise, Result, SimConfig, State, StrategyKind, Track,
    VehicleId,
};
use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent random streams; see [`stream_rng`].
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    /// Sensor noise of one vehicle.
    Noise(VehicleId),
    /// Initial transmission phase of one vehicle.
    Phase(VehicleId),
    /// Channel arbitration.
    Channel,
    /// Synthetic mobility.
    Mobility,
}

/// RNG for one concern of one run. Streams never share state, so changing
/// the strategy leaves mobility and sensor noise untouched.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let id = match stream {
        Stream::Noise(v) => (1 << 32) | v.0 as u64,
        Stream::Phase(v) => (2 << 32) | v.0 as u64,
        Stream::Channel => 3 << 32,
        Stream::Mobility => 4 << 32,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Everything one vehicle owns.
#[derive(Clone, Debug)]
pub struct Agent {
    self_filter: SelfFilter<f64>,
    shadow: Estimate,
    tracks: BTreeMap<VehicleId, Track>,
    strategy: StrategyState<f64>,
    congestion: CongestionState,
    noise_rng: ChaCha8Rng,
    /// Estimate waiting in the access queue and the slot it refers to.
    pending: Option<(Estimate, u64)>,
    busy: bool,
    believed: Vec<VehicleId>,
}

impl Agent {
    pub fn estimate(&self) -> &Estimate {
        &self.self_filter.estimate
    }

    pub fn shadow(&self) -> &Estimate {
        &self.shadow
    }

    pub fn tracks(&self) -> &BTreeMap<VehicleId, Track> {
        &self.tracks
    }

    pub fn strategy(&self) -> &StrategyState<f64> {
        &self.strategy
    }

    pub fn congestion(&self) -> &CongestionState {
        &self.congestion
    }

    /// Tracked vehicles whose estimated position lies within range.
    pub fn believed_neighbors(&self) -> &[VehicleId] {
        &self.believed
    }

    /// Distance between the self estimate and the shadow filter.
    pub fn divergence(&self) -> f64 {
        distance(&self.self_filter.estimate.mean, &self.shadow.mean)
    }
}

/// What happened in one slot, for callers that drive the loop themselves.
#[derive(Clone, Debug)]
pub struct SlotReport {
    pub slot: u64,
    pub vehicles: Vec<VehicleId>,
    pub ego_errors: Vec<f64>,
    pub detections: Vec<Detection>,
    pub queued: Vec<VehicleId>,
    pub outcome: SlotOutcome,
}

/// Prediction chain shared by every tracker holding the same message.
type ChainKey = (VehicleId, u64, Option<VehicleId>);

pub struct World<'a> {
    cfg: &'a SimConfig,
    trace: &'a TraceSet,
    map: Option<&'a ErrorPeriodMap>,
    seed: u64,
    slot: u64,
    end: u64,
    noise: Noise,
    sigma: SigmaParams<f64>,
    richards: RichardsParams<f64>,
    limeric: LimericParams,
    nacc: NaccTable,
    agents: BTreeMap<VehicleId, Agent>,
    queue: AccessQueue,
    air: InFlight<f64>,
    chains: BTreeMap<ChainKey, (u64, Estimate)>,
    channel_rng: ChaCha8Rng,
    metrics: MetricsAccumulator,
}

/// Checks the combinations the engine cannot run.
pub fn check_scenario(cfg: &SimConfig, map: Option<&ErrorPeriodMap>) -> Result<()> {
    cfg.validate()?;
    if cfg.needs_error_map() && map.is_none() {
        return Err(Error::Config(format!(
            "ETB with {} congestion control needs an error-period map; set `map` or run `dynmap calibrate` first",
            cfg.congestion
        )));
    }
    Ok(())
}

impl<'a> World<'a> {
    pub fn new(cfg: &'a SimConfig, trace: &'a TraceSet, seed: u64, map: Option<&'a ErrorPeriodMap>) -> Result<Self> {
        check_scenario(cfg, map)?;
        if (trace.slot - cfg.slot).abs() > 1e-9 * cfg.slot {
            return Err(Error::Config(format!("trace slot {} s differs from T_t = {} s", trace.slot, cfg.slot)));
        }
        if cfg.remote_fusion {
            warn!("remote_fusion is set: received estimates are fused into tracks instead of replacing them");
        }
        Ok(World {
            cfg,
            trace,
            map,
            seed,
            slot: 0,
            end: cfg.total_slots().min(trace.n_slots()),
            noise: Noise::new(cfg.q, cfg.noise_diagonal()),
            sigma: SigmaParams::default(),
            richards: RichardsParams::from_config(cfg),
            limeric: LimericParams::from_config(cfg),
            nacc: NaccTable::from_config(cfg),
            agents: BTreeMap::new(),
            queue: AccessQueue::new(cfg.n_sc),
            air: InFlight::new(cfg.delay_slots()),
            chains: BTreeMap::new(),
            channel_rng: stream_rng(seed, Stream::Channel),
            metrics: MetricsAccumulator::new(cfg.slot, cfg.warmup_slots()),
        })
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn is_done(&self) -> bool {
        self.slot >= self.end
    }

    pub fn agent(&self, id: VehicleId) -> Option<&Agent> {
        self.agents.get(&id)
    }

    pub fn agents(&self) -> impl Iterator<Item = (VehicleId, &Agent)> {
        self.agents.iter().map(|(k, v)| (*k, v))
    }

    /// Packets currently on the air.
    pub fn in_flight(&self) -> usize {
        self.air.len()
    }

    fn initial_rho(&self) -> f64 {
        let period = match self.cfg.strategy {
            StrategyKind::Pb => self.cfg.t_period,
            StrategyKind::Etb => self.map.map_or(self.cfg.t_max, |m| m.period(self.cfg.e_thr)),
        };
        (self.cfg.slot / period).clamp(self.cfg.rho_min, self.cfg.rho_max)
    }

    fn spawn(&self, id: VehicleId, truth: &State) -> Agent {
        let cfg = self.cfg;
        let mut noise_rng = stream_rng(self.seed, Stream::Noise(id));
        let first = self.noise.observe(truth, &mut noise_rng);
        let self_filter = SelfFilter::new(&first, &self.noise);
        let mut strategy = match cfg.strategy {
            StrategyKind::Pb => StrategyState::periodic(cfg.t_period),
            StrategyKind::Etb => StrategyState::threshold(cfg.e_thr, cfg.t_max),
        };
        // spread first transmissions over one period
        let span = match cfg.strategy {
            StrategyKind::Pb => cfg.t_period,
            StrategyKind::Etb => cfg.t_max,
        };
        if span.is_finite() && span > 0.0 {
            strategy.t_last_tx = stream_rng(self.seed, Stream::Phase(id)).random::<f64>() * span;
        }
        Agent {
            shadow: shadow_reset(&self_filter.estimate),
            self_filter,
            tracks: BTreeMap::new(),
            strategy,
            congestion: CongestionState::new(self.initial_rho(), cfg.n_cbr_avg, cfg.n_cbr_update),
            noise_rng,
            pending: None,
            busy: false,
            believed: Vec::new(),
        }
    }

    /// Runs one slot. Returns `None` once the run is over.
    pub fn step(&mut self) -> Result<Option<SlotReport>> {
        if self.is_done() {
            return Ok(None);
        }
        let t = self.slot;
        let cfg = self.cfg;

        // 1. truth
        let truth = self.trace.snapshot(t);
        let gone: Vec<VehicleId> = self.agents.keys().filter(|id| !truth.contains_key(id)).copied().collect();
        for id in gone {
            self.agents.remove(&id);
            self.queue.remove(id);
        }

        // 2. graph
        let graph = build_graph(&truth, cfg.range);

        // 3. deliveries
        for (rx, pkt) in self.air.deliver_due(t) {
            let Some(agent) = self.agents.get_mut(&rx) else { continue };
            let msg = RemoteMessage { sender: pkt.sender, estimate: pkt.payload, slot: pkt.created_slot };
            let existing = agent.tracks.get(&pkt.sender);
            if existing.is_none() {
                agent.strategy.new_neighbor = true;
            }
            let entry = if cfg.remote_fusion {
                match fuse_remote(existing, &msg, t, cfg.slot, &self.noise, &self.sigma) {
                    Ok(e) => e,
                    Err(e) => {
                        debug!("slot {t}: fusion at {rx} failed ({e}), replacing the track");
                        ingest_remote(existing, &msg, t)
                    }
                }
            } else {
                ingest_remote(existing, &msg, t)
            };
            agent.tracks.insert(pkt.sender, entry);
        }

        // 4. timeouts
        for agent in self.agents.values_mut() {
            agent.tracks.retain(|_, tr| !tr.is_stale(t, cfg.slot, cfg.track_timeout));
        }

        // 5. filters
        for (&id, state) in &truth {
            if !self.agents.contains_key(&id) {
                let agent = self.spawn(id, state);
                self.agents.insert(id, agent);
                continue;
            }
            let agent = self.agents.get_mut(&id).expect("present");
            let obs = self.noise.observe(state, &mut agent.noise_rng);
            if let Err(e) = agent.self_filter.step(&obs, cfg.slot, &self.noise, &self.sigma) {
                debug!("slot {t}: self filter of {id} reset ({e})");
                agent.self_filter = SelfFilter::new(&obs, &self.noise);
            }
            if cfg.strategy == StrategyKind::Etb {
                agent.shadow = match shadow_predict(&agent.shadow, cfg.slot, &self.noise, &self.sigma) {
                    Ok(s) => s,
                    Err(e) => {
                        debug!("slot {t}: shadow filter of {id} reset ({e})");
                        shadow_reset(&agent.self_filter.estimate)
                    }
                };
            }
        }
        self.advance_tracks(t);
        for agent in self.agents.values_mut() {
            let me = agent.self_filter.estimate.mean;
            agent.believed = agent
                .tracks
                .iter()
                .filter(|(_, tr)| distance(&tr.estimate.mean, &me) < cfg.range)
                .map(|(id, _)| *id)
                .collect();
        }

        // 6. congestion control
        if cfg.congestion != CongestionKind::None {
            for agent in self.agents.values_mut() {
                if !agent.congestion.update_cbr(agent.busy) {
                    continue;
                }
                let rho = match cfg.congestion {
                    CongestionKind::Cscc => {
                        limeric_step(agent.congestion.rho, agent.congestion.cbr_vehicle, &self.limeric)
                    }
                    CongestionKind::Nacc => self.nacc.rho(agent.believed.len())?,
                    CongestionKind::None => unreachable!(),
                };
                agent.congestion.rho = rho;
                agent.strategy.apply(apply_congestion(rho, cfg.strategy, cfg.slot, self.map)?);
            }
        }

        // 7. decisions
        let mut queued = Vec::new();
        for (&id, agent) in self.agents.iter_mut() {
            let d_div = if cfg.strategy == StrategyKind::Etb { agent.divergence() } else { 0.0 };
            if agent.strategy.decide(d_div, cfg.slot) {
                let est = agent.self_filter.estimate;
                agent.pending = Some((est, t));
                agent.shadow = shadow_reset(&est);
                self.queue.enqueue(id);
                queued.push(id);
            }
        }

        // 8. channel
        let outcome = resolve_slot(&graph, &mut self.queue, &mut self.channel_rng);
        let agents = &self.agents;
        self.air.schedule(&outcome, t, |sender, subcarrier| {
            let (payload, created_slot) = agents[&sender].pending.expect("granted vehicles have a pending packet");
            Packet { sender, payload, created_slot, subcarrier }
        });
        for id in outcome.granted_all() {
            if let Some(a) = self.agents.get_mut(&id) {
                a.pending = None;
            }
        }
        for (i, id) in graph.ids().iter().enumerate() {
            if let Some(a) = self.agents.get_mut(id) {
                a.busy = outcome.busy[i];
            }
        }

        // 9. metrics
        let mut vehicles = Vec::with_capacity(truth.len());
        let mut ego_errors = Vec::with_capacity(truth.len());
        let mut detections = Vec::with_capacity(truth.len());
        for (&id, agent) in &self.agents {
            let tracked = agent.believed.iter().map(|j| (*j, &agent.tracks[j].estimate.mean));
            ego_errors.push(ego_error(id, &agent.self_filter.estimate.mean, tracked, &truth, &self.richards));
            let mut actual = graph.neighbors(id);
            actual.sort();
            detections.push(detection_error(&actual, &agent.believed));
            vehicles.push(id);
        }
        self.metrics.record_slot(t, &ego_errors, &detections, outcome.collisions() as u64, outcome.granted_all());

        self.slot += 1;
        Ok(Some(SlotReport { slot: t, vehicles, ego_errors, detections, queued, outcome }))
    }

    /// Predicts every track to the current slot. Trackers holding the same
    /// message hold the same estimate, so each message is predicted once.
    fn advance_tracks(&mut self, t: u64) {
        let fusion = self.cfg.remote_fusion;
        let mut failed: Vec<ChainKey> = Vec::new();
        for (&owner, agent) in self.agents.iter_mut() {
            for (&target, tr) in agent.tracks.iter_mut() {
                let key = (target, tr.source_slot, fusion.then_some(owner));
                if failed.contains(&key) {
                    continue;
                }
                let chain = self.chains.entry(key).or_insert((tr.estimate_slot, tr.estimate));
                if chain.0 < tr.estimate_slot {
                    *chain = (tr.estimate_slot, tr.estimate);
                }
                while chain.0 < t {
                    match ukf_predict(&chain.1, self.cfg.slot, &self.noise, &self.sigma) {
                        Ok(next) => *chain = (chain.0 + 1, next),
                        Err(e) => {
                            debug!("slot {t}: track of {target} dropped ({e})");
                            failed.push(key);
                            break;
                        }
                    }
                }
                if !failed.contains(&key) {
                    tr.estimate = chain.1;
                    tr.estimate_slot = t;
                }
            }
            agent.tracks.retain(|&target, tr| !failed.contains(&(target, tr.source_slot, fusion.then_some(owner))));
        }
        self.chains.retain(|k, c| c.0 == t && !failed.contains(k));
    }

    pub fn finish(self) -> RunMetrics {
        self.metrics.finish()
    }
}

/// One complete run.
pub fn run_sim(cfg: &SimConfig, trace: &TraceSet, seed: u64, map: Option<&ErrorPeriodMap>) -> Result<RunMetrics> {
    let mut world = World::new(cfg, trace, seed, map)?;
    while world.step()?.is_some() {}
    Ok(world.finish())
}
