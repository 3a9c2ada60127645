//! Ground truth for a run: a trace file or the synthetic street grid.

use std::path::Path;

use dynmap_core::mobility::{load_fcd_trace, synth_trips, GridMapSpec, TraceSet};
use dynmap_core::{Result, SimConfig};
use log::warn;
use rand::Rng;

use crate::world::{stream_rng, Stream};

/// Blocks per side of the synthetic grid.
pub const GRID_BLOCKS: usize = 8;

/// Street grid matching the configured area and speed limit.
pub fn grid_for(cfg: &SimConfig) -> GridMapSpec {
    GridMapSpec::square(cfg.area_km2, GRID_BLOCKS, cfg.v_max)
}

/// Loads a SUMO FCD export (`.xml`) or a CSV trace.
pub fn load_trace(path: &Path, slot: f64) -> Result<TraceSet> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml")) {
        load_fcd_trace(path, slot)
    } else {
        TraceSet::read_csv(path, slot)
    }
}

/// Truth for run seed `seed`: the configured trace if any, otherwise random
/// trips on the grid. Runs sharing a seed share the trace, whatever the
/// strategy.
pub fn scenario_trace(cfg: &SimConfig, seed: u64) -> Result<TraceSet> {
    if let Some(path) = &cfg.trace {
        let path = Path::new(path);
        let trace = load_trace(path, cfg.slot)?;
        let peak = (0..trace.n_slots()).map(|s| trace.active_count(s)).max().unwrap_or(0);
        if peak > cfg.vehicles {
            warn!("{}: {peak} vehicles present at once, more than the configured {}", path.display(), cfg.vehicles);
        }
        return Ok(trace);
    }
    let mobility_seed = stream_rng(seed, Stream::Mobility).random::<u64>();
    synth_trips(&grid_for(cfg), cfg.vehicles, cfg.total_slots(), cfg.slot, mobility_seed)
}
