//! Empirical error growth of the purely predictive filter, the input of the
//! error-threshold to period map.

use dynmap_core::congestion::{build_error_period_map, ErrorHistograms, ErrorPeriodMap};
use dynmap_core::filter::{shadow_predict, shadow_reset, SelfFilter, SigmaParams};
use dynmap_core::mobility::TraceSet;
use dynmap_core::{distance, Estimate, Noise, Result, SimConfig};
use log::warn;

use crate::world::{stream_rng, Stream};

/// Errors beyond this many meters only count toward the totals.
pub const CALIBRATION_MAX_ERROR: f64 = 100.0;

/// Fewest samples per horizon before the CDFs are considered reliable.
pub const MIN_SAMPLES_PER_HORIZON: u64 = 100;

/// For every vehicle, restarts a shadow filter from the self estimate every
/// `calib_stride` slots after the warm-up and records, for `h = 1..=H_max`,
/// the distance between the self estimate and the shadow after `h` slots.
/// This is the quantity the error-threshold strategy compares with `E_thr`.
pub fn calibrate_error_distribution(cfg: &SimConfig, trace: &TraceSet, seed: u64) -> Result<ErrorHistograms> {
    cfg.validate()?;
    let noise = Noise::new(cfg.q, cfg.noise_diagonal());
    let sigma = SigmaParams::default();
    let mut hist = ErrorHistograms::new(cfg.h_max, cfg.calib_bin, CALIBRATION_MAX_ERROR);
    let end = cfg.total_slots().min(trace.n_slots());
    let warmup = cfg.warmup_slots();
    for (&id, vt) in &trace.vehicles {
        let mut rng = stream_rng(seed, Stream::Noise(id));
        let mut filter: Option<SelfFilter<f64>> = None;
        let mut shadows: Vec<(u64, Estimate)> = Vec::new();
        for (k, state) in vt.states.iter().enumerate() {
            let slot = vt.first_slot + k as u64;
            if slot >= end {
                break;
            }
            let obs = noise.observe(state, &mut rng);
            let f = match filter.as_mut() {
                None => filter.insert(SelfFilter::new(&obs, &noise)),
                Some(f) => {
                    if f.step(&obs, cfg.slot, &noise, &sigma).is_err() {
                        *f = SelfFilter::new(&obs, &noise);
                    }
                    f
                }
            };
            let mut keep = Vec::with_capacity(shadows.len() + 1);
            for (start, sh) in shadows.drain(..) {
                let Ok(next) = shadow_predict(&sh, cfg.slot, &noise, &sigma) else { continue };
                let h = (slot - start) as usize;
                hist.record(h, distance(&f.estimate.mean, &next.mean));
                if h < cfg.h_max {
                    keep.push((start, next));
                }
            }
            shadows = keep;
            let age = slot - vt.first_slot;
            if slot >= warmup && age % cfg.calib_stride as u64 == 0 {
                shadows.push((slot, shadow_reset(&f.estimate)));
            }
        }
    }
    let fewest = hist.totals.iter().copied().min().unwrap_or(0);
    if fewest < MIN_SAMPLES_PER_HORIZON {
        warn!(
            "calibration has only {fewest} samples at the longest horizon (want {MIN_SAMPLES_PER_HORIZON}); \
             lengthen T_sim, add vehicles or lower H_max"
        );
    }
    Ok(hist)
}

/// Calibrates over `runs` independent traces produced by `trace_of` and
/// builds the map.
pub fn calibrate_map(
    cfg: &SimConfig,
    runs: usize,
    trace_of: impl Fn(usize) -> Result<TraceSet>,
) -> Result<(ErrorPeriodMap, ErrorHistograms)> {
    let mut hist = ErrorHistograms::new(cfg.h_max, cfg.calib_bin, CALIBRATION_MAX_ERROR);
    for r in 0..runs.max(1) {
        let trace = trace_of(r)?;
        hist.merge(&calibrate_error_distribution(cfg, &trace, cfg.seed + r as u64)?);
    }
    let map = build_error_period_map(&hist.cdfs(), &hist.grid(), cfg.slot)?;
    Ok((map, hist))
}
