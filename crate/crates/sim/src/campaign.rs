//! Monte Carlo campaigns over sweep grids.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use dynmap_core::congestion::ErrorPeriodMap;
use dynmap_core::metrics::{percentile_nearest_rank, RunMetrics};
use dynmap_core::mobility::TraceSet;
use dynmap_core::{CongestionKind, Error, Result, SimConfig, StrategyKind};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scenario::scenario_trace;
use crate::world::{check_scenario, run_sim};

/// A strategy and a congestion controller, written `PB`, `ETB+NACC`, ...
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Scheme {
    pub strategy: StrategyKind,
    pub congestion: CongestionKind,
}

impl Scheme {
    pub fn new(strategy: StrategyKind, congestion: CongestionKind) -> Self {
        Scheme { strategy, congestion }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.congestion {
            CongestionKind::None => write!(f, "{}", self.strategy),
            c => write!(f, "{}+{}", self.strategy, c),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (strategy, congestion) = match s.split_once('+') {
            Some((a, b)) => (a.trim().parse()?, b.trim().parse()?),
            None => (s.trim().parse()?, CongestionKind::None),
        };
        Ok(Scheme { strategy, congestion })
    }
}

impl Serialize for Scheme {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scheme {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Sweep grid. Schemes without congestion control are swept over their
/// own knob (`t_period` for PB, `e_thr` for ETB) when given; schemes with
/// congestion control pick the knob themselves and give one point each.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub t_period: Vec<f64>,
    pub e_thr: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub n_sc: Vec<usize>,
}

impl SweepSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("sweep spec: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn is_empty(&self) -> bool {
        self.t_period.is_empty() && self.e_thr.is_empty() && self.schemes.is_empty() && self.n_sc.is_empty()
    }

    /// Expands the grid around `base`.
    pub fn points(&self, base: &SimConfig) -> Result<Vec<SweepPoint>> {
        if self.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        let n_scs = if self.n_sc.is_empty() { vec![base.n_sc] } else { self.n_sc.clone() };
        let schemes =
            if self.schemes.is_empty() { vec![Scheme::new(base.strategy, base.congestion)] } else { self.schemes.clone() };
        let mut out = Vec::new();
        for &n_sc in &n_scs {
            for &scheme in &schemes {
                let mut cfg = base.clone();
                cfg.n_sc = n_sc;
                cfg.strategy = scheme.strategy;
                cfg.congestion = scheme.congestion;
                let knobs: Vec<Option<f64>> = match (scheme.strategy, scheme.congestion) {
                    (StrategyKind::Pb, CongestionKind::None) if !self.t_period.is_empty() => {
                        self.t_period.iter().map(|&v| Some(v)).collect()
                    }
                    (StrategyKind::Etb, CongestionKind::None) if !self.e_thr.is_empty() => {
                        self.e_thr.iter().map(|&v| Some(v)).collect()
                    }
                    _ => vec![None],
                };
                for knob in knobs {
                    let mut cfg = cfg.clone();
                    match (scheme.strategy, knob) {
                        (StrategyKind::Pb, Some(v)) => cfg.t_period = v,
                        (StrategyKind::Etb, Some(v)) => cfg.e_thr = v,
                        _ => {}
                    }
                    let coords = PointCoords {
                        scheme,
                        n_sc,
                        t_period: (scheme.strategy == StrategyKind::Pb && knob.is_some()).then_some(cfg.t_period),
                        e_thr: (scheme.strategy == StrategyKind::Etb && knob.is_some()).then_some(cfg.e_thr),
                    };
                    out.push(SweepPoint { coords, config: cfg });
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCoords {
    pub scheme: Scheme,
    pub n_sc: usize,
    pub t_period: Option<f64>,
    pub e_thr: Option<f64>,
}

impl PointCoords {
    /// Coordinates of a single configuration; the knob is reported only when
    /// no congestion control overrides it.
    pub fn of(cfg: &SimConfig) -> Self {
        let free = cfg.congestion == CongestionKind::None;
        PointCoords {
            scheme: Scheme::new(cfg.strategy, cfg.congestion),
            n_sc: cfg.n_sc,
            t_period: (free && cfg.strategy == StrategyKind::Pb).then_some(cfg.t_period),
            e_thr: (free && cfg.strategy == StrategyKind::Etb).then_some(cfg.e_thr),
        }
    }

    /// Directory-friendly name, e.g. `PB_nsc8_Tperiod0.5`.
    pub fn label(&self) -> String {
        let mut s = format!("{}_nsc{}", self.scheme.to_string().replace('+', "-"), self.n_sc);
        if let Some(v) = self.t_period {
            s.push_str(&format!("_Tperiod{v}"));
        }
        if let Some(v) = self.e_thr {
            s.push_str(&format!("_Ethr{v}"));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub coords: PointCoords,
    pub config: SimConfig,
}

/// Cross-run statistics of one metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
    /// Standard error of the mean.
    pub sem: f64,
    pub p5: f64,
    pub p50: f64,
    pub p95: f64,
    pub samples: usize,
}

impl MetricStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        let std = var.sqrt();
        Some(MetricStats {
            mean,
            std,
            sem: std / (n as f64).sqrt(),
            p5: percentile_nearest_rank(values, 5.0)?,
            p50: percentile_nearest_rank(values, 50.0)?,
            p95: percentile_nearest_rank(values, 95.0)?,
            samples: n,
        })
    }
}

/// Names of the summarized metrics, in output order.
pub const METRICS: [&str; 7] = [
    "mean_error",
    "p95_error",
    "detection_error",
    "misdetection",
    "false_detection",
    "collision_rate",
    "mean_tx_interval",
];

fn metric(m: &RunMetrics, name: &str) -> Option<f64> {
    match name {
        "mean_error" => Some(m.mean_error),
        "p95_error" => Some(m.p95_error),
        "detection_error" => Some(m.detection_error),
        "misdetection" => Some(m.misdetection),
        "false_detection" => Some(m.false_detection),
        "collision_rate" => Some(m.collision_rate),
        "mean_tx_interval" => m.mean_tx_interval,
        _ => None,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointSummary {
    pub label: String,
    pub coords: PointCoords,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunMetrics>,
    pub stats: BTreeMap<String, MetricStats>,
}

impl PointSummary {
    fn new(coords: PointCoords, seeds: Vec<u64>, runs: Vec<RunMetrics>) -> Self {
        let stats = METRICS
            .iter()
            .filter_map(|name| {
                let vals: Vec<f64> = runs.iter().filter_map(|r| metric(r, name)).collect();
                MetricStats::of(&vals).map(|s| (name.to_string(), s))
            })
            .collect();
        PointSummary { label: coords.label(), coords, seeds, runs, stats }
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.stats.get(name).map(|s| s.mean)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub runs_per_point: usize,
    pub points: Vec<PointSummary>,
}

pub const SUMMARY_HEADER: &str = "# dynmap campaign-summary v1";

/// Runs `runs` seeds per point. Run `r` of every point uses seed
/// `base.seed + r` and the same trace, so points are paired run by run.
pub fn monte_carlo(
    base: &SimConfig,
    points: &[SweepPoint],
    runs: usize,
    map: Option<&ErrorPeriodMap>,
) -> Result<CampaignSummary> {
    if points.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    for p in points {
        check_scenario(&p.config, map).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", p.coords.label())),
            other => other,
        })?;
    }
    let runs = runs.max(1);
    let seeds: Vec<u64> = (0..runs as u64).map(|r| base.seed + r).collect();
    let traces: Vec<TraceSet> = if base.trace.is_some() {
        vec![scenario_trace(base, base.seed)?]
    } else {
        seeds.par_iter().map(|&s| scenario_trace(base, s)).collect::<Result<_>>()?
    };
    let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..runs).map(move |r| (p, r))).collect();
    let done = AtomicUsize::new(0);
    let results: Vec<RunMetrics> = jobs
        .par_iter()
        .map(|&(p, r)| {
            let out = run_sim(&points[p].config, &traces[r % traces.len()], seeds[r], map);
            let n = done.fetch_add(1, Ordering::Relaxed) + 1;
            info!("run {n}/{} done ({} seed {})", jobs.len(), points[p].coords.label(), seeds[r]);
            out
        })
        .collect::<Result<_>>()?;
    let mut it = results.into_iter();
    let summaries = points
        .iter()
        .map(|p| PointSummary::new(p.coords, seeds.clone(), it.by_ref().take(runs).collect()))
        .collect();
    Ok(CampaignSummary { runs_per_point: runs, points: summaries })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io { path: path.to_path_buf(), source: e }
}

impl CampaignSummary {
    /// Writes `summary.json`, `summary.csv` and, per point, one JSON and one
    /// per-slot CSV per run under `<label>/`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let json_path = dir.join("summary.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format {
            path: json_path.clone(),
            message: e.to_string(),
        })?;
        std::fs::write(&json_path, text + "\n").map_err(io_err(&json_path))?;

        let csv_path = dir.join("summary.csv");
        let mut file = std::fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
        writeln!(file, "{SUMMARY_HEADER}").map_err(io_err(&csv_path))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header: Vec<String> =
            ["label", "scheme", "n_sc", "T_period", "E_thr", "runs"].iter().map(|s| s.to_string()).collect();
        for m in METRICS {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_std"));
        }
        let csv_err = |e: csv::Error| Error::Format { path: csv_path.clone(), message: e.to_string() };
        w.write_record(&header).map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.points {
            let mut row = vec![
                p.label.clone(),
                p.coords.scheme.to_string(),
                p.coords.n_sc.to_string(),
                opt(p.coords.t_period),
                opt(p.coords.e_thr),
                p.runs.len().to_string(),
            ];
            for m in METRICS {
                let s = p.stats.get(m);
                row.push(opt(s.map(|s| s.mean)));
                row.push(opt(s.map(|s| s.std)));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(io_err(&csv_path))?;

        for p in &self.points {
            let sub = dir.join(&p.label);
            std::fs::create_dir_all(&sub).map_err(io_err(&sub))?;
            for (run, seed) in p.runs.iter().zip(&p.seeds) {
                run.write_json(sub.join(format!("run-seed{seed}.json")))?;
                run.write_series_csv(sub.join(format!("run-seed{seed}-series.csv")))?;
            }
        }
        Ok(())
    }
}
