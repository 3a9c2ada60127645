//! Configuration loading: file, then `--set` overrides, then validation.
//!
//! Knob precedence:
//!
//! | scheme          | `T_period`                 | `E_thr`                    |
//! |-----------------|----------------------------|----------------------------|
//! | PB              | used                       | ignored (warning)          |
//! | ETB             | ignored (warning)          | used                       |
//! | PB + CSCC/NACC  | initial value, then set by the controller | ignored (warning) |
//! | ETB + CSCC/NACC | ignored (warning)          | set by the controller via the map |

use std::path::Path;

use dynmap_core::{CongestionKind, Error, Result, SimConfig, StrategyKind};
use log::warn;
use toml::{Table, Value};

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<SimConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            text.parse::<Table>().map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set `{o}`: expected KEY=VALUE")))?;
        table.insert(key.trim().to_string(), parse_value(raw.trim()));
    }
    let cfg: SimConfig = table.clone().try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    for note in ignored_knobs(&cfg, &table) {
        warn!("{note}");
    }
    Ok(cfg)
}

/// TOML literal when it parses as one, a bare string otherwise.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn ignored_knobs(cfg: &SimConfig, given: &Table) -> Vec<String> {
    let controlled = cfg.congestion != CongestionKind::None;
    let mut out = Vec::new();
    match cfg.strategy {
        StrategyKind::Pb if given.contains_key("E_thr") => out.push("E_thr is ignored by PB".to_string()),
        StrategyKind::Etb if given.contains_key("T_period") => out.push("T_period is ignored by ETB".to_string()),
        _ => {}
    }
    if controlled && cfg.strategy == StrategyKind::Etb && given.contains_key("E_thr") {
        out.push(format!("E_thr is chosen by {} congestion control", cfg.congestion));
    }
    out
}
