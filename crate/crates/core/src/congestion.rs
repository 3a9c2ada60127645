//! Congestion control: channel-busy-ratio driven LIMERIC, the neighbor-aware
//! scheme built on a backlog Markov chain, and the map between error
//! thresholds and equivalent transmission periods.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use log::warn;

use crate::config::{SimConfig, StrategyKind};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Binomial(N−i, ρ) probability of `a` new channel-access attempts when `i`
/// vehicles are already backlogged.
pub fn arrival_pmf<T: Real>(a: usize, i: usize, rho: T, n: usize) -> T {
    assert!(i <= n, "backlog {i} exceeds population {n}");
    let m = n - i;
    if a > m {
        return T::zero();
    }
    let mut binom = T::one();
    for k in 0..a {
        binom = binom * T::from_count(m - k) / T::from_count(k + 1);
    }
    binom * rho.powi(a as i32) * (T::one() - rho).powi((m - a) as i32)
}

/// Backlog chain of `N` mutually in-range vehicles sharing one subcarrier.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovModel<T> {
    pub n: usize,
    pub rho: T,
    /// Row-stochastic transition matrix over backlog states `0..N`.
    pub transition: Vec<Vec<T>>,
}

/// Builds the transition matrix over backlog sizes `{0, …, N−1}`.
///
/// From a non-empty backlog one vehicle always transmits, so the backlog
/// moves from `i` to `i − 1 + a`. From an empty backlog, zero or one arrival
/// leaves it empty.
pub fn transition_matrix<T: Real>(rho: T, n: usize) -> MarkovModel<T> {
    assert!(n >= 1, "population must be positive");
    let mut t = vec![vec![T::zero(); n]; n];
    for (i, row) in t.iter_mut().enumerate() {
        if i == 0 {
            row[0] = arrival_pmf(0, 0, rho, n) + arrival_pmf(1, 0, rho, n);
            for (j, cell) in row.iter_mut().enumerate().skip(1) {
                *cell = arrival_pmf(j + 1, 0, rho, n);
            }
        } else {
            for (j, cell) in row.iter_mut().enumerate().skip(i - 1) {
                *cell = arrival_pmf(j + 1 - i, i, rho, n);
            }
        }
    }
    MarkovModel { n, rho, transition: t }
}

impl<T: Real> MarkovModel<T> {
    /// `‖ΠT − Π‖∞`.
    pub fn residual(&self, pi: &[T]) -> T {
        let mut worst = T::zero();
        for j in 0..self.n {
            let mut acc = T::zero();
            for (i, p) in pi.iter().enumerate() {
                acc += *p * self.transition[i][j];
            }
            worst = worst.max((acc - pi[j]).abs());
        }
        worst
    }
}

const DIRECT_SOLVE_MAX: usize = 64;
const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITER: usize = 1_000_000;

/// Stationary distribution of the chain.
pub fn steady_state<T: Real>(m: &MarkovModel<T>) -> Result<Vec<T>> {
    let n = m.n;
    if n == 1 {
        return Ok(vec![T::one()]);
    }
    let pi = if n <= DIRECT_SOLVE_MAX { direct_solve(m)? } else { power_iteration(m)? };
    Ok(pi)
}

fn direct_solve<T: Real>(m: &MarkovModel<T>) -> Result<Vec<T>> {
    let n = m.n;
    // (Tᵀ − I) π = 0 with the last equation replaced by Σπ = 1
    let mut a: Vec<Vec<T>> = (0..n)
        .map(|r| {
            (0..n)
                .map(|c| m.transition[c][r] - if r == c { T::one() } else { T::zero() })
                .collect()
        })
        .collect();
    a[n - 1] = vec![T::one(); n];
    let mut b = vec![T::zero(); n];
    b[n - 1] = T::one();

    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(col);
        if a[pivot][col].abs() < T::epsilon() {
            return power_iteration(m);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == T::zero() {
                continue;
            }
            for c in col..n {
                let v = a[col][c];
                a[r][c] -= f * v;
            }
            let v = b[col];
            b[r] -= f * v;
        }
    }
    let mut x = vec![T::zero(); n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in r + 1..n {
            acc -= a[r][c] * x[c];
        }
        x[r] = acc / a[r][r];
    }
    Ok(normalize(x))
}

fn power_iteration<T: Real>(m: &MarkovModel<T>) -> Result<Vec<T>> {
    let n = m.n;
    let mut pi = vec![T::one() / T::from_count(n); n];
    let mut next = vec![T::zero(); n];
    let tol = T::lit(POWER_TOL);
    let mut delta = T::infinity();
    for _ in 0..POWER_MAX_ITER {
        next.iter_mut().for_each(|v| *v = T::zero());
        for (i, p) in pi.iter().enumerate() {
            for (j, t) in m.transition[i].iter().enumerate() {
                next[j] += *p * *t;
            }
        }
        delta = pi.iter().zip(&next).fold(T::zero(), |d, (a, b)| d.max((*a - *b).abs()));
        std::mem::swap(&mut pi, &mut next);
        if delta < tol {
            return Ok(normalize(pi));
        }
    }
    Err(Error::Numeric(format!(
        "power iteration did not converge for N={n}, rho={}: last step change {delta}",
        m.rho
    )))
}

fn normalize<T: Real>(mut x: Vec<T>) -> Vec<T> {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    let s = x.iter().fold(T::zero(), |s, &v| s + v);
    x.iter_mut().for_each(|v| *v /= s);
    x
}

/// Probability that a transmission is hit by at least one of `n_ht` hidden
/// interferers: `1 − Π₀(ρ, ⌈n_ht⌉)·(1−ρ)^{n_ht}`.
pub fn p_coll<T: Real>(rho: T, n_ht: T) -> Result<T> {
    if n_ht <= T::zero() {
        return Ok(T::zero());
    }
    let n = n_ht.ceil().to_usize().unwrap_or(1).max(1);
    let pi0 = steady_state(&transition_matrix(rho, n))?[0];
    let p = T::one() - pi0 * (T::one() - rho).powf(n_ht);
    Ok(p.max(T::zero()).min(T::one()))
}

/// Mean number of same-subcarrier vehicles in a receiver's hidden region
/// given `n_hat` tracked neighbors.
pub fn estimate_hidden<T: Real>(n_hat: usize, n_sc: usize) -> T {
    T::from_count(n_hat + 1) / T::from_count(n_sc) * hidden_fraction::<T>()
}

/// Hidden-region population when `users` vehicles in range share the
/// subcarrier.
pub fn estimate_hidden_from_users<T: Real>(users: usize) -> T {
    T::from_count(users) * hidden_fraction::<T>()
}

/// Mean hidden area over the coverage area, `3√3 / 4π`.
fn hidden_fraction<T: Real>() -> T {
    let three = T::lit(3.0);
    three * three.sqrt() / (T::lit(4.0) * T::PI())
}

/// Area shared by two discs of radius `r` whose centres are `d` apart.
pub fn phi<T: Real>(d: T, r: T) -> T {
    let two = T::lit(2.0);
    if d >= two * r {
        return T::zero();
    }
    if d <= T::zero() {
        return T::PI() * r * r;
    }
    let c = d / (two * r);
    two * r * (r * c.acos() - d / two * (T::one() - c * c).sqrt())
}

/// `E[Φ(d)]` for `d` distributed as the distance to a uniform point of the
/// disc, `r²(π − 3√3/4)`.
pub fn mean_phi<T: Real>(r: T) -> T {
    let three = T::lit(3.0);
    r * r * (T::PI() - three * three.sqrt() / T::lit(4.0))
}

pub const RHO_GRID_POINTS: usize = 512;

/// Geometric grid over `[lo, hi]`.
pub fn rho_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 || lo >= hi {
        return vec![lo];
    }
    let ratio = (hi / lo).ln() / (points - 1) as f64;
    let mut g: Vec<f64> = (0..points).map(|k| lo * (ratio * k as f64).exp()).collect();
    g[points - 1] = hi;
    g
}

/// Per-slot access probability whose predicted collision probability is
/// closest to `p_thr`. Ties go to the smaller ρ.
pub fn nacc_rho(n_hat: usize, n_sc: usize, p_thr: f64, rho_min: f64, rho_max: f64) -> Result<f64> {
    let n_ht: f64 = estimate_hidden(n_hat, n_sc);
    let mut best = (f64::INFINITY, rho_min);
    for rho in rho_grid(rho_min, rho_max, RHO_GRID_POINTS) {
        let gap = (p_coll(rho, n_ht)? - p_thr).abs();
        if gap < best.0 {
            best = (gap, rho);
        }
    }
    Ok(best.1)
}

/// Memoized [`nacc_rho`]; the answer depends only on the neighbor count once
/// the other parameters are fixed.
#[derive(Clone, Debug)]
pub struct NaccTable {
    n_sc: usize,
    p_thr: f64,
    rho_min: f64,
    rho_max: f64,
    cache: Vec<Option<f64>>,
}

impl NaccTable {
    pub fn new(n_sc: usize, p_thr: f64, rho_min: f64, rho_max: f64) -> Self {
        NaccTable { n_sc, p_thr, rho_min, rho_max, cache: Vec::new() }
    }

    pub fn from_config(cfg: &SimConfig) -> Self {
        Self::new(cfg.n_sc, cfg.p_thr, cfg.rho_min, cfg.rho_max)
    }

    pub fn rho(&mut self, n_hat: usize) -> Result<f64> {
        if n_hat >= self.cache.len() {
            self.cache.resize(n_hat + 1, None);
        }
        if let Some(r) = self.cache[n_hat] {
            return Ok(r);
        }
        let r = nacc_rho(n_hat, self.n_sc, self.p_thr, self.rho_min, self.rho_max)?;
        self.cache[n_hat] = Some(r);
        Ok(r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LimericParams {
    pub alpha: f64,
    pub beta: f64,
    pub cbr_target: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub rho_min: f64,
    pub rho_max: f64,
}

impl LimericParams {
    pub fn from_config(cfg: &SimConfig) -> Self {
        LimericParams {
            alpha: cfg.alpha,
            beta: cfg.limeric_beta(),
            cbr_target: cfg.cbr_target,
            delta_min: cfg.delta_min,
            delta_max: cfg.delta_max,
            rho_min: cfg.rho_min,
            rho_max: cfg.rho_max,
        }
    }
}

/// One LIMERIC adaptation of ρ toward the target busy ratio.
pub fn limeric_step(rho: f64, cbr_vehicle: f64, p: &LimericParams) -> f64 {
    let err = p.cbr_target - cbr_vehicle;
    let delta = if err > 0.0 { (p.beta * err).min(p.delta_max) } else { (p.beta * err).max(p.delta_min) };
    ((1.0 - p.alpha) * rho + delta).max(p.rho_min).min(p.rho_max)
}

/// Channel-use state of one vehicle.
#[derive(Clone, Debug, PartialEq)]
pub struct CongestionState {
    pub rho: f64,
    pub cbr_local: f64,
    pub cbr_vehicle: f64,
    history: VecDeque<bool>,
    window: usize,
    busy_in_window: usize,
    update_every: usize,
    until_update: usize,
}

impl CongestionState {
    pub fn new(rho: f64, window: usize, update_every: usize) -> Self {
        let update_every = update_every.max(1);
        CongestionState {
            rho,
            cbr_local: 0.0,
            cbr_vehicle: 0.0,
            history: VecDeque::with_capacity(window.max(1)),
            window: window.max(1),
            busy_in_window: 0,
            update_every,
            until_update: update_every,
        }
    }

    /// Records this slot's carrier-sense outcome. Returns `true` on slots
    /// where the smoothed busy ratio was refreshed, which is also when ρ is
    /// due for an update.
    pub fn update_cbr(&mut self, busy: bool) -> bool {
        if self.history.len() == self.window && self.history.pop_front() == Some(true) {
            self.busy_in_window -= 1;
        }
        self.history.push_back(busy);
        if busy {
            self.busy_in_window += 1;
        }
        self.cbr_local = self.busy_in_window as f64 / self.history.len() as f64;
        self.until_update -= 1;
        if self.until_update == 0 {
            self.until_update = self.update_every;
            self.cbr_vehicle = 0.5 * self.cbr_vehicle + 0.5 * self.cbr_local;
            true
        } else {
            false
        }
    }
}

/// Parameters handed to the broadcasting strategy after a ρ update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StrategyParams {
    Period(f64),
    Threshold(f64),
}

/// Converts a per-slot access probability into the strategy's own knob.
pub fn apply_congestion(
    rho: f64,
    kind: StrategyKind,
    slot: f64,
    map: Option<&ErrorPeriodMap>,
) -> Result<StrategyParams> {
    if rho <= 0.0 {
        return Err(Error::Precondition(format!("access probability must be positive, got {rho}")));
    }
    let period = slot / rho;
    match kind {
        StrategyKind::Pb => Ok(StrategyParams::Period(period)),
        StrategyKind::Etb => {
            let map = map.ok_or_else(|| {
                Error::Config("ETB with congestion control needs an error-period map (`map`)".into())
            })?;
            Ok(StrategyParams::Threshold(map.threshold(period)))
        }
    }
}

/// Pool-adjacent-violators projection onto non-decreasing sequences.
/// Returns whether anything changed.
pub fn isotonic_nondecreasing(y: &mut [f64]) -> bool {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y.iter() {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, n2) = blocks[blocks.len() - 1];
            let (m1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            blocks.push(((m1 * n1 as f64 + m2 * n2 as f64) / (n1 + n2) as f64, n1 + n2));
        }
    }
    let mut changed = false;
    let mut k = 0;
    for (m, n) in blocks {
        for v in &mut y[k..k + n] {
            if *v != m {
                changed = true;
                *v = m;
            }
        }
        k += n;
    }
    changed
}

/// Per-horizon histograms of prediction error, filled by the calibration run.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorHistograms {
    pub bin: f64,
    pub bins: usize,
    /// `counts[h-1][k]` samples of `e_h` in `[k·bin, (k+1)·bin)`.
    pub counts: Vec<Vec<u64>>,
    pub totals: Vec<u64>,
    pub sums: Vec<f64>,
}

impl ErrorHistograms {
    pub fn new(h_max: usize, bin: f64, max_error: f64) -> Self {
        let bins = (max_error / bin).ceil().max(1.0) as usize;
        ErrorHistograms {
            bin,
            bins,
            counts: vec![vec![0; bins]; h_max],
            totals: vec![0; h_max],
            sums: vec![0.0; h_max],
        }
    }

    pub fn h_max(&self) -> usize {
        self.counts.len()
    }

    /// Records one error sample at horizon `h ≥ 1`. Samples beyond the last
    /// bin count toward the total only.
    pub fn record(&mut self, h: usize, error: f64) {
        let row = h - 1;
        let k = (error / self.bin).floor();
        if k >= 0.0 && (k as usize) < self.bins {
            self.counts[row][k as usize] += 1;
        }
        self.totals[row] += 1;
        self.sums[row] += error;
    }

    pub fn merge(&mut self, other: &ErrorHistograms) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.totals.iter_mut().zip(&other.totals).for_each(|(x, y)| *x += y);
        self.sums.iter_mut().zip(&other.sums).for_each(|(x, y)| *x += y);
    }

    /// Error grid `E_k = k·bin`, `k = 0..=bins`.
    pub fn grid(&self) -> Vec<f64> {
        (0..=self.bins).map(|k| k as f64 * self.bin).collect()
    }

    /// `cdf[h-1][k] = P(e_h ≤ E_k)`.
    pub fn cdfs(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .zip(&self.totals)
            .map(|(row, &n)| {
                let mut acc = 0u64;
                let mut out = Vec::with_capacity(self.bins + 1);
                out.push(0.0);
                for &c in row {
                    acc += c;
                    out.push(if n == 0 { 0.0 } else { acc as f64 / n as f64 });
                }
                out
            })
            .collect()
    }

    pub fn mean_errors(&self) -> Vec<f64> {
        self.sums
            .iter()
            .zip(&self.totals)
            .map(|(&s, &n)| if n == 0 { f64::NAN } else { s / n as f64 })
            .collect()
    }
}

/// Monotone table from error threshold (m) to equivalent mean period (s).
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorPeriodMap {
    slot: f64,
    thresholds: Vec<f64>,
    periods: Vec<f64>,
}

pub const MAP_HEADER: &str = "# dynmap error-period-map v1";

/// `T(E) = T_t Σ_{H=1}^{H_max} Π_{h≤H} P(e_h ≤ E)`, floored at one slot.
pub fn build_error_period_map(cdfs: &[Vec<f64>], grid: &[f64], slot: f64) -> Result<ErrorPeriodMap> {
    if cdfs.is_empty() || grid.is_empty() {
        return Err(Error::Precondition("error-period map needs at least one horizon and one grid point".into()));
    }
    let mut corrected = false;
    let cdfs: Vec<Vec<f64>> = cdfs
        .iter()
        .enumerate()
        .map(|(h, c)| {
            if c.len() != grid.len() {
                return Err(Error::Precondition(format!(
                    "horizon {} has {} CDF values for {} grid points",
                    h + 1,
                    c.len(),
                    grid.len()
                )));
            }
            let mut c: Vec<f64> = c.iter().map(|p| p.max(0.0).min(1.0)).collect();
            corrected |= isotonic_nondecreasing(&mut c);
            Ok(c)
        })
        .collect::<Result<_>>()?;
    if corrected {
        warn!("empirical error CDFs were not monotone; applied isotonic correction");
    }
    let periods: Vec<f64> = (0..grid.len())
        .map(|k| {
            let mut prod = 1.0;
            let mut sum = 0.0;
            for c in &cdfs {
                prod *= c[k];
                if prod == 0.0 {
                    break;
                }
                sum += prod;
            }
            (slot * sum).max(slot)
        })
        .collect();
    ErrorPeriodMap::from_table(grid.to_vec(), periods, slot)
}

impl ErrorPeriodMap {
    pub fn from_table(thresholds: Vec<f64>, mut periods: Vec<f64>, slot: f64) -> Result<Self> {
        if thresholds.is_empty() || thresholds.len() != periods.len() {
            return Err(Error::Precondition("error-period table needs matching non-empty columns".into()));
        }
        if thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Precondition("error thresholds must be strictly increasing".into()));
        }
        if isotonic_nondecreasing(&mut periods) {
            warn!("error-period table was not monotone; applied isotonic correction");
        }
        periods.iter_mut().for_each(|p| *p = p.max(slot));
        Ok(ErrorPeriodMap { slot, thresholds, periods })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    pub fn slot(&self) -> f64 {
        self.slot
    }

    /// Largest spacing of the threshold grid.
    pub fn grid_step(&self) -> f64 {
        self.thresholds.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Equivalent period for a threshold, by linear interpolation.
    pub fn period(&self, e_thr: f64) -> f64 {
        interpolate(&self.thresholds, &self.periods, e_thr)
    }

    /// Smallest threshold whose equivalent period reaches `period`.
    pub fn threshold(&self, period: f64) -> f64 {
        let (e, t) = (&self.thresholds, &self.periods);
        if period <= t[0] {
            return e[0];
        }
        match t.iter().position(|&v| v >= period) {
            None => e[e.len() - 1],
            Some(k) => {
                let (t0, t1) = (t[k - 1], t[k]);
                let w = if t1 > t0 { (period - t0) / (t1 - t0) } else { 1.0 };
                e[k - 1] + w * (e[k] - e[k - 1])
            }
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{MAP_HEADER} slot={}", self.slot).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let fmt = |e: csv::Error| Error::format(path, e);
        w.write_record(["E_thr_m", "T_period_s"]).map_err(fmt)?;
        for (e, t) in self.thresholds.iter().zip(&self.periods) {
            w.write_record([e.to_string(), t.to_string()]).map_err(fmt)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let first = text.lines().next().unwrap_or_default();
        let slot = first
            .strip_prefix(MAP_HEADER)
            .and_then(|rest| rest.trim().strip_prefix("slot="))
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| Error::format(path, format!("expected header line `{MAP_HEADER} slot=<seconds>`")))?;
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let mut thresholds = Vec::new();
        let mut periods = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::format(path, e))?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|v| v.trim().parse().ok())
                    .ok_or_else(|| Error::format(path, format!("bad numeric field {i} in {rec:?}")))
            };
            thresholds.push(num(0)?);
            periods.push(num(1)?);
        }
        Self::from_table(thresholds, periods, slot)
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let k = xs.partition_point(|&v| v <= x);
    let w = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    ys[k - 1] + w * (ys[k] - ys[k - 1])
}
