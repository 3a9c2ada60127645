//! CTRA motion model and the unscented Kalman filter used for self
//! localisation, remote tracks and the purely predictive shadow filter.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{vec_add, vec_sub, Matrix, Vector};
use crate::model::{distance, VehicleId, VehicleState, HEADING, STATE_DIM};
use crate::scalar::{wrap_angle, Real};

pub type Cov6<T> = Matrix<T, STATE_DIM, STATE_DIM>;
pub type Observation<T> = [T; STATE_DIM];

/// Below this turn rate the rectilinear Taylor expansion replaces the closed form.
pub const OMEGA_EPS: f64 = 1e-4;

/// Constant turn rate and acceleration transition over `dt` seconds.
///
/// The speed never goes negative: a decelerating vehicle stops where
/// `u + a t` reaches zero and stays there for the rest of the interval.
pub fn ctra_predict<T: Real>(s: &VehicleState<T>, dt: T) -> VehicleState<T> {
    if dt <= T::zero() {
        return *s;
    }
    let zero = T::zero();
    let u = s.u.max(zero);
    let (a, omega, h) = (s.a, s.omega, s.h);
    // time spent moving
    let t_move = if a < zero && u + a * dt < zero { -u / a } else { dt };
    let (dx, dy) = ctra_displacement(u, a, omega, h, t_move);
    VehicleState {
        x: s.x + dx,
        y: s.y + dy,
        h: wrap_angle(h + omega * dt),
        u: (u + a * dt).max(zero),
        a,
        omega,
    }
}

fn ctra_displacement<T: Real>(u: T, a: T, omega: T, h: T, t: T) -> (T, T) {
    if t <= T::zero() {
        return (T::zero(), T::zero());
    }
    if omega.abs() < T::lit(OMEGA_EPS) {
        // second-order expansion in ω of ∫ (u + a τ) (cos, sin)(h + ωτ) dτ
        let half = T::lit(0.5);
        let t2 = t * t;
        let i0 = u * t + a * t2 * half;
        let i1 = u * t2 * half + a * t2 * t / T::lit(3.0);
        let i2 = u * t2 * t / T::lit(3.0) + a * t2 * t2 / T::lit(4.0);
        let (sh, ch) = h.sin_cos();
        let w2 = omega * omega * half;
        let dx = i0 * ch - omega * i1 * sh - w2 * i2 * ch;
        let dy = i0 * sh + omega * i1 * ch - w2 * i2 * sh;
        return (dx, dy);
    }
    let (s0, c0) = h.sin_cos();
    let (s1, c1) = (h + omega * t).sin_cos();
    let w2 = omega * omega;
    let end_speed = u + a * t;
    let dx = (end_speed * omega * s1 + a * c1 - u * omega * s0 - a * c0) / w2;
    let dy = (-end_speed * omega * c1 + a * s1 + u * omega * c0 - a * s0) / w2;
    (dx, dy)
}

/// Measurement function: the sensors observe the full state.
pub fn measure<T: Real>(s: &VehicleState<T>) -> Observation<T> {
    s.to_array()
}

/// Process and measurement noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel<T> {
    /// `Q = q I`.
    pub q: T,
    /// Diagonal of `R`.
    pub r: [T; STATE_DIM],
}

impl<T: Real> NoiseModel<T> {
    pub fn new(q: T, r: [T; STATE_DIM]) -> Self {
        NoiseModel { q, r }
    }

    pub fn process(&self) -> Cov6<T> {
        Cov6::identity().scale(self.q)
    }

    pub fn measurement(&self) -> Cov6<T> {
        Cov6::diagonal(&self.r)
    }

    /// Draws a noisy observation of `s`; the heading stays in `(-π, π]`.
    pub fn observe<R: Rng + ?Sized>(&self, s: &VehicleState<T>, rng: &mut R) -> Observation<T> {
        let mut o = measure(s);
        for (i, v) in o.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *v += self.r[i].sqrt() * T::lit(z);
        }
        o[HEADING] = wrap_angle(o[HEADING]);
        o
    }
}

/// Scaled unscented transform parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaParams<T> {
    pub alpha: T,
    pub beta: T,
    pub kappa: T,
}

impl<T: Real> Default for SigmaParams<T> {
    fn default() -> Self {
        SigmaParams { alpha: T::lit(0.5), beta: T::lit(2.0), kappa: T::zero() }
    }
}

/// `2N + 1` sigma points with mean and covariance weights.
#[derive(Clone, Debug)]
pub struct SigmaPoints<T, const N: usize> {
    pub points: Vec<Vector<T, N>>,
    pub wm: Vec<T>,
    pub wc: Vec<T>,
}

fn jitter<T: Real, const N: usize>(cov: &Matrix<T, N, N>) -> Matrix<T, N, N> {
    let eps = T::lit(1e-9) * (cov.trace().abs() / T::from_count(N) + T::one());
    *cov + Matrix::identity().scale(eps)
}

/// Projects an indefinite covariance onto the PSD cone, flooring the
/// eigenvalues at the jitter scale. Factorable input is returned unchanged.
fn repair<T: Real, const N: usize>(cov: Matrix<T, N, N>) -> Matrix<T, N, N> {
    if cov.cholesky().is_some() {
        return cov;
    }
    let eps = T::lit(1e-9) * (cov.trace().abs() / T::from_count(N) + T::one());
    cov.psd_projection(eps)
}

/// Scaled sigma points around `mean`. Falls back to one diagonal jitter when
/// the covariance does not factor, then reports divergence.
pub fn sigma_points_raw<T: Real, const N: usize>(
    mean: &Vector<T, N>,
    cov: &Matrix<T, N, N>,
    p: &SigmaParams<T>,
) -> Result<SigmaPoints<T, N>> {
    let n = T::from_count(N);
    let lambda = p.alpha * p.alpha * (n + p.kappa) - n;
    let spread = n + lambda;
    let sym = cov.symmetrized();
    let l = match sym.scale(spread).cholesky() {
        Some(l) => l,
        None => jitter(&sym).scale(spread).cholesky().ok_or_else(|| {
            Error::FilterDivergence("covariance is not positive semi-definite".into())
        })?,
    };
    let mut points = Vec::with_capacity(2 * N + 1);
    points.push(*mean);
    for j in 0..N {
        let col = l.column(j);
        points.push(vec_add(mean, &col));
    }
    for j in 0..N {
        let col = l.column(j);
        points.push(vec_sub(mean, &col));
    }
    let wi = T::one() / (T::lit(2.0) * spread);
    let wm0 = lambda / spread;
    let wc0 = wm0 + (T::one() - p.alpha * p.alpha + p.beta);
    let mut wm = vec![wi; 2 * N + 1];
    let mut wc = vec![wi; 2 * N + 1];
    wm[0] = wm0;
    wc[0] = wc0;
    Ok(SigmaPoints { points, wm, wc })
}

/// Weighted mean; the optional angular component is averaged on the circle.
pub fn weighted_mean<T: Real, const N: usize>(
    points: &[Vector<T, N>],
    wm: &[T],
    angle: Option<usize>,
) -> Vector<T, N> {
    let mut m = [T::zero(); N];
    for (p, &w) in points.iter().zip(wm) {
        for i in 0..N {
            m[i] += w * p[i];
        }
    }
    if let Some(k) = angle {
        let (mut s, mut c) = (T::zero(), T::zero());
        for (p, &w) in points.iter().zip(wm) {
            let (sk, ck) = p[k].sin_cos();
            s += w * sk;
            c += w * ck;
        }
        m[k] = if s.hypot(c) > T::lit(1e-12) { s.atan2(c) } else { wrap_angle(points[0][k]) };
    }
    m
}

fn residual<T: Real, const N: usize>(a: &Vector<T, N>, b: &Vector<T, N>, angle: Option<usize>) -> Vector<T, N> {
    let mut d = vec_sub(a, b);
    if let Some(k) = angle {
        d[k] = wrap_angle(d[k]);
    }
    d
}

/// Unscented prediction through an arbitrary transition, adding `q_cov`.
pub fn unscented_predict<T: Real, const N: usize>(
    mean: &Vector<T, N>,
    cov: &Matrix<T, N, N>,
    transition: impl Fn(&Vector<T, N>) -> Vector<T, N>,
    q_cov: &Matrix<T, N, N>,
    p: &SigmaParams<T>,
    angle: Option<usize>,
) -> Result<(Vector<T, N>, Matrix<T, N, N>)> {
    let sp = sigma_points_raw(mean, cov, p)?;
    let moved: Vec<Vector<T, N>> = sp.points.iter().map(&transition).collect();
    let m = weighted_mean(&moved, &sp.wm, angle);
    let mut c = *q_cov;
    for (x, &w) in moved.iter().zip(&sp.wc) {
        let d = residual(x, &m, angle);
        c.add_outer(w, &d, &d);
    }
    let c = c.symmetrized();
    if !c.is_finite() || m.iter().any(|v| !v.is_finite()) {
        return Err(Error::FilterDivergence("non-finite prediction".into()));
    }
    Ok((m, repair(c)))
}

/// Unscented measurement update with measurement function `h`.
#[allow(clippy::too_many_arguments)]
pub fn unscented_update<T: Real, const N: usize, const M: usize>(
    mean: &Vector<T, N>,
    cov: &Matrix<T, N, N>,
    z: &Vector<T, M>,
    h: impl Fn(&Vector<T, N>) -> Vector<T, M>,
    r_cov: &Matrix<T, M, M>,
    p: &SigmaParams<T>,
    state_angle: Option<usize>,
    meas_angle: Option<usize>,
) -> Result<(Vector<T, N>, Matrix<T, N, N>)> {
    let sp = sigma_points_raw(mean, cov, p)?;
    let zs: Vec<Vector<T, M>> = sp.points.iter().map(&h).collect();
    let z_mean = weighted_mean(&zs, &sp.wm, meas_angle);
    let mut s = *r_cov;
    let mut pxz = Matrix::<T, N, M>::zeros();
    for ((x, zp), &w) in sp.points.iter().zip(&zs).zip(&sp.wc) {
        let dz = residual(zp, &z_mean, meas_angle);
        let dx = residual(x, mean, state_angle);
        s.add_outer(w, &dz, &dz);
        pxz.add_outer(w, &dx, &dz);
    }
    let s = s.symmetrized();
    let pzx = pxz.transpose();
    let gain_t = match s.solve_spd(&pzx) {
        Some(k) => k,
        None => jitter(&s).solve_spd(&pzx).ok_or_else(|| {
            Error::FilterDivergence("singular innovation covariance".into())
        })?,
    };
    let gain = gain_t.transpose();
    let innov = residual(z, &z_mean, meas_angle);
    let mut m = vec_add(mean, &gain.mul_vec(&innov));
    if let Some(k) = state_angle {
        m[k] = wrap_angle(m[k]);
    }
    let c = (*cov - gain * s * gain_t).symmetrized();
    if !c.is_finite() || m.iter().any(|v| !v.is_finite()) {
        return Err(Error::FilterDivergence("non-finite update".into()));
    }
    Ok((m, repair(c)))
}

/// Mean state and its covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateEstimate<T: Real> {
    pub mean: VehicleState<T>,
    pub cov: Cov6<T>,
}

impl<T: Real> StateEstimate<T> {
    pub fn new(mean: VehicleState<T>, cov: Cov6<T>) -> Self {
        StateEstimate { mean, cov }
    }

    /// Estimate centred on an observation with covariance `R`.
    pub fn from_observation(o: &Observation<T>, noise: &NoiseModel<T>) -> Self {
        StateEstimate { mean: VehicleState::from_array(*o), cov: noise.measurement() }
    }

    pub fn position_error(&self, truth: &VehicleState<T>) -> T {
        distance(&self.mean, truth)
    }
}

pub fn sigma_points<T: Real>(est: &StateEstimate<T>, p: &SigmaParams<T>) -> Result<SigmaPoints<T, STATE_DIM>> {
    sigma_points_raw(&est.mean.to_array(), &est.cov, p)
}

pub fn ukf_predict<T: Real>(
    est: &StateEstimate<T>,
    dt: T,
    noise: &NoiseModel<T>,
    p: &SigmaParams<T>,
) -> Result<StateEstimate<T>> {
    let f = |v: &Vector<T, STATE_DIM>| ctra_predict(&VehicleState::from_array(*v), dt).to_array();
    let (m, c) = unscented_predict(&est.mean.to_array(), &est.cov, f, &noise.process(), p, Some(HEADING))?;
    Ok(StateEstimate { mean: VehicleState::from_array(m), cov: c })
}

pub fn ukf_update<T: Real>(
    est: &StateEstimate<T>,
    obs: &Observation<T>,
    noise: &NoiseModel<T>,
    p: &SigmaParams<T>,
) -> Result<StateEstimate<T>> {
    update_with(est, obs, &noise.measurement(), p)
}

fn update_with<T: Real>(
    est: &StateEstimate<T>,
    obs: &Observation<T>,
    r_cov: &Cov6<T>,
    p: &SigmaParams<T>,
) -> Result<StateEstimate<T>> {
    let h = |v: &Vector<T, STATE_DIM>| measure(&VehicleState::from_array(*v));
    let (m, c) = unscented_update(&est.mean.to_array(), &est.cov, obs, h, r_cov, p, Some(HEADING), Some(HEADING))?;
    Ok(StateEstimate { mean: VehicleState::from_array(m), cov: c })
}

/// Shadow filter after a broadcast: an exact copy of the broadcast estimate.
pub fn shadow_reset<T: Real>(current: &StateEstimate<T>) -> StateEstimate<T> {
    *current
}

/// Advances the shadow filter; it never sees observations.
pub fn shadow_predict<T: Real>(
    shadow: &StateEstimate<T>,
    dt: T,
    noise: &NoiseModel<T>,
    p: &SigmaParams<T>,
) -> Result<StateEstimate<T>> {
    ukf_predict(shadow, dt, noise, p)
}

/// A remote vehicle's estimate as received over the channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RemoteMessage<T: Real> {
    pub sender: VehicleId,
    pub estimate: StateEstimate<T>,
    /// Slot the estimate refers to (the transmission slot).
    pub slot: u64,
}

/// One tracker's belief about one target vehicle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackEntry<T: Real> {
    pub target: VehicleId,
    pub estimate: StateEstimate<T>,
    /// Slot of the last received message.
    pub last_update_slot: u64,
    /// Slot the estimate currently refers to; behind `now` until predicted.
    pub estimate_slot: u64,
    /// Transmission slot of the message the estimate descends from.
    pub source_slot: u64,
}

impl<T: Real> TrackEntry<T> {
    /// Whether the track has outlived the timeout at slot `now`.
    pub fn is_stale(&self, now: u64, slot: T, timeout: T) -> bool {
        let idle = now.saturating_sub(self.last_update_slot);
        T::from_u64(idle).unwrap_or_else(T::infinity) * slot > timeout
    }

    /// Predicts the estimate forward one slot at a time until it refers to `now`.
    pub fn advance_to(&mut self, now: u64, slot: T, noise: &NoiseModel<T>, p: &SigmaParams<T>) -> Result<()> {
        while self.estimate_slot < now {
            self.estimate = ukf_predict(&self.estimate, slot, noise, p)?;
            self.estimate_slot += 1;
        }
        Ok(())
    }
}

/// Seeds or replaces a track with a received estimate.
pub fn ingest_remote<T: Real>(track: Option<&TrackEntry<T>>, msg: &RemoteMessage<T>, now: u64) -> TrackEntry<T> {
    let target = track.map(|t| t.target).unwrap_or(msg.sender);
    TrackEntry {
        target,
        estimate: msg.estimate,
        last_update_slot: now,
        estimate_slot: msg.slot,
        source_slot: msg.slot,
    }
}

/// Alternative to replacement: treats the received mean as an observation
/// with the received covariance and fuses it into an existing track.
pub fn fuse_remote<T: Real>(
    track: Option<&TrackEntry<T>>,
    msg: &RemoteMessage<T>,
    now: u64,
    slot: T,
    noise: &NoiseModel<T>,
    p: &SigmaParams<T>,
) -> Result<TrackEntry<T>> {
    let Some(existing) = track else {
        return Ok(ingest_remote(None, msg, now));
    };
    let mut aligned = *existing;
    // bring both to the message slot when the track lags behind it
    aligned.advance_to(msg.slot, slot, noise, p)?;
    if aligned.estimate_slot != msg.slot {
        return Ok(ingest_remote(track, msg, now));
    }
    let fused = update_with(&aligned.estimate, &msg.estimate.mean.to_array(), &msg.estimate.cov, p)?;
    Ok(TrackEntry {
        target: existing.target,
        estimate: fused,
        last_update_slot: now,
        estimate_slot: msg.slot,
        source_slot: msg.slot,
    })
}

/// Self-localisation filter: one predict and one update per slot.
#[derive(Clone, Debug)]
pub struct SelfFilter<T: Real> {
    pub estimate: StateEstimate<T>,
}

impl<T: Real> SelfFilter<T> {
    pub fn new(first: &Observation<T>, noise: &NoiseModel<T>) -> Self {
        SelfFilter { estimate: StateEstimate::from_observation(first, noise) }
    }

    pub fn step(&mut self, obs: &Observation<T>, dt: T, noise: &NoiseModel<T>, p: &SigmaParams<T>) -> Result<()> {
        let prior = ukf_predict(&self.estimate, dt, noise, p)?;
        self.estimate = ukf_update(&prior, obs, noise, p)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn table_noise() -> NoiseModel<f64> {
        NoiseModel::new(1.0, [1.18535, 1.18535, 0.5, 0.39, 0.09211, 0.01587])
    }

    #[test]
    fn rectilinear_limit() {
        let s = VehicleState::<f64>::new(0.0, 0.0, 0.0, 10.0, 0.0, 0.0);
        let n = ctra_predict(&s, 1.0);
        assert!((n.x - 10.0).abs() < 1e-12 && n.y.abs() < 1e-12);
        assert_eq!(n.u, 10.0);
    }

    #[test]
    fn quarter_circle_arc() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 10.0, 0.0, PI / 2.0);
        let n = ctra_predict(&s, 1.0);
        let r = 20.0 / PI;
        assert!((n.x - r).abs() < 1e-9, "{}", n.x);
        assert!((n.y - r).abs() < 1e-9, "{}", n.y);
        assert!((n.h - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn continuous_across_small_turn_rate_branch() {
        let base = VehicleState::new(3.0, -1.0, 0.7, 12.0, 1.5, 0.0);
        let below = ctra_predict(&VehicleState { omega: OMEGA_EPS / 2.0, ..base }, 1.0);
        let zero = ctra_predict(&base, 1.0);
        assert!(distance(&below, &zero) < 1e-3);
        let just_below = ctra_predict(&VehicleState { omega: OMEGA_EPS * (1.0 - 1e-9), ..base }, 1.0);
        let just_above = ctra_predict(&VehicleState { omega: OMEGA_EPS * (1.0 + 1e-9), ..base }, 1.0);
        assert!(distance(&just_below, &just_above) < 1e-6);
    }

    #[test]
    fn braking_vehicle_stops_and_stays() {
        let s = VehicleState::<f64>::new(0.0, 0.0, 0.0, 4.0, -2.0, 0.0);
        let n = ctra_predict(&s, 5.0);
        assert_eq!(n.u, 0.0);
        assert!((n.x - 4.0).abs() < 1e-12); // u²/(2|a|)
    }

    #[test]
    fn works_in_f32() {
        let s = VehicleState::<f32>::new(0.0, 0.0, 0.0, 10.0, 0.0, std::f32::consts::FRAC_PI_2);
        let n = ctra_predict(&s, 1.0);
        assert!((n.x - 6.366_197).abs() < 1e-4);
    }

    #[test]
    fn sigma_points_degenerate_and_exact() {
        let mean = VehicleState::new(1.0, 2.0, 0.3, 5.0, 0.1, 0.05);
        let est = StateEstimate::new(mean, Cov6::zeros());
        let sp = sigma_points(&est, &SigmaParams::default()).unwrap();
        assert_eq!(sp.points.len(), 13);
        assert!(sp.points.iter().all(|p| *p == mean.to_array()));

        let est = StateEstimate::new(mean, Cov6::identity());
        let sp = sigma_points(&est, &SigmaParams::default()).unwrap();
        let m = weighted_mean(&sp.points, &sp.wm, None);
        let mut c = Cov6::zeros();
        for (x, &w) in sp.points.iter().zip(&sp.wc) {
            let d = vec_sub(x, &m);
            c.add_outer(w, &d, &d);
        }
        assert!(vec_sub(&m, &mean.to_array()).iter().all(|v: &f64| v.abs() < 1e-9));
        assert!((c - Cov6::identity()).max_abs() < 1e-9);
    }

    #[test]
    fn indefinite_covariance_is_divergence() {
        let mut cov = Cov6::identity();
        cov[(0, 0)] = -1.0;
        let est = StateEstimate::new(VehicleState::at(0.0, 0.0), cov);
        assert!(matches!(sigma_points(&est, &SigmaParams::default()), Err(Error::FilterDivergence(_))));
    }

    #[test]
    fn zero_dt_prediction_adds_exactly_q() {
        let noise = table_noise();
        let est = StateEstimate::new(VehicleState::new(0.0, 0.0, 0.4, 8.0, 0.2, 0.1), noise.measurement());
        let next = ukf_predict(&est, 0.0, &noise, &SigmaParams::default()).unwrap();
        assert!((next.cov - (est.cov + noise.process())).max_abs() < 1e-9);
        assert!(distance(&next.mean, &est.mean) < 1e-12);
    }

    #[test]
    fn perfect_sensor_limit() {
        let noise = NoiseModel::new(1.0, [1e-12; 6]);
        let est = StateEstimate::new(VehicleState::new(0.0, 0.0, 0.2, 5.0, 0.0, 0.0), Cov6::identity());
        let obs = [1.0, -0.5, 0.3, 5.5, 0.1, 0.02];
        let post = ukf_update(&est, &obs, &noise, &SigmaParams::default()).unwrap();
        for (a, b) in post.mean.to_array().iter().zip(obs.iter()) {
            assert!((*a - *b as f64).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn update_reduces_uncertainty() {
        let noise = table_noise();
        let est = StateEstimate::new(VehicleState::new(0.0, 0.0, 0.2, 5.0, 0.0, 0.0), Cov6::identity().scale(2.0));
        let obs = [0.5, 0.1, 0.25, 5.2, 0.0, 0.0];
        let post = ukf_update(&est, &obs, &noise, &SigmaParams::default()).unwrap();
        assert!(post.cov.trace() < est.cov.trace());
        // prior - posterior is PSD
        assert!((est.cov - post.cov).min_eigenvalue() > -1e-9);
    }

    #[test]
    fn observation_noise_matches_r() {
        let noise = table_noise();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = VehicleState::new(10.0, 20.0, 0.5, 8.0, 0.3, 0.1);
        let n = 10_000;
        let draws: Vec<_> = (0..n).map(|_| noise.observe(&truth, &mut rng)).collect();
        for k in 0..6 {
            let mean = draws.iter().map(|d| d[k]).sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d[k] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((var / noise.r[k] - 1.0).abs() < 0.1, "component {k}: {var}");
        }
    }

    #[test]
    fn heading_noise_near_pi_stays_wrapped() {
        let noise = table_noise();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = VehicleState::new(0.0, 0.0, PI, 5.0, 0.0, 0.0);
        for _ in 0..1000 {
            let o = noise.observe(&truth, &mut rng);
            assert!(o[HEADING] > -PI && o[HEADING] <= PI);
        }
    }

    #[test]
    fn shadow_reset_has_zero_divergence() {
        let est = StateEstimate::new(VehicleState::new(1.0, 1.0, 0.0, 3.0, 0.0, 0.0), Cov6::identity());
        assert_eq!(distance(&shadow_reset(&est).mean, &est.mean), 0.0);
    }

    #[test]
    fn ingest_replaces_track() {
        let noise = table_noise();
        let p = SigmaParams::default();
        let first = RemoteMessage {
            sender: VehicleId(3),
            estimate: StateEstimate::new(VehicleState::new(5.0, 6.0, 0.1, 9.0, 0.0, 0.0), noise.measurement()),
            slot: 10,
        };
        let mut track = ingest_remote(None, &first, 11);
        assert_eq!(track.estimate.mean, first.estimate.mean);
        assert_eq!(track.target, VehicleId(3));
        track.advance_to(16, 0.1, &noise, &p).unwrap();
        assert!(track.estimate.cov.trace() > first.estimate.cov.trace());
        let second = RemoteMessage { slot: 16, ..first };
        let again = ingest_remote(Some(&track), &second, 17);
        assert_eq!(again.estimate.cov, first.estimate.cov);
        assert_eq!(again.last_update_slot, 17);
    }

    #[test]
    fn track_timeout_is_strict() {
        let t = TrackEntry {
            target: VehicleId(1),
            estimate: StateEstimate::new(VehicleState::at(0.0, 0.0), Cov6::identity()),
            last_update_slot: 0,
            estimate_slot: 0,
            source_slot: 0,
        };
        assert!(!t.is_stale(100, 0.1, 10.0 + 1e-9));
        assert!(t.is_stale(101, 0.1, 10.0));
    }

    #[test]
    fn fusion_moves_track_towards_message() {
        let noise = table_noise();
        let p = SigmaParams::default();
        let old = ingest_remote(
            None,
            &RemoteMessage {
                sender: VehicleId(2),
                estimate: StateEstimate::new(VehicleState::new(0.0, 0.0, 0.0, 5.0, 0.0, 0.0), Cov6::identity()),
                slot: 0,
            },
            1,
        );
        let msg = RemoteMessage {
            sender: VehicleId(2),
            estimate: StateEstimate::new(VehicleState::new(2.0, 0.0, 0.0, 5.0, 0.0, 0.0), Cov6::identity()),
            slot: 0,
        };
        let fused = fuse_remote(Some(&old), &msg, 2, 0.1, &noise, &p).unwrap();
        assert!(fused.estimate.mean.x > 0.5 && fused.estimate.mean.x < 1.5);
        assert!(fused.estimate.cov.trace() < 6.0);
    }
}
