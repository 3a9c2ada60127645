//! Per-vehicle transmission decisions: periodic broadcasting and
//! error-threshold broadcasting.

use crate::config::StrategyKind;
use crate::congestion::StrategyParams;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrategyState<T> {
    /// Seconds since the last transmission decision (with residual carry).
    pub t_last_tx: T,
    pub kind: StrategyKind,
    pub t_period: T,
    pub e_thr: T,
    pub t_max: T,
    /// A track for a previously unknown sender was created this slot.
    pub new_neighbor: bool,
}

// Strict comparison that ignores accumulated rounding of repeated T_t sums.
fn exceeds<T: Real>(value: T, bound: T) -> bool {
    value > bound + T::lit(1e-9) * (T::one() + bound.abs())
}

impl<T: Real> StrategyState<T> {
    pub fn periodic(t_period: T) -> Self {
        StrategyState {
            t_last_tx: T::zero(),
            kind: StrategyKind::Pb,
            t_period,
            e_thr: T::infinity(),
            t_max: T::infinity(),
            new_neighbor: false,
        }
    }

    pub fn threshold(e_thr: T, t_max: T) -> Self {
        StrategyState {
            t_last_tx: T::zero(),
            kind: StrategyKind::Etb,
            t_period: T::infinity(),
            e_thr,
            t_max,
            new_neighbor: false,
        }
    }

    /// Installs the knob chosen by congestion control.
    pub fn apply(&mut self, params: StrategyParams) {
        match params {
            StrategyParams::Period(p) => self.t_period = T::lit(p),
            StrategyParams::Threshold(e) => self.e_thr = T::lit(e),
        }
    }

    /// Runs the decision of the configured strategy and clears the
    /// new-neighbor flag. `d_div` is only read by ETB.
    pub fn decide(&mut self, d_div: T, slot: T) -> bool {
        let tx = match self.kind {
            StrategyKind::Pb => pb_decide(self, slot),
            StrategyKind::Etb => etb_decide(self, d_div, slot),
        };
        self.new_neighbor = false;
        tx
    }
}

fn new_neighbor_due<T: Real>(st: &StrategyState<T>, slot: T) -> bool {
    st.new_neighbor && exceeds(st.t_last_tx, T::lit(2.0) * slot)
}

/// Periodic broadcasting step.
pub fn pb_decide<T: Real>(st: &mut StrategyState<T>, slot: T) -> bool {
    st.t_last_tx += slot;
    let tx = exceeds(st.t_last_tx, st.t_period) || new_neighbor_due(st, slot);
    if tx {
        st.t_last_tx = (st.t_last_tx - st.t_period).max(T::zero());
    }
    tx
}

/// Error-threshold broadcasting step; `d_div` is the distance between the
/// vehicle's own estimate and what its neighbors are predicting.
pub fn etb_decide<T: Real>(st: &mut StrategyState<T>, d_div: T, slot: T) -> bool {
    st.t_last_tx += slot;
    let tx = d_div > st.e_thr || exceeds(st.t_last_tx, st.t_max) || new_neighbor_due(st, slot);
    if tx {
        st.t_last_tx = (st.t_last_tx - st.t_max).max(T::zero());
    }
    tx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pb_residual_carry() {
        let mut st = StrategyState::periodic(10.0f64);
        st.t_last_tx = 9.95;
        assert!(pb_decide(&mut st, 0.1));
        assert_abs_diff_eq!(st.t_last_tx, 0.05, epsilon = 1e-12);
    }

    #[test]
    fn new_neighbor_needs_two_idle_slots() {
        let mut st = StrategyState::periodic(10.0f64);
        st.t_last_tx = 0.1;
        st.new_neighbor = true;
        assert!(!pb_decide(&mut st, 0.1));
        st.t_last_tx = 0.2;
        assert!(pb_decide(&mut st, 0.1));
    }

    #[test]
    fn infinite_period_never_fires() {
        let mut st = StrategyState::periodic(f64::INFINITY);
        assert!((0..10_000).all(|_| !st.decide(0.0, 0.1)));
    }

    #[test]
    fn pb_period_in_slots() {
        let mut st = StrategyState::periodic(1.0f64);
        let fired: Vec<usize> = (0..60).filter(|_| st.decide(0.0, 0.1)).collect();
        let gaps: Vec<usize> = fired.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().all(|&g| g == 10 || g == 11), "{gaps:?}");
    }

    #[test]
    fn etb_threshold_is_strict() {
        let mut st = StrategyState::threshold(2.0f64, 10.0);
        assert!(!etb_decide(&mut st, 2.0, 0.1));
        assert!(etb_decide(&mut st, 2.0 + 1e-9, 0.1));
    }

    #[test]
    fn etb_fires_on_max_interval() {
        let mut st = StrategyState::threshold(2.0f64, 10.0);
        st.t_last_tx = 10.0;
        assert!(etb_decide(&mut st, 0.0, 0.1));
        assert_abs_diff_eq!(st.t_last_tx, 0.1, epsilon = 1e-9);
    }

    #[test]
    fn zero_threshold_fires_on_any_divergence() {
        let mut st = StrategyState::threshold(0.0f64, 10.0);
        assert!(etb_decide(&mut st, 1e-6, 0.1));
        assert!(!etb_decide(&mut st, 0.0, 0.1));
    }

    #[test]
    fn decide_clears_flag() {
        let mut st = StrategyState::threshold(2.0f64, 10.0);
        st.new_neighbor = true;
        st.t_last_tx = 1.0;
        assert!(st.decide(0.0, 0.1));
        assert!(!st.new_neighbor);
    }

    #[test]
    fn congestion_knobs() {
        let mut st = StrategyState::periodic(1.0f64);
        st.apply(StrategyParams::Period(0.5));
        assert_eq!(st.t_period, 0.5);
        let mut et = StrategyState::threshold(2.0f64, 10.0);
        et.apply(StrategyParams::Threshold(7.0));
        assert_eq!(et.e_thr, 7.0);
    }
}
