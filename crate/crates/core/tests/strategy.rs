use dynmap_core::strategy::StrategyState;
use proptest::prelude::*;

proptest! {
    #[test]
    fn periodic_gaps_stay_within_one_slot(period in 0.05f64..10.0, start in 0.0f64..10.0) {
        let slot = 0.1;
        let mut st = StrategyState::periodic(period);
        st.t_last_tx = start.min(period);
        let mut last = None;
        for k in 0..2000u32 {
            if st.decide(0.0, slot) {
                if let Some(prev) = last {
                    let gap = (k - prev) as f64 * slot;
                    prop_assert!(gap >= period - slot - 1e-9 && gap <= period + slot + 1e-9, "gap {gap}");
                }
                last = Some(k);
            }
            prop_assert!(st.t_last_tx >= 0.0);
        }
    }

    #[test]
    fn periodic_rate_matches_period(period in 0.05f64..5.0) {
        let slot = 0.1;
        let mut st = StrategyState::periodic(period);
        let slots = 20_000u32;
        let sent = (0..slots).filter(|_| st.decide(0.0, slot)).count() as f64;
        let expected = slots as f64 * slot / period.max(slot);
        prop_assert!((sent - expected).abs() <= 1.0 + 1e-6 * expected, "{sent} vs {expected}");
    }

    #[test]
    fn threshold_fires_exactly_when_divergence_exceeds(e_thr in 0.0f64..20.0, trace in proptest::collection::vec(0.0f64..25.0, 1..300)) {
        let mut st = StrategyState::threshold(e_thr, 1e9);
        for d in trace {
            prop_assert_eq!(st.decide(d, 0.1), d > e_thr);
        }
    }

    #[test]
    fn threshold_never_waits_past_t_max(t_max in 0.2f64..5.0, n in 10usize..500) {
        let slot = 0.1;
        let mut st = StrategyState::threshold(f64::INFINITY, t_max);
        let mut since = 0usize;
        for _ in 0..n {
            since += 1;
            if st.decide(0.0, slot) {
                since = 0;
            }
            prop_assert!((since as f64) * slot <= t_max + 1e-9);
        }
    }
}

#[test]
fn new_neighbor_triggers_after_two_slots() {
    let mut st = StrategyState::periodic(f64::INFINITY);
    st.t_last_tx = 0.1;
    st.new_neighbor = true;
    assert!(!st.decide(0.0, 0.1));
    st.new_neighbor = true;
    assert!(st.decide(0.0, 0.1));
    // the flag is consumed by the decision
    for _ in 0..100 {
        assert!(!st.decide(0.0, 0.1));
    }
}
