use lpwan_energy::adr::{
    adr_decision, record_uplink, AdrConfig, AdrState, LinkSettings, UplinkObservation,
};
use lpwan_energy::phy::DataRate;
use proptest::prelude::*;

fn obs(snr_db: f64, link: LinkSettings) -> UplinkObservation {
    UplinkObservation {
        snr_db,
        gateway_count: 1,
        dr: link.dr,
        tx_power_dbm: link.tx_power_dbm,
    }
}

#[test]
fn high_snr_converges_to_fastest_and_quietest() {
    let mut link = LinkSettings {
        dr: DataRate::DR0,
        tx_power_dbm: 14,
    };
    let mut state = AdrState::new(AdrConfig::default());
    let mut decisions = 0;
    while link
        != (LinkSettings {
            dr: DataRate::DR5,
            tx_power_dbm: 2,
        })
    {
        state = record_uplink(state, obs(10.0, link));
        link = adr_decision(&state, link).unwrap();
        decisions += 1;
        assert!(decisions <= 5);
    }
    // Converged settings are a fixed point.
    state = record_uplink(state, obs(10.0, link));
    assert_eq!(adr_decision(&state, link), Some(link));
}

fn link_strategy() -> impl Strategy<Value = LinkSettings> {
    (0u8..=5, 2i8..=14).prop_map(|(dr, p)| LinkSettings {
        dr: DataRate::new(dr).unwrap(),
        tx_power_dbm: p,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn decisions_are_range_safe_and_deterministic(
        snrs in prop::collection::vec(-30.0f64..30.0, 1..40),
        link in link_strategy(),
    ) {
        let build = || snrs.iter().fold(AdrState::new(AdrConfig::default()), |s, &v| record_uplink(s, obs(v, link)));
        let (a, b) = (build(), build());
        prop_assert!(a.len() <= 20);
        let next = adr_decision(&a, link).unwrap();
        prop_assert_eq!(Some(next), adr_decision(&b, link));
        prop_assert!(next.dr.index() <= 5);
        prop_assert!((2..=14).contains(&next.tx_power_dbm));
        // The rule never slows the device down.
        prop_assert!(next.dr.index() >= link.dr.index());
    }

    #[test]
    fn only_the_window_matters(
        old in prop::collection::vec(-30.0f64..30.0, 0..30),
        recent in prop::collection::vec(-30.0f64..30.0, 20),
        link in link_strategy(),
    ) {
        let fill = |vals: &[f64], s: AdrState| vals.iter().fold(s, |s, &v| record_uplink(s, obs(v, link)));
        let with_old = fill(&recent, fill(&old, AdrState::new(AdrConfig::default())));
        let fresh = fill(&recent, AdrState::new(AdrConfig::default()));
        prop_assert_eq!(adr_decision(&with_old, link), adr_decision(&fresh, link));
    }
}
