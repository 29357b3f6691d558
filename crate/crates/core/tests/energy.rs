use lpwan_energy::energy::{
    energy_per_bit, state_energy, transaction_rx_energy, Load, PowerProfile, RxOutcome,
    RxWindowCalibration,
};
use lpwan_energy::phy::{datarate_params, time_on_air, DataRate};

fn per_bit(dr: DataRate, len: usize) -> f64 {
    energy_per_bit(&PowerProfile::default(), &datarate_params(dr), 14, len).unwrap()
}

#[test]
fn per_bit_falls_with_data_rate_at_every_payload() {
    for len in 1..=51 {
        for pair in DataRate::ALL.windows(2) {
            assert!(
                per_bit(pair[1], len) < per_bit(pair[0], len),
                "{len} B: {} not below {}",
                pair[1],
                pair[0]
            );
        }
    }
}

#[test]
fn per_bit_envelope_falls_with_payload() {
    // Within a symbol block airtime is constant, so the last payload of each
    // block is where the curve touches its lower envelope.
    for dr in DataRate::ALL {
        let params = datarate_params(dr);
        let block_ends: Vec<usize> = (1..51)
            .filter(|&l| params.payload_symbols(l + 1) > params.payload_symbols(l))
            .collect();
        for pair in block_ends.windows(2) {
            assert!(
                per_bit(dr, pair[1]) <= per_bit(dr, pair[0]),
                "{dr} {pair:?}"
            );
        }
        assert!(per_bit(dr, 51) < per_bit(dr, 1) / 5.0);
    }
}

#[test]
fn per_bit_is_not_strictly_monotone() {
    // Adding one byte that spills into a new symbol block costs a whole block.
    assert!(per_bit(DataRate::DR5, 9) > per_bit(DataRate::DR5, 8));
}

#[test]
fn tx_dominates_rx_at_dr0() {
    let profile = PowerProfile::default();
    let toa = time_on_air(&datarate_params(DataRate::DR0), 12).unwrap();
    let tx_mj = state_energy(&profile, Load::Tx { power_dbm: 14 }, toa).unwrap() * 1e3;
    let cal = RxWindowCalibration::shipped();
    let rx_mj = transaction_rx_energy(&cal, DataRate::DR0, RxOutcome::NoAck, None)
        .unwrap()
        .total_mj();
    let ratio = tx_mj / rx_mj;
    assert!((5.0..=15.0).contains(&ratio), "{ratio}");
    assert!((ratio - 10.0).abs() < 1.0, "{ratio}");
}

#[test]
fn profile_windows_track_the_table() {
    let cal = RxWindowCalibration::shipped();
    let profile = PowerProfile::default();
    for dr in DataRate::ALL {
        let timeout = cal.model.profile_energy_mj(&profile, dr, false).unwrap();
        let table = cal.rx1_no_ack(dr);
        assert!(
            (timeout - table).abs() / table < 0.15,
            "{dr}: {timeout} vs {table}"
        );
        if let Some(ack) = cal.rx1_ack(dr) {
            let derived = cal.model.profile_energy_mj(&profile, dr, true).unwrap();
            assert!(
                (derived - ack).abs() / ack < 0.15,
                "{dr}: {derived} vs {ack}"
            );
        }
    }
}
