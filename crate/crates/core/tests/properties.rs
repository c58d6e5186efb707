use ltev_sim::config::{default_scenario, parse_scenario, GridLayout, ScenarioConfig};
use ltev_sim::metrics::{Level, LevelRequirement, MetricsStore};
use ltev_sim::phy::min_rbs;
use ltev_sim::stack::{HeaderSizes, PacketDelays, RlcUmRx, TxStack};
use ltev_sim::VehicleId;
use proptest::prelude::*;

fn arb_config() -> impl Strategy<Value = ScenarioConfig> {
    (
        2u32..20,
        0.5f64..50.0,
        0u32..=28,
        any::<u64>(),
        any::<bool>(),
        0.0f64..8.0,
        prop_oneof![Just(GridLayout::R12), Just(GridLayout::R14), Just(GridLayout::Hybrid)],
        proptest::option::of(1u32..100),
    )
        .prop_map(|(n, gap, mcs, seed, shadowing, sigma, layout, t2)| ScenarioConfig {
            n_vehicles: n,
            inter_vehicle_gap_m: gap,
            mcs,
            seed,
            shadowing_enabled: shadowing,
            shadow_sigma_db: sigma,
            grid_layout: layout,
            sps_t2_ms: t2,
            ..default_scenario()
        })
}

proptest! {
    #[test]
    fn config_survives_render_and_parse(cfg in arb_config()) {
        prop_assert_eq!(parse_scenario(&cfg.render()).unwrap(), cfg);
    }

    #[test]
    fn min_rbs_monotone(mcs in 0u32..28, size in 1u32..1500) {
        let here = min_rbs(mcs, size).unwrap();
        prop_assert!(min_rbs(mcs, size + 1).unwrap() >= here);
        prop_assert!(min_rbs(mcs + 1, size).unwrap() <= here);
    }

    #[test]
    fn platoon_length_monotone_in_requirement(
        delivered in proptest::collection::vec(proptest::collection::vec(0u64..40, 0..30), 8),
        rel in 0.0f64..1.0,
        drel in 0.0f64..0.5,
        lat in 0u64..40,
        dlat in 0u64..20,
    ) {
        let mut store = MetricsStore::new("h", 1, 9, 1000);
        for (i, delays) in delivered.iter().enumerate() {
            let rx = VehicleId::new(i as u32 + 2);
            for _ in 0..30 {
                store.record_tx(VehicleId::new(1), rx);
            }
            for (seq, &d) in delays.iter().enumerate() {
                let pd = PacketDelays { app_seq: seq as u64, delays_ms: [d; 6] };
                store.record_delivery(VehicleId::new(1), rx, pd, [0; 6]);
            }
        }
        let req = |min_reliability, max_latency_ms| LevelRequirement {
            level: Level::L1L2,
            min_reliability,
            max_latency_ms,
            min_length: 5,
        };
        let base = store.platoon_length(&req(rel, lat));
        prop_assert!(store.platoon_length(&req(rel + drel, lat)) <= base);
        prop_assert!(store.platoon_length(&req(rel, lat + dlat)) >= base);
    }

    /// Whatever subset of a PDU run arrives, in whatever order, RLC hands
    /// each SDU up at most once and in SN order; in-order arrivals all get
    /// through.
    #[test]
    fn rlc_delivers_in_order_once(
        keep in proptest::collection::vec(any::<bool>(), 12),
        order in Just((0..12usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let h = HeaderSizes::default();
        let mut tx = TxStack::new();
        let pdus: Vec<_> = (0..12)
            .map(|t| tx.send_to_rlc(VehicleId::new(1), 72, &h, t).unwrap())
            .collect();
        let run = |order: &[usize]| {
            let mut rx = RlcUmRx::new(25);
            let mut delivered = Vec::new();
            for (step, &i) in order.iter().enumerate() {
                if keep[i] {
                    let out = rx.receive(pdus[i].clone(), 100 + step as u64);
                    delivered.extend(out.delivered.iter().map(|p| p.app_seq));
                }
            }
            // let any pending reordering timer expire
            for id in 0..64 {
                if let Some(out) = rx.on_timer(id, 1_000) {
                    delivered.extend(out.delivered.iter().map(|p| p.app_seq));
                }
            }
            delivered
        };

        let shuffled = run(&order);
        prop_assert!(shuffled.windows(2).all(|w| w[0] < w[1]), "{:?}", shuffled);
        prop_assert!(shuffled.iter().all(|&i| keep[i as usize]));

        let in_order = run(&(0..12).collect::<Vec<_>>());
        let expected: Vec<u64> = (0..12u64).filter(|&i| keep[i as usize]).collect();
        prop_assert_eq!(in_order, expected);
    }
}
