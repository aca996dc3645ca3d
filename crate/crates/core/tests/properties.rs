use proptest::prelude::*;

use iacr_core::config::ScenarioConfig;
use iacr_core::metrics::{mean_and_stderr, outage, throughput, MetricsRecord, RunMetrics};
use iacr_core::routing::Protocol;
use iacr_core::sim::{run, EventQueue};
use iacr_core::sweep::{read_csv, round_significant, write_csv};

fn sinr_sample() -> impl Strategy<Value = f64> {
    prop_oneof![0.0..1e6f64, Just(0.0), Just(f64::INFINITY)]
}

proptest! {
    #[test]
    fn throughput_is_a_fraction(sent in 0u64..10_000, share in 0.0..=1.0f64) {
        let delivered = (sent as f64 * share).floor() as u64;
        let t = throughput(delivered, sent).unwrap();
        prop_assert!((0.0..=1.0).contains(&t));
    }

    #[test]
    fn outage_is_a_fraction(samples in prop::collection::vec(sinr_sample(), 1..200), th in 0.0..100.0f64) {
        let o = outage(&samples, th).unwrap();
        prop_assert!((0.0..=1.0).contains(&o));
    }

    #[test]
    fn outage_grows_with_threshold(samples in prop::collection::vec(sinr_sample(), 1..200), a in 0.0..50.0f64, b in 0.0..50.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(outage(&samples, lo).unwrap() <= outage(&samples, hi).unwrap());
    }

    #[test]
    fn mean_is_linear(values in prop::collection::vec(0.0..1.0f64, 1..40), k in 0.1..10.0f64) {
        let (m, _) = mean_and_stderr(&values);
        let scaled: Vec<f64> = values.iter().map(|v| v * k).collect();
        let (ms, _) = mean_and_stderr(&scaled);
        prop_assert!((ms - k * m).abs() <= 1e-12 * (1.0 + ms.abs()));
    }

    #[test]
    fn csv_round_trips_any_record(
        n in 1usize..500,
        th in -5.0..20.0f64,
        t in 0.0..=1.0f64,
        o in 0.0..=1.0f64,
        e in 0.0..10.0f64,
        se in 0.0..0.5f64,
    ) {
        let record = MetricsRecord {
            protocol: Protocol::Mhc,
            n_nodes: n,
            sinr_threshold_db: round_significant(th),
            delta: 0.5,
            seed_count: 3,
            throughput_mean: round_significant(t),
            throughput_stderr: round_significant(se),
            outage_mean: round_significant(o),
            outage_stderr: round_significant(se / 3.0),
            energy_mean_j: round_significant(e),
            energy_stderr_j: round_significant(e * se),
        };
        let mut buf = Vec::new();
        write_csv(std::slice::from_ref(&record), &mut buf).unwrap();
        prop_assert_eq!(read_csv(buf.as_slice()).unwrap(), vec![record]);
    }

    #[test]
    fn queue_pops_in_order(times in prop::collection::vec(0.0..100.0f64, 0..100)) {
        let mut q = EventQueue::default();
        for (k, &t) in times.iter().enumerate() {
            q.schedule(t, k);
        }
        let mut last = (f64::NEG_INFINITY, 0usize);
        while let Some((t, k)) = q.pop() {
            prop_assert!(t > last.0 || (t == last.0 && k > last.1) || last.0 == f64::NEG_INFINITY);
            last = (t, k);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Metrics of whole simulated runs stay within their ranges, and with
    /// losses as the only failure mode throughput and outage add to one.
    #[test]
    fn simulated_metrics_are_fractions(
        seed in 1u64..10_000,
        n_nodes in 4usize..30,
        flows in 1usize..4,
        th in 0.0..12.0f64,
        protocol in prop::sample::select(Protocol::ALL.to_vec()),
        adapt in any::<bool>(),
    ) {
        let cfg = ScenarioConfig {
            n_nodes,
            random_flows: flows,
            sinr_threshold_db: th,
            protocol,
            power_adaptation: adapt,
            sim_duration: 7.0,
            seed,
            ..ScenarioConfig::default()
        };
        let m = RunMetrics::from_trace(&run(&cfg).unwrap()).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.throughput));
        prop_assert!(m.delivered + m.lost + m.in_flight == m.sent);
        if let Some(o) = m.outage {
            prop_assert!((0.0..=1.0).contains(&o));
            prop_assert!((m.throughput + o - 1.0).abs() < 1e-12);
        }
    }
}
