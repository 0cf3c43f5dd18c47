use cbir_bench::integration::run_integration;
use cbir_bench::{
    run_bench, simulate_query, BenchConfig, LinkModel, Phase, Strategy, StrategyModel, Summary, Workload,
};
use proptest::prelude::*;
use proptest::strategy::Strategy as Gen;

use Strategy::{ParkedMessages, ParkedMessenger, Traditional};

fn time(strategy: Strategy, workload: Workload, link: &LinkModel, first: bool) -> f64 {
    simulate_query(&StrategyModel::new(strategy, workload), link, first)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

#[test]
fn default_costs_match_hand_evaluation() {
    // 64 kbps: 8000 bytes take one second; every exchange adds 0.3 s and 600 framing bytes
    let link = LinkModel::default();
    let w = Workload::default();
    let expected = [
        (Traditional, true, 26.25),
        (ParkedMessenger, true, 4.25),
        (ParkedMessages, true, 2.25),
        (Traditional, false, 0.875),
        (ParkedMessenger, false, 2.875),
        (ParkedMessages, false, 0.875),
    ];
    for (strategy, first, seconds) in expected {
        let got = time(strategy, w, &link, first);
        assert!(close(got, seconds), "{strategy} first={first}: {got} vs {seconds}");
    }
}

#[test]
fn default_orderings() {
    let link = LinkModel::default();
    let w = Workload::default();
    let t = |s, first| time(s, w, &link, first);
    assert!(t(ParkedMessages, true) < t(ParkedMessenger, true));
    assert!(t(ParkedMessenger, true) < t(Traditional, true));
    assert!(t(Traditional, false) <= t(ParkedMessages, false));
    assert!(t(ParkedMessages, false) < t(ParkedMessenger, false));
}

#[test]
fn equal_subsequent_costs_without_envelope_overhead() {
    let link = LinkModel::default();
    let w = Workload {
        setup_bytes: 0.0,
        envelope_bytes: 0.0,
        ..Workload::default()
    };
    let base = time(Traditional, w, &link, false);
    assert!(close(time(ParkedMessenger, w, &link, false), base));
    assert!(close(time(ParkedMessages, w, &link, false), base));
}

#[test]
fn envelope_equal_to_query_separates_messenger_by_two_envelopes() {
    let link = LinkModel::default();
    let w = Workload {
        setup_bytes: 0.0,
        envelope_bytes: 2_000.0,
        ..Workload::default()
    };
    let messages = time(ParkedMessages, w, &link, false);
    assert!(close(time(Traditional, w, &link, false), messages));
    let excess = time(ParkedMessenger, w, &link, false) - messages;
    assert!(close(excess, 2.0 * 2_000.0 * 8.0 / 64_000.0), "excess {excess}");
}

#[test]
fn pure_latency_limit() {
    let link = LinkModel {
        bandwidth_bps: 1e15,
        rtt_s: 0.3,
        overhead_bytes: 1.0,
    };
    let w = Workload {
        query_bytes: 1.0,
        result_bytes: 1.0,
        envelope_bytes: 1.0,
        ..Workload::default()
    };
    for s in Strategy::ALL {
        assert!((time(s, w, &link, false) - 0.3).abs() < 1e-9);
    }
}

#[test]
fn zero_jitter_reports_closed_form() {
    let config = BenchConfig::default();
    let report = run_bench(&config, 100, 9).unwrap();
    assert_eq!(report.rows.len(), 6);
    for row in &report.rows {
        assert_eq!(row.summary.stddev, 0.0, "{} {}", row.strategy, row.phase.name());
        let first = row.phase == Phase::First;
        let expected = time(row.strategy, config.workload, &config.link, first);
        assert_eq!(row.summary.mean, expected);
        assert_eq!(row.summary.median, expected);
        assert_eq!(row.summary.n, if first { 1 } else { 99 });
    }
}

#[test]
fn seeded_jitter_is_deterministic() {
    let config = BenchConfig {
        jitter: 0.2,
        ..BenchConfig::default()
    };
    let a = run_bench(&config, 150, 42).unwrap().to_csv();
    let b = run_bench(&config, 150, 42).unwrap().to_csv();
    let c = run_bench(&config, 150, 43).unwrap().to_csv();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.starts_with("strategy,phase,mean_s,median_s,stddev_s,n\n"));
    assert_eq!(a.lines().count(), 7);
    let report = run_bench(&config, 150, 42).unwrap();
    let s = report.get(ParkedMessenger, Phase::Subsequent).unwrap();
    assert!(s.stddev > 0.0);
    assert!((s.mean - 2.875).abs() < 2.875 * 0.2);
}

#[test]
fn csv_rows_use_six_decimals() {
    let csv = run_bench(&BenchConfig::default(), 100, 1).unwrap().to_csv();
    assert!(csv.contains("traditional,first,26.250000,26.250000,0.000000,1\n"));
    assert!(csv.contains("parked_messenger,subsequent,2.875000,2.875000,0.000000,99\n"));
}

fn workload() -> impl Gen<Value = Workload> {
    (0.0..1e6f64, 0.0..1e5f64, 0.0..1e5f64, 0.0..1e5f64, 0.0..5.0f64).prop_map(|(s, e, q, r, p)| Workload {
        setup_bytes: s,
        envelope_bytes: e,
        query_bytes: q,
        result_bytes: r,
        broker_processing_s: p,
    })
}

fn link() -> impl Gen<Value = LinkModel> {
    (1e3..1e9f64, 1e-4..5.0f64, 1.0..2e3f64).prop_map(|(b, rtt, o)| LinkModel {
        bandwidth_bps: b,
        rtt_s: rtt,
        overhead_bytes: o,
    })
}

proptest! {
    #[test]
    fn messenger_never_beats_messages(w in workload(), l in link(), first in any::<bool>()) {
        prop_assert!(time(ParkedMessenger, w, &l, first) >= time(ParkedMessages, w, &l, first));
    }

    #[test]
    fn time_is_monotone(w in workload(), l in link(), field in 0usize..6, grow in 0.0..1e5f64, first in any::<bool>()) {
        let mut w2 = w;
        let mut l2 = l;
        match field {
            0 => w2.setup_bytes += grow,
            1 => w2.envelope_bytes += grow,
            2 => w2.query_bytes += grow,
            3 => w2.result_bytes += grow,
            4 => w2.broker_processing_s += grow,
            _ => l2.rtt_s += grow,
        }
        for s in Strategy::ALL {
            prop_assert!(time(s, w2, &l2, first) >= time(s, w, &l, first));
        }
    }

    #[test]
    fn summary_bounds(samples in prop::collection::vec(-1e6..1e6f64, 1..200)) {
        let s = Summary::of(&samples).unwrap();
        prop_assert!(s.min <= s.median && s.median <= s.max);
        prop_assert!(s.stddev >= 0.0);
        let all_equal = samples.iter().all(|x| *x == samples[0]);
        prop_assert_eq!(s.stddev == 0.0, all_equal);
    }

    #[test]
    fn constant_samples(value in -1e6..1e6f64, n in 1usize..300) {
        let s = Summary::of(&vec![value; n]).unwrap();
        prop_assert_eq!((s.mean, s.median, s.stddev), (value, value, 0.0));
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn integration_mode_reproduces_orderings() {
    let config = BenchConfig::default();
    let run = run_integration(&config, 100).await.unwrap();
    let r = &run.report;
    for strategy in Strategy::ALL {
        assert_eq!(r.get(strategy, Phase::First).unwrap().n, 1);
        assert_eq!(r.get(strategy, Phase::Subsequent).unwrap().n, 99);
    }
    assert!(r.mean(ParkedMessages, Phase::First) < r.mean(ParkedMessenger, Phase::First));
    assert!(r.mean(ParkedMessenger, Phase::First) < r.mean(Traditional, Phase::First));
    assert!(r.mean(ParkedMessenger, Phase::Subsequent) >= r.mean(ParkedMessages, Phase::Subsequent));

    // same payloads, so messenger bytes exceed message bytes query for query
    let bytes = |s: Strategy| -> Vec<f64> {
        run.measurements
            .iter()
            .filter(|(st, p, _)| *st == s && *p == Phase::Subsequent)
            .map(|(_, _, m)| m.bytes())
            .collect()
    };
    let messenger = bytes(ParkedMessenger);
    let messages = bytes(ParkedMessages);
    assert_eq!(messenger.len(), messages.len());
    assert!(messenger.iter().zip(&messages).all(|(a, b)| a > b));
    assert_eq!(bytes(Traditional), messages);
}
