use uwlink_core::frame::{decode_frame, parse_hex_dump, to_hex_line, write_hex_dump};
use uwlink_core::power::{charge_consumed, EnergyTrace, PowerMode};
use uwlink_core::sim::{
    emit_report, run_scenario, run_scenario_with, Injection, Report, ReportFormat, RunOptions,
    Scenario,
};
use uwlink_core::validation::{multi_point_scenario, single_point_scenario};

fn collision_scenario() -> Scenario {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/collision.json");
    Scenario::load(std::path::Path::new(path)).unwrap()
}

#[test]
fn frame_vectors_decode_and_reencode() {
    let text = include_str!("data/frames.hex");
    let frames = parse_hex_dump(text).unwrap();
    assert_eq!(frames.len(), 7);
    for bytes in &frames {
        let f = decode_frame(bytes).unwrap_or_else(|e| panic!("{}: {e}", to_hex_line(bytes)));
        assert_eq!(&f.encode(), bytes);
    }
    let written = write_hex_dump(frames.iter().map(|f| f.as_slice()));
    assert_eq!(parse_hex_dump(&written).unwrap(), frames);
}

#[test]
fn every_reception_is_accounted_for() {
    for sc in [single_point_scenario(115_200), collision_scenario()] {
        let r = run_scenario(&sc).unwrap();
        let sent: u64 = r.nodes.iter().map(|n| n.frames_sent).sum();
        let peers = (r.nodes.len() - 1) as u64;
        let outcomes: u64 = r
            .nodes
            .iter()
            .map(|n| n.frames_received + n.frames_filtered + n.decode_errors)
            .sum();
        assert_eq!(outcomes, sent * peers);
    }
}

#[test]
fn collision_corrupts_reply() {
    let clean = {
        let mut sc = collision_scenario();
        sc.collision_injections.clear();
        run_scenario(&sc).unwrap()
    };
    let hit = run_scenario(&collision_scenario()).unwrap();
    assert_eq!(clean.total_decode_errors(), 0);
    assert_eq!(clean.total_timeouts(), 0);
    assert!(hit.total_decode_errors() > 0);
    assert_eq!(hit.polls[0].reply, None);
    assert_eq!(hit.polls[1].reply.as_deref(), Some("00 ff"));
}

#[test]
fn injection_outside_any_frame_is_harmless() {
    let mut sc = single_point_scenario(115_200);
    sc.collision_injections.push(Injection {
        time_s: 0.05,
        node: 1,
    });
    let r = run_scenario(&sc).unwrap();
    assert_eq!(r.polls[0].reply.as_deref(), Some("00 ff"));
    assert_eq!(r.total_decode_errors(), 0);
}

#[test]
fn report_energy_matches_trace_charge() {
    let sc = single_point_scenario(9600);
    let out = run_scenario_with(&sc, &RunOptions::default()).unwrap();
    for (n, trace) in out.report.nodes.iter().zip(&out.energy_traces) {
        assert!((trace.total_duration_s() - sc.duration_s).abs() < 1e-12);
        let budget = if n.node == 0 {
            &sc.master.budget
        } else {
            &sc.slaves[n.node - 1].budget
        };
        let c = charge_consumed(trace, budget, &sc.modes);
        assert_eq!(c.microamp_hours, n.energy_uah);
        let mut csv = Vec::new();
        trace.write_csv(&mut csv).unwrap();
        let back = EnergyTrace::read_csv(csv.as_slice(), trace.supply_v).unwrap();
        assert_eq!(&back, trace);
    }
    let slave = &out.energy_traces[1];
    assert!(slave.records.iter().any(|r| r.mode == PowerMode::Run));
    assert_eq!(slave.records.last().unwrap().mode, PowerMode::Stop1);
}

#[test]
fn seed_changes_noisy_outcome_only() {
    let mut a = multi_point_scenario();
    a.poll_rounds.as_mut().unwrap().rounds = 4;
    a.link_ebn0_db = Some(6.0);
    let mut b = a.clone();
    b.seed += 1;
    let ra = run_scenario(&a).unwrap();
    let rb = run_scenario(&b).unwrap();
    assert_eq!(ra.to_json(), run_scenario(&a).unwrap().to_json());
    assert_ne!(ra.link.bit_errors, 0);
    assert_ne!(ra.to_json(), rb.to_json());
}

#[test]
fn report_round_trips_through_json_and_csv() {
    let r = run_scenario(&single_point_scenario(115_200)).unwrap();
    assert_eq!(Report::from_json(&r.to_json()).unwrap(), r);

    let dir = tempfile::tempdir().unwrap();
    emit_report(&r, ReportFormat::Csv, &dir.path().join("report.csv")).unwrap();
    let mut rows = csv::Reader::from_path(dir.path().join("report.csv")).unwrap();
    let records: Vec<csv::StringRecord> = rows.records().map(|x| x.unwrap()).collect();
    assert_eq!(records.len(), r.nodes.len() + 1);
    for (rec, n) in records.iter().zip(&r.nodes) {
        assert_eq!(&rec[0], "node");
        assert_eq!(rec[1].parse::<usize>().unwrap(), n.node);
        assert_eq!(rec[9].parse::<f64>().unwrap(), n.energy_uah);
    }
    let link = records.last().unwrap();
    assert_eq!(&link[0], "link");
    assert_eq!(link[10].parse::<u64>().unwrap(), r.link.physical_bits);

    let timeline = std::fs::read_to_string(dir.path().join("timeline.jsonl")).unwrap();
    assert_eq!(timeline.lines().count(), r.timeline.len());
    for (line, rec) in timeline.lines().zip(&r.timeline) {
        assert_eq!(
            &serde_json::from_str::<uwlink_core::sim::TimelineRecord>(line).unwrap(),
            rec
        );
    }
}

#[test]
fn timeline_is_time_ordered() {
    let r = run_scenario(&multi_point_scenario()).unwrap();
    for w in r.timeline.windows(2) {
        assert!((w[0].time_s, w[0].seq) < (w[1].time_s, w[1].seq));
    }
}
