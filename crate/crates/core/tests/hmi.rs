use std::collections::BTreeMap;
use std::time::Duration;

use proptest::prelude::*;

use slimkit::hmi::adapter::MockLatency;
use slimkit::hmi::session::{detection_rate, read_script};
use slimkit::hmi::{
    default_bindings, parse_events, read_events, run_session, step, ActionBinding, ActionKind,
    Bindings, CommandAdapter, ControllerState, GestureEvent, HmiConfig, MockAdapter,
    PlayerAction, PlayerAdapter, Trial, VirtualClock, DEFAULT_CONFIDENCE_GATE,
    DEFAULT_COOLDOWN_MS,
};
use slimkit::Error;

fn replay(events: &[GestureEvent], b: &Bindings) -> Vec<Option<PlayerAction>> {
    let mut s = ControllerState::default();
    events.iter().map(|e| step(&mut s, e, b).unwrap()).collect()
}

fn ev(t: u64, label: &str) -> GestureEvent {
    GestureEvent::new(t, label, 0.9)
}

#[test]
fn default_table() {
    let b = default_bindings();
    assert_eq!(b.confidence_gate, DEFAULT_CONFIDENCE_GATE);
    assert_eq!(b.action_for("Ok"), PlayerAction::Play);
    assert_eq!(b.action_for("Fist"), PlayerAction::Pause);
    assert_eq!(b.action_for("Two"), PlayerAction::NextTrack);
    assert_eq!(b.action_for("Three"), PlayerAction::PrevTrack);
    assert_eq!(b.action_for("L"), PlayerAction::VolumeUp);
    assert_eq!(b.action_for("Hang"), PlayerAction::VolumeDown);
    assert_eq!(b.action_for("Palm"), PlayerAction::NoOp);
    assert!(b.lookup("Palm").is_none());
    assert!(b.bindings.iter().all(|x| x.cooldown_ms == DEFAULT_COOLDOWN_MS));
    b.validate().unwrap();
}

#[test]
fn palm_never_fires() {
    let out = replay(&[ev(0, "Palm"), ev(1000, "Palm")], &default_bindings());
    assert_eq!(out, vec![None, None]);
}

#[test]
fn continuous_cooldown_examples() {
    let b = default_bindings();
    assert_eq!(
        replay(&[ev(0, "Two"), ev(100, "Two")], &b),
        vec![Some(PlayerAction::NextTrack), None]
    );
    assert_eq!(
        replay(&[ev(0, "Two"), ev(600, "Two")], &b),
        vec![Some(PlayerAction::NextTrack), Some(PlayerAction::NextTrack)]
    );
    // the boundary is inclusive
    assert_eq!(
        replay(&[ev(0, "L"), ev(500, "L")], &b),
        vec![Some(PlayerAction::VolumeUp), Some(PlayerAction::VolumeUp)]
    );
}

#[test]
fn discrete_fires_on_rising_edge() {
    use PlayerAction::*;
    let out = replay(
        &[ev(0, "Ok"), ev(30, "Ok"), ev(60, "Fist"), ev(90, "Ok")],
        &default_bindings(),
    );
    assert_eq!(out, vec![Some(Play), None, Some(Pause), Some(Play)]);
}

#[test]
fn low_confidence_is_ignored_and_does_not_reset_edge() {
    let b = default_bindings();
    let events = [
        ev(0, "Ok"),
        GestureEvent::new(30, "Fist", 0.2),
        ev(60, "Ok"),
    ];
    assert_eq!(replay(&events, &b), vec![Some(PlayerAction::Play), None, None]);
}

#[test]
fn stream_errors() {
    let b = default_bindings();
    let mut s = ControllerState::default();
    step(&mut s, &ev(100, "Ok"), &b).unwrap();
    assert!(matches!(step(&mut s, &ev(99, "Ok"), &b), Err(Error::Stream(_))));
    let mut s = ControllerState::default();
    let bad = GestureEvent::new(0, "Ok", 1.5);
    assert!(matches!(step(&mut s, &bad, &b), Err(Error::Stream(_))));
}

fn arb_events() -> impl Strategy<Value = Vec<GestureEvent>> {
    let labels = ["Ok", "Fist", "Two", "Three", "L", "Hang", "Palm"];
    prop::collection::vec((0u64..400, 0usize..labels.len(), 0.0f64..1.0), 0..60).prop_map(
        move |raw| {
            let mut t = 0;
            raw.into_iter()
                .map(|(dt, l, c)| {
                    t += dt;
                    GestureEvent::new(t, labels[l], c)
                })
                .collect()
        },
    )
}

proptest! {
    #[test]
    fn controller_is_deterministic(events in arb_events()) {
        let b = default_bindings();
        prop_assert_eq!(replay(&events, &b), replay(&events, &b));
    }

    #[test]
    fn continuous_fires_respect_cooldown(events in arb_events()) {
        let b = default_bindings();
        let out = replay(&events, &b);
        let mut last: BTreeMap<PlayerAction, u64> = BTreeMap::new();
        for (e, a) in events.iter().zip(&out) {
            if let Some(a) = a {
                prop_assert!(e.confidence >= b.confidence_gate);
                prop_assert_eq!(b.action_for(&e.class_label), *a);
                let binding = b.lookup(&e.class_label).unwrap();
                if binding.kind == ActionKind::Continuous {
                    if let Some(t) = last.get(a) {
                        prop_assert!(e.t_ms - t >= binding.cooldown_ms);
                    }
                }
                last.insert(*a, e.t_ms);
            }
        }
    }

    #[test]
    fn discrete_never_fires_on_repeat(events in arb_events()) {
        let b = default_bindings();
        let out = replay(&events, &b);
        let mut prev: Option<&str> = None;
        for (e, a) in events.iter().zip(&out) {
            if e.confidence < b.confidence_gate {
                continue;
            }
            let discrete = b.lookup(&e.class_label).is_some_and(|x| x.kind == ActionKind::Discrete);
            if discrete {
                prop_assert_eq!(a.is_some(), prev != Some(e.class_label.as_str()));
            }
            prev = Some(&e.class_label);
        }
    }
}

#[test]
fn detection_rate_arithmetic() {
    assert_eq!(detection_rate(5, 0), 100.0);
    assert_eq!(detection_rate(3, 2), 60.0);
    assert_eq!(detection_rate(0, 0), 0.0);
    assert!((detection_rate(2, 1) - 200.0 / 3.0).abs() < 1e-12);
}

fn trials(action: PlayerAction, n: u64) -> Vec<Trial> {
    (0..n)
        .map(|i| Trial {
            expected_action: action,
            window_start_ms: i * 2000,
            window_end_ms: i * 2000 + 1000,
        })
        .collect()
}

#[test]
fn scripted_all_hits() {
    let events: Vec<_> = (0..5).flat_map(|i| [ev(i * 2000, "Ok"), ev(i * 2000 + 1500, "Palm")]).collect();
    let script = trials(PlayerAction::Play, 5);
    let mut a = MockAdapter::new();
    let r = run_session(&events, &default_bindings(), &mut a, &VirtualClock::new(), Some(&script)).unwrap();
    let row = r.row(PlayerAction::Play).unwrap();
    assert_eq!((row.hits, row.misses), (5, 0));
    assert_eq!(row.detection_rate_percent, 100.0);
    assert_eq!(row.gesture.as_deref(), Some("Ok"));
    assert_eq!(r.event_count, 10);
}

#[test]
fn scripted_partial_hits() {
    // gestures only in trials 0, 2 and 4; trial 1 shows a low-confidence sign
    let mut events = Vec::new();
    for i in [0u64, 2, 4] {
        events.push(ev(i * 2000 + 10, "Three"));
    }
    events.push(GestureEvent::new(2010, "Three", 0.3));
    events.sort_by_key(|e| e.t_ms);
    let script = trials(PlayerAction::PrevTrack, 5);
    let mut a = MockAdapter::new();
    let r = run_session(&events, &default_bindings(), &mut a, &VirtualClock::new(), Some(&script)).unwrap();
    let row = r.row(PlayerAction::PrevTrack).unwrap();
    assert_eq!((row.hits, row.misses), (3, 2));
    assert_eq!(row.detection_rate_percent, 60.0);
    assert_eq!(row.notes.len(), 2);
    assert!(row.notes.iter().all(|n| n.contains("did not fire")));
}

#[test]
fn virtual_latency_is_reported() {
    let clock = VirtualClock::new();
    let mut a = MockAdapter::new().with_latency(MockLatency::Virtual(clock.clone(), Duration::from_millis(7)));
    let r = run_session(&[ev(0, "Ok")], &default_bindings(), &mut a, &clock, None).unwrap();
    assert_eq!(a.recorded, vec![PlayerAction::Play]);
    assert_eq!(a.calls(), 1);
    let row = r.row(PlayerAction::Play).unwrap();
    assert_eq!(row.mean_response_ms, Some(7.0));
    assert_eq!(row.p50_response_ms, Some(7.0));
}

#[cfg(unix)]
#[test]
fn command_adapter_runs_processes() {
    let mut t = BTreeMap::new();
    t.insert(PlayerAction::Play, "echo {action}".to_string());
    let a = CommandAdapter::new(t.clone()).unwrap();
    assert_eq!(a.command_line(PlayerAction::Play).unwrap(), vec!["echo", "Play"]);
    assert!(a.command_line(PlayerAction::Pause).is_none());
    let mut a = a;
    a.execute(PlayerAction::Play).unwrap();
    assert!(matches!(a.execute(PlayerAction::Pause), Err(Error::Adapter(_))));

    t.insert(PlayerAction::Play, "false".to_string());
    assert!(CommandAdapter::new(t.clone()).unwrap().execute(PlayerAction::Play).is_err());
}

#[test]
fn missing_executable_is_noted_and_session_continues() {
    let mut t = BTreeMap::new();
    t.insert(PlayerAction::Play, "slimkit-no-such-player-binary {action}".to_string());
    let mut a = CommandAdapter::new(t).unwrap();
    let events = [ev(0, "Ok"), ev(100, "Palm"), ev(200, "Ok")];
    let r = run_session(&events, &default_bindings(), &mut a, &VirtualClock::new(), None).unwrap();
    assert_eq!(r.fired.len(), 2);
    assert!(r.fired.iter().all(|f| !f.ok));
    let row = r.row(PlayerAction::Play).unwrap();
    assert_eq!((row.hits, row.misses), (0, 2));
    assert!(row.notes[0].contains("cannot run"));
}

#[test]
fn empty_template_is_rejected() {
    let mut t = BTreeMap::new();
    t.insert(PlayerAction::Play, "   ".to_string());
    assert!(matches!(CommandAdapter::new(t), Err(Error::Config(_))));
}

#[test]
fn events_from_jsonl() {
    let text = "{\"t_ms\":0,\"class\":\"Ok\",\"conf\":0.9}\n\n{\"t_ms\":40,\"class\":\"Fist\",\"conf\":0.7}\n";
    let evs = parse_events(text).unwrap();
    assert_eq!(evs, vec![GestureEvent::new(0, "Ok", 0.9), GestureEvent::new(40, "Fist", 0.7)]);
    assert!(matches!(parse_events("{\"t_ms\":0}\n"), Err(Error::Stream(_))));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ev.jsonl");
    std::fs::write(&p, text).unwrap();
    assert_eq!(read_events(&p).unwrap(), evs);
    assert!(read_events(&dir.path().join("none.jsonl")).is_err());
}

#[test]
fn script_file_io() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.json");
    let s = trials(PlayerAction::VolumeUp, 3);
    std::fs::write(&p, serde_json::to_string(&s).unwrap()).unwrap();
    assert_eq!(read_script(&p).unwrap(), s);
    std::fs::write(&p, r#"[{"expected_action":"Play","window_start_ms":10,"window_end_ms":5}]"#).unwrap();
    assert!(matches!(read_script(&p), Err(Error::Input(_))));
}

#[test]
fn binding_validation() {
    let base = default_bindings();
    let mut b = base.clone();
    b.confidence_gate = 1.2;
    assert!(b.validate().is_err());
    let mut b = base.clone();
    b.bindings.push(ActionBinding {
        label: "Ok".into(),
        action: PlayerAction::Pause,
        kind: ActionKind::Discrete,
        cooldown_ms: 0,
    });
    assert!(b.validate().is_err());
    let mut b = base.clone();
    b.bindings[2].cooldown_ms = 0;
    assert!(b.validate().is_err());
    let mut b = base;
    b.bindings[0].action = PlayerAction::NoOp;
    assert!(matches!(b.validate(), Err(Error::Config(_))));
}

#[test]
fn config_file_load() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("hmi.json");
    let cfg = HmiConfig::default();
    std::fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    assert_eq!(HmiConfig::load(&p).unwrap(), cfg);

    let mut bad = cfg;
    bad.bindings.confidence_gate = -0.1;
    std::fs::write(&p, serde_json::to_string(&bad).unwrap()).unwrap();
    assert!(matches!(HmiConfig::load(&p), Err(Error::Config(_))));
    std::fs::write(&p, "not json").unwrap();
    assert!(matches!(HmiConfig::load(&p), Err(Error::Config(_))));
}
