use std::sync::Arc;

use iart_core::dagger::{extract_overrides, OverrideSource};
use iart_core::evaluation::classification_metrics;
use iart_core::features::{fit_scaler, make_windows, Phase, DT, WINDOW};
use iart_core::geometry::{make_trajectory, CurveSpec};
use iart_core::interface::{parse_client_message, ClientMessage, LiveSession, Mode, ServerMessage};
use iart_core::lstm::{train, LstmModel, TrainConfig};
use iart_core::session::{SessionLog, SessionSource};
use iart_core::simulation::Scenario;
use iart_core::{Error, Vec3};

fn start(mode: Mode, duration: f64) -> ClientMessage {
    ClientMessage::Start {
        mode,
        scenario: None,
        curve: Some("helix".into()),
        duration: Some(duration),
        seed: Some(1),
    }
}

fn start_on(curve: &str) -> ClientMessage {
    ClientMessage::Start {
        mode: Mode::Demonstrate,
        scenario: None,
        curve: Some(curve.into()),
        duration: Some(5.0),
        seed: Some(1),
    }
}

fn model_for(log: &SessionLog, epochs: usize, hidden: usize) -> LstmModel {
    let pairs = log.pairs();
    let scaler = fit_scaler(&pairs).unwrap();
    let data = make_windows(&pairs, &scaler, WINDOW).unwrap();
    train(
        &data,
        &TrainConfig {
            epochs,
            hidden,
            ..TrainConfig::default()
        },
    )
    .unwrap()
}

fn tick_fields(msg: &ServerMessage) -> (usize, f64, u8, bool) {
    match msg {
        ServerMessage::Tick {
            tick, t, assist, overridden, ..
        } => (*tick, *t, *assist, *overridden),
        other => panic!("expected a tick, got {other:?}"),
    }
}

#[test]
fn messages_parse_strictly() {
    let ok = [
        r#"{"type":"start","mode":"demonstrate","curve":"lissajous"}"#,
        r#"{"type":"pointer","x":[0.01,0.02]}"#,
        r#"{"type":"pointer","x":[0.01,0.02,0.0]}"#,
        r#"{"type":"toggle_assist"}"#,
        r#"{"type":"override","action":1}"#,
        r#"{"type":"override","action":null}"#,
        r#"{"type":"stop"}"#,
    ];
    for text in ok {
        parse_client_message(text).unwrap();
    }
    for bad in [
        r#"{"type":"teleport"}"#,
        r#"{"type":"stop","now":true}"#,
        r#"{"x":[0,0]}"#,
        "not json",
    ] {
        assert!(matches!(parse_client_message(bad), Err(Error::Protocol(_))), "{bad}");
    }
}

#[test]
fn server_messages_use_the_wire_names() {
    let (mut s, ready) = LiveSession::start(&start(Mode::Demonstrate, 1.0), None, None).unwrap();
    let ready = serde_json::to_value(&ready).unwrap();
    assert_eq!(ready["type"], "ready");
    assert!(ready["polyline"].as_array().unwrap().len() > 10);
    let tick = serde_json::to_value(s.step().unwrap()).unwrap();
    assert_eq!(tick["type"], "tick");
    for key in ["t", "x", "cursor", "x_l", "curve", "e", "v", "assist", "P", "phase"] {
        assert!(tick.get(key).is_some(), "missing {key}");
    }
    assert_eq!(tick["curve"], ready["curve"]);
    let err = serde_json::to_value(ServerMessage::error(&Error::Protocol("x".into()))).unwrap();
    assert_eq!(err["type"], "error");
    assert_eq!(err["kind"], "protocol");
}

#[test]
fn sixty_second_session_has_1800_ticks() {
    let (mut s, _) = LiveSession::start(&start(Mode::Demonstrate, 60.0), None, None).unwrap();
    let mut last_t = -1.0;
    let mut n = 0;
    while !s.is_finished() {
        let (tick, t, _, _) = tick_fields(&s.step().unwrap());
        assert_eq!(tick, n);
        assert!(t > last_t);
        assert!((t - n as f64 * DT).abs() < 1e-12);
        last_t = t;
        n += 1;
    }
    assert_eq!(n, 1800);
    assert_eq!(s.log().len(), 1800);
    assert!(s.step().is_err());
}

#[test]
fn toggle_flips_assist_within_two_ticks() {
    let (mut s, _) = LiveSession::start(&start(Mode::Demonstrate, 10.0), None, None).unwrap();
    for _ in 0..5 {
        assert_eq!(tick_fields(&s.step().unwrap()).2, 0);
    }
    s.apply(&parse_client_message(r#"{"type":"toggle_assist"}"#).unwrap()).unwrap();
    let next: Vec<u8> = (0..2).map(|_| tick_fields(&s.step().unwrap()).2).collect();
    assert!(next.contains(&1));
    s.apply(&ClientMessage::ToggleAssist {}).unwrap();
    assert_eq!(tick_fields(&s.step().unwrap()).2, 0);
}

#[test]
fn mode_contract_is_enforced() {
    assert!(matches!(
        LiveSession::start(&start(Mode::Realtime, 5.0), None, None),
        Err(Error::Protocol(_))
    ));
    let model = Arc::new(model_for(&Scenario::default().demonstrate().unwrap(), 1, 4));
    let (mut rt, _) = LiveSession::start(&start(Mode::Realtime, 5.0), Some(model), None).unwrap();
    assert!(matches!(rt.apply(&ClientMessage::ToggleAssist {}), Err(Error::Protocol(_))));
    let (mut demo, _) = LiveSession::start(&start(Mode::Demonstrate, 5.0), None, None).unwrap();
    assert!(demo.apply(&ClientMessage::Override { action: Some(1) }).is_err());
    assert!(demo.apply(&start(Mode::Demonstrate, 5.0)).is_err());
    assert!(LiveSession::start(&start(Mode::Demonstrate, 0.0), None, None).is_err());
    assert!(LiveSession::start(&ClientMessage::Stop {}, None, None).is_err());
}

#[test]
fn overrides_are_flagged_in_the_persisted_log() {
    let model = Arc::new(model_for(&Scenario::default().demonstrate().unwrap(), 1, 4));
    let (mut s, _) = LiveSession::start(&start(Mode::Realtime, 4.0), Some(model), None).unwrap();
    let mut flagged = Vec::new();
    for k in 0..120 {
        if k == 40 {
            s.apply(&ClientMessage::Override { action: Some(1) }).unwrap();
        }
        if k == 50 {
            s.apply(&ClientMessage::Override { action: None }).unwrap();
        }
        let (tick, _, assist, overridden) = tick_fields(&s.step().unwrap());
        if (40..50).contains(&k) {
            assert_eq!(assist, 1);
        }
        if overridden {
            flagged.push(tick);
        }
    }
    assert!(s.is_finished());
    assert!(!flagged.is_empty() && flagged.iter().all(|t| (40..50).contains(t)));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("live.jsonl");
    iart_core::session::write_log(&s.log(), &path).unwrap();
    let log = iart_core::session::read_log(&path).unwrap();
    assert_eq!(log.header.source, SessionSource::Live);
    let logged: Vec<usize> = log.ticks.iter().filter(|t| t.overridden).map(|t| t.tick).collect();
    assert_eq!(logged, flagged);
    let records = extract_overrides(&log);
    assert_eq!(records.len(), flagged.len());
    assert!(records.iter().all(|r| r.source == OverrideSource::Human && r.action == 1));
}

#[test]
fn planar_pointer_takes_depth_from_the_curve() {
    // the preset line has a unique depth for every planar position
    let (mut s, _) = LiveSession::start(&start_on("line"), None, None).unwrap();
    let traj = make_trajectory(&CurveSpec::preset("line").unwrap()).unwrap();
    let p = traj.position_at(0.3);
    s.apply(&ClientMessage::Pointer { x: vec![p.x, p.y] }).unwrap();
    let ServerMessage::Tick { x, .. } = s.step().unwrap() else {
        panic!()
    };
    assert_eq!(x.z, traj.closest_point_xy(&Vec3::new(p.x, p.y, 0.0)).point.z);
    assert!((x.z - p.z).abs() < 1e-3);

    s.apply(&ClientMessage::Pointer { x: vec![5.0, -5.0, 0.0] }).unwrap();
    let ServerMessage::Tick { x, .. } = s.step().unwrap() else {
        panic!()
    };
    assert_eq!((x.x, x.y), (0.1, -0.1));
    assert!(s.apply(&ClientMessage::Pointer { x: vec![0.0] }).is_err());
    assert!(s.apply(&ClientMessage::Pointer { x: vec![f64::NAN, 0.0] }).is_err());
}

#[test]
fn stop_finishes_the_session() {
    let (mut s, _) = LiveSession::start(&start(Mode::Demonstrate, 10.0), None, None).unwrap();
    for _ in 0..10 {
        s.step().unwrap();
    }
    s.apply(&ClientMessage::Stop {}).unwrap();
    assert!(s.is_finished());
    assert_eq!(s.summary(None).n_ticks, 10);
}

#[test]
fn scripted_session_is_deterministic() {
    let run = || {
        let (mut s, _) = LiveSession::start(&start(Mode::Demonstrate, 3.0), None, None).unwrap();
        let mut k = 0;
        while !s.is_finished() {
            s.apply(&ClientMessage::Pointer {
                x: vec![0.05 * (k as f64 * 0.1).cos(), 0.05 * (k as f64 * 0.1).sin()],
            })
            .unwrap();
            if k % 17 == 0 {
                s.apply(&ClientMessage::ToggleAssist {}).unwrap();
            }
            s.step().unwrap();
            k += 1;
        }
        s.into_log().to_jsonl().unwrap()
    };
    assert_eq!(run(), run());
}

/// Drives a demonstrate session with a recorded simulator session: the
/// pointer replays the simulated hand and toggles replay its actions.
fn replay_through_service(sim: &SessionLog) -> SessionLog {
    let msg = ClientMessage::Start {
        mode: Mode::Demonstrate,
        scenario: Some(Scenario::default()),
        curve: None,
        duration: Some(sim.duration()),
        seed: Some(sim.header.seed),
    };
    let (mut s, _) = LiveSession::start(&msg, None, None).unwrap();
    let mut on = 0;
    for t in &sim.ticks {
        s.apply(&ClientMessage::Pointer {
            x: vec![t.x.x, t.x.y, t.x.z],
        })
        .unwrap();
        if t.action != on {
            s.apply(&ClientMessage::ToggleAssist {}).unwrap();
            on = t.action;
        }
        s.step().unwrap();
    }
    assert!(s.is_finished());
    s.into_log()
}

#[test]
fn replayed_live_log_trains_like_the_simulator_log() {
    let sim = Scenario::default().demonstrate().unwrap();
    let live = replay_through_service(&sim);
    assert_eq!(live.len(), sim.len());
    assert_eq!(live.actions(), sim.actions());
    assert!(live.ticks.iter().any(|t| t.phase() == Phase::Returning));
    for (a, b) in live.ticks.iter().zip(&sim.ticks) {
        assert_eq!(a.phase(), b.phase(), "tick {}", a.tick);
        assert_eq!(a.x, b.x);
        assert!((a.x_dot - b.x_dot).norm() < 1e-12, "tick {}", a.tick);
        assert!((a.u - b.u).norm() < 1e-12);
    }

    let test = Scenario::default().with_seed(2).demonstrate().unwrap();
    let truth = &test.actions()[WINDOW - 1..];
    let accuracy = |log: &SessionLog| {
        let m = model_for(log, 40, 16);
        classification_metrics(&m.predict_states(&test.states()).unwrap(), truth).unwrap().accuracy
    };
    let (a_sim, a_live) = (accuracy(&sim), accuracy(&live));
    assert!(a_sim > 0.85, "{a_sim}");
    assert!((a_sim - a_live).abs() < 0.05, "simulator {a_sim} vs service {a_live}");
}
