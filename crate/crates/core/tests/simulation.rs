use iart_core::controller::{assist_force, AssistCommand, Gains, TargetMode};
use iart_core::features::{Phase, StateVector, DT};
use iart_core::geometry::{make_trajectory, CurveSpec};
use iart_core::simulation::{
    policy_actions, run_closed_loop, therapist_action, AssistSource, Patient, PatientModel, PolicyKind, Scenario,
    TherapistPolicy,
};
use iart_core::Vec3;
use proptest::prelude::*;

fn quiet() -> PatientModel {
    PatientModel {
        pace: 0.0,
        ..PatientModel::default()
    }
}

fn line() -> iart_core::geometry::Trajectory {
    make_trajectory(&CurveSpec::line(Vec3::new(-0.08, 0.0, 0.0), Vec3::new(0.08, 0.0, 0.0))).unwrap()
}

fn state(e: f64, v: f64) -> StateVector {
    StateVector {
        e,
        v,
        r_c: 10.0,
        is_track: 1,
        ..StateVector::default()
    }
}

#[test]
fn equilibrium_on_curve() {
    let traj = line();
    let x0 = Vec3::new(0.01, 0.0, 0.0);
    let mut p = Patient::new(quiet(), x0, 0).unwrap();
    p.locate(&traj);
    for _ in 0..30 {
        p.step(&traj, &Vec3::zeros(), Phase::Tracking);
        assert!((p.x - x0).norm() < 1e-12);
    }
}

#[test]
fn displacement_decays_like_the_linear_oracle() {
    let traj = line();
    let mut p = Patient::new(quiet(), Vec3::new(0.0, 0.05, 0.0), 0).unwrap();
    p.locate(&traj);
    // scalar semi-implicit Euler of e'' = -25 e - 10 e'
    let (mut e, mut v) = (0.05f64, 0.0f64);
    let mut prev = f64::INFINITY;
    for _ in 0..60 {
        p.step(&traj, &Vec3::zeros(), Phase::Tracking);
        v += (-25.0 * e - 10.0 * v) * DT;
        e += v * DT;
        let err = p.x.y.abs();
        assert!((err - e.abs()).abs() < 1e-9);
        assert!(p.x.x.abs() < 1e-12);
        assert!(err < prev);
        prev = err;
    }
    assert!(prev < 0.005);
}

#[test]
fn assistance_recovers_during_a_lapse() {
    let traj = line();
    let gains = Gains::default();
    let mut p = Patient::new(quiet(), Vec3::new(0.0, 0.03, 0.0), 0).unwrap();
    p.force_lapse(60, Vec3::zeros());
    let mut prev = 0.03;
    for _ in 0..60 {
        let x_d = traj.closest_point(&p.x).point;
        let u = assist_force(&p.x, &p.x_dot, &x_d, &gains, &AssistCommand::new(true, TargetMode::ClosestPoint), 1.0);
        p.step(&traj, &u, Phase::Tracking);
        let e = traj.closest_point(&p.x).distance;
        assert!(e < prev);
        prev = e;
    }
    // without assistance nothing pulls the hand back
    let mut idle = Patient::new(quiet(), Vec3::new(0.0, 0.03, 0.0), 0).unwrap();
    idle.force_lapse(60, Vec3::zeros());
    for _ in 0..60 {
        idle.step(&traj, &Vec3::zeros(), Phase::Tracking);
    }
    assert!((traj.closest_point(&idle.x).distance - 0.03).abs() < 1e-12);
}

#[test]
fn pause_freezes_the_hand() {
    let traj = line();
    let mut p = Patient::new(PatientModel::default(), Vec3::new(0.0, 0.01, 0.0), 0).unwrap();
    p.force_pause(10);
    let x0 = p.x;
    for _ in 0..10 {
        p.step(&traj, &Vec3::new(1.0, 1.0, 0.0), Phase::Tracking);
        assert_eq!(p.x, x0);
        assert_eq!(p.x_dot, Vec3::zeros());
    }
}

#[test]
fn dwell_example() {
    let policy = TherapistPolicy::threshold_dwell();
    let history: Vec<StateVector> = (0..40).map(|_| state(0.03, 0.02)).collect();
    let actions = policy_actions(&policy, &history).unwrap();
    assert!(actions[..15].iter().all(|a| *a == 0));
    assert!(actions[15..].iter().all(|a| *a == 1));
}

#[test]
fn stop_example() {
    let policy = TherapistPolicy {
        v_stop: 0.005,
        t_dwell: 0.3,
        ..TherapistPolicy::assist_on_stop()
    };
    let mut history: Vec<StateVector> = (0..5).map(|_| state(0.0, 0.02)).collect();
    history.extend((0..10).map(|_| state(0.0, 0.0)));
    let actions = policy_actions(&policy, &history).unwrap();
    assert_eq!(actions[5..], [0, 0, 0, 0, 0, 0, 0, 0, 0, 1]);
    history.push(state(0.0, 0.01));
    assert_eq!(*policy_actions(&policy, &history).unwrap().last().unwrap(), 0);
}

#[test]
fn hysteresis_band_never_toggles() {
    let policy = TherapistPolicy::threshold_dwell();
    let history: Vec<StateVector> = (0..300)
        .map(|k| state(if k % 2 == 0 { 0.0101 } else { 0.0199 }, 0.02))
        .collect();
    assert!(policy_actions(&policy, &history).unwrap().iter().all(|a| *a == 0));
    let mut on = TherapistPolicy::threshold_dwell();
    on.t_dwell = 0.0;
    let mut h2 = vec![state(0.03, 0.0)];
    h2.extend(history);
    let acts = policy_actions(&on, &h2).unwrap();
    assert!(acts.iter().all(|a| *a == 1));
}

#[test]
fn return_phase_follows_flag() {
    let mut s = state(0.05, 0.02);
    s.is_track = 0;
    let p = TherapistPolicy::threshold_dwell();
    assert_eq!(therapist_action(&p, &[s], 0).unwrap(), 0);
    assert_eq!(therapist_action(&p.with_assist_on_return(true), &[s], 0).unwrap(), 1);
    assert!(therapist_action(&p, &[], 0).is_err());
}

fn arb_history() -> impl Strategy<Value = Vec<StateVector>> {
    proptest::collection::vec((0.0..0.04f64, 0.0..0.01f64, prop::bool::weighted(0.9)), 1..200).prop_map(|v| {
        v.into_iter()
            .map(|(e, vel, track)| StateVector {
                is_track: u8::from(track),
                ..state(e, vel)
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn decision_depends_only_on_recent_history(history in arb_history(), prev in 0u8..2, kind in 0usize..3) {
        let policy = [
            TherapistPolicy::threshold_dwell(),
            TherapistPolicy::assist_too_often(),
            TherapistPolicy::assist_on_stop(),
        ][kind];
        let full = therapist_action(&policy, &history, prev).unwrap();
        let tail = &history[history.len().saturating_sub(policy.history_len())..];
        prop_assert_eq!(full, therapist_action(&policy, tail, prev).unwrap());
    }
}

#[test]
fn two_minutes_is_3600_ticks() {
    let log = Scenario::default().demonstrate().unwrap();
    assert_eq!(log.len(), 3600);
}

#[test]
fn no_assist_no_noise_stays_on_curve() {
    let traj = make_trajectory(&CurveSpec::preset("helix").unwrap()).unwrap();
    let log = run_closed_loop(&traj, quiet(), AssistSource::None, 10.0, 3).unwrap();
    assert!(log.ticks.iter().all(|t| t.action == 0));
    assert!(log.ticks.iter().all(|t| t.state.e < 1e-9));
}

#[test]
fn default_demonstrator_assists_a_quarter_of_the_time() {
    let mut total = 0.0;
    for seed in 1..=5 {
        let log = Scenario::default().with_seed(seed).demonstrate().unwrap();
        assert_eq!(log.header.policy.unwrap().kind, PolicyKind::ThresholdDwell);
        let on = log.actions().iter().filter(|a| **a == 1).count() as f64 / log.len() as f64;
        assert!((0.05..=0.5).contains(&on), "seed {seed}: {on}");
        total += on / 5.0;
    }
    assert!((0.15..=0.35).contains(&total), "{total}");
}

#[test]
fn simulation_is_bit_reproducible() {
    let s = Scenario::default().with_seed(9);
    assert_eq!(s.demonstrate().unwrap().to_jsonl().unwrap(), s.demonstrate().unwrap().to_jsonl().unwrap());
    let other = Scenario::default().with_seed(10).demonstrate().unwrap();
    assert_ne!(other.header.id, s.demonstrate().unwrap().header.id);
}

#[test]
fn assistance_reduces_mean_error() {
    for seed in 1..4 {
        let s = Scenario::default().with_seed(seed);
        let traj = s.trajectory().unwrap();
        let assisted = s.demonstrate().unwrap();
        let unassisted = s.closed_loop(&traj, AssistSource::None).run().unwrap();
        let mean = |l: &iart_core::session::SessionLog| l.ticks.iter().map(|t| t.state.e).sum::<f64>() / l.len() as f64;
        assert!(mean(&assisted) <= mean(&unassisted), "seed {seed}");
    }
}

#[test]
fn speed_stays_bounded_without_assistance() {
    let mut model = PatientModel::default();
    model.lapse_rate = 1.0;
    model.lapse_drift = 0.05;
    let traj = make_trajectory(&CurveSpec::preset("lissajous").unwrap()).unwrap();
    let log = run_closed_loop(&traj, model, AssistSource::None, 60.0, 5).unwrap();
    let bound = model.skill_gain * 0.2 / model.damping * 2.0;
    assert!(log.ticks.iter().all(|t| t.state.v < bound));
}

#[test]
fn scenario_json_round_trip() {
    let s = Scenario::default();
    let back = Scenario::from_json(&s.to_json().unwrap()).unwrap();
    assert_eq!(back, s);
    let legacy = s.to_json().unwrap().replace("scenario/1", "scenario/0");
    assert!(matches!(Scenario::from_json(&legacy), Err(iart_core::Error::VersionMismatch { .. })));
    assert!(run_closed_loop(&s.trajectory().unwrap(), quiet(), AssistSource::None, 1.0, 0).is_err());
}
