use iart_core::dagger::{
    aggregate, dagger_iterate, extract_overrides, AggregatedDataset, Corrector, OverrideRecord, OverrideSource,
    DEFAULT_BETA,
};
use iart_core::features::{fit_scaler, make_windows, Scaler, Window, WindowDataset, N_FEATURES, WINDOW};
use iart_core::lstm::{train, LstmModel, LstmParams, TrainConfig, TrainMeta};
use iart_core::session::SessionLog;
use iart_core::simulation::{AssistSource, Scenario};
use iart_core::Error;
use proptest::prelude::*;

fn demo() -> SessionLog {
    Scenario::default().demonstrate().unwrap()
}

fn constant_model(b_y: f64, scaler: Scaler) -> LstmModel {
    let mut params = LstmParams::zeros(4, N_FEATURES);
    params.set_b_y(b_y);
    LstmModel {
        params,
        scaler,
        window: WINDOW,
        meta: TrainMeta {
            config: TrainConfig::default(),
            samples: 0,
            positive_fraction: 0.0,
            epoch_loss: vec![],
        },
    }
}

fn windows(n: usize, label: u8) -> Vec<Window> {
    (0..n)
        .map(|k| Window {
            data: vec![k as f64; WINDOW * N_FEATURES],
            label,
            weight: 1.0,
        })
        .collect()
}

fn records(log: &SessionLog, ticks: impl IntoIterator<Item = usize>, action: impl Fn(usize) -> u8) -> Vec<OverrideRecord> {
    ticks
        .into_iter()
        .map(|tick| OverrideRecord {
            session: log.header.id.clone(),
            tick,
            model_action: 1 - action(tick),
            action: action(tick),
            source: OverrideSource::Scripted,
        })
        .collect()
}

#[test]
fn aggregation_arithmetic() {
    let base = WindowDataset {
        windows: windows(3571, 0),
        scaler: Scaler::identity(),
    };
    let out = aggregate(&base, &windows(115, 1), DEFAULT_BETA).unwrap();
    assert_eq!(out.len(), 3686);
    assert_eq!(out.total_weight(), 5871.0);
    assert!(out.windows[..3571].iter().all(|w| w.weight == 1.0 && w.label == 0));
    assert!(out.windows[3571..].iter().all(|w| w.weight == 20.0 && w.label == 1));
}

#[test]
fn aggregated_dataset_arithmetic_on_a_real_session() {
    let log = demo();
    let scaler = fit_scaler(&log.pairs()).unwrap();
    let mut data = AggregatedDataset::from_base(&log, scaler, DEFAULT_BETA).unwrap();
    assert_eq!(data.len(), 3571);
    let ticks = (100..100 + 115 * 3).step_by(3);
    data.aggregate(&log, &records(&log, ticks, |_| 1)).unwrap();
    assert_eq!(data.len(), 3686);
    assert_eq!(data.total_weight(), 5871.0);
    let ds = data.to_windows();
    assert_eq!(ds.len(), 3686);
    assert_eq!(ds.total_weight(), 5871.0);
}

#[test]
fn unit_beta_is_plain_concatenation() {
    let base = WindowDataset {
        windows: windows(10, 0),
        scaler: Scaler::identity(),
    };
    let extra = windows(4, 1);
    let out = aggregate(&base, &extra, 1.0).unwrap();
    let mut plain = base.windows.clone();
    plain.extend(extra);
    assert_eq!(out.windows, plain);
}

#[test]
fn non_positive_beta_is_rejected() {
    let base = WindowDataset::new(Scaler::identity());
    for beta in [0.0, -1.0, f64::NAN] {
        assert!(matches!(aggregate(&base, &[], beta), Err(Error::InvalidParameter { .. })));
    }
    let log = demo();
    assert!(AggregatedDataset::from_base(&log, Scaler::identity(), 0.0).is_err());
}

#[test]
fn repeated_override_keeps_the_latest_label() {
    let log = demo();
    let mut data = AggregatedDataset::from_base(&log, Scaler::identity(), DEFAULT_BETA).unwrap();
    data.aggregate(&log, &records(&log, [500], |_| 1)).unwrap();
    data.aggregate(&log, &records(&log, [500], |_| 0)).unwrap();
    let hits: Vec<_> = data.entries.iter().filter(|e| e.iteration > 0 && e.end_tick == 500).collect();
    assert_eq!(hits.len(), 1);
    assert_eq!(hits[0].label, 0);
    assert_eq!(hits[0].iteration, 2);
    assert_eq!(data.len(), 3572);
}

#[test]
fn warm_up_overrides_are_dropped() {
    let mut log = demo();
    let flagged: Vec<usize> = (0..5).chain((0..115).map(|k| 40 + 25 * k)).collect();
    assert_eq!(flagged.len(), 120);
    for &t in &flagged {
        let tick = &mut log.ticks[t];
        tick.model_action = Some(tick.action);
        tick.action = 1 - tick.action;
        tick.overridden = true;
    }
    let out = extract_overrides(&log);
    assert_eq!(out.len(), 115);
    assert!(out.iter().all(|o| o.tick + 1 >= WINDOW && o.action != o.model_action));
    assert!(out.iter().all(|o| o.source == OverrideSource::Scripted));
}

#[test]
fn session_without_overrides_gives_no_records() {
    assert!(extract_overrides(&demo()).is_empty());
}

#[test]
fn return_off_flags_exactly_the_returning_assists() {
    let s = Scenario::default().with_seed(3);
    let traj = s.trajectory().unwrap();
    let scaler = fit_scaler(&s.demonstrate().unwrap().pairs()).unwrap();
    let always_on = constant_model(10.0, scaler);
    let mut run = s.closed_loop(&traj, AssistSource::Model(&always_on));
    run.corrector = Some(Corrector::ReturnOff);
    let log = run.run().unwrap();

    // independent scan: ticks where the model would have assisted while returning
    let expected: Vec<usize> = log
        .ticks
        .iter()
        .filter(|t| t.tick + 1 >= WINDOW && t.state.is_track == 0 && t.prob.map_or(false, |p| p > 0.5))
        .map(|t| t.tick)
        .collect();
    assert!(!expected.is_empty());
    let got: Vec<usize> = extract_overrides(&log).iter().map(|o| o.tick).collect();
    assert_eq!(got, expected);
    for t in &log.ticks {
        if t.overridden {
            assert_eq!((t.model_action, t.action), (Some(1), 0));
        }
    }
}

#[test]
fn never_corrector_leaves_the_model_unchanged() {
    let log = demo();
    let scaler = fit_scaler(&log.pairs()).unwrap();
    let model = constant_model(-3.0, scaler.clone());
    let mut data = AggregatedDataset::from_base(&log, scaler, DEFAULT_BETA).unwrap();
    let before = data.clone();
    let config = TrainConfig {
        epochs: 1,
        hidden: 4,
        ..TrainConfig::default()
    };
    let out = dagger_iterate(&model, &Scenario::default().with_seed(2), &Corrector::Never, &mut data, &config).unwrap();
    assert!(!out.retrained);
    assert_eq!(out.overrides, 0);
    assert_eq!(out.model, model);
    assert_eq!(data, before);
}

#[test]
fn retraining_the_same_data_is_bit_identical() {
    let mut s = Scenario::default();
    s.duration = 20.0;
    let log = s.demonstrate().unwrap();
    let scaler = fit_scaler(&log.pairs()).unwrap();
    let ds = make_windows(&log.pairs(), &scaler, WINDOW).unwrap();
    let config = TrainConfig {
        epochs: 2,
        hidden: 6,
        ..TrainConfig::default()
    };
    let a = train(&ds, &config).unwrap();
    let b = train(&ds, &config).unwrap();
    assert_eq!(a.to_text().unwrap(), b.to_text().unwrap());
}

#[test]
fn one_iteration_grows_the_dataset_with_corrected_labels() {
    let s = Scenario::default().with_seed(3);
    let log = s.demonstrate().unwrap();
    let scaler = fit_scaler(&log.pairs()).unwrap();
    let always_on = constant_model(10.0, scaler.clone());
    let mut data = AggregatedDataset::from_base(&log, scaler, DEFAULT_BETA).unwrap();
    let n0 = data.len();
    let config = TrainConfig {
        epochs: 1,
        hidden: 4,
        ..TrainConfig::default()
    };
    let out = dagger_iterate(&always_on, &s, &Corrector::ReturnOff, &mut data, &config).unwrap();
    assert!(out.retrained);
    assert_eq!(data.len(), n0 + out.overrides);
    assert_eq!(data.iteration, 1);
    for e in &data.entries {
        assert!(e.weight == 1.0 || e.weight == DEFAULT_BETA);
        if let Some(m) = e.model_action {
            assert_ne!(m, e.label);
            assert_eq!(e.weight, DEFAULT_BETA);
        }
    }
}

#[test]
fn aggregated_dataset_survives_a_round_trip() {
    let log = demo();
    let scaler = fit_scaler(&log.pairs()).unwrap();
    let mut data = AggregatedDataset::from_base(&log, scaler, DEFAULT_BETA).unwrap();
    data.aggregate(&log, &records(&log, [300, 301, 900], |t| (t % 2) as u8)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("agg.json");
    data.save(&path).unwrap();
    assert_eq!(AggregatedDataset::load(&path).unwrap(), data);

    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(matches!(AggregatedDataset::load(&path), Err(Error::Checksum { .. })));
}

#[test]
fn corrector_names_parse() {
    for name in ["never", "return-off", "larger-error", "combined"] {
        Corrector::parse(name).unwrap();
    }
    assert!(Corrector::parse("sometimes").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregation_never_drops_base_windows(n_base in 0usize..40, n_over in 0usize..40, beta in 0.01f64..100.0) {
        let base = WindowDataset { windows: windows(n_base, 0), scaler: Scaler::identity() };
        let out = aggregate(&base, &windows(n_over, 1), beta).unwrap();
        prop_assert_eq!(out.len(), n_base + n_over);
        prop_assert_eq!(&out.windows[..n_base], &base.windows[..]);
        prop_assert!(out.windows.iter().all(|w| w.weight == 1.0 || w.weight == beta));
    }
}
