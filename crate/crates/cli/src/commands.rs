use std::path::{Path, PathBuf};

use iart_core::dagger::{dagger_iterate, AggregatedDataset, Corrector};
use iart_core::evaluation::{box_stats, boxplot_csv, build_report, MetricsReport};
use iart_core::features::{fit_scaler, make_windows, Scaler, WindowDataset, WINDOW};
use iart_core::geometry::CurveSpec;
use iart_core::lstm::{train_with_progress, AdamConfig, LstmModel, TrainConfig};
use iart_core::session::{read_log, write_log, RealtimePredictor, SessionLog};
use iart_core::simulation::{AssistSource, Scenario, TherapistPolicy};
use iart_core::Error;

use crate::{CliResult, DaggerArgs, EvaluateArgs, PolicyArg, ReplayArgs, SimulateArgs, TrainArgs, TruthSource};

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|source| Error::File {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("values serialize"));
}

fn load_model(path: &Path) -> CliResult<LstmModel> {
    LstmModel::load(path)
}

/// A scenario file, or `standard:<name>` for a built-in one.
pub fn load_scenario(arg: &Path) -> CliResult<Scenario> {
    match arg.to_str().and_then(|s| s.strip_prefix("standard:")) {
        Some(name) => Scenario::standard_named(name),
        None => Scenario::load(arg),
    }
}

pub fn policy(arg: PolicyArg) -> TherapistPolicy {
    match arg {
        PolicyArg::ThresholdDwell => TherapistPolicy::threshold_dwell(),
        PolicyArg::AssistTooOften => TherapistPolicy::assist_too_often(),
        PolicyArg::AssistOnStop => TherapistPolicy::assist_on_stop(),
    }
}

fn scenario_from(a: &SimulateArgs) -> CliResult<Scenario> {
    let mut s = match &a.scenario {
        Some(path) => load_scenario(path)?,
        None => Scenario::default(),
    };
    if let Some(curve) = &a.curve {
        s.curve = CurveSpec::load(curve)?;
    }
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    if let Some(d) = a.duration {
        s.duration = d;
    }
    if let Some(p) = a.policy {
        s.policy = policy(p);
    }
    if a.assist_on_return {
        s.policy.assist_on_return = true;
    }
    if let Some(kp) = a.kp {
        s.gains.kp = kp;
    }
    if let Some(kd) = a.kd {
        s.gains.kd = kd;
    }
    if let Some(r) = a.ramp {
        s.gains.ramp_time = r;
    }
    if let Some(p) = a.label_noise {
        s.label_noise = p;
    }
    s.gains.validate()?;
    Ok(s)
}

pub fn simulate(a: &SimulateArgs, data_dir: &Path) -> CliResult {
    let scenario = scenario_from(a)?;
    let traj = scenario.trajectory()?;
    let model = a.model.as_deref().map(load_model).transpose()?;
    let log = match &model {
        None => scenario.closed_loop(&traj, AssistSource::Policy(scenario.policy)).run()?,
        Some(m) => {
            let mut run = scenario.closed_loop(&traj, AssistSource::Model(m));
            run.shadow = Some(scenario.policy);
            run.run()?
        }
    };
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| data_dir.join(format!("session-{}.jsonl", log.header.id)));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_log(&log, &out)?;
    if let Some(path) = &a.save_scenario {
        write_text(path, &scenario.to_json()?)?;
    }
    let actions = log.actions();
    print_json(&serde_json::json!({
        "out": out,
        "id": log.header.id,
        "ticks": log.len(),
        "percent_time_on": iart_core::evaluation::percent_time_on(&actions)?,
    }));
    Ok(())
}

/// Windows from every log, scaled with one scaler fitted on all of them.
pub fn dataset(logs: &[SessionLog], scaling: bool) -> CliResult<WindowDataset> {
    let all: Vec<_> = logs.iter().flat_map(|l| l.pairs()).collect();
    let scaler = if scaling { fit_scaler(&all)? } else { Scaler::identity() };
    let mut windows = Vec::new();
    for log in logs {
        windows.extend(make_windows(&log.pairs(), &scaler, WINDOW)?.windows);
    }
    Ok(WindowDataset { windows, scaler })
}

pub fn train(a: &TrainArgs) -> CliResult {
    let logs = a.logs.iter().map(read_log).collect::<Result<Vec<_>, _>>()?;
    let mut data = dataset(&logs, !a.no_scaling)?;
    if a.balance {
        data.balance_classes();
    }
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        hidden: a.hidden,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        seed: a.seed,
        shuffle: !a.no_shuffle,
    };
    let every = (a.epochs / 20).max(1);
    let model = train_with_progress(&data, &config, |r| {
        if r.epoch % every == 0 || r.epoch == r.epochs {
            log::info!("epoch {}/{} loss {:.6}", r.epoch, r.epochs, r.loss);
        }
    })?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    model.save(&a.out)?;
    print_json(&serde_json::json!({
        "out": a.out,
        "samples": model.meta.samples,
        "positive_fraction": model.meta.positive_fraction,
        "final_loss": model.meta.epoch_loss.last(),
    }));
    Ok(())
}

/// Offline decisions for every tick, 0 during the warm-up.
fn offline_actions(model: &LstmModel, log: &SessionLog) -> CliResult<Vec<u8>> {
    let mut actions = vec![0u8; (model.window - 1).min(log.len())];
    actions.extend(model.predict_states(&log.states())?);
    Ok(actions)
}

pub fn replay(a: &ReplayArgs) -> CliResult {
    let log = read_log(&a.log)?;
    let model = load_model(&a.model)?;
    let mut predictor = RealtimePredictor::new(&model);
    let online = log
        .ticks
        .iter()
        .map(|t| predictor.feed(&t.state).map(|p| p.action))
        .collect::<Result<Vec<u8>, _>>()?;
    let logged = log.actions();
    let skip = (model.window - 1).min(log.len());
    let agree = online[skip..].iter().zip(&logged[skip..]).filter(|(a, b)| a == b).count();
    let compared = log.len() - skip;
    let mut out = serde_json::json!({
        "ticks": log.len(),
        "compared": compared,
        "agreement": if compared > 0 { agree as f64 / compared as f64 } else { 0.0 },
    });
    if a.compare {
        let offline = offline_actions(&model, &log)?;
        let mismatches = online[skip..].iter().zip(&offline[skip..]).filter(|(a, b)| a != b).count();
        out["offline_mismatches"] = mismatches.into();
    }
    print_json(&out);
    Ok(())
}

pub fn report_for(a: &EvaluateArgs, log: &SessionLog) -> CliResult<MetricsReport> {
    let (pred, truth) = match a.truth_source {
        TruthSource::Shadow => {
            let truth = log.shadow_actions().ok_or_else(|| Error::InvalidParameter {
                field: "truth-source".into(),
                reason: format!("{} has no shadow column", a.pred.display()),
            })?;
            (log.actions(), truth)
        }
        TruthSource::Log => {
            let path = a.model.as_deref().ok_or_else(|| Error::InvalidParameter {
                field: "model".into(),
                reason: "required with --truth-source log".into(),
            })?;
            (offline_actions(&load_model(path)?, log)?, log.actions())
        }
    };
    build_report(&pred, &truth, &log.states())
}

pub fn evaluate(a: &EvaluateArgs) -> CliResult {
    let log = read_log(&a.pred)?;
    let report = report_for(a, &log)?;
    let text = serde_json::to_string_pretty(&report)?;
    match &a.report {
        Some(path) => write_text(path, &text)?,
        None => println!("{text}"),
    }
    if let Some(path) = &a.boxplot {
        let mut boxes = Vec::new();
        for (name, stats) in &report.sources {
            if stats.transitions.is_empty() {
                continue;
            }
            let e: Vec<f64> = stats.transitions.iter().map(|t| t.e).collect();
            let v: Vec<f64> = stats.transitions.iter().map(|t| t.v).collect();
            boxes.push(box_stats(&format!("{name}_e"), &e)?);
            boxes.push(box_stats(&format!("{name}_v"), &v)?);
        }
        write_text(path, &boxplot_csv(&boxes))?;
    }
    if a.report.is_some() {
        let c = &report.classification;
        print_json(&serde_json::json!({ "accuracy": c.accuracy, "tpr": c.tpr, "tnr": c.tnr }));
    }
    Ok(())
}

pub fn dagger(a: &DaggerArgs) -> CliResult {
    let corrector = Corrector::parse(&a.corrector)?;
    let scenario = match &a.scenario {
        Some(p) => load_scenario(p)?,
        None => Scenario::default(),
    };
    let mut model = load_model(&a.model)?;
    let data_path = a.data.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".agg.json");
        PathBuf::from(p)
    });
    let mut data = if data_path.exists() {
        AggregatedDataset::load(&data_path)?
    } else {
        let base = match &a.base_log {
            Some(p) => read_log(p)?,
            None => scenario.demonstrate()?,
        };
        AggregatedDataset::from_base(&base, model.scaler.clone(), a.beta)?
    };
    if data.beta != a.beta {
        log::warn!("checkpoint beta {} overrides --beta {}", data.beta, a.beta);
    }
    let mut config = model.meta.config.clone();
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    let mut rounds = Vec::new();
    for round in 0..a.iterations {
        let outcome = dagger_iterate(&model, &scenario, &corrector, &mut data, &config)?;
        if a.keep_sessions {
            let mut p = a.out.clone().into_os_string();
            p.push(format!(".round{}.jsonl", round + 1));
            write_log(&outcome.session, PathBuf::from(p))?;
        }
        data.save(&data_path)?;
        rounds.push(serde_json::json!({
            "round": round + 1,
            "overrides": outcome.overrides,
            "retrained": outcome.retrained,
            "dataset": data.len(),
        }));
        model = outcome.model;
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    model.save(&a.out)?;
    print_json(&serde_json::json!({ "out": a.out, "data": data_path, "rounds": rounds }));
    Ok(())
}

pub fn demo_data(dir: &Path) -> CliResult {
    create_dir(dir)?;
    let mut written = Vec::new();
    for (name, scenario) in Scenario::standard() {
        let scenario_path = dir.join(format!("{name}.scenario.json"));
        write_text(&scenario_path, &scenario.to_json()?)?;
        let log_path = dir.join(format!("{name}.jsonl"));
        write_log(&scenario.demonstrate()?, &log_path)?;
        written.push(scenario_path);
        written.push(log_path);
    }
    print_json(&serde_json::json!({ "written": written }));
    Ok(())
}
