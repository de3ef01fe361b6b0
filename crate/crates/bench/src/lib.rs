//! Fixtures shared by the benchmarks.

use iart_core::features::{fit_scaler, make_windows, WindowDataset, WINDOW};
use iart_core::session::SessionLog;
use iart_core::simulation::Scenario;

/// A short default demonstration.
pub fn demo(seconds: f64) -> SessionLog {
    Scenario {
        duration: seconds,
        ..Scenario::default()
    }
    .demonstrate()
    .expect("default scenario runs")
}

pub fn windows(log: &SessionLog) -> WindowDataset {
    let pairs = log.pairs();
    let scaler = fit_scaler(&pairs).expect("enough ticks");
    make_windows(&pairs, &scaler, WINDOW).expect("enough ticks")
}
