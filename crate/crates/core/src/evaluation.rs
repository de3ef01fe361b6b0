//! Agreement metrics, switching statistics, t-tests, and box-plot summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{StateVector, TICK_HZ, WINDOW};

pub const REPORT_SCHEMA: &str = "report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub n: usize,
    pub accuracy: f64,
    /// Recall of the off class; `None` when truth has no offs.
    pub tnr: Option<f64>,
    /// Recall of the on class; `None` when truth has no ons.
    pub tpr: Option<f64>,
    pub positives: usize,
    pub negatives: usize,
    pub true_positives: usize,
    pub true_negatives: usize,
}

pub fn classification_metrics(predicted: &[u8], truth: &[u8]) -> Result<ClassificationMetrics> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("action sequence"));
    }
    let (mut tp, mut tn, mut pos) = (0, 0, 0);
    for (&p, &t) in predicted.iter().zip(truth) {
        if t == 1 {
            pos += 1;
            tp += usize::from(p == 1);
        } else {
            tn += usize::from(p == 0);
        }
    }
    let n = truth.len();
    let neg = n - pos;
    let rate = |hits: usize, total: usize| (total > 0).then(|| hits as f64 / total as f64);
    Ok(ClassificationMetrics {
        n,
        accuracy: (tp + tn) as f64 / n as f64,
        tnr: rate(tn, neg),
        tpr: rate(tp, pos),
        positives: pos,
        negatives: neg,
        true_positives: tp,
        true_negatives: tn,
    })
}

/// Fraction of ticks with assistance on, in [0, 1].
pub fn percent_time_on(actions: &[u8]) -> Result<f64> {
    if actions.is_empty() {
        return Err(Error::Empty("action sequence"));
    }
    Ok(actions.iter().filter(|a| **a == 1).count() as f64 / actions.len() as f64)
}

/// Number of action changes in either direction.
pub fn switch_count(actions: &[u8]) -> usize {
    actions.windows(2).filter(|w| w[0] != w[1]).count()
}

pub fn switches_per_minute(actions: &[u8]) -> f64 {
    if actions.is_empty() {
        return 0.0;
    }
    switch_count(actions) as f64 / (actions.len() as f64 / TICK_HZ / 60.0)
}

/// Conditions at an off-to-on switch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub tick: usize,
    pub e: f64,
    pub v: f64,
}

pub fn switch_transitions(actions: &[u8], states: &[StateVector]) -> Result<Vec<Transition>> {
    if actions.len() != states.len() {
        return Err(Error::LengthMismatch {
            left: actions.len(),
            right: states.len(),
        });
    }
    Ok((1..actions.len())
        .filter(|&k| actions[k - 1] == 0 && actions[k] == 1)
        .map(|k| Transition {
            tick: k,
            e: states[k].e,
            v: states[k].v,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
    /// Zero variance: `t` is reported as 0 and `p` as 1.
    pub degenerate: bool,
}

impl TestResult {
    fn degenerate(df: f64) -> Self {
        TestResult {
            t: 0.0,
            df,
            p: 1.0,
            degenerate: true,
        }
    }

    fn from_t(t: f64, df: f64) -> Self {
        TestResult {
            t,
            df,
            p: t_two_sided_p(t, df),
            degenerate: false,
        }
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn need(what: &'static str, x: &[f64], n: usize) -> Result<()> {
    if x.len() < n {
        return Err(Error::TooShort {
            what,
            required: n,
            found: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(what, "non-finite sample"));
    }
    Ok(())
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    need("paired sample", a, 2)?;
    need("paired sample", b, 2)?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let (mean, var) = mean_var(&d);
    let df = n - 1.0;
    if var == 0.0 {
        return Ok(TestResult::degenerate(df));
    }
    Ok(TestResult::from_t(mean / (var / n).sqrt(), df))
}

/// Unequal-variance two-sample test with Welch–Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    need("sample a", a, 2)?;
    need("sample b", b, 2)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / na, vb / nb);
    if sa + sb == 0.0 {
        return Ok(TestResult::degenerate(na + nb - 2.0));
    }
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(TestResult::from_t((ma - mb) / (sa + sb).sqrt(), df))
}

/// Pooled-variance two-sample test.
pub fn student_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    need("sample a", a, 2)?;
    need("sample b", b, 2)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let df = na + nb - 2.0;
    let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
    if pooled == 0.0 {
        return Ok(TestResult::degenerate(df));
    }
    Ok(TestResult::from_t((ma - mb) / (pooled * (1.0 / na + 1.0 / nb)).sqrt(), df))
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    reg_inc_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Student's t cumulative distribution.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * t_two_sided_p(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (k, c) in C.iter().enumerate().skip(1) {
        a += c / (x + k as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Tukey box-plot summary with 1.5·IQR whiskers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub label: String,
    pub n: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    pub outliers: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("sample"));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(quantile(&s, 0.5))
}

pub fn box_stats(label: &str, values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::Empty("box-plot sample"));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let (q1, med, q3) = (quantile(&s, 0.25), quantile(&s, 0.5), quantile(&s, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = s.iter().copied().filter(|v| *v >= lo_fence && *v <= hi_fence).collect();
    Ok(BoxStats {
        label: label.to_string(),
        n: s.len(),
        q1,
        median: med,
        q3,
        lower_whisker: inside.first().copied().unwrap_or(q1),
        upper_whisker: inside.last().copied().unwrap_or(q3),
        outliers: s.iter().copied().filter(|v| *v < lo_fence || *v > hi_fence).collect(),
    })
}

/// One row per box; outliers are `;`-separated in the last column.
pub fn boxplot_csv(boxes: &[BoxStats]) -> String {
    let mut out = String::from("label,n,lower_whisker,q1,median,q3,upper_whisker,outliers\n");
    for b in boxes {
        let outliers: Vec<String> = b.outliers.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            b.label,
            b.n,
            b.lower_whisker,
            b.q1,
            b.median,
            b.q3,
            b.upper_whisker,
            outliers.join(";")
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    pub percent_time_on: f64,
    pub switches: usize,
    pub switches_per_minute: f64,
    pub transitions: Vec<Transition>,
}

impl SourceStats {
    pub fn new(actions: &[u8], states: &[StateVector]) -> Result<Self> {
        Ok(SourceStats {
            percent_time_on: percent_time_on(actions)?,
            switches: switch_count(actions),
            switches_per_minute: switches_per_minute(actions),
            transitions: switch_transitions(actions, states)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    pub n_ticks: usize,
    /// Agreement after the warm-up ticks.
    pub classification: ClassificationMetrics,
    /// Keyed by source name, e.g. `predicted` and `truth`.
    pub sources: BTreeMap<String, SourceStats>,
}

/// Compares tick-aligned predicted and true action sequences.
pub fn build_report(predicted: &[u8], truth: &[u8], states: &[StateVector]) -> Result<MetricsReport> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    if states.len() < WINDOW {
        return Err(Error::TooShort {
            what: "session",
            required: WINDOW,
            found: states.len(),
        });
    }
    let skip = WINDOW - 1;
    let classification = classification_metrics(&predicted[skip..], &truth[skip..])?;
    let mut sources = BTreeMap::new();
    sources.insert("predicted".to_string(), SourceStats::new(predicted, states)?);
    sources.insert("truth".to_string(), SourceStats::new(truth, states)?);
    Ok(MetricsReport {
        schema: REPORT_SCHEMA.to_string(),
        n_ticks: states.len(),
        classification,
        sources,
    })
}
