//! Parametric 3D reference trajectories.
//!
//! A [`Trajectory`] is built once from a [`CurveSpec`] into a dense table of
//! samples ordered by the curve parameter `u ∈ [0, 1]`. Closest-point queries
//! scan that table and refine the winning segments with golden-section search
//! on the analytic curve.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

/// Radius of curvature reported for straight (or nearly straight) pieces.
pub const R_CAP: f64 = 10.0;
/// Smallest radius of curvature reported.
pub const EPS_R: f64 = 1e-4;
/// Upper bound on the arc length between adjacent samples.
pub const MAX_SAMPLE_SPACING: f64 = 1e-3;
/// Edge length of the cubic workspace centred on the origin.
pub const WORKSPACE_SIZE: f64 = 0.2;

pub const CURVE_SCHEMA: &str = "curvespec/1";

const TARGET_SPACING: f64 = 5e-4;
const MAX_SAMPLES: usize = 1 << 21;

fn default_curve_schema() -> String {
    CURVE_SCHEMA.to_string()
}

/// Serializable description of a reference curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    #[serde(default = "default_curve_schema")]
    pub schema: String,
    #[serde(flatten)]
    pub shape: CurveShape,
    /// Only used by `composite_spline` with no explicit control points.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CurveShape {
    Line {
        p1: Vec3,
        p2: Vec3,
    },
    Circle {
        center: Vec3,
        radius: f64,
        normal: Vec3,
    },
    /// `center + (a cos θ, a sin θ, b θ)` for `θ ∈ [0, 2π·turns]`.
    Helix {
        center: Vec3,
        radius: f64,
        /// Rise per radian.
        pitch: f64,
        turns: f64,
    },
    /// `center + A ⊙ sin(2π f u + φ)`, closed when every frequency is an integer.
    Lissajous {
        center: Vec3,
        amplitude: Vec3,
        frequency: Vec3,
        phase: Vec3,
    },
    /// `center + (A_x sin θ, A_y sin 2θ, A_z cos θ)` for `θ ∈ [0, 2π]`.
    Figure8 { center: Vec3, amplitude: Vec3 },
    /// Uniform Catmull-Rom spline through the control points. An empty list
    /// is replaced by random points drawn from the spec's seed.
    CompositeSpline {
        #[serde(default)]
        control_points: Vec<Vec3>,
    },
}

impl CurveSpec {
    pub fn new(shape: CurveShape) -> Self {
        CurveSpec {
            schema: CURVE_SCHEMA.to_string(),
            shape,
            seed: 0,
        }
    }

    pub fn line(p1: Vec3, p2: Vec3) -> Self {
        Self::new(CurveShape::Line { p1, p2 })
    }

    pub fn circle(center: Vec3, radius: f64, normal: Vec3) -> Self {
        Self::new(CurveShape::Circle {
            center,
            radius,
            normal,
        })
    }

    pub fn helix(center: Vec3, radius: f64, pitch: f64, turns: f64) -> Self {
        Self::new(CurveShape::Helix {
            center,
            radius,
            pitch,
            turns,
        })
    }

    pub fn family(&self) -> &'static str {
        match self.shape {
            CurveShape::Line { .. } => "line",
            CurveShape::Circle { .. } => "circle",
            CurveShape::Helix { .. } => "helix",
            CurveShape::Lissajous { .. } => "lissajous",
            CurveShape::Figure8 { .. } => "figure8",
            CurveShape::CompositeSpline { .. } => "composite_spline",
        }
    }

    /// Named presets sized for the 0.2 m workspace.
    pub fn preset(name: &str) -> Result<Self> {
        let spec = match name {
            "line" => Self::line(Vec3::new(-0.08, -0.04, -0.03), Vec3::new(0.08, 0.04, 0.03)),
            "circle" => Self::circle(Vec3::zeros(), 0.07, Vec3::new(0.2, 0.3, 1.0)),
            "helix" => Self::helix(Vec3::new(0.0, 0.0, -0.06), 0.06, 0.01, 2.0),
            "lissajous" => Self::new(CurveShape::Lissajous {
                center: Vec3::zeros(),
                amplitude: Vec3::new(0.07, 0.06, 0.04),
                frequency: Vec3::new(1.0, 2.0, 3.0),
                phase: Vec3::new(PI / 2.0, 0.0, 0.0),
            }),
            "figure8" => Self::new(CurveShape::Figure8 {
                center: Vec3::zeros(),
                amplitude: Vec3::new(0.07, 0.05, 0.04),
            }),
            "spline" | "composite_spline" => CurveSpec {
                seed: 7,
                ..Self::new(CurveShape::CompositeSpline {
                    control_points: Vec::new(),
                })
            },
            other => {
                return Err(Error::invalid(
                    "preset",
                    format!("unknown curve preset `{other}`"),
                ))
            }
        };
        Ok(spec)
    }

    pub const PRESETS: [&'static str; 6] =
        ["line", "circle", "helix", "lissajous", "figure8", "spline"];

    /// Same curve with every length multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let shape = match &self.shape {
            CurveShape::Line { p1, p2 } => CurveShape::Line {
                p1: p1 * k,
                p2: p2 * k,
            },
            CurveShape::Circle {
                center,
                radius,
                normal,
            } => CurveShape::Circle {
                center: center * k,
                radius: radius * k,
                normal: *normal,
            },
            CurveShape::Helix {
                center,
                radius,
                pitch,
                turns,
            } => CurveShape::Helix {
                center: center * k,
                radius: radius * k,
                pitch: pitch * k,
                turns: *turns,
            },
            CurveShape::Lissajous {
                center,
                amplitude,
                frequency,
                phase,
            } => CurveShape::Lissajous {
                center: center * k,
                amplitude: amplitude * k,
                frequency: *frequency,
                phase: *phase,
            },
            CurveShape::Figure8 { center, amplitude } => CurveShape::Figure8 {
                center: center * k,
                amplitude: amplitude * k,
            },
            CurveShape::CompositeSpline { control_points } => CurveShape::CompositeSpline {
                control_points: self
                    .resolved_control_points(control_points)
                    .iter()
                    .map(|p| p * k)
                    .collect(),
            },
        };
        CurveSpec {
            schema: self.schema.clone(),
            shape,
            seed: self.seed,
        }
    }

    fn resolved_control_points(&self, given: &[Vec3]) -> Vec<Vec3> {
        if !given.is_empty() {
            return given.to_vec();
        }
        random_control_points(self.seed, 6)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        check_schema(&value, CURVE_SCHEMA)?;
        Ok(serde_json::from_value(value)?)
    }

    /// Loads a spec from a JSON file, or a preset when given `preset:<name>`.
    pub fn load(arg: &str) -> Result<Self> {
        if let Some(name) = arg.strip_prefix("preset:") {
            return Self::preset(name);
        }
        let path = Path::new(arg);
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }
}

/// Accepts exactly `expected`; a different version of the same family
/// (`name/N`) is reported as a version mismatch.
pub(crate) fn check_schema(value: &serde_json::Value, expected: &str) -> Result<()> {
    let found = value.get("schema").and_then(|s| s.as_str()).unwrap_or("<missing>");
    check_tag(found, expected)
}

pub(crate) fn check_tag(found: &str, expected: &str) -> Result<()> {
    if found == expected {
        return Ok(());
    }
    let family = |s: &str| s.rsplit_once('/').map(|(f, _)| f.to_string());
    let (expected, found) = (expected.to_string(), found.to_string());
    if family(&found).is_some() && family(&found) == family(&expected) {
        Err(Error::VersionMismatch { expected, found })
    } else {
        Err(Error::Schema { expected, found })
    }
}

fn random_control_points(seed: u64, n: usize) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<Vec3> = Vec::with_capacity(n);
    while points.len() < n {
        let p = Vec3::new(
            rng.gen_range(-0.07..0.07),
            rng.gen_range(-0.07..0.07),
            rng.gen_range(-0.07..0.07),
        );
        // keep consecutive points apart so the spline has no cusps
        if points.last().map_or(true, |q| (p - q).norm() >= 0.04) {
            points.push(p);
        }
    }
    points
}

/// Analytic curve, parameterized on `u ∈ [0, 1]`.
#[derive(Debug, Clone)]
enum Curve {
    Line {
        p1: Vec3,
        delta: Vec3,
    },
    Circle {
        center: Vec3,
        radius: f64,
        e1: Vec3,
        e2: Vec3,
    },
    Helix {
        center: Vec3,
        a: f64,
        b: f64,
        span: f64,
    },
    Lissajous {
        center: Vec3,
        amplitude: Vec3,
        omega: Vec3,
        phase: Vec3,
    },
    Figure8 {
        center: Vec3,
        amplitude: Vec3,
    },
    Spline {
        points: Vec<Vec3>,
    },
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be > 0, got {v}")))
    }
}

fn finite_vec(field: &str, v: &Vec3) -> Result<()> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(field, "must be finite"))
    }
}

impl Curve {
    fn from_spec(spec: &CurveSpec) -> Result<Self> {
        match &spec.shape {
            CurveShape::Line { p1, p2 } => {
                finite_vec("p1", p1)?;
                finite_vec("p2", p2)?;
                let delta = p2 - p1;
                if delta.norm() < 1e-9 {
                    return Err(Error::DegenerateCurve("line endpoints p1 and p2 coincide".into()));
                }
                Ok(Curve::Line { p1: *p1, delta })
            }
            CurveShape::Circle {
                center,
                radius,
                normal,
            } => {
                finite_vec("center", center)?;
                finite_vec("normal", normal)?;
                if *radius == 0.0 {
                    return Err(Error::DegenerateCurve("circle radius is zero".into()));
                }
                positive("radius", *radius)?;
                let n = normal
                    .try_normalize(1e-12)
                    .ok_or_else(|| Error::invalid("normal", "must be non-zero"))?;
                let reference = if n.x.abs() > 0.9 { Vec3::y() } else { Vec3::x() };
                let e1 = (reference - n * reference.dot(&n)).normalize();
                let e2 = n.cross(&e1);
                Ok(Curve::Circle {
                    center: *center,
                    radius: *radius,
                    e1,
                    e2,
                })
            }
            CurveShape::Helix {
                center,
                radius,
                pitch,
                turns,
            } => {
                finite_vec("center", center)?;
                if *radius == 0.0 {
                    return Err(Error::DegenerateCurve("helix radius is zero".into()));
                }
                positive("radius", *radius)?;
                if !(pitch.is_finite() && *pitch >= 0.0) {
                    return Err(Error::invalid("pitch", format!("must be >= 0, got {pitch}")));
                }
                positive("turns", *turns)?;
                Ok(Curve::Helix {
                    center: *center,
                    a: *radius,
                    b: *pitch,
                    span: TAU * turns,
                })
            }
            CurveShape::Lissajous {
                center,
                amplitude,
                frequency,
                phase,
            } => {
                finite_vec("center", center)?;
                finite_vec("frequency", frequency)?;
                finite_vec("phase", phase)?;
                if amplitude.iter().any(|a| !a.is_finite() || *a < 0.0) {
                    return Err(Error::invalid("amplitude", "components must be >= 0"));
                }
                if amplitude.iter().filter(|a| **a > 0.0).count() < 2 {
                    return Err(Error::DegenerateCurve(
                        "lissajous needs at least two non-zero amplitudes".into(),
                    ));
                }
                Ok(Curve::Lissajous {
                    center: *center,
                    amplitude: *amplitude,
                    omega: frequency * TAU,
                    phase: *phase,
                })
            }
            CurveShape::Figure8 { center, amplitude } => {
                finite_vec("center", center)?;
                positive("amplitude.x", amplitude.x)?;
                positive("amplitude.y", amplitude.y)?;
                if !(amplitude.z.is_finite() && amplitude.z >= 0.0) {
                    return Err(Error::invalid("amplitude.z", "must be >= 0"));
                }
                Ok(Curve::Figure8 {
                    center: *center,
                    amplitude: *amplitude,
                })
            }
            CurveShape::CompositeSpline { control_points } => {
                let points = spec.resolved_control_points(control_points);
                if points.len() < 2 {
                    return Err(Error::invalid(
                        "control_points",
                        "need at least two control points",
                    ));
                }
                for (i, p) in points.iter().enumerate() {
                    finite_vec(&format!("control_points[{i}]"), p)?;
                }
                if points.windows(2).any(|w| (w[1] - w[0]).norm() < 1e-9) {
                    return Err(Error::DegenerateCurve(
                        "consecutive spline control points coincide".into(),
                    ));
                }
                let n = points.len();
                let mut padded = Vec::with_capacity(n + 2);
                padded.push(points[0] * 2.0 - points[1]);
                padded.extend_from_slice(&points);
                padded.push(points[n - 1] * 2.0 - points[n - 2]);
                Ok(Curve::Spline { points: padded })
            }
        }
    }

    /// Position and first/second derivatives with respect to `u`.
    fn eval(&self, u: f64) -> (Vec3, Vec3, Vec3) {
        match self {
            Curve::Line { p1, delta } => (p1 + delta * u, *delta, Vec3::zeros()),
            Curve::Circle {
                center,
                radius,
                e1,
                e2,
            } => {
                let th = TAU * u;
                let (s, c) = th.sin_cos();
                let p = center + (e1 * c + e2 * s) * *radius;
                let d1 = (e2 * c - e1 * s) * (*radius * TAU);
                let d2 = (e1 * c + e2 * s) * (-*radius * TAU * TAU);
                (p, d1, d2)
            }
            Curve::Helix { center, a, b, span } => {
                let th = span * u;
                let (s, c) = th.sin_cos();
                let p = center + Vec3::new(a * c, a * s, b * th);
                let d1 = Vec3::new(-a * s, a * c, *b) * *span;
                let d2 = Vec3::new(-a * c, -a * s, 0.0) * (span * span);
                (p, d1, d2)
            }
            Curve::Lissajous {
                center,
                amplitude,
                omega,
                phase,
            } => {
                let mut p = *center;
                let mut d1 = Vec3::zeros();
                let mut d2 = Vec3::zeros();
                for k in 0..3 {
                    let arg = omega[k] * u + phase[k];
                    let (s, c) = arg.sin_cos();
                    p[k] += amplitude[k] * s;
                    d1[k] = amplitude[k] * omega[k] * c;
                    d2[k] = -amplitude[k] * omega[k] * omega[k] * s;
                }
                (p, d1, d2)
            }
            Curve::Figure8 { center, amplitude } => {
                let th = TAU * u;
                let (s, c) = th.sin_cos();
                let (s2, c2) = (2.0 * th).sin_cos();
                let p = center + Vec3::new(amplitude.x * s, amplitude.y * s2, amplitude.z * c);
                let d1 = Vec3::new(amplitude.x * c, 2.0 * amplitude.y * c2, -amplitude.z * s) * TAU;
                let d2 = Vec3::new(-amplitude.x * s, -4.0 * amplitude.y * s2, -amplitude.z * c)
                    * (TAU * TAU);
                (p, d1, d2)
            }
            Curve::Spline { points } => {
                let segments = (points.len() - 3) as f64;
                let x = (u.clamp(0.0, 1.0)) * segments;
                let seg = (x.floor() as usize).min(points.len() - 4);
                let t = x - seg as f64;
                let (p0, p1, p2, p3) = (
                    points[seg],
                    points[seg + 1],
                    points[seg + 2],
                    points[seg + 3],
                );
                let c1 = (p2 - p0) * 0.5;
                let c2 = (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * 0.5;
                let c3 = (-p0 + p1 * 3.0 - p2 * 3.0 + p3) * 0.5;
                let p = p1 + c1 * t + c2 * (t * t) + c3 * (t * t * t);
                let d1 = (c1 + c2 * (2.0 * t) + c3 * (3.0 * t * t)) * segments;
                let d2 = (c2 * 2.0 + c3 * (6.0 * t)) * (segments * segments);
                (p, d1, d2)
            }
        }
    }

    fn position(&self, u: f64) -> Vec3 {
        self.eval(u).0
    }
}

fn radius_from_derivatives(d1: &Vec3, d2: &Vec3) -> f64 {
    let speed = d1.norm();
    let cross = d1.cross(d2).norm();
    if cross <= 0.0 {
        return R_CAP;
    }
    (speed * speed * speed / cross).clamp(EPS_R, R_CAP)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub u: f64,
    pub position: Vec3,
    pub tangent: Vec3,
    pub curvature_radius: f64,
    /// Cumulative arc length from the start of the curve.
    pub arc_length: f64,
}

/// Result of a closest-point query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub point: Vec3,
    pub u: f64,
    pub distance: f64,
}

/// An immutable, densely sampled reference curve.
#[derive(Debug, Clone)]
pub struct Trajectory {
    spec: CurveSpec,
    curve: Curve,
    samples: Vec<Sample>,
}

// 5-point Gauss-Legendre on [-1, 1].
const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

fn segment_length(curve: &Curve, u0: f64, u1: f64) -> f64 {
    let half = 0.5 * (u1 - u0);
    let mid = 0.5 * (u1 + u0);
    GL_NODES
        .iter()
        .zip(GL_WEIGHTS.iter())
        .map(|(x, w)| w * curve.eval(mid + half * x).1.norm())
        .sum::<f64>()
        * half
}

/// Builds the sampled trajectory for a spec.
pub fn make_trajectory(spec: &CurveSpec) -> Result<Trajectory> {
    if spec.schema != CURVE_SCHEMA {
        return Err(Error::Schema {
            expected: CURVE_SCHEMA.to_string(),
            found: spec.schema.clone(),
        });
    }
    let curve = Curve::from_spec(spec)?;

    let coarse = 4096;
    let approx_len: f64 = (0..coarse)
        .map(|i| segment_length(&curve, i as f64 / coarse as f64, (i + 1) as f64 / coarse as f64))
        .sum();
    if !(approx_len.is_finite() && approx_len > 1e-6) {
        return Err(Error::DegenerateCurve(format!("curve length {approx_len}")));
    }

    let mut intervals = ((approx_len / TARGET_SPACING).ceil() as usize).max(64);
    loop {
        let us: Vec<f64> = (0..=intervals)
            .map(|i| i as f64 / intervals as f64)
            .collect();
        let lengths: Vec<f64> = us
            .windows(2)
            .map(|w| segment_length(&curve, w[0], w[1]))
            .collect();
        let max_len = lengths.iter().cloned().fold(0.0, f64::max);
        if max_len > MAX_SAMPLE_SPACING {
            if intervals >= MAX_SAMPLES {
                return Err(Error::DegenerateCurve(
                    "curve speed too uneven to sample".into(),
                ));
            }
            intervals *= 2;
            continue;
        }

        let mut samples = Vec::with_capacity(us.len());
        let mut s = 0.0;
        for (i, &u) in us.iter().enumerate() {
            if i > 0 {
                s += lengths[i - 1];
            }
            let (p, d1, d2) = curve.eval(u);
            let tangent = d1.try_normalize(1e-12).ok_or_else(|| {
                Error::DegenerateCurve(format!("zero velocity at u = {u}"))
            })?;
            samples.push(Sample {
                u,
                position: p,
                tangent,
                curvature_radius: radius_from_derivatives(&d1, &d2),
                arc_length: s,
            });
        }
        return Ok(Trajectory {
            spec: spec.clone(),
            curve,
            samples,
        });
    }
}

impl Trajectory {
    pub fn spec(&self) -> &CurveSpec {
        &self.spec
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn total_length(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.arc_length)
    }

    /// The curve's start `p1`.
    pub fn start_point(&self) -> Vec3 {
        self.samples[0].position
    }

    /// The curve's end `p2`.
    pub fn end_point(&self) -> Vec3 {
        self.samples[self.samples.len() - 1].position
    }

    pub fn position_at(&self, u: f64) -> Vec3 {
        self.curve.position(u.clamp(0.0, 1.0))
    }

    pub fn tangent_at(&self, u: f64) -> Vec3 {
        let d1 = self.curve.eval(u.clamp(0.0, 1.0)).1;
        d1.try_normalize(1e-12).unwrap_or_else(|| {
            let i = self.segment_index(u);
            self.samples[i].tangent
        })
    }

    /// Index `i` such that `samples[i].u <= u < samples[i+1].u`.
    fn segment_index(&self, u: f64) -> usize {
        let n = self.samples.len();
        let i = self.samples.partition_point(|s| s.u <= u);
        i.saturating_sub(1).min(n - 2)
    }

    pub fn arc_length_at(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let i = self.segment_index(u);
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        let w = (u - a.u) / (b.u - a.u);
        a.arc_length + w * (b.arc_length - a.arc_length)
    }

    /// Interpolated radius of curvature at parameter `u`, clamped to `[EPS_R, R_CAP]`.
    pub fn curvature_radius_at(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::OutOfRange {
                what: "u",
                value: u,
                range: "[0, 1]",
            });
        }
        let i = self.segment_index(u);
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        let w = (u - a.u) / (b.u - a.u);
        let r = a.curvature_radius + w * (b.curvature_radius - a.curvature_radius);
        Ok(r.clamp(EPS_R, R_CAP))
    }

    /// Global closest point on the curve. Ties go to the smaller parameter.
    pub fn closest_point(&self, x: &Vec3) -> Projection {
        self.closest_in_range(x, 0, self.samples.len() - 1)
    }

    /// Closest point restricted to an arc-length window around `u_hint`,
    /// `behind` metres back and `ahead` metres forward.
    pub fn closest_point_near(&self, x: &Vec3, u_hint: f64, behind: f64, ahead: f64) -> Projection {
        let s = self.arc_length_at(u_hint);
        let lo = self
            .samples
            .partition_point(|p| p.arc_length < s - behind)
            .saturating_sub(1);
        let hi = self
            .samples
            .partition_point(|p| p.arc_length <= s + ahead)
            .min(self.samples.len() - 1);
        self.closest_in_range(x, lo, hi.max(lo + 1))
    }

    fn closest_in_range(&self, x: &Vec3, lo: usize, hi: usize) -> Projection {
        let d2: Vec<f64> = self.samples[lo..=hi]
            .iter()
            .map(|s| (s.position - x).norm_squared())
            .collect();
        let mut best_i = 0;
        for (i, &d) in d2.iter().enumerate() {
            if d < d2[best_i] {
                best_i = i;
            }
        }
        let best_sample = d2[best_i].sqrt();
        // Any segment that could hold a better point than the best sample
        // has a sample within one spacing of it.
        let slack = best_sample + MAX_SAMPLE_SPACING;
        let slack2 = slack * slack;

        let mut best: Option<Projection> = None;
        let last = d2.len() - 1;
        for i in 0..=last {
            let is_local_min = (i == 0 || d2[i] <= d2[i - 1]) && (i == last || d2[i] <= d2[i + 1]);
            if !is_local_min || d2[i] > slack2 {
                continue;
            }
            let a = self.samples[lo + i.saturating_sub(1)].u;
            let b = self.samples[lo + (i + 1).min(last)].u;
            let cand = self.refine(x, a, self.samples[lo + i].u, b);
            // candidates arrive in increasing u, so near-ties keep the earlier one
            if best.map_or(true, |b| cand.distance < b.distance - 1e-12) {
                best = Some(cand);
            }
        }
        best.expect("the global sample minimum is always a candidate")
    }

    fn refine(&self, x: &Vec3, mut a: f64, center: f64, mut b: f64) -> Projection {
        const INV_PHI: f64 = 0.618_033_988_749_894_9;
        let (lo, hi) = (a.min(center), b.max(center));
        let f = |u: f64| (self.curve.position(u) - x).norm_squared();
        let mut c = b - INV_PHI * (b - a);
        let mut d = a + INV_PHI * (b - a);
        let mut fc = f(c);
        let mut fd = f(d);
        for _ in 0..80 {
            if (b - a).abs() < 1e-14 {
                break;
            }
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - INV_PHI * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + INV_PHI * (b - a);
                fd = f(d);
            }
        }
        // the bracket ends are candidates too
        let mut best_u = 0.5 * (a + b);
        let mut best_f = f(best_u);
        for u in [a, b, center] {
            let fu = f(u);
            if fu < best_f {
                best_u = u;
                best_f = fu;
            }
        }
        // Squared distance is flat to machine precision near the minimum, so
        // finish on the stationarity condition (c(u) - x)·c'(u) = 0.
        let grad = |u: f64| {
            let (p, d1, d2) = self.curve.eval(u);
            let r = p - x;
            (r.dot(&d1), d1.dot(&d1) + r.dot(&d2))
        };
        let (mut g, mut h) = grad(best_u);
        for _ in 0..4 {
            if h <= 0.0 || g == 0.0 {
                break;
            }
            let next = best_u - g / h;
            if !(lo..=hi).contains(&next) {
                break;
            }
            let (g2, h2) = grad(next);
            if g2.abs() >= g.abs() {
                break;
            }
            best_u = next;
            g = g2;
            h = h2;
        }
        let point = self.curve.position(best_u);
        let best_f = (point - x).norm_squared();
        Projection {
            point,
            u: best_u,
            distance: best_f.sqrt(),
        }
    }

    /// Closest curve point when only the x/y coordinates of `x` are trusted.
    pub fn closest_point_xy(&self, x: &Vec3) -> Projection {
        let flat = |p: &Vec3| Vec3::new(p.x, p.y, 0.0);
        let target = flat(x);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, s) in self.samples.iter().enumerate() {
            let d = (flat(&s.position) - target).norm_squared();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        let s = &self.samples[best];
        Projection {
            point: s.position,
            u: s.u,
            distance: best_d.sqrt(),
        }
    }

    pub fn is_closed(&self) -> bool {
        (self.start_point() - self.end_point()).norm() < 1e-9
    }
}

/// Clamps a point into the workspace cube centred on the origin.
pub fn clamp_to_workspace(x: &Vec3) -> Vec3 {
    let h = WORKSPACE_SIZE / 2.0;
    x.map(|c| c.clamp(-h, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn helix() -> Trajectory {
        make_trajectory(&CurveSpec::helix(Vec3::zeros(), 0.1, 0.02, 2.0)).unwrap()
    }

    #[test]
    fn line_length_and_cap() {
        let t = make_trajectory(&CurveSpec::line(Vec3::zeros(), Vec3::x())).unwrap();
        assert_relative_eq!(t.total_length(), 1.0, epsilon = 1e-12);
        assert!(t.samples().iter().all(|s| s.curvature_radius == R_CAP));
        assert_eq!(t.curvature_radius_at(0.37).unwrap(), R_CAP);
    }

    #[test]
    fn circle_length_and_radius() {
        let t = make_trajectory(&CurveSpec::circle(Vec3::zeros(), 0.1, Vec3::z())).unwrap();
        assert_relative_eq!(t.total_length(), TAU * 0.1, max_relative = 1e-9);
        for s in t.samples() {
            assert_relative_eq!(s.curvature_radius, 0.1, max_relative = 1e-9);
        }
        assert_relative_eq!(t.curvature_radius_at(0.81).unwrap(), 0.1, max_relative = 1e-9);
    }

    #[test]
    fn helix_length_matches_analytic() {
        let t = helix();
        let analytic = 2.0 * TAU * (0.1f64 * 0.1 + 0.02 * 0.02).sqrt();
        assert!((t.total_length() - analytic).abs() / analytic < 1e-3);
    }

    #[test]
    fn table_invariants_hold_for_presets() {
        for name in CurveSpec::PRESETS {
            let t = make_trajectory(&CurveSpec::preset(name).unwrap()).unwrap();
            for w in t.samples().windows(2) {
                assert!(w[1].u > w[0].u, "{name}");
                assert!(w[1].arc_length > w[0].arc_length, "{name}");
                assert!(w[1].arc_length - w[0].arc_length <= MAX_SAMPLE_SPACING, "{name}");
            }
            for s in t.samples() {
                assert!((s.tangent.norm() - 1.0).abs() < 1e-9);
                assert!(s.curvature_radius > 0.0 && s.curvature_radius <= R_CAP);
            }
        }
    }

    #[test]
    fn same_spec_same_table() {
        let spec = CurveSpec::preset("spline").unwrap();
        let a = make_trajectory(&spec).unwrap();
        let b = make_trajectory(&spec).unwrap();
        assert_eq!(a.samples(), b.samples());
    }

    #[test]
    fn rejects_degenerate_specs() {
        let e = make_trajectory(&CurveSpec::line(Vec3::x(), Vec3::x())).unwrap_err();
        assert!(matches!(e, Error::DegenerateCurve(_)));
        let e = make_trajectory(&CurveSpec::circle(Vec3::zeros(), 0.0, Vec3::z())).unwrap_err();
        assert!(matches!(e, Error::DegenerateCurve(_)));
        let e = make_trajectory(&CurveSpec::circle(Vec3::zeros(), -1.0, Vec3::z())).unwrap_err();
        assert!(e.to_string().contains("radius"), "{e}");
        let e = make_trajectory(&CurveSpec::helix(Vec3::zeros(), 0.1, -0.1, 1.0)).unwrap_err();
        assert!(e.to_string().contains("pitch"), "{e}");
    }

    #[test]
    fn closest_point_on_line() {
        let t = make_trajectory(&CurveSpec::line(Vec3::zeros(), Vec3::x())).unwrap();
        let p = t.closest_point(&Vec3::new(0.5, 0.3, 0.0));
        assert_relative_eq!(p.point, Vec3::new(0.5, 0.0, 0.0), epsilon = 1e-9);
        assert_relative_eq!(p.distance, 0.3, epsilon = 1e-9);
    }

    #[test]
    fn closest_point_on_unit_circle() {
        let t = make_trajectory(&CurveSpec::circle(Vec3::zeros(), 1.0, Vec3::z())).unwrap();
        let p = t.closest_point(&Vec3::new(2.0, 0.0, 0.0));
        assert_relative_eq!(p.point, Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-9);
        assert_relative_eq!(p.distance, 1.0, epsilon = 1e-9);
        // start and end coincide, the tie goes to u = 0
        assert!(p.u < 1e-6);
    }

    #[test]
    fn curvature_rejects_out_of_range() {
        let t = helix();
        assert!(matches!(
            t.curvature_radius_at(1.5),
            Err(Error::OutOfRange { .. })
        ));
        assert!(t.curvature_radius_at(-0.1).is_err());
    }

    #[test]
    fn spec_json_round_trip_and_schema() {
        let spec = CurveSpec::preset("lissajous").unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"schema\":\"curvespec/1\""));
        assert!(text.contains("\"family\":\"lissajous\""));
        assert_eq!(CurveSpec::from_json(&text).unwrap(), spec);
        let bad = text.replace("curvespec/1", "curvespec/0");
        assert!(matches!(CurveSpec::from_json(&bad), Err(Error::VersionMismatch { .. })));
    }

    #[test]
    fn near_query_tracks_progress_on_closed_curve() {
        let t = make_trajectory(&CurveSpec::circle(Vec3::zeros(), 0.05, Vec3::z())).unwrap();
        let x = t.position_at(0.999);
        assert!(t.closest_point(&x).u > 0.99);
        let p = t.closest_point_near(&x, 0.98, 0.02, 0.05);
        assert!((p.u - 0.999).abs() < 1e-6);
    }
}
