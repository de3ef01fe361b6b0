#![allow(dead_code)]
//! Independent oracles shared by the integration tests.

use std::f64::consts::TAU;

use iart_core::geometry::{CurveShape, CurveSpec};
use iart_core::lstm::LstmParams;
use iart_core::Vec3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const ORACLE_POINTS: usize = 1_000_000;

/// Independent parametric form of every family, `u ∈ [0, 1]`.
pub fn param(shape: &CurveShape) -> Box<dyn Fn(f64) -> Vec3 + '_> {
    match shape {
        CurveShape::Line { p1, p2 } => Box::new(move |u| p1 + (p2 - p1) * u),
        CurveShape::Circle { center, radius, normal } => {
            let n = normal.normalize();
            let a = n.cross(&Vec3::new(0.3, -0.7, 0.2)).normalize();
            let b = n.cross(&a);
            Box::new(move |u| center + (a * (TAU * u).cos() + b * (TAU * u).sin()) * *radius)
        }
        CurveShape::Helix { center, radius, pitch, turns } => Box::new(move |u| {
            let th = TAU * turns * u;
            center + Vec3::new(radius * th.cos(), radius * th.sin(), pitch * th)
        }),
        CurveShape::Lissajous { center, amplitude, frequency, phase } => Box::new(move |u| {
            center + Vec3::from_fn(|k, _| amplitude[k] * (TAU * frequency[k] * u + phase[k]).sin())
        }),
        CurveShape::Figure8 { center, amplitude } => Box::new(move |u| {
            let th = TAU * u;
            center + Vec3::new(amplitude.x * th.sin(), amplitude.y * (2.0 * th).sin(), amplitude.z * th.cos())
        }),
        CurveShape::CompositeSpline { control_points } => {
            let n = control_points.len();
            let mut p = vec![control_points[0] * 2.0 - control_points[1]];
            p.extend_from_slice(control_points);
            p.push(control_points[n - 1] * 2.0 - control_points[n - 2]);
            Box::new(move |u| {
                let x = u * (n - 1) as f64;
                let i = (x.floor() as usize).min(n - 2);
                let t = x - i as f64;
                let (p0, p1, p2, p3) = (p[i], p[i + 1], p[i + 2], p[i + 3]);
                // Catmull-Rom basis
                ((p1 * 2.0) + (p2 - p0) * t + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * (t * t)
                    + (p1 * 3.0 - p0 - p2 * 3.0 + p3) * (t * t * t))
                    * 0.5
            })
        }
    }
}

pub fn families() -> Vec<CurveSpec> {
    let mut specs: Vec<CurveSpec> = ["line", "circle", "helix", "lissajous", "figure8"]
        .iter()
        .map(|n| CurveSpec::preset(n).unwrap())
        .collect();
    specs.push(CurveSpec::new(CurveShape::CompositeSpline {
        control_points: vec![
            Vec3::new(-0.08, 0.0, 0.0),
            Vec3::new(-0.03, 0.06, 0.02),
            Vec3::new(0.02, -0.04, 0.05),
            Vec3::new(0.07, 0.03, -0.02),
            Vec3::new(0.05, 0.08, -0.06),
        ],
    }));
    specs
}

pub fn brute_force(points: &[Vec3], x: &Vec3) -> f64 {
    points.iter().map(|p| (p - x).norm_squared()).fold(f64::INFINITY, f64::min).sqrt()
}

/// Independent scalar evaluation of the cell: every gate row is read by
/// name from the tensor export and evaluated with explicit loops.
pub fn oracle_step(p: &LstmParams, h: &[f64], c: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let tensors = p.tensors();
    let get = |name: &str| tensors.iter().find(|t| t.0 == name).unwrap().2.clone();
    let (w_c, w_f, w_i, w_o) = (get("w_c"), get("w_f"), get("w_i"), get("w_o"));
    let (b_c, b_f, b_i, b_o) = (get("b_c"), get("b_f"), get("b_i"), get("b_o"));
    let n = h.len();
    let hx: Vec<f64> = h.iter().chain(x).copied().collect();
    let m = hx.len();
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let affine = |w: &[f64], b: &[f64], j: usize| {
        let mut acc = b[j];
        for k in 0..m {
            acc += w[j * m + k] * hx[k];
        }
        acc
    };
    let mut h2 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    for j in 0..n {
        let cand = affine(&w_c, &b_c, j).tanh();
        let f = sig(affine(&w_f, &b_f, j));
        let i = sig(affine(&w_i, &b_i, j));
        let o = sig(affine(&w_o, &b_o, j));
        c2[j] = f * c[j] + i * cand;
        h2[j] = o * c2[j].tanh();
    }
    (h2, c2)
}

pub fn random_params(rng: &mut ChaCha8Rng, hidden: usize, input: usize, scale: f64) -> LstmParams {
    let n = LstmParams::count(hidden, input);
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    LstmParams::from_vec(hidden, input, data).unwrap()
}

