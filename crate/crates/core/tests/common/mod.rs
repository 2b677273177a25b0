//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ncc_ipw::smooth::{inv_logit, Frame, PenalizedLogitModel, SmoothTermSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn weibull_cdf(t: f64) -> f64 {
    1.0 - (-(t / 70.0).powi(3)).exp()
}

pub fn ks_distance(mut draws: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    draws.sort_by(f64::total_cmp);
    let n = draws.len() as f64;
    draws
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = cdf(t);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

pub fn simulated(n: usize, seed: u64) -> (Frame, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x1: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let x2: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let g: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..3u8))).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let eta = -0.5 + (6.0 * x1[i]).sin() + 0.4 * x2[i] * x2[i] - 0.8 + 0.5 * g[i];
            f64::from(u8::from(rng.random::<f64>() < inv_logit(eta)))
        })
        .collect();
    (Frame::new().with("x1", x1).with("x2", x2).with("g", g), y)
}

pub fn specs() -> Vec<SmoothTermSpec> {
    vec![
        SmoothTermSpec::smooth("x1"),
        SmoothTermSpec::smooth("x2"),
        SmoothTermSpec::categorical("g"),
    ]
}

pub fn row(frame: &Frame, i: usize) -> Vec<(&'static str, f64)> {
    ["x1", "x2", "g"].iter().map(|&k| (k, frame.get(k).unwrap()[i])).collect()
}

/// Recover the design matrix by probing the fitted predictor with unit
/// coefficient vectors; the predictor is linear in the coefficients.
pub fn probe_design(model: &PenalizedLogitModel, frame: &Frame) -> DMatrix<f64> {
    let n = frame.nrows();
    let p = model.coefficients.len();
    let mut x = DMatrix::zeros(n, p);
    let mut probe = model.clone();
    for k in 0..p {
        probe.coefficients = vec![0.0; p];
        probe.coefficients[k] = 1.0;
        for i in 0..n {
            x[(i, k)] = probe.linear_predictor(row(frame, i).as_slice()).unwrap();
        }
    }
    x
}

pub fn penalty_matrix(model: &PenalizedLogitModel) -> DMatrix<f64> {
    let p = model.coefficients.len();
    let mut s = DMatrix::zeros(p, p);
    for t in &model.terms {
        if let (Some(pen), Some(lambda)) = (&t.penalty, t.lambda) {
            s.view_mut((t.offset, t.offset), (t.width, t.width)).copy_from(&(pen * lambda));
        }
    }
    s
}

fn objective(x: &DMatrix<f64>, s: &DMatrix<f64>, y: &[f64], b: &DVector<f64>) -> (f64, DVector<f64>) {
    let eta = x * b;
    let mut dev = 0.0;
    let mut resid = DVector::zeros(y.len());
    for i in 0..y.len() {
        let e = eta[i];
        let log1pexp = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
        dev += 2.0 * (log1pexp - y[i] * e);
        resid[i] = inv_logit(e) - y[i];
    }
    let sb = s * b;
    (dev + b.dot(&sb), x.tr_mul(&resid) * 2.0 + sb * 2.0)
}

/// Plain BFGS with Armijo backtracking.
pub fn bfgs(x: &DMatrix<f64>, s: &DMatrix<f64>, y: &[f64]) -> DVector<f64> {
    let p = x.ncols();
    let mut b = DVector::zeros(p);
    let mut h = DMatrix::<f64>::identity(p, p) * 1e-3;
    let (mut f, mut g) = objective(x, s, y, &b);
    for _ in 0..5000 {
        if g.amax() < 1e-9 {
            break;
        }
        let d = -(&h * &g);
        let mut t = 1.0;
        let (nb, nf, ng) = loop {
            let nb = &b + &d * t;
            let (nf, ng) = objective(x, s, y, &nb);
            if nf <= f + 1e-4 * t * g.dot(&d) || t < 1e-14 {
                break (nb, nf, ng);
            }
            t *= 0.5;
        };
        let sk = &nb - &b;
        let yk = &ng - &g;
        let sy = sk.dot(&yk);
        if sy > 1e-16 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(p, p);
            let left = &i - &sk * yk.transpose() * rho;
            let right = &i - &yk * sk.transpose() * rho;
            h = &left * &h * &right + &sk * sk.transpose() * rho;
        }
        b = nb;
        f = nf;
        g = ng;
    }
    b
}

