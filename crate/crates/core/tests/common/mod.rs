//! Independent reference implementations used as test oracles. Everything
//! here works on plain slices and shares no code with the library.
#![allow(dead_code)]

use pmkg::numerics::{MlpParams, Tensor};
use rand::Rng;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

/// `x · W` for row-major `W: [in, out]`.
pub fn vec_mat(x: &[f64], w: &Tensor) -> Vec<f64> {
    let (n, p) = (w.rows(), w.cols());
    assert_eq!(x.len(), n);
    (0..p).map(|j| (0..n).map(|k| x[k] * w.data()[k * p + j]).sum()).collect()
}

pub fn leaky(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn softmax_ref(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn mlp(params: &MlpParams, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let last = params.layers.len() - 1;
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = vec_mat(&h, &layer.weight);
        for (zi, b) in z.iter_mut().zip(layer.bias.data()) {
            *zi += b;
        }
        if i < last || params.output_activation {
            z.iter_mut().for_each(|v| *v = leaky(*v, params.slope));
        }
        h = z;
    }
    h
}

pub fn gaussian_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}
