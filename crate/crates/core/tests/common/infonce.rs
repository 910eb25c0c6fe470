//! Helpers for checking the contrastive loss on explicit latents.

use mucap_core::model::contrastive_loss;
use mucap_core::{Graph, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn contrastive_value(zm: &[Vec<f64>], zt: &[Vec<f64>], tau: f64, symmetric: bool) -> f64 {
    let mut g = Graph::new();
    let a = g.constant(Tensor::from_rows(zm).unwrap());
    let b = g.constant(Tensor::from_rows(zt).unwrap());
    let l = contrastive_loss(&mut g, a, b, tau, symmetric).unwrap();
    g.item(l)
}

pub fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Random orthogonal matrix by Gram-Schmidt.
pub fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.iter().map(|x| x / norm).collect());
        }
    }
    basis
}

pub fn rotate(rows: &[Vec<f64>], r: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|z| {
            (0..r.len())
                .map(|j| (0..z.len()).map(|i| z[i] * r[i][j]).sum())
                .collect()
        })
        .collect()
}
