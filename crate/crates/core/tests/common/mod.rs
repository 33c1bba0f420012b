//! Oracles and builders shared by the integration tests. The oracles are
//! deliberately naive re-derivations, independent of the library code.

#![allow(dead_code)]

use std::path::PathBuf;

use conceptcf::classifier::{train, ClassifierWeights, TrainConfig};
use conceptcf::providers::{generate_world, WorldConfig};
use conceptcf::DatasetManifest;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/metric_cohort")
}

/// Binomial coefficient by the multiplicative formula.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r as usize
}

/// O(n²) Pareto oracle for maximization: indices not dominated by any other
/// point, ascending.
pub fn brute_force_front(points: &[Vec<f64>]) -> Vec<usize> {
    let dominated = |a: &Vec<f64>, b: &Vec<f64>| {
        // does b dominate a?
        let mut strictly = false;
        for (x, y) in a.iter().zip(b) {
            if y < x {
                return false;
            }
            if y > x {
                strictly = true;
            }
        }
        strictly
    };
    (0..points.len())
        .filter(|&i| !(0..points.len()).any(|j| j != i && dominated(&points[i], &points[j])))
        .collect()
}

/// Minimum of the ordered-pair similarity sum over all `q`-subsets, by
/// bitmask enumeration. Returns every minimizing subset.
pub fn brute_force_subsets(sim: &[Vec<f64>], q: usize) -> (f64, Vec<Vec<usize>>) {
    let n = sim.len();
    if q >= n {
        let all: Vec<usize> = (0..n).collect();
        let mut s = 0.0;
        for &i in &all {
            for &j in &all {
                if i != j {
                    s += sim[i][j];
                }
            }
        }
        return (s, vec![all]);
    }
    let mut best = f64::INFINITY;
    let mut arg = Vec::new();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != q {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let mut s = 0.0;
        for &i in &members {
            for &j in &members {
                if i != j {
                    s += sim[i][j];
                }
            }
        }
        if s < best - 1e-12 {
            best = s;
            arg = vec![members];
        } else if (s - best).abs() <= 1e-12 {
            arg.push(members);
        }
    }
    (best, arg)
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}

/// The secret-tag world used by the end-to-end checks, trained with a
/// learning rate of 1e-2.
pub fn secret_world() -> (DatasetManifest, ClassifierWeights) {
    let manifest = generate_world(&WorldConfig::default()).unwrap();
    let (weights, _) = train(
        &manifest,
        &TrainConfig {
            learning_rate: 1e-2,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    (manifest, weights)
}

/// Finite-difference step for gradient checks.
pub const H: f64 = 1e-6;

pub fn gaussian(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>()
}

pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

pub fn central(f: impl Fn(&[f64]) -> f64, at: &[f64]) -> Vec<f64> {
    (0..at.len())
        .map(|i| {
            let mut up = at.to_vec();
            let mut down = at.to_vec();
            up[i] += H;
            down[i] -= H;
            (f(&up) - f(&down)) / (2.0 * H)
        })
        .collect()
}
