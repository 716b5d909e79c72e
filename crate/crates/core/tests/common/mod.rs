#![allow(dead_code)]

use grab_core::{GradientMatrix, Permutation, Sorter};
use rand::rngs::StdRng;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rng: &mut StdRng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

pub fn centered(mut vs: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = vs.len() as f64;
    let d = vs[0].len();
    let mean: Vec<f64> = (0..d).map(|j| vs.iter().map(|v| v[j]).sum::<f64>() / n).collect();
    for v in &mut vs {
        v.iter_mut().zip(&mean).for_each(|(x, m)| *x -= m);
    }
    vs
}

/// Independent prefix-sum discrepancy: explicit mean, explicit prefix table.
pub fn oracle_discrepancy(vs: &[Vec<f64>], order: &[usize]) -> f64 {
    let n = order.len();
    let d = vs[0].len();
    let mut best = 0.0f64;
    for j in 0..d {
        let mean = order.iter().map(|&i| vs[i][j]).sum::<f64>() / n as f64;
        let mut run = 0.0;
        for &i in order {
            run += vs[i][j] - mean;
            best = best.max(run.abs());
        }
    }
    best
}

/// Runs one epoch over `vectors` in the sorter's current order.
pub fn run_epoch(s: &mut Sorter, vectors: &[Vec<f64>], batch: usize) -> Permutation {
    let order = s.current_order().clone();
    for chunk in order.as_slice().chunks(batch) {
        let rows: Vec<&[f64]> = chunk.iter().map(|&i| vectors[i].as_slice()).collect();
        s.step(&GradientMatrix::from_rows(chunk.to_vec(), &rows).unwrap()).unwrap();
    }
    s.next_epoch().unwrap()
}

pub fn random_order(rng: &mut StdRng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut o: Vec<usize> = (0..n).collect();
    o.shuffle(rng);
    o
}
