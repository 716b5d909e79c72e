//! Herding discrepancy: the largest infinity norm reached by the prefix sums
//! of mean-centered vectors visited in a given order.

use alloc::vec;

use crate::error::{check_dim, Error, Result};

/// Discrepancy of `vectors` visited in the order given, after centering by
/// their own mean.
pub fn herding_discrepancy<V: AsRef<[f64]>>(vectors: &[V]) -> Result<f64> {
    let idx: alloc::vec::Vec<usize> = (0..vectors.len()).collect();
    ordered_discrepancy(vectors, &idx)
}

/// Discrepancy of `vectors` visited as `order[0], order[1], ...`.
///
/// `order` must index into `vectors`; the mean is taken over the indexed
/// vectors.
pub fn ordered_discrepancy<V: AsRef<[f64]>>(vectors: &[V], order: &[usize]) -> Result<f64> {
    let first = order.first().ok_or(Error::EmptyBatch)?;
    let d = vectors
        .get(*first)
        .ok_or(Error::ExampleOutOfRange { id: *first, n: vectors.len() })?
        .as_ref()
        .len();
    let mut mean = vec![0.0; d];
    for &i in order {
        let v = vectors
            .get(i)
            .ok_or(Error::ExampleOutOfRange { id: i, n: vectors.len() })?
            .as_ref();
        check_dim(d, v.len())?;
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
    }
    let n = order.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);

    let mut prefix = vec![0.0; d];
    let mut worst = 0.0f64;
    for &i in order {
        for ((p, x), m) in prefix.iter_mut().zip(vectors[i].as_ref()).zip(&mean) {
            *p += x - m;
            worst = worst.max(p.abs());
        }
    }
    Ok(worst)
}
