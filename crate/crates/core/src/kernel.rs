//! Sign-assignment kernels.
//!
//! A kernel looks at the running signed sum `a` and an incoming vector `v`
//! and picks `s` in {+1, -1} so that `a + s*v` stays small. Two kernels are
//! provided: a deterministic inner-product rule and a probabilistic rule whose
//! bias towards the shrinking sign is controlled by a bound `c`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::util::{dot, norm_sq};

/// Multiplier applied to the running maximum vector norm when no explicit
/// bound is configured for the probabilistic kernel.
pub const DEFAULT_C_MULTIPLIER: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    #[inline]
    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    #[inline]
    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    #[inline]
    pub fn is_plus(self) -> bool {
        self == Sign::Plus
    }
}

impl core::ops::Neg for Sign {
    type Output = Sign;

    fn neg(self) -> Sign {
        self.flip()
    }
}

/// Running signed sum of balanced vectors.
///
/// The squared L2 norm is recomputed in the same pass as every update, so the
/// cached value is exact up to the summation rounding of a single pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Accumulator {
    values: Vec<f64>,
    norm_cache: Option<f64>,
}

impl Accumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            norm_cache: Some(0.0),
        }
    }

    /// Accumulator that skips norm bookkeeping.
    pub fn without_norm_cache(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            norm_cache: None,
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        let n = norm_sq(&values);
        Self {
            values,
            norm_cache: Some(n),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm_cache(&self) -> Option<f64> {
        self.norm_cache
    }

    pub fn norm_sq(&self) -> f64 {
        self.norm_cache.unwrap_or_else(|| norm_sq(&self.values))
    }

    pub fn norm_l2(&self) -> f64 {
        libm::sqrt(self.norm_sq())
    }

    pub fn norm_inf(&self) -> f64 {
        crate::util::norm_inf(&self.values)
    }

    pub fn dot(&self, v: &[f64]) -> Result<f64> {
        check_dim(self.dim(), v.len())?;
        Ok(dot(&self.values, v))
    }

    /// `a += scale * v` without the sign wrapper; used for bulk updates.
    pub fn add_scaled(&mut self, v: &[f64], scale: f64) -> Result<()> {
        check_dim(self.dim(), v.len())?;
        match self.norm_cache.as_mut() {
            Some(cache) => {
                let mut sq = 0.0;
                for (a, x) in self.values.iter_mut().zip(v) {
                    *a += scale * x;
                    sq += *a * *a;
                }
                *cache = sq;
            }
            None => {
                for (a, x) in self.values.iter_mut().zip(v) {
                    *a += scale * x;
                }
            }
        }
        Ok(())
    }

    pub fn reset(&mut self) {
        self.values.iter_mut().for_each(|a| *a = 0.0);
        if let Some(c) = self.norm_cache.as_mut() {
            *c = 0.0;
        }
    }
}

/// `+1` iff `<a, v> <= 0`; the tie (including the zero accumulator) goes to `+1`.
pub fn deterministic_sign(acc: &Accumulator, v: &[f64]) -> Result<Sign> {
    let ip = acc.dot(v)?;
    Ok(sign_from_dot(ip))
}

#[inline]
pub(crate) fn sign_from_dot(ip: f64) -> Sign {
    if ip <= 0.0 {
        Sign::Plus
    } else {
        Sign::Minus
    }
}

/// Probability of choosing `+1` under the probabilistic kernel.
#[inline]
pub fn plus_probability(ip: f64, c_bound: f64) -> f64 {
    (0.5 * (1.0 - ip / c_bound)).clamp(0.0, 1.0)
}

/// Outcome of one probabilistic draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub sign: Sign,
    /// `|<a, v>| > c`, i.e. the probability was clamped.
    pub overflowed: bool,
}

/// Draws `+1` with probability `clamp((1 - <a,v>/c) / 2, 0, 1)`.
///
/// Consumes exactly one uniform variate from `rng`.
pub fn probabilistic_sign<R: Rng + ?Sized>(
    acc: &Accumulator,
    v: &[f64],
    c_bound: f64,
    rng: &mut R,
) -> Result<Draw> {
    if !(c_bound > 0.0) || !c_bound.is_finite() {
        return Err(Error::Config(alloc::format!(
            "c_bound must be positive and finite, got {c_bound}"
        )));
    }
    let ip = acc.dot(v)?;
    Ok(draw_from_dot(ip, c_bound, rng))
}

#[inline]
fn draw_from_dot<R: Rng + ?Sized>(ip: f64, c_bound: f64, rng: &mut R) -> Draw {
    let p = plus_probability(ip, c_bound);
    let u: f64 = rng.gen();
    Draw {
        sign: if u < p { Sign::Plus } else { Sign::Minus },
        overflowed: libm::fabs(ip) > c_bound,
    }
}

/// `acc += s * v`.
pub fn accumulate(acc: &mut Accumulator, v: &[f64], s: Sign) -> Result<()> {
    acc.add_scaled(v, s.as_f64())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    Deterministic,
    Probabilistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kind: KernelKind,
    /// Explicit bound `c` for the probabilistic kernel. `None` selects
    /// `DEFAULT_C_MULTIPLIER` times the largest vector norm seen this epoch.
    pub c_bound: Option<f64>,
    pub seed: u64,
}

impl KernelConfig {
    pub const fn deterministic() -> Self {
        Self {
            kind: KernelKind::Deterministic,
            c_bound: None,
            seed: 0,
        }
    }

    pub const fn probabilistic(c_bound: Option<f64>, seed: u64) -> Self {
        Self {
            kind: KernelKind::Probabilistic,
            c_bound,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.c_bound {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::Config(alloc::format!(
                    "c_bound must be positive and finite, got {c}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self::deterministic()
    }
}

/// A configured kernel with its own random stream and diagnostics.
///
/// Owned by exactly one sorter; never shared.
#[derive(Debug, Clone)]
pub struct Balancer {
    config: KernelConfig,
    rng: ChaCha8Rng,
    overflow_count: u64,
    calls: u64,
    max_norm: f64,
}

impl Balancer {
    pub fn new(config: KernelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            overflow_count: 0,
            calls: 0,
            max_norm: 0.0,
        })
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn overflow_count(&self) -> u64 {
        self.overflow_count
    }

    /// Kernel invocations since construction.
    pub fn calls(&self) -> u64 {
        self.calls
    }

    /// Sign for `v` against `acc`. Does not mutate `acc`.
    pub fn sign(&mut self, acc: &Accumulator, v: &[f64]) -> Result<Sign> {
        let ip = acc.dot(v)?;
        Ok(self.sign_for_dot(ip, v))
    }

    /// Kernel decision given a precomputed `<a, v>`.
    pub(crate) fn sign_for_dot(&mut self, ip: f64, v: &[f64]) -> Sign {
        self.calls += 1;
        match self.config.kind {
            KernelKind::Deterministic => sign_from_dot(ip),
            KernelKind::Probabilistic => {
                let c = match self.config.c_bound {
                    Some(c) => c,
                    None => {
                        self.max_norm = self.max_norm.max(libm::sqrt(norm_sq(v)));
                        DEFAULT_C_MULTIPLIER * self.max_norm
                    }
                };
                if c <= 0.0 {
                    // only reachable with an all-zero history, where ip == 0
                    let u: f64 = self.rng.gen();
                    return if u < 0.5 { Sign::Plus } else { Sign::Minus };
                }
                let draw = draw_from_dot(ip, c, &mut self.rng);
                if draw.overflowed {
                    self.overflow_count += 1;
                }
                draw.sign
            }
        }
    }

    /// Starts a new epoch: the automatic bound is recomputed from scratch.
    pub fn new_epoch(&mut self) {
        self.max_norm = 0.0;
    }
}
