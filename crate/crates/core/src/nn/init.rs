//! Weight initializers for `[in, out]` matrices.
//!
//! Xavier variants scale by `in + out`, He variants by `in` alone. The He
//! normal draw is truncated: anything beyond two standard deviations is
//! resampled.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Initializer {
    Zero,
    XavierNormal,
    XavierUniform,
    HeNormal,
    HeUniform,
    Identity,
}

impl Initializer {
    pub const ALL: [Initializer; 6] = [
        Initializer::Zero,
        Initializer::XavierNormal,
        Initializer::XavierUniform,
        Initializer::HeNormal,
        Initializer::HeUniform,
        Initializer::Identity,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Initializer::Zero => "zero",
            Initializer::XavierNormal => "xavier_normal",
            Initializer::XavierUniform => "xavier_uniform",
            Initializer::HeNormal => "he_normal",
            Initializer::HeUniform => "he_uniform",
            Initializer::Identity => "identity",
        }
    }

    /// Initializes a weight matrix of `shape = [in, out]`.
    pub fn weight(self, shape: &[usize], rng: &mut impl Rng) -> Result<Tensor, NnError> {
        match self {
            Initializer::Zero => Ok(init_zero(shape)),
            Initializer::XavierNormal => init_xavier_normal(shape, rng),
            Initializer::XavierUniform => init_xavier_uniform(shape, rng),
            Initializer::HeNormal => init_he_normal(shape, rng),
            Initializer::HeUniform => init_he_uniform(shape, rng),
            Initializer::Identity => init_identity(shape),
        }
    }
}

impl fmt::Display for Initializer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Initializer {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Initializer::ALL
            .into_iter()
            .find(|i| i.tag() == s)
            .ok_or_else(|| NnError::UnknownInitializer(s.to_string()))
    }
}

/// Seeded generator for one independent stream of draws. Distinct `stream`
/// values under the same seed never share output.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn fans(shape: &[usize]) -> Result<(usize, usize), NnError> {
    match shape {
        [fan_in, fan_out] if *fan_in > 0 && *fan_out > 0 => Ok((*fan_in, *fan_out)),
        _ => Err(NnError::BadShape(shape.to_vec())),
    }
}

pub fn init_zero(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape)
}

pub fn xavier_normal_std(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn xavier_uniform_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn he_normal_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

pub fn he_uniform_limit(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn sample_matrix(shape: &[usize], mut draw: impl FnMut() -> f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_parts_unchecked(shape.to_vec(), (0..n).map(|_| draw()).collect())
}

pub fn init_xavier_normal(shape: &[usize], rng: &mut impl Rng) -> Result<Tensor, NnError> {
    let (i, o) = fans(shape)?;
    let dist = Normal::new(0.0, xavier_normal_std(i, o)).expect("positive std");
    Ok(sample_matrix(shape, || dist.sample(rng)))
}

pub fn init_xavier_uniform(shape: &[usize], rng: &mut impl Rng) -> Result<Tensor, NnError> {
    let (i, o) = fans(shape)?;
    let limit = xavier_uniform_limit(i, o);
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    Ok(sample_matrix(shape, || dist.sample(rng)))
}

pub fn init_he_normal(shape: &[usize], rng: &mut impl Rng) -> Result<Tensor, NnError> {
    let (i, _) = fans(shape)?;
    let std = he_normal_std(i);
    let dist = Normal::new(0.0, std).expect("positive std");
    Ok(sample_matrix(shape, || loop {
        let x = dist.sample(rng);
        if x.abs() <= 2.0 * std {
            break x;
        }
    }))
}

pub fn init_he_uniform(shape: &[usize], rng: &mut impl Rng) -> Result<Tensor, NnError> {
    let (i, _) = fans(shape)?;
    let limit = he_uniform_limit(i);
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    Ok(sample_matrix(shape, || dist.sample(rng)))
}

/// Partial identity: ones on the leading diagonal of a possibly rectangular
/// matrix.
pub fn init_identity(shape: &[usize]) -> Result<Tensor, NnError> {
    let (i, o) = fans(shape)?;
    let mut t = Tensor::zeros(shape);
    for d in 0..i.min(o) {
        t.data_mut()[d * o + d] = 1.0;
    }
    Ok(t)
}
