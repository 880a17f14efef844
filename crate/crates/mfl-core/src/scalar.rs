//! Scalar abstraction for the numerical core.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating-point scalar the core math is written against.
///
/// `of` converts an `f64` constant; every numeric literal in generic code
/// goes through it.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::NumAssign
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;

    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }
}

impl Scalar for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Scalar that can also be sampled and Fourier-transformed; required by the
/// path generators. The method indirection keeps the `rand_distr` bound out
/// of caller signatures.
pub trait SimScalar: Scalar + rustfft::FftNum {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl SimScalar for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

impl SimScalar for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}
