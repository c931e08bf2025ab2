//! Small dense-tensor neural network layers with hand-written backward passes.
//!
//! Everything is generic over [`Real`] so the same code runs in `f32` for
//! training and inference and in `f64` for finite-difference gradient checks.
//! Feature maps are stored channel-major (`C×H×W`), matrices row-major.

pub mod adam;
pub mod conv;
pub mod dense;
pub mod kernels;
pub mod lstm;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

pub use adam::{Adam, AdamConfig};
pub use conv::{Conv2d, ConvStack, ConvTrace};
pub use dense::Dense;
pub use lstm::{Lstm, LstmTrace};

pub trait Real:
    Float + FromPrimitive + ToPrimitive + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub fn sigmoid<S: Real>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// Uniform fan-based (Glorot) initialization in `±sqrt(6/(fan_in+fan_out))`.
pub fn glorot_uniform<S: Real, R: Rng + ?Sized>(rng: &mut R, len: usize, fan_in: usize, fan_out: usize) -> Vec<S> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| S::lit(rng.gen_range(-limit..limit))).collect()
}

/// Which part of a network a parameter group belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Conv,
    Head,
}

/// Read-only view of one named parameter group.
#[derive(Debug)]
pub struct ParamView<'a, S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub data: &'a [S],
}

/// Gradients aligned with a model's parameter groups; frozen groups may be empty.
pub type Gradients<S> = Vec<Vec<S>>;

pub fn zeros_like<S: Real>(views: &[ParamView<'_, S>]) -> Gradients<S> {
    views.iter().map(|v| vec![S::zero(); v.data.len()]).collect()
}

pub fn cast_vec<A: Real, B: Real>(v: &[A]) -> Vec<B> {
    v.iter().map(|x| B::from_f64(x.to_f64().unwrap()).unwrap()).collect()
}
