use rand::Rng;

use super::kernels::{axpy, dot};
use super::{glorot_uniform, Real};

/// Fully connected layer, weights `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S> {
    pub input: usize,
    pub output: usize,
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Real> Dense<S> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            input,
            output,
            weight: vec![S::zero(); input * output],
            bias: vec![S::zero(); output],
        }
    }

    pub fn glorot<R: Rng + ?Sized>(rng: &mut R, input: usize, output: usize) -> Self {
        Self {
            weight: glorot_uniform(rng, input * output, input, output),
            ..Self::zeros(input, output)
        }
    }

    pub fn param_count(&self) -> usize {
        (self.input + 1) * self.output
    }

    pub fn forward(&self, x: &[S]) -> Vec<S> {
        (0..self.output)
            .map(|o| dot(&self.weight[o * self.input..(o + 1) * self.input], x) + self.bias[o])
            .collect()
    }

    /// Accumulates `[weight, bias]` gradients and returns the input gradient.
    pub fn backward(&self, x: &[S], grad_out: &[S], grads: Option<&mut [Vec<S>]>) -> Vec<S> {
        if let Some(slots) = grads {
            let (gw, gb) = slots.split_at_mut(1);
            for (o, &g) in grad_out.iter().enumerate() {
                axpy(g, x, &mut gw[0][o * self.input..(o + 1) * self.input]);
                gb[0][o] += g;
            }
        }
        let mut dx = vec![S::zero(); self.input];
        for (o, &g) in grad_out.iter().enumerate() {
            axpy(g, &self.weight[o * self.input..(o + 1) * self.input], &mut dx);
        }
        dx
    }
}
