use rand::Rng;
use rayon::prelude::*;

use super::kernels::{axpy, dot};
use super::{glorot_uniform, sigmoid, Real};

/// LSTM layer with gate blocks ordered input, forget, cell, output.
///
/// `kernel` is `[4U][input]`, `recurrent` is `[4U][U]`, `bias` is `[4U]`.
///
/// ```text
/// z_t = K·x_t + R·h_{t−1} + b
/// i, f, o = σ(z_i), σ(z_f), σ(z_o);  g = tanh(z_g)
/// c_t = f⊙c_{t−1} + i⊙g;  h_t = o⊙tanh(c_t)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm<S> {
    pub input: usize,
    pub units: usize,
    pub kernel: Vec<S>,
    pub recurrent: Vec<S>,
    pub bias: Vec<S>,
}

/// Per-step activations kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmTrace<S> {
    /// Gate activations `[i | f | g | o]` per step.
    pub gates: Vec<Vec<S>>,
    pub cells: Vec<Vec<S>>,
    pub hidden: Vec<Vec<S>>,
}

impl<S: Real> Lstm<S> {
    pub fn zeros(input: usize, units: usize) -> Self {
        Self {
            input,
            units,
            kernel: vec![S::zero(); 4 * units * input],
            recurrent: vec![S::zero(); 4 * units * units],
            bias: vec![S::zero(); 4 * units],
        }
    }

    /// Glorot-uniform matrices, zero bias except a forget-gate bias of one.
    pub fn glorot<R: Rng + ?Sized>(rng: &mut R, input: usize, units: usize) -> Self {
        let mut bias = vec![S::zero(); 4 * units];
        bias[units..2 * units].fill(S::one());
        Self {
            input,
            units,
            kernel: glorot_uniform(rng, 4 * units * input, input, 4 * units),
            recurrent: glorot_uniform(rng, 4 * units * units, units, 4 * units),
            bias,
        }
    }

    pub fn param_count(&self) -> usize {
        4 * ((self.input + self.units) * self.units + self.units)
    }

    /// `K·x_t + b` for every step, computed row by row so each kernel row is read once.
    fn project_inputs(&self, xs: &[Vec<S>]) -> Vec<Vec<S>> {
        let t_len = xs.len();
        let rows = 4 * self.units;
        let mut by_row = vec![S::zero(); rows * t_len];
        by_row.par_chunks_mut(t_len).enumerate().for_each(|(r, out)| {
            let krow = &self.kernel[r * self.input..(r + 1) * self.input];
            for (o, x) in out.iter_mut().zip(xs) {
                *o = dot(krow, x) + self.bias[r];
            }
        });
        (0..t_len)
            .map(|t| (0..rows).map(|r| by_row[r * t_len + t]).collect())
            .collect()
    }

    pub fn trace(&self, xs: &[Vec<S>]) -> LstmTrace<S> {
        let u = self.units;
        let mut pre = self.project_inputs(xs);
        let mut gates = Vec::with_capacity(xs.len());
        let mut cells: Vec<Vec<S>> = Vec::with_capacity(xs.len());
        let mut hidden: Vec<Vec<S>> = Vec::with_capacity(xs.len());
        for z in pre.iter_mut() {
            if let Some(h_prev) = hidden.last() {
                for (r, zr) in z.iter_mut().enumerate() {
                    *zr += dot(&self.recurrent[r * u..(r + 1) * u], h_prev);
                }
            }
            let mut g = vec![S::zero(); 4 * u];
            let mut c = vec![S::zero(); u];
            let mut h = vec![S::zero(); u];
            for j in 0..u {
                let i_g = sigmoid(z[j]);
                let f_g = sigmoid(z[u + j]);
                let c_g = z[2 * u + j].tanh();
                let o_g = sigmoid(z[3 * u + j]);
                let c_prev = cells.last().map_or(S::zero(), |cp| cp[j]);
                c[j] = f_g * c_prev + i_g * c_g;
                h[j] = o_g * c[j].tanh();
                g[j] = i_g;
                g[u + j] = f_g;
                g[2 * u + j] = c_g;
                g[3 * u + j] = o_g;
            }
            gates.push(g);
            cells.push(c);
            hidden.push(h);
        }
        LstmTrace { gates, cells, hidden }
    }

    pub fn forward(&self, xs: &[Vec<S>]) -> Vec<Vec<S>> {
        self.trace(xs).hidden
    }

    /// Backpropagation through time.
    ///
    /// `grad_hidden[t]` is the loss gradient w.r.t. `h_t` from downstream
    /// consumers. Gradients are accumulated into `grads = [kernel, recurrent, bias]`
    /// when given; the input gradient per step is returned when `want_input`.
    pub fn backward(
        &self,
        xs: &[Vec<S>],
        trace: &LstmTrace<S>,
        grad_hidden: &[Vec<S>],
        grads: Option<&mut [Vec<S>]>,
        want_input: bool,
    ) -> Option<Vec<Vec<S>>> {
        let u = self.units;
        let t_len = xs.len();
        let one = S::one();
        let mut dz_all = vec![vec![S::zero(); 4 * u]; t_len];
        let mut dh_next = vec![S::zero(); u];
        let mut dc_next = vec![S::zero(); u];
        for t in (0..t_len).rev() {
            let g = &trace.gates[t];
            let c = &trace.cells[t];
            let dz = &mut dz_all[t];
            for j in 0..u {
                let (i_g, f_g, c_g, o_g) = (g[j], g[u + j], g[2 * u + j], g[3 * u + j]);
                let dh = grad_hidden[t][j] + dh_next[j];
                let tc = c[j].tanh();
                let dc = dh * o_g * (one - tc * tc) + dc_next[j];
                let c_prev = if t > 0 { trace.cells[t - 1][j] } else { S::zero() };
                dz[j] = dc * c_g * i_g * (one - i_g);
                dz[u + j] = dc * c_prev * f_g * (one - f_g);
                dz[2 * u + j] = dc * i_g * (one - c_g * c_g);
                dz[3 * u + j] = dh * tc * o_g * (one - o_g);
                dc_next[j] = dc * f_g;
            }
            dh_next.fill(S::zero());
            for (r, &d) in dz.iter().enumerate() {
                if d != S::zero() {
                    axpy(d, &self.recurrent[r * u..(r + 1) * u], &mut dh_next);
                }
            }
        }

        if let Some(slots) = grads {
            let (gk, rest) = slots.split_at_mut(1);
            let (gr, gb) = rest.split_at_mut(1);
            let (gk, gr, gb) = (&mut gk[0], &mut gr[0], &mut gb[0]);
            gk.par_chunks_mut(self.input).enumerate().for_each(|(r, row)| {
                for (dz, x) in dz_all.iter().zip(xs) {
                    if dz[r] != S::zero() {
                        axpy(dz[r], x, row);
                    }
                }
            });
            for t in 0..t_len {
                for r in 0..4 * u {
                    let d = dz_all[t][r];
                    gb[r] += d;
                    if t > 0 && d != S::zero() {
                        axpy(d, &trace.hidden[t - 1], &mut gr[r * u..(r + 1) * u]);
                    }
                }
            }
        }

        if !want_input {
            return None;
        }
        Some(
            dz_all
                .par_iter()
                .map(|dz| {
                    let mut dx = vec![S::zero(); self.input];
                    for (r, &d) in dz.iter().enumerate() {
                        if d != S::zero() {
                            axpy(d, &self.kernel[r * self.input..(r + 1) * self.input], &mut dx);
                        }
                    }
                    dx
                })
                .collect(),
        )
    }
}
