use rand::Rng;
use rayon::prelude::*;

use super::kernels::{axpy, dot};
use super::{glorot_uniform, ParamKind, ParamView, Real};

/// Valid (unpadded) 2-d convolution, stride 1, weights `[out][in][k][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<S> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Real> Conv2d<S> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: vec![S::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![S::zero(); out_channels],
        }
    }

    pub fn glorot<R: Rng + ?Sized>(rng: &mut R, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        let kk = kernel * kernel;
        Self {
            weight: glorot_uniform(
                rng,
                out_channels * in_channels * kk,
                in_channels * kk,
                out_channels * kk,
            ),
            ..Self::zeros(in_channels, out_channels, kernel)
        }
    }

    pub fn param_count(&self) -> usize {
        (self.in_channels * self.kernel * self.kernel + 1) * self.out_channels
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let k = self.kernel;
        (h >= k && w >= k).then(|| (h - k + 1, w - k + 1))
    }

    /// Pre-activation output, `out_channels × oh × ow`.
    pub fn forward(&self, input: &[S], h: usize, w: usize) -> Vec<S> {
        let (oh, ow) = self.output_dims(h, w).expect("input smaller than kernel");
        let (k, cin) = (self.kernel, self.in_channels);
        debug_assert_eq!(input.len(), cin * h * w);
        let mut out = vec![S::zero(); self.out_channels * oh * ow];
        out.par_chunks_mut(oh * ow).enumerate().for_each(|(f, plane)| {
            let wf = &self.weight[f * cin * k * k..(f + 1) * cin * k * k];
            for (y, row) in plane.chunks_exact_mut(ow).enumerate() {
                row.fill(self.bias[f]);
                for c in 0..cin {
                    let chan = &input[c * h * w..(c + 1) * h * w];
                    for ky in 0..k {
                        let irow = &chan[(y + ky) * w..(y + ky + 1) * w];
                        for kx in 0..k {
                            axpy(wf[(c * k + ky) * k + kx], &irow[kx..kx + ow], row);
                        }
                    }
                }
            }
        });
        out
    }

    /// Accumulates weight and bias gradients; returns the input gradient when asked.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        input: &[S],
        h: usize,
        w: usize,
        grad_out: &[S],
        grad_weight: &mut [S],
        grad_bias: &mut [S],
        want_input: bool,
    ) -> Option<Vec<S>> {
        let (oh, ow) = self.output_dims(h, w).expect("input smaller than kernel");
        let (k, cin) = (self.kernel, self.in_channels);

        grad_weight
            .par_chunks_mut(cin * k * k)
            .zip(grad_bias.par_iter_mut())
            .enumerate()
            .for_each(|(f, (gw, gb))| {
                let gplane = &grad_out[f * oh * ow..(f + 1) * oh * ow];
                *gb += gplane.iter().copied().sum::<S>();
                for c in 0..cin {
                    let chan = &input[c * h * w..(c + 1) * h * w];
                    for ky in 0..k {
                        for kx in 0..k {
                            let mut acc = S::zero();
                            for (y, grow) in gplane.chunks_exact(ow).enumerate() {
                                let start = (y + ky) * w + kx;
                                acc += dot(grow, &chan[start..start + ow]);
                            }
                            gw[(c * k + ky) * k + kx] += acc;
                        }
                    }
                }
            });

        if !want_input {
            return None;
        }
        let mut grad_in = vec![S::zero(); cin * h * w];
        grad_in.par_chunks_mut(h * w).enumerate().for_each(|(c, gchan)| {
            for f in 0..self.out_channels {
                let gplane = &grad_out[f * oh * ow..(f + 1) * oh * ow];
                let wfc = &self.weight[(f * cin + c) * k * k..(f * cin + c + 1) * k * k];
                for (y, grow) in gplane.chunks_exact(ow).enumerate() {
                    for ky in 0..k {
                        let base = (y + ky) * w;
                        for kx in 0..k {
                            axpy(wfc[ky * k + kx], grow, &mut gchan[base + kx..base + kx + ow]);
                        }
                    }
                }
            }
        });
        Some(grad_in)
    }
}

/// 2×2 max pooling with floor division; returns the pooled map and the flat argmax per cell.
pub fn max_pool2<S: Real>(input: &[S], channels: usize, h: usize, w: usize) -> (Vec<S>, Vec<u32>) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(channels * ph * pw);
    let mut arg = Vec::with_capacity(channels * ph * pw);
    for c in 0..channels {
        let base = c * h * w;
        for y in 0..ph {
            let r0 = base + 2 * y * w;
            let r1 = r0 + w;
            for x in 0..pw {
                let cand = [r0 + 2 * x, r0 + 2 * x + 1, r1 + 2 * x, r1 + 2 * x + 1];
                let mut best = cand[0];
                for &i in &cand[1..] {
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// Intermediate values of one frame's pass through a [`ConvStack`].
#[derive(Debug, Clone)]
pub struct ConvTrace<S> {
    /// Input of every block; the first is the frame itself.
    pub inputs: Vec<Vec<S>>,
    /// Pooled pre-activations of every block (positive entries passed the ReLU).
    pub pooled: Vec<Vec<S>>,
    pub argmax: Vec<Vec<u32>>,
    pub features: Vec<S>,
}

/// `C` blocks of convolution, 2×2 max pooling and ReLU applied to one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack<S> {
    pub layers: Vec<Conv2d<S>>,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
}

impl<S: Real> ConvStack<S> {
    /// Spatial size after every block, or `None` if a block has nothing left to convolve.
    pub fn stage_dims(height: usize, width: usize, conv_layers: usize, kernel: usize) -> Option<Vec<(usize, usize)>> {
        let (mut h, mut w) = (height, width);
        let mut dims = Vec::with_capacity(conv_layers);
        for _ in 0..conv_layers {
            if h < kernel || w < kernel {
                return None;
            }
            h = (h - kernel + 1) / 2;
            w = (w - kernel + 1) / 2;
            if h == 0 || w == 0 {
                return None;
            }
            dims.push((h, w));
        }
        Some(dims)
    }

    pub fn dims(&self) -> Vec<(usize, usize)> {
        let k = self.layers.first().map_or(1, |l| l.kernel);
        Self::stage_dims(self.height, self.width, self.layers.len(), k).expect("stack validated at construction")
    }

    pub fn feature_len(&self) -> usize {
        match (self.dims().last(), self.layers.last()) {
            (Some(&(h, w)), Some(l)) => h * w * l.out_channels,
            _ => self.in_channels * self.height * self.width,
        }
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Conv2d::param_count).sum()
    }

    pub fn params(&self) -> Vec<ParamView<'_, S>> {
        let mut v = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            v.push(ParamView {
                name: format!("conv.{i}.weight"),
                shape: vec![l.out_channels, l.in_channels, l.kernel, l.kernel],
                kind: ParamKind::Conv,
                data: &l.weight,
            });
            v.push(ParamView {
                name: format!("conv.{i}.bias"),
                shape: vec![l.out_channels],
                kind: ParamKind::Conv,
                data: &l.bias,
            });
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<S>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn features(&self, frame: &[S]) -> Vec<S> {
        let (mut h, mut w) = (self.height, self.width);
        let mut x = frame.to_vec();
        for l in &self.layers {
            let z = l.forward(&x, h, w);
            let (oh, ow) = l.output_dims(h, w).unwrap();
            let (mut p, _) = max_pool2(&z, l.out_channels, oh, ow);
            p.iter_mut().for_each(|v| *v = v.max(S::zero()));
            x = p;
            h = oh / 2;
            w = ow / 2;
        }
        x
    }

    pub fn trace(&self, frame: &[S]) -> ConvTrace<S> {
        let (mut h, mut w) = (self.height, self.width);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pooled = Vec::with_capacity(self.layers.len());
        let mut argmax = Vec::with_capacity(self.layers.len());
        let mut x = frame.to_vec();
        for l in &self.layers {
            let z = l.forward(&x, h, w);
            let (oh, ow) = l.output_dims(h, w).unwrap();
            let (p, a) = max_pool2(&z, l.out_channels, oh, ow);
            let next = p.iter().map(|v| v.max(S::zero())).collect();
            inputs.push(std::mem::replace(&mut x, next));
            pooled.push(p);
            argmax.push(a);
            h = oh / 2;
            w = ow / 2;
        }
        ConvTrace {
            inputs,
            pooled,
            argmax,
            features: x,
        }
    }

    /// Backpropagates a feature gradient; `grads` holds (weight, bias) slots per layer.
    /// When `grads` is `None` only the input gradient is produced.
    pub fn backward(
        &self,
        trace: &ConvTrace<S>,
        grad_features: &[S],
        mut grads: Option<&mut [Vec<S>]>,
        want_input: bool,
    ) -> Option<Vec<S>> {
        let mut dims = vec![(self.height, self.width)];
        dims.extend(self.dims());
        let mut grad = grad_features.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let (h, w) = dims[i];
            let (oh, ow) = l.output_dims(h, w).unwrap();
            let mut grad_z = vec![S::zero(); l.out_channels * oh * ow];
            for ((&g, &p), &a) in grad.iter().zip(&trace.pooled[i]).zip(&trace.argmax[i]) {
                if p > S::zero() {
                    grad_z[a as usize] += g;
                }
            }
            let need_input = i > 0 || want_input;
            let gin = match grads.as_deref_mut() {
                Some(slots) => {
                    let (gw, rest) = slots[2 * i..2 * i + 2].split_at_mut(1);
                    l.backward(&trace.inputs[i], h, w, &grad_z, &mut gw[0], &mut rest[0], need_input)
                }
                None => {
                    let mut gw = vec![S::zero(); l.weight.len()];
                    let mut gb = vec![S::zero(); l.bias.len()];
                    l.backward(&trace.inputs[i], h, w, &grad_z, &mut gw, &mut gb, need_input)
                }
            };
            match gin {
                Some(g) => grad = g,
                None => return None,
            }
        }
        Some(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_dims_default_input() {
        let d = ConvStack::<f32>::stage_dims(225, 400, 3, 5).unwrap();
        assert_eq!(d, vec![(110, 198), (53, 97), (24, 46)]);
        assert!(ConvStack::<f32>::stage_dims(6, 6, 2, 5).is_none());
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = rand::thread_rng();
        let l = Conv2d::<f64>::glorot(&mut rng, 2, 3, 3);
        let (h, w) = (5, 6);
        let x: Vec<f64> = (0..2 * h * w).map(|i| (i as f64 * 0.7).sin()).collect();
        let y = l.forward(&x, h, w);
        let (oh, ow) = (3, 4);
        for f in 0..3 {
            for yy in 0..oh {
                for xx in 0..ow {
                    let mut s = l.bias[f];
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                s += l.weight[((f * 2 + c) * 3 + ky) * 3 + kx] * x[c * h * w + (yy + ky) * w + xx + kx];
                            }
                        }
                    }
                    assert!((y[(f * oh + yy) * ow + xx] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pool_floors_odd_dims() {
        let x: Vec<f32> = (0..15).map(|v| v as f32).collect();
        let (p, a) = max_pool2(&x, 1, 3, 5);
        assert_eq!(p, vec![6.0, 8.0]);
        assert_eq!(a, vec![6, 8]);
    }
}
