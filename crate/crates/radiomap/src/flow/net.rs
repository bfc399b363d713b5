//! Small convolutional residual network used as the velocity field.
//!
//! The input is two channels (the map in model space plus a constant channel
//! holding the flow time), the output is one channel. Parameters live in a
//! single flat vector with named segments; forward and reverse passes are
//! hand-written so gradients are exact and the whole thing stays in f64.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Input channels: the map itself plus the constant time channel.
pub const INPUT_CHANNELS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeConditioning {
    /// The flow time enters as one constant extra input channel.
    ConstantChannel,
}

/// Architecture descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    /// Width of the hidden feature maps.
    pub channels: usize,
    /// Number of hidden convolutions (the stem plus residual blocks).
    pub hidden_layers: usize,
    /// Odd square kernel size.
    pub kernel: usize,
    pub activation: Activation,
    pub time_conditioning: TimeConditioning,
}

impl Default for Arch {
    fn default() -> Self {
        Arch {
            channels: 32,
            hidden_layers: 4,
            kernel: 3,
            // tanh keeps the predicted velocity bounded, which keeps the
            // plug-and-play inner loop from wandering off the data range
            activation: Activation::Tanh,
            time_conditioning: TimeConditioning::ConstantChannel,
        }
    }
}

/// One named span of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConvSpan {
    in_ch: usize,
    out_ch: usize,
    w_off: usize,
    b_off: usize,
}

impl Arch {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.hidden_layers == 0 {
            return Err(Error::InvalidConfig(
                "network needs at least one channel and one hidden layer".into(),
            ));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "kernel size must be odd, got {}",
                self.kernel
            )));
        }
        Ok(())
    }

    pub fn residual_blocks(&self) -> usize {
        self.hidden_layers - 1
    }

    fn conv_spans(&self) -> Vec<ConvSpan> {
        let k2 = self.kernel * self.kernel;
        let mut spans = Vec::with_capacity(self.hidden_layers + 1);
        let mut off = 0;
        let push = |off: &mut usize, in_ch: usize, out_ch: usize| {
            let span = ConvSpan {
                in_ch,
                out_ch,
                w_off: *off,
                b_off: *off + out_ch * in_ch * k2,
            };
            *off = span.b_off + out_ch;
            span
        };
        spans.push(push(&mut off, INPUT_CHANNELS, self.channels));
        for _ in 0..self.residual_blocks() {
            spans.push(push(&mut off, self.channels, self.channels));
        }
        spans.push(push(&mut off, self.channels, 1));
        spans
    }

    pub fn param_count(&self) -> usize {
        let k2 = self.kernel * self.kernel;
        let conv = |i: usize, o: usize| o * i * k2 + o;
        conv(INPUT_CHANNELS, self.channels)
            + self.residual_blocks() * conv(self.channels, self.channels)
            + conv(self.channels, 1)
    }

    /// Named parameter segments in flat-vector order.
    pub fn segments(&self) -> Vec<Segment> {
        let k2 = self.kernel * self.kernel;
        let mut segments = Vec::new();
        let mut conv = |name: &str, i: usize, o: usize| {
            segments.push(Segment {
                name: format!("{name}.weight"),
                len: o * i * k2,
            });
            segments.push(Segment {
                name: format!("{name}.bias"),
                len: o,
            });
        };
        conv("stem", INPUT_CHANNELS, self.channels);
        for b in 0..self.residual_blocks() {
            conv(&format!("block{b}"), self.channels, self.channels);
        }
        conv("head", self.channels, 1);
        segments
    }

    /// He-style initialization; the head starts at zero so the untrained
    /// field predicts zero velocity.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k2 = self.kernel * self.kernel;
        let spans = self.conv_spans();
        for span in &spans[..spans.len() - 1] {
            let std = (2.0 / (span.in_ch as f64 * k2 as f64)).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for w in &mut params[span.w_off..span.b_off] {
                *w = normal.sample(&mut rng);
            }
        }
        params
    }
}

/// Adds `w * shift(x_plane)` into `out_plane` for one kernel tap.
#[inline]
fn accumulate_tap(
    out_plane: &mut [f64],
    x_plane: &[f64],
    w: f64,
    rows: usize,
    cols: usize,
    dr: isize,
    dc: isize,
) {
    let r_lo = (-dr).max(0) as usize;
    let r_hi = (rows as isize).min(rows as isize - dr) as usize;
    let c_lo = (-dc).max(0) as usize;
    let c_hi = (cols as isize).min(cols as isize - dc) as usize;
    if c_lo >= c_hi {
        return;
    }
    for r in r_lo..r_hi {
        let xr = (r as isize + dr) as usize;
        let xc = (c_lo as isize + dc) as usize;
        let dst = &mut out_plane[r * cols + c_lo..r * cols + c_hi];
        let src = &x_plane[xr * cols + xc..xr * cols + xc + (c_hi - c_lo)];
        for (d, s) in dst.iter_mut().zip(src) {
            *d += w * s;
        }
    }
}

/// Dot product of `grad_plane` with the shifted `x_plane` (one kernel tap).
#[inline]
fn tap_dot(
    grad_plane: &[f64],
    x_plane: &[f64],
    rows: usize,
    cols: usize,
    dr: isize,
    dc: isize,
) -> f64 {
    let r_lo = (-dr).max(0) as usize;
    let r_hi = (rows as isize).min(rows as isize - dr) as usize;
    let c_lo = (-dc).max(0) as usize;
    let c_hi = (cols as isize).min(cols as isize - dc) as usize;
    if c_lo >= c_hi {
        return 0.0;
    }
    let mut acc = 0.0;
    for r in r_lo..r_hi {
        let xr = (r as isize + dr) as usize;
        let xc = (c_lo as isize + dc) as usize;
        let g = &grad_plane[r * cols + c_lo..r * cols + c_hi];
        let x = &x_plane[xr * cols + xc..xr * cols + xc + (c_hi - c_lo)];
        for (gv, xv) in g.iter().zip(x) {
            acc += gv * xv;
        }
    }
    acc
}

fn conv_forward(
    params: &[f64],
    span: ConvSpan,
    kernel: usize,
    x: &[f64],
    rows: usize,
    cols: usize,
    out: &mut [f64],
) {
    let n = rows * cols;
    let kc = (kernel / 2) as isize;
    for o in 0..span.out_ch {
        let out_plane = &mut out[o * n..(o + 1) * n];
        out_plane.fill(params[span.b_off + o]);
        for i in 0..span.in_ch {
            let x_plane = &x[i * n..(i + 1) * n];
            for kr in 0..kernel {
                for kcix in 0..kernel {
                    let w =
                        params[span.w_off + ((o * span.in_ch + i) * kernel + kr) * kernel + kcix];
                    accumulate_tap(
                        out_plane,
                        x_plane,
                        w,
                        rows,
                        cols,
                        kr as isize - kc,
                        kcix as isize - kc,
                    );
                }
            }
        }
    }
}

/// Accumulates parameter gradients and (optionally) the input gradient for
/// one convolution given `grad_out`.
fn conv_backward(
    params: &[f64],
    span: ConvSpan,
    kernel: usize,
    x: &[f64],
    grad_out: &[f64],
    rows: usize,
    cols: usize,
    grad_params: &mut [f64],
    mut grad_in: Option<&mut [f64]>,
) {
    let n = rows * cols;
    let kc = (kernel / 2) as isize;
    for o in 0..span.out_ch {
        let g_plane = &grad_out[o * n..(o + 1) * n];
        grad_params[span.b_off + o] += g_plane.iter().sum::<f64>();
        for i in 0..span.in_ch {
            let x_plane = &x[i * n..(i + 1) * n];
            for kr in 0..kernel {
                for kcix in 0..kernel {
                    let dr = kr as isize - kc;
                    let dc = kcix as isize - kc;
                    let w_idx =
                        span.w_off + ((o * span.in_ch + i) * kernel + kr) * kernel + kcix;
                    grad_params[w_idx] += tap_dot(g_plane, x_plane, rows, cols, dr, dc);
                    if let Some(gi) = grad_in.as_deref_mut() {
                        // d out[r, c] / d x[r + dr, c + dc] = w
                        let gi_plane = &mut gi[i * n..(i + 1) * n];
                        scatter_tap(gi_plane, g_plane, params[w_idx], rows, cols, dr, dc);
                    }
                }
            }
        }
    }
}

/// Adds `w * grad_plane` into the shifted region of `gi_plane`.
#[inline]
fn scatter_tap(
    gi_plane: &mut [f64],
    grad_plane: &[f64],
    w: f64,
    rows: usize,
    cols: usize,
    dr: isize,
    dc: isize,
) {
    let r_lo = (-dr).max(0) as usize;
    let r_hi = (rows as isize).min(rows as isize - dr) as usize;
    let c_lo = (-dc).max(0) as usize;
    let c_hi = (cols as isize).min(cols as isize - dc) as usize;
    if c_lo >= c_hi {
        return;
    }
    for r in r_lo..r_hi {
        let xr = (r as isize + dr) as usize;
        let xc = (c_lo as isize + dc) as usize;
        let src = &grad_plane[r * cols + c_lo..r * cols + c_hi];
        let dst = &mut gi_plane[xr * cols + xc..xr * cols + xc + (c_hi - c_lo)];
        for (d, s) in dst.iter_mut().zip(src) {
            *d += w * s;
        }
    }
}

/// Velocity evaluation without caching.
pub(crate) fn forward(
    arch: &Arch,
    params: &[f64],
    rows: usize,
    cols: usize,
    t: f64,
    z: &[f64],
) -> Vec<f64> {
    let n = rows * cols;
    let c = arch.channels;
    let spans = arch.conv_spans();

    let mut x = vec![t; INPUT_CHANNELS * n];
    x[..n].copy_from_slice(z);

    let mut h = vec![0.0; c * n];
    conv_forward(params, spans[0], arch.kernel, &x, rows, cols, &mut h);
    for v in &mut h {
        *v = arch.activation.apply(*v);
    }

    let mut pre = vec![0.0; c * n];
    for span in &spans[1..spans.len() - 1] {
        conv_forward(params, *span, arch.kernel, &h, rows, cols, &mut pre);
        for (hv, pv) in h.iter_mut().zip(&pre) {
            *hv += arch.activation.apply(*pv);
        }
    }

    let mut out = vec![0.0; n];
    conv_forward(
        params,
        spans[spans.len() - 1],
        arch.kernel,
        &h,
        rows,
        cols,
        &mut out,
    );
    out
}

/// Activations retained by [`forward_cached`] for the reverse pass.
pub(crate) struct Tape {
    x: Vec<f64>,
    /// Pre-activation outputs of the stem and each residual block.
    pres: Vec<Vec<f64>>,
    /// Feature maps entering each residual block and the head.
    hs: Vec<Vec<f64>>,
}

pub(crate) fn forward_cached(
    arch: &Arch,
    params: &[f64],
    rows: usize,
    cols: usize,
    t: f64,
    z: &[f64],
) -> (Vec<f64>, Tape) {
    let n = rows * cols;
    let c = arch.channels;
    let spans = arch.conv_spans();

    let mut x = vec![t; INPUT_CHANNELS * n];
    x[..n].copy_from_slice(z);

    let mut pres = Vec::with_capacity(arch.hidden_layers);
    let mut hs = Vec::with_capacity(arch.hidden_layers);

    let mut pre = vec![0.0; c * n];
    conv_forward(params, spans[0], arch.kernel, &x, rows, cols, &mut pre);
    let mut h: Vec<f64> = pre.iter().map(|&v| arch.activation.apply(v)).collect();
    pres.push(pre);

    for span in &spans[1..spans.len() - 1] {
        hs.push(h.clone());
        let mut pre = vec![0.0; c * n];
        conv_forward(params, *span, arch.kernel, &h, rows, cols, &mut pre);
        for (hv, pv) in h.iter_mut().zip(&pre) {
            *hv += arch.activation.apply(*pv);
        }
        pres.push(pre);
    }
    hs.push(h);

    let mut out = vec![0.0; n];
    conv_forward(
        params,
        spans[spans.len() - 1],
        arch.kernel,
        hs.last().unwrap(),
        rows,
        cols,
        &mut out,
    );
    (out, Tape { x, pres, hs })
}

/// Accumulates d(loss)/d(params) into `grad_params` given d(loss)/d(output).
pub(crate) fn backward(
    arch: &Arch,
    params: &[f64],
    tape: &Tape,
    rows: usize,
    cols: usize,
    grad_out: &[f64],
    grad_params: &mut [f64],
) {
    let n = rows * cols;
    let c = arch.channels;
    let spans = arch.conv_spans();
    let blocks = arch.residual_blocks();

    // head
    let mut grad_h = vec![0.0; c * n];
    conv_backward(
        params,
        spans[spans.len() - 1],
        arch.kernel,
        &tape.hs[blocks],
        grad_out,
        rows,
        cols,
        grad_params,
        Some(&mut grad_h),
    );

    // residual blocks, reversed
    let mut g_pre = vec![0.0; c * n];
    for b in (0..blocks).rev() {
        for ((gp, gh), pv) in g_pre.iter_mut().zip(&grad_h).zip(&tape.pres[b + 1]) {
            *gp = gh * arch.activation.derivative(*pv);
        }
        conv_backward(
            params,
            spans[b + 1],
            arch.kernel,
            &tape.hs[b],
            &g_pre,
            rows,
            cols,
            grad_params,
            Some(&mut grad_h),
        );
    }

    // stem (no input gradient needed)
    for (gp, pv) in grad_h.iter_mut().zip(&tape.pres[0]) {
        *gp *= arch.activation.derivative(*pv);
    }
    conv_backward(
        params,
        spans[0],
        arch.kernel,
        &tape.x,
        &grad_h,
        rows,
        cols,
        grad_params,
        None,
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> Arch {
        Arch {
            channels: 4,
            hidden_layers: 2,
            kernel: 3,
            ..Arch::default()
        }
    }

    #[test]
    fn param_count_matches_segments() {
        let arch = tiny_arch();
        let total: usize = arch.segments().iter().map(|s| s.len).sum();
        assert_eq!(total, arch.param_count());
        assert_eq!(arch.init_params(1).len(), arch.param_count());
        // stem 2*4*9+4, one block 4*4*9+4, head 4*9+1
        assert_eq!(arch.param_count(), 76 + 148 + 37);
    }

    #[test]
    fn default_arch_validates() {
        Arch::default().validate().unwrap();
        let bad = Arch {
            kernel: 4,
            ..Arch::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_head_means_zero_velocity_at_init() {
        let arch = tiny_arch();
        let params = arch.init_params(3);
        let z = vec![0.3; 16];
        let out = forward(&arch, &params, 4, 4, 0.5, &z);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cached_forward_matches_plain_forward() {
        let arch = tiny_arch();
        let mut params = arch.init_params(4);
        // non-trivial head
        for (k, w) in params.iter_mut().enumerate() {
            if *w == 0.0 {
                *w = ((k % 7) as f64 - 3.0) * 0.05;
            }
        }
        let z: Vec<f64> = (0..16).map(|k| (k as f64) * 0.1 - 0.8).collect();
        let plain = forward(&arch, &params, 4, 4, 0.25, &z);
        let (cached, _) = forward_cached(&arch, &params, 4, 4, 0.25, &z);
        assert_eq!(plain, cached);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let arch = tiny_arch();
        let mut params = arch.init_params(5);
        for (k, w) in params.iter_mut().enumerate() {
            if *w == 0.0 {
                *w = ((k % 5) as f64 - 2.0) * 0.08;
            }
        }
        let z: Vec<f64> = (0..16).map(|k| ((k * 13 % 16) as f64) * 0.12 - 1.0).collect();
        let target: Vec<f64> = (0..16).map(|k| ((k * 7 % 16) as f64) * 0.1 - 0.7).collect();
        let t = 0.4;

        let loss_of = |p: &[f64]| -> f64 {
            let out = forward(&arch, p, 4, 4, t, &z);
            out.iter()
                .zip(&target)
                .map(|(o, g)| (o - g) * (o - g))
                .sum()
        };

        let (out, tape) = forward_cached(&arch, &params, 4, 4, t, &z);
        let grad_out: Vec<f64> = out.iter().zip(&target).map(|(o, g)| 2.0 * (o - g)).collect();
        let mut grad = vec![0.0; params.len()];
        backward(&arch, &params, &tape, 4, 4, &grad_out, &mut grad);

        let h = 1e-5;
        for idx in (0..params.len()).step_by(17) {
            let mut plus = params.clone();
            plus[idx] += h;
            let mut minus = params.clone();
            minus[idx] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let denom = fd.abs().max(grad[idx].abs()).max(1e-8);
            assert!(
                (fd - grad[idx]).abs() / denom < 1e-5,
                "param {idx}: fd={fd}, analytic={}",
                grad[idx]
            );
        }
    }
}
