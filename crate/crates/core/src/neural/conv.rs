//! Height-preserving 1D convolution: kernels of size 1 x `kernel_width`
//! slide along the width of every row with stride 1 and zero padding chosen
//! so the output width equals the input width.
//!
//! Two execution paths compute the same correlation. `Direct` builds an
//! im2col matrix and multiplies; `Fft` evaluates it spectrally, which is
//! several times cheaper for the 1x100 kernels this architecture uses. The
//! FFT path exploits real-signal symmetry: rows are transformed two at a
//! time as one complex FFT, products run on half spectra in split re/im
//! form, and weight-gradient spectra accumulate across the batch so only
//! one inverse transform per kernel is needed per batch. The paths
//! cross-check each other in tests; `Auto` picks by kernel size.

use super::{NeuralError, Tensor3};
use ndarray::{Array1, Array2};
use num_complex::Complex;
use rustfft::FftPlanner;
use std::collections::HashMap;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvEngine {
    Direct,
    Fft,
    /// Fft for wide kernels (>= 32 taps), Direct otherwise.
    #[default]
    Auto,
}

impl ConvEngine {
    fn resolve(self, kernel_width: usize) -> ConvEngine {
        match self {
            ConvEngine::Auto => {
                if kernel_width >= 32 {
                    ConvEngine::Fft
                } else {
                    ConvEngine::Direct
                }
            }
            other => other,
        }
    }
}

/// FFT plans and reusable complex buffers shared across forward/backward
/// calls. Single-threaded; each worker owns its own scratch.
pub struct ConvScratch {
    planner: FftPlanner<f64>,
    plans: HashMap<usize, (Arc<dyn rustfft::Fft<f64>>, Arc<dyn rustfft::Fft<f64>>)>,
    buf: Vec<Complex<f64>>,
}

impl ConvScratch {
    pub fn new() -> Self {
        ConvScratch { planner: FftPlanner::new(), plans: HashMap::new(), buf: Vec::new() }
    }

    fn plans(&mut self, n: usize) -> (Arc<dyn rustfft::Fft<f64>>, Arc<dyn rustfft::Fft<f64>>) {
        let planner = &mut self.planner;
        self.plans
            .entry(n)
            .or_insert_with(|| (planner.plan_fft_forward(n), planner.plan_fft_inverse(n)))
            .clone()
    }

    fn buffer(&mut self, n: usize) -> &mut [Complex<f64>] {
        if self.buf.len() < n {
            self.buf.resize(n, Complex::new(0.0, 0.0));
        }
        &mut self.buf[..n]
    }
}

impl Default for ConvScratch {
    fn default() -> Self {
        Self::new()
    }
}

/// Half spectra (bins 0..=n/2) of a set of real sequences, split re/im.
struct HalfSpectra {
    nfft: usize,
    bins: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl HalfSpectra {
    fn zeros(count: usize, nfft: usize) -> Self {
        let bins = nfft / 2 + 1;
        HalfSpectra { nfft, bins, re: vec![0.0; count * bins], im: vec![0.0; count * bins] }
    }

    fn item(&self, i: usize) -> (&[f64], &[f64]) {
        let s = i * self.bins;
        (&self.re[s..s + self.bins], &self.im[s..s + self.bins])
    }

    fn item_mut(&mut self, i: usize) -> (&mut [f64], &mut [f64]) {
        let s = i * self.bins;
        (&mut self.re[s..s + self.bins], &mut self.im[s..s + self.bins])
    }

    fn clear(&mut self) {
        self.re.iter_mut().for_each(|v| *v = 0.0);
        self.im.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Transform `count` real rows (provided by `row`) into half spectra, two
/// rows per complex FFT.
fn fft_rows(
    count: usize,
    len: usize,
    nfft: usize,
    row: impl Fn(usize, &mut [f64]),
    fwd: &Arc<dyn rustfft::Fft<f64>>,
    scratch_buf: &mut [Complex<f64>],
) -> HalfSpectra {
    let mut out = HalfSpectra::zeros(count, nfft);
    let bins = out.bins;
    let mut a = vec![0.0; len];
    let mut b = vec![0.0; len];
    let mut i = 0;
    while i < count {
        let buf = &mut scratch_buf[..nfft];
        buf.iter_mut().for_each(|v| *v = Complex::new(0.0, 0.0));
        row(i, &mut a);
        let pair = i + 1 < count;
        if pair {
            row(i + 1, &mut b);
            for t in 0..len {
                buf[t] = Complex::new(a[t], b[t]);
            }
        } else {
            for t in 0..len {
                buf[t] = Complex::new(a[t], 0.0);
            }
        }
        fwd.process(buf);
        // Unpack: X0[k] = (Z[k] + conj(Z[n-k]))/2, X1[k] = (Z[k] - conj(Z[n-k]))/(2i).
        {
            let (re0, im0) = out.item_mut(i);
            re0[0] = buf[0].re;
            im0[0] = 0.0;
            for k in 1..bins {
                let z = buf[k];
                let w = buf[nfft - k];
                re0[k] = 0.5 * (z.re + w.re);
                im0[k] = 0.5 * (z.im - w.im);
            }
        }
        if pair {
            let (re1, im1) = out.item_mut(i + 1);
            re1[0] = buf[0].im;
            im1[0] = 0.0;
            for k in 1..bins {
                let z = buf[k];
                let w = buf[nfft - k];
                re1[k] = 0.5 * (z.im + w.im);
                im1[k] = 0.5 * (w.re - z.re);
            }
        }
        i += 2;
    }
    out
}

/// Inverse-transform two accumulated half spectra in one complex IFFT and
/// hand the two real rows to `emit(row_index_in_pair, values)`.
fn ifft_pair(
    acc0: (&[f64], &[f64]),
    acc1: Option<(&[f64], &[f64])>,
    nfft: usize,
    inv: &Arc<dyn rustfft::Fft<f64>>,
    scratch_buf: &mut [Complex<f64>],
    mut emit: impl FnMut(usize, &[Complex<f64>]),
) {
    let bins = nfft / 2 + 1;
    let buf = &mut scratch_buf[..nfft];
    let (r0, i0) = acc0;
    match acc1 {
        Some((r1, i1)) => {
            // Z = Y0 + i Y1 over the full circle from the half spectra.
            for k in 0..bins {
                buf[k] = Complex::new(r0[k] - i1[k], i0[k] + r1[k]);
            }
            for k in bins..nfft {
                let m = nfft - k;
                buf[k] = Complex::new(r0[m] + i1[m], r1[m] - i0[m]);
            }
        }
        None => {
            for k in 0..bins {
                buf[k] = Complex::new(r0[k], i0[k]);
            }
            for k in bins..nfft {
                let m = nfft - k;
                buf[k] = Complex::new(r0[m], -i0[m]);
            }
        }
    }
    inv.process(buf);
    emit(0, buf);
    if acc1.is_some() {
        emit(1, buf);
    }
}

/// acc += X * conj(K) (correlation spectrum).
fn accumulate_correlation(acc: (&mut [f64], &mut [f64]), x: (&[f64], &[f64]), k: (&[f64], &[f64])) {
    let (ar, ai) = acc;
    let (xr, xi) = x;
    let (kr, ki) = k;
    for idx in 0..ar.len() {
        ar[idx] += xr[idx] * kr[idx] + xi[idx] * ki[idx];
        ai[idx] += xi[idx] * kr[idx] - xr[idx] * ki[idx];
    }
}

/// acc += G * K (convolution spectrum).
fn accumulate_convolution(acc: (&mut [f64], &mut [f64]), g: (&[f64], &[f64]), k: (&[f64], &[f64])) {
    let (ar, ai) = acc;
    let (gr, gi) = g;
    let (kr, ki) = k;
    for idx in 0..ar.len() {
        ar[idx] += gr[idx] * kr[idx] - gi[idx] * ki[idx];
        ai[idx] += gr[idx] * ki[idx] + gi[idx] * kr[idx];
    }
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_width: usize,
    /// Zero columns added on the left; `kernel_width - 1 - pad_left` on the
    /// right (50/49 for the 1x100 kernel).
    pub pad_left: usize,
    /// `[out_channels, in_channels * kernel_width]`, kernel taps contiguous
    /// per input channel.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

pub struct ConvGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ConvLayer {
    pub fn new(in_channels: usize, out_channels: usize, kernel_width: usize) -> Self {
        ConvLayer {
            in_channels,
            out_channels,
            kernel_width,
            pad_left: kernel_width / 2,
            weights: Array2::zeros((out_channels, in_channels * kernel_width)),
            bias: Array1::zeros(out_channels),
        }
    }

    fn check_input(&self, x: &Tensor3) -> Result<(), NeuralError> {
        let (c, _h, w) = x.dim();
        if c != self.in_channels {
            return Err(NeuralError::Shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        if w == 0 {
            return Err(NeuralError::Shape("conv input width 0".to_string()));
        }
        Ok(())
    }

    fn check_grad(&self, x: &Tensor3, grad_out: &Tensor3) -> Result<(), NeuralError> {
        let (f, h, w) = grad_out.dim();
        if f != self.out_channels || (h, w) != (x.dim().1, x.dim().2) {
            return Err(NeuralError::Shape(format!(
                "conv backward: grad dims ({f}, {h}, {w}) mismatch output ({}, {}, {})",
                self.out_channels,
                x.dim().1,
                x.dim().2
            )));
        }
        Ok(())
    }

    /// out[f, h, t] = bias_f + sum_c sum_j x[c, h, t - pad_left + j] * k[f, c, j],
    /// out-of-range x treated as zero.
    pub fn forward(
        &self,
        x: &Tensor3,
        engine: ConvEngine,
        scratch: &mut ConvScratch,
    ) -> Result<Tensor3, NeuralError> {
        Ok(self.forward_batch(std::slice::from_ref(x), engine, scratch)?.pop().unwrap())
    }

    pub fn forward_batch(
        &self,
        xs: &[Tensor3],
        engine: ConvEngine,
        scratch: &mut ConvScratch,
    ) -> Result<Vec<Tensor3>, NeuralError> {
        for x in xs {
            self.check_input(x)?;
        }
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        match engine.resolve(self.kernel_width) {
            ConvEngine::Direct => Ok(xs.iter().map(|x| self.forward_direct(x)).collect()),
            _ => Ok(self.forward_fft_batch(xs, scratch)),
        }
    }

    pub fn backward(
        &self,
        x: &Tensor3,
        grad_out: &Tensor3,
        engine: ConvEngine,
        scratch: &mut ConvScratch,
    ) -> Result<(Tensor3, ConvGrads), NeuralError> {
        let (mut d_ins, grads) = self.backward_batch(
            std::slice::from_ref(x),
            std::slice::from_ref(grad_out),
            engine,
            scratch,
        )?;
        Ok((d_ins.pop().unwrap(), grads))
    }

    /// Batch backward; parameter gradients are summed over the batch.
    pub fn backward_batch(
        &self,
        xs: &[Tensor3],
        grads_out: &[Tensor3],
        engine: ConvEngine,
        scratch: &mut ConvScratch,
    ) -> Result<(Vec<Tensor3>, ConvGrads), NeuralError> {
        if xs.len() != grads_out.len() {
            return Err(NeuralError::Shape(format!(
                "conv backward: {} inputs vs {} gradients",
                xs.len(),
                grads_out.len()
            )));
        }
        for (x, g) in xs.iter().zip(grads_out) {
            self.check_input(x)?;
            self.check_grad(x, g)?;
        }
        match engine.resolve(self.kernel_width) {
            ConvEngine::Direct => {
                let mut weights = Array2::zeros(self.weights.dim());
                let mut bias = Array1::zeros(self.bias.len());
                let mut d_ins = Vec::with_capacity(xs.len());
                for (x, g) in xs.iter().zip(grads_out) {
                    let (d_in, grads) = self.backward_direct(x, g);
                    weights += &grads.weights;
                    bias += &grads.bias;
                    d_ins.push(d_in);
                }
                Ok((d_ins, ConvGrads { weights, bias }))
            }
            _ => Ok(self.backward_fft_batch(xs, grads_out, scratch)),
        }
    }

    // --- direct path -----------------------------------------------------

    /// im2col matrix: [in_c * kw, h * w]; entry ((c, j), (h, t)) is
    /// x[c, h, t - pad_left + j] with zeros outside.
    fn im2col(&self, x: &Tensor3) -> Array2<f64> {
        let (c_in, h, w) = x.dim();
        let kw = self.kernel_width;
        let mut col = Array2::zeros((c_in * kw, h * w));
        for c in 0..c_in {
            for j in 0..kw {
                let row = c * kw + j;
                // t - pad_left + j in [0, w) <=> t in [pad_left - j, w + pad_left - j)
                let t_lo = self.pad_left.saturating_sub(j);
                let t_hi = (w + self.pad_left).saturating_sub(j).min(w);
                for hi in 0..h {
                    for t in t_lo..t_hi {
                        col[(row, hi * w + t)] = x[(c, hi, t + j - self.pad_left)];
                    }
                }
            }
        }
        col
    }

    fn forward_direct(&self, x: &Tensor3) -> Tensor3 {
        let (_c, h, w) = x.dim();
        let col = self.im2col(x);
        let out_mat = self.weights.dot(&col);
        let mut out = Tensor3::zeros((self.out_channels, h, w));
        for f in 0..self.out_channels {
            let b = self.bias[f];
            for hi in 0..h {
                for t in 0..w {
                    out[(f, hi, t)] = out_mat[(f, hi * w + t)] + b;
                }
            }
        }
        out
    }

    fn backward_direct(&self, x: &Tensor3, grad_out: &Tensor3) -> (Tensor3, ConvGrads) {
        let (c_in, h, w) = x.dim();
        let kw = self.kernel_width;
        let g_mat = flatten_hw(grad_out);
        let col = self.im2col(x);
        let grad_weights = g_mat.dot(&col.t());
        let grad_bias = g_mat.sum_axis(ndarray::Axis(1));
        // Scatter W^T * g back through the im2col map.
        let col_grad = self.weights.t().dot(&g_mat);
        let mut grad_in = Tensor3::zeros((c_in, h, w));
        for c in 0..c_in {
            for j in 0..kw {
                let row = c * kw + j;
                let t_lo = self.pad_left.saturating_sub(j);
                let t_hi = (w + self.pad_left).saturating_sub(j).min(w);
                for hi in 0..h {
                    for t in t_lo..t_hi {
                        grad_in[(c, hi, t + j - self.pad_left)] += col_grad[(row, hi * w + t)];
                    }
                }
            }
        }
        (grad_in, ConvGrads { weights: grad_weights, bias: grad_bias })
    }

    // --- FFT path ---------------------------------------------------------

    fn nfft(&self, w: usize) -> usize {
        (w + self.kernel_width).next_power_of_two()
    }

    fn kernel_spectra(&self, nfft: usize, scratch: &mut ConvScratch) -> HalfSpectra {
        let (fwd, _) = scratch.plans(nfft);
        let kw = self.kernel_width;
        let weights = &self.weights;
        let c_in = self.in_channels;
        fft_rows(
            self.out_channels * c_in,
            kw,
            nfft,
            |idx, row| {
                let (f, c) = (idx / c_in, idx % c_in);
                for (j, v) in row.iter_mut().enumerate() {
                    *v = weights[(f, c * kw + j)];
                }
            },
            &fwd,
            scratch.buffer(nfft),
        )
    }

    fn tensor_spectra(t: &Tensor3, nfft: usize, fwd: &Arc<dyn rustfft::Fft<f64>>, buf: &mut [Complex<f64>]) -> HalfSpectra {
        let (c, h, w) = t.dim();
        fft_rows(
            c * h,
            w,
            nfft,
            |idx, row| {
                let (ci, hi) = (idx / h, idx % h);
                for (ti, v) in row.iter_mut().enumerate() {
                    *v = t[(ci, hi, ti)];
                }
            },
            fwd,
            buf,
        )
    }

    fn forward_fft_batch(&self, xs: &[Tensor3], scratch: &mut ConvScratch) -> Vec<Tensor3> {
        let (c_in, h, w) = xs[0].dim();
        let nfft = self.nfft(w);
        let (fwd, inv) = scratch.plans(nfft);
        let k_spec = self.kernel_spectra(nfft, scratch);
        let bins = nfft / 2 + 1;
        let scale = 1.0 / nfft as f64;
        let mut acc0 = vec![0.0; bins];
        let mut ai0 = vec![0.0; bins];
        let mut acc1 = vec![0.0; bins];
        let mut ai1 = vec![0.0; bins];
        let mut outs = Vec::with_capacity(xs.len());
        let mut ifft_buf = vec![Complex::new(0.0, 0.0); nfft];
        for x in xs {
            let x_spec = Self::tensor_spectra(x, nfft, &fwd, scratch.buffer(nfft));
            let mut out = Tensor3::zeros((self.out_channels, h, w));
            for f in 0..self.out_channels {
                let mut hi = 0;
                while hi < h {
                    let pair = hi + 1 < h;
                    acc0.iter_mut().for_each(|v| *v = 0.0);
                    ai0.iter_mut().for_each(|v| *v = 0.0);
                    acc1.iter_mut().for_each(|v| *v = 0.0);
                    ai1.iter_mut().for_each(|v| *v = 0.0);
                    for c in 0..c_in {
                        let ks = k_spec.item(f * c_in + c);
                        accumulate_correlation((&mut acc0, &mut ai0), x_spec.item(c * h + hi), ks);
                        if pair {
                            accumulate_correlation((&mut acc1, &mut ai1), x_spec.item(c * h + hi + 1), ks);
                        }
                    }
                    let b = self.bias[f];
                    ifft_pair(
                        (&acc0, &ai0),
                        pair.then_some((&acc1[..], &ai1[..])),
                        nfft,
                        &inv,
                        &mut ifft_buf,
                        |which, buf| {
                            let row = hi + which;
                            for t in 0..w {
                                let idx = (t + nfft - self.pad_left) % nfft;
                                let v = if which == 0 { buf[idx].re } else { buf[idx].im };
                                out[(f, row, t)] = v * scale + b;
                            }
                        },
                    );
                    hi += 2;
                }
            }
            outs.push(out);
        }
        outs
    }

    fn backward_fft_batch(
        &self,
        xs: &[Tensor3],
        grads_out: &[Tensor3],
        scratch: &mut ConvScratch,
    ) -> (Vec<Tensor3>, ConvGrads) {
        let (c_in, h, w) = xs[0].dim();
        let kw = self.kernel_width;
        let nfft = self.nfft(w);
        let (fwd, inv) = scratch.plans(nfft);
        let k_spec = self.kernel_spectra(nfft, scratch);
        let bins = nfft / 2 + 1;
        let scale = 1.0 / nfft as f64;
        let mut ifft_buf = vec![Complex::new(0.0, 0.0); nfft];
        let mut acc0 = vec![0.0; bins];
        let mut ai0 = vec![0.0; bins];
        let mut acc1 = vec![0.0; bins];
        let mut ai1 = vec![0.0; bins];

        // Weight-gradient spectra accumulate over rows and over the batch;
        // one inverse transform per kernel at the end.
        let mut dw_spec = HalfSpectra::zeros(self.out_channels * c_in, nfft);
        let mut grad_bias = Array1::zeros(self.out_channels);
        let mut d_ins = Vec::with_capacity(xs.len());

        for (x, g) in xs.iter().zip(grads_out) {
            let x_spec = Self::tensor_spectra(x, nfft, &fwd, scratch.buffer(nfft));
            let g_spec = Self::tensor_spectra(g, nfft, &fwd, scratch.buffer(nfft));

            // dW spectra: sum_h X[c,h] * conj(G[f,h]).
            for f in 0..self.out_channels {
                for c in 0..c_in {
                    let acc = dw_spec.item_mut(f * c_in + c);
                    for hi in 0..h {
                        accumulate_correlation(
                            (acc.0, acc.1),
                            x_spec.item(c * h + hi),
                            g_spec.item(f * h + hi),
                        );
                    }
                }
            }

            // dX rows: sum_f G[f,h] * K[f,c] (convolution), extracted at +pad.
            let mut d_in = Tensor3::zeros((c_in, h, w));
            for c in 0..c_in {
                let mut hi = 0;
                while hi < h {
                    let pair = hi + 1 < h;
                    acc0.iter_mut().for_each(|v| *v = 0.0);
                    ai0.iter_mut().for_each(|v| *v = 0.0);
                    acc1.iter_mut().for_each(|v| *v = 0.0);
                    ai1.iter_mut().for_each(|v| *v = 0.0);
                    for f in 0..self.out_channels {
                        let ks = k_spec.item(f * c_in + c);
                        accumulate_convolution((&mut acc0, &mut ai0), g_spec.item(f * h + hi), ks);
                        if pair {
                            accumulate_convolution((&mut acc1, &mut ai1), g_spec.item(f * h + hi + 1), ks);
                        }
                    }
                    ifft_pair(
                        (&acc0, &ai0),
                        pair.then_some((&acc1[..], &ai1[..])),
                        nfft,
                        &inv,
                        &mut ifft_buf,
                        |which, buf| {
                            let row = hi + which;
                            for s in 0..w {
                                let idx = (s + self.pad_left) % nfft;
                                let v = if which == 0 { buf[idx].re } else { buf[idx].im };
                                d_in[(c, row, s)] = v * scale;
                            }
                        },
                    );
                    hi += 2;
                }
            }
            d_ins.push(d_in);

            for f in 0..self.out_channels {
                let mut s = 0.0;
                for hi in 0..h {
                    for t in 0..w {
                        s += g[(f, hi, t)];
                    }
                }
                grad_bias[f] += s;
            }
        }

        // One packed inverse transform per kernel pair.
        let mut grad_weights = Array2::zeros((self.out_channels, c_in * kw));
        let total = self.out_channels * c_in;
        let mut i = 0;
        while i < total {
            let pair = i + 1 < total;
            let a1 = if pair { Some(dw_spec.item(i + 1)) } else { None };
            ifft_pair(dw_spec.item(i), a1, nfft, &inv, &mut ifft_buf, |which, buf| {
                let idx = i + which;
                let (f, c) = (idx / c_in, idx % c_in);
                for j in 0..kw {
                    let at = (j + nfft - self.pad_left) % nfft;
                    let v = if which == 0 { buf[at].re } else { buf[at].im };
                    grad_weights[(f, c * kw + j)] = v * scale;
                }
            });
            i += 2;
        }
        drop(dw_spec);
        (d_ins, ConvGrads { weights: grad_weights, bias: grad_bias })
    }
}

fn flatten_hw(t: &Tensor3) -> Array2<f64> {
    let (c, h, w) = t.dim();
    let mut out = Array2::zeros((c, h * w));
    for ci in 0..c {
        for hi in 0..h {
            for ti in 0..w {
                out[(ci, hi * w + ti)] = t[(ci, hi, ti)];
            }
        }
    }
    out
}
