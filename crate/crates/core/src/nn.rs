//! Forward and backward passes over the model IR.
//!
//! Generic over `f32`/`f64`: training runs in 32-bit, the 64-bit mode exists
//! for finite-difference gradient checks where tight tolerances matter.
//! Convolutions go through im2col plus a cache-friendly matmul; everything
//! is sequential and bit-deterministic.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{AddAssign, MulAssign, SubAssign};
use num_traits::Float;

use crate::error::CoreError;
use crate::graph::{LayerKind, ModelGraph, Shape};
use crate::mask::SparsityMask;

pub trait Scalar: Float + AddAssign + SubAssign + MulAssign + 'static {
    fn from_f32(v: f32) -> Self;
    fn as_f32(self) -> f32;
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f32(v: f32) -> Self {
        v
    }
    fn as_f32(self) -> f32 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn as_f32(self) -> f32 {
        self as f32
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone)]
pub struct RtLayer<T> {
    pub kind: LayerKind,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub mask: Option<SparsityMask>,
}

/// Executable view of a [`ModelGraph`].
#[derive(Debug, Clone)]
pub struct Runtime<T> {
    pub layers: Vec<RtLayer<T>>,
    pub input_shape: (usize, usize, usize),
    pub class_count: usize,
    /// Output shape of each layer.
    pub shapes: Vec<Shape>,
}

/// Activations recorded during a training forward pass.
pub struct Trace<T> {
    /// `activations[0]` is the input batch; `activations[i + 1]` is the
    /// output of layer `i`.
    pub activations: Vec<Vec<T>>,
    /// Winning input index per pooled output, for maxpool layers.
    pub pool_argmax: Vec<Option<Vec<u32>>>,
    pub batch: usize,
}

/// Per-layer weight and bias gradients, shaped like the runtime layers.
pub struct Gradients<T> {
    pub weights: Vec<Vec<T>>,
    pub bias: Vec<Vec<T>>,
}

impl<T: Scalar> Runtime<T> {
    pub fn from_graph(graph: &ModelGraph) -> Result<Self, CoreError> {
        let shapes = graph
            .shape_trace()
            .map_err(|(layer, detail)| CoreError::ShapeMismatch { layer, detail })?;
        let layers = graph
            .layers
            .iter()
            .map(|l| RtLayer {
                kind: l.kind,
                weights: l.weights.as_ref().map_or_else(Vec::new, |w| {
                    w.data.iter().map(|v| T::from_f32(*v)).collect()
                }),
                bias: l.bias.as_ref().map_or_else(Vec::new, |b| {
                    b.iter().map(|v| T::from_f32(*v)).collect()
                }),
                mask: l.mask.clone(),
            })
            .collect();
        Ok(Runtime { layers, input_shape: graph.input_shape, class_count: graph.class_count, shapes })
    }

    /// Copy parameters back into a graph with identical topology.
    pub fn write_back(&self, graph: &mut ModelGraph) {
        for (layer, rt) in graph.layers.iter_mut().zip(self.layers.iter()) {
            if let Some(w) = layer.weights.as_mut() {
                for (dst, src) in w.data.iter_mut().zip(rt.weights.iter()) {
                    *dst = src.as_f32();
                }
            }
            if let Some(b) = layer.bias.as_mut() {
                for (dst, src) in b.iter_mut().zip(rt.bias.iter()) {
                    *dst = src.as_f32();
                }
            }
        }
    }

    fn input_elements(&self) -> usize {
        let (c, h, w) = self.input_shape;
        c * h * w
    }

    /// Forward pass over a batch. `record` keeps the per-layer activations
    /// needed by [`Runtime::backward`].
    pub fn forward(&self, input: &[T], batch: usize, record: bool) -> Result<(Vec<T>, Trace<T>), CoreError> {
        if input.len() != batch * self.input_elements() {
            return Err(CoreError::ShapeMismatch {
                layer: 0,
                detail: String::from("input length does not match batch x input_shape"),
            });
        }
        let mut trace = Trace {
            activations: if record { Vec::with_capacity(self.layers.len() + 1) } else { Vec::new() },
            pool_argmax: if record { vec![None; self.layers.len()] } else { Vec::new() },
            batch,
        };
        if record {
            trace.activations.push(input.to_vec());
        }
        let (c0, h0, w0) = self.input_shape;
        let mut shape = Shape::Chw(c0, h0, w0);
        let mut current: Vec<T> = input.to_vec();
        let mut cols: Vec<T> = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            let out_shape = self.shapes[li];
            let mut output = vec![T::zero(); batch * out_shape.element_count()];
            match layer.kind {
                LayerKind::Conv2d { .. } => {
                    conv_forward(layer, &current, shape, &mut output, out_shape, batch, &mut cols);
                }
                LayerKind::Linear { out_features, in_features } => {
                    linear_forward(layer, &current, &mut output, batch, in_features, out_features);
                }
                LayerKind::Relu => {
                    for (o, v) in output.iter_mut().zip(current.iter()) {
                        *o = if *v > T::zero() { *v } else { T::zero() };
                    }
                }
                LayerKind::MaxPool2d { kernel_size, stride } => {
                    let argmax = maxpool_forward(&current, shape, &mut output, out_shape, batch, kernel_size, stride);
                    if record {
                        trace.pool_argmax[li] = Some(argmax);
                    }
                }
                LayerKind::Flatten => {
                    output.copy_from_slice(&current);
                }
            }
            if record {
                trace.activations.push(output.clone());
            }
            current = output;
            shape = out_shape;
        }
        if current.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite { layer: self.layers.len().saturating_sub(1) });
        }
        Ok((current, trace))
    }

    /// Mean softmax cross-entropy and its gradient with respect to the
    /// logits.
    pub fn loss_and_dlogits(&self, logits: &[T], labels: &[u32], batch: usize) -> Result<(f64, Vec<T>), CoreError> {
        debug_assert_eq!(logits.len(), batch * self.class_count);
        debug_assert_eq!(labels.len(), batch);
        let k = self.class_count;
        let mut dlogits = vec![T::zero(); logits.len()];
        let mut total = 0.0f64;
        let inv_batch = T::from_f64(1.0 / batch as f64);
        for s in 0..batch {
            let row = &logits[s * k..(s + 1) * k];
            let max = row.iter().fold(T::neg_infinity(), |a, &b| if b > a { b } else { a });
            let mut sum = T::zero();
            for &v in row {
                sum += (v - max).exp();
            }
            let log_sum = sum.ln() + max;
            let label = labels[s] as usize;
            total += (log_sum - row[label]).as_f64();
            for j in 0..k {
                let p = (row[j] - log_sum).exp();
                let target = if j == label { T::one() } else { T::zero() };
                dlogits[s * k + j] = (p - target) * inv_batch;
            }
        }
        let loss = total / batch as f64;
        if !loss.is_finite() {
            return Err(CoreError::NonFinite { layer: self.layers.len().saturating_sub(1) });
        }
        Ok((loss, dlogits))
    }

    /// Backpropagate through the recorded trace. Gradients at masked weight
    /// positions are forced to zero (masked-update contract).
    pub fn backward(&self, trace: &Trace<T>, dlogits: &[T]) -> Gradients<T> {
        let batch = trace.batch;
        let mut grads = Gradients {
            weights: self.layers.iter().map(|l| vec![T::zero(); l.weights.len()]).collect(),
            bias: self.layers.iter().map(|l| vec![T::zero(); l.bias.len()]).collect(),
        };
        let (c0, h0, w0) = self.input_shape;
        let mut dout: Vec<T> = dlogits.to_vec();
        let mut cols: Vec<T> = Vec::new();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let in_shape = if li == 0 { Shape::Chw(c0, h0, w0) } else { self.shapes[li - 1] };
            let out_shape = self.shapes[li];
            let input = &trace.activations[li];
            let mut dinput = vec![T::zero(); batch * in_shape.element_count()];
            match layer.kind {
                LayerKind::Conv2d { .. } => {
                    conv_backward(
                        layer,
                        input,
                        in_shape,
                        &dout,
                        out_shape,
                        batch,
                        &mut grads.weights[li],
                        &mut grads.bias[li],
                        &mut dinput,
                        &mut cols,
                    );
                }
                LayerKind::Linear { out_features, in_features } => {
                    linear_backward(
                        layer,
                        input,
                        &dout,
                        batch,
                        in_features,
                        out_features,
                        &mut grads.weights[li],
                        &mut grads.bias[li],
                        &mut dinput,
                    );
                }
                LayerKind::Relu => {
                    let output = &trace.activations[li + 1];
                    for ((di, &y), &dy) in dinput.iter_mut().zip(output.iter()).zip(dout.iter()) {
                        *di = if y > T::zero() { dy } else { T::zero() };
                    }
                }
                LayerKind::MaxPool2d { .. } => {
                    let argmax = trace.pool_argmax[li].as_ref().expect("trace recorded pooling argmax");
                    let in_elems = in_shape.element_count();
                    let out_elems = out_shape.element_count();
                    for s in 0..batch {
                        for (j, &src) in argmax[s * out_elems..(s + 1) * out_elems].iter().enumerate() {
                            dinput[s * in_elems + src as usize] += dout[s * out_elems + j];
                        }
                    }
                }
                LayerKind::Flatten => {
                    dinput.copy_from_slice(&dout);
                }
            }
            if let Some(mask) = &layer.mask {
                for (i, g) in grads.weights[li].iter_mut().enumerate() {
                    if !mask.get(i) {
                        *g = T::zero();
                    }
                }
            }
            dout = dinput;
        }
        grads
    }

    /// Fraction of argmax(logits) == label. Argmax ties break toward the
    /// lowest class index.
    pub fn accuracy(&self, inputs: &[T], labels: &[u32], n: usize) -> Result<f64, CoreError> {
        let elems = self.input_elements();
        let k = self.class_count;
        let mut correct = 0usize;
        let chunk = 128usize;
        let mut offset = 0usize;
        while offset < n {
            let b = chunk.min(n - offset);
            let (logits, _) = self.forward(&inputs[offset * elems..(offset + b) * elems], b, false)?;
            for s in 0..b {
                let row = &logits[s * k..(s + 1) * k];
                let mut best = 0usize;
                for j in 1..k {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                if best as u32 == labels[offset + s] {
                    correct += 1;
                }
            }
            offset += b;
        }
        Ok(correct as f64 / n as f64)
    }
}

fn as_chw(shape: Shape) -> (usize, usize, usize) {
    match shape {
        Shape::Chw(c, h, w) => (c, h, w),
        Shape::Flat(n) => (n, 1, 1),
    }
}

/// `out[m x n] += a[m x k] * b[k x n]`, ikj order so the inner loop
/// vectorizes. Deliberately a dense kernel: zero weights cost the same as
/// nonzero ones, matching edge targets without sparse libraries.
fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (l, &av) in a_row.iter().enumerate() {
            let b_row = &b[l * n..(l + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += av * bv;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    let ohw = oh * ow;
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * ohw..((ci * k + ky) * k + kx + 1) * ohw];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy as usize >= h {
                        for v in dst.iter_mut() {
                            *v = T::zero();
                        }
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        *v = if ix >= 0 && (ix as usize) < w { src_row[ix as usize] } else { T::zero() };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_acc<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    dinput: &mut [T],
) {
    let ohw = oh * ow;
    for ci in 0..c {
        let plane = &mut dinput[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * ohw..((ci * k + ky) * k + kx + 1) * ohw];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dst_row[ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward<T: Scalar>(
    layer: &RtLayer<T>,
    input: &[T],
    in_shape: Shape,
    output: &mut [T],
    out_shape: Shape,
    batch: usize,
    cols: &mut Vec<T>,
) {
    let LayerKind::Conv2d { out_channels, in_channels, kernel_size, stride, padding } = layer.kind else {
        unreachable!()
    };
    let (c, h, w) = as_chw(in_shape);
    let (_, oh, ow) = as_chw(out_shape);
    let ohw = oh * ow;
    let rows = in_channels * kernel_size * kernel_size;
    cols.clear();
    cols.resize(rows * ohw, T::zero());
    let in_elems = c * h * w;
    let out_elems = out_channels * ohw;
    for s in 0..batch {
        im2col(&input[s * in_elems..(s + 1) * in_elems], c, h, w, kernel_size, stride, padding, oh, ow, cols);
        let out_s = &mut output[s * out_elems..(s + 1) * out_elems];
        matmul_acc(&layer.weights, cols, out_s, out_channels, rows, ohw);
        if !layer.bias.is_empty() {
            for (oc, &b) in layer.bias.iter().enumerate() {
                for v in out_s[oc * ohw..(oc + 1) * ohw].iter_mut() {
                    *v += b;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    layer: &RtLayer<T>,
    input: &[T],
    in_shape: Shape,
    dout: &[T],
    out_shape: Shape,
    batch: usize,
    dw: &mut [T],
    db: &mut [T],
    dinput: &mut [T],
    cols: &mut Vec<T>,
) {
    let LayerKind::Conv2d { out_channels, in_channels, kernel_size, stride, padding } = layer.kind else {
        unreachable!()
    };
    let (c, h, w) = as_chw(in_shape);
    let (_, oh, ow) = as_chw(out_shape);
    let ohw = oh * ow;
    let rows = in_channels * kernel_size * kernel_size;
    cols.clear();
    cols.resize(rows * ohw, T::zero());
    let mut dcols = vec![T::zero(); rows * ohw];
    let in_elems = c * h * w;
    let out_elems = out_channels * ohw;
    for s in 0..batch {
        im2col(&input[s * in_elems..(s + 1) * in_elems], c, h, w, kernel_size, stride, padding, oh, ow, cols);
        let dout_s = &dout[s * out_elems..(s + 1) * out_elems];
        // dW += dOut x colsᵀ
        for oc in 0..out_channels {
            let dout_row = &dout_s[oc * ohw..(oc + 1) * ohw];
            let dw_row = &mut dw[oc * rows..(oc + 1) * rows];
            for l in 0..rows {
                let col_row = &cols[l * ohw..(l + 1) * ohw];
                let mut acc = T::zero();
                for (&dy, &cv) in dout_row.iter().zip(col_row.iter()) {
                    acc += dy * cv;
                }
                dw_row[l] += acc;
            }
            if !db.is_empty() {
                let mut acc = T::zero();
                for &dy in dout_row {
                    acc += dy;
                }
                db[oc] += acc;
            }
        }
        // dcols = Wᵀ x dOut, then scatter back to the input plane
        for v in dcols.iter_mut() {
            *v = T::zero();
        }
        for oc in 0..out_channels {
            let w_row = &layer.weights[oc * rows..(oc + 1) * rows];
            let dout_row = &dout_s[oc * ohw..(oc + 1) * ohw];
            for (l, &wv) in w_row.iter().enumerate() {
                if wv == T::zero() {
                    continue;
                }
                let dcol_row = &mut dcols[l * ohw..(l + 1) * ohw];
                for (dc, &dy) in dcol_row.iter_mut().zip(dout_row.iter()) {
                    *dc += wv * dy;
                }
            }
        }
        col2im_acc(
            &dcols,
            c,
            h,
            w,
            kernel_size,
            stride,
            padding,
            oh,
            ow,
            &mut dinput[s * in_elems..(s + 1) * in_elems],
        );
    }
}

fn linear_forward<T: Scalar>(
    layer: &RtLayer<T>,
    input: &[T],
    output: &mut [T],
    batch: usize,
    in_features: usize,
    out_features: usize,
) {
    for s in 0..batch {
        let x = &input[s * in_features..(s + 1) * in_features];
        let y = &mut output[s * out_features..(s + 1) * out_features];
        for (o, y_o) in y.iter_mut().enumerate() {
            let w_row = &layer.weights[o * in_features..(o + 1) * in_features];
            let mut acc = if layer.bias.is_empty() { T::zero() } else { layer.bias[o] };
            for (&wv, &xv) in w_row.iter().zip(x.iter()) {
                acc += wv * xv;
            }
            *y_o = acc;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn linear_backward<T: Scalar>(
    layer: &RtLayer<T>,
    input: &[T],
    dout: &[T],
    batch: usize,
    in_features: usize,
    out_features: usize,
    dw: &mut [T],
    db: &mut [T],
    dinput: &mut [T],
) {
    for s in 0..batch {
        let x = &input[s * in_features..(s + 1) * in_features];
        let dy = &dout[s * out_features..(s + 1) * out_features];
        let dx = &mut dinput[s * in_features..(s + 1) * in_features];
        for (o, &dy_o) in dy.iter().enumerate() {
            if !db.is_empty() {
                db[o] += dy_o;
            }
            if dy_o == T::zero() {
                continue;
            }
            let w_row = &layer.weights[o * in_features..(o + 1) * in_features];
            let dw_row = &mut dw[o * in_features..(o + 1) * in_features];
            for i in 0..in_features {
                dw_row[i] += dy_o * x[i];
                dx[i] += w_row[i] * dy_o;
            }
        }
    }
}

fn maxpool_forward<T: Scalar>(
    input: &[T],
    in_shape: Shape,
    output: &mut [T],
    out_shape: Shape,
    batch: usize,
    k: usize,
    stride: usize,
) -> Vec<u32> {
    let (c, h, w) = as_chw(in_shape);
    let (_, oh, ow) = as_chw(out_shape);
    let in_elems = c * h * w;
    let out_elems = c * oh * ow;
    let mut argmax = vec![0u32; batch * out_elems];
    for s in 0..batch {
        let x = &input[s * in_elems..(s + 1) * in_elems];
        let y = &mut output[s * out_elems..(s + 1) * out_elems];
        let am = &mut argmax[s * out_elems..(s + 1) * out_elems];
        for ci in 0..c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_ix = 0usize;
                    for ky in 0..k {
                        let iy = oy * stride + ky;
                        for kx in 0..k {
                            let ix = ox * stride + kx;
                            let v = plane[iy * w + ix];
                            // first maximum wins for determinism
                            if v > best {
                                best = v;
                                best_ix = ci * h * w + iy * w + ix;
                            }
                        }
                    }
                    y[ci * oh * ow + oy * ow + ox] = best;
                    am[ci * oh * ow + oy * ow + ox] = best_ix as u32;
                }
            }
        }
    }
    argmax
}
