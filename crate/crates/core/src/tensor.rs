//! Dense real-valued arrays with reverse-mode gradients.
//!
//! The op set is exactly what the backbone and the debiasing path need:
//! convolution, relu, linear, pooling, losses, elementwise product,
//! nearest-neighbor upsampling and a few plumbing ops (add, scale, row
//! slicing, weighted sum). There is no broadcasting; every op states its
//! shape contract and rejects anything else.
//!
//! Tensors are immutable after construction. A backward pass accumulates
//! gradients into the graph's tensors through interior mutability; model
//! parameters copy their gradients out and the graph is dropped.

use std::cell::{Ref, RefCell};
use std::collections::BTreeSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{arg_err, shape_err, Result};

/// Training precision for all tensor data.
pub type Real = f64;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

type BackwardFn = Box<dyn Fn(&[Real], &[Tensor])>;

struct TensorInner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<Real>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<Real>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// A dense N-dimensional array, row-major, optionally tracked for gradients.
///
/// Cloning is cheap (reference-counted); the underlying data is shared and
/// never mutated.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<TensorInner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(
        shape: Vec<usize>,
        data: Vec<Real>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
    ) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            inner: Rc::new(TensorInner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                parents,
                backward,
            }),
        }
    }

    /// A constant tensor (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<Real>) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(shape_err(
                "from_vec",
                format!("shape {:?} holds {} values, got {}", shape, numel(shape), data.len()),
            ));
        }
        if shape.contains(&0) {
            return Err(arg_err("from_vec", format!("zero extent in shape {shape:?}")));
        }
        Ok(Tensor::build(shape.to_vec(), data, false, Vec::new(), None))
    }

    /// A leaf parameter: gradients accumulate here during backward.
    pub fn param(shape: &[usize], data: Vec<Real>) -> Result<Tensor> {
        let t = Tensor::from_vec(shape, data)?;
        Ok(Tensor::build(t.inner.shape.clone(), t.inner.data.clone(), true, Vec::new(), None))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::build(shape.to_vec(), vec![0.0; numel(shape)], false, Vec::new(), None)
    }

    pub fn full(shape: &[usize], value: Real) -> Tensor {
        Tensor::build(shape.to_vec(), vec![value; numel(shape)], false, Vec::new(), None)
    }

    pub fn scalar(value: Real) -> Tensor {
        Tensor::full(&[1], value)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[Real] {
        &self.inner.data
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> Real {
        assert_eq!(self.inner.data.len(), 1, "item() on non-scalar tensor");
        self.inner.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }

    /// Accumulated gradient, if a backward pass reached this tensor.
    pub fn grad(&self) -> Option<Ref<'_, Vec<Real>>> {
        let borrow = self.inner.grad.borrow();
        if borrow.is_some() {
            Some(Ref::map(borrow, |g| g.as_ref().unwrap()))
        } else {
            None
        }
    }

    fn accumulate_grad(&self, delta: &[Real]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Reverse-mode gradient pass from a scalar output.
    ///
    /// Node ids increase in creation order, so visiting the reachable set in
    /// decreasing id order is a valid reverse topological order.
    pub fn backward(&self) {
        assert_eq!(self.inner.data.len(), 1, "backward() requires a scalar output");
        let mut nodes: Vec<Tensor> = Vec::new();
        let mut seen = BTreeSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !t.inner.requires_grad || !seen.insert(t.inner.id) {
                continue;
            }
            for p in &t.inner.parents {
                stack.push(p.clone());
            }
            nodes.push(t);
        }
        nodes.sort_by_key(|t| std::cmp::Reverse(t.inner.id));
        self.accumulate_grad(&[1.0]);
        for node in &nodes {
            if let Some(bw) = &node.inner.backward {
                let grad = node.inner.grad.borrow();
                if let Some(g) = grad.as_ref() {
                    bw(g, &node.inner.parents);
                }
            }
        }
    }
}

fn any_grad(tensors: &[&Tensor]) -> bool {
    tensors.iter().any(|t| t.requires_grad())
}

fn unary_out(
    shape: Vec<usize>,
    data: Vec<Real>,
    parent: &Tensor,
    backward: BackwardFn,
) -> Tensor {
    let rg = parent.requires_grad();
    Tensor::build(
        shape,
        data,
        rg,
        vec![parent.clone()],
        if rg { Some(backward) } else { None },
    )
}

fn nary_out(shape: Vec<usize>, data: Vec<Real>, parents: &[&Tensor], backward: BackwardFn) -> Tensor {
    let rg = any_grad(parents);
    Tensor::build(
        shape,
        data,
        rg,
        parents.iter().map(|t| (*t).clone()).collect(),
        if rg { Some(backward) } else { None },
    )
}

/// `max(0, x)` elementwise.
pub fn relu(x: &Tensor) -> Tensor {
    let data: Vec<Real> = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    unary_out(x.shape().to_vec(), data, x, Box::new(|grad, parents| {
        let x = &parents[0];
        if x.requires_grad() {
            let delta: Vec<Real> = x
                .data()
                .iter()
                .zip(grad)
                .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                .collect();
            x.accumulate_grad(&delta);
        }
    }))
}

/// Elementwise product of two same-shape tensors.
pub fn elementwise_mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            "elementwise_mul",
            format!("lhs {:?} vs rhs {:?}", a.shape(), b.shape()),
        ));
    }
    let data: Vec<Real> = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Ok(nary_out(a.shape().to_vec(), data, &[a, b], Box::new(|grad, parents| {
        let (a, b) = (&parents[0], &parents[1]);
        if a.requires_grad() {
            let delta: Vec<Real> = grad.iter().zip(b.data()).map(|(&g, &y)| g * y).collect();
            a.accumulate_grad(&delta);
        }
        if b.requires_grad() {
            let delta: Vec<Real> = grad.iter().zip(a.data()).map(|(&g, &x)| g * x).collect();
            b.accumulate_grad(&delta);
        }
    })))
}

/// Elementwise sum of two same-shape tensors.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err("add", format!("lhs {:?} vs rhs {:?}", a.shape(), b.shape())));
    }
    let data: Vec<Real> = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Ok(nary_out(a.shape().to_vec(), data, &[a, b], Box::new(|grad, parents| {
        for p in &parents[..2] {
            if p.requires_grad() {
                p.accumulate_grad(grad);
            }
        }
    })))
}

/// Multiply by a constant.
pub fn scale(x: &Tensor, c: Real) -> Tensor {
    let data: Vec<Real> = x.data().iter().map(|&v| c * v).collect();
    unary_out(x.shape().to_vec(), data, x, Box::new(move |grad, parents| {
        let x = &parents[0];
        if x.requires_grad() {
            let delta: Vec<Real> = grad.iter().map(|&g| c * g).collect();
            x.accumulate_grad(&delta);
        }
    }))
}

/// 2-D cross-correlation. `input` is N×C×H×W, `weight` is O×C×KH×KW.
pub fn conv2d(input: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let ishape = input.shape();
    let wshape = weight.shape();
    if ishape.len() != 4 {
        return Err(shape_err("conv2d", format!("input must be N×C×H×W, got {ishape:?}")));
    }
    if wshape.len() != 4 {
        return Err(shape_err("conv2d", format!("weight must be O×I×KH×KW, got {wshape:?}")));
    }
    let (n, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    let (oc, ic, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
    if ic != c {
        return Err(shape_err(
            "conv2d",
            format!("input has {c} channels but weight expects {ic}"),
        ));
    }
    if stride == 0 {
        return Err(arg_err("conv2d", "stride must be positive"));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(shape_err(
            "conv2d",
            format!("kernel {kh}×{kw} exceeds padded input {}×{}", h + 2 * padding, w + 2 * padding),
        ));
    }
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;

    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0.0; n * oc * oh * ow];
    for bn in 0..n {
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for i in 0..c {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += x[((bn * c + i) * h + iy as usize) * w + ix as usize]
                                    * wt[((o * c + i) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((bn * oc + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }

    Ok(nary_out(
        vec![n, oc, oh, ow],
        out,
        &[input, weight],
        Box::new(move |grad, parents| {
            let (input, weight) = (&parents[0], &parents[1]);
            let x = input.data();
            let wt = weight.data();
            let need_x = input.requires_grad();
            let need_w = weight.requires_grad();
            let mut gx = if need_x { vec![0.0; x.len()] } else { Vec::new() };
            let mut gw = if need_w { vec![0.0; wt.len()] } else { Vec::new() };
            for bn in 0..n {
                for o in 0..oc {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = grad[((bn * oc + o) * oh + oy) * ow + ox];
                            if g == 0.0 {
                                continue;
                            }
                            for i in 0..c {
                                for ky in 0..kh {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (ox * stride + kx) as isize - padding as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let xi = ((bn * c + i) * h + iy as usize) * w + ix as usize;
                                        let wi = ((o * c + i) * kh + ky) * kw + kx;
                                        if need_x {
                                            gx[xi] += g * wt[wi];
                                        }
                                        if need_w {
                                            gw[wi] += g * x[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if need_x {
                input.accumulate_grad(&gx);
            }
            if need_w {
                weight.accumulate_grad(&gw);
            }
        }),
    ))
}

/// Fully connected layer: `x` is N×D, `weight` K×D, `bias` K; output N×K.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let xs = x.shape();
    let ws = weight.shape();
    let bs = bias.shape();
    if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 {
        return Err(shape_err(
            "linear",
            format!("expected x N×D, weight K×D, bias K; got {xs:?}, {ws:?}, {bs:?}"),
        ));
    }
    let (n, d) = (xs[0], xs[1]);
    let (k, wd) = (ws[0], ws[1]);
    if wd != d {
        return Err(shape_err("linear", format!("x feature dim {d} vs weight dim {wd}")));
    }
    if bs[0] != k {
        return Err(shape_err("linear", format!("bias length {} vs {k} outputs", bs[0])));
    }
    let xd = x.data();
    let wd_ = weight.data();
    let bd = bias.data();
    let mut out = vec![0.0; n * k];
    for bn in 0..n {
        for o in 0..k {
            let mut acc = bd[o];
            for j in 0..d {
                acc += xd[bn * d + j] * wd_[o * d + j];
            }
            out[bn * k + o] = acc;
        }
    }
    Ok(nary_out(vec![n, k], out, &[x, weight, bias], Box::new(move |grad, parents| {
        let (x, weight, bias) = (&parents[0], &parents[1], &parents[2]);
        let xd = x.data();
        let wd_ = weight.data();
        if x.requires_grad() {
            let mut gx = vec![0.0; n * d];
            for bn in 0..n {
                for o in 0..k {
                    let g = grad[bn * k + o];
                    for j in 0..d {
                        gx[bn * d + j] += g * wd_[o * d + j];
                    }
                }
            }
            x.accumulate_grad(&gx);
        }
        if weight.requires_grad() {
            let mut gw = vec![0.0; k * d];
            for bn in 0..n {
                for o in 0..k {
                    let g = grad[bn * k + o];
                    for j in 0..d {
                        gw[o * d + j] += g * xd[bn * d + j];
                    }
                }
            }
            weight.accumulate_grad(&gw);
        }
        if bias.requires_grad() {
            let mut gb = vec![0.0; k];
            for bn in 0..n {
                for o in 0..k {
                    gb[o] += grad[bn * k + o];
                }
            }
            bias.accumulate_grad(&gb);
        }
    })))
}

/// Per-channel spatial mean: N×C×H×W → N×C.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(shape_err("global_avg_pool", format!("expected N×C×H×W, got {s:?}")));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let area = h * w;
    let xd = x.data();
    let mut out = vec![0.0; n * c];
    for bn in 0..n {
        for ch in 0..c {
            let base = (bn * c + ch) * area;
            let mut acc = 0.0;
            for p in 0..area {
                acc += xd[base + p];
            }
            out[bn * c + ch] = acc / area as Real;
        }
    }
    Ok(unary_out(vec![n, c], out, x, Box::new(move |grad, parents| {
        let x = &parents[0];
        if x.requires_grad() {
            let mut gx = vec![0.0; n * c * area];
            for bn in 0..n {
                for ch in 0..c {
                    let g = grad[bn * c + ch] / area as Real;
                    let base = (bn * c + ch) * area;
                    for p in 0..area {
                        gx[base + p] = g;
                    }
                }
            }
            x.accumulate_grad(&gx);
        }
    })))
}

/// Mean cross-entropy of softmaxed logits (N×K) against class indices.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let s = logits.shape();
    if s.len() != 2 {
        return Err(shape_err("softmax_cross_entropy", format!("expected N×K logits, got {s:?}")));
    }
    let (n, k) = (s[0], s[1]);
    if targets.len() != n {
        return Err(shape_err(
            "softmax_cross_entropy",
            format!("{n} rows but {} targets", targets.len()),
        ));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
        return Err(arg_err(
            "softmax_cross_entropy",
            format!("class index {bad} out of range for {k} classes"),
        ));
    }
    let ld = logits.data();
    let mut probs = vec![0.0; n * k];
    let mut loss = 0.0;
    for bn in 0..n {
        let row = &ld[bn * k..(bn + 1) * k];
        let m = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
        let mut z = 0.0;
        for &v in row {
            z += (v - m).exp();
        }
        let lse = m + z.ln();
        for (j, &v) in row.iter().enumerate() {
            probs[bn * k + j] = (v - lse).exp();
        }
        loss += lse - row[targets[bn]];
    }
    loss /= n as Real;
    let targets_owned = targets.to_vec();
    Ok(unary_out(vec![1], vec![loss], logits, Box::new(move |grad, parents| {
        let logits = &parents[0];
        if logits.requires_grad() {
            let g = grad[0] / n as Real;
            let mut gl = vec![0.0; n * k];
            for bn in 0..n {
                for j in 0..k {
                    let indicator = if j == targets_owned[bn] { 1.0 } else { 0.0 };
                    gl[bn * k + j] = g * (probs[bn * k + j] - indicator);
                }
            }
            logits.accumulate_grad(&gl);
        }
    })))
}

/// Mean squared error between two same-shape tensors.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err("mse", format!("lhs {:?} vs rhs {:?}", a.shape(), b.shape())));
    }
    let len = a.data().len();
    let mut acc = 0.0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        acc += d * d;
    }
    let loss = acc / len as Real;
    Ok(nary_out(vec![1], vec![loss], &[a, b], Box::new(move |grad, parents| {
        let (a, b) = (&parents[0], &parents[1]);
        let g = 2.0 * grad[0] / len as Real;
        if a.requires_grad() {
            let delta: Vec<Real> =
                a.data().iter().zip(b.data()).map(|(&x, &y)| g * (x - y)).collect();
            a.accumulate_grad(&delta);
        }
        if b.requires_grad() {
            let delta: Vec<Real> =
                a.data().iter().zip(b.data()).map(|(&x, &y)| -g * (x - y)).collect();
            b.accumulate_grad(&delta);
        }
    })))
}

/// Nearest-neighbor upsampling of a C×H'×W' map to C×H×W with floor index
/// mapping: `out[ch][i][j] = in[ch][i*h'/h][j*w'/w]`.
pub fn upsample_nearest(x: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(shape_err("upsample_nearest", format!("expected C×H×W, got {s:?}")));
    }
    let (c, sh, sw) = (s[0], s[1], s[2]);
    let (th, tw) = target;
    if th < sh || tw < sw {
        return Err(arg_err(
            "upsample_nearest",
            format!("target {th}×{tw} smaller than source {sh}×{sw}"),
        ));
    }
    let xd = x.data();
    let mut out = vec![0.0; c * th * tw];
    for ch in 0..c {
        for i in 0..th {
            let sy = i * sh / th;
            for j in 0..tw {
                let sx = j * sw / tw;
                out[(ch * th + i) * tw + j] = xd[(ch * sh + sy) * sw + sx];
            }
        }
    }
    Ok(unary_out(vec![c, th, tw], out, x, Box::new(move |grad, parents| {
        let x = &parents[0];
        if x.requires_grad() {
            let mut gx = vec![0.0; c * sh * sw];
            for ch in 0..c {
                for i in 0..th {
                    let sy = i * sh / th;
                    for j in 0..tw {
                        let sx = j * sw / tw;
                        gx[(ch * sh + sy) * sw + sx] += grad[(ch * th + i) * tw + j];
                    }
                }
            }
            x.accumulate_grad(&gx);
        }
    })))
}

/// Contiguous rows `start..start+len` along the first axis.
pub fn slice_rows(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.is_empty() {
        return Err(shape_err("slice_rows", "scalar has no rows".to_string()));
    }
    if start + len > s[0] {
        return Err(arg_err(
            "slice_rows",
            format!("rows {start}..{} out of range for {} rows", start + len, s[0]),
        ));
    }
    if len == 0 {
        return Err(arg_err("slice_rows", "empty slice"));
    }
    let row = numel(&s[1..]);
    let mut shape = s.to_vec();
    shape[0] = len;
    let data = x.data()[start * row..(start + len) * row].to_vec();
    Ok(unary_out(shape, data, x, Box::new(move |grad, parents| {
        let x = &parents[0];
        if x.requires_grad() {
            let mut gx = vec![0.0; x.data().len()];
            gx[start * row..(start + len) * row].copy_from_slice(grad);
            x.accumulate_grad(&gx);
        }
    })))
}

/// Weighted sum reduction to a scalar: `Σ w_i · x_i`.
pub fn weighted_sum(x: &Tensor, weights: &[Real]) -> Result<Tensor> {
    if weights.len() != x.data().len() {
        return Err(shape_err(
            "weighted_sum",
            format!("{} weights for {} elements", weights.len(), x.data().len()),
        ));
    }
    let acc: Real = x.data().iter().zip(weights).map(|(&v, &w)| v * w).sum();
    let weights_owned = weights.to_vec();
    Ok(unary_out(vec![1], vec![acc], x, Box::new(move |grad, parents| {
        let x = &parents[0];
        if x.requires_grad() {
            let delta: Vec<Real> = weights_owned.iter().map(|&w| w * grad[0]).collect();
            x.accumulate_grad(&delta);
        }
    })))
}
