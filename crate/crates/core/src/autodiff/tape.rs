//! Operation tape and the differentiable primitives.
//!
//! Nodes are appended in execution order, so the node vector is already a
//! topological order and the backward pass is a single reverse sweep.

use super::tensor::Tensor;
use super::{Result, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `[.., M, K] x [K, N]` or `[M, K] x [B, K, N]`.
    MatMul { a: Var, b: Var },
    Transpose { a: Var },
    Reshape { a: Var },
    Add { a: Var, b: Var },
    AddBias { x: Var, bias: Var, axis: usize },
    MulScalar { a: Var, c: f64 },
    Relu { a: Var },
    SoftmaxRows { a: Var },
    Conv1x1 { x: Var, w: Var },
    Conv1d { x: Var, kernel: Var, dilation: usize, left_pad: usize },
    LastStep { x: Var },
    MeanAll { a: Var },
    SmoothL1 { pred: Var, target: Var, beta: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records executed primitives for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every leaf that required them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into the buffer of `target`. Leaves without a
    /// recorded gradient contribute zeros.
    pub fn accumulate_into(&self, v: Var, target: &mut Tensor) {
        match self.get(v) {
            Some(g) => target.accumulate_grad(g),
            None => target.accumulate_grad(&vec![0.0; target.numel()]),
        }
    }
}

fn mismatch(op: &'static str, expected: impl Into<String>, got: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        expected: expected.into(),
        got: format!("{got:?}"),
    }
}

/// `c[m,n] += a[m,k] * b[k,n]`
fn gemm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m,k] += a[m,n] * b[k,n]^T`
fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            c[i * k + p] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c[k,n] += a[m,k]^T * b[m,n]`
fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: Vec<f64>) {
    match dst {
        Some(d) => d.iter_mut().zip(&src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Registers a tensor as a leaf. Gradients are tracked when
    /// `t.requires_grad` is set.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let mut value = t.clone();
        value.zero_grad();
        let needs = t.requires_grad;
        self.push(value, Op::Leaf, needs)
    }

    /// Registers a value that never receives gradients.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        t.zero_grad();
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let out = match (sa.len(), sb.len()) {
            (na, 2) if na >= 2 => {
                let k = sa[na - 1];
                if sb[0] != k {
                    return Err(mismatch("matmul", format!("rhs rows = {k}"), &sb));
                }
                let n = sb[1];
                let m = da.len() / k;
                let mut c = vec![0.0; m * n];
                gemm(da, db, &mut c, m, k, n);
                let mut shape = sa.clone();
                *shape.last_mut().unwrap() = n;
                Tensor::new(shape, c)?
            }
            (2, 3) => {
                let (m, k) = (sa[0], sa[1]);
                if sb[1] != k {
                    return Err(mismatch("matmul", format!("[B, {k}, N]"), &sb));
                }
                let (bsz, n) = (sb[0], sb[2]);
                let mut c = vec![0.0; bsz * m * n];
                for bi in 0..bsz {
                    gemm(
                        da,
                        &db[bi * k * n..(bi + 1) * k * n],
                        &mut c[bi * m * n..(bi + 1) * m * n],
                        m,
                        k,
                        n,
                    );
                }
                Tensor::new(vec![bsz, m, n], c)?
            }
            _ => return Err(mismatch("matmul", "[.., M, K] x [K, N] or [M, K] x [B, K, N]", &sb)),
        };
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul { a, b }, needs))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(mismatch("transpose", "2-D tensor", &s));
        }
        let (r, c) = (s[0], s[1]);
        let d = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let needs = self.needs(&[a]);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose { a }, needs))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshaped(shape.to_vec())?;
        let needs = self.needs(&[a]);
        Ok(self.push(t, Op::Reshape { a }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("add", format!("{:?}", self.shape(a)), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(t, Op::Add { a, b }, needs))
    }

    /// Adds a 1-D `bias` broadcast along `axis` of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let bs = self.shape(bias).to_vec();
        if axis >= s.len() || bs != [s[axis]] {
            return Err(mismatch("add_bias", format!("bias of length dim {axis} of {s:?}"), &bs));
        }
        let inner: usize = s[axis + 1..].iter().product();
        let c = s[axis];
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[(i / inner) % c])
            .collect();
        let needs = self.needs(&[x, bias]);
        Ok(self.push(Tensor::new(s, data)?, Op::AddBias { x, bias, axis }, needs))
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * c).collect())
            .expect("same shape");
        let needs = self.needs(&[a]);
        self.push(out, Op::MulScalar { a, c }, needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.max(0.0)).collect())
            .expect("same shape");
        let needs = self.needs(&[a]);
        self.push(out, Op::Relu { a }, needs)
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let Some(&n) = s.last() else {
            return Err(mismatch("softmax_rows", "at least 1-D", &s));
        };
        let mut out = self.value(a).data().to_vec();
        if n > 0 {
            for row in out.chunks_mut(n) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                row.iter_mut().for_each(|v| *v /= sum);
            }
        }
        let needs = self.needs(&[a]);
        Ok(self.push(Tensor::new(s, out)?, Op::SoftmaxRows { a }, needs))
    }

    /// Pointwise channel mixing: `x` is `[B, Cin, ...]`, `w` is `[Cout, Cin]`.
    pub fn conv1x1(&mut self, x: Var, w: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() < 2 || sw.len() != 2 || sw[1] != sx[1] {
            return Err(mismatch("conv1x1", format!("weight [Cout, {}]", sx.get(1).unwrap_or(&0)), &sw));
        }
        let (bsz, cin, cout) = (sx[0], sx[1], sw[0]);
        let pos: usize = sx[2..].iter().product();
        let (dx, dw) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![0.0; bsz * cout * pos];
        for b in 0..bsz {
            gemm(
                dw,
                &dx[b * cin * pos..(b + 1) * cin * pos],
                &mut out[b * cout * pos..(b + 1) * cout * pos],
                cout,
                cin,
                pos,
            );
        }
        let mut shape = sx.clone();
        shape[1] = cout;
        let needs = self.needs(&[x, w]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Conv1x1 { x, w }, needs))
    }

    /// Dilated 1-D convolution along the last axis of `x: [B, Cin, S, L]` with
    /// `kernel: [Cout, Cin, K]`, zero-padding `left_pad` steps on the left.
    /// Output length is `L + left_pad - (K - 1) * dilation`.
    pub fn conv1d_dilated(&mut self, x: Var, kernel: Var, dilation: usize, left_pad: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(kernel).to_vec();
        if sx.len() != 4 || sk.len() != 3 || sk[1] != sx[1] {
            return Err(mismatch("conv1d_dilated", "x [B, C, S, L] with kernel [Cout, C, K]", &sk));
        }
        if dilation == 0 {
            return Err(TensorError::InvalidArgument("dilation must be >= 1".into()));
        }
        let (bsz, cin, s, l) = (sx[0], sx[1], sx[2], sx[3]);
        let (cout, k) = (sk[0], sk[2]);
        let span = (k - 1) * dilation;
        if l + left_pad <= span {
            return Err(TensorError::InvalidArgument(format!(
                "sequence length {l} too short for receptive span {span}"
            )));
        }
        let lout = l + left_pad - span;
        let (dx, dk) = (self.value(x).data(), self.value(kernel).data());
        let mut out = vec![0.0; bsz * cout * s * lout];
        for b in 0..bsz {
            for co in 0..cout {
                let obase = (b * cout + co) * s * lout;
                for ci in 0..cin {
                    let xbase = (b * cin + ci) * s * l;
                    for j in 0..k {
                        let w = dk[(co * cin + ci) * k + j];
                        if w == 0.0 {
                            continue;
                        }
                        let shift = (j * dilation) as isize - left_pad as isize;
                        let (t0, t1) = tap_range(shift, l, lout);
                        for si in 0..s {
                            let orow = &mut out[obase + si * lout..obase + (si + 1) * lout];
                            let xrow = &dx[xbase + si * l..xbase + (si + 1) * l];
                            for t in t0..t1 {
                                orow[t] += w * xrow[(t as isize + shift) as usize];
                            }
                        }
                    }
                }
            }
        }
        let needs = self.needs(&[x, kernel]);
        Ok(self.push(
            Tensor::new(vec![bsz, cout, s, lout], out)?,
            Op::Conv1d {
                x,
                kernel,
                dilation,
                left_pad,
            },
            needs,
        ))
    }

    /// Causal dilated convolution: output at time `t` only reads inputs at
    /// times `<= t` and the length is preserved.
    pub fn causal_conv1d(&mut self, x: Var, kernel: Var, dilation: usize) -> Result<Var> {
        let k = *self.shape(kernel).last().unwrap_or(&1);
        self.conv1d_dilated(x, kernel, dilation, k.saturating_sub(1) * dilation)
    }

    /// Takes the final time step of `x: [B, C, S, L]` as `[B, S, C]`.
    pub fn last_step(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 || sx[3] == 0 {
            return Err(mismatch("last_step", "[B, C, S, L] with L >= 1", &sx));
        }
        let (bsz, c, s, l) = (sx[0], sx[1], sx[2], sx[3]);
        let d = self.value(x).data();
        let mut out = vec![0.0; bsz * s * c];
        for b in 0..bsz {
            for ci in 0..c {
                for si in 0..s {
                    out[(b * s + si) * c + ci] = d[((b * c + ci) * s + si) * l + l - 1];
                }
            }
        }
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![bsz, s, c], out)?, Op::LastStep { x }, needs))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        let needs = self.needs(&[a]);
        self.push(Tensor::scalar(m), Op::MeanAll { a }, needs)
    }

    /// Mean Huber-style smooth L1: `0.5 d^2 / beta` for `|d| < beta`, else
    /// `|d| - beta / 2`.
    pub fn smooth_l1(&mut self, pred: Var, target: Var, beta: f64) -> Result<Var> {
        if !(beta > 0.0) {
            return Err(TensorError::InvalidArgument(format!("beta must be > 0, got {beta}")));
        }
        if self.shape(pred) != self.shape(target) {
            return Err(mismatch("smooth_l1", format!("{:?}", self.shape(pred)), self.shape(target)));
        }
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let n = p.len() as f64;
        let loss = p
            .iter()
            .zip(t)
            .map(|(a, b)| {
                let d = (a - b).abs();
                if d < beta {
                    0.5 * d * d / beta
                } else {
                    d - 0.5 * beta
                }
            })
            .sum::<f64>()
            / n;
        let needs = self.needs(&[pred, target]);
        Ok(self.push(Tensor::scalar(loss), Op::SmoothL1 { pred, target, beta }, needs))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (da, db) = (self.value(a).data(), self.value(b).data());
                if sb.len() == 2 {
                    let (k, n) = (sb[0], sb[1]);
                    let m = da.len() / k;
                    if self.wants(a) {
                        let mut ga = vec![0.0; m * k];
                        gemm_nt(g, db, &mut ga, m, n, k);
                        add_into(&mut grads[a.0], ga);
                    }
                    if self.wants(b) {
                        let mut gb = vec![0.0; k * n];
                        gemm_tn(da, g, &mut gb, m, k, n);
                        add_into(&mut grads[b.0], gb);
                    }
                } else {
                    let (m, k) = (sa[0], sa[1]);
                    let (bsz, n) = (sb[0], sb[2]);
                    if self.wants(a) {
                        let mut ga = vec![0.0; m * k];
                        for bi in 0..bsz {
                            gemm_nt(&g[bi * m * n..(bi + 1) * m * n], &db[bi * k * n..(bi + 1) * k * n], &mut ga, m, n, k);
                        }
                        add_into(&mut grads[a.0], ga);
                    }
                    if self.wants(b) {
                        let mut gb = vec![0.0; bsz * k * n];
                        for bi in 0..bsz {
                            gemm_tn(da, &g[bi * m * n..(bi + 1) * m * n], &mut gb[bi * k * n..(bi + 1) * k * n], m, k, n);
                        }
                        add_into(&mut grads[b.0], gb);
                    }
                }
            }
            Op::Transpose { a } => {
                let s = self.shape(a);
                let (r, c) = (s[0], s[1]);
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[j * r + i];
                    }
                }
                add_into(&mut grads[a.0], ga);
            }
            Op::Reshape { a } => add_into(&mut grads[a.0], g.to_vec()),
            Op::Add { a, b } => {
                if self.wants(a) {
                    add_into(&mut grads[a.0], g.to_vec());
                }
                if self.wants(b) {
                    add_into(&mut grads[b.0], g.to_vec());
                }
            }
            Op::AddBias { x, bias, axis } => {
                if self.wants(x) {
                    add_into(&mut grads[x.0], g.to_vec());
                }
                if self.wants(bias) {
                    let s = self.shape(x);
                    let inner: usize = s[axis + 1..].iter().product();
                    let c = s[axis];
                    let mut gb = vec![0.0; c];
                    for (idx, v) in g.iter().enumerate() {
                        gb[(idx / inner) % c] += v;
                    }
                    add_into(&mut grads[bias.0], gb);
                }
            }
            Op::MulScalar { a, c } => add_into(&mut grads[a.0], g.iter().map(|v| v * c).collect()),
            Op::Relu { a } => {
                let x = self.value(a).data();
                let ga = g
                    .iter()
                    .zip(x)
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                add_into(&mut grads[a.0], ga);
            }
            Op::SoftmaxRows { a } => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap();
                let mut ga = vec![0.0; y.len()];
                for ((yr, gr), out) in y.chunks(n).zip(g.chunks(n)).zip(ga.chunks_mut(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((o, yv), gv) in out.iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                add_into(&mut grads[a.0], ga);
            }
            Op::Conv1x1 { x, w } => {
                let sx = self.shape(x);
                let (bsz, cin) = (sx[0], sx[1]);
                let pos: usize = sx[2..].iter().product();
                let cout = self.shape(w)[0];
                let (dx, dw) = (self.value(x).data(), self.value(w).data());
                if self.wants(x) {
                    let mut gx = vec![0.0; dx.len()];
                    for b in 0..bsz {
                        gemm_tn(
                            dw,
                            &g[b * cout * pos..(b + 1) * cout * pos],
                            &mut gx[b * cin * pos..(b + 1) * cin * pos],
                            cout,
                            cin,
                            pos,
                        );
                    }
                    add_into(&mut grads[x.0], gx);
                }
                if self.wants(w) {
                    let mut gw = vec![0.0; cout * cin];
                    for b in 0..bsz {
                        gemm_nt(
                            &g[b * cout * pos..(b + 1) * cout * pos],
                            &dx[b * cin * pos..(b + 1) * cin * pos],
                            &mut gw,
                            cout,
                            pos,
                            cin,
                        );
                    }
                    add_into(&mut grads[w.0], gw);
                }
            }
            Op::Conv1d {
                x,
                kernel,
                dilation,
                left_pad,
            } => {
                let sx = self.shape(x);
                let (bsz, cin, s, l) = (sx[0], sx[1], sx[2], sx[3]);
                let sk = self.shape(kernel);
                let (cout, k) = (sk[0], sk[2]);
                let lout = node.value.shape()[3];
                let (dx, dk) = (self.value(x).data(), self.value(kernel).data());
                let want_x = self.wants(x);
                let want_k = self.wants(kernel);
                let mut gx = if want_x { vec![0.0; dx.len()] } else { Vec::new() };
                let mut gk = if want_k { vec![0.0; dk.len()] } else { Vec::new() };
                for b in 0..bsz {
                    for co in 0..cout {
                        let obase = (b * cout + co) * s * lout;
                        for ci in 0..cin {
                            let xbase = (b * cin + ci) * s * l;
                            for j in 0..k {
                                let kidx = (co * cin + ci) * k + j;
                                let w = dk[kidx];
                                let shift = (j * dilation) as isize - left_pad as isize;
                                let (t0, t1) = tap_range(shift, l, lout);
                                let mut acc = 0.0;
                                for si in 0..s {
                                    let grow = &g[obase + si * lout..obase + (si + 1) * lout];
                                    let xoff = xbase + si * l;
                                    for t in t0..t1 {
                                        let src = xoff + (t as isize + shift) as usize;
                                        if want_x {
                                            gx[src] += w * grow[t];
                                        }
                                        acc += grow[t] * dx[src];
                                    }
                                }
                                if want_k {
                                    gk[kidx] += acc;
                                }
                            }
                        }
                    }
                }
                if want_x {
                    add_into(&mut grads[x.0], gx);
                }
                if want_k {
                    add_into(&mut grads[kernel.0], gk);
                }
            }
            Op::LastStep { x } => {
                let sx = self.shape(x);
                let (bsz, c, s, l) = (sx[0], sx[1], sx[2], sx[3]);
                let mut gx = vec![0.0; bsz * c * s * l];
                for b in 0..bsz {
                    for ci in 0..c {
                        for si in 0..s {
                            gx[((b * c + ci) * s + si) * l + l - 1] = g[(b * s + si) * c + ci];
                        }
                    }
                }
                add_into(&mut grads[x.0], gx);
            }
            Op::MeanAll { a } => {
                let n = self.value(a).numel();
                add_into(&mut grads[a.0], vec![g[0] / n as f64; n]);
            }
            Op::SmoothL1 { pred, target, beta } => {
                let (p, t) = (self.value(pred).data(), self.value(target).data());
                let n = p.len() as f64;
                let gp: Vec<f64> = p
                    .iter()
                    .zip(t)
                    .map(|(a, b)| {
                        let d = a - b;
                        let dl = if d.abs() < beta { d / beta } else { d.signum() };
                        g[0] * dl / n
                    })
                    .collect();
                if self.wants(target) {
                    add_into(&mut grads[target.0], gp.iter().map(|v| -v).collect());
                }
                if self.wants(pred) {
                    add_into(&mut grads[pred.0], gp);
                }
            }
        }
    }
}

/// Output positions `t` whose tap `t + shift` lands inside `[0, l)`.
fn tap_range(shift: isize, l: usize, lout: usize) -> (usize, usize) {
    let t0 = (-shift).max(0) as usize;
    let t1 = ((l as isize - shift).max(0) as usize).min(lout);
    (t0.min(t1), t1)
}
