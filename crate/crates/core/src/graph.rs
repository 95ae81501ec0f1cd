//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the [`Graph`]; node order is the
//! topological order, so [`Graph::backward`] walks the tape from the end.
//! Implicit broadcasting is limited to expanding *leading* dimensions of the
//! right operand from size 1 (or from absence); trailing expansion has to go
//! through [`Graph::expand_lastdim`]. Additive masks given to
//! [`Graph::softmax_lastdim`] are constants and may broadcast on any axis.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
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
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize, a_shared: bool, b_shared: bool },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Minimum { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    AddScalar { x: Var },
    Powf { x: Var, p: f64 },
    Relu { x: Var },
    Tanh { x: Var },
    Exp { x: Var },
    Log { x: Var },
    Softmax { x: Var },
    Gather { table: Var, ids: Vec<usize> },
    MeanLast { x: Var },
    VarLast { x: Var, mean: Vec<f64> },
    ExpandLast { x: Var },
    SumLast { x: Var },
    SumAll { x: Var },
    MeanAll { x: Var },
    CrossEntropy { logits: Var, targets: Vec<usize>, pad_id: usize, probs: Vec<f64>, count: usize },
    Reshape { x: Var },
    SwapAxes { x: Var, i: usize, j: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn sgemm_like(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides describe in-bounds row/column walks over `a` (m x k),
    // `b` (k x n) and the contiguous row-major `c` (m x n); all slices are
    // borrowed for the duration of the call and `c` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Where the right operand of a broadcasting binary op repeats.
/// Returns the number of tiles of `b` inside `a`.
fn leading_broadcast(a: &[usize], b: &[usize]) -> Result<usize> {
    if b.len() > a.len() {
        return Err(Error::shape(format!("cannot broadcast {b:?} onto {a:?}")));
    }
    let pad = a.len() - b.len();
    let mut padded = vec![1usize; pad];
    padded.extend_from_slice(b);
    // Dimensions equal from some split point onward, all ones before it.
    let mut split = a.len();
    while split > 0 && padded[split - 1] == a[split - 1] {
        split -= 1;
    }
    if padded[..split].iter().any(|&d| d != 1) {
        return Err(Error::shape(format!(
            "shapes {a:?} and {b:?} are not leading-dimension broadcastable"
        )));
    }
    let a_n: usize = a.iter().product();
    let b_n: usize = b.iter().product();
    Ok(a_n / b_n)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Row-stochastic softmax over the last dim with an optional additive mask.
pub(crate) fn softmax_rows(
    x: &[f64],
    shape: &[usize],
    mask: Option<&Tensor>,
) -> Result<Vec<f64>> {
    let d = *shape.last().unwrap();
    let rows = x.len() / d;
    let mut out = vec![0.0; x.len()];
    let mask_index = match mask {
        Some(m) => {
            if m.rank() != shape.len()
                || m.shape().iter().zip(shape).any(|(&md, &xd)| md != 1 && md != xd)
            {
                return Err(Error::shape(format!(
                    "mask {:?} does not broadcast to {shape:?}",
                    m.shape()
                )));
            }
            Some((m, strides(m.shape()), strides(shape)))
        }
        None => None,
    };
    let mut row_mask = vec![0.0; d];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        if let Some((m, ms, xs)) = &mask_index {
            let base = r * d;
            for (j, slot) in row_mask.iter_mut().enumerate() {
                let mut flat = base + j;
                let mut moff = 0;
                for (ax, &st) in xs.iter().enumerate() {
                    let c = flat / st;
                    flat %= st;
                    if m.shape()[ax] != 1 {
                        moff += c * ms[ax];
                    }
                }
                *slot = m.data()[moff];
            }
        }
        let mut mx = f64::NEG_INFINITY;
        for j in 0..d {
            let v = xr[j] + row_mask[j];
            if v > mx {
                mx = v;
            }
        }
        if mx == f64::NEG_INFINITY {
            return Err(Error::MaskedEmptyRow(format!("row {r} of {shape:?}")));
        }
        let o = &mut out[r * d..(r + 1) * d];
        let mut sum = 0.0;
        for j in 0..d {
            let v = xr[j] + row_mask[j];
            let e = if v == f64::NEG_INFINITY { 0.0 } else { (v - mx).exp() };
            o[j] = e;
            sum += e;
        }
        for v in o.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`; handles to them become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, shape: &[usize], data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let mut t = Tensor::from_vec(shape, data).expect("derived shape is consistent");
        t.requires_grad = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad);
        self.push(t, op)
    }

    /// Adds an input tensor; its `requires_grad` flag is kept.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Adds a differentiable input.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad())
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].value.grad.take()
    }

    /// Batched matrix product `[.., m, k] x [.., k, n]`.
    ///
    /// Batch dims must match, or one side's batch must be absent/all ones,
    /// in which case that operand is shared by every batch slice.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape(format!("matmul needs rank >= 2, got {sa:?} x {sb:?}")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(Error::shape(format!("matmul inner dims differ: {sa:?} x {sb:?}")));
        }
        let ba = &sa[..sa.len() - 2];
        let bb = &sb[..sb.len() - 2];
        let na: usize = ba.iter().product();
        let nb: usize = bb.iter().product();
        let (batch_shape, a_shared, b_shared) = if ba == bb {
            (ba.to_vec(), false, false)
        } else if nb == 1 {
            (ba.to_vec(), false, true)
        } else if na == 1 {
            (bb.to_vec(), true, false)
        } else {
            return Err(Error::shape(format!("matmul batch dims differ: {sa:?} x {sb:?}")));
        };
        let batches = na.max(nb);
        let mut out = vec![0.0; batches * m * n];
        {
            let ad = self.data(a);
            let bd = self.data(b);
            for i in 0..batches {
                let ao = if a_shared { 0 } else { i * m * k };
                let bo = if b_shared { 0 } else { i * k * n };
                sgemm_like(
                    m,
                    k,
                    n,
                    &ad[ao..ao + m * k],
                    (k as isize, 1),
                    &bd[bo..bo + k * n],
                    (n as isize, 1),
                    &mut out[i * m * n..(i + 1) * m * n],
                    0.0,
                );
            }
        }
        let mut shape = batch_shape;
        shape.extend([m, n]);
        Ok(self.derived(&shape, out, Op::MatMul { a, b, m, k, n, a_shared, b_shared }, &[a, b]))
    }

    fn broadcast_binary(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Vec<usize>, Vec<f64>)> {
        let sa = self.shape(a).to_vec();
        let tiles = leading_broadcast(&sa, self.shape(b))?;
        let ad = self.data(a);
        let bd = self.data(b);
        let bn = bd.len();
        let mut out = Vec::with_capacity(ad.len());
        for t in 0..tiles {
            let chunk = &ad[t * bn..(t + 1) * bn];
            out.extend(chunk.iter().zip(bd).map(|(&x, &y)| f(x, y)));
        }
        Ok((sa, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, d) = self.broadcast_binary(a, b, |x, y| x + y)?;
        Ok(self.derived(&s, d, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, d) = self.broadcast_binary(a, b, |x, y| x - y)?;
        Ok(self.derived(&s, d, Op::Sub { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, d) = self.broadcast_binary(a, b, |x, y| x * y)?;
        Ok(self.derived(&s, d, Op::Mul { a, b }, &[a, b]))
    }

    /// Elementwise minimum of two equally shaped tensors; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "minimum needs equal shapes, got {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let d = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x.min(y)).collect();
        let s = self.shape(a).to_vec();
        Ok(self.derived(&s, d, Op::Minimum { a, b }, &[a, b]))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let s = self.shape(x).to_vec();
        let d = self.data(x).iter().map(|&v| f(v)).collect();
        self.derived(&s, d, op, &[x])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale { x, c })
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar { x })
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        self.unary(x, |v| v.powf(p), Op::Powf { x, p })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu { x })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh { x })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp { x })
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log { x })
    }

    /// Softmax over the last dimension.
    ///
    /// `mask` entries are 0 or `-inf`; masked positions come out exactly 0.
    /// A row with every entry masked is an error.
    pub fn softmax_lastdim(&mut self, x: Var, mask: Option<&Tensor>) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = softmax_rows(self.data(x), &s, mask)?;
        Ok(self.derived(&s, d, Op::Softmax { x }, &[x]))
    }

    /// Rows `ids` of a `[V, d]` table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(Error::shape(format!("gather_rows needs a [V, d] table, got {s:?}")));
        }
        let (v, d) = (s[0], s[1]);
        if ids.is_empty() {
            return Err(Error::shape("gather_rows with no ids"));
        }
        let td = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index(format!("id {id} outside table of {v} rows")));
            }
            out.extend_from_slice(&td[id * d..(id + 1) * d]);
        }
        Ok(self.derived(&[ids.len(), d], out, Op::Gather { table, ids: ids.to_vec() }, &[table]))
    }

    /// Mean and biased variance `E[x^2] - E[x]^2` over the last dim, each shaped `[.., 1]`.
    pub fn mean_var_lastdim(&mut self, x: Var) -> (Var, Var) {
        let s = self.shape(x).to_vec();
        let d = *s.last().unwrap();
        let xd = self.data(x);
        let rows = xd.len() / d;
        let mut mean = Vec::with_capacity(rows);
        let mut var = Vec::with_capacity(rows);
        for r in xd.chunks(d) {
            let m = r.iter().sum::<f64>() / d as f64;
            let v = r.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / d as f64;
            mean.push(m);
            var.push(v);
        }
        let mut rs = s.clone();
        *rs.last_mut().unwrap() = 1;
        let mv = self.derived(&rs, mean.clone(), Op::MeanLast { x }, &[x]);
        let vv = self.derived(&rs, var, Op::VarLast { x, mean }, &[x]);
        (mv, vv)
    }

    /// `[.., 1]` to `[.., d]` by repetition.
    pub fn expand_lastdim(&mut self, x: Var, d: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if *s.last().unwrap() != 1 || d == 0 {
            return Err(Error::shape(format!("expand_lastdim needs [.., 1], got {s:?}")));
        }
        let out: Vec<f64> = self.data(x).iter().flat_map(|&v| std::iter::repeat_n(v, d)).collect();
        let mut os = s;
        *os.last_mut().unwrap() = d;
        Ok(self.derived(&os, out, Op::ExpandLast { x }, &[x]))
    }

    pub fn sum_lastdim(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let d = *s.last().unwrap();
        let out = self.data(x).chunks(d).map(|r| r.iter().sum()).collect();
        let mut os = s;
        *os.last_mut().unwrap() = 1;
        self.derived(&os, out, Op::SumLast { x }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.data(x).iter().sum();
        self.derived(&[1], vec![v], Op::SumAll { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let v = d.iter().sum::<f64>() / d.len() as f64;
        self.derived(&[1], vec![v], Op::MeanAll { x }, &[x])
    }

    /// Mean of `-log softmax(logits)[target]` over positions whose target is not `pad_id`.
    pub fn cross_entropy_logits(&mut self, logits: Var, targets: &[usize], pad_id: usize) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        let v = *s.last().unwrap();
        let positions = self.data(logits).len() / v;
        if targets.len() != positions {
            return Err(Error::shape(format!(
                "{} targets for logits {s:?}",
                targets.len()
            )));
        }
        let probs = softmax_rows(self.data(logits), &s, None)?;
        let ld = self.data(logits);
        let mut total = 0.0;
        let mut count = 0;
        for (p, &t) in targets.iter().enumerate() {
            if t == pad_id {
                continue;
            }
            if t >= v {
                return Err(Error::Index(format!("target {t} outside vocabulary of {v}")));
            }
            let row = &ld[p * v..(p + 1) * v];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&z| (z - mx).exp()).sum::<f64>().ln();
            total += lse - row[t];
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyLoss);
        }
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), pad_id, probs, count };
        Ok(self.derived(&[1], vec![total / count as f64], op, &[logits]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::from_vec(shape, self.data(x).to_vec())?;
        let shape = t.shape().to_vec();
        Ok(self.derived(&shape, t.into_data(), Op::Reshape { x }, &[x]))
    }

    /// Exchanges two axes, materializing the permuted layout.
    pub fn swap_axes(&mut self, x: Var, i: usize, j: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if i >= s.len() || j >= s.len() {
            return Err(Error::shape(format!("swap_axes({i}, {j}) on {s:?}")));
        }
        let mut os = s.clone();
        os.swap(i, j);
        let out = permute_swap(self.data(x), &s, i, j);
        Ok(self.derived(&os, out, Op::SwapAxes { x, i, j }, &[x]))
    }

    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::shape("transpose needs rank >= 2"));
        }
        self.swap_axes(x, r - 2, r - 1)
    }

    /// Propagates gradients from the scalar `loss` to every node that requires them.
    ///
    /// A graph can be differentiated once; build a new graph for another pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract("backward already ran on this graph".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].value.requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            self.nodes[idx].value.grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let needs = |v: Var| self.nodes[v.0].value.requires_grad;
        let mut acc = |v: Var, contrib: &dyn Fn(&mut [f64])| {
            if !needs(v) {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            contrib(slot);
        };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n, a_shared, b_shared } => {
                let ad = self.data(a);
                let bd = self.data(b);
                let batches = g.len() / (m * n);
                acc(a, &|ga| {
                    for i in 0..batches {
                        let ao = if a_shared { 0 } else { i * m * k };
                        let bo = if b_shared { 0 } else { i * k * n };
                        // dA = dC B^T
                        sgemm_like(
                            m,
                            n,
                            k,
                            &g[i * m * n..(i + 1) * m * n],
                            (n as isize, 1),
                            &bd[bo..bo + k * n],
                            (1, n as isize),
                            &mut ga[ao..ao + m * k],
                            1.0,
                        );
                    }
                });
                acc(b, &|gb| {
                    for i in 0..batches {
                        let ao = if a_shared { 0 } else { i * m * k };
                        let bo = if b_shared { 0 } else { i * k * n };
                        // dB = A^T dC
                        sgemm_like(
                            k,
                            m,
                            n,
                            &ad[ao..ao + m * k],
                            (1, k as isize),
                            &g[i * m * n..(i + 1) * m * n],
                            (n as isize, 1),
                            &mut gb[bo..bo + k * n],
                            1.0,
                        );
                    }
                });
            }
            &Op::Add { a, b } | &Op::Sub { a, b } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                acc(a, &|ga| ga.iter_mut().zip(g).for_each(|(s, &v)| *s += v));
                acc(b, &|gb| {
                    let bn = gb.len();
                    for chunk in g.chunks(bn) {
                        gb.iter_mut().zip(chunk).for_each(|(s, &v)| *s += sign * v);
                    }
                });
            }
            &Op::Mul { a, b } => {
                let ad = self.data(a);
                let bd = self.data(b);
                let bn = bd.len();
                acc(a, &|ga| {
                    for (t, (s, &v)) in ga.iter_mut().zip(g).enumerate() {
                        *s += v * bd[t % bn];
                    }
                });
                acc(b, &|gb| {
                    for (t, (&v, &x)) in g.iter().zip(ad).enumerate() {
                        gb[t % bn] += v * x;
                    }
                });
            }
            &Op::Minimum { a, b } => {
                let ad = self.data(a);
                let bd = self.data(b);
                acc(a, &|ga| {
                    for t in 0..g.len() {
                        if ad[t] <= bd[t] {
                            ga[t] += g[t];
                        }
                    }
                });
                acc(b, &|gb| {
                    for t in 0..g.len() {
                        if ad[t] > bd[t] {
                            gb[t] += g[t];
                        }
                    }
                });
            }
            &Op::Scale { x, c } => acc(x, &|gx| gx.iter_mut().zip(g).for_each(|(s, &v)| *s += c * v)),
            &Op::AddScalar { x } | &Op::Reshape { x } => {
                acc(x, &|gx| gx.iter_mut().zip(g).for_each(|(s, &v)| *s += v))
            }
            &Op::Powf { x, p } => {
                let xd = self.data(x);
                acc(x, &|gx| {
                    for t in 0..g.len() {
                        gx[t] += g[t] * p * xd[t].powf(p - 1.0);
                    }
                });
            }
            &Op::Relu { x } => {
                let xd = self.data(x);
                acc(x, &|gx| {
                    for t in 0..g.len() {
                        if xd[t] > 0.0 {
                            gx[t] += g[t];
                        }
                    }
                });
            }
            &Op::Tanh { x } => acc(x, &|gx| {
                for t in 0..g.len() {
                    gx[t] += g[t] * (1.0 - out[t] * out[t]);
                }
            }),
            &Op::Exp { x } => acc(x, &|gx| {
                for t in 0..g.len() {
                    gx[t] += g[t] * out[t];
                }
            }),
            &Op::Log { x } => {
                let xd = self.data(x);
                acc(x, &|gx| {
                    for t in 0..g.len() {
                        gx[t] += g[t] / xd[t];
                    }
                });
            }
            &Op::Softmax { x } => {
                let d = *node.value.shape().last().unwrap();
                acc(x, &|gx| {
                    for r in 0..g.len() / d {
                        let y = &out[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            gx[r * d + j] += y[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Gather { table, ids } => {
                let d = *node.value.shape().last().unwrap();
                acc(*table, &|gt| {
                    for (row, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[id * d + j] += g[row * d + j];
                        }
                    }
                });
            }
            &Op::MeanLast { x } => {
                let d = *self.shape(x).last().unwrap();
                acc(x, &|gx| {
                    for (r, &gv) in g.iter().enumerate() {
                        for j in 0..d {
                            gx[r * d + j] += gv / d as f64;
                        }
                    }
                });
            }
            Op::VarLast { x, mean } => {
                let d = *self.shape(*x).last().unwrap();
                let xd = self.data(*x);
                acc(*x, &|gx| {
                    for (r, &gv) in g.iter().enumerate() {
                        for j in 0..d {
                            gx[r * d + j] += gv * 2.0 * (xd[r * d + j] - mean[r]) / d as f64;
                        }
                    }
                });
            }
            &Op::ExpandLast { x } => {
                let d = *node.value.shape().last().unwrap();
                acc(x, &|gx| {
                    for (r, s) in gx.iter_mut().enumerate() {
                        *s += g[r * d..(r + 1) * d].iter().sum::<f64>();
                    }
                });
            }
            &Op::SumLast { x } => {
                let d = *self.shape(x).last().unwrap();
                acc(x, &|gx| {
                    for (t, s) in gx.iter_mut().enumerate() {
                        *s += g[t / d];
                    }
                });
            }
            &Op::SumAll { x } => acc(x, &|gx| gx.iter_mut().for_each(|s| *s += g[0])),
            &Op::MeanAll { x } => {
                let n = self.value(x).numel() as f64;
                acc(x, &|gx| gx.iter_mut().for_each(|s| *s += g[0] / n));
            }
            Op::CrossEntropy { logits, targets, pad_id, probs, count } => {
                let v = *self.shape(*logits).last().unwrap();
                let scale = g[0] / *count as f64;
                acc(*logits, &|gl| {
                    for (p, &t) in targets.iter().enumerate() {
                        if t == *pad_id {
                            continue;
                        }
                        for j in 0..v {
                            gl[p * v + j] += scale * probs[p * v + j];
                        }
                        gl[p * v + t] -= scale;
                    }
                });
            }
            &Op::SwapAxes { x, i, j } => {
                let os = node.value.shape();
                acc(x, &|gx| {
                    let back = permute_swap(g, os, i, j);
                    gx.iter_mut().zip(&back).for_each(|(s, &v)| *s += v);
                });
            }
        }
    }
}

fn permute_swap(data: &[f64], shape: &[usize], i: usize, j: usize) -> Vec<f64> {
    if i == j {
        return data.to_vec();
    }
    let mut os = shape.to_vec();
    os.swap(i, j);
    let in_st = strides(shape);
    let out_st = strides(&os);
    let mut out = vec![0.0; data.len()];
    let mut idx = vec![0usize; shape.len()];
    for (flat, &v) in data.iter().enumerate() {
        let mut rem = flat;
        for (ax, &st) in in_st.iter().enumerate() {
            idx[ax] = rem / st;
            rem %= st;
        }
        idx.swap(i, j);
        let o: usize = idx.iter().zip(&out_st).map(|(a, b)| a * b).sum();
        out[o] = v;
    }
    out
}
