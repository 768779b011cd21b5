//! Eager, tape-based reverse-mode differentiation.
//!
//! Every operation executes immediately and records itself on the tape, so
//! node order is already topological. `backward` walks the tape once in
//! reverse, accumulating adjoints. A tape is built per forward call and is
//! never shared across concurrent calls.

use crate::error::{Error, Result};
use crate::tensor::NdArray;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Sum(NodeId),
    Max(NodeId),
    MatMul(NodeId, NodeId),
    Conv2d { x: NodeId, k: NodeId, pad: usize },
    Reshape(NodeId),
    ConcatAxis0(Vec<NodeId>),
    SliceAxis0 { x: NodeId, start: usize },
    ChannelScale { x: NodeId, s: NodeId },
    ChannelBias { x: NodeId, b: NodeId },
    LogAbsDet(NodeId),
}

struct Node {
    op: Op,
    value: NdArray,
}

/// Gradients per tape node, produced by [`Tape::backward`].
pub struct Gradients {
    entries: Vec<Option<NdArray>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to node `id`; zeros when the output does not
    /// depend on it (detached node contract).
    pub fn wrt(&self, id: NodeId) -> NdArray {
        match &self.entries[id] {
            Some(g) => g.clone(),
            None => NdArray::zeros(&self.shapes[id]),
        }
    }

    pub fn is_zero(&self, id: NodeId) -> bool {
        self.entries[id].is_none()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &NdArray {
        &self.nodes[id].value
    }

    /// Record a leaf holding `value`. Inputs, parameters and constants are
    /// all leaves; trainability is tracked by the caller via node ids.
    pub fn leaf(&mut self, value: NdArray) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.push(Op::Leaf, NdArray::scalar(v))
    }

    fn push(&mut self, op: Op, value: NdArray) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    fn shape_err(&self, op: &'static str, detail: String) -> Error {
        Error::Shape {
            op,
            node: self.nodes.len(),
            detail,
        }
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.nodes[a].value.shape() != self.nodes[b].value.shape() {
            return Err(self.shape_err(
                op,
                format!(
                    "{:?} vs {:?}",
                    self.nodes[a].value.shape(),
                    self.nodes[b].value.shape()
                ),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let v = zip(&self.nodes[a].value, &self.nodes[b].value, |x, y| x + y);
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let v = zip(&self.nodes[a].value, &self.nodes[b].value, |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let v = zip(&self.nodes[a].value, &self.nodes[b].value, |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(|x| -x);
        self.push(Op::Neg(a), v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.nodes[a].value.map(|x| c * x);
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.nodes[a].value.map(|x| x + c);
        self.push(Op::AddScalar(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(f64::ln);
        self.push(Op::Log(a), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        // ln(1+e^x), stable form.
        let v = self.nodes[a].value.map(|x| {
            if x > 30.0 {
                x
            } else if x < -30.0 {
                x.exp()
            } else {
                x.exp().ln_1p()
            }
        });
        self.push(Op::Softplus(a), v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a].value.data().iter().sum();
        self.push(Op::Sum(a), NdArray::scalar(s))
    }

    pub fn max(&mut self, a: NodeId) -> NodeId {
        let m = self.nodes[a]
            .value
            .data()
            .iter()
            .fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
        self.push(Op::Max(a), NdArray::scalar(m))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != self.nodes[a].value.len() {
            return Err(self.shape_err(
                "reshape",
                format!("{:?} -> {:?}", self.nodes[a].value.shape(), shape),
            ));
        }
        let v = self.nodes[a].value.reshaped(shape)?;
        Ok(self.push(Op::Reshape(a), v))
    }

    /// Dense matrix product: `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.shape_err("matmul", format!("{:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = self.nodes[a].value.data();
        let bv = self.nodes[b].value.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += x * brow[j];
                }
            }
        }
        let v = NdArray::from_vec(vec![m, n], out)?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    /// 2-D convolution, stride 1, zero padding `pad` on all sides.
    /// `x: [Cin,H,W]`, `k: [Cout,Cin,KH,KW]` -> `[Cout, H+2p-KH+1, W+2p-KW+1]`.
    pub fn conv2d(&mut self, x: NodeId, k: NodeId, pad: usize) -> Result<NodeId> {
        let (sx, sk) = (self.nodes[x].value.shape(), self.nodes[k].value.shape());
        if sx.len() != 3 || sk.len() != 4 || sx[0] != sk[1] {
            return Err(self.shape_err("conv2d", format!("x {:?}, kernel {:?}", sx, sk)));
        }
        let (cin, h, w) = (sx[0], sx[1], sx[2]);
        let (cout, kh, kw) = (sk[0], sk[2], sk[3]);
        let ho = (h + 2 * pad).checked_sub(kh - 1).unwrap_or(0);
        let wo = (w + 2 * pad).checked_sub(kw - 1).unwrap_or(0);
        if ho == 0 || wo == 0 {
            return Err(self.shape_err(
                "conv2d",
                format!("kernel {}x{} too large for {}x{} with pad {}", kh, kw, h, w, pad),
            ));
        }
        let xv = self.nodes[x].value.data();
        let kv = self.nodes[k].value.data();
        let mut out = vec![0.0; cout * ho * wo];
        for co in 0..cout {
            for ci in 0..cin {
                let kbase = ((co * cin) + ci) * kh * kw;
                let xbase = ci * h * w;
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = 0.0;
                        for r in 0..kh {
                            let ih = oh + r;
                            if ih < pad || ih - pad >= h {
                                continue;
                            }
                            for c in 0..kw {
                                let iw = ow + c;
                                if iw < pad || iw - pad >= w {
                                    continue;
                                }
                                acc += xv[xbase + (ih - pad) * w + (iw - pad)]
                                    * kv[kbase + r * kw + c];
                            }
                        }
                        out[(co * ho + oh) * wo + ow] += acc;
                    }
                }
            }
        }
        let v = NdArray::from_vec(vec![cout, ho, wo], out)?;
        Ok(self.push(Op::Conv2d { x, k, pad }, v))
    }

    /// Concatenate along axis 0; all inputs must agree on trailing dims.
    pub fn concat_axis0(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(self.shape_err("concat", "no inputs".into()));
        }
        let rest = self.nodes[parts[0]].value.shape()[1..].to_vec();
        let mut dim0 = 0;
        for &p in parts {
            let s = self.nodes[p].value.shape();
            if s.is_empty() || s[1..] != rest[..] {
                return Err(self.shape_err("concat", format!("incompatible part shape {:?}", s)));
            }
            dim0 += s[0];
        }
        let mut data = Vec::with_capacity(dim0 * rest.iter().product::<usize>());
        for &p in parts {
            data.extend_from_slice(self.nodes[p].value.data());
        }
        let mut shape = vec![dim0];
        shape.extend_from_slice(&rest);
        let v = NdArray::from_vec(shape, data)?;
        Ok(self.push(Op::ConcatAxis0(parts.to_vec()), v))
    }

    /// Contiguous slice `[start, start+len)` along axis 0.
    pub fn slice_axis0(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let s = self.nodes[x].value.shape();
        if s.is_empty() || start + len > s[0] {
            return Err(self.shape_err(
                "slice",
                format!("[{start}, {}) of axis-0 extent {:?}", start + len, s),
            ));
        }
        let stride: usize = s[1..].iter().product();
        let data = self.nodes[x].value.data()[start * stride..(start + len) * stride].to_vec();
        let mut shape = vec![len];
        shape.extend_from_slice(&s[1..]);
        let v = NdArray::from_vec(shape, data)?;
        Ok(self.push(Op::SliceAxis0 { x, start }, v))
    }

    /// Split along axis 0 at `at`, returning the two halves.
    pub fn split_axis0(&mut self, x: NodeId, at: usize) -> Result<(NodeId, NodeId)> {
        let d0 = {
            let s = self.nodes[x].value.shape();
            if s.is_empty() || at > s[0] {
                return Err(self.shape_err("split", format!("at {at} of {:?}", s)));
            }
            s[0]
        };
        let lo = self.slice_axis0(x, 0, at)?;
        let hi = self.slice_axis0(x, at, d0 - at)?;
        Ok((lo, hi))
    }

    /// Per-channel scale: `x: [C, ...] * s: [C]`, broadcasting s over trailing dims.
    pub fn channel_scale(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let (sx, ss) = (self.nodes[x].value.shape(), self.nodes[s].value.shape());
        if sx.is_empty() || ss.len() != 1 || ss[0] != sx[0] {
            return Err(self.shape_err("channel_scale", format!("x {:?}, s {:?}", sx, ss)));
        }
        let stride: usize = sx[1..].iter().product();
        let sv = self.nodes[s].value.data().to_vec();
        let mut v = self.nodes[x].value.clone();
        for (c, &sc) in sv.iter().enumerate() {
            for e in &mut v.data_mut()[c * stride..(c + 1) * stride] {
                *e *= sc;
            }
        }
        Ok(self.push(Op::ChannelScale { x, s }, v))
    }

    /// Per-channel bias: `x: [C, ...] + b: [C]`.
    pub fn channel_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (sx, sb) = (self.nodes[x].value.shape(), self.nodes[b].value.shape());
        if sx.is_empty() || sb.len() != 1 || sb[0] != sx[0] {
            return Err(self.shape_err("channel_bias", format!("x {:?}, b {:?}", sx, sb)));
        }
        let stride: usize = sx[1..].iter().product();
        let bv = self.nodes[b].value.data().to_vec();
        let mut v = self.nodes[x].value.clone();
        for (c, &bc) in bv.iter().enumerate() {
            for e in &mut v.data_mut()[c * stride..(c + 1) * stride] {
                *e += bc;
            }
        }
        Ok(self.push(Op::ChannelBias { x, b }, v))
    }

    /// `ln |det W|` of a square matrix, as a scalar node. Errors on exactly
    /// singular inputs; the gradient is the transposed inverse.
    pub fn log_abs_det(&mut self, w: NodeId) -> Result<NodeId> {
        let s = self.nodes[w].value.shape();
        if s.len() != 2 || s[0] != s[1] {
            return Err(self.shape_err("log_abs_det", format!("{:?} is not square", s)));
        }
        let det = crate::util::determinant(self.nodes[w].value.data(), s[0]);
        if det == 0.0 {
            return Err(Error::invalid(format!(
                "log_abs_det of a singular matrix at node {}",
                self.nodes.len()
            )));
        }
        Ok(self.push(Op::LogAbsDet(w), NdArray::scalar(det.abs().ln())))
    }

    /// Matrix-vector convenience: `w: [out,in] x v: [in] -> [out]`.
    pub fn matvec(&mut self, w: NodeId, v: NodeId) -> Result<NodeId> {
        let n = self.nodes[v].value.len();
        let col = self.reshape(v, &[n, 1])?;
        let prod = self.matmul(w, col)?;
        let out = self.nodes[prod].value.len();
        self.reshape(prod, &[out])
    }

    /// Dot product of two equal-length vectors, as a scalar node.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    /// Reverse-mode sweep from scalar node `out`; returns adjoints for every node.
    pub fn backward(&self, out: NodeId) -> Result<Gradients> {
        let oshape = self.nodes[out].value.shape();
        if self.nodes[out].value.len() != 1 {
            return Err(Error::NonScalarOutput {
                node: out,
                shape: oshape.to_vec(),
            });
        }
        let mut adj: Vec<Option<NdArray>> = vec![None; self.nodes.len()];
        adj[out] = Some(NdArray::from_vec(oshape.to_vec(), vec![1.0]).expect("scalar seed"));

        for id in (0..=out).rev() {
            let g = match adj[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(id, &g, &mut adj);
            adj[id] = Some(g);
        }
        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            entries: adj,
        })
    }

    fn bump(adj: &mut [Option<NdArray>], id: NodeId, delta: NdArray) {
        match &mut adj[id] {
            Some(acc) => {
                for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                    *a += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate(&self, id: NodeId, g: &NdArray, adj: &mut [Option<NdArray>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                Self::bump(adj, *a, g.clone());
                Self::bump(adj, *b, g.clone());
            }
            Op::Sub(a, b) => {
                Self::bump(adj, *a, g.clone());
                Self::bump(adj, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let da = zip(g, &self.nodes[*b].value, |gv, bv| gv * bv);
                let db = zip(g, &self.nodes[*a].value, |gv, av| gv * av);
                Self::bump(adj, *a, da);
                Self::bump(adj, *b, db);
            }
            Op::Neg(a) => Self::bump(adj, *a, g.map(|v| -v)),
            Op::Scale(a, c) => {
                let c = *c;
                Self::bump(adj, *a, g.map(|v| c * v));
            }
            Op::AddScalar(a) => Self::bump(adj, *a, g.clone()),
            Op::Tanh(a) => {
                let da = zip(g, &self.nodes[id].value, |gv, y| gv * (1.0 - y * y));
                Self::bump(adj, *a, da);
            }
            Op::Exp(a) => {
                let da = zip(g, &self.nodes[id].value, |gv, y| gv * y);
                Self::bump(adj, *a, da);
            }
            Op::Log(a) => {
                let da = zip(g, &self.nodes[*a].value, |gv, x| gv / x);
                Self::bump(adj, *a, da);
            }
            Op::Relu(a) => {
                let da = zip(g, &self.nodes[*a].value, |gv, x| if x > 0.0 { gv } else { 0.0 });
                Self::bump(adj, *a, da);
            }
            Op::Softplus(a) => {
                let da = zip(g, &self.nodes[*a].value, |gv, x| gv / (1.0 + (-x).exp()));
                Self::bump(adj, *a, da);
            }
            Op::Sum(a) => {
                let gs = g.item();
                let shape = self.nodes[*a].value.shape();
                Self::bump(adj, *a, NdArray::filled(shape, gs));
            }
            Op::Max(a) => {
                // Subgradient routed to the first argmax.
                let x = &self.nodes[*a].value;
                let mut best = 0;
                for (i, &v) in x.data().iter().enumerate() {
                    if v > x.data()[best] {
                        best = i;
                    }
                }
                let mut d = NdArray::zeros(x.shape());
                d.data_mut()[best] = g.item();
                Self::bump(adj, *a, d);
            }
            Op::MatMul(a, b) => {
                let (m, k) = {
                    let s = self.nodes[*a].value.shape();
                    (s[0], s[1])
                };
                let n = self.nodes[*b].value.shape()[1];
                let gv = g.data();
                let av = self.nodes[*a].value.data();
                let bv = self.nodes[*b].value.data();
                // dA = G * B^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += gv[i * n + j] * bv[p * n + j];
                        }
                        da[i * k + p] = acc;
                    }
                }
                // dB = A^T * G
                let mut db = vec![0.0; k * n];
                for p in 0..k {
                    for i in 0..m {
                        let x = av[i * k + p];
                        if x == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += x * gv[i * n + j];
                        }
                    }
                }
                Self::bump(adj, *a, NdArray::from_vec(vec![m, k], da).expect("da shape"));
                Self::bump(adj, *b, NdArray::from_vec(vec![k, n], db).expect("db shape"));
            }
            Op::Conv2d { x, k, pad } => {
                let pad = *pad;
                let sx = self.nodes[*x].value.shape().to_vec();
                let sk = self.nodes[*k].value.shape().to_vec();
                let (cin, h, w) = (sx[0], sx[1], sx[2]);
                let (cout, kh, kw) = (sk[0], sk[2], sk[3]);
                let so = self.nodes[id].value.shape().to_vec();
                let (ho, wo) = (so[1], so[2]);
                let gv = g.data();
                let xv = self.nodes[*x].value.data();
                let kv = self.nodes[*k].value.data();

                let mut dx = vec![0.0; cin * h * w];
                let mut dk = vec![0.0; cout * cin * kh * kw];
                for co in 0..cout {
                    for ci in 0..cin {
                        let kbase = ((co * cin) + ci) * kh * kw;
                        let xbase = ci * h * w;
                        for oh in 0..ho {
                            for ow in 0..wo {
                                let gval = gv[(co * ho + oh) * wo + ow];
                                if gval == 0.0 {
                                    continue;
                                }
                                for r in 0..kh {
                                    let ih = oh + r;
                                    if ih < pad || ih - pad >= h {
                                        continue;
                                    }
                                    for c in 0..kw {
                                        let iw = ow + c;
                                        if iw < pad || iw - pad >= w {
                                            continue;
                                        }
                                        let xi = xbase + (ih - pad) * w + (iw - pad);
                                        dx[xi] += gval * kv[kbase + r * kw + c];
                                        dk[kbase + r * kw + c] += gval * xv[xi];
                                    }
                                }
                            }
                        }
                    }
                }
                Self::bump(adj, *x, NdArray::from_vec(sx, dx).expect("dx shape"));
                Self::bump(adj, *k, NdArray::from_vec(sk, dk).expect("dk shape"));
            }
            Op::Reshape(a) => {
                let back = g
                    .reshaped(self.nodes[*a].value.shape())
                    .expect("reshape adjoint");
                Self::bump(adj, *a, back);
            }
            Op::ConcatAxis0(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let s = self.nodes[p].value.shape();
                    let n = self.nodes[p].value.len();
                    let part =
                        NdArray::from_vec(s.to_vec(), g.data()[offset..offset + n].to_vec())
                            .expect("concat adjoint");
                    Self::bump(adj, p, part);
                    offset += n;
                }
            }
            Op::SliceAxis0 { x, start } => {
                let s = self.nodes[*x].value.shape();
                let stride: usize = s[1..].iter().product();
                let mut d = NdArray::zeros(s);
                let off = start * stride;
                d.data_mut()[off..off + g.len()].copy_from_slice(g.data());
                Self::bump(adj, *x, d);
            }
            Op::ChannelScale { x, s } => {
                let sx = self.nodes[*x].value.shape();
                let stride: usize = sx[1..].iter().product();
                let channels = sx[0];
                let sv = self.nodes[*s].value.data();
                let xv = self.nodes[*x].value.data();
                let gv = g.data();
                let mut dx = vec![0.0; xv.len()];
                let mut ds = vec![0.0; channels];
                for c in 0..channels {
                    for i in c * stride..(c + 1) * stride {
                        dx[i] = gv[i] * sv[c];
                        ds[c] += gv[i] * xv[i];
                    }
                }
                Self::bump(adj, *x, NdArray::from_vec(sx.to_vec(), dx).expect("dx shape"));
                Self::bump(adj, *s, NdArray::from_vec(vec![channels], ds).expect("ds shape"));
            }
            Op::ChannelBias { x, b } => {
                let sx = self.nodes[*x].value.shape();
                let stride: usize = sx[1..].iter().product();
                let channels = sx[0];
                let gv = g.data();
                let mut db = vec![0.0; channels];
                for c in 0..channels {
                    for i in c * stride..(c + 1) * stride {
                        db[c] += gv[i];
                    }
                }
                Self::bump(adj, *x, g.clone());
                Self::bump(adj, *b, NdArray::from_vec(vec![channels], db).expect("db shape"));
            }
            Op::LogAbsDet(w) => {
                // d ln|det W| / dW = (W^{-1})^T
                let s = self.nodes[*w].value.shape();
                let n = s[0];
                let (_, inv) = crate::util::invert(self.nodes[*w].value.data(), n)
                    .expect("forward checked invertibility");
                let gs = g.item();
                let mut dw = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        dw[i * n + j] = gs * inv[j * n + i];
                    }
                }
                Self::bump(adj, *w, NdArray::from_vec(s.to_vec(), dw).expect("dw shape"));
            }
        }
    }
}

fn zip(a: &NdArray, b: &NdArray, f: impl Fn(f64, f64) -> f64) -> NdArray {
    debug_assert_eq!(a.shape(), b.shape());
    NdArray::from_vec(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("zip shape")
}
