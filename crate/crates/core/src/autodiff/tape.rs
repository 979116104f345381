use std::sync::Arc;

use super::tensor::{gemm, matmul_into};
use super::{AutodiffError, ParamId, ParameterSet, Tensor};

/// Pre-activation clamp applied by `sigmoid` and `tanh`, forward and backward.
pub const ACTIVATION_CLAMP: f64 = 30.0;
/// Probability clamp used by the cross-entropy node.
pub const PROB_CLAMP: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable map applied independently to each `(re, im)` row of a
/// `[batch, 2]` tensor.
pub trait PairMap: Send + Sync {
    /// Returns the image of `x` and the Jacobian `J[i][j] = d out_i / d x_j`.
    fn eval(&self, x: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]);

    fn name(&self) -> &'static str {
        "pair_map"
    }
}

#[derive(Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine {
        x: Var,
        scale: f64,
    },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    SumAll(Var),
    MeanRowNormSq(Var),
    Bce {
        target: Var,
        p: Var,
    },
    Mse {
        target: Var,
        x: Var,
    },
    Pair {
        x: Var,
        jac: Vec<[[f64; 2]; 2]>,
    },
    /// Gate arithmetic of a GRU step; `gates` holds `[z | r | n]` per row.
    GruGates {
        xw: Var,
        hu: Var,
        h: Var,
        gates: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::SumAll(_) => "sum_all",
            Op::MeanRowNormSq(_) => "mean_row_norm_sq",
            Op::Bce { .. } => "bce",
            Op::Mse { .. } => "mse",
            Op::Pair { .. } => "pair_map",
            Op::GruGates { .. } => "gru_gates",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients of one scalar with respect to every node on a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if `v` does not influence the
    /// loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Linear record of a forward computation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it; [`Tape::backward`] walks the record in exact reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-ACTIVATION_CLAMP, ACTIVATION_CLAMP);
    1.0 / (1.0 + (-x).exp())
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var, AutodiffError> {
        let id = self.nodes.len();
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { node: id, op: op.name(), phase: "forward" });
        }
        self.nodes.push(Node { op, value });
        Ok(Var(id))
    }

    fn shape_err(op: &'static str, detail: String) -> AutodiffError {
        AutodiffError::Shape { op, detail }
    }

    /// Records a constant.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, AutodiffError> {
        self.push(Op::Leaf, value)
    }

    /// Records (once per tape) the current value of a parameter.
    pub fn param(&mut self, params: &ParameterSet, id: ParamId) -> Result<Var, AutodiffError> {
        if let Some(Some(v)) = self.param_vars.get(id.0) {
            return Ok(*v);
        }
        let v = self.push(Op::Param, params.get(id).value.clone())?;
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        self.param_vars[id.0] = Some(v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(Self::shape_err("matmul", format!("{:?} x {:?}", av.shape(), bv.shape())));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; m * n];
        matmul_into(av.data(), bv.data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        self.push(Op::MatMul(a, b), value)
    }

    /// `x + bias` with `bias` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.len() != xv.cols() || xv.shape().len() != 2 {
            return Err(Self::shape_err("add_row", format!("{:?} + {:?}", xv.shape(), bv.shape())));
        }
        let n = xv.cols();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(Op::AddRow(x, bias), value)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Self::shape_err(name, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(Op::Mul(a, b), v)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var, AutodiffError> {
        let v = self.value(x).map(|u| scale * u + shift);
        self.push(Op::Affine { x, scale }, v)
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Result<Var, AutodiffError> {
        self.affine(x, scale, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let v = self.value(x).map(sigmoid);
        self.push(Op::Sigmoid(x), v)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let v = self.value(x).map(|u| u.clamp(-ACTIVATION_CLAMP, ACTIVATION_CLAMP).tanh());
        self.push(Op::Tanh(x), v)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let v = self.value(x).map(|u| u.max(0.0));
        self.push(Op::Relu(x), v)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let rows = self.value(parts[0]).rows();
        let mut width = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.shape().len() != 2 || pv.rows() != rows {
                return Err(Self::shape_err("concat_cols", format!("row mismatch at {:?}", pv.shape())));
            }
            width += pv.cols();
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(vec![rows, width], data)?;
        self.push(Op::ConcatCols(parts.to_vec()), value)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if xv.shape().len() != 2 || start + len > xv.cols() {
            return Err(Self::shape_err("slice_cols", format!("{:?}[{}..{}]", xv.shape(), start, start + len)));
        }
        let v = xv.slice_cols(start, len);
        self.push(Op::SliceCols { x, start }, v)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let s = self.value(x).data().iter().sum();
        self.push(Op::SumAll(x), Tensor::scalar(s))
    }

    /// Batch mean of the squared Euclidean norm of each row.
    pub fn mean_row_norm_sq(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let s: f64 = xv.data().iter().map(|u| u * u).sum::<f64>() / xv.rows() as f64;
        self.push(Op::MeanRowNormSq(x), Tensor::scalar(s))
    }

    /// Batch mean of the summed binary cross-entropy (natural log) between
    /// `target` bits and probabilities `p`, with `p` clamped to
    /// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn bce(&mut self, target: Var, p: Var) -> Result<Var, AutodiffError> {
        let (tv, pv) = (self.value(target), self.value(p));
        if tv.shape() != pv.shape() {
            return Err(Self::shape_err("bce", format!("{:?} vs {:?}", tv.shape(), pv.shape())));
        }
        let mut s = 0.0;
        for (&d, &q) in tv.data().iter().zip(pv.data()) {
            let q = q.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            s -= d * q.ln() + (1.0 - d) * (1.0 - q).ln();
        }
        let v = Tensor::scalar(s / pv.rows() as f64);
        self.push(Op::Bce { target, p }, v)
    }

    /// Batch mean of `||x - target||^2` over rows.
    pub fn mse(&mut self, target: Var, x: Var) -> Result<Var, AutodiffError> {
        let (tv, xv) = (self.value(target), self.value(x));
        if tv.shape() != xv.shape() {
            return Err(Self::shape_err("mse", format!("{:?} vs {:?}", tv.shape(), xv.shape())));
        }
        let s: f64 = tv.data().iter().zip(xv.data()).map(|(d, u)| (u - d) * (u - d)).sum();
        let v = Tensor::scalar(s / xv.rows() as f64);
        self.push(Op::Mse { target, x }, v)
    }

    /// GRU state update from the input projection `xw = x W + b` and the
    /// state projection `hu = h U` (both `[batch, 3H]`, gate blocks ordered
    /// update, reset, candidate) and the previous state `h` (`[batch, H]`):
    /// `z = sigmoid(xw_z + hu_z)`, `r = sigmoid(xw_r + hu_r)`,
    /// `n = tanh(xw_n + r * hu_n)`, `h' = (1 - z) h + z n`.
    pub fn gru_gates(&mut self, xw: Var, hu: Var, h: Var) -> Result<Var, AutodiffError> {
        let (xv, uv, hv) = (self.value(xw), self.value(hu), self.value(h));
        let hsz = hv.cols();
        if hv.shape().len() != 2 || xv.shape() != [hv.rows(), 3 * hsz] || uv.shape() != xv.shape() {
            return Err(Self::shape_err(
                "gru_gates",
                format!("xw {:?}, hu {:?}, h {:?}", xv.shape(), uv.shape(), hv.shape()),
            ));
        }
        let rows = hv.rows();
        let mut gates = vec![0.0; rows * 3 * hsz];
        let mut out = vec![0.0; rows * hsz];
        for r in 0..rows {
            let (x, u, hp) = (xv.row(r), uv.row(r), hv.row(r));
            let g = &mut gates[r * 3 * hsz..(r + 1) * 3 * hsz];
            let o = &mut out[r * hsz..(r + 1) * hsz];
            for j in 0..hsz {
                let z = sigmoid(x[j] + u[j]);
                let rg = sigmoid(x[hsz + j] + u[hsz + j]);
                let n = (x[2 * hsz + j] + rg * u[2 * hsz + j]).clamp(-ACTIVATION_CLAMP, ACTIVATION_CLAMP).tanh();
                g[j] = z;
                g[hsz + j] = rg;
                g[2 * hsz + j] = n;
                o[j] = (1.0 - z) * hp[j] + z * n;
            }
        }
        let value = Tensor::new(vec![rows, hsz], out)?;
        self.push(Op::GruGates { xw, hu, h, gates }, value)
    }

    /// Applies `map` to every row of a `[batch, 2]` tensor.
    pub fn pair_map(&mut self, x: Var, map: &Arc<dyn PairMap>) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if xv.shape().len() != 2 || xv.cols() != 2 {
            return Err(Self::shape_err("pair_map", format!("{:?}", xv.shape())));
        }
        let mut out = Vec::with_capacity(xv.len());
        let mut jac = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let (y, j) = map.eval([row[0], row[1]]);
            out.extend_from_slice(&y);
            jac.push(j);
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(Op::Pair { x, jac }, value)
    }

    /// Reverse sweep from scalar `loss`, returning gradients for every node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NotScalar(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !g.is_finite() {
                return Err(AutodiffError::NonFinite { node: i, op: node.op.name(), phase: "backward" });
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Reverse sweep that accumulates parameter gradients into `params`.
    pub fn backward(&self, loss: Var, params: &mut ParameterSet) -> Result<Gradients, AutodiffError> {
        let grads = self.gradients(loss)?;
        for (pid, v) in self.param_vars.iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = grads.wrt(*v) {
                    params.get_mut(ParamId(pid)).grad.add_assign(g);
                }
            }
        }
        Ok(grads)
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, contrib: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let mut ga = vec![0.0; m * k];
                gemm(g.data(), bv.data(), &mut ga, m, n, k, false, true, 0.0);
                let mut gb = vec![0.0; k * n];
                gemm(av.data(), g.data(), &mut gb, k, m, n, true, false, 0.0);
                acc(*a, Tensor::new(av.shape().to_vec(), ga).expect("shape"));
                acc(*b, Tensor::new(bv.shape().to_vec(), gb).expect("shape"));
            }
            Op::AddRow(x, bias) => {
                let n = g.cols();
                let mut gb = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (s, v) in gb.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                acc(*x, g.clone());
                acc(*bias, Tensor::new(val(*bias).shape().to_vec(), gb).expect("shape"));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|u| -u));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let ga = zip_map(g, bv, |u, w| u * w);
                let gb = zip_map(g, av, |u, w| u * w);
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Affine { x, scale } => acc(*x, g.map(|u| u * scale)),
            Op::Sigmoid(x) => {
                let xv = val(*x);
                let d =
                    zip3_map(
                        g,
                        &node.value,
                        xv,
                        |u, s, pre| {
                            if pre.abs() > ACTIVATION_CLAMP {
                                0.0
                            } else {
                                u * s * (1.0 - s)
                            }
                        },
                    );
                acc(*x, d);
            }
            Op::Tanh(x) => {
                let xv = val(*x);
                let d =
                    zip3_map(
                        g,
                        &node.value,
                        xv,
                        |u, t, pre| {
                            if pre.abs() > ACTIVATION_CLAMP {
                                0.0
                            } else {
                                u * (1.0 - t * t)
                            }
                        },
                    );
                acc(*x, d);
            }
            Op::Relu(x) => {
                let d = zip_map(g, val(*x), |u, pre| if pre > 0.0 { u } else { 0.0 });
                acc(*x, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = val(p).cols();
                    acc(p, g.slice_cols(start, w));
                    start += w;
                }
            }
            Op::SliceCols { x, start } => {
                let xv = val(*x);
                let (rows, cols, w) = (xv.rows(), xv.cols(), g.cols());
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    d[r * cols + start..r * cols + start + w].copy_from_slice(g.row(r));
                }
                acc(*x, Tensor::new(xv.shape().to_vec(), d).expect("shape"));
            }
            Op::SumAll(x) => acc(*x, Tensor::filled(val(*x).shape(), g.item())),
            Op::MeanRowNormSq(x) => {
                let xv = val(*x);
                let c = 2.0 * g.item() / xv.rows() as f64;
                acc(*x, xv.map(|u| c * u));
            }
            Op::Bce { target, p } => {
                let (tv, pv) = (val(*target), val(*p));
                let c = g.item() / pv.rows() as f64;
                let gp = zip_map(tv, pv, |d, q| {
                    if q <= PROB_CLAMP || q >= 1.0 - PROB_CLAMP {
                        0.0
                    } else {
                        c * (-d / q + (1.0 - d) / (1.0 - q))
                    }
                });
                let gt = pv.map(|q| {
                    let q = q.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                    c * ((1.0 - q).ln() - q.ln())
                });
                acc(*p, gp);
                acc(*target, gt);
            }
            Op::Mse { target, x } => {
                let (tv, xv) = (val(*target), val(*x));
                let c = 2.0 * g.item() / xv.rows() as f64;
                let gx = zip_map(xv, tv, |u, d| c * (u - d));
                acc(*target, gx.map(|u| -u));
                acc(*x, gx);
            }
            Op::Pair { x, jac } => {
                let mut d = Vec::with_capacity(g.len());
                for (r, j) in jac.iter().enumerate() {
                    let gr = g.row(r);
                    d.push(gr[0] * j[0][0] + gr[1] * j[1][0]);
                    d.push(gr[0] * j[0][1] + gr[1] * j[1][1]);
                }
                acc(*x, Tensor::new(g.shape().to_vec(), d).expect("shape"));
            }
            Op::GruGates { xw, hu, h, gates } => {
                let (xv, uv, hv) = (val(*xw), val(*hu), val(*h));
                let (rows, hsz) = (hv.rows(), hv.cols());
                let w = 3 * hsz;
                let mut dx = vec![0.0; rows * w];
                let mut du = vec![0.0; rows * w];
                let mut dh = vec![0.0; rows * hsz];
                let live = |pre: f64| pre.abs() <= ACTIVATION_CLAMP;
                for r in 0..rows {
                    let (x, u, hp, gr) = (xv.row(r), uv.row(r), hv.row(r), g.row(r));
                    let gt = &gates[r * w..(r + 1) * w];
                    let (dxr, dur) = (&mut dx[r * w..(r + 1) * w], &mut du[r * w..(r + 1) * w]);
                    for j in 0..hsz {
                        let (z, rg, n) = (gt[j], gt[hsz + j], gt[2 * hsz + j]);
                        let gj = gr[j];
                        dh[r * hsz + j] = gj * (1.0 - z);
                        let dz = if live(x[j] + u[j]) { gj * (n - hp[j]) * z * (1.0 - z) } else { 0.0 };
                        let un = u[2 * hsz + j];
                        let dn = if live(x[2 * hsz + j] + rg * un) { gj * z * (1.0 - n * n) } else { 0.0 };
                        let dr = if live(x[hsz + j] + u[hsz + j]) { dn * un * rg * (1.0 - rg) } else { 0.0 };
                        dxr[j] = dz;
                        dur[j] = dz;
                        dxr[hsz + j] = dr;
                        dur[hsz + j] = dr;
                        dxr[2 * hsz + j] = dn;
                        dur[2 * hsz + j] = dn * rg;
                    }
                }
                acc(*xw, Tensor::new(xv.shape().to_vec(), dx).expect("shape"));
                acc(*hu, Tensor::new(uv.shape().to_vec(), du).expect("shape"));
                acc(*h, Tensor::new(hv.shape().to_vec(), dh).expect("shape"));
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape")
}

fn zip3_map(a: &Tensor, b: &Tensor, c: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).zip(c.data()).map(|((&x, &y), &z)| f(x, y, z)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape")
}
