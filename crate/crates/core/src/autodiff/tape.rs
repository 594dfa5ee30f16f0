use ndarray::{Array1, Array2, ArrayD, ArrayViewD, Axis, Ix1, Ix2};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Neg(Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// (matrix m×n, vector n) -> vector m
    MatVec(Var, Var),
    /// (vector m, matrix m×n) -> vector n
    VecMat(Var, Var),
    /// (m×k, k×n) -> m×n
    MatMat(Var, Var),
    /// (matrix r×c, vector c): add the vector to every row
    BroadcastAddRow(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    /// vector -> vector, normalized exponentials
    Softmax(Var),
    /// vector -> 1-element vector
    LogSumExp(Var),
    /// vector minus a scalar node, broadcast
    SubBroadcast(Var, Var),
    /// vector -> 1-element vector at a fixed position
    Index(Var, usize),
    /// vector -> contiguous sub-vector
    Slice(Var, usize, usize),
    Concat(Vec<Var>),
    /// any shape -> 1-element vector
    SumAll(Var),
    Dot(Var, Var),
    /// k vectors of length c -> k×c matrix
    StackRows(Vec<Var>),
    /// (matrix, row index) -> vector
    Row(Var, usize),
    /// (signal T, kernels C×W) -> T×C, zero-padded so output length equals T
    Conv1dSame(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: ArrayD<f64>,
}

/// Gradients of a scalar root with respect to every tape node.
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    /// Gradient of the root w.r.t. `v`, or `None` if `v` does not reach the root.
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of the root w.r.t. `v`, zero-filled when unreachable.
    pub fn get_or_zeros(&self, v: Var, tape: &Tape) -> ArrayD<f64> {
        match self.grads[v.0] {
            Some(ref g) => g.clone(),
            None => ArrayD::zeros(tape.value(v).raw_dim()),
        }
    }
}

/// A Wengert list holding forward values and the op each node came from.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn as1(v: ArrayViewD<'_, f64>) -> ndarray::ArrayView1<'_, f64> {
    v.into_dimensionality::<Ix1>().expect("expected 1-d value")
}

fn as2(v: ArrayViewD<'_, f64>) -> ndarray::ArrayView2<'_, f64> {
    v.into_dimensionality::<Ix2>().expect("expected 2-d value")
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

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a 1-element node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "scalar_value on a non-scalar node");
        val.iter().next().copied().unwrap()
    }

    fn push(&mut self, op: Op, value: ArrayD<f64>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input node.
    pub fn leaf(&mut self, value: ArrayD<f64>) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Node whose gradient is never consumed; used for data and fixed offsets.
    pub fn constant(&mut self, value: ArrayD<f64>) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Array1::from(vec![value]).into_dyn())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| -x);
        self.push(Op::Neg(a), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).mapv(|x| k * x);
        self.push(Op::Scale(a, k), v)
    }

    pub fn matvec(&mut self, m: Var, x: Var) -> Var {
        let v = as2(self.value(m).view()).dot(&as1(self.value(x).view()));
        self.push(Op::MatVec(m, x), v.into_dyn())
    }

    pub fn vecmat(&mut self, x: Var, m: Var) -> Var {
        let v = as1(self.value(x).view()).dot(&as2(self.value(m).view()));
        self.push(Op::VecMat(x, m), v.into_dyn())
    }

    pub fn matmat(&mut self, a: Var, b: Var) -> Var {
        let v = as2(self.value(a).view()).dot(&as2(self.value(b).view()));
        self.push(Op::MatMat(a, b), v.into_dyn())
    }

    pub fn broadcast_add_row(&mut self, m: Var, x: Var) -> Var {
        let mat = as2(self.value(m).view()).to_owned();
        let row = as1(self.value(x).view()).to_owned();
        let v = mat + &row;
        self.push(Op::BroadcastAddRow(m, x), v.into_dyn())
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a), v)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let x = as1(self.value(a).view());
        let max = x.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let exps = x.mapv(|v| (v - max).exp());
        let sum: f64 = exps.sum();
        let v = exps.mapv(|e| e / sum);
        self.push(Op::Softmax(a), v.into_dyn())
    }

    pub fn logsumexp(&mut self, a: Var) -> Var {
        let x = as1(self.value(a).view());
        assert!(!x.is_empty(), "logsumexp of empty vector");
        let v = logsumexp_slice(x.as_slice().expect("contiguous"));
        self.push(Op::LogSumExp(a), Array1::from(vec![v]).into_dyn())
    }

    /// `a - s` with `s` a 1-element node, broadcast over `a`.
    pub fn sub_broadcast(&mut self, a: Var, s: Var) -> Var {
        let sv = self.scalar_value(s);
        let v = self.value(a).mapv(|x| x - sv);
        self.push(Op::SubBroadcast(a, s), v)
    }

    pub fn index(&mut self, a: Var, i: usize) -> Var {
        let x = as1(self.value(a).view());
        assert!(i < x.len(), "index {} out of bounds {}", i, x.len());
        let v = Array1::from(vec![x[i]]);
        self.push(Op::Index(a, i), v.into_dyn())
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = as1(self.value(a).view());
        assert!(start + len <= x.len(), "slice out of bounds");
        let v = x.slice(ndarray::s![start..start + len]).to_owned();
        self.push(Op::Slice(a, start, len), v.into_dyn())
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of no parts");
        let mut out = Vec::new();
        for &p in parts {
            out.extend(as1(self.value(p).view()).iter().copied());
        }
        self.push(Op::Concat(parts.to_vec()), Array1::from(out).into_dyn())
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array1::from(vec![self.value(a).sum()]);
        self.push(Op::SumAll(a), v.into_dyn())
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let v = as1(self.value(a).view()).dot(&as1(self.value(b).view()));
        self.push(Op::Dot(a, b), Array1::from(vec![v]).into_dyn())
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack_rows of no rows");
        let c = self.value(rows[0]).len();
        let mut out = Array2::zeros((rows.len(), c));
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).assign(&as1(self.value(r).view()));
        }
        self.push(Op::StackRows(rows.to_vec()), out.into_dyn())
    }

    pub fn row(&mut self, m: Var, i: usize) -> Var {
        let mat = as2(self.value(m).view());
        assert!(i < mat.nrows(), "row index out of bounds");
        let v = mat.row(i).to_owned();
        self.push(Op::Row(m, i), v.into_dyn())
    }

    /// Same-length 1-D convolution of `signal` (length T) with `kernels`
    /// (C×W, W odd), producing T×C. Zero padding of (W-1)/2 on each side.
    pub fn conv1d_same(&mut self, signal: Var, kernels: Var) -> Var {
        let x = as1(self.value(signal).view()).to_owned();
        let k = as2(self.value(kernels).view()).to_owned();
        let (c, w) = (k.nrows(), k.ncols());
        assert!(w % 2 == 1, "conv kernel width must be odd");
        let pad = (w - 1) / 2;
        let t = x.len();
        let mut out = Array2::zeros((t, c));
        for ti in 0..t {
            for ci in 0..c {
                let mut acc = 0.0;
                for wi in 0..w {
                    let j = ti as isize + wi as isize - pad as isize;
                    if j >= 0 && (j as usize) < t {
                        acc += k[[ci, wi]] * x[j as usize];
                    }
                }
                out[[ti, ci]] = acc;
            }
        }
        self.push(Op::Conv1dSame(signal, kernels), out.into_dyn())
    }

    /// Reverse pass from a scalar root. Each node is visited exactly once.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::invalid_argument(format!(
                "backward requires a scalar root, got {} elements",
                self.value(root).len()
            )));
        }
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(ArrayD::ones(self.value(root).raw_dim()));

        for id in (0..=root.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &ArrayD<f64>, grads: &mut Vec<Option<ArrayD<f64>>>) {
        let acc = |grads: &mut Vec<Option<ArrayD<f64>>>, v: Var, contrib: ArrayD<f64>| {
            match grads[v.0] {
                Some(ref mut existing) => *existing += &contrib,
                None => grads[v.0] = Some(contrib),
            }
        };
        match self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(grads, a, g.clone());
                acc(grads, b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, a, g.clone());
                acc(grads, b, g.mapv(|x| -x));
            }
            Op::Neg(a) => acc(grads, a, g.mapv(|x| -x)),
            Op::Mul(a, b) => {
                acc(grads, a, g * self.value(b));
                acc(grads, b, g * self.value(a));
            }
            Op::Scale(a, k) => acc(grads, a, g.mapv(|x| k * x)),
            Op::MatVec(m, x) => {
                let gv = as1(g.view());
                let mv = as2(self.value(m).view());
                let xv = as1(self.value(x).view());
                // dM = g ⊗ x, dx = Mᵀ g
                let mut dm = Array2::zeros(mv.raw_dim());
                for i in 0..mv.nrows() {
                    for j in 0..mv.ncols() {
                        dm[[i, j]] = gv[i] * xv[j];
                    }
                }
                acc(grads, m, dm.into_dyn());
                acc(grads, x, mv.t().dot(&gv).into_dyn());
            }
            Op::VecMat(x, m) => {
                let gv = as1(g.view());
                let mv = as2(self.value(m).view());
                let xv = as1(self.value(x).view());
                // dx = M g, dM = x ⊗ g
                acc(grads, x, mv.dot(&gv).into_dyn());
                let mut dm = Array2::zeros(mv.raw_dim());
                for i in 0..mv.nrows() {
                    for j in 0..mv.ncols() {
                        dm[[i, j]] = xv[i] * gv[j];
                    }
                }
                acc(grads, m, dm.into_dyn());
            }
            Op::MatMat(a, b) => {
                let gv = as2(g.view());
                let av = as2(self.value(a).view());
                let bv = as2(self.value(b).view());
                acc(grads, a, gv.dot(&bv.t()).into_dyn());
                acc(grads, b, av.t().dot(&gv).into_dyn());
            }
            Op::BroadcastAddRow(m, x) => {
                acc(grads, m, g.clone());
                let gv = as2(g.view());
                acc(grads, x, gv.sum_axis(Axis(0)).into_dyn());
            }
            Op::Tanh(a) => {
                let y = &self.nodes[id].value;
                acc(grads, a, g * &y.mapv(|t| 1.0 - t * t));
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[id].value;
                acc(grads, a, g * &y.mapv(|s| s * (1.0 - s)));
            }
            Op::Softmax(a) => {
                let y = as1(self.nodes[id].value.view());
                let gv = as1(g.view());
                let dot: f64 = y.iter().zip(gv.iter()).map(|(yi, gi)| yi * gi).sum();
                let dx = Array1::from_iter(
                    y.iter().zip(gv.iter()).map(|(yi, gi)| yi * (gi - dot)),
                );
                acc(grads, a, dx.into_dyn());
            }
            Op::LogSumExp(a) => {
                let x = as1(self.value(a).view());
                let gs = g.iter().next().copied().unwrap();
                let max = x.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let exps = x.mapv(|v| (v - max).exp());
                let sum: f64 = exps.sum();
                acc(grads, a, exps.mapv(|e| gs * e / sum).into_dyn());
            }
            Op::SubBroadcast(a, s) => {
                acc(grads, a, g.clone());
                let total: f64 = g.sum();
                acc(grads, s, Array1::from(vec![-total]).into_dyn());
            }
            Op::Index(a, i) => {
                let mut dx = ArrayD::zeros(self.value(a).raw_dim());
                dx[[i]] = g.iter().next().copied().unwrap();
                acc(grads, a, dx);
            }
            Op::Slice(a, start, len) => {
                let mut dx = Array1::zeros(self.value(a).len());
                let gv = as1(g.view());
                for i in 0..len {
                    dx[start + i] = gv[i];
                }
                acc(grads, a, dx.into_dyn());
            }
            Op::Concat(ref parts) => {
                let gv = as1(g.view());
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    let part = gv.slice(ndarray::s![offset..offset + len]).to_owned();
                    acc(grads, p, part.into_dyn());
                    offset += len;
                }
            }
            Op::SumAll(a) => {
                let gs = g.iter().next().copied().unwrap();
                acc(grads, a, ArrayD::from_elem(self.value(a).raw_dim(), gs));
            }
            Op::Dot(a, b) => {
                let gs = g.iter().next().copied().unwrap();
                acc(grads, a, self.value(b).mapv(|x| gs * x));
                acc(grads, b, self.value(a).mapv(|x| gs * x));
            }
            Op::StackRows(ref rows) => {
                let gv = as2(g.view());
                for (i, &r) in rows.iter().enumerate() {
                    acc(grads, r, gv.row(i).to_owned().into_dyn());
                }
            }
            Op::Row(m, i) => {
                let mv = as2(self.value(m).view());
                let mut dm = Array2::zeros(mv.raw_dim());
                dm.row_mut(i).assign(&as1(g.view()));
                acc(grads, m, dm.into_dyn());
            }
            Op::Conv1dSame(signal, kernels) => {
                let x = as1(self.value(signal).view());
                let k = as2(self.value(kernels).view());
                let gv = as2(g.view());
                let (c, w) = (k.nrows(), k.ncols());
                let pad = (w - 1) / 2;
                let t = x.len();
                let mut dx = Array1::zeros(t);
                let mut dk = Array2::zeros((c, w));
                for ti in 0..t {
                    for ci in 0..c {
                        let go = gv[[ti, ci]];
                        if go == 0.0 {
                            continue;
                        }
                        for wi in 0..w {
                            let j = ti as isize + wi as isize - pad as isize;
                            if j >= 0 && (j as usize) < t {
                                dx[j as usize] += go * k[[ci, wi]];
                                dk[[ci, wi]] += go * x[j as usize];
                            }
                        }
                    }
                }
                acc(grads, signal, dx.into_dyn());
                acc(grads, kernels, dk.into_dyn());
            }
        }
    }
}

/// Numerically stable log Σ exp over a plain slice.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid_argument("logsumexp of an empty vector"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("logsumexp input contains non-finite entries"));
    }
    Ok(logsumexp_slice(values))
}

fn logsumexp_slice(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}
