//! Tape-based reverse-mode differentiation over a small, fixed op vocabulary.
//!
//! Every op evaluates eagerly when recorded. `backward` replays the tape in
//! reverse. The scalar type is generic so the same model code can be run in
//! `f64` for finite-difference verification; training uses `f32`.

use std::collections::BTreeMap;
use std::fmt::Debug;

use super::{Grads, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Scalar type the graph computes in.
pub trait Real:
    num_traits::Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn of_f32(v: f32) -> Self;
    fn as_f32(self) -> f32;
    fn c(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn erf(self) -> Self;
}

impl Real for f32 {
    fn of_f32(v: f32) -> Self {
        v
    }
    fn as_f32(self) -> f32 {
        self
    }
    fn c(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn erf(self) -> Self {
        libm::erff(self)
    }
}

impl Real for f64 {
    fn of_f32(v: f32) -> Self {
        v as f64
    }
    fn as_f32(self) -> f32 {
        self as f32
    }
    fn c(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Additive perturbation of one parameter scalar, applied in `T` precision
/// when the parameter is first read. Used by finite-difference checks.
#[derive(Clone, Debug)]
pub struct Perturbation {
    pub name: String,
    pub index: usize,
    pub delta: f64,
}

enum Op<T> {
    Const,
    Param(String),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    MatMulNT { a: Var, b: Var, m: usize, k: usize, n: usize },
    BatchMatMul { a: Var, b: Var, g: usize, m: usize, k: usize, n: usize, trans_b: bool },
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Softmax(Var),
    Embedding { table: Var, ids: Vec<usize> },
    MeanRows { x: Var, groups: Vec<Vec<usize>> },
    SelectRows { x: Var, idx: Vec<usize> },
    L2NormRows { x: Var, norms: Vec<T> },
    RowDot(Var, Var),
    ConcatCols(Vec<Var>),
    Col { x: Var, j: usize },
    MulRowScalar { x: Var, s: Var },
    SwapAxes12 { x: Var, dims: [usize; 4] },
    Reshape(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Vec<T>,
    shape: Vec<usize>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<'p, T: Real> {
    params: &'p ParamSet,
    nodes: Vec<Node<T>>,
    param_vars: BTreeMap<String, Var>,
    perturbation: Option<Perturbation>,
    zero_norm_rows: usize,
}

// ---------------------------------------------------------------------------
// Dense kernels. Accumulation order is fixed (sequential over the inner index)
// so results are bit-reproducible and unaffected by trailing zero terms.

/// out[m,n] += a[m,k] @ b[k,n]
fn gemm_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

fn transpose<T: Real>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

fn std_normal_pdf<T: Real>(x: T) -> T {
    T::c(0.398_942_280_401_432_7) * (-(x * x) * T::c(0.5)).exp()
}

fn std_normal_cdf<T: Real>(x: T) -> T {
    T::c(0.5) * (T::one() + (x * T::c(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub(crate) const LN_EPS: f64 = 1e-5;

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: BTreeMap::new(),
            perturbation: None,
            zero_norm_rows: 0,
        }
    }

    pub fn with_perturbation(params: &'p ParamSet, perturbation: Perturbation) -> Self {
        let mut g = Self::new(params);
        g.perturbation = Some(perturbation);
        g
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    /// Number of rows that hit the zero-norm rule in `l2_normalize_rows`.
    pub fn zero_norm_rows(&self) -> usize {
        self.zero_norm_rows
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.iter().map(|x| x.as_f32()).collect())
            .expect("node shapes are validated on construction")
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, op_name: &'static str, value: Vec<T>, shape: Vec<usize>, op: Op<T>) -> Result<Var> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("op `{op_name}`")));
        }
        let needs_grad = match &op {
            Op::Const => false,
            Op::Param(name) => self.params.get(name).map(|p| p.trainable).unwrap_or(false),
            other => inputs(other).iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, shape, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != data.len() || n == 0 {
            return Err(Error::shape("constant", format!("{shape:?} vs {} values", data.len())));
        }
        self.push("constant", data, shape, Op::Const)
    }

    pub fn constant_tensor(&mut self, t: &Tensor) -> Result<Var> {
        self.constant(t.shape().to_vec(), t.data().iter().map(|&x| T::of_f32(x)).collect())
    }

    /// Reads a parameter onto the tape; repeated reads return the same node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.param_vars.get(name) {
            return Ok(*v);
        }
        let p = self.params.get(name)?;
        let mut data: Vec<T> = p.tensor.data().iter().map(|&x| T::of_f32(x)).collect();
        if let Some(pt) = &self.perturbation {
            if pt.name == name {
                data[pt.index] += T::c(pt.delta);
            }
        }
        let v = self.push("param", data, p.tensor.shape().to_vec(), Op::Param(name.to_string()))?;
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::shape(op, format!("expected rank 2, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        self.push("add", v, self.shape(a).to_vec(), Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        self.push("sub", v, self.shape(a).to_vec(), Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        self.push("mul", v, self.shape(a).to_vec(), Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = T::c(c);
        let v = self.value(a).iter().map(|&x| x * c).collect();
        self.push("scale", v, self.shape(a).to_vec(), Op::Scale(a, c))
    }

    /// `x[.., n] + b[n]` broadcast over all leading rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap();
        if self.shape(b) != [n] {
            return Err(Error::shape("add_row", format!("{:?} + {:?}", self.shape(x), self.shape(b))));
        }
        let bv = self.value(b);
        let v = self.value(x).chunks(n).flat_map(|r| r.iter().zip(bv).map(|(&p, &q)| p + q)).collect();
        self.push("add_row", v, self.shape(x).to_vec(), Op::AddRow(x, b))
    }

    /// `a[m,k] @ b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m},{k}] @ [{k2},{n}]")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_acc(self.value(a), self.value(b), &mut out, m, k, n);
        self.push("matmul", out, vec![m, n], Op::MatMul { a, b, m, k, n })
    }

    /// `a[m,k] @ b[n,k]^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul_nt", a)?;
        let (n, k2) = self.dims2("matmul_nt", b)?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", format!("[{m},{k}] @ [{n},{k2}]^T")));
        }
        let bt = transpose(self.value(b), n, k);
        let mut out = vec![T::zero(); m * n];
        gemm_acc(self.value(a), &bt, &mut out, m, k, n);
        self.push("matmul_nt", out, vec![m, n], Op::MatMulNT { a, b, m, k, n })
    }

    /// Batched `a[g,m,k] @ b[g,k,n]`, or `a[g,m,k] @ b[g,n,k]^T` when `trans_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::shape("batch_matmul", format!("{sa:?} @ {sb:?}")));
        }
        let (g, m, k) = (sa[0], sa[1], sa[2]);
        let (k2, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != k2 {
            return Err(Error::shape("batch_matmul", format!("{sa:?} @ {sb:?} (trans_b={trans_b})")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![T::zero(); g * m * n];
        for gi in 0..g {
            let ablk = &av[gi * m * k..(gi + 1) * m * k];
            let bblk = &bv[gi * k * n..(gi + 1) * k * n];
            let oblk = &mut out[gi * m * n..(gi + 1) * m * n];
            if trans_b {
                let bt = transpose(bblk, n, k);
                gemm_acc(ablk, &bt, oblk, m, k, n);
            } else {
                gemm_acc(ablk, bblk, oblk, m, k, n);
            }
        }
        self.push("batch_matmul", out, vec![g, m, n], Op::BatchMatMul { a, b, g, m, k, n, trans_b })
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).iter().map(|&z| z * std_normal_cdf(z)).collect();
        self.push("gelu", v, self.shape(x).to_vec(), Op::Gelu(x))
    }

    /// Layer normalisation over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap();
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(Error::shape("layer_norm", format!("x {:?}, gamma {:?}", self.shape(x), self.shape(gamma))));
        }
        let nt = T::c(n as f64);
        let eps = T::c(LN_EPS);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let xv = self.value(x);
        let rows = xv.len() / n;
        let mut out = Vec::with_capacity(xv.len());
        let mut xhat = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(rows);
        for r in xv.chunks(n) {
            let mut mean = T::zero();
            for &z in r {
                mean += z;
            }
            mean /= nt;
            let mut var = T::zero();
            for &z in r {
                var += (z - mean) * (z - mean);
            }
            var /= nt;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for (j, &z) in r.iter().enumerate() {
                let h = (z - mean) * rs;
                xhat.push(h);
                out.push(h * gv[j] + bv[j]);
            }
        }
        self.push("layer_norm", out, self.shape(x).to_vec(), Op::LayerNorm { x, gamma, beta, xhat, rstd })
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap();
        let out = softmax_rows(self.value(x), n, None);
        self.push("softmax", out, self.shape(x).to_vec(), Op::Softmax(x))
    }

    /// Softmax of `x[g, t, t]` where key column `j` of every row in group `gi`
    /// is excluded when `key_keep[(gi / groups_per_mask) * t + j]` is false.
    /// Excluded entries are exactly zero and do not enter the normaliser.
    pub fn masked_softmax(&mut self, x: Var, key_keep: &[bool], groups_per_mask: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[1] != s[2] || key_keep.len() * groups_per_mask != s[0] * s[2] {
            return Err(Error::shape("masked_softmax", format!("{s:?} with mask of {}", key_keep.len())));
        }
        let t = s[2];
        let rows_per_mask = groups_per_mask * t;
        let out = softmax_rows(self.value(x), t, Some((key_keep, rows_per_mask)));
        self.push("masked_softmax", out, s, Op::Softmax(x))
    }

    /// Gathers rows of `table[v, d]` by id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2("embedding", table)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::shape("embedding", format!("id {bad} out of range for {v} rows")));
        }
        if ids.is_empty() {
            return Err(Error::shape("embedding", "no ids"));
        }
        let tv = self.value(table);
        let out = ids.iter().flat_map(|&i| tv[i * d..(i + 1) * d].iter().copied()).collect();
        self.push("embedding", out, vec![ids.len(), d], Op::Embedding { table, ids: ids.to_vec() })
    }

    /// Mean of the listed rows of `x[r, d]` for each group; returns `[groups, d]`.
    pub fn mean_rows(&mut self, x: Var, groups: Vec<Vec<usize>>) -> Result<Var> {
        let (r, d) = self.dims2("mean_rows", x)?;
        if groups.is_empty() || groups.iter().any(|g| g.is_empty() || g.iter().any(|&i| i >= r)) {
            return Err(Error::shape("mean_rows", "empty group or row index out of range"));
        }
        let xv = self.value(x);
        let mut out = vec![T::zero(); groups.len() * d];
        for (gi, g) in groups.iter().enumerate() {
            let o = &mut out[gi * d..(gi + 1) * d];
            for &i in g {
                for (a, &b) in o.iter_mut().zip(&xv[i * d..(i + 1) * d]) {
                    *a += b;
                }
            }
            let inv = T::c(g.len() as f64);
            for a in o.iter_mut() {
                *a /= inv;
            }
        }
        let rows = groups.len();
        self.push("mean_rows", out, vec![rows, d], Op::MeanRows { x, groups })
    }

    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, d) = self.dims2("select_rows", x)?;
        if idx.is_empty() || idx.iter().any(|&i| i >= r) {
            return Err(Error::shape("select_rows", "row index out of range"));
        }
        let xv = self.value(x);
        let out = idx.iter().flat_map(|&i| xv[i * d..(i + 1) * d].iter().copied()).collect();
        self.push("select_rows", out, vec![idx.len(), d], Op::SelectRows { x, idx: idx.to_vec() })
    }

    /// Scales every row to unit L2 norm. Zero rows map to zero and are counted.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (_, d) = self.dims2("l2_normalize_rows", x)?;
        let mut norms = Vec::new();
        let mut out = Vec::with_capacity(self.value(x).len());
        let mut zero = 0;
        for r in self.value(x).chunks(d) {
            let mut ss = T::zero();
            for &z in r {
                ss += z * z;
            }
            let nrm = ss.sqrt();
            norms.push(nrm);
            if nrm == T::zero() {
                zero += 1;
                out.extend(std::iter::repeat_n(T::zero(), d));
            } else {
                out.extend(r.iter().map(|&z| z / nrm));
            }
        }
        self.zero_norm_rows += zero;
        self.push("l2_normalize_rows", out, self.shape(x).to_vec(), Op::L2NormRows { x, norms })
    }

    /// Row-wise inner product of two `[m, n]` tensors; returns `[m, 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (m, n) = self.dims2("row_dot", a)?;
        let (av, bv) = (self.value(a), self.value(b));
        let out = (0..m)
            .map(|i| {
                let mut s = T::zero();
                for j in 0..n {
                    s += av[i * n + j] * bv[i * n + j];
                }
                s
            })
            .collect();
        self.push("row_dot", out, vec![m, 1], Op::RowDot(a, b))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs"));
        }
        let m = self.dims2("concat_cols", parts[0])?.0;
        let mut widths = Vec::new();
        for &p in parts {
            let (pm, pn) = self.dims2("concat_cols", p)?;
            if pm != m {
                return Err(Error::shape("concat_cols", format!("row count {pm} vs {m}")));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        self.push("concat_cols", out, vec![m, total], Op::ConcatCols(parts.to_vec()))
    }

    /// Column `j` of `x[m, n]` as `[m, 1]`.
    pub fn col(&mut self, x: Var, j: usize) -> Result<Var> {
        let (m, n) = self.dims2("col", x)?;
        if j >= n {
            return Err(Error::shape("col", format!("column {j} of {n}")));
        }
        let out = (0..m).map(|i| self.value(x)[i * n + j]).collect();
        self.push("col", out, vec![m, 1], Op::Col { x, j })
    }

    /// `x[m, n] * s[m, 1]` broadcast along each row.
    pub fn mul_row_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let (m, n) = self.dims2("mul_row_scalar", x)?;
        if self.shape(s) != [m, 1] {
            return Err(Error::shape("mul_row_scalar", format!("{:?} * {:?}", self.shape(x), self.shape(s))));
        }
        let (xv, sv) = (self.value(x), self.value(s));
        let out = (0..m * n).map(|i| xv[i] * sv[i / n]).collect();
        self.push("mul_row_scalar", out, vec![m, n], Op::MulRowScalar { x, s })
    }

    /// `[a, b, c, d] -> [a, c, b, d]`.
    pub fn swap_axes12(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(Error::shape("swap_axes12", format!("expected rank 4, got {s:?}")));
        }
        let dims = [s[0], s[1], s[2], s[3]];
        let out = swap12(self.value(x), dims);
        self.push("swap_axes12", out, vec![dims[0], dims[2], dims[1], dims[3]], Op::SwapAxes12 { x, dims })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        let v = self.value(x).to_vec();
        self.push("reshape", v, shape, Op::Reshape(x))
    }

    /// Mean softmax cross-entropy of `logits[m, c]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, c) = self.dims2("cross_entropy", logits)?;
        if targets.len() != m || targets.iter().any(|&t| t >= c) {
            return Err(Error::shape("cross_entropy", format!("{m} rows, {} targets, {c} classes", targets.len())));
        }
        let lv = self.value(logits);
        let mut probs = Vec::with_capacity(m * c);
        let mut total = T::zero();
        for (i, row) in lv.chunks(c).enumerate() {
            let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut s = T::zero();
            for &z in row {
                s += (z - mx).exp();
            }
            let lse = s.ln();
            total += lse - (row[targets[i]] - mx);
            for &z in row {
                probs.push((z - mx).exp() / s);
            }
        }
        let loss = total / T::c(m as f64);
        self.push("cross_entropy", vec![loss], vec![1], Op::CrossEntropy { logits, targets: targets.to_vec(), probs })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let mut s = T::zero();
        for &z in self.value(x) {
            s += z;
        }
        self.push("sum", vec![s], vec![1], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let mut s = T::zero();
        for &z in self.value(x) {
            s += z;
        }
        let n = T::c(self.value(x).len() as f64);
        self.push("mean", vec![s / n], vec![1], Op::Mean(x))
    }

    /// Gradients of scalar `loss` for every trainable parameter in the bound
    /// set. Parameters that do not reach the loss get an all-zero entry;
    /// frozen parameters get none.
    pub fn backward(&self, loss: Var) -> Result<BTreeMap<String, Vec<T>>> {
        if self.shape(loss) != [1] {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = BTreeMap::new();
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            self.backprop_node(node, &gout, &mut grads);
            if let Op::Param(name) = &node.op {
                out.insert(name.clone(), gout);
            }
        }
        for (name, p) in self.params.iter() {
            if p.trainable && !out.contains_key(name) {
                out.insert(name.clone(), vec![T::zero(); p.tensor.numel()]);
            }
        }
        Ok(out)
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].needs_grad;
        match &node.op {
            Op::Const | Op::Param(_) => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        add_into(acc(grads, v, g.len()), g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    add_into(acc(grads, *a, g.len()), g);
                }
                if wants(*b) {
                    for (d, &x) in acc(grads, *b, g.len()).iter_mut().zip(g) {
                        *d -= x;
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if wants(v) {
                        let ov = &nodes[other.0].value;
                        for ((d, &x), &y) in acc(grads, v, g.len()).iter_mut().zip(g).zip(ov) {
                            *d += x * y;
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if wants(*a) {
                    for (d, &x) in acc(grads, *a, g.len()).iter_mut().zip(g) {
                        *d += x * *c;
                    }
                }
            }
            Op::AddRow(x, b) => {
                if wants(*x) {
                    add_into(acc(grads, *x, g.len()), g);
                }
                if wants(*b) {
                    let n = nodes[b.0].value.len();
                    let db = acc(grads, *b, n);
                    for r in g.chunks(n) {
                        add_into(db, r);
                    }
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if wants(*a) {
                    let bt = transpose(&nodes[b.0].value, k, n);
                    gemm_acc(g, &bt, acc(grads, *a, m * k), m, n, k);
                }
                if wants(*b) {
                    let at = transpose(&nodes[a.0].value, m, k);
                    gemm_acc(&at, g, acc(grads, *b, k * n), k, m, n);
                }
            }
            Op::MatMulNT { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if wants(*a) {
                    gemm_acc(g, &nodes[b.0].value, acc(grads, *a, m * k), m, n, k);
                }
                if wants(*b) {
                    let gt = transpose(g, m, n);
                    gemm_acc(&gt, &nodes[a.0].value, acc(grads, *b, n * k), n, m, k);
                }
            }
            Op::BatchMatMul { a, b, g: groups, m, k, n, trans_b } => {
                let (groups, m, k, n) = (*groups, *m, *k, *n);
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if wants(*a) {
                    let da = acc(grads, *a, groups * m * k);
                    for gi in 0..groups {
                        let gblk = &g[gi * m * n..(gi + 1) * m * n];
                        let bblk = &bv[gi * k * n..(gi + 1) * k * n];
                        let dblk = &mut da[gi * m * k..(gi + 1) * m * k];
                        if *trans_b {
                            // b block is [n, k]
                            gemm_acc(gblk, bblk, dblk, m, n, k);
                        } else {
                            let bt = transpose(bblk, k, n);
                            gemm_acc(gblk, &bt, dblk, m, n, k);
                        }
                    }
                }
                if wants(*b) {
                    let db = acc(grads, *b, groups * k * n);
                    for gi in 0..groups {
                        let gblk = &g[gi * m * n..(gi + 1) * m * n];
                        let ablk = &av[gi * m * k..(gi + 1) * m * k];
                        let dblk = &mut db[gi * k * n..(gi + 1) * k * n];
                        if *trans_b {
                            let gt = transpose(gblk, m, n);
                            gemm_acc(&gt, ablk, dblk, n, m, k);
                        } else {
                            let at = transpose(ablk, m, k);
                            gemm_acc(&at, gblk, dblk, k, m, n);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                if wants(*x) {
                    let xv = &nodes[x.0].value;
                    for ((d, &gi), &z) in acc(grads, *x, g.len()).iter_mut().zip(g).zip(xv) {
                        *d += gi * (std_normal_cdf(z) + z * std_normal_pdf(z));
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let n = nodes[gamma.0].value.len();
                let gv = &nodes[gamma.0].value;
                if wants(*gamma) {
                    let dg = acc(grads, *gamma, n);
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if wants(*beta) {
                    let db = acc(grads, *beta, n);
                    for gr in g.chunks(n) {
                        add_into(db, gr);
                    }
                }
                if wants(*x) {
                    let nt = T::c(n as f64);
                    let dx = acc(grads, *x, g.len());
                    for (r, ((gr, hr), dr)) in g.chunks(n).zip(xhat.chunks(n)).zip(dx.chunks_mut(n)).enumerate() {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..n {
                            let dh = gr[j] * gv[j];
                            s1 += dh;
                            s2 += dh * hr[j];
                        }
                        s1 /= nt;
                        s2 /= nt;
                        for j in 0..n {
                            let dh = gr[j] * gv[j];
                            dr[j] += rstd[r] * (dh - s1 - hr[j] * s2);
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                if wants(*x) {
                    let n = *node.shape.last().unwrap();
                    let dx = acc(grads, *x, g.len());
                    for ((yr, gr), dr) in node.value.chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)) {
                        let mut dot = T::zero();
                        for j in 0..n {
                            dot += yr[j] * gr[j];
                        }
                        for j in 0..n {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if wants(*table) {
                    let d = node.shape[1];
                    let n = nodes[table.0].value.len();
                    let dt = acc(grads, *table, n);
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut dt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::MeanRows { x, groups } => {
                if wants(*x) {
                    let d = node.shape[1];
                    let n = nodes[x.0].value.len();
                    let dx = acc(grads, *x, n);
                    for (gi, grp) in groups.iter().enumerate() {
                        let inv = T::c(grp.len() as f64);
                        for &i in grp {
                            for j in 0..d {
                                dx[i * d + j] += g[gi * d + j] / inv;
                            }
                        }
                    }
                }
            }
            Op::SelectRows { x, idx } => {
                if wants(*x) {
                    let d = node.shape[1];
                    let n = nodes[x.0].value.len();
                    let dx = acc(grads, *x, n);
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(&mut dx[i * d..(i + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::L2NormRows { x, norms } => {
                if wants(*x) {
                    let d = node.shape[1];
                    let dx = acc(grads, *x, g.len());
                    for (r, &nrm) in norms.iter().enumerate() {
                        if nrm == T::zero() {
                            continue;
                        }
                        let y = &node.value[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let mut dot = T::zero();
                        for j in 0..d {
                            dot += y[j] * gr[j];
                        }
                        for j in 0..d {
                            dx[r * d + j] += (gr[j] - y[j] * dot) / nrm;
                        }
                    }
                }
            }
            Op::RowDot(a, b) => {
                let n = nodes[a.0].shape[1];
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if wants(v) {
                        let ov = &nodes[other.0].value;
                        let d = acc(grads, v, ov.len());
                        for (i, &gi) in g.iter().enumerate() {
                            for j in 0..n {
                                d[i * n + j] += gi * ov[i * n + j];
                            }
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let m = node.shape[0];
                let total = node.shape[1];
                let mut off = 0;
                for &p in parts {
                    let w = nodes[p.0].shape[1];
                    if wants(p) {
                        let dp = acc(grads, p, m * w);
                        for i in 0..m {
                            add_into(&mut dp[i * w..(i + 1) * w], &g[i * total + off..i * total + off + w]);
                        }
                    }
                    off += w;
                }
            }
            Op::Col { x, j } => {
                if wants(*x) {
                    let n = nodes[x.0].shape[1];
                    let dx = acc(grads, *x, nodes[x.0].value.len());
                    for (i, &gi) in g.iter().enumerate() {
                        dx[i * n + j] += gi;
                    }
                }
            }
            Op::MulRowScalar { x, s } => {
                let n = node.shape[1];
                if wants(*x) {
                    let sv = &nodes[s.0].value;
                    let dx = acc(grads, *x, g.len());
                    for (i, d) in dx.iter_mut().enumerate() {
                        *d += g[i] * sv[i / n];
                    }
                }
                if wants(*s) {
                    let xv = &nodes[x.0].value;
                    let ds = acc(grads, *s, node.shape[0]);
                    for (i, d) in ds.iter_mut().enumerate() {
                        let mut t = T::zero();
                        for j in 0..n {
                            t += g[i * n + j] * xv[i * n + j];
                        }
                        *d += t;
                    }
                }
            }
            Op::SwapAxes12 { x, dims } => {
                if wants(*x) {
                    let back = swap12(g, [dims[0], dims[2], dims[1], dims[3]]);
                    add_into(acc(grads, *x, g.len()), &back);
                }
            }
            Op::Reshape(x) => {
                if wants(*x) {
                    add_into(acc(grads, *x, g.len()), g);
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                if wants(*logits) {
                    let c = nodes[logits.0].shape[1];
                    let m = targets.len();
                    let scale = g[0] / T::c(m as f64);
                    let dl = acc(grads, *logits, m * c);
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let mut p = probs[i * c + j];
                            if j == t {
                                p -= T::one();
                            }
                            dl[i * c + j] += p * scale;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    let n = nodes[x.0].value.len();
                    for d in acc(grads, *x, n).iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Mean(x) => {
                if wants(*x) {
                    let n = nodes[x.0].value.len();
                    let v = g[0] / T::c(n as f64);
                    for d in acc(grads, *x, n).iter_mut() {
                        *d += v;
                    }
                }
            }
        }
    }
}

fn inputs<T>(op: &Op<T>) -> Vec<Var> {
    match op {
        Op::Const | Op::Param(_) => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::RowDot(a, b) => vec![*a, *b],
        Op::MatMul { a, b, .. } | Op::MatMulNT { a, b, .. } | Op::BatchMatMul { a, b, .. } => vec![*a, *b],
        Op::Scale(a, _) | Op::Gelu(a) | Op::Softmax(a) | Op::Reshape(a) | Op::Sum(a) | Op::Mean(a) => vec![*a],
        Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        Op::Embedding { table, .. } => vec![*table],
        Op::MeanRows { x, .. } | Op::SelectRows { x, .. } | Op::L2NormRows { x, .. } => vec![*x],
        Op::Col { x, .. } | Op::SwapAxes12 { x, .. } => vec![*x],
        Op::ConcatCols(parts) => parts.clone(),
        Op::MulRowScalar { x, s } => vec![*x, *s],
        Op::CrossEntropy { logits, .. } => vec![*logits],
    }
}

fn acc<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn swap12<T: Real>(x: &[T], [a, b, c, d]: [usize; 4]) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for ia in 0..a {
        for ib in 0..b {
            for ic in 0..c {
                let src = ((ia * b + ib) * c + ic) * d;
                let dst = ((ia * c + ic) * b + ib) * d;
                out[dst..dst + d].copy_from_slice(&x[src..src + d]);
            }
        }
    }
    out
}

fn softmax_rows<T: Real>(x: &[T], n: usize, mask: Option<(&[bool], usize)>) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (r, (row, orow)) in x.chunks(n).zip(out.chunks_mut(n)).enumerate() {
        let keep: Option<&[bool]> = mask.map(|(m, rows_per)| {
            let b = r / rows_per;
            &m[b * n..(b + 1) * n]
        });
        let on = |j: usize| keep.is_none_or(|k| k[j]);
        let mut mx = T::neg_infinity();
        for (j, &z) in row.iter().enumerate() {
            if on(j) {
                mx = mx.max(z);
            }
        }
        if mx == T::neg_infinity() {
            continue;
        }
        let mut s = T::zero();
        for (j, &z) in row.iter().enumerate() {
            if on(j) {
                let e = (z - mx).exp();
                orow[j] = e;
                s += e;
            }
        }
        for o in orow.iter_mut() {
            *o /= s;
        }
    }
    out
}

/// Evaluates `loss_fn` on an `f32` graph over `params` and returns the loss
/// with gradients for exactly the trainable parameters.
pub fn grad_eval<F>(params: &ParamSet, loss_fn: F) -> Result<(f32, Grads)>
where
    F: FnOnce(&mut Graph<'_, f32>) -> Result<Var>,
{
    let mut g = Graph::<f32>::new(params);
    let loss = loss_fn(&mut g)?;
    let value = g.scalar_value(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let raw = g.backward(loss)?;
    let mut grads = Grads::new();
    for (name, gv) in raw {
        let shape = params.tensor(&name)?.shape().to_vec();
        grads.insert(name, Tensor::new(shape, gv)?);
    }
    Ok((value, grads))
}
