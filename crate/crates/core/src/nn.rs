// SPDX-License-Identifier: Apache-2.0
//! Small reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records operations as they run; [`Tape::backward`] walks it in
//! reverse and accumulates parameter gradients into a [`ParamStore`]. Matrices
//! are row-major and products go through `matrixmultiply`.

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("parameters changed since the tape was recorded")]
    StaleTape,
    #[error("tape was recorded against a different parameter store")]
    ForeignStore,
    #[error("backward needs a 1x1 loss, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("invalid adjacency: {0}")]
    BadAdjacency(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix, NnError> {
        if data.len() != rows * cols {
            return Err(NnError::ShapeMismatch { op: "from_vec", left: (rows, cols), right: (data.len(), 1) });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn scalar(x: f64) -> Matrix {
        Matrix { rows: 1, cols: 1, data: vec![x] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, x: f64) {
        self.data[r * self.cols + c] = x;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    fn zip(&self, o: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&o.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    fn add_assign(&mut self, o: &Matrix) {
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`, where `op` optionally transposes.
fn gemm(alpha: f64, a: &Matrix, ta: bool, b: &Matrix, tb: bool, beta: f64, c: &mut Matrix) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let n = if tb { b.rows } else { b.cols };
    debug_assert_eq!(k, if tb { b.cols } else { b.rows });
    debug_assert_eq!((c.rows, c.cols), (m, n));
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for x in &mut c.data {
            *x *= beta;
        }
        return;
    }
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides and extents describe the three buffers exactly.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Compressed sparse rows: row `i` owns entries `offsets[i]..offsets[i+1]`
/// of `nbr`, each naming a neighbor row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<u32>,
    nbr: Vec<u32>,
}

impl Csr {
    pub fn new(offsets: Vec<u32>, nbr: Vec<u32>) -> Result<Csr, NnError> {
        if offsets.first() != Some(&0) || *offsets.last().unwrap() as usize != nbr.len() {
            return Err(NnError::BadAdjacency("offsets must start at 0 and end at the entry count"));
        }
        if offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(NnError::BadAdjacency("offsets must be non-decreasing"));
        }
        let n = offsets.len() - 1;
        if nbr.iter().any(|&j| j as usize >= n) {
            return Err(NnError::BadAdjacency("neighbor index out of range"));
        }
        Ok(Csr { offsets, nbr })
    }

    pub fn from_lists<I: AsRef<[u32]>>(lists: &[I]) -> Result<Csr, NnError> {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut nbr = Vec::new();
        offsets.push(0);
        for l in lists {
            nbr.extend_from_slice(l.as_ref());
            offsets.push(nbr.len() as u32);
        }
        Csr::new(offsets, nbr)
    }

    pub fn n_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_entries(&self) -> usize {
        self.nbr.len()
    }

    #[inline]
    pub fn range(&self, i: usize) -> core::ops::Range<usize> {
        self.offsets[i] as usize..self.offsets[i + 1] as usize
    }

    pub fn nbr(&self) -> &[u32] {
        &self.nbr
    }

    pub fn degree(&self, i: usize) -> usize {
        self.range(i).len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

/// Named trainable tensors with gradient buffers.
///
/// Every mutation of the values bumps a version counter; a tape recorded
/// before the bump refuses to run backward. Clones receive a fresh identity.
#[derive(Debug)]
pub struct ParamStore {
    uid: u64,
    version: u64,
    names: Vec<String>,
    values: Vec<Matrix>,
    grads: Vec<Matrix>,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        ParamStore {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            version: 0,
            names: self.names.clone(),
            values: self.values.clone(),
            grads: self.grads.clone(),
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        ParamStore::new()
    }
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            version: 0,
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Matrix) -> ParamId {
        self.version += 1;
        self.names.push(name.to_string());
        self.grads.push(Matrix::zeros(value.rows, value.cols));
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn add_uniform<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> ParamId {
        let a = 1.0 / libm::sqrt(fan_in.max(1) as f64);
        let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
        self.add(name, Matrix { rows, cols, data })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|m| m.data.len()).sum()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> + '_ {
        self.names.iter().map(|s| s.as_str()).zip(&self.values)
    }

    pub fn set_value(&mut self, id: ParamId, m: Matrix) -> Result<(), NnError> {
        let old = &self.values[id.0];
        if old.shape() != m.shape() {
            return Err(NnError::ShapeMismatch { op: "set_value", left: old.shape(), right: m.shape() });
        }
        self.values[id.0] = m;
        self.version += 1;
        Ok(())
    }

    /// Replaces a tensor by name, checking its shape.
    pub fn load(&mut self, name: &str, m: Matrix) -> Result<(), NnError> {
        let id = self.find(name).ok_or_else(|| NnError::UnknownParam(name.to_string()))?;
        self.set_value(id, m)
    }

    /// Copies every value from `other`, which must have identical layout.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<(), NnError> {
        if self.names != other.names {
            return Err(NnError::UnknownParam("parameter layouts differ".to_string()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            if a.shape() != b.shape() {
                return Err(NnError::ShapeMismatch { op: "copy_from", left: a.shape(), right: b.shape() });
            }
            a.data.copy_from_slice(&b.data);
        }
        self.version += 1;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        libm::sqrt(self.grads.iter().flat_map(|g| g.data.iter()).map(|x| x * x).sum())
    }

    /// Rescales gradients so their global L2 norm is at most `max`.
    pub fn clip_grad_norm(&mut self, max: f64) -> f64 {
        let n = self.grad_norm();
        if n > max && n > 0.0 {
            let s = max / n;
            for g in &mut self.grads {
                for x in &mut g.data {
                    *x *= s;
                }
            }
        }
        n
    }
}

/// ADAM with bias correction. Gradients are cleared after every step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Adam {
        let zeros: Vec<Matrix> = store.values.iter().map(|x| Matrix::zeros(x.rows, x.cols)).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..store.values.len() {
            let g = &store.grads[i].data;
            let m = &mut self.m[i].data;
            let v = &mut self.v[i].data;
            let w = &mut store.values[i].data;
            for j in 0..w.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                w[j] -= self.lr * mh / (libm::sqrt(vh) + self.eps);
            }
        }
        store.version += 1;
        store.zero_grad();
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(usize),
    Linear { x: usize, w: usize, b: Option<usize> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    ConcatCols(usize, usize),
    SliceCols(usize, usize),
    GatherRows(usize, Arc<Vec<u32>>),
    EdgeScore { q: usize, k: usize, csr: Arc<Csr> },
    SegmentSoftmax(usize, Arc<Csr>),
    Aggregate { alpha: usize, h: usize, csr: Arc<Csr> },
    Gru { xi: usize, hh: usize, h: usize, gates: Matrix },
    SumAll(usize),
    MsePick { q: usize, picks: Vec<(u32, u32, f64)> },
    Mae { p: usize, target: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    store: Option<(u64, u64)>,
    param_vars: Vec<Option<usize>>,
}

fn mismatch(op: &'static str, a: &Matrix, b: &Matrix) -> NnError {
    NnError::ShapeMismatch { op, left: a.shape(), right: b.shape() }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.store = None;
        self.param_vars.clear();
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[usize]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.nodes.push(Node { value: m, op: Op::Const, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Places a parameter on the tape; repeated uses share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var, NnError> {
        match self.store {
            None => self.store = Some((store.uid, store.version)),
            Some((uid, ver)) => {
                if uid != store.uid {
                    return Err(NnError::ForeignStore);
                }
                if ver != store.version {
                    return Err(NnError::StaleTape);
                }
            }
        }
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        if let Some(i) = self.param_vars[id.0] {
            return Ok(Var(i));
        }
        self.nodes.push(Node { value: store.values[id.0].clone(), op: Op::Param(id.0), needs_grad: true });
        let i = self.nodes.len() - 1;
        self.param_vars[id.0] = Some(i);
        Ok(Var(i))
    }

    /// `x * w^T (+ b)` with `w` of shape (out, in) and `b` of shape (1, out).
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let (xm, wm) = (self.val(x), self.val(w));
        if xm.cols != wm.cols {
            return Err(mismatch("linear", xm, wm));
        }
        let mut y = Matrix::zeros(xm.rows, wm.rows);
        gemm(1.0, xm, false, wm, true, 0.0, &mut y);
        if let Some(b) = b {
            let bm = self.val(b);
            if bm.shape() != (1, wm.rows) {
                return Err(mismatch("linear bias", wm, bm));
            }
            for r in 0..y.rows {
                for (a, c) in y.row_mut(r).iter_mut().zip(&bm.data) {
                    *a += c;
                }
            }
        }
        let mut ins = vec![x.0, w.0];
        ins.extend(b.map(|b| b.0));
        Ok(self.push(y, Op::Linear { x: x.0, w: w.0, b: b.map(|b| b.0) }, &ins))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NnError> {
        if self.val(a).shape() != self.val(b).shape() {
            return Err(mismatch(op, self.val(a), self.val(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("add", a, b)?;
        let y = self.val(a).zip(self.val(b), |x, y| x + y);
        Ok(self.push(y, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("sub", a, b)?;
        let y = self.val(a).zip(self.val(b), |x, y| x - y);
        Ok(self.push(y, Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("mul", a, b)?;
        let y = self.val(a).zip(self.val(b), |x, y| x * y);
        Ok(self.push(y, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let y = self.val(a).map(|x| x * s);
        self.push(y, Op::Scale(a.0, s), &[a.0])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.val(a).map(sigmoid);
        self.push(y, Op::Sigmoid(a.0), &[a.0])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.val(a).map(libm::tanh);
        self.push(y, Op::Tanh(a.0), &[a.0])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = self.val(a).map(|x| x.max(0.0));
        self.push(y, Op::Relu(a.0), &[a.0])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let y = self.val(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(y, Op::LeakyRelu(a.0, slope), &[a.0])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (am, bm) = (self.val(a), self.val(b));
        if am.rows != bm.rows {
            return Err(mismatch("concat_cols", am, bm));
        }
        let mut y = Matrix::zeros(am.rows, am.cols + bm.cols);
        for r in 0..am.rows {
            let row = y.row_mut(r);
            row[..am.cols].copy_from_slice(am.row(r));
            row[am.cols..].copy_from_slice(bm.row(r));
        }
        Ok(self.push(y, Op::ConcatCols(a.0, b.0), &[a.0, b.0]))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let am = self.val(a);
        if start + len > am.cols {
            return Err(NnError::ShapeMismatch { op: "slice_cols", left: am.shape(), right: (start, len) });
        }
        let mut y = Matrix::zeros(am.rows, len);
        for r in 0..am.rows {
            y.row_mut(r).copy_from_slice(&am.row(r)[start..start + len]);
        }
        Ok(self.push(y, Op::SliceCols(a.0, start), &[a.0]))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<u32>>) -> Result<Var, NnError> {
        let am = self.val(a);
        if idx.iter().any(|&i| i as usize >= am.rows) {
            return Err(NnError::ShapeMismatch { op: "gather_rows", left: am.shape(), right: (idx.len(), 1) });
        }
        let mut y = Matrix::zeros(idx.len(), am.cols);
        for (k, &i) in idx.iter().enumerate() {
            y.row_mut(k).copy_from_slice(am.row(i as usize));
        }
        Ok(self.push(y, Op::GatherRows(a.0, idx), &[a.0]))
    }

    /// Per-entry score `q[i] + k[nbr]` for every CSR entry of row `i`.
    pub fn edge_score(&mut self, q: Var, k: Var, csr: Arc<Csr>) -> Result<Var, NnError> {
        let (qm, km) = (self.val(q), self.val(k));
        if qm.shape() != (csr.n_rows(), 1) || km.shape() != qm.shape() {
            return Err(mismatch("edge_score", qm, km));
        }
        let mut y = Matrix::zeros(csr.n_entries(), 1);
        for i in 0..csr.n_rows() {
            for e in csr.range(i) {
                y.data[e] = qm.data[i] + km.data[csr.nbr[e] as usize];
            }
        }
        Ok(self.push(y, Op::EdgeScore { q: q.0, k: k.0, csr }, &[q.0, k.0]))
    }

    /// Softmax of entry scores within each CSR row.
    pub fn segment_softmax(&mut self, s: Var, csr: Arc<Csr>) -> Result<Var, NnError> {
        let sm = self.val(s);
        if sm.shape() != (csr.n_entries(), 1) {
            return Err(NnError::ShapeMismatch { op: "segment_softmax", left: sm.shape(), right: (csr.n_entries(), 1) });
        }
        let mut y = Matrix::zeros(csr.n_entries(), 1);
        for i in 0..csr.n_rows() {
            let r = csr.range(i);
            if r.is_empty() {
                continue;
            }
            let mx = sm.data[r.clone()].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for e in r.clone() {
                let x = libm::exp(sm.data[e] - mx);
                y.data[e] = x;
                z += x;
            }
            for e in r {
                y.data[e] /= z;
            }
        }
        Ok(self.push(y, Op::SegmentSoftmax(s.0, csr.clone()), &[s.0]))
    }

    /// Row `i` of the result is `sum_e alpha[e] * h[nbr[e]]` over row `i`'s
    /// entries; rows without entries are zero.
    pub fn aggregate(&mut self, alpha: Var, h: Var, csr: Arc<Csr>) -> Result<Var, NnError> {
        let (am, hm) = (self.val(alpha), self.val(h));
        if am.shape() != (csr.n_entries(), 1) || hm.rows != csr.n_rows() {
            return Err(mismatch("aggregate", am, hm));
        }
        let d = hm.cols;
        let mut y = Matrix::zeros(hm.rows, d);
        for i in 0..csr.n_rows() {
            let out = &mut y.data[i * d..(i + 1) * d];
            for e in csr.range(i) {
                let a = am.data[e];
                let src = hm.row(csr.nbr[e] as usize);
                for (o, s) in out.iter_mut().zip(src) {
                    *o += a * s;
                }
            }
        }
        Ok(self.push(y, Op::Aggregate { alpha: alpha.0, h: h.0, csr }, &[alpha.0, h.0]))
    }

    /// Fused GRU update from pre-activations `xi = x W_i^T + b_i` and
    /// `hh = h W_h^T + b_h`, both laid out as `[reset | update | candidate]`.
    pub fn gru(&mut self, xi: Var, hh: Var, h: Var) -> Result<Var, NnError> {
        let (xm, hhm, hm) = (self.val(xi), self.val(hh), self.val(h));
        let d = hm.cols;
        if xm.shape() != (hm.rows, 3 * d) || hhm.shape() != xm.shape() {
            return Err(mismatch("gru", xm, hhm));
        }
        let n = hm.rows;
        let mut gates = Matrix::zeros(n, 3 * d);
        let mut y = Matrix::zeros(n, d);
        for r in 0..n {
            let (x, hr, hv) = (xm.row(r), hhm.row(r), hm.row(r));
            let g = &mut gates.data[r * 3 * d..(r + 1) * 3 * d];
            let out = &mut y.data[r * d..(r + 1) * d];
            for j in 0..d {
                let rg = sigmoid(x[j] + hr[j]);
                let zg = sigmoid(x[d + j] + hr[d + j]);
                let ng = libm::tanh(x[2 * d + j] + rg * hr[2 * d + j]);
                g[j] = rg;
                g[d + j] = zg;
                g[2 * d + j] = ng;
                out[j] = (1.0 - zg) * hv[j] + zg * ng;
            }
        }
        Ok(self.push(y, Op::Gru { xi: xi.0, hh: hh.0, h: h.0, gates }, &[xi.0, hh.0, h.0]))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.val(a).data.iter().sum();
        self.push(Matrix::scalar(s), Op::SumAll(a.0), &[a.0])
    }

    /// Mean of `(q[r, c] - t)^2` over the picked entries; zero when empty.
    pub fn mse_pick(&mut self, q: Var, picks: Vec<(u32, u32, f64)>) -> Result<Var, NnError> {
        let qm = self.val(q);
        if picks.iter().any(|&(r, c, _)| r as usize >= qm.rows || c as usize >= qm.cols) {
            return Err(NnError::ShapeMismatch { op: "mse_pick", left: qm.shape(), right: (picks.len(), 3) });
        }
        let mut s = 0.0;
        for &(r, c, t) in &picks {
            let d = qm.get(r as usize, c as usize) - t;
            s += d * d;
        }
        let l = if picks.is_empty() { 0.0 } else { s / picks.len() as f64 };
        Ok(self.push(Matrix::scalar(l), Op::MsePick { q: q.0, picks }, &[q.0]))
    }

    /// Mean absolute error between a column vector and `target`.
    pub fn mae(&mut self, p: Var, target: Vec<f64>) -> Result<Var, NnError> {
        let pm = self.val(p);
        if pm.shape() != (target.len(), 1) {
            return Err(NnError::ShapeMismatch { op: "mae", left: pm.shape(), right: (target.len(), 1) });
        }
        let l = if target.is_empty() {
            0.0
        } else {
            pm.data.iter().zip(&target).map(|(a, b)| libm::fabs(a - b)).sum::<f64>() / target.len() as f64
        };
        Ok(self.push(Matrix::scalar(l), Op::Mae { p: p.0, target }, &[p.0]))
    }

    /// Accumulates d(loss)/d(param) into `store` for every parameter used.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<(), NnError> {
        let lm = self.val(loss);
        if lm.shape() != (1, 1) {
            return Err(NnError::NotScalar(lm.shape()));
        }
        if let Some((uid, ver)) = self.store {
            if uid != store.uid {
                return Err(NnError::ForeignStore);
            }
            if ver != store.version {
                return Err(NnError::StaleTape);
            }
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop(i, &g, &mut grads, store);
        }
        Ok(())
    }

    fn acc(&self, grads: &mut [Option<Matrix>], j: usize, f: impl FnOnce(&mut Matrix)) {
        if !self.nodes[j].needs_grad {
            return;
        }
        let slot = &mut grads[j];
        if slot.is_none() {
            let v = &self.nodes[j].value;
            *slot = Some(Matrix::zeros(v.rows, v.cols));
        }
        f(slot.as_mut().unwrap());
    }

    fn backprop(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>], store: &mut ParamStore) {
        let node = &self.nodes[i];
        let v = |j: usize| &self.nodes[j].value;
        match &node.op {
            Op::Const => {}
            Op::Param(p) => store.grads[*p].add_assign(g),
            Op::Linear { x, w, b } => {
                let (xm, wm) = (v(*x), v(*w));
                self.acc(grads, *x, |dx| gemm(1.0, g, false, wm, false, 1.0, dx));
                self.acc(grads, *w, |dw| gemm(1.0, g, true, xm, false, 1.0, dw));
                if let Some(b) = b {
                    self.acc(grads, *b, |db| {
                        for r in 0..g.rows {
                            for (a, c) in db.data.iter_mut().zip(g.row(r)) {
                                *a += c;
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |d| d.add_assign(g));
                self.acc(grads, *b, |d| d.add_assign(g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |d| d.add_assign(g));
                self.acc(grads, *b, |d| {
                    for (x, y) in d.data.iter_mut().zip(&g.data) {
                        *x -= y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (am, bm) = (v(*a), v(*b));
                self.acc(grads, *a, |d| {
                    for k in 0..d.data.len() {
                        d.data[k] += g.data[k] * bm.data[k];
                    }
                });
                self.acc(grads, *b, |d| {
                    for k in 0..d.data.len() {
                        d.data[k] += g.data[k] * am.data[k];
                    }
                });
            }
            Op::Scale(a, s) => self.acc(grads, *a, |d| {
                for (x, y) in d.data.iter_mut().zip(&g.data) {
                    *x += s * y;
                }
            }),
            Op::Sigmoid(a) => {
                let y = &node.value;
                self.acc(grads, *a, |d| {
                    for k in 0..d.data.len() {
                        d.data[k] += g.data[k] * y.data[k] * (1.0 - y.data[k]);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = &node.value;
                self.acc(grads, *a, |d| {
                    for k in 0..d.data.len() {
                        d.data[k] += g.data[k] * (1.0 - y.data[k] * y.data[k]);
                    }
                });
            }
            Op::Relu(a) => {
                let x = v(*a);
                self.acc(grads, *a, |d| {
                    for k in 0..d.data.len() {
                        if x.data[k] > 0.0 {
                            d.data[k] += g.data[k];
                        }
                    }
                });
            }
            Op::LeakyRelu(a, s) => {
                let x = v(*a);
                self.acc(grads, *a, |d| {
                    for k in 0..d.data.len() {
                        d.data[k] += g.data[k] * if x.data[k] > 0.0 { 1.0 } else { *s };
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let ca = v(*a).cols;
                self.acc(grads, *a, |d| {
                    for r in 0..g.rows {
                        for (x, y) in d.row_mut(r).iter_mut().zip(&g.row(r)[..ca]) {
                            *x += y;
                        }
                    }
                });
                self.acc(grads, *b, |d| {
                    for r in 0..g.rows {
                        for (x, y) in d.row_mut(r).iter_mut().zip(&g.row(r)[ca..]) {
                            *x += y;
                        }
                    }
                });
            }
            Op::SliceCols(a, start) => self.acc(grads, *a, |d| {
                for r in 0..g.rows {
                    for (x, y) in d.row_mut(r)[*start..*start + g.cols].iter_mut().zip(g.row(r)) {
                        *x += y;
                    }
                }
            }),
            Op::GatherRows(a, idx) => self.acc(grads, *a, |d| {
                for (k, &r) in idx.iter().enumerate() {
                    for (x, y) in d.row_mut(r as usize).iter_mut().zip(g.row(k)) {
                        *x += y;
                    }
                }
            }),
            Op::EdgeScore { q, k, csr } => {
                self.acc(grads, *q, |d| {
                    for i in 0..csr.n_rows() {
                        d.data[i] += csr.range(i).map(|e| g.data[e]).sum::<f64>();
                    }
                });
                self.acc(grads, *k, |d| {
                    for (e, &j) in csr.nbr.iter().enumerate() {
                        d.data[j as usize] += g.data[e];
                    }
                });
            }
            Op::SegmentSoftmax(s, csr) => {
                let y = &node.value;
                self.acc(grads, *s, |d| {
                    for i in 0..csr.n_rows() {
                        let r = csr.range(i);
                        let dot: f64 = r.clone().map(|e| g.data[e] * y.data[e]).sum();
                        for e in r {
                            d.data[e] += y.data[e] * (g.data[e] - dot);
                        }
                    }
                });
            }
            Op::Aggregate { alpha, h, csr } => {
                let (am, hm) = (v(*alpha), v(*h));
                let dm = hm.cols;
                self.acc(grads, *alpha, |d| {
                    for i in 0..csr.n_rows() {
                        let gi = g.row(i);
                        for e in csr.range(i) {
                            let src = hm.row(csr.nbr[e] as usize);
                            d.data[e] += gi.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                });
                self.acc(grads, *h, |d| {
                    for i in 0..csr.n_rows() {
                        let gi = &g.data[i * dm..(i + 1) * dm];
                        for e in csr.range(i) {
                            let a = am.data[e];
                            let j = csr.nbr[e] as usize;
                            for (x, y) in d.data[j * dm..(j + 1) * dm].iter_mut().zip(gi) {
                                *x += a * y;
                            }
                        }
                    }
                });
            }
            Op::Gru { xi, hh, h, gates } => {
                let (hhm, hm) = (v(*hh), v(*h));
                let d = hm.cols;
                let n = hm.rows;
                // d(pre-activation) shared by the input and hidden paths, except
                // the candidate block where the hidden path is scaled by r.
                let mut dxi = Matrix::zeros(n, 3 * d);
                let mut dhh = Matrix::zeros(n, 3 * d);
                let mut dh = Matrix::zeros(n, d);
                for r in 0..n {
                    let gr = &gates.data[r * 3 * d..(r + 1) * 3 * d];
                    let hr = hhm.row(r);
                    let hv = hm.row(r);
                    let gy = g.row(r);
                    for j in 0..d {
                        let (rg, zg, ng) = (gr[j], gr[d + j], gr[2 * d + j]);
                        let dz = gy[j] * (ng - hv[j]);
                        let dn = gy[j] * zg;
                        dh.data[r * d + j] = gy[j] * (1.0 - zg);
                        let dan = dn * (1.0 - ng * ng);
                        let dr = dan * hr[2 * d + j];
                        let dar = dr * rg * (1.0 - rg);
                        let daz = dz * zg * (1.0 - zg);
                        let o = r * 3 * d;
                        dxi.data[o + j] = dar;
                        dxi.data[o + d + j] = daz;
                        dxi.data[o + 2 * d + j] = dan;
                        dhh.data[o + j] = dar;
                        dhh.data[o + d + j] = daz;
                        dhh.data[o + 2 * d + j] = dan * rg;
                    }
                }
                self.acc(grads, *xi, |x| x.add_assign(&dxi));
                self.acc(grads, *hh, |x| x.add_assign(&dhh));
                self.acc(grads, *h, |x| x.add_assign(&dh));
            }
            Op::SumAll(a) => {
                let s = g.data[0];
                self.acc(grads, *a, |d| {
                    for x in &mut d.data {
                        *x += s;
                    }
                });
            }
            Op::MsePick { q, picks } => {
                let qm = v(*q);
                let s = g.data[0] * 2.0 / picks.len().max(1) as f64;
                self.acc(grads, *q, |d| {
                    for &(r, c, t) in picks {
                        let (r, c) = (r as usize, c as usize);
                        d.data[r * d.cols + c] += s * (qm.get(r, c) - t);
                    }
                });
            }
            Op::Mae { p, target } => {
                let pm = v(*p);
                let s = g.data[0] / target.len().max(1) as f64;
                self.acc(grads, *p, |d| {
                    for k in 0..target.len() {
                        let e = pm.data[k] - target[k];
                        if e > 0.0 {
                            d.data[k] += s;
                        } else if e < 0.0 {
                            d.data[k] -= s;
                        }
                    }
                });
            }
        }
    }
}

/// Affine layer `y = x W^T + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Registers `{name}.w` and `{name}.b`.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Linear {
        let w = store.add_uniform(&alloc::format!("{name}.w"), fan_out, fan_in, fan_in, rng);
        let b = store.add_uniform(&alloc::format!("{name}.b"), 1, fan_out, fan_in, rng);
        Linear { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let w = tape.param(store, self.w)?;
        let b = tape.param(store, self.b)?;
        tape.linear(x, w, Some(b))
    }
}

/// Gated recurrent unit.
///
/// `r = σ(W_ir x + b_ir + W_hr h + b_hr)`, `z = σ(W_iz x + b_iz + W_hz h + b_hz)`,
/// `n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))`, `h' = (1 - z) ⊙ h + z ⊙ n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruCell {
    pub input: Linear,
    pub hidden: Linear,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut R) -> GruCell {
        let input = Linear::new(store, &alloc::format!("{name}.ih"), input_dim, 3 * hidden_dim, rng);
        // PyTorch-style init uses the hidden size as fan-in for both matrices
        let hidden = Linear::new(store, &alloc::format!("{name}.hh"), hidden_dim, 3 * hidden_dim, rng);
        GruCell { input, hidden, hidden_dim }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var, NnError> {
        let xi = self.input.forward(tape, store, x)?;
        let hh = self.hidden.forward(tape, store, h)?;
        tape.gru(xi, hh, h)
    }
}

/// Stack of affine layers with ReLU between them and a linear output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`; layers are named `{name}.{k}`.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut R) -> Mlp {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| Linear::new(store, &alloc::format!("{name}.{k}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let mut h = x;
        for (k, l) in self.layers.iter().enumerate() {
            h = l.forward(tape, store, h)?;
            if k + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}
