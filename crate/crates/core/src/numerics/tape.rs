use std::collections::BTreeMap;

use super::{Array, NumericsError, ParameterStore};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Relu { x: Var },
    Tanh { x: Var },
    Affine { w: Var, x: Var, b: Var },
    AffineT { w: Var, x: Var, b: Var },
    MeanPool { xs: Vec<Var> },
    AddN { xs: Vec<Var> },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    ScaleConst { x: Var, c: f64 },
    AddConst { x: Var },
    ScaleBy { s: Var, x: Var },
    SqEuclidean { a: Var, b: Var },
    Sqrt { x: Var },
    Softmax { x: Var },
    CrossEntropy { dist: Var, target: usize },
    EmbedMean { table: Var, indices: Vec<usize> },
    Concat { a: Var, b: Var },
    Stack { xs: Vec<Var> },
    Pick { x: Var, index: usize },
}

/// Recorded forward pass. Rebuilt per episode: record operations, read
/// values, then run [`Tape::backward`] once to fill parameter gradients.
///
/// A tape is confined to one thread; parameter snapshots bound with
/// [`Tape::param`] are cloned in, so the originating store may be shared
/// read-only elsewhere.
pub struct Tape {
    ops: Vec<Op>,
    vals: Vec<Array>,
    bound: BTreeMap<String, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            ops: Vec::new(),
            vals: Vec::new(),
            bound: BTreeMap::new(),
        }
    }

    fn push(&mut self, op: Op, val: Array) -> Var {
        let id = Var(self.vals.len());
        self.ops.push(op);
        self.vals.push(val);
        id
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.vals[v.0]
    }

    /// Records a constant/input leaf.
    pub fn input(&mut self, value: Array) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Binds a named parameter as a leaf. Binding the same key twice
    /// returns the same node so gradients accumulate in one place.
    pub fn param(&mut self, key: &str, store: &ParameterStore) -> Result<Var, NumericsError> {
        if let Some(&v) = self.bound.get(key) {
            return Ok(v);
        }
        let value = store.get(key)?.clone();
        let v = self.push(Op::Leaf, value);
        self.bound.insert(key.to_string(), v);
        Ok(v)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = super::relu(&self.vals[x.0]);
        self.push(Op::Relu { x }, out)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = super::tanh(&self.vals[x.0]);
        self.push(Op::Tanh { x }, out)
    }

    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var, NumericsError> {
        let out = super::affine(&self.vals[w.0], &self.vals[x.0], &self.vals[b.0])?;
        Ok(self.push(Op::Affine { w, x, b }, out))
    }

    /// Wᵀx + b for a weight stored input-major.
    pub fn affine_t(&mut self, w: Var, x: Var, b: Var) -> Result<Var, NumericsError> {
        let out = super::affine_t(&self.vals[w.0], &self.vals[x.0], &self.vals[b.0])?;
        Ok(self.push(Op::AffineT { w, x, b }, out))
    }

    pub fn mean_pool(&mut self, xs: &[Var]) -> Result<Var, NumericsError> {
        let arrays: Vec<&Array> = xs.iter().map(|v| &self.vals[v.0]).collect();
        let out = super::mean_pool(&arrays)?;
        Ok(self.push(Op::MeanPool { xs: xs.to_vec() }, out))
    }

    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var, NumericsError> {
        let first = xs
            .first()
            .ok_or(NumericsError::EmptyInput { op: "add_n" })?;
        let mut acc = self.vals[first.0].clone();
        for x in &xs[1..] {
            if self.vals[x.0].shape() != acc.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "add_n",
                    detail: format!("{:?} vs {:?}", acc.shape(), self.vals[x.0].shape()),
                });
            }
            for (a, v) in acc.values_mut().iter_mut().zip(self.vals[x.0].values()) {
                *a += v;
            }
        }
        Ok(self.push(Op::AddN { xs: xs.to_vec() }, acc))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.check_same("add", a, b)?;
        let out = Array::new(
            self.vals[a.0].shape().to_vec(),
            self.vals[a.0]
                .values()
                .iter()
                .zip(self.vals[b.0].values())
                .map(|(x, y)| x + y)
                .collect(),
        )?;
        Ok(self.push(Op::Add { a, b }, out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.check_same("mul", a, b)?;
        let out = Array::new(
            self.vals[a.0].shape().to_vec(),
            self.vals[a.0]
                .values()
                .iter()
                .zip(self.vals[b.0].values())
                .map(|(x, y)| x * y)
                .collect(),
        )?;
        Ok(self.push(Op::Mul { a, b }, out))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.vals[x.0].map(|v| c * v);
        self.push(Op::ScaleConst { x, c }, out)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let out = self.vals[x.0].map(|v| v + c);
        self.push(Op::AddConst { x }, out)
    }

    /// Scalar tape value times an array tape value.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Result<Var, NumericsError> {
        if self.vals[s.0].len() != 1 {
            return Err(NumericsError::NotScalar {
                op: "scale_by",
                shape: self.vals[s.0].shape().to_vec(),
            });
        }
        let sv = self.vals[s.0].item();
        let out = self.vals[x.0].map(|v| sv * v);
        Ok(self.push(Op::ScaleBy { s, x }, out))
    }

    pub fn sq_euclidean(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let d = super::sq_euclidean(&self.vals[a.0], &self.vals[b.0])?;
        Ok(self.push(Op::SqEuclidean { a, b }, Array::scalar(d)))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let out = self.vals[x.0].map(f64::sqrt);
        self.push(Op::Sqrt { x }, out)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var, NumericsError> {
        let out = super::softmax(&self.vals[x.0])?;
        Ok(self.push(Op::Softmax { x }, out))
    }

    pub fn cross_entropy(&mut self, dist: Var, target: usize) -> Result<Var, NumericsError> {
        let out = super::cross_entropy(&self.vals[dist.0], target)?;
        Ok(self.push(Op::CrossEntropy { dist, target }, Array::scalar(out)))
    }

    /// Mean of the table rows selected by `indices` (duplicates allowed).
    pub fn embed_mean(&mut self, table: Var, indices: &[usize]) -> Result<Var, NumericsError> {
        let (rows, cols) = self.vals[table.0].dims2("embed_mean")?;
        if indices.is_empty() {
            return Err(NumericsError::EmptyInput { op: "embed_mean" });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(NumericsError::IndexOutOfRange {
                op: "embed_mean",
                index: bad,
                len: rows,
            });
        }
        let tv = self.vals[table.0].values();
        let mut acc = vec![0.0; cols];
        for &i in indices {
            for (a, v) in acc.iter_mut().zip(&tv[i * cols..(i + 1) * cols]) {
                *a += v;
            }
        }
        let n = indices.len() as f64;
        for a in acc.iter_mut() {
            *a /= n;
        }
        let out = Array::new(vec![cols], acc)?;
        Ok(self.push(
            Op::EmbedMean {
                table,
                indices: indices.to_vec(),
            },
            out,
        ))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let av = &self.vals[a.0];
        let bv = &self.vals[b.0];
        if av.shape().len() != 1 || bv.shape().len() != 1 {
            return Err(NumericsError::ShapeMismatch {
                op: "concat",
                detail: format!("{:?} vs {:?}", av.shape(), bv.shape()),
            });
        }
        let mut vals = av.values().to_vec();
        vals.extend_from_slice(bv.values());
        let out = Array::new(vec![av.len() + bv.len()], vals)?;
        Ok(self.push(Op::Concat { a, b }, out))
    }

    /// Collects scalar nodes into a 1-D vector.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var, NumericsError> {
        if xs.is_empty() {
            return Err(NumericsError::EmptyInput { op: "stack" });
        }
        let mut vals = Vec::with_capacity(xs.len());
        for x in xs {
            if self.vals[x.0].len() != 1 {
                return Err(NumericsError::NotScalar {
                    op: "stack",
                    shape: self.vals[x.0].shape().to_vec(),
                });
            }
            vals.push(self.vals[x.0].item());
        }
        let out = Array::new(vec![xs.len()], vals)?;
        Ok(self.push(Op::Stack { xs: xs.to_vec() }, out))
    }

    /// One component of a 1-D vector as a scalar node.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var, NumericsError> {
        if index >= self.vals[x.0].len() {
            return Err(NumericsError::IndexOutOfRange {
                op: "pick",
                index,
                len: self.vals[x.0].len(),
            });
        }
        let out = Array::scalar(self.vals[x.0].values()[index]);
        Ok(self.push(Op::Pick { x, index }, out))
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericsError> {
        if self.vals[a.0].shape() != self.vals[b.0].shape() {
            return Err(NumericsError::ShapeMismatch {
                op,
                detail: format!(
                    "{:?} vs {:?}",
                    self.vals[a.0].shape(),
                    self.vals[b.0].shape()
                ),
            });
        }
        Ok(())
    }

    /// Reverse pass from a scalar loss. Fills `store` gradients for every
    /// bound parameter reachable from the loss and zeros all others.
    pub fn backward(&self, loss: Var, store: &mut ParameterStore) -> Result<(), NumericsError> {
        let grads = self.gradients(loss)?;
        store.zero_grads();
        for (key, var) in &self.bound {
            store.set_grad(key, grads[var.0].clone());
        }
        Ok(())
    }

    /// Raw per-node gradients of a scalar loss (used by tests and by
    /// [`backward`](Tape::backward)).
    pub fn gradients(&self, loss: Var) -> Result<Vec<Array>, NumericsError> {
        if self.vals[loss.0].len() != 1 {
            return Err(NumericsError::NotScalar {
                op: "backward",
                shape: self.vals[loss.0].shape().to_vec(),
            });
        }
        let mut grads: Vec<Array> = self
            .vals
            .iter()
            .map(|v| Array::zeros(v.shape().to_vec()))
            .collect();
        grads[loss.0].values_mut()[0] = 1.0;

        for (idx, op) in self.ops.iter().enumerate().rev() {
            let out = Var(idx);
            match op {
                Op::Leaf => {}
                Op::Relu { x } => {
                    let go: Vec<f64> = grads[out.0].values().to_vec();
                    let xs = self.vals[x.0].values();
                    for ((g, &xi), &goi) in
                        grads[x.0].values_mut().iter_mut().zip(xs).zip(&go)
                    {
                        if xi > 0.0 {
                            *g += goi;
                        }
                    }
                }
                Op::Tanh { x } => {
                    let go: Vec<f64> = grads[out.0].values().to_vec();
                    let ov = self.vals[out.0].values().to_vec();
                    for ((g, &oi), &goi) in
                        grads[x.0].values_mut().iter_mut().zip(&ov).zip(&go)
                    {
                        *g += goi * (1.0 - oi * oi);
                    }
                }
                Op::Affine { w, x, b } => {
                    let go: Vec<f64> = grads[out.0].values().to_vec();
                    let (rows, cols) = self.vals[w.0].dims2("affine")?;
                    let xv = self.vals[x.0].values().to_vec();
                    let wv = self.vals[w.0].values().to_vec();
                    {
                        let gw = grads[w.0].values_mut();
                        for i in 0..rows {
                            for j in 0..cols {
                                gw[i * cols + j] += go[i] * xv[j];
                            }
                        }
                    }
                    {
                        let gx = grads[x.0].values_mut();
                        for i in 0..rows {
                            let row = &wv[i * cols..(i + 1) * cols];
                            for (gxj, wij) in gx.iter_mut().zip(row) {
                                *gxj += go[i] * wij;
                            }
                        }
                    }
                    for (gb, &goi) in grads[b.0].values_mut().iter_mut().zip(&go) {
                        *gb += goi;
                    }
                }
                Op::AffineT { w, x, b } => {
                    let go: Vec<f64> = grads[out.0].values().to_vec();
                    let (rows, cols) = self.vals[w.0].dims2("affine_t")?;
                    let xv = self.vals[x.0].values().to_vec();
                    let wv = self.vals[w.0].values().to_vec();
                    {
                        let gw = grads[w.0].values_mut();
                        for i in 0..rows {
                            for k in 0..cols {
                                gw[i * cols + k] += xv[i] * go[k];
                            }
                        }
                    }
                    {
                        let gx = grads[x.0].values_mut();
                        for (i, gxi) in gx.iter_mut().enumerate() {
                            let row = &wv[i * cols..(i + 1) * cols];
                            for (wik, &gok) in row.iter().zip(&go) {
                                *gxi += wik * gok;
                            }
                        }
                    }
                    for (gb, &gok) in grads[b.0].values_mut().iter_mut().zip(&go) {
                        *gb += gok;
                    }
                }
                Op::MeanPool { xs } => {
                    let n = xs.len() as f64;
                    let go: Vec<f64> = grads[out.0].values().to_vec();
                    for x in xs {
                        for (g, &goi) in grads[x.0].values_mut().iter_mut().zip(&go) {
                            *g += goi / n;
                        }
                    }
                }
                Op::AddN { xs } => {
                    let go: Vec<f64> = grads[out.0].values().to_vec();
                    for x in xs {
                        for (g, &goi) in grads[x.0].values_mut().iter_mut().zip(&go) {
                            *g += goi;
                        }
                    }
                }
                Op::Add { a, b } => {
                    let go: Vec<f64> = grads[out.0].values().to_vec();
                    for (g, &goi) in grads[a.0].values_mut().iter_mut().zip(&go) {
                        *g += goi;
                    }
                    for (g, &goi) in grads[b.0].values_mut().iter_mut().zip(&go) {
                        *g += goi;
                    }
                }
                Op::Mul { a, b } => {
                    let go: Vec<f64> = grads[out.0].values().to_vec();
                    let av = self.vals[a.0].values().to_vec();
                    let bv = self.vals[b.0].values().to_vec();
                    for ((g, &bi), &goi) in
                        grads[a.0].values_mut().iter_mut().zip(&bv).zip(&go)
                    {
                        *g += goi * bi;
                    }
                    for ((g, &ai), &goi) in
                        grads[b.0].values_mut().iter_mut().zip(&av).zip(&go)
                    {
                        *g += goi * ai;
                    }
                }
                Op::ScaleConst { x, c } => {
                    let go: Vec<f64> = grads[out.0].values().to_vec();
                    for (g, &goi) in grads[x.0].values_mut().iter_mut().zip(&go) {
                        *g += c * goi;
                    }
                }
                Op::AddConst { x } => {
                    let go: Vec<f64> = grads[out.0].values().to_vec();
                    for (g, &goi) in grads[x.0].values_mut().iter_mut().zip(&go) {
                        *g += goi;
                    }
                }
                Op::ScaleBy { s, x } => {
                    let go: Vec<f64> = grads[out.0].values().to_vec();
                    let sv = self.vals[s.0].item();
                    let xv = self.vals[x.0].values().to_vec();
                    let ds: f64 = go.iter().zip(&xv).map(|(g, x)| g * x).sum();
                    grads[s.0].values_mut()[0] += ds;
                    for (g, &goi) in grads[x.0].values_mut().iter_mut().zip(&go) {
                        *g += sv * goi;
                    }
                }
                Op::SqEuclidean { a, b } => {
                    let go = grads[out.0].item();
                    let av = self.vals[a.0].values().to_vec();
                    let bv = self.vals[b.0].values().to_vec();
                    for ((g, &ai), &bi) in
                        grads[a.0].values_mut().iter_mut().zip(&av).zip(&bv)
                    {
                        *g += go * 2.0 * (ai - bi);
                    }
                    for ((g, &ai), &bi) in
                        grads[b.0].values_mut().iter_mut().zip(&av).zip(&bv)
                    {
                        *g += go * 2.0 * (bi - ai);
                    }
                }
                Op::Sqrt { x } => {
                    let go: Vec<f64> = grads[out.0].values().to_vec();
                    let ov = self.vals[out.0].values().to_vec();
                    for ((g, &oi), &goi) in
                        grads[x.0].values_mut().iter_mut().zip(&ov).zip(&go)
                    {
                        *g += goi / (2.0 * oi.max(1e-12));
                    }
                }
                Op::Softmax { x } => {
                    let go: Vec<f64> = grads[out.0].values().to_vec();
                    let p = self.vals[out.0].values().to_vec();
                    let dot: f64 = go.iter().zip(&p).map(|(g, pi)| g * pi).sum();
                    for ((g, &pi), &goi) in
                        grads[x.0].values_mut().iter_mut().zip(&p).zip(&go)
                    {
                        *g += pi * (goi - dot);
                    }
                }
                Op::CrossEntropy { dist, target } => {
                    let go = grads[out.0].item();
                    let pt = self.vals[dist.0].values()[*target];
                    grads[dist.0].values_mut()[*target] -= go / pt;
                }
                Op::EmbedMean { table, indices } => {
                    let go: Vec<f64> = grads[out.0].values().to_vec();
                    let cols = go.len();
                    let n = indices.len() as f64;
                    let gt = grads[table.0].values_mut();
                    for &i in indices {
                        for (g, &goi) in gt[i * cols..(i + 1) * cols].iter_mut().zip(&go) {
                            *g += goi / n;
                        }
                    }
                }
                Op::Concat { a, b } => {
                    let go: Vec<f64> = grads[out.0].values().to_vec();
                    let na = self.vals[a.0].len();
                    for (g, &goi) in grads[a.0].values_mut().iter_mut().zip(&go[..na]) {
                        *g += goi;
                    }
                    for (g, &goi) in grads[b.0].values_mut().iter_mut().zip(&go[na..]) {
                        *g += goi;
                    }
                }
                Op::Stack { xs } => {
                    let go: Vec<f64> = grads[out.0].values().to_vec();
                    for (x, &goi) in xs.iter().zip(&go) {
                        grads[x.0].values_mut()[0] += goi;
                    }
                }
                Op::Pick { x, index } => {
                    let go = grads[out.0].item();
                    grads[x.0].values_mut()[*index] += go;
                }
            }
        }
        Ok(grads)
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}
