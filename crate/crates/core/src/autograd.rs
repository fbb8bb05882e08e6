//! A small reverse-mode automatic differentiation tape over dense `f64`
//! matrices.
//!
//! Every value on the tape is a 2-D [`Tensor`]; vectors are `1 x n` rows.
//! Parameters live in a [`ParamSet`] that the tape only borrows, so many
//! tapes (one per dialogue) can read the same parameters while gradients
//! are accumulated into a separate [`Gradients`] buffer.

use ndarray::{s, Array2, Axis};

pub type Tensor = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, ordered collection of model parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

/// Gradient buffer aligned with a [`ParamSet`]; entries are allocated lazily.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn for_params(params: &ParamSet) -> Self {
        Self {
            grads: vec![None; params.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    fn slot(&mut self, id: ParamId, shape: (usize, usize)) -> &mut Tensor {
        self.grads[id.0].get_or_insert_with(|| Tensor::zeros(shape))
    }

    pub fn add_dense(&mut self, id: ParamId, g: &Tensor) {
        let slot = self.slot(id, g.dim());
        *slot += g;
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|x| x * factor);
        }
    }

    pub fn merge(&mut self, other: &Gradients) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.add_dense(ParamId(i), g);
            }
        }
    }

    /// Global L2 norm across all allocated gradients.
    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|g| g.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    GatherParam {
        param: ParamId,
        rows: Vec<Option<usize>>,
    },
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SelectRows(Var, Vec<usize>),
    MeanRows(Var),
    SumAll(Var),
    Unfold(Var, usize),
    SegmentMax {
        input: Var,
        argmax: Vec<Vec<usize>>,
    },
    CrossEntropy {
        logits: Var,
        target: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations for one forward pass and replays them backwards.
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_cache: Vec<Option<Var>>,
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        assert!(
            x == y || x == 1 || y == 1,
            "incompatible broadcast {a:?} vs {b:?}"
        );
        x.max(y)
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

fn reduce_to(g: &Tensor, shape: (usize, usize)) -> Tensor {
    let mut out = g.clone();
    if shape.0 == 1 && out.nrows() != 1 {
        out = out.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && out.ncols() != 1 {
        out = out.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax of a plain tensor.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_cache: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// A constant input (receives no gradient that is reported anywhere).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn row_constant(&mut self, values: &[f64]) -> Var {
        let t = Tensor::from_shape_vec((1, values.len()), values.to_vec())
            .expect("row shape");
        self.constant(t)
    }

    /// A trainable parameter; repeated calls reuse the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_cache[id.0] {
            return v;
        }
        let v = self.push(self.params.get(id).clone(), Op::Param(id));
        self.param_cache[id.0] = Some(v);
        v
    }

    /// Rows of a parameter table; `None` yields a zero row (padding).
    pub fn gather(&mut self, id: ParamId, rows: Vec<Option<usize>>) -> Var {
        let table = self.params.get(id);
        let mut out = Tensor::zeros((rows.len(), table.ncols()));
        for (i, r) in rows.iter().enumerate() {
            if let Some(r) = r {
                out.row_mut(i).assign(&table.row(*r));
            }
        }
        self.push(
            out,
            Op::GatherParam {
                param: id,
                rows,
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.ncols(), y.nrows(), "matmul shape mismatch");
        let v = x.dot(y);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let shape = broadcast_shape(x.dim(), y.dim());
        let xb = x.broadcast(shape).expect("broadcast");
        let yb = y.broadcast(shape).expect("broadcast");
        let mut out = Tensor::zeros(shape);
        ndarray::Zip::from(&mut out)
            .and(&xb)
            .and(&yb)
            .for_each(|o, &p, &q| *o = f(p, q));
        out
    }

    /// Elementwise sum with row/column broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |p, q| p + q);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |p, q| p - q);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |p, q| p * q);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols shape");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows shape");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    pub fn select_rows(&mut self, a: Var, rows: Vec<usize>) -> Var {
        let v = self.value(a).select(Axis(0), &rows);
        self.push(v, Op::SelectRows(a, rows))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        self.select_rows(a, vec![i])
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert!(x.nrows() > 0, "mean of zero rows");
        let v = x.sum_axis(Axis(0)).insert_axis(Axis(0)) / x.nrows() as f64;
        self.push(v, Op::MeanRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    /// Sliding windows of `k` consecutive rows, each flattened into one row.
    pub fn unfold(&mut self, a: Var, k: usize) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.dim();
        assert!(rows >= k, "unfold needs at least {k} rows");
        let n = rows - k + 1;
        let mut out = Tensor::zeros((n, k * cols));
        for r in 0..n {
            for j in 0..k {
                out.slice_mut(s![r, j * cols..(j + 1) * cols])
                    .assign(&x.row(r + j));
            }
        }
        self.push(out, Op::Unfold(a, k))
    }

    /// Column-wise max over each contiguous row segment `[start, end)`.
    pub fn segment_max(&mut self, a: Var, segments: &[(usize, usize)]) -> Var {
        let x = self.value(a);
        let cols = x.ncols();
        let mut out = Tensor::zeros((segments.len(), cols));
        let mut argmax = Vec::with_capacity(segments.len());
        for (i, &(start, end)) in segments.iter().enumerate() {
            assert!(end > start, "empty segment");
            let mut idx = vec![start; cols];
            for c in 0..cols {
                let mut best = x[[start, c]];
                for r in start + 1..end {
                    if x[[r, c]] > best {
                        best = x[[r, c]];
                        idx[c] = r;
                    }
                }
                out[[i, c]] = best;
            }
            argmax.push(idx);
        }
        self.push(out, Op::SegmentMax { input: a, argmax })
    }

    /// Negative log-likelihood of `target` under softmax of a `1 x m` row.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let x = self.value(logits);
        assert_eq!(x.nrows(), 1, "cross_entropy expects a row of logits");
        assert!(target < x.ncols(), "cross_entropy target out of range");
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let v = Tensor::from_elem((1, 1), lse - x[[0, target]]);
        self.push(v, Op::CrossEntropy { logits, target })
    }

    /// Backpropagate from a `1 x 1` scalar node, adding parameter gradients
    /// into `grads`.
    pub fn backward(&self, root: Var, grads: &mut Gradients) {
        assert_eq!(self.shape(root), (1, 1), "backward from non-scalar");
        let mut adj: Vec<Option<Tensor>> = Vec::with_capacity(root.0 + 1);
        adj.resize_with(root.0 + 1, || None);
        adj[root.0] = Some(Tensor::from_elem((1, 1), 1.0));

        fn acc(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut adj[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => grads.add_dense(*id, &g),
                Op::GatherParam { param, rows } => {
                    let shape = self.params.get(*param).dim();
                    let slot = grads.slot(*param, shape);
                    for (i, r) in rows.iter().enumerate() {
                        if let Some(r) = r {
                            let mut dst = slot.row_mut(*r);
                            dst += &g.row(i);
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Transpose(a) => acc(&mut adj, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    let ga = reduce_to(&g, self.shape(*a));
                    let gb = reduce_to(&g, self.shape(*b));
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Sub(a, b) => {
                    let ga = reduce_to(&g, self.shape(*a));
                    let gb = reduce_to(&g, self.shape(*b)).mapv(|x| -x);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Mul(a, b) => {
                    let shape = g.dim();
                    let av = self.value(*a).broadcast(shape).expect("broadcast");
                    let bv = self.value(*b).broadcast(shape).expect("broadcast");
                    let ga = reduce_to(&(&g * &bv), self.shape(*a));
                    let gb = reduce_to(&(&g * &av), self.shape(*b));
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Scale(a, k) => acc(&mut adj, *a, g * *k),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(&mut adj, *a, &g * &y.mapv(|s| s * (1.0 - s)));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(&mut adj, *a, &g * &y.mapv(|t| 1.0 - t * t));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    ndarray::Zip::from(&mut ga).and(x).for_each(|gi, &xi| {
                        if xi <= 0.0 {
                            *gi = 0.0;
                        }
                    });
                    acc(&mut adj, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = &g * y;
                    for (mut row, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = row.sum();
                        ndarray::Zip::from(&mut row)
                            .and(&yrow)
                            .for_each(|r, &yi| *r -= yi * dot);
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        acc(&mut adj, *p, g.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let h = self.shape(*p).0;
                        acc(&mut adj, *p, g.slice(s![offset..offset + h, ..]).to_owned());
                        offset += h;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let mut ga = Tensor::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..*end]).assign(&g);
                    acc(&mut adj, *a, ga);
                }
                Op::SelectRows(a, rows) => {
                    let mut ga = Tensor::zeros(self.shape(*a));
                    for (i, r) in rows.iter().enumerate() {
                        let mut dst = ga.row_mut(*r);
                        dst += &g.row(i);
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::MeanRows(a) => {
                    let (rows, cols) = self.shape(*a);
                    let row = g.row(0).to_owned() / rows as f64;
                    let ga = row.broadcast((rows, cols)).expect("broadcast").to_owned();
                    acc(&mut adj, *a, ga);
                }
                Op::SumAll(a) => {
                    let ga = Tensor::from_elem(self.shape(*a), g[[0, 0]]);
                    acc(&mut adj, *a, ga);
                }
                Op::Unfold(a, k) => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Tensor::zeros((rows, cols));
                    for r in 0..g.nrows() {
                        for j in 0..*k {
                            let mut dst = ga.row_mut(r + j);
                            dst += &g.slice(s![r, j * cols..(j + 1) * cols]);
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::SegmentMax { input, argmax } => {
                    let mut ga = Tensor::zeros(self.shape(*input));
                    for (i, idx) in argmax.iter().enumerate() {
                        for (c, &r) in idx.iter().enumerate() {
                            ga[[r, c]] += g[[i, c]];
                        }
                    }
                    acc(&mut adj, *input, ga);
                }
                Op::CrossEntropy { logits, target } => {
                    let mut p = softmax_rows(self.value(*logits));
                    p[[0, *target]] -= 1.0;
                    acc(&mut adj, *logits, p * g[[0, 0]]);
                }
            }
        }
    }
}
