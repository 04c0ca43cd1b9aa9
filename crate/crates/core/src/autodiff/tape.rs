use super::{Adjacency, AutodiffError, Matrix};
use rand::Rng;
use std::sync::Arc;

/// Handle to a value recorded on a [`Tape`].
///
/// Handles are invalidated when the tape is cleared (after [`Tape::backward`]
/// or [`Tape::clear`]); using a stale handle is reported as
/// [`AutodiffError::NotOnTape`] where a `Result` is returned and panics
/// elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
    generation: u64,
    rows: usize,
    cols: usize,
}

impl Var {
    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Transpose(usize),
    ConcatCols(usize, usize),
    SliceRows(usize, usize),
    AddRow(usize, usize),
    AddCol(usize, usize),
    MeanRows(usize),
    MaxRows(usize, Vec<usize>),
    GatherRows(usize, Vec<usize>),
    Relu(usize),
    Dropout(usize, Vec<f64>),
    Abs(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    NeighborMean(usize, Arc<Adjacency>),
    NeighborMax(usize, Vec<usize>),
    GcnAggregate(usize, Arc<Adjacency>),
}

struct Node {
    value: Matrix,
    requires_grad: bool,
    op: Op,
}

/// Gradients of a scalar loss with respect to every leaf that required one.
#[derive(Debug)]
pub struct Gradients {
    generation: u64,
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for `var`, `None` if it did not require grad or is from
    /// another pass. Leaves that required grad but were not reached by the
    /// loss get an all-zero gradient.
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        if var.generation != self.generation {
            return None;
        }
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Matrix> {
        if var.generation != self.generation {
            return None;
        }
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}

/// Reverse-mode gradient tape.
///
/// Operations are appended in evaluation order, so the node list is always
/// topologically sorted.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    generation: u64,
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> AutodiffError {
    AutodiffError::Shape { op, lhs: a, rhs: b }
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

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.generation += 1;
    }

    fn push(&mut self, value: Matrix, requires_grad: bool, op: Op) -> Var {
        let (rows, cols) = value.shape();
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var {
            id: self.nodes.len() - 1,
            generation: self.generation,
            rows,
            cols,
        }
    }

    #[inline]
    fn check(&self, v: Var) {
        assert!(
            v.generation == self.generation && v.id < self.nodes.len(),
            "variable handle is not on the active tape"
        );
    }

    #[inline]
    fn rg(&self, v: Var) -> bool {
        self.nodes[v.id].requires_grad
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        self.check(v);
        &self.nodes[v.id].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.check(v);
        self.rg(v)
    }

    fn unary(&mut self, a: Var, value: Matrix, op: Op) -> Var {
        let rg = self.rg(a);
        self.push(value, rg, op)
    }

    fn binary(&mut self, a: Var, b: Var, value: Matrix, op: Op) -> Var {
        let rg = self.rg(a) || self.rg(b);
        self.push(value, rg, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.check(a);
        self.check(b);
        if a.cols != b.rows {
            return Err(shape_err("matmul", a.shape(), b.shape()));
        }
        let value = self.nodes[a.id].value.matmul(&self.nodes[b.id].value);
        Ok(self.binary(a, b, value, Op::MatMul(a.id, b.id)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.check(a);
        self.check(b);
        if a.shape() != b.shape() {
            return Err(shape_err("add", a.shape(), b.shape()));
        }
        let value = self.nodes[a.id]
            .value
            .zip_map(&self.nodes[b.id].value, |x, y| x + y);
        Ok(self.binary(a, b, value, Op::Add(a.id, b.id)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.check(a);
        self.check(b);
        if a.shape() != b.shape() {
            return Err(shape_err("sub", a.shape(), b.shape()));
        }
        let value = self.nodes[a.id]
            .value
            .zip_map(&self.nodes[b.id].value, |x, y| x - y);
        Ok(self.binary(a, b, value, Op::Sub(a.id, b.id)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.check(a);
        self.check(b);
        if a.shape() != b.shape() {
            return Err(shape_err("mul", a.shape(), b.shape()));
        }
        let value = self.nodes[a.id]
            .value
            .zip_map(&self.nodes[b.id].value, |x, y| x * y);
        Ok(self.binary(a, b, value, Op::Mul(a.id, b.id)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.check(a);
        let value = self.nodes[a.id].value.map(|x| x * s);
        self.unary(a, value, Op::Scale(a.id, s))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        self.check(a);
        let value = self.nodes[a.id].value.transpose();
        self.unary(a, value, Op::Transpose(a.id))
    }

    /// `[a | b]`
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.check(a);
        self.check(b);
        if a.rows != b.rows {
            return Err(shape_err("concat_cols", a.shape(), b.shape()));
        }
        let (va, vb) = (&self.nodes[a.id].value, &self.nodes[b.id].value);
        let mut value = Matrix::zeros(a.rows, a.cols + b.cols);
        for r in 0..a.rows {
            let row = value.row_mut(r);
            row[..a.cols].copy_from_slice(va.row(r));
            row[a.cols..].copy_from_slice(vb.row(r));
        }
        Ok(self.binary(a, b, value, Op::ConcatCols(a.id, b.id)))
    }

    /// Rows `start..end` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        self.check(a);
        if start > end || end > a.rows {
            return Err(shape_err("slice_rows", a.shape(), (start, end)));
        }
        let va = &self.nodes[a.id].value;
        let value = Matrix::from_vec(
            end - start,
            a.cols,
            va.as_slice()[start * a.cols..end * a.cols].to_vec(),
        );
        Ok(self.unary(a, value, Op::SliceRows(a.id, start)))
    }

    /// Adds the `1 x F` row vector `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        self.check(a);
        self.check(row);
        if row.rows != 1 || row.cols != a.cols {
            return Err(shape_err("add_row", a.shape(), row.shape()));
        }
        let mut value = self.nodes[a.id].value.clone();
        let b = self.nodes[row.id].value.as_slice();
        for r in 0..a.rows {
            for (x, y) in value.row_mut(r).iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(self.binary(a, row, value, Op::AddRow(a.id, row.id)))
    }

    /// Adds the `N x 1` column vector `col` to every column of `a`.
    pub fn add_col(&mut self, a: Var, col: Var) -> Result<Var, AutodiffError> {
        self.check(a);
        self.check(col);
        if col.cols != 1 || col.rows != a.rows {
            return Err(shape_err("add_col", a.shape(), col.shape()));
        }
        let mut value = self.nodes[a.id].value.clone();
        let b = self.nodes[col.id].value.as_slice();
        for (r, &bias) in b.iter().enumerate() {
            for x in value.row_mut(r) {
                *x += bias;
            }
        }
        Ok(self.binary(a, col, value, Op::AddCol(a.id, col.id)))
    }

    /// Mean over rows: `N x F -> 1 x F`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.check(a);
        if a.rows == 0 {
            return Err(shape_err("mean_rows", a.shape(), (1, a.cols)));
        }
        let va = &self.nodes[a.id].value;
        let mut value = Matrix::zeros(1, a.cols);
        for r in 0..a.rows {
            for (s, x) in value.as_mut_slice().iter_mut().zip(va.row(r)) {
                *s += x;
            }
        }
        let inv = 1.0 / a.rows as f64;
        value.as_mut_slice().iter_mut().for_each(|s| *s *= inv);
        Ok(self.unary(a, value, Op::MeanRows(a.id)))
    }

    /// Columnwise max over rows: `N x F -> 1 x F`. Ties go to the lowest row.
    pub fn max_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.check(a);
        if a.rows == 0 {
            return Err(shape_err("max_rows", a.shape(), (1, a.cols)));
        }
        let va = &self.nodes[a.id].value;
        let mut value = Matrix::from_vec(1, a.cols, va.row(0).to_vec());
        let mut arg = vec![0usize; a.cols];
        for r in 1..a.rows {
            for (c, &x) in va.row(r).iter().enumerate() {
                if x > value.as_slice()[c] {
                    value.as_mut_slice()[c] = x;
                    arg[c] = r;
                }
            }
        }
        Ok(self.unary(a, value, Op::MaxRows(a.id, arg)))
    }

    /// Output row `k` is row `index[k]` of `a`. Indices may repeat.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, AutodiffError> {
        self.check(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= a.rows) {
            return Err(shape_err("gather_rows", a.shape(), (bad, 0)));
        }
        let va = &self.nodes[a.id].value;
        let mut value = Matrix::zeros(index.len(), a.cols);
        for (k, &i) in index.iter().enumerate() {
            value.row_mut(k).copy_from_slice(va.row(i));
        }
        Ok(self.unary(a, value, Op::GatherRows(a.id, index.to_vec())))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.check(a);
        let value = self.nodes[a.id]
            .value
            .map(|x| if x > 0.0 { x } else { 0.0 });
        self.unary(a, value, Op::Relu(a.id))
    }

    /// Inverted dropout. Identity in eval mode or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        p: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var, AutodiffError> {
        self.check(a);
        if !(0.0..1.0).contains(&p) {
            return Err(AutodiffError::InvalidProbability(p));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..a.rows * a.cols)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let value = Matrix::from_vec(
            a.rows,
            a.cols,
            self.nodes[a.id]
                .value
                .as_slice()
                .iter()
                .zip(&mask)
                .map(|(x, m)| x * m)
                .collect(),
        );
        Ok(self.unary(a, value, Op::Dropout(a.id, mask)))
    }

    /// Elementwise absolute value; the subgradient at 0 is taken as 0.
    pub fn abs(&mut self, a: Var) -> Var {
        self.check(a);
        let value = self.nodes[a.id].value.map(f64::abs);
        self.unary(a, value, Op::Abs(a.id))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.check(a);
        let value = self.nodes[a.id].value.map(|x| x * x);
        self.unary(a, value, Op::Square(a.id))
    }

    /// Sum of all entries, `1 x 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        self.check(a);
        let value = Matrix::from_vec(1, 1, vec![self.nodes[a.id].value.sum()]);
        self.unary(a, value, Op::Sum(a.id))
    }

    /// Mean of all entries, `1 x 1`.
    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.check(a);
        let n = a.rows * a.cols;
        if n == 0 {
            return Err(shape_err("mean", a.shape(), (1, 1)));
        }
        let value = Matrix::from_vec(1, 1, vec![self.nodes[a.id].value.sum() / n as f64]);
        Ok(self.unary(a, value, Op::Mean(a.id)))
    }

    /// Row `i` of the output is the mean of the rows of `a` at the neighbors
    /// of node `i`; zero for nodes without neighbors.
    pub fn neighbor_mean(&mut self, a: Var, adj: &Arc<Adjacency>) -> Result<Var, AutodiffError> {
        self.check(a);
        if adj.node_count() != a.rows {
            return Err(shape_err("neighbor_mean", a.shape(), (adj.node_count(), 0)));
        }
        let va = &self.nodes[a.id].value;
        let mut value = Matrix::zeros(a.rows, a.cols);
        for i in 0..a.rows {
            let nb = adj.neighbors(i);
            if nb.is_empty() {
                continue;
            }
            let out = value.row_mut(i);
            for &j in nb {
                for (o, x) in out.iter_mut().zip(va.row(j)) {
                    *o += x;
                }
            }
            let inv = 1.0 / nb.len() as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        Ok(self.unary(a, value, Op::NeighborMean(a.id, Arc::clone(adj))))
    }

    /// Elementwise max of the neighbor rows of each node. A node without
    /// neighbors takes its own row. Ties go to the lowest neighbor index.
    pub fn neighbor_max(&mut self, a: Var, adj: &Arc<Adjacency>) -> Result<Var, AutodiffError> {
        self.check(a);
        if adj.node_count() != a.rows {
            return Err(shape_err("neighbor_max", a.shape(), (adj.node_count(), 0)));
        }
        let va = &self.nodes[a.id].value;
        let f = a.cols;
        let mut value = Matrix::zeros(a.rows, f);
        let mut arg = vec![0usize; a.rows * f];
        for i in 0..a.rows {
            let nb = adj.neighbors(i);
            let (first, rest) = match nb.split_first() {
                Some((&first, rest)) => (first, rest),
                None => (i, &[][..]),
            };
            let out = value.row_mut(i);
            out.copy_from_slice(va.row(first));
            let arg_row = &mut arg[i * f..(i + 1) * f];
            arg_row.iter_mut().for_each(|x| *x = first);
            for &j in rest {
                for ((o, am), &x) in out.iter_mut().zip(arg_row.iter_mut()).zip(va.row(j)) {
                    if x > *o {
                        *o = x;
                        *am = j;
                    }
                }
            }
        }
        Ok(self.unary(a, value, Op::NeighborMax(a.id, arg)))
    }

    /// Symmetrically normalized aggregation with self-loops:
    /// `D^-1/2 (A + I) D^-1/2 a`, where `D` is the degree matrix of `A + I`.
    pub fn gcn_aggregate(&mut self, a: Var, adj: &Arc<Adjacency>) -> Result<Var, AutodiffError> {
        self.check(a);
        if adj.node_count() != a.rows {
            return Err(shape_err("gcn_aggregate", a.shape(), (adj.node_count(), 0)));
        }
        let value = gcn_apply(&self.nodes[a.id].value, adj);
        Ok(self.unary(a, value, Op::GcnAggregate(a.id, Arc::clone(adj))))
    }

    /// Back-propagates from the scalar `loss`, then clears the tape.
    ///
    /// Gradients accumulate additively over every path from a leaf to the
    /// loss.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, AutodiffError> {
        if loss.generation != self.generation || loss.id >= self.nodes.len() {
            return Err(AutodiffError::NotOnTape);
        }
        if loss.shape() != (1, 1) {
            return Err(AutodiffError::NotScalar(loss.shape()));
        }
        let nodes = std::mem::take(&mut self.nodes);
        let generation = self.generation;
        self.generation += 1;

        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(Matrix::filled(1, 1, 1.0));
        }

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            backprop_node(&nodes, id, g, &mut grads);
        }

        // Leaves requiring grad always get an entry, even when unreached.
        for (id, node) in nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                if grads[id].is_none() {
                    let (r, c) = node.value.shape();
                    grads[id] = Some(Matrix::zeros(r, c));
                }
            } else {
                grads[id] = None;
            }
        }
        Ok(Gradients { generation, grads })
    }
}

fn gcn_apply(x: &Matrix, adj: &Adjacency) -> Matrix {
    let n = x.rows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / ((adj.degree(i) + 1) as f64).sqrt())
        .collect();
    let mut out = Matrix::zeros(n, x.cols());
    for i in 0..n {
        let di = inv_sqrt[i];
        let out_row = out.row_mut(i);
        let w = di * di;
        for (o, v) in out_row.iter_mut().zip(x.row(i)) {
            *o += w * v;
        }
        for &j in adj.neighbors(i) {
            let w = di * inv_sqrt[j];
            for (o, v) in out_row.iter_mut().zip(x.row(j)) {
                *o += w * v;
            }
        }
    }
    out
}

fn accumulate(grads: &mut [Option<Matrix>], nodes: &[Node], id: usize, g: Matrix) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn backprop_node(nodes: &[Node], id: usize, g: Matrix, grads: &mut [Option<Matrix>]) {
    let rg = |i: usize| nodes[i].requires_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if rg(*a) {
                let ga = g.matmul_t(&nodes[*b].value);
                accumulate(grads, nodes, *a, ga);
            }
            if rg(*b) {
                let gb = nodes[*a].value.t_matmul(&g);
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Add(a, b) => {
            if rg(*a) && rg(*b) {
                accumulate(grads, nodes, *a, g.clone());
            } else if rg(*a) {
                accumulate(grads, nodes, *a, g);
                return;
            }
            accumulate(grads, nodes, *b, g);
        }
        Op::Sub(a, b) => {
            if rg(*a) {
                accumulate(grads, nodes, *a, g.clone());
            }
            accumulate(grads, nodes, *b, g.map(|x| -x));
        }
        Op::Mul(a, b) => {
            if rg(*a) {
                accumulate(grads, nodes, *a, g.zip_map(&nodes[*b].value, |x, y| x * y));
            }
            if rg(*b) {
                accumulate(grads, nodes, *b, g.zip_map(&nodes[*a].value, |x, y| x * y));
            }
        }
        Op::Scale(a, s) => {
            let s = *s;
            accumulate(grads, nodes, *a, g.map(|x| x * s));
        }
        Op::Transpose(a) => accumulate(grads, nodes, *a, g.transpose()),
        Op::ConcatCols(a, b) => {
            let ca = nodes[*a].value.cols();
            let cb = nodes[*b].value.cols();
            let rows = g.rows();
            if rg(*a) {
                let mut ga = Matrix::zeros(rows, ca);
                for r in 0..rows {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                }
                accumulate(grads, nodes, *a, ga);
            }
            if rg(*b) {
                let mut gb = Matrix::zeros(rows, cb);
                for r in 0..rows {
                    gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::SliceRows(a, start) => {
            let src = &nodes[*a].value;
            let mut ga = Matrix::zeros(src.rows(), src.cols());
            let c = src.cols();
            ga.as_mut_slice()[start * c..start * c + g.len()].copy_from_slice(g.as_slice());
            accumulate(grads, nodes, *a, ga);
        }
        Op::AddRow(a, row) => {
            if rg(*row) {
                let mut gb = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (s, x) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                        *s += x;
                    }
                }
                accumulate(grads, nodes, *row, gb);
            }
            accumulate(grads, nodes, *a, g);
        }
        Op::AddCol(a, col) => {
            if rg(*col) {
                let gb = Matrix::column((0..g.rows()).map(|r| g.row(r).iter().sum()).collect());
                accumulate(grads, nodes, *col, gb);
            }
            accumulate(grads, nodes, *a, g);
        }
        Op::MeanRows(a) => {
            let src = &nodes[*a].value;
            let inv = 1.0 / src.rows() as f64;
            let mut ga = Matrix::zeros(src.rows(), src.cols());
            for r in 0..src.rows() {
                for (o, x) in ga.row_mut(r).iter_mut().zip(g.as_slice()) {
                    *o = x * inv;
                }
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::MaxRows(a, arg) => {
            let src = &nodes[*a].value;
            let mut ga = Matrix::zeros(src.rows(), src.cols());
            let c = src.cols();
            for (col, &r) in arg.iter().enumerate() {
                ga.as_mut_slice()[r * c + col] += g.as_slice()[col];
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::GatherRows(a, index) => {
            let src = &nodes[*a].value;
            let mut ga = Matrix::zeros(src.rows(), src.cols());
            for (k, &i) in index.iter().enumerate() {
                for (o, x) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                    *o += x;
                }
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::Relu(a) => {
            let ga = g.zip_map(&nodes[*a].value, |x, v| if v > 0.0 { x } else { 0.0 });
            accumulate(grads, nodes, *a, ga);
        }
        Op::Dropout(a, mask) => {
            let mut ga = g;
            for (x, m) in ga.as_mut_slice().iter_mut().zip(mask) {
                *x *= m;
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::Abs(a) => {
            let ga = g.zip_map(&nodes[*a].value, |x, v| {
                if v > 0.0 {
                    x
                } else if v < 0.0 {
                    -x
                } else {
                    0.0
                }
            });
            accumulate(grads, nodes, *a, ga);
        }
        Op::Square(a) => {
            let ga = g.zip_map(&nodes[*a].value, |x, v| 2.0 * v * x);
            accumulate(grads, nodes, *a, ga);
        }
        Op::Sum(a) => {
            let (r, c) = nodes[*a].value.shape();
            accumulate(grads, nodes, *a, Matrix::filled(r, c, g.as_slice()[0]));
        }
        Op::Mean(a) => {
            let (r, c) = nodes[*a].value.shape();
            let v = g.as_slice()[0] / (r * c) as f64;
            accumulate(grads, nodes, *a, Matrix::filled(r, c, v));
        }
        Op::NeighborMean(a, adj) => {
            let (n, f) = nodes[*a].value.shape();
            let mut ga = Matrix::zeros(n, f);
            for i in 0..n {
                let nb = adj.neighbors(i);
                if nb.is_empty() {
                    continue;
                }
                let inv = 1.0 / nb.len() as f64;
                for &j in nb {
                    for (o, x) in ga.row_mut(j).iter_mut().zip(g.row(i)) {
                        *o += x * inv;
                    }
                }
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::NeighborMax(a, arg) => {
            let (n, f) = nodes[*a].value.shape();
            let mut ga = Matrix::zeros(n, f);
            let gs = g.as_slice();
            let out = ga.as_mut_slice();
            for (k, &src_row) in arg.iter().enumerate() {
                out[src_row * f + k % f] += gs[k];
            }
            accumulate(grads, nodes, *a, ga);
        }
        // The normalized operator is symmetric, so it is its own adjoint.
        Op::GcnAggregate(a, adj) => accumulate(grads, nodes, *a, gcn_apply(&g, adj)),
    }
}
