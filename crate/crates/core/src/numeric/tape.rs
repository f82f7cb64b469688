use std::collections::BTreeMap;

use super::{floor_renormalize, sym_kl_unchecked, PROB_FLOOR};
use crate::error::{Error, Result};

/// Handle to a parameter block inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named row-major parameter matrix (vectors are `rows × 1`).
///
/// Sparse blocks receive row-wise gradients (embedding lookups); dense
/// blocks receive a full gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub sparse: bool,
}

impl ParamBlock {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    blocks: Vec<ParamBlock>,
}

impl ParamStore {
    pub const fn new() -> Self {
        ParamStore { blocks: Vec::new() }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        sparse: bool,
    ) -> Result<ParamId> {
        let name = name.into();
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "block `{name}` declared {rows}x{cols} but holds {} values",
                data.len()
            )));
        }
        if self.find(&name).is_some() {
            return Err(Error::Config(format!("duplicate parameter block `{name}`")));
        }
        self.blocks.push(ParamBlock {
            name,
            rows,
            cols,
            data,
            sparse,
        });
        Ok(ParamId(self.blocks.len() - 1))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.blocks.iter().position(|b| b.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &ParamBlock {
        &self.blocks[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamBlock {
        &mut self.blocks[id.0]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamBlock)> {
        self.blocks.iter().enumerate().map(|(i, b)| (ParamId(i), b))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.blocks.len()).map(ParamId)
    }

    pub fn all_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.data.iter().all(|x| x.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlockGrad {
    Dense(Vec<f64>),
    Rows(BTreeMap<usize, Vec<f64>>),
}

/// Parameter gradients keyed by block. Blocks that never received a
/// contribution stay `None`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Gradients {
    blocks: Vec<Option<BlockGrad>>,
}

impl Gradients {
    pub fn for_store(store: &ParamStore) -> Self {
        Gradients {
            blocks: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&BlockGrad> {
        self.blocks.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &BlockGrad)> {
        self.blocks
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    /// Gradient of a single flat entry, zero when untouched.
    pub fn entry(&self, store: &ParamStore, id: ParamId, flat: usize) -> f64 {
        match self.get(id) {
            None => 0.0,
            Some(BlockGrad::Dense(v)) => v[flat],
            Some(BlockGrad::Rows(rows)) => {
                let cols = store.get(id).cols;
                rows.get(&(flat / cols)).map_or(0.0, |r| r[flat % cols])
            }
        }
    }

    fn ensure_len(&mut self, n: usize) {
        if self.blocks.len() < n {
            self.blocks.resize(n, None);
        }
    }

    pub(crate) fn dense_mut(&mut self, id: ParamId, len: usize) -> &mut Vec<f64> {
        self.ensure_len(id.0 + 1);
        let slot = &mut self.blocks[id.0];
        if slot.is_none() {
            *slot = Some(BlockGrad::Dense(vec![0.0; len]));
        }
        match slot {
            Some(BlockGrad::Dense(v)) => v,
            _ => panic!("block {} mixes dense and row gradients", id.0),
        }
    }

    pub(crate) fn row_mut(&mut self, id: ParamId, row: usize, cols: usize) -> &mut Vec<f64> {
        self.ensure_len(id.0 + 1);
        let slot = &mut self.blocks[id.0];
        if slot.is_none() {
            *slot = Some(BlockGrad::Rows(BTreeMap::new()));
        }
        match slot {
            Some(BlockGrad::Rows(rows)) => rows.entry(row).or_insert_with(|| vec![0.0; cols]),
            _ => panic!("block {} mixes dense and row gradients", id.0),
        }
    }

    /// `self += other`, entry by entry, in block then row order.
    pub fn accumulate(&mut self, other: &Gradients) {
        self.ensure_len(other.blocks.len());
        for (i, g) in other.blocks.iter().enumerate() {
            let Some(g) = g else { continue };
            match (&mut self.blocks[i], g) {
                (slot @ None, g) => *slot = Some(g.clone()),
                (Some(BlockGrad::Dense(a)), BlockGrad::Dense(b)) => {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                }
                (Some(BlockGrad::Rows(a)), BlockGrad::Rows(b)) => {
                    for (r, v) in b {
                        match a.get_mut(r) {
                            Some(dst) => {
                                for (x, y) in dst.iter_mut().zip(v) {
                                    *x += y;
                                }
                            }
                            None => {
                                a.insert(*r, v.clone());
                            }
                        }
                    }
                }
                _ => panic!("block {i} mixes dense and row gradients"),
            }
        }
    }

    /// Adds `k · θ` for every listed dense block (the L2 gradient).
    pub fn add_scaled_params(&mut self, store: &ParamStore, ids: &[ParamId], k: f64) {
        for &id in ids {
            let block = store.get(id);
            let g = self.dense_mut(id, block.data.len());
            for (x, w) in g.iter_mut().zip(&block.data) {
                *x += k * w;
            }
        }
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.blocks.iter().flatten().flat_map(|g| -> Box<dyn Iterator<Item = f64> + '_> {
            match g {
                BlockGrad::Dense(v) => Box::new(v.iter().copied()),
                BlockGrad::Rows(rows) => Box::new(rows.values().flat_map(|r| r.iter().copied())),
            }
        })
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.blocks.iter_mut().flatten() {
            match g {
                BlockGrad::Dense(v) => v.iter_mut().for_each(|x| *x *= k),
                BlockGrad::Rows(rows) => rows.values_mut().flatten().for_each(|x| *x *= k),
            }
        }
    }
}

/// Node handle on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Row(ParamId, usize),
    MatVec { w: ParamId, col0: usize, x: Var },
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Var, Var),
    Slice { x: Var, start: usize },
    Softmax(Var),
    FloorRenorm(Var),
    SymKl(Var, Var),
    Hinge { x: Var, margin: f64 },
    NegLogPick { p: Var, index: usize },
    Scale { x: Var, k: f64 },
    Sum(Vec<Var>),
    Mask { x: Var, mask: Vec<f64> },
    SumSquares(ParamId),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Records vector-valued operations with their forward values; `backward`
/// replays the record once in reverse and returns parameter gradients.
///
/// Parameters are read from the borrowed store, never copied into the
/// tape except for the small slices an op actually consumes.
#[derive(Debug)]
pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
}

static EMPTY_STORE: ParamStore = ParamStore::new();

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        debug_assert_eq!(value.len(), 1);
        value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn check_same_len(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        if la != lb {
            return Err(Error::Dimension(format!("{what}: lengths {la} and {lb}")));
        }
        Ok(())
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    /// Whole block as a flat vector (biases, shifting rows).
    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.store.get(id).data.clone();
        self.push(value, Op::Param(id))
    }

    /// One row of a block (embedding lookup, per-class shifting vector).
    pub fn row(&mut self, id: ParamId, row: usize) -> Result<Var> {
        let block = self.store.get(id);
        if row >= block.rows {
            return Err(Error::Dimension(format!(
                "row {row} of `{}` with {} rows",
                block.name, block.rows
            )));
        }
        let value = block.row(row).to_vec();
        Ok(self.push(value, Op::Row(id, row)))
    }

    /// `W[:, col0 .. col0 + len(x)] · x` for a parameter matrix `W`.
    pub fn matvec_cols(&mut self, w: ParamId, col0: usize, x: Var) -> Result<Var> {
        let block = self.store.get(w);
        let xv = self.value(x);
        if col0 + xv.len() > block.cols {
            return Err(Error::Dimension(format!(
                "`{}` is {}x{}, applied to columns {}..{}",
                block.name,
                block.rows,
                block.cols,
                col0,
                col0 + xv.len()
            )));
        }
        let value = (0..block.rows)
            .map(|r| {
                let row = &block.row(r)[col0..col0 + xv.len()];
                row.iter().zip(xv).map(|(a, b)| a * b).sum()
            })
            .collect();
        Ok(self.push(value, Op::MatVec { w, col0, x }))
    }

    pub fn matvec(&mut self, w: ParamId, x: Var) -> Result<Var> {
        let cols = self.store.get(w).cols;
        if self.value(x).len() != cols {
            return Err(Error::Dimension(format!(
                "`{}` expects input of length {cols}, got {}",
                self.store.get(w).name,
                self.value(x).len()
            )));
        }
        self.matvec_cols(w, 0, x)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_len(a, b, "add")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_len(a, b, "mul")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        self.push(value, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).iter().map(|v| v.tanh()).collect();
        self.push(value, Op::Tanh(x))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).to_vec();
        value.extend_from_slice(self.value(b));
        self.push(value, Op::Concat(a, b))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.len() {
            return Err(Error::Dimension(format!(
                "slice {start}..{} of a length-{} vector",
                start + len,
                xv.len()
            )));
        }
        let value = xv[start..start + len].to_vec();
        Ok(self.push(value, Op::Slice { x, start }))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let value = super::softmax(self.value(x))?;
        Ok(self.push(value, Op::Softmax(x)))
    }

    pub fn floor_renorm(&mut self, x: Var) -> Var {
        let value = floor_renormalize(self.value(x));
        self.push(value, Op::FloorRenorm(x))
    }

    /// `floor_renorm(softmax(x))`: a distribution on the floored simplex.
    pub fn distribution(&mut self, x: Var) -> Result<Var> {
        let p = self.softmax(x)?;
        Ok(self.floor_renorm(p))
    }

    pub fn sym_kl(&mut self, p: Var, q: Var) -> Result<Var> {
        self.check_same_len(p, q, "sym_kl")?;
        let value = sym_kl_unchecked(self.value(p), self.value(q));
        Ok(self.push(vec![value], Op::SymKl(p, q)))
    }

    pub fn hinge(&mut self, x: Var, margin: f64) -> Var {
        let value = super::margin_hinge(self.scalar(x), margin);
        self.push(vec![value], Op::Hinge { x, margin })
    }

    /// `−ln p[index]`.
    pub fn neg_log_pick(&mut self, p: Var, index: usize) -> Result<Var> {
        let pv = self.value(p);
        if index >= pv.len() {
            return Err(Error::Dimension(format!(
                "class {index} of a length-{} distribution",
                pv.len()
            )));
        }
        let value = -pv[index].ln();
        Ok(self.push(vec![value], Op::NegLogPick { p, index }))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let value = self.value(x).iter().map(|v| v * k).collect();
        self.push(value, Op::Scale { x, k })
    }

    /// Elementwise sum of equally sized vars, accumulated left to right.
    pub fn sum(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::Dimension("sum of no terms".into()));
        };
        let mut value = self.value(first).to_vec();
        for &x in &xs[1..] {
            self.check_same_len(first, x, "sum")?;
            for (acc, v) in value.iter_mut().zip(self.value(x)) {
                *acc += v;
            }
        }
        Ok(self.push(value, Op::Sum(xs.to_vec())))
    }

    /// Multiplies by a constant vector (inverted-dropout masks).
    pub fn mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(Error::Dimension(format!(
                "mask of length {} on a length-{} vector",
                mask.len(),
                self.value(x).len()
            )));
        }
        let value = self.value(x).iter().zip(&mask).map(|(a, b)| a * b).collect();
        Ok(self.push(value, Op::Mask { x, mask }))
    }

    /// `Σ θ²` over one block.
    pub fn sum_squares(&mut self, id: ParamId) -> Var {
        let value = self.store.get(id).data.iter().map(|w| w * w).sum();
        self.push(vec![value], Op::SumSquares(id))
    }

    /// Reverse sweep from a scalar root. Every node recorded up to `root`
    /// is visited once, newest first; nodes with no incoming gradient are
    /// skipped without work.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads = Gradients::for_store(self.store);
        let mut adj: Vec<Option<Vec<f64>>> = Vec::with_capacity(root.0 + 1);
        adj.resize_with(root.0 + 1, || None);
        adj[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(dy) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let g = grads.dense_mut(*id, y.len());
                    add_into(g, &dy);
                }
                Op::Row(id, row) => {
                    let block = self.store.get(*id);
                    if block.sparse {
                        add_into(grads.row_mut(*id, *row, block.cols), &dy);
                    } else {
                        let g = grads.dense_mut(*id, block.data.len());
                        add_into(&mut g[row * block.cols..(row + 1) * block.cols], &dy);
                    }
                }
                Op::MatVec { w, col0, x } => {
                    let block = self.store.get(*w);
                    let xv = self.value(*x);
                    let n = xv.len();
                    let mut dx = vec![0.0; n];
                    {
                        let g = grads.dense_mut(*w, block.data.len());
                        for (r, &d) in dy.iter().enumerate() {
                            if d == 0.0 {
                                continue;
                            }
                            let base = r * block.cols + col0;
                            let wrow = &block.data[base..base + n];
                            let grow = &mut g[base..base + n];
                            for j in 0..n {
                                dx[j] += wrow[j] * d;
                                grow[j] += d * xv[j];
                            }
                        }
                    }
                    accumulate(&mut adj, *x, &dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, &dy);
                    accumulate(&mut adj, *b, &dy);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da: Vec<f64> = dy.iter().zip(bv).map(|(d, v)| d * v).collect();
                    let db: Vec<f64> = dy.iter().zip(av).map(|(d, v)| d * v).collect();
                    accumulate(&mut adj, *a, &da);
                    accumulate(&mut adj, *b, &db);
                }
                Op::Sigmoid(x) => {
                    let dx: Vec<f64> = dy.iter().zip(y).map(|(d, s)| d * s * (1.0 - s)).collect();
                    accumulate(&mut adj, *x, &dx);
                }
                Op::Tanh(x) => {
                    let dx: Vec<f64> = dy.iter().zip(y).map(|(d, t)| d * (1.0 - t * t)).collect();
                    accumulate(&mut adj, *x, &dx);
                }
                Op::Concat(a, b) => {
                    let la = self.value(*a).len();
                    accumulate(&mut adj, *a, &dy[..la]);
                    accumulate(&mut adj, *b, &dy[la..]);
                }
                Op::Slice { x, start } => {
                    let mut dx = vec![0.0; self.value(*x).len()];
                    dx[*start..*start + dy.len()].copy_from_slice(&dy);
                    accumulate(&mut adj, *x, &dx);
                }
                Op::Softmax(x) => {
                    let dot: f64 = dy.iter().zip(y).map(|(d, p)| d * p).sum();
                    let dx: Vec<f64> = dy.iter().zip(y).map(|(d, p)| p * (d - dot)).collect();
                    accumulate(&mut adj, *x, &dx);
                }
                Op::FloorRenorm(x) => {
                    let xv = self.value(*x);
                    let total: f64 = xv.iter().map(|&v| v.max(PROB_FLOOR)).sum();
                    let dot: f64 = dy.iter().zip(y).map(|(d, p)| d * p).sum();
                    let dx: Vec<f64> = dy
                        .iter()
                        .zip(xv)
                        .map(|(d, &v)| if v > PROB_FLOOR { (d - dot) / total } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *x, &dx);
                }
                Op::SymKl(p, q) => {
                    let (pv, qv) = (self.value(*p), self.value(*q));
                    let d = dy[0];
                    let dp: Vec<f64> = pv
                        .iter()
                        .zip(qv)
                        .map(|(&a, &b)| 0.5 * d * (a.ln() - b.ln() + 1.0 - b / a))
                        .collect();
                    let dq: Vec<f64> = pv
                        .iter()
                        .zip(qv)
                        .map(|(&a, &b)| 0.5 * d * (b.ln() - a.ln() + 1.0 - a / b))
                        .collect();
                    accumulate(&mut adj, *p, &dp);
                    accumulate(&mut adj, *q, &dq);
                }
                Op::Hinge { x, margin } => {
                    let g = super::margin_hinge_grad(self.scalar(*x), *margin);
                    if g != 0.0 {
                        accumulate(&mut adj, *x, &[dy[0] * g]);
                    }
                }
                Op::NegLogPick { p, index } => {
                    let pv = self.value(*p);
                    let mut dp = vec![0.0; pv.len()];
                    dp[*index] = -dy[0] / pv[*index];
                    accumulate(&mut adj, *p, &dp);
                }
                Op::Scale { x, k } => {
                    let dx: Vec<f64> = dy.iter().map(|d| d * k).collect();
                    accumulate(&mut adj, *x, &dx);
                }
                Op::Sum(xs) => {
                    for x in xs {
                        accumulate(&mut adj, *x, &dy);
                    }
                }
                Op::Mask { x, mask } => {
                    let dx: Vec<f64> = dy.iter().zip(mask).map(|(d, m)| d * m).collect();
                    accumulate(&mut adj, *x, &dx);
                }
                Op::SumSquares(id) => {
                    let block = self.store.get(*id);
                    let g = grads.dense_mut(*id, block.data.len());
                    for (gi, w) in g.iter_mut().zip(&block.data) {
                        *gi += 2.0 * dy[0] * w;
                    }
                }
            }
        }
        grads
    }
}

impl Tape<'static> {
    /// Tape with no parameters, for evaluating primitives on constants.
    pub fn detached() -> Self {
        Tape::new(&EMPTY_STORE)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], target: Var, g: &[f64]) {
    match &mut adj[target.0] {
        Some(existing) => add_into(existing, g),
        slot @ None => *slot = Some(g.to_vec()),
    }
}
