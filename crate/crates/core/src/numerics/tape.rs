//! Taped forward evaluation with explicit backward rules.
//!
//! Every operation records its inputs on the tape; [`Tape::backward`] walks
//! the tape in reverse and applies each op's hand-written adjoint. Parameters
//! are referenced by [`ParamId`] and read from a borrowed [`ParamStore`], so
//! a tape never mutates the model.

use crate::error::{Error, Result};
use crate::numerics::params::{Gradients, ParamId, ParamStore, Shape};
use crate::numerics::tensor::{matvec_into, max_pool_slices, softmax_slice};
use crate::numerics::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Affine {
        w: ParamId,
        x: NodeId,
        b: Option<ParamId>,
    },
    Row {
        table: ParamId,
        row: usize,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Concat(Vec<NodeId>),
    Slice {
        src: NodeId,
        start: usize,
    },
    Dot {
        w: ParamId,
        x: NodeId,
    },
    Softmax(NodeId),
    WeightedSum {
        weights: NodeId,
        items: Vec<NodeId>,
    },
    Mean(Vec<NodeId>),
    MaxPool {
        items: Vec<NodeId>,
        winners: Vec<usize>,
    },
    NegLog {
        src: NodeId,
        index: usize,
        floor: T,
    },
    Hinge {
        scores: NodeId,
        positive: Vec<bool>,
        scale: T,
    },
    Combine(Vec<(NodeId, T)>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Vec<T>,
    op: Op<T>,
}

/// Lower clamp applied inside `-ln p`.
pub fn log_floor<T: Scalar>() -> T {
    T::from_f64(1e-300)
        .filter(|v| *v > T::zero())
        .unwrap_or_else(T::min_positive_value)
}

pub struct Tape<'p, T> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

/// Result of a reverse pass: parameter gradients plus per-node adjoints.
pub struct Backward<T> {
    pub params: Gradients<T>,
    nodes: Vec<Vec<T>>,
}

impl<T: Scalar> Backward<T> {
    /// Adjoint of `node`; all zeros when the node did not influence the root.
    pub fn node_grad(&self, node: NodeId) -> &[T] {
        &self.nodes[node.0]
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id.0].value[0]
    }

    /// Winning item index per dimension of a max-pool node.
    pub fn winners(&self, id: NodeId) -> Option<&[usize]> {
        match &self.nodes[id.0].op {
            Op::MaxPool { winners, .. } => Some(winners),
            _ => None,
        }
    }

    fn push(&mut self, value: Vec<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn len_of(&self, id: NodeId) -> usize {
        self.nodes[id.0].value.len()
    }

    /// Constant input; receives an adjoint but no parameter gradient.
    pub fn leaf(&mut self, value: Vec<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, p: ParamId) -> NodeId {
        let value = self.store.get(p).value.clone();
        self.push(value, Op::Param(p))
    }

    /// `W·x (+ b)`.
    pub fn affine(&mut self, w: ParamId, x: NodeId, b: Option<ParamId>) -> Result<NodeId> {
        let wp = self.store.get(w);
        let (rows, cols) = wp.shape.dims();
        if !matches!(wp.shape, Shape::Matrix(..)) || cols != self.len_of(x) {
            return Err(Error::dim(
                "affine",
                format!("{} is {:?} but input has length {}", wp.name, wp.shape, self.len_of(x)),
            ));
        }
        let mut out = vec![T::zero(); rows];
        matvec_into(&wp.value, cols, &self.nodes[x.0].value, &mut out);
        if let Some(b) = b {
            let bp = self.store.get(b);
            if bp.value.len() != rows {
                return Err(Error::dim(
                    "affine",
                    format!("{} has {} rows but bias {} has length {}", wp.name, rows, bp.name, bp.value.len()),
                ));
            }
            for (o, bv) in out.iter_mut().zip(&bp.value) {
                *o = *o + *bv;
            }
        }
        Ok(self.push(out, Op::Affine { w, x, b }))
    }

    /// Row `row` of a matrix parameter (embedding lookup).
    pub fn row(&mut self, table: ParamId, row: usize) -> Result<NodeId> {
        let tp = self.store.get(table);
        let (rows, cols) = tp.shape.dims();
        if row >= rows {
            return Err(Error::Index {
                what: "embedding table",
                index: row,
                size: rows,
            });
        }
        let value = tp.value[row * cols..(row + 1) * cols].to_vec();
        Ok(self.push(value, Op::Row { table, row }))
    }

    fn check_same(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.len_of(a) != self.len_of(b) {
            return Err(Error::dim(
                op,
                format!("operands have lengths {} and {}", self.len_of(a), self.len_of(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same("add", a, b)?;
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| *x + *y)
            .collect();
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same("mul", a, b)?;
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| *x * *y)
            .collect();
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0]
            .value
            .iter()
            .map(|&v| T::one() / (T::one() + (-v).exp()))
            .collect();
        self.push(value, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        self.push(value, Op::Tanh(x))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut value = Vec::with_capacity(parts.iter().map(|&p| self.len_of(p)).sum());
        for p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, src: NodeId, start: usize, len: usize) -> Result<NodeId> {
        if start + len > self.len_of(src) {
            return Err(Error::dim(
                "slice",
                format!("range {start}..{} exceeds length {}", start + len, self.len_of(src)),
            ));
        }
        let value = self.nodes[src.0].value[start..start + len].to_vec();
        Ok(self.push(value, Op::Slice { src, start }))
    }

    /// Scalar `wᵀx` for a vector parameter `w`.
    pub fn dot(&mut self, w: ParamId, x: NodeId) -> Result<NodeId> {
        let wp = self.store.get(w);
        if wp.value.len() != self.len_of(x) {
            return Err(Error::dim(
                "dot",
                format!("{} has length {} but input has length {}", wp.name, wp.value.len(), self.len_of(x)),
            ));
        }
        let s = wp
            .value
            .iter()
            .zip(&self.nodes[x.0].value)
            .fold(T::zero(), |acc, (a, b)| acc + *a * *b);
        Ok(self.push(vec![s], Op::Dot { w, x }))
    }

    pub fn softmax(&mut self, z: NodeId) -> Result<NodeId> {
        if self.len_of(z) == 0 {
            return Err(Error::dim("softmax", "empty input"));
        }
        let value = softmax_slice(&self.nodes[z.0].value);
        Ok(self.push(value, Op::Softmax(z)))
    }

    /// `Σ_i weights[i]·items[i]`.
    pub fn weighted_sum(&mut self, weights: NodeId, items: &[NodeId]) -> Result<NodeId> {
        let dim = self.uniform_len("weighted_sum", items)?;
        if self.len_of(weights) != items.len() {
            return Err(Error::dim(
                "weighted_sum",
                format!("{} weights for {} items", self.len_of(weights), items.len()),
            ));
        }
        let mut out = vec![T::zero(); dim];
        for (w, it) in self.nodes[weights.0].value.iter().zip(items) {
            for (o, v) in out.iter_mut().zip(&self.nodes[it.0].value) {
                *o = *o + *w * *v;
            }
        }
        Ok(self.push(
            out,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        ))
    }

    fn uniform_len(&self, op: &'static str, items: &[NodeId]) -> Result<usize> {
        let first = items.first().ok_or_else(|| Error::dim(op, "empty item list"))?;
        let dim = self.len_of(*first);
        if let Some(bad) = items.iter().find(|&&i| self.len_of(i) != dim) {
            return Err(Error::dim(
                op,
                format!("item lengths differ ({} vs {dim})", self.len_of(*bad)),
            ));
        }
        Ok(dim)
    }

    pub fn mean(&mut self, items: &[NodeId]) -> Result<NodeId> {
        let dim = self.uniform_len("mean", items)?;
        let mut out = vec![T::zero(); dim];
        for it in items {
            for (o, v) in out.iter_mut().zip(&self.nodes[it.0].value) {
                *o = *o + *v;
            }
        }
        let n = T::from_usize(items.len()).unwrap();
        out.iter_mut().for_each(|o| *o = *o / n);
        Ok(self.push(out, Op::Mean(items.to_vec())))
    }

    /// Per-dimension maximum over items; ties go to the lowest index.
    pub fn max_pool(&mut self, items: &[NodeId]) -> Result<NodeId> {
        self.uniform_len("max_pool", items)?;
        let slices: Vec<&[T]> = items.iter().map(|i| self.nodes[i.0].value.as_slice()).collect();
        let (value, winners) = max_pool_slices(&slices);
        Ok(self.push(
            value,
            Op::MaxPool {
                items: items.to_vec(),
                winners,
            },
        ))
    }

    /// Scalar `-ln max(p[index], floor)`.
    pub fn neg_log(&mut self, src: NodeId, index: usize) -> Result<NodeId> {
        let len = self.len_of(src);
        if index >= len {
            return Err(Error::Index {
                what: "distribution",
                index,
                size: len,
            });
        }
        let floor = log_floor::<T>();
        let p = self.nodes[src.0].value[index].max(floor);
        Ok(self.push(vec![-p.ln()], Op::NegLog { src, index, floor }))
    }

    /// Scalar `scale · Σ_{j∈C} Σ_{i∉C} max(0, 1 − (s_j − s_i))` where `C`
    /// is the set of positions flagged in `positive`.
    pub fn hinge(&mut self, scores: NodeId, positive: &[bool], scale: T) -> Result<NodeId> {
        let s = &self.nodes[scores.0].value;
        if s.len() != positive.len() {
            return Err(Error::dim(
                "hinge",
                format!("{} scores but {} membership flags", s.len(), positive.len()),
            ));
        }
        let mut total = T::zero();
        for (j, &pj) in positive.iter().enumerate() {
            if !pj {
                continue;
            }
            for (i, &pi) in positive.iter().enumerate() {
                if pi {
                    continue;
                }
                let m = T::one() - (s[j] - s[i]);
                if m > T::zero() {
                    total = total + m;
                }
            }
        }
        Ok(self.push(
            vec![scale * total],
            Op::Hinge {
                scores,
                positive: positive.to_vec(),
                scale,
            },
        ))
    }

    /// `Σ_i c_i·x_i` over equal-length nodes.
    pub fn combine(&mut self, terms: &[(NodeId, T)]) -> Result<NodeId> {
        let ids: Vec<NodeId> = terms.iter().map(|t| t.0).collect();
        let dim = self.uniform_len("combine", &ids)?;
        let mut out = vec![T::zero(); dim];
        for (id, c) in terms {
            for (o, v) in out.iter_mut().zip(&self.nodes[id.0].value) {
                *o = *o + *c * *v;
            }
        }
        Ok(self.push(out, Op::Combine(terms.to_vec())))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<Backward<T>> {
        if self.len_of(root) != 1 {
            return Err(Error::dim(
                "backward",
                format!("root must be scalar, has length {}", self.len_of(root)),
            ));
        }
        let mut grads: Vec<Vec<T>> = vec![Vec::new(); self.nodes.len()];
        let mut pgrads = Gradients::new(self.store.len());
        grads[root.0] = vec![T::one()];

        for idx in (0..=root.0).rev() {
            if grads[idx].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => {
                    let slot = pgrads.slot(*p, g.len());
                    add_into(slot, &g);
                }
                Op::Affine { w, x, b } => {
                    let wp = self.store.get(*w);
                    let cols = wp.shape.dims().1;
                    let xv = &self.nodes[x.0].value;
                    {
                        let slot = pgrads.slot(*w, wp.value.len());
                        for (row, gi) in slot.chunks_exact_mut(cols).zip(&g) {
                            if gi.is_zero() {
                                continue;
                            }
                            for (s, xj) in row.iter_mut().zip(xv) {
                                *s = *s + *gi * *xj;
                            }
                        }
                    }
                    if let Some(b) = b {
                        add_into(pgrads.slot(*b, g.len()), &g);
                    }
                    let gx = acc(&mut grads, *x, cols);
                    for (row, gi) in wp.value.chunks_exact(cols).zip(&g) {
                        if gi.is_zero() {
                            continue;
                        }
                        for (d, wij) in gx.iter_mut().zip(row) {
                            *d = *d + *wij * *gi;
                        }
                    }
                }
                Op::Row { table, row } => {
                    let tp = self.store.get(*table);
                    let cols = tp.shape.dims().1;
                    let slot = pgrads.slot(*table, tp.value.len());
                    add_into(&mut slot[row * cols..(row + 1) * cols], &g);
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    add_into(acc(&mut grads, *b, g.len()), &g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    {
                        let ga = acc(&mut grads, *a, g.len());
                        for ((d, gi), bi) in ga.iter_mut().zip(&g).zip(bv) {
                            *d = *d + *gi * *bi;
                        }
                    }
                    let gb = acc(&mut grads, *b, g.len());
                    for ((d, gi), ai) in gb.iter_mut().zip(&g).zip(av) {
                        *d = *d + *gi * *ai;
                    }
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let gx = acc(&mut grads, *x, g.len());
                    for ((d, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *d = *d + *gi * *yi * (T::one() - *yi);
                    }
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let gx = acc(&mut grads, *x, g.len());
                    for ((d, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *d = *d + *gi * (T::one() - *yi * *yi);
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.len_of(*p);
                        add_into(acc(&mut grads, *p, n), &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Slice { src, start } => {
                    let n = self.len_of(*src);
                    let gs = acc(&mut grads, *src, n);
                    add_into(&mut gs[*start..*start + g.len()], &g);
                }
                Op::Dot { w, x } => {
                    let wp = self.store.get(*w);
                    let xv = &self.nodes[x.0].value;
                    let g0 = g[0];
                    {
                        let slot = pgrads.slot(*w, wp.value.len());
                        for (s, xi) in slot.iter_mut().zip(xv) {
                            *s = *s + g0 * *xi;
                        }
                    }
                    let gx = acc(&mut grads, *x, xv.len());
                    for (d, wi) in gx.iter_mut().zip(&wp.value) {
                        *d = *d + g0 * *wi;
                    }
                }
                Op::Softmax(z) => {
                    let p = &node.value;
                    let inner = g.iter().zip(p).fold(T::zero(), |a, (gi, pi)| a + *gi * *pi);
                    let gz = acc(&mut grads, *z, p.len());
                    for ((d, gi), pi) in gz.iter_mut().zip(&g).zip(p) {
                        *d = *d + *pi * (*gi - inner);
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let wv = self.nodes[weights.0].value.clone();
                    let mut gw = vec![T::zero(); items.len()];
                    for (k, it) in items.iter().enumerate() {
                        let iv = &self.nodes[it.0].value;
                        gw[k] = g.iter().zip(iv).fold(T::zero(), |a, (gi, vi)| a + *gi * *vi);
                        let gi_item = acc(&mut grads, *it, g.len());
                        for (d, gi) in gi_item.iter_mut().zip(&g) {
                            *d = *d + wv[k] * *gi;
                        }
                    }
                    add_into(acc(&mut grads, *weights, items.len()), &gw);
                }
                Op::Mean(items) => {
                    let n = T::from_usize(items.len()).unwrap();
                    for it in items {
                        let gi = acc(&mut grads, *it, g.len());
                        for (d, gv) in gi.iter_mut().zip(&g) {
                            *d = *d + *gv / n;
                        }
                    }
                }
                Op::MaxPool { items, winners } => {
                    for (d, (&w, gv)) in winners.iter().zip(&g).enumerate() {
                        let gi = acc(&mut grads, items[w], g.len());
                        gi[d] = gi[d] + *gv;
                    }
                }
                Op::NegLog { src, index, floor } => {
                    let n = self.len_of(*src);
                    let p = self.nodes[src.0].value[*index];
                    if p > *floor {
                        let gs = acc(&mut grads, *src, n);
                        gs[*index] = gs[*index] - g[0] / p;
                    }
                }
                Op::Hinge {
                    scores,
                    positive,
                    scale,
                } => {
                    let s = &self.nodes[scores.0].value;
                    let step = g[0] * *scale;
                    let mut gs = vec![T::zero(); s.len()];
                    for (j, &pj) in positive.iter().enumerate() {
                        if !pj {
                            continue;
                        }
                        for (i, &pi) in positive.iter().enumerate() {
                            if !pi && T::one() - (s[j] - s[i]) > T::zero() {
                                gs[j] = gs[j] - step;
                                gs[i] = gs[i] + step;
                            }
                        }
                    }
                    add_into(acc(&mut grads, *scores, s.len()), &gs);
                }
                Op::Combine(terms) => {
                    for (id, c) in terms {
                        let gi = acc(&mut grads, *id, g.len());
                        for (d, gv) in gi.iter_mut().zip(&g) {
                            *d = *d + *c * *gv;
                        }
                    }
                }
            }
            grads[idx] = g;
        }
        for (i, gvec) in grads.iter_mut().enumerate() {
            if gvec.is_empty() {
                *gvec = vec![T::zero(); self.nodes[i].value.len()];
            }
        }
        Ok(Backward {
            params: pgrads,
            nodes: grads,
        })
    }
}

#[inline]
fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

/// Adjoint buffer of `id`, allocated on first touch. Only nodes earlier than
/// the one being processed are ever touched, so buffers of already-visited
/// nodes are never reopened.
#[inline]
fn acc<T: Scalar>(grads: &mut [Vec<T>], id: NodeId, len: usize) -> &mut Vec<T> {
    let slot = &mut grads[id.0];
    if slot.is_empty() {
        *slot = vec![T::zero(); len];
    }
    slot
}
