use std::cell::{Cell, RefCell};
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use super::linear::{Adjoint, Selection, SharedMap};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Position of a node on a tape. Parents always have smaller ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Clone)]
pub(crate) enum Op<T: Scalar> {
    Input,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, T),
    Offset(usize, T),
    Tanh(usize),
    Sum(usize),
    Broadcast(usize),
    Linear(usize, SharedMap<T>),
    Concat(Vec<usize>),
}

impl<T: Scalar> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Tanh(_) => "tanh",
            Op::Sum(_) => "sum",
            Op::Broadcast(_) => "broadcast",
            Op::Linear(_, m) => m.name(),
            Op::Concat(_) => "concat",
        }
    }

    fn parents(&self) -> Vec<usize> {
        match self {
            Op::Input | Op::Constant => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::Tanh(a)
            | Op::Sum(a)
            | Op::Broadcast(a)
            | Op::Linear(a, _) => vec![*a],
            Op::Concat(parts) => parts.clone(),
        }
    }
}

pub(crate) struct Node<T: Scalar> {
    pub(crate) value: Vec<T>,
    pub(crate) op: Op<T>,
    /// Depends on at least one input node.
    pub(crate) active: bool,
}

fn zip_map<T: Scalar>(a: &[T], b: &[T], op: &'static str, f: impl Fn(T, T) -> T) -> Vec<T> {
    assert_eq!(
        a.len(),
        b.len(),
        "shape mismatch in {op}: {} vs {}",
        a.len(),
        b.len()
    );
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Evaluates `op` from the stored values of its parents.
fn evaluate<T: Scalar>(op: &Op<T>, nodes: &[Node<T>], len_hint: usize) -> Vec<T> {
    let v = |i: usize| nodes[i].value.as_slice();
    match op {
        Op::Input | Op::Constant => unreachable!("leaves are not evaluated"),
        Op::Add(a, b) => zip_map(v(*a), v(*b), "add", |x, y| x + y),
        Op::Sub(a, b) => zip_map(v(*a), v(*b), "sub", |x, y| x - y),
        Op::Mul(a, b) => zip_map(v(*a), v(*b), "mul", |x, y| x * y),
        Op::Neg(a) => v(*a).iter().map(|&x| -x).collect(),
        Op::Scale(a, c) => v(*a).iter().map(|&x| x * *c).collect(),
        Op::Offset(a, c) => v(*a).iter().map(|&x| x + *c).collect(),
        Op::Tanh(a) => v(*a).iter().map(|&x| x.tanh()).collect(),
        Op::Sum(a) => vec![v(*a).iter().copied().sum()],
        Op::Broadcast(a) => {
            let s = v(*a);
            assert_eq!(s.len(), 1, "broadcast source must be scalar");
            vec![s[0]; len_hint]
        }
        Op::Linear(a, map) => {
            let x = v(*a);
            assert_eq!(
                x.len(),
                map.input_len(),
                "shape mismatch feeding {}",
                map.name()
            );
            map.apply_vec(x)
        }
        Op::Concat(parts) => parts.iter().flat_map(|&p| v(p).iter().copied()).collect(),
    }
}

/// Cotangent buffer of node `i`, created on first use; `None` for inactive nodes.
fn slot_for<'a, T: Scalar>(
    adj: &'a mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    i: usize,
) -> Option<&'a mut Vec<T>> {
    if !nodes[i].active {
        return None;
    }
    Some(adj[i].get_or_insert_with(|| vec![T::zero(); nodes[i].value.len()]))
}

/// Reverse sweep: cotangents of `wrt` given cotangent seeds on output nodes.
pub(crate) fn reverse_sweep<T: Scalar>(
    nodes: &[Node<T>],
    seeds: &[(usize, &[T])],
    wrt: &[usize],
) -> Vec<Vec<T>> {
    let Some(top) = seeds.iter().map(|s| s.0).max() else {
        return wrt
            .iter()
            .map(|&w| vec![T::zero(); nodes[w].value.len()])
            .collect();
    };
    let bottom = wrt.iter().copied().min().unwrap_or(0);
    let mut adj: Vec<Option<Vec<T>>> = vec![None; top + 1];
    for &(id, seed) in seeds {
        assert_eq!(seed.len(), nodes[id].value.len(), "seed length");
        if let Some(buf) = slot_for(&mut adj, nodes, id) {
            crate::scalar::axpy(T::one(), seed, buf);
        }
    }
    let mut keep = vec![false; top + 1];
    for &w in wrt {
        if w <= top {
            keep[w] = true;
        }
    }
    for i in (bottom..=top).rev() {
        let Some(g) = adj[i].take() else { continue };
        let node = &nodes[i];
        match &node.op {
            Op::Input | Op::Constant => {}
            Op::Add(a, b) => {
                for (p, sign) in [(*a, T::one()), (*b, T::one())] {
                    if let Some(buf) = slot_for(&mut adj, nodes, p) {
                        crate::scalar::axpy(sign, &g, buf);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (p, sign) in [(*a, T::one()), (*b, -T::one())] {
                    if let Some(buf) = slot_for(&mut adj, nodes, p) {
                        crate::scalar::axpy(sign, &g, buf);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                if let Some(buf) = slot_for(&mut adj, nodes, *a) {
                    for ((o, &gi), &bi) in buf.iter_mut().zip(&g).zip(bv) {
                        *o += gi * bi;
                    }
                }
                if let Some(buf) = slot_for(&mut adj, nodes, *b) {
                    for ((o, &gi), &ai) in buf.iter_mut().zip(&g).zip(av) {
                        *o += gi * ai;
                    }
                }
            }
            Op::Neg(a) => {
                if let Some(buf) = slot_for(&mut adj, nodes, *a) {
                    crate::scalar::axpy(-T::one(), &g, buf);
                }
            }
            Op::Scale(a, c) => {
                if let Some(buf) = slot_for(&mut adj, nodes, *a) {
                    crate::scalar::axpy(*c, &g, buf);
                }
            }
            Op::Offset(a, _) => {
                if let Some(buf) = slot_for(&mut adj, nodes, *a) {
                    crate::scalar::axpy(T::one(), &g, buf);
                }
            }
            Op::Tanh(a) => {
                let y = &node.value;
                if let Some(buf) = slot_for(&mut adj, nodes, *a) {
                    for ((o, &gi), &yi) in buf.iter_mut().zip(&g).zip(y) {
                        *o += gi * (T::one() - yi * yi);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(buf) = slot_for(&mut adj, nodes, *a) {
                    buf.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Broadcast(a) => {
                let total: T = g.iter().copied().sum();
                if let Some(buf) = slot_for(&mut adj, nodes, *a) {
                    buf[0] += total;
                }
            }
            Op::Linear(a, map) => {
                if nodes[*a].active {
                    let back = map.apply_adjoint_vec(&g);
                    if let Some(buf) = slot_for(&mut adj, nodes, *a) {
                        crate::scalar::axpy(T::one(), &back, buf);
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = nodes[p].value.len();
                    if let Some(buf) = slot_for(&mut adj, nodes, p) {
                        crate::scalar::axpy(T::one(), &g[offset..offset + n], buf)
                    }
                    offset += n;
                }
            }
        }
        if keep[i] {
            adj[i] = Some(g);
        }
    }
    wrt.iter()
        .map(|&w| {
            adj.get_mut(w)
                .and_then(Option::take)
                .unwrap_or_else(|| vec![T::zero(); nodes[w].value.len()])
        })
        .collect()
}

/// Forward sweep: tangents of `outputs` given tangent seeds on input nodes.
pub(crate) fn forward_sweep<T: Scalar>(
    nodes: &[Node<T>],
    seeds: &[(usize, &[T])],
    outputs: &[usize],
) -> Vec<Vec<T>> {
    let top = outputs.iter().copied().max().unwrap_or(0);
    let bottom = seeds.iter().map(|s| s.0).min().unwrap_or(top + 1);
    let mut tan: Vec<Option<Vec<T>>> = vec![None; top + 1];
    let mut seeded = vec![false; top + 1];
    for &(id, seed) in seeds {
        assert_eq!(seed.len(), nodes[id].value.len(), "tangent seed length");
        if id <= top {
            tan[id] = Some(seed.to_vec());
            seeded[id] = true;
        }
    }
    for i in bottom..=top {
        if seeded[i] || !nodes[i].active {
            continue;
        }
        let node = &nodes[i];
        let t = |j: usize| tan[j].as_deref();
        let out: Option<Vec<T>> = match &node.op {
            Op::Input | Op::Constant => None,
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                match (t(*a), t(*b)) {
                    (None, None) => None,
                    (Some(ta), None) => Some(ta.to_vec()),
                    (None, Some(tb)) => Some(tb.iter().map(|&x| sign * x).collect()),
                    (Some(ta), Some(tb)) => Some(zip_map(ta, tb, "add", |x, y| x + sign * y)),
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                match (t(*a), t(*b)) {
                    (None, None) => None,
                    (Some(ta), None) => Some(zip_map(ta, bv, "mul", |x, y| x * y)),
                    (None, Some(tb)) => Some(zip_map(av, tb, "mul", |x, y| x * y)),
                    (Some(ta), Some(tb)) => Some(
                        ta.iter()
                            .zip(bv)
                            .zip(av.iter().zip(tb))
                            .map(|((&da, &b), (&a, &db))| da * b + a * db)
                            .collect(),
                    ),
                }
            }
            Op::Neg(a) => t(*a).map(|ta| ta.iter().map(|&x| -x).collect()),
            Op::Scale(a, c) => t(*a).map(|ta| ta.iter().map(|&x| x * *c).collect()),
            Op::Offset(a, _) => t(*a).map(<[T]>::to_vec),
            Op::Tanh(a) => t(*a).map(|ta| {
                ta.iter()
                    .zip(&node.value)
                    .map(|(&d, &y)| d * (T::one() - y * y))
                    .collect()
            }),
            Op::Sum(a) => t(*a).map(|ta| vec![ta.iter().copied().sum()]),
            Op::Broadcast(a) => t(*a).map(|ta| vec![ta[0]; node.value.len()]),
            Op::Linear(a, map) => t(*a).map(|ta| map.apply_vec(ta)),
            Op::Concat(parts) => {
                if parts.iter().all(|&p| t(p).is_none()) {
                    None
                } else {
                    Some(
                        parts
                            .iter()
                            .flat_map(|&p| match t(p) {
                                Some(tp) => tp.to_vec(),
                                None => vec![T::zero(); nodes[p].value.len()],
                            })
                            .collect(),
                    )
                }
            }
        };
        tan[i] = out;
    }
    outputs
        .iter()
        .map(|&o| {
            tan[o]
                .clone()
                .unwrap_or_else(|| vec![T::zero(); nodes[o].value.len()])
        })
        .collect()
}

/// A recording of one evaluation. Confined to the thread that built it.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    nonfinite: Cell<Option<(usize, &'static str)>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(256)),
            nonfinite: Cell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_leaf(&self, value: Vec<T>, op: Op<T>) -> usize {
        let active = matches!(op, Op::Input);
        self.push_node(Node { value, op, active })
    }

    fn push_node(&self, node: Node<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        if self.nonfinite.get().is_none() && !crate::scalar::all_finite(&node.value) {
            self.nonfinite.set(Some((id, node.op.name())));
        }
        nodes.push(node);
        id
    }

    fn push_op(&self, op: Op<T>, len_hint: usize) -> usize {
        let (value, active) = {
            let nodes = self.nodes.borrow();
            let active = op.parents().iter().any(|&p| nodes[p].active);
            (evaluate(&op, &nodes, len_hint), active)
        };
        self.push_node(Node { value, op, active })
    }

    /// Registers an independent variable.
    pub fn input(&self, value: Vec<T>) -> Var<'_, T> {
        Var {
            tape: self,
            id: self.push_leaf(value, Op::Input),
        }
    }

    /// Registers a value that is not differentiated.
    pub fn constant(&self, value: Vec<T>) -> Var<'_, T> {
        Var {
            tape: self,
            id: self.push_leaf(value, Op::Constant),
        }
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.constant(vec![value])
    }

    pub fn var(&self, id: NodeId) -> Var<'_, T> {
        assert!(id.0 < self.len(), "node {id:?} not on this tape");
        Var {
            tape: self,
            id: id.0,
        }
    }

    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>]) -> Var<'t, T> {
        assert!(!parts.is_empty(), "concat of nothing");
        let ids = parts.iter().map(|p| p.id).collect();
        Var {
            tape: self,
            id: self.push_op(Op::Concat(ids), 0),
        }
    }

    pub fn value(&self, id: NodeId) -> Vec<T> {
        self.nodes.borrow()[id.0].value.clone()
    }

    /// The first node whose value was not finite, as an error.
    pub fn check_finite(&self) -> Result<()> {
        match self.nonfinite.get() {
            Some((node, op)) => Err(Error::NonFinite { node, op }),
            None => Ok(()),
        }
    }

    pub fn vjp(&self, seeds: &[(NodeId, &[T])], wrt: &[NodeId]) -> Vec<Vec<T>> {
        let seeds: Vec<_> = seeds.iter().map(|(id, s)| (id.0, *s)).collect();
        let wrt: Vec<_> = wrt.iter().map(|w| w.0).collect();
        reverse_sweep(&self.nodes.borrow(), &seeds, &wrt)
    }

    pub fn jvp(&self, seeds: &[(NodeId, &[T])], outputs: &[NodeId]) -> Vec<Vec<T>> {
        let seeds: Vec<_> = seeds.iter().map(|(id, s)| (id.0, *s)).collect();
        let outputs: Vec<_> = outputs.iter().map(|w| w.0).collect();
        forward_sweep(&self.nodes.borrow(), &seeds, &outputs)
    }

    /// Records the reverse pass itself, returning the gradient of the scalar
    /// `output` with respect to each of `wrt` as new tape variables. Those
    /// variables can be differentiated again.
    pub fn gradient_vars<'t>(&'t self, output: Var<'t, T>, wrt: &[Var<'t, T>]) -> Vec<Var<'t, T>> {
        assert_eq!(output.len(), 1, "gradient_vars needs a scalar output");
        let top = output.id;
        let bottom = wrt.iter().map(|w| w.id).min().unwrap_or(0);
        let mut adj: Vec<Option<Var<'t, T>>> = vec![None; top + 1];
        adj[top] = Some(self.scalar(T::one()));
        let active = |i: usize| self.nodes.borrow()[i].active;
        let add_to = |adj: &mut Vec<Option<Var<'t, T>>>, p: usize, c: Var<'t, T>| {
            if !active(p) {
                return;
            }
            adj[p] = Some(match adj[p] {
                Some(existing) => existing + c,
                None => c,
            });
        };
        let is_wrt: Vec<bool> = {
            let mut v = vec![false; top + 1];
            for w in wrt {
                if w.id <= top {
                    v[w.id] = true;
                }
            }
            v
        };
        for i in (bottom..=top).rev() {
            let Some(g) = adj[i] else { continue };
            if !active(i) {
                continue;
            }
            let (op, len) = {
                let nodes = self.nodes.borrow();
                (nodes[i].op.clone(), nodes[i].value.len())
            };
            let me = Var { tape: self, id: i };
            match op {
                Op::Input | Op::Constant => {}
                Op::Add(a, b) => {
                    add_to(&mut adj, a, g);
                    add_to(&mut adj, b, g);
                }
                Op::Sub(a, b) => {
                    add_to(&mut adj, a, g);
                    if active(b) {
                        add_to(&mut adj, b, -g);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (Var { tape: self, id: a }, Var { tape: self, id: b });
                    if active(a) {
                        add_to(&mut adj, a, g * vb);
                    }
                    if active(b) {
                        add_to(&mut adj, b, g * va);
                    }
                }
                Op::Neg(a) => add_to(&mut adj, a, -g),
                Op::Scale(a, c) => add_to(&mut adj, a, g * c),
                Op::Offset(a, _) => add_to(&mut adj, a, g),
                Op::Tanh(a) => {
                    let dy = -(me * me) + T::one();
                    add_to(&mut adj, a, g * dy);
                }
                Op::Sum(a) => {
                    let n = self.nodes.borrow()[a].value.len();
                    add_to(&mut adj, a, g.broadcast(n));
                }
                Op::Broadcast(a) => add_to(&mut adj, a, g.sum()),
                Op::Linear(a, map) => {
                    if active(a) {
                        let adjoint: SharedMap<T> = Arc::new(Adjoint(map));
                        add_to(&mut adj, a, g.apply(&adjoint));
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.nodes.borrow()[p].value.len();
                        if active(p) {
                            add_to(&mut adj, p, g.slice(offset, n));
                        }
                        offset += n;
                    }
                }
            }
            debug_assert!(len > 0);
            if !is_wrt[i] {
                adj[i] = None;
            }
        }
        wrt.iter()
            .map(|w| match adj.get(w.id).copied().flatten() {
                Some(g) => g,
                None => self.constant(vec![T::zero(); w.len()]),
            })
            .collect()
    }

    /// Freezes the recording for repeated (and thread-shared) replays.
    pub fn freeze(self) -> Graph<T> {
        Graph {
            nodes: self.nodes.into_inner(),
        }
    }
}

/// An immutable recording. Cheap to share across threads for repeated
/// tangent-linear and adjoint passes about the recorded point.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].value
    }

    pub fn vjp(&self, seeds: &[(NodeId, &[T])], wrt: &[NodeId]) -> Vec<Vec<T>> {
        let seeds: Vec<_> = seeds.iter().map(|(id, s)| (id.0, *s)).collect();
        let wrt: Vec<_> = wrt.iter().map(|w| w.0).collect();
        reverse_sweep(&self.nodes, &seeds, &wrt)
    }

    pub fn jvp(&self, seeds: &[(NodeId, &[T])], outputs: &[NodeId]) -> Vec<Vec<T>> {
        let seeds: Vec<_> = seeds.iter().map(|(id, s)| (id.0, *s)).collect();
        let outputs: Vec<_> = outputs.iter().map(|w| w.0).collect();
        forward_sweep(&self.nodes, &seeds, &outputs)
    }

    /// Re-evaluates every node from its parents and checks the stored values
    /// are reproduced bit for bit.
    pub fn replay_matches(&self) -> bool {
        self.nodes
            .iter()
            .enumerate()
            .all(|(i, node)| match node.op {
                Op::Input | Op::Constant => true,
                _ => {
                    let again = evaluate(&node.op, &self.nodes[..i], node.value.len());
                    again.len() == node.value.len()
                        && again.iter().zip(&node.value).all(|(a, b)| {
                            a.to_f64().map(f64::to_bits) == b.to_f64().map(f64::to_bits)
                        })
                }
            })
    }
}

/// Handle to a node on a [`Tape`]; arithmetic on handles records new nodes.
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<'t, T: Scalar> Var<'t, T> {
    fn unary(self, op: Op<T>, len_hint: usize) -> Self {
        Var {
            tape: self.tape,
            id: self.tape.push_op(op, len_hint),
        }
    }

    pub fn id(&self) -> NodeId {
        NodeId(self.id)
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn len(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self) -> Vec<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn scalar_value(&self) -> T {
        let nodes = self.tape.nodes.borrow();
        assert_eq!(nodes[self.id].value.len(), 1, "not a scalar node");
        nodes[self.id].value[0]
    }

    pub fn tanh(self) -> Self {
        self.unary(Op::Tanh(self.id), 0)
    }

    pub fn sum(self) -> Self {
        self.unary(Op::Sum(self.id), 0)
    }

    pub fn square(self) -> Self {
        self * self
    }

    pub fn dot(self, other: Self) -> Self {
        (self * other).sum()
    }

    /// Scalar node repeated `n` times.
    pub fn broadcast(self, n: usize) -> Self {
        self.unary(Op::Broadcast(self.id), n)
    }

    pub fn apply(self, map: &SharedMap<T>) -> Self {
        self.unary(Op::Linear(self.id, Arc::clone(map)), 0)
    }

    pub fn slice(self, start: usize, len: usize) -> Self {
        let map: SharedMap<T> = Arc::new(Selection::range(self.len(), start, len));
        self.apply(&map)
    }

    /// Elementwise product with a constant vector.
    pub fn mul_const(self, weights: &[T]) -> Self {
        let w = self.tape.constant(weights.to_vec());
        self * w
    }

    pub fn add_const(self, offset: &[T]) -> Self {
        let c = self.tape.constant(offset.to_vec());
        self + c
    }
}

impl<'t, T: Scalar> Add for Var<'t, T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.unary(Op::Add(self.id, rhs.id), 0)
    }
}

impl<'t, T: Scalar> Sub for Var<'t, T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.unary(Op::Sub(self.id, rhs.id), 0)
    }
}

impl<'t, T: Scalar> Mul for Var<'t, T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.unary(Op::Mul(self.id, rhs.id), 0)
    }
}

impl<'t, T: Scalar> Neg for Var<'t, T> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(Op::Neg(self.id), 0)
    }
}

impl<'t, T: Scalar> Mul<T> for Var<'t, T> {
    type Output = Self;
    fn mul(self, c: T) -> Self {
        self.unary(Op::Scale(self.id, c), 0)
    }
}

impl<'t, T: Scalar> Div<T> for Var<'t, T> {
    type Output = Self;
    fn div(self, c: T) -> Self {
        self.unary(Op::Scale(self.id, T::one() / c), 0)
    }
}

impl<'t, T: Scalar> Add<T> for Var<'t, T> {
    type Output = Self;
    fn add(self, c: T) -> Self {
        self.unary(Op::Offset(self.id, c), 0)
    }
}

impl<'t, T: Scalar> Sub<T> for Var<'t, T> {
    type Output = Self;
    fn sub(self, c: T) -> Self {
        self.unary(Op::Offset(self.id, -c), 0)
    }
}
