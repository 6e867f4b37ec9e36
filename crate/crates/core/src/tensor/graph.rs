use std::sync::Arc;

use super::{Real, Result, Shape, Tensor3, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Directed neighbour pairs `(p, q)` used by the edge penalty.
pub type EdgePairs = Arc<[(u32, u32)]>;

enum Op<T> {
    Leaf,
    Linear { x: Var, weight: Var, bias: Var },
    InstanceNorm { x: Var, inv_std: Vec<T> },
    Relu(Var),
    Tanh(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Concat(Var, Var),
    MaxPool { x: Var, argmax: Vec<usize> },
    Broadcast(Var),
    Sum(Var),
    Scale(Var, T),
    SquaredError { x: Var, target: Tensor3<T> },
    EdgeSquared { x: Var, edges: Vec<EdgePairs> },
}

struct Node<T> {
    value: Tensor3<T>,
    op: Op<T>,
    tracked: bool,
}

/// Append-only record of one forward pass.
///
/// Parents always precede children, so a single reverse sweep over node
/// indices is a valid topological order for [`Graph::backward`].
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor3<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor3<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor3<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor3<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a `[1,1,1]` node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch { op, lhs: sa, rhs: sb });
        }
        Ok(sa)
    }

    /// Per-vertex affine map: `out[n,o,v] = Σ_i w[o,i]·x[n,i,v] + b[o]`.
    ///
    /// `weight` is stored as `[1, c_out, c_in]` and `bias` as `[1, c_out, 1]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        let bs = self.shape(bias);
        if ws.n != 1 || ws.v != xs.c {
            return Err(TensorError::ShapeMismatch {
                op: "linear(weight)",
                lhs: xs,
                rhs: ws,
            });
        }
        if bs != Shape::new(1, ws.c, 1) {
            return Err(TensorError::ShapeMismatch {
                op: "linear(bias)",
                lhs: ws,
                rhs: bs,
            });
        }
        let (c_in, c_out, nv) = (xs.c, ws.c, xs.v);
        let out_shape = Shape::new(xs.n, c_out, nv);
        let mut out = vec![T::zero(); out_shape.len()];
        {
            let xv = self.value(x).data();
            let wv = self.value(weight).data();
            let bv = self.value(bias).data();
            for n in 0..xs.n {
                let xn = &xv[n * c_in * nv..(n + 1) * c_in * nv];
                let on = &mut out[n * c_out * nv..(n + 1) * c_out * nv];
                T::gemm(c_out, c_in, nv, wv, (c_in, 1), xn, (nv, 1), on, (nv, 1), false);
                for (row, &b) in on.chunks_exact_mut(nv).zip(bv) {
                    row.iter_mut().for_each(|o| *o = *o + b);
                }
            }
        }
        let tracked = self.tracked(x) || self.tracked(weight) || self.tracked(bias);
        let value = Tensor3::new(out_shape, out)?;
        Ok(self.push(value, Op::Linear { x, weight, bias }, tracked))
    }

    /// Normalizes every `(n, c)` row over the vertex axis with the population
    /// variance: `(x - μ) / sqrt(var + eps)`. No affine parameters.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(TensorError::Invalid(format!("instance_norm eps must be > 0, got {eps}")));
        }
        let eps = T::of(eps);
        let xs = self.shape(x);
        let inv_v = T::one() / T::of(xs.v as f64);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(src.len());
        let mut inv_std = Vec::with_capacity(xs.n * xs.c);
        for row in src.chunks_exact(xs.v) {
            // shifted by the first element so constant rows give exactly zero
            let pivot = row[0];
            let mean = pivot + row.iter().map(|&a| a - pivot).sum::<T>() * inv_v;
            let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() * inv_v;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            out.extend(row.iter().map(|&a| (a - mean) * inv));
        }
        let tracked = self.tracked(x);
        Ok(self.push(Tensor3::new(xs, out)?, Op::InstanceNorm { x, inv_std }, tracked))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|a| if a > T::zero() { a } else { T::zero() });
        let tracked = self.tracked(x);
        self.push(value, Op::Relu(x), tracked)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|a| a.tanh());
        let tracked = self.tracked(x);
        self.push(value, Op::Tanh(x), tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p + q)
            .collect();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor3::new(shape, data)?, Op::Add(a, b), tracked))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p * q)
            .collect();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor3::new(shape, data)?, Op::Mul(a, b), tracked))
    }

    /// Stacks `a`'s channels followed by `b`'s channels.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.n != sb.n || sa.v != sb.v {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                lhs: sa,
                rhs: sb,
            });
        }
        let shape = Shape::new(sa.n, sa.c + sb.c, sa.v);
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..sa.n {
            data.extend_from_slice(self.value(a).sample(n));
            data.extend_from_slice(self.value(b).sample(n));
        }
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor3::new(shape, data)?, Op::Concat(a, b), tracked))
    }

    /// Maximum over vertices, `[n,c,v] -> [n,c,1]`. Ties resolve to the
    /// lowest vertex index.
    pub fn global_max_pool(&mut self, x: Var) -> Var {
        let xs = self.shape(x);
        let mut out = Vec::with_capacity(xs.n * xs.c);
        let mut argmax = Vec::with_capacity(xs.n * xs.c);
        for row in self.value(x).data().chunks_exact(xs.v) {
            let mut best = 0;
            for (i, &a) in row.iter().enumerate().skip(1) {
                if a > row[best] {
                    best = i;
                }
            }
            argmax.push(best);
            out.push(row[best]);
        }
        let tracked = self.tracked(x);
        let value = Tensor3::new(Shape::new(xs.n, xs.c, 1), out).expect("pool shape");
        self.push(value, Op::MaxPool { x, argmax }, tracked)
    }

    /// Repeats a `[n,c,1]` tensor across `v` vertices.
    pub fn broadcast_vertices(&mut self, x: Var, v: usize) -> Result<Var> {
        let xs = self.shape(x);
        if xs.v != 1 || v == 0 {
            return Err(TensorError::Invalid(format!(
                "broadcast_vertices expects [n,c,1] and v >= 1, got {xs} -> {v}"
            )));
        }
        let mut data = Vec::with_capacity(xs.n * xs.c * v);
        for &a in self.value(x).data() {
            data.extend(std::iter::repeat_n(a, v));
        }
        let tracked = self.tracked(x);
        Ok(self.push(Tensor3::new(Shape::new(xs.n, xs.c, v), data)?, Op::Broadcast(x), tracked))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor3::scalar(self.value(x).sum());
        let tracked = self.tracked(x);
        self.push(value, Op::Sum(x), tracked)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let s = T::of(s);
        let value = self.value(x).map(|a| a * s);
        let tracked = self.tracked(x);
        self.push(value, Op::Scale(x, s), tracked)
    }

    /// `Σ (x - target)²` over every element, as a scalar.
    pub fn squared_error(&mut self, x: Var, target: &Tensor3<T>) -> Result<Var> {
        let xs = self.shape(x);
        if xs != target.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "squared_error",
                lhs: xs,
                rhs: target.shape(),
            });
        }
        let total = self
            .value(x)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let tracked = self.tracked(x);
        Ok(self.push(
            Tensor3::scalar(total),
            Op::SquaredError {
                x,
                target: target.clone(),
            },
            tracked,
        ))
    }

    /// `Σ_n Σ_(p,q) ||x[n,:,p] - x[n,:,q]||²` as a scalar.
    ///
    /// `edges` holds one pair list per batch element, or a single list shared
    /// by the whole batch.
    pub fn edge_squared(&mut self, x: Var, edges: &[EdgePairs]) -> Result<Var> {
        let xs = self.shape(x);
        if edges.len() != 1 && edges.len() != xs.n {
            return Err(TensorError::Invalid(format!(
                "edge_squared: {} edge lists for batch of {}",
                edges.len(),
                xs.n
            )));
        }
        for list in edges {
            for &(p, q) in list.iter() {
                let bad = (p as usize).max(q as usize);
                if bad >= xs.v {
                    return Err(TensorError::IndexOutOfRange {
                        op: "edge_squared",
                        index: bad,
                        len: xs.v,
                    });
                }
            }
        }
        let value = self.value(x);
        let mut total = T::zero();
        for n in 0..xs.n {
            let list = &edges[if edges.len() == 1 { 0 } else { n }];
            for c in 0..xs.c {
                let row = value.row(n, c);
                for &(p, q) in list.iter() {
                    let d = row[p as usize] - row[q as usize];
                    total = total + d * d;
                }
            }
        }
        let tracked = self.tracked(x);
        Ok(self.push(
            Tensor3::scalar(total),
            Op::EdgeSquared {
                x,
                edges: edges.to_vec(),
            },
            tracked,
        ))
    }

    /// Sign pattern of every relu input and every max-pool argmax.
    ///
    /// Two evaluations with equal signatures lie on the same smooth piece of
    /// the program, which is what finite-difference checks rely on.
    pub fn kink_signature(&self) -> Vec<u64> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    let mut word = 0u64;
                    for (i, &a) in self.nodes[x.0].value.data().iter().enumerate() {
                        if a > T::zero() {
                            word |= 1 << (i % 64);
                        }
                        if i % 64 == 63 {
                            sig.push(word);
                            word = 0;
                        }
                    }
                    sig.push(word);
                }
                Op::MaxPool { argmax, .. } => sig.extend(argmax.iter().map(|&i| i as u64)),
                _ => {}
            }
        }
        sig
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let rs = self.shape(root);
        if rs != Shape::scalar() {
            return Err(TensorError::NonScalarRoot(rs));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }

        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
            grads,
        })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.tracked {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.shape().len()]))
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, weight, bias } => {
                let xs = self.shape(*x);
                let (c_in, c_out, nv) = (xs.c, out.shape().c, xs.v);
                let wv = self.value(*weight).data();
                let xv = self.value(*x).data();
                if let Some(dx) = self.slot(grads, *x) {
                    for n in 0..xs.n {
                        let gn = &g[n * c_out * nv..(n + 1) * c_out * nv];
                        let dxn = &mut dx[n * c_in * nv..(n + 1) * c_in * nv];
                        T::gemm(c_in, c_out, nv, wv, (1, c_in), gn, (nv, 1), dxn, (nv, 1), true);
                    }
                }
                if let Some(dw) = self.slot(grads, *weight) {
                    for n in 0..xs.n {
                        let gn = &g[n * c_out * nv..(n + 1) * c_out * nv];
                        let xn = &xv[n * c_in * nv..(n + 1) * c_in * nv];
                        T::gemm(c_out, nv, c_in, gn, (nv, 1), xn, (1, nv), dw, (c_in, 1), true);
                    }
                }
                if let Some(db) = self.slot(grads, *bias) {
                    for (k, row) in g.chunks_exact(nv).enumerate() {
                        let co = k % c_out;
                        db[co] = db[co] + row.iter().copied().sum::<T>();
                    }
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                if let Some(dx) = self.slot(grads, *x) {
                    let nv = out.shape().v;
                    let inv_v = T::one() / T::of(nv as f64);
                    for (k, ((gr, yr), dxr)) in g
                        .chunks_exact(nv)
                        .zip(out.data().chunks_exact(nv))
                        .zip(dx.chunks_exact_mut(nv))
                        .enumerate()
                    {
                        let mean_g = gr.iter().copied().sum::<T>() * inv_v;
                        let mean_gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() * inv_v;
                        let inv = inv_std[k];
                        for ((d, &gi), &yi) in dxr.iter_mut().zip(gr).zip(yr) {
                            *d = *d + inv * (gi - mean_g - yi * mean_gy);
                        }
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &gi), &y) in dx.iter_mut().zip(g).zip(out.data()) {
                        if y > T::zero() {
                            *d = *d + gi;
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &gi), &y) in dx.iter_mut().zip(g).zip(out.data()) {
                        *d = *d + gi * (T::one() - y * y);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut().zip(g).for_each(|(d, &gi)| *d = *d + gi);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.slot(grads, *a) {
                    for ((d, &gi), &o) in d.iter_mut().zip(g).zip(bv) {
                        *d = *d + gi * o;
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for ((d, &gi), &o) in d.iter_mut().zip(g).zip(av) {
                        *d = *d + gi * o;
                    }
                }
            }
            Op::Concat(a, b) => {
                let (la, lb) = (self.value(*a).sample(0).len(), self.value(*b).sample(0).len());
                let n = out.shape().n;
                if let Some(d) = self.slot(grads, *a) {
                    for k in 0..n {
                        let src = &g[k * (la + lb)..k * (la + lb) + la];
                        d[k * la..(k + 1) * la]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, &gi)| *d = *d + gi);
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for k in 0..n {
                        let src = &g[k * (la + lb) + la..(k + 1) * (la + lb)];
                        d[k * lb..(k + 1) * lb]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, &gi)| *d = *d + gi);
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                let nv = self.shape(*x).v;
                if let Some(dx) = self.slot(grads, *x) {
                    for (k, (&gi, &am)) in g.iter().zip(argmax).enumerate() {
                        dx[k * nv + am] = dx[k * nv + am] + gi;
                    }
                }
            }
            Op::Broadcast(x) => {
                let nv = out.shape().v;
                if let Some(dx) = self.slot(grads, *x) {
                    for (d, row) in dx.iter_mut().zip(g.chunks_exact(nv)) {
                        *d = *d + row.iter().copied().sum::<T>();
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().for_each(|d| *d = *d + g[0]);
                }
            }
            Op::Scale(x, s) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, &gi)| *d = *d + *s * gi);
                }
            }
            Op::SquaredError { x, target } => {
                let xv = self.value(*x).data();
                let two_g = T::of(2.0) * g[0];
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &a), &t) in dx.iter_mut().zip(xv).zip(target.data()) {
                        *d = *d + two_g * (a - t);
                    }
                }
            }
            Op::EdgeSquared { x, edges } => {
                let xval = self.value(*x);
                let xs = xval.shape();
                let two_g = T::of(2.0) * g[0];
                if let Some(dx) = self.slot(grads, *x) {
                    for n in 0..xs.n {
                        let list = &edges[if edges.len() == 1 { 0 } else { n }];
                        for c in 0..xs.c {
                            let base = (n * xs.c + c) * xs.v;
                            let row = xval.row(n, c);
                            for &(p, q) in list.iter() {
                                let (p, q) = (p as usize, q as usize);
                                let d = two_g * (row[p] - row[q]);
                                dx[base + p] = dx[base + p] + d;
                                dx[base + q] = dx[base + q] - d;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of a scalar root with respect to every tracked leaf.
pub struct Gradients<T> {
    shapes: Vec<Shape>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`, or `None` when no path from the root reaches it.
    pub fn get(&self, v: Var) -> Option<Tensor3<T>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor3::new(self.shapes[v.0], g.clone()).expect("gradient shape"))
    }

    /// Gradient for `v`; zeros when `v` is disconnected from the root.
    pub fn wrt(&self, v: Var) -> Tensor3<T> {
        self.get(v).unwrap_or_else(|| Tensor3::zeros(self.shapes[v.0]))
    }

    /// Moves the gradient for `v` out, leaving zeros behind.
    pub fn take(&mut self, v: Var) -> Tensor3<T> {
        match self.grads[v.0].take() {
            Some(g) => Tensor3::new(self.shapes[v.0], g).expect("gradient shape"),
            None => Tensor3::zeros(self.shapes[v.0]),
        }
    }
}
