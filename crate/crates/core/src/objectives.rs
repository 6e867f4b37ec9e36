//! Training losses and the PMD evaluation metric.
//!
//! Losses are recorded on a [`Graph`] so they can be differentiated; the
//! metric works on plain tensors with f64 accumulation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, Real, Result, Tensor3, TensorError, Var};

/// Default weight of the edge-length term.
pub const LAMBDA_EDGE: f64 = 5e-4;

/// Directed neighbour pairs; `(p, q)` is present iff `(q, p)` is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeList {
    pairs: Arc<[(u32, u32)]>,
}

impl EdgeList {
    /// Validates symmetry, absence of self pairs and duplicates.
    pub fn new(mut pairs: Vec<(u32, u32)>) -> Result<Self> {
        pairs.sort_unstable();
        for w in pairs.windows(2) {
            if w[0] == w[1] {
                return Err(TensorError::Invalid(format!("duplicate edge {:?}", w[0])));
            }
        }
        for &(p, q) in &pairs {
            if p == q {
                return Err(TensorError::Invalid(format!("self edge at vertex {p}")));
            }
            if pairs.binary_search(&(q, p)).is_err() {
                return Err(TensorError::Invalid(format!("edge ({p}, {q}) lacks its reverse")));
            }
        }
        Ok(Self { pairs: pairs.into() })
    }

    pub(crate) fn from_sorted_unchecked(pairs: Vec<(u32, u32)>) -> Self {
        Self { pairs: pairs.into() }
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn shared(&self) -> Arc<[(u32, u32)]> {
        Arc::clone(&self.pairs)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of undirected edges.
    pub fn undirected_len(&self) -> usize {
        self.pairs.len() / 2
    }
}

/// Loss components of one batch, each averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub edge: f64,
    pub total: f64,
    pub lambda_edge: f64,
}

impl LossBreakdown {
    pub fn new(rec: f64, edge: f64, lambda_edge: f64) -> Self {
        Self {
            rec,
            edge,
            total: rec + lambda_edge * edge,
            lambda_edge,
        }
    }
}

/// `Σ_n Σ_v ||pred - gt||²`, summed over the batch.
pub fn reconstruction_loss<T: Real>(g: &mut Graph<T>, pred: Var, gt: &Tensor3<T>) -> Result<Var> {
    g.squared_error(pred, gt)
}

/// `Σ_n Σ_p Σ_{q ∈ N(p)} ||p - q||²`; each undirected edge contributes twice.
///
/// `edges` has one list per batch element or one shared list.
pub fn edge_length_loss<T: Real>(g: &mut Graph<T>, pred: Var, edges: &[EdgeList]) -> Result<Var> {
    let lists: Vec<_> = edges.iter().map(EdgeList::shared).collect();
    g.edge_squared(pred, &lists)
}

/// Batch-mean `rec + λ·edge`. Returns the differentiable total and the
/// component values.
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    pred: Var,
    gt: &Tensor3<T>,
    edges: &[EdgeList],
    lambda_edge: f64,
) -> Result<(Var, LossBreakdown)> {
    let inv_n = 1.0 / g.shape(pred).n as f64;
    let rec_sum = reconstruction_loss(g, pred, gt)?;
    let rec = g.scale(rec_sum, inv_n);
    let (total, edge_value) = if lambda_edge == 0.0 {
        let e = edge_length_loss(g, pred, edges)?;
        (rec, g.scalar(e).to_f64().unwrap_or(f64::NAN) * inv_n)
    } else {
        let e_sum = edge_length_loss(g, pred, edges)?;
        let e = g.scale(e_sum, inv_n);
        let weighted = g.scale(e, lambda_edge);
        let total = g.add(rec, weighted)?;
        (total, g.scalar(e).to_f64().unwrap_or(f64::NAN))
    };
    let rec_value = g.scalar(rec).to_f64().unwrap_or(f64::NAN);
    Ok((total, LossBreakdown::new(rec_value, edge_value, lambda_edge)))
}

/// Mean squared vertex distance per batch element.
pub fn pmd<T: Real>(pred: &Tensor3<T>, gt: &Tensor3<T>) -> Result<Vec<f64>> {
    let (ps, gs) = (pred.shape(), gt.shape());
    if ps != gs {
        return Err(TensorError::ShapeMismatch {
            op: "pmd",
            lhs: ps,
            rhs: gs,
        });
    }
    let mut out = Vec::with_capacity(ps.n);
    for n in 0..ps.n {
        let mut acc = 0.0f64;
        for c in 0..ps.c {
            for (a, b) in pred.row(n, c).iter().zip(gt.row(n, c)) {
                let d = a.to_f64().unwrap_or(f64::NAN) - b.to_f64().unwrap_or(f64::NAN);
                acc += d * d;
            }
        }
        out.push(acc / ps.v as f64);
    }
    Ok(out)
}

/// PMD averaged over the batch.
pub fn pmd_mean<T: Real>(pred: &Tensor3<T>, gt: &Tensor3<T>) -> Result<f64> {
    let per = pmd(pred, gt)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn tri() -> (Tensor3<f64>, EdgeList) {
        let h = 3f64.sqrt() / 2.0;
        let t = Tensor3::from_vec(1, 3, 3, vec![0.0, 1.0, 0.5, 0.0, 0.0, h, 0.0, 0.0, 0.0]).unwrap();
        let e = EdgeList::new(vec![(0, 1), (1, 0), (1, 2), (2, 1), (0, 2), (2, 0)]).unwrap();
        (t, e)
    }

    #[test]
    fn reconstruction_examples() {
        let gt = Tensor3::<f64>::zeros(Shape::new(1, 3, 4));
        let mut g = Graph::new();
        let same = g.constant(gt.clone());
        let r = reconstruction_loss(&mut g, same, &gt).unwrap();
        assert_eq!(g.scalar(r), 0.0);
        let mut moved = gt.clone();
        moved.set(0, 0, 2, 0.3);
        let p = g.constant(moved);
        let r = reconstruction_loss(&mut g, p, &gt).unwrap();
        assert!((g.scalar(r) - 0.09).abs() < 1e-15);
    }

    #[test]
    fn equilateral_triangle_edge_loss_is_six() {
        let (t, e) = tri();
        let mut g = Graph::new();
        let x = g.constant(t.clone());
        let l = edge_length_loss(&mut g, x, std::slice::from_ref(&e)).unwrap();
        assert!((g.scalar(l) - 6.0).abs() < 1e-15);
        let x2 = g.constant(t.map(|a| 2.0 * a));
        let l2 = edge_length_loss(&mut g, x2, &[e]).unwrap();
        assert!((g.scalar(l2) - 24.0).abs() < 1e-14);
    }

    #[test]
    fn total_combines_components() {
        let b = LossBreakdown::new(0.2, 10.0, 5e-4);
        assert!((b.total - 0.205).abs() < 1e-15);
        let (t, e) = tri();
        let gt = t.map(|a| a + 0.1);
        let mut g = Graph::new();
        let x = g.variable(t);
        let (total, parts) = total_loss(&mut g, x, &gt, &[e.clone()], 0.0).unwrap();
        assert_eq!(parts.total, parts.rec);
        assert_eq!(g.scalar(total), parts.rec);
        let (total, parts) = total_loss(&mut g, x, &gt, &[e], LAMBDA_EDGE).unwrap();
        assert_eq!(parts.total, parts.rec + LAMBDA_EDGE * parts.edge);
        assert!((g.scalar(total) - parts.total).abs() < 1e-15);
    }

    #[test]
    fn pmd_examples() {
        let a = Tensor3::<f64>::from_fn(Shape::new(2, 3, 5), |n, c, v| (n + c * v) as f64 * 0.1);
        assert!(pmd(&a, &a).unwrap().iter().all(|&x| x == 0.0));
        let mut b = a.clone();
        for n in 0..2 {
            for v in 0..5 {
                b.set(n, 1, v, a.get(n, 1, v) + 0.25);
            }
        }
        for d in pmd(&a, &b).unwrap() {
            assert!((d - 0.0625).abs() < 1e-15);
        }
        assert!(pmd(&a, &Tensor3::zeros(Shape::new(1, 3, 5))).is_err());
    }

    #[test]
    fn edge_list_validation() {
        assert!(EdgeList::new(vec![(0, 1)]).is_err());
        assert!(EdgeList::new(vec![(0, 0)]).is_err());
        assert!(EdgeList::new(vec![(0, 1), (1, 0), (0, 1)]).is_err());
        assert_eq!(EdgeList::new(vec![(1, 0), (0, 1)]).unwrap().undirected_len(), 1);
    }
}
