//! Radial grids on (0, r_max] with trapezoid quadrature against the
//! measure r dr and precomputed nonuniform 3-point derivative stencils.
//!
//! Fields in the k-equivariant class vanish at the origin like r^k, so
//! every stencil treats r = 0 as a ghost node carrying the value 0. The
//! quadrature covers [r_min, r_max]; the (0, r_min) sliver is dropped,
//! which for O(r^k) integrands is an O(r_min^{2k+2}) error.

use crate::error::Error;
use crate::Result;
use std::io::Write;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum Grading {
    Uniform,
    /// Constant ratio between consecutive nodes.
    Geometric { ratio: f64 },
}

#[derive(Debug, Clone)]
pub struct RadialGrid {
    nodes: Vec<f64>,
    /// Quadrature weights for integral f -> sum_i w_i f(r_i) ~ int f r dr.
    weights: Vec<f64>,
    r_max: f64,
    grading: Grading,
    /// First-derivative stencil coefficients per node, applied to
    /// (v_{i-1}, v_i, v_{i+1}) with the ghost/one-sided conventions
    /// described in `deriv1`.
    d1: Vec<[f64; 3]>,
    d2: Vec<[f64; 3]>,
}

/// Coefficients of the Lagrange parabola derivative at its middle node.
/// h1 = x1 - x0, h2 = x2 - x1; returns weights for (f0, f1, f2).
fn stencil_mid(h1: f64, h2: f64) -> ([f64; 3], [f64; 3]) {
    let d1 = [
        -h2 / (h1 * (h1 + h2)),
        (h2 - h1) / (h1 * h2),
        h1 / (h2 * (h1 + h2)),
    ];
    let d2 = [
        2.0 / (h1 * (h1 + h2)),
        -2.0 / (h1 * h2),
        2.0 / (h2 * (h1 + h2)),
    ];
    (d1, d2)
}

/// Same parabola, derivative evaluated at the right node x2.
fn stencil_right(h1: f64, h2: f64) -> ([f64; 3], [f64; 3]) {
    let d1 = [
        h2 / (h1 * (h1 + h2)),
        -(h1 + h2) / (h1 * h2),
        (h1 + 2.0 * h2) / (h2 * (h1 + h2)),
    ];
    let d2 = [
        2.0 / (h1 * (h1 + h2)),
        -2.0 / (h1 * h2),
        2.0 / (h2 * (h1 + h2)),
    ];
    (d1, d2)
}

impl RadialGrid {
    /// Uniform grid: nodes i*h for i = 1..=n with h = r_max/n.
    pub fn uniform(n: usize, r_max: f64) -> Result<Arc<Self>> {
        if n < 3 {
            return Err(Error::InvalidArgument(format!("n = {n} < 3")));
        }
        if !(r_max > 0.0) || !r_max.is_finite() {
            return Err(Error::InvalidArgument(format!("r_max = {r_max}")));
        }
        let h = r_max / n as f64;
        let nodes: Vec<f64> = (1..=n).map(|i| i as f64 * h).collect();
        Ok(Arc::new(Self::from_nodes(nodes, r_max, Grading::Uniform)))
    }

    /// Geometrically graded grid from r_min to r_max (n nodes, both ends
    /// included). Node i is r_max * ratio^(i+1-n), anchored at the top so
    /// the last node is exactly r_max.
    pub fn geometric(n: usize, r_min: f64, r_max: f64) -> Result<Arc<Self>> {
        if n < 3 {
            return Err(Error::InvalidArgument(format!("n = {n} < 3")));
        }
        if !(r_min > 0.0 && r_min < r_max) || !r_max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "need 0 < r_min < r_max, got [{r_min}, {r_max}]"
            )));
        }
        let log_ratio = (r_max / r_min).ln() / (n - 1) as f64;
        let nodes: Vec<f64> = (0..n)
            .map(|i| r_max * ((i as f64 - (n - 1) as f64) * log_ratio).exp())
            .collect();
        let grading = Grading::Geometric { ratio: log_ratio.exp() };
        Ok(Arc::new(Self::from_nodes(nodes, r_max, grading)))
    }

    fn from_nodes(nodes: Vec<f64>, r_max: f64, grading: Grading) -> Self {
        let n = nodes.len();
        let mut weights = vec![0.0; n];
        weights[0] = nodes[0] * (nodes[1] - nodes[0]) / 2.0;
        weights[n - 1] = nodes[n - 1] * (nodes[n - 1] - nodes[n - 2]) / 2.0;
        for i in 1..n - 1 {
            weights[i] = nodes[i] * (nodes[i + 1] - nodes[i - 1]) / 2.0;
        }

        let mut d1 = vec![[0.0; 3]; n];
        let mut d2 = vec![[0.0; 3]; n];
        // Node 0 uses the ghost (0, 0).
        let (a, b) = stencil_mid(nodes[0], nodes[1] - nodes[0]);
        d1[0] = a;
        d2[0] = b;
        for i in 1..n - 1 {
            let (a, b) = stencil_mid(nodes[i] - nodes[i - 1], nodes[i + 1] - nodes[i]);
            d1[i] = a;
            d2[i] = b;
        }
        let (a, b) = stencil_right(nodes[n - 2] - nodes[n - 3], nodes[n - 1] - nodes[n - 2]);
        d1[n - 1] = a;
        d2[n - 1] = b;

        Self { nodes, weights, r_max, grading, d1, d2 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn r_min(&self) -> f64 {
        self.nodes[0]
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn grading(&self) -> Grading {
        self.grading
    }

    /// Smallest spacing between consecutive nodes (the CFL-relevant one).
    pub fn h_min(&self) -> f64 {
        let mut h = self.nodes[0];
        for w in self.nodes.windows(2) {
            h = h.min(w[1] - w[0]);
        }
        h
    }

    /// Index of the node closest to r.
    pub fn node_nearest(&self, r: f64) -> usize {
        match self.nodes.binary_search_by(|x| x.partial_cmp(&r).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i >= self.nodes.len() => self.nodes.len() - 1,
            Err(i) => {
                if r - self.nodes[i - 1] <= self.nodes[i] - r {
                    i - 1
                } else {
                    i
                }
            }
        }
    }

    /// sum_i w_i v_i ~ int v r dr over [r_min, r_max].
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.nodes.len());
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// First radial derivative. Interior nodes use the centered nonuniform
    /// parabola; node 0 uses the ghost (r=0, value 0); the last node is
    /// one-sided from the left.
    pub fn deriv1(&self, v: &[f64]) -> Vec<f64> {
        let n = self.nodes.len();
        debug_assert_eq!(v.len(), n);
        let mut out = vec![0.0; n];
        let c = self.d1[0];
        out[0] = c[1] * v[0] + c[2] * v[1];
        for i in 1..n - 1 {
            let c = self.d1[i];
            out[i] = c[0] * v[i - 1] + c[1] * v[i] + c[2] * v[i + 1];
        }
        let c = self.d1[n - 1];
        out[n - 1] = c[0] * v[n - 3] + c[1] * v[n - 2] + c[2] * v[n - 1];
        out
    }

    /// Second radial derivative, same stencil layout as `deriv1`.
    pub fn deriv2(&self, v: &[f64]) -> Vec<f64> {
        let n = self.nodes.len();
        debug_assert_eq!(v.len(), n);
        let mut out = vec![0.0; n];
        let c = self.d2[0];
        out[0] = c[1] * v[0] + c[2] * v[1];
        for i in 1..n - 1 {
            let c = self.d2[i];
            out[i] = c[0] * v[i - 1] + c[1] * v[i] + c[2] * v[i + 1];
        }
        let c = self.d2[n - 1];
        out[n - 1] = c[0] * v[n - 3] + c[1] * v[n - 2] + c[2] * v[n - 1];
        out
    }

    pub(crate) fn d1_coeffs(&self) -> &[[f64; 3]] {
        &self.d1
    }

    pub(crate) fn d2_coeffs(&self) -> &[[f64; 3]] {
        &self.d2
    }

    /// Structural equality of the node set.
    pub fn same_nodes(&self, other: &RadialGrid) -> bool {
        self.nodes.len() == other.nodes.len()
            && self
                .nodes
                .iter()
                .zip(other.nodes.iter())
                .all(|(a, b)| a == b)
    }

    /// Write "r,weight" rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "r,weight")?;
        for (r, w) in self.nodes.iter().zip(&self.weights) {
            writeln!(out, "{r:e},{w:e}")?;
        }
        Ok(())
    }
}
