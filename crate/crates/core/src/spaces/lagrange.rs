//! Global numbering of Lagrange nodes.

use std::collections::HashMap;

use crate::mesh::{Mesh, Point};
use crate::polyquad::{homogeneous_indices, MultiIndex};

/// Lagrange nodes of degree `k` shared between elements.
///
/// A node is identified by the sorted list of `(global vertex, α_i)` pairs
/// with `α_i > 0`, which is the same from every element containing it.
/// Nodes are numbered by first appearance in element order.
#[derive(Clone, Debug)]
pub struct LagrangeNodes {
    pub degree: u32,
    /// Local node multi-indices, shared by all elements.
    pub local: Vec<MultiIndex>,
    /// `element_nodes[e * local.len() + a]` is the global node of local node `a`.
    pub element_nodes: Vec<usize>,
    pub points: Vec<Point>,
    pub on_boundary: Vec<bool>,
}

impl LagrangeNodes {
    pub fn build(mesh: &Mesh, k: u32) -> Self {
        let dim = mesh.dim();
        let local = homogeneous_indices(dim, k);
        let mut lookup: HashMap<Vec<(usize, u32)>, usize> = HashMap::new();
        let mut element_nodes = Vec::with_capacity(mesh.n_elements() * local.len());
        let mut points = Vec::new();
        let mut on_boundary = Vec::new();
        for e in 0..mesh.n_elements() {
            let verts = mesh.element(e);
            for alpha in &local {
                let mut key: Vec<(usize, u32)> = (0..=dim)
                    .filter(|&i| alpha[i] > 0)
                    .map(|i| (verts[i], alpha[i]))
                    .collect();
                key.sort_unstable();
                let id = *lookup.entry(key).or_insert_with(|| {
                    let mut x = [0.0; 3];
                    for i in 0..=dim {
                        let w = f64::from(alpha[i]) / f64::from(k);
                        for d in 0..dim {
                            x[d] += w * mesh.vertices()[verts[i]][d];
                        }
                    }
                    points.push(x);
                    on_boundary.push(mesh.domain().on_boundary(dim, &x));
                    points.len() - 1
                });
                element_nodes.push(id);
            }
        }
        LagrangeNodes {
            degree: k,
            local,
            element_nodes,
            points,
            on_boundary,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.points.len()
    }

    pub fn n_local(&self) -> usize {
        self.local.len()
    }

    /// Global nodes of element `e`.
    pub fn element(&self, e: usize) -> &[usize] {
        let n = self.local.len();
        &self.element_nodes[e * n..(e + 1) * n]
    }
}
