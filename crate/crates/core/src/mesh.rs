//! Structured simplicial meshes of axis-aligned boxes.
//!
//! In 2D every `h × h` square is cut along its lower-left to upper-right
//! diagonal. In 3D every cube is split into the six Kuhn (Freudenthal)
//! tetrahedra sharing the main diagonal, which yields a conforming mesh
//! because every cube is split the same way.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::tensor::{Mat3, Vec3};

pub type Point = [f64; 3];

/// Axis-aligned box `∏ (lower_d, upper_d)`; only the first `dim` entries are used.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxDomain {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl BoxDomain {
    pub fn new(lower: &[f64], upper: &[f64]) -> Self {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        lo[..lower.len()].copy_from_slice(lower);
        hi[..upper.len()].copy_from_slice(upper);
        BoxDomain {
            lower: lo,
            upper: hi,
        }
    }

    /// The square `(-1, 1)²`.
    pub fn square() -> Self {
        Self::new(&[-1.0, -1.0], &[1.0, 1.0])
    }

    /// The unit square `(0, 1)²`.
    pub fn unit_square() -> Self {
        Self::new(&[0.0, 0.0], &[1.0, 1.0])
    }

    /// The unit cube `(0, 1)³`.
    pub fn unit_cube() -> Self {
        Self::new(&[0.0; 3], &[1.0; 3])
    }

    pub fn measure(&self, dim: usize) -> f64 {
        (0..dim).map(|d| self.upper[d] - self.lower[d]).product()
    }

    /// Whether `x` lies on the boundary, relative tolerance `1e-12` of the box size.
    pub fn on_boundary(&self, dim: usize, x: &Point) -> bool {
        (0..dim).any(|d| {
            let tol = 1e-12 * (self.upper[d] - self.lower[d]).abs().max(1.0);
            (x[d] - self.lower[d]).abs() <= tol || (x[d] - self.upper[d]).abs() <= tol
        })
    }
}

/// A codimension-one face of the mesh.
#[derive(Clone, Debug)]
pub struct Face {
    /// Global vertex indices in ascending order (`dim` of them).
    pub vertices: Vec<usize>,
    /// Unit normal, outward with respect to the first adjacent element.
    pub normal: Vec3,
    /// Largest pairwise vertex distance.
    pub diameter: f64,
    /// `(element, local face index)`; the local face index is the local
    /// vertex of the element opposite to the face.
    pub adjacent: Vec<(usize, usize)>,
    pub is_boundary: bool,
}

/// Per-element geometric quantities.
#[derive(Clone, Debug)]
pub struct ElementGeometry {
    pub dim: usize,
    pub vertices: [Point; 4],
    /// Gradients of the barycentric coordinates `∇λ_i`, `i = 0..=dim`.
    pub grad_lambda: [Vec3; 4],
    pub volume: f64,
    pub diameter: f64,
}

impl ElementGeometry {
    /// Builds the geometry of the simplex spanned by `vertices` (`dim + 1` points).
    ///
    /// Returns the signed volume alongside so callers can check orientation.
    pub fn from_vertices(dim: usize, vertices: &[Point]) -> std::result::Result<Self, f64> {
        assert_eq!(vertices.len(), dim + 1);
        let mut jac = Mat3::identity();
        for c in 0..dim {
            for r in 0..dim {
                jac[(r, c)] = vertices[c + 1][r] - vertices[0][r];
            }
        }
        let det = jac.determinant();
        let mut diameter: f64 = 0.0;
        for a in 0..=dim {
            for b in a + 1..=dim {
                diameter = diameter.max(distance(&vertices[a], &vertices[b]));
            }
        }
        let fact: f64 = (1..=dim).map(|m| m as f64).product();
        let volume = det / fact;
        if !(det.abs() > 1e-14 * diameter.powi(dim as i32)) {
            return Err(volume);
        }
        let inv = jac.try_inverse().ok_or(volume)?;
        let mut grad_lambda = [Vec3::zeros(); 4];
        let mut sum = Vec3::zeros();
        for i in 1..=dim {
            let mut g = Vec3::zeros();
            for d in 0..dim {
                g[d] = inv[(i - 1, d)];
            }
            sum += g;
            grad_lambda[i] = g;
        }
        grad_lambda[0] = -sum;
        let mut verts = [[0.0; 3]; 4];
        verts[..=dim].copy_from_slice(vertices);
        Ok(ElementGeometry {
            dim,
            vertices: verts,
            grad_lambda,
            volume,
            diameter,
        })
    }

    /// Edge vector `t_{i,j} = x_j - x_i` (not normalized).
    pub fn tangent(&self, i: usize, j: usize) -> Vec3 {
        let mut t = Vec3::zeros();
        for d in 0..self.dim {
            t[d] = self.vertices[j][d] - self.vertices[i][d];
        }
        t
    }

    /// Rank-one edge tensor `T_{i,j} = t_{i,j} t_{i,j}ᵀ`.
    pub fn edge_tensor(&self, i: usize, j: usize) -> Mat3 {
        let t = self.tangent(i, j);
        t * t.transpose()
    }

    /// Cartesian point with barycentric coordinates `lambda`.
    pub fn point(&self, lambda: &[f64]) -> Point {
        let mut x = [0.0; 3];
        for (i, l) in lambda.iter().take(self.dim + 1).enumerate() {
            for d in 0..self.dim {
                x[d] += l * self.vertices[i][d];
            }
        }
        x
    }

    /// Barycentric coordinates of a Cartesian point.
    pub fn barycentric(&self, x: &Point) -> [f64; 4] {
        let mut lambda = [0.0; 4];
        let mut sum = 0.0;
        for i in 1..=self.dim {
            let mut l = 0.0;
            for d in 0..self.dim {
                l += self.grad_lambda[i][d] * (x[d] - self.vertices[0][d]);
            }
            lambda[i] = l;
            sum += l;
        }
        lambda[0] = 1.0 - sum;
        lambda
    }

    /// Outward unit normal of the local face opposite to vertex `i`.
    pub fn outward_normal(&self, i: usize) -> Vec3 {
        let g = self.grad_lambda[i];
        -g / g.norm()
    }

    /// Radius of the inscribed ball, `n |K| / |∂K|`.
    pub fn inradius(&self) -> f64 {
        // |F_i| = n |K| |∇λ_i|
        let n = self.dim as f64;
        let boundary: f64 = (0..=self.dim)
            .map(|i| n * self.volume * self.grad_lambda[i].norm())
            .sum();
        n * self.volume / boundary
    }
}

pub fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Simplicial mesh with face connectivity.
#[derive(Clone, Debug)]
pub struct Mesh {
    dim: usize,
    domain: BoxDomain,
    cell_size: f64,
    vertices: Vec<Point>,
    elements: Vec<[usize; 4]>,
    faces: Vec<Face>,
    element_faces: Vec<[usize; 4]>,
    h_max: f64,
}

impl Mesh {
    /// Builds a mesh from raw connectivity. Elements must be positively oriented.
    pub fn from_parts(
        dim: usize,
        domain: BoxDomain,
        cell_size: f64,
        vertices: Vec<Point>,
        elements: Vec<[usize; 4]>,
    ) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidInput(format!("dimension {dim} is not 2 or 3")));
        }
        let mut mesh = Mesh {
            dim,
            domain,
            cell_size,
            vertices,
            elements,
            faces: Vec::new(),
            element_faces: Vec::new(),
            h_max: 0.0,
        };
        let mut h_max: f64 = 0.0;
        for e in 0..mesh.elements.len() {
            let g = mesh.element_geometry(e)?;
            if g.volume <= 0.0 {
                return Err(Error::DegenerateElement {
                    element: e,
                    volume: g.volume,
                });
            }
            h_max = h_max.max(g.diameter);
        }
        mesh.h_max = h_max;
        build_faces(&mut mesh)?;
        Ok(mesh)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    /// Side length of the squares/cubes before the simplicial split.
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// Global vertex indices of element `e`.
    pub fn element(&self, e: usize) -> &[usize] {
        &self.elements[e][..=self.dim]
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Face indices of element `e`; entry `i` is the face opposite local vertex `i`.
    pub fn element_faces(&self, e: usize) -> &[usize] {
        &self.element_faces[e][..=self.dim]
    }

    /// Number of edges. Equals the number of faces in 2D.
    pub fn n_edges(&self) -> usize {
        let mut edges = std::collections::HashSet::new();
        for e in 0..self.n_elements() {
            let v = self.element(e);
            for a in 0..v.len() {
                for b in a + 1..v.len() {
                    edges.insert((v[a].min(v[b]), v[a].max(v[b])));
                }
            }
        }
        edges.len()
    }

    pub fn element_geometry(&self, e: usize) -> Result<ElementGeometry> {
        if e >= self.elements.len() {
            return Err(Error::InvalidInput(format!(
                "element index {e} out of range ({} elements)",
                self.elements.len()
            )));
        }
        let pts: Vec<Point> = self.element(e).iter().map(|&v| self.vertices[v]).collect();
        ElementGeometry::from_vertices(self.dim, &pts)
            .map_err(|volume| Error::DegenerateElement { element: e, volume })
    }

    /// Writes vertices and elements as plain text, one record per line.
    pub fn dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# vertices {}", self.vertices.len())?;
        for v in &self.vertices {
            let coords: Vec<String> = v[..self.dim].iter().map(|c| format!("{c}")).collect();
            writeln!(out, "{}", coords.join(" "))?;
        }
        writeln!(out, "# elements {}", self.elements.len())?;
        for e in 0..self.n_elements() {
            let ids: Vec<String> = self.element(e).iter().map(|i| i.to_string()).collect();
            writeln!(out, "{}", ids.join(" "))?;
        }
        Ok(())
    }
}

/// Uniform mesh of `domain` with squares (cubes) of side `h`.
pub fn generate_uniform_mesh(domain: &BoxDomain, dim: usize, h: f64) -> Result<Mesh> {
    if dim != 2 && dim != 3 {
        return Err(Error::InvalidInput(format!("dimension {dim} is not 2 or 3")));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("mesh size {h} must be positive")));
    }
    let mut counts = [1usize; 3];
    for d in 0..dim {
        let len = domain.upper[d] - domain.lower[d];
        if !(len > 0.0) {
            return Err(Error::InvalidInput(format!(
                "box side {d} has non-positive length {len}"
            )));
        }
        let n = (len / h).round();
        if n < 1.0 || (n * h - len).abs() > 1e-9 * len {
            return Err(Error::InvalidInput(format!(
                "box side {d} of length {len} is not an integer multiple of h = {h}"
            )));
        }
        counts[d] = n as usize;
    }
    let nv = [counts[0] + 1, counts[1] + 1, counts[2] + 1];
    let coord = |d: usize, i: usize| {
        if i == counts[d] {
            domain.upper[d]
        } else {
            domain.lower[d] + i as f64 * h
        }
    };
    let mut vertices = Vec::new();
    let mut elements = Vec::new();
    if dim == 2 {
        for j in 0..nv[1] {
            for i in 0..nv[0] {
                vertices.push([coord(0, i), coord(1, j), 0.0]);
            }
        }
        let vid = |i: usize, j: usize| i + nv[0] * j;
        for j in 0..counts[1] {
            for i in 0..counts[0] {
                let v00 = vid(i, j);
                let v10 = vid(i + 1, j);
                let v11 = vid(i + 1, j + 1);
                let v01 = vid(i, j + 1);
                elements.push([v00, v10, v11, 0]);
                elements.push([v00, v11, v01, 0]);
            }
        }
    } else {
        for k in 0..nv[2] {
            for j in 0..nv[1] {
                for i in 0..nv[0] {
                    vertices.push([coord(0, i), coord(1, j), coord(2, k)]);
                }
            }
        }
        let vid = |c: [usize; 3]| c[0] + nv[0] * (c[1] + nv[1] * c[2]);
        const PERMS: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        // parity of each permutation; odd ones give negatively oriented paths
        const ODD: [bool; 6] = [false, true, true, false, false, true];
        for k in 0..counts[2] {
            for j in 0..counts[1] {
                for i in 0..counts[0] {
                    for (perm, odd) in PERMS.iter().zip(ODD) {
                        let mut c = [i, j, k];
                        let mut tet = [vid(c), 0, 0, 0];
                        for (step, axis) in perm.iter().enumerate() {
                            c[*axis] += 1;
                            tet[step + 1] = vid(c);
                        }
                        if odd {
                            tet.swap(2, 3);
                        }
                        elements.push(tet);
                    }
                }
            }
        }
    }
    Mesh::from_parts(dim, domain.clone(), h, vertices, elements)
}

/// Populates face records, adjacency, normals and diameters.
pub fn build_faces(mesh: &mut Mesh) -> Result<()> {
    let dim = mesh.dim;
    let mut lookup: HashMap<[usize; 3], usize> = HashMap::new();
    let mut faces: Vec<Face> = Vec::new();
    let mut element_faces = vec![[usize::MAX; 4]; mesh.elements.len()];
    for e in 0..mesh.elements.len() {
        let verts = mesh.element(e).to_vec();
        let geom = mesh.element_geometry(e)?;
        for i in 0..=dim {
            let mut key = [usize::MAX; 3];
            let mut fv: Vec<usize> = verts
                .iter()
                .enumerate()
                .filter(|&(l, _)| l != i)
                .map(|(_, &v)| v)
                .collect();
            fv.sort_unstable();
            key[..dim].copy_from_slice(&fv);
            let id = match lookup.get(&key) {
                Some(&id) => {
                    let face = &mut faces[id];
                    if face.adjacent.len() >= 2 {
                        return Err(Error::Structural {
                            message: "face shared by more than two elements".into(),
                            elements: vec![face.adjacent[0].0, face.adjacent[1].0, e],
                        });
                    }
                    face.adjacent.push((e, i));
                    id
                }
                None => {
                    let mut diameter: f64 = 0.0;
                    for a in 0..fv.len() {
                        for b in a + 1..fv.len() {
                            diameter = diameter
                                .max(distance(&mesh.vertices[fv[a]], &mesh.vertices[fv[b]]));
                        }
                    }
                    faces.push(Face {
                        vertices: fv,
                        normal: geom.outward_normal(i),
                        diameter,
                        adjacent: vec![(e, i)],
                        is_boundary: true,
                    });
                    lookup.insert(key, faces.len() - 1);
                    faces.len() - 1
                }
            };
            element_faces[e][i] = id;
        }
    }
    for f in &mut faces {
        f.is_boundary = f.adjacent.len() == 1;
    }
    mesh.faces = faces;
    mesh.element_faces = element_faces;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_grid_counts() {
        let m = generate_uniform_mesh(&BoxDomain::square(), 2, 1.0).unwrap();
        assert_eq!(m.n_vertices(), 9);
        assert_eq!(m.n_elements(), 8);
        assert_eq!(m.faces().len(), 16);
        assert_eq!(m.faces().iter().filter(|f| f.is_boundary).count(), 8);
        assert_eq!(m.n_edges(), 16);
    }

    #[test]
    fn unit_cube_is_six_tets() {
        let m = generate_uniform_mesh(&BoxDomain::unit_cube(), 3, 1.0).unwrap();
        assert_eq!(m.n_vertices(), 8);
        assert_eq!(m.n_elements(), 6);
        for f in m.faces() {
            assert_eq!(f.adjacent.len(), if f.is_boundary { 1 } else { 2 });
        }
        // 12 boundary triangles, 6 interior ones through the main diagonal
        assert_eq!(m.faces().iter().filter(|f| f.is_boundary).count(), 12);
        let vol: f64 = (0..6).map(|e| m.element_geometry(e).unwrap().volume).sum();
        assert!((vol - 1.0).abs() < 1e-14);
    }

    #[test]
    fn unit_square_areas() {
        let m = generate_uniform_mesh(&BoxDomain::unit_square(), 2, 1.0).unwrap();
        for e in 0..m.n_elements() {
            assert!((m.element_geometry(e).unwrap().volume - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_non_divisible_box() {
        let err = generate_uniform_mesh(&BoxDomain::square(), 2, 0.3).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
        assert!(err.to_string().contains("integer multiple"));
    }

    #[test]
    fn right_triangle_geometry() {
        let g = ElementGeometry::from_vertices(2, &[[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
            .unwrap();
        assert_eq!(g.grad_lambda[0], Vec3::new(-1.0, -1.0, 0.0));
        assert_eq!(g.grad_lambda[1], Vec3::new(1.0, 0.0, 0.0));
        let t01 = g.edge_tensor(0, 1);
        assert_eq!(t01, Mat3::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let lam = g.barycentric(&[0.25, 0.5, 0.0]);
        assert!((lam[0] - 0.25).abs() < 1e-15 && (lam[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_element_is_rejected() {
        let err = ElementGeometry::from_vertices(
            2,
            &[[0.0; 3], [1.0, 1.0, 0.0], [2.0, 2.0, 0.0]],
        )
        .unwrap_err();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn single_triangle_faces_are_boundary() {
        let m = Mesh::from_parts(
            2,
            BoxDomain::unit_square(),
            1.0,
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2, 0]],
        )
        .unwrap();
        assert_eq!(m.faces().len(), 3);
        assert!(m.faces().iter().all(|f| f.is_boundary));
    }

    #[test]
    fn dump_lists_vertices_and_elements() {
        let m = generate_uniform_mesh(&BoxDomain::unit_square(), 2, 1.0).unwrap();
        let mut buf = Vec::new();
        m.dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2 + 4 + 2);
        assert!(text.contains("0 1 3"));
    }
}
