//! Polynomials in barycentric coordinates.

use std::collections::BTreeMap;
use std::fmt;

/// Barycentric multi-index `(α_0, …, α_n)`; unused trailing entries are zero.
pub type MultiIndex = [u32; 4];

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Exact normalized moment `(1/|K|) ∫_K λ^α = n! α! / (|α| + n)!`.
pub fn barycentric_moment(dim: usize, alpha: &MultiIndex) -> f64 {
    let total: u32 = alpha.iter().sum();
    let num: f64 = alpha.iter().map(|&a| factorial(a)).product::<f64>() * factorial(dim as u32);
    num / factorial(total + dim as u32)
}

/// All multi-indices over `dim + 1` barycentric variables with `|α| = degree`,
/// in descending lexicographic order.
pub fn homogeneous_indices(dim: usize, degree: u32) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    let mut current = [0u32; 4];
    fn rec(pos: usize, last: usize, left: u32, cur: &mut MultiIndex, out: &mut Vec<MultiIndex>) {
        if pos == last {
            cur[pos] = left;
            out.push(*cur);
            cur[pos] = 0;
            return;
        }
        for a in (0..=left).rev() {
            cur[pos] = a;
            rec(pos + 1, last, left - a, cur, out);
        }
        cur[pos] = 0;
    }
    rec(0, dim, degree, &mut current, &mut out);
    out
}

/// Multi-indices with `α_0 = 0` and `|α| <= degree`, i.e. monomials in
/// `λ_1, …, λ_n` spanning `P_degree`. Ordered by total degree.
pub fn complete_indices(dim: usize, degree: u32) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for d in 0..=degree {
        if dim == 0 {
            break;
        }
        for a in homogeneous_indices(dim - 1, d) {
            let mut alpha = [0u32; 4];
            alpha[1..=dim].copy_from_slice(&a[..dim]);
            out.push(alpha);
        }
    }
    if dim == 0 {
        out.push([0; 4]);
    }
    out
}

/// Polynomial `Σ_α c_α λ^α` on an `n`-simplex.
#[derive(Clone, PartialEq, Default)]
pub struct BarycentricPoly {
    dim: usize,
    terms: BTreeMap<MultiIndex, f64>,
}

impl fmt::Debug for BarycentricPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (alpha, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{c}*λ^{:?}", &alpha[..=self.dim])?;
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

impl BarycentricPoly {
    pub fn zero(dim: usize) -> Self {
        BarycentricPoly {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::monomial(dim, [0; 4], c)
    }

    pub fn monomial(dim: usize, alpha: MultiIndex, c: f64) -> Self {
        debug_assert!(alpha[dim + 1..].iter().all(|&a| a == 0));
        let mut p = Self::zero(dim);
        if c != 0.0 {
            p.terms.insert(alpha, c);
        }
        p
    }

    /// The barycentric coordinate `λ_i`.
    pub fn lambda(dim: usize, i: usize) -> Self {
        let mut alpha = [0; 4];
        alpha[i] = 1;
        Self::monomial(dim, alpha, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, &f64)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Largest `|α|` with a nonzero coefficient (0 for the zero polynomial).
    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|a| a.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    fn insert(&mut self, alpha: MultiIndex, c: f64) {
        let entry = self.terms.entry(alpha).or_insert(0.0);
        *entry += c;
        if *entry == 0.0 {
            self.terms.remove(&alpha);
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut p = self.clone();
        for (a, c) in &other.terms {
            p.insert(*a, *c);
        }
        p
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut p = Self::zero(self.dim);
        if s != 0.0 {
            for (a, c) in &self.terms {
                p.terms.insert(*a, c * s);
            }
        }
        p
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut p = Self::zero(self.dim);
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                let mut g = [0; 4];
                for i in 0..4 {
                    g[i] = a[i] + b[i];
                }
                p.insert(g, ca * cb);
            }
        }
        p
    }

    /// Partial derivative with respect to `λ_i`, treating all `n + 1`
    /// coordinates as independent. Cartesian gradients follow from
    /// `∇p = Σ_i ∂p/∂λ_i ∇λ_i`.
    pub fn derivative(&self, i: usize) -> Self {
        let mut p = Self::zero(self.dim);
        for (a, c) in &self.terms {
            if a[i] > 0 {
                let mut b = *a;
                b[i] -= 1;
                p.insert(b, c * f64::from(a[i]));
            }
        }
        p
    }

    pub fn eval(&self, lambda: &[f64]) -> f64 {
        let mut total = 0.0;
        for (a, c) in &self.terms {
            let mut v = *c;
            for i in 0..=self.dim {
                if a[i] > 0 {
                    v *= lambda[i].powi(a[i] as i32);
                }
            }
            total += v;
        }
        total
    }

    /// Exact value of `(1/|K|) ∫_K p`.
    pub fn mean(&self) -> f64 {
        self.terms
            .iter()
            .map(|(a, c)| c * barycentric_moment(self.dim, a))
            .sum()
    }

    /// Rewrites the polynomial as a homogeneous form of degree `degree` using
    /// `Σ λ_i = 1`. Requires `degree >= self.degree()`.
    pub fn homogenize(&self, degree: u32) -> Self {
        let one = (0..=self.dim)
            .map(|i| Self::lambda(self.dim, i))
            .fold(Self::zero(self.dim), |acc, l| acc.add(&l));
        let mut out = Self::zero(self.dim);
        for (a, c) in &self.terms {
            let d: u32 = a.iter().sum();
            assert!(d <= degree, "cannot homogenize degree {d} polynomial to {degree}");
            let mut term = Self::monomial(self.dim, *a, *c);
            for _ in d..degree {
                term = term.mul(&one);
            }
            out = out.add(&term);
        }
        out
    }

    /// Restriction to the sub-simplex spanned by the listed local vertices,
    /// expressed in the sub-simplex barycentric coordinates (in listed order).
    pub fn restrict(&self, vertices: &[usize]) -> Self {
        let sub_dim = vertices.len() - 1;
        let mut out = Self::zero(sub_dim);
        'terms: for (a, c) in &self.terms {
            let mut b = [0u32; 4];
            for i in 0..=self.dim {
                match vertices.iter().position(|&v| v == i) {
                    Some(p) => b[p] = a[i],
                    None if a[i] > 0 => continue 'terms,
                    None => {}
                }
            }
            out.insert(b, *c);
        }
        out
    }
}

/// Nodal Lagrange shape function of degree `k` for the node with barycentric
/// multi-index `alpha` (`|α| = k`): `Π_i Π_{m<α_i} (kλ_i − m)/(m + 1)`.
pub fn lagrange_shape(dim: usize, k: u32, alpha: &MultiIndex) -> BarycentricPoly {
    let mut p = BarycentricPoly::constant(dim, 1.0);
    for i in 0..=dim {
        for m in 0..alpha[i] {
            let factor = BarycentricPoly::lambda(dim, i)
                .scale(f64::from(k))
                .add(&BarycentricPoly::constant(dim, -f64::from(m)))
                .scale(1.0 / f64::from(m + 1));
            p = p.mul(&factor);
        }
    }
    p
}
