//! Sparse multivariate polynomials and the moment-side machinery built on
//! them: graded-lexicographic monomial indexing, the Riesz linear functional,
//! and the structure of moment and localizing matrices.
//!
//! The graded-lex order is the canonical serialization order everywhere in
//! this crate: monomials are sorted by total degree first, then
//! lexicographically (earlier variables dominate) within a degree. For two
//! variables the sequence starts `1, x1, x2, x1^2, x1*x2, x2^2, ...`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Binomial coefficient as `usize`; saturates are not needed at the sizes
/// this crate touches (degree <= 8, dimension <= ~30).
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// Number of monomials in `d` variables of total degree at most `e`.
pub fn basis_size(d: usize, e: usize) -> usize {
    binomial(d + e, e)
}

/// A monomial as an exponent vector, one entry per decision variable.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial(pub Vec<u8>);

impl Monomial {
    pub fn constant(d: usize) -> Self {
        Monomial(vec![0; d])
    }

    pub fn var(d: usize, i: usize) -> Self {
        let mut e = vec![0; d];
        e[i] = 1;
        Monomial(e)
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> usize {
        self.0.iter().map(|&e| e as usize).sum()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.0.len(), other.0.len());
        Monomial(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(&a, &b)| a + b)
                .collect(),
        )
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(point)
            .map(|(&e, &x)| x.powi(e as i32))
            .product()
    }
}

/// Graded-lex index of a monomial: degree-sorted, lexicographic within a
/// degree with earlier variables ranked higher. The constant monomial maps
/// to 0. Inverse of [`grlex_monomial`].
pub fn grlex_index(m: &Monomial) -> usize {
    let d = m.nvars();
    let deg = m.degree();
    let mut idx = if deg == 0 { 0 } else { binomial(d + deg - 1, d) };
    // Rank within the degree: count compositions that precede m.
    let mut rem = deg;
    for pos in 0..d.saturating_sub(1) {
        let a = m.0[pos] as usize;
        let parts = d - pos - 1;
        for v in (a + 1)..=rem {
            idx += binomial(rem - v + parts - 1, parts - 1);
        }
        rem -= a;
    }
    idx
}

/// Monomial at graded-lex position `idx` among monomials in `d` variables.
pub fn grlex_monomial(d: usize, idx: usize) -> Monomial {
    // Locate the degree block.
    let mut deg = 0;
    while binomial(d + deg, d) <= idx {
        deg += 1;
    }
    let mut r = idx - if deg == 0 { 0 } else { binomial(d + deg - 1, d) };
    let mut exps = vec![0u8; d];
    let mut rem = deg;
    for pos in 0..d.saturating_sub(1) {
        let parts = d - pos - 1;
        for v in (0..=rem).rev() {
            let cnt = binomial(rem - v + parts - 1, parts - 1);
            if r < cnt {
                exps[pos] = v as u8;
                rem -= v;
                break;
            }
            r -= cnt;
        }
    }
    if d > 0 {
        exps[d - 1] = rem as u8;
    }
    Monomial(exps)
}

/// All monomials in `d` variables of degree at most `e`, in graded-lex order.
pub fn monomials_up_to(d: usize, e: usize) -> Vec<Monomial> {
    let n = basis_size(d, e);
    (0..n).map(|i| grlex_monomial(d, i)).collect()
}

/// A sparse multivariate polynomial with real coefficients.
///
/// No zero coefficients are stored; evaluation equals the sum of
/// `coefficient * monomial(point)` over stored terms.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    d: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(d: usize) -> Self {
        Polynomial {
            d,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(d: usize, c: f64) -> Self {
        let mut p = Self::zero(d);
        p.add_term(Monomial::constant(d), c);
        p
    }

    pub fn var(d: usize, i: usize) -> Self {
        let mut p = Self::zero(d);
        p.add_term(Monomial::var(d, i), 1.0);
        p
    }

    /// `c0 + sum_i coeffs[i] * x_i`.
    pub fn affine(d: usize, c0: f64, coeffs: &[(usize, f64)]) -> Self {
        let mut p = Self::constant(d, c0);
        for &(i, c) in coeffs {
            p.add_term(Monomial::var(d, i), c);
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.d
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(|m| m.degree()).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn add_term(&mut self, m: Monomial, c: f64) {
        debug_assert_eq!(m.nvars(), self.d);
        if c == 0.0 {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if *o.get() == 0.0 {
                    o.remove();
                }
            }
        }
    }

    pub fn add_scaled(&mut self, other: &Polynomial, c: f64) {
        for (m, v) in other.terms() {
            self.add_term(m.clone(), c * v);
        }
    }

    pub fn scale(&mut self, c: f64) {
        if c == 0.0 {
            self.terms.clear();
        } else {
            for v in self.terms.values_mut() {
                *v *= c;
            }
        }
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero(self.d);
        for (ma, ca) in self.terms() {
            for (mb, cb) in other.terms() {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        out
    }

    pub fn square(&self) -> Polynomial {
        self.mul(self)
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.terms().map(|(m, c)| c * m.eval(point)).sum()
    }

    /// Rewrites the polynomial under the substitution `x_i -> scale_i * x_i`.
    pub fn rescale_vars(&self, scales: &[f64]) -> Polynomial {
        let mut out = Polynomial::zero(self.d);
        for (m, c) in self.terms() {
            let factor: f64 = m
                .0
                .iter()
                .zip(scales)
                .map(|(&e, &s)| s.powi(e as i32))
                .product();
            out.add_term(m.clone(), c * factor);
        }
        out
    }

    /// One term per line, `coefficient exponent-vector`, graded-lex order.
    pub fn to_text(&self) -> String {
        let mut keyed: Vec<(usize, &Monomial, f64)> = self
            .terms()
            .map(|(m, c)| (grlex_index(m), m, c))
            .collect();
        keyed.sort_by_key(|&(i, _, _)| i);
        let mut s = String::new();
        for (_, m, c) in keyed {
            let _ = write!(s, "{c:.17e}");
            for e in &m.0 {
                let _ = write!(s, " {e}");
            }
            s.push('\n');
        }
        s
    }

    /// Parses the [`to_text`](Self::to_text) format; `d` fixes the variable
    /// count every line must carry.
    pub fn from_text(text: &str, d: usize) -> Result<Polynomial> {
        let mut p = Polynomial::zero(d);
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let c: f64 = it
                .next()
                .ok_or_else(|| Error::Parse("empty term line".into()))?
                .parse()
                .map_err(|e| Error::Parse(format!("bad coefficient: {e}")))?;
            let exps: Vec<u8> = it
                .map(|t| t.parse::<u8>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("bad exponent: {e}")))?;
            if exps.len() != d {
                return Err(Error::Parse(format!(
                    "term has {} exponents, expected {d}",
                    exps.len()
                )));
            }
            p.add_term(Monomial(exps), c);
        }
        Ok(p)
    }
}

/// Sparse linear form over moment-vector indices; kept sorted by index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearForm(pub Vec<(usize, f64)>);

impl LinearForm {
    /// Builds a form from unsorted index/coefficient pairs, combining
    /// duplicates and dropping zeros.
    pub fn new(pairs: Vec<(usize, f64)>) -> Self {
        Self::from_pairs(pairs)
    }

    pub fn apply(&self, mu: &[f64]) -> f64 {
        self.0.iter().map(|&(i, c)| c * mu[i]).sum()
    }

    pub fn max_index(&self) -> usize {
        self.0.iter().map(|&(i, _)| i).max().unwrap_or(0)
    }

    fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.sort_by_key(|&(i, _)| i);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(pairs.len());
        for (i, c) in pairs {
            match out.last_mut() {
                Some((j, v)) if *j == i => *v += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|&(_, c)| c != 0.0);
        LinearForm(out)
    }
}

/// Riesz linear functional of `p`: the sparse form whose application to a
/// moment vector of order `2h >= deg(p)` mirrors evaluation of `p`.
pub fn riesz(p: &Polynomial, max_degree: usize) -> Result<LinearForm> {
    if p.degree() > max_degree {
        return Err(Error::DegreeOverflow {
            found: p.degree(),
            bound: max_degree,
        });
    }
    Ok(LinearForm::from_pairs(
        p.terms().map(|(m, c)| (grlex_index(m), c)).collect(),
    ))
}

/// Symmetric matrix whose cells are linear forms over moment indices.
#[derive(Clone, Debug)]
pub struct MatrixStructure {
    dim: usize,
    cells: Vec<LinearForm>,
}

impl MatrixStructure {
    /// Builds a structure from row-major cells; `cells.len()` must equal
    /// `dim * dim` and the layout must be symmetric.
    pub fn from_cells(dim: usize, cells: Vec<LinearForm>) -> Self {
        assert_eq!(cells.len(), dim * dim);
        let s = MatrixStructure { dim, cells };
        debug_assert!((0..dim).all(|i| (0..dim).all(|j| s.cell(i, j) == s.cell(j, i))));
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell(&self, i: usize, j: usize) -> &LinearForm {
        &self.cells[i * self.dim + j]
    }

    /// Largest moment index referenced by any cell.
    pub fn max_index(&self) -> usize {
        self.cells.iter().map(|c| c.max_index()).max().unwrap_or(0)
    }

    /// Moment matrix `M_h`: cell `(i, j)` is the moment of `m_i * m_j` over
    /// the degree-`h` monomial basis. Dimension `C(d + h, h)`.
    pub fn moment(d: usize, h: usize) -> Self {
        let basis = monomials_up_to(d, h);
        let dim = basis.len();
        let mut cells = Vec::with_capacity(dim * dim);
        for bi in &basis {
            for bj in &basis {
                cells.push(LinearForm(vec![(grlex_index(&bi.mul(bj)), 1.0)]));
            }
        }
        MatrixStructure { dim, cells }
    }

    /// Localizing matrix `M_{h_q}(q mu)`: cell `(i, j)` is the Riesz form of
    /// `q * m_i * m_j` over the degree-`h_q` basis.
    pub fn localizing(q: &Polynomial, d: usize, h_q: usize) -> Self {
        let basis = monomials_up_to(d, h_q);
        let dim = basis.len();
        let mut cells = Vec::with_capacity(dim * dim);
        for bi in &basis {
            for bj in &basis {
                let prod = bi.mul(bj);
                let pairs = q
                    .terms()
                    .map(|(m, c)| (grlex_index(&m.mul(&prod)), c))
                    .collect();
                cells.push(LinearForm::from_pairs(pairs));
            }
        }
        MatrixStructure { dim, cells }
    }

    /// Assembles the numeric matrix at a concrete moment vector.
    pub fn assemble(&self, mu: &[f64]) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.dim, self.dim, |i, j| self.cell(i, j).apply(mu))
    }
}

/// Pseudo-moment sequence indexed by graded-lex monomials of degree <= 2h.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentVector {
    pub d: usize,
    pub h: usize,
    pub values: Vec<f64>,
}

impl MomentVector {
    /// Moment vector of the point mass at `point`: entry `i` is the value of
    /// the `i`-th monomial at `point`.
    pub fn dirac(point: &[f64], h: usize) -> Self {
        let d = point.len();
        let values = monomials_up_to(d, 2 * h)
            .iter()
            .map(|m| m.eval(point))
            .collect();
        MomentVector { d, h, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
