//! Polynomial features over `(t_1, …, t_K, x_1, …, x_n)` and the symbolic
//! machinery used to turn a polynomial costate field back into a value
//! polynomial.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All monomials of total degree `≤ degree`, constant included, ordered by
/// total degree and then by descending exponent tuple.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolynomialBasis {
    nvars: usize,
    degree: u32,
    monomials: Vec<Vec<u32>>,
}

fn compositions(nvars: usize, total: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if prefix.len() == nvars - 1 {
        let used: u32 = prefix.iter().sum();
        let mut e = prefix.clone();
        e.push(total - used);
        out.push(e);
        return;
    }
    let used: u32 = prefix.iter().sum();
    for e in (0..=total - used).rev() {
        prefix.push(e);
        compositions(nvars, total, prefix, out);
        prefix.pop();
    }
}

fn canonical_cmp(a: &[u32], b: &[u32]) -> std::cmp::Ordering {
    let da: u32 = a.iter().sum();
    let db: u32 = b.iter().sum();
    da.cmp(&db).then_with(|| b.cmp(a))
}

impl PolynomialBasis {
    pub fn enumerate(nvars: usize, degree: u32) -> Result<Self> {
        if nvars == 0 || degree == 0 {
            return Err(Error::Validation(format!(
                "basis needs nvars >= 1 and degree >= 1 (got {}, {})",
                nvars, degree
            )));
        }
        let mut monomials = Vec::new();
        for total in 0..=degree {
            compositions(nvars, total, &mut Vec::new(), &mut monomials);
        }
        Ok(PolynomialBasis {
            nvars,
            degree,
            monomials,
        })
    }

    /// Rebuilds a basis from a serialized exponent table, checking that it
    /// is the canonical one.
    pub fn from_table(nvars: usize, degree: u32, monomials: Vec<Vec<u32>>) -> Result<Self> {
        let canonical = PolynomialBasis::enumerate(nvars, degree)?;
        if canonical.monomials != monomials {
            return Err(Error::Parse("basis exponent table is not canonical".into()));
        }
        Ok(canonical)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn monomials(&self) -> &[Vec<u32>] {
        &self.monomials
    }

    pub fn index_of(&self, exponents: &[u32]) -> Option<usize> {
        self.monomials.iter().position(|e| e == exponents)
    }

    /// Writes `φ(vars)` into `out`; `vars` is `(t_1, …, t_K, x_1, …, x_n)`.
    pub fn eval_into(&self, vars: &[f64], out: &mut [f64]) {
        debug_assert_eq!(vars.len(), self.nvars);
        let d = self.degree as usize;
        // powers[v * (d + 1) + p] = vars[v]^p
        let mut powers = vec![1.0; self.nvars * (d + 1)];
        for (v, &value) in vars.iter().enumerate() {
            for p in 1..=d {
                powers[v * (d + 1) + p] = powers[v * (d + 1) + p - 1] * value;
            }
        }
        for (slot, e) in out.iter_mut().zip(&self.monomials) {
            *slot = e
                .iter()
                .enumerate()
                .map(|(v, &p)| powers[v * (d + 1) + p as usize])
                .product();
        }
    }

    /// `φ(t_sw, x)`.
    pub fn eval(&self, tsw: &[f64], x: &[f64]) -> DVector<f64> {
        let mut vars = Vec::with_capacity(tsw.len() + x.len());
        vars.extend_from_slice(tsw);
        vars.extend_from_slice(x);
        let mut out = DVector::zeros(self.len());
        self.eval_into(&vars, out.as_mut_slice());
        out
    }
}

/// Sparse polynomial `Σ c · Π v_i^{e_i}` in canonical term order.
#[derive(Clone, Debug, PartialEq)]
pub struct PolynomialExpression {
    nvars: usize,
    terms: Vec<(f64, Vec<u32>)>,
}

impl PolynomialExpression {
    pub fn zero(nvars: usize) -> Self {
        PolynomialExpression {
            nvars,
            terms: Vec::new(),
        }
    }

    /// Merges duplicate exponents and drops exact zeros.
    pub fn from_terms(nvars: usize, terms: impl IntoIterator<Item = (f64, Vec<u32>)>) -> Self {
        let mut acc: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (c, e) in terms {
            assert_eq!(e.len(), nvars, "exponent tuple length");
            *acc.entry(e).or_insert(0.0) += c;
        }
        let mut terms: Vec<(f64, Vec<u32>)> = acc
            .into_iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|(e, c)| (c, e))
            .collect();
        terms.sort_by(|a, b| canonical_cmp(&a.1, &b.1));
        PolynomialExpression { nvars, terms }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> &[(f64, Vec<u32>)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn total_degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|(_, e)| e.iter().sum())
            .max()
            .unwrap_or(0)
    }

    pub fn coefficient(&self, exponents: &[u32]) -> f64 {
        self.terms
            .iter()
            .find(|(_, e)| e == exponents)
            .map_or(0.0, |(c, _)| *c)
    }

    /// Euclidean norm of the coefficient vector.
    pub fn norm(&self) -> f64 {
        self.terms.iter().map(|(c, _)| c * c).sum::<f64>().sqrt()
    }

    pub fn evaluate(&self, vars: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, e)| {
                c * e
                    .iter()
                    .zip(vars)
                    .map(|(&p, &v)| v.powi(p as i32))
                    .product::<f64>()
            })
            .sum()
    }

    pub fn derivative(&self, var: usize) -> PolynomialExpression {
        PolynomialExpression::from_terms(
            self.nvars,
            self.terms.iter().filter(|(_, e)| e[var] > 0).map(|(c, e)| {
                let mut e2 = e.clone();
                e2[var] -= 1;
                (c * e[var] as f64, e2)
            }),
        )
    }

    pub fn sub(&self, other: &PolynomialExpression) -> PolynomialExpression {
        PolynomialExpression::from_terms(
            self.nvars,
            self.terms
                .iter()
                .cloned()
                .chain(other.terms.iter().map(|(c, e)| (-c, e.clone()))),
        )
    }

    /// Fixes every variable except `keep` and returns the ascending
    /// coefficients of the resulting univariate polynomial.
    pub fn restrict(&self, keep: usize, values: &[f64]) -> Vec<f64> {
        let deg = self.terms.iter().map(|(_, e)| e[keep]).max().unwrap_or(0) as usize;
        let mut coeffs = vec![0.0; deg + 1];
        for (c, e) in &self.terms {
            let rest: f64 = e
                .iter()
                .enumerate()
                .filter(|(v, _)| *v != keep)
                .map(|(v, &p)| values[v].powi(p as i32))
                .product();
            coeffs[e[keep] as usize] += c * rest;
        }
        coeffs
    }

    /// Costate weights `W` (`m_λ × n`) whose columns are the coefficients of
    /// `∂V/∂x_i` in `basis` order, treating the first `nswitch` variables as
    /// parameters.
    pub fn gradient_weights(&self, basis: &PolynomialBasis, nswitch: usize) -> Result<DMatrix<f64>> {
        let n = self.nvars - nswitch;
        let mut w = DMatrix::zeros(basis.len(), n);
        for i in 0..n {
            for (c, e) in self.derivative(nswitch + i).terms {
                let row = basis.index_of(&e).ok_or_else(|| {
                    Error::Dimension(format!("monomial {:?} not in the basis", e))
                })?;
                w[(row, i)] = c;
            }
        }
        Ok(w)
    }
}

/// Line integral of `λ(t, x) = Wᵀ φ(t, x)` from `x = 0` along coordinate
/// axes taken in `order`. Variables `0..nswitch` are held symbolically.
fn integrate_along(
    basis: &PolynomialBasis,
    weights: &DMatrix<f64>,
    nswitch: usize,
    order: &[usize],
) -> PolynomialExpression {
    let nvars = basis.nvars();
    let mut terms = Vec::new();
    for (step, &i) in order.iter().enumerate() {
        // Coordinates not yet visited are zero along this leg.
        let later = &order[step + 1..];
        let var = nswitch + i;
        for (row, e) in basis.monomials().iter().enumerate() {
            let c = weights[(row, i)];
            if c == 0.0 || later.iter().any(|&l| e[nswitch + l] > 0) {
                continue;
            }
            let mut e2 = e.clone();
            e2[var] += 1;
            terms.push((c / e2[var] as f64, e2));
        }
    }
    PolynomialExpression::from_terms(nvars, terms)
}

/// Value polynomial from a costate field, integrated from the origin along
/// `x_1`, then `x_2`, and so on. The integration constant (a function of
/// the switching times alone) is zero.
pub fn integrate_costate_field(
    basis: &PolynomialBasis,
    weights: &DMatrix<f64>,
    nswitch: usize,
) -> Result<PolynomialExpression> {
    let n = basis.nvars().checked_sub(nswitch).unwrap_or(0);
    if weights.nrows() != basis.len() || weights.ncols() != n || n == 0 {
        return Err(Error::Dimension(format!(
            "weights {}x{} for a basis of {} monomials and {} states",
            weights.nrows(),
            weights.ncols(),
            basis.len(),
            n
        )));
    }
    if weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("costate weights".into()));
    }
    let order: Vec<usize> = (0..n).collect();
    Ok(integrate_along(basis, weights, nswitch, &order))
}

/// Coefficient-norm gap between the forward-axis and reverse-axis line
/// integrals. Zero for conservative fields.
pub fn curl_defect(basis: &PolynomialBasis, weights: &DMatrix<f64>, nswitch: usize) -> Result<f64> {
    let forward = integrate_costate_field(basis, weights, nswitch)?;
    let n = weights.ncols();
    let reverse: Vec<usize> = (0..n).rev().collect();
    let backward = integrate_along(basis, weights, nswitch, &reverse);
    Ok(forward.sub(&backward).norm())
}

fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

fn trim(coeffs: &[f64]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut out = coeffs.to_vec();
    while out.len() > 1 && out.last().unwrap().abs() <= 1e-14 * scale {
        out.pop();
    }
    out
}

/// Real roots of an ascending-coefficient polynomial.
fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let c = trim(coeffs);
    let roots = match c.len() {
        0 | 1 => Vec::new(),
        2 => vec![-c[0] / c[1]],
        3 => {
            let (a, b, cc) = (c[2], c[1], c[0]);
            let disc = b * b - 4.0 * a * cc;
            if disc < 0.0 {
                Vec::new()
            } else {
                // Numerically stable pair.
                let q = -0.5 * (b + b.signum() * disc.sqrt());
                let mut r = Vec::new();
                if q != 0.0 {
                    r.push(cc / q);
                    r.push(q / a);
                } else {
                    r.push(0.0);
                }
                r
            }
        }
        4 => cubic_roots(c[3], c[2], c[1], c[0]),
        _ => companion_roots(&c),
    };
    roots
        .into_iter()
        .filter(|r| r.is_finite())
        .map(|r| newton_polish(&c, r))
        .collect()
}

fn cubic_roots(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    let (b, c, d) = (b / a, c / a, d / a);
    // t = y − b/3, y³ + p y + q = 0
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let shift = -b / 3.0;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if disc > 0.0 {
        let s = disc.sqrt();
        vec![(-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt() + shift]
    } else if p == 0.0 {
        vec![shift]
    } else {
        let r = (-p / 3.0).sqrt();
        let phi = (-q / (2.0 * r * r * r)).clamp(-1.0, 1.0).acos();
        (0..3)
            .map(|k| 2.0 * r * ((phi - 2.0 * std::f64::consts::PI * k as f64) / 3.0).cos() + shift)
            .collect()
    }
}

fn companion_roots(c: &[f64]) -> Vec<f64> {
    let deg = c.len() - 1;
    let lead = c[deg];
    let mut m = DMatrix::zeros(deg, deg);
    for i in 1..deg {
        m[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        m[(i, deg - 1)] = -c[i] / lead;
    }
    m.complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-8 * z.re.abs().max(1.0))
        .map(|z| z.re)
        .collect()
}

fn newton_polish(c: &[f64], mut t: f64) -> f64 {
    let dc: Vec<f64> = c.iter().enumerate().skip(1).map(|(i, v)| v * i as f64).collect();
    for _ in 0..3 {
        let d = horner(&dc, t);
        if d == 0.0 {
            break;
        }
        let step = horner(c, t) / d;
        if !step.is_finite() {
            break;
        }
        t -= step;
    }
    t
}

/// Global minimizer on `[lo, hi]` of a univariate polynomial (ascending
/// coefficients, degree ≤ 6): stationary points plus both endpoints,
/// smallest argument on ties.
pub fn minimize_univariate_poly(coeffs: &[f64], lo: f64, hi: f64) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::Validation(format!("empty interval [{}, {}]", lo, hi)));
    }
    if trim(coeffs).len() > 7 {
        return Err(Error::Unsupported("polynomials above degree 6".into()));
    }
    let deriv: Vec<f64> = coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, v)| v * i as f64)
        .collect();
    let mut candidates = vec![lo, hi];
    candidates.extend(real_roots(&deriv).into_iter().filter(|r| *r > lo && *r < hi));
    candidates.sort_by(f64::total_cmp);
    // Values within rounding of each other count as ties.
    let reach = lo.abs().max(hi.abs()).max(1.0);
    let slack = 1e-12
        * coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c.abs() * reach.powi(i as i32))
            .sum::<f64>();
    let mut best = candidates[0];
    let mut best_val = horner(coeffs, best);
    for &t in &candidates[1..] {
        let v = horner(coeffs, t);
        if v < best_val - slack {
            best = t;
            best_val = v;
        }
    }
    Ok(best)
}
