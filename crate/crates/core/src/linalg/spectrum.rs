//! Full spectrum of a general (non-symmetric) real matrix.
//!
//! Mixing matrices composed with permutations are routinely defective (a
//! zero eigenvalue with Jordan blocks), and floating-point QR places such
//! eigenvalues at `ε^{1/k}` instead of zero. Small matrices therefore go
//! through an exact route: every `f64` entry is a dyadic rational, so the
//! characteristic polynomial is computed exactly over the integers
//! (Berkowitz, division free), split into square-free factors over ℚ (Yun),
//! and only the simple roots of those factors are located numerically
//! (Aberth–Ehrlich). Larger matrices fall back to a real Schur decomposition.

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use super::Matrix;
use crate::error::{dim_err, Result};

/// Largest dimension handled by the exact characteristic-polynomial route.
pub const EXACT_MAX_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigenvalue {
    pub value: Complex64,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SpectrumMethod {
    ExactCharpoly,
    Schur,
}

/// Eigenvalue moduli in descending order, repeated by algebraic
/// multiplicity.
pub fn eigenvalue_magnitudes(m: &Matrix) -> Result<(Vec<f64>, SpectrumMethod)> {
    let (eigs, method) = eigenvalues(m)?;
    let mut mags: Vec<f64> = eigs
        .iter()
        .flat_map(|e| std::iter::repeat_n(e.value.norm(), e.multiplicity))
        .collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    Ok((mags, method))
}

pub fn eigenvalues(m: &Matrix) -> Result<(Vec<Eigenvalue>, SpectrumMethod)> {
    if !m.is_square() {
        return dim_err(format!("spectrum of a {}x{} matrix", m.rows(), m.cols()));
    }
    m.ensure_finite("matrix")?;
    if m.rows() <= EXACT_MAX_DIM {
        Ok((exact_eigenvalues(m), SpectrumMethod::ExactCharpoly))
    } else {
        Ok((schur_eigenvalues(m), SpectrumMethod::Schur))
    }
}

fn schur_eigenvalues(m: &Matrix) -> Vec<Eigenvalue> {
    let dm = DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice());
    dm.complex_eigenvalues()
        .iter()
        .map(|z| Eigenvalue {
            value: Complex64::new(z.re, z.im),
            multiplicity: 1,
        })
        .collect()
}

fn exact_eigenvalues(m: &Matrix) -> Vec<Eigenvalue> {
    let n = m.rows();
    if n == 0 {
        return Vec::new();
    }
    let poly = charpoly_rational(m);
    // Exact zero roots first.
    let mut low = 0;
    while low < poly.len() && poly[low].is_zero() {
        low += 1;
    }
    let mut out = Vec::new();
    if low > 0 {
        out.push(Eigenvalue {
            value: Complex64::new(0.0, 0.0),
            multiplicity: low,
        });
    }
    let rest: Poly = poly[low..].to_vec();
    for (mult, factor) in square_free_factors(&rest) {
        for root in simple_roots(&factor) {
            out.push(Eigenvalue {
                value: root,
                multiplicity: mult,
            });
        }
    }
    out
}

/// Polynomial over ℚ, coefficients in ascending degree order.
type Poly = Vec<BigRational>;

/// Characteristic polynomial `det(xI − m)`, ascending coefficients.
pub fn charpoly_rational(m: &Matrix) -> Poly {
    let n = m.rows();
    let (ints, shift) = to_scaled_integers(m.as_slice());
    let a = |r: usize, c: usize| &ints[r * n + c];
    let desc = berkowitz(n, a);
    // desc[i] is the coefficient of x^{n-i} for the integer matrix 2^shift·m;
    // rescale to the original matrix: divide by 2^{shift·i}.
    let mut asc = vec![BigRational::zero(); n + 1];
    for (i, coef) in desc.into_iter().enumerate() {
        let denom = BigInt::one() << (shift * i);
        asc[n - i] = BigRational::new(coef, denom);
    }
    asc
}

/// Maps every value to an integer after multiplying by a common power of
/// two. Returns the integers and that power.
fn to_scaled_integers(values: &[f64]) -> (Vec<BigInt>, usize) {
    let parts: Vec<(BigInt, i32)> = values.iter().map(|&x| decode(x)).collect();
    let shift = parts
        .iter()
        .filter(|(m, _)| !m.is_zero())
        .map(|&(_, e)| (-e).max(0) as usize)
        .max()
        .unwrap_or(0);
    let ints = parts
        .into_iter()
        .map(|(mant, e)| {
            if mant.is_zero() {
                mant
            } else {
                let up = e + shift as i32;
                debug_assert!(up >= 0);
                mant << up as usize
            }
        })
        .collect();
    (ints, shift)
}

/// `x = mantissa · 2^exponent` exactly.
fn decode(x: f64) -> (BigInt, i32) {
    if x == 0.0 {
        return (BigInt::zero(), 0);
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 0 { 1i64 } else { -1 };
    let exp_bits = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    let (mant, exp) = if exp_bits == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp_bits - 1075)
    };
    // Strip trailing zero bits to keep the common shift small.
    let tz = mant.trailing_zeros();
    (BigInt::from(sign) * BigInt::from(mant >> tz), exp + tz as i32)
}

/// Division-free characteristic polynomial over the integers. Returns
/// coefficients in descending degree order, leading coefficient 1.
fn berkowitz<'a>(n: usize, a: impl Fn(usize, usize) -> &'a BigInt) -> Vec<BigInt> {
    let mut poly = vec![BigInt::one()];
    for r in 0..n {
        // Leading principal block is r×r; new row/column index r.
        let mut column = Vec::with_capacity(r + 2);
        column.push(BigInt::one());
        column.push(-a(r, r).clone());
        let mut v: Vec<BigInt> = (0..r).map(|i| a(i, r).clone()).collect();
        for k in 0..r {
            let rv: BigInt = (0..r).map(|j| a(r, j) * &v[j]).sum();
            column.push(-rv);
            if k + 1 < r {
                v = (0..r)
                    .map(|i| (0..r).map(|j| a(i, j) * &v[j]).sum())
                    .collect();
            }
        }
        // Lower-triangular Toeplitz (r+2)×(r+1) product with previous poly.
        let next: Vec<BigInt> = (0..r + 2)
            .map(|i| {
                (0..poly.len())
                    .filter(|&j| j <= i)
                    .map(|j| &column[i - j] * &poly[j])
                    .sum()
            })
            .collect();
        poly = next;
    }
    poly
}

fn trim(p: &mut Poly) {
    while p.len() > 1 && p.last().is_some_and(Zero::is_zero) {
        p.pop();
    }
}

fn degree(p: &Poly) -> usize {
    p.len().saturating_sub(1)
}

fn is_constant(p: &Poly) -> bool {
    degree(p) == 0
}

fn monic(mut p: Poly) -> Poly {
    trim(&mut p);
    if let Some(lead) = p.last().cloned() {
        if !lead.is_zero() {
            p.iter_mut().for_each(|c| *c = &*c / &lead);
        }
    }
    p
}

fn derivative(p: &Poly) -> Poly {
    if p.len() <= 1 {
        return vec![BigRational::zero()];
    }
    p.iter()
        .enumerate()
        .skip(1)
        .map(|(k, c)| c * BigRational::from_integer(BigInt::from(k)))
        .collect()
}

fn sub(a: &Poly, b: &Poly) -> Poly {
    let len = a.len().max(b.len());
    let zero = BigRational::zero();
    let mut out: Poly = (0..len)
        .map(|i| a.get(i).unwrap_or(&zero) - b.get(i).unwrap_or(&zero))
        .collect();
    trim(&mut out);
    out
}

fn divmod(a: &Poly, b: &Poly) -> (Poly, Poly) {
    let mut rem = a.clone();
    trim(&mut rem);
    let db = degree(b);
    let lead = b[db].clone();
    if degree(&rem) < db {
        return (vec![BigRational::zero()], rem);
    }
    let mut quot = vec![BigRational::zero(); degree(&rem) - db + 1];
    while !(rem.len() == 1 && rem[0].is_zero()) && degree(&rem) >= db {
        let shift = degree(&rem) - db;
        let factor = &rem[degree(&rem)] / &lead;
        for (i, c) in b.iter().enumerate() {
            rem[i + shift] = &rem[i + shift] - &factor * c;
        }
        quot[shift] = factor;
        rem.pop();
        trim(&mut rem);
        if rem.is_empty() {
            rem.push(BigRational::zero());
        }
    }
    (quot, rem)
}

fn gcd(a: &Poly, b: &Poly) -> Poly {
    let mut x = monic(a.clone());
    let mut y = monic(b.clone());
    while !(y.len() == 1 && y[0].is_zero()) {
        let (_, r) = divmod(&x, &y);
        x = y;
        y = monic(r);
    }
    monic(x)
}

/// Yun's square-free factorisation: `p = Π fᵢ^i` with each `fᵢ` square free.
fn square_free_factors(p: &Poly) -> Vec<(usize, Poly)> {
    let p = monic(p.clone());
    if is_constant(&p) {
        return Vec::new();
    }
    let dp = derivative(&p);
    let a = gcd(&p, &dp);
    let mut b = divmod(&p, &a).0;
    let c = divmod(&dp, &a).0;
    let mut d = sub(&c, &derivative(&b));
    let mut out = Vec::new();
    let mut i = 1;
    while !is_constant(&b) {
        let f = gcd(&b, &d);
        b = divmod(&b, &f).0;
        let c = divmod(&d, &f).0;
        d = sub(&c, &derivative(&b));
        if !is_constant(&f) {
            out.push((i, f));
        }
        i += 1;
    }
    out
}

/// Roots of a square-free rational polynomial by Aberth–Ehrlich iteration
/// followed by Newton polishing.
fn simple_roots(p: &Poly) -> Vec<Complex64> {
    let p = monic(p.clone());
    let deg = degree(&p);
    let coef: Vec<f64> = p.iter().map(|c| c.to_f64().unwrap_or(0.0)).collect();
    match deg {
        0 => return Vec::new(),
        1 => return vec![Complex64::new(-coef[0], 0.0)],
        _ => {}
    }
    let cauchy = 1.0 + coef[..deg].iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut z: Vec<Complex64> = (0..deg)
        .map(|k| {
            let theta = 2.0 * std::f64::consts::PI * (k as f64 + 0.25) / deg as f64 + 0.4;
            Complex64::from_polar(0.5 * cauchy, theta)
        })
        .collect();
    for _ in 0..1000 {
        let mut worst = 0.0f64;
        for k in 0..deg {
            let (val, dval) = horner(&coef, z[k]);
            if val == Complex64::zero() {
                continue;
            }
            let ratio = val / dval;
            let repulsion: Complex64 = (0..deg)
                .filter(|&j| j != k)
                .map(|j| Complex64::one() / (z[k] - z[j]))
                .sum();
            let step = ratio / (Complex64::one() - ratio * repulsion);
            z[k] -= step;
            worst = worst.max(step.norm() / z[k].norm().max(1e-300));
        }
        if worst < 1e-15 {
            break;
        }
    }
    // Newton polishing against the exact coefficients.
    for root in &mut z {
        for _ in 0..3 {
            let (val, dval) = horner_exact(&p, *root);
            if dval.norm() == 0.0 {
                break;
            }
            *root -= val / dval;
        }
    }
    z
}

fn horner(coef: &[f64], z: Complex64) -> (Complex64, Complex64) {
    let mut val = Complex64::zero();
    let mut dval = Complex64::zero();
    for &c in coef.iter().rev() {
        dval = dval * z + val;
        val = val * z + c;
    }
    (val, dval)
}

/// Horner evaluation with coefficients kept in extended form: each rational
/// is split into its nearest `f64` and the residual, which recovers accuracy
/// when coefficients are not exactly representable.
fn horner_exact(p: &Poly, z: Complex64) -> (Complex64, Complex64) {
    let mut val = Complex64::zero();
    let mut dval = Complex64::zero();
    for c in p.iter().rev() {
        let hi = c.to_f64().unwrap_or(0.0);
        let lo = BigRational::from_float(hi)
            .map(|h| (c - h).to_f64().unwrap_or(0.0))
            .unwrap_or(0.0);
        dval = dval * z + val;
        val = val * z + hi + lo;
    }
    (val, dval)
}
