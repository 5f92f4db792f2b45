//! Forward-mode dual numbers carrying derivatives with respect to the
//! structural parameter vector.
//!
//! The simulation code is written once over [`Scalar`]; running it with
//! `f64` gives plain values, with [`Dual1`] the pathwise gradient, and with
//! [`Dual2`] the gradient and Hessian. Tangents are stored in fixed-size
//! arrays of length [`MAX_PARAMS`], so duals are `Copy` and never allocate.
//! Unused trailing slots stay exactly zero.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{Error, Result};
use crate::randsrc::{inv_normal_cdf, norm_cdf, norm_pdf};

/// Largest supported parameter dimension.
pub const MAX_PARAMS: usize = 6;
const TRI: usize = MAX_PARAMS * (MAX_PARAMS + 1) / 2;

/// A real-like scalar the simulation pipeline can be evaluated over.
pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    /// A constant (zero derivatives).
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;

    /// Applies a scalar function given its value and first two derivatives at `self.value()`.
    fn chain(self, f: f64, df: f64, d2f: f64) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn one() -> Self {
        Self::cst(1.0)
    }

    fn exp(self) -> Self {
        let e = self.value().exp();
        self.chain(e, e, e)
    }

    fn ln(self) -> Result<Self> {
        let x = self.value();
        if !(x > 0.0) {
            return Err(Error::Domain {
                function: "ln",
                value: x,
            });
        }
        Ok(self.chain(x.ln(), 1.0 / x, -1.0 / (x * x)))
    }

    /// `ln(1 + self)`, accurate for small arguments.
    fn ln_1p(self) -> Result<Self> {
        let x = self.value();
        if !(x > -1.0) {
            return Err(Error::Domain {
                function: "ln_1p",
                value: x,
            });
        }
        let d = 1.0 / (1.0 + x);
        Ok(self.chain(x.ln_1p(), d, -d * d))
    }

    fn sqrt(self) -> Result<Self> {
        let x = self.value();
        if !(x > 0.0) {
            return Err(Error::Domain {
                function: "sqrt",
                value: x,
            });
        }
        let s = x.sqrt();
        Ok(self.chain(s, 0.5 / s, -0.25 / (s * x)))
    }

    fn recip(self) -> Result<Self> {
        let x = self.value();
        if x == 0.0 || !x.is_finite() {
            return Err(Error::Domain {
                function: "recip",
                value: x,
            });
        }
        Ok(self.chain(1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x)))
    }

    /// Division that rejects a zero denominator.
    fn try_div(self, rhs: Self) -> Result<Self> {
        if rhs.value() == 0.0 {
            return Err(Error::Domain {
                function: "div",
                value: 0.0,
            });
        }
        Ok(self / rhs)
    }

    /// Standard normal CDF.
    fn norm_cdf(self) -> Self {
        let x = self.value();
        let p = norm_pdf(x);
        self.chain(norm_cdf(x), p, -x * p)
    }

    /// Standard normal density.
    fn norm_pdf(self) -> Self {
        let x = self.value();
        let p = norm_pdf(x);
        self.chain(p, -x * p, (x * x - 1.0) * p)
    }

    /// Standard normal quantile; the argument must lie in (0, 1).
    fn inv_norm_cdf(self) -> Result<Self> {
        let x = inv_normal_cdf(self.value())?;
        let p = norm_pdf(x);
        if p == 0.0 {
            return Err(Error::Domain {
                function: "inv_norm_cdf",
                value: self.value(),
            });
        }
        Ok(self.chain(x, 1.0 / p, x / (p * p)))
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }

    #[inline]
    fn value(&self) -> f64 {
        *self
    }

    #[inline]
    fn chain(self, f: f64, _df: f64, _d2f: f64) -> Self {
        f
    }

    fn exp(self) -> Self {
        f64::exp(self)
    }
}

/// Value plus gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual1 {
    pub value: f64,
    pub grad: [f64; MAX_PARAMS],
}

/// Value, gradient and (packed upper-triangular) Hessian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual2 {
    pub value: f64,
    pub grad: [f64; MAX_PARAMS],
    hess: [f64; TRI],
}

#[inline]
const fn tri_index(k: usize, l: usize) -> usize {
    // k <= l, row-major packing of the upper triangle
    k * MAX_PARAMS - k * (k + 1) / 2 + l
}

const TRI_PAIRS: [(usize, usize); TRI] = {
    let mut out = [(0, 0); TRI];
    let mut k = 0;
    while k < MAX_PARAMS {
        let mut l = k;
        while l < MAX_PARAMS {
            out[tri_index(k, l)] = (k, l);
            l += 1;
        }
        k += 1;
    }
    out
};

impl Dual1 {
    pub fn constant(value: f64) -> Self {
        Dual1 {
            value,
            grad: [0.0; MAX_PARAMS],
        }
    }

    pub fn variable(value: f64, index: usize) -> Self {
        let mut d = Dual1::constant(value);
        d.grad[index] = 1.0;
        d
    }

    pub fn gradient(&self, dim: usize) -> Vec<f64> {
        self.grad[..dim].to_vec()
    }
}

impl Dual2 {
    pub fn constant(value: f64) -> Self {
        Dual2 {
            value,
            grad: [0.0; MAX_PARAMS],
            hess: [0.0; TRI],
        }
    }

    pub fn variable(value: f64, index: usize) -> Self {
        let mut d = Dual2::constant(value);
        d.grad[index] = 1.0;
        d
    }

    pub fn hess(&self, k: usize, l: usize) -> f64 {
        let (a, b) = if k <= l { (k, l) } else { (l, k) };
        self.hess[tri_index(a, b)]
    }

    /// Builds a dual from explicit parts; `hess` is read as a dense `dim x dim` matrix
    /// and symmetrised.
    pub fn from_parts(value: f64, grad: &[f64], hess: &[Vec<f64>]) -> Self {
        let mut d = Dual2::constant(value);
        d.grad[..grad.len()].copy_from_slice(grad);
        for (k, row) in hess.iter().enumerate() {
            for l in k..row.len() {
                d.hess[tri_index(k, l)] = 0.5 * (row[l] + hess[l][k]);
            }
        }
        d
    }

    pub fn to_dual1(&self) -> Dual1 {
        Dual1 {
            value: self.value,
            grad: self.grad,
        }
    }
}

/// Seeds a parameter vector: component `k` gets the `k`-th unit tangent.
pub fn seed_parameter<S: Seedable>(theta: &[f64]) -> Result<Vec<S>> {
    if theta.is_empty() {
        return Err(Error::invalid("parameter vector must be non-empty"));
    }
    if theta.len() > MAX_PARAMS {
        return Err(Error::invalid(format!(
            "at most {MAX_PARAMS} parameters supported, got {}",
            theta.len()
        )));
    }
    Ok(theta
        .iter()
        .enumerate()
        .map(|(k, &v)| S::seeded(v, k))
        .collect())
}

/// Scalars that can carry a seeded tangent direction.
pub trait Seedable: Scalar {
    fn seeded(value: f64, index: usize) -> Self;
}

impl Seedable for Dual1 {
    fn seeded(value: f64, index: usize) -> Self {
        Dual1::variable(value, index)
    }
}

impl Seedable for Dual2 {
    fn seeded(value: f64, index: usize) -> Self {
        Dual2::variable(value, index)
    }
}

/// Projects a second-order dual onto `(value, gradient, dense Hessian)`.
pub fn extract(d: &Dual2, dim: usize) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    let hess = (0..dim)
        .map(|k| (0..dim).map(|l| d.hess(k, l)).collect())
        .collect();
    (d.value, d.grad[..dim].to_vec(), hess)
}

impl Scalar for Dual1 {
    #[inline]
    fn cst(v: f64) -> Self {
        Dual1::constant(v)
    }

    #[inline]
    fn value(&self) -> f64 {
        self.value
    }

    #[inline]
    fn chain(self, f: f64, df: f64, _d2f: f64) -> Self {
        let mut grad = self.grad;
        for g in grad.iter_mut() {
            *g *= df;
        }
        Dual1 { value: f, grad }
    }
}

impl Scalar for Dual2 {
    #[inline]
    fn cst(v: f64) -> Self {
        Dual2::constant(v)
    }

    #[inline]
    fn value(&self) -> f64 {
        self.value
    }

    #[inline]
    fn chain(self, f: f64, df: f64, d2f: f64) -> Self {
        let mut out = Dual2::constant(f);
        for (o, g) in out.grad.iter_mut().zip(self.grad.iter()) {
            *o = df * g;
        }
        for (idx, &(k, l)) in TRI_PAIRS.iter().enumerate() {
            out.hess[idx] = df * self.hess[idx] + d2f * self.grad[k] * self.grad[l];
        }
        out
    }
}

// ---- arithmetic ---------------------------------------------------------

impl Add for Dual1 {
    type Output = Dual1;
    #[inline]
    fn add(mut self, rhs: Dual1) -> Dual1 {
        self.value += rhs.value;
        for (a, b) in self.grad.iter_mut().zip(rhs.grad.iter()) {
            *a += b;
        }
        self
    }
}

impl Sub for Dual1 {
    type Output = Dual1;
    #[inline]
    fn sub(mut self, rhs: Dual1) -> Dual1 {
        self.value -= rhs.value;
        for (a, b) in self.grad.iter_mut().zip(rhs.grad.iter()) {
            *a -= b;
        }
        self
    }
}

impl Mul for Dual1 {
    type Output = Dual1;
    #[inline]
    fn mul(self, rhs: Dual1) -> Dual1 {
        let mut grad = [0.0; MAX_PARAMS];
        for k in 0..MAX_PARAMS {
            grad[k] = self.grad[k] * rhs.value + rhs.grad[k] * self.value;
        }
        Dual1 {
            value: self.value * rhs.value,
            grad,
        }
    }
}

impl Div for Dual1 {
    type Output = Dual1;
    #[inline]
    fn div(self, rhs: Dual1) -> Dual1 {
        let value = self.value / rhs.value;
        let inv = 1.0 / rhs.value;
        let mut grad = [0.0; MAX_PARAMS];
        for k in 0..MAX_PARAMS {
            grad[k] = (self.grad[k] - value * rhs.grad[k]) * inv;
        }
        Dual1 { value, grad }
    }
}

impl Neg for Dual1 {
    type Output = Dual1;
    #[inline]
    fn neg(mut self) -> Dual1 {
        self.value = -self.value;
        for g in self.grad.iter_mut() {
            *g = -*g;
        }
        self
    }
}

impl Add for Dual2 {
    type Output = Dual2;
    #[inline]
    fn add(mut self, rhs: Dual2) -> Dual2 {
        self.value += rhs.value;
        for (a, b) in self.grad.iter_mut().zip(rhs.grad.iter()) {
            *a += b;
        }
        for (a, b) in self.hess.iter_mut().zip(rhs.hess.iter()) {
            *a += b;
        }
        self
    }
}

impl Sub for Dual2 {
    type Output = Dual2;
    #[inline]
    fn sub(mut self, rhs: Dual2) -> Dual2 {
        self.value -= rhs.value;
        for (a, b) in self.grad.iter_mut().zip(rhs.grad.iter()) {
            *a -= b;
        }
        for (a, b) in self.hess.iter_mut().zip(rhs.hess.iter()) {
            *a -= b;
        }
        self
    }
}

impl Mul for Dual2 {
    type Output = Dual2;
    #[inline]
    fn mul(self, rhs: Dual2) -> Dual2 {
        let mut out = Dual2::constant(self.value * rhs.value);
        for k in 0..MAX_PARAMS {
            out.grad[k] = self.grad[k] * rhs.value + rhs.grad[k] * self.value;
        }
        for (idx, &(k, l)) in TRI_PAIRS.iter().enumerate() {
            out.hess[idx] = self.hess[idx] * rhs.value
                + rhs.hess[idx] * self.value
                + self.grad[k] * rhs.grad[l]
                + self.grad[l] * rhs.grad[k];
        }
        out
    }
}

impl Div for Dual2 {
    type Output = Dual2;
    #[inline]
    fn div(self, rhs: Dual2) -> Dual2 {
        // a = q b, differentiated twice; keeps q.value == a.value / b.value exactly
        let b = rhs.value;
        let q = self.value / b;
        let mut out = Dual2::constant(q);
        for k in 0..MAX_PARAMS {
            out.grad[k] = (self.grad[k] - q * rhs.grad[k]) / b;
        }
        for (idx, &(k, l)) in TRI_PAIRS.iter().enumerate() {
            out.hess[idx] = (self.hess[idx]
                - out.grad[k] * rhs.grad[l]
                - out.grad[l] * rhs.grad[k]
                - q * rhs.hess[idx])
                / b;
        }
        out
    }
}

impl Neg for Dual2 {
    type Output = Dual2;
    #[inline]
    fn neg(mut self) -> Dual2 {
        self.value = -self.value;
        for g in self.grad.iter_mut() {
            *g = -*g;
        }
        for h in self.hess.iter_mut() {
            *h = -*h;
        }
        self
    }
}

macro_rules! scalar_mixed_ops {
    ($t:ty) => {
        impl Add<f64> for $t {
            type Output = $t;
            #[inline]
            fn add(mut self, rhs: f64) -> $t {
                self.value += rhs;
                self
            }
        }

        impl Sub<f64> for $t {
            type Output = $t;
            #[inline]
            fn sub(mut self, rhs: f64) -> $t {
                self.value -= rhs;
                self
            }
        }

        impl Mul<f64> for $t {
            type Output = $t;
            #[inline]
            fn mul(self, rhs: f64) -> $t {
                self.chain(self.value * rhs, rhs, 0.0)
            }
        }

        impl Div<f64> for $t {
            type Output = $t;
            #[inline]
            fn div(self, rhs: f64) -> $t {
                self.chain(self.value / rhs, 1.0 / rhs, 0.0)
            }
        }

        impl Add<$t> for f64 {
            type Output = $t;
            #[inline]
            fn add(self, rhs: $t) -> $t {
                rhs + self
            }
        }

        impl Sub<$t> for f64 {
            type Output = $t;
            #[inline]
            fn sub(self, rhs: $t) -> $t {
                -rhs + self
            }
        }

        impl Mul<$t> for f64 {
            type Output = $t;
            #[inline]
            fn mul(self, rhs: $t) -> $t {
                rhs * self
            }
        }

        impl AddAssign for $t {
            #[inline]
            fn add_assign(&mut self, rhs: $t) {
                *self = *self + rhs;
            }
        }

        impl SubAssign for $t {
            #[inline]
            fn sub_assign(&mut self, rhs: $t) {
                *self = *self - rhs;
            }
        }

        impl MulAssign for $t {
            #[inline]
            fn mul_assign(&mut self, rhs: $t) {
                *self = *self * rhs;
            }
        }
    };
}

scalar_mixed_ops!(Dual1);
scalar_mixed_ops!(Dual2);

/// Adds `a * b` for plain coefficient `a`; avoids building a constant dual.
#[inline]
pub fn axpy<S: Scalar>(acc: &mut S, a: f64, b: S) {
    *acc += b * a;
}
