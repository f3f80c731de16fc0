//! Forward-mode automatic differentiation with nilpotent generators.
//!
//! A [`Jet<N>`] is a truncated polynomial in `m = log2(N)` generators
//! `ε_0 … ε_{m-1}` with `ε_i² = 0`. Coefficients are indexed by the bitmask of
//! the generators in the monomial, so `c[0]` is the value, `c[1 << i]` the
//! first derivative along generator `i`, and `c[N - 1]` the mixed derivative
//! along all generators at once.
//!
//! Evaluating a function on `x + ε_1 v_1 + … + ε_k v_k` yields every mixed
//! directional derivative up to order `k` exactly. The Lie-derivative engine
//! relies on this: a nested directional derivative `L_{f_k} … L_{f_1} h` and
//! its gradient are a single coefficient of one jet evaluation.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use num_traits::{One, Zero};

/// Real-like number type the model functions are generic over.
pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + 'static
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    fn from_f64(v: f64) -> Self;
    /// The real (zeroth-order) part.
    fn value(&self) -> f64;
    fn sqrt(self) -> Self;

    fn scale(self, k: f64) -> Self {
        self * Self::from_f64(k)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        self * k
    }
}

/// Truncated multivariate polynomial in nilpotent generators; `N` must be a
/// power of two.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet<const N: usize> {
    pub c: [f64; N],
}

impl<const N: usize> Jet<N> {
    const VALID: () = assert!(N.is_power_of_two(), "jet size must be a power of two");

    #[inline]
    pub fn constant(v: f64) -> Self {
        #[allow(clippy::let_unit_value)]
        let _ = Self::VALID;
        let mut c = [0.0; N];
        c[0] = v;
        Jet { c }
    }

    /// `v + ε_generator`.
    #[inline]
    pub fn variable(v: f64, generator: usize) -> Self {
        let mut j = Self::constant(v);
        j.c[1 << generator] = 1.0;
        j
    }

    /// Number of generators.
    pub const fn generators() -> usize {
        N.trailing_zeros() as usize
    }

    /// Multiply by the generator `ε_generator`.
    #[inline]
    pub fn times_generator(self, generator: usize) -> Self {
        let bit = 1 << generator;
        let mut c = [0.0; N];
        for (s, out) in c.iter_mut().enumerate() {
            if s & bit != 0 {
                *out = self.c[s ^ bit];
            }
        }
        Jet { c }
    }

    #[inline]
    pub fn coefficient(&self, mask: usize) -> f64 {
        self.c[mask]
    }

    fn recip(self) -> Self {
        let y0 = self.c[0];
        let mut z = [0.0; N];
        z[0] = 1.0 / y0;
        for s in 1..N {
            // y * z = 1 has no component on s != 0; solve for z[s].
            let mut acc = 0.0;
            let mut a = (s - 1) & s;
            loop {
                acc += z[a] * self.c[s ^ a];
                if a == 0 {
                    break;
                }
                a = (a - 1) & s;
            }
            z[s] = -acc / y0;
        }
        Jet { c: z }
    }
}

impl<const N: usize> Zero for Jet<N> {
    fn zero() -> Self {
        Jet { c: [0.0; N] }
    }
    fn is_zero(&self) -> bool {
        self.c.iter().all(|&v| v == 0.0)
    }
}

impl<const N: usize> One for Jet<N> {
    fn one() -> Self {
        Jet::constant(1.0)
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        for (a, b) in self.c.iter_mut().zip(rhs.c) {
            *a += b;
        }
        self
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        for (a, b) in self.c.iter_mut().zip(rhs.c) {
            *a -= b;
        }
        self
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        for a in self.c.iter_mut() {
            *a = -*a;
        }
        self
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut c = [0.0; N];
        for (s, out) in c.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut a = s;
            loop {
                let xa = self.c[a];
                if xa != 0.0 {
                    acc += xa * rhs.c[s ^ a];
                }
                if a == 0 {
                    break;
                }
                a = (a - 1) & s;
            }
            *out = acc;
        }
        Jet { c }
    }
}

impl<const N: usize> Div for Jet<N> {
    type Output = Self;
    #[inline]
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

impl<const N: usize> AddAssign for Jet<N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const N: usize> SubAssign for Jet<N> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<const N: usize> MulAssign for Jet<N> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<const N: usize> DivAssign for Jet<N> {
    #[inline]
    fn div_assign(&mut self, rhs: Self) {
        *self = *self / rhs;
    }
}

impl<const N: usize> Scalar for Jet<N> {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Jet::constant(v)
    }

    #[inline]
    fn value(&self) -> f64 {
        self.c[0]
    }

    fn sqrt(self) -> Self {
        let r0 = self.c[0].sqrt();
        let mut z = [0.0; N];
        z[0] = r0;
        for s in 1..N {
            // z * z = y; the two terms pairing z[s] with z[0] are solved for.
            let mut acc = 0.0;
            let mut a = (s - 1) & s;
            while a != 0 {
                acc += z[a] * z[s ^ a];
                a = (a - 1) & s;
            }
            z[s] = (self.c[s] - acc) / (2.0 * r0);
        }
        Jet { c: z }
    }

    #[inline]
    fn scale(mut self, k: f64) -> Self {
        for a in self.c.iter_mut() {
            *a *= k;
        }
        self
    }
}

/// Value and Jacobian of `f: ℝⁿ → ℝᵐ` at `x`, one forward pass per input
/// coordinate.
pub fn jacobian<F, E>(x: &[f64], mut f: F) -> Result<(Vec<f64>, Vec<Vec<f64>>), E>
where
    F: FnMut(&[Jet<2>]) -> Result<Vec<Jet<2>>, E>,
{
    let n = x.len();
    let mut value = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut point: Vec<Jet<2>> = x.iter().map(|&v| Jet::constant(v)).collect();
    for j in 0..n {
        point[j] = Jet::variable(x[j], 0);
        let out = f(&point)?;
        if j == 0 {
            value = out.iter().map(|o| o.c[0]).collect();
            rows = vec![vec![0.0; n]; out.len()];
        }
        for (row, o) in rows.iter_mut().zip(&out) {
            row[j] = o.c[1];
        }
        point[j] = Jet::constant(x[j]);
    }
    Ok((value, rows))
}
