//! Separable convex potentials `phi` and the diagonal Hessian of the network potential
//! `Phi(theta) = sum_k phi(theta_k - anchor_k)` (unscaled) or
//! `Phi(theta) = n^-2 sum_k phi(n (theta_k - anchor_k))` (scaled).
//!
//! Potentials are written in config files as strings:
//!
//! ```text
//! quadratic
//! pow:p=3,omega=1
//! pow:p=4,omega=1,normalized
//! hypentropy:beta=0.5
//! scaled:pow:p=3,omega=1
//! ```
//!
//! `phi1`, `phi2`, `phi3` are accepted as shorthands for `quadratic`, `pow:p=3,omega=1` and
//! `pow:p=4,omega=1`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAX_DOUBLINGS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PotentialKind<T> {
    /// `x^2`.
    Quadratic,
    /// `|x|^p + omega x^2`, optionally divided by `1 + omega`.
    PowerPlusQuad { p: T, omega: T },
    /// `x asinh(x / beta) - sqrt(x^2 + beta^2)`.
    Hypentropy { beta: T },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialMode {
    Unscaled,
    Scaled,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Potential<T> {
    kind: PotentialKind<T>,
    mode: PotentialMode,
    normalized: bool,
    relaxed: bool,
}

/// Diagonal of `Hess Phi(theta)`, one strictly positive entry per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct HessianDiag<T>(Vec<T>);

impl<T: Scalar> HessianDiag<T> {
    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<T: Scalar> Potential<T> {
    pub fn new(kind: PotentialKind<T>, mode: PotentialMode) -> Result<Self> {
        let pot = Potential {
            kind,
            mode,
            normalized: false,
            relaxed: false,
        };
        pot.validate()?;
        Ok(pot)
    }

    pub fn quadratic() -> Self {
        Potential {
            kind: PotentialKind::Quadratic,
            mode: PotentialMode::Unscaled,
            normalized: false,
            relaxed: false,
        }
    }

    pub fn power(p: T, omega: T) -> Result<Self> {
        Self::new(
            PotentialKind::PowerPlusQuad { p, omega },
            PotentialMode::Unscaled,
        )
    }

    pub fn hypentropy(beta: T) -> Result<Self> {
        Self::new(PotentialKind::Hypentropy { beta }, PotentialMode::Unscaled)
    }

    /// `|x|^p + omega x^2` with `p >= 1` and `omega >= 0`. Such potentials may lack a second
    /// derivative at the origin, so they are accepted by the variational solver only and
    /// rejected by the trainer.
    pub fn relaxed_power(p: T, omega: T) -> Result<Self> {
        if !(p >= T::one() && p.is_finite()) || !(omega >= T::zero() && omega.is_finite()) {
            return Err(Error::InvalidPotential(format!(
                "relaxed power needs p >= 1, omega >= 0 (got p={p}, omega={omega})"
            )));
        }
        let kind = PotentialKind::PowerPlusQuad { p, omega };
        let relaxed = p < T::lit(2.0) || (p > T::lit(2.0) && omega == T::zero());
        Ok(Potential {
            kind,
            mode: PotentialMode::Unscaled,
            normalized: false,
            relaxed,
        })
    }

    pub fn scaled(mut self) -> Self {
        self.mode = PotentialMode::Scaled;
        self
    }

    pub fn with_mode(mut self, mode: PotentialMode) -> Self {
        self.mode = mode;
        self
    }

    /// Divide `|x|^p + omega x^2` by `1 + omega`. Only changes power potentials.
    pub fn normalized(mut self) -> Self {
        self.normalized = true;
        self
    }

    pub fn kind(&self) -> PotentialKind<T> {
        self.kind
    }

    pub fn mode(&self) -> PotentialMode {
        self.mode
    }

    pub fn is_scaled(&self) -> bool {
        self.mode == PotentialMode::Scaled
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Whether `phi` is twice differentiable with `phi'' > 0` everywhere, as training needs.
    pub fn is_trainable(&self) -> bool {
        !self.relaxed
    }

    /// Whether the potential is exactly `c x^2` for some `c > 0`.
    pub fn is_quadratic(&self) -> bool {
        match self.kind {
            PotentialKind::Quadratic => true,
            PotentialKind::PowerPlusQuad { p, .. } => p == T::lit(2.0),
            PotentialKind::Hypentropy { .. } => false,
        }
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            PotentialKind::Quadratic => Ok(()),
            PotentialKind::PowerPlusQuad { p, omega } => {
                if !(p >= T::lit(2.0)) || !p.is_finite() {
                    return Err(Error::InvalidPotential(format!(
                        "power exponent must satisfy p >= 2 (got {p})"
                    )));
                }
                if !(omega >= T::zero()) || !omega.is_finite() {
                    return Err(Error::InvalidPotential(format!(
                        "omega must be >= 0 (got {omega})"
                    )));
                }
                if p > T::lit(2.0) && omega == T::zero() {
                    return Err(Error::InvalidPotential(format!(
                        "|x|^{p} without a quadratic part has phi''(0) = 0; use omega > 0"
                    )));
                }
                Ok(())
            }
            PotentialKind::Hypentropy { beta } => {
                if beta > T::zero() && beta.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidPotential(format!(
                        "hypentropy needs beta > 0 (got {beta})"
                    )))
                }
            }
        }
    }

    #[inline]
    fn scale(&self, omega: T) -> T {
        if self.normalized {
            T::one() / (T::one() + omega)
        } else {
            T::one()
        }
    }

    /// `phi(x)`.
    pub fn phi(&self, x: T) -> T {
        match self.kind {
            PotentialKind::Quadratic => x * x,
            PotentialKind::PowerPlusQuad { p, omega } => {
                (abs_pow(x, p) + omega * x * x) * self.scale(omega)
            }
            PotentialKind::Hypentropy { beta } => {
                x * (x / beta).asinh() - (x * x + beta * beta).sqrt()
            }
        }
    }

    /// `phi'(x)`.
    #[inline]
    pub fn grad(&self, x: T) -> T {
        match self.kind {
            PotentialKind::Quadratic => x + x,
            PotentialKind::PowerPlusQuad { p, omega } => {
                let two = T::lit(2.0);
                let core = if x == T::zero() {
                    T::zero()
                } else {
                    p * abs_pow(x, p - T::one()) * x.signum()
                };
                (core + two * omega * x) * self.scale(omega)
            }
            PotentialKind::Hypentropy { beta } => (x / beta).asinh(),
        }
    }

    /// `phi''(x)`. Infinite at the origin for relaxed powers with `p < 2`.
    #[inline]
    pub fn hess(&self, x: T) -> T {
        match self.kind {
            PotentialKind::Quadratic => T::lit(2.0),
            PotentialKind::PowerPlusQuad { p, omega } => {
                let two = T::lit(2.0);
                let core = if p == two {
                    two
                } else if p == T::lit(3.0) {
                    T::lit(6.0) * x.abs()
                } else if p == T::lit(4.0) {
                    T::lit(12.0) * x * x
                } else if p == T::one() {
                    T::zero()
                } else {
                    p * (p - T::one()) * abs_pow(x, p - two)
                };
                (core + two * omega) * self.scale(omega)
            }
            PotentialKind::Hypentropy { beta } => T::one() / (x * x + beta * beta).sqrt(),
        }
    }

    /// Calls `v` with a closure computing [`Self::hess`], specialized to this potential's kind
    /// so that hot loops see branch-free arithmetic. Results match `hess` bitwise.
    pub fn with_hess<V: HessVisitor<T>>(&self, v: V) -> V::Output {
        let two = T::lit(2.0);
        match self.kind {
            PotentialKind::Quadratic => v.visit(|_| two),
            PotentialKind::PowerPlusQuad { p, omega } => {
                let (c, sc) = (two * omega, self.scale(omega));
                if p == T::lit(3.0) {
                    v.visit(|x: T| (T::lit(6.0) * x.abs() + c) * sc)
                } else if p == T::lit(4.0) {
                    v.visit(|x: T| (T::lit(12.0) * x * x + c) * sc)
                } else {
                    v.visit(|x| self.hess(x))
                }
            }
            PotentialKind::Hypentropy { .. } => v.visit(|x| self.hess(x)),
        }
    }

    /// Bregman divergence `D_phi(x, y) = phi(x) - phi(y) - phi'(y) (x - y)`, clamped at zero.
    pub fn bregman(&self, x: T, y: T) -> T {
        if x == y {
            return T::zero();
        }
        let d = match self.kind {
            PotentialKind::Quadratic => (x - y) * (x - y),
            PotentialKind::PowerPlusQuad { p, omega } => {
                let core = abs_pow(x, p)
                    - abs_pow(y, p)
                    - if y == T::zero() {
                        T::zero()
                    } else {
                        p * abs_pow(y, p - T::one()) * y.signum()
                    } * (x - y);
                (core + omega * (x - y) * (x - y)) * self.scale(omega)
            }
            PotentialKind::Hypentropy { beta } => {
                x * ((x / beta).asinh() - (y / beta).asinh()) - (x * x + beta * beta).sqrt()
                    + (y * y + beta * beta).sqrt()
            }
        };
        d.max(T::zero())
    }

    /// Solves `phi'(x) = y`.
    pub fn inverse_grad(&self, y: T) -> Result<T> {
        match self.kind {
            PotentialKind::Quadratic => Ok(y / T::lit(2.0)),
            PotentialKind::Hypentropy { beta } => Ok(beta * y.sinh()),
            PotentialKind::PowerPlusQuad { .. } => self.inverse_grad_bracketed(y),
        }
    }

    fn inverse_grad_bracketed(&self, y: T) -> Result<T> {
        if y == T::zero() {
            return Ok(T::zero());
        }
        // phi' is odd and increasing, so solve for |y| on [0, inf) and restore the sign.
        let target = y.abs();
        let tol = T::tol(1e-12) * T::one().max(target);
        let mut lo = T::zero();
        let mut hi = T::one();
        let mut doublings = 0;
        while self.grad(hi) < target {
            lo = hi;
            hi = hi + hi;
            doublings += 1;
            if doublings > MAX_DOUBLINGS || !hi.is_finite() {
                return Err(Error::BracketFailure {
                    y: y.as_f64(),
                    doublings,
                });
            }
        }
        // A few bisection steps to land in Newton's basin, then safeguarded Newton.
        for _ in 0..8 {
            let mid = (lo + hi) * T::lit(0.5);
            if self.grad(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut x = (lo + hi) * T::lit(0.5);
        for _ in 0..200 {
            let r = self.grad(x) - target;
            if r.abs() <= tol {
                return Ok(x * y.signum());
            }
            if r < T::zero() {
                lo = x;
            } else {
                hi = x;
            }
            let h = self.hess(x);
            let newton = x - r / h;
            x = if h.is_finite() && h > T::zero() && newton > lo && newton < hi {
                newton
            } else {
                (lo + hi) * T::lit(0.5)
            };
            if hi - lo <= T::epsilon() * hi {
                break;
            }
        }
        Ok(x * y.signum())
    }

    /// Chain-rule factor between a parameter offset and the argument of `phi`: `n` for scaled
    /// potentials and `1` otherwise.
    #[inline]
    pub fn argument_scale(&self, width: usize) -> T {
        match self.mode {
            PotentialMode::Unscaled => T::one(),
            PotentialMode::Scaled => T::from_usize_lossy(width),
        }
    }

    /// Diagonal of `Hess Phi(theta)`: `phi''(theta_k - anchor_k)` unscaled,
    /// `phi''(n (theta_k - anchor_k))` scaled (the `n^-2` prefactor cancels the chain rule).
    pub fn hessian_diag(&self, theta: &[T], anchor: &[T], width: usize) -> Result<HessianDiag<T>> {
        let mut out = vec![T::zero(); theta.len()];
        self.fill_hessian_diag(theta, anchor, width, &mut out)?;
        Ok(HessianDiag(out))
    }

    pub fn fill_hessian_diag(
        &self,
        theta: &[T],
        anchor: &[T],
        width: usize,
        out: &mut [T],
    ) -> Result<()> {
        if theta.len() != anchor.len() {
            return Err(Error::LengthMismatch {
                expected: theta.len(),
                got: anchor.len(),
            });
        }
        if out.len() != theta.len() {
            return Err(Error::LengthMismatch {
                expected: theta.len(),
                got: out.len(),
            });
        }
        let s = self.argument_scale(width);
        for ((o, &t), &a) in out.iter_mut().zip(theta).zip(anchor) {
            *o = self.hess(s * (t - a));
        }
        Ok(())
    }
}

impl Potential<f64> {
    /// The potentials used in the reference experiments: `phi1 = x^2`, `phi2 = |x|^3 + x^2`,
    /// `phi3 = x^4 + x^2`.
    pub fn reference_set() -> [Potential<f64>; 3] {
        [
            Potential::quadratic(),
            Potential::power(3.0, 1.0).expect("valid"),
            Potential::power(4.0, 1.0).expect("valid"),
        ]
    }
}

#[inline]
fn abs_pow<T: Scalar>(x: T, e: T) -> T {
    let a = x.abs();
    if e == e.round() && e.abs() < T::lit(64.0) {
        a.powi(e.to_i32().unwrap_or(0))
    } else if a == T::zero() {
        if e > T::zero() {
            T::zero()
        } else {
            T::one()
        }
    } else {
        a.powf(e)
    }
}

/// Consumer of a monomorphized curvature function, see [`Potential::with_hess`].
pub trait HessVisitor<T> {
    type Output;
    fn visit<H: Fn(T) -> T>(self, hess: H) -> Self::Output;
}

impl<T: Scalar> fmt::Display for Potential<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_scaled() {
            write!(f, "scaled:")?;
        }
        match self.kind {
            PotentialKind::Quadratic => write!(f, "quadratic"),
            PotentialKind::PowerPlusQuad { p, omega } => {
                write!(f, "pow:p={p},omega={omega}")?;
                if self.normalized {
                    write!(f, ",normalized")?;
                }
                Ok(())
            }
            PotentialKind::Hypentropy { beta } => write!(f, "hypentropy:beta={beta}"),
        }
    }
}

impl<T: Scalar> FromStr for Potential<T> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (mode, body) = match s.strip_prefix("scaled:") {
            Some(rest) => (PotentialMode::Scaled, rest),
            None => (PotentialMode::Unscaled, s),
        };
        let body = match body {
            "phi1" => "quadratic",
            "phi2" => "pow:p=3,omega=1",
            "phi3" => "pow:p=4,omega=1",
            other => other,
        };
        let (name, args) = body.split_once(':').unwrap_or((body, ""));
        let mut p = None;
        let mut omega = None;
        let mut beta = None;
        let mut normalized = false;
        for token in args.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            if token == "normalized" {
                normalized = true;
                continue;
            }
            let (key, value) = token.split_once('=').ok_or_else(|| {
                Error::InvalidPotential(format!("expected key=value, got {token:?} in {s:?}"))
            })?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidPotential(format!("bad number {value:?} in {s:?}")))?;
            let slot = match key.trim() {
                "p" => &mut p,
                "omega" => &mut omega,
                "beta" => &mut beta,
                other => {
                    return Err(Error::InvalidPotential(format!(
                        "unknown parameter {other:?} in {s:?}"
                    )))
                }
            };
            *slot = Some(T::lit(value));
        }
        let unexpected = |what: &str| {
            Error::InvalidPotential(format!("{what} does not apply to {name:?} in {s:?}"))
        };
        let kind = match name {
            "quadratic" => {
                if p.is_some() || omega.is_some() || beta.is_some() || normalized {
                    return Err(unexpected("parameters"));
                }
                PotentialKind::Quadratic
            }
            "pow" => {
                if beta.is_some() {
                    return Err(unexpected("beta"));
                }
                let p =
                    p.ok_or_else(|| Error::InvalidPotential(format!("pow needs p in {s:?}")))?;
                PotentialKind::PowerPlusQuad {
                    p,
                    omega: omega.unwrap_or(T::zero()),
                }
            }
            "hypentropy" => {
                if p.is_some() || omega.is_some() || normalized {
                    return Err(unexpected("p/omega/normalized"));
                }
                let beta = beta.ok_or_else(|| {
                    Error::InvalidPotential(format!("hypentropy needs beta in {s:?}"))
                })?;
                PotentialKind::Hypentropy { beta }
            }
            other => {
                return Err(Error::InvalidPotential(format!(
                    "unknown potential {other:?}"
                )))
            }
        };
        let mut pot = Potential::new(kind, mode)?;
        pot.normalized = normalized;
        Ok(pot)
    }
}

impl<T: Scalar> Serialize for Potential<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for Potential<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
