//! Densities for the initial input biases.
//!
//! Both densities are even and compactly supported on `[-B, B]`, which is what the
//! closed-form boundary functional and the variational grid expect.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BiasDensity<T> {
    /// `Unif[-B, B]`.
    Uniform { b: T },
    /// `N(0, sigma^2)` restricted to `[-B, B]` and renormalized.
    TruncGauss { sigma: T, b: T },
}

impl<T: Scalar> BiasDensity<T> {
    pub fn uniform(b: T) -> Result<Self> {
        let d = BiasDensity::Uniform { b };
        d.validate()?;
        Ok(d)
    }

    pub fn trunc_gauss(sigma: T, b: T) -> Result<Self> {
        let d = BiasDensity::TruncGauss { sigma, b };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            BiasDensity::Uniform { b } => b > T::zero() && b.is_finite(),
            BiasDensity::TruncGauss { sigma, b } => {
                b > T::zero() && b.is_finite() && sigma > T::zero() && sigma.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "bias density {self:?} needs positive finite parameters"
            )))
        }
    }

    /// Half-width `B` of the support.
    pub fn half_width(&self) -> T {
        match *self {
            BiasDensity::Uniform { b } | BiasDensity::TruncGauss { b, .. } => b,
        }
    }

    pub fn in_support(&self, t: T) -> bool {
        t.abs() <= self.half_width()
    }

    /// Density value; zero outside `[-B, B]`.
    pub fn pdf(&self, t: T) -> T {
        if !self.in_support(t) {
            return T::zero();
        }
        match *self {
            BiasDensity::Uniform { b } => T::one() / (b + b),
            BiasDensity::TruncGauss { sigma, b } => {
                let z = (t / sigma).as_f64();
                let s = sigma.as_f64();
                let mass = libm::erf(b.as_f64() / (s * std::f64::consts::SQRT_2));
                let g = (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
                T::lit(g / mass)
            }
        }
    }

    /// Density evaluated at the nearest point of the support.
    pub fn pdf_clamped(&self, t: T) -> T {
        let b = self.half_width();
        self.pdf(t.max(-b).min(b))
    }

    /// `E[B^2]`.
    pub fn second_moment(&self) -> T {
        match *self {
            BiasDensity::Uniform { b } => b * b / T::lit(3.0),
            BiasDensity::TruncGauss { sigma, b } => {
                // Var of N(0, s^2) truncated to [-b, b]: s^2 (1 - 2 a g(a) / (2 G(a) - 1)), a = b/s.
                let s = sigma.as_f64();
                let a = b.as_f64() / s;
                let g = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
                let mass = libm::erf(a / std::f64::consts::SQRT_2);
                T::lit(s * s * (1.0 - 2.0 * a * g / mass))
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        match *self {
            BiasDensity::Uniform { b } => {
                let b = b.as_f64();
                T::lit(rng.gen_range(-b..=b))
            }
            BiasDensity::TruncGauss { sigma, b } => {
                let (s, b) = (sigma.as_f64(), b.as_f64());
                loop {
                    let z: f64 = StandardNormal.sample(rng);
                    let v = s * z;
                    if v.abs() <= b {
                        return T::lit(v);
                    }
                }
            }
        }
    }
}

/// Composite trapezoid rule on uniformly spaced samples.
pub fn trapezoid<T: Scalar>(values: &[T], dx: T) -> T {
    match values.len() {
        0 | 1 => T::zero(),
        n => {
            let inner: T = values[1..n - 1].iter().copied().sum();
            dx * (inner + (values[0] + values[n - 1]) * T::lit(0.5))
        }
    }
}
