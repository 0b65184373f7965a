//! Output-weight functions `alpha(w, b)` of infinite-width univariate networks and the
//! minimal-cost maps from a target function to `alpha`.
//!
//! The measure `mu` puts mass `1/2` on each weight sign `w = +-1` and distributes the bias
//! with the density `p`; an infinite-width network is `g(x) = int alpha(w, b) sigma(w x - b) dmu`.

use serde::{Deserialize, Serialize};

use crate::density::{trapezoid, BiasDensity};
use crate::error::{Error, Result};
use crate::net::Activation;
use crate::potentials::Potential;
use crate::scalar::Scalar;
use crate::variational::{second_diff, DiscreteFunction, Grid};

/// Default number of intervals of the bias grid (2001 nodes).
pub const DEFAULT_ALPHA_INTERVALS: usize = 2000;
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// `alpha(+1, b_j)` and `alpha(-1, b_j)` on the symmetric grid `b_j = B (2j - M) / M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputWeightFunction<T> {
    pub half_width: T,
    pub alpha_pos: Vec<T>,
    pub alpha_neg: Vec<T>,
}

impl<T: Scalar> OutputWeightFunction<T> {
    pub fn zeros(half_width: T, intervals: usize) -> Self {
        OutputWeightFunction {
            half_width,
            alpha_pos: vec![T::zero(); intervals + 1],
            alpha_neg: vec![T::zero(); intervals + 1],
        }
    }

    /// Tabulates `alpha(+1, b)` and `alpha(-1, b)`.
    pub fn from_fn(
        half_width: T,
        intervals: usize,
        pos: impl Fn(T) -> T,
        neg: impl Fn(T) -> T,
    ) -> Self {
        let mut a = Self::zeros(half_width, intervals);
        for j in 0..=intervals {
            let b = a.b(j);
            a.alpha_pos[j] = pos(b);
            a.alpha_neg[j] = neg(b);
        }
        a
    }

    pub fn intervals(&self) -> usize {
        self.alpha_pos.len() - 1
    }

    pub fn db(&self) -> T {
        (self.half_width + self.half_width) / T::from_usize_lossy(self.intervals())
    }

    pub fn b(&self, j: usize) -> T {
        let m = self.intervals();
        let two_j = T::from_usize_lossy(2 * j);
        let mm = T::from_usize_lossy(m);
        self.half_width * (two_j - mm) / mm
    }

    fn mirror(&self, j: usize) -> usize {
        self.intervals() - j
    }

    /// Largest violation of `alpha(w, b) = alpha(-w, -b)`.
    pub fn even_defect(&self) -> T {
        (0..self.alpha_pos.len())
            .map(|j| (self.alpha_pos[j] - self.alpha_neg[self.mirror(j)]).abs())
            .fold(T::zero(), T::max)
    }

    /// Largest violation of `alpha(w, b) = -alpha(-w, -b)`.
    pub fn odd_defect(&self) -> T {
        (0..self.alpha_pos.len())
            .map(|j| (self.alpha_pos[j] + self.alpha_neg[self.mirror(j)]).abs())
            .fold(T::zero(), T::max)
    }

    pub fn is_even(&self) -> bool {
        self.even_defect() <= T::tol(1e-12)
    }

    pub fn is_odd(&self) -> bool {
        self.odd_defect() <= T::tol(1e-12)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        OutputWeightFunction {
            half_width: self.half_width,
            alpha_pos: self
                .alpha_pos
                .iter()
                .zip(&other.alpha_pos)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            alpha_neg: self
                .alpha_neg
                .iter()
                .zip(&other.alpha_neg)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        let d = self.zip_with(other, |a, b| (a - b).abs());
        d.alpha_pos
            .iter()
            .chain(&d.alpha_neg)
            .copied()
            .fold(T::zero(), T::max)
    }
}

/// Unique split `alpha = alpha_even + alpha_odd` under `(w, b) -> (-w, -b)`.
pub fn decompose_even_odd<T: Scalar>(
    alpha: &OutputWeightFunction<T>,
) -> (OutputWeightFunction<T>, OutputWeightFunction<T>) {
    let half = T::lit(0.5);
    let mut even = OutputWeightFunction::zeros(alpha.half_width, alpha.intervals());
    let mut odd = even.clone();
    for j in 0..alpha.alpha_pos.len() {
        let r = alpha.mirror(j);
        even.alpha_pos[j] = (alpha.alpha_pos[j] + alpha.alpha_neg[r]) * half;
        odd.alpha_pos[j] = (alpha.alpha_pos[j] - alpha.alpha_neg[r]) * half;
        even.alpha_neg[j] = (alpha.alpha_neg[j] + alpha.alpha_pos[r]) * half;
        odd.alpha_neg[j] = (alpha.alpha_neg[j] - alpha.alpha_pos[r]) * half;
    }
    (even, odd)
}

fn density_nodes<T: Scalar>(alpha: &OutputWeightFunction<T>, density: &BiasDensity<T>) -> Vec<T> {
    (0..alpha.alpha_pos.len())
        .map(|j| density.pdf(alpha.b(j)))
        .collect()
}

/// `int alpha sigma(w x - b) dmu` by the trapezoid rule on the bias grid.
pub fn eval_infinite_network<T: Scalar>(
    alpha: &OutputWeightFunction<T>,
    density: &BiasDensity<T>,
    activation: Activation,
    x: T,
) -> T {
    let p = density_nodes(alpha, density);
    let vals: Vec<T> = (0..p.len())
        .map(|j| {
            let b = alpha.b(j);
            (alpha.alpha_pos[j] * activation.eval(x - b)
                + alpha.alpha_neg[j] * activation.eval(-x - b))
                * p[j]
        })
        .collect();
    trapezoid(&vals, alpha.db()) * T::lit(0.5)
}

/// `(slope, intercept)` of the affine function generated by an odd `alpha` under ReLU:
/// `(1/2) int alpha(1, b) (x - b) p(b) db`.
pub fn affine_part<T: Scalar>(odd: &OutputWeightFunction<T>, density: &BiasDensity<T>) -> (T, T) {
    let p = density_nodes(odd, density);
    let db = odd.db();
    let m0: Vec<T> = (0..p.len()).map(|j| odd.alpha_pos[j] * p[j]).collect();
    let m1: Vec<T> = (0..p.len())
        .map(|j| odd.alpha_pos[j] * odd.b(j) * p[j])
        .collect();
    let half = T::lit(0.5);
    (trapezoid(&m0, db) * half, -trapezoid(&m1, db) * half)
}

fn integrate_mu<T: Scalar>(
    alpha: &OutputWeightFunction<T>,
    density: &BiasDensity<T>,
    f: impl Fn(T) -> T,
) -> T {
    let p = density_nodes(alpha, density);
    let pos: Vec<T> = alpha
        .alpha_pos
        .iter()
        .zip(&p)
        .map(|(&a, &p)| f(a) * p)
        .collect();
    let neg: Vec<T> = alpha
        .alpha_neg
        .iter()
        .zip(&p)
        .map(|(&a, &p)| f(a) * p)
        .collect();
    (trapezoid(&pos, alpha.db()) + trapezoid(&neg, alpha.db())) * T::lit(0.5)
}

/// `int alpha^2 dmu`.
pub fn cost_quadratic<T: Scalar>(alpha: &OutputWeightFunction<T>, density: &BiasDensity<T>) -> T {
    integrate_mu(alpha, density, |a| a * a)
}

/// `int D_phi(alpha, 0) dmu`.
pub fn cost_bregman<T: Scalar>(
    alpha: &OutputWeightFunction<T>,
    density: &BiasDensity<T>,
    pot: &Potential<T>,
) -> T {
    integrate_mu(alpha, density, |a| pot.bregman(a, T::zero()))
}

/// `h''` of a grid function as a piecewise-linear function of `x`; zero off the interior.
struct Curvature<T> {
    grid: Grid<T>,
    u: Vec<T>,
}

impl<T: Scalar> Curvature<T> {
    fn new(h: &DiscreteFunction<T>, grid: &Grid<T>) -> Result<Self> {
        if h.h.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: h.h.len(),
            });
        }
        Ok(Curvature {
            grid: *grid,
            u: second_diff(h, grid),
        })
    }

    fn at(&self, x: T) -> T {
        let s = (x - self.grid.lo) / self.grid.dt();
        if !(s > T::one() && s < T::from_usize_lossy(self.grid.n - 1)) {
            return if s == T::one() {
                self.u[0]
            } else if s == T::from_usize_lossy(self.grid.n - 1) {
                self.u[self.u.len() - 1]
            } else {
                T::zero()
            };
        }
        let k = s.floor();
        let i = k.to_usize().expect("in range");
        let frac = s - k;
        // u[i - 1] is h'' at node i.
        self.u[i - 1] * (T::one() - frac) + self.u[i] * frac
    }

    /// `h''` at node `i` (zero at the two end nodes).
    fn node(&self, i: usize) -> T {
        if i == 0 || i >= self.grid.n {
            T::zero()
        } else {
            self.u[i - 1]
        }
    }

    /// Exact integral of the piecewise-linear `h''` over `[a, b]`.
    fn integral(&self, a: T, b: T) -> T {
        let mut total = T::zero();
        for i in 0..self.grid.n {
            let (t0, t1) = (self.grid.t(i), self.grid.t(i + 1));
            let (c, d) = (a.max(t0), b.min(t1));
            if d > c {
                total += (self.at_cell(i, c) + self.at_cell(i, d)) * T::lit(0.5) * (d - c);
            }
        }
        total
    }

    fn at_cell(&self, i: usize, x: T) -> T {
        let frac = (x - self.grid.t(i)) / self.grid.dt();
        self.node(i) * (T::one() - frac) + self.node(i + 1) * frac
    }

    /// Curvature mass of `h` left of `-B` and right of `B`.
    fn outside_mass(&self, b: T) -> (T, T) {
        let lo = self.grid.lo.min(-b);
        let hi = self.grid.hi.max(b);
        (self.integral(lo, -b), self.integral(b, hi))
    }

    /// `int h'' |b| db - 2 h(0)` with the interior-node sum used for `G1`.
    fn boundary_moment(&self, h: &DiscreteFunction<T>) -> T {
        let dt = self.grid.dt();
        let moment: T = self
            .u
            .iter()
            .enumerate()
            .map(|(i, &u)| dt * u * self.grid.t(i + 1).abs())
            .sum();
        moment - interpolate(h, &self.grid, T::zero()) * T::lit(2.0)
    }
}

/// Piecewise-linear interpolation of node values.
pub fn interpolate<T: Scalar>(h: &DiscreteFunction<T>, grid: &Grid<T>, x: T) -> T {
    let s = ((x - grid.lo) / grid.dt())
        .max(T::zero())
        .min(T::from_usize_lossy(grid.n));
    let k = s.floor().min(T::from_usize_lossy(grid.n - 1));
    let i = k.to_usize().expect("in range");
    let frac = s - k;
    h.h[i] * (T::one() - frac) + h.h[i + 1] * frac
}

fn check_density<T: Scalar>(
    alpha: &OutputWeightFunction<T>,
    density: &BiasDensity<T>,
) -> Result<Vec<T>> {
    let p = density_nodes(alpha, density);
    for (j, &v) in p.iter().enumerate() {
        if !(v > T::zero()) {
            return Err(Error::ZeroDensity(alpha.b(j).as_f64()));
        }
    }
    Ok(p)
}

/// Minimal quadratic-cost `alpha` realizing `h` with a ReLU network:
/// `alpha_even(1, b) = h''(b) / p(b)` and `alpha_odd(1, b) = (C_h / E[B^2]) b + S_h` with
/// `S_h = h'(+inf) + h'(-inf)` and `C_h = int h''(b) |b| db - 2 h(0)`.
pub fn repcost_quadratic<T: Scalar>(
    h: &DiscreteFunction<T>,
    grid: &Grid<T>,
    density: &BiasDensity<T>,
    intervals: usize,
) -> Result<OutputWeightFunction<T>> {
    density.validate()?;
    let curv = Curvature::new(h, grid)?;
    let mut alpha = OutputWeightFunction::zeros(density.half_width(), intervals);
    let p = check_density(&alpha, density)?;
    let s = h.slope_pos + h.slope_neg;
    let c = curv.boundary_moment(h) / density.second_moment();
    let even = curvature_slices(&curv, &alpha, &p, T::one());
    for j in 0..=intervals {
        let b = alpha.b(j);
        alpha.alpha_pos[j] = even.0[j] + c * b + s;
        // alpha(-1, b) = alpha_even(1, -b) - alpha_odd(1, -b).
        alpha.alpha_neg[j] = even.1[j] + c * b - s;
    }
    Ok(alpha)
}

/// `h''(w b) / (k p(b))` on both sign slices. Curvature of `h` outside `[-B, B]` (half a grid
/// cell when a data point sits on the edge of the support) is lumped onto the end nodes.
fn curvature_slices<T: Scalar>(
    curv: &Curvature<T>,
    alpha: &OutputWeightFunction<T>,
    p: &[T],
    k: T,
) -> (Vec<T>, Vec<T>) {
    let m = alpha.intervals();
    let mut pos: Vec<T> = (0..=m).map(|j| curv.at(alpha.b(j)) / (k * p[j])).collect();
    let mut neg: Vec<T> = (0..=m)
        .map(|j| curv.at(-alpha.b(j)) / (k * p[m - j]))
        .collect();
    let (left, right) = curv.outside_mass(alpha.half_width);
    let w = alpha.db() * T::lit(0.5);
    pos[0] += left / (w * k * p[0]);
    pos[m] += right / (w * k * p[m]);
    neg[0] += right / (w * k * p[m]);
    neg[m] += left / (w * k * p[0]);
    (pos, neg)
}

/// Residuals `(h'(+inf) + h'(-inf), C_h)` of the constraints defining the absolute-value class.
pub fn abs_class_residuals<T: Scalar>(h: &DiscreteFunction<T>, grid: &Grid<T>) -> Result<(T, T)> {
    let curv = Curvature::new(h, grid)?;
    Ok((h.slope_pos + h.slope_neg, curv.boundary_moment(h)))
}

/// `alpha(w, b) = h''(w b) / (2 p(b))` for `h` realizable by an absolute-value network.
pub fn repcost_abs<T: Scalar>(
    h: &DiscreteFunction<T>,
    grid: &Grid<T>,
    density: &BiasDensity<T>,
    intervals: usize,
) -> Result<OutputWeightFunction<T>> {
    density.validate()?;
    let (g2, g3) = abs_class_residuals(h, grid)?;
    let defect = g2.abs().max(g3.abs());
    if defect > T::tol(FEASIBILITY_TOL) {
        return Err(Error::Infeasible(defect.as_f64()));
    }
    let curv = Curvature::new(h, grid)?;
    let mut alpha = OutputWeightFunction::zeros(density.half_width(), intervals);
    let p = check_density(&alpha, density)?;
    let (pos, neg) = curvature_slices(&curv, &alpha, &p, T::lit(2.0));
    alpha.alpha_pos = pos;
    alpha.alpha_neg = neg;
    Ok(alpha)
}
