//! Discretized variational problems on a uniform grid.
//!
//! Three problems share the same constraint structure (interpolation of the data, linear
//! tails outside the data hull):
//!
//! * `UnscaledRelu`: minimize `G1 + G2 + G3` where `G1 = int h''^2 / p`,
//!   `G2 = (h'(+inf) + h'(-inf))^2` and `G3 = (L (h'(+inf) - h'(-inf)) - h(L) - h(-L))^2 / E[B^2]`.
//! * `ScaledAbs`: minimize `int D_phi(h'' / (2 p), 0) p` with `G2 = G3 = 0` as constraints.
//! * `Spline`: minimize `G1` only.
//!
//! Internally the unknowns are the value and slope at the leftmost data node together with
//! the second derivatives on the data hull; tail linearity is then built in and `h` is
//! recovered by summation.

use serde::{Deserialize, Serialize};

use crate::density::BiasDensity;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, null_space, solve_gepp, Mat};
use crate::net::Dataset;
use crate::potentials::Potential;
use crate::scalar::{max_abs, Scalar};

pub const NEWTON_GRAD_TOL: f64 = 1e-9;
pub const RELAXED_GRAD_TOL: f64 = 1e-6;
pub const MAX_NEWTON_ITERS: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid<T> {
    pub lo: T,
    pub hi: T,
    /// Number of intervals; there are `n + 1` nodes.
    pub n: usize,
}

impl<T: Scalar> Default for Grid<T> {
    fn default() -> Self {
        Grid {
            lo: T::lit(-1.5),
            hi: T::lit(1.5),
            n: 500,
        }
    }
}

impl<T: Scalar> Grid<T> {
    pub fn new(lo: T, hi: T, n: usize) -> Result<Self> {
        let g = Grid { lo, hi, n };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "grid needs lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        if self.n < 4 {
            return Err(Error::InvalidConfig(format!(
                "grid needs at least 4 intervals, got {}",
                self.n
            )));
        }
        Ok(())
    }

    pub fn dt(&self) -> T {
        (self.hi - self.lo) / T::from_usize_lossy(self.n)
    }

    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t(&self, i: usize) -> T {
        self.lo + self.dt() * T::from_usize_lossy(i)
    }

    pub fn nodes(&self) -> Vec<T> {
        (0..=self.n).map(|i| self.t(i)).collect()
    }

    /// Nearest node to `x`, or an error when `x` lies outside the grid.
    pub fn nearest(&self, x: T) -> Result<usize> {
        let dt = self.dt();
        if x < self.lo - dt * T::lit(0.5) || x > self.hi + dt * T::lit(0.5) {
            return Err(Error::OutOfRange {
                x: x.as_f64(),
                what: format!("grid [{}, {}]", self.lo, self.hi),
            });
        }
        let k = ((x - self.lo) / dt)
            .round()
            .max(T::zero())
            .min(T::from_usize_lossy(self.n));
        Ok(k.to_usize().expect("in range"))
    }
}

/// Node values of a function plus its asymptotic slopes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteFunction<T> {
    pub h: Vec<T>,
    pub slope_neg: T,
    pub slope_pos: T,
}

impl<T: Scalar> DiscreteFunction<T> {
    pub fn zeros(grid: &Grid<T>) -> Self {
        DiscreteFunction {
            h: vec![T::zero(); grid.len()],
            slope_neg: T::zero(),
            slope_pos: T::zero(),
        }
    }

    /// Samples `f` at the nodes and takes the slopes from the outermost segments.
    pub fn sample(grid: &Grid<T>, f: impl Fn(T) -> T) -> Self {
        let h: Vec<T> = grid.nodes().into_iter().map(f).collect();
        Self::from_values(grid, h)
    }

    pub fn from_values(grid: &Grid<T>, h: Vec<T>) -> Self {
        let dt = grid.dt();
        let n = h.len();
        let slope_neg = (h[1] - h[0]) / dt;
        let slope_pos = (h[n - 1] - h[n - 2]) / dt;
        DiscreteFunction {
            h,
            slope_neg,
            slope_pos,
        }
    }

    /// `max_i |h_i - other_i|` over an index range.
    pub fn linf_distance(&self, other: &Self, range: std::ops::RangeInclusive<usize>) -> T {
        range
            .map(|i| (self.h[i] - other.h[i]).abs())
            .fold(T::zero(), T::max)
    }
}

/// Central second differences on interior nodes `1..N-1`.
pub fn second_diff<T: Scalar>(f: &DiscreteFunction<T>, grid: &Grid<T>) -> Vec<T> {
    let dt2 = grid.dt() * grid.dt();
    f.h.windows(3)
        .map(|w| (w[2] - (w[1] + w[1]) + w[0]) / dt2)
        .collect()
}

fn node_densities<T: Scalar>(density: &BiasDensity<T>, grid: &Grid<T>) -> Result<Vec<T>> {
    (1..grid.n)
        .map(|i| {
            let t = grid.t(i);
            let p = density.pdf_clamped(t);
            if p > T::zero() {
                Ok(p)
            } else {
                Err(Error::ZeroDensity(t.as_f64()))
            }
        })
        .collect()
}

/// `sum_i dt h''_i^2 / p(t_i)` over interior nodes; `p` is read at the nearest point of the
/// support for nodes outside it.
pub fn eval_g1<T: Scalar>(
    f: &DiscreteFunction<T>,
    density: &BiasDensity<T>,
    grid: &Grid<T>,
) -> Result<T> {
    let p = node_densities(density, grid)?;
    let dt = grid.dt();
    Ok(second_diff(f, grid)
        .iter()
        .zip(&p)
        .map(|(&u, &p)| dt * u * u / p)
        .sum())
}

pub fn eval_g2<T: Scalar>(f: &DiscreteFunction<T>) -> T {
    let s = f.slope_pos + f.slope_neg;
    s * s
}

/// Nodes nearest to `-B` and `B`.
pub fn boundary_nodes<T: Scalar>(
    density: &BiasDensity<T>,
    grid: &Grid<T>,
) -> Result<(usize, usize)> {
    let b = density.half_width();
    Ok((grid.nearest(-b)?, grid.nearest(b)?))
}

fn g3_inner<T: Scalar>(f: &DiscreteFunction<T>, grid: &Grid<T>, il: usize, ir: usize) -> T {
    grid.t(ir) * f.slope_pos + grid.t(il) * f.slope_neg - f.h[ir] - f.h[il]
}

pub fn eval_g3<T: Scalar>(
    f: &DiscreteFunction<T>,
    density: &BiasDensity<T>,
    grid: &Grid<T>,
) -> Result<T> {
    let (il, ir) = boundary_nodes(density, grid)?;
    let c = g3_inner(f, grid, il, ir);
    Ok(c * c / density.second_moment())
}

/// `sum_i dt p_i D_phi(h''_i / (2 p_i), 0)` over interior nodes.
pub fn eval_bregman<T: Scalar>(
    f: &DiscreteFunction<T>,
    pot: &Potential<T>,
    density: &BiasDensity<T>,
    grid: &Grid<T>,
) -> Result<T> {
    let p = node_densities(density, grid)?;
    let dt = grid.dt();
    let two = T::lit(2.0);
    Ok(second_diff(f, grid)
        .iter()
        .zip(&p)
        .map(|(&u, &p)| dt * p * pot.bregman(u / (two * p), T::zero()))
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VariationalMode<T> {
    UnscaledRelu,
    ScaledAbs(Potential<T>),
    Spline,
}

#[derive(Clone, Debug)]
pub struct VariationalSpec<T> {
    pub data: Dataset<T>,
    pub density: BiasDensity<T>,
    pub grid: Grid<T>,
    pub mode: VariationalMode<T>,
    /// Network output at initialization on each data point; the interpolation targets are
    /// `y_i - offset_i`.
    pub offsets: Option<Vec<T>>,
}

impl<T: Scalar> VariationalSpec<T> {
    pub fn new(data: Dataset<T>, density: BiasDensity<T>, mode: VariationalMode<T>) -> Self {
        VariationalSpec {
            data,
            density,
            grid: Grid::default(),
            mode,
            offsets: None,
        }
    }

    pub fn with_grid(mut self, grid: Grid<T>) -> Self {
        self.grid = grid;
        self
    }

    pub fn with_offsets(mut self, offsets: Vec<T>) -> Self {
        self.offsets = Some(offsets);
        self
    }

    pub fn with_mode(mut self, mode: VariationalMode<T>) -> Self {
        self.mode = mode;
        self
    }

    pub fn targets(&self) -> Result<Vec<T>> {
        match &self.offsets {
            None => Ok(self.data.ys().to_vec()),
            Some(o) if o.len() == self.data.len() => {
                Ok(self.data.ys().iter().zip(o).map(|(&y, &f)| y - f).collect())
            }
            Some(o) => Err(Error::LengthMismatch {
                expected: self.data.len(),
                got: o.len(),
            }),
        }
    }

    /// Objective of the spec's mode evaluated at `f`.
    pub fn objective(&self, f: &DiscreteFunction<T>) -> Result<T> {
        match self.mode {
            VariationalMode::UnscaledRelu => Ok(eval_g1(f, &self.density, &self.grid)?
                + eval_g2(f)
                + eval_g3(f, &self.density, &self.grid)?),
            VariationalMode::ScaledAbs(pot) => eval_bregman(f, &pot, &self.density, &self.grid),
            VariationalMode::Spline => eval_g1(f, &self.density, &self.grid),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics<T> {
    pub objective: T,
    /// Largest violation of interpolation, tail linearity and (scaled mode) `G2 = G3 = 0`.
    pub constraint_residual: T,
    /// Infinity norm of the KKT residual for the quadratic solves, of the reduced gradient
    /// for the Newton solver.
    pub optimality_residual: T,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalSolution<T> {
    pub function: DiscreteFunction<T>,
    pub diagnostics: SolverDiagnostics<T>,
    /// Grid nodes the data were snapped to, in input order.
    pub data_nodes: Vec<usize>,
}

/// Reduced parametrization `x = (c, s, u_{i1}, ..., u_{im})`: `c = h_{i1}`, `s` is the slope
/// left of the hull and `u_i` are second derivatives at hull nodes.
struct Layout<T> {
    grid: Grid<T>,
    i1: usize,
    im: usize,
    data_nodes: Vec<usize>,
    targets: Vec<T>,
    /// Density at hull nodes `i1..=im`.
    p: Vec<T>,
}

impl<T: Scalar> Layout<T> {
    fn new(spec: &VariationalSpec<T>) -> Result<Self> {
        let grid = spec.grid;
        grid.validate()?;
        spec.density.validate()?;
        if spec.data.dim() != 1 {
            return Err(Error::Dimension(
                "variational problems are one-dimensional".into(),
            ));
        }
        if spec.data.is_empty() {
            return Err(Error::Empty("no data".into()));
        }
        let targets = spec.targets()?;
        let b = spec.density.half_width();
        let dt = grid.dt();
        let mut data_nodes = Vec::with_capacity(spec.data.len());
        for i in 0..spec.data.len() {
            let x = spec.data.x(i)[0];
            if x.abs() > b {
                return Err(Error::OutOfRange {
                    x: x.as_f64(),
                    what: format!("bias support [-{b}, {b}]"),
                });
            }
            let k = grid.nearest(x)?;
            if k == 0 || k == grid.n {
                return Err(Error::OutOfRange {
                    x: x.as_f64(),
                    what: "grid interior".into(),
                });
            }
            let off = (grid.t(k) - x).abs();
            if off > dt * T::lit(0.5e-6) {
                log::warn!(
                    "data point {x} snapped to grid node {} (distance {off})",
                    grid.t(k)
                );
            }
            if let Some(j) = data_nodes.iter().position(|&n| n == k) {
                return Err(Error::DuplicateData(format!(
                    "points {j} and {i} snap to the same grid node {k}"
                )));
            }
            data_nodes.push(k);
        }
        let i1 = *data_nodes.iter().min().expect("non-empty");
        let im = *data_nodes.iter().max().expect("non-empty");
        let mut p = Vec::with_capacity(im - i1 + 1);
        for i in i1..=im {
            let v = spec.density.pdf_clamped(grid.t(i));
            if !(v > T::zero()) {
                return Err(Error::ZeroDensity(grid.t(i).as_f64()));
            }
            p.push(v);
        }
        Ok(Layout {
            grid,
            i1,
            im,
            data_nodes,
            targets,
            p,
        })
    }

    fn hull_len(&self) -> usize {
        self.im - self.i1 + 1
    }

    fn dim(&self) -> usize {
        self.hull_len() + 2
    }

    /// Coefficients of `h_j` as a linear function of `x`.
    fn h_row(&self, j: usize) -> Vec<T> {
        let dt = self.grid.dt();
        let mut row = vec![T::zero(); self.dim()];
        row[0] = T::one();
        if j <= self.i1 {
            row[1] = -dt * T::from_usize_lossy(self.i1 - j);
        } else {
            row[1] = dt * T::from_usize_lossy(j - self.i1);
            let dt2 = dt * dt;
            for i in self.i1..j.min(self.im + 1) {
                row[2 + i - self.i1] = dt2 * T::from_usize_lossy(j - i);
            }
        }
        row
    }

    /// Coefficients of the right slope `s + dt sum u`.
    fn slope_pos_row(&self) -> Vec<T> {
        let dt = self.grid.dt();
        let mut row = vec![dt; self.dim()];
        row[0] = T::zero();
        row[1] = T::one();
        row
    }

    fn slope_neg_row(&self) -> Vec<T> {
        let mut row = vec![T::zero(); self.dim()];
        row[1] = T::one();
        row
    }

    fn expand(&self, x: &[T]) -> DiscreteFunction<T> {
        let dt = self.grid.dt();
        let (c, s) = (x[0], x[1]);
        let mut h = vec![T::zero(); self.grid.len()];
        for (j, hj) in h.iter_mut().enumerate().take(self.i1 + 1) {
            *hj = c - dt * T::from_usize_lossy(self.i1 - j) * s;
        }
        // Right of the hull start, accumulate exact row sums to avoid drift.
        let u = &x[2..];
        let mut slope = s;
        let mut weighted = T::zero();
        let mut plain = T::zero();
        for j in self.i1 + 1..self.grid.len() {
            let i = j - 1;
            if i <= self.im {
                plain += u[i - self.i1];
                weighted += u[i - self.i1] * T::from_usize_lossy(i - self.i1);
                slope = s + dt * plain;
            }
            let k = T::from_usize_lossy(j - self.i1);
            let sum_u = k * plain - weighted;
            h[j] = c + dt * k * s + dt * dt * sum_u;
        }
        DiscreteFunction {
            h,
            slope_neg: s,
            slope_pos: slope,
        }
    }

    /// Interpolation rows and targets.
    fn interpolation(&self) -> (Vec<Vec<T>>, Vec<T>) {
        let rows = self.data_nodes.iter().map(|&k| self.h_row(k)).collect();
        (rows, self.targets.clone())
    }

    fn boundary(&self, density: &BiasDensity<T>) -> Result<(usize, usize)> {
        boundary_nodes(density, &self.grid)
    }

    /// Row of `L_r s_+ + L_l s_- - h(L_r) - h(L_l)`.
    fn g3_row(&self, il: usize, ir: usize) -> Vec<T> {
        let pos = self.slope_pos_row();
        let neg = self.slope_neg_row();
        let (hr, hl) = (self.h_row(ir), self.h_row(il));
        let (tr, tl) = (self.grid.t(ir), self.grid.t(il));
        (0..self.dim())
            .map(|k| tr * pos[k] + tl * neg[k] - hr[k] - hl[k])
            .collect()
    }

    fn g2_row(&self) -> Vec<T> {
        let pos = self.slope_pos_row();
        let neg = self.slope_neg_row();
        pos.iter().zip(&neg).map(|(&a, &b)| a + b).collect()
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    crate::linalg::dot(a, b)
}

/// Solves `min x^T M x` subject to `A x = c` through the KKT system, with one step of
/// iterative refinement. Returns `(x, kkt residual)`.
fn solve_kkt<T: Scalar>(m: &Mat<T>, rows: &[Vec<T>], rhs: &[T]) -> Result<(Vec<T>, T)> {
    let n = m.rows();
    let k = rows.len();
    let mut kkt = Mat::zeros(n + k, n + k);
    for i in 0..n {
        for j in 0..n {
            kkt[(i, j)] = m[(i, j)] + m[(i, j)];
        }
    }
    for (r, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            kkt[(n + r, j)] = v;
            kkt[(j, n + r)] = v;
        }
    }
    let mut b = vec![T::zero(); n + k];
    b[n..].copy_from_slice(rhs);
    let mut z = solve_gepp(&kkt, &b)?;
    let residual =
        |z: &[T]| -> Vec<T> { kkt.matvec(z).iter().zip(&b).map(|(&a, &b)| b - a).collect() };
    let r = residual(&z);
    let dz = solve_gepp(&kkt, &r)?;
    z.iter_mut().zip(&dz).for_each(|(a, &d)| *a += d);
    let res = max_abs(&residual(&z));
    z.truncate(n);
    Ok((z, res))
}

fn constraint_residual<T: Scalar>(rows: &[Vec<T>], rhs: &[T], x: &[T]) -> T {
    rows.iter()
        .zip(rhs)
        .map(|(r, &c)| (dot(r, x) - c).abs())
        .fold(T::zero(), T::max)
}

fn finish<T: Scalar>(
    spec: &VariationalSpec<T>,
    layout: &Layout<T>,
    x: &[T],
    rows: &[Vec<T>],
    rhs: &[T],
    optimality_residual: T,
    iterations: usize,
) -> Result<VariationalSolution<T>> {
    let function = layout.expand(x);
    let objective = spec.objective(&function)?;
    let mut constraint = constraint_residual(rows, rhs, x);
    // Check the expanded function directly as well.
    for (&k, &t) in layout.data_nodes.iter().zip(&layout.targets) {
        constraint = constraint.max((function.h[k] - t).abs());
    }
    constraint = constraint.max(tail_residual(&function, &layout.grid, layout.i1, layout.im));
    Ok(VariationalSolution {
        function,
        diagnostics: SolverDiagnostics {
            objective,
            constraint_residual: constraint,
            optimality_residual,
            iterations,
        },
        data_nodes: layout.data_nodes.clone(),
    })
}

/// Largest deviation of tail segment slopes from the asymptotic slopes.
pub fn tail_residual<T: Scalar>(
    f: &DiscreteFunction<T>,
    grid: &Grid<T>,
    i1: usize,
    im: usize,
) -> T {
    let dt = grid.dt();
    let left = (1..=i1).map(|j| (f.h[j] - f.h[j - 1] - dt * f.slope_neg).abs());
    let right = (im + 1..=grid.n).map(|j| (f.h[j] - f.h[j - 1] - dt * f.slope_pos).abs());
    left.chain(right).fold(T::zero(), T::max)
}

/// Diagonal part of the G1 quadratic form on the hull variables: `dt / p_i`.
fn g1_form<T: Scalar>(layout: &Layout<T>) -> Mat<T> {
    let n = layout.dim();
    let dt = layout.grid.dt();
    let mut m = Mat::zeros(n, n);
    for (i, &p) in layout.p.iter().enumerate() {
        m[(2 + i, 2 + i)] = dt / p;
    }
    m
}

fn add_outer<T: Scalar>(m: &mut Mat<T>, v: &[T], w: T) {
    for i in 0..v.len() {
        if v[i] == T::zero() {
            continue;
        }
        for j in 0..v.len() {
            m[(i, j)] += w * v[i] * v[j];
        }
    }
}

/// Minimizer of `G1 + G2 + G3` under interpolation and tail linearity.
pub fn solve_unscaled<T: Scalar>(spec: &VariationalSpec<T>) -> Result<VariationalSolution<T>> {
    if !matches!(spec.mode, VariationalMode::UnscaledRelu) {
        return Err(Error::InvalidConfig(
            "solve_unscaled needs the unscaled ReLU mode".into(),
        ));
    }
    let layout = Layout::new(spec)?;
    let (il, ir) = layout.boundary(&spec.density)?;
    let mut m = g1_form(&layout);
    add_outer(&mut m, &layout.g2_row(), T::one());
    add_outer(
        &mut m,
        &layout.g3_row(il, ir),
        T::one() / spec.density.second_moment(),
    );
    let (rows, rhs) = layout.interpolation();
    let (x, kkt) = solve_kkt(&m, &rows, &rhs)?;
    finish(spec, &layout, &x, &rows, &rhs, kkt, 1)
}

/// Minimizer of `G1` alone under interpolation; tails are linear, so `h'' = 0` outside the hull.
pub fn solve_spline<T: Scalar>(spec: &VariationalSpec<T>) -> Result<VariationalSolution<T>> {
    if !matches!(spec.mode, VariationalMode::Spline) {
        return Err(Error::InvalidConfig(
            "solve_spline needs the spline mode".into(),
        ));
    }
    let layout = Layout::new(spec)?;
    let (rows, rhs) = layout.interpolation();
    let (x, kkt) = solve_kkt(&g1_form(&layout), &rows, &rhs)?;
    finish(spec, &layout, &x, &rows, &rhs, kkt, 1)
}

/// Minimizer of `G1` under the constraint set of the scaled problem (interpolation, tail
/// linearity, `G2 = G3 = 0`), solved through the KKT system. For the quadratic potential the
/// scaled problem reduces to this one.
pub fn solve_g1_restricted<T: Scalar>(spec: &VariationalSpec<T>) -> Result<VariationalSolution<T>> {
    let layout = Layout::new(spec)?;
    let (rows, rhs) = scaled_constraints(&layout, &spec.density)?;
    let (x, kkt) = solve_kkt(&g1_form(&layout), &rows, &rhs)?;
    let mut sol = finish(
        &spec.clone().with_mode(VariationalMode::Spline),
        &layout,
        &x,
        &rows,
        &rhs,
        kkt,
        1,
    )?;
    sol.diagnostics.objective = eval_g1(&sol.function, &spec.density, &spec.grid)?;
    Ok(sol)
}

fn scaled_constraints<T: Scalar>(
    layout: &Layout<T>,
    density: &BiasDensity<T>,
) -> Result<(Vec<Vec<T>>, Vec<T>)> {
    let (il, ir) = layout.boundary(density)?;
    let (mut rows, mut rhs) = layout.interpolation();
    rows.push(layout.g2_row());
    rhs.push(T::zero());
    rows.push(layout.g3_row(il, ir));
    rhs.push(T::zero());
    Ok((rows, rhs))
}

/// Separable objective `sum_i dt p_i D_phi(u_i / (2 p_i), 0)` on the hull variables.
struct BregmanObjective<'a, T> {
    pot: &'a Potential<T>,
    p: &'a [T],
    dt: T,
}

impl<T: Scalar> BregmanObjective<'_, T> {
    fn value(&self, x: &[T]) -> T {
        let two = T::lit(2.0);
        x[2..]
            .iter()
            .zip(self.p)
            .map(|(&u, &p)| self.dt * p * self.pot.bregman(u / (two * p), T::zero()))
            .sum()
    }

    fn gradient(&self, x: &[T], out: &mut [T]) {
        let two = T::lit(2.0);
        let g0 = self.pot.grad(T::zero());
        out[0] = T::zero();
        out[1] = T::zero();
        for ((o, &u), &p) in out[2..].iter_mut().zip(&x[2..]).zip(self.p) {
            *o = self.dt * (self.pot.grad(u / (two * p)) - g0) / two;
        }
    }

    fn hessian(&self, x: &[T], out: &mut [T]) {
        let two = T::lit(2.0);
        out[0] = T::zero();
        out[1] = T::zero();
        for ((o, &u), &p) in out[2..].iter_mut().zip(&x[2..]).zip(self.p) {
            *o = self.dt * self.pot.hess(u / (two * p)) / (two * two * p);
        }
    }
}

/// Minimizer of the Bregman objective subject to interpolation, tail linearity and
/// `G2 = G3 = 0`, by damped Newton on the null space of the constraints.
pub fn solve_scaled<T: Scalar>(spec: &VariationalSpec<T>) -> Result<VariationalSolution<T>> {
    let pot = match spec.mode {
        VariationalMode::ScaledAbs(pot) => pot,
        _ => {
            return Err(Error::InvalidConfig(
                "solve_scaled needs the scaled Abs mode".into(),
            ))
        }
    };
    let layout = Layout::new(spec)?;
    let (rows, rhs) = scaled_constraints(&layout, &spec.density)?;
    let a = Mat::from_rows(&rows)?;
    let affine = null_space(&a, &rhs)?;
    let obj = BregmanObjective {
        pot: &pot,
        p: &layout.p,
        dt: layout.grid.dt(),
    };
    let (x, grad_norm, iterations) = if pot.is_trainable() {
        newton(&obj, &affine.particular, &affine.basis)?
    } else {
        gradient_descent(&obj, &affine.particular, &affine.basis)?
    };
    finish(spec, &layout, &x, &rows, &rhs, grad_norm, iterations)
}

fn reduced_gradient<T: Scalar>(z: &Mat<T>, g: &[T]) -> Vec<T> {
    z.tmatvec(g)
}

fn newton<T: Scalar>(
    obj: &BregmanObjective<'_, T>,
    x0: &[T],
    z: &Mat<T>,
) -> Result<(Vec<T>, T, usize)> {
    let (n, r) = (z.rows(), z.cols());
    let tol = T::tol(NEWTON_GRAD_TOL);
    let mut x = x0.to_vec();
    let mut g = vec![T::zero(); n];
    let mut hd = vec![T::zero(); n];
    let mut f = obj.value(&x);
    let mut stalled = 0;
    for iter in 0..MAX_NEWTON_ITERS {
        obj.gradient(&x, &mut g);
        let gr = reduced_gradient(z, &g);
        let gnorm = max_abs(&gr);
        if gnorm <= tol {
            return Ok((x, gnorm, iter));
        }
        obj.hessian(&x, &mut hd);
        let mut hr = Mat::zeros(r, r);
        for (i, &w) in hd.iter().enumerate() {
            if w == T::zero() {
                continue;
            }
            let zi = z.row(i);
            for a in 0..r {
                let wa = w * zi[a];
                if wa == T::zero() {
                    continue;
                }
                let row = hr.row_mut(a);
                for b in a..r {
                    row[b] += wa * zi[b];
                }
            }
        }
        for a in 0..r {
            for b in 0..a {
                hr[(a, b)] = hr[(b, a)];
            }
        }
        let neg: Vec<T> = gr.iter().map(|&v| -v).collect();
        let dir = damped_solve(&hr, &neg);
        let dx = z.matvec(&dir);
        let slope = crate::linalg::dot(&gr, &dir);
        let mut step = T::one();
        let mut accepted = false;
        let mut trial = vec![T::zero(); n];
        for _ in 0..60 {
            for ((t, &xi), &d) in trial.iter_mut().zip(&x).zip(&dx) {
                *t = xi + step * d;
            }
            let ft = obj.value(&trial);
            if ft <= f + T::lit(1e-4) * step * slope {
                accepted = true;
                break;
            }
            step *= T::lit(0.5);
        }
        if !accepted {
            // Rounding in f dominates; accept the full step if it reduces the gradient.
            for ((t, &xi), &d) in trial.iter_mut().zip(&x).zip(&dx) {
                *t = xi + d;
            }
            obj.gradient(&trial, &mut g);
            let gt = max_abs(&reduced_gradient(z, &g));
            if gt < gnorm {
                x.clone_from(&trial);
                f = obj.value(&x);
                continue;
            }
            stalled += 1;
            if stalled > 3 {
                return Err(Error::NoConvergence {
                    iterations: iter,
                    grad_norm: gnorm.as_f64(),
                });
            }
            continue;
        }
        x.clone_from(&trial);
        f = obj.value(&x);
    }
    obj.gradient(&x, &mut g);
    let gnorm = max_abs(&reduced_gradient(z, &g));
    Err(Error::NoConvergence {
        iterations: MAX_NEWTON_ITERS,
        grad_norm: gnorm.as_f64(),
    })
}

/// Cholesky solve with Levenberg damping when the matrix is not numerically positive
/// definite; falls back to the steepest-descent direction.
fn damped_solve<T: Scalar>(h: &Mat<T>, b: &[T]) -> Vec<T> {
    if let Some(l) = cholesky(h) {
        return cholesky_solve(&l, b);
    }
    let scale = (0..h.rows())
        .map(|i| h[(i, i)].abs())
        .fold(T::zero(), T::max)
        .max(T::one());
    let mut lambda = scale * T::lit(1e-10);
    for _ in 0..30 {
        let mut damped = h.clone();
        for i in 0..h.rows() {
            damped[(i, i)] += lambda;
        }
        if let Some(l) = cholesky(&damped) {
            return cholesky_solve(&l, b);
        }
        lambda *= T::lit(10.0);
    }
    b.iter().map(|&v| v / scale).collect()
}

/// Gradient descent with backtracking for potentials without bounded curvature.
fn gradient_descent<T: Scalar>(
    obj: &BregmanObjective<'_, T>,
    x0: &[T],
    z: &Mat<T>,
) -> Result<(Vec<T>, T, usize)> {
    let n = z.rows();
    let tol = T::tol(RELAXED_GRAD_TOL);
    let mut x = x0.to_vec();
    let mut g = vec![T::zero(); n];
    let mut f = obj.value(&x);
    let mut step = T::one();
    let mut best_window = f;
    let mut gnorm = T::infinity();
    for iter in 0..MAX_NEWTON_ITERS {
        obj.gradient(&x, &mut g);
        let gr = reduced_gradient(z, &g);
        gnorm = max_abs(&gr);
        if gnorm <= tol {
            return Ok((x, gnorm, iter));
        }
        let dx = z.matvec(&gr);
        let gg = crate::linalg::dot(&gr, &gr);
        step *= T::lit(2.0);
        let mut moved = false;
        for _ in 0..80 {
            let trial: Vec<T> = x.iter().zip(&dx).map(|(&a, &d)| a - step * d).collect();
            let ft = obj.value(&trial);
            if ft <= f - T::lit(1e-4) * step * gg {
                x = trial;
                f = ft;
                moved = true;
                break;
            }
            step *= T::lit(0.5);
        }
        if !moved {
            return Ok((x, gnorm, iter));
        }
        if iter % 1000 == 999 {
            if best_window - f <= T::tol(RELAXED_GRAD_TOL) * f.abs().max(T::one()) {
                return Ok((x, gnorm, iter));
            }
            best_window = f;
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_NEWTON_ITERS,
        grad_norm: gnorm.as_f64(),
    })
}

/// Dispatches on the spec's mode.
pub fn solve<T: Scalar>(spec: &VariationalSpec<T>) -> Result<VariationalSolution<T>> {
    match spec.mode {
        VariationalMode::UnscaledRelu => solve_unscaled(spec),
        VariationalMode::ScaledAbs(_) => solve_scaled(spec),
        VariationalMode::Spline => solve_spline(spec),
    }
}

/// Returns `(i1, im)`, the grid nodes of the leftmost and rightmost data points.
pub fn hull_nodes<T: Scalar>(spec: &VariationalSpec<T>) -> Result<(usize, usize)> {
    let l = Layout::new(spec)?;
    Ok((l.i1, l.im))
}
