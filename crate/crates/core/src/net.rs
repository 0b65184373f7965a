//! Two-layer network `f(x, theta) = sum_k a_k sigma(w_k . x - b_k) + d`.
//!
//! Parameters live in one flat vector ordered `(W row-major, b, a, d)`; Jacobians, Hessian
//! diagonals and trajectory dumps all use that ordering.

use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::density::BiasDensity;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Abs,
}

impl Activation {
    #[inline]
    pub fn eval<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Abs => z.abs(),
        }
    }

    /// Derivative with the convention `sigma'(0) = 0`.
    #[inline]
    pub fn deriv<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Abs => {
                if z > T::zero() {
                    T::one()
                } else if z < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// Named parameter block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    W,
    B,
    A,
    D,
}

impl Block {
    pub fn name(self) -> &'static str {
        match self {
            Block::W => "W",
            Block::B => "b",
            Block::A => "a",
            Block::D => "d",
        }
    }
}

/// Training inputs `x_i` (flattened, `dim` per point) and labels `y_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T> {
    dim: usize,
    xs: Vec<T>,
    ys: Vec<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(dim: usize, xs: Vec<T>, ys: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("input dimension must be >= 1".into()));
        }
        if xs.len() != dim * ys.len() {
            return Err(Error::LengthMismatch {
                expected: dim * ys.len(),
                got: xs.len(),
            });
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "dataset contains non-finite values".into(),
            ));
        }
        let data = Dataset { dim, xs, ys };
        for i in 0..data.len() {
            for j in 0..i {
                if data.x(i) == data.x(j) {
                    return Err(Error::DuplicateData(format!(
                        "points {j} and {i} share input {:?}",
                        data.x(i)
                    )));
                }
            }
        }
        Ok(data)
    }

    /// One-dimensional dataset from `(x, y)` pairs.
    pub fn univariate(points: &[(T, T)]) -> Result<Self> {
        let (xs, ys) = points.iter().copied().unzip();
        Self::new(1, xs, ys)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn x(&self, i: usize) -> &[T] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn xs(&self) -> &[T] {
        &self.xs
    }

    pub fn ys(&self) -> &[T] {
        &self.ys
    }

    /// Same inputs with labels shifted by `c`.
    pub fn shifted(&self, c: T) -> Self {
        Dataset {
            dim: self.dim,
            xs: self.xs.clone(),
            ys: self.ys.iter().map(|&y| y + c).collect(),
        }
    }

    /// Same inputs with new labels.
    pub fn with_labels(&self, ys: Vec<T>) -> Result<Self> {
        if ys.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: ys.len(),
            });
        }
        Ok(Dataset {
            dim: self.dim,
            xs: self.xs.clone(),
            ys,
        })
    }
}

/// Distribution of the initial parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec<T> {
    pub bias_density: BiasDensity<T>,
    /// Output weights are `a_scale * N(0, 1) / sqrt(n)`; zero gives an all-zero output layer.
    pub a_scale: T,
    pub d_init: T,
    pub seed: u64,
}

impl<T: Scalar> InitSpec<T> {
    /// Uniform biases on `[-1, 1]` and a zero output layer.
    pub fn zero_output(seed: u64) -> Self {
        InitSpec {
            bias_density: BiasDensity::Uniform { b: T::one() },
            a_scale: T::zero(),
            d_init: T::zero(),
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetParams<T> {
    width: usize,
    dim: usize,
    activation: Activation,
    theta: Vec<T>,
    anchor: Arc<Vec<T>>,
}

impl<T: Scalar> NetParams<T> {
    /// Builds parameters from a flat vector; the anchor is a copy of `theta`.
    pub fn from_theta(
        width: usize,
        dim: usize,
        activation: Activation,
        theta: Vec<T>,
    ) -> Result<Self> {
        if width == 0 || dim == 0 {
            return Err(Error::Dimension(
                "width and input dimension must be >= 1".into(),
            ));
        }
        let p = Self::param_count_for(width, dim);
        if theta.len() != p {
            return Err(Error::LengthMismatch {
                expected: p,
                got: theta.len(),
            });
        }
        let anchor = Arc::new(theta.clone());
        Ok(NetParams {
            width,
            dim,
            activation,
            theta,
            anchor,
        })
    }

    pub fn from_parts(w: &[T], b: &[T], a: &[T], d_out: T, activation: Activation) -> Result<Self> {
        let width = b.len();
        if a.len() != width || width == 0 || !w.len().is_multiple_of(width) {
            return Err(Error::Dimension(format!(
                "W {} / b {} / a {}",
                w.len(),
                b.len(),
                a.len()
            )));
        }
        let dim = w.len() / width;
        let mut theta = Vec::with_capacity(width * (dim + 2) + 1);
        theta.extend_from_slice(w);
        theta.extend_from_slice(b);
        theta.extend_from_slice(a);
        theta.push(d_out);
        Self::from_theta(width, dim, activation, theta)
    }

    /// Same network shape and anchor with a different current parameter vector.
    pub fn with_theta(&self, theta: Vec<T>) -> Result<Self> {
        if theta.len() != self.theta.len() {
            return Err(Error::LengthMismatch {
                expected: self.theta.len(),
                got: theta.len(),
            });
        }
        Ok(NetParams {
            theta,
            ..self.clone_shape()
        })
    }

    fn clone_shape(&self) -> Self {
        NetParams {
            width: self.width,
            dim: self.dim,
            activation: self.activation,
            theta: Vec::new(),
            anchor: Arc::clone(&self.anchor),
        }
    }

    /// The network at its anchor.
    pub fn at_anchor(&self) -> Self {
        NetParams {
            theta: self.anchor.as_ref().clone(),
            ..self.clone_shape()
        }
    }

    /// `p = n (d + 2) + 1`.
    pub fn param_count_for(width: usize, dim: usize) -> usize {
        width * (dim + 2) + 1
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [T] {
        &mut self.theta
    }

    pub fn anchor(&self) -> &[T] {
        &self.anchor
    }

    pub fn block_range(&self, block: Block) -> Range<usize> {
        let (n, d) = (self.width, self.dim);
        match block {
            Block::W => 0..n * d,
            Block::B => n * d..n * d + n,
            Block::A => n * d + n..n * d + 2 * n,
            Block::D => n * d + 2 * n..n * d + 2 * n + 1,
        }
    }

    pub fn block_of(&self, index: usize) -> Block {
        [Block::W, Block::B, Block::A, Block::D]
            .into_iter()
            .find(|&b| self.block_range(b).contains(&index))
            .expect("index within parameter vector")
    }

    pub fn w(&self, k: usize) -> &[T] {
        &self.theta[k * self.dim..(k + 1) * self.dim]
    }

    pub fn b(&self) -> &[T] {
        &self.theta[self.block_range(Block::B)]
    }

    pub fn a(&self) -> &[T] {
        &self.theta[self.block_range(Block::A)]
    }

    pub fn d_out(&self) -> T {
        self.theta[self.theta.len() - 1]
    }

    /// `max_k |theta_k - anchor_k|`.
    pub fn drift_sup(&self) -> T {
        self.theta
            .iter()
            .zip(self.anchor.iter())
            .fold(T::zero(), |m, (&t, &a)| m.max((t - a).abs()))
    }

    #[inline]
    fn preactivation(&self, k: usize, x: &[T]) -> T {
        let w = self.w(k);
        let b = self.theta[self.width * self.dim + k];
        if self.dim == 1 {
            w[0] * x[0] - b
        } else {
            crate::linalg::dot(w, x) - b
        }
    }

    pub fn forward(&self, x: &[T]) -> T {
        assert_eq!(x.len(), self.dim, "input dimension");
        let a0 = self.width * (self.dim + 1);
        let mut acc = self.d_out();
        for k in 0..self.width {
            acc += self.theta[a0 + k] * self.activation.eval(self.preactivation(k, x));
        }
        acc
    }

    pub fn forward_scalar(&self, x: T) -> T {
        self.forward(std::slice::from_ref(&x))
    }

    pub fn predictions(&self, data: &Dataset<T>) -> Vec<T> {
        (0..data.len()).map(|i| self.forward(data.x(i))).collect()
    }

    /// `m x p` Jacobian of the predictions with respect to `theta`.
    pub fn jacobian(&self, data: &Dataset<T>) -> Mat<T> {
        let (n, d) = (self.width, self.dim);
        let p = self.param_count();
        let mut j = Mat::zeros(data.len(), p);
        let (b0, a0) = (n * d, n * d + n);
        for i in 0..data.len() {
            let x = data.x(i);
            let row = j.row_mut(i);
            for k in 0..n {
                let z = self.preactivation(k, x);
                let ak = self.theta[a0 + k];
                let ds = ak * self.activation.deriv(z);
                for (c, &xc) in x.iter().enumerate() {
                    row[k * d + c] = ds * xc;
                }
                row[b0 + k] = -ds;
                row[a0 + k] = self.activation.eval(z);
            }
            row[p - 1] = T::one();
        }
        j
    }

    /// Mean squared error `(1/2m) sum_i (f(x_i) - y_i)^2`.
    pub fn loss(&self, data: &Dataset<T>) -> T {
        let inv_m = T::one() / T::from_usize_lossy(data.len());
        let mut s = T::zero();
        for i in 0..data.len() {
            let r = self.forward(data.x(i)) - data.ys()[i];
            s += r * r;
        }
        s * inv_m * T::lit(0.5)
    }

    /// `(1/m) J^T r`.
    pub fn loss_grad(&self, data: &Dataset<T>) -> Vec<T> {
        let mut g = vec![T::zero(); self.param_count()];
        let mut r = vec![T::zero(); data.len()];
        self.loss_and_grad_into(data, &mut r, &mut g, false);
        g
    }

    /// Fills `residual` with `(f(x_i) - y_i) / m` and `grad` with the loss gradient, returning
    /// the loss. With `output_only` only the `a` and `d` entries of `grad` are written.
    pub fn loss_and_grad_into(
        &self,
        data: &Dataset<T>,
        residual: &mut [T],
        grad: &mut [T],
        output_only: bool,
    ) -> T {
        let (n, d, m) = (self.width, self.dim, data.len());
        debug_assert_eq!(residual.len(), m);
        debug_assert_eq!(grad.len(), self.param_count());
        if d == 1 {
            let act = self.activation;
            return match act {
                Activation::Relu => self.loss_and_grad_scalar(
                    data,
                    residual,
                    grad,
                    output_only,
                    |z| act.eval(z),
                    |z| act.deriv(z),
                ),
                Activation::Abs => self.loss_and_grad_scalar(
                    data,
                    residual,
                    grad,
                    output_only,
                    |z| act.eval(z),
                    |z| act.deriv(z),
                ),
            };
        }
        let (b0, a0) = (n * d, n * d + n);
        let d_out = self.d_out();
        residual.iter_mut().for_each(|r| *r = d_out);
        for k in 0..n {
            let ak = self.theta[a0 + k];
            if ak == T::zero() {
                continue;
            }
            for (i, r) in residual.iter_mut().enumerate() {
                *r += ak * self.activation.eval(self.preactivation(k, data.x(i)));
            }
        }
        let inv_m = T::one() / T::from_usize_lossy(m);
        let mut loss = T::zero();
        for (r, &y) in residual.iter_mut().zip(data.ys()) {
            *r -= y;
            loss += *r * *r;
            *r *= inv_m;
        }
        loss = loss * inv_m * T::lit(0.5);

        for k in 0..n {
            let ak = self.theta[a0 + k];
            let mut ga = T::zero();
            let mut gb = T::zero();
            if !output_only {
                grad[k * d..(k + 1) * d]
                    .iter_mut()
                    .for_each(|g| *g = T::zero());
            }
            for (i, &r) in residual.iter().enumerate() {
                let x = data.x(i);
                let z = self.preactivation(k, x);
                ga += r * self.activation.eval(z);
                if !output_only && ak != T::zero() {
                    let ds = r * ak * self.activation.deriv(z);
                    for (g, &xc) in grad[k * d..(k + 1) * d].iter_mut().zip(x) {
                        *g += ds * xc;
                    }
                    gb -= ds;
                }
            }
            if !output_only {
                grad[b0 + k] = gb;
            }
            grad[a0 + k] = ga;
        }
        let p = self.param_count();
        grad[p - 1] = residual.iter().copied().sum();
        loss
    }

    /// Scalar-input specialization of [`Self::loss_and_grad_into`] with the activation
    /// resolved at compile time. Same arithmetic, same order.
    fn loss_and_grad_scalar<S: Fn(T) -> T, D: Fn(T) -> T>(
        &self,
        data: &Dataset<T>,
        residual: &mut [T],
        grad: &mut [T],
        output_only: bool,
        sigma: S,
        dsigma: D,
    ) -> T {
        let n = self.width;
        let (xs, ys) = (data.xs(), data.ys());
        let (w, rest) = self.theta.split_at(n);
        let (b, rest) = rest.split_at(n);
        let (a, d_out) = rest.split_at(n);
        let (gw, grest) = grad.split_at_mut(n);
        let (gb, grest) = grest.split_at_mut(n);
        let (ga, gd) = grest.split_at_mut(n);

        residual.iter_mut().for_each(|r| *r = d_out[0]);
        for ((&wk, &bk), &ak) in w.iter().zip(b).zip(a) {
            if ak == T::zero() {
                continue;
            }
            for (r, &x) in residual.iter_mut().zip(xs) {
                *r += ak * sigma(wk * x - bk);
            }
        }
        let inv_m = T::one() / T::from_usize_lossy(xs.len());
        let mut loss = T::zero();
        for (r, &y) in residual.iter_mut().zip(ys) {
            *r -= y;
            loss += *r * *r;
            *r *= inv_m;
        }
        loss = loss * inv_m * T::lit(0.5);

        for k in 0..n {
            let (wk, bk, ak) = (w[k], b[k], a[k]);
            let mut sa = T::zero();
            if output_only || ak == T::zero() {
                for (&r, &x) in residual.iter().zip(xs) {
                    sa += r * sigma(wk * x - bk);
                }
                if !output_only {
                    gw[k] = T::zero();
                    gb[k] = T::zero();
                }
            } else {
                let (mut sw, mut sb) = (T::zero(), T::zero());
                for (&r, &x) in residual.iter().zip(xs) {
                    let z = wk * x - bk;
                    sa += r * sigma(z);
                    let ds = r * ak * dsigma(z);
                    sw += ds * x;
                    sb -= ds;
                }
                gw[k] = sw;
                gb[k] = sb;
            }
            ga[k] = sa;
        }
        gd[0] = residual.iter().copied().sum();
        loss
    }

    /// `(index, block name, value)` for every coordinate in storage order.
    pub fn coordinates(&self) -> impl Iterator<Item = (usize, &'static str, T)> + '_ {
        self.theta
            .iter()
            .enumerate()
            .map(move |(i, &v)| (i, self.block_of(i).name(), v))
    }
}

/// Samples initial parameters. Deterministic given `spec.seed`.
pub fn init_params<T: Scalar>(
    width: usize,
    dim: usize,
    spec: &InitSpec<T>,
    activation: Activation,
) -> Result<NetParams<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    init_params_with_rng(width, dim, spec, activation, &mut rng)
}

pub fn init_params_with_rng<T: Scalar, R: Rng + ?Sized>(
    width: usize,
    dim: usize,
    spec: &InitSpec<T>,
    activation: Activation,
    rng: &mut R,
) -> Result<NetParams<T>> {
    if width == 0 || dim == 0 {
        return Err(Error::Dimension(
            "width and input dimension must be >= 1".into(),
        ));
    }
    spec.bias_density.validate()?;
    let mut theta = Vec::with_capacity(NetParams::<T>::param_count_for(width, dim));
    for _ in 0..width {
        if dim == 1 {
            theta.push(if rng.gen::<bool>() {
                T::one()
            } else {
                -T::one()
            });
        } else {
            // Normalized Gaussian vectors are uniform on the sphere.
            loop {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    let v: Vec<T> = v.iter().map(|x| T::lit(x / norm)).collect();
                    let nt = crate::linalg::norm2(&v);
                    theta.extend(v.iter().map(|&x| x / nt));
                    break;
                }
            }
        }
    }
    for _ in 0..width {
        theta.push(spec.bias_density.sample(rng));
    }
    let inv_sqrt_n = T::one() / T::from_usize_lossy(width).sqrt();
    for _ in 0..width {
        let a = if spec.a_scale == T::zero() {
            T::zero()
        } else {
            let z: f64 = StandardNormal.sample(rng);
            spec.a_scale * T::lit(z) * inv_sqrt_n
        };
        theta.push(a);
    }
    theta.push(spec.d_init);
    NetParams::from_theta(width, dim, activation, theta)
}
