//! Network-versus-solution comparisons and trajectory projections.

use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigen, Mat};
use crate::net::NetParams;
use crate::scalar::Scalar;
use crate::variational::{DiscreteFunction, Grid};

/// `f(t_i, theta) - f(t_i, anchor)` at every grid node.
pub fn function_change<T: Scalar>(net: &NetParams<T>, grid: &Grid<T>) -> Vec<T> {
    let init = net.at_anchor();
    grid.nodes()
        .into_iter()
        .map(|t| net.forward_scalar(t) - init.forward_scalar(t))
        .collect()
}

/// `max_i |f(t_i, theta) - f(t_i, anchor) - h_i|` over all grid nodes.
pub fn linf_error<T: Scalar>(
    net: &NetParams<T>,
    h: &DiscreteFunction<T>,
    grid: &Grid<T>,
) -> Result<T> {
    if net.dim() != 1 {
        return Err(Error::Dimension(
            "comparison on a grid needs scalar inputs".into(),
        ));
    }
    if h.h.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            got: h.h.len(),
        });
    }
    Ok(linf(&function_change(net, grid), &h.h))
}

pub fn linf<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs())
        .fold(T::zero(), T::max)
}

/// Projects snapshots onto their top two principal directions.
///
/// Works with the `T x T` Gram matrix of centered snapshots, so the cost is independent of
/// the parameter count. The direction signs are fixed by making the first nonzero loading
/// positive.
pub fn pca2<T: Scalar>(snapshots: &[Vec<T>]) -> Result<Vec<[T; 2]>> {
    let t = snapshots.len();
    if t < 3 {
        return Err(Error::TooFewSnapshots { need: 3, have: t });
    }
    let p = snapshots[0].len();
    if let Some(bad) = snapshots.iter().find(|s| s.len() != p) {
        return Err(Error::LengthMismatch {
            expected: p,
            got: bad.len(),
        });
    }
    let inv_t = T::one() / T::from_usize_lossy(t);
    let mean: Vec<T> = (0..p)
        .map(|k| snapshots.iter().map(|s| s[k]).sum::<T>() * inv_t)
        .collect();
    let centered: Vec<Vec<T>> = snapshots
        .iter()
        .map(|s| s.iter().zip(&mean).map(|(&a, &m)| a - m).collect())
        .collect();
    let mut gram = Mat::zeros(t, t);
    for i in 0..t {
        for j in i..t {
            let v = crate::linalg::dot(&centered[i], &centered[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let eig = jacobi_eigen(&gram)?;
    let top = eig.values[t - 1].max(T::zero());
    let mut out = vec![[T::zero(); 2]; t];
    for c in 0..2 {
        let idx = t - 1 - c;
        let lambda = eig.values[idx];
        if !(lambda > top * T::tol(1e-24)) || lambda <= T::zero() {
            continue;
        }
        let v: Vec<T> = (0..t).map(|i| eig.vectors[(i, idx)]).collect();
        // Loading in parameter space is X^T v / sqrt(lambda); only its sign matters here.
        let sign = (0..p)
            .map(|k| (0..t).map(|i| centered[i][k] * v[i]).sum::<T>())
            .find(|&l| l.abs() > T::tol(1e-12) * lambda.sqrt())
            .map_or(T::one(), |l| l.signum());
        let s = lambda.sqrt() * sign;
        for i in 0..t {
            out[i][c] = v[i] * s;
        }
    }
    Ok(out)
}
