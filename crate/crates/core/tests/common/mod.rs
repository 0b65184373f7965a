//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use mirrorflow::density::BiasDensity;
use mirrorflow::variational::Grid;
use mirrorflow::Dataset;
use nalgebra::{DMatrix, DVector};

pub const FIG1: [(f64, f64); 5] = [
    (-1.0, -0.15),
    (-0.2, -0.15),
    (0.0, 0.15),
    (0.2, -0.15),
    (1.0, -0.15),
];
pub const FIG2: [(f64, f64); 4] = [(-1.0, 0.15), (0.35, 0.15), (0.65, -0.15), (1.0, 0.15)];

pub fn fig1() -> Dataset<f64> {
    Dataset::univariate(&FIG1).unwrap()
}

pub fn fig2() -> Dataset<f64> {
    Dataset::univariate(&FIG2).unwrap()
}

pub fn nearest(grid: &Grid<f64>, x: f64) -> usize {
    ((x - grid.lo) / grid.dt()).round() as usize
}

/// Minimizes `G1 + G2 + G3` in the literal variables `(h_0..h_N, s_-, s_+)` with every tail
/// constraint written out, using nalgebra's full-pivot LU on the KKT system.
pub fn literal_unscaled_kkt(
    points: &[(f64, f64)],
    density: &BiasDensity<f64>,
    grid: &Grid<f64>,
) -> (Vec<f64>, f64, f64) {
    let n = grid.n;
    let dt = grid.dt();
    let nv = n + 3;
    let (sneg, spos) = (n + 1, n + 2);
    let mut q = DMatrix::<f64>::zeros(nv, nv);

    for i in 1..n {
        let t = grid.t(i);
        let b = density.half_width();
        let p = density.pdf(t.clamp(-b, b));
        let mut r = DVector::<f64>::zeros(nv);
        r[i - 1] = 1.0 / (dt * dt);
        r[i] = -2.0 / (dt * dt);
        r[i + 1] = 1.0 / (dt * dt);
        q += (dt / p) * &r * r.transpose();
    }
    let mut g2 = DVector::<f64>::zeros(nv);
    g2[sneg] = 1.0;
    g2[spos] = 1.0;
    q += &g2 * g2.transpose();

    let b = density.half_width();
    let (il, ir) = (nearest(grid, -b), nearest(grid, b));
    let mut g3 = DVector::<f64>::zeros(nv);
    g3[spos] += grid.t(ir);
    g3[sneg] += grid.t(il);
    g3[ir] -= 1.0;
    g3[il] -= 1.0;
    q += (1.0 / density.second_moment()) * &g3 * g3.transpose();

    let nodes: Vec<usize> = points.iter().map(|&(x, _)| nearest(grid, x)).collect();
    let i1 = *nodes.iter().min().unwrap();
    let im = *nodes.iter().max().unwrap();
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for (&k, &(_, y)) in nodes.iter().zip(points) {
        let mut r = DVector::zeros(nv);
        r[k] = 1.0;
        rows.push((r, y));
    }
    for j in 1..=i1 {
        let mut r = DVector::zeros(nv);
        r[j] = 1.0;
        r[j - 1] = -1.0;
        r[sneg] = -dt;
        rows.push((r, 0.0));
    }
    for j in im + 1..=n {
        let mut r = DVector::zeros(nv);
        r[j] = 1.0;
        r[j - 1] = -1.0;
        r[spos] = -dt;
        rows.push((r, 0.0));
    }

    let k = rows.len();
    let mut kkt = DMatrix::<f64>::zeros(nv + k, nv + k);
    kkt.view_mut((0, 0), (nv, nv)).copy_from(&(2.0 * &q));
    let mut rhs = DVector::<f64>::zeros(nv + k);
    for (c, (r, v)) in rows.iter().enumerate() {
        for j in 0..nv {
            kkt[(nv + c, j)] = r[j];
            kkt[(j, nv + c)] = r[j];
        }
        rhs[nv + c] = *v;
    }
    let lu = kkt.clone().full_piv_lu();
    let mut z = lu.solve(&rhs).expect("KKT system is nonsingular");
    for _ in 0..2 {
        let res = &rhs - &kkt * &z;
        z += lu.solve(&res).unwrap();
    }
    let kkt_res = (&rhs - &kkt * &z).amax();
    let cons_res = rows
        .iter()
        .map(|(r, v)| (r.dot(&z.rows(0, nv).into_owned()) - v).abs())
        .fold(0.0, f64::max);
    (z.as_slice()[..n + 1].to_vec(), kkt_res, cons_res)
}

/// Natural cubic spline through `(x_i, y_i)` from the textbook tridiagonal system for the
/// knot second derivatives, solved by the Thomas algorithm.
/// Minimizer of the summed squared second differences over the hull nodes subject to
/// interpolation at the nearest nodes, from a bordered system in the node values only.
/// Returns the first hull node and the values from there to the last one.
#[allow(dead_code)]
pub fn finite_difference_spline(points: &[(f64, f64)], grid: &Grid<f64>) -> (usize, Vec<f64>) {
    let idx: Vec<usize> = points.iter().map(|p| nearest(grid, p.0)).collect();
    let (i1, im) = (idx[0], idx[idx.len() - 1]);
    let (n, k) = (im - i1 + 1, points.len());
    let mut a = DMatrix::zeros(n + k, n + k);
    for r in 0..n - 2 {
        let stencil = [1.0, -2.0, 1.0];
        for (p, &sp) in stencil.iter().enumerate() {
            for (q, &sq) in stencil.iter().enumerate() {
                a[(r + p, r + q)] += sp * sq;
            }
        }
    }
    let mut rhs = DVector::zeros(n + k);
    for (c, (&i, p)) in idx.iter().zip(points).enumerate() {
        a[(n + c, i - i1)] = 1.0;
        a[(i - i1, n + c)] = 1.0;
        rhs[n + c] = p.1;
    }
    let x = a
        .full_piv_lu()
        .solve(&rhs)
        .expect("bordered system is nonsingular");
    (i1, x.iter().take(n).copied().collect())
}

pub struct NaturalSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let mut m = vec![0.0; n];
        if n > 2 {
            let k = n - 2;
            let mut diag: Vec<f64> = (0..k).map(|i| 2.0 * (h[i] + h[i + 1])).collect();
            let off: Vec<f64> = (0..k.saturating_sub(1)).map(|i| h[i + 1]).collect();
            let mut rhs: Vec<f64> = (0..k)
                .map(|i| 6.0 * ((y[i + 2] - y[i + 1]) / h[i + 1] - (y[i + 1] - y[i]) / h[i]))
                .collect();
            for i in 1..k {
                let w = off[i - 1] / diag[i - 1];
                diag[i] -= w * off[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            let mut sol = vec![0.0; k];
            sol[k - 1] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                sol[i] = (rhs[i] - off[i] * sol[i + 1]) / diag[i];
            }
            m[1..n - 1].copy_from_slice(&sol);
        }
        NaturalSpline {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = (0..n - 1).find(|&i| t <= self.x[i + 1]).unwrap_or(n - 2);
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let h = x1 - x0;
        let (a, b) = ((x1 - t) / h, (t - x0) / h);
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Eigenvalues of a symmetric matrix as roots of `det(M - lambda I)`, bracketed on a fine
/// scan of the Gershgorin interval and refined by bisection.
pub fn charpoly_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let det = |l: f64| (m - DMatrix::<f64>::identity(n, n) * l).lu().determinant();
    let r = (0..n)
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        + 1.0;
    let steps = 20_000;
    let mut roots = Vec::new();
    let mut prev = (-r, det(-r));
    for s in 1..=steps {
        let l = -r + 2.0 * r * s as f64 / steps as f64;
        let d = det(l);
        if d == 0.0 {
            roots.push(l);
        } else if prev.1 != 0.0 && d.signum() != prev.1.signum() {
            let (mut lo, mut hi, mut flo) = (prev.0, l, prev.1);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let fm = det(mid);
                if fm.signum() == flo.signum() {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        prev = (l, d);
    }
    roots
}

/// Relative error with an absolute floor for values near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(a.abs()).max(1e-8)
}
