//! Empirical kernel `H = (1/n) J diag(1/Hess Phi) J^T`, its infinite-width limit and drift
//! diagnostics along a trajectory.

use serde::{Deserialize, Serialize};

use crate::density::trapezoid;
use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigen, min_eigenvalue, spectral_norm_sym, Mat};
use crate::mirror::Trajectory;
use crate::net::{Activation, Dataset, InitSpec, NetParams};
use crate::potentials::Potential;
use crate::scalar::Scalar;

/// Quadrature nodes per weight sign for the limiting kernel.
pub const KERNEL_QUADRATURE_NODES: usize = 2001;

/// Kernel of `params` on `data` under the mirror geometry of `pot`.
pub fn kernel_matrix<T: Scalar>(
    params: &NetParams<T>,
    pot: &Potential<T>,
    data: &Dataset<T>,
) -> Result<Mat<T>> {
    let j = params.jacobian(data);
    let h = pot.hessian_diag(params.theta(), params.anchor(), params.width())?;
    kernel_from_parts(&j, h.values(), params.width())
}

/// `(1/n) J diag(1/h) J^T` for an explicit preconditioner diagonal `h`.
pub fn kernel_from_parts<T: Scalar>(j: &Mat<T>, h: &[T], width: usize) -> Result<Mat<T>> {
    if h.len() != j.cols() {
        return Err(Error::LengthMismatch {
            expected: j.cols(),
            got: h.len(),
        });
    }
    let inv: Vec<T> = h.iter().map(|&v| T::one() / v).collect();
    let inv_n = T::one() / T::from_usize_lossy(width);
    let m = j.rows();
    let mut out = Mat::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let v = j
                .row(a)
                .iter()
                .zip(j.row(b))
                .zip(&inv)
                .map(|((&x, &y), &w)| x * y * w)
                .sum::<T>()
                * inv_n;
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticKernel<T: Scalar> {
    pub gram: Mat<T>,
    pub lambda0: T,
}

/// Infinite-width Gram matrix `G_ij = E[sigma(W x_i - B) sigma(W x_j - B)]` for scalar inputs,
/// with `W` a fair sign and `B` drawn from the initialization's bias density.
pub fn analytic_kernel<T: Scalar>(
    xs: &[T],
    init: &InitSpec<T>,
    activation: Activation,
) -> Result<AnalyticKernel<T>> {
    if xs.is_empty() {
        return Err(Error::Empty(
            "analytic kernel needs at least one input".into(),
        ));
    }
    for i in 0..xs.len() {
        for j in 0..i {
            if xs[i] == xs[j] {
                return Err(Error::DuplicateData(format!(
                    "inputs {j} and {i} coincide at {}",
                    xs[i]
                )));
            }
        }
    }
    let density = init.bias_density;
    density.validate()?;
    let half = density.half_width();
    let nodes = KERNEL_QUADRATURE_NODES;
    let db = (half + half) / T::from_usize_lossy(nodes - 1);
    let bs: Vec<T> = (0..nodes)
        .map(|k| -half + db * T::from_usize_lossy(k))
        .collect();
    let ps: Vec<T> = bs.iter().map(|&b| density.pdf(b)).collect();

    let m = xs.len();
    let mut gram = Mat::zeros(m, m);
    let mut vals = vec![T::zero(); nodes];
    for i in 0..m {
        for j in i..m {
            let mut total = T::zero();
            for w in [T::one(), -T::one()] {
                for (k, v) in vals.iter_mut().enumerate() {
                    *v = activation.eval(w * xs[i] - bs[k])
                        * activation.eval(w * xs[j] - bs[k])
                        * ps[k];
                }
                total += trapezoid(&vals, db);
            }
            let g = total * T::lit(0.5);
            gram[(i, j)] = g;
            gram[(j, i)] = g;
        }
    }
    let lambda0 = min_eigenvalue(&gram)?;
    Ok(AnalyticKernel { gram, lambda0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelReport<T: Scalar> {
    pub h0: Mat<T>,
    pub h_final: Mat<T>,
    pub lambda_min_series: Vec<(u64, T)>,
    pub param_drift_sup: T,
    pub kernel_drift_spectral: T,
}

/// Kernel and parameter drift along the recorded snapshots of `traj`.
pub fn drift_report<T: Scalar>(
    traj: &Trajectory<T>,
    pot: &Potential<T>,
    data: &Dataset<T>,
) -> Result<KernelReport<T>> {
    let snaps = traj.snapshots();
    let mut series = Vec::with_capacity(snaps.len());
    let mut h0 = None;
    let mut last = None;
    for (i, s) in snaps.iter().enumerate() {
        let h = kernel_matrix(&traj.params_at(i), pot, data)?;
        series.push((s.step, min_eigenvalue(&h)?));
        if i == 0 {
            h0 = Some(h.clone());
        }
        last = Some(h);
    }
    let h0 = h0.ok_or_else(|| Error::Empty("trajectory has no snapshots".into()))?;
    let h_final = last.expect("at least one snapshot");
    let kernel_drift_spectral = spectral_norm_sym(&h_final.sub(&h0)?)?;
    Ok(KernelReport {
        h0,
        h_final,
        lambda_min_series: series,
        param_drift_sup: traj.drift_sup(),
        kernel_drift_spectral,
    })
}

/// Eigenvalues of a kernel matrix in ascending order.
pub fn kernel_spectrum<T: Scalar>(h: &Mat<T>) -> Result<Vec<T>> {
    Ok(jacobi_eigen(h)?.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mirror::{train, Snapshot, Status, TrainConfig};

    #[test]
    fn single_unit_hand_example() {
        let net =
            NetParams::<f64>::from_parts(&[1.0], &[0.0], &[0.0], 0.0, Activation::Relu).unwrap();
        let data = Dataset::univariate(&[(2.0, 0.0)]).unwrap();
        let h = kernel_matrix(&net, &Potential::quadratic(), &data).unwrap();
        assert_eq!(h.rows(), 1);
        assert!((h[(0, 0)] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn quadratic_kernel_is_half_gram() {
        let spec = InitSpec {
            a_scale: 1.0,
            ..InitSpec::zero_output(3)
        };
        let net = crate::net::init_params::<f64>(9, 1, &spec, Activation::Abs).unwrap();
        let data = Dataset::univariate(&[(-0.7, 0.0), (0.1, 0.0), (0.9, 0.0)]).unwrap();
        let h = kernel_matrix(&net, &Potential::quadratic(), &data).unwrap();
        let j = net.jacobian(&data);
        let jjt = j.matmul(&j.transpose()).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert!((h[(a, b)] - jjt[(a, b)] / 18.0).abs() < 1e-14);
            }
        }
        assert!(min_eigenvalue(&h).unwrap() >= -1e-10);
    }

    #[test]
    fn preconditioner_scaling() {
        let j = Mat::<f64>::from_rows(&[vec![1.0, 2.0, -1.0], vec![0.5, 0.0, 3.0]]).unwrap();
        let h: [f64; 3] = [0.7, 2.0, 1.3];
        let base = kernel_from_parts(&j, &h, 4).unwrap();
        let scaled = kernel_from_parts(&j, &h.map(|v| v * 5.0), 4).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert!((scaled[(a, b)] - base[(a, b)] / 5.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn analytic_kernel_closed_forms() {
        let init = InitSpec::<f64>::zero_output(0);
        let relu = analytic_kernel(&[0.0], &init, Activation::Relu).unwrap();
        assert!((relu.gram[(0, 0)] - 1.0 / 6.0).abs() < 1e-6);
        let abs = analytic_kernel(&[0.0], &init, Activation::Abs).unwrap();
        assert!((abs.gram[(0, 0)] - 1.0 / 3.0).abs() < 1e-6);
        assert!(relu.lambda0 > 0.0);
    }

    #[test]
    fn analytic_kernel_rejects_degenerate_input() {
        let init = InitSpec::<f64>::zero_output(0);
        assert!(analytic_kernel(&[], &init, Activation::Relu).is_err());
        assert!(analytic_kernel(&[0.2, 0.2], &init, Activation::Relu).is_err());
    }

    #[test]
    fn repeated_snapshot_has_no_drift() {
        let net =
            crate::net::init_params(5, 1, &InitSpec::zero_output(1), Activation::Relu).unwrap();
        let data = Dataset::univariate(&[(-0.5, 0.1), (0.5, -0.1)]).unwrap();
        let snap = Snapshot {
            step: 0,
            theta: net.theta().to_vec(),
            loss: net.loss(&data),
            predictions: net.predictions(&data),
        };
        let traj = Trajectory::from_snapshots(
            net,
            vec![snap.clone(), Snapshot { step: 1, ..snap }],
            Status::BudgetExhausted,
        )
        .unwrap();
        let report = drift_report(&traj, &Potential::quadratic(), &data).unwrap();
        assert_eq!(report.param_drift_sup, 0.0);
        assert_eq!(report.kernel_drift_spectral, 0.0);
        assert_eq!(report.lambda_min_series.len(), 2);
    }

    #[test]
    fn report_round_trips_through_json() {
        let net =
            crate::net::init_params(12, 1, &InitSpec::zero_output(2), Activation::Relu).unwrap();
        let data = Dataset::univariate(&[(-0.5, 0.1), (0.5, -0.1)]).unwrap();
        let cfg = TrainConfig {
            max_steps: 50,
            ..TrainConfig::default()
        };
        let traj = train(&net, &data, &Potential::quadratic(), &cfg).unwrap();
        let report = drift_report(&traj, &Potential::quadratic(), &data).unwrap();
        assert!(report.h0.asymmetry() <= 1e-12 && report.h_final.asymmetry() <= 1e-12);
        let json = serde_json::to_string(&report).unwrap();
        let back: KernelReport<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
