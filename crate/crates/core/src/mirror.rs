//! Discrete mirror descent on network parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Block, Dataset, NetParams};
use crate::potentials::{HessVisitor, Potential, PotentialKind};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// `theta -= eta * grad / diag(Hess Phi)`.
    #[default]
    Preconditioned,
    /// Exact update of the mirror variable followed by `(phi')^-1`.
    ExactMirror,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    AllParams,
    /// Only the output weights `a` move.
    OutputOnly,
}

/// Which steps are stored in the trajectory. The terminal step is always stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recording {
    /// Steps `0, 1, 2, 4, 8, ...`.
    #[default]
    Geometric,
    Every(u64),
}

impl Recording {
    pub fn records(self, step: u64) -> bool {
        match self {
            Recording::Geometric => step == 0 || step.is_power_of_two(),
            Recording::Every(k) => k > 0 && step.is_multiple_of(k),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig<T> {
    /// Step size is `eta0 / n`.
    pub eta0: T,
    pub max_steps: u64,
    pub loss_threshold: T,
    pub step_mode: StepMode,
    pub scope: Scope,
    pub recording: Recording,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            eta0: T::one(),
            max_steps: 2_000_000,
            loss_threshold: T::lit(1e-7),
            step_mode: StepMode::Preconditioned,
            scope: Scope::AllParams,
            recording: Recording::Geometric,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    /// Default configuration with the step size used for `pot` in the reference experiments:
    /// `eta0 = 2` for the scaled quartic potential and `1` otherwise.
    pub fn for_potential(pot: &Potential<T>) -> Self {
        TrainConfig {
            eta0: default_eta0(pot),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > T::zero() && self.eta0.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "eta0 must be positive, got {}",
                self.eta0
            )));
        }
        if !(self.loss_threshold > T::zero()) {
            return Err(Error::InvalidConfig(format!(
                "loss_threshold must be positive, got {}",
                self.loss_threshold
            )));
        }
        if self.recording == Recording::Every(0) {
            return Err(Error::InvalidConfig("recording stride must be >= 1".into()));
        }
        Ok(())
    }

    pub fn eta(&self, width: usize) -> T {
        self.eta0 / T::from_usize_lossy(width)
    }
}

pub fn default_eta0<T: Scalar>(pot: &Potential<T>) -> T {
    match pot.kind() {
        PotentialKind::PowerPlusQuad { p, .. } if pot.is_scaled() && p == T::lit(4.0) => {
            T::lit(2.0)
        }
        _ => T::one(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot<T> {
    pub step: u64,
    pub theta: Vec<T>,
    pub loss: T,
    pub predictions: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    BudgetExhausted,
}

#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    initial: NetParams<T>,
    snapshots: Vec<Snapshot<T>>,
    status: Status,
}

impl<T: Scalar> Trajectory<T> {
    /// Builds a trajectory from explicit snapshots of `initial`'s network.
    pub fn from_snapshots(
        initial: NetParams<T>,
        snapshots: Vec<Snapshot<T>>,
        status: Status,
    ) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(Error::Empty(
                "trajectory needs at least one snapshot".into(),
            ));
        }
        for s in &snapshots {
            if s.theta.len() != initial.param_count() {
                return Err(Error::LengthMismatch {
                    expected: initial.param_count(),
                    got: s.theta.len(),
                });
            }
        }
        Ok(Trajectory {
            initial,
            snapshots,
            status,
        })
    }

    pub fn snapshots(&self) -> &[Snapshot<T>] {
        &self.snapshots
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }

    pub fn initial(&self) -> &NetParams<T> {
        &self.initial
    }

    pub fn last(&self) -> &Snapshot<T> {
        self.snapshots.last().expect("non-empty")
    }

    pub fn steps(&self) -> u64 {
        self.last().step
    }

    pub fn final_loss(&self) -> T {
        self.last().loss
    }

    pub fn params_at(&self, i: usize) -> NetParams<T> {
        self.initial
            .with_theta(self.snapshots[i].theta.clone())
            .expect("snapshot length checked")
    }

    pub fn final_params(&self) -> NetParams<T> {
        self.params_at(self.snapshots.len() - 1)
    }

    /// `max_t ||theta(t) - anchor||_inf` over the recorded snapshots.
    pub fn drift_sup(&self) -> T {
        let anchor = self.initial.anchor();
        self.snapshots
            .iter()
            .flat_map(|s| s.theta.iter().zip(anchor).map(|(&t, &a)| (t - a).abs()))
            .fold(T::zero(), T::max)
    }
}

fn trainable_range<T: Scalar>(params: &NetParams<T>, scope: Scope) -> std::ops::Range<usize> {
    match scope {
        Scope::AllParams => 0..params.param_count(),
        Scope::OutputOnly => params.block_range(Block::A),
    }
}

/// One mirror descent step on every coordinate.
pub fn md_step<T: Scalar>(
    params: &NetParams<T>,
    pot: &Potential<T>,
    grad: &[T],
    eta: T,
    mode: StepMode,
) -> Result<NetParams<T>> {
    if grad.len() != params.param_count() {
        return Err(Error::LengthMismatch {
            expected: params.param_count(),
            got: grad.len(),
        });
    }
    let mut next = params.clone();
    let anchor = params.anchor().to_vec();
    step_in_place(
        next.theta_mut(),
        &anchor,
        params.width(),
        pot,
        grad,
        eta,
        mode,
    )?;
    Ok(next)
}

/// Updates `theta` in place; `theta`, `anchor` and `grad` are aligned slices. On error the
/// contents of `theta` are unspecified.
pub fn step_in_place<T: Scalar>(
    theta: &mut [T],
    anchor: &[T],
    width: usize,
    pot: &Potential<T>,
    grad: &[T],
    eta: T,
    mode: StepMode,
) -> Result<()> {
    let s = pot.argument_scale(width);
    match mode {
        StepMode::Preconditioned => {
            if !pot.with_hess(Preconditioned {
                theta,
                anchor,
                grad,
                s,
                eta,
            }) {
                return Err(Error::InvalidPotential(format!(
                    "non-positive curvature along the step of {pot}"
                )));
            }
        }
        StepMode::ExactMirror => {
            for ((t, &a), &g) in theta.iter_mut().zip(anchor).zip(grad) {
                let y = pot.grad(s * (*t - a)) - s * eta * g;
                *t = a + pot.inverse_grad(y)? / s;
            }
        }
    }
    Ok(())
}

/// `theta -= eta * grad / hess(s (theta - anchor))`; yields false if some curvature was not
/// positive.
struct Preconditioned<'a, T> {
    theta: &'a mut [T],
    anchor: &'a [T],
    grad: &'a [T],
    s: T,
    eta: T,
}

impl<T: Scalar> HessVisitor<T> for Preconditioned<'_, T> {
    type Output = bool;

    #[inline(always)]
    fn visit<H: Fn(T) -> T>(self, hess: H) -> bool {
        let mut ok = true;
        for ((t, &a), &g) in self.theta.iter_mut().zip(self.anchor).zip(self.grad) {
            let h = hess(self.s * (*t - a));
            ok &= h > T::zero();
            *t -= self.eta * g / h;
        }
        ok
    }
}

/// Full-batch mirror descent on the squared loss until `loss <= loss_threshold` or the step
/// budget runs out.
pub fn train<T: Scalar>(
    params: &NetParams<T>,
    data: &Dataset<T>,
    pot: &Potential<T>,
    cfg: &TrainConfig<T>,
) -> Result<Trajectory<T>> {
    cfg.validate()?;
    if !pot.is_trainable() {
        return Err(Error::InvalidPotential(format!(
            "{pot} has unbounded curvature and cannot drive training"
        )));
    }
    if data.dim() != params.dim() {
        return Err(Error::Dimension(format!(
            "data dim {} vs network dim {}",
            data.dim(),
            params.dim()
        )));
    }
    let eta = cfg.eta(params.width());
    let range = trainable_range(params, cfg.scope);
    let output_only = cfg.scope == Scope::OutputOnly;
    let anchor = params.anchor()[range.clone()].to_vec();

    let mut current = params.clone();
    let mut residual = vec![T::zero(); data.len()];
    let mut grad = vec![T::zero(); params.param_count()];
    let mut snapshots = Vec::new();
    let mut step = 0u64;
    let status = loop {
        let loss = current.loss_and_grad_into(data, &mut residual, &mut grad, output_only);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let done = if loss <= cfg.loss_threshold {
            Some(Status::Converged)
        } else if step >= cfg.max_steps {
            Some(Status::BudgetExhausted)
        } else {
            None
        };
        if done.is_some() || cfg.recording.records(step) {
            snapshots.push(Snapshot {
                step,
                theta: current.theta().to_vec(),
                loss,
                predictions: current.predictions(data),
            });
        }
        if let Some(status) = done {
            break status;
        }
        step_in_place(
            &mut current.theta_mut()[range.clone()],
            &anchor,
            params.width(),
            pot,
            &grad[range.clone()],
            eta,
            cfg.step_mode,
        )?;
        step += 1;
    };
    log::debug!("training finished after {step} steps: {status:?}");
    Trajectory::from_snapshots(params.clone(), snapshots, status)
}
