//! Width/potential/seed sweeps: train, diagnose, solve the matching variational problem and
//! compare.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compare::{function_change, linf};
use crate::error::{Error, Result};
use crate::kernel::{drift_report, KernelReport};
use crate::mirror::{default_eta0, train, TrainConfig, Trajectory};
use crate::net::{init_params_with_rng, Activation, Dataset, InitSpec, NetParams};
use crate::potentials::Potential;
use crate::scalar::Scalar;
use crate::variational::{
    second_diff, solve, Grid, VariationalMode, VariationalSolution, VariationalSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Fig1,
    Fig2,
}

impl Preset {
    pub fn points(self) -> &'static [(f64, f64)] {
        match self {
            Preset::Fig1 => &[
                (-1.0, -0.15),
                (-0.2, -0.15),
                (0.0, 0.15),
                (0.2, -0.15),
                (1.0, -0.15),
            ],
            Preset::Fig2 => &[(-1.0, 0.15), (0.35, 0.15), (0.65, -0.15), (1.0, 0.15)],
        }
    }

    pub fn dataset<T: Scalar>(self) -> Dataset<T> {
        let pts: Vec<(T, T)> = self
            .points()
            .iter()
            .map(|&(x, y)| (T::lit(x), T::lit(y)))
            .collect();
        Dataset::univariate(&pts).expect("preset points are distinct")
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig1" => Ok(Preset::Fig1),
            "fig2" => Ok(Preset::Fig2),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset `{other}` (expected fig1 or fig2)"
            ))),
        }
    }
}

/// Activation paired with a potential: ReLU for unscaled potentials, absolute value for scaled.
pub fn activation_for<T: Scalar>(pot: &Potential<T>) -> Activation {
    if pot.is_scaled() {
        Activation::Abs
    } else {
        Activation::Relu
    }
}

pub fn variational_mode_for<T: Scalar>(pot: &Potential<T>) -> VariationalMode<T> {
    if pot.is_scaled() {
        VariationalMode::ScaledAbs(*pot)
    } else {
        VariationalMode::UnscaledRelu
    }
}

#[derive(Clone, Debug)]
pub struct Sweep<T> {
    pub data: Dataset<T>,
    pub widths: Vec<usize>,
    pub potentials: Vec<Potential<T>>,
    pub seeds: Vec<u64>,
    pub init: InitSpec<T>,
    /// Base training configuration; `eta0` is replaced by the per-potential default when
    /// `eta0_override` is `None`.
    pub train: TrainConfig<T>,
    pub eta0_override: Option<T>,
    pub grid: Grid<T>,
    pub workers: usize,
}

impl<T: Scalar> Sweep<T> {
    pub fn new(
        data: Dataset<T>,
        widths: Vec<usize>,
        potentials: Vec<Potential<T>>,
        seeds: Vec<u64>,
    ) -> Self {
        Sweep {
            data,
            widths,
            potentials,
            seeds,
            init: InitSpec::zero_output(0),
            train: TrainConfig::default(),
            eta0_override: None,
            grid: Grid::default(),
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::InvalidConfig("widths must not be empty".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::InvalidConfig("widths must be >= 1".into()));
        }
        if self.potentials.is_empty() {
            return Err(Error::InvalidConfig("potentials must not be empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        if self.data.dim() != 1 {
            return Err(Error::Dimension(
                "sweeps compare against one-dimensional variational problems".into(),
            ));
        }
        if let Some(p) = self.potentials.iter().find(|p| !p.is_trainable()) {
            return Err(Error::InvalidPotential(format!(
                "{p} cannot be used for training"
            )));
        }
        self.grid.validate()?;
        self.init.bias_density.validate()?;
        self.train_config(&self.potentials[0]).validate()
    }

    pub fn train_config(&self, pot: &Potential<T>) -> TrainConfig<T> {
        TrainConfig {
            eta0: self.eta0_override.unwrap_or_else(|| default_eta0(pot)),
            ..self.train
        }
    }

    /// Cells in deterministic order: width-major, then potential, then seed.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &width in &self.widths {
            for potential in 0..self.potentials.len() {
                for &seed in &self.seeds {
                    out.push(CellKey {
                        width,
                        potential,
                        seed,
                    });
                }
            }
        }
        out
    }

    /// Initial parameters of a cell. The stream depends on `(seed, width)` only, so every
    /// potential starts from the same network.
    pub fn initial_params(&self, key: &CellKey) -> Result<NetParams<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(key.seed);
        rng.set_stream(key.width as u64);
        let act = activation_for(&self.potentials[key.potential]);
        init_params_with_rng(key.width, 1, &self.init, act, &mut rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub width: usize,
    /// Index into the sweep's potential list.
    pub potential: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct CellRun<T: Scalar> {
    pub key: CellKey,
    pub trajectory: Trajectory<T>,
    pub kernel: KernelReport<T>,
    /// Trained-minus-initial network on the grid nodes.
    pub function: Vec<T>,
    pub linf_error: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport<T> {
    pub width: usize,
    pub potential: String,
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub linf_error: Option<T>,
    pub converged: bool,
    pub steps: u64,
    pub final_loss: Option<T>,
    pub param_drift_sup: Option<T>,
    pub kernel_drift_spectral: Option<T>,
    pub lambda_min_initial: Option<T>,
    pub lambda_min_final: Option<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDistance<T> {
    pub width: usize,
    pub seed: u64,
    pub a: String,
    pub b: String,
    pub linf: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary<T> {
    pub potential: String,
    pub objective: T,
    pub max_abs_second_derivative: T,
    pub constraint_residual: T,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport<T> {
    pub cells: Vec<CellReport<T>>,
    pub pairwise: Vec<PairwiseDistance<T>>,
    pub solutions: Vec<SolutionSummary<T>>,
}

impl<T: Scalar> ComparisonReport<T> {
    pub fn all_ok(&self) -> bool {
        self.cells.iter().all(|c| c.ok)
    }

    pub fn cell(&self, width: usize, potential: &str, seed: u64) -> Option<&CellReport<T>> {
        self.cells
            .iter()
            .find(|c| c.width == width && c.potential == potential && c.seed == seed)
    }
}

/// Outcome of one cell; failures carry their error message.
pub type CellResult<T> = std::result::Result<CellRun<T>, String>;

/// Everything a sweep produced, including per-cell trajectories for artifact writers.
pub struct SweepOutcome<T: Scalar> {
    pub report: ComparisonReport<T>,
    pub runs: Vec<(CellKey, CellResult<T>)>,
    /// Variational solution per potential index; potentials sharing a problem share a solution.
    pub solutions: Vec<std::result::Result<VariationalSolution<T>, String>>,
}

fn mode_key<T: Scalar>(pot: &Potential<T>) -> String {
    if pot.is_scaled() {
        pot.to_string()
    } else {
        "unscaled".to_string()
    }
}

/// Solves the variational problem matching each potential, once per distinct problem.
pub fn solve_for_potentials<T: Scalar>(
    data: &Dataset<T>,
    init: &InitSpec<T>,
    grid: &Grid<T>,
    potentials: &[Potential<T>],
) -> Vec<std::result::Result<VariationalSolution<T>, String>> {
    let mut cache: HashMap<String, std::result::Result<VariationalSolution<T>, String>> =
        HashMap::new();
    let mut offsets = vec![init.d_init; data.len()];
    if init.a_scale != T::zero() {
        log::warn!(
            "nonzero output initialization: comparing against the zero-offset variational problem"
        );
        offsets.iter_mut().for_each(|o| *o = T::zero());
    }
    potentials
        .iter()
        .map(|pot| {
            cache
                .entry(mode_key(pot))
                .or_insert_with(|| {
                    let spec = VariationalSpec::new(
                        data.clone(),
                        init.bias_density,
                        variational_mode_for(pot),
                    )
                    .with_grid(*grid)
                    .with_offsets(offsets.clone());
                    solve(&spec).map_err(|e| e.to_string())
                })
                .clone()
        })
        .collect()
}

fn run_cell<T: Scalar>(
    sweep: &Sweep<T>,
    key: CellKey,
    solution: &VariationalSolution<T>,
) -> Result<CellRun<T>> {
    let pot = sweep.potentials[key.potential];
    let params = sweep.initial_params(&key)?;
    let cfg = sweep.train_config(&pot);
    let trajectory = train(&params, &sweep.data, &pot, &cfg)?;
    let kernel = drift_report(&trajectory, &pot, &sweep.data)?;
    let function = function_change(&trajectory.final_params(), &sweep.grid);
    let linf_error = linf(&function, &solution.function.h);
    Ok(CellRun {
        key,
        trajectory,
        kernel,
        function,
        linf_error,
    })
}

/// Runs every cell, `workers` at a time. Cell failures are recorded, not propagated.
pub fn run_sweep<T: Scalar>(sweep: &Sweep<T>) -> Result<SweepOutcome<T>> {
    sweep.validate()?;
    let solutions = solve_for_potentials(&sweep.data, &sweep.init, &sweep.grid, &sweep.potentials);
    let cells = sweep.cells();
    let results: Vec<Mutex<Option<CellResult<T>>>> =
        cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = sweep.workers.max(1).min(cells.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&key) = cells.get(i) else { break };
                let outcome = match &solutions[key.potential] {
                    Ok(sol) => run_cell(sweep, key, sol).map_err(|e| e.to_string()),
                    Err(e) => Err(format!("variational solve failed: {e}")),
                };
                log::info!(
                    "cell width={} potential={} seed={}: {}",
                    key.width,
                    sweep.potentials[key.potential],
                    key.seed,
                    if outcome.is_ok() { "done" } else { "failed" }
                );
                *results[i].lock().expect("no poisoning") = Some(outcome);
            });
        }
    });
    let runs: Vec<_> = cells
        .iter()
        .zip(results)
        .map(|(&k, r)| {
            (
                k,
                r.into_inner()
                    .expect("no poisoning")
                    .expect("every cell ran"),
            )
        })
        .collect();
    let report = build_report(sweep, &runs, &solutions);
    Ok(SweepOutcome {
        report,
        runs,
        solutions,
    })
}

fn build_report<T: Scalar>(
    sweep: &Sweep<T>,
    runs: &[(CellKey, std::result::Result<CellRun<T>, String>)],
    solutions: &[std::result::Result<VariationalSolution<T>, String>],
) -> ComparisonReport<T> {
    let name = |i: usize| sweep.potentials[i].to_string();
    let cells = runs
        .iter()
        .map(|(key, run)| match run {
            Ok(r) => CellReport {
                width: key.width,
                potential: name(key.potential),
                seed: key.seed,
                ok: true,
                error: None,
                linf_error: Some(r.linf_error),
                converged: r.trajectory.converged(),
                steps: r.trajectory.steps(),
                final_loss: Some(r.trajectory.final_loss()),
                param_drift_sup: Some(r.kernel.param_drift_sup),
                kernel_drift_spectral: Some(r.kernel.kernel_drift_spectral),
                lambda_min_initial: r.kernel.lambda_min_series.first().map(|x| x.1),
                lambda_min_final: r.kernel.lambda_min_series.last().map(|x| x.1),
            },
            Err(e) => CellReport {
                width: key.width,
                potential: name(key.potential),
                seed: key.seed,
                ok: false,
                error: Some(e.clone()),
                linf_error: None,
                converged: false,
                steps: 0,
                final_loss: None,
                param_drift_sup: None,
                kernel_drift_spectral: None,
                lambda_min_initial: None,
                lambda_min_final: None,
            },
        })
        .collect();

    let mut pairwise = Vec::new();
    for &width in &sweep.widths {
        for &seed in &sweep.seeds {
            let find = |p: usize| {
                runs.iter().find_map(|(k, r)| match r {
                    Ok(run) if k.width == width && k.seed == seed && k.potential == p => Some(run),
                    _ => None,
                })
            };
            for a in 0..sweep.potentials.len() {
                for b in a + 1..sweep.potentials.len() {
                    if let (Some(ra), Some(rb)) = (find(a), find(b)) {
                        pairwise.push(PairwiseDistance {
                            width,
                            seed,
                            a: name(a),
                            b: name(b),
                            linf: linf(&ra.function, &rb.function),
                        });
                    }
                }
            }
        }
    }

    let solutions = solutions
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.as_ref().ok().map(|s| (i, s)))
        .map(|(i, s)| SolutionSummary {
            potential: name(i),
            objective: s.diagnostics.objective,
            max_abs_second_derivative: crate::scalar::max_abs(&second_diff(
                &s.function,
                &sweep.grid,
            )),
            constraint_residual: s.diagnostics.constraint_residual,
            iterations: s.diagnostics.iterations,
        })
        .collect();
    ComparisonReport {
        cells,
        pairwise,
        solutions,
    }
}
