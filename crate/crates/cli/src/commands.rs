//! Subcommand implementations. Each writes its artifacts under an output directory and returns
//! whether everything it ran succeeded.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mirrorflow::compare::{function_change, pca2};
use mirrorflow::experiment::{
    activation_for, run_sweep, solve_for_potentials, CellKey, CellRun, Sweep, SweepOutcome,
};
use mirrorflow::variational::{second_diff, VariationalSolution};
use mirrorflow::{analytic_kernel, drift_report, train, Potential, Trajectory};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::svg::{Plot, Series, Style};
use crate::table::Table;

/// File-name friendly form of a potential string.
pub fn slug(pot: &Potential<f64>) -> String {
    pot.to_string().replace([':', ','], "_").replace('=', "")
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_svg(path: &Path, plot: &Plot) -> Result<()> {
    fs::write(path, plot.render()).with_context(|| format!("writing {}", path.display()))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

/// Writes `table` to `dir/name` and reads it back, so plots are drawn from the file contents.
fn emit(dir: &Path, name: &str, table: &Table) -> Result<Table> {
    let path = dir.join(name);
    table.write(&path)?;
    Table::read(&path)
}

#[derive(Serialize)]
struct ReportFile<'a> {
    config: &'a ExperimentConfig,
    report: &'a mirrorflow::experiment::ComparisonReport<f64>,
}

#[derive(Serialize)]
struct SolutionSidecar {
    potential: String,
    slope_neg: f64,
    slope_pos: f64,
    objective: f64,
    constraint_residual: f64,
    optimality_residual: f64,
    iterations: usize,
    data_nodes: Vec<usize>,
}

fn write_solution(
    dir: &Path,
    cfg: &ExperimentConfig,
    pot: &Potential<f64>,
    sol: &VariationalSolution<f64>,
) -> Result<Table> {
    let grid = cfg.variational.grid;
    let mut t = Table::new(&["t", "h", "h2"]);
    let h2 = second_diff(&sol.function, &grid);
    for (i, &h) in sol.function.h.iter().enumerate() {
        let curv = if i == 0 || i == grid.n {
            0.0
        } else {
            h2[i - 1]
        };
        t.push(&[grid.t(i), h, curv]);
    }
    let name = format!("solution_{}", slug(pot));
    let table = emit(dir, &format!("{name}.csv"), &t)?;
    let d = &sol.diagnostics;
    write_json(
        &dir.join(format!("{name}.json")),
        &SolutionSidecar {
            potential: pot.to_string(),
            slope_neg: sol.function.slope_neg,
            slope_pos: sol.function.slope_pos,
            objective: d.objective,
            constraint_residual: d.constraint_residual,
            optimality_residual: d.optimality_residual,
            iterations: d.iterations,
            data_nodes: sol.data_nodes.clone(),
        },
    )?;
    Ok(table)
}

fn loss_table(traj: &Trajectory<f64>) -> Table {
    let mut t = Table::new(&["step", "loss"]);
    for s in traj.snapshots() {
        t.push(&[s.step as f64, s.loss]);
    }
    t
}

fn pca_table(traj: &Trajectory<f64>) -> Option<Table> {
    let thetas: Vec<Vec<f64>> = traj.snapshots().iter().map(|s| s.theta.clone()).collect();
    let scores = pca2(&thetas).ok()?;
    let mut t = Table::new(&["step", "pc1", "pc2"]);
    for (s, p) in traj.snapshots().iter().zip(scores) {
        t.push(&[s.step as f64, p[0], p[1]]);
    }
    Some(t)
}

fn pca_plot(table: &Table, csv: &str, label: &str) -> Result<Plot> {
    Ok(Plot {
        title: format!("Parameter trajectory, {label}"),
        x_label: "first principal component".into(),
        y_label: "second principal component".into(),
        series: vec![
            Series::from_table(table, csv, "pc1", "pc2", "path", Style::Line)?,
            Series::from_table(table, csv, "pc1", "pc2", "snapshots", Style::Points)?,
        ],
        ..Plot::default()
    })
}

fn cell_dir(out: &Path, sweep: &Sweep<f64>, key: &CellKey) -> PathBuf {
    out.join("runs").join(format!(
        "w{}_{}_s{}",
        key.width,
        slug(&sweep.potentials[key.potential]),
        key.seed
    ))
}

fn write_cell(
    out: &Path,
    sweep: &Sweep<f64>,
    run: &CellRun<f64>,
    solution: &VariationalSolution<f64>,
) -> Result<()> {
    let dir = cell_dir(out, sweep, &run.key);
    ensure_dir(&dir)?;
    let mut f = Table::new(&["t", "network", "solution"]);
    for (i, (&g, &h)) in run.function.iter().zip(&solution.function.h).enumerate() {
        f.push(&[sweep.grid.t(i), g, h]);
    }
    emit(&dir, "function.csv", &f)?;
    emit(&dir, "loss.csv", &loss_table(&run.trajectory))?;
    let mut lam = Table::new(&["step", "lambda_min"]);
    for &(step, l) in &run.kernel.lambda_min_series {
        lam.push(&[step as f64, l]);
    }
    emit(&dir, "lambda_min.csv", &lam)?;
    if let Some(p) = pca_table(&run.trajectory) {
        let back = emit(&dir, "pca.csv", &p)?;
        write_svg(
            &dir.join("pca.svg"),
            &pca_plot(
                &back,
                "pca.csv",
                &sweep.potentials[run.key.potential].to_string(),
            )?,
        )?;
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Seed-averaged error and drift per width, one column per potential.
fn width_summary(sweep: &Sweep<f64>, outcome: &SweepOutcome<f64>) -> Table {
    let mut headers = vec!["width".to_string()];
    for p in &sweep.potentials {
        for what in ["linf_error", "param_drift", "kernel_drift"] {
            headers.push(format!("{what}_{}", slug(p)));
        }
    }
    let refs: Vec<&str> = headers.iter().map(String::as_str).collect();
    let mut t = Table::new(&refs);
    for &w in &sweep.widths {
        let mut row = vec![w as f64];
        for p in &sweep.potentials {
            let name = p.to_string();
            let cells: Vec<_> = outcome
                .report
                .cells
                .iter()
                .filter(|c| c.width == w && c.potential == name && c.ok)
                .collect();
            let pick = |f: &dyn Fn(&mirrorflow::experiment::CellReport<f64>) -> Option<f64>| {
                mean(&cells.iter().filter_map(|c| f(c)).collect::<Vec<_>>())
            };
            row.push(pick(&|c| c.linf_error));
            row.push(pick(&|c| c.param_drift_sup));
            row.push(pick(&|c| c.kernel_drift_spectral));
        }
        t.push(&row);
    }
    t
}

fn series_per_potential(
    sweep: &Sweep<f64>,
    table: &Table,
    csv: &str,
    what: &str,
    label_suffix: &str,
) -> Result<Vec<Series>> {
    sweep
        .potentials
        .iter()
        .map(|p| {
            let col = format!("{what}_{}", slug(p));
            Series::from_table(
                table,
                csv,
                "width",
                &col,
                &format!("{p}{label_suffix}"),
                Style::Line,
            )
        })
        .collect()
}

fn write_overlays(out: &Path, sweep: &Sweep<f64>, outcome: &SweepOutcome<f64>) -> Result<()> {
    let seed = sweep.seeds[0];
    for &w in &sweep.widths {
        let mut series = Vec::new();
        let mut solution_added = std::collections::HashSet::new();
        for (key, run) in &outcome.runs {
            if key.width != w || key.seed != seed || run.is_err() {
                continue;
            }
            let dir = cell_dir(out, sweep, key);
            let rel = dir.strip_prefix(out).unwrap_or(&dir).join("function.csv");
            let rel = rel.to_string_lossy().into_owned();
            let table = Table::read(&dir.join("function.csv"))?;
            let pot = &sweep.potentials[key.potential];
            series.push(Series::from_table(
                &table,
                &rel,
                "t",
                "network",
                &format!("network, {pot}"),
                Style::Line,
            )?);
            let problem = if pot.is_scaled() {
                pot.to_string()
            } else {
                "unscaled".into()
            };
            if solution_added.insert(problem.clone()) {
                series.push(Series::from_table(
                    &table,
                    &rel,
                    "t",
                    "solution",
                    &format!("solution, {problem}"),
                    Style::Dashed,
                )?);
            }
        }
        if series.is_empty() {
            continue;
        }
        let plot = Plot {
            title: format!("Trained networks and variational solutions, width {w}, seed {seed}"),
            x_label: "x".into(),
            y_label: "f(x) - f(x, initial)".into(),
            series,
            ..Plot::default()
        };
        write_svg(&out.join(format!("functions_w{w}.svg")), &plot)?;
    }
    Ok(())
}

/// Full sweep with every artifact.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    cfg.validate()?;
    ensure_dir(out)?;
    let sweep = cfg.sweep()?;
    let started = std::time::Instant::now();
    let outcome = run_sweep(&sweep)?;
    write_json(
        &out.join("report.json"),
        &ReportFile {
            config: cfg,
            report: &outcome.report,
        },
    )?;

    let sol_dir = out.join("solutions");
    ensure_dir(&sol_dir)?;
    for (pot, sol) in sweep.potentials.iter().zip(&outcome.solutions) {
        if let Ok(sol) = sol {
            write_solution(&sol_dir, cfg, pot, sol)?;
        }
    }
    for (_, run) in &outcome.runs {
        if let Ok(run) = run {
            if let Ok(sol) = &outcome.solutions[run.key.potential] {
                write_cell(out, &sweep, run, sol)?;
            }
        }
    }
    write_overlays(out, &sweep, &outcome)?;

    let summary = emit(out, "width_summary.csv", &width_summary(&sweep, &outcome))?;
    write_svg(
        &out.join("error_vs_width.svg"),
        &Plot {
            title: "L-infinity error against the variational solution".into(),
            x_label: "width".into(),
            y_label: "mean L-infinity error".into(),
            log_x: true,
            log_y: true,
            series: series_per_potential(&sweep, &summary, "width_summary.csv", "linf_error", "")?,
        },
    )?;
    let mut drift = series_per_potential(
        &sweep,
        &summary,
        "width_summary.csv",
        "param_drift",
        " (parameters)",
    )?;
    drift.extend(series_per_potential(
        &sweep,
        &summary,
        "width_summary.csv",
        "kernel_drift",
        " (kernel)",
    )?);
    write_svg(
        &out.join("drift_vs_width.svg"),
        &Plot {
            title: "Parameter and kernel drift".into(),
            x_label: "width".into(),
            y_label: "mean drift".into(),
            log_x: true,
            log_y: true,
            series: drift,
        },
    )?;
    write_json(
        &out.join("run_info.json"),
        &serde_json::json!({ "elapsed_seconds": started.elapsed().as_secs_f64() }),
    )?;
    Ok(sweep_succeeded(&outcome))
}

fn sweep_succeeded(outcome: &SweepOutcome<f64>) -> bool {
    outcome.report.cells.iter().all(|c| c.ok && c.converged)
        && outcome.solutions.iter().all(Result::is_ok)
}

/// Sweep that writes only `report.json`.
pub fn compare(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    cfg.validate()?;
    ensure_dir(out)?;
    let outcome = run_sweep(&cfg.sweep()?)?;
    write_json(
        &out.join("report.json"),
        &ReportFile {
            config: cfg,
            report: &outcome.report,
        },
    )?;
    Ok(sweep_succeeded(&outcome))
}

/// Solves the variational problem of every configured potential.
pub fn variational(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    cfg.validate()?;
    ensure_dir(out)?;
    let sweep = cfg.sweep()?;
    let sols = solve_for_potentials(&sweep.data, &sweep.init, &sweep.grid, &sweep.potentials);
    let mut ok = true;
    let mut series = Vec::new();
    for (pot, sol) in sweep.potentials.iter().zip(&sols) {
        match sol {
            Ok(sol) => {
                let t = write_solution(out, cfg, pot, sol)?;
                let csv = format!("solution_{}.csv", slug(pot));
                series.push(Series::from_table(
                    &t,
                    &csv,
                    "t",
                    "h",
                    &pot.to_string(),
                    Style::Line,
                )?);
            }
            Err(e) => {
                log::error!("{pot}: {e}");
                ok = false;
            }
        }
    }
    if !series.is_empty() {
        let plot = Plot {
            title: "Variational solutions".into(),
            x_label: "x".into(),
            y_label: "h(x)".into(),
            series,
            ..Plot::default()
        };
        write_svg(&out.join("solutions.svg"), &plot)?;
    }
    Ok(ok)
}

/// The single cell selected by the first width, potential and seed of the config.
pub struct Cell {
    pub sweep: Sweep<f64>,
    pub key: CellKey,
}

impl Cell {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Cell> {
        cfg.validate()?;
        let mut sweep = cfg.sweep()?;
        sweep.widths.truncate(1);
        sweep.potentials.truncate(1);
        sweep.seeds.truncate(1);
        let key = CellKey {
            width: sweep.widths[0],
            potential: 0,
            seed: sweep.seeds[0],
        };
        Ok(Cell { sweep, key })
    }

    fn potential(&self) -> Potential<f64> {
        self.sweep.potentials[0]
    }

    fn train(&self) -> Result<Trajectory<f64>> {
        let params = self.sweep.initial_params(&self.key)?;
        Ok(train(
            &params,
            &self.sweep.data,
            &self.potential(),
            &self.sweep.train_config(&self.potential()),
        )?)
    }
}

#[derive(Serialize)]
struct TrainSummary {
    width: usize,
    potential: String,
    seed: u64,
    steps: u64,
    converged: bool,
    final_loss: f64,
    param_drift_sup: f64,
}

/// Trains one cell and writes its loss curve, final function and parameters.
pub fn train_cell(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let cell = Cell::from_config(cfg)?;
    ensure_dir(out)?;
    let traj = cell.train()?;
    let loss = emit(out, "loss.csv", &loss_table(&traj))?;
    write_svg(
        &out.join("loss.svg"),
        &Plot {
            title: format!("Training loss, {}", cell.potential()),
            x_label: "step".into(),
            y_label: "loss".into(),
            log_y: true,
            series: vec![Series::from_table(
                &loss,
                "loss.csv",
                "step",
                "loss",
                "loss",
                Style::Line,
            )?],
            ..Plot::default()
        },
    )?;
    let fin = traj.final_params();
    let change = function_change(&fin, &cell.sweep.grid);
    let mut f = Table::new(&["t", "network"]);
    for (i, &g) in change.iter().enumerate() {
        f.push(&[cell.sweep.grid.t(i), g]);
    }
    emit(out, "function.csv", &f)?;
    let mut p = Table::new(&["index", "initial", "final"]);
    for (i, (&a, &b)) in traj.initial().theta().iter().zip(fin.theta()).enumerate() {
        p.push(&[i as f64, a, b]);
    }
    emit(out, "params.csv", &p)?;
    write_json(
        &out.join("train.json"),
        &TrainSummary {
            width: cell.key.width,
            potential: cell.potential().to_string(),
            seed: cell.key.seed,
            steps: traj.steps(),
            converged: traj.converged(),
            final_loss: traj.final_loss(),
            param_drift_sup: traj.drift_sup(),
        },
    )?;
    Ok(traj.converged())
}

#[derive(Serialize)]
struct Diagnosis<'a> {
    width: usize,
    potential: String,
    seed: u64,
    analytic_lambda0: Option<f64>,
    kernel: &'a mirrorflow::KernelReport<f64>,
}

/// Kernel diagnostics of one trained cell.
pub fn diagnose(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let cell = Cell::from_config(cfg)?;
    ensure_dir(out)?;
    let traj = cell.train()?;
    let pot = cell.potential();
    let report = drift_report(&traj, &pot, &cell.sweep.data)?;
    let lambda0 = analytic_kernel(cell.sweep.data.xs(), &cell.sweep.init, activation_for(&pot))
        .ok()
        .map(|k| k.lambda0);
    write_json(
        &out.join("kernel.json"),
        &Diagnosis {
            width: cell.key.width,
            potential: pot.to_string(),
            seed: cell.key.seed,
            analytic_lambda0: lambda0,
            kernel: &report,
        },
    )?;
    let mut lam = Table::new(&["step", "lambda_min"]);
    for &(step, l) in &report.lambda_min_series {
        lam.push(&[step as f64, l]);
    }
    let back = emit(out, "lambda_min.csv", &lam)?;
    write_svg(
        &out.join("lambda_min.svg"),
        &Plot {
            title: format!("Smallest kernel eigenvalue, {pot}"),
            x_label: "step".into(),
            y_label: "lambda_min(H)".into(),
            series: vec![Series::from_table(
                &back,
                "lambda_min.csv",
                "step",
                "lambda_min",
                "lambda_min",
                Style::Line,
            )?],
            ..Plot::default()
        },
    )?;
    Ok(traj.converged())
}

/// Two-dimensional PCA of one cell's recorded trajectory.
pub fn pca(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let cell = Cell::from_config(cfg)?;
    ensure_dir(out)?;
    let traj = cell.train()?;
    let table = pca_table(&traj).context("PCA needs at least three recorded snapshots")?;
    let back = emit(out, "pca.csv", &table)?;
    write_svg(
        &out.join("pca.svg"),
        &pca_plot(&back, "pca.csv", &cell.potential().to_string())?,
    )?;
    Ok(traj.converged())
}

/// Lists the built-in potentials with a few reference values.
pub fn potentials() -> String {
    let mut names: Vec<String> = Vec::new();
    for base in [
        "quadratic",
        "pow:p=3,omega=1",
        "pow:p=4,omega=1",
        "hypentropy:beta=1",
    ] {
        names.push(base.into());
        names.push(format!("scaled:{base}"));
    }
    let mut s = format!(
        "{:<32} {:>12} {:>12} {:>12}\n",
        "potential", "phi(1)", "phi'(1)", "phi''(0)"
    );
    for n in names {
        let p: Potential<f64> = n.parse().expect("built-in names parse");
        s.push_str(&format!(
            "{:<32} {:>12.6} {:>12.6} {:>12.6}\n",
            p.to_string(),
            p.phi(1.0),
            p.grad(1.0),
            p.hess(0.0)
        ));
    }
    s.push_str("aliases: phi1 = quadratic, phi2 = pow:p=3,omega=1, phi3 = pow:p=4,omega=1; prefix scaled: for the width-scaled mode\n");
    s
}
