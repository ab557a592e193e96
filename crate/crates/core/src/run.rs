//! Run orchestration and artifact emission.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde_json::{json, Value};

use crate::cell::{cell_average, read_voxel_file, VoxelCell};
use crate::config::{RunConfig, Task};
use crate::error::{Error, Result};
use crate::formulations::{g, MacroData, INDICATOR_TOL};
use crate::homogenization::{homogenize_solver, Formulation, HomogResult};
use crate::solvers::{CellSolver, SolveReport};
use crate::tensor::Tensor4Sym;
use crate::verification::{duality_gap_displ, hill_mandel, verify, voigt_reuss, Check};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    /// Human-readable summary for standard error when the run did not succeed.
    pub message: Option<String>,
}

/// 6×6 Mandel matrix, one row per line, 17 significant digits.
pub fn format_ch(ch: &Tensor4Sym) -> String {
    let mut out = String::new();
    for row in ch.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", cells.join(" ")).unwrap();
    }
    out
}

/// `run,iteration,residual,gap`; the gap column is empty for PCG solves.
pub fn format_convergence(reports: &[(String, &SolveReport)]) -> String {
    let mut out = String::from("run,iteration,residual,gap\n");
    for (label, r) in reports {
        for (i, res) in r.residual_history.iter().enumerate() {
            let gap = r.gap_history.get(i).map(|g| format!("{g:e}")).unwrap_or_default();
            writeln!(out, "{label},{i},{res:e},{gap}").unwrap();
        }
    }
    out
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| Error::Io { path, source })
}

struct Artifacts {
    ch: Option<Tensor4Sym>,
    body: Value,
    reports: Vec<(String, SolveReport)>,
    checks: Vec<Check>,
}

fn checks_json(checks: &[Check]) -> Value {
    serde_json::to_value(checks).expect("checks serialize")
}

fn homogenization_json(h: &HomogResult) -> Value {
    json!({
        "formulation": h.formulation.name(),
        "ch": h.ch.rows(),
        "dh": h.dh.rows(),
        "asymmetry": h.asymmetry,
        "energy_check": h.energy_check,
        "energy_check_max": h.energy_check_max(),
    })
}

fn homogenize_task(cell: &VoxelCell, solver: &CellSolver, formulation: Formulation) -> Result<Artifacts> {
    let h = homogenize_solver(solver, formulation)?;
    let norm = h.ch.norm();
    let (up, low) = voigt_reuss(cell, &h.ch)?;
    let checks = vec![
        Check::at_least("ch_min_eigenvalue", h.ch.min_eigenvalue(), f64::MIN_POSITIVE),
        Check::at_most("energy_check_max", h.energy_check_max(), 1e-8 * norm),
        Check::at_least("voigt_margin", up, -1e-8 * norm),
        Check::at_least("reuss_margin", low, -1e-8 * norm),
    ];
    let reports = h
        .per_column_reports
        .iter()
        .enumerate()
        .map(|(i, r)| (format!("column{i}"), r.clone()))
        .collect();
    Ok(Artifacts {
        ch: Some(h.ch),
        body: json!({ "homogenization": homogenization_json(&h) }),
        reports,
        checks,
    })
}

fn solve_task(solver: &CellSolver, formulation: Formulation, data: MacroData) -> Result<Artifacts> {
    let sp = solver.space();
    let tol = solver.params().tol;
    let hm_tol = 10.0 * tol;
    let mut checks = Vec::new();
    let mut extra = serde_json::Map::new();
    let (strain, stress, report) = match (formulation, data) {
        (Formulation::Displacement, d) => {
            let (u, rep) = match d {
                MacroData::StrainDriven(a) => solver.strain_driven(&a)?,
                MacroData::StressDriven(s) => solver.stress_driven(&s)?,
            };
            let e = sp.sym_gradient(&u);
            let s = sp.apply_rigidity(&e);
            checks.push(Check::at_most("hill_mandel", hill_mandel(sp, &u, &s), hm_tol));
            (e, s, rep)
        }
        (Formulation::StressUzawa, MacroData::StressDriven(target)) => {
            let (sigma, v, rep) = solver.stress_uzawa(&target)?;
            let w = v.scaled(-1.0);
            checks.push(Check::at_most("hill_mandel", hill_mandel(sp, &w, &sigma), hm_tol));
            let gap = duality_gap_displ(sp, &sigma, &w, &target, INDICATOR_TOL.max(hm_tol))?;
            checks.push(Check::at_most("duality_gap_relative", gap.abs() / g(sp, &sigma), tol.max(1e-8)));
            (sp.sym_gradient(&w), sigma, rep)
        }
        (Formulation::StressUzawa, MacroData::StrainDriven(_)) => {
            return Err(Error::validation("formulation", "stress-uzawa needs a stress load"));
        }
        (Formulation::Strain, d) => {
            let (e, rep) = solver.strain_route(&d)?;
            let s = sp.apply_rigidity(&e);
            let fluct = e.map(|m| *m - cell_average(&e));
            let compat = sp.compat_residual(&fluct)? / sp.l2_norm(&e).max(f64::MIN_POSITIVE);
            checks.push(Check::at_most("compat_residual_relative", compat, hm_tol));
            (e, s, rep)
        }
    };
    let mean_stress = cell_average(&stress);
    let ts = sp.in_ts(&stress, &mean_stress, hm_tol)?;
    checks.push(Check::at_most(
        "divergence_residual_relative",
        ts.divergence_residual / ts.field_norm.max(f64::MIN_POSITIVE),
        hm_tol,
    ));
    if let MacroData::StressDriven(target) = data {
        let err = (mean_stress - target).norm() / target.norm().max(f64::MIN_POSITIVE);
        checks.push(Check::at_most("mean_stress_residual_relative", err, hm_tol));
    }
    extra.insert("load".into(), serde_json::to_value(data).expect("load serializes"));
    extra.insert("mean_strain".into(), json!(cell_average(&strain).m));
    extra.insert("mean_stress".into(), json!(mean_stress.m));
    extra.insert("energy".into(), json!(report.final_energy));
    Ok(Artifacts {
        ch: None,
        body: json!({ "solution": Value::Object(extra) }),
        reports: vec![(report.method.clone(), report)],
        checks,
    })
}

fn verify_task(cell: &VoxelCell, cfg: &RunConfig) -> Result<Artifacts> {
    let v = verify(cell, &cfg.params())?;
    let reports = v
        .homogenization
        .per_column_reports
        .iter()
        .enumerate()
        .map(|(i, r)| (format!("column{i}"), r.clone()))
        .chain(v.solve_reports.iter().map(|r| (r.method.clone(), r.clone())))
        .collect();
    Ok(Artifacts {
        ch: Some(v.homogenization.ch),
        body: json!({ "homogenization": homogenization_json(&v.homogenization) }),
        reports,
        checks: v.checks,
    })
}

fn execute(cfg: &RunConfig, cell: &VoxelCell) -> Result<Artifacts> {
    let solver = CellSolver::new(cell, cfg.params())?;
    match cfg.task {
        Task::Homogenize => homogenize_task(cell, &solver, cfg.formulation),
        Task::Solve(data) => solve_task(&solver, cfg.formulation, data),
        Task::Verify => verify_task(cell, cfg),
    }
}

fn header(cfg: &RunConfig) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("task".into(), json!(cfg.task.name()));
    m.insert("formulation".into(), json!(cfg.formulation.name()));
    m.insert("voxel_path".into(), json!(cfg.voxel_path.display().to_string()));
    m.insert("params".into(), serde_json::to_value(cfg.params()).expect("params serialize"));
    m
}

fn reports_json(reports: &[(String, &SolveReport)]) -> Value {
    Value::Array(
        reports
            .iter()
            .map(|(label, r)| {
                let mut v = serde_json::to_value(r).expect("report serializes");
                v["label"] = json!(label);
                v
            })
            .collect(),
    )
}

fn emit(dir: &Path, mut doc: serde_json::Map<String, Value>, reports: &[(String, &SolveReport)], start: Instant) -> Result<()> {
    doc.insert("solve_reports".into(), reports_json(reports));
    doc.insert("wall_time_s".into(), json!(start.elapsed().as_secs_f64()));
    let text = serde_json::to_string_pretty(&Value::Object(doc)).expect("report serializes");
    write_file(dir, "report.json", &(text + "\n"))?;
    write_file(dir, "convergence.csv", &format_convergence(reports))
}

/// Executes one configured run and writes `CH.txt`, `report.json` and
/// `convergence.csv` into the output directory.
pub fn run(cfg: &RunConfig) -> RunOutcome {
    let start = Instant::now();
    let io_fail = |e: Error| RunOutcome {
        exit_code: EXIT_IO,
        message: Some(e.to_string()),
    };
    if let Err(source) = std::fs::create_dir_all(&cfg.output_dir) {
        return io_fail(Error::Io {
            path: cfg.output_dir.clone(),
            source,
        });
    }
    let cell = match read_voxel_file(&cfg.voxel_path, cfg.lattice) {
        Ok(c) => c,
        Err(e) => return io_fail(e),
    };
    let mut doc = header(cfg);
    doc.insert("dims".into(), json!(cell.dims()));
    doc.insert("phase_fractions".into(), json!(cell.phase_fractions()));

    match execute(cfg, &cell) {
        Ok(art) => {
            if let Some(ch) = &art.ch {
                if let Err(e) = write_file(&cfg.output_dir, "CH.txt", &format_ch(ch)) {
                    return io_fail(e);
                }
            }
            let passed = art.checks.iter().all(|c| c.passed);
            doc.insert("status".into(), json!(if passed { "ok" } else { "check_failed" }));
            if let Value::Object(body) = art.body {
                doc.extend(body);
            }
            doc.insert("checks".into(), checks_json(&art.checks));
            let reports: Vec<(String, &SolveReport)> = art.reports.iter().map(|(l, r)| (l.clone(), r)).collect();
            if let Err(e) = emit(&cfg.output_dir, doc, &reports, start) {
                return io_fail(e);
            }
            if passed {
                RunOutcome {
                    exit_code: EXIT_OK,
                    message: None,
                }
            } else {
                let failed: Vec<&str> = art.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
                RunOutcome {
                    exit_code: EXIT_CHECK_FAILED,
                    message: Some(format!("checks failed: {}", failed.join(", "))),
                }
            }
        }
        Err(e) => {
            let code = match &e {
                Error::NotConverged { .. } | Error::StepTooLarge { .. } | Error::SolverFailure(_) => EXIT_NOT_CONVERGED,
                Error::AsymmetricResult { .. } => EXIT_CHECK_FAILED,
                _ => EXIT_IO,
            };
            doc.insert(
                "status".into(),
                json!(match code {
                    EXIT_NOT_CONVERGED => "not_converged",
                    EXIT_CHECK_FAILED => "check_failed",
                    _ => "error",
                }),
            );
            doc.insert("error".into(), json!(e.to_string()));
            let partial: Vec<(String, &SolveReport)> = e.report().map(|r| (r.method.clone(), r)).into_iter().collect();
            if let Err(io) = emit(&cfg.output_dir, doc, &partial, start) {
                return io_fail(io);
            }
            RunOutcome {
                exit_code: code,
                message: Some(e.to_string()),
            }
        }
    }
}
