//! Python bindings: cells, tensors, homogenization, the four cell solves
//! and the verification helpers.

use pyo3::create_exception;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cellhom::cell::{parse_voxel, read_voxel_file, write_voxel, Lattice, VoxelCell};
use cellhom::error::Error;
use cellhom::formulations::MacroData;
use cellhom::homogenization::{homogenize_with, Formulation};
use cellhom::operator::PreconditionerKind;
use cellhom::solvers::{CellSolver, SolveParams, SolveReport, UzawaStep};
use cellhom::spaces::QuadField;
use cellhom::tensor::{self, SymMat3, Tensor4Sym};
use cellhom::verification;

create_exception!(pycellhom, NotConvergedError, PyRuntimeError, "An iterative solve hit its iteration cap.");

type Matrix6 = [[f64; 6]; 6];

fn to_py(e: Error) -> PyErr {
    match e {
        Error::NotConverged { .. } | Error::StepTooLarge { .. } => NotConvergedError::new_err(e.to_string()),
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::SolverFailure(_) | Error::SingularSystem(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn tensor(rows: Matrix6) -> PyResult<Tensor4Sym> {
    Tensor4Sym::from_rows(rows).map_err(to_py)
}

fn lattice(flat: Option<Vec<f64>>) -> PyResult<Lattice> {
    flat.map_or(Ok(Lattice::unit()), |v| Lattice::from_flat(&v).map_err(to_py))
}

fn params(tol: f64, max_iter: usize, uzawa_step: Option<f64>, seed: u64, preconditioner: &str) -> PyResult<SolveParams> {
    let preconditioner = match preconditioner {
        "reference" => PreconditionerKind::Reference,
        "jacobi" => PreconditionerKind::Jacobi,
        other => return Err(PyValueError::new_err(format!("unknown preconditioner `{other}`"))),
    };
    let p = SolveParams {
        tol,
        max_iter,
        uzawa_step: uzawa_step.map_or(UzawaStep::Auto, UzawaStep::Fixed),
        seed,
        preconditioner,
    };
    p.validate().map_err(to_py)?;
    Ok(p)
}

fn field(f: &QuadField) -> Vec<[f64; 6]> {
    f.values().iter().map(|m| m.m).collect()
}

fn report_dict<'py>(py: Python<'py>, r: &SolveReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("method", &r.method)?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("converged", r.converged)?;
    d.set_item("residual_history", &r.residual_history)?;
    d.set_item("energy_history", &r.energy_history)?;
    d.set_item("gap_history", &r.gap_history)?;
    d.set_item("final_energy", r.final_energy)?;
    d.set_item("step", r.step)?;
    d.set_item("final_gap", r.final_gap)?;
    Ok(d)
}

/// Periodic voxel cell with one rigidity tensor per phase.
#[pyclass(name = "Cell", frozen)]
struct PyCell {
    inner: VoxelCell,
}

#[pymethods]
impl PyCell {
    #[new]
    #[pyo3(signature = (dims, phase_ids, phases, lattice=None))]
    fn new(dims: [usize; 3], phase_ids: Vec<usize>, phases: Vec<Matrix6>, lattice: Option<Vec<f64>>) -> PyResult<Self> {
        let phases = phases.into_iter().map(tensor).collect::<PyResult<Vec<_>>>()?;
        let inner = VoxelCell::new(dims, phase_ids, phases, self::lattice(lattice)?).map_err(to_py)?;
        Ok(PyCell { inner })
    }

    #[staticmethod]
    fn homogeneous(dims: [usize; 3], c: Matrix6) -> PyResult<Self> {
        let inner = VoxelCell::homogeneous(dims, tensor(c)?).map_err(to_py)?;
        Ok(PyCell { inner })
    }

    /// Parses `CELLVOX 1` text.
    #[staticmethod]
    #[pyo3(signature = (text, lattice=None))]
    fn from_voxel_text(text: &str, lattice: Option<Vec<f64>>) -> PyResult<Self> {
        let file = parse_voxel(text).map_err(to_py)?;
        let inner = file.into_cell(self::lattice(lattice)?).map_err(to_py)?;
        Ok(PyCell { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, lattice=None))]
    fn read(path: std::path::PathBuf, lattice: Option<Vec<f64>>) -> PyResult<Self> {
        let inner = read_voxel_file(&path, self::lattice(lattice)?).map_err(to_py)?;
        Ok(PyCell { inner })
    }

    /// One of `homogeneous`, `laminate`, `inclusion`, `random`.
    #[staticmethod]
    fn fixture(name: &str) -> PyResult<Self> {
        cellhom::fixtures::all()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, inner)| PyCell { inner })
            .ok_or_else(|| PyValueError::new_err(format!("unknown fixture `{name}`")))
    }

    fn to_voxel_text(&self) -> String {
        write_voxel(&self.inner)
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.inner.dims()
    }

    #[getter]
    fn volume(&self) -> f64 {
        self.inner.volume()
    }

    #[getter]
    fn phase_ids(&self) -> Vec<usize> {
        self.inner.phase_ids().to_vec()
    }

    fn phase_fractions(&self) -> Vec<f64> {
        self.inner.phase_fractions()
    }

    fn mean_rigidity(&self) -> Matrix6 {
        self.inner.mean_rigidity().rows()
    }

    fn mean_compliance(&self) -> Matrix6 {
        self.inner.mean_compliance().rows()
    }

    fn __repr__(&self) -> String {
        let d = self.inner.dims();
        format!("Cell({}x{}x{}, {} phases)", d[0], d[1], d[2], self.inner.phases().len())
    }
}

/// Mandel 6×6 matrix of the isotropic tensor with Lamé constants `lam`, `mu`.
#[pyfunction]
fn iso_tensor(lam: f64, mu: f64) -> PyResult<Matrix6> {
    tensor::iso_tensor(lam, mu).map(|t| t.rows()).map_err(to_py)
}

#[pyfunction]
fn invert(c: Matrix6) -> PyResult<Matrix6> {
    tensor::invert(&tensor(c)?).map(|t| t.rows()).map_err(to_py)
}

/// Applies a Mandel tensor to a Mandel vector.
#[pyfunction]
fn apply(c: Matrix6, e: [f64; 6]) -> PyResult<[f64; 6]> {
    Ok(tensor::apply(&tensor(c)?, &SymMat3::from_mandel(e)).m)
}

#[pyfunction]
#[pyo3(signature = (cell, formulation="displacement", tol=1e-9, max_iter=10000, uzawa_step=None, seed=0, preconditioner="reference"))]
#[allow(clippy::too_many_arguments)]
fn homogenize<'py>(
    py: Python<'py>,
    cell: &PyCell,
    formulation: &str,
    tol: f64,
    max_iter: usize,
    uzawa_step: Option<f64>,
    seed: u64,
    preconditioner: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let formulation = match formulation {
        "displacement" => Formulation::Displacement,
        "stress-uzawa" => Formulation::StressUzawa,
        "strain" => Formulation::Strain,
        other => return Err(PyValueError::new_err(format!("unknown formulation `{other}`"))),
    };
    let p = params(tol, max_iter, uzawa_step, seed, preconditioner)?;
    let r = py.detach(|| homogenize_with(&cell.inner, &p, formulation)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("ch", r.ch.rows())?;
    d.set_item("dh", r.dh.rows())?;
    d.set_item("asymmetry", r.asymmetry)?;
    d.set_item("energy_check_max", r.energy_check_max())?;
    let reports = r
        .per_column_reports
        .iter()
        .map(|rep| report_dict(py, rep))
        .collect::<PyResult<Vec<_>>>()?;
    d.set_item("reports", reports)?;
    Ok(d)
}

fn solution<'py>(py: Python<'py>, cell: &VoxelCell, strain: &QuadField, report: &SolveReport) -> PyResult<Bound<'py, PyDict>> {
    let space = cellhom::spaces::CellSpace::new(cell);
    let stress = space.apply_rigidity(strain);
    let d = PyDict::new(py);
    d.set_item("strain", field(strain))?;
    d.set_item("stress", field(&stress))?;
    d.set_item("mean_strain", cellhom::cell::cell_average(strain).m)?;
    d.set_item("mean_stress", cellhom::cell::cell_average(&stress).m)?;
    d.set_item("report", report_dict(py, report)?)?;
    Ok(d)
}

/// Solves a cell problem. `method` is `strain-driven`, `stress-driven`,
/// `stress-uzawa` or `strain-route`; `load` is a Mandel vector, read as a
/// mean strain for `strain-driven` and as a mean stress otherwise unless
/// `kind="strain"` is passed to `strain-route`.
#[pyfunction]
#[pyo3(signature = (cell, method, load, kind=None, tol=1e-9, max_iter=10000, uzawa_step=None, seed=0, preconditioner="reference"))]
#[allow(clippy::too_many_arguments)]
fn solve<'py>(
    py: Python<'py>,
    cell: &PyCell,
    method: &str,
    load: [f64; 6],
    kind: Option<&str>,
    tol: f64,
    max_iter: usize,
    uzawa_step: Option<f64>,
    seed: u64,
    preconditioner: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let p = params(tol, max_iter, uzawa_step, seed, preconditioner)?;
    let m = SymMat3::from_mandel(load);
    let c = &cell.inner;
    let (strain, report) = py
        .detach(|| -> Result<(QuadField, SolveReport), Error> {
            let solver = CellSolver::new(c, p)?;
            let sp = solver.space();
            match (method, kind) {
                ("strain-driven", None | Some("strain")) => {
                    let (u, r) = solver.strain_driven(&m)?;
                    Ok((sp.sym_gradient(&u), r))
                }
                ("stress-driven", None | Some("stress")) => {
                    let (w, r) = solver.stress_driven(&m)?;
                    Ok((sp.sym_gradient(&w), r))
                }
                ("stress-uzawa", None | Some("stress")) => {
                    let (_, v, r) = solver.stress_uzawa(&m)?;
                    Ok((sp.sym_gradient(&v.scaled(-1.0)), r))
                }
                ("strain-route", None | Some("stress")) => solver.strain_route(&MacroData::StressDriven(m)),
                ("strain-route", Some("strain")) => {
                    let (e, r) = solver.strain_route(&MacroData::StrainDriven(m))?;
                    Ok((e.map(|x| *x + m), r))
                }
                _ => Err(Error::Validation {
                    field: "method".into(),
                    message: format!("unsupported method/kind `{method}`/{kind:?}"),
                }),
            }
        })
        .map_err(to_py)?;
    solution(py, c, &strain, &report)
}

/// Strain field `e(u_A)` from the dense direct solve (small cells only).
#[pyfunction]
fn brute_force_oracle(py: Python<'_>, cell: &PyCell, a: [f64; 6]) -> PyResult<Vec<[f64; 6]>> {
    let c = &cell.inner;
    py.detach(|| verification::brute_force_oracle(c, &SymMat3::from_mandel(a)))
        .map(|f| field(&f))
        .map_err(to_py)
}

/// Smallest eigenvalues of `<C> - CH` and `CH - <D>^-1`.
#[pyfunction]
fn voigt_reuss(cell: &PyCell, ch: Matrix6) -> PyResult<(f64, f64)> {
    verification::voigt_reuss(&cell.inner, &tensor(ch)?).map_err(to_py)
}

/// Runs every post-solve check; returns `(name, value, threshold, passed)` tuples.
#[pyfunction]
#[pyo3(signature = (cell, tol=1e-9, seed=0))]
fn verify(py: Python<'_>, cell: &PyCell, tol: f64, seed: u64) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let p = params(tol, 10_000, None, seed, "reference")?;
    let c = &cell.inner;
    let report = py.detach(|| verification::verify(c, &p)).map_err(to_py)?;
    Ok(report
        .checks
        .into_iter()
        .map(|c| (c.name, c.value, c.threshold, c.passed))
        .collect())
}

/// Executes a configuration file as the command-line tool would; returns the exit code.
#[pyfunction]
fn run_config(py: Python<'_>, path: std::path::PathBuf) -> PyResult<i32> {
    let cfg = cellhom::config::load_config(&path).map_err(to_py)?;
    Ok(py.detach(|| cellhom::run::run(&cfg)).exit_code)
}

#[pymodule]
fn pycellhom(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCell>()?;
    m.add("NotConvergedError", m.py().get_type::<NotConvergedError>())?;
    m.add_function(wrap_pyfunction!(iso_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(invert, m)?)?;
    m.add_function(wrap_pyfunction!(apply, m)?)?;
    m.add_function(wrap_pyfunction!(homogenize, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(voigt_reuss, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
