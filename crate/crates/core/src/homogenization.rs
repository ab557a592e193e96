//! Homogenized rigidity and compliance from the six canonical cell problems.

use rayon::prelude::*;

use crate::cell::{cell_average, VoxelCell};
use crate::error::{Error, Result};
use crate::formulations::MacroData;
use crate::solvers::{CellSolver, SolveParams, SolveReport};
use crate::spaces::{CellSpace, LinPerField, QuadField};
use crate::tensor::{apply, invert, SymMat3, Tensor4Sym};

/// Relative asymmetry above which a computed tensor is rejected.
pub const ASYMMETRY_TOL: f64 = 1e-9;

/// Which cell problem produces the columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    /// Strain-driven displacement problems; columns of `C^H`.
    #[default]
    Displacement,
    /// Uzawa on the stress Lagrangian with unit mean stresses; columns of `D^H`.
    StressUzawa,
    /// Strain fields `ē` of the strain formulation; columns of `C^H`.
    Strain,
}

impl Formulation {
    pub fn name(&self) -> &'static str {
        match self {
            Formulation::Displacement => "displacement",
            Formulation::StressUzawa => "stress-uzawa",
            Formulation::Strain => "strain",
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct HomogResult {
    pub ch: Tensor4Sym,
    pub dh: Tensor4Sym,
    pub formulation: Formulation,
    /// `‖M − Mᵀ‖ / ‖M‖` of the raw column matrix before symmetrization.
    pub asymmetry: f64,
    pub per_column_reports: Vec<SolveReport>,
    /// `|⨍⟨C e_i, e_j⟩ − ⟨C^H A_i, A_j⟩|` with `A_i = ⨍ e_i`.
    pub energy_check: [[f64; 6]; 6],
}

impl HomogResult {
    pub fn energy_check_max(&self) -> f64 {
        self.energy_check.iter().flatten().fold(0.0, |m, v| m.max(*v))
    }
}

/// Total strains of the six canonical problems, with their reports.
pub struct ColumnFields {
    pub strains: Vec<QuadField>,
    pub reports: Vec<SolveReport>,
}

/// Solves the six canonical problems of `formulation`.
pub fn column_fields(solver: &CellSolver, formulation: Formulation) -> Result<ColumnFields> {
    let sp = solver.space();
    let cols: Vec<(QuadField, SolveReport)> = (0..6)
        .into_par_iter()
        .map(|i| {
            let unit = SymMat3::basis(i);
            match formulation {
                Formulation::Displacement => {
                    let (u, rep) = solver.strain_driven(&unit)?;
                    Ok((sp.sym_gradient(&u), rep))
                }
                Formulation::Strain => {
                    let (e_bar, rep) = solver.strain_route(&MacroData::StrainDriven(unit))?;
                    Ok((e_bar.map(|m| *m + unit), rep))
                }
                Formulation::StressUzawa => {
                    let (_, v, rep) = solver.stress_uzawa(&unit)?;
                    Ok((sp.sym_gradient(&v.scaled(-1.0)), rep))
                }
            }
        })
        .collect::<Result<_>>()?;
    let (strains, reports) = cols.into_iter().unzip();
    Ok(ColumnFields { strains, reports })
}

fn symmetrized(cols: [[f64; 6]; 6]) -> Result<(Tensor4Sym, f64)> {
    // cols[j] is column j
    let m = nalgebra::Matrix6::from_fn(|r, c| cols[c][r]);
    let scale = m.norm();
    let asymmetry = if scale > 0.0 { (m - m.transpose()).norm() / scale } else { 0.0 };
    if asymmetry > ASYMMETRY_TOL {
        return Err(Error::AsymmetricResult { asymmetry });
    }
    Ok((Tensor4Sym::from_matrix(0.5 * (m + m.transpose()))?, asymmetry))
}

pub fn homogenize(cell: &VoxelCell, params: &SolveParams) -> Result<HomogResult> {
    homogenize_with(cell, params, Formulation::Displacement)
}

pub fn homogenize_with(cell: &VoxelCell, params: &SolveParams, formulation: Formulation) -> Result<HomogResult> {
    let solver = CellSolver::new(cell, *params)?;
    homogenize_solver(&solver, formulation)
}

pub fn homogenize_solver(solver: &CellSolver, formulation: Formulation) -> Result<HomogResult> {
    let sp = solver.space();
    let cols = column_fields(solver, formulation)?;
    let stresses: Vec<QuadField> = cols.strains.iter().map(|e| sp.apply_rigidity(e)).collect();

    let (ch, dh, asymmetry) = match formulation {
        Formulation::Displacement | Formulation::Strain => {
            let raw = std::array::from_fn(|j| cell_average(&stresses[j]).m);
            let (ch, asym) = symmetrized(raw)?;
            (ch, invert(&ch)?, asym)
        }
        Formulation::StressUzawa => {
            let raw = std::array::from_fn(|j| cell_average(&cols.strains[j]).m);
            let (dh, asym) = symmetrized(raw)?;
            (invert(&dh)?, dh, asym)
        }
    };

    let means: Vec<SymMat3> = cols.strains.iter().map(cell_average).collect();
    let volume = sp.volume();
    let mut energy_check = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in i..6 {
            let field = sp.integrate_inner(&stresses[i], &cols.strains[j]) / volume;
            let macro_value = apply(&ch, &means[i]).inner(&means[j]);
            energy_check[i][j] = (field - macro_value).abs();
            energy_check[j][i] = energy_check[i][j];
        }
    }

    Ok(HomogResult {
        ch,
        dh,
        formulation,
        asymmetry,
        per_column_reports: cols.reports,
        energy_check,
    })
}

/// `⨍ ⟨C e(u_A), e(u_B)⟩`.
pub fn energy_ch(space: &CellSpace, u_a: &LinPerField, u_b: &LinPerField) -> f64 {
    let sa = space.apply_rigidity(&space.sym_gradient(u_a));
    space.integrate_inner(&sa, &space.sym_gradient(u_b)) / space.volume()
}

/// Largest relative mismatch between `⨍ e(w_{S_i})` and `D^H S_i` over the
/// six unit stresses.
pub fn dual_consistency(solver: &CellSolver, result: &HomogResult) -> Result<f64> {
    let sp = solver.space();
    let errs: Vec<f64> = (0..6)
        .into_par_iter()
        .map(|i| {
            let s = SymMat3::basis(i);
            let (w, _) = solver.stress_driven(&s)?;
            let a = cell_average(&sp.sym_gradient(&w));
            let want = apply(&result.dh, &s);
            Ok((a - want).norm() / want.norm())
        })
        .collect::<Result<_>>()?;
    Ok(errs.into_iter().fold(0.0, f64::max))
}
