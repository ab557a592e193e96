//! Energy functionals, their conjugates and the two Lagrangians of the cell problem.
//!
//! Every integral is the same Gauss quadrature used by [`CellSpace`], so the
//! identities between these functionals hold to rounding on discrete fields.

use crate::cell::cell_average;
use crate::error::Result;
use crate::spaces::{CellSpace, LinPerField, QuadField};
use crate::tensor::SymMat3;

/// Default relative tolerance of the admissible-stress indicator.
pub const INDICATOR_TOL: f64 = 1e-8;

/// Macroscopic loading: exactly one of a mean strain or a mean stress.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum MacroData {
    StrainDriven(SymMat3),
    StressDriven(SymMat3),
}

impl MacroData {
    pub fn value(&self) -> SymMat3 {
        match self {
            MacroData::StrainDriven(a) | MacroData::StressDriven(a) => *a,
        }
    }
}

/// A real number or `+∞` (an indicator that fired).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum ExtendedReal {
    Finite(f64),
    PlusInfinity,
}

impl ExtendedReal {
    pub fn is_finite(&self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(*v),
            ExtendedReal::PlusInfinity => None,
        }
    }

    /// `f64::INFINITY` for `+∞`.
    pub fn to_f64(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }

    fn plus(self, x: f64) -> Self {
        match self {
            ExtendedReal::Finite(v) => ExtendedReal::Finite(v + x),
            inf => inf,
        }
    }
}

/// An energy value together with its named parts.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EnergyReport {
    pub value: ExtendedReal,
    /// Dual norm of the first variation, when meaningful.
    pub gradient_norm: Option<f64>,
    pub components: Vec<(String, f64)>,
}

/// `½ ∫ ⟨C e(u), e(u)⟩`.
pub fn energy_j(space: &CellSpace, u: &LinPerField) -> f64 {
    g_star(space, &space.sym_gradient(u))
}

/// `½ ∫ ⟨C ∇s u, ∇s u⟩ − ∫ ⟨S, ∇s u⟩`.
pub fn energy_k(space: &CellSpace, u: &LinPerField, s: &SymMat3) -> f64 {
    let e = space.sym_gradient(u);
    g_star(space, &e) - space.volume() * s.inner(&cell_average(&e))
}

/// `½ ∫ ⟨D σ, σ⟩`.
pub fn g(space: &CellSpace, sigma: &QuadField) -> f64 {
    let cell = space.cell();
    0.5 * space.integrate_quad(|v| *cell.compliance(v), sigma)
}

/// `½ ∫ ⟨C e, e⟩`.
pub fn g_star(space: &CellSpace, e: &QuadField) -> f64 {
    let cell = space.cell();
    0.5 * space.integrate_quad(|v| *cell.rigidity(v), e)
}

/// `½ ∫ ⟨C e, e⟩ + ⟨A, ∫ C e⟩`.
pub fn j(space: &CellSpace, e: &QuadField, a: &SymMat3) -> f64 {
    let ce = space.apply_rigidity(e);
    0.5 * space.integrate_inner(&ce, e) + space.volume() * a.inner(&cell_average(&ce))
}

/// `½ ∫ ⟨C e, e⟩ − ⟨S, ∫ e⟩`.
pub fn k(space: &CellSpace, e: &QuadField, s: &SymMat3) -> f64 {
    g_star(space, e) - space.volume() * s.inner(&cell_average(e))
}

/// Indicator of `T(S)`, tested weakly at relative tolerance `tol`.
pub fn indicator_is(space: &CellSpace, sigma: &QuadField, s: &SymMat3, tol: f64) -> Result<ExtendedReal> {
    Ok(if space.in_ts(sigma, s, tol)?.holds {
        ExtendedReal::Finite(0.0)
    } else {
        ExtendedReal::PlusInfinity
    })
}

/// `G(σ) = g(σ) + 𝓘_S(Λσ)`.
pub fn big_g(space: &CellSpace, sigma: &QuadField, s: &SymMat3, tol: f64) -> Result<ExtendedReal> {
    Ok(indicator_is(space, sigma, s, tol)?.plus(g(space, sigma)))
}

/// `𝓛(σ, e) = ∫⟨e, σ⟩ − g*(e) + 𝓘_S(Λσ)`.
pub fn lagrangian_l(
    space: &CellSpace,
    sigma: &QuadField,
    e: &QuadField,
    s: &SymMat3,
    tol: f64,
) -> Result<ExtendedReal> {
    let finite = space.integrate_inner(e, sigma) - g_star(space, e);
    Ok(indicator_is(space, sigma, s, tol)?.plus(finite))
}

/// `𝓛̃(σ, v) = g(σ) + ∫⟨σ − S, ∇s v⟩`.
pub fn lagrangian_lt(space: &CellSpace, sigma: &QuadField, v: &LinPerField, s: &SymMat3) -> f64 {
    let shifted = sigma.map(|m| *m - *s);
    g(space, sigma) + space.integrate_inner(&shifted, &space.sym_gradient(v))
}

/// Itemized `J(u)` with the dual norm of its residual on periodic test fields.
pub fn energy_report_j(space: &CellSpace, u: &LinPerField) -> Result<EnergyReport> {
    let e = space.sym_gradient(u);
    let ce = space.apply_rigidity(&e);
    let value = 0.5 * space.integrate_inner(&ce, &e);
    let gradient_norm = space.in_ts(&ce, &cell_average(&ce), 1.0)?.divergence_residual;
    let a = u.macro_part;
    let macro_term = 0.5 * space.volume() * a.inner(&crate::tensor::apply(&space.cell().mean_rigidity(), &a));
    Ok(EnergyReport {
        value: ExtendedReal::Finite(value),
        gradient_norm: Some(gradient_norm),
        components: vec![
            ("macro".into(), macro_term),
            ("fluctuation_and_coupling".into(), value - macro_term),
        ],
    })
}
